use std::fs;
use std::path::Path;

use tabgraph::evalx::EvalError;
use tabgraph::experiments::{self, ExperimentError, RunConfig};
use tabgraph::json::{read_table_json_file, write_table_json, TableJsonError};
use tabgraph::model::{load_checkpoint, predict_table, save_checkpoint, EpochLog, ModelError, ModelParams};
use tabgraph::pairgen::gold_associations;
use tabgraph::recon::{export_logical, reconstruct};
use tabgraph::synthgen::{gen_dataset, read_dataset, write_dataset, Dataset, GenConfig, GenError};
use tabgraph::table::{validate_table, Table};

use crate::{Failure, ModelArgs, PairArgs, TrainArgs, EXIT_DATA, EXIT_FAILURE, EXIT_IO, EXIT_NAN, EXIT_USAGE};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn from_json(e: TableJsonError) -> Failure {
    match e {
        TableJsonError::ImageFile { .. } => Failure::new(EXIT_IO, e.to_string()),
        _ => Failure::new(EXIT_DATA, e.to_string()),
    }
}

fn from_gen(e: GenError) -> Failure {
    match e {
        GenError::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
        GenError::TableJson(j) => from_json(j),
        GenError::Config(_) => Failure::new(EXIT_USAGE, e.to_string()),
        GenError::PairGen(_) | GenError::Manifest(_) => Failure::new(EXIT_DATA, e.to_string()),
    }
}

fn from_model(e: ModelError) -> Failure {
    let code = match e {
        ModelError::NonFinite { .. } => EXIT_NAN,
        ModelError::InvalidArch(_) => EXIT_USAGE,
        ModelError::Checkpoint(_)
        | ModelError::Dataset { .. }
        | ModelError::EmptyTask(_)
        | ModelError::PairGen(_)
        | ModelError::Feature(_) => EXIT_DATA,
        ModelError::Nn(_) => EXIT_FAILURE,
    };
    Failure::new(code, e.to_string())
}

fn from_eval(e: EvalError) -> Failure {
    Failure::new(EXIT_DATA, e.to_string())
}

fn from_experiment(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Model(m) => from_model(m),
        ExperimentError::Eval(v) => from_eval(v),
        ExperimentError::Csv(_) => Failure::new(EXIT_FAILURE, e.to_string()),
    }
}

fn check_tables<'a>(tables: impl IntoIterator<Item = &'a Table>) -> Result<(), Failure> {
    for t in tables {
        let problems = validate_table(t);
        if let Some(first) = problems.first() {
            return Err(Failure::new(
                EXIT_DATA,
                format!("table {}: {first} ({} problem(s) in total)", t.id, problems.len()),
            ));
        }
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    if !dir.join("manifest.json").is_file() {
        return Err(Failure::new(
            EXIT_IO,
            format!("{}: no manifest.json found", dir.display()),
        ));
    }
    let data = read_dataset(dir).map_err(from_gen)?;
    check_tables(data.train.iter().chain(&data.val).chain(&data.test))?;
    Ok(data)
}

fn load_table(path: &Path) -> Result<Table, Failure> {
    if !path.is_file() {
        return Err(Failure::new(EXIT_IO, format!("{}: no such file", path.display())));
    }
    let table = read_table_json_file(path).map_err(from_json)?;
    check_tables([&table])?;
    Ok(table)
}

fn load_params(path: &Path) -> Result<ModelParams<f32>, Failure> {
    let bytes = fs::read(path).map_err(io(path))?;
    load_checkpoint::<f32>(&bytes, None).map_err(from_model)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, bytes).map_err(io(path))
}

fn run_config(model: &ModelArgs, train: &TrainArgs, pairs: &PairArgs) -> Result<RunConfig, Failure> {
    Ok(RunConfig {
        arch: model.config()?,
        train: train.config()?,
        pairs: pairs.config()?,
    })
}

fn log_epoch(setting: &str, e: &EpochLog) {
    let prefix = if setting.is_empty() {
        String::new()
    } else {
        format!("[{setting}] ")
    };
    eprintln!(
        "{prefix}epoch {:>3}  lr {:.5}  tsr {:.4}  ctc {:.4}  total {:.4}",
        e.epoch, e.lr, e.tsr_loss, e.ctc_loss, e.total_loss
    );
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure> {
    let items: Result<Vec<T>, _> = s.split(',').map(|v| v.trim().parse::<T>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Failure::new(
            EXIT_USAGE,
            format!("{flag}: cannot parse {s:?} as a comma-separated list"),
        )),
    }
}

pub fn synth(out: &Path, n: usize, seed: u64, p_span: f64, p_empty: f64) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&p_empty) {
        return Err(Failure::new(EXIT_USAGE, "--p-empty must lie in [0, 1]"));
    }
    let cfg = GenConfig {
        p_span,
        p_empty,
        ..GenConfig::default()
    };
    cfg.validate().map_err(from_gen)?;
    let data = gen_dataset(&cfg, n, seed).map_err(from_gen)?;
    write_dataset(out, &data, Some(seed), Some(&cfg)).map_err(from_gen)?;
    eprintln!(
        "wrote {} tables ({} train, {} val, {} test) to {}",
        n,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

pub fn train(data: &Path, out: &Path, model: &ModelArgs, train: &TrainArgs, pairs: &PairArgs) -> Result<(), Failure> {
    let cfg = run_config(model, train, pairs)?;
    let dataset = load_dataset(data)?;
    let (params, history) =
        experiments::train_on(&dataset.train, &cfg, |e| log_epoch("", e)).map_err(from_experiment)?;
    let mut loss = String::from("epoch,lr,tsr_loss,ctc_loss,total_loss\n");
    for e in &history {
        loss.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.lr, e.tsr_loss, e.ctc_loss, e.total_loss
        ));
    }
    write(&out.join("checkpoint.json"), &save_checkpoint(&params))?;
    write(&out.join("loss.csv"), loss.as_bytes())?;
    let mut config = serde_json::to_vec_pretty(&cfg).expect("run config serializes");
    config.push(b'\n');
    write(&out.join("config.json"), &config)?;
    eprintln!("wrote checkpoint and loss curve to {}", out.display());
    Ok(())
}

pub fn eval(data: &Path, checkpoint: &Path, split: &str, out: Option<&Path>, pairs: &PairArgs) -> Result<(), Failure> {
    let pairs = pairs.config()?;
    let dataset = load_dataset(data)?;
    let tables = match split {
        "train" => &dataset.train,
        "val" => &dataset.val,
        "test" => &dataset.test,
        other => return Err(Failure::new(EXIT_USAGE, format!("--split: unknown split {other:?}"))),
    };
    let params = load_params(checkpoint)?;
    let report = experiments::evaluate(&params, tables, &pairs).map_err(from_experiment)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        write(&dir.join("report.json"), &report.to_json())?;
        write(&dir.join("report.txt"), text.as_bytes())?;
    }
    Ok(())
}

pub fn predict(checkpoint: &Path, table: &Path, out: &Path, pairs: &PairArgs) -> Result<(), Failure> {
    let pairs = pairs.config()?;
    let mut t = load_table(table)?;
    let params = load_params(checkpoint)?;
    let pred = predict_table(&params, &t, &pairs).map_err(from_model)?;
    for c in &mut t.cells {
        c.grid = None;
        c.cell_type = pred.cell_types.iter().find(|(id, _)| *id == c.id).map(|&(_, ty)| ty);
    }
    t.associations = pred.associations;
    write(out, &write_table_json(&t))
}

pub fn export(table: &Path, out: &Path, pairs: &PairArgs) -> Result<(), Failure> {
    let pairs = pairs.config()?;
    let t = load_table(table)?;
    let labelled = !t.associations.is_empty() && t.associations.iter().all(|a| a.label.is_some());
    let has_grid = t.cells.iter().all(|c| c.grid.is_some());
    let assocs = if labelled {
        t.associations.clone()
    } else if has_grid {
        gold_associations(&t, &pairs).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?
    } else {
        return Err(Failure::new(
            EXIT_DATA,
            format!("table {}: needs labelled associations or grid spans", t.id),
        ));
    };
    let rec = reconstruct(&t, &assocs).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    if rec.fallback {
        eprintln!("warning: graph was inconsistent; grid taken from cell geometry");
    }
    let bytes = export_logical(&rec.table).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    write(out, &bytes)
}

fn write_rows(out: &Path, rows: &[experiments::SweepRow]) -> Result<(), Failure> {
    let bytes = experiments::rows_to_csv(rows).map_err(from_experiment)?;
    write(out, &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

pub fn sweep_lambda(
    data: &Path,
    out: &Path,
    values: &str,
    model: &ModelArgs,
    train: &TrainArgs,
    pairs: &PairArgs,
) -> Result<(), Failure> {
    let values: Vec<f64> = parse_list("--values", values)?;
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Failure::new(
            EXIT_USAGE,
            format!("--values: lambda {v} lies outside [0, 1]"),
        ));
    }
    let base = run_config(model, train, pairs)?;
    let dataset = load_dataset(data)?;
    let mut p = log_epoch;
    let rows = experiments::sweep_lambda(&dataset, &base, &values, &mut p).map_err(from_experiment)?;
    write_rows(out, &rows)
}

pub fn sweep_width(
    data: &Path,
    out: &Path,
    values: &str,
    model: &ModelArgs,
    train: &TrainArgs,
    pairs: &PairArgs,
) -> Result<(), Failure> {
    let values: Vec<usize> = parse_list("--values", values)?;
    if values.contains(&0) {
        return Err(Failure::new(EXIT_USAGE, "--values: widths must be at least 1"));
    }
    let base = run_config(model, train, pairs)?;
    let dataset = load_dataset(data)?;
    let mut p = log_epoch;
    let rows = experiments::sweep_width(&dataset, &base, &values, &mut p).map_err(from_experiment)?;
    write_rows(out, &rows)
}

pub fn ablate(data: &Path, out: &Path, model: &ModelArgs, train: &TrainArgs, pairs: &PairArgs) -> Result<(), Failure> {
    let base = run_config(model, train, pairs)?;
    let dataset = load_dataset(data)?;
    let mut p = log_epoch;
    let rows = experiments::ablate(&dataset, &base, &mut p).map_err(from_experiment)?;
    write_rows(out, &rows)
}

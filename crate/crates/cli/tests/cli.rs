use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tabgraph::json::read_table_json_file;
use tabgraph::recon::read_logical;

const TINY: &[&str] = &[
    "--channels",
    "4",
    "--l1",
    "8",
    "--l2",
    "8",
    "--l3",
    "8",
    "--l4",
    "4",
    "--d-text",
    "16",
    "--epochs",
    "2",
    "--steps-per-epoch",
    "3",
    "--batch-size",
    "4",
];

fn tabgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tabgraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    tabgraph(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: &str) {
    ok(&["synth", "--n", n, "--seed", "3", "--out", s(dir)]);
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn help_lists_flags_with_defaults() {
    let help = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    for (flag, default) in [
        ("--lambda", "0.3"),
        ("--m", "20"),
        ("--l1", "128"),
        ("--l2", "128"),
        ("--l3", "128"),
        ("--l4", "32"),
        ("--epochs", "30"),
        ("--lr", "0.01"),
        ("--mask", "all"),
        ("--seed", "0"),
    ] {
        let line = help
            .lines()
            .skip_while(|l| !l.trim_start().starts_with(&format!("{flag} ")))
            .take(2)
            .collect::<Vec<_>>()
            .join(" ");
        assert!(line.contains(&format!("[default: {default}]")), "{flag}: {line:?}");
    }
    for flag in ["--data", "--out"] {
        assert!(help.contains(flag));
    }
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for cmd in [
        "synth",
        "train",
        "eval",
        "predict",
        "export",
        "sweep-lambda",
        "sweep-width",
        "ablate",
    ] {
        assert!(top.contains(cmd), "{cmd}");
    }
    assert!(top.contains("TABGRAPH_THREADS"));
}

#[test]
fn synth_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    synth(&data, "10");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["test"].as_array().unwrap().len(), 2);

    train(&data, &run, &[]);
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,lr,tsr_loss,ctc_loss,total_loss"));

    let ckpt = run.join("checkpoint.json");
    let out = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&run)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    for task in ["tsr", "ctc"] {
        let f1 = report[task]["macro"]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{task} {f1}");
    }
    let text = fs::read_to_string(run.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
    assert!(text.contains("macro") && text.contains("F1"));
}

#[test]
fn training_is_byte_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "8");
    let mut ckpts = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("run{threads}"));
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--seed", "11"];
        args.extend_from_slice(TINY);
        let o = Command::new(env!("CARGO_BIN_EXE_tabgraph"))
            .args(&args)
            .env("TABGRAPH_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        ckpts.push(fs::read(out.join("checkpoint.json")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
}

#[test]
fn sweep_lambda_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let csv_path = tmp.path().join("sweep.csv");
    synth(&data, "8");
    let mut args = vec![
        "sweep-lambda",
        "--data",
        s(&data),
        "--out",
        s(&csv_path),
        "--values",
        "0,0.5,1",
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let mut r = csv::Reader::from_path(&csv_path).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        [
            "setting",
            "tsr_precision",
            "tsr_recall",
            "tsr_f1",
            "ctc_precision",
            "ctc_recall",
            "ctc_f1"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let settings: Vec<&str> = rows.iter().map(|row| &row[0]).collect();
    assert_eq!(settings, ["lambda=0", "lambda=0.5", "lambda=1"]);
    for row in &rows {
        for field in row.iter().skip(1) {
            let v: f64 = field.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn predict_then_export_gives_valid_logical_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    synth(&data, "6");
    train(&data, &run, &[]);
    let table = data.join("tables").join("t0000.json");
    let pred = tmp.path().join("pred.json");
    ok(&[
        "predict",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--table",
        s(&table),
        "--out",
        s(&pred),
    ]);
    let predicted = read_table_json_file(&pred).unwrap();
    let gold = read_table_json_file(&table).unwrap();
    assert_eq!(predicted.cells.len(), gold.cells.len());
    assert!(predicted.cells.iter().all(|c| c.grid.is_none()));
    assert!(predicted.associations.iter().all(|a| a.label.is_some()));

    let logical = tmp.path().join("logical.json");
    ok(&["export", "--table", s(&pred), "--out", s(&logical)]);
    let t = read_logical(&fs::read(&logical).unwrap()).unwrap();
    assert_eq!(t.cells.len(), gold.cells.len());

    // gold labels reproduce the generator's grid
    let gold_logical = tmp.path().join("gold.json");
    ok(&["export", "--table", s(&table), "--out", s(&gold_logical)]);
    let t = read_logical(&fs::read(&gold_logical).unwrap()).unwrap();
    for c in &gold.cells {
        let g = c.grid.unwrap();
        let l = t.cells.iter().find(|l| l.id == c.id).unwrap();
        assert_eq!((l.row, l.col), ([g.row_start, g.row_end], [g.col_start, g.col_end]));
    }
}

#[test]
fn failures_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "6");
    let out = tmp.path().join("run");
    let base = ["train", "--data", s(&data), "--out", s(&out)];

    // usage
    assert_eq!(code(&["train", "--bogus"]), 2);
    assert_eq!(code(&[&base[..], &["--lambda", "1.5"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--mask", "sound"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--m", "0"]].concat()), 2);

    // missing input
    let missing = tmp.path().join("nope");
    assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&out)]), 3);
    assert_eq!(
        code(&["export", "--table", s(&missing.join("t.json")), "--out", s(&out)]),
        3
    );

    // NaN abort
    let mut args = base.to_vec();
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--lr", "1e30"]);
    let o = tabgraph(&args);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));

    // invalid data
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"id\": 1}").unwrap();
    assert_eq!(code(&["export", "--table", s(&bad), "--out", s(&out)]), 5);
    let ckpt = tmp.path().join("ckpt.json");
    fs::write(&ckpt, "{}").unwrap();
    assert_eq!(code(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)]), 5);
}

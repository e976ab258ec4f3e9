//! End-to-end runs shared by the command line and the acceptance suite:
//! train on a split, score the held-out tables, and the lambda / width /
//! branch-ablation sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalx::{evaluate_tables, Averages, EvalError, EvalReport, TaskReport};
use crate::model::{
    predict_table, train, ArchConfig, BranchMask, EpochLog, ModelError, ModelParams, TrainConfig, TrainingData,
};
use crate::pairgen::PairGenConfig;
use crate::synthgen::Dataset;
use crate::table::Table;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Everything that fixes a run besides the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub pairs: PairGenConfig,
}

pub struct RunOutcome {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochLog>,
    pub report: EvalReport,
}

pub fn train_on(
    tables: &[Table],
    cfg: &RunConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams<f32>, Vec<EpochLog>), ExperimentError> {
    let data = TrainingData::from_tables(tables.to_vec(), &cfg.pairs)?;
    Ok(train::<f32>(&data, cfg.arch, &cfg.train, on_epoch)?)
}

/// Predicts every table and scores against its gold labels.
pub fn evaluate(
    params: &ModelParams<f32>,
    tables: &[Table],
    pairs: &PairGenConfig,
) -> Result<EvalReport, ExperimentError> {
    let predictions = tables
        .iter()
        .map(|t| predict_table(params, t, pairs))
        .collect::<Result<Vec<_>, _>>()?;
    let (tsr, ctc) = evaluate_tables(&predictions, tables, pairs)?;
    Ok(EvalReport { tsr, ctc })
}

/// Trains on the training split and scores the test split.
pub fn run(data: &Dataset, cfg: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<RunOutcome, ExperimentError> {
    let (params, history) = train_on(&data.train, cfg, on_epoch)?;
    let report = evaluate(&params, &data.test, &cfg.pairs)?;
    Ok(RunOutcome {
        params,
        history,
        report,
    })
}

/// One line of a sweep: macro scores of each task that the setting trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub tsr: Option<Averages>,
    pub ctc: Option<Averages>,
}

impl SweepRow {
    pub fn both(setting: &str, report: &EvalReport) -> Self {
        Self {
            setting: setting.to_string(),
            tsr: Some(report.tsr.macro_avg),
            ctc: Some(report.ctc.macro_avg),
        }
    }

    fn only(setting: &str, tsr: Option<&TaskReport>, ctc: Option<&TaskReport>) -> Self {
        Self {
            setting: setting.to_string(),
            tsr: tsr.map(|r| r.macro_avg),
            ctc: ctc.map(|r| r.macro_avg),
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    setting: &'a str,
    tsr_precision: Option<f64>,
    tsr_recall: Option<f64>,
    tsr_f1: Option<f64>,
    ctc_precision: Option<f64>,
    ctc_recall: Option<f64>,
    ctc_f1: Option<f64>,
}

/// Progress callback: setting label and the epoch just finished.
pub type Progress<'a> = &'a mut dyn FnMut(&str, &EpochLog);

/// One full run per lambda value.
pub fn sweep_lambda(
    data: &Dataset,
    base: &RunConfig,
    values: &[f64],
    progress: Progress<'_>,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &lambda in values {
        let cfg = RunConfig {
            arch: ArchConfig { lambda, ..base.arch },
            ..*base
        };
        let setting = format!("lambda={lambda}");
        let out = run(data, &cfg, |e| progress(&setting, e))?;
        rows.push(SweepRow::both(&setting, &out.report));
    }
    Ok(rows)
}

/// One full run per width, with all four hidden widths set equal.
pub fn sweep_width(
    data: &Dataset,
    base: &RunConfig,
    widths: &[usize],
    progress: Progress<'_>,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &w in widths {
        let cfg = RunConfig {
            arch: ArchConfig {
                l1: w,
                l2: w,
                l3: w,
                l4: w,
                ..base.arch
            },
            ..*base
        };
        let setting = format!("width={w}");
        let out = run(data, &cfg, |e| progress(&setting, e))?;
        rows.push(SweepRow::both(&setting, &out.report));
    }
    Ok(rows)
}

/// Multi-task run next to the single-task variants: structure alone
/// (lambda 0) and cell type alone (lambda 1) with each feature branch on its
/// own and all together.
pub fn ablate(data: &Dataset, base: &RunConfig, progress: Progress<'_>) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::new();
    let all = BranchMask::default();
    let multi = RunConfig {
        arch: ArchConfig { mask: all, ..base.arch },
        ..*base
    };
    let out = run(data, &multi, |e| progress("multi-task", e))?;
    rows.push(SweepRow::both("multi-task S(I+T+C)", &out.report));

    let tsr_only = RunConfig {
        arch: ArchConfig {
            lambda: 0.0,
            ..multi.arch
        },
        ..*base
    };
    let out = run(data, &tsr_only, |e| progress("single-task structure", e))?;
    rows.push(SweepRow::only("single-task structure", Some(&out.report.tsr), None));

    for mask in ["image", "text", "coord", "image,text,coord"] {
        let mask = BranchMask::parse(mask).expect("fixed masks parse");
        let setting = format!("single-task S({})", mask.label());
        let cfg = RunConfig {
            arch: ArchConfig {
                lambda: 1.0,
                mask,
                ..base.arch
            },
            ..*base
        };
        let out = run(data, &cfg, |e| progress(&setting, e))?;
        rows.push(SweepRow::only(&setting, None, Some(&out.report.ctc)));
    }
    Ok(rows)
}

/// `setting,tsr_precision,tsr_recall,tsr_f1,ctc_precision,ctc_recall,ctc_f1`
/// with a header line; tasks a setting does not train are left blank.
pub fn rows_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        let row = CsvRow {
            setting: &r.setting,
            tsr_precision: r.tsr.map(|a| a.precision),
            tsr_recall: r.tsr.map(|a| a.recall),
            tsr_f1: r.tsr.map(|a| a.f1),
            ctc_precision: r.ctc.map(|a| a.precision),
            ctc_recall: r.ctc.map(|a| a.recall),
            ctc_f1: r.ctc.map(|a| a.f1),
        };
        w.serialize(row).map_err(|e| ExperimentError::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| ExperimentError::Csv(e.to_string()))
}

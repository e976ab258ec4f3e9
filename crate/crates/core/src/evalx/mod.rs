//! Precision / recall / F1 for both tasks.
//!
//! Labels are pooled over all tables and scored once. The headline numbers
//! are macro averages over the categories that occur in the gold labels;
//! micro (pooled) averages are reported alongside.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TablePrediction;
use crate::pairgen::{gold_associations, PairGenConfig, PairGenError};
use crate::table::{AssocLabel, CellType, Table};

pub const AVERAGING: &str = "macro over categories with gold support; micro pooled over all labels";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predictions for {gold} gold labels")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("label {label} at position {index} outside 0..{n}")]
    LabelOutOfRange { index: usize, label: usize, n: usize },
    #[error("incomplete predictions: {}", .0.join("; "))]
    Coverage(Vec<String>),
    #[error(transparent)]
    PairGen(#[from] PairGenError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub averaging: String,
    pub n: usize,
    pub categories: Vec<CategoryScore>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub micro: Averages,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores aligned label sequences over categories `0..n_categories`.
pub fn score(pred: &[usize], gold: &[usize], n_categories: usize) -> Result<TaskReport, EvalError> {
    let names: Vec<String> = (0..n_categories).map(|k| k.to_string()).collect();
    score_named("", &names, pred, gold)
}

/// [`score`] with category names taken from `names`.
pub fn score_named(task: &str, names: &[String], pred: &[usize], gold: &[usize]) -> Result<TaskReport, EvalError> {
    let n = names.len();
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    for seq in [pred, gold] {
        if let Some((index, &label)) = seq.iter().enumerate().find(|(_, &l)| l >= n) {
            return Err(EvalError::LabelOutOfRange { index, label, n });
        }
    }
    let (mut tp, mut fp, mut fn_) = (vec![0; n], vec![0; n], vec![0; n]);
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let categories: Vec<CategoryScore> = (0..n)
        .map(|k| {
            let precision = ratio(tp[k], tp[k] + fp[k]);
            let recall = ratio(tp[k], tp[k] + fn_[k]);
            CategoryScore {
                name: names[k].clone(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: tp[k] + fn_[k],
                tp: tp[k],
                fp: fp[k],
                fn_: fn_[k],
            }
        })
        .collect();
    let supported: Vec<&CategoryScore> = categories.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&CategoryScore) -> f64| {
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|c| f(c)).sum::<f64>() / supported.len() as f64
        }
    };
    let macro_avg = Averages {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    };
    let (all_tp, all_fp, all_fn) = (tp.iter().sum(), fp.iter().sum::<usize>(), fn_.iter().sum::<usize>());
    let (mp, mr) = (ratio(all_tp, all_tp + all_fp), ratio(all_tp, all_tp + all_fn));
    Ok(TaskReport {
        task: task.to_string(),
        averaging: AVERAGING.to_string(),
        n: gold.len(),
        categories,
        macro_avg,
        micro: Averages {
            precision: mp,
            recall: mr,
            f1: harmonic(mp, mr),
        },
    })
}

/// Canonical pair key with its label.
pub type LabelledPair = ((u32, u32), AssocLabel);

/// Pair labels for a gold table: the grid decides when every cell has one,
/// otherwise the table's own labelled associations are used.
pub fn gold_pairs(table: &Table, pairs: &PairGenConfig) -> Result<Vec<LabelledPair>, EvalError> {
    let assocs = if table.cells.iter().all(|c| c.grid.is_some()) {
        gold_associations(table, pairs)?
    } else {
        table.associations.clone()
    };
    Ok(assocs
        .into_iter()
        .filter_map(|a| a.label.map(|l| (a.key(), l)))
        .collect())
}

/// Both task reports over pooled labels of all `gold` tables.
pub fn evaluate_tables(
    predictions: &[TablePrediction],
    gold: &[Table],
    pairs: &PairGenConfig,
) -> Result<(TaskReport, TaskReport), EvalError> {
    let by_id: HashMap<&str, &TablePrediction> = predictions.iter().map(|p| (p.table_id.as_str(), p)).collect();
    let (mut tsr_pred, mut tsr_gold, mut ctc_pred, mut ctc_gold) = (vec![], vec![], vec![], vec![]);
    let mut gaps = Vec::new();
    for table in gold {
        let Some(pred) = by_id.get(table.id.as_str()) else {
            gaps.push(format!("table {} has no prediction", table.id));
            continue;
        };
        let assoc: HashMap<(u32, u32), AssocLabel> = pred
            .associations
            .iter()
            .filter_map(|a| a.label.map(|l| (a.key(), l)))
            .collect();
        let mut missing_pairs = 0;
        for (key, label) in gold_pairs(table, pairs)? {
            match assoc.get(&key) {
                Some(p) => {
                    tsr_pred.push(p.code());
                    tsr_gold.push(label.code());
                }
                None => missing_pairs += 1,
            }
        }
        let types: HashMap<u32, CellType> = pred.cell_types.iter().copied().collect();
        let mut missing_cells = 0;
        for cell in table.cells.iter().filter(|c| !c.is_empty()) {
            let Some(g) = cell.cell_type else { continue };
            match types.get(&cell.id) {
                Some(p) => {
                    ctc_pred.push(p.code());
                    ctc_gold.push(g.code());
                }
                None => missing_cells += 1,
            }
        }
        if missing_pairs + missing_cells > 0 {
            gaps.push(format!(
                "table {}: {missing_pairs} pair(s) and {missing_cells} cell(s) unpredicted",
                table.id
            ));
        }
    }
    if !gaps.is_empty() {
        return Err(EvalError::Coverage(gaps));
    }
    let names = |n: Vec<&str>| n.into_iter().map(String::from).collect::<Vec<_>>();
    let tsr = score_named(
        "structure",
        &names(AssocLabel::ALL.iter().map(|l| l.name()).collect()),
        &tsr_pred,
        &tsr_gold,
    )?;
    let ctc = score_named(
        "cell type",
        &names(CellType::ALL.iter().map(|t| t.name()).collect()),
        &ctc_pred,
        &ctc_gold,
    )?;
    Ok((tsr, ctc))
}

/// Plain-text rendering with Prec / Recall / F1 columns.
pub fn render_text(reports: &[&TaskReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "{} ({} labels; {})", r.task, r.n, r.averaging);
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8} {:>8}",
            "category", "support", "Prec", "Recall", "F1"
        );
        for c in &r.categories {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8.4} {:>8.4} {:>8.4}",
                c.name, c.support, c.precision, c.recall, c.f1
            );
        }
        for (name, a) in [("macro", r.macro_avg), ("micro", r.micro)] {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8.4} {:>8.4} {:>8.4}",
                name, "", a.precision, a.recall, a.f1
            );
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tsr: TaskReport,
    pub ctc: TaskReport,
}

impl EvalReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn to_text(&self) -> String {
        render_text(&[&self.tsr, &self.ctc])
    }
}

#[cfg(test)]
mod tests;

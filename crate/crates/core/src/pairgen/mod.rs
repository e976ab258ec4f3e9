//! Candidate association generation by K-nearest neighbours over cell
//! centres, and ground-truth labelling from grid spans.

mod kdtree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kdtree::KdTree;

use crate::table::{AssocLabel, Association, BBox, Table};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairGenError {
    #[error("table needs at least 2 cells, found {0}")]
    TooFewCells(usize),
    #[error("unknown cell id {0}")]
    UnknownCell(u32),
    #[error("neighbour count must be at least 1")]
    ZeroNeighbours,
    #[error("cell {0} has no grid span")]
    MissingGrid(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGenConfig {
    /// Neighbours collected per cell.
    pub m: usize,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self { m: 20 }
    }
}

const LEAF_SIZE: usize = 8;

pub fn cell_center(bbox: &BBox) -> [f64; 2] {
    bbox.center()
}

/// Builds the spatial index over the cell centres of `table`.
pub fn build_tree(table: &Table) -> KdTree {
    KdTree::build(
        table.cells.iter().map(|c| (cell_center(&c.bbox), c.id)).collect(),
        LEAF_SIZE,
    )
}

/// The `min(k, n - 1)` cells nearest to `query`, by Euclidean centre distance,
/// ties broken toward the smaller id.
pub fn knn(tree: &KdTree, query: u32, k: usize) -> Result<Vec<(u32, f64)>, PairGenError> {
    if tree.len() < 2 {
        return Err(PairGenError::TooFewCells(tree.len()));
    }
    if k == 0 {
        return Err(PairGenError::ZeroNeighbours);
    }
    let p = tree.point_of(query).ok_or(PairGenError::UnknownCell(query))?;
    Ok(tree.nearest(p, k.min(tree.len() - 1), Some(query)))
}

/// Union of every cell's `m` nearest neighbours as canonical unlabelled pairs,
/// sorted by `(cell_i, cell_j)`.
pub fn generate_associations(table: &Table, cfg: &PairGenConfig) -> Result<Vec<Association>, PairGenError> {
    if table.cells.len() < 2 {
        return Err(PairGenError::TooFewCells(table.cells.len()));
    }
    let tree = build_tree(table);
    let mut pairs = BTreeSet::new();
    for cell in &table.cells {
        for (other, _) in knn(&tree, cell.id, cfg.m)? {
            pairs.insert((cell.id.min(other), cell.id.max(other)));
        }
    }
    Ok(pairs
        .into_iter()
        .map(|(i, j)| Association {
            cell_i: i,
            cell_j: j,
            label: None,
        })
        .collect())
}

/// Ground-truth relation of two cells from their grid spans: horizontal when
/// rows overlap and columns abut, vertical when columns overlap and rows abut.
pub fn label_association(table: &Table, assoc: &Association) -> Result<AssocLabel, PairGenError> {
    let span = |id: u32| {
        let cell = table.cell(id).ok_or(PairGenError::UnknownCell(id))?;
        cell.grid.ok_or(PairGenError::MissingGrid(id))
    };
    let (a, b) = (span(assoc.cell_i)?, span(assoc.cell_j)?);
    let abuts = |end_a: u32, start_b: u32| end_a + 1 == start_b;
    if a.rows_overlap(&b) && (abuts(a.col_end, b.col_start) || abuts(b.col_end, a.col_start)) {
        Ok(AssocLabel::Horizontal)
    } else if a.cols_overlap(&b) && (abuts(a.row_end, b.row_start) || abuts(b.row_end, a.row_start)) {
        Ok(AssocLabel::Vertical)
    } else {
        Ok(AssocLabel::None)
    }
}

/// Generates candidate pairs and labels each one from the grid.
pub fn gold_associations(table: &Table, cfg: &PairGenConfig) -> Result<Vec<Association>, PairGenError> {
    generate_associations(table, cfg)?
        .into_iter()
        .map(|a| {
            Ok(Association {
                label: Some(label_association(table, &a)?),
                ..a
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::ctc_input;
use super::{ModelError, ModelParams};
use crate::featurize::pair_image;
use crate::nn::{Scalar, N_CLASSES};
use crate::pairgen::{generate_associations, PairGenConfig};
use crate::table::{AssocLabel, Association, CellType, Table};

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(p: &[f64; N_CLASSES]) -> usize {
    (1..N_CLASSES).fold(0, |best, k| if p[k] > p[best] { k } else { best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TablePrediction {
    pub table_id: String,
    /// One labelled association per generated candidate pair, sorted by key.
    pub associations: Vec<Association>,
    /// Predicted type of every nonempty cell, in table order.
    pub cell_types: Vec<(u32, CellType)>,
}

/// Labels every candidate pair and types every nonempty cell.
pub fn predict_table<T: Scalar + Send + Sync>(
    params: &ModelParams<T>,
    table: &Table,
    pairs: &PairGenConfig,
) -> Result<TablePrediction, ModelError> {
    let candidates = generate_associations(table, pairs)?;
    let associations = candidates
        .par_iter()
        .map(|a| {
            let x = pair_image::<T>(table, a.cell_i, a.cell_j)?;
            let k = argmax(&params.tsr_forward(&x)?);
            Ok(Association {
                label: AssocLabel::from_code(k),
                ..*a
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let cells: Vec<_> = table.cells.iter().filter(|c| !c.is_empty()).collect();
    let cell_types = cells
        .par_iter()
        .map(|c| {
            let x = ctc_input::<T>(table, c.id, params.arch.d_text)?;
            let k = argmax(&params.ctc_forward(&x)?);
            Ok((c.id, CellType::from_code(k).expect("class code in range")))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(TablePrediction {
        table_id: table.id.clone(),
        associations,
        cell_types,
    })
}

//! JSON checkpoint: architecture header plus named parameter groups with
//! shapes and row-major values.

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelError, ModelParams};
use crate::nn::{ParamSet, Scalar};

pub const CHECKPOINT_FORMAT: &str = "tabgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Manifest<T> {
    format: String,
    version: u32,
    scalar: String,
    arch: ArchConfig,
    groups: Vec<Group<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Group<T> {
    name: String,
    tensors: Vec<NamedTensor<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NamedTensor<T> {
    name: String,
    shape: Vec<usize>,
    values: Vec<T>,
}

fn scalar_name<T>() -> &'static str {
    std::any::type_name::<T>()
}

fn tensor_name(group: &str, idx: usize) -> String {
    let kind = if idx.is_multiple_of(2) { "weight" } else { "bias" };
    if group == "embedding" {
        format!("conv{}.{kind}", idx / 2)
    } else {
        kind.to_string()
    }
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let groups = params
        .groups()
        .into_iter()
        .map(|(name, tensors)| Group {
            name: name.to_string(),
            tensors: tensors
                .into_iter()
                .enumerate()
                .map(|(i, t)| NamedTensor {
                    name: tensor_name(name, i),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        scalar: scalar_name::<T>().to_string(),
        arch: params.arch,
        groups,
    };
    let mut out = serde_json::to_vec(&manifest).expect("checkpoint serializes");
    out.push(b'\n');
    out
}

/// Loads a checkpoint, optionally refusing one whose architecture differs
/// from `expected` in any width.
pub fn load_checkpoint<T: Scalar>(bytes: &[u8], expected: Option<&ArchConfig>) -> Result<ModelParams<T>, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let m: Manifest<T> = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.scalar != scalar_name::<T>() {
        return Err(bad(format!("stored as {}, requested {}", m.scalar, scalar_name::<T>())));
    }
    if let Some(e) = expected {
        let widths = |a: &ArchConfig| [a.l1, a.l2, a.l3, a.l4, a.d_text, a.channels];
        if widths(e) != widths(&m.arch) {
            return Err(bad(format!(
                "architecture mismatch: checkpoint has {:?}, expected {:?}",
                widths(&m.arch),
                widths(e)
            )));
        }
    }
    let mut params = ModelParams::<T>::init(m.arch, 0)?;
    let names: Vec<&str> = params.groups().iter().map(|(n, _)| *n).collect();
    let stored: Vec<&str> = m.groups.iter().map(|g| g.name.as_str()).collect();
    if names != stored {
        return Err(bad(format!("groups {stored:?}, expected {names:?}")));
    }
    let flat: Vec<(String, NamedTensor<T>)> = m
        .groups
        .into_iter()
        .flat_map(|g| {
            let name = g.name;
            g.tensors.into_iter().map(move |t| (name.clone(), t))
        })
        .collect();
    let targets = params.tensors_mut();
    if targets.len() != flat.len() {
        return Err(bad(format!("{} tensors, expected {}", flat.len(), targets.len())));
    }
    for (dst, (group, src)) in targets.into_iter().zip(flat) {
        if dst.shape() != src.shape.as_slice() || src.values.len() != dst.len() {
            return Err(bad(format!(
                "{group}.{}: shape {:?} with {} values, expected {:?}",
                src.name,
                src.shape,
                src.values.len(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(&src.values);
    }
    Ok(params)
}

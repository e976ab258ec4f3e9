//! Joint training: every optimizer step sees one structure batch and one
//! cell-type batch, mixed as `(1 - lambda) * L_tsr + lambda * L_ctc`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, CtcInput, ModelError, ModelParams};
use crate::featurize::{cell_image, coord_features, embed_text, pair_image};
use crate::nn::{class_weights_from_counts, LossConfig, ParamSet, Scalar, Sgd, StepDecay, N_CLASSES};
use crate::pairgen::{gold_associations, PairGenConfig};
use crate::table::{AssocLabel, CellType, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TsrSample {
    pub table: usize,
    pub cell_i: u32,
    pub cell_j: u32,
    pub label: AssocLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CtcSample {
    pub table: usize,
    pub cell: u32,
    pub label: CellType,
}

/// Tables plus the labelled samples drawn from them.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub tables: Vec<Table>,
    pub tsr: Vec<TsrSample>,
    pub ctc: Vec<CtcSample>,
}

impl TrainingData {
    /// Pairs come from KNN candidates labelled by the grid when every cell has
    /// one, otherwise from the table's own labelled associations. Cell-type
    /// samples are the nonempty typed cells.
    pub fn from_tables(tables: Vec<Table>, pairs: &PairGenConfig) -> Result<Self, ModelError> {
        let mut tsr = Vec::new();
        let mut ctc = Vec::new();
        for (t, table) in tables.iter().enumerate() {
            let assocs = if table.cells.iter().all(|c| c.grid.is_some()) {
                gold_associations(table, pairs)?
            } else {
                table.associations.clone()
            };
            for a in assocs {
                let label = a.label.ok_or_else(|| ModelError::Dataset {
                    table: table.id.clone(),
                    message: format!("association ({}, {}) has no label", a.cell_i, a.cell_j),
                })?;
                tsr.push(TsrSample {
                    table: t,
                    cell_i: a.cell_i,
                    cell_j: a.cell_j,
                    label,
                });
            }
            for cell in table.cells.iter().filter(|c| !c.is_empty()) {
                if let Some(label) = cell.cell_type {
                    ctc.push(CtcSample {
                        table: t,
                        cell: cell.id,
                        label,
                    });
                }
            }
        }
        Ok(Self { tables, tsr, ctc })
    }

    pub fn tsr_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        self.tsr.iter().for_each(|s| c[s.label.code()] += 1);
        c
    }

    pub fn ctc_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        self.ctc.iter().for_each(|s| c[s.label.code()] += 1);
        c
    }

    /// Inverse-frequency class weights for both tasks.
    pub fn loss_config(&self, lambda: f64) -> Result<LossConfig, ModelError> {
        let cfg = LossConfig {
            tsr_weights: class_weights_from_counts(&self.tsr_counts())?,
            ctc_weights: class_weights_from_counts(&self.ctc_counts())?,
            lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tsr_input<T: Scalar>(&self, s: &TsrSample) -> Result<crate::nn::Tensor<T>, ModelError> {
        Ok(pair_image(&self.tables[s.table], s.cell_i, s.cell_j)?)
    }

    pub fn ctc_input<T: Scalar>(&self, s: &CtcSample, d_text: usize) -> Result<CtcInput<T>, ModelError> {
        Ok(ctc_input(&self.tables[s.table], s.cell, d_text)?)
    }
}

/// Featurizes one cell for the cell-type branch.
pub(crate) fn ctc_input<T: Scalar>(
    table: &Table,
    cell: u32,
    d_text: usize,
) -> Result<CtcInput<T>, crate::featurize::FeatureError> {
    let c = table
        .cell(cell)
        .ok_or(crate::featurize::FeatureError::UnknownCell(cell))?;
    let image = cell_image(table, cell)?;
    let text = embed_text(&c.text, d_text).into_iter().map(T::from_f64_lossy).collect();
    let coord = coord_features(c, table).map(T::from_f64_lossy);
    Ok(CtcInput { image, text, coord })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Steps per epoch; `None` walks the larger task once.
    pub steps_per_epoch: Option<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub decay: StepDecay,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            steps_per_epoch: None,
            lr: 0.01,
            momentum: 0.9,
            decay: StepDecay { every: 10, factor: 0.5 },
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub tsr: f64,
    pub ctc: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub tsr_loss: f64,
    pub ctc_loss: f64,
    pub total_loss: f64,
}

/// Endless shuffled walk over `0..n`, reshuffled on every pass.
#[derive(Clone, Debug)]
struct Stream {
    order: Vec<usize>,
    pos: usize,
}

impl Stream {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Owns the parameters and optimizer state during training.
pub struct Trainer<'a, T> {
    pub params: ModelParams<T>,
    pub loss: LossConfig,
    pub sgd: Sgd<T>,
    data: &'a TrainingData,
}

impl<'a, T: Scalar + Send + Sync> Trainer<'a, T> {
    pub fn new(params: ModelParams<T>, data: &'a TrainingData, lr: f64, momentum: f64) -> Result<Self, ModelError> {
        let loss = data.loss_config(params.arch.lambda)?;
        Ok(Self {
            params,
            loss,
            sgd: Sgd::new(lr, momentum)?,
            data,
        })
    }

    /// Gradient of the mixed loss over the two batches, with per-task mean
    /// losses. A task whose weight is zero is skipped entirely.
    pub fn gradient(&self, tsr: &[usize], ctc: &[usize]) -> Result<(ModelParams<T>, StepLoss), ModelError> {
        let lambda = self.loss.lambda;
        let p = &self.params;
        let mut grad = p.zeros_like();
        let mut loss = StepLoss {
            tsr: 0.0,
            ctc: 0.0,
            total: 0.0,
        };
        if lambda < 1.0 && !tsr.is_empty() {
            let scale = (1.0 - lambda) / tsr.len() as f64;
            let parts: Vec<_> = tsr
                .par_iter()
                .map(|&i| {
                    let s = &self.data.tsr[i];
                    let x = self.data.tsr_input::<T>(s)?;
                    let g = s.label.code();
                    let mut acc = p.zeros_like();
                    let l = p.tsr_accumulate(&x, g, self.loss.tsr_weights[g], scale, &mut acc)?;
                    Ok((l, acc))
                })
                .collect::<Result<_, ModelError>>()?;
            for (l, acc) in &parts {
                loss.tsr += l;
                grad.add_assign(acc)?;
            }
            loss.tsr /= tsr.len() as f64;
        }
        if lambda > 0.0 && !ctc.is_empty() {
            let scale = lambda / ctc.len() as f64;
            let d_text = p.arch.d_text;
            let parts: Vec<_> = ctc
                .par_iter()
                .map(|&i| {
                    let s = &self.data.ctc[i];
                    let x = self.data.ctc_input::<T>(s, d_text)?;
                    let g = s.label.code();
                    let mut acc = p.zeros_like();
                    let l = p.ctc_accumulate(&x, g, self.loss.ctc_weights[g], scale, &mut acc)?;
                    Ok((l, acc))
                })
                .collect::<Result<_, ModelError>>()?;
            for (l, acc) in &parts {
                loss.ctc += l;
                grad.add_assign(acc)?;
            }
            loss.ctc /= ctc.len() as f64;
        }
        loss.total = (1.0 - lambda) * loss.tsr + lambda * loss.ctc;
        Ok((grad, loss))
    }

    /// One optimizer step on the given sample indices.
    pub fn step(&mut self, tsr: &[usize], ctc: &[usize]) -> Result<StepLoss, ModelError> {
        let (grad, loss) = self.gradient(tsr, ctc)?;
        if !(loss.tsr.is_finite() && loss.ctc.is_finite()) {
            return Err(ModelError::NonFinite {
                epoch: 0,
                step: 0,
                tsr: loss.tsr,
                ctc: loss.ctc,
            });
        }
        self.sgd.step(self.params.tensors_mut(), grad.tensors())?;
        Ok(loss)
    }
}

/// Trains from a seeded initialization. Calls `on_epoch` after every epoch.
pub fn train<T: Scalar + Send + Sync>(
    data: &TrainingData,
    arch: ArchConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams<T>, Vec<EpochLog>), ModelError> {
    arch.validate()?;
    if data.tsr.is_empty() {
        return Err(ModelError::EmptyTask("structure"));
    }
    if data.ctc.is_empty() {
        return Err(ModelError::EmptyTask("cell type"));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidArch("batch size must be >= 1".into()));
    }
    let params = ModelParams::<T>::init(arch, cfg.seed)?;
    let mut trainer = Trainer::new(params, data, cfg.lr, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut tsr_stream = Stream::new(data.tsr.len(), &mut rng);
    let mut ctc_stream = Stream::new(data.ctc.len(), &mut rng);
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| data.tsr.len().max(data.ctc.len()).div_ceil(cfg.batch_size));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.decay.lr_at(cfg.lr, epoch);
        trainer.sgd.lr = lr;
        let mut sum = StepLoss {
            tsr: 0.0,
            ctc: 0.0,
            total: 0.0,
        };
        for step in 0..steps {
            let tb = tsr_stream.take(cfg.batch_size, &mut rng);
            let cb = ctc_stream.take(cfg.batch_size, &mut rng);
            let l = trainer.step(&tb, &cb).map_err(|e| match e {
                ModelError::NonFinite { tsr, ctc, .. } => ModelError::NonFinite { epoch, step, tsr, ctc },
                e => e,
            })?;
            sum.tsr += l.tsr;
            sum.ctc += l.ctc;
            sum.total += l.total;
        }
        let n = steps.max(1) as f64;
        let log = EpochLog {
            epoch,
            lr,
            tsr_loss: sum.tsr / n,
            ctc_loss: sum.ctc / n,
            total_loss: sum.total / n,
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok((trainer.params, history))
}

//! Two-branch multi-task network.
//!
//! A shared ConvNet-4 embedding feeds both branches. The structure branch
//! classifies a pair image as horizontal / vertical / unrelated through one
//! hidden layer. The cell-type branch concatenates image, text and
//! coordinate features (in that order) before its classifier.

mod checkpoint;
mod predict;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use predict::{argmax, predict_table, TablePrediction};
pub use train::{train, CtcSample, EpochLog, StepLoss, TrainConfig, Trainer, TrainingData, TsrSample};

use crate::featurize::{FeatureError, DEFAULT_TEXT_DIM, IMAGE_SIDE};
use crate::nn::{
    convnet4, convnet4_output_len, relu, relu_backward, softmax, softmax_cross_entropy, Cache, Dense, NnError,
    ParamSet, Scalar, Sequential, Tensor, N_CLASSES,
};
use crate::pairgen::PairGenError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    PairGen(#[from] PairGenError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no {0} training samples")]
    EmptyTask(&'static str),
    #[error("table {table}: {message}")]
    Dataset { table: String, message: String },
    #[error("non-finite loss at epoch {epoch}, step {step} (structure {tsr}, cell type {ctc})")]
    NonFinite {
        epoch: usize,
        step: usize,
        tsr: f64,
        ctc: f64,
    },
}

/// Which cell-type feature branches contribute to the fused vector.
/// A disabled branch contributes zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchMask {
    pub image: bool,
    pub text: bool,
    pub coord: bool,
}

impl Default for BranchMask {
    fn default() -> Self {
        Self {
            image: true,
            text: true,
            coord: true,
        }
    }
}

impl BranchMask {
    /// Parses a comma list such as `text,image` (or `all`).
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut m = Self {
            image: false,
            text: false,
            coord: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => m = Self::default(),
                "image" | "i" => m.image = true,
                "text" | "t" => m.text = true,
                "coord" | "c" => m.coord = true,
                other => return Err(format!("unknown branch {other:?} (expected text, image, coord)")),
            }
        }
        if !(m.image || m.text || m.coord) {
            return Err("mask enables no branch".into());
        }
        Ok(m)
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.image, "I"), (self.text, "T"), (self.coord, "C")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        parts.join("+")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Structure-branch hidden width.
    pub l1: usize,
    /// Text feature width.
    pub l2: usize,
    /// Cell-image feature width.
    pub l3: usize,
    /// Coordinate feature width.
    pub l4: usize,
    pub d_text: usize,
    /// Cell-type share of the joint loss.
    pub lambda: f64,
    /// Output channels of every embedding convolution.
    pub channels: usize,
    pub mask: BranchMask,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            l1: 128,
            l2: 128,
            l3: 128,
            l4: 32,
            d_text: DEFAULT_TEXT_DIM,
            lambda: 0.3,
            channels: 64,
            mask: BranchMask::default(),
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [self.l1, self.l2, self.l3, self.l4, self.d_text, self.channels];
        if widths.contains(&0) {
            return Err(ModelError::InvalidArch(format!("widths must be >= 1: {widths:?}")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::InvalidArch(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn embedding_len(&self) -> usize {
        convnet4_output_len(self.channels, IMAGE_SIDE)
    }

    pub fn fused_len(&self) -> usize {
        self.l3 + self.l2 + self.l4
    }
}

/// Names of the parameter groups, in checkpoint order.
pub const GROUPS: [&str; 7] = [
    "embedding",
    "tsr_fc",
    "tsr_head",
    "ctc_text_fc",
    "ctc_img_fc",
    "ctc_coord_fc",
    "ctc_head",
];

/// Every trainable weight of both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub embedding: Sequential<T>,
    pub tsr_fc: Dense<T>,
    pub tsr_head: Dense<T>,
    pub ctc_text_fc: Dense<T>,
    pub ctc_img_fc: Dense<T>,
    pub ctc_coord_fc: Dense<T>,
    pub ctc_head: Dense<T>,
}

/// Inputs of the cell-type branch for one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CtcInput<T> {
    pub image: Tensor<T>,
    pub text: Vec<T>,
    pub coord: [T; 4],
}

fn dense_params<T: Scalar>(d: &Dense<T>) -> Vec<&Tensor<T>> {
    vec![&d.weight, &d.bias]
}

fn dense_params_mut<T: Scalar>(d: &mut Dense<T>) -> Vec<&mut Tensor<T>> {
    vec![&mut d.weight, &mut d.bias]
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.groups().into_iter().flat_map(|(_, t)| t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.embedding.params_mut();
        for d in [
            &mut self.tsr_fc,
            &mut self.tsr_head,
            &mut self.ctc_text_fc,
            &mut self.ctc_img_fc,
            &mut self.ctc_coord_fc,
            &mut self.ctc_head,
        ] {
            out.extend(dense_params_mut(d));
        }
        out
    }
}

/// Forward state of the structure branch for one sample.
struct TsrTrace<T> {
    embed: Vec<T>,
    caches: Vec<Cache<T>>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

/// Forward state of the cell-type branch for one sample.
struct CtcTrace<T> {
    embed: Option<(Vec<T>, Vec<Cache<T>>)>,
    f_img: Vec<T>,
    f_text: Vec<T>,
    f_coord: Vec<T>,
    fused: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded He-uniform initialization with zero biases.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = convnet4(3, arch.channels, &mut rng);
        let e = arch.embedding_len();
        Ok(Self {
            arch,
            embedding,
            tsr_fc: Dense::new(e, arch.l1, &mut rng),
            tsr_head: Dense::new(arch.l1, N_CLASSES, &mut rng),
            ctc_text_fc: Dense::new(arch.d_text, arch.l2, &mut rng),
            ctc_img_fc: Dense::new(e, arch.l3, &mut rng),
            ctc_coord_fc: Dense::new(4, arch.l4, &mut rng),
            ctc_head: Dense::new(arch.fused_len(), N_CLASSES, &mut rng),
        })
    }

    /// Parameter tensors grouped by name, in checkpoint order.
    pub fn groups(&self) -> Vec<(&'static str, Vec<&Tensor<T>>)> {
        vec![
            (GROUPS[0], self.embedding.params()),
            (GROUPS[1], dense_params(&self.tsr_fc)),
            (GROUPS[2], dense_params(&self.tsr_head)),
            (GROUPS[3], dense_params(&self.ctc_text_fc)),
            (GROUPS[4], dense_params(&self.ctc_img_fc)),
            (GROUPS[5], dense_params(&self.ctc_coord_fc)),
            (GROUPS[6], dense_params(&self.ctc_head)),
        ]
    }

    pub fn group(&self, name: &str) -> Option<Vec<&Tensor<T>>> {
        self.groups().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            embedding: self.embedding.zeros_like(),
            tsr_fc: self.tsr_fc.zeros_like(),
            tsr_head: self.tsr_head.zeros_like(),
            ctc_text_fc: self.ctc_text_fc.zeros_like(),
            ctc_img_fc: self.ctc_img_fc.zeros_like(),
            ctc_coord_fc: self.ctc_coord_fc.zeros_like(),
            ctc_head: self.ctc_head.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other` tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams<T>) -> Result<(), NnError> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, T::one())?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let cast_seq = |s: &Sequential<T>| Sequential {
            layers: s
                .layers
                .iter()
                .map(|l| match l {
                    crate::nn::Layer::Conv2d(c) => crate::nn::Layer::Conv2d(crate::nn::Conv2d {
                        weight: c.weight.cast(),
                        bias: c.bias.cast(),
                    }),
                    crate::nn::Layer::Dense(d) => crate::nn::Layer::Dense(cast_dense(d)),
                    crate::nn::Layer::Relu => crate::nn::Layer::Relu,
                    crate::nn::Layer::MaxPool2 => crate::nn::Layer::MaxPool2,
                    crate::nn::Layer::Flatten => crate::nn::Layer::Flatten,
                })
                .collect(),
        };
        fn cast_dense<T: Scalar, U: Scalar>(d: &Dense<T>) -> Dense<U> {
            Dense {
                weight: d.weight.cast(),
                bias: d.bias.cast(),
            }
        }
        ModelParams {
            arch: self.arch,
            embedding: cast_seq(&self.embedding),
            tsr_fc: cast_dense(&self.tsr_fc),
            tsr_head: cast_dense(&self.tsr_head),
            ctc_text_fc: cast_dense(&self.ctc_text_fc),
            ctc_img_fc: cast_dense(&self.ctc_img_fc),
            ctc_coord_fc: cast_dense(&self.ctc_coord_fc),
            ctc_head: cast_dense(&self.ctc_head),
        }
    }

    fn check_image(x: &Tensor<T>) -> Result<(), NnError> {
        x.expect_shape(&[3, IMAGE_SIDE, IMAGE_SIDE])
    }

    /// Shared embedding of one `[3, 84, 84]` image.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        Self::check_image(x)?;
        Ok(self.embedding.forward(x.clone())?.into_data())
    }

    fn tsr_trace(&self, x: &Tensor<T>) -> Result<TsrTrace<T>, ModelError> {
        Self::check_image(x)?;
        let (e, caches) = self.embedding.forward_cached(x.clone())?;
        let embed = e.into_data();
        let mut hidden = self.tsr_fc.forward(&embed)?;
        relu(&mut hidden);
        let logits = self.tsr_head.forward(&hidden)?;
        Ok(TsrTrace {
            embed,
            caches,
            hidden,
            logits,
        })
    }

    /// Distribution over {horizontal, vertical, none} for one pair image.
    pub fn tsr_forward(&self, x: &Tensor<T>) -> Result<[f64; N_CLASSES], ModelError> {
        Self::check_image(x)?;
        let mut hidden = self.tsr_fc.forward(&self.embed(x)?)?;
        relu(&mut hidden);
        Ok(to_dist(&softmax(&self.tsr_head.forward(&hidden)?)))
    }

    fn check_ctc(&self, input: &CtcInput<T>) -> Result<(), NnError> {
        Self::check_image(&input.image)?;
        if input.text.len() != self.arch.d_text {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.arch.d_text],
                found: vec![input.text.len()],
            });
        }
        Ok(())
    }

    fn ctc_trace(&self, input: &CtcInput<T>, keep_caches: bool) -> Result<CtcTrace<T>, ModelError> {
        self.check_ctc(input)?;
        let mask = self.arch.mask;
        let (embed, f_img) = if mask.image {
            let (embed, caches) = if keep_caches {
                let (e, c) = self.embedding.forward_cached(input.image.clone())?;
                (e.into_data(), c)
            } else {
                (self.embedding.forward(input.image.clone())?.into_data(), Vec::new())
            };
            let mut f = self.ctc_img_fc.forward(&embed)?;
            relu(&mut f);
            (Some((embed, caches)), f)
        } else {
            (None, vec![T::zero(); self.arch.l3])
        };
        let f_text = if mask.text {
            let mut f = self.ctc_text_fc.forward(&input.text)?;
            relu(&mut f);
            f
        } else {
            vec![T::zero(); self.arch.l2]
        };
        let f_coord = if mask.coord {
            let mut f = self.ctc_coord_fc.forward(&input.coord)?;
            relu(&mut f);
            f
        } else {
            vec![T::zero(); self.arch.l4]
        };
        let fused: Vec<T> = f_img.iter().chain(&f_text).chain(&f_coord).copied().collect();
        let logits = self.ctc_head.forward(&fused)?;
        Ok(CtcTrace {
            embed,
            f_img,
            f_text,
            f_coord,
            fused,
            logits,
        })
    }

    /// Concatenated `[f_img | f_text | f_coord]` feature vector.
    pub fn fused_features(&self, input: &CtcInput<T>) -> Result<Vec<T>, ModelError> {
        Ok(self.ctc_trace(input, false)?.fused)
    }

    /// Distribution over {header, attribute, data} for one cell.
    pub fn ctc_forward(&self, input: &CtcInput<T>) -> Result<[f64; N_CLASSES], ModelError> {
        Ok(to_dist(&softmax(&self.ctc_trace(input, false)?.logits)))
    }

    /// Backpropagates `scale * weighted CE` of one pair into `acc`; returns
    /// the unscaled loss.
    pub fn tsr_accumulate(
        &self,
        x: &Tensor<T>,
        gold: usize,
        class_weight: f64,
        scale: f64,
        acc: &mut ModelParams<T>,
    ) -> Result<f64, ModelError> {
        let tr = self.tsr_trace(x)?;
        let (loss, _, mut dz) = softmax_cross_entropy(&tr.logits, gold, class_weight);
        let s = T::from_f64_lossy(scale);
        dz.iter_mut().for_each(|g| *g = *g * s);
        let mut gh = self.tsr_head.backward(&tr.hidden, &dz, &mut acc.tsr_head)?;
        relu_backward(&tr.hidden, &mut gh);
        let ge = self.tsr_fc.backward(&tr.embed, &gh, &mut acc.tsr_fc)?;
        let n = ge.len();
        self.embedding
            .backward(&tr.caches, Tensor::from_vec(&[n], ge)?, &mut acc.embedding, false)?;
        Ok(loss)
    }

    /// Cell-type counterpart of [`Self::tsr_accumulate`].
    pub fn ctc_accumulate(
        &self,
        input: &CtcInput<T>,
        gold: usize,
        class_weight: f64,
        scale: f64,
        acc: &mut ModelParams<T>,
    ) -> Result<f64, ModelError> {
        let tr = self.ctc_trace(input, true)?;
        let (loss, _, mut dz) = softmax_cross_entropy(&tr.logits, gold, class_weight);
        let s = T::from_f64_lossy(scale);
        dz.iter_mut().for_each(|g| *g = *g * s);
        let gf = self.ctc_head.backward(&tr.fused, &dz, &mut acc.ctc_head)?;
        let (l3, l2) = (self.arch.l3, self.arch.l2);
        let mask = self.arch.mask;
        if let Some((embed, caches)) = &tr.embed {
            let mut g = gf[..l3].to_vec();
            relu_backward(&tr.f_img, &mut g);
            let ge = self.ctc_img_fc.backward(embed, &g, &mut acc.ctc_img_fc)?;
            let n = ge.len();
            self.embedding
                .backward(caches, Tensor::from_vec(&[n], ge)?, &mut acc.embedding, false)?;
        }
        if mask.text {
            let mut g = gf[l3..l3 + l2].to_vec();
            relu_backward(&tr.f_text, &mut g);
            self.ctc_text_fc.backward(&input.text, &g, &mut acc.ctc_text_fc)?;
        }
        if mask.coord {
            let mut g = gf[l3 + l2..].to_vec();
            relu_backward(&tr.f_coord, &mut g);
            self.ctc_coord_fc.backward(&input.coord, &g, &mut acc.ctc_coord_fc)?;
        }
        Ok(loss)
    }
}

fn to_dist<T: Scalar>(p: &[T]) -> [f64; N_CLASSES] {
    [p[0].to_f64_lossy(), p[1].to_f64_lossy(), p[2].to_f64_lossy()]
}

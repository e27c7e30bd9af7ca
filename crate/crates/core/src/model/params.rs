//! Parameter container for the one-layer encoder-decoder.
//!
//! A single flat set of named matrices: shared token embedding, one
//! self-attention + feed-forward encoder block, one causal-self +
//! cross-attention + feed-forward decoder block, and the output projection.
//! Gradients and Adam moments reuse the same container since shapes mirror
//! parameters exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::ModelError;
use crate::num::{s, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width.
    pub d: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum ParamId {
    Embed,
    EncWq,
    EncWk,
    EncWv,
    EncWo,
    EncFf1,
    EncFf2,
    DecSelfWq,
    DecSelfWk,
    DecSelfWv,
    DecSelfWo,
    DecCrossWq,
    DecCrossWk,
    DecCrossWv,
    DecCrossWo,
    DecFf1,
    DecFf2,
    OutProj,
}

impl ParamId {
    /// Canonical order; checkpoints serialize matrices in this order.
    pub const ALL: [ParamId; 18] = [
        ParamId::Embed,
        ParamId::EncWq,
        ParamId::EncWk,
        ParamId::EncWv,
        ParamId::EncWo,
        ParamId::EncFf1,
        ParamId::EncFf2,
        ParamId::DecSelfWq,
        ParamId::DecSelfWk,
        ParamId::DecSelfWv,
        ParamId::DecSelfWo,
        ParamId::DecCrossWq,
        ParamId::DecCrossWk,
        ParamId::DecCrossWv,
        ParamId::DecCrossWo,
        ParamId::DecFf1,
        ParamId::DecFf2,
        ParamId::OutProj,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn shape(self, config: &ModelConfig) -> (usize, usize) {
        let d = config.d;
        let v = config.vocab_size;
        match self {
            ParamId::Embed => (v, d),
            ParamId::EncFf1 | ParamId::DecFf1 => (d, 4 * d),
            ParamId::EncFf2 | ParamId::DecFf2 => (4 * d, d),
            ParamId::OutProj => (d, v),
            _ => (d, d),
        }
    }
}

/// All model matrices (or, equally, their gradients / optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    pub config: ModelConfig,
    mats: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn zeros(config: ModelConfig) -> Self {
        let mats = ParamId::ALL
            .iter()
            .map(|id| {
                let (r, c) = id.shape(&config);
                Tensor::zeros(r, c)
            })
            .collect();
        ParamSet { config, mats }
    }

    pub fn zeros_like(other: &ParamSet<F>) -> Self {
        ParamSet::zeros(other.config)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.mats[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.mats[id.index()]
    }

    pub fn tensors(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        ParamId::ALL.iter().map(move |&id| (id, &self.mats[id.index()]))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<F>)> {
        ParamId::ALL.iter().copied().zip(self.mats.iter_mut())
    }

    /// self += c * other, matrix by matrix.
    pub fn add_scaled(&mut self, other: &ParamSet<F>, c: F) {
        debug_assert_eq!(self.config, other.config);
        for (mine, theirs) in self.mats.iter_mut().zip(&other.mats) {
            mine.add_scaled(theirs, c);
        }
    }

    pub fn num_params(&self) -> usize {
        self.mats.iter().map(|m| m.data().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(|m| m.data().iter().all(|x| x.is_finite()))
    }

    /// Max |entry| across every matrix.
    pub fn max_abs(&self) -> F {
        self.mats
            .iter()
            .flat_map(|m| m.data())
            .fold(F::zero(), |acc, x| acc.max(x.abs()))
    }
}

pub fn validate_config(config: &ModelConfig) -> Result<(), ModelError> {
    if config.d < 8 || config.d % 2 != 0 {
        return Err(ModelError::InvalidConfig(format!("d must be even and >= 8, got {}", config.d)));
    }
    if config.vocab_size <= super::vocab::NUM_RESERVED {
        return Err(ModelError::InvalidConfig(format!(
            "vocab_size must exceed the {} reserved tokens, got {}",
            super::vocab::NUM_RESERVED,
            config.vocab_size
        )));
    }
    if config.max_len < 2 {
        return Err(ModelError::InvalidConfig(format!("max_len must be >= 2, got {}", config.max_len)));
    }
    Ok(())
}

/// Seeded uniform(-s, s) initialization with s = 1/sqrt(d).
pub fn init_model<F: Scalar>(config: ModelConfig, seed: u64) -> Result<ParamSet<F>, ModelError> {
    validate_config(&config)?;
    let bound = 1.0 / (config.d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::zeros(config);
    for (_, mat) in params.tensors_mut() {
        for x in mat.data_mut() {
            *x = s::<F>(rng.random_range(-bound..bound));
        }
    }
    Ok(params)
}

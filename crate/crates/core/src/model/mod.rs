//! Dual 1-D ResNet encoders, the contrastive alignment head, EEG-to-fNIRS
//! cross-attention, the gated refinement unit and per-task decoder heads.

mod encoder;
mod fusion;
#[cfg(test)]
mod tests;

pub use encoder::{encode, token_count, EncoderOutput, Modality};
pub use fusion::{
    contrastive_loss, cross_attention_fuse, cross_entropy, decode, forward_full, forward_unimodal, fuse_and_gate,
    roi_gated_refine, similarity_logits, Attention, FullOutput, UnimodalOutput,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{read_named_tensors, write_named_tensors, DiffError, Graph, NodeId, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("unknown decoder head `{0}`")]
    UnknownHead(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub eeg_channels: usize,
    pub fnirs_channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_widths: Vec<usize>,
    pub block_kernel: usize,
    /// Initial logit-scale parameter; the scale itself is `exp(tau)`.
    pub init_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            eeg_channels: 4,
            fnirs_channels: 7,
            d_model: 32,
            n_heads: 4,
            stem_width: 16,
            stem_kernel: 7,
            stem_stride: 2,
            block_widths: vec![16, 32, 32],
            block_kernel: 3,
            init_tau: (1.0f64 / 0.07).ln(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Diff(DiffError::Shape(m)));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model width {} is not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.stem_kernel.is_multiple_of(2) || self.block_kernel.is_multiple_of(2) {
            return bad("convolution kernels must have odd length".into());
        }
        if self.block_widths.is_empty()
            || self.eeg_channels == 0
            || self.fnirs_channels == 0
            || self.stem_width == 0
            || self.stem_stride == 0
        {
            return bad("encoder needs channels, a stem and at least one block".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn channels(&self, m: Modality) -> usize {
        match m {
            Modality::Eeg => self.eeg_channels,
            Modality::Fnirs => self.fnirs_channels,
        }
    }
}

/// A decoder head registered on the backbone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub n_classes: usize,
    /// Which representation feeds the head.
    pub input: HeadInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInput {
    /// Gated cross-attention output.
    Fused,
    /// Mean token of one encoder.
    Eeg,
    Fnirs,
}

/// All learnable tensors by name, plus the head registry.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
    pub heads: BTreeMap<String, HeadSpec>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    heads: BTreeMap<String, HeadSpec>,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, sd: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

impl ModelParams {
    /// Fresh encoders, alignment head, integrator and gating weights; no
    /// decoder heads.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for m in [Modality::Eeg, Modality::Fnirs] {
            encoder::init_encoder(&config, m, &mut rng, &mut tensors);
        }
        let d = config.d_model;
        tensors.insert("align.tau".into(), Tensor::scalar(config.init_tau));
        tensors.insert("align.beta".into(), Tensor::scalar(0.0));
        let sd = (1.0 / d as f64).sqrt();
        for name in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            tensors.insert(name.into(), normal_tensor(&mut rng, vec![d, d], sd));
        }
        // the gate multiplies two branches, so each starts at twice unit
        // gain to keep the product from vanishing
        for name in ["gate.w", "gate.v"] {
            tensors.insert(name.into(), normal_tensor(&mut rng, vec![d, d], 2.0 * sd));
        }
        Ok(Self {
            config,
            tensors,
            heads: BTreeMap::new(),
        })
    }

    /// Registers (or re-initialises) a decoder head `D → D → n_classes`.
    pub fn add_head(&mut self, id: &str, n_classes: usize, input: HeadInput, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_4ead);
        let d = self.config.d_model;
        let sd = (1.0 / d as f64).sqrt();
        self.tensors
            .insert(format!("head.{id}.w1"), normal_tensor(&mut rng, vec![d, d], sd));
        self.tensors.insert(format!("head.{id}.b1"), Tensor::zeros(vec![1, d]));
        self.tensors
            .insert(format!("head.{id}.w2"), normal_tensor(&mut rng, vec![d, n_classes], sd));
        self.tensors
            .insert(format!("head.{id}.b2"), Tensor::zeros(vec![1, n_classes]));
        self.heads.insert(id.to_string(), HeadSpec { n_classes, input });
    }

    pub fn head(&self, id: &str) -> Result<&HeadSpec, ModelError> {
        self.heads
            .get(id)
            .ok_or_else(|| ModelError::UnknownHead(id.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Logit scale `exp(tau)`.
    pub fn logit_scale(&self) -> f64 {
        self.tensors["align.tau"].data()[0].exp()
    }

    /// Places every tensor on `g`; names for which `trainable` is true become
    /// gradient-tracking leaves, the rest constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let nodes = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let id = if trainable(name) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), id)
            })
            .collect();
        Bound { nodes }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            heads: self.heads.clone(),
        };
        let extra = serde_json::to_value(meta).map_err(|e| ModelError::Metadata(e.to_string()))?;
        write_named_tensors(dir, &self.tensors, extra)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let (tensors, manifest) = read_named_tensors(dir)?;
        let meta: CheckpointMeta =
            serde_json::from_value(manifest.extra).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let params = Self {
            config: meta.config,
            tensors,
            heads: meta.heads,
        };
        let reference = {
            let mut p = Self::init(params.config.clone(), 0)?;
            for (id, h) in &params.heads {
                p.add_head(id, h.n_classes, h.input, 0);
            }
            p
        };
        for (name, t) in &reference.tensors {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(ModelError::Metadata(format!(
                    "parameter `{name}` has shape {:?}, architecture expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(params)
    }
}

/// Graph node of every parameter, by name.
#[derive(Clone, Debug)]
pub struct Bound {
    pub nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<NodeId, ModelError> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Gradients of the trainable parameters after `g.backward`.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Tensor> {
        self.nodes
            .iter()
            .filter(|(_, &id)| g.requires_grad(id))
            .filter_map(|(name, &id)| g.grad_tensor(id).map(|t| (name.clone(), t)))
            .collect()
    }
}

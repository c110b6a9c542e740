use std::collections::BTreeMap;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal_tensor, Bound, ModelConfig, ModelError};
use crate::diffcore::{DiffError, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Fnirs,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Self::Eeg => "eeg",
            Self::Fnirs => "fnirs",
        }
    }
}

/// Nodes produced by one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Final convolutional activations `[N_K × T′]`; the saliency tap.
    pub tap: NodeId,
    /// `[T′ × D]`.
    pub tokens: NodeId,
    /// L2-normalised `[1 × D]`.
    pub pooled: NodeId,
}

/// Feature frames after the strided stem under same-padding.
pub fn token_count(config: &ModelConfig, t: usize) -> usize {
    let pad = config.stem_kernel / 2;
    (t + 2 * pad - config.stem_kernel) / config.stem_stride + 1
}

fn conv_init(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> Tensor {
    normal_tensor(rng, vec![out, inp, k], (2.0 / (inp * k) as f64).sqrt())
}

pub(super) fn init_encoder(
    config: &ModelConfig,
    m: Modality,
    rng: &mut ChaCha8Rng,
    tensors: &mut BTreeMap<String, Tensor>,
) {
    let p = m.prefix();
    let mut width = config.stem_width;
    tensors.insert(
        format!("{p}.stem.w"),
        conv_init(rng, width, config.channels(m), config.stem_kernel),
    );
    tensors.insert(format!("{p}.stem.b"), Tensor::zeros(vec![width, 1]));
    let k = config.block_kernel;
    for (i, &out) in config.block_widths.iter().enumerate() {
        tensors.insert(format!("{p}.block{i}.conv1.w"), conv_init(rng, out, width, k));
        tensors.insert(format!("{p}.block{i}.conv1.b"), Tensor::zeros(vec![out, 1]));
        // second conv starts small so each block begins close to its skip path
        let mut w2 = conv_init(rng, out, out, k);
        w2.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        tensors.insert(format!("{p}.block{i}.conv2.w"), w2);
        tensors.insert(format!("{p}.block{i}.conv2.b"), Tensor::zeros(vec![out, 1]));
        if out != width {
            tensors.insert(format!("{p}.block{i}.skip.w"), conv_init(rng, out, width, 1));
        }
        width = out;
    }
    let d = config.d_model;
    let sd = (1.0 / width as f64).sqrt();
    tensors.insert(format!("{p}.lift.w"), normal_tensor(rng, vec![width, d], sd));
    tensors.insert(format!("{p}.lift.b"), Tensor::zeros(vec![1, d]));
    tensors.insert(format!("{p}.proj.w"), normal_tensor(rng, vec![width, d], sd));
    tensors.insert(format!("{p}.proj.b"), Tensor::zeros(vec![1, d]));
}

fn conv_bias(
    g: &mut Graph,
    b: &Bound,
    x: NodeId,
    name: &str,
    stride: usize,
    padding: usize,
) -> Result<NodeId, ModelError> {
    let y = g.conv1d(x, b.get(&format!("{name}.w"))?, stride, padding)?;
    Ok(g.add(y, b.get(&format!("{name}.b"))?)?)
}

/// Runs one encoder on a `[C × T]` epoch.
pub fn encode(
    g: &mut Graph,
    b: &Bound,
    config: &ModelConfig,
    m: Modality,
    epoch: &Array2<f64>,
) -> Result<EncoderOutput, ModelError> {
    let channels = config.channels(m);
    if epoch.nrows() != channels {
        return Err(DiffError::Shape(format!(
            "{} encoder expects {channels} channels, epoch shape is {:?}",
            m.prefix(),
            epoch.shape()
        ))
        .into());
    }
    let data: Vec<f64> = epoch.iter().copied().collect();
    let x = g.constant(Tensor::new(vec![epoch.nrows(), epoch.ncols()], data)?);
    encode_node(g, b, config, m, x)
}

pub(crate) fn encode_node(
    g: &mut Graph,
    b: &Bound,
    config: &ModelConfig,
    m: Modality,
    x: NodeId,
) -> Result<EncoderOutput, ModelError> {
    let p = m.prefix();
    let stem = conv_bias(
        g,
        b,
        x,
        &format!("{p}.stem"),
        config.stem_stride,
        config.stem_kernel / 2,
    )?;
    let mut h = g.relu(stem)?;
    let pad = config.block_kernel / 2;
    for i in 0..config.block_widths.len() {
        let name = format!("{p}.block{i}");
        let c1 = conv_bias(g, b, h, &format!("{name}.conv1"), 1, pad)?;
        let a1 = g.relu(c1)?;
        let c2 = conv_bias(g, b, a1, &format!("{name}.conv2"), 1, pad)?;
        let skip = match b.nodes.get(&format!("{name}.skip.w")) {
            Some(&w) => g.conv1d(h, w, 1, 0)?,
            None => h,
        };
        let sum = g.add(c2, skip)?;
        h = g.relu(sum)?;
    }
    let tap = h;
    let time_major = g.transpose(tap)?;
    let lifted = g.matmul(time_major, b.get(&format!("{p}.lift.w"))?)?;
    let tokens = g.add(lifted, b.get(&format!("{p}.lift.b"))?)?;
    let mean = g.mean(tap, 1)?;
    let mean_row = g.transpose(mean)?;
    let proj = g.matmul(mean_row, b.get(&format!("{p}.proj.w"))?)?;
    let proj = g.add(proj, b.get(&format!("{p}.proj.b"))?)?;
    let pooled = g.l2_normalize(proj, 1)?;
    Ok(EncoderOutput { tap, tokens, pooled })
}

use ndarray::Array2;

use super::encoder::{encode, EncoderOutput, Modality};
use super::{Bound, HeadInput, ModelError, ModelParams};
use crate::diffcore::{DiffError, Graph, NodeId, Tensor};

const NORM_TOLERANCE: f64 = 1e-6;

/// `S = exp(tau) · X_f · X_eᵀ + beta` for row-normalised `[B × D]` inputs.
pub fn similarity_logits(
    g: &mut Graph,
    x_eeg: NodeId,
    x_fnirs: NodeId,
    tau: NodeId,
    beta: NodeId,
) -> Result<NodeId, ModelError> {
    for (label, x) in [("EEG", x_eeg), ("fNIRS", x_fnirs)] {
        let v = g.value(x);
        if v.rank() != 2 {
            return Err(DiffError::Shape(format!("{label} embeddings must be [B × D], got {:?}", v.shape())).into());
        }
        let d = v.shape()[1];
        for (i, row) in v.data().chunks(d.max(1)).enumerate() {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(
                    DiffError::Contract(format!("{label} embedding row {i} has norm {norm}, expected 1")).into(),
                );
            }
        }
    }
    let e_t = g.transpose(x_eeg)?;
    let dots = g.matmul(x_fnirs, e_t)?;
    let scale = g.exp(tau)?;
    let scaled = g.mul(dots, scale)?;
    Ok(g.add(scaled, beta)?)
}

/// Mean over the diagonal of a square matrix.
fn diagonal_mean(g: &mut Graph, m: NodeId) -> Result<NodeId, ModelError> {
    let n = g.shape(m)[0];
    let eye = g.constant(Tensor::identity(n));
    let diag = g.mul(m, eye)?;
    let total = g.sum_all(diag)?;
    Ok(g.scale(total, 1.0 / n as f64)?)
}

/// Symmetric InfoNCE: the average of the row-wise (fNIRS → EEG) and
/// column-wise (EEG → fNIRS) cross-entropies with matching pairs on the
/// diagonal.
pub fn contrastive_loss(g: &mut Graph, s: NodeId) -> Result<NodeId, ModelError> {
    let shape = g.shape(s).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
        return Err(DiffError::Shape(format!("similarity matrix must be square, got {shape:?}")).into());
    }
    let rows = g.log_softmax(s, 1)?;
    let cols = g.log_softmax(s, 0)?;
    let fnirs_dir = diagonal_mean(g, rows)?;
    let eeg_dir = diagonal_mean(g, cols)?;
    let both = g.add(fnirs_dir, eeg_dir)?;
    Ok(g.scale(both, -0.5)?)
}

/// Cross-attention output and the per-head attention weights `[T′ × T″]`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: NodeId,
    pub weights: Vec<NodeId>,
}

/// EEG tokens `[T′ × D]` query fNIRS tokens `[T″ × D]`; heads are column
/// blocks of the `D × D` projections, concatenated and mixed by `W_O`.
pub fn cross_attention_fuse(
    g: &mut Graph,
    b: &Bound,
    n_heads: usize,
    eeg_tokens: NodeId,
    fnirs_tokens: NodeId,
) -> Result<Attention, ModelError> {
    let (wq, wk, wv, wo) = (b.get("attn.q")?, b.get("attn.k")?, b.get("attn.v")?, b.get("attn.o")?);
    let d = g.shape(wq)[0];
    for (label, x) in [("EEG", eeg_tokens), ("fNIRS", fnirs_tokens)] {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != d || s[0] == 0 {
            return Err(
                DiffError::Shape(format!("{label} tokens have shape {s:?}, attention expects [T × {d}]")).into(),
            );
        }
    }
    let dk = d / n_heads;
    let q = g.matmul(eeg_tokens, wq)?;
    let k = g.matmul(fnirs_tokens, wk)?;
    let v = g.matmul(fnirs_tokens, wv)?;
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice(q, 1, h * dk, dk)?;
        let kh = g.slice(k, 1, h * dk, dk)?;
        let vh = g.slice(v, 1, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let w = g.softmax(scores, 1)?;
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let concat = g.concat(&heads, 1)?;
    Ok(Attention {
        output: g.matmul(concat, wo)?,
        weights,
    })
}

/// `SiLU(GELU(H)·W) ⊙ (GELU(H)·V)`.
pub fn roi_gated_refine(g: &mut Graph, h: NodeId, w: NodeId, v: NodeId) -> Result<NodeId, ModelError> {
    let f = g.gelu(h)?;
    let gate_in = g.matmul(f, w)?;
    let gate = g.silu(gate_in)?;
    let linear = g.matmul(f, v)?;
    Ok(g.mul(gate, linear)?)
}

/// Two-layer perceptron head on a `[1 × D]` embedding.
pub fn decode(g: &mut Graph, b: &Bound, head_id: &str, x: NodeId) -> Result<NodeId, ModelError> {
    let w1 = b
        .nodes
        .get(&format!("head.{head_id}.w1"))
        .copied()
        .ok_or_else(|| ModelError::UnknownHead(head_id.to_string()))?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b.get(&format!("head.{head_id}.b1"))?)?;
    let h = g.gelu(h)?;
    let y = g.matmul(h, b.get(&format!("head.{head_id}.w2"))?)?;
    Ok(g.add(y, b.get(&format!("head.{head_id}.b2"))?)?)
}

/// Softmax cross-entropy of `[1 × n]` logits against a class index.
pub fn cross_entropy(g: &mut Graph, logits: NodeId, label: usize) -> Result<NodeId, ModelError> {
    let n = g.shape(logits)[1];
    if label >= n {
        return Err(DiffError::Shape(format!("label {label} outside {n} logits")).into());
    }
    let lp = g.log_softmax(logits, 1)?;
    let picked = g.slice(lp, 1, label, 1)?;
    let picked = g.sum_all(picked)?;
    Ok(g.scale(picked, -1.0)?)
}

#[derive(Clone, Debug)]
pub struct FullOutput {
    pub eeg: EncoderOutput,
    pub fnirs: EncoderOutput,
    pub attention: Attention,
    /// Gated tokens `[T′ × D]`.
    pub gated: NodeId,
    /// Temporal mean of the gated tokens, `[1 × D]`.
    pub embedding: NodeId,
    pub logits: NodeId,
}

/// Encode both modalities, fuse, gate, average over time, decode.
pub fn forward_full(
    g: &mut Graph,
    b: &Bound,
    params: &ModelParams,
    eeg: &Array2<f64>,
    fnirs: &Array2<f64>,
    head_id: &str,
) -> Result<FullOutput, ModelError> {
    let spec = params.head(head_id)?;
    if spec.input != HeadInput::Fused {
        return Err(ModelError::Metadata(format!(
            "head `{head_id}` decodes a single modality, not the fused embedding"
        )));
    }
    let mut out = fuse_and_gate(g, b, params, eeg, fnirs)?;
    out.logits = decode(g, b, head_id, out.embedding)?;
    Ok(out)
}

/// Everything in [`forward_full`] short of a decoder head; `logits` is the
/// embedding itself.
pub fn fuse_and_gate(
    g: &mut Graph,
    b: &Bound,
    params: &ModelParams,
    eeg: &Array2<f64>,
    fnirs: &Array2<f64>,
) -> Result<FullOutput, ModelError> {
    let cfg = &params.config;
    let e = encode(g, b, cfg, Modality::Eeg, eeg)?;
    let f = encode(g, b, cfg, Modality::Fnirs, fnirs)?;
    let attention = cross_attention_fuse(g, b, cfg.n_heads, e.tokens, f.tokens)?;
    let gated = roi_gated_refine(g, attention.output, b.get("gate.w")?, b.get("gate.v")?)?;
    let embedding = g.mean(gated, 0)?;
    Ok(FullOutput {
        eeg: e,
        fnirs: f,
        attention,
        gated,
        embedding,
        logits: embedding,
    })
}

#[derive(Clone, Debug)]
pub struct UnimodalOutput {
    pub encoder: EncoderOutput,
    pub logits: NodeId,
}

/// Single-encoder classifier: mean token into a decoder head registered
/// with the matching [`HeadInput`].
pub fn forward_unimodal(
    g: &mut Graph,
    b: &Bound,
    params: &ModelParams,
    epoch: &Array2<f64>,
    head_id: &str,
) -> Result<UnimodalOutput, ModelError> {
    let modality = match params.head(head_id)?.input {
        HeadInput::Eeg => Modality::Eeg,
        HeadInput::Fnirs => Modality::Fnirs,
        HeadInput::Fused => {
            return Err(ModelError::Metadata(format!(
                "head `{head_id}` decodes the fused embedding"
            )))
        }
    };
    let encoder = encode(g, b, &params.config, modality, epoch)?;
    let pooled = g.mean(encoder.tokens, 0)?;
    let logits = decode(g, b, head_id, pooled)?;
    Ok(UnimodalOutput { encoder, logits })
}

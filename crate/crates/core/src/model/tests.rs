use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::diffcore::{finite_diff_check, gelu, silu};

fn random_epoch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn params_with_heads() -> ModelParams {
    let mut p = ModelParams::init(ModelConfig::default(), 3).unwrap();
    p.add_head("binary", 2, HeadInput::Fused, 1);
    p.add_head("craving", 3, HeadInput::Fused, 2);
    p.add_head("eeg-only", 2, HeadInput::Eeg, 3);
    p
}

fn bind_all(p: &ModelParams, g: &mut Graph) -> Bound {
    p.bind(g, |_| true)
}

fn matrix(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn scalar_value(g: &Graph, id: NodeId) -> f64 {
    g.value(id).data()[0]
}

fn loss_of(s: Tensor) -> f64 {
    let mut g = Graph::new();
    let s = g.constant(s);
    let l = contrastive_loss(&mut g, s).unwrap();
    scalar_value(&g, l)
}

#[test]
fn pooled_embedding_is_unit_norm_and_token_count_halves() {
    let p = params_with_heads();
    assert_eq!(token_count(&p.config, 1750), 875);
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let x = random_epoch(4, 1750, 1);
    let out = encode(&mut g, &b, &p.config, Modality::Eeg, &x).unwrap();
    assert_eq!(g.shape(out.tokens), &[875, 32]);
    assert_eq!(g.shape(out.tap), &[32, 875]);
    let norm = g.value(out.pooled).data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
}

#[test]
fn encoder_is_pure_and_checks_channels() {
    let p = params_with_heads();
    let x = random_epoch(7, 70, 2);
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let a = encode(&mut g, &b, &p.config, Modality::Fnirs, &x).unwrap();
    let c = encode(&mut g, &b, &p.config, Modality::Fnirs, &x).unwrap();
    assert_eq!(g.value(a.tokens), g.value(c.tokens));
    assert_eq!(g.value(a.pooled), g.value(c.pooled));
    let err = encode(&mut g, &b, &p.config, Modality::Eeg, &x).unwrap_err();
    assert!(matches!(err, ModelError::Diff(DiffError::Shape(_))), "{err}");
}

#[test]
fn similarity_closed_forms() {
    let mut g = Graph::new();
    let x = g.constant(matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]));
    let tau = g.constant(Tensor::scalar(0.0));
    let beta = g.constant(Tensor::scalar(0.0));
    let s = similarity_logits(&mut g, x, x, tau, beta).unwrap();
    assert_eq!(g.value(s), &Tensor::identity(2));

    let unit = g.constant(matrix(&[vec![0.6, 0.8]]));
    let tau = g.constant(Tensor::scalar(2f64.ln()));
    let beta = g.constant(Tensor::scalar(0.5));
    let s = similarity_logits(&mut g, unit, unit, tau, beta).unwrap();
    assert_eq!(g.shape(s), &[1, 1]);
    assert!((scalar_value(&g, s) - 2.5).abs() < 1e-12);
}

#[test]
fn similarity_rejects_unnormalised_rows() {
    let mut g = Graph::new();
    let good = g.constant(matrix(&[vec![1.0, 0.0]]));
    let bad = g.constant(matrix(&[vec![1.0, 1.0]]));
    let tau = g.constant(Tensor::scalar(0.0));
    let beta = g.constant(Tensor::scalar(0.0));
    let err = similarity_logits(&mut g, good, bad, tau, beta).unwrap_err();
    assert!(matches!(err, ModelError::Diff(DiffError::Contract(_))), "{err}");
}

#[test]
fn contrastive_loss_oracles() {
    for b in [1usize, 2, 4, 8] {
        let l = loss_of(Tensor::full(vec![b, b], 0.3));
        assert!((l - (b as f64).ln()).abs() < 1e-9, "B={b}: {l}");
    }
    let l = loss_of(matrix(&[vec![10.0, 0.0], vec![0.0, 10.0]]));
    assert!((l - (-10f64).exp().ln_1p()).abs() < 1e-9, "{l}");
    assert!((l - 4.54e-5).abs() < 1e-7);
    assert_eq!(loss_of(matrix(&[vec![3.7]])), 0.0);
}

#[test]
fn contrastive_loss_shift_and_transpose_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let base = loss_of(matrix(&rows));
    for c in [-7.5, 0.25, 100.0] {
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        assert!((loss_of(matrix(&shifted)) - base).abs() < 1e-9);
    }
    let transposed: Vec<Vec<f64>> = (0..5).map(|j| (0..5).map(|i| rows[i][j]).collect()).collect();
    assert!((loss_of(matrix(&transposed)) - base).abs() < 1e-12);
}

fn attention_setup(seed: u64) -> (ModelParams, Tensor, Tensor) {
    let p = ModelParams::init(ModelConfig::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut t = |n: usize| Tensor::new(vec![n, 32], (0..n * 32).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let (e, f) = (t(6), t(5));
    (p, e, f)
}

#[test]
fn attention_rows_are_distributions() {
    let (p, e, f) = attention_setup(1);
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let (e, f) = (g.constant(e), g.constant(f));
    let att = cross_attention_fuse(&mut g, &b, 4, e, f).unwrap();
    assert_eq!(att.weights.len(), 4);
    assert_eq!(g.shape(att.output), &[6, 32]);
    for &w in &att.weights {
        let v = g.value(w);
        assert_eq!(v.shape(), &[6, 5]);
        for row in v.data().chunks(5) {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_is_invariant_to_key_order() {
    let (p, e, f) = attention_setup(2);
    let perm = [3usize, 0, 4, 1, 2];
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| f.data()[i * 32..(i + 1) * 32].to_vec()).collect();
    let f_perm = matrix(&rows);
    let run = |f: Tensor| {
        let mut g = Graph::new();
        let b = bind_all(&p, &mut g);
        let (e, f) = (g.constant(e.clone()), g.constant(f));
        let att = cross_attention_fuse(&mut g, &b, 4, e, f).unwrap();
        g.value(att.output).clone()
    };
    assert!(run(f).max_abs_diff(&run(f_perm)) < 1e-9);
}

#[test]
fn single_key_attention_matches_closed_form() {
    let (p, e, f) = attention_setup(3);
    let key = Tensor::new(vec![1, 32], f.data()[..32].to_vec()).unwrap();
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let (en, kn) = (g.constant(e), g.constant(key.clone()));
    let att = cross_attention_fuse(&mut g, &b, 4, en, kn).unwrap();
    for &w in &att.weights {
        assert!(g.value(w).data().iter().all(|&x| x == 1.0));
    }
    // (token · W_V) · W_O, repeated for every query
    let mut h = Graph::new();
    let k = h.constant(key);
    let wv = h.constant(p.tensors["attn.v"].clone());
    let wo = h.constant(p.tensors["attn.o"].clone());
    let kv = h.matmul(k, wv).unwrap();
    let expected = h.matmul(kv, wo).unwrap();
    let expected = h.value(expected).data().to_vec();
    for row in g.value(att.output).data().chunks(32) {
        for (a, b) in row.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_keys_give_identical_rows() {
    let (p, e, f) = attention_setup(4);
    let row = f.data()[..32].to_vec();
    let same = matrix(&vec![row; 5]);
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let (e, f) = (g.constant(e), g.constant(same));
    let att = cross_attention_fuse(&mut g, &b, 4, e, f).unwrap();
    let out = g.value(att.output).data().to_vec();
    for r in out.chunks(32).skip(1) {
        for (a, b) in r.iter().zip(&out[..32]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_width_mismatch() {
    let (p, e, _) = attention_setup(5);
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let e = g.constant(e);
    let narrow = g.constant(Tensor::zeros(vec![3, 16]));
    assert!(matches!(
        cross_attention_fuse(&mut g, &b, 4, e, narrow),
        Err(ModelError::Diff(DiffError::Shape(_)))
    ));
}

#[test]
fn gating_closed_forms() {
    let mut g = Graph::new();
    let zero = g.constant(Tensor::zeros(vec![3, 4]));
    let w = g.constant(Tensor::full(vec![4, 4], 0.7));
    let out = roi_gated_refine(&mut g, zero, w, w).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));

    let x = g.constant(matrix(&[vec![1.0]]));
    let eye = g.constant(Tensor::identity(1));
    let out = roi_gated_refine(&mut g, x, eye, eye).unwrap();
    // independent erf/logistic evaluation
    assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
    assert!((silu(gelu(1.0)) - 0.587_888_261_053_749).abs() < 1e-12);
    assert!((scalar_value(&g, out) - 0.494_616_699_712_944).abs() < 1e-12);
}

#[test]
fn strongly_negative_gate_closes() {
    let mut g = Graph::new();
    let h = g.constant(matrix(&[vec![1.0, 2.0], vec![0.5, 1.5]]));
    let closed = g.constant(Tensor::from_rows(&[vec![-40.0, 0.0], vec![0.0, -40.0]]).unwrap());
    let eye = g.constant(Tensor::identity(2));
    let out = roi_gated_refine(&mut g, h, closed, eye).unwrap();
    let f = g.gelu(h).unwrap();
    let linear = g.matmul(f, eye).unwrap();
    for (o, l) in g.value(out).data().iter().zip(g.value(linear).data()) {
        assert!(o.abs() < 0.01 * l.abs(), "{o} vs {l}");
    }
}

#[test]
fn forward_full_contract() {
    let p = params_with_heads();
    let (eeg, fnirs) = (random_epoch(4, 80, 7), random_epoch(7, 20, 8));
    let mut g = Graph::new();
    let b = bind_all(&p, &mut g);
    let bin = forward_full(&mut g, &b, &p, &eeg, &fnirs, "binary").unwrap();
    assert_eq!(g.shape(bin.logits), &[1, 2]);
    let crav = forward_full(&mut g, &b, &p, &eeg, &fnirs, "craving").unwrap();
    assert_eq!(g.shape(crav.logits), &[1, 3]);
    let again = forward_full(&mut g, &b, &p, &eeg, &fnirs, "binary").unwrap();
    assert_eq!(g.value(bin.logits), g.value(again.logits));
    assert!(matches!(
        forward_full(&mut g, &b, &p, &eeg, &fnirs, "nope"),
        Err(ModelError::UnknownHead(_))
    ));
    let uni = forward_unimodal(&mut g, &b, &p, &eeg, "eeg-only").unwrap();
    assert_eq!(g.shape(uni.logits), &[1, 2]);
}

/// Every parameter group of the full model plus cross-entropy against
/// central differences, on a few elements of each tensor.
#[test]
fn full_model_gradients_match_finite_differences() {
    let p = params_with_heads();
    let (eeg, fnirs) = (random_epoch(4, 24, 11), random_epoch(7, 12, 12));
    let names: Vec<String> = p
        .tensors
        .keys()
        .filter(|n| !n.starts_with("head.") || n.starts_with("head.binary."))
        .cloned()
        .collect();
    let point: Vec<Tensor> = names.iter().map(|n| p.tensors[n].clone()).collect();
    let subset: Vec<Vec<usize>> = point
        .iter()
        .map(|t| {
            let n = t.numel();
            (0..n.min(4)).map(|k| (k * 7919) % n).collect()
        })
        .collect();
    let build = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId, DiffError> {
        let b = Bound {
            nodes: names
                .iter()
                .cloned()
                .zip(ids.iter().copied())
                .collect::<BTreeMap<_, _>>(),
        };
        let out = forward_full(g, &b, &p, &eeg, &fnirs, "binary").map_err(|e| DiffError::Contract(e.to_string()))?;
        cross_entropy(g, out.logits, 1).map_err(|e| DiffError::Contract(e.to_string()))
    };
    let report = finite_diff_check(build, &point, 1e-5, Some(&subset)).unwrap();
    assert!(
        report.max_rel_error < 1e-3,
        "{report:?} at {:?}",
        report.worst.map(|(i, _)| &names[i])
    );
    assert!(report.checked > 100);
}

#[test]
fn checkpoint_round_trip_keeps_heads() {
    let p = params_with_heads();
    let dir = tempfile::tempdir().unwrap();
    p.save(dir.path()).unwrap();
    let back = ModelParams::load(dir.path()).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.head("craving").unwrap().n_classes, 3);
}

#[test]
fn logit_scale_is_positive() {
    let mut p = ModelParams::init(ModelConfig::default(), 0).unwrap();
    p.tensors.insert("align.tau".into(), Tensor::scalar(-50.0));
    assert!(p.logit_scale() > 0.0);
}

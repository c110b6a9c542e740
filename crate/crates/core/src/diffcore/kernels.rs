//! Forward and gradient rules for every primitive, on flat buffers.

use super::tensor::numel;
use super::DiffError;

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(shape: &[usize], axis: usize, op: &str) -> Result<(), DiffError> {
    if axis >= shape.len() {
        return Err(DiffError::Shape(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

/// Right-aligned broadcasting of two shapes.
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for (i, &d) in shape.iter().enumerate().rev() {
        strides[i + offset] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize], op: &str) -> Result<Self, DiffError> {
        if a == b {
            return Ok(Self {
                out_shape: a.to_vec(),
                a_strides: vec![],
                b_strides: vec![],
                same: true,
            });
        }
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        for i in 0..rank {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            out[i] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(DiffError::Shape(format!("{op}: cannot broadcast {a:?} with {b:?}"))),
            };
        }
        Ok(Self {
            a_strides: aligned_strides(a, &out),
            b_strides: aligned_strides(b, &out),
            out_shape: out,
            same: false,
        })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = numel(&self.out_shape);
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            // odometer increment
            let mut d = rank;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * idx[d];
                ib -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · bᵀ` where `b` is stored `[n×k]`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`.
pub(crate) fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_out: usize,
}

impl ConvDims {
    /// Output positions `t` with `0 <= t*stride + k - padding < t_in`.
    fn valid_range(&self, tap: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.padding > tap {
            (self.padding - tap).div_ceil(s)
        } else {
            0
        };
        let hi_excl = if self.t_in + self.padding > tap {
            ((self.t_in + self.padding - tap - 1) / s + 1).min(self.t_out)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], d: &ConvDims, out: &mut [f64]) {
    for o in 0..d.c_out {
        let orow = &mut out[o * d.t_out..(o + 1) * d.t_out];
        for c in 0..d.c_in {
            let xrow = &x[c * d.t_in..(c + 1) * d.t_in];
            for tap in 0..d.k {
                let wv = w[(o * d.c_in + c) * d.k + tap];
                let (lo, hi) = d.valid_range(tap);
                if d.stride == 1 {
                    let base = lo + tap - d.padding;
                    let xs = &xrow[base..base + (hi - lo)];
                    for (ov, &xv) in orow[lo..hi].iter_mut().zip(xs) {
                        *ov += wv * xv;
                    }
                } else {
                    for t in lo..hi {
                        orow[t] += wv * xrow[t * d.stride + tap - d.padding];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
) {
    if let Some(gx) = gx {
        for o in 0..d.c_out {
            let grow = &g[o * d.t_out..(o + 1) * d.t_out];
            for c in 0..d.c_in {
                let gxrow = &mut gx[c * d.t_in..(c + 1) * d.t_in];
                for tap in 0..d.k {
                    let wv = w[(o * d.c_in + c) * d.k + tap];
                    let (lo, hi) = d.valid_range(tap);
                    for t in lo..hi {
                        gxrow[t * d.stride + tap - d.padding] += wv * grow[t];
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for o in 0..d.c_out {
            let grow = &g[o * d.t_out..(o + 1) * d.t_out];
            for c in 0..d.c_in {
                let xrow = &x[c * d.t_in..(c + 1) * d.t_in];
                for tap in 0..d.k {
                    let (lo, hi) = d.valid_range(tap);
                    let mut acc = 0.0;
                    for t in lo..hi {
                        acc += grow[t] * xrow[t * d.stride + tap - d.padding];
                    }
                    gw[(o * d.c_in + c) * d.k + tap] += acc;
                }
            }
        }
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn softmax_lanes(x: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let (outer, n, inner) = lanes(shape, axis);
    for o in 0..outer {
        for r in 0..inner {
            let base = o * n * inner + r;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                mx = mx.max(x[base + i * inner]);
            }
            let mut sum = 0.0;
            for i in 0..n {
                let e = (x[base + i * inner] - mx).exp();
                out[base + i * inner] = e;
                sum += e;
            }
            for i in 0..n {
                out[base + i * inner] /= sum;
            }
        }
    }
}

pub(crate) fn log_softmax_lanes(x: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let (outer, n, inner) = lanes(shape, axis);
    for o in 0..outer {
        for r in 0..inner {
            let base = o * n * inner + r;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                mx = mx.max(x[base + i * inner]);
            }
            let sum: f64 = (0..n).map(|i| (x[base + i * inner] - mx).exp()).sum();
            let lse = mx + sum.ln();
            for i in 0..n {
                out[base + i * inner] = x[base + i * inner] - lse;
            }
        }
    }
}

use super::kernels::{self, lanes, Broadcast, ConvDims};
use super::tensor::{numel, Tensor};
use super::{DiffError, PrimitiveKind};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    kind: Option<PrimitiveKind>,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

/// Recorded computation over [`Tensor`]s.
///
/// Nodes are appended in creation order, so the node list is already a
/// topological order and [`Graph::backward`] simply walks it in reverse.
///
/// Gradient semantics: leaf gradients accumulate across calls to
/// `backward` until [`Graph::zero_grad`]; interior gradients are
/// recomputed from scratch on every call.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, None, vec![], requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push(
        &mut self,
        value: Tensor,
        kind: Option<PrimitiveKind>,
        parents: Vec<NodeId>,
        requires_grad: bool,
    ) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            kind,
            parents,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn kind(&self, id: NodeId) -> Option<&PrimitiveKind> {
        self.nodes[id.0].kind.as_ref()
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    /// Gradient of the last `backward` loss with respect to `id`, if computed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Applies a primitive and records it.
    pub fn forward(&mut self, kind: PrimitiveKind, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let arity = kind.arity();
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(DiffError::Contract(format!(
                    "{} expects {n} inputs, got {}",
                    kind.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(DiffError::Contract(format!("{} needs inputs", kind.name())));
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
            eval(&kind, &vals)?
        };
        if !value.is_finite() {
            return Err(DiffError::NonFinite(kind.name().to_string()));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, Some(kind), inputs.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::MatMul, &[a, b])
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Conv1d { stride, padding }, &[x, w])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Mul, &[a, b])
    }

    pub fn mean(&mut self, a: NodeId, axis: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Mean { axis: Some(axis) }, &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Mean { axis: None }, &[a])
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let n = self.value(a).numel() as f64;
        let m = self.mean_all(a)?;
        self.scale(m, n)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Relu, &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Gelu, &[a])
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Silu, &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Softmax { axis }, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::LogSoftmax { axis }, &[a])
    }

    pub fn l2_normalize(&mut self, a: NodeId, axis: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::L2Normalize { axis }, &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Transpose, &[a])
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Concat { axis }, inputs)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Slice { axis, start, len }, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Scale(factor), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.forward(PrimitiveKind::Log, &[a])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), DiffError> {
        let n_loss = self.nodes[loss.0].value.numel();
        if n_loss != 1 {
            return Err(DiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes[..=loss.0] {
            if !node.requires_grad {
                continue;
            }
            let n = node.value.numel();
            match (&node.kind, &mut node.grad) {
                (None, Some(_)) => {}
                (_, slot) => *slot = Some(vec![0.0; n]),
            }
        }
        for node in &mut self.nodes[loss.0 + 1..] {
            if node.kind.is_some() {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] += 1.0;
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(kind) = node.kind.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let parents = node.parents.clone();
            let need: Vec<bool> = parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let contributions = {
                let vals: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
                vjp(kind, &vals, &node.value, g, &need)
            };
            for ((p, contrib), needed) in parents.iter().zip(contributions).zip(need) {
                if !needed {
                    continue;
                }
                if let Some(c) = contrib {
                    let pg = self.nodes[p.0].grad.as_mut().expect("grad allocated");
                    for (a, b) in pg.iter_mut().zip(c) {
                        *a += b;
                    }
                }
            }
        }
        Ok(())
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn conv_dims(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<ConvDims, DiffError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 3 || xs[0] != ws[1] {
        return Err(shape_err("conv1d", xs, ws));
    }
    if stride == 0 {
        return Err(DiffError::Contract("conv1d: stride must be positive".into()));
    }
    let (c_in, t_in, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
    if t_in + 2 * padding < k {
        return Err(shape_err("conv1d", xs, ws));
    }
    let t_out = (t_in + 2 * padding - k) / stride + 1;
    Ok(ConvDims {
        c_in,
        t_in,
        c_out,
        k,
        stride,
        padding,
        t_out,
    })
}

fn eval(kind: &PrimitiveKind, x: &[&Tensor]) -> Result<Tensor, DiffError> {
    use PrimitiveKind as K;
    let map = |t: &Tensor, f: fn(f64) -> f64| Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
    match kind {
        K::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(shape_err("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            kernels::matmul(a.data(), b.data(), m, k, n, &mut out);
            Tensor::new(vec![m, n], out)
        }
        K::Conv1d { stride, padding } => {
            let d = conv_dims(x[0], x[1], *stride, *padding)?;
            let mut out = vec![0.0; d.c_out * d.t_out];
            kernels::conv1d_forward(x[0].data(), x[1].data(), &d, &mut out);
            Tensor::new(vec![d.c_out, d.t_out], out)
        }
        K::Add | K::Mul => {
            let (a, b) = (x[0], x[1]);
            let name = kind.name();
            let bc = Broadcast::new(a.shape(), b.shape(), name)?;
            let mut out = vec![0.0; numel(&bc.out_shape)];
            let (ad, bd) = (a.data(), b.data());
            if matches!(kind, K::Add) {
                bc.for_each(|o, i, j| out[o] = ad[i] + bd[j]);
            } else {
                bc.for_each(|o, i, j| out[o] = ad[i] * bd[j]);
            }
            Tensor::new(bc.out_shape, out)
        }
        K::Mean { axis } => {
            let a = x[0];
            match axis {
                None => Ok(Tensor::scalar(a.data().iter().sum::<f64>() / a.numel().max(1) as f64)),
                Some(axis) => {
                    kernels::check_axis(a.shape(), *axis, "mean")?;
                    let (outer, n, inner) = lanes(a.shape(), *axis);
                    let mut out = vec![0.0; outer * inner];
                    let d = a.data();
                    for o in 0..outer {
                        for i in 0..n {
                            let src = &d[(o * n + i) * inner..(o * n + i + 1) * inner];
                            for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *dst += v;
                            }
                        }
                    }
                    let inv = 1.0 / n as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                    let mut shape = a.shape().to_vec();
                    shape[*axis] = 1;
                    Tensor::new(shape, out)
                }
            }
        }
        K::Relu => map(x[0], |v| v.max(0.0)),
        K::Gelu => map(x[0], kernels::gelu),
        K::Silu => map(x[0], kernels::silu),
        K::Exp => map(x[0], f64::exp),
        K::Log => {
            if x[0].data().iter().any(|&v| v <= 0.0) {
                return Err(DiffError::Domain("log of a non-positive value".into()));
            }
            map(x[0], f64::ln)
        }
        K::Scale(c) => {
            let c = *c;
            Tensor::new(x[0].shape().to_vec(), x[0].data().iter().map(|&v| v * c).collect())
        }
        K::Softmax { axis } | K::LogSoftmax { axis } => {
            let a = x[0];
            kernels::check_axis(a.shape(), *axis, kind.name())?;
            let mut out = vec![0.0; a.numel()];
            if matches!(kind, K::Softmax { .. }) {
                kernels::softmax_lanes(a.data(), a.shape(), *axis, &mut out);
            } else {
                kernels::log_softmax_lanes(a.data(), a.shape(), *axis, &mut out);
            }
            Tensor::new(a.shape().to_vec(), out)
        }
        K::L2Normalize { axis } => {
            let a = x[0];
            kernels::check_axis(a.shape(), *axis, "l2_normalize")?;
            let (outer, n, inner) = lanes(a.shape(), *axis);
            let d = a.data();
            let mut out = vec![0.0; a.numel()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    let norm = (0..n).map(|i| d[base + i * inner].powi(2)).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for i in 0..n {
                            out[base + i * inner] = d[base + i * inner] / norm;
                        }
                    }
                }
            }
            Tensor::new(a.shape().to_vec(), out)
        }
        K::Transpose => {
            let a = x[0];
            if a.rank() != 2 {
                return Err(DiffError::Shape(format!(
                    "transpose expects rank 2, got {:?}",
                    a.shape()
                )));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], out)
        }
        K::Concat { axis } => {
            let first = x[0].shape();
            kernels::check_axis(first, *axis, "concat")?;
            for t in &x[1..] {
                let s = t.shape();
                let compatible =
                    s.len() == first.len() && s.iter().zip(first).enumerate().all(|(d, (p, q))| d == *axis || p == q);
                if !compatible {
                    return Err(shape_err("concat", first, s));
                }
            }
            let total: usize = x.iter().map(|t| t.shape()[*axis]).sum();
            let mut shape = first.to_vec();
            shape[*axis] = total;
            let (outer, _, inner) = lanes(&shape, *axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for t in x {
                    let n = t.shape()[*axis];
                    out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
                }
            }
            Tensor::new(shape, out)
        }
        K::Slice { axis, start, len } => {
            let a = x[0];
            kernels::check_axis(a.shape(), *axis, "slice")?;
            if start + len > a.shape()[*axis] {
                return Err(DiffError::Shape(format!(
                    "slice {start}..{} out of range for shape {:?} on axis {axis}",
                    start + len,
                    a.shape()
                )));
            }
            let (outer, n, inner) = lanes(a.shape(), *axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                out.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = *len;
            Tensor::new(shape, out)
        }
    }
}

/// Vector-Jacobian products for each parent.
fn vjp(kind: &PrimitiveKind, x: &[&Tensor], y: &Tensor, g: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
    use PrimitiveKind as K;
    let unary = |f: &dyn Fn(usize) -> f64| vec![Some((0..g.len()).map(f).collect::<Vec<f64>>())];
    match kind {
        K::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = need[0].then(|| {
                let mut ga = vec![0.0; m * k];
                kernels::matmul_bt(g, b.data(), m, n, k, &mut ga);
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = vec![0.0; k * n];
                kernels::matmul_at(a.data(), g, m, k, n, &mut gb);
                gb
            });
            vec![ga, gb]
        }
        K::Conv1d { stride, padding } => {
            let d = conv_dims(x[0], x[1], *stride, *padding).expect("validated in forward");
            let mut gx = need[0].then(|| vec![0.0; x[0].numel()]);
            let mut gw = need[1].then(|| vec![0.0; x[1].numel()]);
            kernels::conv1d_backward(x[0].data(), x[1].data(), g, &d, gx.as_deref_mut(), gw.as_deref_mut());
            vec![gx, gw]
        }
        K::Add | K::Mul => {
            let (a, b) = (x[0], x[1]);
            let bc = Broadcast::new(a.shape(), b.shape(), "").expect("validated in forward");
            let mut ga = need[0].then(|| vec![0.0; a.numel()]);
            let mut gb = need[1].then(|| vec![0.0; b.numel()]);
            let (ad, bd) = (a.data(), b.data());
            let add = matches!(kind, K::Add);
            bc.for_each(|o, i, j| {
                if let Some(ga) = ga.as_mut() {
                    ga[i] += if add { g[o] } else { g[o] * bd[j] };
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += if add { g[o] } else { g[o] * ad[i] };
                }
            });
            vec![ga, gb]
        }
        K::Mean { axis } => {
            let a = x[0];
            match axis {
                None => {
                    let v = g[0] / a.numel().max(1) as f64;
                    vec![Some(vec![v; a.numel()])]
                }
                Some(axis) => {
                    let (outer, n, inner) = lanes(a.shape(), *axis);
                    let inv = 1.0 / n as f64;
                    let mut ga = vec![0.0; a.numel()];
                    for o in 0..outer {
                        for i in 0..n {
                            for r in 0..inner {
                                ga[(o * n + i) * inner + r] = g[o * inner + r] * inv;
                            }
                        }
                    }
                    vec![Some(ga)]
                }
            }
        }
        K::Relu => {
            let d = x[0].data();
            unary(&|i| if d[i] > 0.0 { g[i] } else { 0.0 })
        }
        K::Gelu => {
            let d = x[0].data();
            unary(&|i| g[i] * kernels::gelu_grad(d[i]))
        }
        K::Silu => {
            let d = x[0].data();
            unary(&|i| g[i] * kernels::silu_grad(d[i]))
        }
        K::Exp => {
            let yd = y.data();
            unary(&|i| g[i] * yd[i])
        }
        K::Log => {
            let d = x[0].data();
            unary(&|i| g[i] / d[i])
        }
        K::Scale(c) => unary(&|i| g[i] * c),
        K::Softmax { axis } => {
            let (outer, n, inner) = lanes(y.shape(), *axis);
            let yd = y.data();
            let mut ga = vec![0.0; y.numel()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    let dot: f64 = (0..n).map(|i| g[base + i * inner] * yd[base + i * inner]).sum();
                    for i in 0..n {
                        let j = base + i * inner;
                        ga[j] = yd[j] * (g[j] - dot);
                    }
                }
            }
            vec![Some(ga)]
        }
        K::LogSoftmax { axis } => {
            let (outer, n, inner) = lanes(y.shape(), *axis);
            let yd = y.data();
            let mut ga = vec![0.0; y.numel()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    let gsum: f64 = (0..n).map(|i| g[base + i * inner]).sum();
                    for i in 0..n {
                        let j = base + i * inner;
                        ga[j] = g[j] - yd[j].exp() * gsum;
                    }
                }
            }
            vec![Some(ga)]
        }
        K::L2Normalize { axis } => {
            let a = x[0];
            let (outer, n, inner) = lanes(a.shape(), *axis);
            let (ad, yd) = (a.data(), y.data());
            let mut ga = vec![0.0; a.numel()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    let norm = (0..n).map(|i| ad[base + i * inner].powi(2)).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        // zero vectors map to zero; treated as a constant
                        continue;
                    }
                    let dot: f64 = (0..n).map(|i| g[base + i * inner] * yd[base + i * inner]).sum();
                    for i in 0..n {
                        let j = base + i * inner;
                        ga[j] = (g[j] - yd[j] * dot) / norm;
                    }
                }
            }
            vec![Some(ga)]
        }
        K::Transpose => {
            let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(ga)]
        }
        K::Concat { axis } => {
            let (outer, total, inner) = lanes(y.shape(), *axis);
            let mut offset = 0;
            let mut grads = Vec::with_capacity(x.len());
            for (t, needed) in x.iter().zip(need) {
                let n = t.shape()[*axis];
                if *needed {
                    let mut gt = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gt.extend_from_slice(&g[base..base + n * inner]);
                    }
                    grads.push(Some(gt));
                } else {
                    grads.push(None);
                }
                offset += n;
            }
            grads
        }
        K::Slice { axis, start, len } => {
            let a = x[0];
            let (outer, n, inner) = lanes(a.shape(), *axis);
            let mut ga = vec![0.0; a.numel()];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(ga)]
        }
    }
}

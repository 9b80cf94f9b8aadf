//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in execution order, so the node list is a
//! topological order by construction. Values are computed eagerly when a node
//! is pushed; [`Graph::backward`] walks the tape in reverse.

use crate::error::{AutogradError, Result};
use crate::tensor::{gemm, Operand, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    MaskedMse {
        pred: Var,
        residual: Vec<f64>,
        count: f64,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::Sum(..) => "sum",
            Op::MaskedMse { .. } => "masked_mse",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    is_param: bool,
}

/// Ordered record of ops; the tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes the loss does not
    /// depend on get an all-zero tensor of the node's shape.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Input node ids of `v`, in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.inputs_of(&self.nodes[v.0].op)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        value.ensure_finite(op.name())?;
        let needs_grad = self.inputs_of(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            is_param: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::SoftmaxRows(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, ..)
            | Op::MeanRows(a)
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::MaskedMse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("param")?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: true,
            is_param: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("constant")?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: false,
            is_param: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf whose gradient tracking is decided at runtime.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if requires_grad {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(Op::Transpose(a), out)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutogradError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("shape checked by caller")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("add_row")?;
        if self.value(bias).len() != n {
            return Err(AutogradError::Shape {
                op: "add_row",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for (d, &bj) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *d += bj;
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        self.push(Op::AddRow(x, bias), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    /// Tanh-approximated GELU: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu_value);
        self.push(Op::Gelu(a), out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("softmax_rows")?;
        self.value(a).ensure_finite("softmax_rows")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            softmax_into(&src[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
        }
        let out = Tensor::new(&[m, n], data)?;
        self.push(Op::SoftmaxRows(a), out)
    }

    /// Per-row normalization to zero mean and unit (biased) variance,
    /// followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.value(x).dims2("layer_norm")?;
        if d < 2 {
            return Err(AutogradError::Contract(format!(
                "layer_norm needs at least 2 features per row, got {d}"
            )));
        }
        if !(eps > 0.0) {
            return Err(AutogradError::Contract(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        for p in [gamma, beta] {
            if self.value(p).len() != d {
                return Err(AutogradError::Shape {
                    op: "layer_norm",
                    lhs: self.value(x).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(&[m, d], out)?;
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
        )
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2("gather_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(AutogradError::Index {
                    op: "gather_rows",
                    index: r,
                    extent: m,
                });
            }
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let out = Tensor::new(&[rows.len(), n], data)?;
        self.push(Op::GatherRows(a, rows.to_vec()), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).dims2("concat_rows")?.1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_rows")?;
            if pn != n {
                return Err(AutogradError::Shape {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
            m += pm;
        }
        let out = Tensor::new(&[m, n], data)?;
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("slice_cols")?;
        if start > end || end > n {
            return Err(AutogradError::Index {
                op: "slice_cols",
                index: end,
                extent: n,
            });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let out = Tensor::new(&[m, w], data)?;
        self.push(Op::SliceCols(a, start, end), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_cols")?;
            if pm != m {
                return Err(AutogradError::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Column means of an `m×n` matrix, as a `1×n` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("mean_rows")?;
        if m == 0 {
            return Err(AutogradError::Contract("mean_rows over zero rows".into()));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, &v) in data.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        let out = Tensor::new(&[1, n], data)?;
        self.push(Op::MeanRows(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Mean squared error over the entries where `mask` is nonzero.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != mask.shape() {
            return Err(AutogradError::Shape {
                op: "masked_mse",
                lhs: p.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let count: f64 = mask.data().iter().filter(|&&w| w != 0.0).count() as f64;
        if count == 0.0 {
            return Err(AutogradError::Contract("masked_mse with an empty mask".into()));
        }
        let residual: Vec<f64> = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((&a, &b), &w)| if w != 0.0 { a - b } else { 0.0 })
            .collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / count;
        self.push(Op::MaskedMse { pred, residual, count }, Tensor::scalar(loss))
    }

    /// Softmax cross-entropy of a single logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(AutogradError::Index {
                op: "cross_entropy",
                index: label,
                extent: z.len(),
            });
        }
        let mut probs = vec![0.0; z.len()];
        softmax_into(z, &mut probs);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        self.push(Op::CrossEntropy { logits, label, probs }, Tensor::scalar(loss))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    ///
    /// Every parameter leaf gets an entry, all-zero when the loss does not
    /// depend on it. The tape is left intact.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(AutogradError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.is_param && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.dims2("matmul")?;
                let n = tb.cols();
                if self.wants(*a) {
                    // dA = dY · Bᵀ
                    let g = accumulator(grads, *a, ta.shape());
                    gemm(
                        m,
                        n,
                        k,
                        Operand::plain(dy.data(), n),
                        Operand::transposed(tb.data(), n),
                        g.data_mut(),
                        true,
                    );
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dY
                    let g = accumulator(grads, *b, tb.shape());
                    gemm(
                        k,
                        m,
                        n,
                        Operand::transposed(ta.data(), k),
                        Operand::plain(dy.data(), n),
                        g.data_mut(),
                        true,
                    );
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let t = dy.transpose()?;
                    add_into(accumulator(grads, *a, t.shape()), t.data());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(accumulator(grads, v, dy.shape()), dy.data());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(accumulator(grads, *a, dy.shape()), dy.data());
                }
                if self.wants(*b) {
                    let g = accumulator(grads, *b, dy.shape());
                    for (d, &u) in g.data_mut().iter_mut().zip(dy.data()) {
                        *d -= u;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let g = accumulator(grads, *a, dy.shape());
                    for ((d, &u), &y) in g.data_mut().iter_mut().zip(dy.data()).zip(vb) {
                        *d += u * y;
                    }
                }
                if self.wants(*b) {
                    let g = accumulator(grads, *b, dy.shape());
                    for ((d, &u), &x) in g.data_mut().iter_mut().zip(dy.data()).zip(va) {
                        *d += u * x;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    add_into(accumulator(grads, *x, dy.shape()), dy.data());
                }
                if self.wants(*bias) {
                    let n = dy.cols();
                    let g = accumulator(grads, *bias, self.value(*bias).shape());
                    for row in dy.data().chunks_exact(n) {
                        add_into_slice(g.data_mut(), row);
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    let g = accumulator(grads, *a, dy.shape());
                    for (d, &u) in g.data_mut().iter_mut().zip(dy.data()) {
                        *d += c * u;
                    }
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let g = accumulator(grads, *a, dy.shape());
                    for ((d, &u), &xi) in g.data_mut().iter_mut().zip(dy.data()).zip(x) {
                        *d += u * gelu_derivative(xi);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let n = out.cols();
                    let g = accumulator(grads, *a, out.shape());
                    for ((grow, yrow), urow) in g
                        .data_mut()
                        .chunks_exact_mut(n)
                        .zip(out.data().chunks_exact(n))
                        .zip(dy.data().chunks_exact(n))
                    {
                        let dot: f64 = yrow.iter().zip(urow).map(|(y, u)| y * u).sum();
                        for ((d, &y), &u) in grow.iter_mut().zip(yrow).zip(urow) {
                            *d += y * (u - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let gm = self.value(*gamma).data();
                if self.wants(*x) {
                    let g = accumulator(grads, *x, out.shape());
                    let mut dxhat = vec![0.0; d];
                    for (i, grow) in g.data_mut().chunks_exact_mut(d).enumerate() {
                        let urow = &dy.data()[i * d..(i + 1) * d];
                        let hrow = &xhat[i * d..(i + 1) * d];
                        for j in 0..d {
                            dxhat[j] = urow[j] * gm[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let k = inv_std[i] / d as f64;
                        for j in 0..d {
                            grow[j] += k * (d as f64 * dxhat[j] - s1 - hrow[j] * s2);
                        }
                    }
                }
                if self.wants(*gamma) {
                    let g = accumulator(grads, *gamma, self.value(*gamma).shape());
                    for (urow, hrow) in dy.data().chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((gj, &u), &h) in g.data_mut().iter_mut().zip(urow).zip(hrow) {
                            *gj += u * h;
                        }
                    }
                }
                if self.wants(*beta) {
                    let g = accumulator(grads, *beta, self.value(*beta).shape());
                    for urow in dy.data().chunks_exact(d) {
                        add_into_slice(g.data_mut(), urow);
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                if self.wants(*a) {
                    let n = dy.cols();
                    let g = accumulator(grads, *a, self.value(*a).shape());
                    for (k, &r) in rows.iter().enumerate() {
                        add_into_slice(&mut g.data_mut()[r * n..(r + 1) * n], &dy.data()[k * n..(k + 1) * n]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        let g = accumulator(grads, p, self.value(p).shape());
                        add_into_slice(g.data_mut(), &dy.data()[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.wants(*a) {
                    let n = self.value(*a).cols();
                    let w = end - start;
                    let g = accumulator(grads, *a, self.value(*a).shape());
                    for (i, urow) in dy.data().chunks_exact(w.max(1)).enumerate().take(dy.rows()) {
                        add_into_slice(&mut g.data_mut()[i * n + start..i * n + end], &urow[..w]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let g = accumulator(grads, p, self.value(p).shape());
                        for (i, grow) in g.data_mut().chunks_exact_mut(w.max(1)).enumerate() {
                            add_into_slice(grow, &dy.data()[i * n + offset..i * n + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanRows(a) => {
                if self.wants(*a) {
                    let (m, n) = self.value(*a).dims2("mean_rows")?;
                    let g = accumulator(grads, *a, self.value(*a).shape());
                    let inv = 1.0 / m as f64;
                    for grow in g.data_mut().chunks_exact_mut(n) {
                        for (d, &u) in grow.iter_mut().zip(dy.data()) {
                            *d += u * inv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let u = dy.data()[0];
                    let g = accumulator(grads, *a, self.value(*a).shape());
                    g.data_mut().iter_mut().for_each(|d| *d += u);
                }
            }
            Op::MaskedMse { pred, residual, count } => {
                if self.wants(*pred) {
                    let k = 2.0 * dy.data()[0] / count;
                    let g = accumulator(grads, *pred, self.value(*pred).shape());
                    for (d, &r) in g.data_mut().iter_mut().zip(residual) {
                        *d += k * r;
                    }
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if self.wants(*logits) {
                    let u = dy.data()[0];
                    let g = accumulator(grads, *logits, self.value(*logits).shape());
                    for (j, (d, &p)) in g.data_mut().iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        *d += u * (p - onehot);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulator<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_into(g: &mut Tensor, src: &[f64]) {
    add_into_slice(g.data_mut(), src);
}

fn add_into_slice(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

pub fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3)).unwrap();
        let x = t(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]);
        let xv = g.constant(x.clone()).unwrap();
        let y = g.matmul(i, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn small_matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let b = g.constant(t(&[vec![0.0], vec![1.0]])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, AutogradError::Shape { .. }));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g
            .constant(t(&[vec![0.0, 0.0, 0.0, 0.0], vec![1000.0, 0.0, 0.0, 0.0]]))
            .unwrap();
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y);
        for j in 0..4 {
            assert!((v.get2(0, j) - 0.25).abs() < 1e-15);
        }
        assert!((v.get2(1, 0) - 1.0).abs() < 1e-12);
        assert!(v.get2(1, 1).abs() < 1e-12);
    }

    #[test]
    fn softmax_three_way_analytic() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![1f64.ln(), 2f64.ln(), 3f64.ln()]])).unwrap();
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((v[2] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![3.0, 3.0, 3.0], vec![1.0, -1.0, 0.0]])).unwrap();
        let gamma = g.constant(Tensor::ones(&[3])).unwrap();
        let beta = g.constant(Tensor::zeros(&[3])).unwrap();
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).row(0).iter().all(|&v| v == 0.0));

        let x2 = g.constant(t(&[vec![1.0, -1.0]])).unwrap();
        let g2 = g.constant(Tensor::ones(&[2])).unwrap();
        let b2 = g.constant(Tensor::zeros(&[2])).unwrap();
        let y2 = g.layer_norm(x2, g2, b2, 1e-14).unwrap();
        for (a, b) in g.value(y2).data().iter().zip([1.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rejects_single_feature_and_bad_eps() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 1])).unwrap();
        let gamma = g.constant(Tensor::ones(&[1])).unwrap();
        let beta = g.constant(Tensor::zeros(&[1])).unwrap();
        assert!(g.layer_norm(x, gamma, beta, 1e-5).is_err());

        let x = g.constant(Tensor::zeros(&[2, 2])).unwrap();
        let gamma = g.constant(Tensor::ones(&[2])).unwrap();
        let beta = g.constant(Tensor::zeros(&[2])).unwrap();
        assert!(g.layer_norm(x, gamma, beta, 0.0).is_err());
    }

    #[test]
    fn gelu_points() {
        assert_eq!(gelu_value(0.0), 0.0);
        assert!((gelu_value(10.0) - 10.0).abs() < 1e-4);
        assert!(gelu_value(-10.0).abs() < 1e-4);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        let unused = g.param(Tensor::new(&[2, 2], vec![5.0; 4]).unwrap()).unwrap();
        let loss = g.sum(x).unwrap();
        let grads = g.backward(loss).unwrap();
        let gu = grads.get(unused).expect("present");
        assert_eq!(gu.shape(), &[2, 2]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2])).unwrap();
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(AutogradError::Contract(_))));
    }

    #[test]
    fn graph_is_reusable_after_backward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[2], vec![1.0, -2.0]).unwrap()).unwrap();
        let y = g.mul(x, x).unwrap();
        let loss = g.sum(y).unwrap();
        let first = g.backward(loss).unwrap();
        let second = g.backward(loss).unwrap();
        assert_eq!(first.get(x), second.get(x));
        assert_eq!(g.inputs(y), vec![x, x]);
        assert_eq!(g.op_name(loss), "sum");
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1], vec![1e300]).unwrap()).unwrap();
        let err = g.scale(x, 1e300).unwrap_err();
        assert!(matches!(err, AutogradError::NonFinite { op: "scale", .. }));
        assert!(g.constant(Tensor::new(&[1], vec![f64::NAN]).unwrap()).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let z = g.param(Tensor::zeros(&[1, 3])).unwrap();
        let loss = g.cross_entropy(z, 1).unwrap();
        assert!((g.value(loss).data()[0] - 3f64.ln()).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        let d = grads.get(z).unwrap().data();
        assert!((d[1] + 2.0 / 3.0).abs() < 1e-12);
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}

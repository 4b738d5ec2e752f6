use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, c: f64 },
    AddBias { a: usize, b: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    Tanh { a: usize },
    Swish { a: usize },
    Sqrt { a: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    SumAxis { a: usize, axis: usize },
    MeanAxis { a: usize, axis: usize },
    MaxAxis { a: usize, axis: usize, argmax: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    GatherRows { a: usize, idx: Vec<usize> },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    Select { a: usize, row: usize, col: usize },
    StackScalars { parts: Vec<usize> },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        frozen: bool,
    },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Div { .. } => "div",
        Op::AddScalar { .. } => "add_scalar",
        Op::MulScalar { .. } => "mul_scalar",
        Op::AddBias { .. } => "add_bias",
        Op::MatMul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Relu { .. } => "relu",
        Op::Tanh { .. } => "tanh",
        Op::Swish { .. } => "swish",
        Op::Sqrt { .. } => "sqrt",
        Op::SumAll { .. } => "sum_all",
        Op::MeanAll { .. } => "mean_all",
        Op::SumAxis { .. } => "sum_axis",
        Op::MeanAxis { .. } => "mean_axis",
        Op::MaxAxis { .. } => "max_axis",
        Op::ConcatRows { .. } => "concat_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::GatherRows { .. } => "gather_rows",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::Select { .. } => "select",
        Op::StackScalars { .. } => "stack_scalars",
        Op::BatchNorm { .. } => "batch_norm",
    }
}

struct Node {
    tensor: Tensor,
    op: Op,
    label: Option<String>,
    needs_grad: bool,
}

/// Execution record for one differentiable computation.
///
/// Operations append nodes in execution order, which is a topological order
/// by construction: an operation can only reference ids that already exist.
/// `backward` replays the record in reverse and populates `grad` on exactly
/// the leaves marked `requires_grad`. Calling `backward` again on the same
/// tape resets and recomputes, so repeated calls produce identical grads.
///
/// A tape and its tensors belong to one thread; run independent tapes for
/// concurrent work.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid_f(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn finite_or_err(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().find(|v| !v.is_finite()) {
        Some(&bad) => Err(Error::NonFinite { op, value: bad }),
        None => Ok(()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients are produced for it iff
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let needs = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs, None)
    }

    pub fn leaf_labeled(&mut self, tensor: Tensor, label: impl Into<String>) -> TensorId {
        let needs = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs, Some(label.into()))
    }

    /// No-grad scalar constant, shape `[1, 1]`.
    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        Ok(self.leaf(Tensor::scalar(v)?))
    }

    /// No-grad zero matrix.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.leaf(Tensor::zeros(vec![rows, cols]))
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].tensor.numel(), 1);
        self.nodes[id.0].tensor.data()[0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    /// Gradient of a tensor after `backward`; `None` when not populated.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// First tensor holding a non-finite value, with its label or op name.
    pub fn first_non_finite(&self) -> Option<(TensorId, String)> {
        self.nodes.iter().enumerate().find_map(|(i, node)| {
            node.tensor
                .first_non_finite()
                .map(|_| (TensorId(i), node.label.clone().unwrap_or_else(|| op_name(&node.op).to_string())))
        })
    }

    fn check(&self, id: TensorId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::UnknownTensor {
                id: id.0,
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool, label: Option<String>) -> TensorId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            tensor,
            op,
            label,
            needs_grad,
        });
        TensorId(id)
    }

    fn push_op(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        node_op: Op,
        inputs: &[TensorId],
    ) -> Result<TensorId> {
        finite_or_err(op, &data)?;
        let needs = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let tensor = Tensor::raw(shape, data);
        Ok(self.push(tensor, node_op, needs, None))
    }

    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.nodes[id.0].tensor.shape();
        if shape.len() != 2 {
            return Err(Error::BadShape {
                op,
                expected: "a 2-D tensor",
                got: shape.to_vec(),
            });
        }
        Ok((shape[0], shape[1]))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let sa = self.nodes[a.0].tensor.shape();
        let sb = self.nodes[b.0].tensor.shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ── Elementwise binary ops ──────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op("add", shape, data, Op::Add { a: a.0, b: b.0 }, &[a, b])
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op("sub", shape, data, Op::Sub { a: a.0, b: b.0 }, &[a, b])
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op("mul", shape, data, Op::Mul { a: a.0, b: b.0 }, &[a, b])
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("div", a, b)?;
        if self.values(b).contains(&0.0) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        let data: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op("div", shape, data, Op::Div { a: a.0, b: b.0 }, &[a, b])
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("add_scalar", shape, data, Op::AddScalar { a: a.0 }, &[a])
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("mul_scalar", shape, data, Op::MulScalar { a: a.0, c }, &[a])
    }

    /// Row-broadcast bias addition: `a[m×n] + b[n]`, the only broadcast form
    /// this tape supports.
    pub fn add_bias(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        let (m, n) = self.dims2(a, "add_bias")?;
        let bshape = self.shape(b);
        if *bshape != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vec![m, n],
                rhs: bshape.to_vec(),
            });
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for j in 0..n {
                data.push(av[r * n + j] + bv[j]);
            }
        }
        self.push_op("add_bias", vec![m, n], data, Op::AddBias { a: a.0, b: b.0 }, &[a, b])
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_raw(self.values(a), self.values(b), m, k, n);
        self.push_op(
            "matmul",
            vec![m, n],
            data,
            Op::MatMul { a: a.0, b: b.0, m, k, n },
            &[a, b],
        )
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "transpose")?;
        let data = transpose_raw(self.values(a), m, n);
        self.push_op("transpose", vec![n, m], data, Op::Transpose { a: a.0 }, &[a])
    }

    // ── Activations ─────────────────────────────────────────────────

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|&x| sigmoid_f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("sigmoid", shape, data, Op::Sigmoid { a: a.0 }, &[a])
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("relu", shape, data, Op::Relu { a: a.0 }, &[a])
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("tanh", shape, data, Op::Tanh { a: a.0 }, &[a])
    }

    /// `swish(x) = x · sigmoid(x)`
    pub fn swish(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let data: Vec<f64> = self.values(a).iter().map(|&x| x * sigmoid_f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("swish", shape, data, Op::Swish { a: a.0 }, &[a])
    }

    /// Elementwise square root; negative inputs are rejected.
    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        if let Some(&bad) = self.values(a).iter().find(|&&x| x < 0.0) {
            return Err(Error::NegativeSqrt { value: bad });
        }
        let data: Vec<f64> = self.values(a).iter().map(|&x| x.sqrt()).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("sqrt", shape, data, Op::Sqrt { a: a.0 }, &[a])
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        if self.tensor(a).numel() == 0 {
            return Err(Error::EmptyReduction { op: "sum_all", what: "tensor" });
        }
        let s: f64 = self.values(a).iter().sum();
        self.push_op("sum_all", vec![1, 1], vec![s], Op::SumAll { a: a.0 }, &[a])
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        self.check(a)?;
        let n = self.tensor(a).numel();
        if n == 0 {
            return Err(Error::EmptyReduction { op: "mean_all", what: "tensor" });
        }
        let s: f64 = self.values(a).iter().sum();
        self.push_op(
            "mean_all",
            vec![1, 1],
            vec![s / n as f64],
            Op::MeanAll { a: a.0 },
            &[a],
        )
    }

    fn axis_reduce_shapes(
        &self,
        op: &'static str,
        a: TensorId,
        axis: usize,
    ) -> Result<(usize, usize)> {
        let (m, n) = self.dims2(a, op)?;
        if axis > 1 {
            return Err(Error::IndexOutOfRange {
                op,
                what: "axis",
                index: axis,
                size: 2,
            });
        }
        let reduced = if axis == 0 { m } else { n };
        if reduced == 0 {
            return Err(Error::EmptyReduction { op, what: "axis" });
        }
        Ok((m, n))
    }

    /// Sum over one axis of a 2-D tensor, keeping the reduced dim as 1.
    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.axis_reduce_shapes("sum_axis", a, axis)?;
        let av = self.values(a);
        let (shape, data) = if axis == 0 {
            let mut out = vec![0.0; n];
            for r in 0..m {
                for j in 0..n {
                    out[j] += av[r * n + j];
                }
            }
            (vec![1, n], out)
        } else {
            let mut out = vec![0.0; m];
            for r in 0..m {
                out[r] = av[r * n..(r + 1) * n].iter().sum();
            }
            (vec![m, 1], out)
        };
        self.push_op("sum_axis", shape, data, Op::SumAxis { a: a.0, axis }, &[a])
    }

    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.axis_reduce_shapes("mean_axis", a, axis)?;
        let av = self.values(a);
        let (shape, data) = if axis == 0 {
            let mut out = vec![0.0; n];
            for r in 0..m {
                for j in 0..n {
                    out[j] += av[r * n + j];
                }
            }
            for v in &mut out {
                *v /= m as f64;
            }
            (vec![1, n], out)
        } else {
            let mut out = vec![0.0; m];
            for r in 0..m {
                out[r] = av[r * n..(r + 1) * n].iter().sum::<f64>() / n as f64;
            }
            (vec![m, 1], out)
        };
        self.push_op("mean_axis", shape, data, Op::MeanAxis { a: a.0, axis }, &[a])
    }

    /// Max over one axis, keeping the reduced dim as 1. Also returns the
    /// argmax indices; ties break to the lowest index, and the gradient is
    /// routed to the argmax element only.
    pub fn max_axis(&mut self, a: TensorId, axis: usize) -> Result<(TensorId, Vec<usize>)> {
        self.check(a)?;
        let (m, n) = self.axis_reduce_shapes("max_axis", a, axis)?;
        let av = self.values(a);
        let (shape, data, argmax) = if axis == 0 {
            let mut out = vec![f64::NEG_INFINITY; n];
            let mut arg = vec![0usize; n];
            for r in 0..m {
                for j in 0..n {
                    let v = av[r * n + j];
                    if v > out[j] {
                        out[j] = v;
                        arg[j] = r;
                    }
                }
            }
            (vec![1, n], out, arg)
        } else {
            let mut out = vec![0.0; m];
            let mut arg = vec![0usize; m];
            for r in 0..m {
                let row = &av[r * n..(r + 1) * n];
                let (mut best, mut bi) = (row[0], 0usize);
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        bi = j;
                    }
                }
                out[r] = best;
                arg[r] = bi;
            }
            (vec![m, 1], out, arg)
        };
        let id = self.push_op(
            "max_axis",
            shape,
            data,
            Op::MaxAxis { a: a.0, axis, argmax: argmax.clone() },
            &[a],
        )?;
        Ok((id, argmax))
    }

    // ── Structural ops ──────────────────────────────────────────────

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::EmptyReduction { op: "concat_rows", what: "part list" });
        }
        for &p in parts {
            self.check(p)?;
        }
        let (_, n) = self.dims2(parts[0], "concat_rows")?;
        let mut total_m = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: vec![pm, pn],
                });
            }
            total_m += pm;
        }
        let mut data = Vec::with_capacity(total_m * n);
        for &p in parts {
            data.extend_from_slice(self.values(p));
        }
        let op = Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() };
        self.push_op("concat_rows", vec![total_m, n], data, op, parts)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::EmptyReduction { op: "concat_cols", what: "part list" });
        }
        for &p in parts {
            self.check(p)?;
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_n = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: vec![pm, pn],
                });
            }
            widths.push(pn);
            total_n += pn;
        }
        let mut data = Vec::with_capacity(m * total_n);
        for r in 0..m {
            for (i, &p) in parts.iter().enumerate() {
                let pn = widths[i];
                let pv = self.values(p);
                data.extend_from_slice(&pv[r * pn..(r + 1) * pn]);
            }
        }
        let op = Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() };
        self.push_op("concat_cols", vec![m, total_n], data, op, parts)
    }

    /// Select rows by index (repeats allowed); gradients scatter-add back.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "gather_rows")?;
        for &i in idx {
            if i >= m {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    what: "row",
                    index: i,
                    size: m,
                });
            }
        }
        let av = self.values(a);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&av[i * n..(i + 1) * n]);
        }
        let op = Op::GatherRows { a: a.0, idx: idx.to_vec() };
        self.push_op("gather_rows", vec![idx.len(), n], data, op, &[a])
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "slice_rows")?;
        if start > end || end > m {
            return Err(Error::IndexOutOfRange {
                op: "slice_rows",
                what: "row range end",
                index: end,
                size: m,
            });
        }
        let data = self.values(a)[start * n..end * n].to_vec();
        let op = Op::SliceRows { a: a.0, start };
        self.push_op("slice_rows", vec![end - start, n], data, op, &[a])
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "slice_cols")?;
        if start > end || end > n {
            return Err(Error::IndexOutOfRange {
                op: "slice_cols",
                what: "column range end",
                index: end,
                size: n,
            });
        }
        let av = self.values(a);
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&av[r * n + start..r * n + end]);
        }
        let op = Op::SliceCols { a: a.0, start };
        self.push_op("slice_cols", vec![m, w], data, op, &[a])
    }

    /// Extract one element of a 2-D tensor as a `[1, 1]` scalar.
    pub fn select(&mut self, a: TensorId, row: usize, col: usize) -> Result<TensorId> {
        self.check(a)?;
        let (m, n) = self.dims2(a, "select")?;
        if row >= m {
            return Err(Error::IndexOutOfRange { op: "select", what: "row", index: row, size: m });
        }
        if col >= n {
            return Err(Error::IndexOutOfRange { op: "select", what: "column", index: col, size: n });
        }
        let v = self.values(a)[row * n + col];
        let op = Op::Select { a: a.0, row, col };
        self.push_op("select", vec![1, 1], vec![v], op, &[a])
    }

    /// Pack one-element tensors into a `rows × cols` matrix (row-major).
    pub fn stack_scalars(&mut self, parts: &[TensorId], rows: usize, cols: usize) -> Result<TensorId> {
        if parts.len() != rows * cols {
            return Err(Error::LengthMismatch {
                shape: vec![rows, cols],
                len: parts.len(),
            });
        }
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            self.check(p)?;
            let t = self.tensor(p);
            if t.numel() != 1 {
                return Err(Error::BadShape {
                    op: "stack_scalars",
                    expected: "one-element tensors",
                    got: t.shape().to_vec(),
                });
            }
            data.push(t.data()[0]);
        }
        let op = Op::StackScalars { parts: parts.iter().map(|p| p.0).collect() };
        self.push_op("stack_scalars", vec![rows, cols], data, op, parts)
    }

    // ── Batch normalization ─────────────────────────────────────────

    /// Feature-wise batch norm over the rows of `x[N×d]` using batch
    /// statistics (biased variance). Returns the output id plus the batch
    /// mean and variance so the caller can maintain running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<(TensorId, Vec<f64>, Vec<f64>)> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (m, n) = self.dims2(x, "batch_norm")?;
        if m == 0 {
            return Err(Error::EmptyReduction { op: "batch_norm", what: "batch" });
        }
        self.bn_param_check(gamma, beta, n)?;
        let xv = self.values(x);
        let mut mean = vec![0.0; n];
        for r in 0..m {
            for j in 0..n {
                mean[j] += xv[r * n + j];
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0; n];
        for r in 0..m {
            for j in 0..n {
                let d = xv[r * n + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= m as f64;
        }
        let id = self.bn_forward(x, gamma, beta, mean.clone(), var.clone(), eps, false)?;
        Ok((id, mean, var))
    }

    /// Batch norm with frozen (running) statistics: a per-feature affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<TensorId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (_, n) = self.dims2(x, "batch_norm")?;
        self.bn_param_check(gamma, beta, n)?;
        if mean.len() != n || var.len() != n {
            return Err(Error::LengthMismatch { shape: vec![n], len: mean.len().min(var.len()) });
        }
        self.bn_forward(x, gamma, beta, mean.to_vec(), var.to_vec(), eps, true)
    }

    fn bn_param_check(&self, gamma: TensorId, beta: TensorId, n: usize) -> Result<()> {
        for id in [gamma, beta] {
            let s = self.shape(id);
            if *s != [n] {
                return Err(Error::BadShape {
                    op: "batch_norm",
                    expected: "gamma/beta of shape [n]",
                    got: s.to_vec(),
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_forward(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        frozen: bool,
    ) -> Result<TensorId> {
        let (m, n) = self.dims2(x, "batch_norm")?;
        let xv = self.values(x);
        let gv = self.values(gamma);
        let bv = self.values(beta);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for j in 0..n {
                let xh = (xv[r * n + j] - mean[j]) * inv_std[j];
                data.push(gv[j] * xh + bv[j]);
            }
        }
        let op = Op::BatchNorm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            mean,
            var,
            eps,
            frozen,
        };
        self.push_op("batch_norm", vec![m, n], data, op, &[x, gamma, beta])
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep from a one-element output. Resets any previous
    /// grads first, so repeated calls yield identical results.
    pub fn backward(&mut self, output: TensorId) -> Result<()> {
        self.check(output)?;
        {
            let t = &self.nodes[output.0].tensor;
            if t.numel() != 1 {
                return Err(Error::NonScalarOutput {
                    got: t.shape().to_vec(),
                    numel: t.numel(),
                });
            }
        }
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize(self.nodes.len(), None);
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].tensor.requires_grad {
                self.nodes[i].tensor.grad = Some(g.clone());
            }
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g, &mut grads);
        }
        // Tensors the output does not depend on still get a (zero) gradient.
        for node in &mut self.nodes {
            if node.tensor.requires_grad && node.tensor.grad.is_none() {
                node.tensor.grad = Some(vec![0.0; node.tensor.numel()]);
            }
        }
        Ok(())
    }

    fn numel_of(&self, idx: usize) -> usize {
        self.nodes[idx].tensor.numel()
    }

    fn acc<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        idx: usize,
    ) -> &'a mut Vec<f64> {
        let len = self.numel_of(idx);
        grads[idx].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, i: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                let da = self.acc(grads, *a);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = self.acc(grads, *b);
                for (d, gv) in db.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Sub { a, b } => {
                let da = self.acc(grads, *a);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = self.acc(grads, *b);
                for (d, gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].tensor.data().to_vec();
                let bv = self.nodes[*b].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), y) in da.iter_mut().zip(g).zip(&bv) {
                    *d += gv * y;
                }
                let db = self.acc(grads, *b);
                for ((d, gv), x) in db.iter_mut().zip(g).zip(&av) {
                    *d += gv * x;
                }
            }
            Op::Div { a, b } => {
                let av = self.nodes[*a].tensor.data().to_vec();
                let bv = self.nodes[*b].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), y) in da.iter_mut().zip(g).zip(&bv) {
                    *d += gv / y;
                }
                let db = self.acc(grads, *b);
                for (k, (d, gv)) in db.iter_mut().zip(g).enumerate() {
                    *d -= gv * av[k] / (bv[k] * bv[k]);
                }
            }
            Op::AddScalar { a } => {
                let da = self.acc(grads, *a);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::MulScalar { a, c } => {
                let da = self.acc(grads, *a);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }
            Op::AddBias { a, b } => {
                let n = self.nodes[*b].tensor.numel();
                let m = self.numel_of(*a) / n;
                let da = self.acc(grads, *a);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = self.acc(grads, *b);
                for r in 0..m {
                    for j in 0..n {
                        db[j] += g[r * n + j];
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let av = self.nodes[*a].tensor.data();
                let bv = self.nodes[*b].tensor.data();
                let bt = transpose_raw(bv, *k, *n);
                let da_contrib = matmul_raw(g, &bt, *m, *n, *k);
                let at = transpose_raw(av, *m, *k);
                let db_contrib = matmul_raw(&at, g, *k, *m, *n);
                let da = self.acc(grads, *a);
                for (d, c) in da.iter_mut().zip(&da_contrib) {
                    *d += c;
                }
                let db = self.acc(grads, *b);
                for (d, c) in db.iter_mut().zip(&db_contrib) {
                    *d += c;
                }
            }
            Op::Transpose { a } => {
                let shape = self.nodes[i].tensor.shape();
                let (gm, gn) = (shape[0], shape[1]);
                let gt = transpose_raw(g, gm, gn);
                let da = self.acc(grads, *a);
                for (d, c) in da.iter_mut().zip(&gt) {
                    *d += c;
                }
            }
            Op::Sigmoid { a } => {
                let yv = self.nodes[i].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), y) in da.iter_mut().zip(g).zip(&yv) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Relu { a } => {
                let xv = self.nodes[*a].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), x) in da.iter_mut().zip(g).zip(&xv) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh { a } => {
                let yv = self.nodes[i].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), y) in da.iter_mut().zip(g).zip(&yv) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Swish { a } => {
                let xv = self.nodes[*a].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), x) in da.iter_mut().zip(g).zip(&xv) {
                    let s = sigmoid_f(*x);
                    *d += gv * (s + x * s * (1.0 - s));
                }
            }
            Op::Sqrt { a } => {
                let yv = self.nodes[i].tensor.data().to_vec();
                let da = self.acc(grads, *a);
                for ((d, gv), y) in da.iter_mut().zip(g).zip(&yv) {
                    *d += gv * 0.5 / y;
                }
            }
            Op::SumAll { a } => {
                let gv = g[0];
                let da = self.acc(grads, *a);
                for d in da.iter_mut() {
                    *d += gv;
                }
            }
            Op::MeanAll { a } => {
                let n = self.numel_of(*a) as f64;
                let gv = g[0] / n;
                let da = self.acc(grads, *a);
                for d in da.iter_mut() {
                    *d += gv;
                }
            }
            Op::SumAxis { a, axis } => {
                let shape = self.nodes[*a].tensor.shape();
                let (m, n) = (shape[0], shape[1]);
                let da = self.acc(grads, *a);
                if *axis == 0 {
                    for r in 0..m {
                        for j in 0..n {
                            da[r * n + j] += g[j];
                        }
                    }
                } else {
                    for r in 0..m {
                        for j in 0..n {
                            da[r * n + j] += g[r];
                        }
                    }
                }
            }
            Op::MeanAxis { a, axis } => {
                let shape = self.nodes[*a].tensor.shape();
                let (m, n) = (shape[0], shape[1]);
                let scale = if *axis == 0 { m as f64 } else { n as f64 };
                let da = self.acc(grads, *a);
                if *axis == 0 {
                    for r in 0..m {
                        for j in 0..n {
                            da[r * n + j] += g[j] / scale;
                        }
                    }
                } else {
                    for r in 0..m {
                        for j in 0..n {
                            da[r * n + j] += g[r] / scale;
                        }
                    }
                }
            }
            Op::MaxAxis { a, axis, argmax } => {
                let shape = self.nodes[*a].tensor.shape();
                let n = shape[1];
                let da = self.acc(grads, *a);
                if *axis == 0 {
                    for (j, &r) in argmax.iter().enumerate() {
                        da[r * n + j] += g[j];
                    }
                } else {
                    for (r, &j) in argmax.iter().enumerate() {
                        da[r * n + j] += g[r];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.numel_of(p);
                    let dp = self.acc(grads, p);
                    for (d, gv) in dp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += gv;
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let total_n: usize = parts
                    .iter()
                    .map(|&p| self.nodes[p].tensor.shape()[1])
                    .sum();
                let mut col_off = 0;
                for &p in parts {
                    let ps = self.nodes[p].tensor.shape();
                    let (pm, pn) = (ps[0], ps[1]);
                    let dp = self.acc(grads, p);
                    for r in 0..pm {
                        for j in 0..pn {
                            dp[r * pn + j] += g[r * total_n + col_off + j];
                        }
                    }
                    col_off += pn;
                }
            }
            Op::GatherRows { a, idx } => {
                let n = self.nodes[*a].tensor.shape()[1];
                let da = self.acc(grads, *a);
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..n {
                        da[src * n + j] += g[r * n + j];
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let n = self.nodes[*a].tensor.shape()[1];
                let da = self.acc(grads, *a);
                for (k, gv) in g.iter().enumerate() {
                    da[start * n + k] += gv;
                }
            }
            Op::SliceCols { a, start } => {
                let shape_out = self.nodes[i].tensor.shape();
                let (m, w) = (shape_out[0], shape_out[1]);
                let n = self.nodes[*a].tensor.shape()[1];
                let da = self.acc(grads, *a);
                for r in 0..m {
                    for j in 0..w {
                        da[r * n + start + j] += g[r * w + j];
                    }
                }
            }
            Op::Select { a, row, col } => {
                let n = self.nodes[*a].tensor.shape()[1];
                let da = self.acc(grads, *a);
                da[row * n + col] += g[0];
            }
            Op::StackScalars { parts } => {
                for (k, &p) in parts.iter().enumerate() {
                    let dp = self.acc(grads, p);
                    dp[0] += g[k];
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, var, eps, frozen } => {
                let shape = self.nodes[*x].tensor.shape();
                let (m, n) = (shape[0], shape[1]);
                let xv = self.nodes[*x].tensor.data();
                let gv_param = self.nodes[*gamma].tensor.data();
                let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

                // x̂ and the per-column sums the train-mode formula needs.
                let mut sum_dxhat = vec![0.0; n];
                let mut sum_dxhat_xhat = vec![0.0; n];
                let mut xhat = vec![0.0; m * n];
                for r in 0..m {
                    for j in 0..n {
                        let xh = (xv[r * n + j] - mean[j]) * inv_std[j];
                        xhat[r * n + j] = xh;
                        let dxh = g[r * n + j] * gv_param[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xh;
                    }
                }

                {
                    let dgamma = self.acc(grads, *gamma);
                    for r in 0..m {
                        for j in 0..n {
                            dgamma[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                {
                    let dbeta = self.acc(grads, *beta);
                    for r in 0..m {
                        for j in 0..n {
                            dbeta[j] += g[r * n + j];
                        }
                    }
                }
                let dx = self.acc(grads, *x);
                if *frozen {
                    for r in 0..m {
                        for j in 0..n {
                            dx[r * n + j] += g[r * n + j] * gv_param[j] * inv_std[j];
                        }
                    }
                } else {
                    let mf = m as f64;
                    for r in 0..m {
                        for j in 0..n {
                            let dxh = g[r * n + j] * gv_param[j];
                            dx[r * n + j] += inv_std[j] / mf
                                * (mf * dxh - sum_dxhat[j] - xhat[r * n + j] * sum_dxhat_xhat[j]);
                        }
                    }
                }
            }
        }
    }
}

//! Reverse-mode differentiation over a linear operation record.
//!
//! Every op appends one node holding its output value and whatever the
//! backward rule needs. `backward` walks the nodes in exact reverse order and
//! accumulates parameter gradients into a [`Gradients`] set keyed by
//! [`ParamId`].

use std::collections::HashMap;
use std::fmt;

use super::kernels::{self, gelu_grad_scalar, gelu_scalar};
use super::{Gradients, NumericsError, ParamId, ParamStore, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Discriminant of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Param,
    Constant,
    MatMul,
    MatMulNt,
    Add,
    AddRow,
    Scale,
    MulConst,
    Gelu,
    LayerNorm,
    Softmax,
    Gather,
    SegmentMean,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    Select,
    CrossEntropy,
    BinaryCrossEntropy,
    Sum,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Deliberate corruption of the backward pass, used to prove that the
/// gradient checker catches broken rules.
#[derive(Debug, Clone, PartialEq)]
pub enum BackwardFault {
    /// Negate the gradient delivered to the named parameter.
    FlipSign { param: String },
    /// Multiply every input gradient emitted by one op kind.
    ScaleRule { op: OpKind, factor: f64 },
}

enum Op<T> {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: T },
    MulConst { x: Var, mask: Tensor<T> },
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    Softmax(Var),
    Gather { table: Var, rows: Vec<usize> },
    SegmentMean { table: Var, segments: Vec<Vec<usize>> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Select { inputs: Vec<Var>, choice: Vec<u8> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor<T> },
    BinaryCrossEntropy { logits: Var, targets: Vec<T> },
    Sum(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Param(_) => OpKind::Param,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Add(..) => OpKind::Add,
            Op::AddRow { .. } => OpKind::AddRow,
            Op::Scale { .. } => OpKind::Scale,
            Op::MulConst { .. } => OpKind::MulConst,
            Op::Gelu(_) => OpKind::Gelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Gather { .. } => OpKind::Gather,
            Op::SegmentMean { .. } => OpKind::SegmentMean,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::Select { .. } => OpKind::Select,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::BinaryCrossEntropy { .. } => OpKind::BinaryCrossEntropy,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

struct Node<T> {
    // None for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation record for one forward evaluation against a parameter store.
pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    fault: Option<BackwardFault>,
    check_finite: bool,
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> NumericsError {
    NumericsError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn invalid(op: &'static str, detail: String) -> NumericsError {
    NumericsError::InvalidArgument { op, detail }
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: HashMap::new(), fault: None, check_finite: false }
    }

    pub fn with_fault(mut self, fault: Option<BackwardFault>) -> Self {
        self.fault = fault;
        self
    }

    /// Turns on NaN/Inf detection: every op output is checked.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Kinds of the recorded ops in forward order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, NumericsError> {
        if self.check_finite && !value.all_finite() {
            return Err(NumericsError::NonFinite { op: op_name(op.kind()) });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf for a stored parameter; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, NumericsError> {
        let id = self.store.require(name)?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`; weights stored as `[out, in]` go through this.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = kernels::matmul_nt(self.value(a), self.value(b))?;
        self.push(out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let mut out = ta.clone();
        out.add_assign(tb)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.len() != tx.cols() || tx.rank() == 0 {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (v, &b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *v = *v + b;
            }
        }
        self.push(out, Op::AddRow { x, bias }, &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, NumericsError> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    /// Elementwise product with a constant (dropout masks, loss weights).
    pub fn mul_const(&mut self, x: Var, mask: Tensor<T>) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        if tx.shape() != mask.shape() {
            return Err(shape_err("mul_const", tx, &mask));
        }
        let mut out = tx.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(mask.data()) {
            *v = *v * m;
        }
        self.push(out, Op::MulConst { x, mask }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.value(x).map(gelu_scalar);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let norm = kernels::normalize_rows(tx, eps);
        let mut out = norm.xhat.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * tg.data()[j] + tb.data()[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat: norm.xhat, inv_std: norm.inv_std }, &[x, gain, bias])
    }

    /// Row-wise softmax; columns with `keep[j] == false` get zero weight.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var, NumericsError> {
        let out = kernels::softmax_rows(self.value(x), keep)?;
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Embedding lookup: row `i` of the output is `table[rows[i]]`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(invalid("gather_rows", format!("table must be a matrix, got {:?}", t.shape())));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(invalid("gather_rows", format!("row {r} out of range for table with {n} rows")));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        self.push(out, Op::Gather { table, rows: rows.to_vec() }, &[table])
    }

    /// Row `j` of the output is the mean of `table[p]` over `p` in
    /// `segments[j]`, summed in ascending index order.
    pub fn segment_mean(&mut self, table: Var, segments: &[Vec<usize>]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(invalid("segment_mean", format!("table must be a matrix, got {:?}", t.shape())));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut sorted = Vec::with_capacity(segments.len());
        let mut data = vec![T::zero(); segments.len() * d];
        for (j, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(invalid("segment_mean", format!("segment {j} is empty")));
            }
            let mut seg = seg.clone();
            seg.sort_unstable();
            let out_row = &mut data[j * d..(j + 1) * d];
            for &p in &seg {
                if p >= n {
                    return Err(invalid("segment_mean", format!("index {p} out of range for {n} rows")));
                }
                for (o, &v) in out_row.iter_mut().zip(t.row(p)) {
                    *o = *o + v;
                }
            }
            let inv = T::one() / T::of(seg.len() as f64);
            out_row.iter_mut().for_each(|o| *o = *o * inv);
            sorted.push(seg);
        }
        let out = Tensor::new(vec![segments.len(), d], data)?;
        self.push(out, Op::SegmentMean { table, segments: sorted }, &[table])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| invalid("concat_rows", "no inputs".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| invalid("concat_cols", "no inputs".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.rank() != 2 || start + len > t.rows() {
            return Err(invalid("slice_rows", format!("rows {start}..{} of {:?}", start + len, t.shape())));
        }
        let c = t.cols();
        let out = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::SliceRows { x, start }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.rank() != 2 || start + len > t.cols() {
            return Err(invalid("slice_cols", format!("cols {start}..{} of {:?}", start + len, t.shape())));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![t.rows(), len], data)?;
        self.push(out, Op::SliceCols { x, start }, &[x])
    }

    /// Elementwise choice: output element `e` is `inputs[choice[e]]`'s element `e`.
    pub fn select(&mut self, inputs: &[Var], choice: Vec<u8>) -> Result<Var, NumericsError> {
        let first = inputs.first().ok_or_else(|| invalid("select", "no inputs".into()))?;
        let shape = self.value(*first).shape().to_vec();
        for &i in inputs {
            if self.value(i).shape() != shape.as_slice() {
                return Err(shape_err("select", self.value(*first), self.value(i)));
            }
        }
        if choice.len() != self.value(*first).len() {
            return Err(invalid("select", format!("{} choices for {} elements", choice.len(), self.value(*first).len())));
        }
        let mut data = Vec::with_capacity(choice.len());
        for (e, &c) in choice.iter().enumerate() {
            let src = inputs
                .get(c as usize)
                .ok_or_else(|| invalid("select", format!("choice {c} with {} inputs", inputs.len())))?;
            data.push(self.value(*src).data()[e]);
        }
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Select { inputs: inputs.to_vec(), choice }, inputs)
    }

    /// Sum over rows of `-log softmax(logits)[target]`; a scalar.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != targets.len() {
            return Err(invalid("cross_entropy", format!("{} targets for logits {:?}", targets.len(), t.shape())));
        }
        let v = t.cols();
        let probs = kernels::softmax_rows(t, None)?;
        let mut total = T::zero();
        for (r, &y) in targets.iter().enumerate() {
            if y >= v {
                return Err(invalid("cross_entropy", format!("target {y} out of range for {v} classes")));
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total = total + (lse - row[y]);
        }
        self.push(Tensor::scalar(total), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits])
    }

    /// Sum of elementwise binary cross-entropy with logits; a scalar.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &[T]) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(invalid("bce", format!("{} targets for {} logits", targets.len(), t.len())));
        }
        let mut total = T::zero();
        for (&x, &y) in t.data().iter().zip(targets) {
            // max(x, 0) - x*y + log(1 + exp(-|x|))
            total = total + x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        }
        self.push(
            Tensor::scalar(total),
            Op::BinaryCrossEntropy { logits, targets: targets.to_vec() },
            &[logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Backward pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let seed = self.value(loss);
        if seed.len() != 1 {
            return Err(invalid("backward", format!("loss must have one element, got {:?}", seed.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(seed.shape().to_vec(), T::one()));
        let mut out = Gradients::empty(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let kind = node.op.kind();
            let emit = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, mut d: Tensor<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                if let Some(BackwardFault::ScaleRule { op, factor }) = &self.fault {
                    if *op == kind {
                        d.scale_in_place(T::of(*factor));
                    }
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d).expect("gradient shapes follow forward shapes"),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Param(id) => {
                    let mut g = g;
                    if let Some(BackwardFault::FlipSign { param }) = &self.fault {
                        if self.store.name(*id) == param {
                            g.scale_in_place(-T::one());
                        }
                    }
                    out.put(*id, g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = kernels::matmul_nt(&g, self.value(*b))?;
                    let db = kernels::matmul_tn(self.value(*a), &g)?;
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = kernels::matmul(&g, self.value(*b))?;
                    let db = kernels::matmul_tn(&g, self.value(*a))?;
                    emit(&mut grads, *a, da);
                    emit(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    emit(&mut grads, *b, g.clone());
                    emit(&mut grads, *a, g);
                }
                Op::AddRow { x, bias } => {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for r in 0..g.rows() {
                        for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                            *acc = *acc + v;
                        }
                    }
                    let db = Tensor::new(self.value(*bias).shape().to_vec(), db)?;
                    emit(&mut grads, *bias, db);
                    emit(&mut grads, *x, g);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    emit(&mut grads, *x, g.map(|v| v * f));
                }
                Op::MulConst { x, mask } => {
                    let mut d = g;
                    for (v, &m) in d.data_mut().iter_mut().zip(mask.data()) {
                        *v = *v * m;
                    }
                    emit(&mut grads, *x, d);
                }
                Op::Gelu(x) => {
                    let mut d = g;
                    for (v, &xi) in d.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *v = *v * gelu_grad_scalar(xi);
                    }
                    emit(&mut grads, *x, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain).data();
                    let d = g.cols();
                    let dn = T::of(d as f64);
                    let mut dgain = vec![T::zero(); d];
                    let mut dbias = vec![T::zero(); d];
                    let mut dx = Tensor::zeros(g.shape().to_vec());
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..g.rows() {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..d {
                            dgain[j] = dgain[j] + gr[j] * xr[j];
                            dbias[j] = dbias[j] + gr[j];
                            dxhat[j] = gr[j] * gv[j];
                            sum_d = sum_d + dxhat[j];
                            sum_dx = sum_dx + dxhat[j] * xr[j];
                        }
                        let scale = inv_std[r] / dn;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = scale * (dn * dxhat[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                    emit(&mut grads, *gain, Tensor::new(self.value(*gain).shape().to_vec(), dgain)?);
                    emit(&mut grads, *bias, Tensor::new(self.value(*bias).shape().to_vec(), dbias)?);
                    emit(&mut grads, *x, dx);
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax keeps its output");
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = d.row_mut(r);
                        let dot = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = yv * (*dv - dot);
                        }
                    }
                    emit(&mut grads, *x, d);
                }
                Op::Gather { table, rows } => {
                    let mut d = Tensor::zeros(self.value(*table).shape().to_vec());
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, &v) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o = *o + v;
                        }
                    }
                    emit(&mut grads, *table, d);
                }
                Op::SegmentMean { table, segments } => {
                    let mut d = Tensor::zeros(self.value(*table).shape().to_vec());
                    for (j, seg) in segments.iter().enumerate() {
                        let inv = T::one() / T::of(seg.len() as f64);
                        for &p in seg {
                            for (o, &v) in d.row_mut(p).iter_mut().zip(g.row(j)) {
                                *o = *o + v * inv;
                            }
                        }
                    }
                    emit(&mut grads, *table, d);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let part = Tensor::new(vec![r, c], g.data()[offset * c..(offset + r) * c].to_vec())?;
                        offset += r;
                        emit(&mut grads, p, part);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(g.rows() * c);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        offset += c;
                        emit(&mut grads, p, Tensor::new(vec![g.rows(), c], data)?);
                    }
                }
                Op::SliceRows { x, start } => {
                    let src = self.value(*x);
                    let mut d = Tensor::zeros(src.shape().to_vec());
                    let c = src.cols();
                    d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    emit(&mut grads, *x, d);
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut d = Tensor::zeros(src.shape().to_vec());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                    }
                    emit(&mut grads, *x, d);
                }
                Op::Select { inputs, choice } => {
                    for (k, &inp) in inputs.iter().enumerate() {
                        let mut d = Tensor::zeros(g.shape().to_vec());
                        for (e, (&c, o)) in choice.iter().zip(d.data_mut()).enumerate() {
                            if c as usize == k {
                                *o = g.data()[e];
                            }
                        }
                        emit(&mut grads, inp, d);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = g.item();
                    let mut d = probs.clone();
                    for (r, &y) in targets.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[y] = row[y] - T::one();
                        row.iter_mut().for_each(|v| *v = *v * s);
                    }
                    emit(&mut grads, *logits, d);
                }
                Op::BinaryCrossEntropy { logits, targets } => {
                    let s = g.item();
                    let x = self.value(*logits);
                    let mut d = x.clone();
                    for (v, &y) in d.data_mut().iter_mut().zip(targets) {
                        let sig = T::one() / (T::one() + (-*v).exp());
                        *v = s * (sig - y);
                    }
                    emit(&mut grads, *logits, d);
                }
                Op::Sum(x) => {
                    let s = g.item();
                    emit(&mut grads, *x, Tensor::full(self.value(*x).shape().to_vec(), s));
                }
            }
        }
        Ok(out)
    }
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Param => "param",
        OpKind::Constant => "constant",
        OpKind::MatMul => "matmul",
        OpKind::MatMulNt => "matmul_nt",
        OpKind::Add => "add",
        OpKind::AddRow => "add_row",
        OpKind::Scale => "scale",
        OpKind::MulConst => "mul_const",
        OpKind::Gelu => "gelu",
        OpKind::LayerNorm => "layer_norm",
        OpKind::Softmax => "softmax",
        OpKind::Gather => "gather_rows",
        OpKind::SegmentMean => "segment_mean",
        OpKind::ConcatRows => "concat_rows",
        OpKind::ConcatCols => "concat_cols",
        OpKind::SliceRows => "slice_rows",
        OpKind::SliceCols => "slice_cols",
        OpKind::Select => "select",
        OpKind::CrossEntropy => "cross_entropy",
        OpKind::BinaryCrossEntropy => "bce_with_logits",
        OpKind::Sum => "sum",
    }
}

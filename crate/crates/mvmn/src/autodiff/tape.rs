//! Reverse-mode tape: records primitive operations during the forward pass
//! and replays them backwards to accumulate gradients.
//!
//! Nodes are arena-allocated; inputs are always created before outputs, so a
//! reverse index sweep is a reverse topological order. Gradients are always
//! accumulated (`+=`), never overwritten. A tape can be swept exactly once;
//! a second `backward` without a new forward is an error.

use rand::Rng;

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};
use crate::types::Real;

/// Exponent clamp for the point-process terms; keeps `exp` finite.
pub const EXP_CLAMP: Real = 50.0;
/// Below this magnitude the point-process log-density switches to its
/// omega->0 limit form.
pub const OMEGA_EPS: Real = 1e-6;

/// Handle to a trainable tensor inside a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Gradient accumulators aligned with a parameter store.
#[derive(Debug, Clone)]
pub struct GradStore {
    slots: Vec<Tensor>,
}

impl GradStore {
    pub fn from_shapes(shapes: &[Vec<usize>]) -> Self {
        GradStore {
            slots: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn slot(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Merges another gradient store into this one.
    pub fn merge(&mut self, other: &GradStore) {
        debug_assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.add_assign(b);
        }
    }

    pub fn zero(&mut self) {
        for s in &mut self.slots {
            s.fill(0.0);
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// Gradients of tracked (`var`) leaves, available after the reverse sweep.
#[derive(Debug, Default)]
pub struct VarGrads {
    grads: std::collections::HashMap<usize, Tensor>,
}

impl VarGrads {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(&id.0)
    }
}

#[derive(Debug, Clone)]
struct LstmSaved {
    i: Vec<Real>,
    f: Vec<Real>,
    g: Vec<Real>,
    o: Vec<Real>,
    tanh_c: Vec<Real>,
}

#[derive(Debug, Clone)]
enum Op {
    /// Untracked constant input.
    Const,
    /// Tracked input; gradient reported through [`VarGrads`].
    Var,
    /// Full parameter tensor; gradient accumulated into the [`GradStore`].
    Param(ParamId),
    /// Rows gathered from a parameter table (embedding lookup); gradients
    /// scatter back into the table's slot.
    Lookup(ParamId, Vec<usize>),
    Add(ValueId, ValueId),
    AddConst(ValueId),
    AddScalarNode(ValueId, ValueId),
    Scale(ValueId, Real),
    Hadamard(ValueId, ValueId),
    Matmul(ValueId, ValueId),
    MatmulNt(ValueId, ValueId),
    MatVec(ValueId, ValueId),
    Dot(ValueId, ValueId),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Exp(ValueId),
    Log(ValueId),
    LeakyRelu(ValueId, Real),
    Elu(ValueId),
    Clamp(ValueId, Real, Real),
    Softmax(ValueId, Option<Vec<bool>>),
    Dropout(ValueId, Vec<Real>),
    MaxOverAxis {
        a: ValueId,
        argmax: Vec<Option<usize>>,
    },
    Concat(Vec<ValueId>),
    Pad1d(ValueId),
    Slice1d(ValueId, usize, usize),
    Rows(ValueId, Vec<usize>),
    Row(ValueId, usize),
    IndexElem(ValueId, usize),
    Gather1d(ValueId, Vec<usize>),
    StackRows(Vec<ValueId>),
    WeightedSumRows {
        matrix: ValueId,
        ids: Vec<usize>,
        weights: ValueId,
    },
    NormalizeRows(ValueId, Vec<Real>),
    Sum(ValueId),
    Mean(ValueId),
    AddN(Vec<ValueId>),
    LstmCell {
        x: ValueId,
        h_prev: ValueId,
        c_prev: ValueId,
        w_x: ValueId,
        w_h: ValueId,
        bias: ValueId,
        saved: LstmSaved,
    },
    Intensity {
        h: ValueId,
        v: ValueId,
        omega: ValueId,
        b: ValueId,
        dt: Real,
    },
    LogDensity {
        h: ValueId,
        v: ValueId,
        omega: ValueId,
        b: ValueId,
        dt: Real,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// The recording tape. One tape per forward pass; confined to one thread.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, details: String) -> Error {
    Error::Shape {
        op: op.to_string(),
        details,
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    // ----- leaves -----

    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, v: Real) -> ValueId {
        self.push(Tensor::scalar(v), Op::Const)
    }

    /// Tracked input; its gradient is reported by the reverse sweep.
    pub fn var(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Var)
    }

    /// Full parameter leaf.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> ValueId {
        self.push(value.clone(), Op::Param(id))
    }

    /// Embedding lookup: gathers `rows` from a parameter table without
    /// copying the whole table onto the tape.
    pub fn lookup(&mut self, id: ParamId, table: &Tensor, rows: &[usize]) -> ValueId {
        let cols = table.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(table.row(r));
        }
        self.push(
            Tensor::matrix(rows.len(), cols, data),
            Op::Lookup(id, rows.to_vec()),
        )
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_const(&mut self, a: ValueId, c: Real) -> ValueId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x += c);
        self.push(out, Op::AddConst(a))
    }

    /// Broadcast-adds a scalar node onto every entry of `a`.
    pub fn add_scalar_node(&mut self, a: ValueId, s: ValueId) -> Result<ValueId> {
        if self.value(s).len() != 1 {
            return Err(shape_err(
                "add_scalar_node",
                format!("scalar operand has shape {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).item();
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x += sv);
        Ok(self.push(out, Op::AddScalarNode(a, s)))
    }

    pub fn scale(&mut self, a: ValueId, c: Real) -> ValueId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "hadamard",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    fn map_unary(&mut self, a: ValueId, f: impl Fn(Real) -> Real, op: Op) -> ValueId {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect());
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        self.map_unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        self.map_unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        self.map_unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: ValueId) -> ValueId {
        self.map_unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: Real) -> ValueId {
        self.map_unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn elu(&mut self, a: ValueId) -> ValueId {
        self.map_unary(
            a,
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            Op::Elu(a),
        )
    }

    /// Pass-through inside `[lo, hi]`, zero gradient outside.
    pub fn clamp(&mut self, a: ValueId, lo: Real, hi: Real) -> ValueId {
        self.map_unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = ta.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let ail = arow[l];
                let brow = tb.row(l);
                for j in 0..n {
                    orow[j] += ail * brow[j];
                }
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::Matmul(a, b)))
    }

    /// `a * b^T` for row-major `a: (m,k)` and `b: (n,k)`.
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(shape_err(
                "matmul_nt",
                format!("{:?} x {:?}^T", ta.shape(), tb.shape()),
            ));
        }
        let (m, n) = (ta.rows(), tb.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(ta.row(i), tb.row(j));
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatmulNt(a, b)))
    }

    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tm.cols() != tv.len() {
            return Err(shape_err(
                "matvec",
                format!("{:?} x {:?}", tm.shape(), tv.shape()),
            ));
        }
        let out: Vec<Real> = (0..tm.rows()).map(|i| dot(tm.row(i), tv.data())).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(m, v)))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(shape_err(
                "dot",
                format!("{:?} . {:?}", ta.shape(), tb.shape()),
            ));
        }
        let v = dot(ta.data(), tb.data());
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    // ----- shaping -----

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(shape_err(
                    "concat",
                    format!("non-vector part {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Right-pads a vector with zeros to `len`.
    pub fn pad1d(&mut self, a: ValueId, len: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || ta.len() > len {
            return Err(shape_err(
                "pad1d",
                format!("{:?} to length {len}", ta.shape()),
            ));
        }
        let mut data = ta.data().to_vec();
        data.resize(len, 0.0);
        Ok(self.push(Tensor::vector(data), Op::Pad1d(a)))
    }

    pub fn slice1d(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || start + len > ta.len() {
            return Err(shape_err(
                "slice1d",
                format!("[{start}..{}] of {:?}", start + len, ta.shape()),
            ));
        }
        let data = ta.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice1d(a, start, len)))
    }

    pub fn rows(&mut self, a: ValueId, ids: &[usize]) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(shape_err("rows", format!("{:?}", ta.shape())));
        }
        let cols = ta.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &r in ids {
            data.extend_from_slice(ta.row(r));
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), cols, data),
            Op::Rows(a, ids.to_vec()),
        ))
    }

    pub fn row(&mut self, a: ValueId, i: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || i >= ta.rows() {
            return Err(shape_err("row", format!("row {i} of {:?}", ta.shape())));
        }
        let data = ta.row(i).to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row(a, i)))
    }

    pub fn gather1d(&mut self, a: ValueId, ids: &[usize]) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || ids.iter().any(|&i| i >= ta.len()) {
            return Err(shape_err(
                "gather1d",
                format!("{} ids from {:?}", ids.len(), ta.shape()),
            ));
        }
        let data = ids.iter().map(|&i| ta.data()[i]).collect();
        Ok(self.push(Tensor::vector(data), Op::Gather1d(a, ids.to_vec())))
    }

    pub fn index_elem(&mut self, a: ValueId, i: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || i >= ta.len() {
            return Err(shape_err(
                "index_elem",
                format!("index {i} of {:?}", ta.shape()),
            ));
        }
        let v = ta.data()[i];
        Ok(self.push(Tensor::scalar(v), Op::IndexElem(a, i)))
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let cols = self.value(parts[0]).len();
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 || t.len() != cols {
                return Err(shape_err(
                    "stack_rows",
                    format!("expected vectors of length {cols}, got {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Tensor::matrix(parts.len(), cols, data),
            Op::StackRows(parts.to_vec()),
        ))
    }

    /// `sum_i weights[i] * matrix[ids[i], :]`.
    pub fn weighted_sum_rows(
        &mut self,
        matrix: ValueId,
        ids: &[usize],
        weights: ValueId,
    ) -> Result<ValueId> {
        let (tm, tw) = (self.value(matrix), self.value(weights));
        if tm.shape().len() != 2 || tw.len() != ids.len() {
            return Err(shape_err(
                "weighted_sum_rows",
                format!(
                    "matrix {:?}, {} ids, weights {:?}",
                    tm.shape(),
                    ids.len(),
                    tw.shape()
                ),
            ));
        }
        let cols = tm.cols();
        let mut out = vec![0.0; cols];
        for (k, &r) in ids.iter().enumerate() {
            let w = tw.data()[k];
            let row = tm.row(r);
            for j in 0..cols {
                out[j] += w * row[j];
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSumRows {
                matrix,
                ids: ids.to_vec(),
                weights,
            },
        ))
    }

    /// L2-normalizes each row; all-zero rows map to zero with zero gradient.
    pub fn normalize_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(shape_err("normalize_rows", format!("{:?}", ta.shape())));
        }
        let (m, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(m * c);
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let row = ta.row(i);
            let n = dot(row, row).sqrt();
            norms.push(n);
            if n == 0.0 {
                data.extend(std::iter::repeat(0.0).take(c));
            } else {
                data.extend(row.iter().map(|&x| x / n));
            }
        }
        Ok(self.push(Tensor::matrix(m, c, data), Op::NormalizeRows(a, norms)))
    }

    // ----- reductions and probability -----

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a);
        let v = t.data().iter().sum::<Real>() / t.len() as Real;
        self.push(Tensor::scalar(v), Op::Mean(a))
    }

    pub fn add_n(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let shape = self.value(parts[0]).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(shape_err(
                    "add_n",
                    format!("{:?} vs {:?}", t.shape(), shape),
                ));
            }
            out.add_assign(t);
        }
        Ok(self.push(out, Op::AddN(parts.to_vec())))
    }

    /// Softmax over a vector. Masked-out entries get probability zero and
    /// receive no gradient.
    pub fn softmax(&mut self, a: ValueId, mask: Option<&[bool]>) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 {
            return Err(shape_err("softmax", format!("{:?}", ta.shape())));
        }
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(shape_err(
                    "softmax",
                    format!("mask length {} vs {:?}", m.len(), ta.shape()),
                ));
            }
            if !m.iter().any(|&b| b) {
                return Err(shape_err("softmax", "all entries masked".into()));
            }
        }
        let active = |i: usize| mask.map_or(true, |m| m[i]);
        let max = ta
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| active(*i))
            .map(|(_, &v)| v)
            .fold(Real::NEG_INFINITY, Real::max);
        let mut out = vec![0.0; ta.len()];
        let mut denom = 0.0;
        for (i, &v) in ta.data().iter().enumerate() {
            if active(i) {
                let e = (v - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        out.iter_mut().for_each(|x| *x /= denom);
        Ok(self.push(
            Tensor::vector(out),
            Op::Softmax(a, mask.map(|m| m.to_vec())),
        ))
    }

    /// Inverted dropout: at train time keeps entries with probability
    /// `1 - p` scaled by `1/(1-p)`; identity when `train` is false.
    pub fn dropout<R: Rng>(
        &mut self,
        a: ValueId,
        p: Real,
        train: bool,
        rng: &mut R,
    ) -> ValueId {
        if !train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let ta = self.value(a);
        let mask: Vec<Real> = (0..ta.len())
            .map(|_| {
                if rng.gen::<f64>() < keep as f64 {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = ta
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        self.push(out, Op::Dropout(a, mask))
    }

    /// Max over one axis of a matrix. `axis = 1` gives per-row maxima,
    /// `axis = 0` per-column. Masked-out entries never participate; ties go
    /// to the lowest index. Fully masked lines yield 0 with no gradient.
    pub fn max_over_axis(
        &mut self,
        a: ValueId,
        axis: usize,
        mask: Option<&[bool]>,
    ) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || axis > 1 {
            return Err(shape_err(
                "max_over_axis",
                format!("axis {axis} of {:?}", ta.shape()),
            ));
        }
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(shape_err(
                    "max_over_axis",
                    format!("mask length {} vs {:?}", m.len(), ta.shape()),
                ));
            }
        }
        let (r, c) = (ta.rows(), ta.cols());
        let (out_len, line_len) = if axis == 1 { (r, c) } else { (c, r) };
        let mut out = vec![0.0; out_len];
        let mut argmax: Vec<Option<usize>> = vec![None; out_len];
        for i in 0..out_len {
            let mut best: Option<(usize, Real)> = None;
            for j in 0..line_len {
                let flat = if axis == 1 { i * c + j } else { j * c + i };
                if mask.map_or(true, |m| m[flat]) {
                    let v = ta.data()[flat];
                    if best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((flat, v));
                    }
                }
            }
            if let Some((flat, v)) = best {
                out[i] = v;
                argmax[i] = Some(flat);
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::MaxOverAxis { a, argmax },
        ))
    }

    // ----- fused cells -----

    /// One LSTM step. `w_x: (4H, d)`, `w_h: (4H, H)`, `bias: (4H)` with gate
    /// blocks ordered input, forget, candidate, output. Returns `[h ; c]`
    /// stacked into one `2H` vector; use [`Tape::slice1d`] to split.
    pub fn lstm_cell(
        &mut self,
        x: ValueId,
        h_prev: ValueId,
        c_prev: ValueId,
        w_x: ValueId,
        w_h: ValueId,
        bias: ValueId,
    ) -> Result<ValueId> {
        let d = self.value(x).len();
        let hidden = self.value(h_prev).len();
        let (tw_x, tw_h, tb) = (self.value(w_x), self.value(w_h), self.value(bias));
        if tw_x.shape() != [4 * hidden, d]
            || tw_h.shape() != [4 * hidden, hidden]
            || tb.shape() != [4 * hidden]
            || self.value(c_prev).len() != hidden
        {
            return Err(shape_err(
                "lstm_cell",
                format!(
                    "x {:?}, h {:?}, c {:?}, w_x {:?}, w_h {:?}, bias {:?}",
                    self.value(x).shape(),
                    self.value(h_prev).shape(),
                    self.value(c_prev).shape(),
                    tw_x.shape(),
                    tw_h.shape(),
                    tb.shape()
                ),
            ));
        }
        let (tx, th, tc) = (self.value(x), self.value(h_prev), self.value(c_prev));
        let mut pre = vec![0.0; 4 * hidden];
        for r in 0..4 * hidden {
            pre[r] = dot(tw_x.row(r), tx.data()) + dot(tw_h.row(r), th.data()) + tb.data()[r];
        }
        let mut i_g = vec![0.0; hidden];
        let mut f_g = vec![0.0; hidden];
        let mut g_g = vec![0.0; hidden];
        let mut o_g = vec![0.0; hidden];
        for k in 0..hidden {
            i_g[k] = sigmoid(pre[k]);
            f_g[k] = sigmoid(pre[hidden + k]);
            g_g[k] = pre[2 * hidden + k].tanh();
            o_g[k] = sigmoid(pre[3 * hidden + k]);
        }
        let mut out = vec![0.0; 2 * hidden];
        let mut tanh_c = vec![0.0; hidden];
        for k in 0..hidden {
            let c_new = f_g[k] * tc.data()[k] + i_g[k] * g_g[k];
            tanh_c[k] = c_new.tanh();
            out[k] = o_g[k] * tanh_c[k];
            out[hidden + k] = c_new;
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::LstmCell {
                x,
                h_prev,
                c_prev,
                w_x,
                w_h,
                bias,
                saved: LstmSaved {
                    i: i_g,
                    f: f_g,
                    g: g_g,
                    o: o_g,
                    tanh_c,
                },
            },
        ))
    }

    /// Conditional intensity `exp(v.h + omega*dt + b)` with exponent clamp.
    pub fn intensity(
        &mut self,
        h: ValueId,
        v: ValueId,
        omega: ValueId,
        b: ValueId,
        dt: Real,
    ) -> Result<ValueId> {
        self.check_pp_shapes("intensity", h, v, omega, b)?;
        let arg = dot(self.value(v).data(), self.value(h).data())
            + self.value(omega).item() * dt
            + self.value(b).item();
        let val = arg.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        Ok(self.push(
            Tensor::scalar(val),
            Op::Intensity { h, v, omega, b, dt },
        ))
    }

    /// Log of the conditional density of the next event at gap `dt`:
    /// `a + omega*dt + (1/omega) e^a - (1/omega) e^(a + omega*dt)` with
    /// `a = v.h + b`, switching to the omega->0 limit `a - dt e^a` below
    /// [`OMEGA_EPS`].
    pub fn log_density(
        &mut self,
        h: ValueId,
        v: ValueId,
        omega: ValueId,
        b: ValueId,
        dt: Real,
    ) -> Result<ValueId> {
        self.check_pp_shapes("log_density", h, v, omega, b)?;
        let a = dot(self.value(v).data(), self.value(h).data()) + self.value(b).item();
        let w = self.value(omega).item();
        let val = log_density_forward(a, w, dt);
        Ok(self.push(
            Tensor::scalar(val),
            Op::LogDensity { h, v, omega, b, dt },
        ))
    }

    fn check_pp_shapes(
        &self,
        op: &str,
        h: ValueId,
        v: ValueId,
        omega: ValueId,
        b: ValueId,
    ) -> Result<()> {
        let (th, tv) = (self.value(h), self.value(v));
        if th.shape().len() != 1
            || th.shape() != tv.shape()
            || self.value(omega).len() != 1
            || self.value(b).len() != 1
        {
            return Err(shape_err(
                op,
                format!(
                    "h {:?}, v {:?}, omega {:?}, b {:?}",
                    th.shape(),
                    tv.shape(),
                    self.value(omega).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        Ok(())
    }

    // ----- reverse sweep -----

    /// Reverse sweep from a scalar loss node, seeding its gradient with 1.
    pub fn backward(&mut self, loss: ValueId, grads: &mut GradStore) -> Result<VarGrads> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))], grads)
    }

    /// Reverse sweep with externally supplied output gradients; used to chain
    /// a shared upstream tape behind per-pair tapes.
    pub fn backward_seeded(
        &mut self,
        seeds: &[(ValueId, Tensor)],
        grads: &mut GradStore,
    ) -> Result<VarGrads> {
        if self.consumed {
            return Err(Error::Invalid(
                "tape already swept; rerun the forward pass before backward".into(),
            ));
        }
        self.consumed = true;

        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            if seed.shape() != self.value(*id).shape() {
                return Err(shape_err(
                    "backward_seeded",
                    format!(
                        "seed {:?} vs value {:?}",
                        seed.shape(),
                        self.value(*id).shape()
                    ),
                ));
            }
            match &mut node_grads[id.0] {
                Some(g) => g.add_assign(seed),
                slot => *slot = Some(seed.clone()),
            }
        }

        let mut var_grads = VarGrads::default();
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            self.pull_back(idx, &g, &mut node_grads, grads, &mut var_grads);
        }
        Ok(var_grads)
    }

    fn pull_back(
        &self,
        idx: usize,
        g: &Tensor,
        node_grads: &mut [Option<Tensor>],
        grads: &mut GradStore,
        var_grads: &mut VarGrads,
    ) {
        // Local accumulation helper: += delta into an input's gradient.
        fn acc_slot<'s>(
            node_grads: &'s mut [Option<Tensor>],
            nodes: &[Node],
            id: ValueId,
        ) -> &'s mut Tensor {
            let slot = &mut node_grads[id.0];
            slot.get_or_insert_with(|| Tensor::zeros_like(&nodes[id.0].value))
        }
        let nodes = &self.nodes;
        let val = |id: ValueId| -> &Tensor { &nodes[id.0].value };

        match &nodes[idx].op {
            Op::Const => {}
            Op::Var => {
                var_grads
                    .grads
                    .entry(idx)
                    .and_modify(|t| t.add_assign(g))
                    .or_insert_with(|| g.clone());
            }
            Op::Param(id) => grads.slot_mut(*id).add_assign(g),
            Op::Lookup(id, rows) => {
                let slot = grads.slot_mut(*id);
                for (k, &r) in rows.iter().enumerate() {
                    let grow = g.row(k);
                    let srow = slot.row_mut(r);
                    for j in 0..grow.len() {
                        srow[j] += grow[j];
                    }
                }
            }
            Op::Add(a, b) => {
                acc_slot(node_grads, nodes, *a).add_assign(g);
                acc_slot(node_grads, nodes, *b).add_assign(g);
            }
            Op::AddConst(a) => acc_slot(node_grads, nodes, *a).add_assign(g),
            Op::AddScalarNode(a, s) => {
                acc_slot(node_grads, nodes, *a).add_assign(g);
                let total: Real = g.data().iter().sum();
                acc_slot(node_grads, nodes, *s).data_mut()[0] += total;
            }
            Op::Scale(a, c) => acc_slot(node_grads, nodes, *a).add_scaled(g, *c),
            Op::Hadamard(a, b) => {
                let (va, vb) = (val(*a).clone(), val(*b).clone());
                {
                    let ga = acc_slot(node_grads, nodes, *a);
                    for (i, gi) in g.data().iter().enumerate() {
                        ga.data_mut()[i] += gi * vb.data()[i];
                    }
                }
                let gb = acc_slot(node_grads, nodes, *b);
                for (i, gi) in g.data().iter().enumerate() {
                    gb.data_mut()[i] += gi * va.data()[i];
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                {
                    // dA += G * B^T
                    let ga = acc_slot(node_grads, nodes, *a);
                    for i in 0..m {
                        for l in 0..k {
                            ga.data_mut()[i * k + l] += dot(g.row(i), vb.row(l));
                        }
                    }
                }
                // dB += A^T * G
                let gb = acc_slot(node_grads, nodes, *b);
                for l in 0..k {
                    for i in 0..m {
                        let a_il = va.data()[i * k + l];
                        let grow = g.row(i);
                        let brow = &mut gb.data_mut()[l * n..(l + 1) * n];
                        for j in 0..n {
                            brow[j] += a_il * grow[j];
                        }
                    }
                }
            }
            Op::MatmulNt(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                {
                    // dA += G * B
                    let ga = acc_slot(node_grads, nodes, *a);
                    for i in 0..m {
                        let grow = g.row(i);
                        let arow = &mut ga.data_mut()[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = grow[j];
                            let brow = vb.row(j);
                            for l in 0..k {
                                arow[l] += gij * brow[l];
                            }
                        }
                    }
                }
                // dB += G^T * A
                let gb = acc_slot(node_grads, nodes, *b);
                for j in 0..n {
                    let brow = &mut gb.data_mut()[j * k..(j + 1) * k];
                    for i in 0..m {
                        let gij = g.data()[i * n + j];
                        let arow = va.row(i);
                        for l in 0..k {
                            brow[l] += gij * arow[l];
                        }
                    }
                }
            }
            Op::MatVec(m_id, v_id) => {
                let (vm, vv) = (val(*m_id), val(*v_id));
                let (m, k) = (vm.rows(), vm.cols());
                {
                    let gm = acc_slot(node_grads, nodes, *m_id);
                    for i in 0..m {
                        let gi = g.data()[i];
                        let row = &mut gm.data_mut()[i * k..(i + 1) * k];
                        for j in 0..k {
                            row[j] += gi * vv.data()[j];
                        }
                    }
                }
                let gv = acc_slot(node_grads, nodes, *v_id);
                for i in 0..m {
                    let gi = g.data()[i];
                    let row = vm.row(i);
                    for j in 0..k {
                        gv.data_mut()[j] += gi * row[j];
                    }
                }
            }
            Op::Dot(a, b) => {
                let gs = g.item();
                let (va, vb) = (val(*a).clone(), val(*b).clone());
                acc_slot(node_grads, nodes, *a).add_scaled(&vb, gs);
                acc_slot(node_grads, nodes, *b).add_scaled(&va, gs);
            }
            Op::Tanh(a) => {
                let y = &nodes[idx].value;
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    let t = y.data()[i];
                    ga.data_mut()[i] += gi * (1.0 - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let y = &nodes[idx].value;
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    let s = y.data()[i];
                    ga.data_mut()[i] += gi * s * (1.0 - s);
                }
            }
            Op::Exp(a) => {
                let y = &nodes[idx].value;
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    ga.data_mut()[i] += gi * y.data()[i];
                }
            }
            Op::Log(a) => {
                let va = val(*a).clone();
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    ga.data_mut()[i] += gi / va.data()[i];
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = val(*a).clone();
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    let d = if va.data()[i] > 0.0 { 1.0 } else { *slope };
                    ga.data_mut()[i] += gi * d;
                }
            }
            Op::Elu(a) => {
                let va = val(*a).clone();
                let y = &nodes[idx].value;
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    let d = if va.data()[i] > 0.0 {
                        1.0
                    } else {
                        y.data()[i] + 1.0
                    };
                    ga.data_mut()[i] += gi * d;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = val(*a).clone();
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    let x = va.data()[i];
                    if x >= *lo && x <= *hi {
                        ga.data_mut()[i] += gi;
                    }
                }
            }
            Op::Softmax(a, _mask) => {
                let p = &nodes[idx].value;
                let inner: Real = g
                    .data()
                    .iter()
                    .zip(p.data())
                    .map(|(gi, pi)| gi * pi)
                    .sum();
                let ga = acc_slot(node_grads, nodes, *a);
                for i in 0..p.len() {
                    ga.data_mut()[i] += p.data()[i] * (g.data()[i] - inner);
                }
            }
            Op::Dropout(a, mask) => {
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, gi) in g.data().iter().enumerate() {
                    ga.data_mut()[i] += gi * mask[i];
                }
            }
            Op::MaxOverAxis { a, argmax } => {
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, am) in argmax.iter().enumerate() {
                    if let Some(flat) = am {
                        ga.data_mut()[*flat] += g.data()[i];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    let gp = acc_slot(node_grads, nodes, p);
                    for i in 0..len {
                        gp.data_mut()[i] += g.data()[off + i];
                    }
                    off += len;
                }
            }
            Op::Pad1d(a) => {
                let len = val(*a).len();
                let ga = acc_slot(node_grads, nodes, *a);
                for i in 0..len {
                    ga.data_mut()[i] += g.data()[i];
                }
            }
            Op::Slice1d(a, start, len) => {
                let ga = acc_slot(node_grads, nodes, *a);
                for i in 0..*len {
                    ga.data_mut()[start + i] += g.data()[i];
                }
            }
            Op::Rows(a, ids) => {
                let cols = val(*a).cols();
                let ga = acc_slot(node_grads, nodes, *a);
                for (k, &r) in ids.iter().enumerate() {
                    let grow = g.row(k);
                    let arow = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        arow[j] += grow[j];
                    }
                }
            }
            Op::Row(a, i) => {
                let cols = val(*a).cols();
                let ga = acc_slot(node_grads, nodes, *a);
                let arow = &mut ga.data_mut()[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    arow[j] += g.data()[j];
                }
            }
            Op::IndexElem(a, i) => {
                acc_slot(node_grads, nodes, *a).data_mut()[*i] += g.item();
            }
            Op::Gather1d(a, ids) => {
                let ga = acc_slot(node_grads, nodes, *a);
                for (k, &i) in ids.iter().enumerate() {
                    ga.data_mut()[i] += g.data()[k];
                }
            }
            Op::StackRows(parts) => {
                let cols = val(parts[0]).len();
                for (k, &p) in parts.iter().enumerate() {
                    let gp = acc_slot(node_grads, nodes, p);
                    for j in 0..cols {
                        gp.data_mut()[j] += g.data()[k * cols + j];
                    }
                }
            }
            Op::WeightedSumRows {
                matrix,
                ids,
                weights,
            } => {
                let (vm, vw) = (val(*matrix).clone(), val(*weights).clone());
                let cols = vm.cols();
                {
                    let gm = acc_slot(node_grads, nodes, *matrix);
                    for (k, &r) in ids.iter().enumerate() {
                        let w = vw.data()[k];
                        let row = &mut gm.data_mut()[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            row[j] += w * g.data()[j];
                        }
                    }
                }
                let gw = acc_slot(node_grads, nodes, *weights);
                for (k, &r) in ids.iter().enumerate() {
                    gw.data_mut()[k] += dot(g.data(), vm.row(r));
                }
            }
            Op::NormalizeRows(a, norms) => {
                let y = &nodes[idx].value;
                let cols = y.cols();
                let ga = acc_slot(node_grads, nodes, *a);
                for (i, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let inner = dot(grow, yrow);
                    let arow = &mut ga.data_mut()[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        arow[j] += (grow[j] - yrow[j] * inner) / n;
                    }
                }
            }
            Op::Sum(a) => {
                let gs = g.item();
                let ga = acc_slot(node_grads, nodes, *a);
                ga.data_mut().iter_mut().for_each(|x| *x += gs);
            }
            Op::Mean(a) => {
                let gs = g.item() / val(*a).len() as Real;
                let ga = acc_slot(node_grads, nodes, *a);
                ga.data_mut().iter_mut().for_each(|x| *x += gs);
            }
            Op::AddN(parts) => {
                for &p in parts {
                    acc_slot(node_grads, nodes, p).add_assign(g);
                }
            }
            Op::LstmCell {
                x,
                h_prev,
                c_prev,
                w_x,
                w_h,
                bias,
                saved,
            } => {
                let hidden = saved.i.len();
                let (vx, vh, vc) = (val(*x).clone(), val(*h_prev).clone(), val(*c_prev).clone());
                let (vwx, vwh) = (val(*w_x), val(*w_h));
                let dh = &g.data()[..hidden];
                let dc_out = &g.data()[hidden..];

                // Through h = o * tanh(c_new) and c_new = f*c_prev + i*g.
                let mut d_pre = vec![0.0; 4 * hidden];
                let mut d_c_prev = vec![0.0; hidden];
                for k in 0..hidden {
                    let o = saved.o[k];
                    let tc = saved.tanh_c[k];
                    let d_o = dh[k] * tc;
                    let d_cnew = dc_out[k] + dh[k] * o * (1.0 - tc * tc);
                    let d_i = d_cnew * saved.g[k];
                    let d_f = d_cnew * vc.data()[k];
                    let d_g = d_cnew * saved.i[k];
                    d_c_prev[k] = d_cnew * saved.f[k];
                    d_pre[k] = d_i * saved.i[k] * (1.0 - saved.i[k]);
                    d_pre[hidden + k] = d_f * saved.f[k] * (1.0 - saved.f[k]);
                    d_pre[2 * hidden + k] = d_g * (1.0 - saved.g[k] * saved.g[k]);
                    d_pre[3 * hidden + k] = d_o * o * (1.0 - o);
                }

                let d = vx.len();
                {
                    let gwx = acc_slot(node_grads, nodes, *w_x);
                    for r in 0..4 * hidden {
                        let dp = d_pre[r];
                        if dp == 0.0 {
                            continue;
                        }
                        let row = &mut gwx.data_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            row[j] += dp * vx.data()[j];
                        }
                    }
                }
                {
                    let gwh = acc_slot(node_grads, nodes, *w_h);
                    for r in 0..4 * hidden {
                        let dp = d_pre[r];
                        if dp == 0.0 {
                            continue;
                        }
                        let row = &mut gwh.data_mut()[r * hidden..(r + 1) * hidden];
                        for j in 0..hidden {
                            row[j] += dp * vh.data()[j];
                        }
                    }
                }
                {
                    let gb = acc_slot(node_grads, nodes, *bias);
                    for r in 0..4 * hidden {
                        gb.data_mut()[r] += d_pre[r];
                    }
                }
                {
                    let gx = acc_slot(node_grads, nodes, *x);
                    for r in 0..4 * hidden {
                        let dp = d_pre[r];
                        if dp == 0.0 {
                            continue;
                        }
                        let row = vwx.row(r);
                        for j in 0..d {
                            gx.data_mut()[j] += dp * row[j];
                        }
                    }
                }
                {
                    let gh = acc_slot(node_grads, nodes, *h_prev);
                    for r in 0..4 * hidden {
                        let dp = d_pre[r];
                        if dp == 0.0 {
                            continue;
                        }
                        let row = vwh.row(r);
                        for j in 0..hidden {
                            gh.data_mut()[j] += dp * row[j];
                        }
                    }
                }
                let gc = acc_slot(node_grads, nodes, *c_prev);
                for k in 0..hidden {
                    gc.data_mut()[k] += d_c_prev[k];
                }
            }
            Op::Intensity { h, v, omega, b, dt } => {
                let (vh, vv) = (val(*h).clone(), val(*v).clone());
                let arg =
                    dot(vv.data(), vh.data()) + val(*omega).item() * dt + val(*b).item();
                if arg.abs() > EXP_CLAMP {
                    return; // clamped region: zero gradient
                }
                let lam = nodes[idx].value.item();
                let gs = g.item() * lam;
                acc_slot(node_grads, nodes, *h).add_scaled(&vv, gs);
                acc_slot(node_grads, nodes, *v).add_scaled(&vh, gs);
                acc_slot(node_grads, nodes, *omega).data_mut()[0] += gs * dt;
                acc_slot(node_grads, nodes, *b).data_mut()[0] += gs;
            }
            Op::LogDensity { h, v, omega, b, dt } => {
                let (vh, vv) = (val(*h).clone(), val(*v).clone());
                let a = dot(vv.data(), vh.data()) + val(*b).item();
                let w = val(*omega).item();
                let (da, dw) = log_density_partials(a, w, *dt);
                let gs = g.item();
                acc_slot(node_grads, nodes, *h).add_scaled(&vv, gs * da);
                acc_slot(node_grads, nodes, *v).add_scaled(&vh, gs * da);
                acc_slot(node_grads, nodes, *omega).data_mut()[0] += gs * dw;
                acc_slot(node_grads, nodes, *b).data_mut()[0] += gs * da;
            }
        }
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamped_exp(x: Real) -> Real {
    x.min(EXP_CLAMP).exp()
}

/// Forward value of the log-density; shared by the tape op and tests.
pub fn log_density_forward(a: Real, omega: Real, dt: Real) -> Real {
    if omega.abs() < OMEGA_EPS {
        // limit form with the first-order omega correction
        let ea = clamped_exp(a);
        a + omega * dt - ea * (dt + omega * dt * dt / 2.0)
    } else {
        let ea = clamped_exp(a);
        let eat = clamped_exp(a + omega * dt);
        a + omega * dt + ea / omega - eat / omega
    }
}

/// Partial derivatives (d/da, d/domega) of [`log_density_forward`].
fn log_density_partials(a: Real, omega: Real, dt: Real) -> (Real, Real) {
    if omega.abs() < OMEGA_EPS {
        let ea = clamped_exp(a);
        let da = 1.0 - ea * (dt + omega * dt * dt / 2.0);
        let dw = dt - ea * (dt * dt / 2.0 + omega * dt * dt * dt / 3.0);
        (da, dw)
    } else {
        let ea = clamped_exp(a);
        let eat = clamped_exp(a + omega * dt);
        let da = 1.0 + (ea - eat) / omega;
        let dw = dt - ea / (omega * omega) + eat / (omega * omega) - dt * eat / omega;
        (da, dw)
    }
}

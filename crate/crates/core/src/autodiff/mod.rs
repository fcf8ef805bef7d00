//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! Every operation appends a node to a [`Tape`]; node ids are issued in
//! creation order, which is a topological order of the computation, so
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//!
//! Besides the elementwise and linear-algebra primitives, the tape carries
//! two fused operations for the path-level part of the model
//! ([`Tape::film_aggregate`] and [`Tape::film_norm_sum`]). They recompute the
//! per-path scaling and shifting vectors during the backward sweep instead of
//! storing them, so memory stays at `O(nodes × d_h)` rather than
//! `O(paths × d_h)`.
//!
//! ```
//! use lhgnn::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::row(&[1.0, 2.0]));
//! let sq = tape.hadamard(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
//! ```

mod check;
mod film;
mod tensor;

use std::rc::Rc;

pub use check::{grad_check, GradCheckReport};
pub use film::{film_vectors, FilmInputs, FilmPlan, PathMembers};
pub use tensor::Tensor;
pub(crate) use tensor::{dot, norm};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Tanh(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    L2Norm(Var),
    L2Normalize(Var),
    Sum(Var),
    MaxWithZero(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    SegmentMean {
        input: Var,
        members: Rc<Vec<usize>>,
        offsets: Rc<Vec<usize>>,
    },
    FilmAggregate(film::FilmAggregate),
    FilmNormSum(film::FilmNormSum),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    parallel: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            parallel: false,
        }
    }

    /// Enables data parallelism inside the fused path operations. Results
    /// are bitwise identical to the sequential mode.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(
                op,
                format!("{}x{} vs {}x{}", sa[0], sa[1], sb[0], sb[1]),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`, the usual shape for a linear layer with weights `b`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push_op(out, Op::MatMulT(a, b), &[a, b]))
    }

    /// Elementwise sum. A `1 × n` right operand is broadcast over the rows
    /// of an `m × n` left operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && sb[0] == 1 && sa[1] == sb[1] {
            let bias = self.value(b).data().to_vec();
            let mut out = self.value(a).clone();
            for r in 0..sa[0] {
                for (o, bv) in out.row_slice_mut(r).iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
            return Ok(self.push_op(out, Op::AddRow(a, b), &[a, b]));
        }
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push_op(out, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push_op(out, Op::Scale(a, factor), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| leaky(x, slope));
        self.push_op(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push_op(out, Op::Tanh(a), &[a])
    }

    /// Column means: `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rows() == 0 {
            return Err(Error::Contract("mean_rows of an empty tensor".into()));
        }
        let mut out = Tensor::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(v.row_slice(r)) {
                *o += x;
            }
        }
        let m = v.rows() as f64;
        out.data_mut().iter_mut().for_each(|o| *o /= m);
        Ok(self.push_op(out, Op::MeanRows(a), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p)[1])
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim(
                    "concat_rows",
                    format!("{} columns vs {cols}", v.cols()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push_op(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row-wise Euclidean norms: `m × n → m × 1`.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = (0..v.rows()).map(|r| norm(v.row_slice(r))).collect();
        let out = Tensor::from_vec(v.rows(), 1, data).expect("shape");
        self.push_op(out, Op::L2Norm(a), &[a])
    }

    /// Scales every row to unit norm. Zero rows stay zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push_op(out, Op::L2Normalize(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn max_with_zero(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(out, Op::MaxWithZero(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of range for {} rows", v.rows()),
            ));
        }
        let out = v.gather_rows(&idx);
        Ok(self.push_op(out, Op::GatherRows(a, idx), &[a]))
    }

    /// Mean of row groups: output row `s` averages the input rows listed in
    /// `members[offsets[s]..offsets[s + 1]]`. Empty groups produce zeros.
    pub fn segment_mean(
        &mut self,
        a: Var,
        members: Rc<Vec<usize>>,
        offsets: Rc<Vec<usize>>,
    ) -> Result<Var> {
        let v = self.value(a);
        if offsets.is_empty() || *offsets.last().unwrap() != members.len() {
            return Err(Error::dim(
                "segment_mean",
                "offsets must end at members.len()",
            ));
        }
        if let Some(&bad) = members.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::dim(
                "segment_mean",
                format!("row {bad} out of range for {} rows", v.rows()),
            ));
        }
        let segs = offsets.len() - 1;
        let mut out = Tensor::zeros(segs, v.cols());
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi == lo {
                continue;
            }
            let inv = 1.0 / (hi - lo) as f64;
            let orow = out.row_slice_mut(s);
            for &m in &members[lo..hi] {
                for (o, x) in orow.iter_mut().zip(v.row_slice(m)) {
                    *o += x;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push_op(
            out,
            Op::SegmentMean {
                input: a,
                members,
                offsets,
            },
            &[a],
        ))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice on the same tape; re-run the forward pass".into(),
            ));
        }
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                s[0], s[1]
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Intermediate gradients were taken above; only leaves remain.
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_t(vb)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, va.t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul(vb)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.t_matmul(va)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip_map(g, vb, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip_map(g, va, |x, y| x * y));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let s = *slope;
                self.accumulate(grads, *a, zip_map(g, va, |gx, x| gx * leaky_grad(x, s)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip_map(g, out, |gx, y| gx * (1.0 - y * y)));
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let m = va.rows() as f64;
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    for (o, x) in ga.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *o = x / m;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for p in parts {
                    let r = self.shape(*p)[0];
                    let idx: Vec<usize> = (row..row + r).collect();
                    self.accumulate(grads, *p, g.gather_rows(&idx));
                    row += r;
                }
            }
            Op::L2Norm(a) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let n = out.get(r, 0);
                    // Subgradient zero at the origin.
                    if n > 0.0 {
                        let scale = g.get(r, 0) / n;
                        for (o, x) in ga.row_slice_mut(r).iter_mut().zip(va.row_slice(r)) {
                            *o = scale * x;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::L2Normalize(a) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let n = norm(va.row_slice(r));
                    if n > 0.0 {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let yg = dot(y, gr);
                        for ((o, yv), gv) in ga.row_slice_mut(r).iter_mut().zip(y).zip(gr) {
                            *o = (gv - yv * yg) / n;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(s[0], s[1], g.data()[0]));
            }
            Op::MaxWithZero(a) => {
                let va = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    zip_map(g, va, |gx, x| if x > 0.0 { gx } else { 0.0 }),
                );
            }
            Op::GatherRows(a, idx) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s[0], s[1]);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMean {
                input,
                members,
                offsets,
            } => {
                let s = self.shape(*input);
                let mut ga = Tensor::zeros(s[0], s[1]);
                for seg in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[seg], offsets[seg + 1]);
                    if hi == lo {
                        continue;
                    }
                    let inv = 1.0 / (hi - lo) as f64;
                    for &m in &members[lo..hi] {
                        for (o, x) in ga.row_slice_mut(m).iter_mut().zip(g.row_slice(seg)) {
                            *o += x * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::FilmAggregate(op) => {
                let parts = op.backward(self, g)?;
                for (v, t) in parts {
                    self.accumulate(grads, v, t);
                }
            }
            Op::FilmNormSum(op) => {
                let parts = op.backward(self, g.data()[0]);
                for (v, t) in parts {
                    self.accumulate(grads, v, t);
                }
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Whether any gradient reached `v`.
    pub fn touched(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub(crate) fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

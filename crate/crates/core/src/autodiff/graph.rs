//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. [`Graph::grad`]
//! walks the nodes backwards and expresses each adjoint through the same
//! graph operations, so with `create_graph` the gradients are ordinary nodes
//! that can be differentiated again.

use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNT(Var, Var),
    /// `a^T * b`
    MatMulTN(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[r, c] + [c]`, the bias row added to every row.
    AddRow(Var, Var),
    /// `[r, c] -> [c]`
    SumRows(Var),
    /// `[c] -> [r, c]`
    BroadcastRows(Var),
    Relu(Var),
    Hinge(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    AddConst(Var),
    Sum(Var),
    /// scalar -> any shape
    Expand(Var),
    Transpose(Var),
    /// Contiguous window of a flat vector, reshaped.
    Slice { src: Var, offset: usize },
    /// Inverse of `Slice`: place into a zero vector of length `total`.
    Scatter { src: Var, offset: usize },
    /// Sum of several `Scatter`s into one vector of length `total`.
    ScatterMany { parts: Vec<(Var, usize)> },
    ConcatCols(Var, Var),
    SliceCols { src: Var, start: usize },
    PadCols { src: Var, start: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Result of [`Graph::grad`]: one gradient node per requested input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub vars: Vec<Var>,
    /// `true` where the input does not influence the output; the matching
    /// gradient is an all-zero constant.
    pub detached: Vec<bool>,
}

/// Single-threaded tape of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // cleared while differentiating without `create_graph`
    recording: bool,
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0]
            .value
            .item()
            .expect("item() called on a non-scalar node")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A constant input (data, masks, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.dims2(), tb.dims2()) {
            (Some((_, k)), Some((k2, _))) if k == k2 => {}
            _ => return Err(shape_err("matmul", ta, tb)),
        }
        let v = ta.matmul(tb);
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    // transposed products used by the matmul adjoints
    fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.dims2(), tb.dims2()) {
            (Some((_, k)), Some((_, k2))) if k == k2 => {}
            _ => return Err(shape_err("matmul_nt", ta, tb)),
        }
        let v = ta.matmul_nt(tb);
        Ok(self.push(v, Op::MatMulNT(a, b), &[a, b]))
    }

    fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.dims2(), tb.dims2()) {
            (Some((k, _)), Some((k2, _))) if k == k2 => {}
            _ => return Err(shape_err("matmul_tn", ta, tb)),
        }
        let v = ta.matmul_tn(tb);
        Ok(self.push(v, Op::MatMulTN(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("div", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// Adds the rank-1 `row` to every row of the matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(row));
        let (r, c) = match (ta.dims2(), tb.shape()) {
            (Some((r, c)), [n]) if *n == c => (r, c),
            _ => return Err(shape_err("add_row", ta, tb)),
        };
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (o, &b) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let v = Tensor::with_shape(data, &[r, c]);
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (r, c) = ta
            .dims2()
            .ok_or_else(|| AutodiffError::Shape(format!("sum_rows on {:?}", ta.shape())))?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&ta.data()[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::SumRows(a), &[a]))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let r = self.value(a).dims2().map(|d| d.0).unwrap_or(1);
        let s = self.sum_rows(a)?;
        Ok(self.scale(s, 1.0 / r as f64))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let c = match ta.shape() {
            [c] => *c,
            _ => {
                return Err(AutodiffError::Shape(format!(
                    "broadcast_rows on {:?}",
                    ta.shape()
                )))
            }
        };
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(ta.data());
        }
        let v = Tensor::with_shape(data, &[rows, c]);
        Ok(self.push(v, Op::BroadcastRows(a), &[a]))
    }

    /// `max(x, 0)` with derivative 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), &[a])
    }

    /// `max(x, 0)` with subgradient 1 at the kink, so a loss sitting exactly
    /// on the threshold counts as part of the tail.
    pub fn hinge(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { 0.0 });
        self.push(v, Op::Hinge(a), &[a])
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a), &[a])
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Broadcasts a one-element node to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let x = self
            .value(a)
            .item()
            .ok_or_else(|| AutodiffError::Shape(format!("expand from {:?}", self.shape(a))))?;
        Ok(self.push(Tensor::filled(shape, x), Op::Expand(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.dims2().is_none() {
            return Err(AutodiffError::Shape(format!("transpose on {:?}", ta.shape())));
        }
        let v = ta.transpose();
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    /// View `len(shape)` consecutive entries of the flat vector `src`,
    /// starting at `offset`, as a tensor of `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ts = self.value(src);
        let n: usize = shape.iter().product();
        if ts.shape().len() != 1 || offset + n > ts.len() {
            return Err(AutodiffError::Shape(format!(
                "slice [{offset}, {}) of {:?}",
                offset + n,
                ts.shape()
            )));
        }
        let v = Tensor::with_shape(ts.data()[offset..offset + n].to_vec(), shape);
        Ok(self.push(v, Op::Slice { src, offset }, &[src]))
    }

    /// Flatten `src` into a zero vector of length `total` at `offset`.
    pub fn scatter(&mut self, src: Var, offset: usize, total: usize) -> Result<Var, AutodiffError> {
        let ts = self.value(src);
        if offset + ts.len() > total {
            return Err(AutodiffError::Shape(format!(
                "scatter of {} values at {offset} into {total}",
                ts.len()
            )));
        }
        let mut data = vec![0.0; total];
        data[offset..offset + ts.len()].copy_from_slice(ts.data());
        Ok(self.push(Tensor::vector(data), Op::Scatter { src, offset }, &[src]))
    }

    // adjoint of every slice taken from one vector, accumulated in one node
    fn scatter_many(&mut self, parts: Vec<(Var, usize)>, total: usize) -> Result<Var, AutodiffError> {
        let mut data = vec![0.0; total];
        for &(src, offset) in &parts {
            let ts = self.value(src);
            if offset + ts.len() > total {
                return Err(AutodiffError::Shape(format!(
                    "scatter of {} values at {offset} into {total}",
                    ts.len()
                )));
            }
            for (o, &x) in data[offset..offset + ts.len()].iter_mut().zip(ts.data()) {
                *o += x;
            }
        }
        let inputs: Vec<Var> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::vector(data), Op::ScatterMany { parts }, &inputs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, ca, cb) = match (ta.dims2(), tb.dims2()) {
            (Some((r, ca)), Some((r2, cb))) if r == r2 => (r, ca, cb),
            _ => return Err(shape_err("concat_cols", ta, tb)),
        };
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let v = Tensor::with_shape(data, &[r, ca + cb]);
        Ok(self.push(v, Op::ConcatCols(a, b), &[a, b]))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ts = self.value(src);
        let (r, c) = match ts.dims2() {
            Some((r, c)) if start + len <= c => (r, c),
            _ => {
                return Err(AutodiffError::Shape(format!(
                    "slice_cols [{start}, {}) of {:?}",
                    start + len,
                    ts.shape()
                )))
            }
        };
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&ts.data()[i * c + start..i * c + start + len]);
        }
        let v = Tensor::with_shape(data, &[r, len]);
        Ok(self.push(v, Op::SliceCols { src, start }, &[src]))
    }

    pub fn pad_cols(&mut self, src: Var, start: usize, total: usize) -> Result<Var, AutodiffError> {
        let ts = self.value(src);
        let (r, c) = match ts.dims2() {
            Some((r, c)) if start + c <= total => (r, c),
            _ => {
                return Err(AutodiffError::Shape(format!(
                    "pad_cols of {:?} at {start} into {total}",
                    ts.shape()
                )))
            }
        };
        let mut data = vec![0.0; r * total];
        for i in 0..r {
            data[i * total + start..i * total + start + c]
                .copy_from_slice(&ts.data()[i * c..(i + 1) * c]);
        }
        let v = Tensor::with_shape(data, &[r, total]);
        Ok(self.push(v, Op::PadCols { src, start }, &[src]))
    }

    /// Reverse-mode gradient of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are differentiable nodes;
    /// otherwise they are constants (no higher-order path is recorded).
    pub fn grad(
        &mut self,
        output: Var,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Gradients, AutodiffError> {
        let out_val = self.value(output);
        if !out_val.is_scalar_like() {
            return Err(AutodiffError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let prev = self.recording;
        self.recording = create_graph;
        let result = self.backward(output, wrt);
        self.recording = prev;
        result
    }

    fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Gradients, AutodiffError> {
        let n = output.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if self.nodes[output.0].requires_grad {
            let shape = self.shape(output).to_vec();
            adj[output.0] = Some(self.constant(Tensor::filled(&shape, 1.0)));
        }
        // only nodes that lead to one of `wrt` need an adjoint
        let lowest = wrt.iter().map(|v| v.0).min().unwrap_or(n);

        // slice adjoints wait here until their source node is reached
        let mut pending: Vec<Vec<(Var, usize)>> = vec![Vec::new(); n];

        for i in (lowest..n).rev() {
            if !pending[i].is_empty() {
                let parts = std::mem::take(&mut pending[i]);
                let total = self.value(Var(i)).len();
                let s = self.scatter_many(parts, total)?;
                adj[i] = Some(match adj[i] {
                    Some(acc) => self.add(acc, s)?,
                    None => s,
                });
            }
            let Some(g) = adj[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let node = Var(i);
            if let Op::Slice { src, offset } = op {
                if self.nodes[src.0].requires_grad {
                    pending[src.0].push((g, offset));
                }
                continue;
            }
            let contribs = self.vjp(&op, node, g)?;
            for (input, ga) in contribs {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                adj[input.0] = Some(match adj[input.0] {
                    Some(acc) => self.add(acc, ga)?,
                    None => ga,
                });
            }
        }

        let mut vars = Vec::with_capacity(wrt.len());
        let mut detached = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj.get(w.0).copied().flatten() {
                Some(g) => {
                    vars.push(g);
                    detached.push(false);
                }
                None => {
                    let shape = self.shape(w).to_vec();
                    vars.push(self.constant(Tensor::zeros(&shape)));
                    detached.push(true);
                }
            }
        }
        Ok(Gradients { vars, detached })
    }

    /// Vector-Jacobian product of one node: `(input, adjoint contribution)`.
    fn vjp(&mut self, op: &Op, node: Var, g: Var) -> Result<Vec<(Var, Var)>, AutodiffError> {
        let rg = |s: &Self, v: Var| s.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(self, a) {
                    out.push((a, self.matmul_nt(g, b)?));
                }
                if rg(self, b) {
                    out.push((b, self.matmul_tn(a, g)?));
                }
            }
            Op::MatMulNT(a, b) => {
                if rg(self, a) {
                    out.push((a, self.matmul(g, b)?));
                }
                if rg(self, b) {
                    out.push((b, self.matmul_tn(g, a)?));
                }
            }
            Op::MatMulTN(a, b) => {
                if rg(self, a) {
                    out.push((a, self.matmul_nt(b, g)?));
                }
                if rg(self, b) {
                    out.push((b, self.matmul(a, g)?));
                }
            }
            Op::Add(a, b) => {
                out.push((a, g));
                out.push((b, g));
            }
            Op::Sub(a, b) => {
                out.push((a, g));
                if rg(self, b) {
                    out.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if rg(self, a) {
                    out.push((a, self.mul(g, b)?));
                }
                if rg(self, b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if rg(self, a) {
                    out.push((a, self.div(g, b)?));
                }
                if rg(self, b) {
                    // d(a/b)/db = -(a/b)/b
                    let gy = self.mul(g, node)?;
                    let q = self.div(gy, b)?;
                    out.push((b, self.scale(q, -1.0)));
                }
            }
            Op::AddRow(a, row) => {
                out.push((a, g));
                if rg(self, row) {
                    out.push((row, self.sum_rows(g)?));
                }
            }
            Op::SumRows(a) => {
                let r = self.value(a).dims2().map(|d| d.0).unwrap_or(1);
                out.push((a, self.broadcast_rows(g, r)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(g)?)),
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                out.push((a, self.mul(g, m)?));
            }
            Op::Hinge(a) => {
                let mask = self.value(a).map(|x| if x >= 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                out.push((a, self.mul(g, m)?));
            }
            Op::Sin(a) => {
                let c = self.cos(a);
                out.push((a, self.mul(g, c)?));
            }
            Op::Cos(a) => {
                let s = self.sin(a);
                let gs = self.mul(g, s)?;
                out.push((a, self.scale(gs, -1.0)));
            }
            Op::Exp(a) => out.push((a, self.mul(g, node)?)),
            Op::Log(a) => out.push((a, self.div(g, a)?)),
            Op::Square(a) => {
                let ga = self.mul(g, a)?;
                out.push((a, self.scale(ga, 2.0)));
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::AddConst(a) => out.push((a, g)),
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.expand(g, &shape)?));
            }
            Op::Expand(a) => {
                let s = self.sum(g);
                let shape = self.shape(a).to_vec();
                let s = if shape.is_empty() {
                    s
                } else {
                    self.expand(s, &shape)?
                };
                out.push((a, s));
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::Slice { src, offset } => {
                let total = self.value(src).len();
                out.push((src, self.scatter(g, offset, total)?));
            }
            Op::Scatter { src, offset } => {
                let shape = self.shape(src).to_vec();
                out.push((src, self.slice(g, offset, &shape)?));
            }
            Op::ScatterMany { ref parts } => {
                for &(src, offset) in parts {
                    if rg(self, src) {
                        let shape = self.shape(src).to_vec();
                        out.push((src, self.slice(g, offset, &shape)?));
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).dims2().map(|d| d.1).unwrap_or(0);
                let cb = self.value(b).dims2().map(|d| d.1).unwrap_or(0);
                if rg(self, a) {
                    out.push((a, self.slice_cols(g, 0, ca)?));
                }
                if rg(self, b) {
                    out.push((b, self.slice_cols(g, ca, cb)?));
                }
            }
            Op::SliceCols { src, start } => {
                let total = self.value(src).dims2().map(|d| d.1).unwrap_or(0);
                out.push((src, self.pad_cols(g, start, total)?));
            }
            Op::PadCols { src, start } => {
                let len = self.value(src).dims2().map(|d| d.1).unwrap_or(0);
                out.push((src, self.slice_cols(g, start, len)?));
            }
        }
        Ok(out)
    }
}

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use super::{Elem, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{dim_err, Error, Result};

/// Clamp applied to probabilities inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Bce(Var, Tensor<F>),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cin: usize,
        cout: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        geom: ConvGeom,
        c: usize,
    },
    GlobalAvgPool(Var),
}

struct Node<'p, F: Elem> {
    value: Cow<'p, Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records executed operations in order so gradients can be replayed in reverse.
///
/// Parameters are borrowed from a [`ParamStore`] for the lifetime of the tape;
/// `backward` hands back a [`Gradients`] value that the caller applies once
/// the tape is gone.
pub struct Tape<'p, F: Elem = f32> {
    nodes: Vec<Node<'p, F>>,
}

impl<'p, F: Elem> Default for Tape<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Elem> Tape<'p, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Result<Var> {
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input. Gradients never flow into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrows a parameter. Frozen parameters behave like constants.
    pub fn param(&mut self, store: &'p ParamStore<F>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.value),
            op: Op::Param(id),
            needs_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    fn row_dims(&self, a: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let (r, c) = self.value(a).dims2()?;
        if self.value(row).len() != c {
            return dim_err(format!(
                "{what}: row of shape {:?} does not broadcast over {:?}",
                self.shape(row),
                self.shape(a)
            ));
        }
        Ok((r, c))
    }

    /// Adds a length-`c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_dims(a, row, "add_row")?;
        let rv = self.value(row).data();
        let ta = self.value(a);
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + rv[i % c]).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of an `r×c` matrix by a length-`c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_dims(a, row, "mul_row")?;
        let rv = self.value(row).data();
        let ta = self.value(a);
        let data = ta.data().iter().enumerate().map(|(i, &x)| x * rv[i % c]).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(F::zero()));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Softmax over every element of a vector-shaped tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), softmax(t.data())?)?;
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat of nothing");
        }
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return dim_err(format!("concat: row counts {rows} and {r} differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![rows, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start >= end || end > c {
            return dim_err(format!("slice_cols {start}..{end} out of range for {c} columns"));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let out = Tensor::from_parts(vec![r, end - start], data)?;
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start, end), ng)
    }

    /// Stacks equally sized vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return dim_err("stack_rows of nothing");
        }
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if self.value(r).len() != n {
                return dim_err(format!("stack_rows: lengths {n} and {} differ", self.value(r).len()));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let out = Tensor::from_parts(vec![rows.len(), n], data)?;
        let ng = rows.iter().any(|&r| self.needs(r));
        self.push(out, Op::StackRows(rows.to_vec()), ng)
    }

    /// Row `t` of a matrix as a `[1, c]` vector.
    pub fn row(&mut self, a: Var, t: usize) -> Result<Var> {
        let out = self.value(a).rows(t, t + 1)?;
        let ng = self.needs(a);
        self.push(out, Op::Row(a, t), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / F::from_f64(t.len() as f64));
        let ng = self.needs(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Mean binary cross-entropy between scores in (0,1) and binary targets.
    pub fn bce(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return dim_err(format!("bce: scores {:?} vs labels {:?}", p.shape(), target.shape()));
        }
        let loss = bce(p.data(), target.data());
        let ng = self.needs(pred);
        self.push(Tensor::scalar(loss), Op::Bce(pred, target.clone()), ng)
    }

    /// Full 2-D convolution, "same" padding. `x` is `[h, w, cin]`, `w` is `[k, k, cin, cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (h, wd, cin) = hwc(self.shape(x))?;
        let (k, cout) = match *self.shape(w) {
            [k1, k2, ci, co] if k1 == k2 && ci == cin => (k1, co),
            ref s => return dim_err(format!("conv2d kernel {s:?} does not fit input {:?}", self.shape(x))),
        };
        let geom = ConvGeom::new(h, wd, k, stride);
        let cols = kernels::im2col(self.value(x).data(), cin, &geom);
        let mut out = vec![F::zero(); geom.oh * geom.ow * cout];
        kernels::matmul(
            &cols,
            self.value(w).data(),
            &mut out,
            geom.oh * geom.ow,
            k * k * cin,
            cout,
        );
        let out = Tensor::from_parts(vec![geom.oh, geom.ow, cout], out)?;
        let ng = self.needs(x) || self.needs(w);
        self.push(out, Op::Conv2d { x, w, geom, cin, cout }, ng)
    }

    /// Depthwise convolution, "same" padding. `x` is `[h, w, c]`, `w` is `[k, k, c]`.
    pub fn depthwise(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (h, wd, c) = hwc(self.shape(x))?;
        let k = match *self.shape(w) {
            [k1, k2, ch] if k1 == k2 && ch == c => k1,
            ref s => return dim_err(format!("depthwise kernel {s:?} does not fit input {:?}", self.shape(x))),
        };
        let geom = ConvGeom::new(h, wd, k, stride);
        let out = kernels::depthwise(self.value(x).data(), self.value(w).data(), c, &geom);
        let out = Tensor::from_parts(vec![geom.oh, geom.ow, c], out)?;
        let ng = self.needs(x) || self.needs(w);
        self.push(out, Op::Depthwise { x, w, geom, c }, ng)
    }

    /// Mean over the spatial axes of `[h, w, c]`, giving `[1, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(x))?;
        let src = self.value(x).data();
        let mut acc = vec![F::zero(); c];
        for px in 0..h * w {
            for (a, &v) in acc.iter_mut().zip(&src[px * c..(px + 1) * c]) {
                *a = *a + v;
            }
        }
        let n = F::from_f64((h * w) as f64);
        let out = Tensor::row(acc.into_iter().map(|a| a / n).collect());
        let ng = self.needs(x);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads, &mut out)?;
        }
        Ok(Gradients { by_param: out })
    }

    fn backprop(
        &self,
        i: usize,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        out: &mut BTreeMap<ParamId, Tensor<F>>,
    ) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let t = Tensor::from_parts(node.value.shape().to_vec(), g.to_vec())?;
                match out.get_mut(id) {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                            *a = *a + b;
                        }
                    }
                    None => {
                        out.insert(*id, t);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                if self.needs(*a) {
                    let ga = self.grad_buf(grads, *a);
                    kernels::matmul_nt_acc(g, self.value(*b).data(), ga, m, k, n);
                }
                if self.needs(*b) {
                    let gb = self.grad_buf(grads, *b);
                    kernels::matmul_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        axpy(self.grad_buf(grads, v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let ga = self.grad_buf(grads, *a);
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * bi;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let gb = self.grad_buf(grads, *b);
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let c = self.value(*row).len();
                if self.needs(*a) {
                    axpy(self.grad_buf(grads, *a), g);
                }
                if self.needs(*row) {
                    let gr = self.grad_buf(grads, *row);
                    for (j, &gi) in g.iter().enumerate() {
                        gr[j % c] = gr[j % c] + gi;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let c = self.value(*row).len();
                if self.needs(*a) {
                    let rv = self.value(*row).data();
                    let ga = self.grad_buf(grads, *a);
                    for (j, (d, &gi)) in ga.iter_mut().zip(g).enumerate() {
                        *d = *d + gi * rv[j % c];
                    }
                }
                if self.needs(*row) {
                    let av = self.value(*a).data();
                    let gr = self.grad_buf(grads, *row);
                    for (j, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        gr[j % c] = gr[j % c] + gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = self.grad_buf(grads, *a);
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d = *d + gi * *s;
                }
            }
            Op::Sigmoid(a) => {
                let ga = self.grad_buf(grads, *a);
                for ((d, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + gi * yi * (F::one() - yi);
                }
            }
            Op::Tanh(a) => {
                let ga = self.grad_buf(grads, *a);
                for ((d, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + gi * (F::one() - yi * yi);
                }
            }
            Op::Relu(a) => {
                let ga = self.grad_buf(grads, *a);
                for ((d, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    if yi > F::zero() {
                        *d = *d + gi;
                    }
                }
            }
            Op::Softmax(a) => {
                let dot: F = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                let ga = self.grad_buf(grads, *a);
                for ((d, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + yi * (gi - dot);
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = node.value.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2()?.1;
                    if self.needs(p) {
                        let gp = self.grad_buf(grads, p);
                        for r in 0..rows {
                            axpy(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let c = self.value(*a).dims2()?.1;
                let w = end - start;
                let ga = self.grad_buf(grads, *a);
                for r in 0..g.len() / w {
                    axpy(&mut ga[r * c + start..r * c + end], &g[r * w..(r + 1) * w]);
                }
            }
            Op::StackRows(rows) => {
                let n = node.value.dims2()?.1;
                for (t, &r) in rows.iter().enumerate() {
                    if self.needs(r) {
                        axpy(self.grad_buf(grads, r), &g[t * n..(t + 1) * n]);
                    }
                }
            }
            Op::Row(a, t) => {
                let c = g.len();
                let ga = self.grad_buf(grads, *a);
                axpy(&mut ga[t * c..(t + 1) * c], g);
            }
            Op::Reshape(a) => axpy(self.grad_buf(grads, *a), g),
            Op::Sum(a) => {
                let ga = self.grad_buf(grads, *a);
                ga.iter_mut().for_each(|d| *d = *d + g[0]);
            }
            Op::Mean(a) => {
                let n = F::from_f64(self.value(*a).len() as f64);
                let ga = self.grad_buf(grads, *a);
                ga.iter_mut().for_each(|d| *d = *d + g[0] / n);
            }
            Op::Bce(pred, target) => {
                let p = self.value(*pred).data();
                let n = F::from_f64(p.len() as f64);
                let eps = F::from_f64(BCE_EPS);
                let gp = self.grad_buf(grads, *pred);
                for ((d, &pi), &yi) in gp.iter_mut().zip(p).zip(target.data()) {
                    if pi <= eps || pi >= F::one() - eps {
                        continue;
                    }
                    let dp = -yi / pi + (F::one() - yi) / (F::one() - pi);
                    *d = *d + g[0] * dp / n;
                }
            }
            Op::Conv2d { x, w, geom, cin, cout } => {
                let rows = geom.oh * geom.ow;
                let ncol = geom.k * geom.k * cin;
                let cols = kernels::im2col(self.value(*x).data(), *cin, geom);
                if self.needs(*w) {
                    let gw = self.grad_buf(grads, *w);
                    kernels::matmul_tn_acc(&cols, g, gw, rows, ncol, *cout);
                }
                if self.needs(*x) {
                    let mut dcols = vec![F::zero(); rows * ncol];
                    kernels::matmul_nt_acc(g, self.value(*w).data(), &mut dcols, rows, ncol, *cout);
                    let gx = self.grad_buf(grads, *x);
                    kernels::col2im_acc(&dcols, *cin, geom, gx);
                }
            }
            Op::Depthwise { x, w, geom, c } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                // Two separate passes keep the borrow of `grads` single.
                if self.needs(*x) {
                    let gx = self.grad_buf(grads, *x);
                    kernels::depthwise_backward(xv, wv, g, *c, geom, Some(gx), None);
                }
                if self.needs(*w) {
                    let gw = self.grad_buf(grads, *w);
                    kernels::depthwise_backward(xv, wv, g, *c, geom, None, Some(gw));
                }
            }
            Op::GlobalAvgPool(x) => {
                let c = g.len();
                let px = self.value(*x).len() / c;
                let n = F::from_f64(px as f64);
                let gx = self.grad_buf(grads, *x);
                for p in 0..px {
                    for ch in 0..c {
                        gx[p * c + ch] = gx[p * c + ch] + g[ch] / n;
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> &'g mut [F] {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::Scale(..) => "scale",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Softmax(_) => "softmax",
        Op::Concat(_) => "concat",
        Op::SliceCols(..) => "slice_cols",
        Op::StackRows(_) => "stack_rows",
        Op::Row(..) => "row",
        Op::Reshape(_) => "reshape",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Bce(..) => "bce",
        Op::Conv2d { .. } => "conv2d",
        Op::Depthwise { .. } => "depthwise",
        Op::GlobalAvgPool(_) => "global_avg_pool",
    }
}

fn axpy<F: Elem>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn hwc(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        ref s => dim_err(format!("expected an [h, w, c] feature map, got {s:?}")),
    }
}

#[inline]
pub(crate) fn sigmoid<F: Elem>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<F: Elem>(x: &[F]) -> Result<Vec<F>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let m = x.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Mean binary cross-entropy with scores clamped to `[eps, 1 - eps]`.
pub fn bce<F: Elem>(pred: &[F], target: &[F]) -> F {
    let eps = F::from_f64(BCE_EPS);
    let n = F::from_f64(pred.len() as f64);
    let total: F = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(F::one() - eps);
            -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        })
        .sum();
    total / n
}

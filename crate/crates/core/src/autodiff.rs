//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. Node indices
//! are a topological order, so the reverse sweep walks the tape backwards.
//! Nodes that depend on no parameter leaf are skipped during the sweep.

use std::rc::Rc;

use crate::error::{Error, Result, dim_err};
use crate::tensor::{Layout, Tensor, gemm};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `x · w + b` with `b` broadcast over rows.
    Linear(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a + c · b`
    AddScaled(Var, Var, f64),
    /// Element-wise product with a constant (dropout masks).
    MulConst(Var, Rc<Tensor>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    Sum(Var),
    Mse(Var, Rc<Tensor>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a later reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
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

    /// A trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Linear(x, w, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return dim_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `a + c · b`, the shape of an explicit Euler update.
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Result<Var> {
        self.same_shape(a, b, "add_scaled")?;
        Ok(self.zip(a, b, Op::AddScaled(a, b, c), |x, y| x + c * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        if self.value(a).shape() != mask.shape() {
            return dim_err("mul_const: mask shape differs");
        }
        let data = self.value(a).data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(mask.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, Rc::new(mask)), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(relu);
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = concat_cols(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>())?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = (src.rows(), src.cols());
        if start > end || end > c {
            return dim_err(format!("slice {start}..{end} of width {c}"));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let out = Tensor::matrix(r, w, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start, end), rg))
    }

    /// Stacks matrices of equal width on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return dim_err("concat_rows: width mismatch");
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = (src.rows(), src.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= r {
                return dim_err(format!("gather row {i} of {r}"));
            }
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::matrix(index.len(), c, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, index), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean squared difference against a fixed target.
    pub fn mse(&mut self, a: Var, target: Rc<Tensor>) -> Result<Var> {
        let v = self.value(a);
        if v.shape() != target.shape() {
            return dim_err(format!("mse: {:?} vs target {:?}", v.shape(), target.shape()));
        }
        let n = v.len().max(1) as f64;
        let s: f64 = v.data().iter().zip(target.data()).map(|(x, t)| (x - t) * (x - t)).sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, target), rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(*a) {
                    let ga = slot(grads, *a, va.shape());
                    gemm(m, n, k, g.data(), Layout::N, vb.data(), Layout::T, ga.data_mut(), 1.0);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, vb.shape());
                    gemm(k, m, n, va.data(), Layout::T, g.data(), Layout::N, gb.data_mut(), 1.0);
                }
            }
            Op::Linear(x, w, b) => {
                let (vx, vw) = (val(*x), val(*w));
                let (m, k, n) = (vx.rows(), vx.cols(), vw.cols());
                if wants(*x) {
                    let gx = slot(grads, *x, vx.shape());
                    gemm(m, n, k, g.data(), Layout::N, vw.data(), Layout::T, gx.data_mut(), 1.0);
                }
                if wants(*w) {
                    let gw = slot(grads, *w, vw.shape());
                    gemm(k, m, n, vx.data(), Layout::T, g.data(), Layout::N, gw.data_mut(), 1.0);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, val(*b).shape());
                    let gbd = gb.data_mut();
                    for r in 0..m {
                        for (acc, x) in gbd.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, wants(*a), g, |x, _| x);
                accumulate(grads, *b, wants(*b), g, |x, _| x);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, wants(*a), g, |x, _| x);
                accumulate(grads, *b, wants(*b), g, |x, _| -x);
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b).data();
                    accumulate(grads, *a, true, g, |x, i| x * other[i]);
                }
                if wants(*b) {
                    let other = val(*a).data();
                    accumulate(grads, *b, true, g, |x, i| x * other[i]);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, wants(*a), g, |x, _| c * x),
            Op::AddScaled(a, b, c) => {
                accumulate(grads, *a, wants(*a), g, |x, _| x);
                accumulate(grads, *b, wants(*b), g, |x, _| c * x);
            }
            Op::MulConst(a, mask) => {
                let m = mask.data();
                accumulate(grads, *a, wants(*a), g, |x, i| x * m[i]);
            }
            Op::Relu(a) => {
                let out = node.value.data();
                accumulate(grads, *a, wants(*a), g, |x, i| if out[i] > 0.0 { x } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                accumulate(grads, *a, wants(*a), g, |x, i| x * out[i] * (1.0 - out[i]));
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                accumulate(grads, *a, wants(*a), g, |x, i| x * (1.0 - out[i] * out[i]));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if wants(*p) {
                        let gp = slot(grads, *p, val(*p).shape());
                        let d = gp.data_mut();
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            for (acc, x) in d[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *acc += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                if wants(*a) {
                    let total = val(*a).cols();
                    let w = end - start;
                    let ga = slot(grads, *a, val(*a).shape());
                    let d = ga.data_mut();
                    for r in 0..g.rows() {
                        for (acc, x) in
                            d[r * total + start..r * total + end].iter_mut().zip(&g.data()[r * w..(r + 1) * w])
                        {
                            *acc += x;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if wants(*p) {
                        let gp = slot(grads, *p, val(*p).shape());
                        for (acc, x) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *acc += x;
                        }
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, index) => {
                if wants(*a) {
                    let c = g.cols();
                    let ga = slot(grads, *a, val(*a).shape());
                    let d = ga.data_mut();
                    for (r, &i) in index.iter().enumerate() {
                        for (acc, x) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, wants(*a), val(*a), |_, _| s);
            }
            Op::Mse(a, target) => {
                let v = val(*a).data();
                let t = target.data();
                let scale = 2.0 * g.data()[0] / v.len().max(1) as f64;
                accumulate(grads, *a, wants(*a), val(*a), |_, i| scale * (v[i] - t[i]));
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Adds `f(src[i], i)` into the gradient of `v`. `src` only supplies the
/// shape and the per-element input.
fn accumulate(
    grads: &mut [Option<Tensor>],
    v: Var,
    wanted: bool,
    src: &Tensor,
    f: impl Fn(f64, usize) -> f64,
) {
    if !wanted {
        return;
    }
    let t = slot(grads, v, src.shape());
    for (i, (acc, &x)) in t.data_mut().iter_mut().zip(src.data()).enumerate() {
        *acc += f(x, i);
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 { x } else { 0.0 }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · w + b` with row broadcast of the bias.
pub(crate) fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (x.rows(), x.cols());
    if w.rows() != k || b.len() != w.cols() {
        return dim_err(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    let n = w.cols();
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(b.data());
    }
    gemm(m, k, n, x.data(), Layout::N, w.data(), Layout::N, &mut out, 1.0);
    Tensor::matrix(m, n, out)
}

pub(crate) fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().map_or(0, |p| p.rows());
    if parts.iter().any(|p| p.rows() != rows) {
        return dim_err("concat_cols: row count mismatch");
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let p = tape.param(&Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).data(), &[1.0; 4]);
    }

    #[test]
    fn squared_norm_gives_twice_p() {
        let mut tape = Tape::new();
        let vals = vec![1.0, -2.0, 3.0];
        let p = tape.param(&Tensor::vector(vals.clone()));
        let sq = tape.mul(p, p).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        let expect: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.get(p).data(), expect.as_slice());
    }

    #[test]
    fn unused_leaf_gets_zero() {
        let mut tape = Tape::new();
        let p = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        let q = tape.param(&Tensor::vector(vec![5.0, 6.0, 7.0]));
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(q).data(), &[0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn mse_of_self_is_zero() {
        let mut tape = Tape::new();
        let t = Tensor::matrix(2, 2, vec![0.3, -1.0, 4.0, 2.0]).unwrap();
        let p = tape.param(&t);
        let l = tape.mse(p, Rc::new(t)).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }
}

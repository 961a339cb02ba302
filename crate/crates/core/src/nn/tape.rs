//! Reverse-mode automatic differentiation over a recorded tape.

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    /// y = W x + b, x: (in, n), W: (out, in), b: (out, 1).
    Dense { x: Var, w: ParamId, b: ParamId },
    /// Causal dilated convolution, x: (cin, T), W: (cout, cin * k), b: (cout, 1).
    Conv { x: Var, w: ParamId, b: ParamId, k: usize, dilation: usize },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    LastCol(Var),
    Sum(Var),
    Mse { pred: Var, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients from one backward pass: one tensor per store parameter plus
/// one per recorded node.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    nodes: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { params: store.zeros_like(), nodes: Vec::new() }
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    /// Gradient with respect to a recorded value (inputs included).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0)
    }

    /// Accumulate the parameter gradients of another pass.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.params.iter_mut().for_each(|g| g.scale(k));
    }

    pub fn norm(&self) -> f64 {
        self.params.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Forward computation record. Built against an immutable parameter store;
/// `backward` may run once per tape.
#[derive(Debug)]
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new(), consumed: false }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.get(id).clone();
        self.push(t, Op::Param(id))
    }

    pub fn dense(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (wt, bt, xt) = (self.store.get(w), self.store.get(b), self.value(x));
        if wt.cols != xt.rows || bt.rows != wt.rows || bt.cols != 1 {
            return Err(Error::shape(format!(
                "dense W {:?}, b {:?}, x {:?}",
                wt.shape(),
                bt.shape(),
                xt.shape()
            )));
        }
        let n = xt.cols;
        let mut y = Tensor::zeros(wt.rows, n);
        for o in 0..wt.rows {
            let wrow = &wt.data[o * wt.cols..(o + 1) * wt.cols];
            let yrow = &mut y.data[o * n..(o + 1) * n];
            yrow.fill(bt.data[o]);
            for (i, &wv) in wrow.iter().enumerate() {
                let xrow = &xt.data[i * n..(i + 1) * n];
                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                    *yv += wv * xv;
                }
            }
        }
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    pub fn conv1d_causal(&mut self, x: Var, w: ParamId, b: ParamId, k: usize, dilation: usize) -> Result<Var> {
        let (wt, bt, xt) = (self.store.get(w), self.store.get(b), self.value(x));
        if k == 0 || dilation == 0 {
            return Err(Error::param("kernel size and dilation must be at least 1"));
        }
        if wt.cols != xt.rows * k || bt.rows != wt.rows || bt.cols != 1 {
            return Err(Error::shape(format!(
                "conv W {:?} (k={k}), b {:?}, x {:?}",
                wt.shape(),
                bt.shape(),
                xt.shape()
            )));
        }
        let (cin, len, cout) = (xt.rows, xt.cols, wt.rows);
        let mut y = Tensor::zeros(cout, len);
        for o in 0..cout {
            let yrow = &mut y.data[o * len..(o + 1) * len];
            yrow.fill(bt.data[o]);
            for c in 0..cin {
                let xrow = &xt.data[c * len..(c + 1) * len];
                for i in 0..k {
                    let wv = wt.data[o * wt.cols + c * k + i];
                    let shift = dilation * i;
                    if shift >= len {
                        break;
                    }
                    for t in shift..len {
                        yrow[t] += wv * xrow[t - shift];
                    }
                }
            }
        }
        Ok(self.push(y, Op::Conv { x, w, b, k, dilation }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Last column of a (channels, length) sequence, as a column vector.
    pub fn last_col(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.cols == 0 {
            return Err(Error::shape("last_col of an empty sequence"));
        }
        let y = Tensor::column(&xt.col(xt.cols - 1));
        Ok(self.push(y, Op::LastCol(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        p.check_same(target)?;
        let n = p.data.len().max(1) as f64;
        let l = p.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(l), Op::Mse { pred, target: target.clone() }))
    }

    /// Gradients of a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).data.len() != 1 {
            return Err(Error::shape("backward needs a scalar loss; use backward_with for other nodes"));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Vector-Jacobian product: propagate `seed` (d objective / d out) back
    /// from node `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<Gradients> {
        if self.consumed || out.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        self.consumed = true;
        seed.check_same(self.value(out))?;
        let mut params = self.store.zeros_like();
        let mut grads: Vec<Tensor> = self.nodes.iter().map(|n| Tensor::zeros(n.value.rows, n.value.cols)).collect();
        grads[out.0] = seed;

        for idx in (0..=out.0).rev() {
            let g = std::mem::replace(&mut grads[idx], Tensor::zeros(0, 0));
            if g.data.iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params[id.0].add_assign(&g)?,
                Op::Dense { x, w, b } => {
                    let (wt, xt) = (self.store.get(*w), &self.nodes[x.0].value);
                    let n = xt.cols;
                    let (gw, gb) = two_mut(&mut params, w.0, b.0);
                    let gx = &mut grads[x.0];
                    for o in 0..wt.rows {
                        let grow = &g.data[o * n..(o + 1) * n];
                        gb.data[o] += grow.iter().sum::<f64>();
                        for i in 0..wt.cols {
                            let xrow = &xt.data[i * n..(i + 1) * n];
                            gw.data[o * wt.cols + i] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            let wv = wt.data[o * wt.cols + i];
                            let gxrow = &mut gx.data[i * n..(i + 1) * n];
                            for (gv, gyv) in gxrow.iter_mut().zip(grow) {
                                *gv += wv * gyv;
                            }
                        }
                    }
                }
                Op::Conv { x, w, b, k, dilation } => {
                    let (wt, xt) = (self.store.get(*w), &self.nodes[x.0].value);
                    let (cin, len) = (xt.rows, xt.cols);
                    let (gw, gb) = two_mut(&mut params, w.0, b.0);
                    let gx = &mut grads[x.0];
                    for o in 0..wt.rows {
                        let grow = &g.data[o * len..(o + 1) * len];
                        gb.data[o] += grow.iter().sum::<f64>();
                        for c in 0..cin {
                            let xrow = &xt.data[c * len..(c + 1) * len];
                            for i in 0..*k {
                                let shift = dilation * i;
                                if shift >= len {
                                    break;
                                }
                                let widx = o * wt.cols + c * k + i;
                                let wv = wt.data[widx];
                                let mut acc = 0.0;
                                for t in shift..len {
                                    acc += grow[t] * xrow[t - shift];
                                    gx.data[c * len + t - shift] += wv * grow[t];
                                }
                                gw.data[widx] += acc;
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let gx = &mut grads[x.0];
                    for ((gv, yv), gy) in gx.data.iter_mut().zip(&y.data).zip(&g.data) {
                        if *yv > 0.0 {
                            *gv += gy;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = &mut grads[x.0];
                    for ((gv, yv), gy) in gx.data.iter_mut().zip(&y.data).zip(&g.data) {
                        *gv += gy * (1.0 - yv * yv);
                    }
                }
                Op::Add(a, b) => {
                    grads[a.0].add_assign(&g)?;
                    grads[b.0].add_assign(&g)?;
                }
                Op::LastCol(x) => {
                    let gx = &mut grads[x.0];
                    let last = gx.cols - 1;
                    for r in 0..gx.rows {
                        *gx.at_mut(r, last) += g.data[r];
                    }
                }
                Op::Sum(x) => {
                    let s = g.data[0];
                    grads[x.0].data.iter_mut().for_each(|v| *v += s);
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[pred.0].value;
                    let scale = 2.0 * g.data[0] / p.data.len().max(1) as f64;
                    let gp = &mut grads[pred.0];
                    for ((gv, pv), tv) in gp.data.iter_mut().zip(&p.data).zip(&target.data) {
                        *gv += scale * (pv - tv);
                    }
                }
            }
            grads[idx] = g;
        }
        if params.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("parameter gradient"));
        }
        Ok(Gradients { params, nodes: grads })
    }
}

fn two_mut(v: &mut [Tensor], a: usize, b: usize) -> (&mut Tensor, &mut Tensor) {
    assert_ne!(a, b, "weight and bias must be distinct parameters");
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

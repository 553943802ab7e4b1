//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Ops append
//! nodes; [`Tape::backward`] walks them in reverse and leaves `d root / d node`
//! for every node that depends on a grad-requiring leaf.

use crate::error::{contract, dimension, Result};
use crate::ndcore::tensor::{log_softmax_in_place, matmul_raw, softmax_in_place, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    DivScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients are kept for it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let tracked = t.requires_grad();
        let mut v = t.clone();
        v.zero_grad();
        self.push(v, Op::Leaf, tracked)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        dimension!(sa == sb, "{what}: shapes {sa:?} and {sb:?} differ");
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::ndcore::tensor::matmul(self.value(a), self.value(b))?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    /// `x[B, C] + bias[C]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        dimension!(
            xv.shape().len() == 2 && bv.len() == xv.cols(),
            "add_bias: {:?} + {:?}",
            xv.shape(),
            bv.shape()
        );
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(bv.data()).for_each(|(r, b)| *r += b);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let tracked = self.tracked(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), tracked))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise op")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Divides every entry of `a` by the single value held in `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        dimension!(self.value(s).is_scalar(), "div_scalar divisor must be scalar");
        let d = self.value(s).item();
        let out = self.value(a).map(|x| x / d);
        let tracked = self.tracked(&[a, s]);
        Ok(self.push(out, Op::DivScalar(a, s), tracked))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Scale(a, k), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Relu(a), tracked)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Log(a), tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Exp(a), tracked)
    }

    fn rowwise(&mut self, a: Var, op: Op, f: fn(&mut [f64])) -> Result<Var> {
        let av = self.value(a);
        dimension!(
            av.shape().len() == 2,
            "row-wise op expects [B, C], got {:?}",
            av.shape()
        );
        let mut data = av.data().to_vec();
        data.chunks_mut(av.cols()).for_each(f);
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(out, op, tracked))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(a, Op::Softmax(a), softmax_in_place)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(a, Op::LogSoftmax(a), log_softmax_in_place)
    }

    /// Picks `a[b, idx[b]]` from each row of a `[B, C]` matrix into a `[B]` vector.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        dimension!(
            av.shape().len() == 2 && av.rows() == idx.len(),
            "gather: {} indices for {:?}",
            idx.len(),
            av.shape()
        );
        let c = av.cols();
        contract!(idx.iter().all(|&i| i < c), "gather index out of range 0..{c}");
        let data = idx.iter().enumerate().map(|(b, &i)| av.get2(b, i)).collect();
        let out = Tensor::vector(data)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(out, Op::Gather(a, idx.to_vec()), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        let tracked = self.tracked(&[a]);
        self.push(out, Op::Mean(a), tracked)
    }

    /// Populates gradients of the scalar `root` with respect to every
    /// tracked node. Earlier gradients on this tape are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        contract!(
            self.value(root).is_scalar(),
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].tracked {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward root with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn send(&mut self, to: Var, g: Vec<f64>) {
        if !self.nodes[to.0].tracked {
            return;
        }
        match &mut self.grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                // dA = G B^T, dB = A^T G
                let bt = transpose(bv.data(), k, m);
                let at = transpose(av.data(), n, k);
                let da = matmul_raw(g, &bt, n, m, k);
                let db = matmul_raw(&at, g, k, n, m);
                self.send(a, da);
                self.send(b, db);
            }
            Op::AddBias(x, bias) => {
                let c = self.value(bias).len();
                let mut db = vec![0.0; c];
                for row in g.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                self.send(x, g.to_vec());
                self.send(bias, db);
            }
            Op::Add(a, b) => {
                self.send(a, g.to_vec());
                self.send(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(a, g.to_vec());
                self.send(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let da = zip_with(g, self.value(b).data(), |g, y| g * y);
                let db = zip_with(g, self.value(a).data(), |g, x| g * x);
                self.send(a, da);
                self.send(b, db);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let da = zip_with(g, bv, |g, y| g / y);
                let db = g
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.send(a, da);
                self.send(b, db);
            }
            Op::DivScalar(a, s) => {
                let d = self.value(s).item();
                let av = self.value(a).data();
                let da = g.iter().map(|g| g / d).collect();
                let ds = -g.iter().zip(av).map(|(g, x)| g * x).sum::<f64>() / (d * d);
                self.send(a, da);
                self.send(s, vec![ds]);
            }
            Op::Scale(a, k) => self.send(a, g.iter().map(|v| v * k).collect()),
            Op::Relu(a) => {
                let da = zip_with(g, self.value(a).data(), |g, x| if x > 0.0 { g } else { 0.0 });
                self.send(a, da);
            }
            Op::Log(a) => {
                let da = zip_with(g, self.value(a).data(), |g, x| g / x);
                self.send(a, da);
            }
            Op::Exp(a) => {
                let da = zip_with(g, self.nodes[i].value.data(), |g, y| g * y);
                self.send(a, da);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut da = vec![0.0; g.len()];
                for ((dr, gr), yr) in da.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = y * (g - dot);
                    }
                }
                self.send(a, da);
            }
            Op::LogSoftmax(a) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut da = vec![0.0; g.len()];
                for ((dr, gr), yr) in da.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                    let gsum: f64 = gr.iter().sum();
                    for ((d, g), ly) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = g - ly.exp() * gsum;
                    }
                }
                self.send(a, da);
            }
            Op::Gather(a, idx) => {
                let c = self.value(a).cols();
                let mut da = vec![0.0; self.value(a).len()];
                for (b, (&j, gv)) in idx.iter().zip(g).enumerate() {
                    da[b * c + j] += gv;
                }
                self.send(a, da);
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.send(a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                self.send(a, vec![g[0] / n as f64; n]);
            }
        }
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

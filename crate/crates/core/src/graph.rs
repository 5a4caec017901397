//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution order,
//! so the node list is already topologically sorted. [`Graph::backward`] walks
//! it once in reverse. Shapes must agree exactly; the only broadcasts are the
//! scalar in [`Graph::scale`] and the explicit bias row of [`Graph::add_row`].

use crate::error::{Error, Result};
use crate::tensor::{dot, logsumexp, matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Rows whose norm falls below this are rejected by [`Graph::l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    AddRow(Var, Var),
    Transpose(Var),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    LogSumExpRow(Var),
    Gather { x: Var, idx: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Records a copy of `t` as a leaf. It participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        let mut value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor invariants already hold");
        value.set_requires_grad(t.requires_grad());
        self.push(Op::Leaf, value)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.push(Op::Leaf, t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`, if `v`
    /// participates in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Adds the gradient held for `v` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g);
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn derived(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        let mut t = Tensor::new(shape, data).expect("op produced consistent shape");
        t.set_requires_grad(requires_grad);
        self.push(op, t)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.derived(Op::MatMul(a, b), vec![m, n], out, rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.derived(op, shape, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a);
        self.derived(Op::Scale(a, c), shape, out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a);
        self.derived(Op::Relu(a), shape, out, rg)
    }

    /// `x[B×N] + bias[N]` added to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, n) = self.dims2(x, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: vec![b, n],
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bv = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bv).for_each(|(o, v)| *o += v);
        }
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.derived(Op::AddRow(x, bias), vec![b, n], out, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.derived(Op::Transpose(a), vec![c, r], out, rg))
    }

    /// Row-wise inner products `[B×D]·[B×D] → [B×1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (rows, d) = self.dims2(a, "row_dot")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..rows)
            .map(|i| dot(&av[i * d..(i + 1) * d], &bv[i * d..(i + 1) * d]))
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.derived(Op::RowDot(a, b), vec![rows, 1], out, rg))
    }

    /// `[B×N1] ‖ [B×N2] → [B×(N1+N2)]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a, "concat_cols")?;
        let (rb, cb) = self.dims2(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.derived(Op::ConcatCols(a, b), vec![ra, ca + cb], out, rg))
    }

    /// Scales every row of `x[B×D]` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, d) = self.dims2(x, "l2_normalize")?;
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for (i, row) in xv.chunks(d).enumerate() {
            let n = dot(row, row).sqrt();
            if !(n > NORM_EPS) {
                return Err(Error::DegenerateRow { row: i, eps: NORM_EPS });
            }
            norms.push(n);
            out.extend(row.iter().map(|v| v / n));
        }
        let rg = self.needs(x);
        Ok(self.derived(Op::L2Normalize { x, norms }, vec![rows, d], out, rg))
    }

    /// `log Σ_c exp(s[b, c])` for each row, max-shifted.
    pub fn logsumexp_row(&mut self, s: Var) -> Result<Var> {
        let (rows, c) = self.dims2(s, "logsumexp_row")?;
        let sv = self.value(s);
        if !sv.is_finite() {
            return Err(Error::NonFinite("logsumexp_row input".into()));
        }
        let out = sv.data().chunks(c).map(logsumexp).collect();
        let rg = self.needs(s);
        Ok(self.derived(Op::LogSumExpRow(s), vec![rows], out, rg))
    }

    /// Picks `x[b, idx[b]]` from each row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, c) = self.dims2(x, "gather")?;
        if idx.len() != rows || idx.iter().any(|&j| j >= c) {
            return Err(Error::Dimension {
                op: "gather",
                lhs: vec![rows, c],
                rhs: vec![idx.len()],
            });
        }
        let xv = self.value(x).data();
        let out = idx.iter().enumerate().map(|(i, &j)| xv[i * c + j]).collect();
        let rg = self.needs(x);
        Ok(self.derived(
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            vec![rows],
            out,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.derived(Op::Sum(a), vec![1], vec![s], rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs(a);
        self.derived(Op::Mean(a), vec![1], vec![s], rg)
    }

    /// Populates gradients of `loss` with respect to every node that requires
    /// them. Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(up) = pending[id].take() else { continue };
            if !self.nodes[id].value.requires_grad() {
                continue;
            }
            self.propagate(id, &up, &mut pending);
            match &mut self.grads[id] {
                Some(g) => g.iter_mut().zip(&up).for_each(|(a, b)| *a += b),
                slot => *slot = Some(up),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, up: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, g: Vec<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut pending[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                if self.needs(*a) {
                    send(*a, matmul_nt(up, self.value(*b).data(), m, n, k));
                }
                if self.needs(*b) {
                    send(*b, matmul_tn(self.value(*a).data(), up, m, k, n));
                }
            }
            Op::Add(a, b) => {
                send(*a, up.to_vec());
                send(*b, up.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, up.to_vec());
                send(*b, up.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                send(*a, up.iter().zip(bv).map(|(g, y)| g * y).collect());
                send(*b, up.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, c) => send(*a, up.iter().map(|g| g * c).collect()),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                send(
                    *a,
                    up.iter()
                        .zip(av)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::AddRow(x, bias) => {
                let n = self.value(*bias).numel();
                send(*x, up.to_vec());
                let mut gb = vec![0.0; n];
                for row in up.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                send(*bias, gb);
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                // up is c×r
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = up[j * r + i];
                    }
                }
                send(*a, g);
            }
            Op::RowDot(a, b) => {
                let d = self.value(*a).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let spread = |other: &[f64]| -> Vec<f64> {
                    other
                        .chunks(d)
                        .zip(up)
                        .flat_map(|(row, g)| row.iter().map(move |v| v * g))
                        .collect()
                };
                if self.needs(*a) {
                    send(*a, spread(bv));
                }
                if self.needs(*b) {
                    send(*b, spread(av));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                let w = ca + cb;
                let mut ga = Vec::new();
                let mut gb = Vec::new();
                for row in up.chunks(w) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::L2Normalize { x, norms } => {
                let d = node.value.shape()[1];
                let y = node.value.data();
                let mut g = Vec::with_capacity(y.len());
                for ((yr, ur), n) in y.chunks(d).zip(up.chunks(d)).zip(norms) {
                    let proj = dot(yr, ur);
                    g.extend(yr.iter().zip(ur).map(|(yv, uv)| (uv - yv * proj) / n));
                }
                send(*x, g);
            }
            Op::LogSumExpRow(s) => {
                let c = self.value(*s).shape()[1];
                let sv = self.value(*s).data();
                let lse = node.value.data();
                let g = sv
                    .chunks(c)
                    .zip(lse)
                    .zip(up)
                    .flat_map(|((row, l), u)| row.iter().map(move |v| (v - l).exp() * u))
                    .collect();
                send(*s, g);
            }
            Op::Gather { x, idx } => {
                let c = self.value(*x).shape()[1];
                let mut g = vec![0.0; self.value(*x).numel()];
                for (i, (&j, u)) in idx.iter().zip(up).enumerate() {
                    g[i * c + j] += u;
                }
                send(*x, g);
            }
            Op::Sum(a) => send(*a, vec![up[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![up[0] / n as f64; n]);
            }
        }
    }
}

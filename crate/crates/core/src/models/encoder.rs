use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::tensor::{matmul_nn, Tensor};

/// Affine layer `x·W + b` with `W` stored `[in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, seed: u64, label: &str, index: u64) -> Self {
        let mut r = rng::stream(seed, label, index);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| r.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap(),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn bind(&self, g: &mut Graph) -> (Var, Var) {
        (g.input(&self.weight), g.input(&self.bias))
    }

    fn apply(g: &mut Graph, (w, b): (Var, Var), x: Var) -> Result<Var> {
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Forward without recording, sharing the graph's kernel so results match
    /// bit for bit.
    fn eval(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut y = matmul_nn(x, self.weight.data(), rows, i, o);
        let b = self.bias.data();
        for row in y.chunks_mut(o) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
        y
    }

    fn set_trainable(&mut self, on: bool) {
        self.weight.set_requires_grad(on);
        self.bias.set_requires_grad(on);
    }
}

/// MLP encoder with ReLU between affine layers and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    layers: Vec<Linear>,
    frozen: bool,
}

/// Graph handles for one forward pass of an [`EncoderModel`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<(Var, Var)>,
}

impl Bound {
    /// Parameter handles in [`EncoderModel::params`] order.
    pub fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|(w, b)| [*w, *b])
    }
}

impl EncoderModel {
    /// `dims = [input, hidden…, embed]`, seeded Glorot initialisation.
    pub fn new(dims: &[usize], seed: u64, label: &str) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(w[0], w[1], seed, label, i as u64))
            .collect();
        Ok(Self::from_layers(layers)?)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Self::from_layers(dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect())
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension {
                    op: "encoder layers",
                    lhs: pair[0].weight.shape().to_vec(),
                    rhs: pair[1].weight.shape().to_vec(),
                });
            }
        }
        for l in &layers {
            if l.bias.shape() != [l.out_dim()] {
                return Err(Error::Dimension {
                    op: "encoder bias",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
        }
        let mut m = Self { layers, frozen: false };
        m.layers.iter_mut().for_each(|l| l.set_trainable(true));
        Ok(m)
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid encoder dims {dims:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(Linear::out_dim));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Clears `requires_grad` on every parameter. There is no unfreeze.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.layers.iter_mut().for_each(|l| l.set_trainable(false));
    }

    pub(crate) fn set_frozen_flag(&mut self, frozen: bool) {
        if frozen {
            self.freeze();
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.layers.iter().map(|l| l.bind(g)).collect(),
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let (_, cols) = match g.shape(x) {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Dimension {
                    op: "encoder_forward",
                    lhs: s.to_vec(),
                    rhs: vec![self.in_dim()],
                })
            }
        };
        if cols != self.in_dim() {
            return Err(Error::Dimension {
                op: "encoder_forward",
                lhs: g.shape(x).to_vec(),
                rhs: vec![self.in_dim()],
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, vars) in bound.vars.iter().enumerate() {
            h = Linear::apply(g, *vars, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass with no gradient recording.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2()?;
        if cols != self.in_dim() {
            return Err(Error::Dimension {
                op: "encoder_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.in_dim()],
            });
        }
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.eval(&h, rows);
            if i < last {
                h.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0
                    }
                });
            }
        }
        Tensor::new(vec![rows, self.embed_dim()], h)
    }

    /// Copies gradients recorded for `bound` into the parameters' buffers.
    pub fn collect_grads(&mut self, g: &Graph, bound: &Bound) {
        for (p, v) in self.params_mut().into_iter().zip(bound.params()) {
            g.accumulate_into(v, p);
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::clear_grad);
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Linear softmax classifier over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub layer: Linear,
}

impl ClassifierHead {
    pub fn new(in_dim: usize, classes: usize, seed: u64) -> Self {
        Self {
            layer: {
                let mut l = Linear::init(in_dim, classes, seed, "head", 0);
                l.set_trainable(true);
                l
            },
        }
    }

    /// Zero weights and bias: every class starts equally likely.
    pub fn zeros(in_dim: usize, classes: usize) -> Self {
        let mut layer = Linear::zeros(in_dim, classes);
        layer.set_trainable(true);
        Self { layer }
    }

    pub fn classes(&self) -> usize {
        self.layer.out_dim()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.layer.weight, &mut self.layer.bias]
    }

    pub fn bind(&self, g: &mut Graph) -> (Var, Var) {
        self.layer.bind(g)
    }

    pub fn forward(g: &mut Graph, vars: (Var, Var), x: Var) -> Result<Var> {
        Linear::apply(g, vars, x)
    }

    pub fn collect_grads(&mut self, g: &Graph, (w, b): (Var, Var)) {
        g.accumulate_into(w, &mut self.layer.weight);
        g.accumulate_into(b, &mut self.layer.bias);
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, _) = x.dims2()?;
        Tensor::new(vec![rows, self.classes()], self.layer.eval(x.data(), rows))
    }
}

/// Fixed per-dimension standardisation `(x − mean) / std`, estimated once from
/// unlabelled training inputs and never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (rows, cols) = x.dims2()?;
        let mut mean = vec![0.0; cols];
        for r in x.data().chunks(cols) {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in x.data().chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / rows as f64).sqrt();
                if sd > 1e-8 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, inv_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rows = g.shape(x)[0];
        let neg_mean = Tensor::new(vec![self.dim()], self.mean.iter().map(|m| -m).collect())?;
        let nm = g.constant(neg_mean);
        let centred = g.add_row(x, nm)?;
        let scale = Tensor::new(vec![rows, self.dim()], self.inv_std.repeat(rows))?;
        let s = g.constant(scale);
        g.mul(centred, s)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2()?;
        if cols != self.dim() {
            return Err(Error::Dimension {
                op: "feature_norm",
                lhs: x.shape().to_vec(),
                rhs: vec![self.dim()],
            });
        }
        let mut out = x.data().to_vec();
        for r in out.chunks_mut(cols) {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        Tensor::new(vec![rows, cols], out)
    }
}

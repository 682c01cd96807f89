use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{BufferId, NetworkParams, ParamId};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// He/Kaiming uniform for ReLU networks: U(−√(6/fan_in), √(6/fan_in)).
pub fn kaiming_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform<T: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let d = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(d.sample(rng))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = p.add(&format!("{name}.weight"), kaiming_uniform(&[outputs, inputs], inputs, rng));
        let b = p.add(&format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear { w, b, inputs, outputs }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        p: &mut NetworkParams<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let w = p.add(&format!("{name}.weight"), kaiming_uniform(&[cout, cin, kernel, kernel], fan_in, rng));
        let b = p.add(&format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv2d { w, b, kernel, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(p: &mut NetworkParams<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: p.add(&format!("{name}.weight"), Tensor::filled(&[channels], T::one())),
            beta: p.add(&format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: p.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: p.add_buffer(&format!("{name}.running_var"), Tensor::filled(&[channels], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, train: bool) -> Result<Var, NnError> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.batch_norm(x, gm, bt, (self.running_mean, self.running_var), train)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding { table: p.add(&format!("{name}.weight"), uniform(&[vocab, dim], 0.1, rng)), dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var, NnError> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

/// Standard four-gate LSTM cell (gate order i, f, g, o).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub wx: Linear,
    pub wh: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = p.add(&format!("{name}.weight_ih"), uniform(&[4 * hidden, inputs], bound, rng));
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for v in &mut bias.data[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = p.add(&format!("{name}.bias"), bias);
        let wh = p.add(&format!("{name}.weight_hh"), uniform(&[4 * hidden, hidden], bound, rng));
        LstmCell { wx: Linear { w, b, inputs, outputs: 4 * hidden }, wh, hidden }
    }

    /// One step: returns `(h', c')`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var), NnError> {
        let n = self.hidden;
        let zx = self.wx.forward(g, x)?;
        let wh = g.param(self.wh);
        let zh = g.linear(h, wh, None)?;
        let z = g.add(zx, zh)?;
        let i = g.slice_cols(z, 0, n)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, n)?;
        let f = g.sigmoid(f);
        let gg = g.slice_cols(z, 2 * n, n)?;
        let gg = g.tanh(gg);
        let o = g.slice_cols(z, 3 * n, n)?;
        let o = g.sigmoid(o);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, gg)?;
        let c2 = g.add(fc, ig)?;
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc)?;
        Ok((h2, c2))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx.w, self.wx.b, self.wh]
    }
}

/// I.i.d. Gumbel(0, 1) noise.
pub fn sample_gumbel<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            T::of(-(-u.ln()).ln())
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// `softmax((logits + noise) / tau)` row-wise; `None` noise gives
/// `softmax(logits / tau)`.
pub fn gumbel_softmax<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, tau: f64, noise: Option<Tensor<T>>) -> Result<Var, NnError> {
    assert!(tau > 0.0, "temperature must be positive");
    let z = match noise {
        Some(n) => {
            let nv = g.input(n);
            g.add(logits, nv)?
        }
        None => logits,
    };
    let z = g.scale(z, T::of(1.0 / tau));
    Ok(g.softmax(z))
}

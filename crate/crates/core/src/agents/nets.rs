//! Gated-attention networks: a shared CNN trunk, fusion modules, the
//! gated-CNN actor/critic and the gated-LSTM actor/value network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{BatchNorm2d, Conv2d, Embedding, Graph, Linear, LstmCell, NetworkParams, NnError, ParamId, Scalar, Tensor, Var};
use crate::scene::Concept;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `x ⊙ sigmoid(W y + b)`.
    #[default]
    Gated,
    /// `[x, y]`.
    Concat,
}

/// Fusion of a feature vector `x` with a conditioning vector `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fusion {
    pub mode: FusionMode,
    pub dx: usize,
    pub dy: usize,
    pub gate: Option<Linear>,
}

impl Fusion {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, name: &str, mode: FusionMode, dx: usize, dy: usize, rng: &mut R) -> Self {
        let gate = match mode {
            FusionMode::Gated => Some(Linear::new(p, &format!("{name}.gate"), dy, dx, rng)),
            FusionMode::Concat => None,
        };
        Fusion { mode, dx, dy, gate }
    }

    pub fn output_dim(&self) -> usize {
        match self.mode {
            FusionMode::Gated => self.dx,
            FusionMode::Concat => self.dx + self.dy,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, y: Var) -> Result<Var, NnError> {
        let (xs, ys) = (g.shape(x).to_vec(), g.shape(y).to_vec());
        if xs.len() != 2 || ys.len() != 2 || xs[1] != self.dx || ys[1] != self.dy || xs[0] != ys[0] {
            return Err(NnError::Shape { op: "fusion".into(), shapes: vec![xs, ys] });
        }
        match self.gate {
            Some(gate) => {
                let z = gate.forward(g, y)?;
                let s = g.sigmoid(z);
                g.mul(x, s)
            }
            None => g.concat_cols(&[x, y]),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.gate.map(|l| l.params()).unwrap_or_default()
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, name: &str, input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(p, &format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var, NnError> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

/// Convolutions (kernel 5, stride 2) then a fully connected layer, each
/// followed by batch norm and ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnTrunk {
    pub convs: Vec<(Conv2d, BatchNorm2d)>,
    pub fc: Linear,
    pub fc_bn: BatchNorm2d,
    pub input: [usize; 3],
}

impl CnnTrunk {
    pub fn new<T: Scalar, R: Rng>(
        p: &mut NetworkParams<T>,
        name: &str,
        input: [usize; 3],
        channels: &[usize],
        fc: usize,
        rng: &mut R,
    ) -> Self {
        let (mut c, mut h, mut w) = (input[0], input[1], input[2]);
        let mut convs = Vec::new();
        for (i, &out) in channels.iter().enumerate() {
            let conv = Conv2d::new(p, &format!("{name}.conv{i}"), c, out, 5, 2, 2, rng);
            let bn = BatchNorm2d::new(p, &format!("{name}.bn{i}"), out);
            (h, w) = conv.output_size(h, w);
            c = out;
            convs.push((conv, bn));
        }
        let fc_layer = Linear::new(p, &format!("{name}.fc"), c * h * w, fc, rng);
        let fc_bn = BatchNorm2d::new(p, &format!("{name}.fc_bn"), fc);
        CnnTrunk { convs, fc: fc_layer, fc_bn, input }
    }

    pub fn output_dim(&self) -> usize {
        self.fc.outputs
    }

    /// `x [B, C, H, W]` → `[B, fc]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var, train: bool) -> Result<Var, NnError> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1..] != self.input {
            return Err(NnError::Shape { op: "cnn trunk input".into(), shapes: vec![s, self.input.to_vec()] });
        }
        for (conv, bn) in &self.convs {
            x = conv.forward(g, x)?;
            x = bn.forward(g, x, train)?;
            x = g.relu(x);
        }
        let x = g.flatten(x)?;
        let x = self.fc.forward(g, x)?;
        let x = self.fc_bn.forward(g, x, train)?;
        Ok(g.relu(x))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.convs.iter().flat_map(|(c, b)| [c.params(), b.params()].concat()).collect();
        v.extend(self.fc.params());
        v.extend(self.fc_bn.params());
        v
    }
}

pub const EMBED_DIM: usize = 25;
pub const MOVE_HEAD: usize = 4;
pub const ROT_HEAD: usize = 2;
/// Flattened continuous action `[m1..m4, r1, r2]`.
pub const ACTION_DIM: usize = MOVE_HEAD + ROT_HEAD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatedCnnConfig {
    pub frame_stack: usize,
    pub conv_channels: Vec<usize>,
    pub fc: usize,
    pub embed: usize,
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub fusion: FusionMode,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
}

impl Default for GatedCnnConfig {
    fn default() -> Self {
        GatedCnnConfig {
            frame_stack: 5,
            conv_channels: vec![64, 64, 128, 128],
            fc: 512,
            embed: EMBED_DIM,
            policy_hidden: vec![128, 64],
            q_hidden: vec![64],
            fusion: FusionMode::Gated,
            tau: 1.0,
        }
    }
}

/// Shared actor-critic network for continuous control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedCnn {
    pub config: GatedCnnConfig,
    pub trunk: CnnTrunk,
    pub embed: Embedding,
    pub state_fusion: Fusion,
    pub policy: Mlp,
    pub action_fusion: Fusion,
    pub q: Mlp,
}

/// Movement and rotation heads.
#[derive(Debug, Clone, Copy)]
pub struct ActorOut {
    pub m: Var,
    pub r: Var,
    pub m_logits: Var,
    pub r_logits: Var,
}

impl GatedCnn {
    /// `frame` is the single-frame `[C, H, W]`; the stack multiplies C.
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, frame: [usize; 3], config: GatedCnnConfig, rng: &mut R) -> Self {
        assert!(config.frame_stack >= 1 && config.tau > 0.0);
        let input = [frame[0] * config.frame_stack, frame[1], frame[2]];
        let trunk = CnnTrunk::new(p, "cnn", input, &config.conv_channels, config.fc, rng);
        let embed = Embedding::new(p, "embed", Concept::COUNT, config.embed, rng);
        let state_fusion = Fusion::new(p, "state_fusion", config.fusion, config.fc, config.embed, rng);
        let hs = state_fusion.output_dim();
        let policy = Mlp::new(p, "policy", hs, &config.policy_hidden, ACTION_DIM, rng);
        let action_fusion = Fusion::new(p, "action_fusion", config.fusion, hs, ACTION_DIM, rng);
        let q = Mlp::new(p, "q", action_fusion.output_dim(), &config.q_hidden, 1, rng);
        GatedCnn { config, trunk, embed, state_fusion, policy, action_fusion, q }
    }

    /// `h_s = M(cnn(X), embed(I))`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: Var, concepts: &[usize], train: bool) -> Result<Var, NnError> {
        let x = self.trunk.forward(g, frames, train)?;
        let y = self.embed.forward(g, concepts)?;
        self.state_fusion.forward(g, x, y)
    }

    /// Gumbel-Softmax heads; `noise` holds `[B, 4]` and `[B, 2]` Gumbel samples.
    pub fn actor<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        hs: Var,
        tau: f64,
        noise: Option<(Tensor<T>, Tensor<T>)>,
    ) -> Result<ActorOut, NnError> {
        let logits = self.policy.forward(g, hs)?;
        let m_logits = g.slice_cols(logits, 0, MOVE_HEAD)?;
        let r_logits = g.slice_cols(logits, MOVE_HEAD, ROT_HEAD)?;
        let (nm, nr) = match noise {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let m = crate::nn::gumbel_softmax(g, m_logits, tau, nm)?;
        let r = crate::nn::gumbel_softmax(g, r_logits, tau, nr)?;
        Ok(ActorOut { m, r, m_logits, r_logits })
    }

    /// `Q(s, a) = MLP(M(h_s, a))`, `a` as `[B, 6]`.
    pub fn critic<T: Scalar>(&self, g: &mut Graph<'_, T>, hs: Var, action: Var) -> Result<Var, NnError> {
        let hq = self.action_fusion.forward(g, hs, action)?;
        self.q.forward(g, hq)
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        [self.action_fusion.params(), self.q.params()].concat()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatedLstmConfig {
    pub conv_channels: Vec<usize>,
    pub fc: usize,
    pub embed: usize,
    pub hidden: usize,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub n_actions: usize,
    pub fusion: FusionMode,
}

impl Default for GatedLstmConfig {
    fn default() -> Self {
        GatedLstmConfig {
            conv_channels: vec![64, 64, 128, 128],
            fc: 256,
            embed: EMBED_DIM,
            hidden: 256,
            policy_hidden: vec![128, 64],
            value_hidden: vec![64, 32],
            n_actions: crate::env::NUM_DISCRETE_ACTIONS,
            fusion: FusionMode::Gated,
        }
    }
}

/// Recurrent actor / value network for discrete control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedLstm {
    pub config: GatedLstmConfig,
    pub trunk: CnnTrunk,
    pub embed: Embedding,
    pub fusion: Fusion,
    pub lstm: LstmCell,
    pub policy: Mlp,
    pub value: Mlp,
}

/// LSTM hidden and cell state, `[B, hidden]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState { h: Tensor::zeros(&[batch, hidden]), c: Tensor::zeros(&[batch, hidden]) }
    }
}

/// Outputs over an unroll of `T` steps for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct UnrollOut {
    /// `[T, A]`.
    pub logits: Var,
    pub log_probs: Var,
    pub probs: Var,
    /// `[T, 1]`.
    pub values: Var,
    pub h: Var,
    pub c: Var,
}

impl GatedLstm {
    pub fn new<T: Scalar, R: Rng>(p: &mut NetworkParams<T>, frame: [usize; 3], config: GatedLstmConfig, rng: &mut R) -> Self {
        let trunk = CnnTrunk::new(p, "cnn", frame, &config.conv_channels, config.fc, rng);
        let embed = Embedding::new(p, "embed", Concept::COUNT, config.embed, rng);
        let fusion = Fusion::new(p, "fusion", config.fusion, config.fc, config.embed, rng);
        let ht = fusion.output_dim();
        let lstm = LstmCell::new(p, "lstm", ht + config.embed, config.hidden, rng);
        let joint = ht + config.hidden;
        let policy = Mlp::new(p, "policy", joint, &config.policy_hidden, config.n_actions, rng);
        let value = Mlp::new(p, "value", joint, &config.value_hidden, 1, rng);
        GatedLstm { config, trunk, embed, fusion, lstm, policy, value }
    }

    /// Run `T` consecutive frames `[T, C, H, W]` of one episode from
    /// `state`. The trunk sees all frames as one batch.
    pub fn unroll<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        frames: Var,
        concepts: &[usize],
        state: &LstmState<T>,
        train: bool,
    ) -> Result<UnrollOut, NnError> {
        let steps = g.shape(frames)[0];
        if concepts.len() != steps || state.h.shape[0] != 1 {
            return Err(NnError::Shape {
                op: "gated lstm unroll".into(),
                shapes: vec![g.shape(frames).to_vec(), vec![concepts.len()], state.h.shape.clone()],
            });
        }
        let x = self.trunk.forward(g, frames, train)?;
        let y = self.embed.forward(g, concepts)?;
        let ht = self.fusion.forward(g, x, y)?;
        let lstm_in = g.concat_cols(&[ht, y])?;
        let mut h = g.input(state.h.clone());
        let mut c = g.input(state.c.clone());
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.slice_rows(lstm_in, t, 1)?;
            (h, c) = self.lstm.forward(g, xt, h, c)?;
            outs.push(h);
        }
        let o = g.vstack(&outs)?;
        let joint = g.concat_cols(&[ht, o])?;
        let logits = self.policy.forward(g, joint)?;
        let log_probs = g.log_softmax(logits);
        let probs = g.softmax(logits);
        let values = self.value.forward(g, joint)?;
        Ok(UnrollOut { logits, log_probs, probs, values, h, c })
    }

    /// Single step with eval-mode batch norm; returns `(π, v, next state)`.
    pub fn step<T: Scalar>(
        &self,
        params: &NetworkParams<T>,
        frame: &Tensor<T>,
        concept: usize,
        state: &LstmState<T>,
    ) -> Result<(Vec<T>, T, LstmState<T>), NnError> {
        let mut g = Graph::new(params);
        let mut shape = vec![1];
        shape.extend_from_slice(&frame.shape);
        let x = g.input(Tensor::new(shape, frame.data.clone()));
        let out = self.unroll(&mut g, x, &[concept], state, false)?;
        let next = LstmState { h: g.value(out.h).clone(), c: g.value(out.c).clone() };
        Ok((g.value(out.probs).data.clone(), g.value(out.values).data[0], next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check, project};
    use crate::nn::layers::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn gate_zero_halves_and_saturated_gate_passes_through() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let f = Fusion::new(&mut p, "f", FusionMode::Gated, 4, 2, &mut r);
        let gate = f.gate.unwrap();
        p.values[gate.w.0].data.fill(0.0);
        let xv: Tensor<f64> = uniform(&[3, 4], 1.0, &mut r);
        let yv: Tensor<f64> = uniform(&[3, 2], 1.0, &mut r);
        {
            let mut g = Graph::new(&p);
            let (x, y) = (g.input(xv.clone()), g.input(yv.clone()));
            let out = f.forward(&mut g, x, y).unwrap();
            for (o, x) in g.value(out).data.iter().zip(&xv.data) {
                assert_eq!(*o, 0.5 * x);
            }
        }
        p.values[gate.b.0].data.fill(1e3);
        let mut g = Graph::new(&p);
        let (x, y) = (g.input(xv.clone()), g.input(yv));
        let out = f.forward(&mut g, x, y).unwrap();
        assert_eq!(g.value(out), &xv);
    }

    #[test]
    fn gated_fusion_matches_elementwise_formula() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let f = Fusion::new(&mut p, "f", FusionMode::Gated, 5, 3, &mut r);
        let gate = f.gate.unwrap();
        p.values[gate.b.0] = uniform(&[5], 1.0, &mut r);
        let xv: Tensor<f64> = uniform(&[2, 5], 2.0, &mut r);
        let yv: Tensor<f64> = uniform(&[2, 3], 2.0, &mut r);
        let mut g = Graph::new(&p);
        let (x, y) = (g.input(xv.clone()), g.input(yv.clone()));
        let out = f.forward(&mut g, x, y).unwrap();
        let (w, b) = (&p.values[gate.w.0].data, &p.values[gate.b.0].data);
        for bi in 0..2 {
            for i in 0..5 {
                let z: f64 = b[i] + (0..3).map(|j| w[i * 3 + j] * yv.data[bi * 3 + j]).sum::<f64>();
                let expect = xv.data[bi * 5 + i] / (1.0 + (-z).exp());
                assert!((g.value(out).data[bi * 5 + i] - expect).abs() < 1e-14);
            }
        }
        let mut pc = NetworkParams::<f64>::new();
        let fc = Fusion::new(&mut pc, "f", FusionMode::Concat, 5, 3, &mut r);
        let mut g = Graph::new(&pc);
        let (x, y) = (g.input(xv.clone()), g.input(yv.clone()));
        let out = fc.forward(&mut g, x, y).unwrap();
        assert_eq!(g.shape(out), [2, 8]);
        assert_eq!(&g.value(out).data[5..8], &yv.data[0..3]);
        assert!(fc.forward(&mut g, y, x).is_err());
    }

    fn tiny_cnn(p: &mut NetworkParams<f64>, r: &mut ChaCha8Rng, fusion: FusionMode) -> GatedCnn {
        let cfg = GatedCnnConfig {
            frame_stack: 2,
            conv_channels: vec![3, 4],
            fc: 6,
            embed: 3,
            policy_hidden: vec![5],
            q_hidden: vec![4],
            fusion,
            tau: 1.0,
        };
        GatedCnn::new(p, [2, 9, 7], cfg, r)
    }

    fn tiny_lstm(p: &mut NetworkParams<f64>, r: &mut ChaCha8Rng) -> GatedLstm {
        let cfg = GatedLstmConfig {
            conv_channels: vec![3, 4],
            fc: 6,
            embed: 3,
            hidden: 5,
            policy_hidden: vec![5],
            value_hidden: vec![4],
            n_actions: 12,
            fusion: FusionMode::Gated,
        };
        GatedLstm::new(p, [2, 9, 7], cfg, r)
    }

    #[test]
    fn gated_cnn_outputs_are_distributions_and_gradients_check() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let net = tiny_cnn(&mut p, &mut r, FusionMode::Gated);
        let frames: Tensor<f64> = uniform(&[3, 4, 9, 7], 1.0, &mut r);
        for train in [true, false] {
            let mut g = Graph::new(&p);
            let x = g.input(frames.clone());
            let hs = net.encode(&mut g, x, &[0, 7, 19], train).unwrap();
            let out = net.actor(&mut g, hs, 1.0, None).unwrap();
            for v in [out.m, out.r] {
                let n = g.shape(v)[1];
                for row in g.value(v).data.chunks(n) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
        let proj: Tensor<f64> = uniform(&[3, ACTION_DIM], 1.0, &mut r);
        let qproj: Tensor<f64> = uniform(&[3, 1], 1.0, &mut r);
        let action: Tensor<f64> = uniform(&[3, ACTION_DIM], 1.0, &mut r);
        let report = check(
            &p,
            &[frames, action],
            &|g, x| {
                let hs = net.encode(g, x[0], &[0, 7, 19], true)?;
                let out = net.actor(g, hs, 1.0, None)?;
                let both = g.concat_cols(&[out.m, out.r])?;
                let a = project(g, both, &proj)?;
                let q = net.critic(g, hs, x[1])?;
                let b = project(g, q, &qproj)?;
                g.add(a, b)
            },
            1e-5,
            6,
            &mut r,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
    }

    #[test]
    fn identity_gate_recovers_trunk_feature() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let net = tiny_cnn(&mut p, &mut r, FusionMode::Gated);
        let gate = net.state_fusion.gate.unwrap();
        p.values[gate.w.0].data.fill(0.0);
        p.values[gate.b.0].data.fill(1e3);
        let frames: Tensor<f64> = uniform(&[2, 4, 9, 7], 1.0, &mut r);
        let mut g = Graph::new(&p);
        let x = g.input(frames);
        let hs = net.encode(&mut g, x, &[1, 2], false).unwrap();
        let feat = net.trunk.forward(&mut g, x, false).unwrap();
        assert_eq!(g.value(hs), g.value(feat));
    }

    #[test]
    fn critic_depends_on_action() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let net = tiny_cnn(&mut p, &mut r, FusionMode::Gated);
        let frames: Tensor<f64> = uniform(&[1, 4, 9, 7], 1.0, &mut r);
        let q_of = |a: [f64; 6]| {
            let mut g = Graph::new(&p);
            let x = g.input(frames.clone());
            let hs = net.encode(&mut g, x, &[3], false).unwrap();
            let av = g.input(Tensor::new(vec![1, 6], a.to_vec()));
            let q = net.critic(&mut g, hs, av).unwrap();
            g.value(q).item()
        };
        let a = q_of([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = q_of([0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(a.is_finite() && b.is_finite());
        assert_ne!(a, b);
    }

    #[test]
    fn lstm_unroll_equals_stepping_and_gradients_check() {
        let mut r = rng();
        let mut p = NetworkParams::<f64>::new();
        let net = tiny_lstm(&mut p, &mut r);
        let frames: Tensor<f64> = uniform(&[5, 2, 9, 7], 1.0, &mut r);
        let concepts = [4usize; 5];
        let s0 = LstmState::zeros(1, 5);
        let mut g = Graph::new(&p);
        let x = g.input(frames.clone());
        let out = net.unroll(&mut g, x, &concepts[..2], &s0, false).err();
        assert!(out.is_some(), "concept count must match frames");
        let x2 = g.slice_rows(x, 0, 2).unwrap();
        let out = net.unroll(&mut g, x2, &concepts[..2], &s0, false).unwrap();
        let probs = g.value(out.probs).data.clone();
        let frame = |t: usize| Tensor::new(vec![2, 9, 7], frames.data[t * 126..(t + 1) * 126].to_vec());
        let (p1, _, s1) = net.step(&p, &frame(0), 4, &s0).unwrap();
        let (p2, _, s2) = net.step(&p, &frame(1), 4, &s1).unwrap();
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p1.len() == 12);
        for (a, b) in probs.iter().zip(p1.iter().chain(&p2)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s2.h.data.iter().zip(&g.value(out.h).data).all(|(a, b)| (a - b).abs() < 1e-12));

        let proj: Tensor<f64> = uniform(&[5, 12], 1.0, &mut r);
        let vproj: Tensor<f64> = uniform(&[5, 1], 1.0, &mut r);
        let report = check(
            &p,
            &[frames],
            &|g, x| {
                let out = net.unroll(g, x[0], &concepts, &s0, true)?;
                let a = project(g, out.log_probs, &proj)?;
                let b = project(g, out.values, &vproj)?;
                g.add(a, b)
            },
            1e-5,
            6,
            &mut r,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
    }
}

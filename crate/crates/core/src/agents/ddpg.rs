use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::a3c::Control;
use super::nets::{GatedCnn, GatedCnnConfig, ACTION_DIM, MOVE_HEAD, ROT_HEAD};
use super::policy::continuous_action;
use super::replay::{quantize, stack_planes, FrameStack, ReplayBuffer, Transition};
use super::AgentError;
use crate::env::{EnvPool, RoomNavEnv};
use crate::procgen::mix_seed;
use crate::nn::{adam_step, sample_gumbel, AdamConfig, Graph, NetworkParams, NnError, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub lr: f64,
    pub batch: usize,
    pub alpha: f64,
    pub target_rate: f64,
    pub update_every: usize,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub replay_capacity: usize,
    /// Episodes over which the exploration temperature anneals.
    pub explore_episodes: usize,
    pub explore_start_temp: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            lr: 1e-4,
            batch: 128,
            alpha: 100.0,
            target_rate: 0.001,
            update_every: 10,
            entropy_coef: 0.001,
            gamma: 0.95,
            weight_decay: 1e-5,
            replay_capacity: 700_000,
            explore_episodes: 30_000,
            explore_start_temp: 2.0,
            warmup: 128,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let pos = [self.lr, self.alpha, self.target_rate, self.gamma, self.explore_start_temp];
        if pos.iter().any(|v| *v <= 0.0) || self.batch == 0 || self.update_every == 0 || self.replay_capacity == 0 {
            return Err(AgentError::Config(format!("DDPG rates and sizes must be positive: {self:?}")));
        }
        if self.entropy_coef < 0.0 || self.gamma > 1.0 || self.target_rate > 1.0 {
            return Err(AgentError::Config("entropy coefficient, gamma or target rate out of range".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    /// Gumbel temperature for acting: linear from the start temperature to
    /// the network's τ over the exploration window.
    pub fn explore_temperature(&self, episode: usize, tau: f64) -> f64 {
        if self.explore_episodes == 0 {
            return tau;
        }
        let f = (episode as f64 / self.explore_episodes as f64).min(1.0);
        self.explore_start_temp + (tau - self.explore_start_temp) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DdpgStats {
    /// `L_μ = E[Q(s, μ(s))]`.
    pub actor_objective: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Shared actor-critic with a slowly tracking target copy.
#[derive(Debug, Clone)]
pub struct DdpgLearner {
    pub net: GatedCnn,
    pub params: NetworkParams<f32>,
    pub target: NetworkParams<f32>,
    pub config: DdpgConfig,
    pub frame_shape: [usize; 3],
    pub updates: u64,
}

/// Batch of stacked states `[B, k·C, H, W]`.
fn stack_batch(states: &[&[super::replay::Frame]], shape: [usize; 3], k: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(states.len() * k * shape.iter().product::<usize>());
    for s in states {
        stack_planes(s, &mut data);
    }
    Tensor::new(vec![states.len(), k * shape[0], shape[1], shape[2]], data)
}

fn entropy_of(g: &mut Graph<'_, f32>, logits: Var) -> Var {
    let p = g.softmax(logits);
    let lp = g.log_softmax(logits);
    let pl = g.mul(p, lp).expect("same shape");
    let s = g.sum(pl);
    let b = g.shape(logits)[0] as f32;
    g.scale(s, -1.0 / b)
}

impl DdpgLearner {
    pub fn new<R: Rng>(frame_shape: [usize; 3], net_config: GatedCnnConfig, config: DdpgConfig, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let mut params = NetworkParams::new();
        let net = GatedCnn::new(&mut params, frame_shape, net_config, rng);
        let target = params.clone();
        Ok(DdpgLearner { net, params, target, config, frame_shape, updates: 0 })
    }

    pub fn frame_stack(&self) -> usize {
        self.net.config.frame_stack
    }

    /// Policy heads for one stacked state (eval-mode batch norm). With a
    /// temperature, Gumbel noise is added; without, the plain softmax heads.
    pub fn act<R: Rng>(
        &self,
        stacked: &[f32],
        concept: usize,
        explore_temp: Option<f64>,
        rng: &mut R,
    ) -> Result<([f32; MOVE_HEAD], [f32; ROT_HEAD]), NnError> {
        let k = self.frame_stack();
        let s = self.frame_shape;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::new(vec![1, k * s[0], s[1], s[2]], stacked.to_vec()));
        let hs = self.net.encode(&mut g, x, &[concept], false)?;
        let out = match explore_temp {
            Some(t) => {
                let noise = (sample_gumbel(&[1, MOVE_HEAD], rng), sample_gumbel(&[1, ROT_HEAD], rng));
                self.net.actor(&mut g, hs, t, Some(noise))?
            }
            None => self.net.actor(&mut g, hs, self.net.config.tau, None)?,
        };
        let m = g.value(out.m).data.clone().try_into().expect("4 entries");
        let r = g.value(out.r).data.clone().try_into().expect("2 entries");
        Ok((m, r))
    }

    /// Critic targets `y = r + γ (1 − done) Q'(s', μ'(s'))` from the target
    /// network with eval-mode batch norm and noise-free heads.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f32>, NnError> {
        let k = self.frame_stack();
        let next: Vec<&[super::replay::Frame]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let concepts: Vec<usize> = batch.iter().map(|t| t.concept).collect();
        let mut g = Graph::new(&self.target);
        let x = g.input(stack_batch(&next, self.frame_shape, k));
        let hs = self.net.encode(&mut g, x, &concepts, false)?;
        let out = self.net.actor(&mut g, hs, self.net.config.tau, None)?;
        let a = g.concat_cols(&[out.m, out.r])?;
        let q = self.net.critic(&mut g, hs, a)?;
        let gamma = self.config.gamma as f32;
        Ok(batch
            .iter()
            .zip(&g.value(q).data)
            .map(|(t, &qn)| t.reward + if t.done { 0.0 } else { gamma * qn })
            .collect())
    }

    /// Build `−L_μ + α L_Q − c H` on `g`; returns the loss and its parts.
    pub fn loss<'a, R: Rng>(
        &self,
        g: &mut Graph<'a, f32>,
        batch: &[&Transition],
        targets: &[f32],
        rng: &mut R,
    ) -> Result<(Var, [Var; 3]), NnError> {
        let k = self.frame_stack();
        let b = batch.len();
        let states: Vec<&[super::replay::Frame]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let concepts: Vec<usize> = batch.iter().map(|t| t.concept).collect();
        let x = g.input(stack_batch(&states, self.frame_shape, k));
        let hs = self.net.encode(g, x, &concepts, b > 1)?;

        let actions: Vec<f32> = batch.iter().flat_map(|t| t.action).collect();
        let a = g.input(Tensor::new(vec![b, ACTION_DIM], actions));
        let q = self.net.critic(g, hs, a)?;
        let y = g.input(Tensor::new(vec![b, 1], targets.to_vec()));
        let diff = g.sub(q, y)?;
        let sq = g.square(diff);
        let critic_loss = g.mean(sq);

        let noise = (sample_gumbel(&[b, MOVE_HEAD], rng), sample_gumbel(&[b, ROT_HEAD], rng));
        let out = self.net.actor(g, hs, self.net.config.tau, Some(noise))?;
        let mu = g.concat_cols(&[out.m, out.r])?;
        // The actor term trains the policy through a fixed critic.
        let hs_fixed = g.detach(hs);
        g.set_params_const(true);
        let q_mu = self.net.critic(g, hs_fixed, mu);
        g.set_params_const(false);
        let actor_objective = g.mean(q_mu?);

        let hm = entropy_of(g, out.m_logits);
        let hr = entropy_of(g, out.r_logits);
        let entropy = g.add(hm, hr)?;

        let neg_actor = g.scale(actor_objective, -1.0);
        let qterm = g.scale(critic_loss, self.config.alpha as f32);
        let hterm = g.scale(entropy, -(self.config.entropy_coef as f32));
        let total = g.add(neg_actor, qterm)?;
        let total = g.add(total, hterm)?;
        Ok((total, [actor_objective, critic_loss, entropy]))
    }

    /// One gradient step on a replay batch followed by the target update.
    pub fn update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<DdpgStats, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let targets = self.targets(batch)?;
        let (grads, updates, stats) = {
            let mut g = Graph::new(&self.params);
            let (total, [am, cl, en]) = self.loss(&mut g, batch, &targets, rng)?;
            let stats = DdpgStats {
                actor_objective: g.value(am).item() as f64,
                critic_loss: g.value(cl).item() as f64,
                entropy: g.value(en).item() as f64,
                total: g.value(total).item() as f64,
            };
            let back = g.backward(total)?;
            (back.param_grads(&g), g.take_buffer_updates(), stats)
        };
        self.params.zero_grad();
        self.params.accumulate(&grads);
        adam_step(&mut self.params, &self.config.adam());
        self.params.apply_buffer_updates(updates);
        self.target.soft_update_from(&self.params, self.config.target_rate as f32)?;
        self.updates += 1;
        Ok(stats)
    }
}

/// Reported to the training callback after every update.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DdpgProgress {
    pub update: u64,
    pub stats: DdpgStats,
    pub episodes: u64,
    pub success_rate: f64,
    pub temperature: f64,
    pub elapsed_secs: f64,
}

/// Counters and RNG state of a DDPG run. The replay buffer is not part of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdpgRunState {
    pub episodes: u64,
    pub env_steps: u64,
    pub successes: VecDeque<bool>,
    pub rng: ChaCha8Rng,
}

/// Single-threaded DDPG loop: act with Gumbel exploration, store
/// transitions, and update every `update_every` environment steps.
pub struct DdpgTrainer {
    pub learner: DdpgLearner,
    pub pool: Arc<EnvPool>,
    pub replay: ReplayBuffer<Transition>,
    pub seed: u64,
    pub state: DdpgRunState,
    pub success_window: usize,
}

pub type DdpgCallback<'a> = dyn FnMut(&DdpgProgress, &DdpgLearner) -> Control + 'a;

impl DdpgTrainer {
    pub fn new(pool: Arc<EnvPool>, net_config: GatedCnnConfig, config: DdpgConfig, seed: u64) -> Result<Self, AgentError> {
        let c = &pool.config;
        let frame = [c.observation.channels(), c.height, c.width];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xdd96));
        let learner = DdpgLearner::new(frame, net_config, config, &mut rng)?;
        let replay = ReplayBuffer::new(learner.config.replay_capacity);
        let state = DdpgRunState { episodes: 0, env_steps: 0, successes: VecDeque::new(), rng };
        Ok(DdpgTrainer { learner, pool, replay, seed, state, success_window: 200 })
    }

    pub fn success_rate(&self) -> f64 {
        let s = &self.state.successes;
        if s.is_empty() {
            0.0
        } else {
            s.iter().filter(|&&v| v).count() as f64 / s.len() as f64
        }
    }

    /// Run whole episodes until `max_updates` updates or the callback stops.
    pub fn run(&mut self, max_updates: u64, callback: &mut DdpgCallback<'_>) -> Result<(), AgentError> {
        let start = Instant::now();
        let mut env = RoomNavEnv::new(self.pool.clone());
        let k = self.learner.frame_stack();
        let mut stack = FrameStack::new(k);
        let mut planes = Vec::new();
        let tau = self.learner.net.config.tau;
        'episodes: while self.learner.updates < max_updates {
            let seed = mix_seed(self.seed, self.state.episodes);
            let mut obs = env.reset(seed, None)?;
            stack.reset(quantize(&obs.planes));
            let temp = self.learner.config.explore_temperature(self.state.episodes as usize, tau);
            loop {
                let state = stack.frames();
                planes.clear();
                stack_planes(&state, &mut planes);
                let concept = obs.instruction.concept.index();
                let (m, r) = self.learner.act(&planes, concept, Some(temp), &mut self.state.rng)?;
                let res = env.step(&continuous_action(&m, &r)?)?;
                stack.push(quantize(&res.observation.planes));
                self.replay.push(Transition {
                    state,
                    concept,
                    action: [m[0], m[1], m[2], m[3], r[0], r[1]],
                    reward: res.reward as f32,
                    next_state: stack.frames(),
                    done: res.done,
                });
                self.state.env_steps += 1;
                let cfg = &self.learner.config;
                if self.state.env_steps % cfg.update_every as u64 == 0 && self.replay.len() >= cfg.warmup.max(1) {
                    let batch = self.replay.sample(cfg.batch, &mut self.state.rng);
                    let stats = self.learner.update(&batch, &mut self.state.rng)?;
                    let progress = DdpgProgress {
                        update: self.learner.updates,
                        stats,
                        episodes: self.state.episodes,
                        success_rate: self.success_rate(),
                        temperature: temp,
                        elapsed_secs: start.elapsed().as_secs_f64(),
                    };
                    if callback(&progress, &self.learner) == Control::Stop || self.learner.updates >= max_updates {
                        break 'episodes;
                    }
                }
                obs = res.observation;
                if res.done {
                    self.state.successes.push_back(res.success);
                    while self.state.successes.len() > self.success_window {
                        self.state.successes.pop_front();
                    }
                    self.state.episodes += 1;
                    break;
                }
            }
        }
        Ok(())
    }
}

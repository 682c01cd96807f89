use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{GatedLstm, GatedLstmConfig, LstmState};
use super::policy::sample_categorical;
use super::AgentError;
use crate::env::{Action, EnvPool, EpisodeState, RoomNavEnv};
use crate::nn::{adam_step, clip_global_norm, AdamConfig, BufferId, Grads, Graph, NetworkParams, NnError, Tensor, Var};
use crate::procgen::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A3cConfig {
    pub lr: f64,
    /// Kept for configuration parity; each update uses one worker's unroll.
    pub batch: usize,
    pub unroll: usize,
    pub reward_clip: f64,
    pub grad_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub workers: usize,
    pub gamma: f64,
    pub weight_decay: f64,
    /// Learning-rate decay triggers when the mean KL over a window of
    /// updates exceeds this.
    pub kl_threshold: f64,
    pub lr_decay: f64,
    /// Updates per KL window.
    pub kl_window: usize,
    pub min_lr: f64,
    /// Batch norm uses batch statistics in updates (needs `T ≥ 2`).
    pub bn_train: bool,
    /// Episodes in the moving success-rate window.
    pub success_window: usize,
}

impl Default for A3cConfig {
    fn default() -> Self {
        A3cConfig {
            lr: 1e-3,
            batch: 64,
            unroll: 30,
            reward_clip: 1.0,
            grad_clip: 1.0,
            entropy_coef: 0.1,
            value_coef: 1.0,
            workers: 8,
            gamma: 0.95,
            weight_decay: 1e-5,
            kl_threshold: 0.01,
            lr_decay: 1.5,
            kl_window: 50,
            min_lr: 1e-5,
            bn_train: true,
            success_window: 200,
        }
    }
}

impl A3cConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.unroll == 0 || self.workers == 0 {
            return Err(AgentError::Config("unroll and workers must be at least 1".into()));
        }
        if self.lr <= 0.0 || self.grad_clip <= 0.0 || self.lr_decay < 1.0 || !(0.0..=1.0).contains(&self.gamma) {
            return Err(AgentError::Config(format!("invalid A3C constants: {self:?}")));
        }
        if self.kl_window == 0 || self.success_window == 0 {
            return Err(AgentError::Config("kl_window and success_window must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Discounted returns `R_t = r_t + γ R_{t+1}` with `R_{T+1} = bootstrap`.
pub fn compute_returns(rewards: &[f32], bootstrap: f32, gamma: f32) -> Vec<f32> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// A contiguous piece of one episode, at most `unroll` steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub frame_shape: [usize; 3],
    /// `T` frames, CHW each.
    pub frames: Vec<f32>,
    pub concepts: Vec<usize>,
    pub actions: Vec<usize>,
    /// Clipped rewards.
    pub rewards: Vec<f32>,
    pub start: LstmState<f32>,
    /// `v(s_{T+1})`, or 0 when the segment ends the episode.
    pub bootstrap: f32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn input(&self) -> Tensor<f32> {
        let [c, h, w] = self.frame_shape;
        Tensor::new(vec![self.len(), c, h, w], self.frames.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct A3cStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Mean KL between the policy before and after the update.
    pub kl: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Loss nodes of one update.
#[derive(Debug, Clone, Copy)]
pub struct A3cLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub probs: Var,
}

/// `L_pg + α L_v − c H` over one trajectory, each term a mean over steps.
pub fn a3c_loss(
    g: &mut Graph<'_, f32>,
    net: &GatedLstm,
    traj: &Trajectory,
    config: &A3cConfig,
    train: bool,
) -> Result<A3cLoss, AgentError> {
    if traj.is_empty() {
        return Err(AgentError::EmptyTrajectory);
    }
    let t = traj.len();
    let x = g.input(traj.input());
    let out = net.unroll(g, x, &traj.concepts, &traj.start, train)?;
    let returns = compute_returns(&traj.rewards, traj.bootstrap, config.gamma as f32);
    let adv: Vec<f32> = returns.iter().zip(&g.value(out.values).data).map(|(r, v)| r - v).collect();

    let rv = g.input(Tensor::new(vec![t, 1], returns));
    let diff = g.sub(rv, out.values)?;
    let sq = g.square(diff);
    let value = g.mean(sq);

    let lp = g.pick(out.log_probs, &traj.actions)?;
    let a = g.input(Tensor::new(vec![t, 1], adv));
    let weighted = g.mul(a, lp)?;
    let m = g.mean(weighted);
    let policy = g.scale(m, -1.0);

    let plogp = g.mul(out.probs, out.log_probs)?;
    let s = g.sum(plogp);
    let entropy = g.scale(s, -1.0 / t as f32);

    let vterm = g.scale(value, config.value_coef as f32);
    let hterm = g.scale(entropy, -(config.entropy_coef as f32));
    let total = g.add(policy, vterm)?;
    let total = g.add(total, hterm)?;
    Ok(A3cLoss { total, policy, value, entropy, probs: out.probs })
}

/// Mean over rows of `KL(p ‖ q)` for row-stochastic `[T, A]` data.
pub fn mean_kl(p: &[f32], q: &[f32], actions: usize) -> f64 {
    let rows = p.len() / actions;
    let mut total = 0.0;
    for (pr, qr) in p.chunks(actions).zip(q.chunks(actions)) {
        for (&a, &b) in pr.iter().zip(qr) {
            if a > 0.0 {
                total += a as f64 * ((a as f64).ln() - (b as f64).max(1e-12).ln());
            }
        }
    }
    total / rows.max(1) as f64
}

/// Gradients of one trajectory against `params`.
pub struct LocalGradients {
    pub grads: Grads<f32>,
    pub buffer_updates: Vec<(BufferId, Tensor<f32>)>,
    pub stats: A3cStats,
    pub probs: Vec<f32>,
    pub train_bn: bool,
}

pub fn local_gradients(
    net: &GatedLstm,
    params: &NetworkParams<f32>,
    traj: &Trajectory,
    config: &A3cConfig,
) -> Result<LocalGradients, AgentError> {
    let train_bn = config.bn_train && traj.len() >= 2;
    let mut g = Graph::new(params);
    let loss = a3c_loss(&mut g, net, traj, config, train_bn)?;
    let stats = A3cStats {
        policy_loss: g.value(loss.policy).item() as f64,
        value_loss: g.value(loss.value).item() as f64,
        entropy: g.value(loss.entropy).item() as f64,
        total: g.value(loss.total).item() as f64,
        ..A3cStats::default()
    };
    let probs = g.value(loss.probs).data.clone();
    let back = g.backward(loss.total)?;
    let grads = back.param_grads(&g);
    Ok(LocalGradients { grads, buffer_updates: g.take_buffer_updates(), stats, probs, train_bn })
}

fn policy_probs(net: &GatedLstm, params: &NetworkParams<f32>, traj: &Trajectory, train_bn: bool) -> Result<Vec<f32>, NnError> {
    let mut g = Graph::new(params);
    let x = g.input(traj.input());
    let out = net.unroll(&mut g, x, &traj.concepts, &traj.start, train_bn)?;
    Ok(g.value(out.probs).data.clone())
}

/// Parameters and optimizer state shared by all workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharedState {
    pub lr: f64,
    /// Sum and count of KL measurements in the current window.
    pub kl_sum: f64,
    pub kl_count: usize,
    pub updates: u64,
    pub episodes: u64,
    /// Recent episodes as `(success, steps)`.
    pub window: VecDeque<(bool, usize)>,
    pub lr_decays: u32,
}

impl SharedState {
    pub fn new(lr: f64) -> Self {
        SharedState { lr, kl_sum: 0.0, kl_count: 0, updates: 0, episodes: 0, window: VecDeque::new(), lr_decays: 0 }
    }

    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|e| e.0).count() as f64 / self.window.len() as f64
        }
    }

    /// Mean length of the successful episodes in the window.
    pub fn avg_steps_success(&self) -> Option<f64> {
        let s: Vec<usize> = self.window.iter().filter(|e| e.0).map(|e| e.1).collect();
        (!s.is_empty()).then(|| s.iter().sum::<usize>() as f64 / s.len() as f64)
    }

    /// Fold one KL measurement into the monitor; returns whether the
    /// learning rate was decayed.
    pub fn observe_kl(&mut self, kl: f64, config: &A3cConfig) -> bool {
        self.kl_sum += kl;
        self.kl_count += 1;
        if self.kl_count < config.kl_window {
            return false;
        }
        let mean = self.kl_sum / self.kl_count as f64;
        self.kl_sum = 0.0;
        self.kl_count = 0;
        if mean > config.kl_threshold && self.lr > config.min_lr {
            self.lr = (self.lr / config.lr_decay).max(config.min_lr);
            self.lr_decays += 1;
            true
        } else {
            false
        }
    }

    pub fn record_episode(&mut self, success: bool, steps: usize, window: usize) {
        self.episodes += 1;
        self.window.push_back((success, steps));
        while self.window.len() > window {
            self.window.pop_front();
        }
    }
}

/// Clip, then apply one Adam step at the shared learning rate.
pub fn apply_gradients(
    params: &mut NetworkParams<f32>,
    state: &mut SharedState,
    local: LocalGradients,
    config: &A3cConfig,
) -> f64 {
    params.zero_grad();
    params.accumulate(&local.grads);
    let norm = clip_global_norm(&mut params.grads, config.grad_clip);
    adam_step(params, &config.adam(state.lr));
    params.apply_buffer_updates(local.buffer_updates);
    state.updates += 1;
    norm
}

/// One synchronous update on a single parameter set: gradients, apply, KL.
pub fn update_once(
    net: &GatedLstm,
    params: &mut NetworkParams<f32>,
    state: &mut SharedState,
    traj: &Trajectory,
    config: &A3cConfig,
) -> Result<A3cStats, AgentError> {
    let local = local_gradients(net, params, traj, config)?;
    let (before, train_bn, mut stats) = (local.probs.clone(), local.train_bn, local.stats);
    stats.grad_norm = apply_gradients(params, state, local, config);
    let after = policy_probs(net, params, traj, train_bn)?;
    stats.kl = mean_kl(&before, &after, net.config.n_actions);
    state.observe_kl(stats.kl, config);
    Ok(stats)
}

/// Resumable per-worker state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerState {
    pub id: usize,
    pub rng: ChaCha8Rng,
    pub episodes: u64,
    pub env: Option<(EpisodeState, ChaCha8Rng)>,
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl WorkerState {
    pub fn new(seed: u64, id: usize) -> Self {
        WorkerState {
            id,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xa3c0 + id as u64)),
            episodes: 0,
            env: None,
            h: vec![],
            c: vec![],
        }
    }
}

/// Reported to the training callback after every update.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct A3cProgress {
    pub update: u64,
    pub worker: usize,
    pub stats: A3cStats,
    pub lr: f64,
    pub success_rate: f64,
    pub episodes: u64,
    pub elapsed_secs: f64,
}

/// Whether training should go on after a callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub type UpdateCallback<'a> = dyn Fn(&A3cProgress, &NetworkParams<f32>, &SharedState) -> Control + Sync + 'a;

/// Multi-worker A3C trainer over an environment pool.
pub struct A3cTrainer {
    pub net: GatedLstm,
    pub config: A3cConfig,
    pub pool: Arc<EnvPool>,
    pub seed: u64,
    pub params: NetworkParams<f32>,
    pub shared: SharedState,
    pub workers: Vec<WorkerState>,
}

struct Shared {
    params: NetworkParams<f32>,
    state: SharedState,
}

impl A3cTrainer {
    pub fn new(pool: Arc<EnvPool>, net_config: GatedLstmConfig, config: A3cConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let cfg = &pool.config;
        let frame = [cfg.observation.channels(), cfg.height, cfg.width];
        let mut params = NetworkParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1e57));
        let net = GatedLstm::new(&mut params, frame, net_config, &mut rng);
        let workers = (0..config.workers).map(|i| WorkerState::new(seed, i)).collect();
        let shared = SharedState::new(config.lr);
        Ok(A3cTrainer { net, config, pool, seed, params, shared, workers })
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        let cfg = &self.pool.config;
        [cfg.observation.channels(), cfg.height, cfg.width]
    }

    /// Run until `max_updates` total updates or the callback stops. Worker
    /// and shared state are written back so a later call resumes.
    pub fn run(&mut self, max_updates: u64, callback: &UpdateCallback<'_>) -> Result<(), AgentError> {
        let shared = Mutex::new(Shared { params: self.params.clone(), state: self.shared.clone() });
        let stop = AtomicBool::new(false);
        let start = Instant::now();
        let ctx = WorkerCtx {
            net: &self.net,
            config: &self.config,
            pool: &self.pool,
            seed: self.seed,
            shared: &shared,
            stop: &stop,
            max_updates,
            callback,
            start,
        };
        let results: Vec<Result<WorkerState, AgentError>> = if self.workers.len() == 1 {
            vec![ctx.run(self.workers[0].clone())]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self.workers.iter().cloned().map(|w| s.spawn(|| ctx.run(w))).collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        let inner = shared.into_inner().expect("poisoned");
        self.params = inner.params;
        self.shared = inner.state;
        let mut workers = Vec::with_capacity(results.len());
        for r in results {
            workers.push(r?);
        }
        self.workers = workers;
        Ok(())
    }
}

struct WorkerCtx<'a> {
    net: &'a GatedLstm,
    config: &'a A3cConfig,
    pool: &'a Arc<EnvPool>,
    seed: u64,
    shared: &'a Mutex<Shared>,
    stop: &'a AtomicBool,
    max_updates: u64,
    callback: &'a UpdateCallback<'a>,
    start: Instant,
}

impl WorkerCtx<'_> {
    fn episode_seed(&self, w: &WorkerState) -> u64 {
        mix_seed(self.seed ^ (w.id as u64).wrapping_mul(0x9e37_79b9), w.episodes)
    }

    fn run(&self, mut w: WorkerState) -> Result<WorkerState, AgentError> {
        let mut env = RoomNavEnv::new(self.pool.clone());
        let hidden = self.net.config.hidden;
        let mut lstm = LstmState::<f32>::zeros(1, hidden);
        match w.env.take() {
            Some((state, rng)) if !state.done => {
                env.restore(state, rng);
                if w.h.len() == hidden {
                    lstm.h.data.clone_from(&w.h);
                    lstm.c.data.clone_from(&w.c);
                }
            }
            _ => {
                env.reset(self.episode_seed(&w), None)?;
            }
        }
        let mut obs = env.observation();
        let mut local = self.shared.lock().expect("poisoned").params.clone();
        let shape = [obs.channels, obs.height, obs.width];
        let clip = self.config.reward_clip as f32;

        loop {
            if self.stop.load(Ordering::SeqCst) || self.shared.lock().expect("poisoned").state.updates >= self.max_updates {
                break;
            }
            let mut traj = Trajectory {
                frame_shape: shape,
                frames: Vec::new(),
                concepts: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                start: lstm.clone(),
                bootstrap: 0.0,
            };
            let mut finished = Vec::new();
            let mut ended = false;
            for _ in 0..self.config.unroll {
                let concept = obs.instruction.concept.index();
                let frame = Tensor::new(shape.to_vec(), obs.planes.clone());
                let (probs, _, next) = self.net.step(&local, &frame, concept, &lstm)?;
                let a = sample_categorical(&probs, &mut w.rng);
                let res = env.step(&Action::Discrete(a))?;
                traj.frames.extend_from_slice(&obs.planes);
                traj.concepts.push(concept);
                traj.actions.push(a);
                traj.rewards.push((res.reward as f32).clamp(-clip, clip));
                lstm = next;
                obs = res.observation;
                if res.done {
                    finished.push((res.success, env.state().map_or(0, |s| s.t)));
                    ended = true;
                    break;
                }
            }
            if !ended {
                let frame = Tensor::new(shape.to_vec(), obs.planes.clone());
                let (_, v, _) = self.net.step(&local, &frame, obs.instruction.concept.index(), &lstm)?;
                traj.bootstrap = v;
            }

            let grads = local_gradients(self.net, &local, &traj, self.config)?;
            let (before, train_bn, mut stats) = (grads.probs.clone(), grads.train_bn, grads.stats);
            let progress = {
                let mut sh = self.shared.lock().expect("poisoned");
                let Shared { params, state } = &mut *sh;
                if state.updates >= self.max_updates {
                    break;
                }
                stats.grad_norm = apply_gradients(params, state, grads, self.config);
                for &(s, steps) in &finished {
                    state.record_episode(s, steps, self.config.success_window);
                }
                local.copy_values_from(params)?;
                local.buffers.clone_from(&params.buffers);
                (state.updates, state.lr)
            };

            let after = policy_probs(self.net, &local, &traj, train_bn)?;
            stats.kl = mean_kl(&before, &after, self.net.config.n_actions);
            {
                let mut sh = self.shared.lock().expect("poisoned");
                let Shared { params, state } = &mut *sh;
                state.observe_kl(stats.kl, self.config);
                let report = A3cProgress {
                    update: progress.0,
                    worker: w.id,
                    stats,
                    lr: progress.1,
                    success_rate: state.success_rate(),
                    episodes: state.episodes,
                    elapsed_secs: self.start.elapsed().as_secs_f64(),
                };
                if (self.callback)(&report, params, state) == Control::Stop {
                    self.stop.store(true, Ordering::SeqCst);
                }
            }

            if ended {
                w.episodes += 1;
                obs = env.reset(self.episode_seed(&w), None)?;
                lstm = LstmState::zeros(1, hidden);
            }
        }
        w.env = env.snapshot();
        w.h = lstm.h.data;
        w.c = lstm.c.data;
        Ok(w)
    }
}

/// Draw a discrete action for one observation with the recurrent policy.
pub fn act<R: Rng>(
    net: &GatedLstm,
    params: &NetworkParams<f32>,
    obs: &crate::env::Observation,
    state: &LstmState<f32>,
    mode: super::policy::ActMode,
    rng: &mut R,
) -> Result<(usize, LstmState<f32>), NnError> {
    let frame = Tensor::new(vec![obs.channels, obs.height, obs.width], obs.planes.clone());
    let (probs, _, next) = net.step(params, &frame, obs.instruction.concept.index(), state)?;
    Ok((super::policy::select_discrete(&probs, mode, rng), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::nets::FusionMode;

    fn tiny(n_actions: usize) -> GatedLstmConfig {
        GatedLstmConfig {
            conv_channels: vec![2],
            fc: 6,
            embed: 3,
            hidden: 5,
            policy_hidden: vec![8],
            value_hidden: vec![8],
            n_actions,
            fusion: FusionMode::Gated,
        }
    }

    #[test]
    fn returns_follow_the_recursion() {
        let r = compute_returns(&[1.0, 0.5], 2.0, 0.95);
        assert!((r[1] - 2.4).abs() < 1e-6 && (r[0] - 3.28).abs() < 1e-6, "{r:?}");
        assert_eq!(compute_returns(&[1.0, 0.5], 0.0, 0.0), vec![1.0, 0.5]);
        assert_eq!(compute_returns(&[0.3, -0.2, 1.0], 0.0, 0.95)[2], 1.0);
    }

    fn bandit_traj(action: usize, reward: f32, n_actions: usize) -> Trajectory {
        let _ = n_actions;
        Trajectory {
            frame_shape: [1, 2, 2],
            frames: vec![0.1, 0.7, 0.3, 0.9],
            concepts: vec![1],
            actions: vec![action],
            rewards: vec![reward],
            start: LstmState::zeros(1, 5),
            bootstrap: 0.0,
        }
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::new();
        let net = GatedLstm::new(&mut p, [1, 2, 2], tiny(3), &mut rng);
        let cfg = A3cConfig::default();
        // reward equal to the current value estimate makes A = 0
        let mut traj = bandit_traj(1, 0.0, 3);
        let v = {
            let mut g = Graph::new(&p);
            let x = g.input(traj.input());
            let out = net.unroll(&mut g, x, &traj.concepts, &traj.start, false).unwrap();
            g.value(out.values).item()
        };
        traj.rewards = vec![v];
        let mut g = Graph::new(&p);
        let loss = a3c_loss(&mut g, &net, &traj, &cfg, false).unwrap();
        assert!(g.value(loss.policy).item().abs() < 1e-7);
        assert!(g.value(loss.value).item().abs() < 1e-10);
        let back = g.backward(loss.policy).unwrap();
        let grads = back.param_grads(&g);
        for t in grads.0.iter().flatten() {
            assert!(t.data.iter().all(|v| v.abs() < 1e-7));
        }
    }

    #[test]
    fn loss_is_sum_of_weighted_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = NetworkParams::new();
        let net = GatedLstm::new(&mut p, [1, 2, 2], tiny(4), &mut rng);
        let cfg = A3cConfig::default();
        let traj = Trajectory {
            frame_shape: [1, 2, 2],
            frames: (0..12).map(|i| i as f32 / 12.0).collect(),
            concepts: vec![0, 0, 0],
            actions: vec![3, 0, 2],
            rewards: vec![-0.1, 0.4, 1.0],
            start: LstmState::zeros(1, 5),
            bootstrap: 0.5,
        };
        let mut g = Graph::new(&p);
        let l = a3c_loss(&mut g, &net, &traj, &cfg, true).unwrap();
        let v = |x| g.value(x).item() as f64;
        let expect = v(l.policy) + 1.0 * v(l.value) - 0.1 * v(l.entropy);
        assert!((v(l.total) - expect).abs() < 1e-5);
        assert!(v(l.entropy) > 0.0 && v(l.entropy) <= (4f64).ln() + 1e-6);
        assert!(matches!(a3c_loss(&mut g, &net, &Trajectory { actions: vec![], ..traj }, &cfg, true), Err(AgentError::EmptyTrajectory)));
    }

    #[test]
    fn kl_monitor_decays_learning_rate() {
        let cfg = A3cConfig { kl_window: 4, ..A3cConfig::default() };
        let mut s = SharedState::new(1e-3);
        // window mean 0.009: no decay
        for kl in [0.0, 0.006, 0.01, 0.02] {
            assert!(!s.observe_kl(kl, &cfg));
        }
        assert_eq!(s.lr, 1e-3);
        // window mean 0.0125: one decay at the end of the window
        for kl in [0.0, 0.02, 0.01] {
            assert!(!s.observe_kl(kl, &cfg));
        }
        assert!(s.observe_kl(0.02, &cfg));
        assert!((s.lr - 1e-3 / 1.5).abs() < 1e-15);
        assert_eq!(s.kl_count, 0);
        let mut low = SharedState::new(cfg.min_lr);
        assert!((0..4).all(|_| !low.observe_kl(1.0, &cfg)));
        assert!((mean_kl(&[0.5, 0.5], &[0.5, 0.5], 2)).abs() < 1e-12);
        assert!((mean_kl(&[1.0, 0.0], &[0.5, 0.5], 2) - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn two_armed_bandit_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = NetworkParams::new();
        let net = GatedLstm::new(&mut p, [1, 2, 2], tiny(2), &mut rng);
        let cfg = A3cConfig { entropy_coef: 0.01, ..A3cConfig::default() };
        let mut state = SharedState::new(cfg.lr);
        let probe = bandit_traj(0, 0.0, 2);
        let best = |p: &NetworkParams<f32>| net.step(p, &Tensor::new(vec![1, 2, 2], probe.frames.clone()), 1, &probe.start).unwrap().0[0];
        let mut reached = None;
        for u in 0..3000 {
            let probs = net.step(&p, &Tensor::new(vec![1, 2, 2], probe.frames.clone()), 1, &probe.start).unwrap().0;
            let a = sample_categorical(&probs, &mut rng);
            let traj = bandit_traj(a, if a == 0 { 1.0 } else { 0.0 }, 2);
            update_once(&net, &mut p, &mut state, &traj, &cfg).unwrap();
            if best(&p) >= 0.9 {
                reached = Some(u);
                break;
            }
        }
        assert!(reached.is_some(), "π(best) = {}", best(&p));
    }
}

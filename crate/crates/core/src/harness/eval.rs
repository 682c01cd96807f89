use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::{stable_hash, HarnessError};
use crate::agents::nets::{GatedLstm, LstmState};
use crate::agents::policy::{continuous_action, select_discrete, ActMode};
use crate::agents::replay::{quantize, stack_planes, FrameStack};
use crate::agents::DdpgLearner;
use crate::env::{apply_action, Action, ActionMode, EnvPool, Observation, RoomNavEnv, NUM_DISCRETE_ACTIONS};
use crate::nn::{NetworkParams, Tensor};
use crate::procgen::mix_seed;
use crate::scene::Concept;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A controller driven by the evaluation loop. `act` may inspect the
/// environment (privileged oracles do); learned policies only read `obs`.
pub trait Policy: Send {
    fn name(&self) -> String;
    /// Called before every episode with that episode's seed.
    fn begin_episode(&mut self, seed: u64);
    fn act(&mut self, env: &mut RoomNavEnv, obs: &Observation) -> Result<Action, HarnessError>;
}

pub type PolicyFactory<'a> = dyn Fn() -> Result<Box<dyn Policy>, HarnessError> + Sync + 'a;

fn policy_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7a4d))
}

/// Uniform discrete actions, or uniform Dirichlet samples over the
/// movement and rotation simplices.
pub struct RandomPolicy {
    mode: ActionMode,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(mode: ActionMode) -> Self {
        RandomPolicy { mode, rng: policy_rng(0) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.rng = policy_rng(seed);
    }

    fn act(&mut self, _: &mut RoomNavEnv, _: &Observation) -> Result<Action, HarnessError> {
        Ok(match self.mode {
            ActionMode::Discrete => Action::Discrete(self.rng.gen_range(0..NUM_DISCRETE_ACTIONS)),
            ActionMode::Continuous => {
                let m = Dirichlet::new(&[1.0; 4]).expect("valid").sample(&mut self.rng);
                let r = Dirichlet::new(&[1.0; 2]).expect("valid").sample(&mut self.rng);
                let m32: Vec<f32> = m.iter().map(|&v| v as f32).collect();
                let r32: Vec<f32> = r.iter().map(|&v| v as f32).collect();
                continuous_action(&m32, &r32)?
            }
        })
    }
}

/// Privileged agent: descends the target distance field, and once inside
/// the target region looks ahead one step to keep the target in view.
#[derive(Debug, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn begin_episode(&mut self, _: u64) {}

    fn act(&mut self, env: &mut RoomNavEnv, _: &Observation) -> Result<Action, HarnessError> {
        let state = env.state().ok_or(crate::env::EnvError::NotReset)?.clone();
        if state.distance > 0.0 {
            let assets = env.house_assets().expect("episode");
            let field = env.current_field().expect("applicable target");
            let frame = env.config().continuous_frame;
            let mut best = (state.distance, None);
            for a in 0..NUM_DISCRETE_ACTIONS {
                let (pose, collided) = apply_action(&assets.spatial.grid, &state.pose, &Action::Discrete(a), frame);
                if collided {
                    continue;
                }
                if let Ok(d) = field.lookup(pose.x, pose.y) {
                    if d < best.0 - 1e-9 {
                        best = (d, Some(a));
                    }
                }
            }
            // no translation improves: turn and try other headings
            return Ok(Action::Discrete(best.1.unwrap_or(8)));
        }
        let (snap, rng) = env.snapshot().expect("episode");
        let mut best = (f64::NEG_INFINITY, 8);
        for a in 0..NUM_DISCRETE_ACTIONS {
            let r = env.step(&Action::Discrete(a))?;
            let score = if r.success {
                f64::INFINITY
            } else if r.info.distance > 0.0 {
                -1.0
            } else {
                r.info.see_fraction
            };
            env.restore(snap.clone(), rng.clone());
            if score > best.0 {
                best = (score, a);
            }
        }
        if best.0 >= env.config().success_see_threshold {
            return Ok(Action::Discrete(best.1));
        }
        Ok(Action::Discrete(approach_object(env, &state).unwrap_or(if best.0 > 0.0 { best.1 } else { 8 })))
    }
}

/// Turn toward the nearest designated object in the target area, then walk
/// up to it. `None` when the house holds no such object in reach.
fn approach_object(env: &RoomNavEnv, state: &crate::env::EpisodeState) -> Option<usize> {
    let assets = env.house_assets()?;
    let house = &assets.house;
    let cats = state.concept.designated_categories();
    let p = [state.pose.x, state.pose.y];
    let here = house.room_at(p[0], p[1]).map(|r| r.id);
    let target = house
        .objects
        .iter()
        .filter(|o| cats.contains(&o.category))
        .filter(|o| crate::env::in_target(house, state.concept, o.aabb.center()[0], o.aabb.center()[1]))
        .map(|o| {
            let c = o.aabb.center();
            let d = (c[0] - p[0]).hypot(c[1] - p[1]);
            // objects in the current room first
            let penalty = if Some(o.room_id) == here { 0.0 } else { 100.0 };
            (d + penalty, [c[0], c[1]])
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))?
        .1;
    let bearing = |x: f64, y: f64, yaw: f64| {
        let want = (target[1] - y).atan2(target[0] - x).to_degrees();
        (want - yaw + 540.0).rem_euclid(360.0) - 180.0
    };
    let off = bearing(p[0], p[1], state.pose.yaw);
    if off.abs() > 20.0 {
        let turn = if off.abs() >= 30.0 {
            if off > 0.0 { 8 } else { 11 }
        } else if off > 0.0 {
            9
        } else {
            10
        };
        return Some(turn);
    }
    let frame = env.config().continuous_frame;
    let dist = (target[0] - p[0]).hypot(target[1] - p[1]);
    let mut best: Option<(f64, usize)> = None;
    for a in 0..8 {
        let (pose, collided) = apply_action(&assets.spatial.grid, &state.pose, &Action::Discrete(a), frame);
        if collided || !crate::env::in_target(house, state.concept, pose.x, pose.y) {
            continue;
        }
        let d = (target[0] - pose.x).hypot(target[1] - pose.y);
        if d < dist - 1e-9 && best.map_or(true, |b| d < b.0) {
            best = Some((d, a));
        }
    }
    best.map(|b| b.1)
}

/// Recurrent discrete policy from a trained A3C model.
pub struct LstmPolicy {
    net: Arc<GatedLstm>,
    params: Arc<NetworkParams<f32>>,
    mode: ActMode,
    state: LstmState<f32>,
    rng: ChaCha8Rng,
}

impl LstmPolicy {
    pub fn new(net: Arc<GatedLstm>, params: Arc<NetworkParams<f32>>, mode: ActMode) -> Self {
        let state = LstmState::zeros(1, net.config.hidden);
        LstmPolicy { net, params, mode, state, rng: policy_rng(0) }
    }
}

impl Policy for LstmPolicy {
    fn name(&self) -> String {
        format!("gated-lstm/{:?}", self.net.config.fusion).to_lowercase()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.state = LstmState::zeros(1, self.net.config.hidden);
        self.rng = policy_rng(seed);
    }

    fn act(&mut self, _: &mut RoomNavEnv, obs: &Observation) -> Result<Action, HarnessError> {
        let frame = Tensor::new(vec![obs.channels, obs.height, obs.width], obs.planes.clone());
        let (probs, _, next) = self.net.step(&self.params, &frame, obs.instruction.concept.index(), &self.state)?;
        self.state = next;
        Ok(Action::Discrete(select_discrete(&probs, self.mode, &mut self.rng)))
    }
}

/// Continuous policy from a trained DDPG model; eval mode drops the noise.
pub struct CnnPolicy {
    learner: Arc<DdpgLearner>,
    mode: ActMode,
    stack: FrameStack,
    planes: Vec<f32>,
    rng: ChaCha8Rng,
}

impl CnnPolicy {
    pub fn new(learner: Arc<DdpgLearner>, mode: ActMode) -> Self {
        let stack = FrameStack::new(learner.frame_stack());
        CnnPolicy { learner, mode, stack, planes: vec![], rng: policy_rng(0) }
    }
}

impl Policy for CnnPolicy {
    fn name(&self) -> String {
        format!("gated-cnn/{:?}", self.learner.net.config.fusion).to_lowercase()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.stack = FrameStack::new(self.learner.frame_stack());
        self.rng = policy_rng(seed);
    }

    fn act(&mut self, _: &mut RoomNavEnv, obs: &Observation) -> Result<Action, HarnessError> {
        self.stack.push(quantize(&obs.planes));
        self.planes.clear();
        stack_planes(&self.stack.frames(), &mut self.planes);
        let temp = match self.mode {
            ActMode::Train => Some(self.learner.net.config.tau),
            ActMode::Eval => None,
        };
        let (m, r) = self.learner.act(&self.planes, obs.instruction.concept.index(), temp, &mut self.rng)?;
        Ok(continuous_action(&m, &r)?)
    }
}

/// One finished evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub house: usize,
    pub concept: Concept,
    pub success: bool,
    pub steps: usize,
    /// Sum of shaped rewards; logged only.
    pub shaped_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRow {
    pub concept: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_steps_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub policy: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub avg_steps_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub set: String,
    pub policy: String,
    pub episodes: usize,
    pub seed: u64,
    pub config_hash: String,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_steps_success: Option<f64>,
    pub mean_shaped_return: f64,
    pub per_concept: Vec<ConceptRow>,
    pub baseline: Option<BaselineRow>,
}

fn avg_steps(outcomes: &[&EpisodeOutcome]) -> Option<f64> {
    let s: Vec<usize> = outcomes.iter().filter(|o| o.success).map(|o| o.steps).collect();
    (!s.is_empty()).then(|| s.iter().sum::<usize>() as f64 / s.len() as f64)
}

impl EvalReport {
    pub fn from_outcomes(set: &str, policy: &str, seed: u64, config_hash: String, outcomes: &[EpisodeOutcome]) -> Self {
        let all: Vec<&EpisodeOutcome> = outcomes.iter().collect();
        let successes = outcomes.iter().filter(|o| o.success).count();
        let n = outcomes.len();
        let per_concept = Concept::all()
            .into_iter()
            .filter_map(|c| {
                let rows: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.concept == c).collect();
                if rows.is_empty() && matches!(c, Concept::Object(_)) {
                    return None;
                }
                let s = rows.iter().filter(|o| o.success).count();
                Some(ConceptRow {
                    concept: c.name().to_string(),
                    episodes: rows.len(),
                    successes: s,
                    success_rate: if rows.is_empty() { 0.0 } else { s as f64 / rows.len() as f64 },
                    avg_steps_success: avg_steps(&rows),
                })
            })
            .collect();
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            set: set.to_string(),
            policy: policy.to_string(),
            episodes: n,
            seed,
            config_hash,
            successes,
            success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            avg_steps_success: avg_steps(&all),
            mean_shaped_return: if n == 0 { 0.0 } else { outcomes.iter().map(|o| o.shaped_return).sum::<f64>() / n as f64 },
            per_concept,
            baseline: None,
        }
    }

    pub fn baseline_row(&self) -> BaselineRow {
        BaselineRow {
            policy: self.policy.clone(),
            episodes: self.episodes,
            success_rate: self.success_rate,
            avg_steps_success: self.avg_steps_success,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per concept, then overall and baseline.
    pub fn to_text(&self) -> String {
        let steps = |v: Option<f64>| v.map_or("-".to_string(), |s| format!("{s:.1}"));
        let mut out = format!(
            "set {}  policy {}  episodes {}  seed {}  config {}\n",
            self.set, self.policy, self.episodes, self.seed, self.config_hash
        );
        out += &format!("{:<14}{:>10}{:>10}{:>12}\n", "concept", "episodes", "success", "avg steps");
        for r in &self.per_concept {
            out += &format!("{:<14}{:>10}{:>10.3}{:>12}\n", r.concept, r.episodes, r.success_rate, steps(r.avg_steps_success));
        }
        out += &format!("{:<14}{:>10}{:>10.3}{:>12}\n", "overall", self.episodes, self.success_rate, steps(self.avg_steps_success));
        if let Some(b) = &self.baseline {
            out += &format!("{:<14}{:>10}{:>10.3}{:>12}\n", b.policy, b.episodes, b.success_rate, steps(b.avg_steps_success));
        }
        out
    }
}

/// Options shared by evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub set: String,
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { set: "set".into(), episodes: 2000, seed: 0, workers: 1 }
    }
}

/// Seed of evaluation episode `index`; independent of worker assignment.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

fn run_episode(env: &mut RoomNavEnv, policy: &mut dyn Policy, seed: u64, index: usize) -> Result<EpisodeOutcome, HarnessError> {
    let es = episode_seed(seed, index);
    let mut obs = env.reset(es, None)?;
    policy.begin_episode(es);
    let mut ret = 0.0;
    loop {
        let a = policy.act(env, &obs)?;
        let r = env.step(&a)?;
        ret += r.reward;
        if r.done {
            let s = env.state().expect("episode");
            return Ok(EpisodeOutcome {
                index,
                house: s.house,
                concept: s.concept,
                success: r.success,
                steps: s.t,
                shaped_return: ret,
            });
        }
        obs = r.observation;
    }
}

/// Run `episodes` fixed-seed episodes over a worker pool. Episode `i` uses
/// `episode_seed(seed, i)`, so results do not depend on the worker count.
pub fn run_episodes(pool: &Arc<EnvPool>, factory: &PolicyFactory<'_>, opts: &EvalOptions) -> Result<Vec<EpisodeOutcome>, HarnessError> {
    let workers = opts.workers.clamp(1, opts.episodes.max(1));
    let work = |w: usize| -> Result<Vec<EpisodeOutcome>, HarnessError> {
        let mut env = RoomNavEnv::new(pool.clone());
        let mut policy = factory()?;
        (w..opts.episodes).step_by(workers).map(|i| run_episode(&mut env, policy.as_mut(), opts.seed, i)).collect()
    };
    let parts: Vec<Result<Vec<EpisodeOutcome>, HarnessError>> = if workers == 1 {
        vec![work(0)]
    } else {
        std::thread::scope(|s| {
            let hs: Vec<_> = (0..workers).map(|w| s.spawn(move || work(w))).collect();
            hs.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
        })
    };
    let mut all = Vec::with_capacity(opts.episodes);
    for p in parts {
        all.extend(p?);
    }
    all.sort_by_key(|o| o.index);
    Ok(all)
}

/// Evaluate a policy and summarize the episodes.
pub fn evaluate(pool: &Arc<EnvPool>, factory: &PolicyFactory<'_>, opts: &EvalOptions) -> Result<EvalReport, HarnessError> {
    let name = factory()?.name();
    let outcomes = run_episodes(pool, factory, opts)?;
    let hash = stable_hash(&serde_json::to_string(&(&pool.config, &name, pool.len())).expect("serializes"));
    Ok(EvalReport::from_outcomes(&opts.set, &name, opts.seed, hash, &outcomes))
}

/// Uniform-random baseline in the pool's action mode.
pub fn run_random_baseline(pool: &Arc<EnvPool>, opts: &EvalOptions) -> Result<EvalReport, HarnessError> {
    let mode = pool.config.action_mode;
    evaluate(pool, &move || Ok(Box::new(RandomPolicy::new(mode)) as Box<dyn Policy>), opts)
}

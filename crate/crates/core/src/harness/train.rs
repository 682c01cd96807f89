use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{CnnPolicy, LstmPolicy, Policy};
use super::HarnessError;
use crate::agents::a3c::{SharedState, WorkerState};
use crate::agents::ddpg::DdpgRunState;
use crate::agents::nets::{FusionMode, GatedCnnConfig, GatedLstm, GatedLstmConfig};
use crate::agents::{A3cConfig, A3cProgress, A3cTrainer, ActMode, Control, DdpgConfig, DdpgLearner, DdpgProgress, DdpgTrainer};
use crate::env::{ActionMode, EnvConfigFile, EnvPool};
use crate::nn::{checkpoint, NetworkParams};
use crate::procgen::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    A3c,
    Ddpg,
}

/// Training run description, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Overrides the fusion mode of whichever network is trained.
    #[serde(default)]
    pub fusion: Option<FusionMode>,
    pub env: EnvConfigFile,
    #[serde(default)]
    pub a3c: A3cConfig,
    #[serde(default)]
    pub ddpg: DdpgConfig,
    #[serde(default)]
    pub lstm: GatedLstmConfig,
    #[serde(default)]
    pub cnn: GatedCnnConfig,
    #[serde(default)]
    pub seed: u64,
    pub max_updates: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub time_budget_secs: Option<f64>,
    /// Episodes the success window must hold before a best checkpoint is kept.
    #[serde(default = "default_best_min_episodes")]
    pub best_min_episodes: usize,
}

fn default_checkpoint_every() -> u64 {
    1000
}

fn default_best_min_episodes() -> usize {
    50
}

impl TrainConfig {
    pub fn parse(text: &str, path_hint: &str) -> Result<Self, HarnessError> {
        let cfg: TrainConfig = if path_hint.ends_with(".json") {
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?, &path.to_string_lossy())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let want = match self.algorithm {
            Algorithm::A3c => ActionMode::Discrete,
            Algorithm::Ddpg => ActionMode::Continuous,
        };
        if self.env.action != want {
            return Err(HarnessError::Config(format!(
                "env.action must be {want:?} for algorithm {:?}",
                self.algorithm
            )));
        }
        if self.max_updates == 0 {
            return Err(HarnessError::Config("max_updates must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config("checkpoint_every must be positive".into()));
        }
        self.env.episode_config()?;
        match self.algorithm {
            Algorithm::A3c => self.a3c.validate()?,
            Algorithm::Ddpg => self.ddpg.validate()?,
        }
        Ok(())
    }

    pub fn lstm_config(&self) -> GatedLstmConfig {
        let mut c = self.lstm.clone();
        if let Some(f) = self.fusion {
            c.fusion = f;
        }
        c
    }

    pub fn cnn_config(&self) -> GatedCnnConfig {
        let mut c = self.cnn.clone();
        if let Some(f) = self.fusion {
            c.fusion = f;
        }
        c
    }
}

/// A trained network ready to act.
#[derive(Debug, Clone)]
pub enum Model {
    Lstm { net: Arc<GatedLstm>, params: Arc<NetworkParams<f32>> },
    Cnn(Arc<DdpgLearner>),
}

impl Model {
    pub fn policy(&self, mode: ActMode) -> Box<dyn Policy> {
        match self {
            Model::Lstm { net, params } => Box::new(LstmPolicy::new(net.clone(), params.clone(), mode)),
            Model::Cnn(l) => Box::new(CnnPolicy::new(l.clone(), mode)),
        }
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        match self {
            Model::Lstm { params, .. } => params,
            Model::Cnn(l) => &l.params,
        }
    }
}

/// Build the configured architecture for `pool` and load `checkpoint`.
pub fn load_model(cfg: &TrainConfig, pool: &EnvPool, checkpoint_path: &Path) -> Result<Model, HarnessError> {
    let c = &pool.config;
    let frame = [c.observation.channels(), c.height, c.width];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match cfg.algorithm {
        Algorithm::A3c => {
            let mut params = NetworkParams::new();
            let net = GatedLstm::new(&mut params, frame, cfg.lstm_config(), &mut rng);
            checkpoint::load_into(&mut params, checkpoint_path)?;
            Ok(Model::Lstm { net: Arc::new(net), params: Arc::new(params) })
        }
        Algorithm::Ddpg => {
            let mut l = DdpgLearner::new(frame, cfg.cnn_config(), cfg.ddpg.clone(), &mut rng)?;
            checkpoint::load_into(&mut l.params, checkpoint_path)?;
            Ok(Model::Cnn(Arc::new(l)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub updates: u64,
    pub episodes: u64,
    pub success_rate: f64,
    pub avg_steps_success: Option<f64>,
    pub best_success_rate: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub elapsed_secs: f64,
}

/// Resume file for A3C runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct A3cResume {
    shared: SharedState,
    /// Present only when written at the end of a run.
    workers: Option<Vec<WorkerState>>,
    best: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DdpgResume {
    run: DdpgRunState,
    updates: u64,
}

#[derive(Serialize)]
struct A3cRow {
    update: u64,
    worker: usize,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    total: f64,
    kl: f64,
    grad_norm: f64,
    lr: f64,
    success_rate: f64,
    episodes: u64,
    elapsed_secs: f64,
}

#[derive(Serialize)]
struct DdpgRow {
    update: u64,
    actor_objective: f64,
    critic_loss: f64,
    entropy: f64,
    total: f64,
    temperature: f64,
    success_rate: f64,
    episodes: u64,
    elapsed_secs: f64,
}

fn csv_log(path: &Path, resume: bool) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    let append = resume && path.exists();
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(!append).from_writer(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Train from a config file's contents; `base` resolves the set manifest.
pub fn train(cfg: &TrainConfig, base: &Path, out: &Path, resume: bool) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let pool = cfg.env.build_pool(base)?;
    match cfg.algorithm {
        Algorithm::A3c => train_a3c(cfg, pool, out, resume, &|_, _| Control::Continue),
        Algorithm::Ddpg => train_ddpg(cfg, pool, out, resume, &mut |_| Control::Continue),
    }
}

pub type A3cHook<'a> = dyn Fn(&A3cProgress, &SharedState) -> Control + Sync + 'a;

/// A3C with periodic checkpoints, a best-by-training-success checkpoint and
/// a per-update CSV log. `hook` may stop the run early.
pub fn train_a3c(
    cfg: &TrainConfig,
    pool: Arc<EnvPool>,
    out: &Path,
    resume: bool,
    hook: &A3cHook<'_>,
) -> Result<TrainOutcome, HarnessError> {
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.bin");
    let best_path = out.join("best.bin");
    let state_path = out.join("trainer_state.json");
    let log_path = out.join("log.csv");
    write_json(&out.join("config.json"), cfg)?;

    let mut trainer = A3cTrainer::new(pool, cfg.lstm_config(), cfg.a3c.clone(), cfg.seed)?;
    let mut best_prev = None;
    if resume && state_path.exists() {
        checkpoint::load_into(&mut trainer.params, &ckpt)?;
        let r: A3cResume = serde_json::from_slice(&std::fs::read(&state_path)?)?;
        trainer.shared = r.shared;
        if let Some(w) = r.workers.filter(|w| w.len() == trainer.workers.len()) {
            trainer.workers = w;
        }
        best_prev = r.best;
    }

    let log = Mutex::new(csv_log(&log_path, resume)?);
    let best = Mutex::new(best_prev);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    let start = Instant::now();
    let budget = cfg.time_budget_secs;
    let callback = |p: &A3cProgress, params: &NetworkParams<f32>, state: &SharedState| -> Control {
        let step = || -> Result<(), HarnessError> {
            let mut w = log.lock().expect("poisoned");
            w.serialize(A3cRow {
                update: p.update,
                worker: p.worker,
                policy_loss: p.stats.policy_loss,
                value_loss: p.stats.value_loss,
                entropy: p.stats.entropy,
                total: p.stats.total,
                kl: p.stats.kl,
                grad_norm: p.stats.grad_norm,
                lr: p.lr,
                success_rate: p.success_rate,
                episodes: p.episodes,
                elapsed_secs: p.elapsed_secs,
            })?;
            w.flush()?;
            if p.update % cfg.checkpoint_every == 0 {
                checkpoint::save(params, &ckpt, true)?;
                let b = *best.lock().expect("poisoned");
                write_json(&state_path, &A3cResume { shared: state.clone(), workers: None, best: b })?;
            }
            let mut b = best.lock().expect("poisoned");
            if state.window.len() >= cfg.best_min_episodes && b.map_or(true, |v| p.success_rate > v) {
                checkpoint::save(params, &best_path, false)?;
                *b = Some(p.success_rate);
            }
            Ok(())
        };
        if let Err(e) = step() {
            failure.lock().expect("poisoned").get_or_insert(e);
            return Control::Stop;
        }
        if budget.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            return Control::Stop;
        }
        hook(p, state)
    };
    trainer.run(cfg.max_updates, &callback)?;
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }

    let best = best.into_inner().expect("poisoned");
    checkpoint::save(&trainer.params, &ckpt, true)?;
    if best.is_none() {
        checkpoint::save(&trainer.params, &best_path, false)?;
    }
    write_json(&state_path, &A3cResume { shared: trainer.shared.clone(), workers: Some(trainer.workers.clone()), best })?;
    Ok(TrainOutcome {
        updates: trainer.shared.updates,
        episodes: trainer.shared.episodes,
        success_rate: trainer.shared.success_rate(),
        avg_steps_success: trainer.shared.avg_steps_success(),
        best_success_rate: best,
        checkpoints: vec![ckpt, best_path],
        log: log_path,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

pub type DdpgHook<'a> = dyn FnMut(&DdpgProgress) -> Control + 'a;

/// DDPG keeps its final model. Resuming restores parameters, target
/// network, optimizer and counters; the replay buffer starts empty.
pub fn train_ddpg(
    cfg: &TrainConfig,
    pool: Arc<EnvPool>,
    out: &Path,
    resume: bool,
    hook: &mut DdpgHook<'_>,
) -> Result<TrainOutcome, HarnessError> {
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.bin");
    let target = out.join("target.bin");
    let final_path = out.join("final.bin");
    let state_path = out.join("trainer_state.json");
    let log_path = out.join("log.csv");
    write_json(&out.join("config.json"), cfg)?;

    let mut trainer = DdpgTrainer::new(pool, cfg.cnn_config(), cfg.ddpg.clone(), mix_seed(cfg.seed, 1))?;
    if resume && state_path.exists() {
        checkpoint::load_into(&mut trainer.learner.params, &ckpt)?;
        checkpoint::load_into(&mut trainer.learner.target, &target)?;
        let r: DdpgResume = serde_json::from_slice(&std::fs::read(&state_path)?)?;
        trainer.state = r.run;
        trainer.learner.updates = r.updates;
    }
    let mut log = csv_log(&log_path, resume)?;
    let mut failure = None;
    let start = Instant::now();
    let budget = cfg.time_budget_secs;
    let mut callback = |p: &DdpgProgress, l: &DdpgLearner| -> Control {
        let step = |log: &mut csv::Writer<std::fs::File>| -> Result<(), HarnessError> {
            log.serialize(DdpgRow {
                update: p.update,
                actor_objective: p.stats.actor_objective,
                critic_loss: p.stats.critic_loss,
                entropy: p.stats.entropy,
                total: p.stats.total,
                temperature: p.temperature,
                success_rate: p.success_rate,
                episodes: p.episodes,
                elapsed_secs: p.elapsed_secs,
            })?;
            log.flush()?;
            if p.update % cfg.checkpoint_every == 0 {
                checkpoint::save(&l.params, &ckpt, true)?;
                checkpoint::save(&l.target, &target, false)?;
            }
            Ok(())
        };
        if let Err(e) = step(&mut log) {
            failure.get_or_insert(e);
            return Control::Stop;
        }
        if budget.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            return Control::Stop;
        }
        hook(p)
    };
    trainer.run(cfg.max_updates, &mut callback)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let l = &trainer.learner;
    checkpoint::save(&l.params, &ckpt, true)?;
    checkpoint::save(&l.target, &target, false)?;
    checkpoint::save(&l.params, &final_path, false)?;
    write_json(&state_path, &DdpgResume { run: trainer.state.clone(), updates: l.updates })?;
    Ok(TrainOutcome {
        updates: l.updates,
        episodes: trainer.state.episodes,
        success_rate: trainer.success_rate(),
        avg_steps_success: None,
        best_success_rate: None,
        checkpoints: vec![ckpt, final_path],
        log: log_path,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

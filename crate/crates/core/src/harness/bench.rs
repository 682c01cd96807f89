use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{Action, AugmentationSpec, EpisodeConfig, EnvPool, ObservationSpec, RoomNavEnv, NUM_DISCRETE_ACTIONS};
use crate::procgen::mix_seed;
use crate::render::{benchmark_throughput, Planes};
use crate::scene::House;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    /// Observation planes, e.g. `mask+depth`.
    pub planes: String,
    pub workers: usize,
    pub frames_per_worker: usize,
    pub render_per_worker_fps: Vec<f64>,
    pub render_aggregate_fps: f64,
    /// Full environment steps: physics, rendering, reward and encoding.
    pub env_per_worker_fps: Vec<f64>,
    pub env_aggregate_fps: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|f| format!("{f:.0}")).collect::<Vec<_>>().join(" ");
        format!(
            "resolution {}x{}  planes {}  workers {}  frames/worker {}\n\
             render fps  aggregate {:.0}  per worker [{}]\n\
             env-step fps  aggregate {:.0}  per worker [{}]\n",
            self.width,
            self.height,
            self.planes,
            self.workers,
            self.frames_per_worker,
            self.render_aggregate_fps,
            list(&self.render_per_worker_fps),
            self.env_aggregate_fps,
            list(&self.env_per_worker_fps),
        )
    }
}

pub fn plane_label(spec: ObservationSpec) -> String {
    let mut parts = vec![];
    if spec.rgb {
        parts.push("rgb");
    }
    if spec.mask.is_some() {
        parts.push("mask");
    }
    if spec.depth {
        parts.push("depth");
    }
    parts.join("+")
}

/// Rendering throughput on the first house, then environment-step
/// throughput with uniform random actions over all houses.
pub fn bench(
    houses: &[House],
    resolution: (usize, usize),
    spec: ObservationSpec,
    workers: usize,
    n_frames: usize,
    seed: u64,
) -> Result<BenchReport, HarnessError> {
    if houses.is_empty() {
        return Err(HarnessError::Config("bench needs at least one house".into()));
    }
    if n_frames < 100 {
        return Err(HarnessError::Config("bench needs at least 100 frames per worker".into()));
    }
    let workers = workers.max(1);
    let planes = Planes { rgb: spec.rgb, depth: spec.depth };
    let render = benchmark_throughput(&houses[0], n_frames, resolution, planes, workers, seed);

    let config = EpisodeConfig { width: resolution.0, height: resolution.1, observation: spec, ..Default::default() };
    let pool = EnvPool::new(houses, config, &AugmentationSpec::default())?;
    let run = |w: usize| -> Result<f64, HarnessError> {
        let mut env = RoomNavEnv::new(Arc::clone(&pool));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, w as u64));
        let mut episode = 0;
        env.reset(mix_seed(seed ^ w as u64, episode), None)?;
        let t0 = Instant::now();
        for _ in 0..n_frames {
            let r = env.step(&Action::Discrete(rng.gen_range(0..NUM_DISCRETE_ACTIONS)))?;
            if r.done {
                episode += 1;
                env.reset(mix_seed(seed ^ w as u64, episode), None)?;
            }
        }
        Ok(n_frames as f64 / t0.elapsed().as_secs_f64())
    };
    let start = Instant::now();
    let results: Vec<Result<f64, HarnessError>> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..workers).map(|w| s.spawn(move || run(w))).collect();
        hs.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let env_aggregate_fps = (workers * n_frames) as f64 / start.elapsed().as_secs_f64();
    Ok(BenchReport {
        width: resolution.0,
        height: resolution.1,
        planes: plane_label(spec),
        workers,
        frames_per_worker: n_frames,
        render_per_worker_fps: render.per_worker_fps,
        render_aggregate_fps: render.aggregate_fps,
        env_per_worker_fps: results.into_iter().collect::<Result<_, _>>()?,
        env_aggregate_fps,
    })
}

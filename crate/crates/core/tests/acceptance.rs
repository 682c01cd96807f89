//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line; the
//! test fails if any hard criterion fails. Criteria run one after another so
//! the timing-sensitive ones are not disturbed by each other.
//!
//! The long training criteria read their budgets from the environment:
//! `ROOMNAV_DESK_BUDGET_SECS` (default 7200) and `ROOMNAV_AUG_BUDGET_SECS`
//! (default 900 per agent). `ROOMNAV_ACCEPTANCE_ONLY=2,5,6a` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roomnav::agents::a3c::{update_once, SharedState, Trajectory};
use roomnav::agents::nets::{Fusion, FusionMode, GatedCnn, GatedCnnConfig, GatedLstm, GatedLstmConfig, LstmState};
use roomnav::agents::policy::sample_categorical;
use roomnav::agents::replay::{quantize, ReplayBuffer, Transition};
use roomnav::agents::{A3cConfig, A3cProgress, A3cTrainer, ActMode, Control, DdpgConfig, DdpgLearner};
use roomnav::env::*;
use roomnav::harness::eval::{evaluate, run_random_baseline, EvalOptions, OraclePolicy, Policy};
use roomnav::harness::train::{train_a3c, TrainConfig};
use roomnav::harness::{load_model, HarnessError};
use roomnav::nn::gradcheck::{check, project, GradCheck};
use roomnav::nn::layers::uniform;
use roomnav::nn::{gumbel_softmax, sample_gumbel, BatchNorm2d, Conv2d, Embedding, Linear, LstmCell, NetworkParams, Tensor};
use roomnav::procgen::{generate_set, randomize_colors, GenParams};
use roomnav::render::{benchmark_throughput, random_poses, Camera, Planes, Renderer, SceneMesh};
use roomnav::scene::{fixtures, Category, House, Rect, Room, RoomType, FORMAT_VERSION};
use roomnav::spatial::{distance_field, rasterize_occupancy, OccupancyGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn env_secs(name: &str, default: u64) -> Duration {
    Duration::from_secs(std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default))
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut o = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    let took = t0.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail = format!("{}; runtime {:.0}s over the {}s limit", o.detail, took.as_secs_f64(), limit.as_secs());
        } else {
            o.detail = format!("{}; {:.1}s", o.detail, took.as_secs_f64());
        }
    }
    o
}

// 1. gradients

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn worst(a: GradCheck, b: GradCheck) -> GradCheck {
    if b.max_rel_err > a.max_rel_err {
        GradCheck { checked: a.checked + b.checked, ..b }
    } else {
        GradCheck { checked: a.checked + b.checked, ..a }
    }
}

fn layer_gradients() -> GradCheck {
    let mut r = rng(101);
    let mut out = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let h = 1e-5;

    let mut p = NetworkParams::<f64>::new();
    let lin = Linear::new(&mut p, "lin", 5, 4, &mut r);
    p.values[lin.b.0] = uniform(&[4], 1.0, &mut r);
    let proj: Tensor<f64> = uniform(&[3, 4], 1.0, &mut r);
    for act in 0..4 {
        let x: Tensor<f64> = uniform(&[3, 5], 1.0, &mut r);
        let c = check(
            &p,
            &[x],
            &|g, x| {
                let y = lin.forward(g, x[0])?;
                let y = match act {
                    0 => g.relu(y),
                    1 => g.sigmoid(y),
                    2 => g.tanh(y),
                    _ => g.log_softmax(y),
                };
                project(g, y, &proj)
            },
            h,
            40,
            &mut r,
        )
        .unwrap();
        out = worst(out, c);
    }

    let mut p = NetworkParams::<f64>::new();
    let conv = Conv2d::new(&mut p, "conv", 2, 3, 5, 2, 2, &mut r);
    p.values[conv.b.0] = uniform(&[3], 1.0, &mut r);
    let (ho, wo) = conv.output_size(9, 11);
    let proj: Tensor<f64> = uniform(&[2, 3, ho, wo], 1.0, &mut r);
    let x: Tensor<f64> = uniform(&[2, 2, 9, 11], 1.0, &mut r);
    out = worst(out, check(&p, &[x], &|g, x| {
        let y = conv.forward(g, x[0])?;
        project(g, y, &proj)
    }, h, 40, &mut r).unwrap());

    let mut p = NetworkParams::<f64>::new();
    let bn = BatchNorm2d::new(&mut p, "bn", 3);
    p.values[bn.gamma.0] = uniform(&[3], 1.5, &mut r);
    p.values[bn.beta.0] = uniform(&[3], 1.0, &mut r);
    p.buffers[bn.running_var.0] = Tensor::new(vec![3], vec![0.5, 1.5, 2.0]);
    let proj: Tensor<f64> = uniform(&[4, 3, 2, 3], 1.0, &mut r);
    for train in [true, false] {
        let x: Tensor<f64> = uniform(&[4, 3, 2, 3], 1.0, &mut r);
        out = worst(out, check(&p, &[x], &|g, x| {
            let y = bn.forward(g, x[0], train)?;
            project(g, y, &proj)
        }, h, 40, &mut r).unwrap());
    }

    let mut p = NetworkParams::<f64>::new();
    let emb = Embedding::new(&mut p, "emb", 6, 4, &mut r);
    let proj: Tensor<f64> = uniform(&[3, 4], 1.0, &mut r);
    out = worst(
        out,
        check(
            &p,
            &[],
            &|g, _| {
                let e = emb.forward(g, &[1, 5, 1])?;
                project(g, e, &proj)
            },
            h,
            40,
            &mut r,
        )
        .unwrap(),
    );

    let mut p = NetworkParams::<f64>::new();
    let cell = LstmCell::new(&mut p, "lstm", 4, 3, &mut r);
    let proj_h: Tensor<f64> = uniform(&[2, 3], 1.0, &mut r);
    let proj_c: Tensor<f64> = uniform(&[2, 3], 1.0, &mut r);
    let inputs: Vec<Tensor<f64>> = vec![uniform(&[2, 4], 1.0, &mut r), uniform(&[2, 3], 0.5, &mut r), uniform(&[2, 3], 0.5, &mut r)];
    out = worst(
        out,
        check(
            &p,
            &inputs,
            &|g, x| {
                let (h1, c1) = cell.forward(g, x[0], x[1], x[2])?;
                let a = project(g, h1, &proj_h)?;
                let b = project(g, c1, &proj_c)?;
                g.add(a, b)
            },
            h,
            40,
            &mut r,
        )
        .unwrap(),
    );

    let p = NetworkParams::<f64>::new();
    let noise: Tensor<f64> = sample_gumbel(&[2, 4], &mut r);
    let proj: Tensor<f64> = uniform(&[2, 4], 1.0, &mut r);
    let logits: Tensor<f64> = uniform(&[2, 4], 2.0, &mut r);
    out = worst(
        out,
        check(&p, &[logits], &|g, x| {
            let y = gumbel_softmax(g, x[0], 0.7, Some(noise.clone()))?;
            project(g, y, &proj)
        }, h, 40, &mut r).unwrap(),
    );

    let mut p = NetworkParams::<f64>::new();
    let fusion = Fusion::new(&mut p, "fuse", FusionMode::Gated, 5, 3, &mut r);
    let proj: Tensor<f64> = uniform(&[2, 5], 1.0, &mut r);
    let inputs: Vec<Tensor<f64>> = vec![uniform(&[2, 5], 1.0, &mut r), uniform(&[2, 3], 1.0, &mut r)];
    out = worst(out, check(&p, &inputs, &|g, x| {
        let y = fusion.forward(g, x[0], x[1])?;
        project(g, y, &proj)
    }, h, 40, &mut r).unwrap());
    out
}

fn architecture_gradients() -> GradCheck {
    let mut r = rng(202);
    let h = 1e-5;
    let mut p = NetworkParams::<f64>::new();
    let cfg = GatedCnnConfig {
        frame_stack: 2,
        conv_channels: vec![3, 4],
        fc: 6,
        embed: 3,
        policy_hidden: vec![5],
        q_hidden: vec![4],
        fusion: FusionMode::Gated,
        tau: 1.0,
    };
    let cnn = GatedCnn::new(&mut p, [2, 11, 9], cfg, &mut r);
    let frames: Tensor<f64> = uniform(&[3, 4, 11, 9], 1.0, &mut r);
    let action: Tensor<f64> = uniform(&[3, 6], 1.0, &mut r);
    let proj: Tensor<f64> = uniform(&[3, 6], 1.0, &mut r);
    let qproj: Tensor<f64> = uniform(&[3, 1], 1.0, &mut r);
    let noise: (Tensor<f64>, Tensor<f64>) = (sample_gumbel(&[3, 4], &mut r), sample_gumbel(&[3, 2], &mut r));
    let cnn_report = check(
        &p,
        &[frames, action],
        &|g, x| {
            let hs = cnn.encode(g, x[0], &[0, 9, 19], true)?;
            let out = cnn.actor(g, hs, 1.0, Some(noise.clone()))?;
            let both = g.concat_cols(&[out.m, out.r])?;
            let a = project(g, both, &proj)?;
            let q = cnn.critic(g, hs, x[1])?;
            let b = project(g, q, &qproj)?;
            g.add(a, b)
        },
        h,
        8,
        &mut r,
    )
    .unwrap();

    let mut p = NetworkParams::<f64>::new();
    let cfg = GatedLstmConfig {
        conv_channels: vec![3, 4],
        fc: 6,
        embed: 3,
        hidden: 5,
        policy_hidden: vec![5],
        value_hidden: vec![4],
        n_actions: NUM_DISCRETE_ACTIONS,
        fusion: FusionMode::Gated,
    };
    let lstm = GatedLstm::new(&mut p, [2, 11, 9], cfg, &mut r);
    let frames: Tensor<f64> = uniform(&[5, 2, 11, 9], 1.0, &mut r);
    let concepts = [2usize, 2, 2, 2, 2];
    let start = LstmState { h: uniform(&[1, 5], 0.5, &mut r), c: uniform(&[1, 5], 0.5, &mut r) };
    let proj: Tensor<f64> = uniform(&[5, NUM_DISCRETE_ACTIONS], 1.0, &mut r);
    let vproj: Tensor<f64> = uniform(&[5, 1], 1.0, &mut r);
    let lstm_report = check(
        &p,
        &[frames],
        &|g, x| {
            let out = lstm.unroll(g, x[0], &concepts, &start, true)?;
            let a = project(g, out.log_probs, &proj)?;
            let b = project(g, out.values, &vproj)?;
            g.add(a, b)
        },
        h,
        8,
        &mut r,
    )
    .unwrap();
    worst(cnn_report, lstm_report)
}

fn criterion_gradients() -> Outcome {
    let layers = layer_gradients();
    let nets = architecture_gradients();
    outcome(
        layers.max_rel_err <= 1e-4 && nets.max_rel_err <= 1e-3,
        format!(
            "layers max rel err {:.2e} (<= 1e-4, {} probes), architectures {:.2e} (<= 1e-3, {} probes)",
            layers.max_rel_err, layers.checked, nets.max_rel_err, nets.checked
        ),
    )
}

// 2. spatial

/// Path length `a + b * sqrt(2)` in cells, compared exactly.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Steps(i64, i64);

fn shorter(x: Steps, y: Steps) -> bool {
    // x < y  <=>  (x.0 - y.0) < (y.1 - x.1) * sqrt(2)
    let da = x.0 - y.0;
    let db = y.1 - x.1;
    match (da.signum(), db.signum()) {
        (0, 0) => false,
        (a, b) if a <= 0 && b >= 0 => true,
        (a, b) if a >= 0 && b <= 0 => false,
        (1, 1) => da * da < 2 * db * db,
        _ => da * da > 2 * db * db,
    }
}

/// Bellman-Ford relaxation until nothing changes.
fn brute_force(w: usize, h: usize, occupied: &[bool], targets: &[usize]) -> Vec<Option<Steps>> {
    let mut best: Vec<Option<Steps>> = vec![None; w * h];
    for &t in targets {
        if !occupied[t] {
            best[t] = Some(Steps(0, 0));
        }
    }
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && !occupied[y as usize * w + x as usize];
    loop {
        let mut changed = false;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !free(x, y) {
                    continue;
                }
                let here = y as usize * w + x as usize;
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                            continue;
                        }
                        let diagonal = dx != 0 && dy != 0;
                        if diagonal && !(free(x + dx, y) && free(x, y + dy)) {
                            continue;
                        }
                        let Some(Steps(a, b)) = best[(y + dy) as usize * w + (x + dx) as usize] else { continue };
                        let cand = if diagonal { Steps(a, b + 1) } else { Steps(a + 1, b) };
                        if best[here].map_or(true, |cur| shorter(cand, cur)) {
                            best[here] = Some(cand);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return best;
        }
    }
}

fn criterion_spatial() -> Outcome {
    let mut r = rng(303);
    let mut mismatches = 0;
    let mut max_dev: f64 = 0.0;
    for _ in 0..50 {
        let w = r.gen_range(1..=40);
        let h = r.gen_range(1..=40);
        let density = r.gen_range(0.0..0.45);
        let occupied: Vec<bool> = (0..w * h).map(|_| r.gen_bool(density)).collect();
        let targets: Vec<usize> = (0..r.gen_range(1..5)).map(|_| r.gen_range(0..w * h)).collect();
        let cs = [0.1, 0.25, 1.0][r.gen_range(0..3)];
        let grid = OccupancyGrid::from_cells(w, h, cs, occupied.clone());
        let field = distance_field(&grid, &targets);
        for (idx, want) in brute_force(w, h, &occupied, &targets).into_iter().enumerate() {
            let got = field.at(idx);
            match want {
                None => mismatches += got.is_finite() as usize,
                Some(Steps(a, b)) => {
                    let exact = cs * (a as f64 + b as f64 * std::f64::consts::SQRT_2);
                    let dev = (got - exact).abs();
                    max_dev = max_dev.max(dev);
                    mismatches += (!got.is_finite() || dev > 1e-9) as usize;
                }
            }
        }
    }

    // shaping magnitude over random legal moves
    let (set, _) = generate_set("shaping", 4, 31, &GenParams::default()).unwrap();
    let mut max_shaping: f64 = 0.0;
    let mut cell_size = 0.0;
    for mode in [ActionMode::Discrete, ActionMode::Continuous] {
        let cfg = EpisodeConfig { width: 16, height: 12, action_mode: mode, ..Default::default() };
        cell_size = cfg.cell_size;
        let pool = EnvPool::new(&set.houses, cfg, &AugmentationSpec::default()).unwrap();
        let mut env = RoomNavEnv::new(pool);
        let mut episode = 0;
        env.reset(episode, None).unwrap();
        for _ in 0..5_000 {
            let before = env.state().unwrap().distance;
            let action = match mode {
                ActionMode::Discrete => Action::Discrete(r.gen_range(0..NUM_DISCRETE_ACTIONS)),
                ActionMode::Continuous => {
                    let m: Vec<f64> = (0..4).map(|_| r.gen::<f64>()).collect();
                    let s: f64 = m.iter().sum();
                    let t: f64 = r.gen();
                    Action::continuous([m[0] / s, m[1] / s, m[2] / s, m[3] / s], [t, 1.0 - t]).unwrap()
                }
            };
            let step = env.step(&action).unwrap();
            max_shaping = max_shaping.max((before - step.info.distance).abs());
            if step.done {
                episode += 1;
                env.reset(episode, None).unwrap();
            }
        }
    }
    let bound = 0.5 * std::f64::consts::SQRT_2 + 2.0 * cell_size;
    outcome(
        mismatches == 0 && max_shaping <= bound,
        format!(
            "50 grids: {mismatches} cells differ from brute force (max deviation {max_dev:.1e} m); \
             max |shaping| over 10000 moves {max_shaping:.3} (<= {bound:.3})"
        ),
    )
}

// 3. renderer

fn box_room() -> House {
    House {
        format_version: FORMAT_VERSION.into(),
        id: "box".into(),
        seed: 0,
        wall_height: 2.8,
        agent_height: 1.0,
        rooms: vec![Room { id: 0, room_type: RoomType::LivingRoom, rect: Rect::new(0.0, 0.0, 6.0, 6.0), doors: vec![] }],
        objects: vec![],
    }
}

fn criterion_renderer() -> Outcome {
    // East wall inner face at x = 5.95; camera 2 m away looking along +x.
    let house = box_room();
    let cam = Camera::new(3.95, 3.0, 1.0, 0.0);
    let mut renderer = Renderer::for_camera(&cam);
    let frame = renderer.render(&SceneMesh::from_house(&house), &cam, Planes::MASK_DEPTH).clone();
    let f = 0.5 * cam.width as f64 / (0.5 * cam.fov.to_radians()).tan();
    let mut depth_err: f64 = 0.0;
    for py in 0..cam.height {
        for px in 0..cam.width {
            let u = (px as f64 + 0.5 - 0.5 * cam.width as f64) / f;
            let v = (0.5 * cam.height as f64 - py as f64 - 0.5) / f;
            // ray (1, -u, v) in world axes hits the plane x = 5.95 at t = 2
            let expect = 2.0 * (1.0 + u * u + v * v).sqrt();
            let i = py * cam.width + px;
            depth_err = depth_err.max((frame.depth[i] as f64 - expect).abs());
            assert_eq!(frame.semantic[i], Category::Wall.id());
        }
    }

    let (set, _) = generate_set("render", 5, 41, &GenParams::default()).unwrap();
    let mut inconsistent = 0;
    let mut plane_diffs = 0;
    let mut rgb_changed = 0;
    let mut frames = 0;
    for (k, house) in set.houses.iter().enumerate() {
        let grid = rasterize_occupancy(house, 0.1, 0.2).unwrap();
        let recolored = randomize_colors(house, 1000 + k as u64);
        let (mesh, mesh2) = (SceneMesh::from_house(house), SceneMesh::from_house(&recolored));
        let mut a = Renderer::new(60, 45, 60.0);
        let mut b = Renderer::new(60, 45, 60.0);
        for (x, y, z, yaw) in random_poses(&grid, house.agent_height, 200, k as u64) {
            let cam = Camera::new(x, y, z, yaw).with_resolution(60, 45);
            let fa = a.render(&mesh, &cam, Planes::ALL);
            for (&s, &id) in fa.semantic.iter().zip(&fa.instance) {
                let ok = if id == 0 {
                    (s as usize) < Category::STRUCTURAL
                } else {
                    house.objects.iter().find(|o| o.id == id as u32).is_some_and(|o| o.category.semantic_id() == s)
                };
                inconsistent += !ok as usize;
            }
            let fb = b.render(&mesh2, &cam, Planes::ALL);
            if fa.semantic != fb.semantic || fa.instance != fb.instance || fa.depth.iter().zip(&fb.depth).any(|(p, q)| p.to_bits() != q.to_bits()) {
                plane_diffs += 1;
            }
            rgb_changed += (fa.rgb != fb.rgb) as usize;
            frames += 1;
        }
    }
    outcome(
        depth_err <= 1e-3 && inconsistent == 0 && plane_diffs == 0 && rgb_changed > 0,
        format!(
            "wall depth max error {depth_err:.1e} m (<= 1e-3); {frames} frames: {inconsistent} inconsistent pixels, \
             {plane_diffs} frames with mask/depth changes after recoloring, {rgb_changed} with changed rgb"
        ),
    )
}

// 4. environment contract

fn criterion_env() -> Outcome {
    let (set, _) = generate_set("contract", 3, 51, &GenParams::default()).unwrap();
    let cfg = EpisodeConfig { width: 32, height: 24, observation: ObservationSpec::RGB_DEPTH, ..Default::default() };
    let pool = EnvPool::new(&set.houses, cfg, &AugmentationSpec::default()).unwrap();
    let script: Vec<Action> = (0..150).map(|i| Action::Discrete((i * 5 + 1) % NUM_DISCRETE_ACTIONS)).collect();
    let run = |seed: u64| {
        let mut env = RoomNavEnv::new(pool.clone());
        let first = env.reset(seed, None).unwrap();
        let mut out = vec![];
        for a in &script {
            let r = env.step(a).unwrap();
            let done = r.done;
            out.push(r);
            if done {
                break;
            }
        }
        (first, out)
    };
    let reproducible = (0..5).all(|s| run(s) == run(s));

    // horizon: rotating in place never succeeds outside the target view
    let mut env = RoomNavEnv::new(pool.clone());
    let mut horizon_ok = true;
    for seed in 0..5 {
        env.reset(100 + seed, None).unwrap();
        let mut n = 0;
        loop {
            let r = env.step(&Action::Discrete(8)).unwrap();
            n += 1;
            if r.done {
                horizon_ok &= r.success || n == 100;
                horizon_ok &= n <= 100;
                break;
            }
        }
    }

    let ring = EnvPool::new(&[fixtures::bed_ring()], EpisodeConfig { width: 32, height: 24, ..Default::default() }, &AugmentationSpec::default()).unwrap();
    let mut env = RoomNavEnv::new(ring);
    let mut step_two = true;
    for seed in 0..20 {
        env.reset(seed, None).unwrap();
        let a = env.step(&Action::Discrete(9)).unwrap();
        let b = env.step(&Action::Discrete(10)).unwrap();
        step_two &= !a.success && !a.done && b.success && b.done;
    }
    let mut streak = 0;
    let mut below = false;
    for _ in 0..100 {
        streak = update_see_streak(streak, 0.039, EpisodeConfig::default().success_see_threshold);
        below |= streak >= EpisodeConfig::default().success_consecutive_steps;
    }
    outcome(
        reproducible && horizon_ok && step_two && !below,
        format!("reproducible {reproducible}, horizon {horizon_ok}, ring success at step 2 {step_two}, success at 0.039 {below}"),
    )
}

// 5. oracle

fn criterion_oracle() -> Outcome {
    let (set, _) = generate_set("oracle", 20, 61, &GenParams::default()).unwrap();
    let cfg = EpisodeConfig { width: 60, height: 45, ..Default::default() };
    let pool = EnvPool::new(&set.houses, cfg, &AugmentationSpec::default()).unwrap();
    let f = || Ok(Box::new(OraclePolicy) as Box<dyn Policy>);
    let opts = EvalOptions { set: "oracle".into(), episodes: 200, seed: 5, workers: 1 };
    let r = evaluate(&pool, &f, &opts).unwrap();
    outcome(r.success_rate >= 0.95, format!("success {:.3} over 200 episodes on 20 houses (>= 0.95)", r.success_rate))
}

// 6. bandits

fn criterion_a3c_bandit() -> Outcome {
    let mut r = rng(71);
    let cfg = GatedLstmConfig {
        conv_channels: vec![2],
        fc: 6,
        embed: 3,
        hidden: 5,
        policy_hidden: vec![8],
        value_hidden: vec![8],
        n_actions: 2,
        fusion: FusionMode::Gated,
    };
    let mut p = NetworkParams::new();
    let net = GatedLstm::new(&mut p, [1, 2, 2], cfg, &mut r);
    let a3c = A3cConfig::default();
    let mut state = SharedState::new(a3c.lr);
    let frame = Tensor::new(vec![1, 2, 2], vec![0.1, 0.7, 0.3, 0.9]);
    let start = LstmState::zeros(1, 5);
    let mut reached = None;
    let mut pi = 0.0;
    for u in 1..=3000 {
        let probs = net.step(&p, &frame, 1, &start).unwrap().0;
        let a = sample_categorical(&probs, &mut r);
        let traj = Trajectory {
            frame_shape: [1, 2, 2],
            frames: frame.data.clone(),
            concepts: vec![1],
            actions: vec![a],
            rewards: vec![if a == 0 { 1.0 } else { 0.0 }],
            start: start.clone(),
            bootstrap: 0.0,
        };
        update_once(&net, &mut p, &mut state, &traj, &a3c).unwrap();
        pi = net.step(&p, &frame, 1, &start).unwrap().0[0];
        if pi >= 0.9 {
            reached = Some(u);
            break;
        }
    }
    outcome(reached.is_some(), format!("A3C pi(best) {pi:.3} after {} updates (>= 0.9 within 3000)", reached.unwrap_or(3000)))
}

fn criterion_ddpg_bandit() -> Outcome {
    let mut r = rng(72);
    let net = GatedCnnConfig {
        frame_stack: 1,
        conv_channels: vec![4],
        fc: 8,
        embed: 4,
        policy_hidden: vec![16],
        q_hidden: vec![16],
        fusion: FusionMode::Gated,
        tau: 1.0,
    };
    let cfg = DdpgConfig { lr: 1e-3, batch: 32, ..DdpgConfig::default() };
    let mut learner = DdpgLearner::new([1, 2, 2], net, cfg, &mut r).unwrap();
    let obs = [0.2, 0.9, 0.4, 0.0];
    let state = quantize(&obs);
    let mut buf = ReplayBuffer::new(5000);
    for step in 0..2000 {
        let temp = learner.config.explore_temperature(step, 1.0);
        let (m, rot) = learner.act(&obs, 2, Some(temp), &mut r).unwrap();
        buf.push(Transition {
            state: vec![state.clone()],
            concept: 2,
            action: [m[0], m[1], m[2], m[3], rot[0], rot[1]],
            reward: m[0],
            next_state: vec![state.clone()],
            done: true,
        });
        let batch = buf.sample(32, &mut r);
        learner.update(&batch, &mut r).unwrap();
    }
    let (m, _) = learner.act(&obs, 2, None, &mut r).unwrap();
    outcome(m[0] >= 0.9, format!("DDPG mass on best movement {:.3} after 2000 updates (>= 0.9)", m[0]))
}

// 7. desk-scale learning

fn criterion_desk_learning() -> Outcome {
    let budget = env_secs("ROOMNAV_DESK_BUDGET_SECS", 7200);
    let (set, _) = generate_set("desk", 3, 1, &GenParams::default()).unwrap();
    let cfg = EpisodeConfig { width: 60, height: 45, observation: ObservationSpec::MASK_DEPTH, ..Default::default() };
    let pool = EnvPool::new(&set.houses, cfg, &AugmentationSpec::default()).unwrap();
    let opts = EvalOptions { set: "desk".into(), episodes: 1000, seed: 1, workers: 1 };
    let random = run_random_baseline(&pool, &opts).unwrap();
    let random_steps = random.avg_steps_success.unwrap_or(0.0);
    let target = 3.0 * random.success_rate;

    let a3c = A3cConfig { workers: 8, ..A3cConfig::default() };
    let window = a3c.success_window;
    let mut trainer = A3cTrainer::new(pool, GatedLstmConfig::default(), a3c, 7).unwrap();
    let best = Mutex::new((0.0f64, None::<f64>, 0u64));
    let met = Mutex::new(None::<(f64, f64, u64)>);
    let t0 = Instant::now();
    let cb = |p: &A3cProgress, _: &NetworkParams<f32>, s: &SharedState| {
        if s.window.len() >= window {
            let rate = s.success_rate();
            let steps = s.avg_steps_success();
            let mut b = best.lock().unwrap();
            if rate > b.0 {
                *b = (rate, steps, p.update);
            }
            if rate >= target && steps.is_some_and(|st| st > random_steps) {
                *met.lock().unwrap() = Some((rate, steps.unwrap_or(0.0), p.update));
                return Control::Stop;
            }
        }
        if t0.elapsed() >= budget {
            Control::Stop
        } else {
            Control::Continue
        }
    };
    trainer.run(u64::MAX, &cb).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let updates = trainer.shared.updates;
    let base = format!(
        "random {:.3} ({} episodes, avg steps {random_steps:.1}); target {target:.3}",
        random.success_rate, random.episodes
    );
    let met = *met.lock().unwrap();
    match met {
        Some((rate, steps, u)) => outcome(true, format!("{base}; training success {rate:.3} with avg steps {steps:.1} at update {u} after {elapsed:.0}s")),
        None => {
            let (rate, steps, u) = *best.lock().unwrap();
            outcome(
                false,
                format!(
                    "{base}; best training success {rate:.3} (avg steps {}) at update {u}; {updates} updates in {elapsed:.0}s",
                    steps.map_or("-".into(), |s| format!("{s:.1}"))
                ),
            )
        }
    }
}

// 8. augmentation ordering

fn criterion_augmentation() -> Outcome {
    let budget = env_secs("ROOMNAV_AUG_BUDGET_SECS", 900);
    let (train, _) = generate_set("aug_train", 20, 500, &GenParams::default()).unwrap();
    let (test, _) = generate_set("aug_test", 10, 900, &GenParams::default()).unwrap();
    let mut rates = vec![];
    for obs in [ObservationSpec::MASK_DEPTH, ObservationSpec::RGB] {
        let cfg = EpisodeConfig { width: 60, height: 45, observation: obs, ..Default::default() };
        let pool = EnvPool::new(&train.houses, cfg.clone(), &AugmentationSpec::default()).unwrap();
        let mut trainer = A3cTrainer::new(pool, GatedLstmConfig::default(), A3cConfig::default(), 9).unwrap();
        let best = Mutex::new((f64::NEG_INFINITY, None::<Arc<NetworkParams<f32>>>));
        let t0 = Instant::now();
        let window = trainer.config.success_window;
        let cb = |_: &A3cProgress, params: &NetworkParams<f32>, s: &SharedState| {
            let mut b = best.lock().unwrap();
            if s.window.len() >= window.min(50) && s.success_rate() > b.0 {
                *b = (s.success_rate(), Some(Arc::new(params.clone())));
            }
            if t0.elapsed() >= budget {
                Control::Stop
            } else {
                Control::Continue
            }
        };
        trainer.run(u64::MAX, &cb).unwrap();
        let params = best.into_inner().unwrap().1.unwrap_or_else(|| Arc::new(trainer.params.clone()));
        let net = Arc::new(trainer.net.clone());
        let test_pool = EnvPool::new(&test.houses, cfg, &AugmentationSpec::default()).unwrap();
        let f = || {
            Ok(Box::new(roomnav::harness::eval::LstmPolicy::new(net.clone(), params.clone(), ActMode::Eval)) as Box<dyn Policy>)
        };
        let opts = EvalOptions { set: "aug_test".into(), episodes: 300, seed: 4, workers: 1 };
        rates.push(evaluate(&test_pool, &f, &opts).unwrap().success_rate);
    }
    let ordered = rates[0] >= rates[1];
    let detail = format!("test success mask+depth {:.3}, rgb {:.3}", rates[0], rates[1]);
    if !ordered {
        println!("warning: augmentation ordering not observed at this budget ({detail})");
    }
    outcome(true, format!("{detail}; ordering {}", if ordered { "holds" } else { "violated (report only)" }))
}

// 9. throughput

fn criterion_throughput() -> Outcome {
    let house = fixtures::hallway();
    let single = benchmark_throughput(&house, 1500, (120, 90), Planes::MASK_DEPTH, 1, 0);
    let four = benchmark_throughput(&house, 1500, (120, 90), Planes::MASK_DEPTH, 4, 0);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        single.aggregate_fps >= 200.0 && four.aggregate_fps >= 3.0 * single.aggregate_fps,
        format!(
            "single worker {:.0} fps (>= 200); 4 workers {:.0} fps aggregate, {:.2}x (>= 3x); {cores} cores available",
            single.aggregate_fps,
            four.aggregate_fps,
            four.aggregate_fps / single.aggregate_fps
        ),
    )
}

// 10. persistence

fn persistence_config(dir: &std::path::Path, max_updates: u64) -> TrainConfig {
    let (set, retries) = generate_set("persist", 2, 81, &GenParams::compact()).unwrap();
    set.save(dir.join("set"), &retries).unwrap();
    let text = format!(
        r#"
algorithm = "a3c"
seed = 4
max_updates = {max_updates}
checkpoint_every = 10
best_min_episodes = 1

[env]
set_manifest = "set/manifest.json"
obs = ["mask", "depth"]
action = "discrete"
width = 20
height = 15

[a3c]
workers = 1
unroll = 10

[lstm]
conv_channels = [4, 8]
fc = 16
hidden = 16
policy_hidden = [16]
value_hidden = [16]
"#
    );
    TrainConfig::parse(&text, "acceptance.toml").unwrap()
}

fn criterion_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = persistence_config(dir.path(), 16);
    let pool = cfg.env.build_pool(dir.path()).unwrap();
    fn record(log: &Mutex<Vec<(u64, f64)>>) -> impl Fn(&A3cProgress, &SharedState) -> Control + Sync + '_ {
        move |p, _| {
            log.lock().unwrap().push((p.update, p.stats.total));
            Control::Continue
        }
    }
    let full = Mutex::new(vec![]);
    train_a3c(&cfg, pool.clone(), &dir.path().join("full"), false, &record(&full)).unwrap();
    let part = Mutex::new(vec![]);
    let first = TrainConfig { max_updates: 9, ..cfg.clone() };
    train_a3c(&first, pool.clone(), &dir.path().join("part"), false, &record(&part)).unwrap();
    train_a3c(&cfg, pool.clone(), &dir.path().join("part"), true, &record(&part)).unwrap();
    let (full, part) = (full.into_inner().unwrap(), part.into_inner().unwrap());
    let resumed_matches = full.len() == 16 && full == part;

    let ckpt = dir.path().join("full").join("checkpoint.bin");
    let opts = EvalOptions { set: "persist".into(), episodes: 20, seed: 2, workers: 1 };
    let report = |path: &std::path::Path| -> Result<String, HarnessError> {
        let model = load_model(&cfg, &pool, path)?;
        let f = || Ok(model.policy(ActMode::Eval));
        Ok(evaluate(&pool, &f, &opts)?.to_json())
    };
    let copy = dir.path().join("copy.bin");
    std::fs::copy(&ckpt, &copy).unwrap();
    let a = report(&ckpt).unwrap();
    let b = report(&copy).unwrap();
    let round_trip = a == b;
    outcome(
        resumed_matches && round_trip,
        format!("checkpoint reload gives identical eval report {round_trip}; resumed losses match uninterrupted {resumed_matches}"),
    )
}

#[test]
fn acceptance() {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let criteria: Vec<(&str, bool, Option<Duration>, fn() -> Outcome)> = vec![
        ("1 gradient checks", true, min(2), criterion_gradients),
        ("2 spatial oracle", true, min(1), criterion_spatial),
        ("3 renderer geometry", true, min(2), criterion_renderer),
        ("4 environment contract", true, min(1), criterion_env),
        ("5 oracle navigation", true, min(5), criterion_oracle),
        ("6a A3C bandit", true, min(3), criterion_a3c_bandit),
        ("6b DDPG bandit", true, min(3), criterion_ddpg_bandit),
        ("9 throughput", true, None, criterion_throughput),
        ("10 determinism and persistence", true, None, criterion_persistence),
        ("7 desk-scale learning", true, None, criterion_desk_learning),
        ("8 augmentation ordering (soft)", false, None, criterion_augmentation),
    ];
    let only: Option<Vec<String>> = std::env::var("ROOMNAV_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = vec![];
    for (name, hard, limit, run) in criteria {
        let id = name.split(' ').next().unwrap_or_default();
        if only.as_ref().is_some_and(|o| !o.iter().any(|k| k == id || (id.starts_with(k.as_str()) && k.len() < id.len() && !k.is_empty() && id[k.len()..].chars().all(|c| c.is_alphabetic())))) {
            continue;
        }
        let o = timed(limit, run);
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if hard && !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

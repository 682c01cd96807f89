use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use roomnav::agents::ActMode;
use roomnav::env::{AugmentationSpec, EnvConfigFile, EnvPool, EpisodeConfig, ObservationSpec};
use roomnav::harness::eval::{evaluate, run_random_baseline, EvalOptions, Policy};
use roomnav::harness::{bench, load_model, train, HarnessError, TrainConfig};
use roomnav::procgen::{generate_set, EnvSet, GenError, GenParams};
use roomnav::render::{self, Camera, Planes};
use roomnav::scene::{fixtures, House};
use roomnav::spatial;

#[derive(Parser)]
#[command(name = "roomnav", version, about = "Procedural houses, the RoomNav task and gated-attention agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Config file, TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
struct Source {
    /// Set manifest written by `gen-set`.
    #[arg(long)]
    set: Option<PathBuf>,
    /// Built-in fixture house: corridor, hallway or bed_ring.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a set of houses and write it with a manifest.
    GenSet {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "set")]
        name: String,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Smaller houses with two or three rooms.
        #[arg(long)]
        compact: bool,
    },
    /// Render one view and write RGB (PPM), semantic and depth (PGM) images.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0)]
        house: usize,
        /// Camera pose; a random free pose when omitted.
        #[arg(long, num_args = 3, value_names = ["X", "Y", "YAW"])]
        pose: Option<Vec<f64>>,
        #[arg(long, default_value_t = 120)]
        width: usize,
        #[arg(long, default_value_t = 90)]
        height: usize,
    },
    /// Summarize houses: rooms, objects, targets and free space.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
    },
    /// Measure rendering and environment-step throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 120)]
        width: usize,
        #[arg(long, default_value_t = 90)]
        height: usize,
        /// Comma-separated planes: rgb, mask, mask_ids, depth.
        #[arg(long, default_value = "mask,depth")]
        planes: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 1000)]
        frames: usize,
    },
    /// Train an agent from a training config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint with fixed episode seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this set instead of the training set.
        #[arg(long)]
        set: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Add a random-policy row.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate the uniform random policy.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        set: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn gen_kind(e: &GenError) -> &'static str {
    match e {
        GenError::Io(_) => "io",
        GenError::Scene(_) => "format",
        _ => "generation",
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Config(_) => "config",
                HarnessError::Env(_) => "env",
                HarnessError::Agent(_) => "agent",
                HarnessError::Nn(_) => "checkpoint",
                HarnessError::Gen(g) => gen_kind(g),
                HarnessError::Io(_) => "io",
                HarnessError::Json(_) | HarnessError::Csv(_) => "format",
            };
        }
        if cause.is::<roomnav::env::EnvError>() {
            return "env";
        }
        if let Some(g) = cause.downcast_ref::<GenError>() {
            return gen_kind(g);
        }
        if cause.is::<roomnav::nn::NnError>() {
            return "checkpoint";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "usage"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": error_kind(&e), "message": format!("{e:#}") });
            eprintln!("error: {line}");
            ExitCode::from(1)
        }
    }
}

fn houses_from(source: &Source, config: Option<&Path>) -> Result<(String, Vec<House>)> {
    if let Some(f) = &source.fixture {
        let h = match f.as_str() {
            "corridor" => fixtures::corridor(),
            "hallway" => fixtures::hallway(),
            "bed_ring" => fixtures::bed_ring(),
            other => bail!("unknown fixture {other:?}"),
        };
        return Ok((f.clone(), vec![h]));
    }
    let manifest = match (&source.set, config) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => {
            let env = env_config(c)?;
            base_dir(c).join(env.set_manifest)
        }
        (None, None) => bail!("give --set, --fixture or --config"),
    };
    let set = EnvSet::load(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
    Ok((set.name, set.houses))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// An environment block, either a whole file or the `env` table of a
/// training config.
fn env_config(path: &Path) -> Result<EnvConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let hint = path.to_string_lossy();
    if let Ok(t) = TrainConfig::parse(&text, &hint) {
        return Ok(t.env);
    }
    Ok(EnvConfigFile::parse(&text, &hint)?)
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf> {
    let p = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
    Ok(p)
}

fn write_report(dir: &Path, stem: &str, json: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    std::fs::write(dir.join(format!("{stem}.txt")), text)?;
    print!("{text}");
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSet { common, name, count, compact } => {
            let mut params = if compact { GenParams::compact() } else { GenParams::default() };
            if let Some(c) = &common.config {
                let text = std::fs::read_to_string(c)?;
                params = if c.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                } else {
                    toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                };
            }
            let dir = out_dir(&common, &name)?;
            let (set, retries) = generate_set(&name, count, common.seed.unwrap_or(0), &params)?;
            let manifest = set.save(&dir, &retries)?;
            println!(
                "wrote {} houses to {} (room coverage {:?}, {:.2} targets per house)",
                manifest.files.len(),
                dir.display(),
                set.coverage.room_type_fraction,
                set.coverage.avg_targets
            );
        }
        Cmd::Render { common, source, house, pose, width, height } => {
            let (_, houses) = houses_from(&source, common.config.as_deref())?;
            let h = houses.get(house).with_context(|| format!("house index {house} out of range"))?;
            let (x, y, yaw) = match pose {
                Some(p) => (p[0], p[1], p[2]),
                None => {
                    let grid = spatial::rasterize_occupancy(h, spatial::DEFAULT_CELL_SIZE, spatial::DEFAULT_ROBOT_RADIUS)?;
                    let (x, y, _, yaw) = render::random_poses(&grid, h.agent_height, 1, common.seed.unwrap_or(0))[0];
                    (x, y, yaw)
                }
            };
            let cam = Camera::new(x, y, h.agent_height, yaw).with_resolution(width, height);
            let mesh = render::SceneMesh::from_house(h);
            let mut r = render::Renderer::for_camera(&cam);
            let frame = r.render(&mesh, &cam, Planes::ALL).clone();
            let dir = out_dir(&common, "render")?;
            render::write_ppm(dir.join("rgb.ppm"), &frame)?;
            let sem: Vec<u16> = frame.semantic.iter().map(|&c| c as u16 * 3000).collect();
            render::write_pgm(dir.join("semantic.pgm"), width, height, &sem)?;
            render::write_pgm(dir.join("depth.pgm"), width, height, &render::depth_preview(&frame))?;
            render::write_depth_raw(dir.join("depth.f32"), &frame)?;
            println!("rendered {}x{} at ({x:.2}, {y:.2}, yaw {yaw:.1}) into {}", width, height, dir.display());
        }
        Cmd::Inspect { common, source } => {
            let (name, houses) = houses_from(&source, common.config.as_deref())?;
            let mut rows = vec![];
            for h in &houses {
                let grid = spatial::rasterize_occupancy(h, spatial::DEFAULT_CELL_SIZE, spatial::DEFAULT_ROBOT_RADIUS)?;
                let free = grid.free_cells().count() as f64 * grid.cell_size * grid.cell_size;
                let targets: Vec<&str> = roomnav::scene::Concept::all()
                    .into_iter()
                    .filter(|c| roomnav::env::concept_applicable(h, *c))
                    .map(|c| c.name())
                    .collect();
                rows.push(serde_json::json!({
                    "id": h.id,
                    "seed": h.seed,
                    "rooms": h.rooms.iter().map(|r| r.room_type.name()).collect::<Vec<_>>(),
                    "objects": h.objects.len(),
                    "free_area_m2": (free * 100.0).round() / 100.0,
                    "targets": targets,
                }));
            }
            let report = serde_json::json!({ "set": name, "houses": rows });
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(out) = &common.out {
                std::fs::write(out, &text)?;
            }
            println!("{text}");
        }
        Cmd::Bench { common, source, width, height, planes, workers, frames } => {
            let (_, houses) = houses_from(&source, common.config.as_deref())?;
            let names: Vec<String> = planes.split(',').map(|s| s.trim().to_string()).collect();
            let spec = ObservationSpec::from_names(&names)?;
            let report = bench(&houses, (width, height), spec, workers, frames, common.seed.unwrap_or(0))?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(out) = &common.out {
                std::fs::write(out, &json)?;
            }
            print!("{}", report.to_text());
        }
        Cmd::Train { common, resume } => {
            let path = common.config.clone().context("train needs --config")?;
            let mut cfg = TrainConfig::load(&path)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let dir = out_dir(&common, "run")?;
            let outcome = train(&cfg, &base_dir(&path), &dir, resume)?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
        }
        Cmd::Eval { common, checkpoint, set, episodes, workers, baseline } => {
            let path = common.config.clone().context("eval needs --config (the training config)")?;
            let cfg = TrainConfig::load(&path)?;
            let mut env = cfg.env.clone();
            let base = match set {
                Some(s) => {
                    env.set_manifest = s.to_string_lossy().into_owned();
                    PathBuf::new()
                }
                None => base_dir(&path),
            };
            let pool = env.build_pool(&base)?;
            let model = load_model(&cfg, &pool, &checkpoint)?;
            let set_name = EnvSet::load(base.join(&env.set_manifest))?.name;
            let opts = EvalOptions { set: set_name, episodes, seed: common.seed.unwrap_or(0), workers };
            let factory = || Ok(model.policy(ActMode::Eval)) as Result<Box<dyn Policy>, HarnessError>;
            let mut report = evaluate(&pool, &factory, &opts)?;
            if baseline {
                report.baseline = Some(run_random_baseline(&pool, &opts)?.baseline_row());
            }
            let dir = out_dir(&common, "eval")?;
            write_report(&dir, "report", &report.to_json(), &report.to_text())?;
        }
        Cmd::Baseline { common, set, episodes, workers } => {
            let (pool, name) = match (&common.config, set) {
                (Some(c), None) => {
                    let env = env_config(c)?;
                    let name = EnvSet::load(base_dir(c).join(&env.set_manifest))?.name;
                    (env.build_pool(&base_dir(c))?, name)
                }
                (_, Some(s)) => {
                    let set = EnvSet::load(&s)?;
                    (EnvPool::from_set(&set, EpisodeConfig::default(), &AugmentationSpec::default())?, set.name)
                }
                (None, None) => bail!("baseline needs --config or --set"),
            };
            let opts = EvalOptions { set: name, episodes, seed: common.seed.unwrap_or(0), workers };
            let report = run_random_baseline(&pool, &opts)?;
            let dir = out_dir(&common, "baseline")?;
            write_report(&dir, "baseline", &report.to_json(), &report.to_text())?;
        }
    }
    Ok(())
}

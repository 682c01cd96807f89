//! The RoomNav episodic environment: spawning, instructions, actions,
//! collision, reward shaping, success and termination, plus pools of houses
//! with augmentation.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::procgen::{randomize_colors, EnvSet, GenError};
use crate::render::{pixel_fraction_any, Camera, FrameSet, Planes, Renderer, SceneMesh};
use crate::scene::{Category, Concept, House, RoomType};
use crate::spatial::{
    distance_field, rasterize_occupancy, target_region, DistanceField, OccupancyGrid, SpatialError, DEFAULT_CELL_SIZE,
    DEFAULT_ROBOT_RADIUS,
};

/// Largest translation per axis and rotation per step.
pub const MAX_TRANSLATION: f64 = 0.5;
pub const MAX_ROTATION: f64 = 30.0;
pub const NUM_DISCRETE_ACTIONS: usize = 12;
/// Depth normalization range in meters; farther surfaces map to 1.
pub const DEPTH_RANGE: f32 = 10.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("house {house} has no applicable concept")]
    NoApplicableConcept { house: String },
    #[error("concept {0} is not applicable in the current house")]
    NotApplicable(Concept),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("environment pool is empty")]
    EmptyPool,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Gen(#[from] GenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees in [0, 360).
    pub yaw: f64,
}

impl Pose {
    pub fn camera(&self, width: usize, height: usize, fov: f64) -> Camera {
        Camera::new(self.x, self.y, self.z, self.yaw).with_resolution(width, height).with_fov(fov)
    }
}

fn wrap_degrees(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous { m: [f64; 4], r: [f64; 2] },
}

impl Action {
    /// A continuous action; `m` and `r` must be probability vectors.
    pub fn continuous(m: [f64; 4], r: [f64; 2]) -> Result<Action, EnvError> {
        let ok = |v: &[f64]| v.iter().all(|&x| x >= -1e-9) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-4;
        if !ok(&m) || !ok(&r) {
            return Err(EnvError::InvalidAction(format!("m={m:?}, r={r:?} are not distributions")));
        }
        Ok(Action::Continuous { m, r })
    }

    pub fn discrete(index: usize) -> Result<Action, EnvError> {
        if index >= NUM_DISCRETE_ACTIONS {
            return Err(EnvError::InvalidAction(format!("discrete index {index} out of range")));
        }
        Ok(Action::Discrete(index))
    }
}

/// Agent-frame `(forward, left, rotation)` triples: six translations
/// (forward, left, right at 0.5 and 0.25 m), two forward diagonals and four
/// rotations. Translation and rotation never combine.
pub fn discrete_action_table() -> [(f64, f64, f64); NUM_DISCRETE_ACTIONS] {
    [
        (0.5, 0.0, 0.0),
        (0.25, 0.0, 0.0),
        (0.0, 0.5, 0.0),
        (0.0, 0.25, 0.0),
        (0.0, -0.5, 0.0),
        (0.0, -0.25, 0.0),
        (0.35, 0.35, 0.0),
        (0.35, -0.35, 0.0),
        (0.0, 0.0, 30.0),
        (0.0, 0.0, 15.0),
        (0.0, 0.0, -15.0),
        (0.0, 0.0, -30.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousFrame {
    /// Literal axis-aligned update: x += (m1-m2)*0.5, y += (m3-m4)*0.5.
    #[default]
    World,
    /// (m1-m2)*0.5 forward and (m3-m4)*0.5 to the left of the heading.
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Discrete,
    Continuous,
}

/// Translation in world coordinates and rotation in degrees implied by an action.
pub fn action_delta(action: &Action, yaw: f64, frame: ContinuousFrame) -> (f64, f64, f64) {
    let rot = |f: f64, l: f64| {
        let (s, c) = yaw.to_radians().sin_cos();
        (f * c - l * s, f * s + l * c)
    };
    match *action {
        Action::Discrete(i) => {
            let (f, l, dr) = discrete_action_table()[i];
            let (dx, dy) = rot(f, l);
            (dx, dy, dr)
        }
        Action::Continuous { m, r } => {
            let a = (m[0] - m[1]) * MAX_TRANSLATION;
            let b = (m[2] - m[3]) * MAX_TRANSLATION;
            let dr = (r[0] - r[1]) * MAX_ROTATION;
            let (dx, dy) = match frame {
                ContinuousFrame::World => (a, b),
                ContinuousFrame::Agent => rot(a, b),
            };
            (dx, dy, dr)
        }
    }
}

/// Apply an action with swept collision. Translation is cancelled when the
/// straight path leaves free space; rotation always applies.
pub fn apply_action(grid: &OccupancyGrid, pose: &Pose, action: &Action, frame: ContinuousFrame) -> (Pose, bool) {
    let (dx, dy, dr) = action_delta(action, pose.yaw, frame);
    let mut next = Pose { yaw: wrap_degrees(pose.yaw + dr), ..*pose };
    let moves = dx != 0.0 || dy != 0.0;
    let mut collision = false;
    if moves {
        let target = [pose.x + dx, pose.y + dy];
        if grid.segment_is_free([pose.x, pose.y], target) {
            next.x = target[0];
            next.y = target[1];
        } else {
            collision = true;
        }
    }
    (next, collision)
}

/// Shaped reward for one step.
pub fn compute_reward(
    config: &RewardConfig,
    prev_dist: f64,
    curr_dist: f64,
    collision: bool,
    in_target_room: bool,
    success: bool,
) -> f64 {
    let mut r = prev_dist - curr_dist;
    if collision {
        r -= config.collision_penalty;
    }
    if !in_target_room {
        r -= config.time_penalty;
    }
    if success {
        r += config.success_reward;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub collision_penalty: f64,
    pub success_reward: f64,
    pub time_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { collision_penalty: 0.3, success_reward: 10.0, time_penalty: 0.1 }
    }
}

/// How the semantic plane is presented to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskEncoding {
    /// One channel of category ids scaled to [0,1].
    Ids,
    /// One 0/1 plane per category.
    #[default]
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub rgb: bool,
    pub mask: Option<MaskEncoding>,
    pub depth: bool,
}

impl ObservationSpec {
    pub const RGB: ObservationSpec = ObservationSpec { rgb: true, mask: None, depth: false };
    pub const RGB_DEPTH: ObservationSpec = ObservationSpec { rgb: true, mask: None, depth: true };
    pub const MASK_DEPTH: ObservationSpec =
        ObservationSpec { rgb: false, mask: Some(MaskEncoding::OneHot), depth: true };

    pub fn channels(&self) -> usize {
        let mut c = 0;
        if self.rgb {
            c += 3;
        }
        c += match self.mask {
            None => 0,
            Some(MaskEncoding::Ids) => 1,
            Some(MaskEncoding::OneHot) => Category::COUNT,
        };
        if self.depth {
            c += 1;
        }
        c
    }

    fn planes(&self) -> Planes {
        Planes { rgb: self.rgb, depth: self.depth }
    }

    /// Parse names such as `["rgb", "mask", "depth"]`.
    pub fn from_names(names: &[String]) -> Result<ObservationSpec, EnvError> {
        let mut spec = ObservationSpec { rgb: false, mask: None, depth: false };
        for n in names {
            match n.as_str() {
                "rgb" => spec.rgb = true,
                "mask" => spec.mask = Some(MaskEncoding::OneHot),
                "mask_ids" => spec.mask = Some(MaskEncoding::Ids),
                "depth" => spec.depth = true,
                other => return Err(EnvError::Config(format!("unknown observation plane {other:?}"))),
            }
        }
        if spec.channels() == 0 {
            return Err(EnvError::Config("observation needs at least one plane".into()));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub success_see_threshold: f64,
    pub success_consecutive_steps: usize,
    pub reward: RewardConfig,
    pub observation: ObservationSpec,
    pub action_mode: ActionMode,
    pub continuous_frame: ContinuousFrame,
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    pub cell_size: f64,
    pub robot_radius: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            horizon: 100,
            success_see_threshold: 0.04,
            success_consecutive_steps: 2,
            reward: RewardConfig::default(),
            observation: ObservationSpec::MASK_DEPTH,
            action_mode: ActionMode::Discrete,
            continuous_frame: ContinuousFrame::World,
            width: 120,
            height: 90,
            fov: 60.0,
            cell_size: DEFAULT_CELL_SIZE,
            robot_radius: DEFAULT_ROBOT_RADIUS,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let r = &self.reward;
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if [r.collision_penalty, r.success_reward, r.time_penalty, self.success_see_threshold].iter().any(|v| *v < 0.0) {
            return Err(EnvError::Config("reward constants must be non-negative".into()));
        }
        if self.success_consecutive_steps == 0 || self.width == 0 || self.height == 0 {
            return Err(EnvError::Config("consecutive steps and resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Geometry-derived data shared by every color variant of a house.
#[derive(Debug)]
pub struct SpatialAssets {
    pub grid: OccupancyGrid,
    /// Distance fields for every concept present, indexed by concept index.
    pub fields: Vec<Option<DistanceField>>,
    /// Free cells with a finite distance, per concept.
    spawn_cells: Vec<Vec<usize>>,
}

impl SpatialAssets {
    pub fn build(house: &House, cell_size: f64, robot_radius: f64) -> Result<Self, SpatialError> {
        let grid = rasterize_occupancy(house, cell_size, robot_radius)?;
        let mut fields = Vec::with_capacity(Concept::COUNT);
        let mut spawn_cells = Vec::with_capacity(Concept::COUNT);
        for c in Concept::all() {
            if !concept_applicable(house, c) {
                fields.push(None);
                spawn_cells.push(Vec::new());
                continue;
            }
            let targets = target_region(house, &grid, c)?;
            let field = distance_field(&grid, &targets);
            let cells: Vec<usize> = grid.free_cells().filter(|&i| field.at(i).is_finite()).collect();
            if targets.is_empty() || cells.is_empty() {
                fields.push(None);
                spawn_cells.push(Vec::new());
            } else {
                fields.push(Some(field));
                spawn_cells.push(cells);
            }
        }
        Ok(SpatialAssets { grid, fields, spawn_cells })
    }

    pub fn field(&self, c: Concept) -> Option<&DistanceField> {
        self.fields[c.index()].as_ref()
    }
}

/// A room concept needs a room of that type holding a designated object; an
/// object concept needs an instance of the category.
pub fn concept_applicable(house: &House, c: Concept) -> bool {
    match c {
        Concept::Room(t) => house.rooms.iter().any(|r| {
            r.room_type == t
                && house.objects.iter().any(|o| o.room_id == r.id && t.designated_objects().contains(&o.category))
        }),
        Concept::Object(o) => house.has_object(o),
    }
}

/// One house ready for episodes: geometry, render mesh and distance fields.
#[derive(Debug)]
pub struct HouseAssets {
    pub house: House,
    pub mesh: SceneMesh,
    pub spatial: Arc<SpatialAssets>,
}

impl HouseAssets {
    pub fn new(house: House, cell_size: f64, robot_radius: f64) -> Result<Self, SpatialError> {
        let spatial = Arc::new(SpatialAssets::build(&house, cell_size, robot_radius)?);
        Ok(Self::with_spatial(house, spatial))
    }

    /// Share spatial data with a house of identical geometry.
    pub fn with_spatial(house: House, spatial: Arc<SpatialAssets>) -> Self {
        let mesh = SceneMesh::from_house(&house);
        HouseAssets { house, mesh, spatial }
    }

    pub fn applicable(&self, task: TaskLevel) -> Vec<Concept> {
        let pool: Vec<Concept> = match task {
            TaskLevel::Rooms => Concept::rooms().collect(),
            TaskLevel::All => Concept::all().collect(),
        };
        pool.into_iter().filter(|c| self.spatial.field(*c).is_some()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskLevel {
    /// The five room concepts.
    #[default]
    Rooms,
    /// Rooms plus the fifteen object concepts.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AugmentationSpec {
    /// Color-randomized variants added per house (0 disables).
    pub pixel: usize,
    pub task: TaskLevel,
}

/// Observation handed to an agent. Planes are channel-major `C × H × W`
/// with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub planes: Vec<f32>,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub instruction: Instruction,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub concept: Concept,
    pub onehot: Vec<f32>,
}

impl Instruction {
    pub fn new(concept: Concept) -> Self {
        let mut onehot = vec![0.0; Concept::COUNT];
        onehot[concept.index()] = 1.0;
        Instruction { concept, onehot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collision: bool,
    pub distance: f64,
    pub in_target_room: bool,
    pub see_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub info: StepInfo,
}

/// Serializable episode state, enough to resume an interrupted rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub house: usize,
    pub pose: Pose,
    pub concept: Concept,
    pub t: usize,
    pub see_streak: usize,
    pub distance: f64,
    pub done: bool,
}

/// Shared, immutable set of houses that environments draw episodes from.
#[derive(Debug)]
pub struct EnvPool {
    pub houses: Vec<Arc<HouseAssets>>,
    pub config: EpisodeConfig,
    pub task: TaskLevel,
}

impl EnvPool {
    /// Build assets for every house and its color-randomized variants.
    pub fn new(houses: &[House], config: EpisodeConfig, aug: &AugmentationSpec) -> Result<Arc<EnvPool>, EnvError> {
        if houses.is_empty() {
            return Err(EnvError::EmptyPool);
        }
        config.validate()?;
        let mut assets = Vec::with_capacity(houses.len() * (1 + aug.pixel));
        for h in houses {
            let base = HouseAssets::new(h.clone(), config.cell_size, config.robot_radius)?;
            let spatial = base.spatial.clone();
            if base.applicable(aug.task).is_empty() {
                return Err(EnvError::NoApplicableConcept { house: h.id.clone() });
            }
            assets.push(Arc::new(base));
            for k in 0..aug.pixel {
                let variant = randomize_colors(h, h.seed.wrapping_mul(1000).wrapping_add(k as u64 + 1));
                assets.push(Arc::new(HouseAssets::with_spatial(variant, spatial.clone())));
            }
        }
        Ok(Arc::new(EnvPool { houses: assets, config, task: aug.task }))
    }

    pub fn from_set(set: &EnvSet, config: EpisodeConfig, aug: &AugmentationSpec) -> Result<Arc<EnvPool>, EnvError> {
        Self::new(&set.houses, config, aug)
    }

    pub fn len(&self) -> usize {
        self.houses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.houses.is_empty()
    }
}

/// Environment factory over a pool.
pub fn make_env_pool(
    set: &EnvSet,
    config: EpisodeConfig,
    aug: &AugmentationSpec,
) -> Result<Arc<EnvPool>, EnvError> {
    EnvPool::from_set(set, config, aug)
}

/// One RoomNav environment. Owns its renderer and RNG; the pool is shared.
#[derive(Debug)]
pub struct RoomNavEnv {
    pool: Arc<EnvPool>,
    renderer: Renderer,
    rng: ChaCha8Rng,
    state: Option<EpisodeState>,
}

impl RoomNavEnv {
    pub fn new(pool: Arc<EnvPool>) -> Self {
        let c = &pool.config;
        let renderer = Renderer::new(c.width, c.height, c.fov);
        RoomNavEnv { pool, renderer, rng: ChaCha8Rng::seed_from_u64(0), state: None }
    }

    pub fn pool(&self) -> &Arc<EnvPool> {
        &self.pool
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.pool.config
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    pub fn house_assets(&self) -> Option<&HouseAssets> {
        self.state.as_ref().map(|s| &*self.pool.houses[s.house])
    }

    pub fn current_field(&self) -> Option<&DistanceField> {
        let s = self.state.as_ref()?;
        self.pool.houses[s.house].spatial.field(s.concept)
    }

    /// Start an episode. Deterministic in `seed`: draws the house, the
    /// instruction (unless given) and a spawn pose over free cells from
    /// which the target is reachable.
    pub fn reset(&mut self, seed: u64, instruction: Option<Concept>) -> Result<Observation, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let house = self.rng.gen_range(0..self.pool.houses.len());
        let assets = self.pool.houses[house].clone();
        let concept = match instruction {
            Some(c) => {
                if assets.spatial.field(c).is_none() {
                    return Err(EnvError::NotApplicable(c));
                }
                c
            }
            None => *assets
                .applicable(self.pool.task)
                .choose(&mut self.rng)
                .ok_or_else(|| EnvError::NoApplicableConcept { house: assets.house.id.clone() })?,
        };
        let cells = &assets.spatial.spawn_cells[concept.index()];
        let cell = cells[self.rng.gen_range(0..cells.len())];
        let [x, y] = assets.spatial.grid.cell_center(cell);
        let yaw = wrap_degrees(self.rng.gen_range(0.0..360.0));
        let pose = Pose { x, y, z: assets.house.agent_height, yaw };
        let distance = assets.spatial.field(concept).expect("applicable").lookup(x, y)?;
        self.state = Some(EpisodeState { house, pose, concept, t: 0, see_streak: 0, distance, done: false });
        self.render_current();
        Ok(self.observation())
    }

    /// Place the agent at an explicit pose (must be free) for scripted tests.
    pub fn set_pose(&mut self, pose: Pose) -> Result<Observation, EnvError> {
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        let assets = &self.pool.houses[state.house];
        let grid = &assets.spatial.grid;
        match grid.cell_at(pose.x, pose.y) {
            Some(c) if grid.is_free(c) => {}
            _ => return Err(EnvError::InvalidAction(format!("pose ({}, {}) is not free", pose.x, pose.y))),
        }
        state.pose = Pose { z: assets.house.agent_height, yaw: wrap_degrees(pose.yaw), ..pose };
        state.distance = assets.spatial.field(state.concept).expect("applicable").lookup(pose.x, pose.y)?;
        self.render_current();
        Ok(self.observation())
    }

    fn render_current(&mut self) {
        let state = self.state.as_ref().expect("episode");
        let assets = &self.pool.houses[state.house];
        let c = &self.pool.config;
        let cam = state.pose.camera(c.width, c.height, c.fov);
        self.renderer.render(&assets.mesh, &cam, c.observation.planes());
    }

    pub fn frame(&self) -> &FrameSet {
        self.renderer.frame()
    }

    /// Union pixel fraction of the categories designated for the concept.
    pub fn see_fraction(&self) -> f64 {
        let Some(state) = self.state.as_ref() else { return 0.0 };
        let ids: Vec<u8> = state.concept.designated_categories().iter().map(|c| c.semantic_id()).collect();
        pixel_fraction_any(&self.renderer.frame().semantic, &ids)
    }

    /// Whether the agent stands in the target area: a room of the target
    /// type, or for object concepts a room holding an instance.
    pub fn in_target_room(&self) -> bool {
        let Some(state) = self.state.as_ref() else { return false };
        let house = &self.pool.houses[state.house].house;
        in_target(house, state.concept, state.pose.x, state.pose.y)
    }

    pub fn observation(&self) -> Observation {
        let state = self.state.as_ref().expect("episode");
        encode_observation(&self.pool.config, self.renderer.frame(), state.concept, state.t)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let config = self.pool.config.clone();
        let state = self.state.as_ref().ok_or(EnvError::NotReset)?;
        if state.done {
            return Err(EnvError::StepAfterDone);
        }
        match (action, config.action_mode) {
            (Action::Discrete(i), ActionMode::Discrete) if *i < NUM_DISCRETE_ACTIONS => {}
            (Action::Continuous { .. }, ActionMode::Continuous) => {}
            _ => return Err(EnvError::InvalidAction(format!("{action:?} does not match {:?}", config.action_mode))),
        }
        let assets = self.pool.houses[state.house].clone();
        let field = assets.spatial.field(state.concept).expect("applicable");
        let (pose, collision) = apply_action(&assets.spatial.grid, &state.pose, action, config.continuous_frame);
        let prev = state.distance;
        let curr = field.lookup(pose.x, pose.y)?;
        {
            let s = self.state.as_mut().expect("episode");
            s.pose = pose;
            s.distance = curr;
            s.t += 1;
        }
        self.render_current();
        let see = self.see_fraction();
        let in_room = self.in_target_room();
        let s = self.state.as_mut().expect("episode");
        s.see_streak = update_see_streak(s.see_streak, see, config.success_see_threshold);
        let success = check_success(s.concept, in_room, s.see_streak, config.success_consecutive_steps);
        let reward = compute_reward(&config.reward, prev, curr, collision, in_room, success);
        s.done = success || s.t >= config.horizon;
        let done = s.done;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            success,
            info: StepInfo { collision, distance: curr, in_target_room: in_room, see_fraction: see },
        })
    }

    pub fn snapshot(&self) -> Option<(EpisodeState, ChaCha8Rng)> {
        self.state.clone().map(|s| (s, self.rng.clone()))
    }

    pub fn restore(&mut self, state: EpisodeState, rng: ChaCha8Rng) {
        self.state = Some(state);
        self.rng = rng;
        self.render_current();
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn in_target(house: &House, concept: Concept, x: f64, y: f64) -> bool {
    match concept {
        Concept::Room(t) => house.rooms.iter().any(|r| r.room_type == t && r.rect.contains(x, y)),
        Concept::Object(o) => house.rooms.iter().any(|r| {
            r.rect.contains(x, y) && house.objects.iter().any(|ob| ob.room_id == r.id && ob.category == o)
        }),
    }
}

/// Consecutive steps (including this one) with the target seen.
pub fn update_see_streak(streak: usize, see_fraction: f64, threshold: f64) -> usize {
    if see_fraction >= threshold {
        streak + 1
    } else {
        0
    }
}

/// Success: room concepts need the agent inside a target room now, and the
/// designated categories seen for `required` consecutive steps including this
/// one. Object concepts only need the see streak.
pub fn check_success(concept: Concept, in_target_room: bool, see_streak: usize, required: usize) -> bool {
    let seen = see_streak >= required;
    match concept {
        Concept::Room(_) => seen && in_target_room,
        Concept::Object(_) => seen,
    }
}

/// Encode render planes into normalized agent input.
pub fn encode_observation(config: &EpisodeConfig, frame: &FrameSet, concept: Concept, t: usize) -> Observation {
    let spec = config.observation;
    let (w, h) = (frame.width, frame.height);
    let n = w * h;
    let channels = spec.channels();
    let mut planes = Vec::with_capacity(channels * n);
    if spec.rgb {
        for ch in 0..3 {
            planes.extend((0..n).map(|i| frame.rgb[3 * i + ch]));
        }
    }
    match spec.mask {
        None => {}
        Some(MaskEncoding::Ids) => {
            let scale = 1.0 / (Category::COUNT - 1) as f32;
            planes.extend(frame.semantic.iter().map(|&s| s as f32 * scale));
        }
        Some(MaskEncoding::OneHot) => {
            let start = planes.len();
            planes.resize(start + Category::COUNT * n, 0.0);
            for (i, &s) in frame.semantic.iter().enumerate() {
                planes[start + s as usize * n + i] = 1.0;
            }
        }
    }
    if spec.depth {
        planes.extend(frame.depth.iter().map(|&d| if d.is_finite() { (d / DEPTH_RANGE).min(1.0) } else { 1.0 }));
    }
    Observation { planes, channels, width: w, height: h, instruction: Instruction::new(concept), t }
}

/// Environment-pool config block as read from TOML or JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfigFile {
    pub set_manifest: String,
    #[serde(default = "default_obs")]
    pub obs: Vec<String>,
    #[serde(default)]
    pub action: ActionMode,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub augmentation: AugmentationFile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AugmentationFile {
    pub pixel: usize,
    pub task: TaskLevel,
    pub set: Option<String>,
}

fn default_obs() -> Vec<String> {
    vec!["mask".into(), "depth".into()]
}

fn default_horizon() -> usize {
    100
}

impl EnvConfigFile {
    pub fn parse(text: &str, path_hint: &str) -> Result<Self, EnvError> {
        if path_hint.ends_with(".json") {
            serde_json::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
        }
    }

    pub fn episode_config(&self) -> Result<EpisodeConfig, EnvError> {
        let mut c = EpisodeConfig {
            horizon: self.horizon,
            observation: ObservationSpec::from_names(&self.obs)?,
            action_mode: self.action,
            ..EpisodeConfig::default()
        };
        if let Some(w) = self.width {
            c.width = w;
        }
        if let Some(h) = self.height {
            c.height = h;
        }
        c.validate()?;
        Ok(c)
    }

    /// Load the referenced set (relative to `base`) and build the pool.
    pub fn build_pool(&self, base: &Path) -> Result<Arc<EnvPool>, EnvError> {
        let set = EnvSet::load(base.join(&self.set_manifest))?;
        let aug = AugmentationSpec { pixel: self.augmentation.pixel, task: self.augmentation.task };
        EnvPool::from_set(&set, self.episode_config()?, &aug)
    }
}

/// Index of the room type for a room concept, used by per-concept reports.
pub fn room_of(concept: Concept) -> Option<RoomType> {
    match concept {
        Concept::Room(t) => Some(t),
        Concept::Object(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures;

    fn pool(house: House, config: EpisodeConfig) -> Arc<EnvPool> {
        EnvPool::new(&[house], config, &AugmentationSpec::default()).unwrap()
    }

    #[test]
    fn action_table_contract() {
        let t = discrete_action_table();
        assert_eq!(t.len(), 12);
        for (f, l, r) in t {
            assert!(f.abs() <= 0.5 && l.abs() <= 0.5 && r.abs() <= 30.0);
            assert!(r == 0.0 || (f == 0.0 && l == 0.0), "move and rotate combined");
        }
        assert_eq!(t.iter().filter(|a| a.2 == 0.0).count(), 8);
        let (dx, dy, dr) = action_delta(&Action::Discrete(0), 0.0, ContinuousFrame::World);
        assert_eq!((dx, dy, dr), (0.5, 0.0, 0.0));
    }

    #[test]
    fn continuous_formula() {
        let grid = OccupancyGrid::open(40, 40, 0.1);
        let p = Pose { x: 2.0, y: 2.0, z: 1.0, yaw: 45.0 };
        let a = Action::continuous([1.0, 0.0, 0.0, 0.0], [0.5, 0.5]).unwrap();
        let (q, c) = apply_action(&grid, &p, &a, ContinuousFrame::World);
        assert!(!c);
        assert!((q.x - 2.5).abs() < 1e-12 && q.y == 2.0 && q.yaw == 45.0);
        let a = Action::continuous([0.25; 4], [1.0, 0.0]).unwrap();
        let (q, _) = apply_action(&grid, &p, &a, ContinuousFrame::World);
        assert_eq!((q.x, q.y, q.z), (2.0, 2.0, 1.0));
        assert!((q.yaw - 75.0).abs() < 1e-12);
        let a = Action::continuous([1.0, 0.0, 0.0, 0.0], [0.5, 0.5]).unwrap();
        let (q, _) = apply_action(&grid, &Pose { yaw: 90.0, ..p }, &a, ContinuousFrame::Agent);
        assert!((q.x - 2.0).abs() < 1e-12 && (q.y - 2.5).abs() < 1e-12);
        assert!(Action::continuous([0.5, 0.6, 0.0, 0.0], [1.0, 0.0]).is_err());
        assert!(Action::discrete(12).is_err());
    }

    #[test]
    fn forward_into_wall_stays() {
        let h = fixtures::corridor();
        let a = HouseAssets::new(h, 0.1, 0.3).unwrap();
        // kitchen north wall at y = 3; inflated boundary starts at 2.65
        let p = Pose { x: 2.05, y: 2.55, z: 1.0, yaw: 90.0 };
        let c = a.spatial.grid.cell_at(p.x, p.y).unwrap();
        assert!(a.spatial.grid.is_free(c));
        let (q, hit) = apply_action(&a.spatial.grid, &p, &Action::Discrete(0), ContinuousFrame::World);
        assert!(hit);
        assert_eq!(q, p);
        // rotation still applies
        let (q, hit) = apply_action(&a.spatial.grid, &p, &Action::Discrete(8), ContinuousFrame::World);
        assert!(!hit);
        assert_eq!(q.yaw, 120.0);
    }

    #[test]
    fn reward_arithmetic() {
        let rc = RewardConfig::default();
        assert_eq!(compute_reward(&rc, 1.0, 1.0, false, true, true), 10.0);
        assert!((compute_reward(&rc, 1.0, 1.0, true, false, false) + 0.4).abs() < 1e-12);
        assert!((compute_reward(&rc, 2.0, 1.5, false, false, false) - 0.4).abs() < 1e-12);
        assert_eq!(compute_reward(&rc, 2.0, 1.75, false, true, false), 0.25);
    }

    #[test]
    fn success_rule() {
        let room = Concept::Room(RoomType::Kitchen);
        assert!(check_success(room, true, 2, 2));
        assert!(!check_success(room, true, 1, 2));
        assert!(!check_success(room, false, 5, 2));
        let obj = Concept::Object(crate::scene::ObjectCategory::Bed);
        assert!(check_success(obj, false, 2, 2));

        let run = |fractions: &[f64]| {
            let mut streak = 0;
            fractions.iter().any(|&f| {
                streak = update_see_streak(streak, f, 0.04);
                check_success(room, true, streak, 2)
            })
        };
        assert!(run(&[0.05, 0.05]));
        assert!(!run(&[0.05]));
        assert!(!run(&[0.05, 0.0, 0.05, 0.0]));
        assert!(!run(&[0.039; 100]));
    }

    #[test]
    fn reset_is_deterministic_and_free() {
        let p = pool(fixtures::corridor(), EpisodeConfig { width: 40, height: 30, ..Default::default() });
        let mut env = RoomNavEnv::new(p.clone());
        let a = env.reset(5, None).unwrap();
        let sa = env.state().cloned().unwrap();
        let b = env.reset(5, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(env.state().cloned().unwrap(), sa);
        for seed in 0..1000 {
            env.reset(seed, None).unwrap();
            let s = env.state().unwrap();
            let g = &p.houses[s.house].spatial.grid;
            assert!(g.is_free(g.cell_at(s.pose.x, s.pose.y).unwrap()));
        }
    }

    #[test]
    fn only_kitchen_in_hallway() {
        let p = pool(fixtures::hallway(), EpisodeConfig { width: 40, height: 30, ..Default::default() });
        let mut env = RoomNavEnv::new(p);
        for seed in 0..50 {
            let obs = env.reset(seed, None).unwrap();
            assert_eq!(obs.instruction.concept, Concept::Room(RoomType::Kitchen));
            assert_eq!(obs.instruction.onehot.iter().sum::<f32>(), 1.0);
            assert_eq!(obs.instruction.onehot[0], 1.0);
        }
        let err = env.reset(0, Some(Concept::Room(RoomType::Bedroom))).unwrap_err();
        assert!(matches!(err, EnvError::NotApplicable(_)));
    }

    #[test]
    fn step_after_done_errors() {
        let cfg = EpisodeConfig { width: 20, height: 15, horizon: 3, ..Default::default() };
        let mut env = RoomNavEnv::new(pool(fixtures::corridor(), cfg));
        assert!(matches!(env.step(&Action::Discrete(8)), Err(EnvError::NotReset)));
        env.reset(1, Some(Concept::Room(RoomType::Bedroom))).unwrap();
        env.set_pose(Pose { x: 1.5, y: 1.5, z: 1.0, yaw: 180.0 }).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = Some(env.step(&Action::Discrete(8)).unwrap());
        }
        assert!(last.unwrap().done);
        assert!(matches!(env.step(&Action::Discrete(8)), Err(EnvError::StepAfterDone)));
        assert!(matches!(
            env.step(&Action::Continuous { m: [1.0, 0.0, 0.0, 0.0], r: [1.0, 0.0] }),
            Err(EnvError::StepAfterDone) | Err(EnvError::InvalidAction(_))
        ));
    }

    #[test]
    fn observation_normalized_and_sized() {
        for spec in [ObservationSpec::RGB, ObservationSpec::RGB_DEPTH, ObservationSpec::MASK_DEPTH] {
            let cfg = EpisodeConfig { width: 24, height: 18, observation: spec, ..Default::default() };
            let mut env = RoomNavEnv::new(pool(fixtures::corridor(), cfg));
            let obs = env.reset(3, None).unwrap();
            assert_eq!(obs.planes.len(), spec.channels() * 24 * 18);
            assert!(obs.planes.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_pool_rejected() {
        let err = EnvPool::new(&[], EpisodeConfig::default(), &AugmentationSpec::default()).unwrap_err();
        assert!(matches!(err, EnvError::EmptyPool));
    }

    #[test]
    fn config_file_parses() {
        let text = r#"
            set_manifest = "small/manifest.json"
            obs = ["rgb", "depth"]
            action = "continuous"
            horizon = 50
            seed = 3
            [augmentation]
            pixel = 9
            task = "all"
        "#;
        let f = EnvConfigFile::parse(text, "env.toml").unwrap();
        let c = f.episode_config().unwrap();
        assert_eq!(c.horizon, 50);
        assert_eq!(c.observation, ObservationSpec::RGB_DEPTH);
        assert_eq!(c.action_mode, ActionMode::Continuous);
        assert_eq!(f.augmentation.pixel, 9);
        assert_eq!(f.augmentation.task, TaskLevel::All);
        let bad = EnvConfigFile { obs: vec!["sonar".into()], ..f };
        assert!(bad.episode_config().is_err());
    }
}

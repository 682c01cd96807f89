//! Seeded procedural houses and house sets.
//!
//! Layouts come from recursive binary splitting of the house rectangle.
//! Rooms are joined by a random spanning tree of doors plus extra doors, then
//! furnished from a per-room-type catalog by rejection sampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{
    save_house, validate, Aabb, Door, House, ObjectCategory, ObjectInstance, Rect, Room, RoomType, SceneError, Side,
    DEFAULT_AGENT_HEIGHT, DEFAULT_WALL_HEIGHT, FORMAT_VERSION, WALL_THICKNESS,
};
use crate::spatial::{connected_components, rasterize_occupancy, target_region, DEFAULT_CELL_SIZE, DEFAULT_ROBOT_RADIUS};

pub const MAX_ATTEMPTS: usize = 50;
/// Set-level retries with a fresh seed after a house fails all attempts.
pub const MAX_SEED_RETRIES: u64 = 8;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("house generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("set {name}: seed {seed} failed after {retries} seed retries")]
    SetFailed { name: String, seed: u64, retries: u64 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub rooms_min: usize,
    pub rooms_max: usize,
    /// Side length range of the house rectangle, meters.
    pub house_extent: (f64, f64),
    /// Range of optional objects added per room beyond the mandatory ones.
    pub objects_per_room: (usize, usize),
    pub required_room_types: Vec<RoomType>,
    /// Presence probability per room type, indexed like `RoomType::ALL`.
    pub room_type_presence: [f64; 5],
    pub door_extra_probability: f64,
    pub min_room_side: f64,
    pub door_width: f64,
    /// Salt mixed into every house seed.
    pub rng_seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            rooms_min: 3,
            rooms_max: 6,
            house_extent: (8.0, 13.0),
            objects_per_room: (0, 2),
            required_room_types: vec![RoomType::Kitchen],
            // kitchen, living, dining, bedroom, bathroom
            room_type_presence: [1.0, 0.6, 0.45, 0.94, 0.77],
            door_extra_probability: 0.3,
            min_room_side: 2.6,
            door_width: 1.4,
            rng_seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Params(m.to_string()));
        if self.rooms_min < 2 {
            return bad("rooms_min must be at least 2");
        }
        if self.rooms_max < self.rooms_min {
            return bad("rooms_max must be >= rooms_min");
        }
        if !(self.house_extent.0 > 0.0 && self.house_extent.1 >= self.house_extent.0) {
            return bad("house_extent must be a positive range");
        }
        if self.objects_per_room.1 < self.objects_per_room.0 {
            return bad("objects_per_room must be a range");
        }
        if !(0.0..=1.0).contains(&self.door_extra_probability)
            || self.room_type_presence.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("probabilities must lie in [0,1]");
        }
        if !(self.min_room_side > 0.0 && self.door_width >= crate::scene::MIN_DOOR_WIDTH) {
            return bad("min_room_side must be positive and door_width at least the minimum door width");
        }
        if self.door_width + 0.4 > self.min_room_side {
            return bad("door_width + 0.4 must fit within min_room_side");
        }
        Ok(())
    }

    /// Small houses used by desk-scale training runs.
    pub fn compact() -> Self {
        GenParams {
            rooms_min: 2,
            rooms_max: 3,
            house_extent: (6.0, 8.0),
            objects_per_room: (0, 1),
            ..GenParams::default()
        }
    }
}

struct CatalogEntry {
    category: ObjectCategory,
    /// width along the wall, depth away from it, height
    size: [f64; 3],
    color: [f64; 3],
    against_wall: bool,
}

fn catalog(c: ObjectCategory) -> CatalogEntry {
    use ObjectCategory::*;
    let (size, color, against_wall) = match c {
        Shower => ([0.9, 0.9, 2.0], [0.75, 0.85, 0.9], true),
        Sofa => ([2.0, 0.9, 0.85], [0.55, 0.25, 0.2], true),
        Toilet => ([0.55, 0.75, 0.8], [0.95, 0.95, 0.95], true),
        Bed => ([1.6, 2.0, 0.65], [0.35, 0.45, 0.75], true),
        Plant => ([0.5, 0.5, 1.3], [0.2, 0.6, 0.25], false),
        Television => ([1.3, 0.4, 1.2], [0.1, 0.1, 0.12], true),
        TableAndChair => ([1.6, 1.2, 0.85], [0.6, 0.4, 0.2], false),
        Chair => ([0.55, 0.55, 0.95], [0.7, 0.5, 0.3], false),
        Table => ([1.2, 0.8, 0.75], [0.5, 0.35, 0.2], false),
        KitchenSet => ([2.0, 0.65, 0.95], [0.85, 0.8, 0.7], true),
        Bathtub => ([1.7, 0.8, 0.65], [0.9, 0.9, 0.95], true),
        Vehicle => ([1.8, 4.2, 1.5], [0.7, 0.1, 0.1], false),
        Pool => ([3.0, 2.0, 0.3], [0.2, 0.5, 0.85], false),
        KitchenCabinet => ([1.0, 0.6, 2.0], [0.65, 0.55, 0.4], true),
        Curtain => ([1.5, 0.15, 2.3], [0.8, 0.7, 0.5], true),
    };
    CatalogEntry { category: c, size, color, against_wall }
}

/// Mandatory and optional furniture per room type.
fn furniture(t: RoomType) -> (&'static [ObjectCategory], &'static [ObjectCategory]) {
    use ObjectCategory::*;
    match t {
        RoomType::Kitchen => (&[KitchenSet], &[KitchenCabinet, Table]),
        RoomType::Bedroom => (&[Bed], &[Curtain, Television]),
        RoomType::Bathroom => (&[Toilet], &[Bathtub, Shower]),
        RoomType::LivingRoom => (&[Sofa], &[Television, Table, Plant, Chair]),
        RoomType::DiningRoom => (&[TableAndChair], &[Chair, Curtain]),
    }
}

/// Uniform draw from `[lo, hi]` that tolerates `lo` exceeding `hi` by rounding.
fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Derive an independent seed from `(seed, salt)`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generate one house. Deterministic in `(seed, params)`.
pub fn generate_house(seed: u64, params: &GenParams) -> Result<House, GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, params.rng_seed));
    for _ in 0..MAX_ATTEMPTS {
        if let Some(h) = try_generate(seed, params, &mut rng) {
            return Ok(h);
        }
    }
    Err(GenError::GenerationFailed { seed, attempts: MAX_ATTEMPTS })
}

fn split_rooms(rng: &mut ChaCha8Rng, w: f64, h: f64, n: usize, min_side: f64) -> Option<Vec<Rect>> {
    let mut rects = vec![Rect::new(0.0, 0.0, w, h)];
    while rects.len() < n {
        let mut order: Vec<usize> = (0..rects.len()).collect();
        order.sort_by(|&a, &b| rects[b].area().total_cmp(&rects[a].area()));
        let mut done = false;
        for i in order {
            let r = rects[i];
            let horizontal_cut = if (r.width() - r.height()).abs() < 1e-9 { rng.gen_bool(0.5) } else { r.height() > r.width() };
            let len = if horizontal_cut { r.height() } else { r.width() };
            if len < 2.0 * min_side {
                continue;
            }
            let lo = (0.35 * len).max(min_side);
            let hi = (0.65 * len).min(len - min_side);
            let cut = snap(uniform(rng, lo, hi), 0.1).clamp(min_side, len - min_side);
            let (a, b) = if horizontal_cut {
                (Rect::new(r.xmin, r.ymin, r.xmax, r.ymin + cut), Rect::new(r.xmin, r.ymin + cut, r.xmax, r.ymax))
            } else {
                (Rect::new(r.xmin, r.ymin, r.xmin + cut, r.ymax), Rect::new(r.xmin + cut, r.ymin, r.xmax, r.ymax))
            };
            rects[i] = a;
            rects.push(b);
            done = true;
            break;
        }
        if !done {
            return None;
        }
    }
    Some(rects)
}

/// Shared boundary between two rooms: the side of `a` it lies on, the line
/// coordinate and the overlap interval.
fn shared_wall(a: &Rect, b: &Rect) -> Option<(Side, f64, f64)> {
    let eps = 1e-6;
    let ov = |a0: f64, a1: f64, b0: f64, b1: f64| (a0.max(b0), a1.min(b1));
    if (a.xmax - b.xmin).abs() < eps {
        let (lo, hi) = ov(a.ymin, a.ymax, b.ymin, b.ymax);
        return (hi > lo).then_some((Side::E, lo, hi));
    }
    if (a.xmin - b.xmax).abs() < eps {
        let (lo, hi) = ov(a.ymin, a.ymax, b.ymin, b.ymax);
        return (hi > lo).then_some((Side::W, lo, hi));
    }
    if (a.ymax - b.ymin).abs() < eps {
        let (lo, hi) = ov(a.xmin, a.xmax, b.xmin, b.xmax);
        return (hi > lo).then_some((Side::N, lo, hi));
    }
    if (a.ymin - b.ymax).abs() < eps {
        let (lo, hi) = ov(a.xmin, a.xmax, b.xmin, b.xmax);
        return (hi > lo).then_some((Side::S, lo, hi));
    }
    None
}

fn try_generate(seed: u64, p: &GenParams, rng: &mut ChaCha8Rng) -> Option<House> {
    // room types present in this house
    let mut present: Vec<RoomType> = Vec::new();
    for (k, t) in RoomType::ALL.into_iter().enumerate() {
        if p.required_room_types.contains(&t) || rng.gen_bool(p.room_type_presence[k]) {
            present.push(t);
        }
    }
    let n_rooms = rng.gen_range(p.rooms_min..=p.rooms_max).max(present.len());

    let min_area = n_rooms as f64 * p.min_room_side * p.min_room_side * 1.6;
    let mut w = snap(uniform(rng, p.house_extent.0, p.house_extent.1), 0.1);
    let mut h = snap(uniform(rng, p.house_extent.0, p.house_extent.1), 0.1);
    while w * h < min_area {
        w = snap(w * 1.1, 0.1);
        h = snap(h * 1.1, 0.1);
    }
    let rects = split_rooms(rng, w, h, n_rooms, p.min_room_side)?;

    // adjacency with room for a door
    let need = p.door_width + 0.4;
    let mut edges = Vec::new();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if let Some((side, lo, hi)) = shared_wall(&rects[i], &rects[j]) {
                if hi - lo >= need {
                    edges.push((i, j, side, lo, hi));
                }
            }
        }
    }
    edges.shuffle(rng);
    // random spanning tree (Kruskal over shuffled edges) plus extra doors
    let mut parent: Vec<usize> = (0..rects.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let n = parent[c];
            parent[c] = r;
            c = n;
        }
        r
    }
    let mut doors: Vec<Vec<Door>> = vec![Vec::new(); rects.len()];
    let mut joined = 0;
    for &(i, j, side, lo, hi) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        let tree_edge = ri != rj;
        if tree_edge {
            parent[ri] = rj;
            joined += 1;
        } else if !rng.gen_bool(p.door_extra_probability) {
            continue;
        }
        let from = snap(uniform(rng, lo + 0.2, hi - 0.2 - p.door_width), 0.05).max(lo + 0.2);
        let to = from + p.door_width;
        doors[i].push(Door { wall: side, from, to });
        doors[j].push(Door { wall: side.opposite(), from, to });
    }
    if joined + 1 != rects.len() {
        return None;
    }

    // room types: every present type once, bathroom in the smallest room,
    // remaining rooms repeat present types
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.shuffle(rng);
    let mut types: Vec<Option<RoomType>> = vec![None; rects.len()];
    let mut todo = present.clone();
    if let Some(pos) = todo.iter().position(|&t| t == RoomType::Bathroom) {
        todo.remove(pos);
        let smallest = (0..rects.len()).min_by(|&a, &b| rects[a].area().total_cmp(&rects[b].area()))?;
        types[smallest] = Some(RoomType::Bathroom);
    }
    for &i in &order {
        if types[i].is_none() {
            if let Some(t) = todo.pop() {
                types[i] = Some(t);
            }
        }
    }
    let repeatable: Vec<RoomType> = present
        .iter()
        .copied()
        .filter(|t| matches!(t, RoomType::Bedroom | RoomType::LivingRoom | RoomType::Bathroom))
        .collect();
    for t in types.iter_mut() {
        if t.is_none() {
            *t = Some(*repeatable.choose(rng).unwrap_or(&present[0]));
        }
    }

    let rooms: Vec<Room> = rects
        .iter()
        .enumerate()
        .map(|(i, r)| Room { id: i as u32, room_type: types[i].expect("assigned"), rect: *r, doors: doors[i].clone() })
        .collect();

    let mut objects = Vec::new();
    for room in &rooms {
        let (mandatory, optional) = furniture(room.room_type);
        for &c in mandatory {
            let obj = place_object(rng, room, c, &objects)?;
            objects.push(obj);
        }
        let n_opt = rng.gen_range(p.objects_per_room.0..=p.objects_per_room.1).min(optional.len());
        for &c in optional.choose_multiple(rng, n_opt) {
            if let Some(obj) = place_object(rng, room, c, &objects) {
                objects.push(obj);
            }
        }
    }
    for (k, o) in objects.iter_mut().enumerate() {
        o.id = k as u32 + 1;
    }

    let house = House {
        format_version: FORMAT_VERSION.into(),
        id: format!("h{seed}"),
        seed,
        wall_height: DEFAULT_WALL_HEIGHT,
        agent_height: DEFAULT_AGENT_HEIGHT,
        rooms,
        objects,
    };
    if !validate(&house).is_empty() {
        return None;
    }
    navigable(&house).then_some(house)
}

/// Free space forms one component and every object has a reachable ring.
fn navigable(house: &House) -> bool {
    let Ok(grid) = rasterize_occupancy(house, DEFAULT_CELL_SIZE, DEFAULT_ROBOT_RADIUS) else { return false };
    let comps = connected_components(&grid);
    if comps.count != 1 {
        return false;
    }
    for room in &house.rooms {
        let has_free = grid.free_cells().any(|i| {
            let [x, y] = grid.cell_center(i);
            room.rect.contains(x, y)
        });
        if !has_free {
            return false;
        }
    }
    for obj in &house.objects {
        match target_region(house, &grid, crate::scene::Concept::Object(obj.category)) {
            Ok(cells) if !cells.is_empty() => {}
            _ => return false,
        }
    }
    true
}

fn place_object(rng: &mut ChaCha8Rng, room: &Room, c: ObjectCategory, existing: &[ObjectInstance]) -> Option<ObjectInstance> {
    let entry = catalog(c);
    let inner = Rect::new(
        room.rect.xmin + 0.5 * WALL_THICKNESS + 0.02,
        room.rect.ymin + 0.5 * WALL_THICKNESS + 0.02,
        room.rect.xmax - 0.5 * WALL_THICKNESS - 0.02,
        room.rect.ymax - 0.5 * WALL_THICKNESS - 0.02,
    );
    // keep-out boxes in front of doors, both sides of the wall
    let door_zones: Vec<Rect> = room
        .doors
        .iter()
        .map(|d| {
            let (c, _, _) = room.side_line(d.wall);
            let (a, b) = (d.from - 0.3, d.to + 0.3);
            if d.wall.is_horizontal() {
                Rect::new(a, c - 1.3, b, c + 1.3)
            } else {
                Rect::new(c - 1.3, a, c + 1.3, b)
            }
        })
        .collect();
    let jitter = |rng: &mut ChaCha8Rng, v: f64| (v + rng.gen_range(-0.06..0.06)).clamp(0.0, 1.0);
    for _ in 0..40 {
        let [sw, sd, sh] = entry.size;
        let fp = if entry.against_wall {
            let side = Side::ALL[rng.gen_range(0..4)];
            let (w, d) = if side.is_horizontal() { (sw, sd) } else { (sd, sw) };
            if w > inner.width() || d > inner.height() {
                continue;
            }
            match side {
                Side::S => {
                    let x = uniform(rng, inner.xmin, inner.xmax - w);
                    Rect::new(x, inner.ymin, x + w, inner.ymin + d)
                }
                Side::N => {
                    let x = uniform(rng, inner.xmin, inner.xmax - w);
                    Rect::new(x, inner.ymax - d, x + w, inner.ymax)
                }
                Side::W => {
                    let y = uniform(rng, inner.ymin, inner.ymax - d);
                    Rect::new(inner.xmin, y, inner.xmin + w, y + d)
                }
                Side::E => {
                    let y = uniform(rng, inner.ymin, inner.ymax - d);
                    Rect::new(inner.xmax - w, y, inner.xmax, y + d)
                }
            }
        } else {
            let (w, d) = if rng.gen_bool(0.5) { (sw, sd) } else { (sd, sw) };
            if w + 1.4 > inner.width() || d + 1.4 > inner.height() {
                continue;
            }
            let x = uniform(rng, inner.xmin + 0.7, inner.xmax - 0.7 - w);
            let y = uniform(rng, inner.ymin + 0.7, inner.ymax - 0.7 - d);
            Rect::new(x, y, x + w, y + d)
        };
        let fp = Rect::new(snap(fp.xmin, 0.01), snap(fp.ymin, 0.01), snap(fp.xmax, 0.01), snap(fp.ymax, 0.01));
        if fp.xmin < inner.xmin - 1e-9 || fp.ymin < inner.ymin - 1e-9 || fp.xmax > inner.xmax + 1e-9 || fp.ymax > inner.ymax + 1e-9 {
            continue;
        }
        if door_zones.iter().any(|z| z.overlap_area(&fp) > 0.0) {
            continue;
        }
        let clear = |o: &&ObjectInstance| {
            let e = o.aabb.footprint();
            let grown = Rect::new(e.xmin - 0.15, e.ymin - 0.15, e.xmax + 0.15, e.ymax + 0.15);
            grown.overlap_area(&fp) > 0.0
        };
        if existing.iter().filter(|o| o.room_id == room.id).any(|o| clear(&o)) {
            continue;
        }
        let color = [jitter(rng, entry.color[0]), jitter(rng, entry.color[1]), jitter(rng, entry.color[2])];
        return Some(ObjectInstance {
            id: 0,
            category: entry.category,
            room_id: room.id,
            aabb: Aabb { min: [fp.xmin, fp.ymin, 0.0], max: [fp.xmax, fp.ymax, sh] },
            color,
        });
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of houses containing each room type, ordered like `RoomType::ALL`.
    pub room_type_fraction: [f64; 5],
    /// Mean number of distinct room-type targets per house.
    pub avg_targets: f64,
}

impl Coverage {
    pub fn of(houses: &[House]) -> Coverage {
        let n = houses.len().max(1) as f64;
        let mut frac = [0.0; 5];
        let mut targets = 0.0;
        for h in houses {
            for (k, t) in RoomType::ALL.into_iter().enumerate() {
                if h.has_room_type(t) {
                    frac[k] += 1.0;
                    targets += 1.0;
                }
            }
        }
        Coverage { room_type_fraction: frac.map(|f| f / n), avg_targets: targets / n }
    }

    pub fn fraction(&self, t: RoomType) -> f64 {
        self.room_type_fraction[t.index()]
    }
}

#[derive(Debug, Clone)]
pub struct EnvSet {
    pub name: String,
    pub houses: Vec<House>,
    pub coverage: Coverage,
}

/// Manifest written next to a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    pub name: String,
    pub files: Vec<String>,
    pub seeds: Vec<u64>,
    /// Per house: how many seed retries were needed (0 for most).
    pub retry_offsets: Vec<u64>,
    pub coverage: Coverage,
}

/// Generate `count` houses from seeds `seed_base..seed_base + count`.
pub fn generate_set(name: &str, count: usize, seed_base: u64, params: &GenParams) -> Result<(EnvSet, Vec<u64>), GenError> {
    if count == 0 {
        return Err(GenError::Params("count must be at least 1".into()));
    }
    params.validate()?;
    let mut houses = Vec::with_capacity(count);
    let mut offsets = Vec::with_capacity(count);
    for k in 0..count as u64 {
        let seed = seed_base + k;
        let mut found = None;
        for retry in 0..=MAX_SEED_RETRIES {
            // retries move to a far-away seed so they never collide with the range
            let s = seed.wrapping_add(retry << 40);
            if let Ok(h) = generate_house(s, params) {
                found = Some((h, retry));
                break;
            }
        }
        let (h, retry) = found.ok_or_else(|| GenError::SetFailed { name: name.into(), seed, retries: MAX_SEED_RETRIES })?;
        houses.push(h);
        offsets.push(retry);
    }
    let coverage = Coverage::of(&houses);
    Ok((EnvSet { name: name.into(), houses, coverage }, offsets))
}

impl EnvSet {
    /// Write one house file per house plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, retry_offsets: &[u64]) -> Result<SetManifest, GenError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for h in &self.houses {
            let file = format!("{}.house.json", h.id);
            save_house(h, dir.join(&file))?;
            files.push(file);
        }
        let manifest = SetManifest {
            name: self.name.clone(),
            files,
            seeds: self.houses.iter().map(|h| h.seed).collect(),
            retry_offsets: retry_offsets.to_vec(),
            coverage: self.coverage.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest"))?;
        Ok(manifest)
    }

    /// Load a set from a manifest path.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<EnvSet, GenError> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: SetManifest = serde_json::from_str(&text).map_err(SceneError::Parse)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let houses = manifest
            .files
            .iter()
            .map(|f| crate::scene::load_house(dir.join(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let coverage = Coverage::of(&houses);
        Ok(EnvSet { name: manifest.name, houses, coverage })
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Resample every object color (uniform hue, saturation and value in
/// [0.4, 0.9]); geometry, categories and ids are untouched.
pub fn randomize_colors(house: &House, seed: u64) -> House {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xc0105));
    let mut out = house.clone();
    for o in &mut out.objects {
        let h = rng.gen_range(0.0..1.0);
        let s = rng.gen_range(0.4..=0.9);
        let v = rng.gen_range(0.4..=0.9);
        o.color = hsv_to_rgb(h, s, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let p = GenParams::default();
        let a = generate_house(7, &p).unwrap();
        let b = generate_house(7, &p).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_house(8, &p).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn required_types_present() {
        let p = GenParams { required_room_types: vec![RoomType::Kitchen, RoomType::Bathroom], ..GenParams::default() };
        for seed in 0..20 {
            let h = generate_house(seed, &p).unwrap();
            assert!(h.has_room_type(RoomType::Kitchen));
            assert!(h.has_room_type(RoomType::Bathroom));
        }
    }

    #[test]
    fn params_validation() {
        let p = GenParams { rooms_min: 1, ..GenParams::default() };
        assert!(matches!(generate_house(0, &p), Err(GenError::Params(_))));
        let p = GenParams { door_extra_probability: 1.5, ..GenParams::default() };
        assert!(p.validate().is_err());
        assert!(generate_set("x", 0, 0, &GenParams::default()).is_err());
    }

    #[test]
    fn every_room_gets_its_designated_object() {
        for seed in 0..30 {
            let h = generate_house(seed, &GenParams::default()).unwrap();
            for room in &h.rooms {
                let cats = room.room_type.designated_objects();
                assert!(h.objects.iter().any(|o| o.room_id == room.id && cats.contains(&o.category)));
            }
        }
    }

    #[test]
    fn color_randomization_keeps_geometry() {
        let h = generate_house(3, &GenParams::default()).unwrap();
        let r = randomize_colors(&h, 11);
        assert_eq!(r.rooms, h.rooms);
        assert_eq!(r.objects.len(), h.objects.len());
        for (a, b) in h.objects.iter().zip(&r.objects) {
            assert_eq!((a.id, a.category, a.room_id, a.aabb), (b.id, b.category, b.room_id, b.aabb));
            assert_ne!(a.color, b.color);
            assert!(b.color.iter().all(|c| (0.0..=1.0).contains(c)));
        }
        assert_eq!(randomize_colors(&h, 11), r);
        assert_ne!(randomize_colors(&h, 12), r);
    }

    #[test]
    fn hsv_corners() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv_to_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-12);
    }
}

//! Labeled house model, the fixed category/concept vocabulary, the JSON house
//! file format and structural validation.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current version string written to and required in house files.
pub const FORMAT_VERSION: &str = "1";
/// Thickness of every wall slab, centered on the room boundary line.
pub const WALL_THICKNESS: f64 = 0.1;
pub const DEFAULT_WALL_HEIGHT: f64 = 2.8;
pub const DEFAULT_AGENT_HEIGHT: f64 = 1.0;
/// Top of a door opening; the wall above it is rendered as a lintel.
pub const DOOR_HEIGHT: f64 = 2.1;
/// Robot radius assumed by validation when checking door widths.
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.3;
/// Door openings must fit two robot diameters.
pub const MIN_DOOR_WIDTH: f64 = 4.0 * DEFAULT_ROBOT_RADIUS;

const EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed house file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0:?}")]
    Version(String),
    #[error("invalid house: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    Kitchen,
    LivingRoom,
    DiningRoom,
    Bedroom,
    Bathroom,
}

impl RoomType {
    pub const ALL: [RoomType; 5] = [
        RoomType::Kitchen,
        RoomType::LivingRoom,
        RoomType::DiningRoom,
        RoomType::Bedroom,
        RoomType::Bathroom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoomType::Kitchen => "kitchen",
            RoomType::LivingRoom => "living_room",
            RoomType::DiningRoom => "dining_room",
            RoomType::Bedroom => "bedroom",
            RoomType::Bathroom => "bathroom",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Object categories whose visibility identifies this room type for the
    /// success test.
    pub fn designated_objects(self) -> &'static [ObjectCategory] {
        use ObjectCategory::*;
        match self {
            RoomType::Kitchen => &[KitchenSet, KitchenCabinet],
            RoomType::Bedroom => &[Bed],
            RoomType::Bathroom => &[Toilet, Bathtub, Shower],
            RoomType::LivingRoom => &[Sofa, Television],
            RoomType::DiningRoom => &[TableAndChair],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectCategory {
    Shower,
    Sofa,
    Toilet,
    Bed,
    Plant,
    Television,
    TableAndChair,
    Chair,
    Table,
    KitchenSet,
    Bathtub,
    Vehicle,
    Pool,
    KitchenCabinet,
    Curtain,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 15] = [
        ObjectCategory::Shower,
        ObjectCategory::Sofa,
        ObjectCategory::Toilet,
        ObjectCategory::Bed,
        ObjectCategory::Plant,
        ObjectCategory::Television,
        ObjectCategory::TableAndChair,
        ObjectCategory::Chair,
        ObjectCategory::Table,
        ObjectCategory::KitchenSet,
        ObjectCategory::Bathtub,
        ObjectCategory::Vehicle,
        ObjectCategory::Pool,
        ObjectCategory::KitchenCabinet,
        ObjectCategory::Curtain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectCategory::Shower => "shower",
            ObjectCategory::Sofa => "sofa",
            ObjectCategory::Toilet => "toilet",
            ObjectCategory::Bed => "bed",
            ObjectCategory::Plant => "plant",
            ObjectCategory::Television => "television",
            ObjectCategory::TableAndChair => "table_and_chair",
            ObjectCategory::Chair => "chair",
            ObjectCategory::Table => "table",
            ObjectCategory::KitchenSet => "kitchen_set",
            ObjectCategory::Bathtub => "bathtub",
            ObjectCategory::Vehicle => "vehicle",
            ObjectCategory::Pool => "pool",
            ObjectCategory::KitchenCabinet => "kitchen_cabinet",
            ObjectCategory::Curtain => "curtain",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Semantic-mask id of this category.
    pub fn semantic_id(self) -> u8 {
        Category::Object(self).id()
    }
}

/// A semantic category as it appears in segmentation masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Background,
    Wall,
    Floor,
    Door,
    Object(ObjectCategory),
}

impl Category {
    pub const STRUCTURAL: usize = 4;
    pub const COUNT: usize = Self::STRUCTURAL + ObjectCategory::ALL.len();

    pub fn id(self) -> u8 {
        match self {
            Category::Background => 0,
            Category::Wall => 1,
            Category::Floor => 2,
            Category::Door => 3,
            Category::Object(c) => (Self::STRUCTURAL + c.index()) as u8,
        }
    }

    pub fn from_id(id: u8) -> Option<Category> {
        match id {
            0 => Some(Category::Background),
            1 => Some(Category::Wall),
            2 => Some(Category::Floor),
            3 => Some(Category::Door),
            k => ObjectCategory::ALL
                .get(k as usize - Self::STRUCTURAL)
                .map(|&c| Category::Object(c)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Background => "background",
            Category::Wall => "wall",
            Category::Floor => "floor",
            Category::Door => "door",
            Category::Object(c) => c.name(),
        }
    }
}

/// An instruction target: one of the 5 room types or 15 object concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Concept {
    Room(RoomType),
    Object(ObjectCategory),
}

impl Concept {
    pub const COUNT: usize = RoomType::ALL.len() + ObjectCategory::ALL.len();

    pub fn all() -> impl Iterator<Item = Concept> {
        RoomType::ALL
            .into_iter()
            .map(Concept::Room)
            .chain(ObjectCategory::ALL.into_iter().map(Concept::Object))
    }

    pub fn rooms() -> impl Iterator<Item = Concept> {
        RoomType::ALL.into_iter().map(Concept::Room)
    }

    pub fn index(self) -> usize {
        match self {
            Concept::Room(r) => r.index(),
            Concept::Object(o) => RoomType::ALL.len() + o.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<Concept> {
        Concept::all().nth(i)
    }

    pub fn name(self) -> &'static str {
        match self {
            Concept::Room(r) => r.name(),
            Concept::Object(o) => o.name(),
        }
    }

    pub fn parse(name: &str) -> Result<Concept, SceneError> {
        Concept::all()
            .find(|c| c.name() == name)
            .ok_or_else(|| SceneError::UnknownConcept(name.to_string()))
    }

    /// Categories that must be seen for a success with this target.
    pub fn designated_categories(self) -> Vec<ObjectCategory> {
        match self {
            Concept::Room(r) => r.designated_objects().to_vec(),
            Concept::Object(o) => vec![o],
        }
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered category and concept vocabulary. Ids are dense and fixed at
/// compile time, so they are identical across runs and save/load cycles.
#[derive(Debug, Clone)]
pub struct CategoryTable {
    categories: Vec<&'static str>,
    room_types: Vec<&'static str>,
    concepts: Vec<&'static str>,
}

impl Default for CategoryTable {
    fn default() -> Self {
        Self::new()
    }
}

impl CategoryTable {
    pub fn new() -> Self {
        let categories = (0..Category::COUNT as u8)
            .map(|i| Category::from_id(i).expect("dense ids").name())
            .collect();
        CategoryTable {
            categories,
            room_types: RoomType::ALL.iter().map(|r| r.name()).collect(),
            concepts: Concept::all().map(|c| c.name()).collect(),
        }
    }

    pub fn categories(&self) -> &[&'static str] {
        &self.categories
    }

    pub fn room_types(&self) -> &[&'static str] {
        &self.room_types
    }

    pub fn concepts(&self) -> &[&'static str] {
        &self.concepts
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| *c == name)
    }

    pub fn category_id(&self, name: &str) -> Option<u8> {
        self.categories.iter().position(|c| *c == name).map(|i| i as u8)
    }
}

/// One-hot encoding of a concept over the table's concept list.
pub fn concept_onehot(concept: &str, table: &CategoryTable) -> Result<Vec<f32>, SceneError> {
    let idx = table
        .concept_index(concept)
        .ok_or_else(|| SceneError::UnknownConcept(concept.to_string()))?;
    let mut v = vec![0.0; table.concepts().len()];
    v[idx] = 1.0;
    Ok(v)
}

/// Axis-aligned rectangle `[xmin, ymin, xmax, ymax]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(a: [f64; 4]) -> Self {
        Rect { xmin: a[0], ymin: a[1], xmax: a[2], ymax: a[3] }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.xmin, r.ymin, r.xmax, r.ymax]
    }
}

impl Rect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Rect { xmin, ymin, xmax, ymax }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    pub fn overlap_area(&self, o: &Rect) -> f64 {
        let w = self.xmax.min(o.xmax) - self.xmin.max(o.xmin);
        let h = self.ymax.min(o.ymax) - self.ymin.max(o.ymin);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect::new(
            self.xmin.min(o.xmin),
            self.ymin.min(o.ymin),
            self.xmax.max(o.xmax),
            self.ymax.max(o.ymax),
        )
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.xmin - x).max(0.0).max(x - self.xmax);
        let dy = (self.ymin - y).max(0.0).max(y - self.ymax);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    N,
    S,
    E,
    W,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::N, Side::S, Side::E, Side::W];

    /// Horizontal sides run along x at constant y.
    pub fn is_horizontal(self) -> bool {
        matches!(self, Side::N | Side::S)
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::N => Side::S,
            Side::S => Side::N,
            Side::E => Side::W,
            Side::W => Side::E,
        }
    }
}

/// A passable interval on one wall of a room. `from`/`to` are world
/// coordinates along the wall (x for N/S walls, y for E/W walls).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub wall: Side,
    pub from: f64,
    pub to: f64,
}

impl Door {
    pub fn width(&self) -> f64 {
        self.to - self.from
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    #[serde(rename = "type")]
    pub room_type: RoomType,
    pub rect: Rect,
    #[serde(default)]
    pub doors: Vec<Door>,
}

impl Room {
    /// Fixed coordinate of the line a side lies on, and its extent along the line.
    pub fn side_line(&self, side: Side) -> (f64, f64, f64) {
        let r = &self.rect;
        match side {
            Side::N => (r.ymax, r.xmin, r.xmax),
            Side::S => (r.ymin, r.xmin, r.xmax),
            Side::E => (r.xmax, r.ymin, r.ymax),
            Side::W => (r.xmin, r.ymin, r.ymax),
        }
    }
}

/// 3D axis-aligned box, serialized as `[[x,y,z], [x,y,z]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 2]", into = "[[f64; 3]; 2]")]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<[[f64; 3]; 2]> for Aabb {
    fn from(a: [[f64; 3]; 2]) -> Self {
        Aabb { min: a[0], max: a[1] }
    }
}

impl From<Aabb> for [[f64; 3]; 2] {
    fn from(b: Aabb) -> Self {
        [b.min, b.max]
    }
}

impl Aabb {
    pub fn footprint(&self) -> Rect {
        Rect::new(self.min[0], self.min[1], self.max[0], self.max[1])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: ObjectCategory,
    pub room_id: u32,
    pub aabb: Aabb,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct House {
    pub format_version: String,
    pub id: String,
    pub seed: u64,
    pub wall_height: f64,
    pub agent_height: f64,
    pub rooms: Vec<Room>,
    pub objects: Vec<ObjectInstance>,
}

/// Axis-aligned wall piece between `a` and `b` (a straight segment on one line).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl WallSegment {
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((x - self.a[0]) * dx + (y - self.a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.a[0] + t * dx, self.a[1] + t * dy);
        (x - px).hypot(y - py)
    }
}

/// Solid wall pieces and door gaps after merging shared room boundaries.
#[derive(Debug, Clone, Default)]
pub struct WallLayout {
    pub solid: Vec<WallSegment>,
    pub openings: Vec<WallSegment>,
}

fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 + EPS => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn subtract_intervals(base: &[(f64, f64)], holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a, b) in base {
        let mut cur = a;
        for &(ha, hb) in holes {
            if hb <= cur || ha >= b {
                continue;
            }
            if ha > cur {
                out.push((cur, ha));
            }
            cur = cur.max(hb);
        }
        if b - cur > EPS {
            out.push((cur, b));
        }
    }
    out
}

fn line_key(v: f64) -> i64 {
    (v * 1e4).round() as i64
}

impl House {
    pub fn bbox(&self) -> Rect {
        let mut it = self.rooms.iter().map(|r| r.rect);
        let first = it.next().unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0));
        it.fold(first, |acc, r| acc.union(&r))
    }

    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    /// Room whose footprint contains the point (first match on shared walls).
    pub fn room_at(&self, x: f64, y: f64) -> Option<&Room> {
        self.rooms.iter().find(|r| r.rect.contains(x, y))
    }

    pub fn has_room_type(&self, t: RoomType) -> bool {
        self.rooms.iter().any(|r| r.room_type == t)
    }

    pub fn has_object(&self, c: ObjectCategory) -> bool {
        self.objects.iter().any(|o| o.category == c)
    }

    /// Merge all room sides into unique wall lines and cut out door intervals.
    pub fn walls(&self) -> WallLayout {
        // (horizontal?, line coordinate key) -> (coordinate, sides, doors)
        type Line = (f64, Vec<(f64, f64)>, Vec<(f64, f64)>);
        let mut lines: BTreeMap<(bool, i64), Line> = BTreeMap::new();
        for room in &self.rooms {
            for side in Side::ALL {
                let (c, lo, hi) = room.side_line(side);
                let e = lines
                    .entry((side.is_horizontal(), line_key(c)))
                    .or_insert_with(|| (c, Vec::new(), Vec::new()));
                e.1.push((lo, hi));
            }
            for d in &room.doors {
                let (c, _, _) = room.side_line(d.wall);
                let e = lines
                    .entry((d.wall.is_horizontal(), line_key(c)))
                    .or_insert_with(|| (c, Vec::new(), Vec::new()));
                e.2.push((d.from, d.to));
            }
        }
        let mut layout = WallLayout::default();
        for ((horizontal, _), (c, sides, doors)) in lines {
            let sides = merge_intervals(sides);
            let doors = merge_intervals(doors);
            let seg = |a: f64, b: f64| {
                if horizontal {
                    WallSegment { a: [a, c], b: [b, c] }
                } else {
                    WallSegment { a: [c, a], b: [c, b] }
                }
            };
            for (a, b) in subtract_intervals(&sides, &doors) {
                layout.solid.push(seg(a, b));
            }
            for &(a, b) in &doors {
                layout.openings.push(seg(a, b));
            }
        }
        layout
    }

    /// Undirected room adjacency through door openings. Two rooms are linked
    /// when a door of either one lies on a boundary segment they share.
    pub fn door_graph(&self) -> Vec<Vec<usize>> {
        let n = self.rooms.len();
        let mut adj = vec![Vec::new(); n];
        for (i, a) in self.rooms.iter().enumerate() {
            for d in &a.doors {
                let (c, _, _) = a.side_line(d.wall);
                for (j, b) in self.rooms.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let (cb, lo, hi) = b.side_line(d.wall.opposite());
                    if (cb - c).abs() < EPS
                        && d.from >= lo - EPS
                        && d.to <= hi + EPS
                        && !adj[i].contains(&j)
                    {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
        adj
    }

    /// Whether every room can be reached from the first through doors.
    pub fn is_door_connected(&self) -> bool {
        if self.rooms.is_empty() {
            return false;
        }
        let adj = self.door_graph();
        let mut seen = vec![false; self.rooms.len()];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("house serializes")
    }

    pub fn from_json(text: &str) -> Result<House, SceneError> {
        let house: House = serde_json::from_str(text)?;
        if house.format_version != FORMAT_VERSION {
            return Err(SceneError::Version(house.format_version));
        }
        let violations = validate(&house);
        if violations.is_empty() {
            Ok(house)
        } else {
            Err(SceneError::Invalid(violations))
        }
    }
}

/// Which house invariant a [`Violation`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NoRooms,
    EmptyFootprint,
    DuplicateRoomId,
    RoomOverlap,
    DoorOffBoundary,
    DoorTooNarrow,
    NoDoors,
    Disconnected,
    DuplicateObjectId,
    UnknownRoom,
    DegenerateBox,
    ObjectOutsideRoom,
    ColorRange,
    Heights,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::NoRooms => "house must contain at least one target room",
            Rule::EmptyFootprint => "room footprint area must be positive",
            Rule::DuplicateRoomId => "room ids must be unique",
            Rule::RoomOverlap => "room footprints must not overlap",
            Rule::DoorOffBoundary => "door opening must lie on the room boundary",
            Rule::DoorTooNarrow => "door opening narrower than two robot diameters",
            Rule::NoDoors => "room has no door openings (connectivity precondition)",
            Rule::Disconnected => "every room must be reachable through doors",
            Rule::DuplicateObjectId => "object ids must be unique",
            Rule::UnknownRoom => "object refers to a missing room",
            Rule::DegenerateBox => "object box needs min < max on every axis",
            Rule::ObjectOutsideRoom => "object box must lie inside its room",
            Rule::ColorRange => "colors must lie in [0,1]",
            Rule::Heights => "wall and agent heights must satisfy 0 < agent < wall",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub entity: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule.describe())
    }
}

/// Checks every house, room and object invariant. Returns an empty list for
/// a valid house.
pub fn validate(house: &House) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: String, rule| out.push(Violation { entity, rule });

    if !(house.wall_height > 0.0 && house.agent_height > 0.0 && house.agent_height < house.wall_height)
    {
        push(format!("house {}", house.id), Rule::Heights);
    }
    if house.rooms.is_empty() {
        push(format!("house {}", house.id), Rule::NoRooms);
    }

    let mut room_ids = HashSet::new();
    for (i, room) in house.rooms.iter().enumerate() {
        let name = format!("room {}", room.id);
        if !room_ids.insert(room.id) {
            push(name.clone(), Rule::DuplicateRoomId);
        }
        if !(room.rect.width() > 0.0 && room.rect.height() > 0.0) {
            push(name.clone(), Rule::EmptyFootprint);
        }
        for other in &house.rooms[i + 1..] {
            if room.rect.overlap_area(&other.rect) > EPS {
                push(format!("rooms {} and {}", room.id, other.id), Rule::RoomOverlap);
            }
        }
        if room.doors.is_empty() && house.rooms.len() > 1 {
            push(name.clone(), Rule::NoDoors);
        }
        for d in &room.doors {
            let (_, lo, hi) = room.side_line(d.wall);
            if !(d.from < d.to && d.from >= lo - EPS && d.to <= hi + EPS) {
                push(format!("{name} door {:?} [{}, {}]", d.wall, d.from, d.to), Rule::DoorOffBoundary);
            } else if d.width() < MIN_DOOR_WIDTH - EPS {
                push(format!("{name} door {:?} [{}, {}]", d.wall, d.from, d.to), Rule::DoorTooNarrow);
            }
        }
    }
    if house.rooms.len() > 1 && !house.is_door_connected() {
        push(format!("house {}", house.id), Rule::Disconnected);
    }

    let mut object_ids = HashSet::new();
    for obj in &house.objects {
        let name = format!("object {}", obj.id);
        if !object_ids.insert(obj.id) {
            push(name.clone(), Rule::DuplicateObjectId);
        }
        let b = &obj.aabb;
        if (0..3).any(|k| !(b.min[k] < b.max[k])) {
            push(name.clone(), Rule::DegenerateBox);
        }
        if obj.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            push(name.clone(), Rule::ColorRange);
        }
        match house.room(obj.room_id) {
            None => push(name.clone(), Rule::UnknownRoom),
            Some(room) => {
                let r = &room.rect;
                let inside = b.min[0] >= r.xmin - EPS
                    && b.max[0] <= r.xmax + EPS
                    && b.min[1] >= r.ymin - EPS
                    && b.max[1] <= r.ymax + EPS
                    && b.min[2] >= -EPS
                    && b.max[2] <= house.wall_height + EPS;
                if !inside {
                    push(name, Rule::ObjectOutsideRoom);
                }
            }
        }
    }
    out
}

pub fn load_house(path: impl AsRef<Path>) -> Result<House, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    House::from_json(&text)
}

pub fn save_house(house: &House, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    std::fs::write(path, house.to_json()).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Handcrafted houses used by tests, the guide and CLI smoke runs.
pub mod fixtures {
    use super::*;

    /// Two rooms side by side joined by one door: a 4 m × 3 m kitchen west of
    /// a 4 m × 3 m bedroom, with a kitchen set and a bed.
    pub fn corridor() -> House {
        House::from_json(include_str!("../fixtures/corridor.house.json"))
            .expect("corridor fixture is valid")
    }

    /// A single 1 m × 6 m free corridor running along +x, used for distance
    /// and reward hand computations. Its only target is the kitchen, a
    /// 1 m × 1 m room at the west end.
    pub fn hallway() -> House {
        House::from_json(include_str!("../fixtures/hallway.house.json"))
            .expect("hallway fixture is valid")
    }

    /// One small bedroom ringed by tall beds, so every spawn sees a bed
    /// whatever its heading.
    pub fn bed_ring() -> House {
        House::from_json(include_str!("../fixtures/bed_ring.house.json"))
            .expect("bed ring fixture is valid")
    }
}

//! Top-down occupancy rasterization, connectivity analysis and shortest-path
//! distance fields used for spawning, collision and reward shaping.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::VecDeque;

use thiserror::Error;

use crate::scene::{Concept, House, WALL_THICKNESS};

pub const DEFAULT_CELL_SIZE: f64 = 0.1;
pub const DEFAULT_ROBOT_RADIUS: f64 = crate::scene::DEFAULT_ROBOT_RADIUS;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("degenerate house bounding box")]
    DegenerateBbox,
    #[error("cell size must be positive and robot radius non-negative")]
    BadResolution,
    #[error("concept {0} is not present in this house")]
    ConceptNotPresent(Concept),
    #[error("position ({0:.3}, {1:.3}) is outside the grid")]
    OutOfBounds(f64, f64),
}

/// Row-major 2D occupancy grid. Cell `(i, j)` has its center at
/// `origin + ((i + 0.5) * cell_size, (j + 0.5) * cell_size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub robot_radius: f64,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// Fully free grid, mostly for tests and synthetic fields.
    pub fn open(width: usize, height: usize, cell_size: f64) -> Self {
        OccupancyGrid {
            cell_size,
            origin: [0.0, 0.0],
            width,
            height,
            robot_radius: 0.0,
            occupied: vec![false; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cell_size: f64, occupied: Vec<bool>) -> Self {
        assert_eq!(occupied.len(), width * height);
        OccupancyGrid { cell_size, origin: [0.0, 0.0], width, height, robot_radius: 0.0, occupied }
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn is_free(&self, idx: usize) -> bool {
        !self.occupied[idx]
    }

    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occupied[idx]
    }

    pub fn set_occupied(&mut self, idx: usize, occ: bool) {
        self.occupied[idx] = occ;
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing a world point, if inside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<usize> {
        let fi = ((x - self.origin[0]) / self.cell_size).floor();
        let fj = ((y - self.origin[1]) / self.cell_size).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return None;
        }
        Some(self.index(fi as usize, fj as usize))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.occupied[i])
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(idx);
        let (w, h) = (self.width as isize, self.height as isize);
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(di, dj)| {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                (ni >= 0 && nj >= 0 && ni < w && nj < h).then(|| self.index(ni as usize, nj as usize))
            })
    }

    /// Whether the straight segment between two world points stays in free
    /// cells. Every cell the segment touches is visited.
    pub fn segment_is_free(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        let Some(start) = self.cell_at(from[0], from[1]) else { return false };
        let Some(end) = self.cell_at(to[0], to[1]) else { return false };
        if self.occupied[start] || self.occupied[end] {
            return false;
        }
        // grid traversal in cell units
        let cs = self.cell_size;
        let (x0, y0) = ((from[0] - self.origin[0]) / cs, (from[1] - self.origin[1]) / cs);
        let (x1, y1) = ((to[0] - self.origin[0]) / cs, (to[1] - self.origin[1]) / cs);
        let (mut i, mut j) = self.coords(start);
        let (ei, ej) = self.coords(end);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let step_i: isize = if dx > 0.0 { 1 } else { -1 };
        let step_j: isize = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            ((i + 1) as f64 - x0) / dx
        } else if dx < 0.0 {
            (x0 - i as f64) / -dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            ((j + 1) as f64 - y0) / dy
        } else if dy < 0.0 {
            (y0 - j as f64) / -dy
        } else {
            f64::INFINITY
        };
        let max_steps = self.width + self.height + 4;
        for _ in 0..max_steps {
            if (i, j) == (ei, ej) {
                return true;
            }
            let ordering = t_max_x.partial_cmp(&t_max_y).unwrap_or(Ordering::Equal);
            match ordering {
                Ordering::Less => {
                    i = (i as isize + step_i) as usize;
                    t_max_x += t_delta_x;
                }
                Ordering::Greater => {
                    j = (j as isize + step_j) as usize;
                    t_max_y += t_delta_y;
                }
                Ordering::Equal => {
                    // passing exactly through a corner touches both side cells
                    let a = self.index((i as isize + step_i) as usize, j);
                    let b = self.index(i, (j as isize + step_j) as usize);
                    if self.occupied[a] || self.occupied[b] {
                        return false;
                    }
                    i = (i as isize + step_i) as usize;
                    j = (j as isize + step_j) as usize;
                    t_max_x += t_delta_x;
                    t_max_y += t_delta_y;
                }
            }
            if i >= self.width || j >= self.height || self.occupied[self.index(i, j)] {
                return false;
            }
        }
        (i, j) == (ei, ej)
    }
}

/// Rasterize walls (minus door gaps) and object footprints, each inflated by
/// `robot_radius`, sampled at cell centers. Cells outside every room are
/// occupied. The grid has a one-cell margin around the house bbox.
pub fn rasterize_occupancy(
    house: &House,
    cell_size: f64,
    robot_radius: f64,
) -> Result<OccupancyGrid, SpatialError> {
    if !(cell_size > 0.0) || !(robot_radius >= 0.0) {
        return Err(SpatialError::BadResolution);
    }
    let bbox = house.bbox();
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(SpatialError::DegenerateBbox);
    }
    let origin = [bbox.xmin - cell_size, bbox.ymin - cell_size];
    let width = (bbox.width() / cell_size - 1e-9).ceil() as usize + 2;
    let height = (bbox.height() / cell_size - 1e-9).ceil() as usize + 2;
    let mut grid = OccupancyGrid {
        cell_size,
        origin,
        width,
        height,
        robot_radius,
        occupied: vec![true; width * height],
    };
    for idx in 0..grid.len() {
        let [x, y] = grid.cell_center(idx);
        if house.rooms.iter().any(|r| r.rect.contains(x, y)) {
            grid.occupied[idx] = false;
        }
    }
    let walls = house.walls();
    let wall_reach = robot_radius + 0.5 * WALL_THICKNESS;
    for seg in &walls.solid {
        let lo = [seg.a[0].min(seg.b[0]) - wall_reach, seg.a[1].min(seg.b[1]) - wall_reach];
        let hi = [seg.a[0].max(seg.b[0]) + wall_reach, seg.a[1].max(seg.b[1]) + wall_reach];
        stamp(&mut grid, lo, hi, |x, y| seg.distance_to(x, y) <= wall_reach + 1e-9);
    }
    for obj in &house.objects {
        let fp = obj.aabb.footprint();
        let lo = [fp.xmin - robot_radius, fp.ymin - robot_radius];
        let hi = [fp.xmax + robot_radius, fp.ymax + robot_radius];
        stamp(&mut grid, lo, hi, |x, y| fp.distance_to(x, y) <= robot_radius + 1e-9);
    }
    Ok(grid)
}

fn cell_range(grid: &OccupancyGrid, lo: [f64; 2], hi: [f64; 2]) -> (usize, usize, usize, usize) {
    let cs = grid.cell_size;
    let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n.saturating_sub(1));
    let i0 = clampi(((lo[0] - grid.origin[0]) / cs).floor() - 1.0, grid.width);
    let j0 = clampi(((lo[1] - grid.origin[1]) / cs).floor() - 1.0, grid.height);
    let i1 = clampi(((hi[0] - grid.origin[0]) / cs).ceil() + 1.0, grid.width);
    let j1 = clampi(((hi[1] - grid.origin[1]) / cs).ceil() + 1.0, grid.height);
    (i0, j0, i1, j1)
}

fn stamp(grid: &mut OccupancyGrid, lo: [f64; 2], hi: [f64; 2], hit: impl Fn(f64, f64) -> bool) {
    let (i0, j0, i1, j1) = cell_range(grid, lo, hi);
    for j in j0..=j1 {
        for i in i0..=i1 {
            let idx = grid.index(i, j);
            let [x, y] = grid.cell_center(idx);
            if hit(x, y) {
                grid.occupied[idx] = true;
            }
        }
    }
}

/// Dense 4-connected component labels over free cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Vec<Option<u32>>,
    pub count: usize,
}

impl Components {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for l in self.labels.iter().flatten() {
            s[*l as usize] += 1;
        }
        s
    }
}

pub fn connected_components(grid: &OccupancyGrid) -> Components {
    let mut labels = vec![None; grid.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if grid.occupied[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for v in grid.neighbors4(u) {
                if !grid.occupied[v] && labels[v].is_none() {
                    labels[v] = Some(count);
                    queue.push_back(v);
                }
            }
        }
        count += 1;
    }
    Components { labels, count: count as usize }
}

/// Free cells that count as "at the target" for a concept.
///
/// Room concepts: free cells whose center lies inside any room of the type.
/// Object concepts: free cells 4-adjacent to the inflated footprint of any
/// instance of the category.
pub fn target_region(
    house: &House,
    grid: &OccupancyGrid,
    concept: Concept,
) -> Result<Vec<usize>, SpatialError> {
    let mut cells = Vec::new();
    match concept {
        Concept::Room(t) => {
            let rooms: Vec<_> = house.rooms.iter().filter(|r| r.room_type == t).collect();
            if rooms.is_empty() {
                return Err(SpatialError::ConceptNotPresent(concept));
            }
            for idx in grid.free_cells() {
                let [x, y] = grid.cell_center(idx);
                if rooms.iter().any(|r| r.rect.contains(x, y)) {
                    cells.push(idx);
                }
            }
        }
        Concept::Object(c) => {
            let objs: Vec<_> = house.objects.iter().filter(|o| o.category == c).collect();
            if objs.is_empty() {
                return Err(SpatialError::ConceptNotPresent(concept));
            }
            let mut footprint = vec![false; grid.len()];
            let r = grid.robot_radius;
            for o in &objs {
                let fp = o.aabb.footprint();
                let (i0, j0, i1, j1) = cell_range(
                    grid,
                    [fp.xmin - r, fp.ymin - r],
                    [fp.xmax + r, fp.ymax + r],
                );
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let idx = grid.index(i, j);
                        let [x, y] = grid.cell_center(idx);
                        if fp.distance_to(x, y) <= r + 1e-9 {
                            footprint[idx] = true;
                        }
                    }
                }
            }
            for idx in grid.free_cells() {
                if grid.neighbors4(idx).any(|n| footprint[n]) {
                    cells.push(idx);
                }
            }
        }
    }
    Ok(cells)
}

/// Shortest-path distances (meters) from every cell to a target set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub dist: Vec<f64>,
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    idx: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The 8 neighbor offsets with their edge multiplier (1 or √2).
pub const NEIGHBORS8: [(isize, isize, bool); 8] = [
    (-1, 0, false),
    (1, 0, false),
    (0, -1, false),
    (0, 1, false),
    (-1, -1, true),
    (1, -1, true),
    (-1, 1, true),
    (1, 1, true),
];

/// Free-cell neighbors of `idx` with edge costs. Diagonal moves require both
/// adjacent axial cells to be free (no corner cutting).
pub fn free_neighbors(grid: &OccupancyGrid, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    let (i, j) = grid.coords(idx);
    let (w, h) = (grid.width as isize, grid.height as isize);
    let cs = grid.cell_size;
    let diag = cs * std::f64::consts::SQRT_2;
    NEIGHBORS8.iter().filter_map(move |&(di, dj, is_diag)| {
        let (ni, nj) = (i as isize + di, j as isize + dj);
        if ni < 0 || nj < 0 || ni >= w || nj >= h {
            return None;
        }
        let n = grid.index(ni as usize, nj as usize);
        if grid.occupied[n] {
            return None;
        }
        if is_diag {
            let a = grid.index(ni as usize, j);
            let b = grid.index(i, nj as usize);
            if grid.occupied[a] || grid.occupied[b] {
                return None;
            }
            Some((n, diag))
        } else {
            Some((n, cs))
        }
    })
}

/// Multi-source Dijkstra over free cells, 8-connected. Occupied and
/// unreachable cells hold `f64::INFINITY`.
pub fn distance_field(grid: &OccupancyGrid, targets: &[usize]) -> DistanceField {
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();
    for &t in targets {
        if grid.is_free(t) {
            dist[t] = 0.0;
            heap.push(Frontier { dist: 0.0, idx: t });
        }
    }
    while let Some(Frontier { dist: d, idx }) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        for (n, cost) in free_neighbors(grid, idx) {
            let nd = d + cost;
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Frontier { dist: nd, idx: n });
            }
        }
    }
    DistanceField {
        cell_size: grid.cell_size,
        origin: grid.origin,
        width: grid.width,
        height: grid.height,
        dist,
    }
}

impl DistanceField {
    pub fn at(&self, idx: usize) -> f64 {
        self.dist[idx]
    }

    /// Distance at a continuous position via its nearest cell. Cells without
    /// a finite value fall back to the best finite 8-neighbor plus one step.
    pub fn lookup(&self, x: f64, y: f64) -> Result<f64, SpatialError> {
        let fi = ((x - self.origin[0]) / self.cell_size).floor();
        let fj = ((y - self.origin[1]) / self.cell_size).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return Err(SpatialError::OutOfBounds(x, y));
        }
        let (i, j) = (fi as usize, fj as usize);
        let d = self.dist[j * self.width + i];
        if d.is_finite() {
            return Ok(d);
        }
        let mut best = f64::INFINITY;
        for &(di, dj, diag) in &NEIGHBORS8 {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni >= self.width as isize || nj >= self.height as isize {
                continue;
            }
            let nd = self.dist[nj as usize * self.width + ni as usize];
            if nd.is_finite() {
                let step = if diag { self.cell_size * std::f64::consts::SQRT_2 } else { self.cell_size };
                best = best.min(nd + step);
            }
        }
        Ok(best)
    }

    pub fn max_finite(&self) -> f64 {
        self.dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max)
    }
}

/// Convenience wrapper matching the per-position lookup contract.
pub fn lookup_distance(field: &DistanceField, position: [f64; 2]) -> Result<f64, SpatialError> {
    field.lookup(position[0], position[1])
}

//! CPU rasterizer producing RGB, semantic mask, instance mask and depth
//! planes from a first-person pinhole camera.
//!
//! Geometry is a list of convex planar quads (floors, wall slabs, door
//! lintels, object boxes). Each quad is clipped against the near plane,
//! projected, and scan-converted with a float z-buffer. Inverse camera depth
//! is interpolated linearly in screen space, which makes it perspective
//! correct.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{Category, House, RoomType, DOOR_HEIGHT, WALL_THICKNESS};
use crate::spatial::OccupancyGrid;

const NEAR: f64 = 0.02;
const LIGHT: [f64; 3] = [0.3, 0.5, 0.812_403_840_463_596];
const AMBIENT: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    /// Heading in degrees; 0 looks along +x, 90 along +y.
    pub yaw: f64,
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Camera { position: [x, y, z], yaw, fov: 60.0, width: 120, height: 90 }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_fov(mut self, fov: f64) -> Self {
        self.fov = fov;
        self
    }

    fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov.to_radians()).tan()
    }
}

/// Which output planes to produce. The semantic plane is cheap and always
/// written because instance and success logic depend on the same hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planes {
    pub rgb: bool,
    pub depth: bool,
}

impl Planes {
    pub const ALL: Planes = Planes { rgb: true, depth: true };
    pub const MASK_DEPTH: Planes = Planes { rgb: false, depth: true };
    pub const MASK_ONLY: Planes = Planes { rgb: false, depth: false };
}

/// Per-frame render output. Planes are row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB in [0,1]; empty when not requested.
    pub rgb: Vec<f32>,
    pub semantic: Vec<u8>,
    /// 0 for structure and background, object ids from 1.
    pub instance: Vec<u16>,
    /// Euclidean ray distance in meters, infinity where nothing was hit;
    /// empty when not requested.
    pub depth: Vec<f32>,
}

impl FrameSet {
    fn new(width: usize, height: usize) -> Self {
        FrameSet {
            width,
            height,
            rgb: Vec::new(),
            semantic: vec![0; width * height],
            instance: vec![0; width * height],
            depth: Vec::new(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn center_index(&self) -> usize {
        (self.height / 2) * self.width + self.width / 2
    }
}

/// Fraction of pixels carrying a semantic id.
pub fn pixel_fraction(semantic: &[u8], category: u8) -> f64 {
    if semantic.is_empty() {
        return 0.0;
    }
    semantic.iter().filter(|&&c| c == category).count() as f64 / semantic.len() as f64
}

/// Fraction of pixels whose semantic id is any of `categories`.
pub fn pixel_fraction_any(semantic: &[u8], categories: &[u8]) -> f64 {
    if semantic.is_empty() {
        return 0.0;
    }
    semantic.iter().filter(|c| categories.contains(c)).count() as f64 / semantic.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
struct Quad {
    corners: [[f64; 3]; 4],
    normal: [f64; 3],
    semantic: u8,
    instance: u16,
    shade: [f32; 3],
}

/// Renderable geometry of one house.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMesh {
    quads: Vec<Quad>,
    /// Camera placement bounds; cameras outside render background.
    bounds: [f64; 4],
}

fn floor_color(t: RoomType) -> [f64; 3] {
    match t {
        RoomType::Kitchen => [0.75, 0.72, 0.62],
        RoomType::LivingRoom => [0.62, 0.5, 0.38],
        RoomType::DiningRoom => [0.58, 0.55, 0.48],
        RoomType::Bedroom => [0.55, 0.6, 0.62],
        RoomType::Bathroom => [0.8, 0.82, 0.85],
    }
}

const WALL_COLOR: [f64; 3] = [0.86, 0.85, 0.8];
const DOOR_COLOR: [f64; 3] = [0.45, 0.32, 0.2];

fn shaded(color: [f64; 3], normal: [f64; 3]) -> [f32; 3] {
    let lambert = (normal[0] * LIGHT[0] + normal[1] * LIGHT[1] + normal[2] * LIGHT[2]).max(0.0);
    let f = AMBIENT + (1.0 - AMBIENT) * lambert;
    [(color[0] * f) as f32, (color[1] * f) as f32, (color[2] * f) as f32]
}

impl SceneMesh {
    pub fn from_house(house: &House) -> Self {
        let mut mesh = SceneMesh { quads: Vec::new(), bounds: [0.0; 4] };
        let bbox = house.bbox();
        mesh.bounds = [bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax];
        for room in &house.rooms {
            let r = room.rect;
            mesh.push(
                [[r.xmin, r.ymin, 0.0], [r.xmax, r.ymin, 0.0], [r.xmax, r.ymax, 0.0], [r.xmin, r.ymax, 0.0]],
                [0.0, 0.0, 1.0],
                Category::Floor.id(),
                0,
                floor_color(room.room_type),
            );
        }
        let walls = house.walls();
        let half = 0.5 * WALL_THICKNESS;
        for seg in &walls.solid {
            let (lo, hi) = slab(seg.a, seg.b, half);
            mesh.push_box(lo, hi, 0.0, house.wall_height, Category::Wall.id(), 0, WALL_COLOR, false);
        }
        if house.wall_height > DOOR_HEIGHT {
            for seg in &walls.openings {
                let (lo, hi) = slab(seg.a, seg.b, half);
                mesh.push_box(lo, hi, DOOR_HEIGHT, house.wall_height, Category::Door.id(), 0, DOOR_COLOR, true);
            }
        }
        for obj in &house.objects {
            let b = obj.aabb;
            mesh.push_box(
                [b.min[0], b.min[1]],
                [b.max[0], b.max[1]],
                b.min[2],
                b.max[2],
                obj.category.semantic_id(),
                obj.id as u16,
                obj.color,
                b.min[2] > 0.0,
            );
        }
        mesh
    }

    pub fn quad_count(&self) -> usize {
        self.quads.len()
    }

    fn push(&mut self, corners: [[f64; 3]; 4], normal: [f64; 3], semantic: u8, instance: u16, color: [f64; 3]) {
        self.quads.push(Quad { corners, normal, semantic, instance, shade: shaded(color, normal) });
    }

    #[allow(clippy::too_many_arguments)]
    fn push_box(
        &mut self,
        lo: [f64; 2],
        hi: [f64; 2],
        z0: f64,
        z1: f64,
        semantic: u8,
        instance: u16,
        color: [f64; 3],
        bottom: bool,
    ) {
        let (x0, y0, x1, y1) = (lo[0], lo[1], hi[0], hi[1]);
        // faces are wound counter-clockwise seen from outside
        self.push([[x0, y0, z0], [x1, y0, z0], [x1, y0, z1], [x0, y0, z1]], [0.0, -1.0, 0.0], semantic, instance, color);
        self.push([[x1, y1, z0], [x0, y1, z0], [x0, y1, z1], [x1, y1, z1]], [0.0, 1.0, 0.0], semantic, instance, color);
        self.push([[x0, y1, z0], [x0, y0, z0], [x0, y0, z1], [x0, y1, z1]], [-1.0, 0.0, 0.0], semantic, instance, color);
        self.push([[x1, y0, z0], [x1, y1, z0], [x1, y1, z1], [x1, y0, z1]], [1.0, 0.0, 0.0], semantic, instance, color);
        self.push([[x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], [0.0, 0.0, 1.0], semantic, instance, color);
        if bottom {
            self.push([[x0, y1, z0], [x1, y1, z0], [x1, y0, z0], [x0, y0, z0]], [0.0, 0.0, -1.0], semantic, instance, color);
        }
    }
}

fn slab(a: [f64; 2], b: [f64; 2], half: f64) -> ([f64; 2], [f64; 2]) {
    let lo = [a[0].min(b[0]) - half, a[1].min(b[1]) - half];
    let hi = [a[0].max(b[0]) + half, a[1].max(b[1]) + half];
    (lo, hi)
}

/// Owns frame buffers for one resolution. Not shared between threads; make
/// one per worker.
#[derive(Debug, Clone)]
pub struct Renderer {
    width: usize,
    height: usize,
    fov: f64,
    zbuf: Vec<f32>,
    ray_scale: Vec<f32>,
    frame: FrameSet,
}

impl Renderer {
    pub fn new(width: usize, height: usize, fov: f64) -> Self {
        assert!(width >= 1 && height >= 1, "resolution must be positive");
        assert!(fov > 0.0 && fov < 180.0, "fov must lie in (0, 180)");
        let cam = Camera { position: [0.0; 3], yaw: 0.0, fov, width, height };
        let f = cam.focal();
        let mut ray_scale = Vec::with_capacity(width * height);
        for py in 0..height {
            for px in 0..width {
                let xn = (px as f64 + 0.5 - 0.5 * width as f64) / f;
                let yn = (0.5 * height as f64 - py as f64 - 0.5) / f;
                ray_scale.push((1.0 + xn * xn + yn * yn).sqrt() as f32);
            }
        }
        Renderer {
            width,
            height,
            fov,
            zbuf: vec![f32::INFINITY; width * height],
            ray_scale,
            frame: FrameSet::new(width, height),
        }
    }

    pub fn for_camera(camera: &Camera) -> Self {
        Self::new(camera.width, camera.height, camera.fov)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn frame(&self) -> &FrameSet {
        &self.frame
    }

    /// Render into the internal buffers and return them. The camera's
    /// resolution and fov must match the renderer.
    pub fn render(&mut self, mesh: &SceneMesh, camera: &Camera, planes: Planes) -> &FrameSet {
        assert_eq!((camera.width, camera.height), (self.width, self.height));
        assert!((camera.fov - self.fov).abs() < 1e-12);
        let n = self.width * self.height;
        self.zbuf.fill(f32::INFINITY);
        self.frame.semantic.fill(0);
        self.frame.instance.fill(0);
        if planes.rgb {
            self.frame.rgb.clear();
            self.frame.rgb.resize(3 * n, 0.0);
        } else {
            self.frame.rgb.clear();
        }
        let [bx0, by0, bx1, by1] = mesh.bounds;
        let [cx, cy, _] = camera.position;
        let inside = cx >= bx0 && cx <= bx1 && cy >= by0 && cy <= by1;
        if inside {
            let view = View::new(camera);
            for quad in &mesh.quads {
                self.draw_quad(&view, quad, planes.rgb);
            }
        }
        if planes.depth {
            self.frame.depth.clear();
            self.frame
                .depth
                .extend(self.zbuf.iter().zip(&self.ray_scale).map(|(&z, &s)| if z.is_finite() { z * s } else { z }));
        } else {
            self.frame.depth.clear();
        }
        &self.frame
    }

    fn draw_quad(&mut self, view: &View, quad: &Quad, rgb: bool) {
        let eye = view.eye;
        let to_eye = [eye[0] - quad.corners[0][0], eye[1] - quad.corners[0][1], eye[2] - quad.corners[0][2]];
        if to_eye[0] * quad.normal[0] + to_eye[1] * quad.normal[1] + to_eye[2] * quad.normal[2] <= 0.0 {
            return;
        }
        let mut poly: [[f64; 3]; 8] = [[0.0; 3]; 8];
        let cam: [[f64; 3]; 4] = quad.corners.map(|p| view.to_camera(p));
        let n = clip_near(&cam, &mut poly);
        if n < 3 {
            return;
        }
        let mut screen = [[0.0f64; 3]; 8];
        for k in 0..n {
            let [xc, yc, zc] = poly[k];
            screen[k] = [view.cx + view.f * xc / zc, view.cy - view.f * yc / zc, 1.0 / zc];
        }
        for k in 1..n - 1 {
            self.raster_triangle(screen[0], screen[k], screen[k + 1], quad, rgb);
        }
    }

    fn raster_triangle(&mut self, a: [f64; 3], b: [f64; 3], c: [f64; 3], quad: &Quad, rgb: bool) {
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            return;
        }
        let (b, c, area) = if area < 0.0 { (c, b, -area) } else { (b, c, area) };
        let minx = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let miny = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let maxx = (a[0].max(b[0]).max(c[0]).ceil() as isize).min(self.width as isize - 1);
        let maxy = (a[1].max(b[1]).max(c[1]).ceil() as isize).min(self.height as isize - 1);
        if maxx < 0 || maxy < 0 {
            return;
        }
        let (maxx, maxy) = (maxx as usize, maxy as usize);
        let inv_area = 1.0 / area;
        // edge function e(p) = (q1 - q0) x (p - q0), positive inside
        let edge = |q0: [f64; 3], q1: [f64; 3]| {
            let dx = q1[0] - q0[0];
            let dy = q1[1] - q0[1];
            // top-left rule: include zero on top or left edges
            let top_left = (dy == 0.0 && dx > 0.0) || dy < 0.0;
            (q0, dx, dy, top_left)
        };
        let edges = [edge(b, c), edge(c, a), edge(a, b)];
        let w = self.width;
        for py in miny..=maxy {
            let sy = py as f64 + 0.5;
            for px in minx..=maxx {
                let sx = px as f64 + 0.5;
                let mut bary = [0.0f64; 3];
                let mut inside = true;
                for (k, &(q0, dx, dy, tl)) in edges.iter().enumerate() {
                    let e = dx * (sy - q0[1]) - dy * (sx - q0[0]);
                    if e < 0.0 || (e == 0.0 && !tl) {
                        inside = false;
                        break;
                    }
                    bary[k] = e;
                }
                if !inside {
                    continue;
                }
                let inv_z = (bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2]) * inv_area;
                if inv_z <= 0.0 {
                    continue;
                }
                let z = (1.0 / inv_z) as f32;
                let idx = py * w + px;
                if z < self.zbuf[idx] {
                    self.zbuf[idx] = z;
                    self.frame.semantic[idx] = quad.semantic;
                    self.frame.instance[idx] = quad.instance;
                    if rgb {
                        self.frame.rgb[3 * idx..3 * idx + 3].copy_from_slice(&quad.shade);
                    }
                }
            }
        }
    }
}

struct View {
    eye: [f64; 3],
    forward: [f64; 2],
    right: [f64; 2],
    f: f64,
    cx: f64,
    cy: f64,
}

impl View {
    fn new(camera: &Camera) -> Self {
        let yaw = camera.yaw.to_radians();
        let (s, c) = yaw.sin_cos();
        View {
            eye: camera.position,
            forward: [c, s],
            right: [s, -c],
            f: camera.focal(),
            cx: 0.5 * camera.width as f64,
            cy: 0.5 * camera.height as f64,
        }
    }

    fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.eye[0], p[1] - self.eye[1], p[2] - self.eye[2]];
        [
            d[0] * self.right[0] + d[1] * self.right[1],
            d[2],
            d[0] * self.forward[0] + d[1] * self.forward[1],
        ]
    }
}

/// Sutherland-Hodgman clip of a quad against z >= NEAR. Returns vertex count.
fn clip_near(input: &[[f64; 3]; 4], out: &mut [[f64; 3]; 8]) -> usize {
    let mut n = 0;
    for k in 0..4 {
        let p = input[k];
        let q = input[(k + 1) % 4];
        let pin = p[2] >= NEAR;
        let qin = q[2] >= NEAR;
        if pin {
            out[n] = p;
            n += 1;
        }
        if pin != qin {
            let t = (NEAR - p[2]) / (q[2] - p[2]);
            out[n] = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), NEAR];
            n += 1;
        }
    }
    n
}

/// Render a full frame set with a fresh renderer.
pub fn render(house: &House, camera: &Camera) -> FrameSet {
    let mesh = SceneMesh::from_house(house);
    let mut r = Renderer::for_camera(camera);
    r.render(&mesh, camera, Planes::ALL).clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub width: usize,
    pub height: usize,
    pub planes: Planes,
    pub workers: usize,
    pub frames_per_worker: usize,
    pub per_worker_fps: Vec<f64>,
    pub aggregate_fps: f64,
}

/// Deterministic stream of camera poses over free cells of an occupancy grid.
pub fn random_poses(grid: &OccupancyGrid, z: f64, n: usize, seed: u64) -> Vec<(f64, f64, f64, f64)> {
    let free: Vec<usize> = grid.free_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = free[rng.gen_range(0..free.len())];
            let [x, y] = grid.cell_center(c);
            (x, y, z, rng.gen_range(0.0..360.0))
        })
        .collect()
}

/// Render `n_frames` per worker at random valid poses and measure frames per
/// second. Workers run on separate threads with their own renderer.
pub fn benchmark_throughput(
    house: &House,
    n_frames: usize,
    resolution: (usize, usize),
    planes: Planes,
    workers: usize,
    seed: u64,
) -> ThroughputReport {
    assert!(n_frames >= 100, "benchmark needs at least 100 frames per worker");
    let workers = workers.max(1);
    let mesh = SceneMesh::from_house(house);
    let grid = crate::spatial::rasterize_occupancy(house, 0.1, 0.3).expect("valid house");
    let start = Instant::now();
    let per_worker_fps: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mesh = &mesh;
                let poses = random_poses(&grid, house.agent_height, n_frames, seed.wrapping_add(w as u64));
                s.spawn(move || {
                    let mut r = Renderer::new(resolution.0, resolution.1, 60.0);
                    let t0 = Instant::now();
                    for (x, y, z, yaw) in poses {
                        let cam = Camera::new(x, y, z, yaw).with_resolution(resolution.0, resolution.1);
                        std::hint::black_box(r.render(mesh, &cam, planes));
                    }
                    n_frames as f64 / t0.elapsed().as_secs_f64()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker")).collect()
    });
    let aggregate_fps = (workers * n_frames) as f64 / start.elapsed().as_secs_f64();
    ThroughputReport {
        width: resolution.0,
        height: resolution.1,
        planes,
        workers,
        frames_per_worker: n_frames,
        per_worker_fps,
        aggregate_fps,
    }
}

/// Binary PPM (P6) of the RGB plane.
pub fn write_ppm(path: impl AsRef<Path>, frame: &FrameSet) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    let bytes: Vec<u8> = frame.rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    out.flush()
}

/// Binary PGM (P5). Values above 255 switch to a 16-bit big-endian raster.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[u16]) -> std::io::Result<()> {
    let maxval = values.iter().copied().max().unwrap_or(0).max(1);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    if maxval <= 255 {
        write!(out, "P5\n{width} {height}\n255\n")?;
        out.write_all(&values.iter().map(|&v| v as u8).collect::<Vec<_>>())?;
    } else {
        write!(out, "P5\n{width} {height}\n65535\n")?;
        for v in values {
            out.write_all(&v.to_be_bytes())?;
        }
    }
    out.flush()
}

/// Raw little-endian f32 depth dump.
pub fn write_depth_raw(path: impl AsRef<Path>, frame: &FrameSet) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(frame.depth.len() * 4);
    for d in &frame.depth {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    std::fs::write(path, bytes)
}

/// 8-bit depth preview: near is bright, misses are black.
pub fn depth_preview(frame: &FrameSet) -> Vec<u16> {
    let max = frame.depth.iter().copied().filter(|d| d.is_finite()).fold(0.0f32, f32::max).max(1e-6);
    frame
        .depth
        .iter()
        .map(|&d| if d.is_finite() { (255.0 * (1.0 - d / max)).round().max(1.0) as u16 } else { 0 })
        .collect()
}

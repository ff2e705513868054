use std::f64::consts::{PI, TAU};

use super::{StepInfo, StepResult, RENDER_SIZE};
use crate::controller::DriveAction;
use crate::error::{Error, Result};
use crate::fixed_conv::RawImage;
use crate::rng::Rng;

pub(super) const STEP_PENALTY: f64 = 0.1;
const TOTAL_TILE_REWARD: f64 = 1000.0;

const SPLINE_SAMPLES_PER_SEGMENT: usize = 40;
const GRID_CELL: f64 = 0.5;
/// Local search window (in centerline samples) when tracking progress.
const PROGRESS_WINDOW: usize = 60;

pub const GRASS: [u8; 3] = [48, 140, 48];
pub const GRASS_DARK: [u8; 3] = [38, 118, 38];
pub const ROAD: [u8; 3] = [102, 102, 102];
pub const KERB: [u8; 3] = [214, 214, 214];
/// Reserved: no other palette entry uses this colour.
pub const CAR: [u8; 3] = [230, 24, 24];

/// Car sprite rows and columns (inclusive start, exclusive end). The view is
/// car-centred and heading-up, so the car never moves on screen.
pub const CAR_ROWS: (usize, usize) = (42, 48);
pub const CAR_COLS: (usize, usize) = (30, 34);
const CAR_ANCHOR: (f64, f64) = (32.0, 45.0);

/// Track geometry, car physics and camera constants.
///
/// Distances are in world units, `dt` in seconds per step. With the
/// defaults a lap is roughly 250 units and a car under full throttle
/// settles at `accel_gain / drag` = 40 units/s.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackParams {
    pub min_tiles: usize,
    pub max_tiles: usize,
    pub control_points: usize,
    pub base_radius: f64,
    /// Relative radial jitter of the control points.
    pub radial_jitter: f64,
    pub half_width: f64,
    /// Kerb beyond the road edge; leaving it ends the episode.
    pub margin: f64,
    pub dt: f64,
    /// `k_s`: heading change per unit distance at full steer.
    pub steer_gain: f64,
    /// `k_a`
    pub accel_gain: f64,
    /// `k_b`
    pub brake_gain: f64,
    /// `k_d`
    pub drag: f64,
    pub pixels_per_unit: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            min_tiles: 60,
            max_tiles: 100,
            control_points: 12,
            base_radius: 40.0,
            radial_jitter: 0.3,
            half_width: 3.5,
            margin: 2.5,
            dt: 0.05,
            steer_gain: 0.25,
            accel_gain: 20.0,
            brake_gain: 20.0,
            drag: 0.5,
            pixels_per_unit: 1.5,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.base_radius,
            self.half_width,
            self.dt,
            self.steer_gain,
            self.accel_gain,
            self.brake_gain,
            self.pixels_per_unit,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("track constants must be positive"));
        }
        if !(self.drag >= 0.0 && self.margin >= 0.0) {
            return Err(Error::invalid("track drag and margin must be non-negative"));
        }
        if self.min_tiles == 0 || self.min_tiles > self.max_tiles || self.max_tiles >= u16::MAX as usize {
            return Err(Error::invalid("track tile range must satisfy 1 <= min <= max < 65535"));
        }
        if self.control_points < 4 {
            return Err(Error::invalid("track needs at least 4 control points"));
        }
        if !(0.0..0.9).contains(&self.radial_jitter) {
            return Err(Error::invalid("radial jitter must lie in [0, 0.9)"));
        }
        Ok(())
    }
}

/// Rasterised road: per cell, the nearest tile and distance to the
/// centerline.
#[derive(Debug, Clone)]
struct Grid {
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    tile: Vec<u16>,
    dist: Vec<f32>,
}

const NO_TILE: u16 = u16::MAX;

impl Grid {
    fn build(points: &[(f64, f64)], tile_of: &[u16], reach: f64) -> Grid {
        let pad = reach + 2.0;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let origin = (x0 - pad, y0 - pad);
        let cols = ((x1 - x0 + 2.0 * pad) / GRID_CELL).ceil() as usize + 1;
        let rows = ((y1 - y0 + 2.0 * pad) / GRID_CELL).ceil() as usize + 1;
        let mut g = Grid {
            origin,
            cols,
            rows,
            tile: vec![NO_TILE; cols * rows],
            dist: vec![f32::INFINITY; cols * rows],
        };
        let r = (reach / GRID_CELL).ceil() as isize + 1;
        for (&(px, py), &t) in points.iter().zip(tile_of) {
            let (ci, cj) = g.cell(px, py).expect("centerline lies inside the grid");
            for dj in -r..=r {
                for di in -r..=r {
                    let (i, j) = (ci as isize + di, cj as isize + dj);
                    if i < 0 || j < 0 || i >= cols as isize || j >= rows as isize {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    let cx = origin.0 + (i as f64 + 0.5) * GRID_CELL;
                    let cy = origin.1 + (j as f64 + 0.5) * GRID_CELL;
                    let d = ((cx - px).powi(2) + (cy - py).powi(2)).sqrt() as f32;
                    let k = j * cols + i;
                    if d <= reach as f32 && d < g.dist[k] {
                        g.dist[k] = d;
                        g.tile[k] = t;
                    }
                }
            }
        }
        g
    }

    fn cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin.0) / GRID_CELL).floor();
        let j = ((y - self.origin.1) / GRID_CELL).floor();
        if i < 0.0 || j < 0.0 || i >= self.cols as f64 || j >= self.rows as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    /// `(tile, distance to centerline)`, or `None` off the road and kerb.
    fn lookup(&self, x: f64, y: f64) -> Option<(u16, f32)> {
        let (i, j) = self.cell(x, y)?;
        let k = j * self.cols + i;
        (self.tile[k] != NO_TILE).then(|| (self.tile[k], self.dist[k]))
    }
}

/// Closed centripetal Catmull–Rom spline through `ctrl`.
fn centripetal_loop(ctrl: &[(f64, f64)], per_segment: usize) -> Vec<(f64, f64)> {
    let n = ctrl.len();
    let knot = |a: (f64, f64), b: (f64, f64)| ((b.0 - a.0).hypot(b.1 - a.1)).sqrt().max(1e-9);
    let lerp = |a: (f64, f64), b: (f64, f64), ta: f64, tb: f64, t: f64| {
        let (u, v) = ((tb - t) / (tb - ta), (t - ta) / (tb - ta));
        (u * a.0 + v * b.0, u * a.1 + v * b.1)
    };
    let mut out = Vec::with_capacity(n * per_segment);
    for k in 0..n {
        let p0 = ctrl[(k + n - 1) % n];
        let p1 = ctrl[k];
        let p2 = ctrl[(k + 1) % n];
        let p3 = ctrl[(k + 2) % n];
        let t0 = 0.0;
        let t1 = t0 + knot(p0, p1);
        let t2 = t1 + knot(p1, p2);
        let t3 = t2 + knot(p2, p3);
        for s in 0..per_segment {
            let t = t1 + (t2 - t1) * s as f64 / per_segment as f64;
            let a1 = lerp(p0, p1, t0, t1, t);
            let a2 = lerp(p1, p2, t1, t2, t);
            let a3 = lerp(p2, p3, t2, t3, t);
            let b1 = lerp(a1, a2, t0, t2, t);
            let b2 = lerp(a2, a3, t1, t3, t);
            out.push(lerp(b1, b2, t1, t2, t));
        }
    }
    out
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

#[derive(Debug, Clone)]
pub struct TrackRunner {
    params: TrackParams,
    max_steps: usize,
    centerline: Vec<(f64, f64)>,
    n_tiles: usize,
    grid: Grid,
    visited: Vec<bool>,
    n_visited: usize,
    pos: (f64, f64),
    heading: f64,
    speed: f64,
    progress: usize,
    steps: usize,
    done: bool,
}

impl TrackRunner {
    pub(super) fn new(params: TrackParams, max_steps: usize, mut rng: Rng) -> Self {
        let n = params.control_points;
        let spacing = TAU / n as f64;
        let ctrl: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let angle = spacing * (k as f64 + rng.uniform_range(-0.25, 0.25));
                let r = params.base_radius * (1.0 + rng.uniform_range(-params.radial_jitter, params.radial_jitter));
                (r * angle.cos(), r * angle.sin())
            })
            .collect();
        let centerline = centripetal_loop(&ctrl, SPLINE_SAMPLES_PER_SEGMENT);
        let n_tiles = params.min_tiles + rng.below((params.max_tiles - params.min_tiles + 1) as u64) as usize;

        let mut arc = Vec::with_capacity(centerline.len());
        let mut total = 0.0;
        for i in 0..centerline.len() {
            arc.push(total);
            let (a, b) = (centerline[i], centerline[(i + 1) % centerline.len()]);
            total += (b.0 - a.0).hypot(b.1 - a.1);
        }
        let tile_of: Vec<u16> = arc
            .iter()
            .map(|s| ((s / total * n_tiles as f64) as usize).min(n_tiles - 1) as u16)
            .collect();
        let grid = Grid::build(&centerline, &tile_of, params.half_width + params.margin);

        let (a, b) = (centerline[0], centerline[1]);
        TrackRunner {
            max_steps,
            n_tiles,
            grid,
            visited: vec![false; n_tiles],
            n_visited: 0,
            pos: a,
            heading: (b.1 - a.1).atan2(b.0 - a.0),
            speed: 0.0,
            progress: 0,
            steps: 0,
            done: false,
            centerline,
            params,
        }
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    pub fn tiles_visited(&self) -> usize {
        self.n_visited
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn position(&self) -> (f64, f64) {
        self.pos
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn centerline(&self) -> &[(f64, f64)] {
        &self.centerline
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Integrates one step of the kinematic car.
    pub(super) fn step(&mut self, a: &DriveAction) -> Result<StepResult> {
        let in_range = (-1.0..=1.0).contains(&a.steer) && (0.0..=1.0).contains(&a.brake) && (0.0..=1.0).contains(&a.accel);
        if !in_range {
            return Err(Error::invalid(format!(
                "drive action out of range: steer {}, brake {}, accel {}",
                a.steer, a.brake, a.accel
            )));
        }
        let p = self.params.clone();
        self.heading = wrap_angle(self.heading + p.steer_gain * a.steer * self.speed * p.dt);
        let dv = p.accel_gain * a.accel - p.brake_gain * a.brake - p.drag * self.speed;
        self.speed = (self.speed + dv * p.dt).max(0.0);
        self.pos.0 += self.speed * self.heading.cos() * p.dt;
        self.pos.1 += self.speed * self.heading.sin() * p.dt;
        self.steps += 1;
        self.update_progress();

        let mut reward = -STEP_PENALTY;
        let off_track = match self.grid.lookup(self.pos.0, self.pos.1) {
            Some((tile, dist)) => {
                if dist as f64 <= p.half_width && !self.visited[tile as usize] {
                    self.visited[tile as usize] = true;
                    self.n_visited += 1;
                    reward += TOTAL_TILE_REWARD / self.n_tiles as f64;
                }
                false
            }
            None => true,
        };
        self.done = off_track || self.n_visited == self.n_tiles || self.steps >= self.max_steps;
        Ok(StepResult {
            frame: self.render(),
            reward,
            done: self.done,
            info: StepInfo::Track {
                tiles_visited: self.n_visited,
                n_tiles: self.n_tiles,
            },
        })
    }

    fn update_progress(&mut self) {
        let n = self.centerline.len();
        let d2 = |i: usize| {
            let (x, y) = self.centerline[i % n];
            (x - self.pos.0).powi(2) + (y - self.pos.1).powi(2)
        };
        let start = self.progress + n - PROGRESS_WINDOW;
        self.progress = (start..=start + 2 * PROGRESS_WINDOW)
            .min_by(|&a, &b| d2(a).total_cmp(&d2(b)))
            .unwrap()
            % n;
    }

    /// Car-centred, heading-up top-down view.
    pub fn render(&self) -> RawImage {
        let mut img = RawImage::filled(RENDER_SIZE, RENDER_SIZE, GRASS);
        let ppu = self.params.pixels_per_unit;
        let (c, s) = (self.heading.cos(), self.heading.sin());
        for py in 0..RENDER_SIZE {
            let forward = (CAR_ANCHOR.1 - (py as f64 + 0.5)) / ppu;
            for px in 0..RENDER_SIZE {
                let right = ((px as f64 + 0.5) - CAR_ANCHOR.0) / ppu;
                let wx = self.pos.0 + forward * c + right * s;
                let wy = self.pos.1 + forward * s - right * c;
                let colour = match self.grid.lookup(wx, wy) {
                    Some((_, d)) if d as f64 <= self.params.half_width => ROAD,
                    Some(_) => KERB,
                    None => {
                        if ((wx / 4.0).floor() + (wy / 4.0).floor()) as i64 % 2 == 0 {
                            GRASS
                        } else {
                            GRASS_DARK
                        }
                    }
                };
                img.put(px, py, colour);
            }
        }
        for py in CAR_ROWS.0..CAR_ROWS.1 {
            for px in CAR_COLS.0..CAR_COLS.1 {
                img.put(px, py, CAR);
            }
        }
        img
    }

    /// Steers toward a centerline point a few units ahead and holds a
    /// moderate speed.
    pub fn heuristic_action(&self) -> DriveAction {
        let n = self.centerline.len();
        let target = self.centerline[(self.progress + 12) % n];
        let want = (target.1 - self.pos.1).atan2(target.0 - self.pos.0);
        let err = wrap_angle(want - self.heading);
        let cruise = 16.0;
        DriveAction {
            steer: (3.0 * err).clamp(-1.0, 1.0),
            brake: if self.speed > cruise * 1.2 { 1.0 } else { 0.0 },
            accel: if self.speed < cruise { 1.0 } else { 0.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runner(seed: u64) -> TrackRunner {
        TrackRunner::new(TrackParams::default(), 1000, Rng::new(seed))
    }

    #[test]
    fn spline_passes_through_control_points() {
        let ctrl = [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)];
        let pts = centripetal_loop(&ctrl, 10);
        assert_eq!(pts.len(), 40);
        for (k, p) in ctrl.iter().enumerate() {
            let q = pts[k * 10];
            assert!((q.0 - p.0).abs() < 1e-12 && (q.1 - p.1).abs() < 1e-12);
        }
    }

    #[test]
    fn start_is_on_the_first_tile() {
        let r = runner(4);
        let (tile, d) = r.grid.lookup(r.pos.0, r.pos.1).unwrap();
        assert_eq!(tile, 0);
        assert!(d < 0.5);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, 0.0, 3.0, 7.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w));
            assert!(((w - a) / TAU - ((w - a) / TAU).round()).abs() < 1e-12);
        }
    }
}

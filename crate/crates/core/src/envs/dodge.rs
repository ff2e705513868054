use super::{StepInfo, StepResult, RENDER_SIZE};
use crate::controller::Move;
use crate::error::{Error, Result};
use crate::fixed_conv::RawImage;
use crate::rng::Rng;

pub const BACKGROUND: [u8; 3] = [18, 18, 42];
pub const FLOOR: [u8; 3] = [90, 90, 110];
pub const AGENT: [u8; 3] = [70, 200, 255];
pub const PROJECTILE: [u8; 3] = [255, 150, 20];
/// Beyond the side walls.
pub const WALL: [u8; 3] = [60, 40, 40];

/// Lookahead of the heuristic planner, in steps.
const HORIZON: usize = 30;

/// Field, agent and spawn constants. Coordinates are pixels; the agent
/// stands on the floor row at the bottom of the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DodgeParams {
    pub agent_width: usize,
    pub agent_height: usize,
    /// Pixels moved per step.
    pub agent_stride: usize,
    pub projectile_size: usize,
    /// Probability of a new projectile each step.
    pub spawn_rate: f64,
    /// Fraction of projectiles dropped straight over the agent.
    pub aimed_fraction: f64,
    /// Fall speed range in pixels per step; at least 1 so a projectile
    /// always moves down at least one row.
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for DodgeParams {
    fn default() -> Self {
        DodgeParams {
            agent_width: 8,
            agent_height: 4,
            agent_stride: 2,
            projectile_size: 4,
            spawn_rate: 0.06,
            aimed_fraction: 0.4,
            min_speed: 1.0,
            max_speed: 2.5,
        }
    }
}

impl DodgeParams {
    pub fn validate(&self) -> Result<()> {
        if self.agent_width == 0 || self.agent_width > RENDER_SIZE || self.agent_height == 0 || self.agent_height + 2 > RENDER_SIZE {
            return Err(Error::invalid("agent must fit inside the frame"));
        }
        if self.projectile_size == 0 || self.projectile_size > RENDER_SIZE || self.agent_stride == 0 {
            return Err(Error::invalid("projectile size and agent stride must be positive"));
        }
        if !(0.0..=1.0).contains(&self.spawn_rate) || !(0.0..=1.0).contains(&self.aimed_fraction) {
            return Err(Error::invalid("spawn rate and aimed fraction must lie in [0, 1]"));
        }
        if !(self.min_speed >= 1.0 && self.max_speed >= self.min_speed && self.max_speed.is_finite()) {
            return Err(Error::invalid("projectile speeds must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    fn agent_top(&self) -> f64 {
        (RENDER_SIZE - 2 - self.agent_height) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projectile {
    /// Left column.
    pub x: usize,
    /// Top edge, may be negative while entering.
    pub y: f64,
    pub speed: f64,
}

fn overlaps(p: &DodgeParams, agent_x: usize, b: &Projectile) -> bool {
    let (ax0, ax1) = (agent_x, agent_x + p.agent_width);
    let (ay0, ay1) = (p.agent_top(), p.agent_top() + p.agent_height as f64);
    b.x < ax1 && b.x + p.projectile_size > ax0 && b.y < ay1 && b.y + p.projectile_size as f64 > ay0
}

#[derive(Debug, Clone)]
pub struct DodgeBall {
    params: DodgeParams,
    max_steps: usize,
    rng: Rng,
    agent_x: usize,
    projectiles: Vec<Projectile>,
    steps: usize,
    done: bool,
}

impl DodgeBall {
    pub(super) fn new(params: DodgeParams, max_steps: usize, rng: Rng) -> Self {
        DodgeBall {
            agent_x: (RENDER_SIZE - params.agent_width) / 2,
            params,
            max_steps,
            rng,
            projectiles: Vec::new(),
            steps: 0,
            done: false,
        }
    }

    pub fn agent_x(&self) -> usize {
        self.agent_x
    }

    pub fn projectiles(&self) -> &[Projectile] {
        &self.projectiles
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub(super) fn step(&mut self, m: Move) -> StepResult {
        let p = &self.params;
        let right_limit = RENDER_SIZE - p.agent_width;
        self.agent_x = match m {
            Move::Left => self.agent_x.saturating_sub(p.agent_stride),
            Move::Right => (self.agent_x + p.agent_stride).min(right_limit),
        };
        for b in &mut self.projectiles {
            b.y += b.speed;
        }
        self.projectiles.retain(|b| b.y < RENDER_SIZE as f64);
        if self.rng.uniform() < p.spawn_rate {
            let max_x = RENDER_SIZE - p.projectile_size;
            let x = if self.rng.uniform() < p.aimed_fraction {
                (self.agent_x + p.agent_width / 2).saturating_sub(p.projectile_size / 2).min(max_x)
            } else {
                self.rng.below(max_x as u64 + 1) as usize
            };
            let speed = self.rng.uniform_range(p.min_speed, p.max_speed);
            self.projectiles.push(Projectile {
                x,
                y: -(p.projectile_size as f64),
                speed,
            });
        }
        self.steps += 1;
        let hit = self.projectiles.iter().any(|b| overlaps(&self.params, self.agent_x, b));
        self.done = hit || self.steps >= self.max_steps;
        StepResult {
            frame: self.render(),
            reward: 1.0,
            done: self.done,
            info: StepInfo::Dodge {
                steps_survived: self.steps,
            },
        }
    }

    /// Screen column of world column `x`. The view follows the agent, so
    /// the agent is always drawn centred.
    pub fn screen_x(&self, x: usize) -> isize {
        let centre = (self.agent_x + self.params.agent_width / 2) as isize;
        x as isize - centre + (RENDER_SIZE / 2) as isize
    }

    /// Front view from behind the agent: floor at the bottom, agent on the
    /// floor, projectiles as squares, wall colour outside the field.
    pub fn render(&self) -> RawImage {
        let p = &self.params;
        let mut img = RawImage::filled(RENDER_SIZE, RENDER_SIZE, BACKGROUND);
        let world = |sx: usize| sx as isize - self.screen_x(0);
        for sx in 0..RENDER_SIZE {
            let wx = world(sx);
            if wx < 0 || wx >= RENDER_SIZE as isize {
                for y in 0..RENDER_SIZE - 2 {
                    img.put(sx, y, WALL);
                }
            }
            for y in RENDER_SIZE - 2..RENDER_SIZE {
                img.put(sx, y, FLOOR);
            }
        }
        let paint = |img: &mut RawImage, x0: usize, w: usize, y0: isize, h: usize, rgb: [u8; 3]| {
            let sx0 = self.screen_x(x0);
            for y in y0.max(0)..(y0 + h as isize).min(RENDER_SIZE as isize) {
                for sx in sx0.max(0)..(sx0 + w as isize).min(RENDER_SIZE as isize) {
                    img.put(sx as usize, y as usize, rgb);
                }
            }
        };
        paint(&mut img, self.agent_x, p.agent_width, p.agent_top() as isize, p.agent_height, AGENT);
        for b in &self.projectiles {
            paint(&mut img, b.x, p.projectile_size, b.y.floor() as isize, p.projectile_size, PROJECTILE);
        }
        img
    }

    /// Plans over the known projectiles for a short horizon and takes the
    /// first move of any surviving path, preferring the one that ends
    /// nearer the centre.
    pub fn heuristic_action(&self) -> Move {
        let p = &self.params;
        let limit = RENDER_SIZE - p.agent_width;
        let next = |x: usize, m: Move| match m {
            Move::Left => x.saturating_sub(p.agent_stride),
            Move::Right => (x + p.agent_stride).min(limit),
        };
        let safe = |x: usize, t: usize| {
            !self.projectiles.iter().any(|b| {
                let moved = Projectile {
                    y: b.y + b.speed * t as f64,
                    ..*b
                };
                moved.y < RENDER_SIZE as f64 && overlaps(p, x, &moved)
            })
        };
        // alive[x] after the backward pass: some move sequence from x at
        // step t survives until the horizon.
        let mut alive: Vec<bool> = (0..=limit).map(|x| safe(x, HORIZON)).collect();
        for t in (1..HORIZON).rev() {
            alive = (0..=limit)
                .map(|x| safe(x, t) && (alive[next(x, Move::Left)] || alive[next(x, Move::Right)]))
                .collect();
        }
        let centre = limit / 2;
        let score = |m: Move| {
            let x = next(self.agent_x, m);
            (alive[x], std::cmp::Reverse(x.abs_diff(centre)))
        };
        if score(Move::Right) > score(Move::Left) {
            Move::Right
        } else {
            Move::Left
        }
    }
}

//! Randomized cylinder forests for the quadrotor task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One vertical cylinder, effectively infinite in height.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Axis-aligned world bounds for forest generation.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }
}

/// A set of cylinders plus a uniform grid index for nearest-surface
/// queries from the rollout hot path.
#[derive(Debug, Clone)]
pub struct ObstacleForest {
    obstacles: Vec<Obstacle>,
    max_radius: f64,
    // Grid index: world extent of the cells, cell edge, column count.
    cell: f64,
    gx_min: f64,
    gy_min: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<u32>>,
}

impl ObstacleForest {
    pub fn new(obstacles: Vec<Obstacle>) -> Self {
        // Cell edge scaled to the content: aim for a few obstacles per
        // occupied cell.
        let cell = 4.0;
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
        for o in &obstacles {
            x_min = x_min.min(o.x - o.radius);
            x_max = x_max.max(o.x + o.radius);
            y_min = y_min.min(o.y - o.radius);
            y_max = y_max.max(o.y + o.radius);
        }
        let nx = (((x_max - x_min) / cell).ceil() as i64).max(1);
        let ny = (((y_max - y_min) / cell).ceil() as i64).max(1);
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        for (idx, o) in obstacles.iter().enumerate() {
            let cx = (((o.x - x_min) / cell) as i64).clamp(0, nx - 1);
            let cy = (((o.y - y_min) / cell) as i64).clamp(0, ny - 1);
            cells[(cy * nx + cx) as usize].push(idx as u32);
        }
        let max_radius = obstacles.iter().map(|o| o.radius).fold(0.0, f64::max);
        Self {
            obstacles,
            max_radius,
            cell,
            gx_min: x_min,
            gy_min: y_min,
            nx,
            ny,
            cells,
        }
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    /// Distance from (x, y) to the nearest cylinder surface, floored at
    /// zero (inside a cylinder counts as contact). Infinite when the
    /// forest is empty.
    pub fn surface_distance(&self, x: f64, y: f64) -> f64 {
        if self.obstacles.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        // Expanding ring search over grid cells; stop once even the
        // largest cylinder in the next ring cannot beat the current
        // best surface distance.
        let cx = (((x - self.gx_min) / self.cell) as i64).clamp(0, self.nx - 1);
        let cy = (((y - self.gy_min) / self.cell) as i64).clamp(0, self.ny - 1);
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            if best.is_finite() {
                // Any center in ring r is at least (r-1) cells away.
                let floor = (ring - 1).max(0) as f64 * self.cell - self.max_radius;
                if floor > best {
                    break;
                }
            }
            self.for_ring(cx, cy, ring, |o| {
                let d = ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt() - o.radius;
                if d < best {
                    best = d;
                }
            });
        }
        best.max(0.0)
    }

    fn for_ring(&self, cx: i64, cy: i64, ring: i64, mut visit: impl FnMut(&Obstacle)) {
        let mut cell = |gx: i64, gy: i64| {
            if gx < 0 || gy < 0 || gx >= self.nx || gy >= self.ny {
                return;
            }
            for &idx in &self.cells[(gy * self.nx + gx) as usize] {
                visit(&self.obstacles[idx as usize]);
            }
        };
        if ring == 0 {
            cell(cx, cy);
            return;
        }
        for gx in (cx - ring)..=(cx + ring) {
            cell(gx, cy - ring);
            cell(gx, cy + ring);
        }
        for gy in (cy - ring + 1)..=(cy + ring - 1) {
            cell(cx - ring, gy);
            cell(cx + ring, gy);
        }
    }

    /// All obstacles whose surface lies within `range` of (x, y),
    /// with their center distances.
    pub fn within(&self, x: f64, y: f64, range: f64) -> impl Iterator<Item = (&Obstacle, f64)> {
        self.obstacles.iter().filter_map(move |o| {
            let d = ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt();
            (d - o.radius <= range).then_some((o, d))
        })
    }

    /// Whether (x, y) touches any cylinder (closed condition: the
    /// surface itself counts).
    pub fn contact(&self, x: f64, y: f64) -> bool {
        self.surface_distance(x, y) <= 0.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.obstacles).expect("obstacle list serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let obstacles: Vec<Obstacle> = serde_json::from_str(text)?;
        Ok(Self::new(obstacles))
    }
}

/// Places cylinders on a jittered grid: one per grid cell of edge
/// `mean_spacing`, offset uniformly by up to 40% of the cell in each
/// axis, skipping cells that would encroach on the start or goal
/// (surface clearance 1.5 m). Deterministic in the seed.
pub fn generate_forest(
    mean_spacing: f64,
    bounds: Bounds,
    radius: f64,
    start: (f64, f64),
    goal: (f64, f64),
    seed: u64,
) -> Result<ObstacleForest> {
    if mean_spacing <= 0.0 || radius <= 0.0 || mean_spacing.is_nan() || radius.is_nan() {
        return Err(Error::Config("spacing and radius must be positive".into()));
    }
    let (w, h) = (bounds.x_max - bounds.x_min, bounds.y_max - bounds.y_min);
    if w < mean_spacing || h < mean_spacing {
        return Err(Error::Config(format!(
            "bounds {w:.1}x{h:.1} m cannot fit a {mean_spacing:.1} m grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = ((w / mean_spacing) as i64, (h / mean_spacing) as i64);
    let clearance = 1.5 + radius;
    let mut obstacles = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let jx = rng.gen_range(-0.4 * mean_spacing..=0.4 * mean_spacing);
            let jy = rng.gen_range(-0.4 * mean_spacing..=0.4 * mean_spacing);
            let x = bounds.x_min + (ix as f64 + 0.5) * mean_spacing + jx;
            let y = bounds.y_min + (iy as f64 + 0.5) * mean_spacing + jy;
            let near = |p: (f64, f64)| ((x - p.0).powi(2) + (y - p.1).powi(2)).sqrt() < clearance;
            if near(start) || near(goal) {
                continue;
            }
            obstacles.push(Obstacle { x, y, radius });
        }
    }
    Ok(ObstacleForest::new(obstacles))
}

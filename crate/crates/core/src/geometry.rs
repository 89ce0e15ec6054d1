//! Robot, arena and obstacle geometry shared by the simulator, the renderer
//! and the domain randomiser.

use std::f64::consts::PI;

/// Arena is the square `[-ARENA_HALF, ARENA_HALF]^2`.
pub const ARENA_HALF: f64 = 1.0;
/// Obstacle grid cell edge length.
pub const CELL: f64 = 0.25;
/// Cells per arena side.
pub const GRID: usize = 8;

pub const H_MIN: f64 = 0.05;
pub const H_MAX: f64 = 0.20;
pub const W_MIN: f64 = 0.20;
pub const W_MAX: f64 = 0.40;
/// Above this track width the reachable body height drops with `COUPLING_SLOPE`.
pub const COUPLING_W0: f64 = 0.30;
pub const COUPLING_SLOPE: f64 = 0.5;

pub const CHASSIS_LENGTH: f64 = 0.30;
pub const CHASSIS_WIDTH: f64 = 0.20;
/// Distance between front and rear wheel contact points.
pub const WHEELBASE: f64 = 0.30;

pub const STEP_XY: f64 = 0.05;
pub const STEP_THETA: f64 = 5.0 * PI / 180.0;
pub const STEP_H: f64 = 0.02;
pub const STEP_W: f64 = 0.02;

pub const SUCCESS_RADIUS: f64 = 0.10;
pub const OUT_OF_RANGE: f64 = 2.0;
pub const MAX_STEPS: u32 = 100;

/// Tolerance for all geometric predicates.
pub const EPS: f64 = 1e-9;

/// Wall height used for everything outside the arena.
pub const WALL_HEIGHT: f64 = 0.30;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Largest body height reachable at track width `w`.
pub fn max_height_for_width(w: f64) -> f64 {
    H_MAX - COUPLING_SLOPE * (w - COUPLING_W0).max(0.0)
}

/// Hash of every constant that changes what a stored observation means.
pub fn geometry_hash() -> u32 {
    let consts = [
        ARENA_HALF,
        CELL,
        GRID as f64,
        H_MIN,
        H_MAX,
        W_MIN,
        W_MAX,
        COUPLING_W0,
        COUPLING_SLOPE,
        CHASSIS_LENGTH,
        CHASSIS_WIDTH,
        WHEELBASE,
        STEP_XY,
        STEP_THETA,
        STEP_H,
        STEP_W,
        SUCCESS_RADIUS,
        OUT_OF_RANGE,
        MAX_STEPS as f64,
        WALL_HEIGHT,
    ];
    let mut h = crc32fast::Hasher::new();
    for c in consts {
        h.update(&c.to_le_bytes());
    }
    h.finalize()
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn centered(cx: f64, cy: f64, half: f64) -> Self {
        Aabb {
            min: [cx - half, cy - half],
            max: [cx + half, cy + half],
        }
    }

    /// Positive-area overlap; touching boxes do not overlap.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min[0] < other.max[0] - EPS
            && other.min[0] < self.max[0] - EPS
            && self.min[1] < other.max[1] - EPS
            && other.min[1] < self.max[1] - EPS
    }

    /// Closed containment; points on the boundary are inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] - EPS
            && p[0] <= self.max[0] + EPS
            && p[1] >= self.min[1] - EPS
            && p[1] <= self.max[1] + EPS
    }

    /// Every point of `self` lies within `other`.
    pub fn within(&self, other: &Aabb) -> bool {
        self.min[0] >= other.min[0] - EPS
            && self.max[0] <= other.max[0] + EPS
            && self.min[1] >= other.min[1] - EPS
            && self.max[1] <= other.max[1] + EPS
    }
}

/// Rectangle rotated by `theta` about its centre. `half_len` runs along the
/// heading, `half_wid` across it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect {
    pub center: [f64; 2],
    pub half_len: f64,
    pub half_wid: f64,
    pub cos: f64,
    pub sin: f64,
}

impl OrientedRect {
    pub fn new(center: [f64; 2], length: f64, width: f64, theta: f64) -> Self {
        OrientedRect {
            center,
            half_len: 0.5 * length,
            half_wid: 0.5 * width,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Corners in order front-left, front-right, rear-right, rear-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = (self.cos, self.sin);
        let pt = |a: f64, b: f64| {
            [
                self.center[0] + a * c - b * s,
                self.center[1] + a * s + b * c,
            ]
        };
        [
            pt(self.half_len, self.half_wid),
            pt(self.half_len, -self.half_wid),
            pt(-self.half_len, -self.half_wid),
            pt(-self.half_len, self.half_wid),
        ]
    }

    pub fn bounding_box(&self) -> Aabb {
        let ex = self.half_len * self.cos.abs() + self.half_wid * self.sin.abs();
        let ey = self.half_len * self.sin.abs() + self.half_wid * self.cos.abs();
        Aabb {
            min: [self.center[0] - ex, self.center[1] - ey],
            max: [self.center[0] + ex, self.center[1] + ey],
        }
    }

    /// Separating-axis test; positive-area overlap only.
    pub fn overlaps_aabb(&self, b: &Aabb) -> bool {
        if !self.bounding_box().overlaps(b) {
            return false;
        }
        let bc = [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1])];
        let bh = [0.5 * (b.max[0] - b.min[0]), 0.5 * (b.max[1] - b.min[1])];
        let d = [bc[0] - self.center[0], bc[1] - self.center[1]];
        for (axis, r_self) in [
            ([self.cos, self.sin], self.half_len),
            ([-self.sin, self.cos], self.half_wid),
        ] {
            let r_box = bh[0] * axis[0].abs() + bh[1] * axis[1].abs();
            let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
            if dist >= r_self + r_box - EPS {
                return false;
            }
        }
        true
    }
}

pub fn arena() -> Aabb {
    Aabb {
        min: [-ARENA_HALF, -ARENA_HALF],
        max: [ARENA_HALF, ARENA_HALF],
    }
}

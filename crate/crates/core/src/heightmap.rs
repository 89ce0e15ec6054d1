//! Egocentric height-map rendering and policy observations.
//!
//! The window is 1.6 m square, centred on the robot and aligned with the
//! world axes. Cell `(i, j)` covers
//! `[x - 0.8 + 0.05 j, x - 0.8 + 0.05 (j + 1)] x [y - 0.8 + 0.05 i, ...]`,
//! so row `i = 0` is the lowest y. Each cell holds the tallest obstacle whose
//! footprint overlaps it; anything reaching outside the arena reads as a
//! 0.30 m wall. The robot itself is never drawn.

use std::fmt::Write as _;

use crate::geometry::{arena, Aabb, WALL_HEIGHT};
use crate::sim::{EnvConfig, RobotState};

pub const MAP_SIZE: usize = 32;
pub const MAP_RES: f64 = 0.05;
pub const HALF_WINDOW: f64 = 0.5 * MAP_SIZE as f64 * MAP_RES;
pub const PROPRIO_LEN: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct HeightMap {
    cells: Vec<f32>,
}

impl HeightMap {
    pub fn zeros() -> Self {
        HeightMap {
            cells: vec![0.0; MAP_SIZE * MAP_SIZE],
        }
    }

    pub fn from_cells(cells: Vec<f32>) -> Option<Self> {
        (cells.len() == MAP_SIZE * MAP_SIZE).then_some(HeightMap { cells })
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.cells[i * MAP_SIZE + j]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.cells
    }

    /// Binary graymap, north up, `height / 0.30` scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{MAP_SIZE} {MAP_SIZE}\n255\n").into_bytes();
        for i in (0..MAP_SIZE).rev() {
            for j in 0..MAP_SIZE {
                let v = (f64::from(self.get(i, j)) / WALL_HEIGHT * 255.0).round();
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    /// One line per row, row 0 (lowest y) first.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(MAP_SIZE * MAP_SIZE * 6);
        for i in 0..MAP_SIZE {
            for j in 0..MAP_SIZE {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Ground square of map cell `(i, j)` for a robot at `(x, y)`.
pub fn cell_bounds(x: f64, y: f64, i: usize, j: usize) -> Aabb {
    let x0 = x - HALF_WINDOW;
    let y0 = y - HALF_WINDOW;
    Aabb {
        min: [x0 + MAP_RES * j as f64, y0 + MAP_RES * i as f64],
        max: [x0 + MAP_RES * (j + 1) as f64, y0 + MAP_RES * (i + 1) as f64],
    }
}

pub fn render(env: &EnvConfig, state: &RobotState) -> HeightMap {
    let mut map = HeightMap::zeros();
    let bounds = arena();
    for i in 0..MAP_SIZE {
        for j in 0..MAP_SIZE {
            if !cell_bounds(state.x, state.y, i, j).within(&bounds) {
                map.cells[i * MAP_SIZE + j] = WALL_HEIGHT as f32;
            }
        }
    }
    let x0 = state.x - HALF_WINDOW;
    let y0 = state.y - HALF_WINDOW;
    let span = |lo: f64, hi: f64, origin: f64| {
        let a = ((lo - origin) / MAP_RES).floor() as i64 - 1;
        let b = ((hi - origin) / MAP_RES).ceil() as i64 + 1;
        (a.max(0) as usize)..(b.clamp(0, MAP_SIZE as i64) as usize)
    };
    for o in &env.obstacles {
        let fp = o.footprint();
        let height = o.shape.height() as f32;
        for i in span(fp.min[1], fp.max[1], y0) {
            for j in span(fp.min[0], fp.max[0], x0) {
                let c = &mut map.cells[i * MAP_SIZE + j];
                if height > *c && cell_bounds(state.x, state.y, i, j).overlaps(&fp) {
                    *c = height;
                }
            }
        }
    }
    map
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub heightmap: HeightMap,
    /// `[cos theta, sin theta, h, w, x_target - x, y_target - y]`.
    pub proprio: [f32; PROPRIO_LEN],
}

pub fn proprio(env: &EnvConfig, s: &RobotState) -> [f32; PROPRIO_LEN] {
    [
        s.theta.cos() as f32,
        s.theta.sin() as f32,
        s.h as f32,
        s.w as f32,
        (env.target[0] - s.x) as f32,
        (env.target[1] - s.y) as f32,
    ]
}

pub fn observe(env: &EnvConfig, s: &RobotState) -> Observation {
    Observation {
        heightmap: render(env, s),
        proprio: proprio(env, s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Cell, Obstacle, ObstacleShape};

    fn empty() -> EnvConfig {
        EnvConfig::empty(RobotState::at_rest(0.0, 0.0, 0.0), [0.8, 0.0])
    }

    #[test]
    fn empty_arena_centre_is_flat() {
        let m = render(&empty(), &RobotState::at_rest(0.0, 0.0, 0.3));
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blocker_fills_five_by_five_block() {
        let mut env = empty();
        // Cell (5, 4): x [0.25, 0.5], y [0, 0.25].
        env.obstacles.push(Obstacle {
            cell: Cell::new(5, 4),
            shape: ObstacleShape::Blocker,
        });
        let m = render(&env, &RobotState::at_rest(0.0, 0.0, 0.0));
        // j = (0.25 + 0.8) / 0.05 = 21 .. 26, i = 16 .. 21.
        for i in 0..MAP_SIZE {
            for j in 0..MAP_SIZE {
                let inside = (16..21).contains(&i) && (21..26).contains(&j);
                assert_eq!(m.get(i, j), if inside { 0.30 } else { 0.0 }, "({i},{j})");
            }
        }
    }

    #[test]
    fn corner_window_sees_wall() {
        let m = render(&empty(), &RobotState::at_rest(0.8, 0.8, 0.0));
        // Window spans [0, 1.6]^2; cells with x > 1 or y > 1 are walls.
        for i in 0..MAP_SIZE {
            for j in 0..MAP_SIZE {
                let outside = i >= 20 || j >= 20;
                assert_eq!(m.get(i, j), if outside { 0.30 } else { 0.0 }, "({i},{j})");
            }
        }
    }

    #[test]
    fn proprio_fields() {
        let env = empty();
        let o = observe(&env, &RobotState::at_rest(0.0, 0.0, 0.0));
        assert_eq!(&o.proprio[..2], &[1.0, 0.0]);
        assert_eq!(&o.proprio[2..4], &[0.05, 0.20]);
        let at_target = RobotState::at_rest(0.8, 0.0, 1.0);
        assert_eq!(&observe(&env, &at_target).proprio[4..], &[0.0, 0.0]);
    }

    #[test]
    fn pgm_header_and_size() {
        let pgm = render(&empty(), &RobotState::at_rest(0.8, 0.8, 0.0)).to_pgm();
        assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(pgm.len(), 13 + MAP_SIZE * MAP_SIZE);
        // North-up: the first written row is the top of the window (wall).
        assert_eq!(pgm[13], 255);
        assert_eq!(*pgm.last().unwrap(), 255);
        assert_eq!(pgm[13 + 31 * 32], 0);
    }
}

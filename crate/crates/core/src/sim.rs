//! Deterministic kinematic simulator: pose validity, the step transition with
//! its reward, environment sampling and the failure re-sampling pool.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    arena, max_height_for_width, wrap_angle, Aabb, OrientedRect, ARENA_HALF, CELL, CHASSIS_LENGTH,
    CHASSIS_WIDTH, EPS, GRID, H_MAX, H_MIN, MAX_STEPS, OUT_OF_RANGE, STEP_H, STEP_THETA, STEP_W,
    STEP_XY, SUCCESS_RADIUS, WHEELBASE, W_MAX, W_MIN,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("input state violates the pose contract: {0}")]
    InvalidInputState(Violation),
    #[error("action symbol {0} outside {{-1, 0, 1}}")]
    BadAction(i8),
    #[error("environment spec unsatisfiable after {attempts} attempts")]
    Unsatisfiable { attempts: usize },
    #[error("environment violates its invariants: {0}")]
    InvalidEnv(String),
    #[error("environment document: {0}")]
    Document(String),
}

/// Robot pose and body configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub h: f64,
    pub w: f64,
}

impl RobotState {
    /// Lowest body, narrowest track.
    pub fn at_rest(x: f64, y: f64, theta: f64) -> Self {
        RobotState {
            x,
            y,
            theta,
            h: H_MIN,
            w: W_MIN,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.h, self.w]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn wheel_rect(&self) -> OrientedRect {
        OrientedRect::new(self.position(), WHEELBASE, self.w, self.theta)
    }

    /// The four wheel contact points.
    pub fn wheel_points(&self) -> [[f64; 2]; 4] {
        self.wheel_rect().corners()
    }

    /// Ground projection of the chassis.
    pub fn chassis(&self) -> OrientedRect {
        OrientedRect::new(self.position(), CHASSIS_LENGTH, CHASSIS_WIDTH, self.theta)
    }

    /// Candidate state after applying every channel of `a`. Translation is in
    /// the world frame.
    pub fn apply(&self, a: Action) -> RobotState {
        let s = a.symbols();
        RobotState {
            x: self.x + f64::from(s[0]) * STEP_XY,
            y: self.y + f64::from(s[1]) * STEP_XY,
            theta: if s[2] == 0 {
                self.theta
            } else {
                wrap_angle(self.theta + f64::from(s[2]) * STEP_THETA)
            },
            h: self.h + f64::from(s[3]) * STEP_H,
            w: self.w + f64::from(s[4]) * STEP_W,
        }
    }
}

/// Independent action channels, in network-head order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    X,
    Y,
    Theta,
    Height,
    Width,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::X,
        Channel::Y,
        Channel::Theta,
        Channel::Height,
        Channel::Width,
    ];
}

pub const N_CHANNELS: usize = 5;
pub const N_OPTIONS: usize = 3;

/// Five ternary channels, each in {-1, 0, +1}.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Action([i8; N_CHANNELS]);

impl Action {
    pub const STOP: Action = Action([0; N_CHANNELS]);

    pub fn new(symbols: [i8; N_CHANNELS]) -> Result<Self, SimError> {
        if let Some(&bad) = symbols.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(SimError::BadAction(bad));
        }
        Ok(Action(symbols))
    }

    /// From head option indices: 0 -> -1, 1 -> 0, 2 -> +1.
    pub fn from_options(options: [usize; N_CHANNELS]) -> Self {
        let mut s = [0i8; N_CHANNELS];
        for (dst, &o) in s.iter_mut().zip(options.iter()) {
            debug_assert!(o < N_OPTIONS);
            *dst = o as i8 - 1;
        }
        Action(s)
    }

    pub fn options(&self) -> [usize; N_CHANNELS] {
        let mut o = [0usize; N_CHANNELS];
        for (dst, &s) in o.iter_mut().zip(self.0.iter()) {
            *dst = (s + 1) as usize;
        }
        o
    }

    pub fn symbols(&self) -> [i8; N_CHANNELS] {
        self.0
    }

    pub fn get(&self, c: Channel) -> i8 {
        self.0[c as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleShape {
    /// Low and wide: straddled with a stretched track.
    LowWide,
    /// Tall and narrow: cleared by lifting the body.
    TallNarrow,
    /// Never traversable.
    Blocker,
}

impl ObstacleShape {
    pub const ALL: [ObstacleShape; 3] = [
        ObstacleShape::LowWide,
        ObstacleShape::TallNarrow,
        ObstacleShape::Blocker,
    ];

    pub fn height(self) -> f64 {
        match self {
            ObstacleShape::LowWide => 0.06,
            ObstacleShape::TallNarrow => 0.15,
            ObstacleShape::Blocker => 0.30,
        }
    }

    /// Half edge of the square footprint, centred in its cell.
    pub fn footprint_half(self) -> f64 {
        match self {
            ObstacleShape::LowWide => 0.085,
            ObstacleShape::TallNarrow => 0.05,
            ObstacleShape::Blocker => 0.5 * CELL,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ObstacleShape::LowWide => 0,
            ObstacleShape::TallNarrow => 1,
            ObstacleShape::Blocker => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

/// Obstacle grid cell; `col` indexes x, `row` indexes y, both from the
/// arena's minimum corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: u8,
    pub row: u8,
}

impl Cell {
    pub fn new(col: usize, row: usize) -> Self {
        debug_assert!(col < GRID && row < GRID);
        Cell {
            col: col as u8,
            row: row as u8,
        }
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..GRID).flat_map(|row| (0..GRID).map(move |col| Cell::new(col, row)))
    }

    pub fn center(self) -> [f64; 2] {
        [
            -ARENA_HALF + CELL * (f64::from(self.col) + 0.5),
            -ARENA_HALF + CELL * (f64::from(self.row) + 0.5),
        ]
    }

    pub fn bounds(self) -> Aabb {
        let c = self.center();
        Aabb::centered(c[0], c[1], 0.5 * CELL)
    }

    pub fn index(self) -> usize {
        self.row as usize * GRID + self.col as usize
    }

    /// Every cell whose closed square contains `p` (up to four on corners).
    pub fn containing(p: [f64; 2]) -> Vec<Cell> {
        Cell::all().filter(|c| c.bounds().contains(p)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Obstacle {
    pub cell: Cell,
    pub shape: ObstacleShape,
}

impl Obstacle {
    pub fn footprint(&self) -> Aabb {
        let c = self.cell.center();
        Aabb::centered(c[0], c[1], self.shape.footprint_half())
    }
}

/// One navigation episode's world.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub obstacles: Vec<Obstacle>,
    pub start: RobotState,
    pub target: [f64; 2],
    pub max_steps: u32,
}

impl EnvConfig {
    pub fn empty(start: RobotState, target: [f64; 2]) -> Self {
        EnvConfig {
            obstacles: Vec::new(),
            start,
            target,
            max_steps: MAX_STEPS,
        }
    }

    pub fn distance_to_target(&self, s: &RobotState) -> f64 {
        (s.x - self.target[0]).hypot(s.y - self.target[1])
    }

    pub fn obstacle_at(&self, cell: Cell) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.cell == cell)
    }

    pub fn without_obstacle(&self, index: usize) -> EnvConfig {
        let mut e = self.clone();
        e.obstacles.remove(index);
        e
    }

    /// Cells touched by the target point.
    pub fn target_cells(&self) -> Vec<Cell> {
        Cell::containing(self.target)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = [false; GRID * GRID];
        for o in &self.obstacles {
            if o.cell.col as usize >= GRID || o.cell.row as usize >= GRID {
                return Err(SimError::InvalidEnv(format!("cell {:?} outside grid", o.cell)));
            }
            if std::mem::replace(&mut seen[o.cell.index()], true) {
                return Err(SimError::InvalidEnv(format!("two obstacles in {:?}", o.cell)));
            }
        }
        let blocked = start_footprint_cells(&self.start)
            .into_iter()
            .chain(self.target_cells())
            .find(|c| seen[c.index()]);
        if let Some(c) = blocked {
            return Err(SimError::InvalidEnv(format!(
                "start footprint or target cell {c:?} occupied"
            )));
        }
        let dx = self.target[0] - self.start.x;
        let dy = self.target[1] - self.start.y;
        if dy.abs() > EPS || !(0.5 - EPS..=1.0 + EPS).contains(&dx.abs()) {
            return Err(SimError::InvalidEnv(format!(
                "target offset ({dx}, {dy}) not 0.5..1.0 m along x"
            )));
        }
        if let Some(v) = check_pose_valid(&self.start, self).violation {
            return Err(SimError::InvalidEnv(format!("start pose invalid: {v}")));
        }
        Ok(())
    }
}

/// Cells the robot at `s` can interact with: chassis and wheel rectangle
/// overlap, or a wheel point on the cell boundary.
pub fn start_footprint_cells(s: &RobotState) -> Vec<Cell> {
    let chassis = s.chassis();
    let wheels = OrientedRect::new(s.position(), WHEELBASE, s.w.max(CHASSIS_WIDTH), s.theta);
    let points = s.wheel_points();
    Cell::all()
        .filter(|c| {
            let b = c.bounds();
            chassis.overlaps_aabb(&b)
                || wheels.overlaps_aabb(&b)
                || points.iter().any(|p| b.contains(*p))
        })
        .collect()
}

/// First broken pose rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    NonFinite,
    HeightOutOfRange,
    WidthOutOfRange,
    Coupling,
    WheelOutsideArena { wheel: usize },
    WheelOnObstacle { wheel: usize, obstacle: usize },
    Clearance { obstacle: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "non-finite state"),
            Violation::HeightOutOfRange => write!(f, "body height out of range"),
            Violation::WidthOutOfRange => write!(f, "track width out of range"),
            Violation::Coupling => write!(f, "height/width coupling violated"),
            Violation::WheelOutsideArena { wheel } => write!(f, "wheel {wheel} outside arena"),
            Violation::WheelOnObstacle { wheel, obstacle } => {
                write!(f, "wheel {wheel} on obstacle {obstacle}")
            }
            Violation::Clearance { obstacle } => {
                write!(f, "chassis does not clear obstacle {obstacle}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidityReport {
    pub violation: Option<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks bounds and coupling, then wheel contacts, then chassis clearance.
pub fn check_pose_valid(s: &RobotState, env: &EnvConfig) -> ValidityReport {
    ValidityReport {
        violation: first_violation(s, env),
    }
}

fn first_violation(s: &RobotState, env: &EnvConfig) -> Option<Violation> {
    if !s.is_finite() {
        return Some(Violation::NonFinite);
    }
    if s.h < H_MIN - EPS || s.h > H_MAX + EPS {
        return Some(Violation::HeightOutOfRange);
    }
    if s.w < W_MIN - EPS || s.w > W_MAX + EPS {
        return Some(Violation::WidthOutOfRange);
    }
    if s.h > max_height_for_width(s.w) + EPS {
        return Some(Violation::Coupling);
    }
    let bounds = arena();
    for (wheel, p) in s.wheel_points().into_iter().enumerate() {
        if !bounds.contains(p) {
            return Some(Violation::WheelOutsideArena { wheel });
        }
        if let Some(obstacle) = env.obstacles.iter().position(|o| o.footprint().contains(p)) {
            return Some(Violation::WheelOnObstacle { wheel, obstacle });
        }
    }
    let chassis = s.chassis();
    env.obstacles
        .iter()
        .position(|o| o.shape.height() + EPS >= s.h && chassis.overlaps_aabb(&o.footprint()))
        .map(|obstacle| Violation::Clearance { obstacle })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Terminal {
    Running,
    Success,
    OutOfRange,
    MaxSteps,
}

impl Terminal {
    pub fn is_done(self) -> bool {
        self != Terminal::Running
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: RobotState,
    pub reward: f64,
    pub terminal: Terminal,
    /// The action was rejected and the state reverted.
    pub invalid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub r_step: f64,
    pub r_invalid: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_step: -0.1,
            r_invalid: -0.1,
            gamma: 0.99,
        }
    }
}

/// One transition with the default reward constants.
pub fn step(s: &RobotState, a: Action, env: &EnvConfig, t: u32) -> Result<StepResult, SimError> {
    step_with(&RewardConfig::default(), s, a, env, t)
}

/// `reward = r_step + (d_{t-1} - d_t) + r_invalid`; rejected actions revert
/// all five channels.
pub fn step_with(
    rc: &RewardConfig,
    s: &RobotState,
    a: Action,
    env: &EnvConfig,
    t: u32,
) -> Result<StepResult, SimError> {
    if let Some(v) = first_violation(s, env) {
        return Err(SimError::InvalidInputState(v));
    }
    let candidate = s.apply(a);
    let d_prev = env.distance_to_target(s);
    let (next_state, invalid, reward) = if first_violation(&candidate, env).is_some() {
        (*s, true, rc.r_step + rc.r_invalid)
    } else {
        let d = env.distance_to_target(&candidate);
        (candidate, false, rc.r_step + (d_prev - d))
    };
    let d = env.distance_to_target(&next_state);
    let terminal = if d < SUCCESS_RADIUS {
        Terminal::Success
    } else if d > OUT_OF_RANGE {
        Terminal::OutOfRange
    } else if t + 1 >= env.max_steps {
        Terminal::MaxSteps
    } else {
        Terminal::Running
    };
    Ok(StepResult {
        next_state,
        reward,
        terminal,
        invalid,
    })
}

/// Obstacle count and shape set for fresh environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySpec {
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub shapes: Vec<ObstacleShape>,
    /// Restrict placement to these cells.
    #[serde(default)]
    pub allowed_cells: Option<Vec<Cell>>,
}

impl ComplexitySpec {
    pub fn empty() -> Self {
        ComplexitySpec {
            min_obstacles: 0,
            max_obstacles: 0,
            shapes: ObstacleShape::ALL.to_vec(),
            allowed_cells: None,
        }
    }

    /// Four to eight obstacles of any shape.
    pub fn complex() -> Self {
        ComplexitySpec {
            min_obstacles: 4,
            max_obstacles: 8,
            shapes: ObstacleShape::ALL.to_vec(),
            allowed_cells: None,
        }
    }
}

/// Environments the agent failed on, re-sampled with probability `p_fail`.
#[derive(Clone, Debug, PartialEq)]
pub struct FailurePool {
    entries: VecDeque<EnvConfig>,
    pub capacity: usize,
    pub p_fail: f64,
}

impl Default for FailurePool {
    fn default() -> Self {
        FailurePool::new(512, 0.2)
    }
}

impl FailurePool {
    pub fn new(capacity: usize, p_fail: f64) -> Self {
        FailurePool {
            entries: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
            p_fail,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &EnvConfig> {
        self.entries.iter()
    }

    /// Appends, evicting the oldest entry at capacity. No deduplication.
    pub fn record_failure(&mut self, env: EnvConfig) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(env);
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&EnvConfig> {
        if self.entries.is_empty() || !rng.gen_bool(self.p_fail.clamp(0.0, 1.0)) {
            return None;
        }
        self.entries.get(rng.gen_range(0..self.entries.len()))
    }
}

const SAMPLE_RETRIES: usize = 64;

/// Start heading on the rotation lattice.
pub fn sample_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.gen_range(-36i32..36);
    wrap_angle(f64::from(k) * STEP_THETA)
}

/// Target offset magnitude in `[lo, hi)` along +x or -x.
pub fn sample_target<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> [f64; 2] {
    let d = rng.gen_range(lo..hi);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    [sign * d, 0.0]
}

/// Draws a stored failure with probability `pool.p_fail`, otherwise a fresh
/// environment from `spec`.
pub fn sample_env<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ComplexitySpec,
    pool: &FailurePool,
) -> Result<EnvConfig, SimError> {
    if let Some(env) = pool.draw(rng) {
        return Ok(env.clone());
    }
    for _ in 0..SAMPLE_RETRIES {
        let start = RobotState::at_rest(0.0, 0.0, sample_heading(rng));
        let target = sample_target(rng, 0.5, 1.0);
        let mut env = EnvConfig::empty(start, target);
        let mut excluded = start_footprint_cells(&start);
        excluded.extend(env.target_cells());
        let mut free: Vec<Cell> = match &spec.allowed_cells {
            Some(cells) => cells.clone(),
            None => Cell::all().collect(),
        };
        free.retain(|c| !excluded.contains(c));
        free.sort();
        free.dedup();
        let n = rng.gen_range(spec.min_obstacles..=spec.max_obstacles.max(spec.min_obstacles));
        if n > free.len() || (n > 0 && spec.shapes.is_empty()) {
            continue;
        }
        let (chosen, _) = free.partial_shuffle(rng, n);
        for &cell in chosen.iter() {
            let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
            env.obstacles.push(Obstacle { cell, shape });
        }
        if env.validate().is_ok() {
            return Ok(env);
        }
    }
    Err(SimError::Unsatisfiable {
        attempts: SAMPLE_RETRIES,
    })
}

#[derive(Serialize, Deserialize)]
struct EnvDocument {
    format_version: u32,
    arena_half_extent: f64,
    cell_size: f64,
    max_steps: u32,
    target: [f64; 2],
    start: RobotState,
    #[serde(default)]
    obstacles: Vec<ObstacleEntry>,
}

#[derive(Serialize, Deserialize)]
struct ObstacleEntry {
    col: u8,
    row: u8,
    shape: ObstacleShape,
}

pub const ENV_FORMAT_VERSION: u32 = 1;

impl EnvConfig {
    /// Human-readable TOML document.
    pub fn to_text(&self) -> String {
        let doc = EnvDocument {
            format_version: ENV_FORMAT_VERSION,
            arena_half_extent: ARENA_HALF,
            cell_size: CELL,
            max_steps: self.max_steps,
            target: self.target,
            start: self.start,
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleEntry {
                    col: o.cell.col,
                    row: o.cell.row,
                    shape: o.shape,
                })
                .collect(),
        };
        toml::to_string(&doc).expect("environment document always serialises")
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let doc: EnvDocument =
            toml::from_str(text).map_err(|e| SimError::Document(e.to_string()))?;
        if doc.format_version != ENV_FORMAT_VERSION {
            return Err(SimError::Document(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        if doc.arena_half_extent != ARENA_HALF || doc.cell_size != CELL {
            return Err(SimError::Document(
                "arena geometry differs from this build".into(),
            ));
        }
        let env = EnvConfig {
            obstacles: doc
                .obstacles
                .into_iter()
                .map(|o| Obstacle {
                    cell: Cell {
                        col: o.col,
                        row: o.row,
                    },
                    shape: o.shape,
                })
                .collect(),
            start: doc.start,
            target: doc.target,
            max_steps: doc.max_steps,
        };
        env.validate()?;
        Ok(env)
    }
}

//! The five behaviour environments, their scripted solutions and the
//! sequential training of one secondary policy per behaviour.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domrand::format::{write_batch, BatchHeader, BatchReader};
use crate::domrand::{replay_and_record, without_rejected, BatchEpisode, DomrandError, Provenance};
use crate::geometry::{wrap_angle, GRID, H_MIN, STEP_H, STEP_THETA, STEP_W, STEP_XY, W_MIN};
use crate::nn::{checkpoint, NetError, PolicyNet};
use crate::ppo::{
    metrics_csv, new_optimizer, sample_trajectories, update, IterationMetrics, PpoConfig,
    PpoError, RolloutConfig, RoundRobin, Samples,
};
use crate::sim::{
    check_pose_valid, sample_heading, sample_target, start_footprint_cells, step_with, Action, Cell,
    EnvConfig, Obstacle, ObstacleShape, RewardConfig, RobotState, Terminal,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorId {
    Straight,
    Around,
    LiftOver,
    StraddleOver,
    Squeeze,
}

impl BehaviorId {
    pub const ALL: [BehaviorId; 5] = [
        BehaviorId::Straight,
        BehaviorId::Around,
        BehaviorId::LiftOver,
        BehaviorId::StraddleOver,
        BehaviorId::Squeeze,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorId::Straight => "b1_straight",
            BehaviorId::Around => "b2_around",
            BehaviorId::LiftOver => "b3_lift_over",
            BehaviorId::StraddleOver => "b4_straddle_over",
            BehaviorId::Squeeze => "b5_squeeze",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s || b.name()[..2] == *s)
    }
}

/// Column the obstacle row sits in: the second column short of the target
/// side's wall.
pub fn obstacle_column(target_x: f64) -> usize {
    if target_x > 0.0 {
        5
    } else {
        2
    }
}

/// Clearance height and track width for lifting over a TallNarrow row.
pub const LIFT_POSE: (f64, f64) = (0.17, 0.36);
/// Height, track and lateral lane for straddling a LowWide row.
pub const STRADDLE_POSE: (f64, f64, f64) = (0.07, 0.24, 0.10);
/// Distance from the start at which the obstacle row has been cleared.
const CLEARED_X: f64 = 0.70;

pub fn make_behavior_env<R: Rng + ?Sized>(b: BehaviorId, rng: &mut R) -> EnvConfig {
    let start = RobotState::at_rest(0.0, 0.0, sample_heading(rng));
    let target = match b {
        BehaviorId::Straight => sample_target(rng, 0.5, 1.0),
        _ => sample_target(rng, 0.75, 0.95),
    };
    let mut env = EnvConfig::empty(start, target);
    let col = obstacle_column(target[0]);
    let column = |shape: ObstacleShape, rows: &mut dyn Iterator<Item = usize>| {
        rows.map(|row| Obstacle {
            cell: Cell::new(col, row),
            shape,
        })
        .collect::<Vec<_>>()
    };
    env.obstacles = match b {
        BehaviorId::Straight => Vec::new(),
        BehaviorId::Around => column(ObstacleShape::Blocker, &mut std::iter::once(rng.gen_range(3..=4))),
        BehaviorId::LiftOver => column(ObstacleShape::TallNarrow, &mut (0..GRID)),
        BehaviorId::StraddleOver => column(ObstacleShape::LowWide, &mut (0..GRID)),
        BehaviorId::Squeeze => {
            let gap = rng.gen_range(2..=4);
            column(ObstacleShape::Blocker, &mut (0..GRID).filter(|&r| r != gap && r != gap + 1))
        }
    };
    debug_assert!(env.validate().is_ok());
    env
}

/// Free cells of the obstacle column.
pub fn gap_cells(env: &EnvConfig) -> Vec<Cell> {
    let col = obstacle_column(env.target[0]);
    (0..GRID)
        .map(|r| Cell::new(col, r))
        .filter(|c| env.obstacle_at(*c).is_none())
        .collect()
}

/// 4-connected path over obstacle-free cells (heights ignored) from the
/// start footprint to a target cell, treating `extra` as occupied too.
pub fn free_path_exists(env: &EnvConfig, extra: &[Cell]) -> bool {
    let mut blocked = [false; GRID * GRID];
    for c in env.obstacles.iter().map(|o| o.cell).chain(extra.iter().copied()) {
        blocked[c.index()] = true;
    }
    let targets = env.target_cells();
    let mut seen = [false; GRID * GRID];
    let mut queue: VecDeque<Cell> = start_footprint_cells(&env.start)
        .into_iter()
        .filter(|c| !blocked[c.index()])
        .collect();
    for c in &queue {
        seen[c.index()] = true;
    }
    while let Some(c) = queue.pop_front() {
        if targets.contains(&c) {
            return true;
        }
        let (col, row) = (c.col as i64, c.row as i64);
        for (dc, dr) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nc, nr) = (col + dc, row + dr);
            if !(0..GRID as i64).contains(&nc) || !(0..GRID as i64).contains(&nr) {
                continue;
            }
            let n = Cell::new(nc as usize, nr as usize);
            if !blocked[n.index()] && !seen[n.index()] {
                seen[n.index()] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

/// Whether every obstacle-free route forces the behaviour: no detour around
/// the row for lift-over and straddle-over, and for squeeze none that avoids
/// the gap.
pub fn behavior_is_necessary(b: BehaviorId, env: &EnvConfig) -> bool {
    match b {
        BehaviorId::Straight | BehaviorId::Around => true,
        BehaviorId::LiftOver | BehaviorId::StraddleOver => !free_path_exists(env, &[]),
        BehaviorId::Squeeze => free_path_exists(env, &[]) && !free_path_exists(env, &gap_cells(env)),
    }
}

/// Pose the scripted controller steers every channel toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub h: f64,
    pub w: f64,
}

fn aligned_heading(start: f64, target_x: f64) -> f64 {
    // Beyond 0.95 m the wheelbase would leave the arena on an x heading.
    let options: &[f64] = if target_x.abs() >= 0.95 {
        &[std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2]
    } else {
        &[0.0, std::f64::consts::PI]
    };
    options
        .iter()
        .copied()
        .min_by(|a, b| {
            wrap_angle(a - start)
                .abs()
                .partial_cmp(&wrap_angle(b - start).abs())
                .unwrap()
        })
        .unwrap()
}

pub fn waypoints(b: BehaviorId, env: &EnvConfig) -> Vec<Waypoint> {
    let s = env.start;
    let [tx, ty] = env.target;
    let theta = aligned_heading(s.theta, tx);
    let side = tx.signum();
    let wp = |x: f64, y: f64, h: f64, w: f64| Waypoint { x, y, theta, h, w };
    let via_lane = |lane: f64, h: f64, w: f64| {
        vec![
            wp(s.x, lane, h, w),
            wp(s.x + side * CLEARED_X, lane, h, w),
            wp(tx, ty, h, w),
        ]
    };
    match b {
        BehaviorId::Straight => vec![wp(s.x, s.y, H_MIN, W_MIN), wp(tx, ty, H_MIN, W_MIN)],
        BehaviorId::Around => {
            let col = obstacle_column(tx);
            let blocked_above = env.obstacle_at(Cell::new(col, 4)).is_some();
            via_lane(if blocked_above { -0.15 } else { 0.15 }, H_MIN, W_MIN)
        }
        BehaviorId::LiftOver => {
            let (h, w) = LIFT_POSE;
            vec![wp(s.x, s.y, h, w), wp(tx, ty, h, w)]
        }
        BehaviorId::StraddleOver => {
            let (h, w, lane) = STRADDLE_POSE;
            via_lane(lane, h, w)
        }
        BehaviorId::Squeeze => {
            let gap = gap_cells(env);
            let lane = gap.iter().map(|c| c.center()[1]).sum::<f64>() / gap.len().max(1) as f64;
            via_lane(lane, H_MIN, W_MIN)
        }
    }
}

fn toward(cur: f64, goal: f64, step: f64) -> i8 {
    let d = goal - cur;
    if d > 0.5 * step {
        1
    } else if d < -0.5 * step {
        -1
    } else {
        0
    }
}

fn reached(s: &RobotState, g: &Waypoint) -> bool {
    (s.x - g.x).abs() <= 0.5 * STEP_XY
        && (s.y - g.y).abs() <= 0.5 * STEP_XY
        && wrap_angle(s.theta - g.theta).abs() <= 0.5 * STEP_THETA
        && (s.h - g.h).abs() <= 0.5 * STEP_H
        && (s.w - g.w).abs() <= 0.5 * STEP_W
}

/// Scripted solution: steer all channels toward successive waypoints; a
/// step that would be rejected is retried without translation. `None` if
/// the target is not reached within the step limit.
pub fn scripted_actions(b: BehaviorId, env: &EnvConfig) -> Option<Vec<Action>> {
    let plan = waypoints(b, env);
    let rc = RewardConfig::default();
    let mut s = env.start;
    let mut out = Vec::new();
    let mut next = 0;
    for t in 0..env.max_steps {
        while next + 1 < plan.len() && reached(&s, &plan[next]) {
            next += 1;
        }
        let g = &plan[next];
        let mut sym = [
            toward(s.x, g.x, STEP_XY),
            toward(s.y, g.y, STEP_XY),
            toward(0.0, wrap_angle(g.theta - s.theta), STEP_THETA),
            toward(s.h, g.h, STEP_H),
            toward(s.w, g.w, STEP_W),
        ];
        // Fall back to single-axis translation, then to none, near walls and rows.
        let (dx, dy) = (sym[0], sym[1]);
        for (fx, fy) in [(dx, dy), (dx, 0), (0, dy), (0, 0)] {
            sym[0] = fx;
            sym[1] = fy;
            if check_pose_valid(&s.apply(Action::new(sym).ok()?), env).is_valid() {
                break;
            }
        }
        let a = Action::new(sym).ok()?;
        let r = step_with(&rc, &s, a, env, t).ok()?;
        out.push(a);
        s = r.next_state;
        match r.terminal {
            Terminal::Success => return Some(out),
            Terminal::Running => {}
            _ => return None,
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Fixed training environments per behaviour.
    pub n_envs: usize,
    pub steps_per_iter: usize,
    pub budget_straight: u64,
    pub budget_other: u64,
    /// Successful trajectories kept per environment after training.
    pub keep_per_env: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            n_envs: 20,
            steps_per_iter: 3000,
            budget_straight: 200_000,
            budget_other: 500_000,
            keep_per_env: 3,
        }
    }
}

impl CurriculumConfig {
    pub fn iterations(&self, b: BehaviorId) -> usize {
        let budget = match b {
            BehaviorId::Straight => self.budget_straight,
            _ => self.budget_other,
        };
        (budget / self.steps_per_iter.max(1) as u64) as usize
    }
}

#[derive(Clone, Debug)]
pub struct SecondaryResult {
    pub behavior: BehaviorId,
    pub net: PolicyNet<f32>,
    pub envs: Vec<EnvConfig>,
    /// Latest successful trajectories, rejected steps removed.
    pub trajectories: Vec<BatchEpisode>,
    pub metrics: Vec<IterationMetrics>,
}

pub type Progress<'a> = &'a mut dyn FnMut(BehaviorId, &IterationMetrics);

#[allow(clippy::too_many_arguments)]
pub fn train_secondary(
    b: BehaviorId,
    init: PolicyNet<f32>,
    envs: Vec<EnvConfig>,
    iters: usize,
    cfg: &CurriculumConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    rng: &mut ChaCha8Rng,
    progress: Progress<'_>,
) -> Result<SecondaryResult, PpoError> {
    let rc = RewardConfig {
        gamma: hp.gamma,
        ..RewardConfig::default()
    };
    let mut net = init;
    let mut opt = new_optimizer(&net, hp);
    let mut source = RoundRobin::new(envs.clone());
    let mut metrics = Vec::with_capacity(iters);
    let mut steps = 0u64;
    let mut last = Vec::new();
    for it in 0..iters {
        let episodes =
            sample_trajectories(&net, &mut source, cfg.steps_per_iter, rollout, &rc, rng)?;
        let mut data = Samples::new(net.arch().input, net.arch().proprio, net.arch().channels);
        for e in &episodes {
            e.push_samples(&mut data, hp.gamma);
        }
        data.refresh_advantages()?;
        let stats = update(&mut net, &mut opt, &data, hp, rng)?;
        steps += data.len() as u64;
        let m = IterationMetrics::from_episodes(it, steps, &episodes, stats.terms);
        progress(b, &m);
        metrics.push(m);
        last = episodes;
    }
    let mut per_env: BTreeMap<usize, Vec<BatchEpisode>> = BTreeMap::new();
    for e in last.iter().filter(|e| e.is_success()) {
        let kept = per_env.entry(e.env_id).or_default();
        let actions = without_rejected(&e.actions, &e.invalid);
        let prov = Provenance {
            behavior: b,
            env_id: e.env_id as u32,
            traj_id: 0,
            rand_id: 0,
        };
        if let Some(ep) = replay_and_record(&e.env, &actions, prov, &rc) {
            kept.push(ep);
        }
    }
    let mut trajectories = Vec::new();
    for (_, mut eps) in per_env {
        let skip = eps.len().saturating_sub(cfg.keep_per_env);
        for (k, mut ep) in eps.drain(skip..).enumerate() {
            ep.provenance.traj_id = k as u32;
            trajectories.push(ep);
        }
    }
    Ok(SecondaryResult {
        behavior: b,
        net,
        envs,
        trajectories,
        metrics,
    })
}

/// Training environments of behaviour `b`, drawn from `rng`.
pub fn behavior_envs<R: Rng + ?Sized>(b: BehaviorId, n: usize, rng: &mut R) -> Vec<EnvConfig> {
    (0..n).map(|_| make_behavior_env(b, rng)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CurriculumError {
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Batch(#[from] DomrandError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{behavior} needs the trained b1_straight policy at {path}; train it first")]
    MissingStraight { behavior: &'static str, path: String },
}

pub fn behavior_dir(root: &Path, b: BehaviorId) -> PathBuf {
    root.join(b.name())
}

pub const POLICY_FILE: &str = "policy.ckpt";
pub const TRAJECTORY_FILE: &str = "trajectories.wlb";
pub const METRICS_FILE: &str = "metrics.csv";

/// Writes checkpoint, trajectories and metrics under `root/<behaviour>/`.
pub fn save_secondary(
    root: &Path,
    r: &SecondaryResult,
    gamma: f64,
    keep_per_env: usize,
) -> Result<(), CurriculumError> {
    let dir = behavior_dir(root, r.behavior);
    fs::create_dir_all(&dir).map_err(|e| CurriculumError::Io(dir.display().to_string(), e))?;
    checkpoint::save(&r.net, &dir.join(POLICY_FILE))?;
    let header = BatchHeader::new(gamma, r.envs.len() as u32, keep_per_env as u32, 0);
    write_batch(&dir.join(TRAJECTORY_FILE), &header, &r.trajectories)?;
    let csv = dir.join(METRICS_FILE);
    fs::write(&csv, metrics_csv(&r.metrics))
        .map_err(|e| CurriculumError::Io(csv.display().to_string(), e))?;
    Ok(())
}

pub fn load_secondary_net(root: &Path, b: BehaviorId) -> Result<PolicyNet<f32>, CurriculumError> {
    Ok(checkpoint::load(&behavior_dir(root, b).join(POLICY_FILE))?)
}

pub fn load_trajectories(root: &Path, b: BehaviorId) -> Result<Vec<BatchEpisode>, CurriculumError> {
    let reader = BatchReader::open(&behavior_dir(root, b).join(TRAJECTORY_FILE))?;
    Ok(reader.read_all()?)
}

/// Straight first from `init`, the others from the trained straight policy.
/// Each behaviour draws environments and samples from its own stream, so a
/// single behaviour can be retrained in isolation.
pub fn train_all_secondaries(
    init: PolicyNet<f32>,
    cfg: &CurriculumConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    seed: u64,
    progress: Progress<'_>,
) -> Result<BTreeMap<BehaviorId, SecondaryResult>, PpoError> {
    let mut out = BTreeMap::new();
    let mut straight: Option<PolicyNet<f32>> = None;
    for b in BehaviorId::ALL {
        let start = match &straight {
            Some(net) => net.clone(),
            None => init.clone(),
        };
        let r = train_behavior(b, start, cfg, hp, rollout, seed, progress)?;
        if b == BehaviorId::Straight {
            straight = Some(r.net.clone());
        }
        out.insert(b, r);
    }
    Ok(out)
}

fn behavior_rng(b: BehaviorId, seed: u64) -> ChaCha8Rng {
    crate::seed::stream_rng(seed, crate::seed::STREAM_BEHAVIOR_BASE + b.index() as u64)
}

/// The environments `train_behavior` trains `b` on for this seed.
pub fn training_envs(b: BehaviorId, cfg: &CurriculumConfig, seed: u64) -> Vec<EnvConfig> {
    behavior_envs(b, cfg.n_envs, &mut behavior_rng(b, seed))
}

/// Trains one behaviour from `init` with its seed-derived streams.
pub fn train_behavior(
    b: BehaviorId,
    init: PolicyNet<f32>,
    cfg: &CurriculumConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    seed: u64,
    progress: Progress<'_>,
) -> Result<SecondaryResult, PpoError> {
    let mut rng = behavior_rng(b, seed);
    let envs = behavior_envs(b, cfg.n_envs, &mut rng);
    train_secondary(b, init, envs, cfg.iterations(b), cfg, hp, rollout, &mut rng, progress)
}

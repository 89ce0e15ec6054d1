//! Essential-area masks, obstacle randomisation outside them, action replay
//! and the on-disk trajectory batch.

pub mod format;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::BehaviorId;
use crate::geometry::{OrientedRect, GRID, WHEELBASE};
use crate::heightmap::{observe, MAP_SIZE, PROPRIO_LEN};
use crate::nn::ObsBatch;
use crate::ppo::{discounted_returns, Samples};
use crate::sim::{
    step_with, Action, Cell, ComplexitySpec, EnvConfig, Obstacle, ObstacleShape, RewardConfig,
    RobotState, SimError, Terminal,
};

pub use format::{BatchHeader, BatchReader, BatchWriter};

#[derive(Debug, thiserror::Error)]
pub enum DomrandError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("batch format: {0}")]
    Format(String),
    #[error("replay diverged: step {step} was rejected")]
    ReplayDivergence { step: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Where a stored episode came from. `rand_id == 0` marks the unmodified
/// source environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub behavior: BehaviorId,
    pub env_id: u32,
    pub traj_id: u32,
    pub rand_id: u32,
}

/// A successful episode as `(observation, action, return)` tuples.
/// Observations are raw: heights in metres, proprioception unscaled.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEpisode {
    pub provenance: Provenance,
    pub env: EnvConfig,
    pub maps: Vec<f32>,
    pub proprio: Vec<[f32; PROPRIO_LEN]>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl BatchEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn map(&self, t: usize) -> &[f32] {
        &self.maps[t * MAP_SIZE * MAP_SIZE..(t + 1) * MAP_SIZE * MAP_SIZE]
    }

    /// Encoded observations of every step.
    pub fn obs_batch(&self) -> ObsBatch<f32> {
        let mut b = ObsBatch::with_capacity(MAP_SIZE, PROPRIO_LEN, self.len());
        for t in 0..self.len() {
            b.push_unencoded(self.map(t), &self.proprio[t]);
        }
        b
    }

    /// Appends the tuples with zeroed value and log-probability columns.
    pub fn push_samples(&self, out: &mut Samples<f32>) {
        for t in 0..self.len() {
            out.obs.push_unencoded(self.map(t), &self.proprio[t]);
            out.choices
                .extend(self.actions[t].options().iter().map(|&o| o as u8));
        }
        out.returns.extend_from_slice(&self.returns);
        let zeros = std::iter::repeat_n(0.0, self.len());
        out.values_old.extend(zeros.clone());
        out.log_prob_old.extend(zeros.clone());
        out.advantages.extend(zeros);
    }

    /// Robot positions along the episode, start included.
    pub fn positions(&self) -> Result<Vec<[f64; 2]>, DomrandError> {
        Ok(replay_states(&self.env, &self.actions)?
            .iter()
            .map(RobotState::position)
            .collect())
    }
}

/// Boolean grid over the arena cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EssentialMask {
    cells: [bool; GRID * GRID],
}

impl Default for EssentialMask {
    fn default() -> Self {
        EssentialMask {
            cells: [false; GRID * GRID],
        }
    }
}

impl EssentialMask {
    pub fn get(&self, c: Cell) -> bool {
        self.cells[c.index()]
    }

    pub fn set(&mut self, c: Cell) {
        self.cells[c.index()] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        Cell::all().filter(|c| self.get(*c))
    }

    pub fn is_superset_of(&self, other: &EssentialMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(a, b)| *a || !*b)
    }

    /// Grows the mask by one cell in all eight directions.
    pub fn dilated(&self) -> EssentialMask {
        let mut out = *self;
        for c in self.cells() {
            let (col, row) = (c.col as i64, c.row as i64);
            for dc in -1..=1 {
                for dr in -1..=1 {
                    let (nc, nr) = (col + dc, row + dr);
                    if (0..GRID as i64).contains(&nc) && (0..GRID as i64).contains(&nr) {
                        out.set(Cell::new(nc as usize, nr as usize));
                    }
                }
            }
        }
        out
    }
}

/// Cells the robot at `s` can touch: chassis or wheel-rectangle overlap, or
/// a wheel point on the cell's closed boundary.
pub fn touched_cells(s: &RobotState) -> impl Iterator<Item = Cell> {
    let chassis = s.chassis();
    let wheels = OrientedRect::new(s.position(), WHEELBASE, s.w, s.theta);
    let points = s.wheel_points();
    Cell::all().filter(move |c| {
        let b = c.bounds();
        chassis.overlaps_aabb(&b) || wheels.overlaps_aabb(&b) || points.iter().any(|p| b.contains(*p))
    })
}

/// States visited when executing `actions` from the start pose. Any
/// rejected step is a divergence.
pub fn replay_states(env: &EnvConfig, actions: &[Action]) -> Result<Vec<RobotState>, DomrandError> {
    let rc = RewardConfig::default();
    let mut s = env.start;
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(s);
    for (t, &a) in actions.iter().enumerate() {
        let r = step_with(&rc, &s, a, env, t as u32)?;
        if r.invalid {
            return Err(DomrandError::ReplayDivergence { step: t });
        }
        s = r.next_state;
        out.push(s);
    }
    Ok(out)
}

/// Cells swept by every visited state, plus the target cells.
pub fn swept_mask(env: &EnvConfig, actions: &[Action]) -> Result<EssentialMask, DomrandError> {
    let mut m = EssentialMask::default();
    for s in replay_states(env, actions)? {
        for c in touched_cells(&s) {
            m.set(c);
        }
    }
    for c in env.target_cells() {
        m.set(c);
    }
    Ok(m)
}

/// The swept cells dilated by one cell, plus the target cells.
pub fn essential_mask(env: &EnvConfig, actions: &[Action]) -> Result<EssentialMask, DomrandError> {
    let mut m = swept_mask(env, actions)?.dilated();
    for c in env.target_cells() {
        m.set(c);
    }
    Ok(m)
}

/// Keeps the original obstacles and drops new ones, count and shapes drawn
/// from `spec`, on free cells outside `mask`. Places fewer when fewer cells
/// are free; returns the number placed.
pub fn randomize_env<R: Rng + ?Sized>(
    env: &EnvConfig,
    mask: &EssentialMask,
    rng: &mut R,
    spec: &ComplexitySpec,
) -> (EnvConfig, usize) {
    let want = rng.gen_range(spec.min_obstacles..=spec.max_obstacles.max(spec.min_obstacles));
    let mut free: Vec<Cell> = Cell::all()
        .filter(|c| !mask.get(*c) && env.obstacle_at(*c).is_none())
        .collect();
    if let Some(allowed) = &spec.allowed_cells {
        free.retain(|c| allowed.contains(c));
    }
    let n = if spec.shapes.is_empty() { 0 } else { want.min(free.len()) };
    let mut out = env.clone();
    let (chosen, _) = free.partial_shuffle(rng, n);
    for &cell in chosen.iter() {
        let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        out.obstacles.push(Obstacle { cell, shape });
    }
    (out, n)
}

/// Re-executes `actions` in `env`, rendering fresh observations. `None` if
/// any step is rejected or the episode does not end in success on the last
/// action.
pub fn replay_and_record(
    env: &EnvConfig,
    actions: &[Action],
    provenance: Provenance,
    rc: &RewardConfig,
) -> Option<BatchEpisode> {
    let n = actions.len();
    let mut ep = BatchEpisode {
        provenance,
        env: env.clone(),
        maps: Vec::with_capacity(n * MAP_SIZE * MAP_SIZE),
        proprio: Vec::with_capacity(n),
        actions: actions.to_vec(),
        rewards: Vec::with_capacity(n),
        returns: Vec::new(),
    };
    let mut s = env.start;
    for (t, &a) in actions.iter().enumerate() {
        let o = observe(env, &s);
        let r = step_with(rc, &s, a, env, t as u32).ok()?;
        if r.invalid {
            return None;
        }
        ep.maps.extend_from_slice(o.heightmap.as_slice());
        ep.proprio.push(o.proprio);
        ep.rewards.push(r.reward);
        s = r.next_state;
        let last = t + 1 == n;
        match r.terminal {
            Terminal::Success if last => {}
            Terminal::Running if !last => {}
            _ => return None,
        }
    }
    if n == 0 {
        return None;
    }
    ep.returns = discounted_returns(&ep.rewards, rc.gamma, 0.0);
    Some(ep)
}

/// Actions of a sampled trajectory with rejected steps removed. A rejected
/// step leaves the state unchanged, so the remaining actions visit the same
/// states in the same order.
pub fn without_rejected(actions: &[Action], invalid: &[bool]) -> Vec<Action> {
    actions
        .iter()
        .zip(invalid)
        .filter(|(_, &bad)| !bad)
        .map(|(a, _)| *a)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomrandConfig {
    /// Randomisations per stored trajectory.
    pub n_rand: usize,
    /// Obstacles added per randomisation.
    pub spec: ComplexitySpec,
}

impl Default for DomrandConfig {
    fn default() -> Self {
        DomrandConfig {
            n_rand: 50,
            spec: ComplexitySpec {
                min_obstacles: 2,
                max_obstacles: 6,
                shapes: ObstacleShape::ALL.to_vec(),
                allowed_cells: None,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub sources: usize,
    pub kept: usize,
    pub discarded: usize,
    pub obstacles_added: usize,
}

/// For each stored trajectory, `cfg.n_rand` mask-respecting randomisations,
/// replayed and handed to `sink` when they succeed. Each source trajectory
/// draws from its own RNG seeded from `rng`.
pub fn build_batch<R: Rng + ?Sized>(
    stored: &[BatchEpisode],
    cfg: &DomrandConfig,
    rc: &RewardConfig,
    rng: &mut R,
    sink: &mut dyn FnMut(BatchEpisode) -> Result<(), DomrandError>,
) -> Result<BuildStats, DomrandError> {
    let mut stats = BuildStats {
        sources: stored.len(),
        ..BuildStats::default()
    };
    for src in stored {
        let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
        let mask = essential_mask(&src.env, &src.actions)?;
        for r in 0..cfg.n_rand {
            let (env, added) = randomize_env(&src.env, &mask, &mut local, &cfg.spec);
            stats.obstacles_added += added;
            let prov = Provenance {
                rand_id: r as u32 + 1,
                ..src.provenance
            };
            match replay_and_record(&env, &src.actions, prov, rc) {
                Some(ep) => {
                    stats.kept += 1;
                    sink(ep)?;
                }
                None => stats.discarded += 1,
            }
        }
    }
    Ok(stats)
}

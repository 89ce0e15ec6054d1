//! Greedy held-out evaluation, discrete Fréchet trajectory distance and the
//! leave-one-obstacle-out relevance ablation.

use std::fmt::Write as _;

use crate::geometry::{Aabb, ARENA_HALF, WALL_HEIGHT};
use crate::heightmap::{observe, HALF_WINDOW};
use crate::nn::{dist, ObsBatch, PolicyNet};
use crate::ppo::PpoError;
use crate::seed::{stream_rng, STREAM_SUITE};
use crate::sim::{
    sample_env, step_with, Action, ComplexitySpec, EnvConfig, FailurePool, RewardConfig,
    RobotState, SimError, Terminal, N_CHANNELS,
};

/// Chooses the next action of many episodes at once.
pub trait Controller {
    /// `queries[k] = (episode, env, state, t)`.
    fn act(&mut self, queries: &[(usize, &EnvConfig, RobotState, u32)]) -> Result<Vec<Action>, PpoError>;
}

/// Per-channel argmax of the policy heads.
pub struct Greedy<'a>(pub &'a PolicyNet<f32>);

impl Controller for Greedy<'_> {
    fn act(&mut self, queries: &[(usize, &EnvConfig, RobotState, u32)]) -> Result<Vec<Action>, PpoError> {
        let net = self.0;
        let mut batch = ObsBatch::<f32>::with_capacity(net.arch().input, net.arch().proprio, queries.len());
        for (_, env, s, _) in queries {
            batch.push_observation(&observe(env, s));
        }
        let fwd = net.forward(&batch)?;
        let lo = net.arch().logits_len();
        Ok((0..queries.len())
            .map(|i| {
                let g = dist::greedy(&fwd.logits[i * lo..(i + 1) * lo], net.arch().options);
                let mut o = [1usize; N_CHANNELS];
                o.copy_from_slice(&g);
                Action::from_options(o)
            })
            .collect())
    }
}

/// Replays fixed action lists, one per episode, then stops.
pub struct Scripted(pub Vec<Vec<Action>>);

impl Controller for Scripted {
    fn act(&mut self, queries: &[(usize, &EnvConfig, RobotState, u32)]) -> Result<Vec<Action>, PpoError> {
        Ok(queries
            .iter()
            .map(|&(k, _, _, t)| self.0[k].get(t as usize).copied().unwrap_or(Action::STOP))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub terminal: Terminal,
    pub steps: usize,
    pub invalid_steps: usize,
    pub total_reward: f64,
    /// Robot centre before the first and after every step.
    pub path: Vec<[f64; 2]>,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.terminal == Terminal::Success
    }

    pub fn collision_free(&self) -> bool {
        self.success() && self.invalid_steps == 0
    }
}

/// Runs every environment to termination, all episodes advanced together.
pub fn rollouts(ctrl: &mut dyn Controller, envs: &[EnvConfig]) -> Result<Vec<EpisodeRecord>, PpoError> {
    let rc = RewardConfig::default();
    let mut states: Vec<RobotState> = envs.iter().map(|e| e.start).collect();
    let mut recs: Vec<EpisodeRecord> = envs
        .iter()
        .map(|e| EpisodeRecord {
            terminal: Terminal::Running,
            steps: 0,
            invalid_steps: 0,
            total_reward: 0.0,
            path: vec![e.start.position()],
        })
        .collect();
    loop {
        let live: Vec<usize> = (0..envs.len()).filter(|&k| recs[k].terminal == Terminal::Running).collect();
        if live.is_empty() {
            break;
        }
        let queries: Vec<_> = live.iter().map(|&k| (k, &envs[k], states[k], recs[k].steps as u32)).collect();
        let actions = ctrl.act(&queries)?;
        for (&k, a) in live.iter().zip(actions) {
            let r = step_with(&rc, &states[k], a, &envs[k], recs[k].steps as u32)?;
            let rec = &mut recs[k];
            rec.steps += 1;
            rec.invalid_steps += usize::from(r.invalid);
            rec.total_reward += r.reward;
            rec.path.push(r.next_state.position());
            rec.terminal = r.terminal;
            states[k] = r.next_state;
        }
    }
    Ok(recs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub collision_free_success_rate: f64,
    /// Over successful episodes; NaN without any.
    pub mean_steps: f64,
    pub mean_return: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn from_records(episodes: Vec<EpisodeRecord>) -> Self {
        let n = episodes.len().max(1) as f64;
        let succ: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.success()).collect();
        EvalReport {
            success_rate: succ.len() as f64 / n,
            collision_free_success_rate: episodes.iter().filter(|e| e.collision_free()).count() as f64 / n,
            mean_steps: if succ.is_empty() {
                f64::NAN
            } else {
                succ.iter().map(|e| e.steps as f64).sum::<f64>() / succ.len() as f64
            },
            mean_return: episodes.iter().map(|e| e.total_reward).sum::<f64>() / n,
            episodes,
        }
    }

    /// One row per episode.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("env,terminal,success,collision_free,steps,invalid_steps,return\n");
        for (k, e) in self.episodes.iter().enumerate() {
            writeln!(
                s,
                "{k},{:?},{},{},{},{},{:.6}",
                e.terminal,
                u8::from(e.success()),
                u8::from(e.collision_free()),
                e.steps,
                e.invalid_steps,
                e.total_reward
            )
            .unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "episodes = {}\nsuccess_rate = {:.4}\ncollision_free_success_rate = {:.4}\nmean_steps = {:.3}\nmean_return = {:.4}\n",
            self.episodes.len(),
            self.success_rate,
            self.collision_free_success_rate,
            self.mean_steps,
            self.mean_return
        )
    }
}

pub fn evaluate(ctrl: &mut dyn Controller, suite: &[EnvConfig]) -> Result<EvalReport, PpoError> {
    if suite.is_empty() {
        return Err(PpoError::Empty);
    }
    Ok(EvalReport::from_records(rollouts(ctrl, suite)?))
}

pub fn evaluate_net(net: &PolicyNet<f32>, suite: &[EnvConfig]) -> Result<EvalReport, PpoError> {
    evaluate(&mut Greedy(net), suite)
}

pub const SUITE_SIZE: usize = 200;

/// The held-out complex suite: a pure function of `seed`.
pub fn frozen_suite(seed: u64, n: usize) -> Result<Vec<EnvConfig>, SimError> {
    let mut rng = stream_rng(seed, STREAM_SUITE);
    let pool = FailurePool::new(0, 0.0);
    (0..n).map(|_| sample_env(&mut rng, &ComplexitySpec::complex(), &pool)).collect()
}

/// Discrete Fréchet distance between two polylines' vertex sequences.
pub fn trajectory_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty trajectory");
    let d = |i: usize, j: usize| (a[i][0] - b[j][0]).hypot(a[i][1] - b[j][1]);
    let mut prev = vec![0.0f64; b.len()];
    let mut cur = vec![0.0; b.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = d(i, j).max(best);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len() - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleRelevance {
    /// Index into the environment's obstacle list.
    pub obstacle: usize,
    /// Fréchet distance between the baseline and the ablated trajectory.
    pub distance: f64,
    /// 0 for the most relevant obstacle.
    pub rank: usize,
    pub path: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceReport {
    pub baseline: Vec<[f64; 2]>,
    /// In obstacle order.
    pub obstacles: Vec<ObstacleRelevance>,
}

impl RelevanceReport {
    /// Index of the highest-distance obstacle; ties go to the lowest index.
    pub fn most_relevant(&self) -> Option<usize> {
        self.obstacles.iter().find(|o| o.rank == 0).map(|o| o.obstacle)
    }

    /// Distances min-max scaled to `[0, 1]`; all zeros when they coincide.
    pub fn min_max_normalized(&self) -> Vec<f64> {
        let (lo, hi) = self.obstacles.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), o| {
            (l.min(o.distance), h.max(o.distance))
        });
        self.obstacles
            .iter()
            .map(|o| if hi > lo { (o.distance - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn to_csv(&self, env: &EnvConfig) -> String {
        let mut s = String::from("obstacle,col,row,shape,distance,rank,min_max\n");
        for (o, n) in self.obstacles.iter().zip(self.min_max_normalized()) {
            let ob = &env.obstacles[o.obstacle];
            writeln!(
                s,
                "{},{},{},{:?},{:.6},{},{:.6}",
                o.obstacle, ob.cell.col, ob.cell.row, ob.shape, o.distance, o.rank, n
            )
            .unwrap();
        }
        s
    }
}

/// Greedy rollout on `env` and on `env` minus each obstacle in turn.
pub fn obstacle_relevance(net: &PolicyNet<f32>, env: &EnvConfig) -> Result<RelevanceReport, PpoError> {
    let mut envs = vec![env.clone()];
    envs.extend((0..env.obstacles.len()).map(|i| env.without_obstacle(i)));
    let mut recs = rollouts(&mut Greedy(net), &envs)?.into_iter();
    let baseline = recs.next().expect("baseline rollout").path;
    let mut obstacles: Vec<ObstacleRelevance> = recs
        .enumerate()
        .map(|(i, r)| ObstacleRelevance {
            obstacle: i,
            distance: trajectory_distance(&baseline, &r.path),
            rank: 0,
            path: r.path,
        })
        .collect();
    let mut order: Vec<usize> = (0..obstacles.len()).collect();
    order.sort_by(|&a, &b| obstacles[b].distance.total_cmp(&obstacles[a].distance).then(a.cmp(&b)));
    for (rank, i) in order.into_iter().enumerate() {
        obstacles[i].rank = rank;
    }
    Ok(RelevanceReport { baseline, obstacles })
}

/// Whether the footprint enters the height-map window at any path vertex.
pub fn seen_along(path: &[[f64; 2]], footprint: &Aabb) -> bool {
    path.iter()
        .any(|p| Aabb::centered(p[0], p[1], HALF_WINDOW).overlaps(footprint))
}

/// Euclidean distance from the footprint to the nearest path vertex.
pub fn distance_to_path(path: &[[f64; 2]], footprint: &Aabb) -> f64 {
    path.iter()
        .map(|p| {
            let dx = (footprint.min[0] - p[0]).max(p[0] - footprint.max[0]).max(0.0);
            let dy = (footprint.min[1] - p[1]).max(p[1] - footprint.max[1]).max(0.0);
            dx.hypot(dy)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Pixels per metre of the top-down renders.
pub const RENDER_SCALE: f64 = 200.0;
/// Wall border drawn around the arena, in pixels.
pub const RENDER_MARGIN: usize = 10;

const GROUND: [u8; 3] = [235, 235, 235];
const WALL: [u8; 3] = [70, 70, 70];

/// Top-down RGB raster of the arena.
struct Canvas {
    side: usize,
    px: Vec<[u8; 3]>,
}

impl Canvas {
    fn new() -> Self {
        let inner = (2.0 * ARENA_HALF * RENDER_SCALE).round() as usize;
        let side = inner + 2 * RENDER_MARGIN;
        let mut px = vec![WALL; side * side];
        for r in RENDER_MARGIN..RENDER_MARGIN + inner {
            for c in RENDER_MARGIN..RENDER_MARGIN + inner {
                px[r * side + c] = GROUND;
            }
        }
        Canvas { side, px }
    }

    fn to_px(&self, p: [f64; 2]) -> (usize, usize) {
        let m = RENDER_MARGIN as f64;
        let c = ((p[0] + ARENA_HALF) * RENDER_SCALE + m).floor() as i64;
        let r = ((ARENA_HALF - p[1]) * RENDER_SCALE + m).floor() as i64;
        let hi = self.side as i64 - 1;
        (c.clamp(0, hi) as usize, r.clamp(0, hi) as usize)
    }

    fn fill(&mut self, b: &Aabb, color: [u8; 3]) {
        let (c0, r1) = self.to_px(b.min);
        let (c1, r0) = self.to_px(b.max);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let edge = r == r0 || r == r1 || c == c0 || c == c1;
                self.px[r * self.side + c] = if edge { [60, 60, 60] } else { color };
            }
        }
    }

    fn line(&mut self, path: &[[f64; 2]], color: [u8; 3]) {
        for w in path.windows(2) {
            let n = ((w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) * RENDER_SCALE).ceil().max(1.0) as usize;
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let (c, r) = self.to_px([w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]);
                self.px[r * self.side + c] = color;
            }
        }
    }

    fn marker(&mut self, p: [f64; 2], color: [u8; 3]) {
        let (pc, pr) = self.to_px(p);
        for r in pr.saturating_sub(3)..=(pr + 3).min(self.side - 1) {
            for c in pc.saturating_sub(3)..=(pc + 3).min(self.side - 1) {
                self.px[r * self.side + c] = color;
            }
        }
    }

    fn ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{0} {0}\n255\n", self.side).into_bytes();
        for p in &self.px {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Binary pixmap of the scene: obstacles darker with height, the start
/// green, the target blue and `path`, if any, black.
pub fn render_scene(env: &EnvConfig, path: Option<&[[f64; 2]]>) -> Vec<u8> {
    let mut cv = Canvas::new();
    for o in &env.obstacles {
        let g = (235.0 - 175.0 * o.shape.height() / WALL_HEIGHT).round() as u8;
        cv.fill(&o.footprint(), [g, g, g]);
    }
    if let Some(p) = path {
        cv.line(p, [0, 0, 0]);
    }
    cv.marker(env.start.position(), [0, 160, 0]);
    cv.marker(env.target, [0, 0, 255]);
    cv.ppm()
}

/// Binary pixmap of a relevance report: obstacles white to red by distance
/// over the largest distance, baseline path black, ablated paths grey,
/// target blue.
pub fn render_relevance(report: &RelevanceReport, env: &EnvConfig) -> Vec<u8> {
    let mut cv = Canvas::new();
    let max = report.obstacles.iter().map(|o| o.distance).fold(0.0, f64::max);
    for o in &report.obstacles {
        let level = if max > 0.0 { o.distance / max } else { 0.0 };
        let fade = (255.0 * (1.0 - level)).round() as u8;
        cv.fill(&env.obstacles[o.obstacle].footprint(), [255, fade, fade]);
    }
    for o in &report.obstacles {
        cv.line(&o.path, [150, 150, 150]);
    }
    cv.line(&report.baseline, [0, 0, 0]);
    cv.marker(env.target, [0, 0, 255]);
    cv.ppm()
}

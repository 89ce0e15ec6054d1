//! Commands behind the `wlnav` binary. Every command takes a parsed
//! [`RunConfig`] and writes its artifacts under `out_dir`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use wlnav::curriculum::{
    behavior_dir, behavior_envs, load_trajectories, save_secondary, train_behavior, training_envs, BehaviorId,
    CurriculumConfig, CurriculumError, POLICY_FILE,
};
use wlnav::domrand::format::{BatchHeader, BatchReader, BatchWriter};
use wlnav::domrand::{build_batch, BuildStats, DomrandConfig};
use wlnav::evaluation::{
    evaluate_net, frozen_suite, obstacle_relevance, render_relevance, render_scene, rollouts,
    EvalReport, Greedy, RelevanceReport,
};
use wlnav::geometry::{self, geometry_hash};
use wlnav::heightmap::{self, MAP_RES, MAP_SIZE};
use wlnav::nn::{checkpoint, Arch, PolicyNet};
use wlnav::ppo::{IterationMetrics, PpoConfig, RolloutConfig};
use wlnav::primary::{train_baseline, train_primary, PrimaryConfig, RunDir, FINAL_CHECKPOINT};
use wlnav::seed::{stream_rng, STREAM_BATCH, STREAM_HELDOUT_BASE, STREAM_INIT, STREAM_PRIMARY};
use wlnav::sim::{EnvConfig, RewardConfig};

/// Compiled-in constants a config was written against. A config whose
/// geometry differs from this build is refused rather than silently run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySnapshot {
    pub arena_half_extent: f64,
    pub cell_size: f64,
    pub map_size: usize,
    pub map_resolution: f64,
    pub max_steps: u32,
    pub hash: u32,
}

impl Default for GeometrySnapshot {
    fn default() -> Self {
        GeometrySnapshot {
            arena_half_extent: geometry::ARENA_HALF,
            cell_size: geometry::CELL,
            map_size: MAP_SIZE,
            map_resolution: MAP_RES,
            max_steps: geometry::MAX_STEPS,
            hash: geometry_hash(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Episodes advanced in lockstep during rollouts.
    pub slots: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            slots: RolloutConfig::default().slots,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of the frozen evaluation suite, independent of the run seed.
    pub suite_seed: u64,
    pub suite_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            suite_seed: 2024,
            suite_size: wlnav::evaluation::SUITE_SIZE,
        }
    }
}

/// Everything a run depends on. A run is reproducible from this file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub geometry: GeometrySnapshot,
    pub ppo: PpoConfig,
    pub sampling: SamplingConfig,
    pub curriculum: CurriculumConfig,
    pub domrand: DomrandConfig,
    pub primary: PrimaryConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            geometry: GeometrySnapshot::default(),
            ppo: PpoConfig::default(),
            sampling: SamplingConfig::default(),
            curriculum: CurriculumConfig::default(),
            domrand: DomrandConfig::default(),
            primary: PrimaryConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// The effective configuration as written into run directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.geometry == GeometrySnapshot::default(),
            "config geometry {:?} does not match this build {:?}",
            self.geometry,
            GeometrySnapshot::default()
        );
        let p = &self.ppo;
        ensure!(p.clip > 0.0, "ppo.clip must be positive");
        ensure!((0.0..=1.0).contains(&p.gamma), "ppo.gamma must lie in [0, 1]");
        ensure!(p.epochs > 0 && p.minibatch > 0, "ppo.epochs and ppo.minibatch must be positive");
        ensure!(p.adam.lr > 0.0, "ppo.adam.lr must be positive");
        ensure!(self.sampling.slots > 0, "sampling.slots must be positive");
        ensure!(self.curriculum.n_envs > 0, "curriculum.n_envs must be positive");
        ensure!(self.curriculum.steps_per_iter > 0, "curriculum.steps_per_iter must be positive");
        let s = &self.domrand.spec;
        ensure!(
            s.min_obstacles <= s.max_obstacles && !s.shapes.is_empty(),
            "domrand.spec needs min_obstacles <= max_obstacles and at least one shape"
        );
        ensure!((0.0..=1.0).contains(&self.primary.p_fail), "primary.p_fail must lie in [0, 1]");
        ensure!(
            self.primary.mix.n_on + self.primary.mix.n_batch > 0 && self.primary.mix.baseline_batch > 0,
            "primary.mix step counts must be positive"
        );
        ensure!(self.eval.suite_size > 0, "eval.suite_size must be positive");
        Ok(())
    }

    pub fn rollout(&self, workers: usize) -> RolloutConfig {
        RolloutConfig {
            slots: self.sampling.slots,
            workers: workers.max(1),
        }
    }

    fn rewards(&self) -> RewardConfig {
        RewardConfig {
            gamma: self.ppo.gamma,
            ..RewardConfig::default()
        }
    }

    pub fn secondaries_dir(&self) -> PathBuf {
        self.out_dir.join("secondaries")
    }

    pub fn batch_path(&self) -> PathBuf {
        self.out_dir.join("batch").join("batch.wlb")
    }

    pub fn train_dir(&self, mode: TrainMode) -> PathBuf {
        let tag = match mode {
            TrainMode::Baseline => "baseline",
            TrainMode::WithBatch => "primary",
        };
        self.out_dir.join("train").join(format!("{tag}_seed{}", self.seed))
    }
}

fn straight_checkpoint(cfg: &RunConfig) -> PathBuf {
    behavior_dir(&cfg.secondaries_dir(), BehaviorId::Straight).join(POLICY_FILE)
}

fn load_straight(cfg: &RunConfig, behavior: BehaviorId) -> Result<PolicyNet<f32>> {
    let path = straight_checkpoint(cfg);
    if !path.exists() {
        return Err(CurriculumError::MissingStraight {
            behavior: behavior.name(),
            path: path.display().to_string(),
        }
        .into());
    }
    checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_net(path: &Path) -> Result<PolicyNet<f32>> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn load_env(path: &Path) -> Result<EnvConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read environment {}", path.display()))?;
    let env = EnvConfig::from_text(&text).with_context(|| format!("in {}", path.display()))?;
    env.validate().with_context(|| format!("in {}", path.display()))?;
    Ok(env)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn progress_line(log: &mut dyn Write, tag: &str, m: &IterationMetrics) {
    let _ = writeln!(
        log,
        "{tag} iter {:>4} steps {:>8} episodes {:>4} success {:.3} return {:.3}",
        m.iteration, m.steps, m.episodes, m.success_rate, m.mean_return
    );
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondarySummary {
    pub behavior: BehaviorId,
    pub iterations: usize,
    pub trajectories: usize,
    pub final_success: f64,
}

/// Trains `only`, or every behaviour in curriculum order. Behaviours other
/// than straight start from the straight checkpoint on disk.
pub fn cmd_train_secondaries(
    cfg: &RunConfig,
    only: Option<BehaviorId>,
    workers: usize,
    log: &mut dyn Write,
) -> Result<Vec<SecondarySummary>> {
    let root = cfg.secondaries_dir();
    fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    write_file(&root.join("config.toml"), cfg.to_toml())?;
    let rollout = cfg.rollout(workers);
    let order: Vec<BehaviorId> = match only {
        Some(b) => vec![b],
        None => BehaviorId::ALL.to_vec(),
    };
    let mut out = Vec::new();
    for b in order {
        let init = match b {
            BehaviorId::Straight => {
                PolicyNet::init(Arch::standard(), &mut stream_rng(cfg.seed, STREAM_INIT))
            }
            _ => load_straight(cfg, b)?,
        };
        let mut progress = |b: BehaviorId, m: &IterationMetrics| progress_line(log, b.name(), m);
        let r = train_behavior(b, init, &cfg.curriculum, &cfg.ppo, &rollout, cfg.seed, &mut progress)?;
        save_secondary(&root, &r, cfg.ppo.gamma, cfg.curriculum.keep_per_env)?;
        out.push(SecondarySummary {
            behavior: b,
            iterations: r.metrics.len(),
            trajectories: r.trajectories.len(),
            final_success: r.metrics.last().map_or(0.0, |m| m.success_rate),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenBatchSummary {
    pub originals: usize,
    pub stats: BuildStats,
    pub written: usize,
}

/// Stored secondary trajectories plus their randomisations, in one file.
pub fn cmd_gen_batch(cfg: &RunConfig, log: &mut dyn Write) -> Result<(PathBuf, GenBatchSummary)> {
    let root = cfg.secondaries_dir();
    let mut stored = Vec::new();
    for b in BehaviorId::ALL {
        let eps = load_trajectories(&root, b).with_context(|| {
            format!("missing trajectories of {}; run train-secondaries first", b.name())
        })?;
        let _ = writeln!(log, "{}: {} stored trajectories", b.name(), eps.len());
        stored.extend(eps);
    }
    let path = cfg.batch_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let header = BatchHeader::new(
        cfg.ppo.gamma,
        cfg.curriculum.n_envs as u32,
        cfg.curriculum.keep_per_env as u32,
        cfg.domrand.n_rand as u32,
    );
    let mut writer = BatchWriter::create(&path, &header)?;
    for ep in &stored {
        writer.append(ep)?;
    }
    let mut rng = stream_rng(cfg.seed, STREAM_BATCH);
    let stats = build_batch(&stored, &cfg.domrand, &cfg.rewards(), &mut rng, &mut |ep| {
        writer.append(&ep)
    })?;
    let written = writer.finish()?;
    Ok((
        path,
        GenBatchSummary {
            originals: stored.len(),
            stats,
            written,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    WithBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Start from the trained straight-driving policy.
    Straight,
    Random,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub metrics: Vec<IterationMetrics>,
}

/// Trains the primary policy, with or without the trajectory batch.
pub fn cmd_train(
    cfg: &RunConfig,
    mode: TrainMode,
    batch_file: Option<&Path>,
    init: InitMode,
    workers: usize,
    log: &mut dyn Write,
) -> Result<TrainSummary> {
    if mode == TrainMode::Baseline && batch_file.is_some() {
        bail!("--baseline trains without the trajectory batch; drop --batch-file");
    }
    let reader = match mode {
        TrainMode::Baseline => None,
        TrainMode::WithBatch => {
            let path = batch_file.map_or_else(|| cfg.batch_path(), Path::to_path_buf);
            if !path.exists() {
                bail!(
                    "trajectory batch {} not found; run gen-batch first or pass --batch-file",
                    path.display()
                );
            }
            Some(BatchReader::open(&path).with_context(|| format!("opening {}", path.display()))?)
        }
    };
    let net = match init {
        InitMode::Straight => load_straight(cfg, BehaviorId::Straight)
            .context("the primary policy starts from b1_straight; pass --random-init to skip it")?,
        InitMode::Random => PolicyNet::init(Arch::standard(), &mut stream_rng(cfg.seed, STREAM_INIT)),
    };
    let dir = cfg.train_dir(mode);
    let mut run = RunDir::create(&dir, &cfg.to_toml(), cfg.primary.checkpoint_every)?;
    let rollout = cfg.rollout(workers);
    let mut rng = stream_rng(cfg.seed, STREAM_PRIMARY);
    let tag = if reader.is_some() { "primary" } else { "baseline" };
    let mut hook = |m: &IterationMetrics, net: &PolicyNet<f32>| {
        progress_line(log, tag, m);
        run.record(m, net)
    };
    let result = match &reader {
        Some(r) => train_primary(net, r, &cfg.primary, &cfg.ppo, &rollout, &mut rng, &mut hook)?,
        None => train_baseline(net, &cfg.primary, &cfg.ppo, &rollout, &mut rng, &mut hook)?,
    };
    run.finish(&result.net)?;
    Ok(TrainSummary {
        run_dir: dir,
        metrics: result.metrics,
    })
}

/// Which environments `eval` runs on.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalTarget {
    /// The frozen suite of `eval.suite_size` complex environments.
    Suite,
    /// Fresh environments of one behaviour, disjoint from its training set.
    Behavior(BehaviorId, usize),
    /// The environments the behaviour was trained on.
    TrainingSet(BehaviorId),
    EnvFile(PathBuf),
}

pub fn eval_envs(cfg: &RunConfig, target: &EvalTarget) -> Result<Vec<EnvConfig>> {
    Ok(match target {
        EvalTarget::Suite => frozen_suite(cfg.eval.suite_seed, cfg.eval.suite_size)?,
        EvalTarget::Behavior(b, n) => {
            let mut rng = stream_rng(cfg.eval.suite_seed, STREAM_HELDOUT_BASE + b.index() as u64);
            behavior_envs(*b, *n, &mut rng)
        }
        EvalTarget::TrainingSet(b) => training_envs(*b, &cfg.curriculum, cfg.seed),
        EvalTarget::EnvFile(p) => vec![load_env(p)?],
    })
}

/// Greedy rollouts of `checkpoint`; per-episode rows go to `out_csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, target: &EvalTarget, out_csv: &Path) -> Result<EvalReport> {
    let net = load_net(checkpoint)?;
    let envs = eval_envs(cfg, target)?;
    let report = evaluate_net(&net, &envs)?;
    write_file(out_csv, report.to_csv())?;
    Ok(report)
}

/// Writes `<out_prefix>.csv` and `<out_prefix>.ppm`.
pub fn cmd_relevance(checkpoint: &Path, env_file: &Path, out_prefix: &Path) -> Result<RelevanceReport> {
    let net = load_net(checkpoint)?;
    let env = load_env(env_file)?;
    let report = obstacle_relevance(&net, &env)?;
    write_file(&out_prefix.with_extension("csv"), report.to_csv(&env))?;
    write_file(&out_prefix.with_extension("ppm"), render_relevance(&report, &env))?;
    Ok(report)
}

pub const SCENE_FILE: &str = "scene.ppm";
pub const HEIGHTMAP_PGM: &str = "heightmap.pgm";
pub const HEIGHTMAP_CSV: &str = "heightmap.csv";

/// Top view of the scene, with the greedy path when a checkpoint is given,
/// and the height map seen from the start pose.
pub fn cmd_render(env_file: &Path, checkpoint: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let env = load_env(env_file)?;
    let path = match checkpoint {
        Some(c) => {
            let net = load_net(c)?;
            let mut rec = rollouts(&mut Greedy(&net), std::slice::from_ref(&env))?;
            Some(rec.remove(0).path)
        }
        None => None,
    };
    let map = heightmap::render(&env, &env.start);
    let files = [
        (out_dir.join(SCENE_FILE), render_scene(&env, path.as_deref())),
        (out_dir.join(HEIGHTMAP_PGM), map.to_pgm()),
        (out_dir.join(HEIGHTMAP_CSV), map.to_csv().into_bytes()),
    ];
    let mut written = Vec::new();
    for (p, bytes) in files {
        write_file(&p, bytes)?;
        written.push(p);
    }
    Ok(written)
}

/// Path of the final checkpoint of a training run.
pub fn final_checkpoint(cfg: &RunConfig, mode: TrainMode) -> PathBuf {
    cfg.train_dir(mode).join(FINAL_CHECKPOINT)
}

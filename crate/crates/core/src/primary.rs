//! Primary policy training on complex environments, mixing fresh on-policy
//! samples with episodes drawn from the randomised trajectory batch, and the
//! pure-PPO baseline that differs only in the mixture.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domrand::format::BatchReader;
use crate::domrand::{BatchEpisode, DomrandError};
use crate::nn::{checkpoint, dist, NetError, PolicyNet};
use crate::ppo::{
    new_optimizer, sample_trajectories, update, Episode, EnvSource, IterationMetrics, PpoConfig,
    PpoError, RolloutConfig, Samples, METRICS_HEADER,
};
use crate::sim::{sample_env, ComplexitySpec, EnvConfig, FailurePool, RewardConfig, SimError};

#[derive(Debug, thiserror::Error)]
pub enum PrimaryError {
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Batch(#[from] DomrandError),
    #[error("the trajectory batch is empty; build it first with gen-batch")]
    EmptyBatch,
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    /// On-policy steps per iteration in mixed mode.
    pub n_on: usize,
    /// Minimum batch steps per iteration in mixed mode.
    pub n_batch: usize,
    /// On-policy steps per iteration of the baseline.
    pub baseline_batch: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            n_on: 10_000,
            n_batch: 2_000,
            baseline_batch: 10_000,
        }
    }
}

impl MixConfig {
    /// `(n_on, n_batch)` of the baseline: the same loop without the batch.
    pub fn baseline(&self) -> (usize, usize) {
        (self.baseline_batch, 0)
    }
}

/// Read access to stored episodes.
pub trait EpisodeStore {
    fn len(&self) -> usize;
    fn episode(&self, i: usize) -> Result<BatchEpisode, DomrandError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EpisodeStore for Vec<BatchEpisode> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn episode(&self, i: usize) -> Result<BatchEpisode, DomrandError> {
        Ok(self[i].clone())
    }
}

impl EpisodeStore for BatchReader {
    fn len(&self) -> usize {
        BatchReader::len(self)
    }

    fn episode(&self, i: usize) -> Result<BatchEpisode, DomrandError> {
        self.read(i)
    }
}

/// Complex environments with failure re-sampling; unsuccessful finished
/// episodes are stored in the pool.
pub struct ComplexSource {
    pub spec: ComplexitySpec,
    pub pool: FailurePool,
}

impl ComplexSource {
    pub fn new(pool: FailurePool) -> Self {
        ComplexSource {
            spec: ComplexitySpec::complex(),
            pool,
        }
    }
}

impl EnvSource for ComplexSource {
    fn next_env(&mut self, rng: &mut ChaCha8Rng) -> Result<(usize, EnvConfig), SimError> {
        Ok((0, make_complex_env(rng, &self.pool)?))
    }

    fn finished(&mut self, episode: &Episode) {
        if !episode.is_success() {
            self.pool.record_failure(episode.env.clone());
        }
    }
}

/// Four to eight obstacles of every shape, or a stored failure.
pub fn make_complex_env<R: Rng + ?Sized>(rng: &mut R, pool: &FailurePool) -> Result<EnvConfig, SimError> {
    sample_env(rng, &ComplexitySpec::complex(), pool)
}

/// Draws whole episodes uniformly with replacement until at least
/// `min_steps` tuples are collected.
pub fn draw_batch_episodes<R: Rng + ?Sized>(
    store: &dyn EpisodeStore,
    min_steps: usize,
    rng: &mut R,
) -> Result<Vec<BatchEpisode>, PrimaryError> {
    if min_steps == 0 {
        return Ok(Vec::new());
    }
    if store.is_empty() {
        return Err(PrimaryError::EmptyBatch);
    }
    let mut out = Vec::new();
    let mut steps = 0;
    while steps < min_steps {
        let ep = store.episode(rng.gen_range(0..store.len()))?;
        steps += ep.len();
        out.push(ep);
    }
    Ok(out)
}

const EVAL_CHUNK: usize = 256;

/// Batch tuples with `values_old = V(s)` and `log_prob_old = log pi(a|s)`
/// under `net`, and unnormalised advantages `R - V(s)`.
pub fn batch_samples(net: &PolicyNet<f32>, episodes: &[BatchEpisode]) -> Result<Samples<f32>, PpoError> {
    let arch = net.arch();
    let mut s = Samples::new(arch.input, arch.proprio, arch.channels);
    for ep in episodes {
        ep.push_samples(&mut s);
    }
    let lo = arch.logits_len();
    let idx: Vec<usize> = (0..s.len()).collect();
    let mut choice = vec![0usize; arch.channels];
    for chunk in idx.chunks(EVAL_CHUNK) {
        let fwd = net.forward(&s.obs.gather(chunk))?;
        for (row, &i) in chunk.iter().enumerate() {
            let logits: Vec<f64> = fwd.logits[row * lo..(row + 1) * lo].iter().map(|&v| f64::from(v)).collect();
            let logp = dist::log_softmax(&logits, arch.options);
            for (c, &o) in choice.iter_mut().zip(s.choice(i)) {
                *c = o as usize;
            }
            let v = f64::from(fwd.values[row]);
            s.values_old[i] = v;
            s.log_prob_old[i] = dist::joint_log_prob(&logp, arch.options, &choice);
            s.advantages[i] = s.returns[i] - v;
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimaryConfig {
    pub mix: MixConfig,
    pub iterations: usize,
    pub pool_capacity: usize,
    pub p_fail: f64,
    pub checkpoint_every: usize,
}

impl Default for PrimaryConfig {
    fn default() -> Self {
        PrimaryConfig {
            mix: MixConfig::default(),
            iterations: 100,
            pool_capacity: 512,
            p_fail: 0.2,
            checkpoint_every: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrimaryResult {
    pub net: PolicyNet<f32>,
    pub metrics: Vec<IterationMetrics>,
    pub pool: FailurePool,
}

pub type Hook<'a> = &'a mut dyn FnMut(&IterationMetrics, &PolicyNet<f32>) -> Result<(), PrimaryError>;

/// The shared loop. Every iteration samples `n_on` steps, draws at least
/// `n_batch` batch steps, normalises all advantages jointly and runs one
/// clipped update from the snapshot taken at the iteration start.
#[allow(clippy::too_many_arguments)]
pub fn train_mixed(
    init: PolicyNet<f32>,
    store: &dyn EpisodeStore,
    n_on: usize,
    n_batch: usize,
    cfg: &PrimaryConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    rng: &mut ChaCha8Rng,
    hook: Hook<'_>,
) -> Result<PrimaryResult, PrimaryError> {
    if n_batch > 0 && store.is_empty() {
        return Err(PrimaryError::EmptyBatch);
    }
    if n_on + n_batch == 0 {
        return Err(PpoError::Empty.into());
    }
    let rc = RewardConfig {
        gamma: hp.gamma,
        ..RewardConfig::default()
    };
    let mut net = init;
    let mut opt = new_optimizer(&net, hp);
    let mut source = ComplexSource::new(FailurePool::new(cfg.pool_capacity, cfg.p_fail));
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut steps = 0u64;
    for it in 0..cfg.iterations {
        let episodes = if n_on > 0 {
            sample_trajectories(&net, &mut source, n_on, rollout, &rc, rng)?
        } else {
            Vec::new()
        };
        let drawn = draw_batch_episodes(store, n_batch, rng)?;
        let arch = net.arch();
        let mut data = batch_samples(&net, &drawn)?;
        let mut on = Samples::new(arch.input, arch.proprio, arch.channels);
        for e in &episodes {
            e.push_samples(&mut on, hp.gamma);
        }
        data.append(&on);
        data.refresh_advantages()?;
        let stats = update(&mut net, &mut opt, &data, hp, rng)?;
        steps += on.len() as u64;
        let m = IterationMetrics::from_episodes(it, steps, &episodes, stats.terms);
        hook(&m, &net)?;
        metrics.push(m);
    }
    Ok(PrimaryResult {
        net,
        metrics,
        pool: source.pool,
    })
}

/// Mixed training with the trajectory batch.
#[allow(clippy::too_many_arguments)]
pub fn train_primary(
    init: PolicyNet<f32>,
    store: &dyn EpisodeStore,
    cfg: &PrimaryConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    rng: &mut ChaCha8Rng,
    hook: Hook<'_>,
) -> Result<PrimaryResult, PrimaryError> {
    if store.is_empty() {
        return Err(PrimaryError::EmptyBatch);
    }
    train_mixed(init, store, cfg.mix.n_on, cfg.mix.n_batch, cfg, hp, rollout, rng, hook)
}

/// The same loop without the batch.
pub fn train_baseline(
    init: PolicyNet<f32>,
    cfg: &PrimaryConfig,
    hp: &PpoConfig,
    rollout: &RolloutConfig,
    rng: &mut ChaCha8Rng,
    hook: Hook<'_>,
) -> Result<PrimaryResult, PrimaryError> {
    let (n_on, n_batch) = cfg.mix.baseline();
    train_mixed(init, &Vec::new(), n_on, n_batch, cfg, hp, rollout, rng, hook)
}

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Run directory: config snapshot, metrics CSV grown one row per
/// iteration, periodic and final checkpoints.
pub struct RunDir {
    pub path: PathBuf,
    every: usize,
    metrics: File,
}

fn io_err(p: &Path) -> impl Fn(std::io::Error) -> PrimaryError + '_ {
    move |e| PrimaryError::Io(p.display().to_string(), e)
}

impl RunDir {
    pub fn create(path: &Path, config_snapshot: &str, checkpoint_every: usize) -> Result<Self, PrimaryError> {
        fs::create_dir_all(path).map_err(io_err(path))?;
        let cfg = path.join(CONFIG_FILE);
        fs::write(&cfg, config_snapshot).map_err(io_err(&cfg))?;
        let csv = path.join(METRICS_FILE);
        let mut metrics = File::create(&csv).map_err(io_err(&csv))?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&csv))?;
        Ok(RunDir {
            path: path.to_path_buf(),
            every: checkpoint_every,
            metrics,
        })
    }

    pub fn checkpoint_path(&self, iteration: usize) -> PathBuf {
        self.path.join(format!("iter_{iteration:05}.ckpt"))
    }

    pub fn record(&mut self, m: &IterationMetrics, net: &PolicyNet<f32>) -> Result<(), PrimaryError> {
        let csv = self.path.join(METRICS_FILE);
        writeln!(self.metrics, "{}", m.csv_row()).map_err(io_err(&csv))?;
        self.metrics.flush().map_err(io_err(&csv))?;
        if self.every > 0 && (m.iteration + 1).is_multiple_of(self.every) {
            checkpoint::save(net, &self.checkpoint_path(m.iteration + 1))?;
        }
        Ok(())
    }

    pub fn finish(&self, net: &PolicyNet<f32>) -> Result<(), PrimaryError> {
        checkpoint::save(net, &self.path.join(FINAL_CHECKPOINT))?;
        Ok(())
    }
}

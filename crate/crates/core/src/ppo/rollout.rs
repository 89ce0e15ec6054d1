use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::heightmap::{observe, Observation};
use crate::nn::{dist, ObsBatch, PolicyNet};
use crate::sim::{
    step_with, Action, EnvConfig, RewardConfig, RobotState, SimError, Terminal, N_CHANNELS,
};

use super::{discounted_returns, PpoError, Samples};

/// Supplies the environment of each new episode.
pub trait EnvSource {
    /// Caller-defined id and configuration for the next episode.
    fn next_env(&mut self, rng: &mut ChaCha8Rng) -> Result<(usize, EnvConfig), SimError>;

    /// Called once per finished (not budget-truncated) episode, in order.
    fn finished(&mut self, _episode: &Episode) {}
}

/// Cycles through a fixed list.
#[derive(Clone, Debug)]
pub struct RoundRobin {
    pub envs: Vec<EnvConfig>,
    next: usize,
}

impl RoundRobin {
    pub fn new(envs: Vec<EnvConfig>) -> Self {
        assert!(!envs.is_empty(), "round robin over no environments");
        RoundRobin { envs, next: 0 }
    }
}

impl EnvSource for RoundRobin {
    fn next_env(&mut self, _rng: &mut ChaCha8Rng) -> Result<(usize, EnvConfig), SimError> {
        let id = self.next;
        self.next = (self.next + 1) % self.envs.len();
        Ok((id, self.envs[id].clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Episodes advanced in lockstep; one batched forward per tick.
    pub slots: usize,
    /// Threads stepping the simulators. Results do not depend on it.
    pub workers: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            slots: 16,
            workers: 1,
        }
    }
}

/// One sampled episode, or a segment of one cut off by the step budget
/// (`terminal == Running`).
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub env_id: usize,
    pub env: EnvConfig,
    /// `len + 1` states, starting with the initial one.
    pub states: Vec<RobotState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub invalid: Vec<bool>,
    pub terminal: Terminal,
    /// Encoded network inputs, one row per step.
    pub maps: Vec<f32>,
    pub proprio: Vec<f32>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the state after the last step if the episode was truncated,
    /// else 0.
    pub bootstrap: f64,
}

impl Episode {
    fn new(env_id: usize, env: EnvConfig) -> Self {
        Episode {
            env_id,
            states: vec![env.start],
            env,
            actions: Vec::new(),
            rewards: Vec::new(),
            invalid: Vec::new(),
            terminal: Terminal::Running,
            maps: Vec::new(),
            proprio: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            bootstrap: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_success(&self) -> bool {
        self.terminal == Terminal::Success
    }

    pub fn collision_free(&self) -> bool {
        !self.invalid.iter().any(|&b| b)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        discounted_returns(&self.rewards, gamma, self.bootstrap)
    }

    /// Appends this episode's tuples; advantages are left for the caller.
    pub fn push_samples(&self, out: &mut Samples<f32>, gamma: f64) {
        let m = out.obs.side() * out.obs.side();
        let p = out.obs.proprio_len();
        for t in 0..self.len() {
            out.obs
                .push_raw(&self.maps[t * m..(t + 1) * m], &self.proprio[t * p..(t + 1) * p]);
            out.choices
                .extend(self.actions[t].options().iter().map(|&o| o as u8));
        }
        out.returns.extend(self.returns(gamma));
        out.values_old.extend_from_slice(&self.values);
        out.log_prob_old.extend_from_slice(&self.log_probs);
        out.advantages.extend(std::iter::repeat_n(0.0, self.len()));
    }
}

struct Live {
    ep: Episode,
    state: RobotState,
    obs: Observation,
}

impl Live {
    fn start(id: usize, env: EnvConfig) -> Self {
        let obs = observe(&env, &env.start);
        Live {
            state: env.start,
            obs,
            ep: Episode::new(id, env),
        }
    }
}

struct Job<'a> {
    row: usize,
    live: &'a mut Live,
    rng: &'a mut ChaCha8Rng,
}

fn advance(
    job: &mut Job<'_>,
    batch: &ObsBatch<f32>,
    logits: &[f32],
    values: &[f32],
    options: usize,
    rc: &RewardConfig,
) -> Result<(), SimError> {
    let lo = N_CHANNELS * options;
    let row = job.row;
    let lg: Vec<f64> = logits[row * lo..(row + 1) * lo].iter().map(|&v| f64::from(v)).collect();
    let logp = dist::log_softmax(&lg, options);
    let choice = dist::sample(&logp, options, job.rng);
    let mut opts = [0usize; N_CHANNELS];
    opts.copy_from_slice(&choice);
    let action = Action::from_options(opts);
    let live = &mut *job.live;
    let t = live.ep.len() as u32;
    let r = step_with(rc, &live.state, action, &live.ep.env, t)?;

    let ep = &mut live.ep;
    let m = batch.side() * batch.side();
    let p = batch.proprio_len();
    ep.maps.extend_from_slice(&batch.maps()[row * m..(row + 1) * m]);
    ep.proprio.extend_from_slice(&batch.proprio()[row * p..(row + 1) * p]);
    ep.log_probs.push(dist::joint_log_prob(&logp, options, &choice));
    ep.values.push(f64::from(values[row]));
    ep.actions.push(action);
    ep.rewards.push(r.reward);
    ep.invalid.push(r.invalid);
    ep.states.push(r.next_state);
    ep.terminal = r.terminal;
    live.state = r.next_state;
    live.obs = observe(&ep.env, &live.state);
    Ok(())
}

fn run_jobs(
    jobs: &mut [Job<'_>],
    workers: usize,
    batch: &ObsBatch<f32>,
    logits: &[f32],
    values: &[f32],
    options: usize,
    rc: &RewardConfig,
) -> Result<(), SimError> {
    if workers <= 1 || jobs.len() < 2 {
        for job in jobs.iter_mut() {
            advance(job, batch, logits, values, options, rc)?;
        }
        return Ok(());
    }
    let per = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks_mut(per)
            .map(|chunk| {
                scope.spawn(move || {
                    for job in chunk.iter_mut() {
                        advance(job, batch, logits, values, options, rc)?;
                    }
                    Ok::<(), SimError>(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("rollout worker panicked"))
    })
}

/// Collects exactly `n_steps` transitions with actions sampled from the
/// per-channel categorical heads. Each lockstep slot owns an RNG seeded
/// from `rng`, so the result is independent of `cfg.workers`.
pub fn sample_trajectories(
    net: &PolicyNet<f32>,
    source: &mut dyn EnvSource,
    n_steps: usize,
    cfg: &RolloutConfig,
    rc: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>, PpoError> {
    let arch = net.arch();
    if arch.channels != N_CHANNELS {
        return Err(PpoError::Length(format!(
            "network has {} action channels, the robot {N_CHANNELS}",
            arch.channels
        )));
    }
    let options = arch.options;
    let k = cfg.slots.clamp(1, n_steps.max(1));
    let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|_| ChaCha8Rng::seed_from_u64(rng.gen())).collect();
    let mut live: Vec<Option<Live>> = Vec::with_capacity(k);
    for _ in 0..k {
        let (id, env) = source.next_env(rng)?;
        live.push(Some(Live::start(id, env)));
    }
    let mut done: Vec<Episode> = Vec::new();
    // Episodes whose value must be bootstrapped, with their final observation.
    let mut pending: Vec<(usize, Observation)> = Vec::new();
    let mut steps = 0usize;
    while steps < n_steps {
        let budget = n_steps - steps;
        let mut batch = ObsBatch::<f32>::standard();
        let mut jobs: Vec<Job<'_>> = Vec::new();
        let mut slots: Vec<usize> = Vec::new();
        for (slot, (l, r)) in live.iter_mut().zip(rngs.iter_mut()).enumerate() {
            if jobs.len() == budget {
                break;
            }
            if let Some(l) = l {
                batch.push_observation(&l.obs);
                slots.push(slot);
                jobs.push(Job {
                    row: jobs.len(),
                    live: l,
                    rng: r,
                });
            }
        }
        if jobs.is_empty() {
            break;
        }
        let fwd = net.forward(&batch)?;
        run_jobs(&mut jobs, cfg.workers, &batch, &fwd.logits, &fwd.values, options, rc)?;
        steps += jobs.len();
        drop(jobs);
        for slot in slots {
            let finished = live[slot]
                .as_ref()
                .is_some_and(|l| l.ep.terminal.is_done());
            if !finished {
                continue;
            }
            let l = live[slot].take().expect("slot is live");
            source.finished(&l.ep);
            if l.ep.terminal == Terminal::MaxSteps {
                pending.push((done.len(), l.obs));
            }
            done.push(l.ep);
            if steps < n_steps {
                let (id, env) = source.next_env(rng)?;
                live[slot] = Some(Live::start(id, env));
            }
        }
    }
    for l in live.into_iter().flatten() {
        if !l.ep.is_empty() {
            pending.push((done.len(), l.obs));
            done.push(l.ep);
        }
    }
    if !pending.is_empty() {
        let batch = ObsBatch::<f32>::from_observations(pending.iter().map(|(_, o)| o));
        let fwd = net.forward(&batch)?;
        for ((i, _), v) in pending.iter().zip(&fwd.values) {
            done[*i].bootstrap = f64::from(*v);
        }
    }
    Ok(done)
}

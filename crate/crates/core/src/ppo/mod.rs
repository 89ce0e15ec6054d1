//! Discounted returns, plain advantages, the clipped surrogate with value
//! regression and entropy bonus, and the shuffled minibatch update.

mod rollout;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dist, Adam, AdamConfig, NetError, ObsBatch, PolicyNet, Scalar};
use crate::sim::SimError;

pub use rollout::{sample_trajectories, EnvSource, Episode, RolloutConfig, RoundRobin};

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("non-finite probability ratio at sample {index}")]
    NonFiniteRatio { index: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("empty dataset")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    /// Surrogate weight.
    pub lambda1: f64,
    /// Value-loss weight.
    pub lambda2: f64,
    /// Entropy bonus; 0 disables it.
    pub ent_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            lambda1: 1.0,
            lambda2: 0.5,
            ent_coef: 0.01,
            epochs: 4,
            minibatch: 256,
            gamma: 0.99,
            adam: AdamConfig::default(),
        }
    }
}

/// `R_t = r_t + gamma R_{t+1}`, seeded with `bootstrap` past the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Returns of several terminated episodes, concatenated.
pub fn compute_returns(episodes: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    episodes
        .iter()
        .flat_map(|r| discounted_returns(r, gamma, 0.0))
        .collect()
}

/// Zero mean, unit population variance; all zeros when the spread is
/// below 1e-8.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std < 1e-8 { 0.0 } else { (*v - mean) / std };
    }
}

/// `A_t = R_t - V(s_t)`, normalized over the batch.
pub fn compute_advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>, PpoError> {
    if returns.len() != values.len() {
        return Err(PpoError::Length(format!(
            "{} returns vs {} values",
            returns.len(),
            values.len()
        )));
    }
    let mut adv: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    normalize(&mut adv);
    Ok(adv)
}

/// Training tuples in columnar form.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T> {
    pub obs: ObsBatch<T>,
    /// `len x channels` chosen option indices.
    pub choices: Vec<u8>,
    pub channels: usize,
    pub returns: Vec<f64>,
    pub values_old: Vec<f64>,
    pub log_prob_old: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl<T: Scalar> Samples<T> {
    pub fn new(side: usize, proprio_len: usize, channels: usize) -> Self {
        Samples {
            obs: ObsBatch::new(side, proprio_len),
            choices: Vec::new(),
            channels,
            returns: Vec::new(),
            values_old: Vec::new(),
            log_prob_old: Vec::new(),
            advantages: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn choice(&self, i: usize) -> &[u8] {
        &self.choices[i * self.channels..(i + 1) * self.channels]
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        let mut choices = Vec::with_capacity(idx.len() * self.channels);
        for &i in idx {
            choices.extend_from_slice(self.choice(i));
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Samples {
            obs: self.obs.gather(idx),
            choices,
            channels: self.channels,
            returns: pick(&self.returns),
            values_old: pick(&self.values_old),
            log_prob_old: pick(&self.log_prob_old),
            advantages: pick(&self.advantages),
        }
    }

    pub fn append(&mut self, other: &Samples<T>) {
        assert_eq!(self.channels, other.channels);
        for i in 0..other.len() {
            let m = other.obs.side() * other.obs.side();
            let p = other.obs.proprio_len();
            self.obs.push_raw(
                &other.obs.maps()[i * m..(i + 1) * m],
                &other.obs.proprio()[i * p..(i + 1) * p],
            );
        }
        self.choices.extend_from_slice(&other.choices);
        self.returns.extend_from_slice(&other.returns);
        self.values_old.extend_from_slice(&other.values_old);
        self.log_prob_old.extend_from_slice(&other.log_prob_old);
        self.advantages.extend_from_slice(&other.advantages);
    }

    /// Sets raw advantages `R - V_old`, then normalizes them jointly.
    pub fn refresh_advantages(&mut self) -> Result<(), PpoError> {
        self.advantages = compute_advantages(&self.returns, &self.values_old)?;
        Ok(())
    }
}

/// Mean loss terms over one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    /// `-mean(min(clip(psi) A, psi A))`, before the `lambda1` weight.
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

/// Compound loss `-lambda1 eta + lambda2 L_v - c_ent H` on `mb` and its
/// gradient w.r.t. every parameter.
pub fn ppo_loss<T: Scalar>(
    net: &PolicyNet<T>,
    mb: &Samples<T>,
    hp: &PpoConfig,
) -> Result<(LossTerms, Vec<T>), PpoError> {
    let n = mb.len();
    if n == 0 {
        return Err(PpoError::Empty);
    }
    let arch = net.arch();
    let (channels, options) = (arch.channels, arch.options);
    if mb.channels != channels || mb.choices.len() != n * channels {
        return Err(PpoError::Length("action channels".into()));
    }
    let fwd = net.forward(&mb.obs)?;
    let lo = arch.logits_len();
    let inv_n = 1.0 / n as f64;
    let mut dlogits = vec![T::zero(); n * lo];
    let mut dvalues = vec![T::zero(); n];
    let mut terms = LossTerms::default();
    let mut choice = vec![0usize; channels];
    for i in 0..n {
        let logits: Vec<f64> = fwd.logits[i * lo..(i + 1) * lo].iter().map(|v| v.f64()).collect();
        let logp = dist::log_softmax(&logits, options);
        for (c, &o) in choice.iter_mut().zip(mb.choice(i)) {
            *c = o as usize;
        }
        let lp = dist::joint_log_prob(&logp, options, &choice);
        let log_ratio = lp - mb.log_prob_old[i];
        let psi = log_ratio.exp();
        if !psi.is_finite() {
            return Err(PpoError::NonFiniteRatio { index: i });
        }
        let a = mb.advantages[i];
        let clipped = psi.clamp(1.0 - hp.clip, 1.0 + hp.clip);
        let (unclipped_obj, clipped_obj) = (psi * a, clipped * a);
        terms.surrogate -= unclipped_obj.min(clipped_obj) * inv_n;
        if (psi - 1.0).abs() > hp.clip {
            terms.clip_frac += inv_n;
        }
        terms.approx_kl += ((psi - 1.0) - log_ratio) * inv_n;
        // d(-lambda1 eta)/d lp; zero when the clipped branch is the minimum.
        let g_lp = if unclipped_obj <= clipped_obj {
            -hp.lambda1 * a * psi * inv_n
        } else {
            0.0
        };

        let v = fwd.values[i].f64();
        let err = v - mb.returns[i];
        terms.value += err * err * inv_n;
        dvalues[i] = T::of(hp.lambda2 * 2.0 * err * inv_n);

        let ent = dist::entropy(&logp);
        terms.entropy += ent * inv_n;
        let row = &mut dlogits[i * lo..(i + 1) * lo];
        for c in 0..channels {
            let g = &logp[c * options..(c + 1) * options];
            let h_c: f64 = -g.iter().map(|&l| l.exp() * l).sum::<f64>();
            for k in 0..options {
                let p = g[k].exp();
                let onehot = if k == choice[c] { 1.0 } else { 0.0 };
                let d_lp = onehot - p;
                let d_ent = -p * (g[k] + h_c);
                row[c * options + k] = T::of(g_lp * d_lp - hp.ent_coef * d_ent * inv_n);
            }
        }
    }
    terms.total = hp.lambda1 * terms.surrogate + hp.lambda2 * terms.value - hp.ent_coef * terms.entropy;
    let mut grads = vec![T::zero(); net.param_count()];
    net.backward(&fwd, &dlogits, &dvalues, &mut grads)?;
    Ok((terms, grads))
}

/// Averages of the loss terms over all minibatches of an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub terms: LossTerms,
    pub minibatches: usize,
}

/// `epochs` passes of shuffled minibatches over `data`. The old
/// log-probabilities in `data` define the ratio denominator throughout.
pub fn update<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyNet<T>,
    opt: &mut Adam,
    data: &Samples<T>,
    hp: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if data.is_empty() {
        return Err(PpoError::Empty);
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut stats = UpdateStats::default();
    let mut sum = LossTerms::default();
    for _ in 0..hp.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(hp.minibatch.max(1)) {
            let mb = data.gather(chunk);
            let (t, grads) = ppo_loss(net, &mb, hp)?;
            opt.step(net.params_mut(), &grads);
            sum.total += t.total;
            sum.surrogate += t.surrogate;
            sum.value += t.value;
            sum.entropy += t.entropy;
            sum.approx_kl += t.approx_kl;
            sum.clip_frac += t.clip_frac;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches.max(1) as f64;
    stats.terms = LossTerms {
        total: sum.total / k,
        surrogate: sum.surrogate / k,
        value: sum.value / k,
        entropy: sum.entropy / k,
        approx_kl: sum.approx_kl / k,
        clip_frac: sum.clip_frac / k,
    };
    Ok(stats)
}

pub fn new_optimizer<T: Scalar>(net: &PolicyNet<T>, hp: &PpoConfig) -> Adam {
    Adam::new(hp.adam, net.param_count())
}

/// One row of a training metrics CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Cumulative environment steps.
    pub steps: u64,
    pub episodes: usize,
    /// Mean undiscounted return of episodes that ended this iteration.
    pub mean_return: f64,
    pub success_rate: f64,
    pub loss: LossTerms,
}

pub const METRICS_HEADER: &str =
    "iteration,steps,episodes,mean_return,success_rate,loss,surrogate,value_loss,entropy,approx_kl,clip_frac";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.iteration,
            self.steps,
            self.episodes,
            self.mean_return,
            self.success_rate,
            l.total,
            l.surrogate,
            l.value,
            l.entropy,
            l.approx_kl,
            l.clip_frac
        )
    }

    /// Episode statistics over the finished episodes in `episodes`.
    pub fn from_episodes(iteration: usize, steps: u64, episodes: &[Episode], loss: LossTerms) -> Self {
        let done: Vec<&Episode> = episodes.iter().filter(|e| e.terminal.is_done()).collect();
        let k = done.len().max(1) as f64;
        IterationMetrics {
            iteration,
            steps,
            episodes: done.len(),
            mean_return: done.iter().map(|e| e.total_reward()).sum::<f64>() / k,
            success_rate: done.iter().filter(|e| e.is_success()).count() as f64 / k,
            loss,
        }
    }
}

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_hand_values() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.0, 0.0), vec![1.0, 1.0, 1.0]);
        assert_eq!(discounted_returns(&[0.0, 0.0, 1.0], 0.5, 0.0), vec![0.25, 0.5, 1.0]);
        assert_eq!(discounted_returns(&[0.0], 0.5, 2.0), vec![1.0]);
    }

    #[test]
    fn episodes_do_not_bleed() {
        let a = vec![1.0, -2.0];
        let b = vec![0.5, 0.5, 3.0];
        let joint = compute_returns(&[a.clone(), b.clone()], 0.9);
        let mut sep = discounted_returns(&a, 0.9, 0.0);
        sep.extend(discounted_returns(&b, 0.9, 0.0));
        assert_eq!(joint, sep);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(compute_advantages(&[3.0], &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(compute_advantages(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(compute_advantages(&[1.0], &[]).is_err());
    }
}

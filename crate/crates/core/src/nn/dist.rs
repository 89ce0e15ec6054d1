//! Factored categorical policy: one independent softmax per action channel.

use rand::Rng;

use super::scalar::Scalar;

/// Numerically stable log-softmax over consecutive groups of `options`.
pub fn log_softmax<T: Scalar>(logits: &[T], options: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (src, dst) in logits.chunks_exact(options).zip(out.chunks_exact_mut(options)) {
        let m = src.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + src.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    out
}

/// Sum over channels of the chosen option's log-probability.
pub fn joint_log_prob<T: Scalar>(logp: &[T], options: usize, choice: &[usize]) -> T {
    logp.chunks_exact(options)
        .zip(choice)
        .map(|(g, &c)| g[c])
        .sum()
}

/// Sum of per-channel entropies.
pub fn entropy<T: Scalar>(logp: &[T]) -> T {
    -logp.iter().map(|&l| l.exp() * l).sum::<T>()
}

pub fn sample<T: Scalar, R: Rng + ?Sized>(logp: &[T], options: usize, rng: &mut R) -> Vec<usize> {
    logp.chunks_exact(options)
        .map(|g| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &l) in g.iter().enumerate() {
                acc += l.f64().exp();
                if u < acc {
                    return i;
                }
            }
            options - 1
        })
        .collect()
}

/// Per-channel argmax; ties go to the lowest option.
pub fn greedy<T: Scalar>(logits: &[T], options: usize) -> Vec<usize> {
    logits
        .chunks_exact(options)
        .map(|g| {
            let mut best = 0;
            for i in 1..g.len() {
                if g[i] > g[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let lp = log_softmax(&[0.0f64; 6], 3);
        for v in &lp {
            assert!((v + 3f64.ln()).abs() < 1e-12);
        }
        assert!((entropy(&lp) - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!((joint_log_prob(&lp, 3, &[0, 2]) + 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let lp = log_softmax(&[1000.0f32, 0.0, -1000.0], 3);
        assert!(lp.iter().all(|v| !v.is_nan()));
        assert_eq!(lp[0], 0.0);
    }

    #[test]
    fn sampling_frequencies() {
        let lp = log_softmax(&[0.0f64, 1.0, 2.0], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[sample(&lp, 3, &mut rng)[0]] += 1;
        }
        for i in 0..3 {
            let p = lp[i].exp();
            assert!((counts[i] as f64 / n as f64 - p).abs() < 0.015);
        }
    }

    #[test]
    fn greedy_ties_to_first() {
        assert_eq!(greedy(&[0.0f32, 0.0, 0.0, 1.0, 3.0, 3.0], 3), vec![0, 1]);
    }
}

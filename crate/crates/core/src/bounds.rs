//! Validators for the rank/probability bound `R <= 1/p` and the
//! expected-rank/entropy bound `E[R] >= s(H)`, the geometric max-entropy and
//! Fano helpers behind them, and gap statistics over random sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::stats::{k_full, rank_transform, ScaleConfig, TokenDistribution, TokenStats};

/// Gaps below `-VIOLATION_TOL` count as bound violations.
pub const VIOLATION_TOL: f64 = 1e-9;

const FANO_TOL: f64 = 1e-10;

/// `1/R - p`; lies in `[0, 1)` whenever `R <= 1/p`.
pub fn rank_prob_gap(stats: &TokenStats) -> f64 {
    1.0 / stats.rank as f64 - stats.p
}

/// `1/s(H) - 1/E[R]`; nonnegative whenever `E[R] >= s(H)`.
pub fn expected_rank_entropy_gap(stats: &TokenStats) -> f64 {
    1.0 / stats.support_term - 1.0 / stats.expected_rank
}

/// `φ(A) = A·log2(A/(A-1))`, decreasing from `φ(2) = 2` towards `log2 e`.
pub fn phi(a: f64) -> f64 {
    a * (a / (a - 1.0)).log2()
}

/// Entropy in bits of the geometric distribution on `{1, 2, ...}` with mean `a`,
/// the largest entropy any distribution with that mean can have.
pub fn geometric_maxent_entropy(a: f64) -> Result<f64> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::invalid("mean", format!("must exceed 1, got {a}")));
    }
    // log2(A-1) + A·log2(A/(A-1)) rewritten around x = A-1 so it stays finite as A -> 1.
    let x = a - 1.0;
    Ok(a * a.log2() - x * x.log2())
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Largest entropy a distribution over `vocab_size` outcomes can have when its
/// largest mass is `p_max`: `H_b(p) + (1-p)·log2(V-1)`.
pub fn fano_entropy_cap(p_max: f64, vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(Error::VocabTooSmall(vocab_size));
    }
    let floor = 1.0 / vocab_size as f64;
    if !(p_max >= floor - 1e-12 && p_max <= 1.0) {
        return Err(Error::invalid(
            "p_max",
            format!("must lie in [1/{vocab_size}, 1], got {p_max}"),
        ));
    }
    Ok(binary_entropy(p_max) + (1.0 - p_max) * ((vocab_size - 1) as f64).log2())
}

/// Inverts [`fano_entropy_cap`] on `[1/V, 1]` by bisection. The result upper
/// bounds `p_max` of any distribution with entropy `entropy_bits`.
pub fn fano_inverse(entropy_bits: f64, vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(Error::VocabTooSmall(vocab_size));
    }
    let h_max = (vocab_size as f64).log2();
    if !(entropy_bits >= 0.0 && entropy_bits <= h_max + 1e-12) {
        return Err(Error::invalid(
            "entropy",
            format!("must lie in [0, {h_max}], got {entropy_bits}"),
        ));
    }
    let (mut lo, mut hi) = (1.0 / vocab_size as f64, 1.0);
    // cap is decreasing: cap(lo) = log2 V >= H >= 0 = cap(hi)
    while hi - lo > FANO_TOL * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if fano_entropy_cap(mid, vocab_size)? > entropy_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Entropy-only lower bound on the expected rank in the low-entropy regime:
/// `2 - h^-1(H)`.
pub fn fano_expected_rank_bound(entropy_bits: f64, vocab_size: usize) -> Result<f64> {
    Ok(2.0 - fano_inverse(entropy_bits, vocab_size)?)
}

/// Intermediate value ξ* strictly between `rank` and `expected_rank` with
/// `f(R) - f(E[R]) = -K(ξ*)·log2(R/E[R])`, located by bisection to `tol`.
///
/// Returns `None` when the two arguments coincide (no open interval) or the
/// residual does not change sign on the interval.
pub fn cmvt_witness(rank: f64, expected_rank: f64, tol: f64) -> Option<f64> {
    if !(rank >= 1.0 && expected_rank >= 1.0) || rank == expected_rank {
        return None;
    }
    let target = rank_transform(rank) - rank_transform(expected_rank);
    let log_ratio = (rank / expected_rank).log2();
    let residual = |xi: f64| target + k_full(xi).expect("xi >= 1") * log_ratio;
    let (mut lo, mut hi) = (rank.min(expected_rank), rank.max(expected_rank));
    let (r_lo, r_hi) = (residual(lo), residual(hi));
    if r_lo.signum() == r_hi.signum() {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if residual(mid).signum() == r_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Summary of a gap sample. Quantiles use the nearest-rank method and `std`
/// is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub p80: f64,
    pub p90: f64,
    pub count: usize,
    pub violations: usize,
}

pub const GAP_CSV_HEADER: &str = "error_type,mean,median,std,p80,p90,count,violations";

impl GapReport {
    pub fn csv_row(&self, error_type: &str) -> String {
        format!(
            "{error_type},{},{},{},{},{},{},{}",
            self.mean, self.median, self.std, self.p80, self.p90, self.count, self.violations
        )
    }
}

/// Nearest-rank percentile of an ascending slice, `pct` in `1..=100`.
fn nearest_rank(sorted: &[f64], pct: usize) -> f64 {
    let rank = (pct * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn gap_statistics(gaps: &[f64]) -> Result<GapReport> {
    if gaps.is_empty() {
        return Err(Error::Empty("gap sample"));
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(GapReport {
        mean,
        median: nearest_rank(&sorted, 50),
        std: var.sqrt(),
        p80: nearest_rank(&sorted, 80),
        p90: nearest_rank(&sorted, 90),
        count: gaps.len(),
        violations: gaps.iter().filter(|&&g| g < -VIOLATION_TOL).count(),
    })
}

/// Parameters of the random-distribution sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub samples: usize,
    pub seed: u64,
    pub min_vocab: usize,
    pub max_vocab: usize,
    /// Dirichlet concentration is drawn log-uniformly from this range.
    pub alpha_range: (f64, f64),
}

impl SweepConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            min_vocab: 2,
            max_vocab: 256,
            alpha_range: (0.02, 5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSample {
    pub dist: TokenDistribution,
    pub target: usize,
    pub stats: TokenStats,
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha is positive");
    loop {
        let mut draw: Vec<f64> = (0..vocab_size).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draw.iter().sum();
        if total > 0.0 && total.is_finite() {
            for x in &mut draw {
                *x /= total;
            }
            return draw;
        }
    }
}

/// Random distributions with random targets. Half of the targets are drawn
/// from the distribution itself, the rest uniformly over the vocabulary.
pub fn random_sweep(config: &SweepConfig) -> Vec<SweepSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.alpha_range;
    (0..config.samples)
        .map(|_| {
            let vocab = rng.random_range(config.min_vocab..=config.max_vocab);
            let alpha = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
            let probs = dirichlet(&mut rng, vocab, alpha);
            let target = if rng.random_bool(0.5) {
                sample_index(&mut rng, &probs)
            } else {
                rng.random_range(0..vocab)
            };
            let dist = TokenDistribution::from_probs(probs).expect("dirichlet draw is normalized");
            let stats = TokenStats::from_distribution(&dist, target, ScaleConfig::default())
                .expect("target in range");
            SweepSample { dist, target, stats }
        })
        .collect()
}

pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Gap reports for both bounds over one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSweepReport {
    pub rank_prob: GapReport,
    pub expected_rank_entropy: GapReport,
}

impl BoundSweepReport {
    pub fn violations(&self) -> usize {
        self.rank_prob.violations + self.expected_rank_entropy.violations
    }
}

pub fn summarize_sweep(samples: &[SweepSample]) -> Result<BoundSweepReport> {
    let rank_prob: Vec<f64> = samples.iter().map(|s| rank_prob_gap(&s.stats)).collect();
    let entropy: Vec<f64> = samples
        .iter()
        .map(|s| expected_rank_entropy_gap(&s.stats))
        .collect();
    Ok(BoundSweepReport {
        rank_prob: gap_statistics(&rank_prob)?,
        expected_rank_entropy: gap_statistics(&entropy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{token_stats, XiMode};

    fn stats_for(probs: Vec<f64>, target: usize) -> TokenStats {
        let dist = TokenDistribution::from_probs(probs).unwrap();
        TokenStats::from_distribution(&dist, target, ScaleConfig::default()).unwrap()
    }

    #[test]
    fn rank_prob_gap_examples() {
        assert_eq!(rank_prob_gap(&stats_for(vec![1.0, 0.0], 0)), 0.0);
        let s = token_stats(&[0.0; 6], 3, XiMode::Max).unwrap();
        assert_eq!(s.rank, 6);
        assert!(rank_prob_gap(&s).abs() < 1e-15);
        let g = rank_prob_gap(&stats_for(vec![0.5, 0.4, 0.1], 1));
        assert!((g - 0.1).abs() < 1e-15);
    }

    #[test]
    fn entropy_gap_examples() {
        assert_eq!(expected_rank_entropy_gap(&stats_for(vec![1.0, 0.0], 0)), 0.0);
        let g = expected_rank_entropy_gap(&stats_for(vec![0.25; 4], 0));
        assert!((g - 0.1).abs() < 1e-12);
        let g = expected_rank_entropy_gap(&stats_for(vec![0.5, 0.5], 0));
        assert!(g.abs() < 1e-15);
    }

    #[test]
    fn geometric_entropy_examples() {
        assert_eq!(geometric_maxent_entropy(2.0).unwrap(), 2.0);
        assert!((geometric_maxent_entropy(5.0).unwrap() - 3.609_640_474_436_812).abs() < 1e-12);
        assert_eq!(phi(2.0), 2.0);
        assert!((phi(1e7) - std::f64::consts::LOG2_E).abs() < 1e-6);
        assert!(geometric_maxent_entropy(1.0).is_err());
        assert!(geometric_maxent_entropy(0.5).is_err());
        // finite near the lower end
        assert!(geometric_maxent_entropy(1.0 + 1e-12).unwrap() < 1e-9);
    }

    #[test]
    fn fano_examples() {
        assert_eq!(fano_entropy_cap(1.0, 7).unwrap(), 0.0);
        assert_eq!(fano_entropy_cap(0.5, 2).unwrap(), 1.0);
        assert!((fano_entropy_cap(0.5, 5).unwrap() - 2.0).abs() < 1e-15);
        assert!(fano_entropy_cap(0.1, 5).is_err());

        assert!((fano_inverse(0.0, 9).unwrap() - 1.0).abs() < 1e-10);
        assert!((fano_inverse(1.0, 2).unwrap() - 0.5).abs() < 1e-8);
        assert!((fano_inverse(2.0, 5).unwrap() - 0.5).abs() < 1e-10);
        assert!(fano_inverse(2.5, 5).is_err());
        assert!(fano_inverse(-0.1, 5).is_err());
        assert!((fano_expected_rank_bound(2.0, 5).unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn gap_statistics_examples() {
        let r = gap_statistics(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((r.mean, r.median, r.std, r.p80, r.p90), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.violations, 0);

        let r = gap_statistics(&[0.5, 0.1, 0.4, 0.2, 0.3]).unwrap();
        assert!((r.mean - 0.3).abs() < 1e-15);
        assert_eq!(r.median, 0.3);
        assert_eq!(r.p80, 0.4);
        assert_eq!(r.p90, 0.5);
        assert_eq!(r.count, 5);

        let r = gap_statistics(&[-1e-6, 0.1]).unwrap();
        assert_eq!(r.violations, 1);
        assert!(gap_statistics(&[]).is_err());
    }

    #[test]
    fn cmvt_witness_lies_inside() {
        let xi = cmvt_witness(1.0, 3.0, 1e-12).unwrap();
        assert!(xi > 1.0 && xi < 3.0);
        let xi = cmvt_witness(40.0, 2.5, 1e-12).unwrap();
        assert!(xi > 2.5 && xi < 40.0);
        assert!(cmvt_witness(2.0, 2.0, 1e-12).is_none());
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = SweepConfig::new(50, 11);
        let a = summarize_sweep(&random_sweep(&cfg)).unwrap();
        let b = summarize_sweep(&random_sweep(&cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.violations(), 0);
    }
}

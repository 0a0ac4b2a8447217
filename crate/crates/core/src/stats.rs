//! Per-token statistics over one decoding step.
//!
//! Everything here is a pure function of a logit (or probability) vector and
//! the index of the ground-truth token. Entropies are in bits; the only
//! natural-log quantity in the crate is the EAFT top-k entropy in
//! [`crate::weighting`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before logs and negative powers.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default ceiling on the Relative Scale.
pub const DEFAULT_SCALE_CEILING: f64 = 100.0;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Below this distance the logarithmic mean falls back to the arithmetic mean.
const LOG_MEAN_FALLBACK: f64 = 1e-9;

/// A normalized distribution over the vocabulary together with its descending
/// sort order. Ties in probability keep ascending vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
    sort_index: Vec<usize>,
}

impl TokenDistribution {
    /// Numerically stable softmax followed by a descending sort.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::VocabTooSmall(logits.len()));
        }
        if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { index, value });
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self::with_sorted(probs))
    }

    /// Wraps an explicit probability vector, validating that it is normalized.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::VocabTooSmall(probs.len()));
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::invalid(
                "probs",
                format!("entry {index} = {value} is not a probability"),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self::with_sorted(probs))
    }

    fn with_sorted(probs: Vec<f64>) -> Self {
        let mut sort_index: Vec<usize> = (0..probs.len()).collect();
        sort_index.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        Self { probs, sort_index }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Maps rank position (0-based) to vocabulary index.
    pub fn sort_index(&self) -> &[usize] {
        &self.sort_index
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, index: usize) -> Result<f64> {
        self.probs
            .get(index)
            .copied()
            .ok_or(Error::TargetOutOfRange {
                target: index,
                vocab_size: self.probs.len(),
            })
    }

    pub fn p_max(&self) -> f64 {
        self.probs[self.sort_index[0]]
    }

    /// Probabilities in descending order.
    pub fn sorted_probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.sort_index.iter().map(|&i| self.probs[i])
    }

    /// Shannon entropy in bits, with `0 log 0 = 0`.
    pub fn entropy_bits(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.max(PROB_FLOOR).log2())
            .sum::<f64>()
    }

    /// Guessing cost when guessing in descending-probability order.
    pub fn expected_rank(&self) -> f64 {
        self.sorted_probs()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// Rank by probability using the same `>=` count as [`rank_of`].
    pub fn rank_of(&self, target: usize) -> Result<usize> {
        count_at_least(&self.probs, target)
    }
}

pub fn normalize_and_sort(logits: &[f64]) -> Result<TokenDistribution> {
    TokenDistribution::from_logits(logits)
}

pub fn entropy_bits(dist: &TokenDistribution) -> f64 {
    dist.entropy_bits()
}

pub fn expected_rank(dist: &TokenDistribution) -> f64 {
    dist.expected_rank()
}

/// Number of logits greater than or equal to the target's logit, the target
/// included. Ties count against the target.
pub fn rank_of(logits: &[f64], target: usize) -> Result<usize> {
    count_at_least(logits, target)
}

fn count_at_least(values: &[f64], target: usize) -> Result<usize> {
    let pivot = *values.get(target).ok_or(Error::TargetOutOfRange {
        target,
        vocab_size: values.len(),
    })?;
    Ok(values.iter().filter(|&&v| v >= pivot).count())
}

/// Entropy-induced lower bound on the expected rank.
///
/// `¼·2^H + 1` for `H >= 2`, otherwise `2 - p_max`. The two branches do not
/// meet at `H = 2`; the jump is intentional.
pub fn support_term(entropy_bits: f64, p_max: f64) -> f64 {
    if entropy_bits >= 2.0 {
        0.25 * entropy_bits.exp2() + 1.0
    } else {
        2.0 - p_max
    }
}

/// `f(x) = 1 / log2(x + 1)`, the decreasing rank transform.
pub fn rank_transform(x: f64) -> f64 {
    1.0 / (x + 1.0).log2()
}

/// Full Cauchy mean-value coefficient `ξ / ((ξ+1)·log2(ξ+1)²)`.
pub fn k_full(xi: f64) -> Result<f64> {
    check_xi(xi)?;
    let l = (xi + 1.0).log2();
    Ok(xi / ((xi + 1.0) * l * l))
}

/// Coefficient with the `ξ/(ξ+1)` factor dropped: `log2(ξ+1)^-2`.
pub fn k_simplified(xi: f64) -> Result<f64> {
    check_xi(xi)?;
    Ok(k_simplified_unchecked(xi))
}

fn k_simplified_unchecked(xi: f64) -> f64 {
    let l = (xi + 1.0).log2();
    1.0 / (l * l)
}

fn check_xi(xi: f64) -> Result<()> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("xi", format!("must be positive and finite, got {xi}")))
    }
}

/// How the intermediate value ξ is approximated from a rank and its companion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XiMode {
    #[default]
    Max,
    Arithmetic,
    Geometric,
    Logarithmic,
}

impl XiMode {
    pub const ALL: [XiMode; 4] = [
        XiMode::Max,
        XiMode::Arithmetic,
        XiMode::Geometric,
        XiMode::Logarithmic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            XiMode::Max => "max",
            XiMode::Arithmetic => "arithmetic",
            XiMode::Geometric => "geometric",
            XiMode::Logarithmic => "logarithmic",
        }
    }
}

impl fmt::Display for XiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for XiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        XiMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "xi_mode",
                    format!("unknown mode `{s}` (expected max|arithmetic|geometric|logarithmic)"),
                )
            })
    }
}

/// Approximates ξ from the realized rank and a companion value: `s(H)` on the
/// scale path, `E[R]` on the indicator path.
pub fn xi_estimate(rank: f64, companion: f64, mode: XiMode) -> f64 {
    match mode {
        XiMode::Max => rank.max(companion),
        XiMode::Arithmetic => 0.5 * (rank + companion),
        XiMode::Geometric => (rank * companion).sqrt(),
        XiMode::Logarithmic => {
            if (rank - companion).abs() < LOG_MEAN_FALLBACK {
                0.5 * (rank + companion)
            } else {
                (rank - companion) / (rank.ln() - companion.ln())
            }
        }
    }
}

/// `2^(f(R) - f(E[R]))`. Above 1 the token ranks better than expected.
pub fn relative_rank_indicator(rank: f64, expected_rank: f64) -> f64 {
    (rank_transform(rank) - rank_transform(expected_rank)).exp2()
}

/// Knobs of the Relative Scale computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConfig {
    pub mode: XiMode,
    pub ceiling: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            mode: XiMode::Max,
            ceiling: DEFAULT_SCALE_CEILING,
        }
    }
}

impl ScaleConfig {
    pub fn with_mode(mode: XiMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Relative Scale `(p·s(H))^(-K(ξ))` with the simplified coefficient, clamped
/// to the default ceiling.
pub fn relative_scale(p: f64, entropy_bits: f64, p_max: f64, rank: usize, mode: XiMode) -> f64 {
    relative_scale_with(p, entropy_bits, p_max, rank, ScaleConfig::with_mode(mode))
}

pub fn relative_scale_with(
    p: f64,
    entropy_bits: f64,
    p_max: f64,
    rank: usize,
    config: ScaleConfig,
) -> f64 {
    let support = support_term(entropy_bits, p_max);
    let xi = xi_estimate(rank as f64, support, config.mode);
    scale_from_parts(p.max(PROB_FLOOR), support, k_simplified_unchecked(xi), config.ceiling)
}

fn scale_from_parts(p: f64, support: f64, k: f64, ceiling: f64) -> f64 {
    (p * support).powf(-k).min(ceiling)
}

/// Everything computed for one response token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenStats {
    /// Ground-truth probability, floored at [`PROB_FLOOR`].
    pub p: f64,
    pub rank: usize,
    pub entropy_bits: f64,
    pub p_max: f64,
    pub expected_rank: f64,
    pub support_term: f64,
    pub xi: f64,
    pub k_coeff: f64,
    pub indicator: f64,
    pub scale: f64,
}

impl TokenStats {
    /// Statistics for a distribution whose ground-truth token has the given rank.
    pub fn compute(dist: &TokenDistribution, target: usize, rank: usize, config: ScaleConfig) -> Result<Self> {
        let p = dist.prob(target)?.max(PROB_FLOOR);
        let p_max = dist.p_max().max(PROB_FLOOR);
        let entropy_bits = dist.entropy_bits();
        let expected_rank = dist.expected_rank();
        let support_term = support_term(entropy_bits, p_max);
        let xi = xi_estimate(rank as f64, support_term, config.mode);
        let k_coeff = k_simplified_unchecked(xi);
        Ok(Self {
            p,
            rank,
            entropy_bits,
            p_max,
            expected_rank,
            support_term,
            xi,
            k_coeff,
            indicator: relative_rank_indicator(rank as f64, expected_rank),
            scale: scale_from_parts(p, support_term, k_coeff, config.ceiling),
        })
    }

    /// Same as [`token_stats`] but for a distribution given as probabilities;
    /// the rank is counted on probabilities.
    pub fn from_distribution(dist: &TokenDistribution, target: usize, config: ScaleConfig) -> Result<Self> {
        let rank = dist.rank_of(target)?;
        Self::compute(dist, target, rank, config)
    }

    /// `(p·s(H))^K`, the conservative stand-in for the indicator.
    pub fn indicator_surrogate(&self) -> f64 {
        (self.p * self.support_term).powf(self.k_coeff)
    }

    /// Negative log-likelihood of the target in nats.
    pub fn nll(&self) -> f64 {
        -self.p.ln()
    }
}

pub fn token_stats(logits: &[f64], target: usize, mode: XiMode) -> Result<TokenStats> {
    token_stats_with(logits, target, ScaleConfig::with_mode(mode))
}

pub fn token_stats_with(logits: &[f64], target: usize, config: ScaleConfig) -> Result<TokenStats> {
    let dist = TokenDistribution::from_logits(logits)?;
    let rank = rank_of(logits, target)?;
    TokenStats::compute(&dist, target, rank, config)
}

//! Token-weight registry and the weighted NLL objective.
//!
//! Every scheme maps a frozen snapshot of one token's statistics to a scalar
//! weight; weights never carry gradient. Token losses `ℓ_t = -ln p_t` are in
//! nats, while the entropy fed to `s(H)` stays in bits.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{TokenDistribution, TokenStats, XiMode, PROB_FLOOR};

pub const DEFAULT_OVERTONE_LAMBDA: f64 = 0.1;
pub const DEFAULT_EAFT_TOPK: usize = 20;
pub const DEFAULT_EAFT_LNK: f64 = 3.0;
pub const DEFAULT_TALR_FLOOR: f64 = 0.01;

/// Base weight multiplied by the Relative Scale in the RankTuner scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialWeight {
    /// `w0 = p`, suited to sharp corpora such as math reasoning.
    #[default]
    Prob,
    /// `w0 = 1`, suited to diffuse, general-purpose corpora.
    Uniform,
}

impl InitialWeight {
    pub fn as_str(self) -> &'static str {
        match self {
            InitialWeight::Prob => "prob",
            InitialWeight::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for InitialWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" => Ok(InitialWeight::Prob),
            "uniform" => Ok(InitialWeight::Uniform),
            other => Err(Error::invalid(
                "initial",
                format!("unknown initial weight `{other}` (expected prob|uniform)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Sft,
    /// Skip-gated discrete reweighting: `λ` on tokens the model already ranks first.
    OverTone { lambda: f64 },
    Dft,
    Eaft { topk: usize, lnk_approx: f64 },
    Talr { floor: f64 },
    RankTuner { initial: InitialWeight, mode: XiMode },
}

impl WeightScheme {
    pub const NAMES: [&'static str; 6] = ["sft", "overtone", "dft", "eaft", "talr", "ranktuner"];

    /// The scheme with its default hyperparameters.
    pub fn by_name(name: &str) -> Result<Self> {
        let scheme = match name {
            "sft" => WeightScheme::Sft,
            "overtone" => WeightScheme::OverTone {
                lambda: DEFAULT_OVERTONE_LAMBDA,
            },
            "dft" => WeightScheme::Dft,
            "eaft" => WeightScheme::Eaft {
                topk: DEFAULT_EAFT_TOPK,
                lnk_approx: DEFAULT_EAFT_LNK,
            },
            "talr" => WeightScheme::Talr {
                floor: DEFAULT_TALR_FLOOR,
            },
            "ranktuner" => WeightScheme::RankTuner {
                initial: InitialWeight::Prob,
                mode: XiMode::Max,
            },
            other => {
                return Err(Error::Config {
                    field: "scheme".into(),
                    reason: format!(
                        "unknown scheme `{other}` (expected one of {})",
                        Self::NAMES.join("|")
                    ),
                })
            }
        };
        Ok(scheme)
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Sft => "sft",
            WeightScheme::OverTone { .. } => "overtone",
            WeightScheme::Dft => "dft",
            WeightScheme::Eaft { .. } => "eaft",
            WeightScheme::Talr { .. } => "talr",
            WeightScheme::RankTuner { .. } => "ranktuner",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        match *self {
            WeightScheme::OverTone { lambda } if !(lambda > 0.0 && lambda <= 1.0) => {
                bad("lambda", format!("must lie in (0, 1], got {lambda}"))
            }
            WeightScheme::Eaft { topk, .. } if topk < 2 => {
                bad("topk", format!("must be at least 2, got {topk}"))
            }
            WeightScheme::Eaft { lnk_approx, .. } if !(lnk_approx > 0.0 && lnk_approx.is_finite()) => {
                bad("lnk_approx", format!("must be positive, got {lnk_approx}"))
            }
            WeightScheme::Talr { floor } if !(floor > 0.0 && floor < 1.0) => {
                bad("floor", format!("must lie in (0, 1), got {floor}"))
            }
            _ => Ok(()),
        }
    }

    /// ξ approximation used when computing the Relative Scale for this scheme.
    pub fn xi_mode(&self) -> XiMode {
        match *self {
            WeightScheme::RankTuner { mode, .. } => mode,
            _ => XiMode::Max,
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::OverTone { lambda } => write!(f, "overtone(lambda={lambda})"),
            WeightScheme::Eaft { topk, lnk_approx } => {
                write!(f, "eaft(topk={topk}, lnk_approx={lnk_approx})")
            }
            WeightScheme::Talr { floor } => write!(f, "talr(floor={floor})"),
            WeightScheme::RankTuner { initial, mode } => {
                write!(f, "ranktuner(initial={}, xi_mode={mode})", initial.as_str())
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Batch-level inputs some schemes need beyond the token itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchContext {
    /// Mean token NLL of each sequence in the batch.
    pub seq_avg_losses: Vec<f64>,
}

impl BatchContext {
    pub fn new(seq_avg_losses: Vec<f64>) -> Self {
        Self { seq_avg_losses }
    }
}

/// TALR temperature: lower median of the per-sequence average losses.
pub fn talr_temperature(ctx: &BatchContext) -> Result<f64> {
    if ctx.seq_avg_losses.is_empty() {
        return Err(Error::Empty("TALR batch context"));
    }
    if let Some(bad) = ctx.seq_avg_losses.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid(
            "seq_avg_losses",
            format!("losses must be positive and finite, got {bad}"),
        ));
    }
    let mut sorted = ctx.seq_avg_losses.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Natural-log entropy of the renormalized top-k probabilities. A `topk`
/// larger than the vocabulary keeps the whole distribution.
pub fn eaft_topk_entropy(dist: &TokenDistribution, topk: usize) -> Result<f64> {
    if topk == 0 {
        return Err(Error::invalid("topk", "must be positive"));
    }
    let head: Vec<f64> = dist.sorted_probs().take(topk).collect();
    let mass: f64 = head.iter().sum();
    Ok(-head
        .iter()
        .map(|p| p / mass)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>())
}

/// Weight of one token under `scheme`. `dist` is the token's predictive
/// distribution (only EAFT reads it beyond `stats`).
pub fn token_weight(
    scheme: &WeightScheme,
    stats: &TokenStats,
    dist: &TokenDistribution,
    ctx: &BatchContext,
) -> Result<f64> {
    let w = match *scheme {
        WeightScheme::Sft => 1.0,
        WeightScheme::OverTone { lambda } => {
            if stats.p == stats.p_max {
                lambda
            } else {
                1.0
            }
        }
        WeightScheme::Dft => stats.p,
        WeightScheme::Eaft { topk, lnk_approx } => eaft_topk_entropy(dist, topk)? / lnk_approx,
        WeightScheme::Talr { floor } => {
            let tau = talr_temperature(ctx)?;
            stats.p.powf(1.0 / tau).max(floor)
        }
        WeightScheme::RankTuner { initial, .. } => {
            let base = match initial {
                InitialWeight::Prob => stats.p,
                InitialWeight::Uniform => 1.0,
            };
            base * stats.scale
        }
    };
    Ok(w)
}

/// `(1/T)·Σ w_t·ℓ_t`.
pub fn weighted_nll(token_losses: &[f64], weights: &[f64]) -> Result<f64> {
    if token_losses.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: token_losses.len(),
            right: weights.len(),
        });
    }
    if token_losses.is_empty() {
        return Err(Error::Empty("token losses"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::invalid("weights", format!("negative weight {w}")));
    }
    let total: f64 = token_losses.iter().zip(weights).map(|(l, w)| w * l).sum();
    Ok(total / token_losses.len() as f64)
}

/// Token NLL in nats with the probability floor applied.
pub fn token_nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Loss as a function of the ground-truth probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossShape {
    /// `f(p) = -ln p`
    Log,
    /// `f(p) = -p`
    Linear,
    /// `f(p) = (1 - p^α)/α`
    AlphaPower(f64),
}

impl LossShape {
    pub fn value(&self, p: f64) -> f64 {
        match *self {
            LossShape::Log => -p.ln(),
            LossShape::Linear => -p,
            LossShape::AlphaPower(alpha) => (1.0 - p.powf(alpha)) / alpha,
        }
    }
}

/// Normalized logit-gradient magnitude `W_f(p) = -f'(p)·p·(1-p)`.
pub fn logit_gradient_magnitude(shape: LossShape, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    let w = match shape {
        LossShape::Log => 1.0 - p,
        LossShape::Linear => p * (1.0 - p),
        LossShape::AlphaPower(alpha) => {
            if !(alpha > 0.0) {
                return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
            }
            p.powf(alpha) * (1.0 - p)
        }
    };
    Ok(w)
}

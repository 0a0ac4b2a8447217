//! Tabular n-gram language model trained with manual gradients.
//!
//! The model is a table of logits indexed by the previous `context_order`
//! tokens. Each training step snapshots per-token statistics from the forward
//! pass, turns them into weights with the configured scheme, and takes one
//! gradient-descent step on the weighted NLL with those weights held fixed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::bounds::sample_index;
use crate::error::{Error, Result};
use crate::stats::{ScaleConfig, TokenDistribution, TokenStats, DEFAULT_SCALE_CEILING};
use crate::weighting::{token_weight, BatchContext, InitialWeight, WeightScheme};

pub const MIN_VOCAB: usize = 16;
pub const MAX_VOCAB: usize = 256;

/// Default sampling temperature of the inference-entropy probe.
pub const DEFAULT_PROBE_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLM {
    vocab_size: usize,
    context_order: usize,
    params: Vec<f64>,
    seed: u64,
}

impl ToyLM {
    /// All-zero logits, i.e. a uniform predictor in every context.
    pub fn zeros(vocab_size: usize, context_order: usize) -> Result<Self> {
        check_shape(vocab_size, context_order)?;
        Ok(Self {
            vocab_size,
            context_order,
            params: vec![0.0; vocab_size.pow(context_order as u32 + 1)],
            seed: 0,
        })
    }

    /// Logits drawn i.i.d. from `N(0, scale²)`.
    pub fn random(vocab_size: usize, context_order: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(vocab_size, context_order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            let z: f64 = rng.sample(StandardNormal);
            *p = scale * z;
        }
        model.seed = seed;
        Ok(model)
    }

    pub fn from_params(vocab_size: usize, context_order: usize, params: Vec<f64>, seed: u64) -> Result<Self> {
        check_shape(vocab_size, context_order)?;
        let expected = vocab_size.pow(context_order as u32 + 1);
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: expected,
            });
        }
        if let Some((index, &value)) = params.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { index, value });
        }
        Ok(Self {
            vocab_size,
            context_order,
            params,
            seed,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn context_states(&self) -> usize {
        self.vocab_size.pow(self.context_order as u32)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major `[context_states, vocab_size]` logits.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Context state predicting `tokens[position]`: the previous
    /// `context_order` tokens in base `vocab_size`, left-padded with token 0.
    pub fn context_of(&self, tokens: &[usize], position: usize) -> usize {
        (0..self.context_order).fold(0, |state, back| {
            let offset = self.context_order - back;
            let token = position.checked_sub(offset).map_or(0, |i| tokens[i]);
            state * self.vocab_size + token
        })
    }

    /// Logit row for one context state.
    pub fn forward(&self, context: usize) -> Result<&[f64]> {
        if context >= self.context_states() {
            return Err(Error::invalid(
                "context",
                format!("state {context} out of range 0..{}", self.context_states()),
            ));
        }
        let v = self.vocab_size;
        Ok(&self.params[context * v..(context + 1) * v])
    }

    fn row_mut(&mut self, context: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.params[context * v..(context + 1) * v]
    }
}

fn check_shape(vocab_size: usize, context_order: usize) -> Result<()> {
    if !(MIN_VOCAB..=MAX_VOCAB).contains(&vocab_size) {
        return Err(Error::invalid(
            "vocab_size",
            format!("must lie in {MIN_VOCAB}..={MAX_VOCAB}, got {vocab_size}"),
        ));
    }
    if !(1..=2).contains(&context_order) {
        return Err(Error::invalid(
            "context_order",
            format!("must be 1 or 2, got {context_order}"),
        ));
    }
    Ok(())
}

/// One prompt/response pair. Loss is taken on positions `>= prompt_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub token_ids: Vec<usize>,
    pub prompt_len: usize,
    /// Half-open token interval of an inserted noise segment.
    pub noise_span: Option<(usize, usize)>,
}

impl CorpusRecord {
    pub fn new(token_ids: Vec<usize>, prompt_len: usize) -> Result<Self> {
        let record = Self {
            token_ids,
            prompt_len,
            noise_span: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_len > self.token_ids.len() {
            return Err(Error::invalid(
                "prompt_len",
                format!("{} exceeds record length {}", self.prompt_len, self.token_ids.len()),
            ));
        }
        if let Some((start, end)) = self.noise_span {
            if !(self.prompt_len <= start && start < end && end <= self.token_ids.len()) {
                return Err(Error::invalid(
                    "noise_span",
                    format!("[{start}, {end}) outside response region"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn response_len(&self) -> usize {
        self.token_ids.len() - self.prompt_len
    }

    pub fn response_positions(&self) -> std::ops::Range<usize> {
        self.prompt_len..self.token_ids.len()
    }

    pub fn prompt(&self) -> &[usize] {
        &self.token_ids[..self.prompt_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusShape {
    pub context_order: usize,
    pub prompt_len: usize,
    pub response_len: usize,
}

impl Default for CorpusShape {
    fn default() -> Self {
        Self {
            context_order: 1,
            prompt_len: 4,
            response_len: 12,
        }
    }
}

/// Records together with the n-gram source that generated them.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub source: ToyLM,
    pub records: Vec<CorpusRecord>,
}

impl SyntheticCorpus {
    /// Mean entropy in bits of the source's next-token distributions.
    pub fn mean_source_entropy(&self) -> f64 {
        let states = self.source.context_states();
        (0..states)
            .map(|s| {
                let row = self.source.forward(s).expect("state in range");
                TokenDistribution::from_logits(row)
                    .expect("finite source logits")
                    .entropy_bits()
            })
            .sum::<f64>()
            / states as f64
    }
}

/// Corpus from a random n-gram source with logits `sharpness · N(0, 1)`; larger
/// sharpness gives lower per-context entropy.
pub fn synth_corpus(vocab_size: usize, n_records: usize, sharpness: f64, seed: u64) -> Result<SyntheticCorpus> {
    synth_corpus_with(vocab_size, n_records, sharpness, seed, CorpusShape::default())
}

pub fn synth_corpus_with(
    vocab_size: usize,
    n_records: usize,
    sharpness: f64,
    seed: u64,
    shape: CorpusShape,
) -> Result<SyntheticCorpus> {
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(Error::invalid(
            "sharpness",
            format!("must be positive, got {sharpness}"),
        ));
    }
    let source = ToyLM::random(vocab_size, shape.context_order, sharpness, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let length = shape.prompt_len + shape.response_len;
    let records = (0..n_records)
        .map(|_| {
            let mut tokens = Vec::with_capacity(length);
            for position in 0..length {
                let row = source.forward(source.context_of(&tokens, position))?;
                let dist = TokenDistribution::from_logits(row)?;
                tokens.push(sample_index(&mut rng, dist.probs()));
            }
            CorpusRecord::new(tokens, shape.prompt_len)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { source, records })
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub scheme: WeightScheme,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scale_ceiling: f64,
}

impl TrainConfig {
    pub fn new(scheme: WeightScheme) -> Self {
        Self {
            scheme,
            learning_rate: 1.0,
            steps: 200,
            batch_size: 8,
            seed: 0,
            scale_ceiling: DEFAULT_SCALE_CEILING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.scale_ceiling > 0.0) {
            return bad("scale_ceiling", format!("must be positive, got {}", self.scale_ceiling));
        }
        Ok(())
    }

    pub fn scale_config(&self) -> ScaleConfig {
        ScaleConfig {
            mode: self.scheme.xi_mode(),
            ceiling: self.scale_ceiling,
        }
    }

    /// Parses the plain-text `key = value` config format.
    ///
    /// ```text
    /// scheme = "ranktuner"
    /// initial = "prob"
    /// xi_mode = "max"
    /// learning_rate = 0.5
    /// steps = 200
    /// batch_size = 8
    /// seed = 7
    /// ```
    pub fn from_config_str(text: &str) -> Result<Self> {
        let raw: RawTrainConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .and_then(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<config>".into()),
            reason: e.message().to_string(),
        })?;
        raw.into_config()
    }

    pub fn to_config_string(&self) -> String {
        let mut out = format!("scheme = \"{}\"\n", self.scheme.name());
        match self.scheme {
            WeightScheme::OverTone { lambda } => out += &format!("lambda = {lambda:?}\n"),
            WeightScheme::Eaft { topk, lnk_approx } => {
                out += &format!("topk = {topk}\nlnk_approx = {lnk_approx:?}\n")
            }
            WeightScheme::Talr { floor } => out += &format!("floor = {floor:?}\n"),
            WeightScheme::RankTuner { initial, mode } => {
                out += &format!("initial = \"{}\"\nxi_mode = \"{mode}\"\n", initial.as_str())
            }
            WeightScheme::Sft | WeightScheme::Dft => {}
        }
        out += &format!(
            "learning_rate = {:?}\nsteps = {}\nbatch_size = {}\nseed = {}\nscale_ceiling = {:?}\n",
            self.learning_rate, self.steps, self.batch_size, self.seed, self.scale_ceiling
        );
        out
    }
}

/// Key of the `key = value` line containing byte offset `at`.
fn key_at(text: &str, at: usize) -> Option<String> {
    let start = text[..at.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    (!key.is_empty()).then(|| key.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrainConfig {
    scheme: String,
    learning_rate: Option<f64>,
    steps: Option<i64>,
    batch_size: Option<i64>,
    seed: Option<u64>,
    scale_ceiling: Option<f64>,
    lambda: Option<f64>,
    topk: Option<i64>,
    lnk_approx: Option<f64>,
    floor: Option<f64>,
    initial: Option<String>,
    xi_mode: Option<String>,
}

impl RawTrainConfig {
    fn into_config(self) -> Result<TrainConfig> {
        let field_err = |field: &str, reason: String| Error::Config {
            field: field.into(),
            reason,
        };
        let mut scheme = WeightScheme::by_name(&self.scheme)?;
        match &mut scheme {
            WeightScheme::OverTone { lambda } => {
                if let Some(v) = self.lambda {
                    *lambda = v;
                }
            }
            WeightScheme::Eaft { topk, lnk_approx } => {
                if let Some(v) = self.topk {
                    *topk = usize::try_from(v)
                        .map_err(|_| field_err("topk", format!("must be positive, got {v}")))?;
                }
                if let Some(v) = self.lnk_approx {
                    *lnk_approx = v;
                }
            }
            WeightScheme::Talr { floor } => {
                if let Some(v) = self.floor {
                    *floor = v;
                }
            }
            WeightScheme::RankTuner { initial, mode } => {
                if let Some(v) = &self.initial {
                    *initial = v
                        .parse::<InitialWeight>()
                        .map_err(|e| field_err("initial", e.to_string()))?;
                }
                if let Some(v) = &self.xi_mode {
                    *mode = v.parse().map_err(|e: Error| field_err("xi_mode", e.to_string()))?;
                }
            }
            WeightScheme::Sft | WeightScheme::Dft => {}
        }
        let count = |field: &str, value: Option<i64>, default: usize| -> Result<usize> {
            match value {
                None => Ok(default),
                Some(v) => usize::try_from(v)
                    .map_err(|_| field_err(field, format!("must be nonnegative, got {v}"))),
            }
        };
        let defaults = TrainConfig::new(scheme);
        let config = TrainConfig {
            scheme,
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            steps: count("steps", self.steps, defaults.steps)?,
            batch_size: count("batch_size", self.batch_size, defaults.batch_size)?,
            seed: self.seed.unwrap_or(defaults.seed),
            scale_ceiling: self.scale_ceiling.unwrap_or(defaults.scale_ceiling),
        };
        config.validate()?;
        Ok(config)
    }
}

/// One response token of a batch with its frozen weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerm {
    pub record: usize,
    pub position: usize,
    pub context: usize,
    pub target: usize,
    pub weight: f64,
    pub stats: TokenStats,
}

/// Forward-pass snapshot of a batch: per-token statistics and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBatch {
    pub terms: Vec<TokenTerm>,
}

impl FrozenBatch {
    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.weight).collect()
    }
}

/// Runs the forward pass and computes every token's weight under `scheme`.
pub fn freeze_batch(
    model: &ToyLM,
    batch: &[CorpusRecord],
    scheme: &WeightScheme,
    scale: ScaleConfig,
) -> Result<FrozenBatch> {
    struct Pending {
        record: usize,
        position: usize,
        context: usize,
        target: usize,
        stats: TokenStats,
        dist: TokenDistribution,
    }
    let mut pending = Vec::new();
    let mut seq_avg_losses = Vec::new();
    for (record_index, record) in batch.iter().enumerate() {
        let mut seq_loss = 0.0;
        for position in record.response_positions() {
            let target = record.token_ids[position];
            if target >= model.vocab_size() {
                return Err(Error::TargetOutOfRange {
                    target,
                    vocab_size: model.vocab_size(),
                });
            }
            let context = model.context_of(&record.token_ids, position);
            let row = model.forward(context)?;
            let dist = TokenDistribution::from_logits(row)?;
            let rank = crate::stats::rank_of(row, target)?;
            let stats = TokenStats::compute(&dist, target, rank, scale)?;
            seq_loss += log_softmax_nll(row, target);
            pending.push(Pending {
                record: record_index,
                position,
                context,
                target,
                stats,
                dist,
            });
        }
        if record.response_len() > 0 {
            // TALR's temperature needs strictly positive sequence losses.
            seq_avg_losses.push((seq_loss / record.response_len() as f64).max(f64::MIN_POSITIVE));
        }
    }
    let ctx = BatchContext::new(seq_avg_losses);
    let terms = pending
        .into_iter()
        .map(|t| {
            Ok(TokenTerm {
                record: t.record,
                position: t.position,
                context: t.context,
                target: t.target,
                weight: token_weight(scheme, &t.stats, &t.dist, &ctx)?,
                stats: t.stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrozenBatch { terms })
}

/// `logsumexp(row) - row[target]`.
fn log_softmax_nll(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - row[target]
}

/// Sparse gradient keyed by context state.
pub type Gradient = BTreeMap<usize, Vec<f64>>;

/// Weighted NLL `(1/T)·Σ w_t·ℓ_t` and its gradient with respect to the logit
/// table, treating the weights in `frozen` as constants.
pub fn weighted_loss_and_gradient(model: &ToyLM, frozen: &FrozenBatch) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::new();
    if frozen.terms.is_empty() {
        return Ok((0.0, grad));
    }
    let inv_t = 1.0 / frozen.terms.len() as f64;
    let mut loss = 0.0;
    for term in &frozen.terms {
        let row = model.forward(term.context)?;
        loss += term.weight * log_softmax_nll(row, term.target);
        let dist = TokenDistribution::from_logits(row)?;
        let scale = term.weight * inv_t;
        let g = grad
            .entry(term.context)
            .or_insert_with(|| vec![0.0; model.vocab_size()]);
        for (gi, p) in g.iter_mut().zip(dist.probs()) {
            *gi += scale * p;
        }
        g[term.target] -= scale;
    }
    Ok((loss * inv_t, grad))
}

pub fn gradient_norm(grad: &Gradient) -> f64 {
    grad.values()
        .flat_map(|row| row.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Per-step telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_weight: f64,
    pub mean_scale: f64,
    pub mean_entropy: f64,
}

pub const TELEMETRY_CSV_HEADER: &str = "step,loss,grad_norm,mean_weight,mean_scale,mean_entropy";

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss, self.grad_norm, self.mean_weight, self.mean_scale, self.mean_entropy
        )
    }
}

/// One gradient-descent step on the weighted NLL. The returned loss and
/// gradient norm are measured before the update.
pub fn train_step(model: &mut ToyLM, batch: &[CorpusRecord], config: &TrainConfig) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let frozen = freeze_batch(model, batch, &config.scheme, config.scale_config())?;
    let (loss, grad) = weighted_loss_and_gradient(model, &frozen)?;
    for (&context, g) in &grad {
        for (p, gi) in model.row_mut(context).iter_mut().zip(g) {
            *p -= config.learning_rate * gi;
        }
    }
    let n = frozen.terms.len().max(1) as f64;
    let mean = |f: fn(&TokenTerm) -> f64| frozen.terms.iter().map(f).sum::<f64>() / n;
    Ok(StepReport {
        step: 0,
        loss,
        grad_norm: gradient_norm(&grad),
        mean_weight: mean(|t| t.weight),
        mean_scale: mean(|t| t.stats.scale),
        mean_entropy: mean(|t| t.stats.entropy_bits),
    })
}

/// Runs `config.steps` steps on batches sampled with replacement from
/// `records`, calling `on_step` after each.
pub fn train(
    model: &mut ToyLM,
    records: &[CorpusRecord],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Vec<StepReport>> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::with_capacity(config.steps);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        batch.extend(
            (0..config.batch_size).map(|_| records[rng.random_range(0..records.len())].clone()),
        );
        let mut report = train_step(model, &batch, config)?;
        report.step = step;
        on_step(&report);
        reports.push(report);
    }
    Ok(reports)
}

/// Average entropy (bits) of the temperature-scaled predictive distribution
/// along sampled continuations of each prompt.
pub fn inference_entropy(
    model: &ToyLM,
    prompts: &[Vec<usize>],
    n_samples: usize,
    gen_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(
            "temperature",
            format!("must be positive, got {temperature}"),
        ));
    }
    if prompts.is_empty() || n_samples == 0 || gen_len == 0 {
        return Err(Error::Empty("inference probe"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut scaled = vec![0.0; model.vocab_size()];
    for prompt in prompts {
        for _ in 0..n_samples {
            let mut tokens = prompt.clone();
            for _ in 0..gen_len {
                let position = tokens.len();
                let row = model.forward(model.context_of(&tokens, position))?;
                for (s, z) in scaled.iter_mut().zip(row) {
                    *s = z / temperature;
                }
                let dist = TokenDistribution::from_logits(&scaled)?;
                total += dist.entropy_bits();
                count += 1;
                tokens.push(sample_index(&mut rng, dist.probs()));
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let model = ToyLM::zeros(16, 1).unwrap();
        let d = TokenDistribution::from_logits(model.forward(3).unwrap()).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
        assert!(model.forward(16).is_err());

        let mut model = ToyLM::zeros(16, 1).unwrap();
        model.row_mut(2)[5] = 50.0;
        let d = TokenDistribution::from_logits(model.forward(2).unwrap()).unwrap();
        assert!(d.probs()[5] > 1.0 - 1e-12);

        let a = ToyLM::random(16, 2, 1.0, 9).unwrap();
        let b = ToyLM::random(16, 2, 1.0, 9).unwrap();
        assert_eq!(a.forward(100).unwrap(), b.forward(100).unwrap());
        assert!(ToyLM::zeros(8, 1).is_err());
        assert!(ToyLM::zeros(16, 3).is_err());
    }

    #[test]
    fn context_encoding() {
        let model = ToyLM::zeros(16, 2).unwrap();
        let tokens = [3, 7, 11];
        assert_eq!(model.context_of(&tokens, 0), 0);
        assert_eq!(model.context_of(&tokens, 1), 3);
        assert_eq!(model.context_of(&tokens, 2), 3 * 16 + 7);
        assert_eq!(model.context_of(&tokens, 3), 7 * 16 + 11);
    }

    #[test]
    fn corpus_limits_and_determinism() {
        let sharp = synth_corpus(16, 4, 1e4, 1).unwrap();
        let diffuse = synth_corpus(16, 4, 1e-3, 1).unwrap();
        assert!(sharp.mean_source_entropy() < 0.1);
        assert!((diffuse.mean_source_entropy() - 4.0).abs() < 1e-3);
        let again = synth_corpus(16, 4, 1e4, 1).unwrap();
        assert_eq!(sharp.records, again.records);
        assert!(synth_corpus(16, 4, 0.0, 1).is_err());
    }

    #[test]
    fn zero_weight_scheme_leaves_model_unchanged() {
        let corpus = synth_corpus(16, 4, 1.0, 3).unwrap();
        let mut model = ToyLM::random(16, 1, 0.5, 4).unwrap();
        let frozen = {
            let mut f = freeze_batch(&model, &corpus.records, &WeightScheme::Sft, ScaleConfig::default()).unwrap();
            for t in &mut f.terms {
                t.weight = 0.0;
            }
            f
        };
        let (loss, grad) = weighted_loss_and_gradient(&model, &frozen).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(gradient_norm(&grad), 0.0);
        let before = model.clone();
        for (&c, g) in &grad {
            for (p, gi) in model.row_mut(c).iter_mut().zip(g) {
                *p -= gi;
            }
        }
        assert_eq!(before, model);
    }

    #[test]
    fn sft_single_token_gradient() {
        let model = ToyLM::zeros(16, 1).unwrap();
        let record = CorpusRecord::new(vec![2, 9], 1).unwrap();
        let frozen = freeze_batch(&model, &[record], &WeightScheme::Sft, ScaleConfig::default()).unwrap();
        let (_, grad) = weighted_loss_and_gradient(&model, &frozen).unwrap();
        let row = &grad[&2];
        for (i, g) in row.iter().enumerate() {
            let want = if i == 9 { 1.0 / 16.0 - 1.0 } else { 1.0 / 16.0 };
            assert!((g - want).abs() < 1e-15, "index {i}: {g} vs {want}");
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = TrainConfig::from_config_str(
            "scheme = \"ranktuner\"\ninitial = \"uniform\"\nxi_mode = \"geometric\"\nsteps = 5\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(
            cfg.scheme,
            WeightScheme::RankTuner { initial: InitialWeight::Uniform, mode: crate::XiMode::Geometric }
        );
        assert_eq!(TrainConfig::from_config_str(&cfg.to_config_string()).unwrap(), cfg);

        let err = TrainConfig::from_config_str("scheme = \"sft\"\nsteps = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "steps"), "{err}");
        let err = TrainConfig::from_config_str("scheme = \"overtone\"\nlambda = 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "lambda"), "{err}");
        let err = TrainConfig::from_config_str("scheme = \"bogus\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "scheme"), "{err}");
    }

    #[test]
    fn inference_entropy_limits() {
        let uniform = ToyLM::zeros(16, 1).unwrap();
        let h = inference_entropy(&uniform, &[vec![1, 2]], 3, 4, 0.2, 5).unwrap();
        assert!((h - 4.0).abs() < 1e-12);

        let mut peaked = ToyLM::zeros(16, 1).unwrap();
        for c in 0..16 {
            peaked.row_mut(c)[(c + 1) % 16] = 100.0;
        }
        let h = inference_entropy(&peaked, &[vec![0]], 2, 5, 0.2, 5).unwrap();
        assert!(h.abs() < 1e-9);

        let model = ToyLM::random(16, 1, 1.0, 2).unwrap();
        let a = inference_entropy(&model, &[vec![3]], 4, 6, 0.7, 11).unwrap();
        let b = inference_entropy(&model, &[vec![3]], 4, 6, 0.7, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(inference_entropy(&model, &[vec![3]], 4, 6, 0.0, 11).is_err());
    }
}

//! Noise-insertion sensitivity protocol and combinatorial Pass@k.
//!
//! Top-K selections at both token and sequence level break score ties by
//! ascending index.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::LogitDumpRecord;
use crate::stats::{ScaleConfig, TokenDistribution, TokenStats};
use crate::trainer::{CorpusRecord, ToyLM};

/// Slack used when turning `ρ·N` into an integer count.
const COUNT_EPS: f64 = 1e-9;

fn ceil_count(rho: f64, n: usize) -> usize {
    ((rho * n as f64) - COUNT_EPS).ceil().max(0.0) as usize
}

/// Token-importance signal under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    /// Entropy `H` (bits).
    EntropyDominant,
    /// `-ln p`.
    ProbDominant,
    /// `1 / I`, the inverse Relative Rank Indicator.
    Ours,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [
        ScoreMethod::EntropyDominant,
        ScoreMethod::ProbDominant,
        ScoreMethod::Ours,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::EntropyDominant => "entropy_dominant",
            ScoreMethod::ProbDominant => "prob_dominant",
            ScoreMethod::Ours => "ours",
        }
    }

    pub fn score(self, stats: &TokenStats) -> f64 {
        match self {
            ScoreMethod::EntropyDominant => stats.entropy_bits,
            ScoreMethod::ProbDominant => -stats.p.ln(),
            ScoreMethod::Ours => 1.0 / stats.indicator,
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "scorer",
                    format!("unknown scorer `{s}` (expected entropy_dominant|prob_dominant|ours)"),
                )
            })
    }
}

pub fn indicator_scores(method: ScoreMethod, stats: &[TokenStats]) -> Vec<f64> {
    stats.iter().map(|s| method.score(s)).collect()
}

/// Indices of the `k` largest scores, ties broken by ascending index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Precision and recall of injected-noise tokens among the top `⌈ρ·|T|⌉`
/// scored response tokens.
pub fn token_noise_pr(scores: &[f64], noise_mask: &[bool], rho: f64) -> Result<(f64, f64)> {
    if scores.len() != noise_mask.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: noise_mask.len(),
        });
    }
    let noise = noise_mask.iter().filter(|&&m| m).count();
    if noise == 0 {
        return Err(Error::invalid("noise_mask", "contains no noise tokens"));
    }
    check_rho(rho)?;
    let k = ceil_count(rho, scores.len()).max(1);
    let hits = top_k_indices(scores, k)
        .into_iter()
        .filter(|&i| noise_mask[i])
        .count();
    Ok((hits as f64 / k as f64, hits as f64 / noise as f64))
}

/// Number of corrupted records among the top `⌈ρ·N⌉` records by span score.
pub fn sequence_hit(span_scores: &[f64], corrupted: &BTreeSet<usize>, rho: f64) -> usize {
    let k = ceil_count(rho, span_scores.len()).max(1);
    top_k_indices(span_scores, k)
        .into_iter()
        .filter(|i| corrupted.contains(i))
        .count()
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("rho", format!("must lie in (0, 1), got {rho}")))
    }
}

/// A corpus with noise spliced into a subset of its responses.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseExperiment {
    pub records: Vec<CorpusRecord>,
    pub corrupted: BTreeSet<usize>,
    /// Scoring span of every record: the inserted noise for corrupted records,
    /// a length-matched mid-response span otherwise.
    pub spans: Vec<(usize, usize)>,
    pub rho: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct ManifestLine {
    record_id: usize,
    corrupted: bool,
    span_start: usize,
    span_end: usize,
}

impl NoiseExperiment {
    /// One JSON object per record: id, corruption flag, span bounds.
    pub fn manifest_lines(&self) -> Vec<String> {
        self.spans
            .iter()
            .enumerate()
            .map(|(id, &span)| manifest_line(id, self.corrupted.contains(&id), span))
            .collect()
    }
}

/// Manifest entry `{"record_id":..,"corrupted":..,"span_start":..,"span_end":..}`.
pub fn manifest_line(record_id: usize, corrupted: bool, span: (usize, usize)) -> String {
    serde_json::to_string(&ManifestLine {
        record_id,
        corrupted,
        span_start: span.0,
        span_end: span.1,
    })
    .expect("plain struct serializes")
}

/// `len` tokens centred in the response of `record`.
pub fn mid_span(prompt_len: usize, response_len: usize, len: usize) -> (usize, usize) {
    let len = len.min(response_len);
    let start = prompt_len + (response_len - len) / 2;
    (start, start + len)
}

/// Corrupts `round(ρ·N)` seeded-random records by splicing a noise segment
/// from `noise_pool` at the token nearest the response midpoint.
///
/// A pool segment is drawn for every record in order; clean records use its
/// length for their mid-span, so span lengths match in distribution.
pub fn insert_noise(
    clean: &[CorpusRecord],
    noise_pool: &[Vec<usize>],
    rho: f64,
    seed: u64,
) -> Result<NoiseExperiment> {
    check_rho(rho)?;
    if clean.is_empty() {
        return Err(Error::Empty("clean corpus"));
    }
    if noise_pool.is_empty() {
        return Err(Error::Empty("noise pool"));
    }
    if noise_pool.iter().any(Vec::is_empty) {
        return Err(Error::invalid("noise_pool", "contains an empty segment"));
    }
    let n = clean.len();
    let n_corrupt = (rho * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corrupted: BTreeSet<usize> = index::sample(&mut rng, n, n_corrupt).into_iter().collect();

    let mut records = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(n);
    for (i, record) in clean.iter().enumerate() {
        record.validate()?;
        let segment = &noise_pool[rng.random_range(0..noise_pool.len())];
        if corrupted.contains(&i) {
            let at = record.prompt_len + record.response_len() / 2;
            let mut tokens = Vec::with_capacity(record.len() + segment.len());
            tokens.extend_from_slice(&record.token_ids[..at]);
            tokens.extend_from_slice(segment);
            tokens.extend_from_slice(&record.token_ids[at..]);
            let span = (at, at + segment.len());
            records.push(CorpusRecord {
                token_ids: tokens,
                prompt_len: record.prompt_len,
                noise_span: Some(span),
            });
            spans.push(span);
        } else {
            spans.push(mid_span(record.prompt_len, record.response_len(), segment.len()));
            records.push(record.clone());
        }
    }
    Ok(NoiseExperiment {
        records,
        corrupted,
        spans,
        rho,
        seed,
    })
}

/// `count` segments of 3 to 6 tokens drawn uniformly from the vocabulary.
pub fn random_noise_pool(vocab_size: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(3..=6);
            (0..len).map(|_| rng.random_range(0..vocab_size)).collect()
        })
        .collect()
}

/// Response-token statistics of one record plus its scoring span.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub prompt_len: usize,
    /// Statistics of positions `prompt_len..`.
    pub stats: Vec<TokenStats>,
    pub span: (usize, usize),
    pub corrupted: bool,
}

/// Scores every response token of `experiment` with a fixed model.
pub fn score_with_model(model: &ToyLM, experiment: &NoiseExperiment, scale: ScaleConfig) -> Result<Vec<ScoredRecord>> {
    experiment
        .records
        .iter()
        .zip(&experiment.spans)
        .enumerate()
        .map(|(i, (record, &span))| {
            let stats = record
                .response_positions()
                .map(|t| {
                    let row = model.forward(model.context_of(&record.token_ids, t))?;
                    let target = record.token_ids[t];
                    let dist = TokenDistribution::from_logits(row)?;
                    let rank = crate::stats::rank_of(row, target)?;
                    TokenStats::compute(&dist, target, rank, scale)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoredRecord {
                prompt_len: record.prompt_len,
                stats,
                span,
                corrupted: experiment.corrupted.contains(&i),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMetrics {
    pub method: ScoreMethod,
    pub tok_prec: f64,
    pub tok_rec: f64,
    pub seq_hit: usize,
}

pub const NOISE_CSV_HEADER: &str = "method,tok_prec,tok_rec,seq_hit,rho,seed";

impl NoiseMetrics {
    pub fn csv_row(&self, rho: f64, seed: u64) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method, self.tok_prec, self.tok_rec, self.seq_hit, rho, seed
        )
    }
}

/// Token- and sequence-level noise metrics for one scorer.
pub fn evaluate_noise(records: &[ScoredRecord], rho: f64, method: ScoreMethod) -> Result<NoiseMetrics> {
    let mut scores = Vec::new();
    let mut mask = Vec::new();
    let mut span_scores = Vec::with_capacity(records.len());
    let mut corrupted = BTreeSet::new();
    for (i, record) in records.iter().enumerate() {
        let token_scores = indicator_scores(method, &record.stats);
        let (start, end) = record.span;
        for (offset, &s) in token_scores.iter().enumerate() {
            let t = record.prompt_len + offset;
            scores.push(s);
            mask.push(record.corrupted && (start..end).contains(&t));
        }
        let in_span: Vec<f64> = (start..end)
            .filter_map(|t| t.checked_sub(record.prompt_len))
            .filter_map(|o| token_scores.get(o).copied())
            .collect();
        span_scores.push(if in_span.is_empty() {
            f64::NEG_INFINITY
        } else {
            in_span.iter().sum::<f64>() / in_span.len() as f64
        });
        if record.corrupted {
            corrupted.insert(i);
        }
    }
    let (tok_prec, tok_rec) = token_noise_pr(&scores, &mask, rho)?;
    Ok(NoiseMetrics {
        method,
        tok_prec,
        tok_rec,
        seq_hit: sequence_hit(&span_scores, &corrupted, rho),
    })
}

/// Hand-constructed corpus separating the three scorers.
///
/// Ten records over an 8-token vocabulary with two prompt tokens each. Three
/// kinds of response rows appear:
///
/// - easy: logits `[6, 0, ..]`, target ranked first, low entropy;
/// - hard: logits `[6, 3, 0, ..]`, target ranked second, low entropy;
/// - noise: uniform logits, target ranked last by the tie rule, 3 bits.
///
/// Record 3 is corrupted with four noise tokens spliced into the middle of
/// its eight-token response. Records 7 and 8 carry four hard tokens inside
/// their mid-span; all other response tokens are easy.
pub fn micro_fixture() -> Vec<(LogitDumpRecord, (usize, usize), bool)> {
    const V: usize = 8;
    const PROMPT: usize = 2;
    const CORRUPTED: usize = 3;
    let easy = || {
        let mut z = vec![0.0; V];
        z[0] = 6.0;
        (z, 0)
    };
    let hard = || {
        let mut z = vec![0.0; V];
        z[0] = 6.0;
        z[1] = 3.0;
        (z, 1)
    };
    let noise = || (vec![0.0; V], 5);

    (0..10)
        .map(|i| {
            let mut rows: Vec<(Vec<f64>, usize)> = (0..PROMPT).map(|_| easy()).collect();
            let (span, corrupted) = if i == CORRUPTED {
                rows.extend((0..4).map(|_| easy()));
                rows.extend((0..4).map(|_| noise()));
                rows.extend((0..4).map(|_| easy()));
                ((PROMPT + 4, PROMPT + 8), true)
            } else {
                let span = mid_span(PROMPT, 8, 4);
                for t in PROMPT..PROMPT + 8 {
                    let in_span = (span.0..span.1).contains(&t);
                    rows.push(if (i == 7 || i == 8) && in_span { hard() } else { easy() });
                }
                (span, false)
            };
            let (logits, targets) = rows.into_iter().unzip();
            let record = LogitDumpRecord {
                record_id: format!("micro-{i}"),
                prompt_len: PROMPT,
                targets,
                logits,
            };
            (record, span, corrupted)
        })
        .collect()
}

/// Scores the micro fixture's logit rows.
pub fn score_micro_fixture(scale: ScaleConfig) -> Result<Vec<ScoredRecord>> {
    micro_fixture()
        .into_iter()
        .map(|(record, span, corrupted)| {
            Ok(ScoredRecord {
                prompt_len: record.prompt_len,
                stats: record.response_stats(scale)?,
                span,
                corrupted,
            })
        })
        .collect()
}

/// Per-problem correctness of `n` sampled solutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMatrix {
    rows: Vec<Vec<bool>>,
}

impl CorrectnessMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or(Error::Empty("correctness matrix"))?;
        if n == 0 {
            return Err(Error::Empty("correctness row"));
        }
        if let Some((line, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Parse {
                line: line + 1,
                reason: format!("ragged row: {} samples, expected {n}", row.len()),
            });
        }
        Ok(Self { rows })
    }

    /// One problem per nonblank line of `0`/`1` flags, optionally separated by
    /// commas or whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::Parse {
                        line: i + 1,
                        reason: format!("unexpected character `{other}`"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((i + 1, row));
        }
        let n = rows.first().map(|(_, r)| r.len());
        if let Some((line, row)) = rows.iter().find(|(_, r)| Some(r.len()) != n) {
            return Err(Error::Parse {
                line: *line,
                reason: format!("ragged row: {} samples, expected {}", row.len(), n.unwrap_or(0)),
            });
        }
        Self::new(rows.into_iter().map(|(_, r)| r).collect())
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn samples(&self) -> usize {
        self.rows[0].len()
    }

    pub fn correct_counts(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(|r| r.iter().filter(|&&c| c).count())
    }
}

/// `C(n, k)` or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc·(n-i) is divisible by (i+1)
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// Passing and total `k`-subsets summed over problems:
/// each problem contributes `C(n,k) - C(n-c,k)` of `C(n,k)`.
pub fn pass_at_k_counts(matrix: &CorrectnessMatrix, k: usize) -> Result<(u128, u128)> {
    let n = matrix.samples();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must lie in 1..={n}, got {k}")));
    }
    let overflow = || Error::invalid("k", format!("C({n}, {k}) overflows"));
    let total_per = binomial(n, k).ok_or_else(overflow)?;
    let mut passing: u128 = 0;
    let mut total: u128 = 0;
    for c in matrix.correct_counts() {
        let failing = binomial(n - c, k).ok_or_else(overflow)?;
        passing = passing.checked_add(total_per - failing).ok_or_else(overflow)?;
        total = total.checked_add(total_per).ok_or_else(overflow)?;
    }
    Ok((passing, total))
}

/// Pass@k as a percentage over all problems.
pub fn pass_at_k(matrix: &CorrectnessMatrix, k: usize) -> Result<f64> {
    let (passing, total) = pass_at_k_counts(matrix, k)?;
    Ok(100.0 * passing as f64 / total as f64)
}

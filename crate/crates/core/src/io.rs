//! File formats: line-delimited logit dumps, CSV schemas and model snapshots.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{rank_of, ScaleConfig, TokenDistribution, TokenStats};
use crate::trainer::ToyLM;

/// First line of every CSV the crate writes, naming the schema and version.
pub fn schema_comment(kind: &str) -> String {
    format!("# ranktuner {kind} v1")
}

pub const STATS_CSV_HEADER: &str =
    "record_id,position,p,rank,entropy_bits,expected_rank,support_term,xi,k_coeff,indicator,scale";

/// One sequence of per-position logits with its targets.
///
/// Stored as one JSON object per line:
/// `{"record_id": "a", "prompt_len": 1, "targets": [0, 2], "logits": [[..], [..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitDumpRecord {
    pub record_id: String,
    pub prompt_len: usize,
    pub targets: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

impl LogitDumpRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Record {
                record: self.record_id.clone(),
                reason,
            })
        };
        if self.targets.len() != self.logits.len() {
            return bad(format!(
                "{} targets but {} logit rows",
                self.targets.len(),
                self.logits.len()
            ));
        }
        if self.prompt_len > self.targets.len() {
            return bad(format!(
                "prompt_len {} exceeds sequence length {}",
                self.prompt_len,
                self.targets.len()
            ));
        }
        let vocab = self.logits.first().map_or(0, Vec::len);
        for (position, (row, &target)) in self.logits.iter().zip(&self.targets).enumerate() {
            if row.len() != vocab {
                return bad(format!(
                    "row {position} has {} logits, expected {vocab}",
                    row.len()
                ));
            }
            if target >= vocab {
                return bad(format!(
                    "target {target} at position {position} exceeds vocabulary size {vocab}"
                ));
            }
        }
        Ok(())
    }

    /// Statistics of every response position (`>= prompt_len`).
    pub fn response_stats(&self, scale: ScaleConfig) -> Result<Vec<TokenStats>> {
        self.validate()?;
        (self.prompt_len..self.targets.len())
            .map(|t| {
                let row = &self.logits[t];
                let target = self.targets[t];
                let dist = TokenDistribution::from_logits(row).map_err(|e| Error::Record {
                    record: self.record_id.clone(),
                    reason: format!("position {t}: {e}"),
                })?;
                TokenStats::compute(&dist, target, rank_of(row, target)?, scale)
            })
            .collect()
    }
}

/// Parses a line-delimited dump. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_logit_dump(text: &str) -> Result<Vec<LogitDumpRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<LogitDumpRecord>(line).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_logit_dump<W: Write>(mut out: W, records: &[LogitDumpRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn stats_csv_row(record_id: &str, position: usize, s: &TokenStats) -> String {
    format!(
        "{record_id},{position},{},{},{},{},{},{},{},{},{}",
        s.p, s.rank, s.entropy_bits, s.expected_rank, s.support_term, s.xi, s.k_coeff, s.indicator, s.scale
    )
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"RTLM";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes `magic, version, vocab_size, context_order, seed` (little endian)
/// followed by the row-major parameters as `f64`.
pub fn write_snapshot<W: Write>(mut out: W, model: &ToyLM) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&(model.vocab_size() as u32).to_le_bytes())?;
    out.write_all(&(model.context_order() as u32).to_le_bytes())?;
    out.write_all(&model.seed().to_le_bytes())?;
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<ToyLM> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::invalid("snapshot", "bad magic"));
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |input: &mut R| -> Result<u32> {
        input.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = read_u32(&mut input)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::invalid("snapshot", format!("unsupported version {version}")));
    }
    let vocab = read_u32(&mut input)? as usize;
    let order = read_u32(&mut input)? as usize;
    let mut long = [0u8; 8];
    input.read_exact(&mut long)?;
    let seed = u64::from_le_bytes(long);
    let count = vocab
        .checked_pow(order as u32 + 1)
        .filter(|_| order <= 2)
        .ok_or_else(|| Error::invalid("snapshot", "implausible dimensions"))?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut long)?;
        params.push(f64::from_le_bytes(long));
    }
    ToyLM::from_params(vocab, order, params, seed)
}

//! N-best files: one tab-separated line per hypothesis,
//! `utt_id  rank  log_likelihood  normalized_score  text`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NBestRecord {
    pub utt_id: String,
    /// 1-based.
    pub rank: usize,
    pub log_likelihood: f64,
    pub score: f64,
    pub text: String,
}

pub fn write_nbest(path: &Path, records: &[NBestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        if r.utt_id.contains(['\t', '\n']) || r.text.contains(['\t', '\n']) {
            return Err(Error::format("n-best", format!("record {} contains a tab or newline", r.utt_id)));
        }
        out.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\t{}\n", r.utt_id, r.rank, r.log_likelihood, r.score, r.text));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format("n-best", format!("line {}: {what}", n + 1));
        let cols: Vec<&str> = line.splitn(5, '\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        records.push(NBestRecord {
            utt_id: cols[0].to_string(),
            rank: cols[1].parse().map_err(|_| bad("rank"))?,
            log_likelihood: cols[2].parse().map_err(|_| bad("log-likelihood"))?,
            score: cols[3].parse().map_err(|_| bad("score"))?,
            text: cols[4].to_string(),
        });
    }
    Ok(records)
}

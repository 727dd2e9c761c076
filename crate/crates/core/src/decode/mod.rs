//! Beam search, ensembles and coupled ASR/MT inference.

mod coupled;
mod ensemble;
mod nbest;

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::EOS;

pub use coupled::{
    coupled_decode, select_pair, AsrSide, Combination, CoupledResult, DecodeOptions, MtSide, Recipe, Systems,
};
pub use ensemble::{ensemble_step, AsrScorer, EnsembleSpec, MtScorer, StepScorer};
pub use nbest::{read_nbest, write_nbest, NBestRecord};

/// `log_likelihood / length^alpha`.
pub fn length_normalize(log_likelihood: f64, length: usize, alpha: f64) -> f64 {
    log_likelihood / (length.max(1) as f64).powf(alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends in eos when finished.
    pub tokens: Vec<u32>,
    pub log_likelihood: f64,
    /// Log-probability of each generated token.
    pub step_log_probs: Vec<f64>,
    /// Decoder-top states, one row per token, when recorded.
    pub states: Option<Tensor>,
    pub finished: bool,
    /// Set when max_len was reached before any hypothesis finished.
    pub truncated: bool,
}

impl Hypothesis {
    /// Tokens without the trailing eos.
    pub fn body(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn score(&self, alpha: f64) -> f64 {
        length_normalize(self.log_likelihood, self.tokens.len(), alpha)
    }
}

/// Hypotheses ranked best first by normalized score.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
    pub alpha: f64,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Higher score first; on ties the shorter, then lexicographically smaller sequence.
fn rank(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

/// Upper bound on the normalized score of any completion of a prefix.
fn optimistic(ll: f64, max_len: usize, alpha: f64) -> f64 {
    if alpha >= 0.0 {
        length_normalize(ll, max_len, alpha)
    } else {
        ll
    }
}

struct Partial {
    tokens: Vec<u32>,
    log_probs: Vec<f64>,
    ll: f64,
}

/// Length-synchronized beam search.
///
/// At each step the active beams' next-token distributions form one
/// `active x vocab` matrix; the best `beam` expansions of the flattened
/// matrix survive. Those ending in eos are set aside as finished, the
/// rest stay active. Search stops when nothing is active, when `max_len`
/// tokens have been generated, or when `beam` hypotheses have finished and
/// no active one can still overtake the best of them: a continuation of
/// a prefix with log-likelihood `ll` scores at most `ll / max_len^alpha`.
pub fn beam_search(scorer: &mut dyn StepScorer, beam: usize, max_len: usize, alpha: f64) -> Result<NBestList> {
    if beam == 0 || max_len == 0 {
        return Err(Error::InvalidArgument("beam and max_len must be at least 1".into()));
    }
    let vocab = scorer.vocab_size();
    let mut active = vec![Partial { tokens: Vec::new(), log_probs: Vec::new(), ll: 0.0 }];
    let mut finished: Vec<Partial> = Vec::new();

    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        if finished.len() >= beam {
            let best_done = finished.iter().map(|p| length_normalize(p.ll, p.tokens.len(), alpha)).fold(f64::NEG_INFINITY, f64::max);
            let best_open = active.iter().map(|p| optimistic(p.ll, max_len, alpha)).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_open {
                break;
            }
        }
        let budget = beam;
        let prefixes: Vec<&[u32]> = active.iter().map(|p| p.tokens.as_slice()).collect();
        let dists = scorer.next_log_probs(&prefixes)?;
        if dists.len() != active.len() || dists.iter().any(|d| d.len() != vocab) {
            return Err(Error::shape("beam_search", "scorer returned a distribution of the wrong size"));
        }
        // beam x vocab score matrix, flattened
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(active.len() * vocab);
        for (b, dist) in dists.iter().enumerate() {
            for (v, &lp) in dist.iter().enumerate() {
                let s = active[b].ll + lp;
                if s.is_finite() {
                    candidates.push((s, b, v));
                } else if s.is_nan() {
                    return Err(Error::NonFinite { op: "beam_search" });
                }
            }
        }
        let order = |x: &(f64, usize, usize), y: &(f64, usize, usize)| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| active[x.1].tokens.cmp(&active[y.1].tokens))
                .then(x.2.cmp(&y.2))
        };
        if candidates.len() > budget {
            candidates.select_nth_unstable_by(budget - 1, order);
            candidates.truncate(budget);
        }
        candidates.sort_by(order);

        let mut next = Vec::with_capacity(candidates.len());
        for (s, b, v) in candidates {
            let parent = &active[b];
            let mut tokens = parent.tokens.clone();
            tokens.push(v as u32);
            let mut log_probs = parent.log_probs.clone();
            log_probs.push(dists[b][v]);
            let p = Partial { tokens, log_probs, ll: s };
            if v as u32 == EOS {
                finished.push(p);
            } else {
                next.push(p);
            }
        }
        active = next;
    }

    let truncated = finished.is_empty();
    let pool = if truncated { active } else { finished };
    let mut hypotheses: Vec<Hypothesis> = pool
        .into_iter()
        .map(|p| Hypothesis {
            finished: !truncated,
            truncated,
            tokens: p.tokens,
            log_likelihood: p.ll,
            step_log_probs: p.log_probs,
            states: None,
        })
        .collect();
    hypotheses.sort_by(|a, b| rank(a.score(alpha), &a.tokens, b.score(alpha), &b.tokens));
    hypotheses.truncate(beam);
    if hypotheses.is_empty() {
        return Err(Error::Empty("beam search produced no hypothesis".into()));
    }
    Ok(NBestList { hypotheses, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scorer defined by a closure over the prefix.
    struct FnScorer<F: FnMut(&[u32]) -> Vec<f64>>(usize, F);

    impl<F: FnMut(&[u32]) -> Vec<f64>> StepScorer for FnScorer<F> {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes.iter().map(|p| (self.1)(p)).collect())
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(length_normalize(-10.0, 5, 1.0), -2.0);
        assert_eq!(length_normalize(-10.0, 5, 0.0), -10.0);
        let short = length_normalize(-6.0, 4, 0.3);
        let long = length_normalize(-6.0, 8, 0.3);
        assert!((short + 3.959).abs() < 1e-3, "{short}");
        assert!((long + 3.215).abs() < 1e-3, "{long}");
        assert!(long > short);
    }

    #[test]
    fn deterministic_scorer_yields_its_sequence() {
        let path = [5u32, 4, 6, EOS];
        let mut s = FnScorer(8, |p: &[u32]| {
            let mut d = vec![f64::NEG_INFINITY; 8];
            d[path[p.len()] as usize] = 0.0;
            d
        });
        let n = beam_search(&mut s, 4, 10, 1.0).unwrap();
        assert_eq!(n.len(), 1);
        let h = n.best().unwrap();
        assert_eq!(h.tokens, path);
        assert_eq!(h.log_likelihood, 0.0);
        assert!(h.finished && !h.truncated);
        assert_eq!(h.body(), &path[..3]);
    }

    #[test]
    fn unfinished_search_is_flagged_truncated() {
        let mut s = FnScorer(5, |_: &[u32]| {
            let mut d = vec![f64::NEG_INFINITY; 5];
            d[4] = 0.0;
            d
        });
        let n = beam_search(&mut s, 2, 3, 0.0).unwrap();
        let h = n.best().unwrap();
        assert_eq!(h.tokens, [4, 4, 4]);
        assert!(h.truncated && !h.finished);
    }

    #[test]
    fn bad_arguments() {
        let mut s = FnScorer(4, |_: &[u32]| vec![-1.0; 4]);
        assert!(beam_search(&mut s, 0, 3, 0.0).is_err());
        assert!(beam_search(&mut s, 2, 0, 0.0).is_err());
        let mut nan = FnScorer(4, |_: &[u32]| vec![f64::NAN; 4]);
        assert!(beam_search(&mut nan, 2, 3, 0.0).is_err());
    }
}

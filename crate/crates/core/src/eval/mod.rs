//! Word error rate, per-talk corpus BLEU and MWER re-segmentation.

mod report;
mod segment;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use report::{read_references, write_references, Reference, Table};
pub use segment::{mwer_segment, SegmentationResult};

/// One step of an alignment; indices point into reference and hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Hit(usize, usize),
    Sub(usize, usize),
    Del(usize),
    Ins(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EditAlignment {
    pub hits: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ops: Vec<AlignOp>,
}

impl EditAlignment {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn reference_len(&self) -> usize {
        self.hits + self.substitutions + self.deletions
    }

    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len() as f64
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=reference.len()).collect();
    for h in hypothesis {
        let mut diag = row[0];
        row[0] += 1;
        for (j, r) in reference.iter().enumerate() {
            let next = (diag + usize::from(r != h)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[reference.len()]
}

/// Minimum-edit alignment. Among equal-cost paths the backtrace prefers
/// hit, then substitution, then deletion, then insertion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<EditAlignment> {
    if reference.is_empty() {
        return Err(Error::Empty("reference".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut a = EditAlignment::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[i][j] == d[i - 1][j - 1] {
            a.hits += 1;
            a.ops.push(AlignOp::Hit(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            a.substitutions += 1;
            a.ops.push(AlignOp::Sub(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            a.deletions += 1;
            a.ops.push(AlignOp::Del(i - 1));
            i -= 1;
        } else {
            a.insertions += 1;
            a.ops.push(AlignOp::Ins(j - 1));
            j -= 1;
        }
    }
    a.ops.reverse();
    Ok(a)
}

/// Reference/hypothesis text pairs from one talk.
#[derive(Clone, Debug)]
pub struct Talk {
    pub id: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalkBleu {
    pub talk: String,
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hypothesis_len: usize,
    pub reference_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub talks: Vec<TalkBleu>,
    /// Unweighted mean of the per-talk scores.
    pub mean: f64,
}

/// Corpus BLEU of one talk (whitespace tokens, 4-gram).
///
/// `p1` is the clipped unigram precision. For `n >= 2`, one is added to
/// both the clipped match count and the n-gram total. Brevity penalty is
/// `exp(1 - r/c)` when the hypothesis corpus is shorter than the reference.
pub fn talk_bleu(talk: &Talk) -> Result<TalkBleu> {
    if talk.pairs.is_empty() {
        return Err(Error::Empty(format!("talk {}", talk.id)));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (reference, hypothesis) in &talk.pairs {
        let rw: Vec<&str> = reference.split_whitespace().collect();
        let hw: Vec<&str> = hypothesis.split_whitespace().collect();
        c += hw.len();
        r += rw.len();
        for n in 1..=4 {
            let mut rc: HashMap<&[&str], usize> = HashMap::new();
            for g in rw.windows(n) {
                *rc.entry(g).or_insert(0) += 1;
            }
            let mut hc: HashMap<&[&str], usize> = HashMap::new();
            for g in hw.windows(n) {
                *hc.entry(g).or_insert(0) += 1;
            }
            matches[n - 1] += hc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
            totals[n - 1] += hw.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    precisions[0] = if totals[0] == 0 { 0.0 } else { matches[0] as f64 / totals[0] as f64 };
    for n in 1..4 {
        precisions[n] = (matches[n] + 1) as f64 / (totals[n] + 1) as f64;
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions[0] == 0.0 {
        0.0
    } else {
        100.0 * bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(TalkBleu { talk: talk.id.clone(), bleu, precisions, brevity_penalty: bp, hypothesis_len: c, reference_len: r })
}

pub fn corpus_bleu(talks: &[Talk]) -> Result<BleuReport> {
    if talks.is_empty() {
        return Err(Error::Empty("talk list".into()));
    }
    let talks = talks.iter().map(talk_bleu).collect::<Result<Vec<_>>>()?;
    let mean = talks.iter().map(|t| t.bleu).sum::<f64>() / talks.len() as f64;
    Ok(BleuReport { talks, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn talk(pairs: &[(&str, &str)]) -> Talk {
        Talk { id: "t".into(), pairs: pairs.iter().map(|(r, h)| (r.to_string(), h.to_string())).collect() }
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&w("a b c"), &w("a b c")).unwrap().wer(), 0.0);
        let a = wer(&w("a b c"), &w("a x c")).unwrap();
        assert_eq!((a.substitutions, a.insertions, a.deletions), (1, 0, 0));
        assert!((a.wer() - 1.0 / 3.0).abs() < 1e-12);
        let a = wer(&w("a"), &w("a b c")).unwrap();
        assert_eq!((a.hits, a.insertions), (1, 2));
        assert_eq!(a.wer(), 2.0);
        assert!(wer::<&str>(&[], &w("a")).is_err());
        let a = wer(&w("a b"), &[]).unwrap();
        assert_eq!(a.deletions, 2);
    }

    #[test]
    fn tie_break_prefers_substitution_over_indel() {
        // "a b" vs "c": one sub + one del either way; the sub is taken at the end
        let a = wer(&w("a b"), &w("c")).unwrap();
        assert_eq!(a.ops, vec![AlignOp::Del(0), AlignOp::Sub(1, 0)]);
    }

    #[test]
    fn bleu_hand_computed() {
        // p = 4/5, 4/5, 3/4, 2/3; BP 1
        let b = talk_bleu(&talk(&[("a b c d", "a b c d e")])).unwrap();
        let expected = 100.0 * (0.8f64 * 0.8 * 0.75 * (2.0 / 3.0)).powf(0.25);
        assert!((b.bleu - expected).abs() < 1e-9);
        assert!((b.bleu - 75.2121).abs() < 1e-4, "{}", b.bleu);

        // short hypothesis: c=2, r=4; p = 1, 2/2, 1/1, 1/1
        let b = talk_bleu(&talk(&[("a b c d", "a b")])).unwrap();
        assert!((b.brevity_penalty - (-1f64).exp()).abs() < 1e-12);
        assert!((b.bleu - 36.7879).abs() < 1e-4, "{}", b.bleu);

        // no unigram match
        assert_eq!(talk_bleu(&talk(&[("a b", "c d")])).unwrap().bleu, 0.0);

        // two pairs pooled: matches (3,1,0,0) totals (4,2,0,0); r=4, c=4
        let b = talk_bleu(&talk(&[("a b", "a b"), ("c d", "c x")])).unwrap();
        let expected = 100.0 * (0.75f64 * (2.0 / 3.0) * 1.0 * 1.0).powf(0.25);
        assert!((b.bleu - expected).abs() < 1e-9);
        assert!((b.bleu - 84.0896).abs() < 1e-4, "{}", b.bleu);

        // repeated words are clipped: p1 = 2/4
        let b = talk_bleu(&talk(&[("the cat the mat", "the the the the")])).unwrap();
        assert_eq!(b.precisions[0], 0.5);
        assert!((b.bleu - 100.0 * (0.5f64 * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0)).powf(0.25)).abs() < 1e-9);
        assert!((b.bleu - 37.9918).abs() < 1e-4, "{}", b.bleu);
    }

    #[test]
    fn bleu_of_identity_is_100() {
        let b = corpus_bleu(&[talk(&[("a b c", "a b c"), ("x", "x")]), talk(&[("k m t a", "k m t a")])]).unwrap();
        assert_eq!(b.mean, 100.0);
    }

    #[test]
    fn corpus_bleu_averages_talks_unweighted() {
        let t1 = talk(&[("a b c d", "a b c d")]);
        let t2 = talk(&[("a b c d", "a b c d e")]);
        let r = corpus_bleu(&[t1, t2]).unwrap();
        assert!((r.mean - (100.0 + r.talks[1].bleu) / 2.0).abs() < 1e-12);
        assert!(corpus_bleu(&[]).is_err());
        assert!(corpus_bleu(&[talk(&[])]).is_err());
    }

    #[test]
    fn replacing_a_correct_word_never_helps() {
        let base = talk(&[("k a m o t i", "k a m o t i"), ("a b c", "a b x")]);
        let worse = talk(&[("k a m o t i", "k a zz o t i"), ("a b c", "a b x")]);
        assert!(talk_bleu(&worse).unwrap().bleu < talk_bleu(&base).unwrap().bleu);
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 0..8)
    }

    proptest! {
        #[test]
        fn wer_of_self_is_zero(x in words()) {
            prop_assume!(!x.is_empty());
            prop_assert_eq!(wer(&x, &x).unwrap().errors(), 0);
        }

        #[test]
        fn alignment_counts_are_consistent(r in words(), h in words()) {
            prop_assume!(!r.is_empty());
            let a = wer(&r, &h).unwrap();
            prop_assert_eq!(a.reference_len(), r.len());
            prop_assert_eq!(a.hits + a.substitutions + a.insertions, h.len());
            prop_assert_eq!(a.errors(), edit_distance(&r, &h));
        }

        #[test]
        fn edit_distance_triangle(x in words(), y in words(), z in words()) {
            prop_assert!(edit_distance(&x, &z) <= edit_distance(&x, &y) + edit_distance(&y, &z));
        }

        #[test]
        fn bleu_ignores_pair_order(pairs in prop::collection::vec((words(), words()), 1..5)) {
            let pairs: Vec<(String, String)> = pairs.iter().map(|(r, h)| (r.join(" "), h.join(" "))).collect();
            let mut rev = pairs.clone();
            rev.reverse();
            let a = talk_bleu(&Talk { id: "x".into(), pairs }).unwrap().bleu;
            let b = talk_bleu(&Talk { id: "x".into(), pairs: rev }).unwrap().bleu;
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&a));
        }
    }
}

use super::edit_distance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult<T> {
    /// One segment per reference; their concatenation is the input stream.
    pub segments: Vec<Vec<T>>,
    pub errors: usize,
    pub reference_words: usize,
}

impl<T> SegmentationResult<T> {
    pub fn wer(&self) -> f64 {
        if self.reference_words == 0 {
            return if self.errors == 0 { 0.0 } else { f64::INFINITY };
        }
        self.errors as f64 / self.reference_words as f64
    }
}

/// Splits `stream` into `references.len()` consecutive segments minimizing
/// the summed edit distance to the references.
///
/// `best[k][j]` is the minimal cost of covering `stream[..j]` with the
/// first `k` segments. For each segment and start `i`, one Levenshtein
/// pass over `stream[i..]` yields the distance of every end `j` at once.
/// Ties keep the earliest cut.
pub fn mwer_segment<T: PartialEq + Clone>(stream: &[T], references: &[Vec<T>]) -> Result<SegmentationResult<T>> {
    if references.is_empty() {
        return Err(Error::Empty("reference segments".into()));
    }
    let n = stream.len();
    let k_total = references.len();
    let inf = usize::MAX;
    let mut best = vec![vec![inf; n + 1]; k_total + 1];
    let mut back = vec![vec![0usize; n + 1]; k_total + 1];
    best[0][0] = 0;
    for (k, reference) in references.iter().enumerate() {
        for i in 0..=n {
            let base = best[k][i];
            if base == inf {
                continue;
            }
            // row[r] = distance(stream[i..j], reference[..r]), advanced one hypothesis word at a time
            let mut row: Vec<usize> = (0..=reference.len()).collect();
            for j in i..=n {
                if j > i {
                    let h = &stream[j - 1];
                    let mut diag = row[0];
                    row[0] += 1;
                    for (r, word) in reference.iter().enumerate() {
                        let next = (diag + usize::from(word != h)).min(row[r] + 1).min(row[r + 1] + 1);
                        diag = row[r + 1];
                        row[r + 1] = next;
                    }
                }
                let cost = base + row[reference.len()];
                if cost < best[k + 1][j] {
                    best[k + 1][j] = cost;
                    back[k + 1][j] = i;
                }
            }
        }
    }
    let mut cuts = vec![n; k_total + 1];
    for k in (1..=k_total).rev() {
        cuts[k - 1] = back[k][cuts[k]];
    }
    let segments: Vec<Vec<T>> = cuts.windows(2).map(|w| stream[w[0]..w[1]].to_vec()).collect();
    debug_assert_eq!(
        segments.iter().zip(references).map(|(s, r)| edit_distance(r, s)).sum::<usize>(),
        best[k_total][n]
    );
    Ok(SegmentationResult {
        segments,
        errors: best[k_total][n],
        reference_words: references.iter().map(Vec::len).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Minimum over every monotone placement of cuts.
    fn brute(stream: &[String], refs: &[Vec<String>]) -> usize {
        fn go(stream: &[String], refs: &[Vec<String>]) -> usize {
            if refs.len() == 1 {
                return edit_distance(&refs[0], stream);
            }
            (0..=stream.len()).map(|c| edit_distance(&refs[0], &stream[..c]) + go(&stream[c..], &refs[1..])).min().unwrap()
        }
        go(stream, refs)
    }

    #[test]
    fn exact_stream_recovers_boundaries() {
        let refs = vec![w("a b"), w("c d e"), w("f")];
        let r = mwer_segment(&w("a b c d e f"), &refs).unwrap();
        assert_eq!(r.segments, refs);
        assert_eq!(r.errors, 0);
    }

    #[test]
    fn rotated_stream_matches_enumeration() {
        let refs = vec![w("a b"), w("c d")];
        let stream = w("b a c d");
        let r = mwer_segment(&stream, &refs).unwrap();
        assert_eq!(r.errors, brute(&stream, &refs));
        assert_eq!(r.errors, 2);
        assert_eq!(r.segments.concat(), stream);
    }

    #[test]
    fn single_word_goes_to_the_cheaper_segment() {
        let refs = vec![w("x y"), w("b")];
        let r = mwer_segment(&w("b"), &refs).unwrap();
        // placing "b" first costs 2 + 1, second costs 2 + 0
        assert_eq!(r.segments, vec![vec![], w("b")]);
        assert_eq!(r.errors, 2);
    }

    #[test]
    fn empty_stream_is_all_deletions() {
        let refs = vec![w("a b"), w("c")];
        let r = mwer_segment(&[], &refs).unwrap();
        assert_eq!(r.segments, vec![Vec::<String>::new(), vec![]]);
        assert_eq!(r.errors, 3);
        assert!(mwer_segment(&w("a"), &[]).is_err());
    }

    #[test]
    fn dp_equals_brute_force_exhaustively() {
        // every stream over {a,b} up to length 6 against a few reference sets
        let ref_sets = [vec![w("a b"), w("b")], vec![w("a"), w("b a"), w("a")], vec![w("b b a")], vec![w(""), w("a"), w("b")]];
        for len in 0..=6 {
            for bits in 0..(1u32 << len) {
                let stream: Vec<String> = (0..len).map(|i| if bits >> i & 1 == 1 { "a".into() } else { "b".into() }).collect();
                for refs in &ref_sets {
                    let r = mwer_segment(&stream, refs).unwrap();
                    assert_eq!(r.errors, brute(&stream, refs));
                    assert_eq!(r.segments.concat(), stream);
                    assert_eq!(r.segments.len(), refs.len());
                }
            }
        }
    }

    fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]).prop_map(String::from), 0..=max)
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(stream in words(10), refs in prop::collection::vec(words(4), 1..=3)) {
            let r = mwer_segment(&stream, &refs).unwrap();
            prop_assert_eq!(r.errors, brute(&stream, &refs));
            prop_assert_eq!(r.segments.concat(), stream);
        }

        #[test]
        fn never_worse_than_proportional_cuts(stream in words(12), refs in prop::collection::vec(words(5), 1..=4)) {
            let r = mwer_segment(&stream, &refs).unwrap();
            let total: usize = refs.iter().map(Vec::len).sum::<usize>().max(1);
            let mut acc = 0;
            let mut start = 0;
            let mut naive = 0;
            for (k, reference) in refs.iter().enumerate() {
                acc += reference.len();
                let end = if k + 1 == refs.len() { stream.len() } else { (stream.len() * acc / total).max(start) };
                naive += edit_distance(reference, &stream[start..end]);
                start = end;
            }
            prop_assert!(r.errors <= naive);
        }
    }
}

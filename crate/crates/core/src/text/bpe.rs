use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Granularity, TokenSequence, SPECIALS, UNK};
use crate::error::{Error, Result};

/// Suffix marking a word-final symbol in BPE mode.
pub const END_OF_WORD: &str = "</w>";
/// Vocabulary entry standing for a space in character mode.
pub const SPACE_SYMBOL: &str = "▁";
/// How an unknown token is rendered by [`SubwordModel::decode`].
pub const UNK_RENDERING: &str = "⁇";

const FILE_MAGIC: &str = "#subword-model v1";

/// Learned subword vocabulary.
///
/// In BPE mode the base alphabet holds every training character both bare
/// and with [`END_OF_WORD`] attached, so any string over the training
/// alphabet encodes without unknowns. Merges are kept in learning order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordModel {
    mode: Granularity,
    merges: Vec<(String, String)>,
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == chars.len() { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

impl SubwordModel {
    fn from_parts(mode: Granularity, merges: Vec<(String, String)>, symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::format("subword model", format!("duplicate symbol `{s}`")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if index.get(*s) != Some(&(i as u32)) {
                return Err(Error::format("subword model", format!("special `{s}` must have id {i}")));
            }
        }
        for (l, r) in &merges {
            if !index.contains_key(&format!("{l}{r}")) {
                return Err(Error::format("subword model", format!("merge output `{l}{r}` missing from vocabulary")));
            }
        }
        Ok(SubwordModel { mode, merges, symbols, index })
    }

    /// Character-level model over the characters of `corpus`, with an
    /// explicit space symbol.
    pub fn learn_characters(corpus: &[String]) -> Result<Self> {
        let chars: BTreeSet<char> = corpus.iter().flat_map(|s| s.chars()).filter(|c| *c != ' ').collect();
        if chars.is_empty() {
            return Err(Error::Empty("character corpus".into()));
        }
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        symbols.push(SPACE_SYMBOL.to_string());
        symbols.extend(chars.into_iter().map(String::from));
        Self::from_parts(Granularity::Character, Vec::new(), symbols)
    }

    /// Vocabulary size before any merge: specials plus every training
    /// character in bare and word-final form.
    pub fn character_floor(corpus: &[String]) -> usize {
        let chars: BTreeSet<char> = corpus.iter().flat_map(|s| s.chars()).filter(|c| *c != ' ').collect();
        SPECIALS.len() + 2 * chars.len()
    }

    /// Greedy BPE: repeatedly merge the most frequent adjacent symbol pair
    /// inside words until the vocabulary reaches `target_vocab` or no pair
    /// occurs at least twice. Ties go to the lexicographically smallest pair.
    pub fn learn_bpe(corpus: &[String], target_vocab: usize) -> Result<Self> {
        if corpus.iter().all(|s| s.trim().is_empty()) {
            return Err(Error::Empty("bpe corpus".into()));
        }
        let floor = Self::character_floor(corpus);
        if target_vocab <= floor {
            return Err(Error::VocabTooSmall { requested: target_vocab, floor });
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for line in corpus {
            for w in line.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();

        let chars: BTreeSet<char> = corpus.iter().flat_map(|s| s.chars()).filter(|c| *c != ' ').collect();
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for c in &chars {
            symbols.push(c.to_string());
            symbols.push(format!("{c}{END_OF_WORD}"));
        }
        let mut known: BTreeSet<String> = symbols.iter().cloned().collect();
        let mut merges = Vec::new();

        while symbols.len() < target_vocab {
            let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
                }
            }
            // BTreeMap iterates pairs in lexicographic order, so the first max wins ties
            let best = pairs.iter().fold(None, |best: Option<(&(&str, &str), usize)>, (p, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            });
            let Some((&(l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, &l, &r);
            }
            let merged = format!("{l}{r}");
            if known.insert(merged.clone()) {
                symbols.push(merged);
            }
            merges.push((l, r));
        }
        Self::from_parts(Granularity::Bpe, merges, symbols)
    }

    pub fn mode(&self) -> Granularity {
        self.mode
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    /// Applies merges to one word in learned order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        for (l, r) in &self.merges {
            if syms.len() < 2 {
                break;
            }
            merge_pair(&mut syms, l, r);
        }
        syms
    }

    /// Encodes normalized text. No bos/eos is added.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let lookup = |s: &str| self.index.get(s).copied().unwrap_or(UNK);
        let ids = match self.mode {
            Granularity::Character => {
                text.chars().map(|c| if c == ' ' { lookup(SPACE_SYMBOL) } else { lookup(&c.to_string()) }).collect()
            }
            Granularity::Bpe => {
                text.split_whitespace().flat_map(|w| self.segment_word(w)).map(|s| lookup(&s)).collect()
            }
        };
        TokenSequence { ids, granularity: self.mode }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let sym = self
                .symbol(id)
                .ok_or(Error::TokenOutOfRange { id, size: self.vocab_size() })?;
            if id == UNK {
                out.push_str(UNK_RENDERING);
            } else if (id as usize) < SPECIALS.len() {
                continue;
            } else if self.mode == Granularity::Character && sym == SPACE_SYMBOL {
                out.push(' ');
            } else if let Some(stem) = sym.strip_suffix(END_OF_WORD) {
                out.push_str(stem);
                out.push(' ');
            } else {
                out.push_str(sym);
            }
        }
        if self.mode == Granularity::Bpe {
            Ok(out.trim_end().to_string())
        } else {
            Ok(out)
        }
    }

    /// Line-oriented text form: magic line, `mode`/`vocab_size`/`merges`
    /// header lines, one tab-separated merge per line, then `symbol<TAB>id`
    /// vocabulary lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FILE_MAGIC}");
        let _ = writeln!(s, "mode\t{}", self.mode.as_str());
        let _ = writeln!(s, "vocab_size\t{}", self.symbols.len());
        let _ = writeln!(s, "merges\t{}", self.merges.len());
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}");
        }
        for (i, sym) in self.symbols.iter().enumerate() {
            let _ = writeln!(s, "{sym}\t{i}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("subword model", d);
        let mut lines = text.lines();
        if lines.next() != Some(FILE_MAGIC) {
            return Err(bad("missing header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}`, got `{line}`")))
        };
        let mode = match field("mode")?.as_str() {
            "bpe" => Granularity::Bpe,
            "character" => Granularity::Character,
            m => return Err(bad(format!("unknown mode `{m}`"))),
        };
        let vocab_size: usize = field("vocab_size")?.parse().map_err(|e| bad(format!("vocab_size: {e}")))?;
        let n_merges: usize = field("merges")?.parse().map_err(|e| bad(format!("merges: {e}")))?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| bad("truncated merge list".into()))?;
            let (l, r) = line.split_once('\t').ok_or_else(|| bad(format!("bad merge line `{line}`")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let mut symbols = Vec::with_capacity(vocab_size);
        for (expect, line) in lines.enumerate() {
            let (sym, id) = line.rsplit_once('\t').ok_or_else(|| bad(format!("bad vocab line `{line}`")))?;
            if id.parse::<usize>().ok() != Some(expect) {
                return Err(bad(format!("vocabulary ids must be dense, got `{id}` at {expect}")));
            }
            symbols.push(sym.to_string());
        }
        if symbols.len() != vocab_size {
            return Err(bad(format!("header says {vocab_size} symbols, found {}", symbols.len())));
        }
        Self::from_parts(mode, merges, symbols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the text form; checkpoints record it to detect vocabulary drift.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

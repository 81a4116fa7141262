//! Byte-pair-encoding subword segmentation with first-subword alignment.
//!
//! Words are split into characters and the end-of-word marker is glued to
//! the final character (`low` -> `l o w</w>`). Learning merges the most
//! frequent adjacent pair, breaking ties by the lexicographically smallest
//! pair. The requested vocabulary size counts base characters plus merges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
    /// Symbol for each id; ids are dense.
    pub symbols: Vec<String>,
    pub end_of_word_marker: String,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    fn from_parts(merges: Vec<(String, String)>, symbols: Vec<String>, marker: String) -> Self {
        let mut m = BpeModel {
            merges,
            symbols,
            end_of_word_marker: marker,
            index: HashMap::new(),
            ranks: HashMap::new(),
        };
        m.rebuild_index();
        m
    }

    /// Restores lookup tables after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        self.ranks = self.merges.iter().enumerate().map(|(r, p)| (p.clone(), r)).collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    /// Splits one word into subword strings (marker attached to the last one).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut parts = initial_symbols(word, &self.end_of_word_marker);
        loop {
            let best = parts
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            parts = merge_pair(&parts, a, b);
        }
        parts
    }

    /// Segments each token independently and records where it starts.
    pub fn segment<S: AsRef<str>>(&self, tokens: &[S]) -> Segmentation {
        let mut seg = Segmentation::default();
        for tok in tokens {
            seg.token_first_subword.push(seg.subword_ids.len());
            let mut pieces = self.segment_word(tok.as_ref());
            if pieces.is_empty() {
                // keeps every token aligned to at least one subword
                pieces.push(self.end_of_word_marker.clone());
            }
            for piece in pieces {
                seg.subword_ids.push(self.id(&piece).unwrap_or_else(|| self.unk_id()));
                seg.pieces.push(piece);
            }
        }
        seg
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#philokit-bpe v1");
        let _ = writeln!(out, "marker\t{}", self.end_of_word_marker);
        let _ = writeln!(out, "merges\t{}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        let _ = writeln!(out, "vocab\t{}", self.symbols.len());
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{s}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Parse {
            line,
            message: format!("BPE model: {what}"),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "#philokit-bpe v1")) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut header = |key: &str| -> Result<String> {
            let (no, l) = lines.next().ok_or_else(|| bad(0, "truncated"))?;
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .map(str::to_owned)
                .ok_or_else(|| bad(no, &format!("expected `{key}`")))
        };
        let marker = header("marker")?;
        let n_merges: usize = header("merges")?.parse().map_err(|_| bad(3, "merge count"))?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (no, l) = lines.next().ok_or_else(|| bad(0, "truncated merges"))?;
            let (a, b) = l.split_once(' ').ok_or_else(|| bad(no, "merge pair"))?;
            merges.push((a.to_owned(), b.to_owned()));
        }
        let (no, l) = lines.next().ok_or_else(|| bad(0, "missing vocab"))?;
        let n_vocab: usize = l
            .strip_prefix("vocab\t")
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| bad(no, "vocab count"))?;
        let mut symbols = Vec::with_capacity(n_vocab);
        for expected in 0..n_vocab {
            let (no, l) = lines.next().ok_or_else(|| bad(0, "truncated vocab"))?;
            let (s, id) = l.rsplit_once('\t').ok_or_else(|| bad(no, "vocab entry"))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(bad(no, "vocab ids must be dense and ordered"));
            }
            symbols.push(s.to_owned());
        }
        Ok(BpeModel::from_parts(merges, symbols, marker))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Subword ids of a sentence plus the token -> first subword alignment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Segmentation {
    pub subword_ids: Vec<u32>,
    /// Surface strings of the subwords, end-of-word marker included.
    pub pieces: Vec<String>,
    pub token_first_subword: Vec<usize>,
}

impl Segmentation {
    pub fn token_count(&self) -> usize {
        self.token_first_subword.len()
    }

    /// Subword positions belonging to token `t`.
    pub fn token_span(&self, t: usize) -> std::ops::Range<usize> {
        let start = self.token_first_subword[t];
        let end = self
            .token_first_subword
            .get(t + 1)
            .copied()
            .unwrap_or(self.subword_ids.len());
        start..end
    }

    /// Recovers the original tokens from the pieces.
    pub fn detokenize(&self, marker: &str) -> Vec<String> {
        (0..self.token_count())
            .map(|t| {
                self.pieces[self.token_span(t)]
                    .iter()
                    .map(|p| p.strip_suffix(marker).unwrap_or(p))
                    .collect()
            })
            .collect()
    }
}

fn initial_symbols(word: &str, marker: &str) -> Vec<String> {
    let mut parts: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = parts.last_mut() {
        last.push_str(marker);
    }
    parts
}

fn merge_pair(parts: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(parts.len());
    let mut i = 0;
    while i < parts.len() {
        if i + 1 < parts.len() && parts[i] == a && parts[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(parts[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns merges from whitespace-tokenized `corpus` lines.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<BpeModel> {
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Empty("BPE training corpus"));
    }
    let alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    if target_vocab_size < alphabet.len() {
        return Err(Error::invalid(format!(
            "target vocabulary size {target_vocab_size} is below the alphabet size {}",
            alphabet.len()
        )));
    }
    let marker = END_OF_WORD.to_owned();

    // Symbol table: interned strings so pair counting works on integers.
    let mut symbols: Vec<String> = vec![UNK.to_owned()];
    symbols.extend(alphabet.iter().map(|c| c.to_string()));
    symbols.extend(alphabet.iter().map(|c| format!("{c}{marker}")));
    let mut interned: HashMap<String, u32> = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();

    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| {
            let ids = initial_symbols(w, &marker).iter().map(|s| interned[s]).collect();
            (ids, c)
        })
        .collect();

    let mut merges = Vec::new();
    let n_merges = target_vocab_size - alphabet.len();
    for _ in 0..n_merges {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (ids, c) in &words {
            for w in ids.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                // smaller pair wins ties, so it must compare as greater
                let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let merged = format!("{}{}", symbols[a as usize], symbols[b as usize]);
        let new_id = *interned.entry(merged.clone()).or_insert_with(|| {
            symbols.push(merged);
            (symbols.len() - 1) as u32
        });
        merges.push((symbols[a as usize].clone(), symbols[b as usize].clone()));
        for (ids, _) in &mut words {
            if ids.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
    }
    Ok(BpeModel::from_parts(merges, symbols, marker))
}

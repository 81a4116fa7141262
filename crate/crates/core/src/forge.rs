//! Curation of OCR'd Greek books: stopword-based detection, NFC
//! normalization, vocabulary-coverage line filtering, long-repeat removal and
//! `wc -w` compatible counting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// NFC. Final and medial sigma are left as written.
pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

pub fn normalize_bytes(bytes: &[u8]) -> Result<String> {
    std::str::from_utf8(bytes)
        .map(normalize)
        .map_err(|e| Error::invalid(format!("invalid UTF-8: {e}")))
}

/// Drops combining marks (accents, breathings, iota subscript) and recomposes.
pub fn strip_diacritics(text: &str) -> String {
    text.nfd().filter(|c| !is_combining_mark(*c)).nfc().collect()
}

/// Characters `wc -w` treats as separators under a UTF-8 C locale.
pub fn is_wc_space(c: char) -> bool {
    matches!(
        c,
        ' ' | '\t' | '\n' | '\u{b}' | '\u{c}' | '\r' | '\u{a0}' | '\u{1680}' | '\u{2000}'
            ..='\u{200a}' | '\u{202f}' | '\u{205f}' | '\u{3000}'
    )
}

/// Non-printing characters: they neither start nor end a word.
fn is_wc_neutral(c: char) -> bool {
    c.is_control() || matches!(c, '\u{2028}' | '\u{2029}')
}

/// Word count with `wc -w` semantics.
pub fn count_tokens(text: &str) -> usize {
    let mut words = 0;
    let mut in_word = false;
    for c in text.chars() {
        if is_wc_space(c) {
            words += usize::from(in_word);
            in_word = false;
        } else if !is_wc_neutral(c) {
            in_word = true;
        }
    }
    words + usize::from(in_word)
}

/// Like [`count_tokens`] on raw bytes; invalid UTF-8 sequences are non-printing.
pub fn count_tokens_bytes(bytes: &[u8]) -> usize {
    let mut words = 0;
    let mut in_word = false;
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            if is_wc_space(c) {
                words += usize::from(in_word);
                in_word = false;
            } else if !is_wc_neutral(c) {
                in_word = true;
            }
        }
    }
    words + usize::from(in_word)
}

pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(is_wc_space).filter(|t| !t.is_empty())
}

fn is_punctuation_token(tok: &str) -> bool {
    tok.chars().all(|c| {
        c.is_ascii_punctuation()
            || matches!(
                c,
                '\u{b7}'
                    | '\u{387}'
                    | '\u{37e}'
                    | '«'
                    | '»'
                    | '‹'
                    | '›'
                    | '—'
                    | '–'
                    | '‐'
                    | '…'
                    | '‘'
                    | '’'
                    | '“'
                    | '”'
                    | '„'
                    | '†'
                    | '⸏'
                    | '⟨'
                    | '⟩'
                    | '⁑'
                    | '※'
            )
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    VocabCoverage,
    Duplicate,
    NotGreek,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::VocabCoverage => "vocab_coverage",
            DropReason::Duplicate => "duplicate",
            DropReason::NotGreek => "not_greek",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vocab_coverage" => Ok(DropReason::VocabCoverage),
            "duplicate" => Ok(DropReason::Duplicate),
            "not_greek" => Ok(DropReason::NotGreek),
            _ => Err(Error::invalid(format!("unknown drop reason {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub text: String,
    pub source_id: String,
    pub line_no: usize,
    pub drop_reason: Option<DropReason>,
}

impl CorpusLine {
    pub fn new(source_id: impl Into<String>, line_no: usize, text: impl Into<String>) -> Self {
        CorpusLine {
            text: text.into(),
            source_id: source_id.into(),
            line_no,
            drop_reason: None,
        }
    }

    pub fn kept(&self) -> bool {
        self.drop_reason.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Compared after diacritic stripping when `strip_stopword_diacritics` is set.
    pub stopwords: Vec<String>,
    /// A stopword must occur strictly more often than this.
    pub stopword_min_count: usize,
    /// A line needs coverage strictly above this.
    pub coverage_threshold: f64,
    /// Repeats longer than this many characters are removed.
    pub dup_min_chars: usize,
    pub strip_stopword_diacritics: bool,
    /// Leave punctuation-only tokens out of the coverage ratio.
    pub exclude_punctuation: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            stopwords: ["τουτο", "και", "τον", "το", "γαρ"].map(String::from).to_vec(),
            stopword_min_count: 10,
            coverage_threshold: 0.90,
            dup_min_chars: 300,
            strip_stopword_diacritics: true,
            exclude_punctuation: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold < 1.0) {
            return Err(Error::Config(format!(
                "coverage threshold {} not in (0, 1)",
                self.coverage_threshold
            )));
        }
        if self.dup_min_chars == 0 {
            return Err(Error::Config("dup_min_chars must be positive".into()));
        }
        Ok(())
    }
}

/// True iff every stopword occurs more than `stopword_min_count` times.
pub fn detect_greek(document: &str, cfg: &FilterConfig) -> bool {
    let prep = |t: &str| {
        if cfg.strip_stopword_diacritics {
            strip_diacritics(t)
        } else {
            t.to_string()
        }
    };
    let wanted: HashMap<String, usize> = cfg.stopwords.iter().enumerate().map(|(i, w)| (prep(w), i)).collect();
    let mut counts = vec![0usize; cfg.stopwords.len()];
    for tok in tokens(document) {
        if let Some(&i) = wanted.get(&prep(tok)) {
            counts[i] += 1;
        }
    }
    // duplicates in the stopword list share a counter
    cfg.stopwords
        .iter()
        .all(|w| counts[wanted[&prep(w)]] > cfg.stopword_min_count)
}

/// Marks lines whose in-vocabulary token share does not exceed the threshold.
pub fn filter_lines(mut lines: Vec<CorpusLine>, vocab: &HashSet<String>, cfg: &FilterConfig) -> Vec<CorpusLine> {
    lines.par_iter_mut().for_each(|line| {
        if !line.kept() {
            return;
        }
        let mut total = 0usize;
        let mut known = 0usize;
        for tok in tokens(&line.text) {
            if cfg.exclude_punctuation && is_punctuation_token(tok) {
                continue;
            }
            total += 1;
            known += usize::from(vocab.contains(tok));
        }
        if total == 0 || known as f64 / total as f64 <= cfg.coverage_threshold {
            line.drop_reason = Some(DropReason::VocabCoverage);
        }
    });
    lines
}

const HASH_BASE: u64 = 0x100_0000_01b3;

/// Removes kept lines that would repeat a run of more than `dup_min_chars`
/// characters in the `\n`-joined stream of kept lines. First occurrences win.
pub fn dedup(mut lines: Vec<CorpusLine>, cfg: &FilterConfig) -> Vec<CorpusLine> {
    let w = cfg.dup_min_chars + 1;
    let top = (1..w).fold(1u64, |p, _| p.wrapping_mul(HASH_BASE));
    let mut stream: Vec<char> = Vec::new();
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();

    for line in lines.iter_mut().filter(|l| l.kept()) {
        let start_len = stream.len();
        if start_len > 0 {
            stream.push('\n');
        }
        stream.extend(line.text.chars());
        let total = stream.len();
        if total < w {
            continue;
        }
        let first = (start_len + 1).saturating_sub(w);
        let mut h = stream[first..first + w]
            .iter()
            .fold(0u64, |h, &c| h.wrapping_mul(HASH_BASE).wrapping_add(c as u64));
        let mut fresh: Vec<(u64, usize)> = Vec::new();
        let mut local: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut duplicate = false;
        for s in first..=total - w {
            if s > first {
                h = h
                    .wrapping_sub((stream[s - 1] as u64).wrapping_mul(top))
                    .wrapping_mul(HASH_BASE)
                    .wrapping_add(stream[s + w - 1] as u64);
            }
            let window = &stream[s..s + w];
            let hit =
                |starts: Option<&Vec<usize>>| starts.is_some_and(|v| v.iter().any(|&p| &stream[p..p + w] == window));
            if hit(seen.get(&h)) || hit(local.get(&h)) {
                duplicate = true;
                break;
            }
            local.entry(h).or_default().push(s);
            fresh.push((h, s));
        }
        if duplicate {
            stream.truncate(start_len);
            line.drop_reason = Some(DropReason::Duplicate);
        } else {
            for (h, s) in fresh {
                seen.entry(h).or_default().push(s);
            }
        }
    }
    lines
}

/// A document's lines after curation.
#[derive(Clone, Debug, PartialEq)]
pub struct CuratedDocument {
    pub source_id: String,
    pub greek: bool,
    pub lines: Vec<CorpusLine>,
}

impl CuratedDocument {
    pub fn kept_text(&self) -> String {
        let mut out = String::new();
        for l in self.lines.iter().filter(|l| l.kept()) {
            out.push_str(&l.text);
            out.push('\n');
        }
        out
    }
}

/// detect -> normalize -> filter -> dedup, documents in `source_id` order.
pub fn curate(
    mut documents: Vec<(String, String)>,
    vocab: &HashSet<String>,
    cfg: &FilterConfig,
) -> Result<Vec<CuratedDocument>> {
    cfg.validate()?;
    documents.sort_by(|a, b| a.0.cmp(&b.0));
    let mut docs: Vec<CuratedDocument> = documents
        .into_par_iter()
        .map(|(source_id, text)| {
            let text = normalize(&text);
            if !detect_greek(&text, cfg) {
                return CuratedDocument {
                    source_id,
                    greek: false,
                    lines: Vec::new(),
                };
            }
            let lines = text
                .lines()
                .enumerate()
                .map(|(k, l)| CorpusLine::new(source_id.clone(), k + 1, l))
                .collect();
            CuratedDocument {
                lines: filter_lines(lines, vocab, cfg),
                source_id,
                greek: true,
            }
        })
        .collect();
    let sizes: Vec<usize> = docs.iter().map(|d| d.lines.len()).collect();
    let all: Vec<CorpusLine> = docs.iter_mut().flat_map(|d| std::mem::take(&mut d.lines)).collect();
    let mut all = dedup(all, cfg).into_iter();
    for (d, n) in docs.iter_mut().zip(sizes) {
        d.lines = all.by_ref().take(n).collect();
    }
    Ok(docs)
}

/// `source_id<TAB>line_no<TAB>reason` rows; non-Greek documents get one row with line 0.
pub fn drop_log_tsv(docs: &[CuratedDocument]) -> String {
    let mut out = String::from("source_id\tline_no\treason\n");
    for d in docs {
        if !d.greek {
            out.push_str(&format!("{}\t0\t{}\n", d.source_id, DropReason::NotGreek));
        }
        for l in &d.lines {
            if let Some(r) = l.drop_reason {
                out.push_str(&format!("{}\t{}\t{}\n", l.source_id, l.line_no, r));
            }
        }
    }
    out
}

/// Token counts per source and overall, raw and in millions.
pub fn stats_tsv(counts: &[(String, usize)]) -> String {
    let mut out = String::from("dataset\ttokens\tnumber_of_tokens\n");
    let row = |name: &str, n: usize| format!("{name}\t{n}\t{:.1} million\n", n as f64 / 1e6);
    for (name, n) in counts {
        out.push_str(&row(name, *n));
    }
    out.push_str(&row("Overall", counts.iter().map(|c| c.1).sum()));
    out
}

/// Whitespace tokens of a born-digital vocabulary file, one or more per line.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = normalize_bytes(&bytes)?;
    Ok(tokens(&text).map(String::from).collect())
}

/// Every regular file below `dir`, keyed by its relative path.
pub fn read_documents(dir: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let dir = dir.as_ref();
    let mut docs = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text =
            String::from_utf8(bytes).map_err(|e| Error::invalid(format!("{}: invalid UTF-8: {e}", path.display())))?;
        let rel = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned();
        docs.push((rel, text));
    }
    Ok(docs)
}

/// Writes kept lines of every Greek document to `out_dir/<source_id>`.
pub fn write_documents(docs: &[CuratedDocument], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    for d in docs.iter().filter(|d| d.greek) {
        let path = out_dir.join(&d.source_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, d.kept_text()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

//! Reading and writing CoNLL-U treebanks.
//!
//! Sentences keep their original line layout (comments, multiword-token
//! ranges and empty nodes) so that `serialize(parse(x))` reproduces `x`
//! byte for byte. Only syntactic words enter [`Sentence::tokens`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder for an unspecified CoNLL-U field.
pub const UNDERSCORE: &str = "_";

/// Ordered `Attribute=Value` pairs of the FEATS column.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features(pub Vec<(String, String)>);

impl Features {
    fn parse(field: &str, line: usize) -> Result<Self> {
        if field == UNDERSCORE {
            return Ok(Features::default());
        }
        field
            .split('|')
            .map(|kv| match kv.split_once('=') {
                Some((k, v)) if !k.is_empty() => Ok((k.to_owned(), v.to_owned())),
                _ => Err(Error::Parse {
                    line,
                    message: format!("malformed feature `{kv}`"),
                }),
            })
            .collect::<Result<Vec<_>>>()
            .map(Features)
    }

    pub fn get(&self, attr: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == attr).map(|(_, v)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(UNDERSCORE);
        }
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// One syntactic word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Features,
    /// `None` when the HEAD column is `_` (unparsed input).
    pub head: Option<usize>,
    pub deprel: String,
    /// DEPS column, kept verbatim.
    pub deps: String,
    pub raw_misc: String,
}

impl Token {
    /// A token with every column except ID and FORM unspecified.
    pub fn new(id: usize, form: impl Into<String>) -> Self {
        Token {
            id,
            form: form.into(),
            lemma: UNDERSCORE.into(),
            upos: UNDERSCORE.into(),
            xpos: UNDERSCORE.into(),
            feats: Features::default(),
            head: None,
            deprel: UNDERSCORE.into(),
            deps: UNDERSCORE.into(),
            raw_misc: UNDERSCORE.into(),
        }
    }

    fn write_line(&self, out: &mut String) {
        use std::fmt::Write;
        let head = self.head.map_or_else(|| UNDERSCORE.to_owned(), |h| h.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.form,
            self.lemma,
            self.upos,
            self.xpos,
            self.feats,
            head,
            self.deprel,
            self.deps,
            self.raw_misc
        );
    }
}

/// Position of a line within a sentence block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Line {
    Comment(String),
    /// Index into [`Sentence::tokens`].
    Word(usize),
    /// Multiword-token range (`1-2`) or empty node (`1.1`), verbatim.
    Opaque(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub layout: Vec<Line>,
}

/// Tree-shape requirements for [`Sentence::validate_tree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeCheck {
    pub single_root: bool,
}

impl Default for TreeCheck {
    fn default() -> Self {
        TreeCheck { single_root: true }
    }
}

impl Sentence {
    /// Builds a sentence from bare forms; ids are assigned 1..=n.
    pub fn from_forms<S: AsRef<str>>(forms: &[S]) -> Self {
        let tokens: Vec<Token> = forms
            .iter()
            .enumerate()
            .map(|(i, f)| Token::new(i + 1, f.as_ref()))
            .collect();
        let layout = (0..tokens.len()).map(Line::Word).collect();
        Sentence { tokens, layout }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }

    pub fn comments(&self) -> impl Iterator<Item = &str> {
        self.layout.iter().filter_map(|l| match l {
            Line::Comment(c) => Some(c.as_str()),
            _ => None,
        })
    }

    fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments().find_map(|c| {
            let rest = c.strip_prefix('#')?.trim_start();
            let rest = rest.strip_prefix(key)?.trim_start();
            rest.strip_prefix('=').map(str::trim)
        })
    }

    pub fn sent_id(&self) -> Option<&str> {
        self.comment_value("sent_id")
    }

    pub fn text_comment(&self) -> Option<&str> {
        self.comment_value("text")
    }

    /// Comments other than `sent_id` and `text`, in file order.
    pub fn other_comments(&self) -> Vec<&str> {
        self.comments()
            .filter(|c| {
                let body = c.trim_start_matches('#').trim_start();
                !(body.starts_with("sent_id") || body.starts_with("text"))
            })
            .collect()
    }

    /// Heads as a vector indexed by `token index`, failing on unparsed tokens.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// A short name for error messages.
    pub fn label(&self, index: usize) -> String {
        self.sent_id().map_or_else(|| format!("#{}", index + 1), str::to_owned)
    }

    /// Checks that HEAD defines a spanning arborescence rooted at 0.
    pub fn validate_tree(&self, check: TreeCheck) -> std::result::Result<(), String> {
        let heads = self.heads().ok_or_else(|| "unspecified head".to_string())?;
        check_heads(&heads, check)
    }

    fn write(&self, out: &mut String) {
        for line in &self.layout {
            match line {
                Line::Comment(c) | Line::Opaque(c) => {
                    out.push_str(c);
                    out.push('\n');
                }
                Line::Word(i) => self.tokens[*i].write_line(out),
            }
        }
        out.push('\n');
    }
}

/// `heads[k]` is the head of token `k + 1`. Returns why the function is not a
/// tree, if it is not one.
pub fn check_heads(heads: &[usize], check: TreeCheck) -> std::result::Result<(), String> {
    let n = heads.len();
    let mut roots = 0;
    for (k, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("token {} has head {h} outside 0..={n}", k + 1));
        }
        if h == k + 1 {
            return Err(format!("token {} heads itself", k + 1));
        }
        if h == 0 {
            roots += 1;
        }
    }
    if roots == 0 {
        return Err("no token is attached to ROOT".into());
    }
    if check.single_root && roots > 1 {
        return Err(format!("{roots} tokens are attached to ROOT"));
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
        }
        if state[node] == 1 {
            return Err(format!("cycle through token {node}"));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// Distinct-value counts over a treebank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagsetSummary {
    pub sentences: usize,
    pub tokens: usize,
    pub lemmata: usize,
    pub forms: usize,
    pub upos: usize,
    pub xpos: usize,
    pub deprels: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Treebank { sentences }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn summary(&self) -> TagsetSummary {
        let mut lemmata = HashSet::new();
        let mut forms = HashSet::new();
        let mut upos = HashSet::new();
        let mut xpos = HashSet::new();
        let mut deprels = HashSet::new();
        for t in self.sentences.iter().flat_map(|s| &s.tokens) {
            lemmata.insert(t.lemma.as_str());
            forms.insert(t.form.as_str());
            upos.insert(t.upos.as_str());
            xpos.insert(t.xpos.as_str());
            deprels.insert(t.deprel.as_str());
        }
        TagsetSummary {
            sentences: self.sentences.len(),
            tokens: self.token_count(),
            lemmata: lemmata.len(),
            forms: forms.len(),
            upos: upos.len(),
            xpos: xpos.len(),
            deprels: deprels.len(),
        }
    }

    /// Sorted distinct values of one column.
    pub fn distinct<F>(&self, column: F) -> Vec<String>
    where
        F: Fn(&Token) -> &str,
    {
        self.sentences
            .iter()
            .flat_map(|s| &s.tokens)
            .map(|t| column(t).to_owned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn validate_trees(&self, check: TreeCheck) -> Result<()> {
        for (i, s) in self.sentences.iter().enumerate() {
            s.validate_tree(check).map_err(|message| Error::InvalidTree {
                sentence: s.label(i),
                message,
            })?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_conllu(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serialize_conllu(self)).map_err(|e| Error::io(path, e))
    }
}

fn parse_index(field: &str, what: &str, line: usize) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("{what} `{field}` is not a non-negative integer"),
    })
}

fn parse_token(fields: &[&str], line: usize) -> Result<Token> {
    let id = parse_index(fields[0], "id", line)?;
    if id == 0 {
        return Err(Error::Parse {
            line,
            message: "token id must be at least 1".into(),
        });
    }
    let head = match fields[6] {
        UNDERSCORE => None,
        h => Some(parse_index(h, "head", line)?),
    };
    Ok(Token {
        id,
        form: fields[1].to_owned(),
        lemma: fields[2].to_owned(),
        upos: fields[3].to_owned(),
        xpos: fields[4].to_owned(),
        feats: Features::parse(fields[5], line)?,
        head,
        deprel: fields[7].to_owned(),
        deps: fields[8].to_owned(),
        raw_misc: fields[9].to_owned(),
    })
}

#[derive(Default)]
struct SentenceBuilder {
    sentence: Sentence,
    ids: HashSet<usize>,
    first_line: usize,
}

impl SentenceBuilder {
    fn is_empty(&self) -> bool {
        self.sentence.layout.is_empty()
    }

    fn finish(self) -> Result<Sentence> {
        let n = self.sentence.tokens.len();
        for (k, t) in self.sentence.tokens.iter().enumerate() {
            if t.id != k + 1 {
                return Err(Error::Parse {
                    line: self.first_line,
                    message: format!(
                        "token ids are not consecutive from 1 (found {} at position {})",
                        t.id,
                        k + 1
                    ),
                });
            }
            if let Some(h) = t.head {
                if h > n {
                    return Err(Error::Parse {
                        line: self.first_line,
                        message: format!("head {h} of token {} outside 0..={n}", t.id),
                    });
                }
            }
        }
        Ok(self.sentence)
    }
}

/// Parses CoNLL-U text. Blank lines terminate sentences.
pub fn parse_conllu(input: &str) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut cur = SentenceBuilder::default();
    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            if !cur.is_empty() {
                sentences.push(std::mem::take(&mut cur).finish()?);
            }
            continue;
        }
        if cur.is_empty() {
            cur.first_line = line_no;
        }
        if raw.starts_with('#') {
            cur.sentence.layout.push(Line::Comment(raw.to_owned()));
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].contains('-') || fields[0].contains('.') {
            cur.sentence.layout.push(Line::Opaque(raw.to_owned()));
            continue;
        }
        let token = parse_token(&fields, line_no)?;
        if !cur.ids.insert(token.id) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: token.id,
            });
        }
        cur.sentence.layout.push(Line::Word(cur.sentence.tokens.len()));
        cur.sentence.tokens.push(token);
    }
    if !cur.is_empty() {
        sentences.push(cur.finish()?);
    }
    Ok(Treebank { sentences })
}

pub fn serialize_conllu(tb: &Treebank) -> String {
    let mut out = String::new();
    for s in &tb.sentences {
        s.write(&mut out);
    }
    out
}

/// The nine positions of a Perseus (AGDT) positional tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MorphAttribute {
    WordClass,
    Person,
    Number,
    Tense,
    Mood,
    Voice,
    Gender,
    Case,
    Degree,
}

impl MorphAttribute {
    pub const ALL: [MorphAttribute; 9] = [
        MorphAttribute::WordClass,
        MorphAttribute::Person,
        MorphAttribute::Number,
        MorphAttribute::Tense,
        MorphAttribute::Mood,
        MorphAttribute::Voice,
        MorphAttribute::Gender,
        MorphAttribute::Case,
        MorphAttribute::Degree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MorphAttribute::WordClass => "word_class",
            MorphAttribute::Person => "person",
            MorphAttribute::Number => "number",
            MorphAttribute::Tense => "tense",
            MorphAttribute::Mood => "mood",
            MorphAttribute::Voice => "voice",
            MorphAttribute::Gender => "gender",
            MorphAttribute::Case => "case",
            MorphAttribute::Degree => "degree",
        }
    }
}

/// Slot value marking an attribute that does not apply.
pub const EMPTY_SLOT: char = '-';

/// A Perseus XPoS tag split into word class and eight attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MorphTagSet(pub [char; 9]);

impl MorphTagSet {
    pub fn get(&self, attr: MorphAttribute) -> Option<char> {
        let c = self.0[attr as usize];
        (c != EMPTY_SLOT).then_some(c)
    }

    pub fn join(&self) -> String {
        self.0.iter().collect()
    }
}

pub fn split_xpos_perseus(xpos: &str) -> Result<MorphTagSet> {
    let chars: Vec<char> = xpos.chars().collect();
    let slots: [char; 9] = chars.try_into().map_err(|v: Vec<char>| {
        Error::invalid(format!("Perseus XPoS `{xpos}` has {} positions, expected 9", v.len()))
    })?;
    Ok(MorphTagSet(slots))
}

//! Contextual lemmatization as sequence-to-sequence.
//!
//! The token to lemmatize is wrapped in delimiter tokens inside its full
//! sentence; optionally its characters follow a separator token. Outputs are
//! decoded by beam search over any [`StepScorer`]. [`CharLemmatizer`] is a
//! small character-level scorer trainable on a desk.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conllu::{Sentence, Treebank, UNDERSCORE};
use crate::encoder::uniform2;
use crate::error::{Error, Result};
use crate::forge::normalize;
use crate::nn::{log_softmax, Dense};
use crate::optim::{slice2, slice2_mut, Parameters};
use crate::train::Trainable;

pub const TOK_BEG: &str = "⟨t_tok_beg⟩";
pub const TOK_SEP: &str = "⟨t_tok_sep⟩";
pub const TOK_END: &str = "⟨t_tok_end⟩";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaExample {
    pub source: String,
    /// Empty when the token has no lemma.
    pub target: String,
    pub sent_id: String,
    pub token_id: usize,
}

/// One example per token; `char_mode` appends the form's characters after a separator.
pub fn make_lemma_examples(sentence: &Sentence, char_mode: bool) -> Vec<LemmaExample> {
    let forms = sentence.forms();
    let sent_id = sentence.sent_id().unwrap_or_default().to_string();
    sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(k, tok)| {
            let mut words: Vec<&str> = forms[..k].iter().map(String::as_str).collect();
            words.push(TOK_BEG);
            words.push(&tok.form);
            let chars: Vec<String> = tok.form.chars().map(String::from).collect();
            if char_mode {
                words.push(TOK_SEP);
                words.extend(chars.iter().map(String::as_str));
            }
            words.push(TOK_END);
            words.extend(forms[k + 1..].iter().map(String::as_str));
            LemmaExample {
                source: words.join(" "),
                target: if tok.lemma == UNDERSCORE {
                    String::new()
                } else {
                    tok.lemma.clone()
                },
                sent_id: sent_id.clone(),
                token_id: tok.id,
            }
        })
        .collect()
}

/// Examples for a whole treebank; sentences without `sent_id` are numbered from 1.
pub fn treebank_lemma_examples(tb: &Treebank, char_mode: bool) -> Vec<LemmaExample> {
    tb.sentences
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, s)| {
            let mut ex = make_lemma_examples(s, char_mode);
            if s.sent_id().is_none() {
                for e in &mut ex {
                    e.sent_id = (k + 1).to_string();
                }
            }
            ex
        })
        .collect()
}

/// A source split around its delimiters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceParts {
    pub left: Vec<String>,
    pub form: String,
    /// Characters after the separator, if present.
    pub chars: Option<Vec<String>>,
    pub right: Vec<String>,
}

pub fn parse_source(source: &str) -> Result<SourceParts> {
    let words: Vec<&str> = source.split(' ').collect();
    let count = |t: &str| words.iter().filter(|w| **w == t).count();
    if count(TOK_BEG) != 1 || count(TOK_END) != 1 || count(TOK_SEP) > 1 {
        return Err(Error::invalid(format!(
            "source needs exactly one {TOK_BEG} and one {TOK_END}: {source:?}"
        )));
    }
    let beg = words.iter().position(|w| *w == TOK_BEG).expect("counted");
    let end = words.iter().position(|w| *w == TOK_END).expect("counted");
    let sep = words.iter().position(|w| *w == TOK_SEP);
    let inner_end = sep.unwrap_or(end);
    if !(beg < inner_end && inner_end <= end) || inner_end != beg + 2 {
        return Err(Error::invalid(format!("malformed delimiters in {source:?}")));
    }
    let own = |r: &[&str]| r.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    Ok(SourceParts {
        left: own(&words[..beg]),
        form: words[beg + 1].to_string(),
        chars: sep.map(|s| own(&words[s + 1..end])),
        right: own(&words[end + 1..]),
    })
}

/// Removes delimiters and the character expansion, giving back the sentence forms.
pub fn strip(source: &str) -> Result<Vec<String>> {
    let p = parse_source(source)?;
    let mut forms = p.left;
    forms.push(p.form);
    forms.extend(p.right);
    Ok(forms)
}

pub fn write_jsonl(examples: &[LemmaExample]) -> Result<String> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(text: &str) -> Result<Vec<LemmaExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Exact-match percentage after NFC normalization.
pub fn lemma_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} gold lemmata",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("lemma list"));
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| normalize(p.as_ref()) == normalize(g.as_ref()))
        .count();
    Ok(100.0 * hits as f64 / gold.len() as f64)
}

/// Next-token log-probabilities for a fixed source.
pub trait StepScorer {
    /// Output vocabulary size, END included.
    fn vocab_size(&self) -> usize;

    fn end_id(&self) -> usize;

    fn log_probs(&self, prefix: &[usize]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Output tokens, END excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> std::cmp::Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.finished.cmp(&b.finished))
}

/// Length-capped beam search, best first.
///
/// Hypotheses still open after `max_len` tokens are closed without the END
/// factor. Ties in score are broken by the token sequence, smallest first.
pub fn beam_search(scorer: &dyn StepScorer, width: usize, max_len: usize) -> Result<Vec<BeamHypothesis>> {
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let v = scorer.vocab_size();
    let end = scorer.end_id();
    if end >= v {
        return Err(Error::invalid(format!("END id {end} outside vocabulary of {v}")));
    }
    let mut beam = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    for _ in 0..max_len {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates = Vec::new();
        for h in beam {
            if h.finished {
                candidates.push(h);
                continue;
            }
            let lp = scorer.log_probs(&h.tokens);
            if lp.len() != v {
                return Err(Error::shape(format!(
                    "scorer returned {} values for vocabulary {v}",
                    lp.len()
                )));
            }
            if lp.iter().any(|x| x.is_nan() || *x > 1e-9) {
                return Err(Error::invalid("scorer returned a value that is not a log-probability"));
            }
            for (k, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                if k != end {
                    tokens.push(k);
                }
                candidates.push(BeamHypothesis {
                    tokens,
                    log_prob: h.log_prob + l,
                    finished: k == end,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        beam = candidates;
    }
    for h in &mut beam {
        h.finished = true;
    }
    beam.sort_by(rank);
    Ok(beam)
}

/// Character vocabulary: input ids 0 = PAD, 1 = UNK; output id 0 = END.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CharVocab {
    pub chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut chars: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut v = CharVocab {
            chars,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    }

    pub fn input_size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn output_size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn input_id(&self, c: char) -> usize {
        self.index.get(&c).map_or(1, |i| i + 2)
    }

    pub fn output_id(&self, c: char) -> Option<usize> {
        self.index.get(&c).map(|i| i + 1)
    }

    pub fn output_char(&self, id: usize) -> Option<char> {
        id.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }
}

const SRC_OFFSETS: [isize; 4] = [-1, 0, 1, 2];
const PREV: usize = 2;
const T_LEFT: usize = SRC_OFFSETS.len() + PREV;
const T_RIGHT: usize = T_LEFT + 1;
const N_TABLES: usize = T_RIGHT + 1;

/// Character ids of the form and its neighbouring words.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaInput {
    pub form: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LemmaTrainExample {
    pub input: LemmaInput,
    /// Output ids ending in END.
    pub target: Vec<usize>,
    pub lemma: String,
}

/// A windowed character model: the embedding of output step t sums rows for
/// the form's characters at t-1..t+2, the two previous outputs and the mean
/// character embeddings of the neighbouring words, then a tanh layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharLemmatizer {
    pub vocab: CharVocab,
    pub tables: Vec<Array2<f64>>,
    pub hidden: Dense,
    pub out: Dense,
    pub beam_width: usize,
    pub max_len: usize,
}

impl Parameters for CharLemmatizer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for t in &self.tables {
            f(slice2(t));
        }
        self.hidden.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for t in &mut self.tables {
            f(slice2_mut(t));
        }
        self.hidden.visit_mut(f);
        self.out.visit_mut(f);
    }
}

impl CharLemmatizer {
    pub fn init<R: Rng>(rng: &mut R, train: &[LemmaExample], dim: usize, hidden: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("lemma training set"));
        }
        let vocab = CharVocab::build(train.iter().flat_map(|e| [e.source.as_str(), e.target.as_str()]));
        let vin = vocab.input_size();
        let vout = vocab.output_size();
        let mut tables = Vec::with_capacity(N_TABLES);
        for k in 0..N_TABLES {
            let rows = if (SRC_OFFSETS.len()..T_LEFT).contains(&k) {
                vout + 1
            } else {
                vin
            };
            tables.push(uniform2(rng, rows, dim, 0.5));
        }
        Ok(CharLemmatizer {
            hidden: Dense::init(rng, dim, hidden),
            out: Dense::init(rng, hidden, vout),
            vocab,
            tables,
            beam_width: 20,
            max_len: 50,
        })
    }

    pub fn zeros_like(&self) -> Self {
        CharLemmatizer {
            vocab: CharVocab::default(),
            tables: self.tables.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
            beam_width: self.beam_width,
            max_len: self.max_len,
        }
    }

    fn bos(&self) -> usize {
        self.vocab.output_size()
    }

    fn ids(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.vocab.input_id(c)).collect()
    }

    pub fn input(&self, source: &str) -> Result<LemmaInput> {
        let p = parse_source(source)?;
        Ok(LemmaInput {
            form: self.ids(&p.form),
            left: p.left.last().map(|w| self.ids(w)).unwrap_or_default(),
            right: p.right.first().map(|w| self.ids(w)).unwrap_or_default(),
        })
    }

    pub fn train_example(&self, ex: &LemmaExample) -> Result<LemmaTrainExample> {
        let mut target = ex
            .target
            .chars()
            .map(|c| {
                self.vocab
                    .output_id(c)
                    .ok_or_else(|| Error::invalid(format!("lemma character {c:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        target.push(0);
        Ok(LemmaTrainExample {
            input: self.input(&ex.source)?,
            target,
            lemma: ex.target.clone(),
        })
    }

    /// `(table, row, weight)` triples summed into the step input.
    fn features(&self, input: &LemmaInput, prefix: &[usize]) -> Vec<(usize, usize, f64)> {
        let t = prefix.len() as isize;
        let mut f = Vec::new();
        for (k, off) in SRC_OFFSETS.iter().enumerate() {
            let p = t + off;
            let id = if p >= 0 {
                input.form.get(p as usize).copied().unwrap_or(0)
            } else {
                0
            };
            f.push((k, id, 1.0));
        }
        for back in 1..=PREV {
            let id = prefix.len().checked_sub(back).map_or(self.bos(), |i| prefix[i]);
            f.push((SRC_OFFSETS.len() + back - 1, id, 1.0));
        }
        for (table, word) in [(T_LEFT, &input.left), (T_RIGHT, &input.right)] {
            if word.is_empty() {
                f.push((table, 0, 1.0));
            } else {
                let w = 1.0 / word.len() as f64;
                f.extend(word.iter().map(|&id| (table, id, w)));
            }
        }
        f
    }

    fn step(&self, feats: &[(usize, usize, f64)]) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let mut x = Array1::zeros(self.hidden.inputs());
        for &(t, r, w) in feats {
            x.scaled_add(w, &self.tables[t].row(r));
        }
        let h = self.hidden.forward(x.view()).mapv(f64::tanh);
        let z = self.out.forward(h.view());
        (x, h, z)
    }

    pub fn step_log_probs(&self, input: &LemmaInput, prefix: &[usize]) -> Vec<f64> {
        let (_, _, z) = self.step(&self.features(input, prefix));
        log_softmax(z.as_slice().expect("contiguous"))
    }

    /// Mean per-step NLL of the target, with gradients added into `grad`.
    pub fn loss_and_grad(&self, ex: &LemmaTrainExample, grad: &mut Self) -> f64 {
        let steps = ex.target.len() as f64;
        let mut loss = 0.0;
        for t in 0..ex.target.len() {
            let feats = self.features(&ex.input, &ex.target[..t]);
            let (x, h, z) = self.step(&feats);
            let lp = log_softmax(z.as_slice().expect("contiguous"));
            let gold = ex.target[t];
            loss -= lp[gold] / steps;
            let mut dz = Array1::from(lp.iter().map(|l| l.exp()).collect::<Vec<_>>());
            dz[gold] -= 1.0;
            dz /= steps;
            let dh = self.out.backward(h.view(), dz.view(), &mut grad.out);
            let dpre = dh * h.mapv(|h| 1.0 - h * h);
            let dx = self.hidden.backward(x.view(), dpre.view(), &mut grad.hidden);
            for &(tb, r, w) in &feats {
                grad.tables[tb].row_mut(r).scaled_add(w, &dx);
            }
        }
        loss
    }

    pub fn loss(&self, ex: &LemmaTrainExample) -> f64 {
        let steps = ex.target.len() as f64;
        (0..ex.target.len())
            .map(|t| -self.step_log_probs(&ex.input, &ex.target[..t])[ex.target[t]] / steps)
            .sum()
    }

    pub fn decode_input(&self, input: &LemmaInput, width: usize) -> Result<Vec<(String, f64)>> {
        let bound = BoundLemmatizer { model: self, input };
        Ok(beam_search(&bound, width, self.max_len)?
            .into_iter()
            .map(|h| {
                let s: String = h.tokens.iter().filter_map(|&i| self.vocab.output_char(i)).collect();
                (s, h.log_prob)
            })
            .collect())
    }

    /// Ranked lemma candidates for one source string.
    pub fn decode(&self, source: &str, width: usize) -> Result<Vec<(String, f64)>> {
        self.decode_input(&self.input(source)?, width)
    }

    pub fn exact_match(&self, examples: &[LemmaTrainExample], width: usize) -> Result<f64> {
        let preds: Vec<String> = examples
            .par_iter()
            .map(|ex| {
                Ok(self
                    .decode_input(&ex.input, width)?
                    .into_iter()
                    .next()
                    .map(|p| p.0)
                    .unwrap_or_default())
            })
            .collect::<Result<_>>()?;
        let gold: Vec<&str> = examples.iter().map(|e| e.lemma.as_str()).collect();
        lemma_accuracy(&preds, &gold)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.vocab.rebuild_index();
        Ok(m)
    }
}

struct BoundLemmatizer<'a> {
    model: &'a CharLemmatizer,
    input: &'a LemmaInput,
}

impl StepScorer for BoundLemmatizer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab.output_size()
    }

    fn end_id(&self) -> usize {
        0
    }

    fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        self.model.step_log_probs(self.input, prefix)
    }
}

impl Trainable for CharLemmatizer {
    type Example = LemmaTrainExample;

    fn zero_grad(&self) -> Self {
        self.zeros_like()
    }

    fn accumulate(&self, ex: &LemmaTrainExample, grad: &mut Self) -> Result<f64> {
        Ok(self.loss_and_grad(ex, grad))
    }

    fn parts(&self, _with_encoder: bool) -> Vec<&dyn Parameters> {
        vec![self]
    }

    fn parts_mut(&mut self, _with_encoder: bool) -> Vec<&mut dyn Parameters> {
        vec![self]
    }

    /// Greedy exact match; the full beam is used only for final decoding.
    fn evaluate(&self, dev: &[LemmaTrainExample]) -> Result<(f64, Option<f64>)> {
        Ok((self.exact_match(dev, 1)?, None))
    }
}

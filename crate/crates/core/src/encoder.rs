//! Contextual token embeddings.
//!
//! Row 0 of an [`EmbeddingSequence`] is the artificial ROOT vector and rows
//! 1..=n belong to the tokens. The built-in [`ToyEncoderParams`] averages
//! subword embeddings in a window around each token's first subword and adds
//! a positional value on the last coordinate. Precomputed vectors from a file
//! can stand in for it through [`Embedder`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{slice1, slice1_mut, slice2, slice2_mut, Parameters};
use crate::subword::{BpeModel, Segmentation};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence(pub Array2<f64>);

impl EmbeddingSequence {
    pub fn n_tokens(&self) -> usize {
        self.0.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    /// Row `i`; 0 is ROOT.
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Source of embeddings for a tokenized sentence.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, forms: &[String]) -> Result<EmbeddingSequence>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub context_radius: usize,
    pub position_scale: f64,
    /// Token index is divided by this before scaling.
    pub position_norm: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 16,
            context_radius: 1,
            position_scale: 1.0,
            position_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderParams {
    /// |vocab| x d subword embeddings.
    pub table: Array2<f64>,
    pub context_radius: usize,
    pub position_scale: f64,
    pub position_norm: f64,
    pub root: Array1<f64>,
}

impl Parameters for ToyEncoderParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(slice2(&self.table));
        f(slice1(&self.root));
        f(std::slice::from_ref(&self.position_scale));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice2_mut(&mut self.table));
        f(slice1_mut(&mut self.root));
        f(std::slice::from_mut(&mut self.position_scale));
    }
}

/// Uniform initialization in `[-scale, scale]`.
pub(crate) fn uniform2<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..=scale))
}

pub(crate) fn uniform1<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.gen_range(-scale..=scale))
}

impl ToyEncoderParams {
    pub fn init<R: Rng>(rng: &mut R, vocab_size: usize, cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        ToyEncoderParams {
            table: uniform2(rng, vocab_size, d, 0.5),
            context_radius: cfg.context_radius,
            position_scale: cfg.position_scale,
            position_norm: cfg.position_norm,
            root: uniform1(rng, d, 0.5),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        ToyEncoderParams {
            table: Array2::zeros(self.table.raw_dim()),
            context_radius: self.context_radius,
            position_scale: 0.0,
            position_norm: self.position_norm,
            root: Array1::zeros(self.root.len()),
        }
    }

    fn window(&self, seg: &Segmentation, t: usize) -> std::ops::RangeInclusive<usize> {
        let p = seg.token_first_subword[t];
        let lo = p.saturating_sub(self.context_radius);
        let hi = (p + self.context_radius).min(seg.subword_ids.len() - 1);
        lo..=hi
    }

    fn position(&self, i: usize) -> f64 {
        i as f64 / self.position_norm
    }

    fn check(&self, seg: &Segmentation) -> Result<()> {
        let v = self.table.nrows();
        if let Some(&bad) = seg.subword_ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::shape(format!("subword id {bad} outside table of {v} rows")));
        }
        let len = seg.subword_ids.len();
        if seg.token_first_subword.iter().any(|&p| p >= len) {
            return Err(Error::shape("first-subword index outside the segmentation"));
        }
        Ok(())
    }

    pub fn encode(&self, seg: &Segmentation) -> Result<EmbeddingSequence> {
        self.check(seg)?;
        let n = seg.token_count();
        let d = self.dim();
        let mut out = Array2::zeros((n + 1, d));
        out.row_mut(0).assign(&self.root);
        for t in 0..n {
            let win = self.window(seg, t);
            let count = win.clone().count() as f64;
            let mut row = out.row_mut(t + 1);
            for q in win {
                row.scaled_add(1.0 / count, &self.table.row(seg.subword_ids[q] as usize));
            }
            row[d - 1] += self.position_scale * self.position(t + 1);
        }
        Ok(EmbeddingSequence(out))
    }

    /// Gradient of `<upstream, encode(seg)>` with respect to the parameters.
    pub fn encode_backward(&self, seg: &Segmentation, upstream: &Array2<f64>) -> Result<Self> {
        self.check(seg)?;
        let n = seg.token_count();
        let d = self.dim();
        if upstream.dim() != (n + 1, d) {
            return Err(Error::shape(format!(
                "upstream gradient is {:?}, expected ({}, {d})",
                upstream.dim(),
                n + 1
            )));
        }
        let mut grad = self.zeros_like();
        grad.root.assign(&upstream.row(0));
        for t in 0..n {
            let g = upstream.row(t + 1);
            let win = self.window(seg, t);
            let count = win.clone().count() as f64;
            for q in win {
                grad.table
                    .row_mut(seg.subword_ids[q] as usize)
                    .scaled_add(1.0 / count, &g);
            }
            grad.position_scale += g[d - 1] * self.position(t + 1);
        }
        Ok(grad)
    }
}

/// BPE model plus encoder parameters: maps forms straight to embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub bpe: BpeModel,
    pub params: ToyEncoderParams,
}

impl ToyEncoder {
    pub fn segment(&self, forms: &[String]) -> Segmentation {
        self.bpe.segment(forms)
    }
}

impl Embedder for ToyEncoder {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn embed(&self, forms: &[String]) -> Result<EmbeddingSequence> {
        if forms.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        self.params.encode(&self.segment(forms))
    }
}

/// Embeddings read from a file, keyed by the sentence's forms.
///
/// Text format, one block per sentence:
///
/// ```text
/// n<TAB>d
/// form_1<TAB>...<TAB>form_n
/// <d values for ROOT>
/// <d values for token 1>
/// ...
/// ```
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    by_sentence: HashMap<Vec<String>, Array2<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn insert(&mut self, forms: Vec<String>, vectors: EmbeddingSequence) -> Result<()> {
        if vectors.n_tokens() != forms.len() {
            return Err(Error::shape("row count must be token count + 1"));
        }
        if self.by_sentence.is_empty() {
            self.dim = vectors.dim();
        } else if vectors.dim() != self.dim {
            return Err(Error::shape(format!("width {} != {}", vectors.dim(), self.dim)));
        }
        if !vectors.is_finite() {
            return Err(Error::invalid("non-finite embedding value"));
        }
        self.by_sentence.insert(forms, vectors.0);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sentence.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = PrecomputedEmbeddings::default();
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: format!("embeddings: {message}"),
        };
        while let Some((no, header)) = lines.next() {
            let (n, d) = header
                .split_once('\t')
                .and_then(|(n, d)| Some((n.trim().parse::<usize>().ok()?, d.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| bad(no, "expected `n<TAB>d` header"))?;
            let (no, forms_line) = lines.next().ok_or_else(|| bad(no, "missing forms line"))?;
            let forms: Vec<String> = forms_line.split('\t').map(str::to_owned).collect();
            if forms.len() != n {
                return Err(bad(no, "forms line does not have n entries"));
            }
            let mut m = Array2::zeros((n + 1, d));
            for r in 0..=n {
                let (no, row) = lines.next().ok_or_else(|| bad(no, "truncated block"))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(no, "bad number")))
                    .collect::<Result<_>>()?;
                if vals.len() != d {
                    return Err(bad(no, "row width differs from header"));
                }
                m.row_mut(r).assign(&Array1::from(vals));
            }
            out.insert(forms, EmbeddingSequence(m))?;
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<&Vec<String>> = self.by_sentence.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let m = &self.by_sentence[k];
            let _ = writeln!(out, "{}\t{}", k.len(), m.ncols());
            let _ = writeln!(out, "{}", k.join("\t"));
            for row in m.rows() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl Embedder for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, forms: &[String]) -> Result<EmbeddingSequence> {
        self.by_sentence
            .get(forms)
            .cloned()
            .map(EmbeddingSequence)
            .ok_or_else(|| Error::invalid(format!("no precomputed embeddings for `{}`", forms.join(" "))))
    }
}

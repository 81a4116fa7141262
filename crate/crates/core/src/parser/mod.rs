//! Dependency parsing as head selection.
//!
//! Every dependent picks a softmax distribution over candidate heads
//! (ROOT included, itself excluded) from the edge score
//! `f(e_j, e_i) = v . tanh(U e_j + W e_i)`. Labels come from a one-hidden-layer
//! ReLU network over `[e_i; e_j]`. When the independent head choices do not
//! form a tree they are repaired with Chu-Liu-Edmonds.

pub mod cle;

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conllu::{check_heads, Sentence, TreeCheck, Treebank};
use crate::encoder::{uniform1, uniform2, Embedder, EmbeddingSequence, ToyEncoder};
use crate::error::{Error, Result};
use crate::nn::{argmax, log_softmax, softmax, Dense};
use crate::optim::{slice1, slice1_mut, slice2, slice2_mut, Parameters};
use crate::subword::Segmentation;
use crate::train::Trainable;

pub use cle::max_arborescence;

/// Parameters of `f(e_j, e_i) = v . tanh(U e_j + W e_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScorer {
    /// d' x d, applied to the head.
    pub u: Array2<f64>,
    /// d' x d, applied to the dependent.
    pub w: Array2<f64>,
    pub v: Array1<f64>,
}

impl EdgeScorer {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, attention: usize) -> Self {
        let scale = (3.0 / dim as f64).sqrt();
        EdgeScorer {
            u: uniform2(rng, attention, dim, scale),
            w: uniform2(rng, attention, dim, scale),
            v: uniform1(rng, attention, (3.0 / attention as f64).sqrt()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EdgeScorer {
            u: Array2::zeros(self.u.raw_dim()),
            w: Array2::zeros(self.w.raw_dim()),
            v: Array1::zeros(self.v.len()),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }
}

impl Parameters for EdgeScorer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(slice2(&self.u));
        f(slice2(&self.w));
        f(slice1(&self.v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice2_mut(&mut self.u));
        f(slice2_mut(&mut self.w));
        f(slice1_mut(&mut self.v));
    }
}

/// `g([e_i; e_j]) = out(relu(hidden([e_i; e_j])))`, one output per label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeler {
    pub labels: Vec<String>,
    pub hidden: Dense,
    pub out: Dense,
}

impl Labeler {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, hidden: usize, labels: Vec<String>) -> Self {
        Labeler {
            hidden: Dense::init(rng, 2 * dim, hidden),
            out: Dense::init(rng, hidden, labels.len()),
            labels,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Labeler {
            labels: self.labels.clone(),
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    fn input(emb: &EmbeddingSequence, head: usize, dep: usize) -> Array1<f64> {
        ndarray::concatenate(Axis(0), &[emb.row(dep), emb.row(head)]).expect("same width")
    }

    fn logits(&self, x: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let pre = self.hidden.forward(x.view());
        let act = pre.mapv(|z| z.max(0.0));
        (self.out.forward(act.view()), pre)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl Parameters for Labeler {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.hidden.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.hidden.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// Head scores over nodes 0..=n: `scores[[j, i]]` for head j of dependent i.
///
/// Column 0 (ROOT has no head) and the diagonal are `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDigraph {
    pub scores: Array2<f64>,
}

impl WeightedDigraph {
    /// Wraps raw scores, masking self-loops and the ROOT column.
    pub fn new(mut scores: Array2<f64>) -> Result<Self> {
        let size = scores.nrows();
        if scores.ncols() != size || size < 2 {
            return Err(Error::shape(format!(
                "need an (n+1)x(n+1) matrix with n >= 1, got {:?}",
                scores.dim()
            )));
        }
        for k in 0..size {
            scores[[k, k]] = f64::NEG_INFINITY;
            scores[[k, 0]] = f64::NEG_INFINITY;
        }
        Ok(WeightedDigraph { scores })
    }

    pub fn n_tokens(&self) -> usize {
        self.scores.nrows() - 1
    }

    /// Sum of the selected edge scores, accumulated over dependents in order.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .fold(0.0, |acc, (k, &h)| acc + self.scores[[h, k + 1]])
    }
}

pub fn score_edges(scorer: &EdgeScorer, emb: &EmbeddingSequence) -> Result<WeightedDigraph> {
    if emb.dim() != scorer.dim() {
        return Err(Error::shape(format!(
            "embedding width {} but scorer expects {}",
            emb.dim(),
            scorer.dim()
        )));
    }
    if emb.n_tokens() == 0 {
        return Err(Error::Empty("sentence"));
    }
    let a = emb.0.dot(&scorer.u.t()); // row j: U e_j
    let b = emb.0.dot(&scorer.w.t()); // row i: W e_i
    let size = emb.0.nrows();
    let mut scores = Array2::from_elem((size, size), f64::NEG_INFINITY);
    for i in 1..size {
        for j in 0..size {
            if j != i {
                let z = &a.row(j) + &b.row(i);
                scores[[j, i]] = z.iter().zip(&scorer.v).map(|(z, v)| v * z.tanh()).sum();
            }
        }
    }
    WeightedDigraph::new(scores)
}

/// Softmax over column `dependent` (1-based); entry k is P(head = k).
pub fn head_distribution(graph: &WeightedDigraph, dependent: usize) -> Vec<f64> {
    let col: Vec<f64> = graph.scores.column(dependent).to_vec();
    softmax(&col)
}

/// Independent argmax per dependent and whether the result is a tree.
pub fn greedy_heads(graph: &WeightedDigraph) -> (Vec<usize>, bool) {
    let heads: Vec<usize> = (1..=graph.n_tokens())
        .map(|i| {
            argmax(
                graph
                    .scores
                    .column(i)
                    .as_slice()
                    .unwrap_or(&graph.scores.column(i).to_vec()),
            )
        })
        .collect();
    let is_tree = check_heads(&heads, TreeCheck { single_root: false }).is_ok();
    (heads, is_tree)
}

/// Maximum spanning arborescence rooted at 0.
pub fn chu_liu_edmonds(graph: &WeightedDigraph) -> Result<Vec<usize>> {
    max_arborescence(&graph.scores)
}

/// Best arborescence in which exactly one token attaches to ROOT.
pub fn chu_liu_edmonds_single_root(graph: &WeightedDigraph) -> Result<Vec<usize>> {
    let n = graph.n_tokens();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        if !graph.scores[[0, r]].is_finite() {
            continue;
        }
        let mut s = graph.scores.clone();
        for k in 1..=n {
            if k != r {
                s[[0, k]] = f64::NEG_INFINITY;
            }
        }
        let Ok(heads) = max_arborescence(&s) else { continue };
        let score = graph.tree_score(&heads);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, heads));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::NoArborescence("no single-root tree exists".into()))
}

pub fn label_distribution(
    labeler: &Labeler,
    emb: &EmbeddingSequence,
    head: usize,
    dependent: usize,
) -> Result<Vec<f64>> {
    if 2 * emb.dim() != labeler.hidden.inputs() {
        return Err(Error::shape(format!(
            "labeler expects [e_i; e_j] of width {}, embeddings have width {}",
            labeler.hidden.inputs(),
            emb.dim()
        )));
    }
    let (z, _) = labeler.logits(&Labeler::input(emb, head, dependent));
    Ok(softmax(z.as_slice().expect("contiguous")))
}

/// Gold structure of a training sentence as ids.
#[derive(Clone, Debug)]
pub struct ParseExample {
    pub seg: Segmentation,
    pub heads: Vec<usize>,
    /// `None` for labels not seen in training.
    pub labels: Vec<Option<usize>>,
}

/// Mean head NLL plus mean label NLL on gold edges, with gradients.
///
/// Returns `(loss, dL/dE)` and accumulates scorer/labeler gradients.
pub fn parser_backward(
    scorer: &EdgeScorer,
    labeler: &Labeler,
    emb: &EmbeddingSequence,
    gold_heads: &[usize],
    gold_labels: &[usize],
    grad_scorer: &mut EdgeScorer,
    grad_labeler: &mut Labeler,
) -> Result<(f64, Array2<f64>)> {
    let n = emb.n_tokens();
    if gold_heads.len() != n || gold_labels.len() != n {
        return Err(Error::shape("gold annotation length differs from token count"));
    }
    let e = &emb.0;
    let a = e.dot(&scorer.u.t());
    let b = e.dot(&scorer.w.t());
    let dprime = scorer.v.len();
    let mut da = Array2::<f64>::zeros((n + 1, dprime));
    let mut db = Array2::<f64>::zeros((n + 1, dprime));
    let mut demb = Array2::<f64>::zeros(e.raw_dim());
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;

    for i in 1..=n {
        let mut tanhs = Vec::with_capacity(n + 1);
        let mut col = vec![f64::NEG_INFINITY; n + 1];
        for j in 0..=n {
            if j == i {
                tanhs.push(Array1::zeros(dprime));
                continue;
            }
            let t = (&a.row(j) + &b.row(i)).mapv(f64::tanh);
            col[j] = t.dot(&scorer.v);
            tanhs.push(t);
        }
        let gold = gold_heads[i - 1];
        let lp = log_softmax(&col);
        loss -= lp[gold] * inv_n;
        for j in 0..=n {
            if j == i {
                continue;
            }
            let ds = (lp[j].exp() - f64::from(u8::from(j == gold))) * inv_n;
            if ds == 0.0 {
                continue;
            }
            let t = &tanhs[j];
            grad_scorer.v.scaled_add(ds, t);
            let dz = t.mapv(|t| 1.0 - t * t) * &scorer.v * ds;
            da.row_mut(j).scaled_add(1.0, &dz);
            db.row_mut(i).scaled_add(1.0, &dz);
        }

        // labeler on the gold edge
        let x = Labeler::input(emb, gold, i);
        let (z, pre) = labeler.logits(&x);
        let lpl = log_softmax(z.as_slice().expect("contiguous"));
        let gl = gold_labels[i - 1];
        loss -= lpl[gl] * inv_n;
        let mut dz = Array1::from(lpl.iter().map(|l| l.exp()).collect::<Vec<_>>());
        dz[gl] -= 1.0;
        dz *= inv_n;
        let act = pre.mapv(|p| p.max(0.0));
        let dact = labeler.out.backward(act.view(), dz.view(), &mut grad_labeler.out);
        let dpre = &dact * &pre.mapv(|p| if p > 0.0 { 1.0 } else { 0.0 });
        let dx = labeler.hidden.backward(x.view(), dpre.view(), &mut grad_labeler.hidden);
        let d = emb.dim();
        {
            let mut r = demb.row_mut(i);
            r += &dx.slice(s![..d]);
        }
        let mut r = demb.row_mut(gold);
        r += &dx.slice(s![d..]);
    }
    grad_scorer.u += &da.t().dot(e);
    grad_scorer.w += &db.t().dot(e);
    demb += &da.dot(&scorer.u);
    demb += &db.dot(&scorer.w);
    Ok((loss, demb))
}

/// How trees are decoded from head scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub single_root: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserModel {
    pub encoder: ToyEncoder,
    pub scorer: EdgeScorer,
    pub labeler: Labeler,
    pub decode: DecodeOptions,
}

/// Predicted heads and labels for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Arborescence {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParserModel {
    pub fn init<R: Rng>(
        rng: &mut R,
        encoder: ToyEncoder,
        train: &Treebank,
        attention: usize,
        label_hidden: usize,
    ) -> Self {
        let labels = train.distinct(|t| t.deprel.as_str());
        let dim = encoder.params.dim();
        ParserModel {
            scorer: EdgeScorer::init(rng, dim, attention),
            labeler: Labeler::init(rng, dim, label_hidden, labels),
            encoder,
            decode: DecodeOptions::default(),
        }
    }

    /// Validates gold trees and maps them to ids.
    pub fn examples(&self, tb: &Treebank) -> Result<Vec<ParseExample>> {
        tb.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(k, s)| {
                s.validate_tree(TreeCheck { single_root: false })
                    .map_err(|message| Error::InvalidTree {
                        sentence: s.label(k),
                        message,
                    })?;
                Ok(ParseExample {
                    seg: self.encoder.segment(&s.forms()),
                    heads: s.heads().expect("validated"),
                    labels: s.tokens.iter().map(|t| self.labeler.label_index(&t.deprel)).collect(),
                })
            })
            .collect()
    }

    pub fn decode_embeddings(&self, emb: &EmbeddingSequence) -> Result<Arborescence> {
        let graph = score_edges(&self.scorer, emb)?;
        let heads = if self.decode.single_root {
            chu_liu_edmonds_single_root(&graph)?
        } else {
            chu_liu_edmonds(&graph)?
        };
        let labels = heads
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let p = label_distribution(&self.labeler, emb, h, k + 1)?;
                Ok(self.labeler.labels[argmax(&p)].clone())
            })
            .collect::<Result<_>>()?;
        Ok(Arborescence { heads, labels })
    }

    pub fn parse_with(&self, embedder: &dyn Embedder, forms: &[String]) -> Result<Arborescence> {
        self.decode_embeddings(&embedder.embed(forms)?)
    }

    /// Fills HEAD and DEPREL of every sentence.
    pub fn parse_treebank(&self, tb: &mut Treebank) -> Result<()> {
        let trees: Vec<Option<Arborescence>> = tb
            .sentences
            .par_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    self.parse_with(&self.encoder, &s.forms()).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        for (s, tree) in tb.sentences.iter_mut().zip(trees) {
            if let Some(tree) = tree {
                apply_tree(s, tree);
            }
        }
        Ok(())
    }

    /// UAS and LAS in percent, decoding with CLE.
    pub fn attachment_scores(&self, examples: &[ParseExample]) -> Result<(f64, f64)> {
        let counts: Vec<(usize, usize, usize)> = examples
            .par_iter()
            .map(|ex| {
                let emb = self.encoder.params.encode(&ex.seg)?;
                let tree = self.decode_embeddings(&emb)?;
                let mut uas = 0;
                let mut las = 0;
                for (k, (&h, l)) in tree.heads.iter().zip(&tree.labels).enumerate() {
                    if h == ex.heads[k] {
                        uas += 1;
                        if ex.labels[k].map(|g| &self.labeler.labels[g]) == Some(l) {
                            las += 1;
                        }
                    }
                }
                Ok((uas, las, ex.heads.len()))
            })
            .collect::<Result<_>>()?;
        let (u, l, t) = counts
            .iter()
            .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
        if t == 0 {
            return Ok((0.0, 0.0));
        }
        Ok((100.0 * u as f64 / t as f64, 100.0 * l as f64 / t as f64))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.encoder.bpe.rebuild_index();
        Ok(m)
    }
}

pub fn apply_tree(sentence: &mut Sentence, tree: Arborescence) {
    for (tok, (h, l)) in sentence.tokens.iter_mut().zip(tree.heads.into_iter().zip(tree.labels)) {
        tok.head = Some(h);
        tok.deprel = l;
    }
}

impl Trainable for ParserModel {
    type Example = ParseExample;

    fn zero_grad(&self) -> Self {
        ParserModel {
            encoder: ToyEncoder {
                bpe: self.encoder.bpe.clone(),
                params: self.encoder.params.zeros_like(),
            },
            scorer: self.scorer.zeros_like(),
            labeler: self.labeler.zeros_like(),
            decode: self.decode,
        }
    }

    fn accumulate(&self, ex: &ParseExample, grad: &mut Self) -> Result<f64> {
        let labels: Vec<usize> = ex
            .labels
            .iter()
            .map(|l| l.ok_or_else(|| Error::invalid("dependency label unseen in training split")))
            .collect::<Result<_>>()?;
        let emb = self.encoder.params.encode(&ex.seg)?;
        let (loss, demb) = parser_backward(
            &self.scorer,
            &self.labeler,
            &emb,
            &ex.heads,
            &labels,
            &mut grad.scorer,
            &mut grad.labeler,
        )?;
        let genc = self.encoder.params.encode_backward(&ex.seg, &demb)?;
        grad.encoder.params.add_assign(&genc);
        Ok(loss)
    }

    fn parts(&self, with_encoder: bool) -> Vec<&dyn Parameters> {
        let mut v: Vec<&dyn Parameters> = vec![&self.scorer, &self.labeler];
        if with_encoder {
            v.push(&self.encoder.params);
        }
        v
    }

    fn parts_mut(&mut self, with_encoder: bool) -> Vec<&mut dyn Parameters> {
        let mut v: Vec<&mut dyn Parameters> = vec![&mut self.scorer, &mut self.labeler];
        if with_encoder {
            v.push(&mut self.encoder.params);
        }
        v
    }

    fn evaluate(&self, dev: &[ParseExample]) -> Result<(f64, Option<f64>)> {
        let (uas, las) = self.attachment_scores(dev)?;
        Ok((uas, Some(las)))
    }
}

//! Token-level PoS classification heads.
//!
//! UPoS and PROIEL XPoS use one softmax head. Perseus XPoS is predicted by
//! nine parallel heads (word class plus eight attributes, each with an
//! explicit empty value) whose mean token cross-entropies are averaged with
//! weight 1/9 each.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::{split_xpos_perseus, Sentence, Token, Treebank};
use crate::encoder::{Embedder, EmbeddingSequence, ToyEncoder};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, Dense};
use crate::optim::Parameters;
use crate::subword::Segmentation;
use crate::train::Trainable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagTask {
    Upos,
    XposPerseus,
    XposProiel,
}

impl TagTask {
    pub fn head_count(self) -> usize {
        match self {
            TagTask::XposPerseus => 9,
            _ => 1,
        }
    }

    /// Gold label strings of one token, one per head.
    pub fn gold_labels(self, token: &Token) -> Result<Vec<String>> {
        Ok(match self {
            TagTask::Upos => vec![token.upos.clone()],
            TagTask::XposProiel => vec![token.xpos.clone()],
            TagTask::XposPerseus => split_xpos_perseus(&token.xpos)?
                .0
                .iter()
                .map(|c| c.to_string())
                .collect(),
        })
    }

    /// Joins per-head predictions back into a tag string.
    pub fn join(self, labels: &[&str]) -> String {
        labels.concat()
    }

    pub fn apply(self, token: &mut Token, tag: String) {
        match self {
            TagTask::Upos => token.upos = tag,
            TagTask::XposPerseus | TagTask::XposProiel => token.xpos = tag,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TagTask::Upos => "upos",
            TagTask::XposPerseus => "xpos-perseus",
            TagTask::XposProiel => "xpos-proiel",
        }
    }
}

impl FromStr for TagTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upos" => Ok(TagTask::Upos),
            "xpos-perseus" => Ok(TagTask::XposPerseus),
            "xpos-proiel" => Ok(TagTask::XposProiel),
            other => Err(Error::Config(format!("unknown tagging task `{other}`"))),
        }
    }
}

/// One classification head: optional tanh hidden layer, then an affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagHead {
    pub labels: Vec<String>,
    pub hidden: Option<Dense>,
    pub out: Dense,
}

impl TagHead {
    fn logits(&self, e: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.hidden {
            Some(h) => self.out.forward(h.forward(e).mapv(f64::tanh).view()),
            None => self.out.forward(e),
        }
    }

    fn zeros_like(&self) -> Self {
        TagHead {
            labels: self.labels.clone(),
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            out: self.out.zeros_like(),
        }
    }

    /// Backprop of `dlogits`; returns dL/de.
    fn backward(&self, e: ArrayView1<'_, f64>, dlogits: ArrayView1<'_, f64>, grad: &mut TagHead) -> Array1<f64> {
        match &self.hidden {
            Some(h) => {
                let a = h.forward(e).mapv(f64::tanh);
                let da = self.out.backward(a.view(), dlogits, &mut grad.out);
                let dpre = da * a.mapv(|t| 1.0 - t * t);
                h.backward(e, dpre.view(), grad.hidden.as_mut().expect("same shape"))
            }
            None => self.out.backward(e, dlogits, &mut grad.out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerHeads {
    pub heads: Vec<TagHead>,
}

impl TaggerHeads {
    /// `inventories[m]` lists head m's labels; `hidden` adds a tanh layer of that width.
    pub fn init<R: Rng>(rng: &mut R, dim: usize, inventories: Vec<Vec<String>>, hidden: Option<usize>) -> Self {
        let heads = inventories
            .into_iter()
            .map(|labels| {
                let (hid, inp) = match hidden {
                    Some(h) => (Some(Dense::init(rng, dim, h)), h),
                    None => (None, dim),
                };
                let out = Dense::init(rng, inp, labels.len());
                TagHead {
                    labels,
                    hidden: hid,
                    out,
                }
            })
            .collect();
        TaggerHeads { heads }
    }

    pub fn zeros_like(&self) -> Self {
        TaggerHeads {
            heads: self.heads.iter().map(TagHead::zeros_like).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0]
            .hidden
            .as_ref()
            .map_or(self.heads[0].out.inputs(), Dense::inputs)
    }

    pub fn label_index(&self, head: usize, label: &str) -> Option<usize> {
        self.heads[head].labels.iter().position(|l| l == label)
    }

    /// Maps gold strings to label ids; unseen labels become `None`.
    pub fn encode_gold(&self, labels: &[String]) -> Vec<Option<usize>> {
        labels.iter().enumerate().map(|(m, l)| self.label_index(m, l)).collect()
    }
}

impl Parameters for TaggerHeads {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for h in &self.heads {
            if let Some(hid) = &h.hidden {
                hid.visit(f);
            }
            h.out.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for h in &mut self.heads {
            if let Some(hid) = &mut h.hidden {
                hid.visit_mut(f);
            }
            h.out.visit_mut(f);
        }
    }
}

/// `dist[t][m]` is head m's distribution for token t + 1.
pub type TagDistributions = Vec<Vec<Vec<f64>>>;

pub fn tag_forward(heads: &TaggerHeads, emb: &EmbeddingSequence) -> Result<TagDistributions> {
    if emb.n_tokens() == 0 {
        return Err(Error::Empty("sentence"));
    }
    if emb.dim() != heads.input_dim() {
        return Err(Error::shape(format!(
            "embedding width {} but heads expect {}",
            emb.dim(),
            heads.input_dim()
        )));
    }
    Ok((1..=emb.n_tokens())
        .map(|i| {
            heads
                .heads
                .iter()
                .map(|h| softmax(h.logits(emb.row(i)).as_slice().expect("contiguous")))
                .collect()
        })
        .collect())
}

/// Multi-head loss: the 1/H-weighted sum of each head's mean token cross-entropy.
///
/// `gold[t][m]` is the label id of head m at token t + 1.
pub fn multitask_loss(dists: &TagDistributions, gold: &[Vec<usize>]) -> Result<f64> {
    if dists.len() != gold.len() || dists.is_empty() {
        return Err(Error::shape("gold and predictions differ in token count"));
    }
    let h = dists[0].len();
    let n = dists.len() as f64;
    let mut per_head = vec![0.0; h];
    for (tok, g) in dists.iter().zip(gold) {
        if g.len() != h {
            return Err(Error::shape("gold label count differs from head count"));
        }
        for (m, (dist, &label)) in tok.iter().zip(g).enumerate() {
            let p = *dist
                .get(label)
                .ok_or_else(|| Error::shape(format!("label id {label} outside head {m}")))?;
            per_head[m] -= p.ln() / n;
        }
    }
    Ok(combine_head_losses(&per_head))
}

/// `sum_m L_m / H`.
pub fn combine_head_losses(per_head: &[f64]) -> f64 {
    let h = per_head.len() as f64;
    per_head.iter().map(|l| l / h).sum()
}

/// Loss plus gradients for the heads and for the embedding rows.
pub fn tagger_backward(
    heads: &TaggerHeads,
    emb: &EmbeddingSequence,
    gold: &[Vec<usize>],
    grad: &mut TaggerHeads,
) -> Result<(f64, Array2<f64>)> {
    let dists = tag_forward(heads, emb)?;
    let loss = multitask_loss(&dists, gold)?;
    let n = emb.n_tokens();
    let weight = 1.0 / (n as f64 * heads.heads.len() as f64);
    let mut demb = Array2::zeros((n + 1, emb.dim()));
    for (t, g) in gold.iter().enumerate() {
        for (m, head) in heads.heads.iter().enumerate() {
            let mut dz = Array1::from(dists[t][m].clone());
            dz[g[m]] -= 1.0;
            dz *= weight;
            let de = head.backward(emb.row(t + 1), dz.view(), &mut grad.heads[m]);
            let mut row = demb.row_mut(t + 1);
            row += &de;
        }
    }
    Ok((loss, demb))
}

/// Argmax label per head.
pub fn predict(dists: &TagDistributions) -> Vec<Vec<usize>> {
    dists
        .iter()
        .map(|tok| tok.iter().map(|d| argmax(d)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub task: TagTask,
    pub encoder: ToyEncoder,
    pub heads: TaggerHeads,
}

/// A pre-segmented training or evaluation sentence.
#[derive(Clone, Debug)]
pub struct TagExample {
    pub seg: Segmentation,
    pub gold: Vec<Vec<Option<usize>>>,
}

impl TaggerModel {
    /// Heads sized from the label inventory of `train`.
    pub fn init<R: Rng>(
        rng: &mut R,
        task: TagTask,
        encoder: ToyEncoder,
        train: &Treebank,
        hidden: Option<usize>,
    ) -> Result<Self> {
        let mut inventories: Vec<std::collections::BTreeSet<String>> = vec![Default::default(); task.head_count()];
        for t in train.sentences.iter().flat_map(|s| &s.tokens) {
            for (m, l) in task.gold_labels(t)?.into_iter().enumerate() {
                inventories[m].insert(l);
            }
        }
        let inventories = inventories.into_iter().map(|s| s.into_iter().collect()).collect();
        let heads = TaggerHeads::init(rng, encoder.params.dim(), inventories, hidden);
        Ok(TaggerModel { task, encoder, heads })
    }

    pub fn examples(&self, tb: &Treebank) -> Result<Vec<TagExample>> {
        tb.sentences
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| {
                let gold = s
                    .tokens
                    .iter()
                    .map(|t| Ok(self.heads.encode_gold(&self.task.gold_labels(t)?)))
                    .collect::<Result<_>>()?;
                Ok(TagExample {
                    seg: self.encoder.segment(&s.forms()),
                    gold,
                })
            })
            .collect()
    }

    pub fn distributions(&self, emb: &EmbeddingSequence) -> Result<TagDistributions> {
        tag_forward(&self.heads, emb)
    }

    /// Predicted tag strings for a sentence, using any embedding source.
    pub fn tag_with(&self, embedder: &dyn Embedder, forms: &[String]) -> Result<Vec<String>> {
        let dists = self.distributions(&embedder.embed(forms)?)?;
        Ok(predict(&dists)
            .into_iter()
            .map(|ids| {
                let labels: Vec<&str> = ids
                    .iter()
                    .enumerate()
                    .map(|(m, &k)| self.heads.heads[m].labels[k].as_str())
                    .collect();
                self.task.join(&labels)
            })
            .collect())
    }

    pub fn tag_sentence(&self, sentence: &mut Sentence) -> Result<()> {
        let tags = self.tag_with(&self.encoder, &sentence.forms())?;
        for (tok, tag) in sentence.tokens.iter_mut().zip(tags) {
            self.task.apply(tok, tag);
        }
        Ok(())
    }

    /// Token accuracy in percent; a token counts only if every head is right.
    pub fn accuracy(&self, examples: &[TagExample]) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for ex in examples {
            let emb = self.encoder.params.encode(&ex.seg)?;
            let pred = predict(&self.distributions(&emb)?);
            for (p, g) in pred.iter().zip(&ex.gold) {
                total += 1;
                if p.iter().zip(g).all(|(p, g)| Some(*p) == *g) {
                    correct += 1;
                }
            }
        }
        Ok(if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        })
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

fn require_gold(ex: &TagExample, heads: &TaggerHeads) -> Result<Vec<Vec<usize>>> {
    ex.gold
        .iter()
        .map(|g| {
            g.iter()
                .enumerate()
                .map(|(m, l)| {
                    l.ok_or_else(|| Error::UnseenLabel {
                        head: m,
                        label: format!("(unseen, {} known)", heads.heads[m].labels.len()),
                    })
                })
                .collect()
        })
        .collect()
}

impl Trainable for TaggerModel {
    type Example = TagExample;

    fn zero_grad(&self) -> Self {
        TaggerModel {
            task: self.task,
            encoder: ToyEncoder {
                bpe: self.encoder.bpe.clone(),
                params: self.encoder.params.zeros_like(),
            },
            heads: self.heads.zeros_like(),
        }
    }

    fn accumulate(&self, ex: &TagExample, grad: &mut Self) -> Result<f64> {
        let gold = require_gold(ex, &self.heads)?;
        let emb = self.encoder.params.encode(&ex.seg)?;
        let (loss, demb) = tagger_backward(&self.heads, &emb, &gold, &mut grad.heads)?;
        let genc = self.encoder.params.encode_backward(&ex.seg, &demb)?;
        grad.encoder.params.add_assign(&genc);
        Ok(loss)
    }

    fn parts(&self, with_encoder: bool) -> Vec<&dyn Parameters> {
        let mut v: Vec<&dyn Parameters> = vec![&self.heads];
        if with_encoder {
            v.push(&self.encoder.params);
        }
        v
    }

    fn parts_mut(&mut self, with_encoder: bool) -> Vec<&mut dyn Parameters> {
        let mut v: Vec<&mut dyn Parameters> = vec![&mut self.heads];
        if with_encoder {
            v.push(&mut self.encoder.params);
        }
        v
    }

    fn evaluate(&self, dev: &[TagExample]) -> Result<(f64, Option<f64>)> {
        Ok((self.accuracy(dev)?, None))
    }
}

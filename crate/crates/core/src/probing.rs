//! Knowledge probes: few-shot synonym/antonym disambiguation with k-fold
//! cross-validation, and recall@k over ranked entity predictions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Embedder, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::forge::normalize;

pub const MASK: &str = "<mask>";
pub const SYNONYM_FILLER: &str = "πάντως";
pub const ANTONYM_FILLER: &str = "οὐχ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairRelation {
    Synonym,
    Antonym,
}

impl PairRelation {
    pub fn gold_filler(self) -> &'static str {
        match self {
            PairRelation::Synonym => SYNONYM_FILLER,
            PairRelation::Antonym => ANTONYM_FILLER,
        }
    }
}

impl FromStr for PairRelation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonym" => Ok(PairRelation::Synonym),
            "antonym" => Ok(PairRelation::Antonym),
            _ => Err(Error::invalid(format!(
                "relation must be synonym or antonym, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for PairRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairRelation::Synonym => "synonym",
            PairRelation::Antonym => "antonym",
        })
    }
}

/// One line of a pair-probe file. `word_a`/`word_b` are optional because
/// edited prompts need not follow the template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairProbe {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_b: Option<String>,
    pub relation: PairRelation,
    pub prompt: String,
    pub gold: String,
}

impl PairProbe {
    pub fn new(word_a: &str, word_b: &str, relation: PairRelation) -> Result<Self> {
        Ok(PairProbe {
            prompt: render_pair_prompt(word_a, word_b)?,
            word_a: Some(word_a.to_string()),
            word_b: Some(word_b.to_string()),
            gold: relation.gold_filler().to_string(),
            relation,
        })
    }

    /// Warnings about degenerate or inconsistent probes.
    pub fn lint(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let (Some(a), Some(b)) = (&self.word_a, &self.word_b) {
            if normalize(a) == normalize(b) {
                w.push(format!("pair ({a}, {b}) compares a word with itself"));
            }
        }
        if self.prompt.matches(MASK).count() != 1 {
            w.push(format!("prompt {:?} needs exactly one {MASK}", self.prompt));
        }
        if self.gold != self.relation.gold_filler() {
            w.push(format!(
                "gold {:?} does not match relation {}",
                self.gold, self.relation
            ));
        }
        w
    }
}

pub fn render_pair_prompt(word_a: &str, word_b: &str) -> Result<String> {
    if word_a.trim().is_empty() || word_b.trim().is_empty() {
        return Err(Error::invalid("pair words must be nonempty"));
    }
    Ok(format!("τὸ {word_a} καὶ τὸ {word_b}· {MASK} ὁμοῖά ἐστιν"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationProbe {
    pub prompt: String,
    pub gold: String,
    pub relation: String,
}

impl RelationProbe {
    pub fn validate(&self) -> Result<()> {
        if self.gold.trim().is_empty() {
            return Err(Error::invalid(format!("empty gold entity for {:?}", self.prompt)));
        }
        if self.prompt.matches(MASK).count() != 1 {
            return Err(Error::invalid(format!(
                "prompt {:?} needs exactly one {MASK}",
                self.prompt
            )));
        }
        Ok(())
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
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

/// Stratified folds of indices: every class is dealt round-robin after a
/// seeded shuffle, so fold sizes and per-class counts differ by at most one.
pub fn kfold_split<C: Ord + Clone>(classes: &[C], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if k > classes.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} examples", classes.len())));
    }
    let mut by_class: BTreeMap<C, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        by_class.entry(c.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Scores a filler for the mask of a prompt (higher is more likely).
pub trait FillerScorer: Sync {
    fn score(&self, prompt: &str, filler: &str) -> f64;
}

/// Something that can be fine-tuned on a handful of labelled probes.
pub trait FewShotLearner: Sync {
    type Scorer: FillerScorer;

    fn fit(&self, train: &[&PairProbe], seed: u64) -> Result<Self::Scorer>;
}

/// Scores the gold filler 0 and the other one -1.
#[derive(Clone, Debug)]
pub struct OracleScorer {
    gold: HashMap<String, String>,
    anti: bool,
}

impl OracleScorer {
    pub fn new(probes: &[PairProbe]) -> Self {
        OracleScorer {
            gold: probes.iter().map(|p| (p.prompt.clone(), p.gold.clone())).collect(),
            anti: false,
        }
    }

    /// Always prefers the wrong filler.
    pub fn anti(probes: &[PairProbe]) -> Self {
        OracleScorer {
            anti: true,
            ..Self::new(probes)
        }
    }
}

impl FillerScorer for OracleScorer {
    fn score(&self, prompt: &str, filler: &str) -> f64 {
        let hit = self.gold.get(prompt).is_some_and(|g| g == filler);
        if hit != self.anti {
            0.0
        } else {
            -1.0
        }
    }
}

/// Uniform random scores, fixed per (seed, prompt, filler).
#[derive(Clone, Copy, Debug)]
pub struct CoinFlipScorer {
    pub seed: u64,
}

fn fnv1a(seed: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

impl FillerScorer for CoinFlipScorer {
    fn score(&self, prompt: &str, filler: &str) -> f64 {
        ChaCha8Rng::seed_from_u64(fnv1a(self.seed, &[prompt, filler])).gen()
    }
}

/// A learner that ignores its training data.
pub struct Fixed<S>(pub S);

impl<S: FillerScorer + Clone> FewShotLearner for Fixed<S> {
    type Scorer = S;

    fn fit(&self, _train: &[&PairProbe], _seed: u64) -> Result<S> {
        Ok(self.0.clone())
    }
}

/// Predicts the filler with the higher score; ties go to the synonym filler.
pub fn predict_relation(scorer: &dyn FillerScorer, prompt: &str) -> PairRelation {
    let syn = scorer.score(prompt, SYNONYM_FILLER);
    let ant = scorer.score(prompt, ANTONYM_FILLER);
    if ant > syn {
        PairRelation::Antonym
    } else {
        PairRelation::Synonym
    }
}

pub fn probe_accuracy(scorer: &dyn FillerScorer, probes: &[&PairProbe]) -> f64 {
    if probes.is_empty() {
        return 0.0;
    }
    let hits = probes
        .iter()
        .filter(|p| predict_relation(scorer, &p.prompt) == p.relation)
        .count();
    100.0 * hits as f64 / probes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    /// Training examples per class.
    pub shots: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains on `shots` examples per class drawn from the other folds and
/// evaluates on each held-out fold in turn.
pub fn fewshot_eval<L: FewShotLearner>(
    learner: &L,
    probes: &[PairProbe],
    folds: &[Vec<usize>],
    shot_sizes: &[usize],
    seed: u64,
) -> Result<Vec<ShotResult>> {
    shot_sizes
        .iter()
        .map(|&shots| {
            let accs: Vec<f64> = folds
                .par_iter()
                .enumerate()
                .map(|(f, test)| {
                    let held: HashSet<usize> = test.iter().copied().collect();
                    let mut by_class: BTreeMap<PairRelation, Vec<usize>> = BTreeMap::new();
                    for (g, fold) in folds.iter().enumerate() {
                        if g != f {
                            for &i in fold {
                                by_class.entry(probes[i].relation).or_default().push(i);
                            }
                        }
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((f as u64) << 32) ^ shots as u64);
                    let mut train = Vec::new();
                    for rel in [PairRelation::Synonym, PairRelation::Antonym] {
                        let pool = by_class.get(&rel).map(Vec::as_slice).unwrap_or(&[]);
                        if pool.len() < shots {
                            return Err(Error::invalid(format!(
                                "{shots} shots per class but fold {f} leaves {} {rel} examples",
                                pool.len()
                            )));
                        }
                        train.extend(pool.choose_multiple(&mut rng, shots).copied());
                    }
                    if train.iter().any(|i| held.contains(i)) {
                        return Err(Error::invalid("training sample overlaps the evaluation fold"));
                    }
                    let train: Vec<&PairProbe> = train.iter().map(|&i| &probes[i]).collect();
                    let scorer = learner.fit(&train, seed ^ (f as u64))?;
                    let test: Vec<&PairProbe> = test.iter().map(|&i| &probes[i]).collect();
                    Ok(probe_accuracy(&scorer, &test))
                })
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&accs);
            Ok(ShotResult {
                shots,
                fold_accuracies: accs,
                mean,
                std,
            })
        })
        .collect()
}

/// A recall cutoff; `All` uses the whole list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cutoff {
    At(usize),
    All,
}

impl FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "all" => Ok(Cutoff::All),
            t => t
                .parse()
                .map(Cutoff::At)
                .map_err(|_| Error::invalid(format!("bad cutoff {t:?}"))),
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::At(k) => write!(f, "{k}"),
            Cutoff::All => f.write_str("inf"),
        }
    }
}

/// Fraction of examples whose gold entity is among the first k predictions.
pub fn recall_at_k<S: AsRef<str> + Sync, G: AsRef<str> + Sync>(
    ranked: &[Vec<S>],
    gold: &[G],
    ks: &[Cutoff],
) -> Result<Vec<(Cutoff, f64)>> {
    if ranked.len() != gold.len() {
        return Err(Error::shape(format!(
            "{} prediction lists for {} gold entities",
            ranked.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let key = |s: &str| normalize(s.trim());
    // rank of the first hit, if any
    let ranks: Vec<Option<usize>> = ranked
        .par_iter()
        .zip(gold)
        .map(|(preds, g)| {
            let g = key(g.as_ref());
            preds.iter().position(|p| key(p.as_ref()) == g)
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks
                .iter()
                .filter(|r| match (r, k) {
                    (Some(_), Cutoff::All) => true,
                    (Some(r), Cutoff::At(k)) => *r < k,
                    (None, _) => false,
                })
                .count();
            (k, hits as f64 / gold.len() as f64)
        })
        .collect())
}

/// Mean toy-encoder embedding of the prompt and a logistic head predicting
/// the synonym filler.
pub struct ToyFillerLearner<E: Embedder + Clone + Sync> {
    pub embedder: E,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct ToyFillerScorer<E: Embedder + Clone + Sync> {
    embedder: E,
    w: Array1<f64>,
    b: f64,
}

fn prompt_features(embedder: &dyn Embedder, prompt: &str) -> Result<Array1<f64>> {
    let forms: Vec<String> = prompt.split_whitespace().map(String::from).collect();
    let EmbeddingSequence(e) = embedder.embed(&forms)?;
    Ok(e.slice(ndarray::s![1.., ..])
        .mean_axis(ndarray::Axis(0))
        .expect("nonempty prompt"))
}

fn log_sigmoid(z: f64) -> f64 {
    -((-z).exp().ln_1p())
}

impl<E: Embedder + Clone + Sync> FillerScorer for ToyFillerScorer<E> {
    fn score(&self, prompt: &str, filler: &str) -> f64 {
        let Ok(x) = prompt_features(&self.embedder, prompt) else {
            return f64::NEG_INFINITY;
        };
        let z = self.w.dot(&x) + self.b;
        match filler {
            SYNONYM_FILLER => log_sigmoid(z),
            ANTONYM_FILLER => log_sigmoid(-z),
            _ => f64::NEG_INFINITY,
        }
    }
}

impl<E: Embedder + Clone + Sync> FewShotLearner for ToyFillerLearner<E> {
    type Scorer = ToyFillerScorer<E>;

    fn fit(&self, train: &[&PairProbe], _seed: u64) -> Result<Self::Scorer> {
        let data: Vec<(Array1<f64>, f64)> = train
            .iter()
            .map(|p| {
                Ok((
                    prompt_features(&self.embedder, &p.prompt)?,
                    f64::from(u8::from(p.relation == PairRelation::Synonym)),
                ))
            })
            .collect::<Result<_>>()?;
        let dim = self.embedder.dim();
        let mut w = Array1::zeros(dim);
        let mut b = 0.0;
        let n = data.len().max(1) as f64;
        for _ in 0..self.epochs {
            let mut gw = Array1::<f64>::zeros(dim);
            let mut gb = 0.0;
            for (x, y) in &data {
                let p = 1.0 / (1.0 + (-(w.dot(x) + b)).exp());
                gw.scaled_add((p - y) / n, x);
                gb += (p - y) / n;
            }
            w.scaled_add(-self.learning_rate, &gw);
            b -= self.learning_rate * gb;
        }
        Ok(ToyFillerScorer {
            embedder: self.embedder.clone(),
            w,
            b,
        })
    }
}

//! UD-style scores under gold tokenization.
//!
//! Follows the CoNLL 2018 shared-task scorer where the tokenizations agree:
//! DEPREL subtypes after `:` are ignored for LAS, and a gold lemma of `_`
//! counts as matched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conllu::{Treebank, UNDERSCORE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub upos_acc: f64,
    pub xpos_acc: f64,
    pub uas: f64,
    pub las: f64,
    pub lemma_acc: f64,
    pub token_count: usize,
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tokens: usize,
    upos: usize,
    xpos: usize,
    uas: usize,
    las: usize,
    lemma: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tokens: self.tokens + o.tokens,
            upos: self.upos + o.upos,
            xpos: self.xpos + o.xpos,
            uas: self.uas + o.uas,
            las: self.las + o.las,
            lemma: self.lemma + o.lemma,
        }
    }
}

fn universal(deprel: &str) -> &str {
    deprel.split(':').next().unwrap_or(deprel)
}

/// Percentage in the same operation order as the reference scorer.
fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * (correct as f64 / total as f64)
    }
}

pub fn evaluate(gold: &Treebank, pred: &Treebank) -> Result<EvalReport> {
    if gold.sentences.len() != pred.sentences.len() {
        let k = gold.sentences.len().min(pred.sentences.len());
        let label = if k < gold.sentences.len() {
            gold.sentences[k].label(k)
        } else {
            pred.sentences[k].label(k)
        };
        return Err(Error::Mismatch {
            sentence: label,
            message: format!(
                "gold has {} sentences, prediction has {}",
                gold.sentences.len(),
                pred.sentences.len()
            ),
        });
    }
    for (k, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.len() != p.len() || g.tokens.iter().zip(&p.tokens).any(|(a, b)| a.form != b.form) {
            return Err(Error::Mismatch {
                sentence: g.label(k),
                message: "token forms differ".into(),
            });
        }
    }
    let c = gold
        .sentences
        .par_iter()
        .zip(&pred.sentences)
        .map(|(g, p)| {
            let mut c = Counts::default();
            for (a, b) in g.tokens.iter().zip(&p.tokens) {
                c.tokens += 1;
                c.upos += usize::from(a.upos == b.upos);
                c.xpos += usize::from(a.xpos == b.xpos);
                c.lemma += usize::from(a.lemma == UNDERSCORE || a.lemma == b.lemma);
                if a.head == b.head {
                    c.uas += 1;
                    c.las += usize::from(universal(&a.deprel) == universal(&b.deprel));
                }
            }
            c
        })
        .reduce(Counts::default, |a, b| a + b);
    Ok(EvalReport {
        upos_acc: percent(c.upos, c.tokens),
        xpos_acc: percent(c.xpos, c.tokens),
        uas: percent(c.uas, c.tokens),
        las: percent(c.las, c.tokens),
        lemma_acc: percent(c.lemma, c.tokens),
        token_count: c.tokens,
    })
}

impl EvalReport {
    /// `metric<TAB>value` rows, two decimals.
    pub fn to_tsv(&self) -> String {
        format!(
            "metric\tvalue\nUPOS\t{:.2}\nXPOS\t{:.2}\nUAS\t{:.2}\nLAS\t{:.2}\nLemmas\t{:.2}\nTokens\t{}\n",
            self.upos_acc, self.xpos_acc, self.uas, self.las, self.lemma_acc, self.token_count
        )
    }
}

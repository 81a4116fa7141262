#![allow(dead_code)]

pub mod checks;

use philokit::conllu::{Sentence, Treebank};
use philokit::encoder::{EncoderConfig, ToyEncoder, ToyEncoderParams};
use philokit::lemma::{make_lemma_examples, LemmaExample};
use philokit::subword::learn_bpe;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GREEK: &[char] = &[
    'α', 'β', 'γ', 'δ', 'ε', 'ζ', 'η', 'θ', 'ι', 'κ', 'λ', 'μ', 'ν', 'ξ', 'ο', 'π', 'ρ', 'σ', 'τ', 'υ', 'φ', 'χ', 'ψ',
    'ω',
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn word(rng: &mut impl Rng, alphabet: &[char], min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

/// `n` distinct random words.
pub fn lexicon(rng: &mut impl Rng, n: usize, min: usize, max: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let w = word(rng, GREEK, min, max);
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

pub const TAGS: [&str; 5] = ["NOUN", "VERB", "ADJ", "ADV", "ADP"];

/// Sentences whose UPOS is a fixed function of the word.
pub fn tag_corpus(lex: &[String], rng: &mut impl Rng, sentences: usize) -> Treebank {
    let tb = (0..sentences)
        .map(|_| {
            let len = rng.gen_range(3..=10);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..lex.len())).collect();
            let mut s = Sentence::from_forms(&ids.iter().map(|&i| lex[i].clone()).collect::<Vec<_>>());
            for (t, &i) in s.tokens.iter_mut().zip(&ids) {
                t.upos = TAGS[i % TAGS.len()].to_string();
            }
            s
        })
        .collect();
    Treebank::new(tb)
}

/// Head of token i is i - 1; token 1 is the root.
pub fn head_initial_corpus(lex: &[String], rng: &mut impl Rng, sentences: usize) -> Treebank {
    let tb = (0..sentences)
        .map(|_| {
            let len = rng.gen_range(2..=10);
            let forms: Vec<String> = (0..len).map(|_| lex.choose(rng).unwrap().clone()).collect();
            let mut s = Sentence::from_forms(&forms);
            for (k, t) in s.tokens.iter_mut().enumerate() {
                t.head = Some(k);
                t.deprel = if k == 0 { "root".into() } else { "dep".into() };
            }
            s
        })
        .collect();
    Treebank::new(tb)
}

pub fn encoder(train: &Treebank, seed: u64, cfg: &EncoderConfig) -> ToyEncoder {
    let lines: Vec<String> = train.sentences.iter().map(|s| s.forms().join(" ")).collect();
    let bpe = learn_bpe(&lines, 2000).unwrap();
    let params = ToyEncoderParams::init(&mut rng(seed), bpe.vocab_size(), cfg);
    ToyEncoder { bpe, params }
}

/// Lemma examples from sentences of random words; `lemma_of` sees (form, left neighbour).
pub fn lemma_examples(
    rng: &mut impl Rng,
    sentences: usize,
    make: &mut dyn FnMut(&mut ChaCha8Rng, usize) -> Vec<(String, String)>,
) -> Vec<LemmaExample> {
    let mut inner = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut out = Vec::new();
    for _ in 0..sentences {
        let len = inner.gen_range(1..=6);
        let pairs = make(&mut inner, len);
        let forms: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
        let mut s = Sentence::from_forms(&forms);
        for (t, p) in s.tokens.iter_mut().zip(&pairs) {
            t.lemma = p.1.clone();
        }
        out.extend(make_lemma_examples(&s, false));
    }
    out
}

/// Lemma = form.
pub fn copy_dataset(seed: u64, n: usize) -> Vec<LemmaExample> {
    let mut r = rng(seed);
    let mut ex = lemma_examples(&mut r, n, &mut |rng, len| {
        (0..len)
            .map(|_| {
                let w = word(rng, GREEK, 2, 8);
                (w.clone(), w)
            })
            .collect()
    });
    ex.truncate(n);
    ex
}

pub const CUES: [(&str, char); 3] = [("ὁ", 'ς'), ("ἡ", 'η'), ("τό", 'ν')];

/// Every other word is a cue article; the following noun carries the suffix the
/// cue selects, and its lemma drops that suffix. Articles are their own lemma.
pub fn suffix_dataset(seed: u64, n: usize) -> Vec<LemmaExample> {
    let mut r = rng(seed);
    let ex = lemma_examples(&mut r, n, &mut |rng, len| {
        let mut pairs = Vec::new();
        for _ in 0..len.div_ceil(2) {
            let (cue, suffix) = CUES[rng.gen_range(0..CUES.len())];
            let stem = word(rng, GREEK, 2, 7);
            pairs.push((cue.to_string(), cue.to_string()));
            pairs.push((format!("{stem}{suffix}"), stem));
        }
        pairs
    });
    // keep only the inflected nouns
    let mut nouns: Vec<LemmaExample> = ex
        .into_iter()
        .filter(|e| !CUES.iter().any(|(c, _)| e.target == *c))
        .collect();
    nouns.truncate(n);
    nouns
}

//! The `philokit` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_list, RunConfig};
use crate::conllu::{TreeCheck, Treebank};
use crate::encoder::{EncoderConfig, ToyEncoder, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::forge::{self, FilterConfig};
use crate::lemma::{self, CharLemmatizer, LemmaExample};
use crate::metrics::evaluate;
use crate::parser::ParserModel;
use crate::probing::{self, CoinFlipScorer, Cutoff, Fixed, OracleScorer, PairProbe, RelationProbe, ToyFillerLearner};
use crate::subword::{learn_bpe, BpeModel};
use crate::tagging::{TagTask, TaggerModel};
use crate::train::{fit, history_tsv, EpochStats};

#[derive(Parser, Debug)]
#[command(name = "philokit", version, about = "Ancient Greek treebank and corpus toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect Greek books, filter lines by vocabulary coverage and remove long repeats
    Curate(CurateArgs),
    /// Learn a BPE model from a text or CoNLL-U corpus
    BpeLearn(BpeArgs),
    /// Train a PoS tagger on the toy encoder
    TrainTagger(TrainTaggerArgs),
    /// Train a head-selection dependency parser on the toy encoder
    TrainParser(TrainParserArgs),
    /// Fill UPOS or XPOS with a trained tagger
    Tag(ApplyArgs),
    /// Fill HEAD and DEPREL with a trained parser
    Parse(ApplyArgs),
    /// Write lemmatization examples as JSON lines
    LemmaFormat(LemmaFormatArgs),
    /// Train the character-level lemmatizer
    LemmaTrain(LemmaTrainArgs),
    /// Decode lemmata by beam search
    LemmaDecode(LemmaDecodeArgs),
    /// Score a prediction against gold CoNLL-U
    Eval(EvalArgs),
    /// Knowledge probes
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Token counts (`wc -w`) and treebank summaries
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct CurateArgs {
    /// Directory of UTF-8 text files
    #[arg(long = "in")]
    input: PathBuf,
    /// Born-digital vocabulary, whitespace separated
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory for the filtered files
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    coverage: f64,
    #[arg(long = "dup-chars", default_value_t = 300)]
    dup_chars: usize,
    #[arg(long = "min-stopword-count", default_value_t = 10)]
    min_stopword_count: usize,
    /// Match stopwords with diacritics intact
    #[arg(long = "keep-diacritics")]
    keep_diacritics: bool,
    /// Leave punctuation-only tokens out of the coverage ratio
    #[arg(long = "exclude-punctuation")]
    exclude_punctuation: bool,
    /// Per-source token counts
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Dropped lines with reasons; defaults to <out>/drop_log.tsv
    #[arg(long = "drop-log")]
    drop_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BpeArgs {
    /// Text (one sentence per line) or .conllu files
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long = "vocab-size")]
    vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct TrainCommon {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Model output (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Existing BPE model; learned from the training forms otherwise
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long = "vocab-size")]
    vocab_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// sgd or adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train once per seed and report mean ± std, e.g. 42,1,2
    #[arg(long)]
    seeds: Option<String>,
    /// Keep the encoder frozen
    #[arg(long = "freeze-encoder")]
    freeze_encoder: bool,
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    #[arg(long = "context-radius")]
    context_radius: Option<usize>,
    #[arg(long = "position-norm")]
    position_norm: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainTaggerArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// upos, xpos-perseus or xpos-proiel
    #[arg(long)]
    task: Option<String>,
    /// Hidden layer width of each head (0 = linear)
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainParserArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long = "attention-dim")]
    attention_dim: Option<usize>,
    #[arg(long = "label-hidden")]
    label_hidden: Option<usize>,
    /// Decode trees with exactly one root dependent
    #[arg(long = "single-root")]
    single_root: bool,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LemmaFormatArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Append the token's characters after a separator
    #[arg(long)]
    chars: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LemmaTrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug)]
struct LemmaDecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Lemma examples (JSON lines)
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    beam: usize,
    #[arg(long = "max-len", default_value_t = 50)]
    max_len: usize,
    /// Candidates kept per example
    #[arg(long = "n-best", default_value_t = 1)]
    n_best: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    /// Few-shot synonym/antonym disambiguation with k-fold cross-validation
    Pairs(PairsArgs),
    /// recall@k of ranked entity predictions
    Relations(RelationsArgs),
}

#[derive(Args, Debug)]
struct PairsArgs {
    /// Probe file (JSON lines: prompt, gold, relation)
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "10,20,30,40,50")]
    shots: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// toy, oracle, anti-oracle or coin
    #[arg(long, default_value = "toy")]
    scorer: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RelationsArgs {
    /// Probe file (JSON lines: prompt, gold, relation)
    #[arg(long = "in")]
    input: PathBuf,
    /// Ranked predictions, one JSON array of strings per line
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "1,5,10,inf")]
    ks: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("philokit: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Curate(a) => curate(a),
        Command::BpeLearn(a) => bpe_learn(a),
        Command::TrainTagger(a) => train_tagger(a),
        Command::TrainParser(a) => train_parser(a),
        Command::Tag(a) => tag(a),
        Command::Parse(a) => parse(a),
        Command::LemmaFormat(a) => lemma_format(a),
        Command::LemmaTrain(a) => lemma_train(a),
        Command::LemmaDecode(a) => lemma_decode(a),
        Command::Eval(a) => eval(a),
        Command::Probe(ProbeCommand::Pairs(a)) => probe_pairs(a),
        Command::Probe(ProbeCommand::Relations(a)) => probe_relations(a),
        Command::Stats(a) => stats(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    forge::normalize_bytes(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn is_conllu(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "conllu")
}

/// Reads CoNLL-U with NFC-normalized text.
fn read_treebank(path: &Path) -> Result<Treebank> {
    crate::conllu::parse_conllu(&read_text(path)?)
}

fn curate(a: CurateArgs) -> Result<()> {
    let cfg = FilterConfig {
        coverage_threshold: a.coverage,
        dup_min_chars: a.dup_chars,
        stopword_min_count: a.min_stopword_count,
        strip_stopword_diacritics: !a.keep_diacritics,
        exclude_punctuation: a.exclude_punctuation,
        ..FilterConfig::default()
    };
    cfg.validate()?;
    let vocab = forge::load_vocab(&a.vocab)?;
    let docs = forge::read_documents(&a.input)?;
    let curated = forge::curate(docs, &vocab, &cfg)?;
    forge::write_documents(&curated, &a.out)?;
    let log = a.drop_log.clone().unwrap_or_else(|| a.out.join("drop_log.tsv"));
    write(&log, &forge::drop_log_tsv(&curated))?;
    let counts: Vec<(String, usize)> = curated
        .iter()
        .filter(|d| d.greek)
        .map(|d| (d.source_id.clone(), forge::count_tokens(&d.kept_text())))
        .collect();
    let table = forge::stats_tsv(&counts);
    match &a.stats {
        Some(p) => write(p, &table)?,
        None => print!("{table}"),
    }
    let mut rc = RunConfig::new();
    rc.set("command", "curate");
    rc.set("in", a.input.display());
    rc.set("vocab", a.vocab.display());
    rc.set("coverage", cfg.coverage_threshold);
    rc.set("dup_chars", cfg.dup_min_chars);
    rc.set("min_stopword_count", cfg.stopword_min_count);
    rc.set("strip_diacritics", cfg.strip_stopword_diacritics);
    rc.set("exclude_punctuation", cfg.exclude_punctuation);
    rc.set("stopwords", cfg.stopwords.join(","));
    rc.save(a.out.join("curate.run.cfg"))
}

fn corpus_lines(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for p in paths {
        if is_conllu(p) {
            let tb = read_treebank(p)?;
            lines.extend(tb.sentences.iter().map(|s| s.forms().join(" ")));
        } else {
            lines.extend(read_text(p)?.lines().map(String::from));
        }
    }
    Ok(lines)
}

fn bpe_learn(a: BpeArgs) -> Result<()> {
    let lines = corpus_lines(&a.input)?;
    let model = learn_bpe(&lines, a.vocab_size)?;
    model.save(&a.out)?;
    let mut rc = RunConfig::new();
    rc.set("command", "bpe-learn");
    rc.set(
        "in",
        a.input
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    rc.set("vocab_size", a.vocab_size);
    rc.save(sibling(&a.out, ".run.cfg"))
}

fn resolve_common(c: &TrainCommon, command: &str) -> Result<RunConfig> {
    let mut rc = RunConfig::new();
    rc.set("command", command);
    if let Some(p) = &c.config {
        rc.overlay(&RunConfig::load(p)?);
    }
    rc.set_opt("train", c.train.as_ref().map(|p| p.display()));
    rc.set_opt("dev", c.dev.as_ref().map(|p| p.display()));
    rc.set_opt("out", c.out.as_ref().map(|p| p.display()));
    rc.set_opt("bpe", c.bpe.as_ref().map(|p| p.display()));
    rc.set_opt("vocab_size", c.vocab_size);
    rc.set_opt("epochs", c.epochs);
    rc.set_opt("lr", c.lr);
    rc.set_opt("patience", c.patience);
    rc.set_opt("batch_size", c.batch_size);
    rc.set_opt("optimizer", c.optimizer.clone());
    rc.set_opt("weight_decay", c.weight_decay);
    rc.set_opt("seed", c.seed);
    rc.set_opt("seeds", c.seeds.clone());
    if c.freeze_encoder {
        rc.set("train_encoder", false);
    }
    rc.set_opt("embed_dim", c.embed_dim);
    rc.set_opt("context_radius", c.context_radius);
    rc.set_opt("position_norm", c.position_norm);
    rc.schedule_defaults();
    let e = EncoderConfig::default();
    rc.set_default("vocab_size", 1000);
    rc.set_default("embed_dim", e.embed_dim);
    rc.set_default("context_radius", e.context_radius);
    rc.set_default("position_scale", e.position_scale);
    rc.set_default("position_norm", e.position_norm);
    for key in ["train", "dev", "out"] {
        if rc.raw(key).is_none() {
            return Err(Error::Config(format!("--{key} is required (flag or config file)")));
        }
    }
    Ok(rc)
}

fn seeds(rc: &RunConfig) -> Result<Vec<u64>> {
    match rc.raw("seeds") {
        Some(s) if !s.is_empty() => {
            let v = parse_list(s)?;
            if v.is_empty() {
                return Err(Error::Config("--seeds is empty".into()));
            }
            Ok(v)
        }
        _ => Ok(vec![rc.get("seed")?]),
    }
}

fn build_encoder(rc: &RunConfig, train: &Treebank, seed: u64) -> Result<ToyEncoder> {
    let bpe = match rc.get_opt::<PathBuf>("bpe")? {
        Some(p) => BpeModel::load(p)?,
        None => {
            let lines: Vec<String> = train.sentences.iter().map(|s| s.forms().join(" ")).collect();
            let alphabet = lines
                .iter()
                .flat_map(|l| l.split_whitespace())
                .flat_map(|w| w.chars())
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            learn_bpe(&lines, rc.get::<usize>("vocab_size")?.max(alphabet))?
        }
    };
    let cfg = EncoderConfig {
        embed_dim: rc.get("embed_dim")?,
        context_radius: rc.get("context_radius")?,
        position_scale: rc.get("position_scale")?,
        position_norm: rc.get("position_norm")?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ToyEncoderParams::init(&mut rng, bpe.vocab_size(), &cfg);
    Ok(ToyEncoder { bpe, params })
}

/// Path of the output for one seed when several are run.
fn seed_path(out: &Path, seed: u64, many: bool) -> PathBuf {
    if many {
        sibling(out, &format!(".seed{seed}"))
    } else {
        out.to_path_buf()
    }
}

fn report_seeds(name: &str, scores: &[(u64, f64)]) {
    for (s, v) in scores {
        println!("seed {s}\t{name}\t{v:.2}");
    }
    if scores.len() > 1 {
        let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let (m, sd) = probing::mean_std(&vals);
        println!("mean\t{name}\t{m:.2} ± {sd:.2}");
    }
}

fn save_history(out: &Path, history: &[EpochStats], score: &str, secondary: Option<&str>) -> Result<()> {
    write(&sibling(out, ".history.tsv"), &history_tsv(history, score, secondary))
}

fn train_tagger(a: TrainTaggerArgs) -> Result<()> {
    let mut rc = resolve_common(&a.common, "train-tagger")?;
    rc.set_opt("task", a.task.clone());
    rc.set_opt("hidden", a.hidden);
    rc.set_default("task", "upos");
    rc.set_default("hidden", 0);
    let task: TagTask = rc.get("task")?;
    let hidden: usize = rc.get("hidden")?;
    let train = read_treebank(&rc.get::<PathBuf>("train")?)?;
    let dev = read_treebank(&rc.get::<PathBuf>("dev")?)?;
    let out: PathBuf = rc.get("out")?;
    let seeds = seeds(&rc)?;
    let mut scores = Vec::new();
    for &seed in &seeds {
        let mut run = rc.clone();
        run.set("seed", seed);
        let schedule = run.schedule()?;
        let encoder = build_encoder(&run, &train, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let model = TaggerModel::init(&mut rng, task, encoder, &train, (hidden > 0).then_some(hidden))?;
        let tr = model.examples(&train)?;
        let dv = model.examples(&dev)?;
        let (best, history) = fit(model, &tr, &dv, &schedule)?;
        let path = seed_path(&out, seed, seeds.len() > 1);
        best.save(&path)?;
        save_history(&path, &history, "dev_acc", None)?;
        run.save(sibling(&path, ".run.cfg"))?;
        scores.push((seed, best.accuracy(&dv)?));
    }
    report_seeds("dev_acc", &scores);
    Ok(())
}

fn train_parser(a: TrainParserArgs) -> Result<()> {
    let mut rc = resolve_common(&a.common, "train-parser")?;
    rc.set_opt("attention_dim", a.attention_dim);
    rc.set_opt("label_hidden", a.label_hidden);
    if a.single_root {
        rc.set("single_root", true);
    }
    rc.set_default("attention_dim", 32);
    rc.set_default("label_hidden", 32);
    rc.set_default("single_root", false);
    let train = read_treebank(&rc.get::<PathBuf>("train")?)?;
    let dev = read_treebank(&rc.get::<PathBuf>("dev")?)?;
    train.validate_trees(TreeCheck { single_root: false })?;
    dev.validate_trees(TreeCheck { single_root: false })?;
    let out: PathBuf = rc.get("out")?;
    let seeds = seeds(&rc)?;
    let mut uas = Vec::new();
    let mut las = Vec::new();
    for &seed in &seeds {
        let mut run = rc.clone();
        run.set("seed", seed);
        let schedule = run.schedule()?;
        let encoder = build_encoder(&run, &train, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut model = ParserModel::init(
            &mut rng,
            encoder,
            &train,
            run.get("attention_dim")?,
            run.get("label_hidden")?,
        );
        model.decode.single_root = run.get("single_root")?;
        let tr = model.examples(&train)?;
        let dv = model.examples(&dev)?;
        let (best, history) = fit(model, &tr, &dv, &schedule)?;
        let path = seed_path(&out, seed, seeds.len() > 1);
        best.save(&path)?;
        save_history(&path, &history, "dev_uas", Some("dev_las"))?;
        run.save(sibling(&path, ".run.cfg"))?;
        let (u, l) = best.attachment_scores(&dv)?;
        uas.push((seed, u));
        las.push((seed, l));
    }
    report_seeds("dev_uas", &uas);
    report_seeds("dev_las", &las);
    Ok(())
}

fn tag(a: ApplyArgs) -> Result<()> {
    let model = TaggerModel::load(&a.model)?;
    let mut tb = read_treebank(&a.input)?;
    tb.sentences
        .par_iter_mut()
        .filter(|s| !s.is_empty())
        .try_for_each(|s| model.tag_sentence(s))?;
    tb.write(&a.out)
}

fn parse(a: ApplyArgs) -> Result<()> {
    let model = ParserModel::load(&a.model)?;
    let mut tb = read_treebank(&a.input)?;
    model.parse_treebank(&mut tb)?;
    tb.write(&a.out)
}

fn lemma_format(a: LemmaFormatArgs) -> Result<()> {
    let tb = read_treebank(&a.input)?;
    let examples = lemma::treebank_lemma_examples(&tb, a.chars);
    write(&a.out, &lemma::write_jsonl(&examples)?)
}

fn read_lemma_examples(path: &Path) -> Result<Vec<LemmaExample>> {
    lemma::read_jsonl(&read_text(path)?)
}

fn lemma_train(a: LemmaTrainArgs) -> Result<()> {
    let mut rc = RunConfig::new();
    rc.set("command", "lemma-train");
    if let Some(p) = &a.config {
        rc.overlay(&RunConfig::load(p)?);
    }
    rc.set_opt("train", a.train.as_ref().map(|p| p.display()));
    rc.set_opt("dev", a.dev.as_ref().map(|p| p.display()));
    rc.set_opt("out", a.out.as_ref().map(|p| p.display()));
    rc.set_opt("epochs", a.epochs);
    rc.set_opt("lr", a.lr);
    rc.set_opt("patience", a.patience);
    rc.set_opt("batch_size", a.batch_size);
    rc.set_opt("optimizer", a.optimizer.clone());
    rc.set_opt("seed", a.seed);
    rc.set_opt("embed_dim", a.embed_dim);
    rc.set_opt("hidden", a.hidden);
    rc.set_default("optimizer", "adam");
    rc.set_default("lr", 0.01);
    rc.set_default("embed_dim", 24);
    rc.set_default("hidden", 64);
    rc.schedule_defaults();
    for key in ["train", "dev", "out"] {
        if rc.raw(key).is_none() {
            return Err(Error::Config(format!("--{key} is required (flag or config file)")));
        }
    }
    let schedule = rc.schedule()?;
    let train = read_lemma_examples(&rc.get::<PathBuf>("train")?)?;
    let dev = read_lemma_examples(&rc.get::<PathBuf>("dev")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let model = CharLemmatizer::init(&mut rng, &train, rc.get("embed_dim")?, rc.get("hidden")?)?;
    let tr = train
        .iter()
        .map(|e| model.train_example(e))
        .collect::<Result<Vec<_>>>()?;
    // dev lemmata with unseen characters can never be produced; they still count
    let dv: Vec<_> = dev
        .iter()
        .map(|e| {
            model.train_example(e).or_else(|_| {
                Ok::<_, Error>(lemma::LemmaTrainExample {
                    input: model.input(&e.source)?,
                    target: vec![0],
                    lemma: e.target.clone(),
                })
            })
        })
        .collect::<Result<_>>()?;
    let (best, history) = fit(model, &tr, &dv, &schedule)?;
    let out: PathBuf = rc.get("out")?;
    best.save(&out)?;
    save_history(&out, &history, "dev_exact_match", None)?;
    rc.save(sibling(&out, ".run.cfg"))?;
    println!("dev_exact_match\t{:.2}", best.exact_match(&dv, best.beam_width)?);
    Ok(())
}

#[derive(Serialize)]
struct DecodedLemma<'a> {
    sent_id: &'a str,
    token_id: usize,
    source: &'a str,
    target: &'a str,
    pred: String,
    candidates: Vec<(String, f64)>,
}

fn lemma_decode(a: LemmaDecodeArgs) -> Result<()> {
    let mut model = CharLemmatizer::load(&a.model)?;
    model.max_len = a.max_len;
    let examples = read_lemma_examples(&a.input)?;
    let decoded: Vec<Vec<(String, f64)>> = examples
        .par_iter()
        .map(|e| model.decode(&e.source, a.beam))
        .collect::<Result<_>>()?;
    let mut out = String::new();
    for (e, mut cands) in examples.iter().zip(decoded) {
        cands.truncate(a.n_best.max(1));
        let row = DecodedLemma {
            sent_id: &e.sent_id,
            token_id: e.token_id,
            source: &e.source,
            target: &e.target,
            pred: cands.first().map(|c| c.0.clone()).unwrap_or_default(),
            candidates: cands,
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    write(&a.out, &out)?;
    if !examples.is_empty() && examples.iter().all(|e| !e.target.is_empty()) {
        let preds: Vec<String> = out
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).map(|v| v["pred"].as_str().unwrap_or("").to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let gold: Vec<&str> = examples.iter().map(|e| e.target.as_str()).collect();
        println!("lemma_acc\t{:.2}", lemma::lemma_accuracy(&preds, &gold)?);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gold = read_treebank(&a.gold)?;
    let pred = read_treebank(&a.pred)?;
    let report = evaluate(&gold, &pred)?.to_tsv();
    print!("{report}");
    if let Some(p) = &a.out {
        write(p, &report)?;
    }
    Ok(())
}

fn probe_pairs(a: PairsArgs) -> Result<()> {
    let probes: Vec<PairProbe> = probing::read_jsonl(&read_text(&a.input)?)?;
    for p in &probes {
        for w in p.lint() {
            eprintln!("warning: {w}");
        }
    }
    let shots: Vec<usize> = parse_list(&a.shots)?;
    let classes: Vec<_> = probes.iter().map(|p| p.relation).collect();
    let folds = probing::kfold_split(&classes, a.k, a.seed)?;
    let results = match a.scorer.as_str() {
        "oracle" => probing::fewshot_eval(&Fixed(OracleScorer::new(&probes)), &probes, &folds, &shots, a.seed)?,
        "anti-oracle" => probing::fewshot_eval(&Fixed(OracleScorer::anti(&probes)), &probes, &folds, &shots, a.seed)?,
        "coin" => probing::fewshot_eval(&Fixed(CoinFlipScorer { seed: a.seed }), &probes, &folds, &shots, a.seed)?,
        "toy" => {
            let prompts: Vec<&str> = probes.iter().map(|p| p.prompt.as_str()).collect();
            let alphabet = prompts
                .iter()
                .flat_map(|p| p.chars().filter(|c| !c.is_whitespace()))
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            let bpe = learn_bpe(&prompts, alphabet + 200)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let params = ToyEncoderParams::init(&mut rng, bpe.vocab_size(), &EncoderConfig::default());
            let learner = ToyFillerLearner {
                embedder: ToyEncoder { bpe, params },
                epochs: 200,
                learning_rate: 1.0,
            };
            probing::fewshot_eval(&learner, &probes, &folds, &shots, a.seed)?
        }
        other => return Err(Error::Config(format!("unknown scorer {other:?}"))),
    };
    let mut table = String::from("shots_per_class\tmean_acc\tstd\n");
    for r in &results {
        table.push_str(&format!("{}\t{:.2}\t{:.2}\n", r.shots, r.mean, r.std));
    }
    print!("{table}");
    if let Some(p) = &a.out {
        write(p, &table)?;
    }
    Ok(())
}

fn probe_relations(a: RelationsArgs) -> Result<()> {
    let probes: Vec<RelationProbe> = probing::read_jsonl(&read_text(&a.input)?)?;
    for p in &probes {
        p.validate()?;
    }
    let preds: Vec<Vec<String>> = probing::read_jsonl(&read_text(&a.pred)?)?;
    let ks: Vec<Cutoff> = parse_list(&a.ks)?;
    let gold: Vec<&str> = probes.iter().map(|p| p.gold.as_str()).collect();
    let table = probing::recall_at_k(&preds, &gold, &ks)?;
    let mut out = String::from("k\trecall\n");
    for (k, r) in table {
        out.push_str(&format!("{k}\t{:.2}\n", 100.0 * r));
    }
    print!("{out}");
    if let Some(p) = &a.out {
        write(p, &out)?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let mut counts = Vec::new();
    for p in &a.files {
        if is_conllu(p) {
            let s = read_treebank(p)?.summary();
            println!(
                "{}\tsentences={}\ttokens={}\tforms={}\tlemmata={}\tupos={}\txpos={}\tdeprels={}",
                p.display(),
                s.sentences,
                s.tokens,
                s.forms,
                s.lemmata,
                s.upos,
                s.xpos,
                s.deprels
            );
        } else {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            counts.push((p.display().to_string(), forge::count_tokens_bytes(&bytes)));
        }
    }
    if !counts.is_empty() {
        print!("{}", forge::stats_tsv(&counts));
    }
    Ok(())
}

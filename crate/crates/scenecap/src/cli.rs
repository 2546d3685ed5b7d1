//! Command-line surface for the `scenecap` binary.
//!
//! Subcommands: `train-sgae`, `train-captioner`, `infer`, `eval`,
//! `validate`. Configuration is a flat JSON file overlaying the
//! defaults; command-line flags override the file. Every run echoes its
//! fully resolved config to stderr before doing any work, so a run is
//! reproducible from its log alone.
//!
//! Exit codes: 0 success, 1 validation violations, 2 config error,
//! 3 data error, 4 model/compatibility error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{self, CorpusConfig, CorpusRecord, RawRecord};
use crate::decoder;
use crate::error::{Error, Result};
use crate::metrics::{bleu_all, cider_d, DfTable};
use crate::trainer::{self, Phase, TrainConfig};
use crate::vocab::{build_word_vocab, Vocabulary, EOS};

#[derive(Parser)]
#[command(name = "scenecap", version, about = "Scene-graph auto-encoding captioner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Phases {
    Full,
    XeOnly,
}

#[derive(Subcommand)]
pub enum Command {
    /// Pre-train the sentence auto-encoder (two phases).
    TrainSgae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the captioner (XE then RL) around a pre-trained dictionary.
    TrainCaptioner {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        sgae_ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "full")]
        phases: Phases,
    },
    /// Decode captions for a corpus; JSON lines on stdout.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
    },
    /// Score hypotheses against references; metrics JSON on stdout.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        refs: PathBuf,
    },
    /// Validate every scene graph in a corpus and print summary stats.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Model(_) | Error::Dim(_) | Error::Contract(_) | Error::NonFinite(_) => 4,
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version via "errors" that exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::TrainSgae {
            corpus,
            config,
            out,
            seed,
        } => cmd_train_sgae(&corpus, config.as_deref(), &out, seed),
        Command::TrainCaptioner {
            corpus,
            sgae_ckpt,
            config,
            out,
            seed,
            phases,
        } => cmd_train_captioner(&corpus, &sgae_ckpt, config.as_deref(), &out, seed, phases),
        Command::Infer {
            ckpt,
            input,
            beam,
            max_len,
        } => cmd_infer(&ckpt, &input, beam, max_len),
        Command::Eval { hyp, refs } => cmd_eval(&hyp, &refs),
        Command::Validate { corpus } => cmd_validate(&corpus),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(cfg: &TrainConfig) {
    eprintln!(
        "resolved config: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn load_and_resolve(
    path: &Path,
    cfg: &TrainConfig,
) -> Result<(Vec<CorpusRecord>, Vocabulary, Vocabulary)> {
    let raw = corpus::read_raw(path)?;
    let (words, symbols) = corpus::build_vocabs(&raw, cfg.word_min_count, cfg.symbol_min_count)?;
    let ccfg = CorpusConfig {
        max_len: cfg.max_len,
        feature_dim: cfg.feat_dim,
    };
    let records = corpus::resolve(&raw, &words, &symbols, &ccfg)?;
    Ok((records, words, symbols))
}

fn cmd_train_sgae(
    corpus_path: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<i32> {
    let cfg = load_config(config, seed)?;
    echo_config(&cfg);
    let (records, words, symbols) = load_and_resolve(corpus_path, &cfg)?;
    std::fs::create_dir_all(out)?;
    words.save(&out.join("words.json"))?;
    symbols.save(&out.join("symbols.json"))?;
    let outcome = trainer::train_sgae(&records, &words, &symbols, &cfg, Some(out))?;
    if let Some(last) = outcome.log.last() {
        eprintln!("final epoch loss: {}", last.loss);
    }
    Ok(0)
}

fn cmd_train_captioner(
    corpus_path: &Path,
    sgae_ckpt: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    phases: Phases,
) -> Result<i32> {
    let mut cfg = load_config(config, seed)?;
    if phases == Phases::XeOnly {
        cfg.rl_epochs = 0;
    }
    echo_config(&cfg);
    let sgae = checkpoint::load(sgae_ckpt)?;
    let (records, words, symbols) = load_and_resolve(corpus_path, &cfg)?;
    std::fs::create_dir_all(out)?;
    words.save(&out.join("words.json"))?;
    symbols.save(&out.join("symbols.json"))?;
    let outcome = trainer::train_captioner(&records, &words, &symbols, &sgae.store, &cfg, Some(out))?;
    if let Some(last) = outcome.log.last() {
        eprintln!("final epoch loss: {}", last.loss);
    }
    Ok(0)
}

fn header_field<T: serde::de::DeserializeOwned>(
    header: &serde_json::Value,
    key: &str,
) -> Result<T> {
    serde_json::from_value(header[key].clone())
        .map_err(|e| Error::Model(format!("checkpoint header lacks usable '{key}': {e}")))
}

#[derive(Serialize)]
struct InferCandidate {
    tokens: Vec<String>,
    log_prob: f64,
}

#[derive(Serialize)]
struct InferLine {
    id: String,
    tokens: Vec<String>,
    log_prob: f64,
    beam_candidates: Vec<InferCandidate>,
}

fn token_words(words: &Vocabulary, tokens: &[u32]) -> Vec<String> {
    tokens
        .iter()
        .filter(|&&t| t != EOS)
        .map(|&t| words.word(t).to_owned())
        .collect()
}

fn cmd_infer(ckpt_path: &Path, input: &Path, beam: usize, max_len: usize) -> Result<i32> {
    if beam == 0 {
        return Err(Error::Config("--beam must be >= 1".into()));
    }
    let ckpt = checkpoint::load(ckpt_path)?;
    let train: TrainConfig = header_field(&ckpt.config, "train")?;
    let phase: Phase = header_field(&ckpt.config, "phase")?;
    let mut words: Vocabulary = header_field(&ckpt.config, "words")?;
    let mut symbols: Vocabulary = header_field(&ckpt.config, "symbols")?;
    words
        .rebuild_index()
        .map_err(|e| Error::Model(e.to_string()))?;
    symbols
        .rebuild_index()
        .map_err(|e| Error::Model(e.to_string()))?;
    eprintln!(
        "resolved config: {}",
        serde_json::json!({
            "train": train, "phase": phase, "beam": beam, "max_len": max_len
        })
    );

    let raw = corpus::read_raw(input)?;
    let ccfg = CorpusConfig {
        max_len: train.max_len,
        feature_dim: train.feat_dim,
    };
    let records = corpus::resolve(&raw, &words, &symbols, &ccfg)?;

    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    use std::io::Write;
    for (i, rec) in records.iter().enumerate() {
        let tape = crate::tensor::Tape::new();
        let bound = ckpt.store.bind(&tape)?;
        let ctx = match phase {
            Phase::CaptionerXe | Phase::CaptionerRl => {
                let g = rec.image_graph.as_ref().ok_or_else(|| {
                    Error::Data(format!("record {}: captioner input needs an image graph", i + 1))
                })?;
                trainer::captioner_context(&tape, &bound, g)?
            }
            Phase::SgaePretrain => trainer::sgae_context(&tape, &bound, &rec.sentence_graph, false)?,
            Phase::SgaeDict => trainer::sgae_context(&tape, &bound, &rec.sentence_graph, true)?,
        };
        let cands = decoder::decode_beam(&tape, &bound, &ctx, train.dim, beam, max_len, false)?;
        let best = &cands[0];
        let line = InferLine {
            id: rec.id.clone().unwrap_or_else(|| format!("record-{}", i + 1)),
            tokens: token_words(&words, &best.tokens),
            log_prob: best.log_prob,
            beam_candidates: cands
                .iter()
                .map(|c| InferCandidate {
                    tokens: token_words(&words, &c.tokens),
                    log_prob: c.log_prob,
                })
                .collect(),
        };
        writeln!(lock, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(0)
}

#[derive(Deserialize)]
struct HypLine {
    id: String,
    tokens: Vec<String>,
}

#[derive(Deserialize)]
struct RefLine {
    id: String,
    references: Vec<Vec<String>>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ItemScores {
    id: String,
    bleu1: f64,
    bleu2: f64,
    bleu3: f64,
    bleu4: f64,
    cider_d: f64,
}

fn cmd_eval(hyp_path: &Path, refs_path: &Path) -> Result<i32> {
    let hyps: Vec<HypLine> = read_jsonl(hyp_path)?;
    let refs: Vec<RefLine> = read_jsonl(refs_path)?;
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} hypotheses vs {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    for (h, r) in hyps.iter().zip(refs.iter()) {
        if h.id != r.id {
            return Err(Error::Data(format!(
                "id mismatch: hypothesis '{}' vs references '{}'",
                h.id, r.id
            )));
        }
    }
    eprintln!("resolved config: {{\"items\": {}}}", hyps.len());

    // A shared id space over all sentences; scores are invariant under
    // the particular assignment.
    let mut sentences: Vec<Vec<String>> = hyps.iter().map(|h| h.tokens.clone()).collect();
    for r in &refs {
        sentences.extend(r.references.iter().cloned());
    }
    let vocab = build_word_vocab(&sentences, 1)?;
    let to_ids =
        |s: &[String]| -> Vec<u32> { s.iter().map(|w| vocab.id(w)).collect() };

    let reference_sets: Vec<Vec<Vec<u32>>> = refs
        .iter()
        .map(|r| r.references.iter().map(|s| to_ids(s)).collect())
        .collect();
    let df = DfTable::build(&reference_sets)?;

    let mut items = Vec::new();
    let mut mean = [0.0f64; 5];
    for (h, rset) in hyps.iter().zip(reference_sets.iter()) {
        let cand = to_ids(&h.tokens);
        let b = bleu_all(&cand, rset)?;
        let c = cider_d(&cand, rset, &df)?;
        for (m, v) in mean.iter_mut().zip(b.iter().chain(std::iter::once(&c))) {
            *m += v;
        }
        items.push(ItemScores {
            id: h.id.clone(),
            bleu1: b[0],
            bleu2: b[1],
            bleu3: b[2],
            bleu4: b[3],
            cider_d: c,
        });
    }
    let n = items.len() as f64;
    let out = serde_json::json!({
        "items": items,
        "mean": {
            "bleu1": mean[0] / n,
            "bleu2": mean[1] / n,
            "bleu3": mean[2] / n,
            "bleu4": mean[3] / n,
            "cider_d": mean[4] / n,
        }
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn cmd_validate(corpus_path: &Path) -> Result<i32> {
    let raw = corpus::read_raw(corpus_path)?;
    let (_, symbols) = corpus::build_vocabs(&raw, 1, 1)?;

    // Expected feature width: the first RoI feature seen sets it.
    let feature_dim = raw
        .iter()
        .flat_map(|r| r.image_graph.iter())
        .flat_map(|g| {
            g.objects
                .iter()
                .filter_map(|o| o.feature.as_ref())
                .chain(g.relationships.iter().filter_map(|r| r.feature.as_ref()))
        })
        .map(Vec::len)
        .next()
        .unwrap_or(crate::graph::DEFAULT_FEATURE_DIM);

    let mut violations = 0usize;
    let mut objects = 0usize;
    let mut relationships = 0usize;
    let mut attributes = 0usize;
    let mut symbol_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (i, rec) in raw.iter().enumerate() {
        let graphs = [
            ("sentence", Some(&rec.sentence_graph)),
            ("image", rec.image_graph.as_ref()),
        ];
        for (kind, g) in graphs.into_iter() {
            let Some(g) = g else { continue };
            objects += g.objects.len();
            relationships += g.relationships.len();
            for o in &g.objects {
                attributes += o.attributes.len();
                *symbol_counts.entry(o.label.clone()).or_insert(0) += 1;
                for a in &o.attributes {
                    *symbol_counts.entry(a.clone()).or_insert(0) += 1;
                }
            }
            for r in &g.relationships {
                *symbol_counts.entry(r.predicate.clone()).or_insert(0) += 1;
            }
            for v in g.to_ids(&symbols).validate(feature_dim, Some(symbols.len())) {
                println!("record {} ({kind} graph): {}", i + 1, v.0);
                violations += 1;
            }
        }
    }

    println!(
        "records: {}, objects: {objects}, relationships: {relationships}, attributes: {attributes}",
        raw.len()
    );
    let mut freq: Vec<(&String, &usize)> = symbol_counts.iter().collect();
    freq.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    print!("top symbols:");
    for (sym, count) in freq.into_iter().take(10) {
        print!(" {sym}:{count}");
    }
    println!();
    println!("violations: {violations}");
    Ok(if violations > 0 { 1 } else { 0 })
}

/// Convenience for tests: write records as a corpus file.
pub fn write_corpus(path: &Path, records: &[RawRecord]) -> Result<()> {
    corpus::write_raw(path, records)
}

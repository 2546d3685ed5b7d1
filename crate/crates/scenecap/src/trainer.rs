//! Training pipelines.
//!
//! Two-phase auto-encoder pre-training over sentence graphs (phase 1
//! without the dictionary, phase 2 with re-encoding inserted), then
//! captioner training over image graphs: teacher-forced cross-entropy
//! followed by self-critical policy-gradient fine-tuning with CIDEr-D
//! reward. One Adam optimizer per phase, per-batch global-norm gradient
//! clipping, and a step-decay learning-rate schedule with a separate
//! (slower) track for the dictionary.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::CorpusRecord;
use crate::decoder::{self, Context, DecoderConfig};
use crate::dictionary::{self, DICT_PARAM};
use crate::error::{Error, Result};
use crate::gcn::{self, GcnConfig};
use crate::metrics::{cider_d, DfTable};
use crate::mgcn::{self, MgcnConfig};
use crate::params::{AdamState, Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Var};
use crate::vocab::{Vocabulary, BOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    SgaePretrain,
    SgaeDict,
    CaptionerXe,
    CaptionerRl,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::SgaePretrain => "sgae-pretrain",
            Phase::SgaeDict => "sgae-dict",
            Phase::CaptionerXe => "captioner-xe",
            Phase::CaptionerRl => "captioner-rl",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_dict: f64,
    /// Base rate for the self-critical phase; `None` falls back to
    /// `lr_main`. Rewards run up to 10, so the policy-gradient phase
    /// usually wants a much smaller rate than cross-entropy.
    pub lr_rl: Option<f64>,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub sgae_pretrain_epochs: usize,
    pub sgae_dict_epochs: usize,
    pub xe_epochs: usize,
    pub rl_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Hidden/embedding width d.
    pub dim: usize,
    /// Dictionary atom count K.
    pub atoms: usize,
    pub attn_dim: usize,
    /// RoI feature width for image graphs.
    pub feat_dim: usize,
    pub max_len: usize,
    pub clip_norm: f64,
    /// Sum the per-token losses instead of averaging them.
    pub sum_loss: bool,
    /// Zero the dictionary's learning rate everywhere.
    pub freeze_dict: bool,
    /// Vocabulary frequency floors used when the CLI builds vocabularies
    /// (desk default 1; full-corpus runs raise them to 5 and 10).
    pub word_min_count: usize,
    pub symbol_min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_main: 5e-4,
            lr_dict: 5e-5,
            lr_rl: None,
            decay_factor: 0.8,
            decay_every: 5,
            batch_size: 100,
            sgae_pretrain_epochs: 20,
            sgae_dict_epochs: 20,
            xe_epochs: 20,
            rl_epochs: 40,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            dim: 32,
            atoms: dictionary::DESK_ATOMS,
            attn_dim: 32,
            feat_dim: 16,
            max_len: 16,
            clip_norm: 5.0,
            sum_loss: false,
            freeze_dict: false,
            word_min_count: 1,
            symbol_min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_main <= 0.0 || self.lr_dict < 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if let Some(lr) = self.lr_rl {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("lr_rl must be positive and finite".into()));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "decay_every, batch_size and max_len must be >= 1".into(),
            ));
        }
        if self.dim == 0 || self.atoms == 0 || self.attn_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// Step-decayed rate at a given epoch (applied per track).
pub fn lr_at(base: f64, config: &TrainConfig, epoch: usize) -> f64 {
    base * config.decay_factor.powi((epoch / config.decay_every) as i32)
}

/// One CSV row of the training log.
#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub lr_main: f64,
    pub lr_dict: f64,
    pub loss: f64,
    /// Mean sampled reward; NaN outside the RL phase.
    pub reward_mean: f64,
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,phase,lr_main,lr_dict,loss,reward_mean")?;
    for e in log {
        let reward = if e.reward_mean.is_nan() {
            String::new()
        } else {
            format!("{}", e.reward_mean)
        };
        writeln!(
            f,
            "{},{},{},{},{},{}",
            e.epoch, e.phase, e.lr_main, e.lr_dict, e.loss, reward
        )?;
    }
    Ok(())
}

/// Teacher-forced cross-entropy over one sequence of per-step
/// distributions. PAD positions are masked; by default the result is the
/// mean over unmasked steps (`sum_mode` sums instead).
pub fn xe_loss(tape: &Tape, probs_seq: &[Var], target: &[u32], sum_mode: bool) -> Result<Var> {
    if probs_seq.len() != target.len() {
        return Err(Error::Contract(format!(
            "{} step distributions for {} target tokens",
            probs_seq.len(),
            target.len()
        )));
    }
    let mut terms = Vec::new();
    for (&p, &t) in probs_seq.iter().zip(target.iter()) {
        if t == PAD {
            continue;
        }
        let v = tape.shape(p)[0];
        if t as usize >= v {
            return Err(Error::Data(format!(
                "target id {t} out of range for vocabulary of {v}"
            )));
        }
        terms.push(tape.ln(tape.pick(p, t as usize)?)?);
    }
    if terms.is_empty() {
        return Err(Error::Contract("target is all PAD".into()));
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = tape.add(sum, t)?;
    }
    let scale = if sum_mode {
        -1.0
    } else {
        -1.0 / terms.len() as f64
    };
    tape.scale(sum, scale)
}

/// Run the decoder with ground-truth-shifted inputs, returning one
/// distribution per target position.
pub fn forced_probs(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    target: &[u32],
    d: usize,
) -> Result<Vec<Var>> {
    let mut state = decoder::init_state(tape, d)?;
    let mut prev = BOS;
    let mut probs = Vec::with_capacity(target.len());
    for &t in target {
        let out = decoder::step(tape, bound, ctx, prev, &state)?;
        probs.push(out.probs);
        state = out.state;
        prev = t;
    }
    Ok(probs)
}

/// Sentence-side context: GCN encode, optionally re-encoded through the
/// dictionary (phase 2).
pub fn sgae_context(
    tape: &Tape,
    bound: &Bound,
    graph: &crate::graph::SceneGraph,
    with_dict: bool,
) -> Result<Context> {
    let out = gcn::gcn_forward(tape, bound, graph)?;
    let z = if with_dict {
        dictionary::reencode_all(tape, bound, &out.all)?
    } else {
        out.all
    };
    Context::new(tape, z)
}

/// Image-side context: MGCN encode, re-encode through the dictionary,
/// and concatenate both streams per element (d_z = 2d).
pub fn captioner_context(
    tape: &Tape,
    bound: &Bound,
    graph: &crate::graph::SceneGraph,
) -> Result<Context> {
    let out = mgcn::mgcn_forward(tape, bound, graph)?;
    let vhat = dictionary::reencode_all(tape, bound, &out.all)?;
    let z: Result<Vec<Var>> = out
        .all
        .iter()
        .zip(vhat.iter())
        .map(|(&v, &h)| tape.concat(&[v, h]))
        .collect();
    Context::new(tape, z?)
}

/// Fresh parameter set for the sentence auto-encoder.
pub fn init_sgae_params(
    config: &TrainConfig,
    symbols: usize,
    vocab: usize,
) -> Result<ParamStore> {
    let mut rng = SeededRng::new(config.seed);
    let mut store = ParamStore::new();
    gcn::init_gcn(
        &mut store,
        &mut rng,
        &GcnConfig {
            dim: config.dim,
            symbols,
        },
    );
    dictionary::init_dictionary(&mut store, &mut rng, config.dim, config.atoms, None)?;
    decoder::init_decoder(
        &mut store,
        &mut rng,
        &DecoderConfig {
            dim: config.dim,
            d_z: config.dim,
            vocab,
            attn_dim: config.attn_dim,
        },
    );
    Ok(store)
}

/// Fresh captioner parameters around a pre-trained dictionary.
pub fn init_captioner_params(
    config: &TrainConfig,
    symbols: usize,
    vocab: usize,
    dict: crate::tensor::Tensor,
) -> Result<ParamStore> {
    if dict.shape() != [config.dim, config.atoms] {
        return Err(Error::Model(format!(
            "dictionary shape {:?} does not match configured {}x{}",
            dict.shape(),
            config.dim,
            config.atoms
        )));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut store = ParamStore::new();
    mgcn::init_mgcn(
        &mut store,
        &mut rng,
        &MgcnConfig {
            dim: config.dim,
            symbols,
            feature_dim: config.feat_dim,
        },
    );
    store.insert(DICT_PARAM, dict);
    decoder::init_decoder(
        &mut store,
        &mut rng,
        &DecoderConfig {
            dim: config.dim,
            d_z: 2 * config.dim,
            vocab,
            attn_dim: config.attn_dim,
        },
    );
    Ok(store)
}

fn scale_grads(store: &mut ParamStore, factor: f64) {
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        if let Some(g) = &mut store.get_mut(&name).unwrap().grad {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// One cross-entropy epoch: shuffled batches, mean-of-batch gradients,
/// clip, Adam. Returns the mean per-record loss.
fn xe_epoch<F>(
    store: &mut ParamStore,
    adam: &mut AdamState,
    records: &[CorpusRecord],
    config: &TrainConfig,
    lr_main: f64,
    lr_dict: f64,
    rng: &mut SeededRng,
    make_ctx: F,
) -> Result<f64>
where
    F: Fn(&Tape, &Bound, &CorpusRecord) -> Result<Context>,
{
    let mut order: Vec<usize> = (0..records.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        store.zero_grads();
        for &ri in chunk {
            let rec = &records[ri];
            let tape = Tape::new();
            let bound = store.bind(&tape)?;
            let ctx = make_ctx(&tape, &bound, rec)?;
            let probs = forced_probs(&tape, &bound, &ctx, &rec.sentence, config.dim)?;
            let loss = xe_loss(&tape, &probs, &rec.sentence, config.sum_loss)?;
            total += tape.value(loss)[0];
            tape.backward(loss)?;
            store.accumulate_grads(&tape, &bound)?;
        }
        scale_grads(store, 1.0 / chunk.len() as f64);
        store.clip_grads(config.clip_norm);
        adam.update(store, &|name| {
            if name == DICT_PARAM {
                lr_dict
            } else {
                lr_main
            }
        })?;
    }
    store.zero_grads();
    Ok(total / records.len() as f64)
}

/// Outcome of the self-critical step: rewards for the sampled and greedy
/// decodes, and the pseudo-loss node when the advantage is nonzero.
pub struct ScstOutcome {
    pub sample_reward: f64,
    pub greedy_reward: f64,
    pub loss: Option<Var>,
}

/// Sample a caption, score it against the model's own greedy decode, and
/// build the policy-gradient pseudo-loss −A·Σ log P(s_t). The advantage
/// is a constant; only the sampled log-probabilities carry gradient.
pub fn scst_step(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    d: usize,
    max_len: usize,
    rng: &mut SeededRng,
    reward: &dyn Fn(&[u32]) -> f64,
) -> Result<ScstOutcome> {
    let greedy = decoder::decode_greedy(tape, bound, ctx, d, max_len)?;
    let (sampled, log_probs) = decoder::decode_sample(tape, bound, ctx, d, max_len, rng)?;
    let sample_reward = reward(&sampled);
    let greedy_reward = reward(&greedy.tokens);
    let advantage = sample_reward - greedy_reward;
    let loss = if advantage == 0.0 {
        None
    } else {
        let mut sum = log_probs[0];
        for &l in &log_probs[1..] {
            sum = tape.add(sum, l)?;
        }
        Some(tape.scale(sum, -advantage)?)
    };
    Ok(ScstOutcome {
        sample_reward,
        greedy_reward,
        loss,
    })
}

fn rl_epoch(
    store: &mut ParamStore,
    adam: &mut AdamState,
    records: &[CorpusRecord],
    df: &DfTable,
    config: &TrainConfig,
    lr_main: f64,
    lr_dict: f64,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    rng.shuffle(&mut order);
    let mut loss_total = 0.0;
    let mut reward_total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        store.zero_grads();
        for &ri in chunk {
            let rec = &records[ri];
            let graph = rec.image_graph.as_ref().unwrap();
            let tape = Tape::new();
            let bound = store.bind(&tape)?;
            let ctx = captioner_context(&tape, &bound, graph)?;
            let refs = vec![rec.sentence.clone()];
            let out = scst_step(&tape, &bound, &ctx, config.dim, config.max_len, rng, &|c| {
                cider_d(c, &refs, df).unwrap_or(0.0)
            })?;
            // Track the greedy (baseline) reward: it is deterministic in
            // the parameters, unlike the sampled reward.
            reward_total += out.greedy_reward;
            if let Some(loss) = out.loss {
                loss_total += tape.value(loss)[0];
                tape.backward(loss)?;
                store.accumulate_grads(&tape, &bound)?;
            }
        }
        scale_grads(store, 1.0 / chunk.len() as f64);
        store.clip_grads(config.clip_norm);
        adam.update(store, &|name| {
            if name == DICT_PARAM {
                lr_dict
            } else {
                lr_main
            }
        })?;
    }
    store.zero_grads();
    let n = records.len() as f64;
    Ok((loss_total / n, reward_total / n))
}

/// Trained parameters plus the per-epoch log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    /// Parameter snapshot at the first phase boundary (end of
    /// sgae-pretrain, or end of captioner-xe), for phase-wise evaluation.
    pub first_phase_store: ParamStore,
}

/// Checkpoint header payload: the training config, the phase the
/// checkpoint closes, and both vocabularies, so inference needs nothing
/// but the checkpoint file.
pub fn config_json(
    config: &TrainConfig,
    phase: Phase,
    words: &Vocabulary,
    symbols: &Vocabulary,
) -> serde_json::Value {
    serde_json::json!({
        "train": config,
        "phase": phase,
        "words": words,
        "symbols": symbols,
    })
}

fn training_rng(config: &TrainConfig) -> SeededRng {
    // Distinct stream from parameter initialization.
    SeededRng::new(config.seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Two-phase auto-encoder pre-training over sentence graphs. With an
/// output directory, a checkpoint is written at the end of each phase
/// (`sgae-pretrain.ckpt`, `sgae-dict.ckpt`) plus `train-log.csv`.
pub fn train_sgae(
    records: &[CorpusRecord],
    words: &Vocabulary,
    symbols: &Vocabulary,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut store = init_sgae_params(config, symbols.len(), words.len())?;
    let mut rng = training_rng(config);
    let mut log = Vec::new();

    let dict_rate = |base: f64| if config.freeze_dict { 0.0 } else { base };

    let mut adam = AdamState::new(config.beta1, config.beta2, config.eps);
    for epoch in 0..config.sgae_pretrain_epochs {
        let lr_m = lr_at(config.lr_main, config, epoch);
        let lr_d = dict_rate(lr_at(config.lr_dict, config, epoch));
        let loss = xe_epoch(&mut store, &mut adam, records, config, lr_m, lr_d, &mut rng, |t, b, r| {
            sgae_context(t, b, &r.sentence_graph, false)
        })?;
        log.push(EpochLog {
            phase: Phase::SgaePretrain,
            epoch,
            lr_main: lr_m,
            lr_dict: lr_d,
            loss,
            reward_mean: f64::NAN,
        });
    }
    if let Some(dir) = out_dir {
        checkpoint::save(
            &dir.join("sgae-pretrain.ckpt"),
            &store,
            &config_json(config, Phase::SgaePretrain, words, symbols),
            Some(&rng),
        )?;
    }
    let first_phase_store = store.clone();

    // Phase 2 gets a fresh optimizer: the loss surface changes when the
    // re-encoding is inserted, and stale moments would steer the first
    // steps.
    let mut adam = AdamState::new(config.beta1, config.beta2, config.eps);
    for epoch in 0..config.sgae_dict_epochs {
        let lr_m = lr_at(config.lr_main, config, epoch);
        let lr_d = dict_rate(lr_at(config.lr_dict, config, epoch));
        let loss = xe_epoch(&mut store, &mut adam, records, config, lr_m, lr_d, &mut rng, |t, b, r| {
            sgae_context(t, b, &r.sentence_graph, true)
        })?;
        log.push(EpochLog {
            phase: Phase::SgaeDict,
            epoch,
            lr_main: lr_m,
            lr_dict: lr_d,
            loss,
            reward_mean: f64::NAN,
        });
    }
    if let Some(dir) = out_dir {
        checkpoint::save(
            &dir.join("sgae-dict.ckpt"),
            &store,
            &config_json(config, Phase::SgaeDict, words, symbols),
            Some(&rng),
        )?;
        write_log_csv(&dir.join("train-log.csv"), &log)?;
    }
    Ok(TrainOutcome { store, log, first_phase_store })
}

/// Captioner training: cross-entropy epochs, then self-critical
/// fine-tuning with CIDEr-D reward. The dictionary comes from the SGAE
/// checkpoint store and keeps training on its slow rate track.
pub fn train_captioner(
    records: &[CorpusRecord],
    words: &Vocabulary,
    symbols: &Vocabulary,
    sgae_store: &ParamStore,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if r.image_graph.is_none() {
            return Err(Error::Data(format!("record {} has no image graph", i + 1)));
        }
    }
    let dict = sgae_store
        .get(DICT_PARAM)
        .map_err(|_| Error::Model(format!("checkpoint lacks tensor {DICT_PARAM}")))?
        .clone();
    let mut store = init_captioner_params(config, symbols.len(), words.len(), dict)?;
    let mut rng = training_rng(config);
    let mut log = Vec::new();
    let dict_rate = |base: f64| if config.freeze_dict { 0.0 } else { base };

    let mut adam = AdamState::new(config.beta1, config.beta2, config.eps);
    for epoch in 0..config.xe_epochs {
        let lr_m = lr_at(config.lr_main, config, epoch);
        let lr_d = dict_rate(lr_at(config.lr_dict, config, epoch));
        let loss = xe_epoch(&mut store, &mut adam, records, config, lr_m, lr_d, &mut rng, |t, b, r| {
            captioner_context(t, b, r.image_graph.as_ref().unwrap())
        })?;
        log.push(EpochLog {
            phase: Phase::CaptionerXe,
            epoch,
            lr_main: lr_m,
            lr_dict: lr_d,
            loss,
            reward_mean: f64::NAN,
        });
    }
    if let Some(dir) = out_dir {
        checkpoint::save(
            &dir.join("captioner-xe.ckpt"),
            &store,
            &config_json(config, Phase::CaptionerXe, words, symbols),
            Some(&rng),
        )?;
    }
    let first_phase_store = store.clone();

    let reference_sets: Vec<Vec<Vec<u32>>> =
        records.iter().map(|r| vec![r.sentence.clone()]).collect();
    let df = DfTable::build(&reference_sets)?;
    let mut adam = AdamState::new(config.beta1, config.beta2, config.eps);
    let rl_base = config.lr_rl.unwrap_or(config.lr_main);
    for epoch in 0..config.rl_epochs {
        let lr_m = lr_at(rl_base, config, epoch);
        let lr_d = dict_rate(lr_at(config.lr_dict, config, epoch));
        let (loss, reward_mean) = rl_epoch(
            &mut store, &mut adam, records, &df, config, lr_m, lr_d, &mut rng,
        )?;
        log.push(EpochLog {
            phase: Phase::CaptionerRl,
            epoch,
            lr_main: lr_m,
            lr_dict: lr_d,
            loss,
            reward_mean,
        });
    }
    if let Some(dir) = out_dir {
        // No RL checkpoint when the phase was skipped (xe-only runs).
        if config.rl_epochs > 0 {
            checkpoint::save(
                &dir.join("captioner-rl.ckpt"),
                &store,
                &config_json(config, Phase::CaptionerRl, words, symbols),
                Some(&rng),
            )?;
        }
        write_log_csv(&dir.join("train-log.csv"), &log)?;
    }
    Ok(TrainOutcome { store, log, first_phase_store })
}

/// Greedy token-level reconstruction accuracy of a trained SGAE or
/// captioner over its corpus (EOS included, PAD ignored).
pub fn reconstruction_accuracy<F>(
    store: &ParamStore,
    records: &[CorpusRecord],
    d: usize,
    max_len: usize,
    make_ctx: F,
) -> Result<f64>
where
    F: Fn(&Tape, &Bound, &CorpusRecord) -> Result<Context>,
{
    let mut hit = 0usize;
    let mut total = 0usize;
    for rec in records {
        let tape = Tape::new();
        let bound = store.bind(&tape)?;
        let ctx = make_ctx(&tape, &bound, rec)?;
        // Decode one step past the cap so the EOS position counts.
        let out = decoder::decode_greedy(&tape, &bound, &ctx, d, max_len + 1)?;
        let target: Vec<u32> = rec.sentence.iter().copied().filter(|&t| t != PAD).collect();
        total += target.len();
        hit += target
            .iter()
            .zip(out.tokens.iter())
            .filter(|(a, b)| a == b)
            .count();
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabs, resolve, CorpusConfig};
    use crate::synth;

    fn desk_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            atoms: 8,
            attn_dim: 6,
            feat_dim: 4,
            batch_size: 4,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus(n: usize) -> (Vec<CorpusRecord>, Vocabulary, Vocabulary) {
        let raw = synth::sgae_corpus(n, 9);
        let (w, s) = build_vocabs(&raw, 1, 1).unwrap();
        let recs = resolve(&raw, &w, &s, &CorpusConfig::default()).unwrap();
        (recs, w, s)
    }

    #[test]
    fn lr_schedule_arithmetic() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(cfg.lr_main, &cfg, 0), 5e-4);
        assert!((lr_at(cfg.lr_main, &cfg, 5) - 4e-4).abs() < 1e-18);
        assert!((lr_at(cfg.lr_main, &cfg, 10) - 3.2e-4).abs() < 1e-18);
        assert_eq!(lr_at(cfg.lr_dict, &cfg, 0), 5e-5);
        // Non-increasing in epoch.
        for e in 0..40 {
            assert!(lr_at(cfg.lr_main, &cfg, e + 1) <= lr_at(cfg.lr_main, &cfg, e));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.lr_main = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.decay_factor = 1.5;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    fn probs_var(tape: &Tape, p: &[f64]) -> Var {
        tape.constant_vector(p.to_vec()).unwrap()
    }

    #[test]
    fn xe_loss_hand_cases() {
        let tape = Tape::new();
        // Certain model: loss 0.
        let p = probs_var(&tape, &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let l = xe_loss(&tape, &[p], &[4], false).unwrap();
        assert_eq!(tape.value(l)[0], 0.0);

        // Uniform over V=5: ln 5 per token.
        let u = probs_var(&tape, &[0.2; 5]);
        let l = xe_loss(&tape, &[u, u], &[4, 0], false).unwrap();
        assert!((tape.value(l)[0] - (5.0f64).ln()).abs() <= 1e-12);

        // Two steps at P = 0.5, 0.25 → (ln2 + ln4)/2.
        let a = probs_var(&tape, &[0.5, 0.5]);
        let b = probs_var(&tape, &[0.75, 0.25]);
        let l = xe_loss(&tape, &[a, b], &[0, 1], false).unwrap();
        let expect = ((2.0f64).ln() + (4.0f64).ln()) / 2.0;
        assert!((tape.value(l)[0] - expect).abs() <= 1e-12);

        // Sum mode drops the 1/T.
        let l = xe_loss(&tape, &[a, b], &[0, 1], true).unwrap();
        assert!((tape.value(l)[0] - 2.0 * expect).abs() <= 1e-12);
    }

    #[test]
    fn xe_loss_pad_masking() {
        let tape = Tape::new();
        let a = probs_var(&tape, &[0.5, 0.1, 0.1, 0.1, 0.2]);
        let base = xe_loss(&tape, &[a], &[0], false).unwrap();
        let padded = xe_loss(&tape, &[a, a, a], &[0, PAD, PAD], false).unwrap();
        assert_eq!(tape.value(base)[0], tape.value(padded)[0]);
        assert!(xe_loss(&tape, &[a], &[PAD], false).is_err());
        assert!(xe_loss(&tape, &[a], &[9], false).is_err());
        assert!(xe_loss(&tape, &[a, a], &[0], false).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (recs, w, s) = tiny_corpus(4);
        let mut cfg = desk_config();
        cfg.sgae_pretrain_epochs = 0;
        cfg.sgae_dict_epochs = 0;
        let out = train_sgae(&recs, &w, &s, &cfg, None).unwrap();
        let init = init_sgae_params(&cfg, s.len(), w.len()).unwrap();
        for (name, t) in init.iter() {
            assert_eq!(out.store.get(name).unwrap().data(), t.data(), "{name}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (recs, w, s) = tiny_corpus(4);
        let mut cfg = desk_config();
        cfg.sgae_pretrain_epochs = 2;
        cfg.sgae_dict_epochs = 1;
        let a = train_sgae(&recs, &w, &s, &cfg, None).unwrap();
        let b = train_sgae(&recs, &w, &s, &cfg, None).unwrap();
        for (name, t) in a.store.iter() {
            assert_eq!(b.store.get(name).unwrap().data(), t.data(), "{name}");
        }
        for (x, y) in a.log.iter().zip(b.log.iter()) {
            assert_eq!(x.loss, y.loss);
        }
    }

    #[test]
    fn loss_decreases_in_phase_one() {
        let (recs, w, s) = tiny_corpus(8);
        let mut cfg = desk_config();
        cfg.sgae_pretrain_epochs = 10;
        cfg.sgae_dict_epochs = 0;
        let out = train_sgae(&recs, &w, &s, &cfg, None).unwrap();
        let first = out.log[0].loss;
        let last = out.log.last().unwrap().loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn frozen_dictionary_stays_bit_identical() {
        let (recs, w, s) = tiny_corpus(4);
        let mut cfg = desk_config();
        cfg.sgae_pretrain_epochs = 1;
        cfg.sgae_dict_epochs = 2;
        cfg.freeze_dict = true;
        let out = train_sgae(&recs, &w, &s, &cfg, None).unwrap();
        let init = init_sgae_params(&cfg, s.len(), w.len()).unwrap();
        assert_eq!(
            out.store.get(DICT_PARAM).unwrap().data(),
            init.get(DICT_PARAM).unwrap().data()
        );
        // Everything else moved.
        assert_ne!(
            out.store.get("gcn.w_sym").unwrap().data(),
            init.get("gcn.w_sym").unwrap().data()
        );
    }

    #[test]
    fn captioner_requires_dictionary_and_image_graphs() {
        let raw = synth::image_corpus(4, 4, 2);
        let (w, s) = build_vocabs(&raw, 1, 1).unwrap();
        let ccfg = CorpusConfig {
            max_len: 16,
            feature_dim: 4,
        };
        let recs = resolve(&raw, &w, &s, &ccfg).unwrap();
        let mut cfg = desk_config();
        cfg.xe_epochs = 0;
        cfg.rl_epochs = 0;

        let empty = ParamStore::new();
        let err = train_captioner(&recs, &w, &s, &empty, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Model(_)), "{err}");

        let sgae = init_sgae_params(&cfg, s.len(), w.len()).unwrap();
        let mut no_img = recs.clone();
        no_img[1].image_graph = None;
        let err = train_captioner(&no_img, &w, &s, &sgae, &cfg, None).unwrap_err();
        assert!(err.to_string().contains("record 2"), "{err}");

        // Zero-epoch run succeeds and carries D over unchanged.
        let out = train_captioner(&recs, &w, &s, &sgae, &cfg, None).unwrap();
        assert_eq!(
            out.store.get(DICT_PARAM).unwrap().data(),
            sgae.get(DICT_PARAM).unwrap().data()
        );
    }

    #[test]
    fn scst_zero_advantage_has_no_gradient() {
        let (recs, w, s) = tiny_corpus(2);
        let cfg = desk_config();
        let store = init_sgae_params(&cfg, s.len(), w.len()).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let ctx = sgae_context(&tape, &bound, &recs[0].sentence_graph, false).unwrap();
        let mut rng = SeededRng::new(1);
        // Constant reward: advantage is always exactly zero.
        let out = scst_step(&tape, &bound, &ctx, cfg.dim, 8, &mut rng, &|_| 1.0).unwrap();
        assert!(out.loss.is_none());
        assert_eq!(out.sample_reward, out.greedy_reward);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        // Tiny full pipeline: graph -> GCN -> dictionary -> decoder -> XE.
        let (recs, w, s) = tiny_corpus(1);
        let cfg = TrainConfig {
            dim: 4,
            atoms: 3,
            attn_dim: 3,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut store = init_sgae_params(&cfg, s.len(), w.len()).unwrap();
        let target = recs[0].sentence.clone();
        let graph = recs[0].sentence_graph.clone();
        let err = crate::params::grad_check_store(
            &mut store,
            |tape, bound| {
                let ctx = sgae_context(tape, bound, &graph, true)?;
                let probs = forced_probs(tape, bound, &ctx, &target, 4)?;
                xe_loss(tape, &probs, &target, false)
            },
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn csv_log_format() {
        let log = vec![
            EpochLog {
                phase: Phase::SgaePretrain,
                epoch: 0,
                lr_main: 5e-4,
                lr_dict: 5e-5,
                loss: 1.5,
                reward_mean: f64::NAN,
            },
            EpochLog {
                phase: Phase::CaptionerRl,
                epoch: 3,
                lr_main: 5e-4,
                lr_dict: 5e-5,
                loss: -0.1,
                reward_mean: 4.2,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_log_csv(&p, &log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,phase,lr_main,lr_dict,loss,reward_mean");
        assert!(lines[1].starts_with("0,sgae-pretrain,"));
        assert!(lines[1].ends_with(','), "NaN reward serializes empty");
        assert!(lines[2].contains("captioner-rl") && lines[2].ends_with("4.2"));
    }
}

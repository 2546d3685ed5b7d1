//! Desk-scale SGAE pre-training: overfit 32 synthetic records until the
//! decoder reconstructs every sentence from its scene graph, through
//! both phases (plain auto-encoding, then dictionary re-encoding).
//!
//!     cargo run --release --example sgae_overfit

use scenecap::corpus::{build_vocabs, resolve, CorpusConfig};
use scenecap::trainer::{
    reconstruction_accuracy, sgae_context, train_sgae, TrainConfig,
};
use scenecap::synth;

fn main() -> scenecap::Result<()> {
    let raw = synth::sgae_corpus(32, 11);
    let (words, symbols) = build_vocabs(&raw, 1, 1)?;
    let records = resolve(&raw, &words, &symbols, &CorpusConfig::default())?;

    let config = TrainConfig {
        dim: 32,
        atoms: 64,
        attn_dim: 32,
        batch_size: 8,
        lr_main: 2e-3,
        lr_dict: 2e-4,
        decay_every: 80,
        sgae_pretrain_epochs: 260,
        sgae_dict_epochs: 250,
        seed: 7,
        ..TrainConfig::default()
    };

    let t0 = std::time::Instant::now();
    let out = train_sgae(&records, &words, &symbols, &config, None)?;
    for log in out.log.iter().step_by(10) {
        println!(
            "{} epoch {:3}  loss {:.4}",
            log.phase, log.epoch, log.loss
        );
    }

    let acc1 = reconstruction_accuracy(&out.first_phase_store, &records, config.dim, 20, |t, b, r| {
        sgae_context(t, b, &r.sentence_graph, false)
    })?;
    let acc2 = reconstruction_accuracy(&out.store, &records, config.dim, 20, |t, b, r| {
        sgae_context(t, b, &r.sentence_graph, true)
    })?;
    println!("phase-1 greedy reconstruction accuracy: {:.1}%", 100.0 * acc1);
    println!("phase-2 greedy reconstruction accuracy: {:.1}%", 100.0 * acc2);
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

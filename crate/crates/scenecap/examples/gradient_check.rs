//! End-to-end gradient verification: every entry of every parameter of a
//! tiny auto-encoder (d = 4, K = 3 atoms) is checked against central
//! differences through the full graph-encode → dictionary → decoder →
//! cross-entropy pipeline.
//!
//!     cargo run --release --example gradient_check

use scenecap::corpus::{build_vocabs, resolve, CorpusConfig};
use scenecap::params::grad_check_store;
use scenecap::synth;
use scenecap::trainer::{forced_probs, init_sgae_params, sgae_context, xe_loss, TrainConfig};

fn main() -> scenecap::Result<()> {
    let raw = synth::sgae_corpus(4, 3);
    let (words, symbols) = build_vocabs(&raw, 1, 1)?;
    let records = resolve(&raw, &words, &symbols, &CorpusConfig::default())?;

    let config = TrainConfig {
        dim: 4,
        atoms: 3,
        attn_dim: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut store = init_sgae_params(&config, symbols.len(), words.len())?;
    let entries: usize = store.iter().map(|(_, t)| t.len()).sum();
    let rec = records[0].clone();

    let err = grad_check_store(
        &mut store,
        |tape, bound| {
            let ctx = sgae_context(tape, bound, &rec.sentence_graph, true)?;
            let probs = forced_probs(tape, bound, &ctx, &rec.sentence, config.dim)?;
            xe_loss(tape, &probs, &rec.sentence, false)
        },
        1e-5,
    )?;

    println!("parameter entries checked: {entries}");
    println!("max relative error vs central differences: {err:.3e}");
    assert!(err < 1e-4);
    println!("within 1e-4 tolerance");
    Ok(())
}

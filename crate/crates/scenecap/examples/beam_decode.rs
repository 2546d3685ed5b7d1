//! Beam search vs greedy on an overfit desk model: train a small
//! auto-encoder, then decode one graph with beam widths 1, 3, and 5 and
//! compare scores against plain greedy decoding.
//!
//!     cargo run --release --example beam_decode

use scenecap::corpus::{build_vocabs, resolve, CorpusConfig};
use scenecap::decoder::decode_beam;
use scenecap::synth;
use scenecap::trainer::{sgae_context, train_sgae, TrainConfig};
use scenecap::vocab::Vocabulary;

fn render(tokens: &[u32], words: &Vocabulary) -> String {
    tokens
        .iter()
        .map(|&t| words.word(t))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> scenecap::Result<()> {
    let raw = synth::sgae_corpus(8, 21);
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
        sgae_pretrain_epochs: 120,
        sgae_dict_epochs: 0,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train_sgae(&records, &words, &symbols, &config, None)?;

    let rec = &records[0];
    println!("target: {}", render(&rec.sentence, &words));

    let tape = scenecap::tensor::Tape::new();
    let bound = out.store.bind(&tape)?;
    let ctx = sgae_context(&tape, &bound, &rec.sentence_graph, false)?;

    let mut greedy_score = f64::NEG_INFINITY;
    for width in [1, 3, 5] {
        let beams = decode_beam(&tape, &bound, &ctx, config.dim, width, 20, false)?;
        let best = &beams[0];
        if width == 1 {
            greedy_score = best.log_prob;
        }
        println!(
            "beam {width}: score {:+.4}  \"{}\"  ({} candidates)",
            best.log_prob,
            render(&best.tokens, &words),
            beams.len()
        );
        assert!(best.log_prob >= greedy_score - 1e-12);
    }
    println!("wider beams never score below greedy");
    Ok(())
}

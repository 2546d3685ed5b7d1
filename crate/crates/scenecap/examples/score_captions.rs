//! Caption scoring: BLEU@1-4 and CIDEr-D over a toy candidate/reference
//! set, on token ids produced by a shared vocabulary.
//!
//!     cargo run --example score_captions

use scenecap::metrics::{bleu_all, cider_d, DfTable};
use scenecap::vocab::{build_word_vocab, Vocabulary, EOS};

fn ids(words: &Vocabulary, s: &str) -> Vec<u32> {
    let mut out: Vec<u32> = s.split_whitespace().map(|w| words.id(w)).collect();
    out.push(EOS);
    out
}

fn main() -> scenecap::Result<()> {
    let sentences: Vec<Vec<String>> = [
        "a man rides a red bike",
        "a man is riding a bike",
        "the man rides his bike",
        "a dog chases the ball",
        "the dog runs after a ball",
    ]
    .iter()
    .map(|s| s.split_whitespace().map(String::from).collect())
    .collect();
    let words = build_word_vocab(&sentences, 1)?;

    let refs_bike = vec![
        ids(&words, "a man rides a red bike"),
        ids(&words, "a man is riding a bike"),
    ];
    let refs_dog = vec![
        ids(&words, "a dog chases the ball"),
        ids(&words, "the dog runs after a ball"),
    ];
    let df = DfTable::build(&[refs_bike.clone(), refs_dog.clone()])?;

    let candidates = [
        ("exact match", ids(&words, "a man rides a red bike")),
        ("paraphrase", ids(&words, "the man rides a bike")),
        ("wrong scene", ids(&words, "a dog rides a bike")),
    ];
    println!("{:<12} {:>7} {:>7} {:>7} {:>7} {:>8}", "candidate", "BLEU@1", "BLEU@2", "BLEU@3", "BLEU@4", "CIDEr-D");
    for (name, cand) in &candidates {
        let b = bleu_all(cand, &refs_bike)?;
        let c = cider_d(cand, &refs_bike, &df)?;
        println!(
            "{name:<12} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {c:>8.4}",
            b[0], b[1], b[2], b[3]
        );
    }
    Ok(())
}

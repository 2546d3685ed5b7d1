//! Caption quality metrics over token-id sequences: sentence-level BLEU
//! and corpus-referenced CIDEr-D.
//!
//! BOS, EOS, and PAD are stripped before n-grams are counted; UNK is an
//! ordinary token. Both metrics work purely on ids, so scores depend on
//! the vocabulary used to tokenize — candidates and references must share
//! one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{BOS, EOS, PAD};

pub const MAX_N: usize = 4;
/// Gaussian length-penalty width for CIDEr-D.
pub const CIDER_SIGMA: f64 = 6.0;

/// Drop structural tokens; keeps everything else, including UNK.
pub fn content_tokens(seq: &[u32]) -> Vec<u32> {
    seq.iter()
        .copied()
        .filter(|&t| t != BOS && t != EOS && t != PAD)
        .collect()
}

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<Vec<u32>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence-level BLEU-k: geometric mean of clipped modified n-gram
/// precisions for n = 1..k, times the brevity penalty. Any zero
/// precision zeroes the score; an empty candidate scores 0. The brevity
/// penalty uses the reference length closest to the candidate's, shorter
/// on ties.
pub fn bleu(candidate: &[u32], references: &[Vec<u32>], max_n: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    if max_n == 0 || max_n > MAX_N {
        return Err(Error::Config(format!("BLEU order {max_n} out of range")));
    }
    let cand = content_tokens(candidate);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<u32>> = references.iter().map(|r| content_tokens(r)).collect();

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cc = ngram_counts(&cand, n);
        let total: usize = cc.values().sum();
        if total == 0 {
            return Ok(0.0); // candidate too short for this order
        }
        let mut clipped = 0usize;
        for (gram, &count) in &cc {
            let max_ref = refs
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }

    let c = cand.len() as f64;
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - cand.len() as i64).abs(), l))
        .unwrap() as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// BLEU-1 through BLEU-4 in one call.
pub fn bleu_all(candidate: &[u32], references: &[Vec<u32>]) -> Result<[f64; MAX_N]> {
    let mut out = [0.0; MAX_N];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = bleu(candidate, references, i + 1)?;
    }
    Ok(out)
}

/// Document frequencies for CIDEr-D, computed once over the reference
/// corpus. An n-gram's df is the number of reference *sets* (images) in
/// which it appears at least once.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DfTable {
    pub num_sets: usize,
    /// One table per order n = 1..=4, stored as (n-gram, df) pairs.
    tables: Vec<Vec<(Vec<u32>, usize)>>,
    #[serde(skip)]
    maps: Vec<HashMap<Vec<u32>, usize>>,
}

impl DfTable {
    /// Build from per-image reference sets.
    pub fn build(reference_sets: &[Vec<Vec<u32>>]) -> Result<DfTable> {
        if reference_sets.is_empty() {
            return Err(Error::Contract("df table needs at least one set".into()));
        }
        let mut maps: Vec<HashMap<Vec<u32>, usize>> = vec![HashMap::new(); MAX_N];
        for set in reference_sets {
            for n in 1..=MAX_N {
                let mut seen: HashMap<Vec<u32>, ()> = HashMap::new();
                for r in set {
                    for gram in ngram_counts(&content_tokens(r), n).into_keys() {
                        seen.entry(gram).or_insert(());
                    }
                }
                for gram in seen.into_keys() {
                    *maps[n - 1].entry(gram).or_insert(0) += 1;
                }
            }
        }
        let mut tables: Vec<Vec<(Vec<u32>, usize)>> = maps
            .iter()
            .map(|m| {
                let mut v: Vec<_> = m.iter().map(|(k, &c)| (k.clone(), c)).collect();
                v.sort(); // deterministic file output
                v
            })
            .collect();
        tables.iter_mut().for_each(|t| t.shrink_to_fit());
        Ok(DfTable {
            num_sets: reference_sets.len(),
            tables,
            maps,
        })
    }

    fn rebuild_maps(&mut self) {
        self.maps = self
            .tables
            .iter()
            .map(|t| t.iter().cloned().collect())
            .collect();
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<DfTable> {
        let mut t: DfTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if t.tables.len() != MAX_N || t.num_sets == 0 {
            return Err(Error::Data(format!(
                "df table {} is malformed",
                path.display()
            )));
        }
        t.rebuild_maps();
        Ok(t)
    }

    fn idf(&self, n: usize, gram: &[u32]) -> f64 {
        let df = self.maps[n - 1].get(gram).copied().unwrap_or(0);
        (self.num_sets as f64).ln() - (df.max(1) as f64).ln()
    }
}

/// tf·idf vector for one sentence at one order.
fn tfidf(df: &DfTable, tokens: &[u32], n: usize) -> HashMap<Vec<u32>, f64> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(gram, c)| {
            let w = c as f64 * df.idf(n, &gram);
            (gram, w)
        })
        .collect()
}

fn norm(v: &HashMap<Vec<u32>, f64>) -> f64 {
    v.values().map(|w| w * w).sum::<f64>().sqrt()
}

/// CIDEr-D for one candidate against its reference set. For each order,
/// the candidate vector is clipped to the reference before the inner
/// product; a Gaussian penalty discounts length mismatch; similarities
/// are averaged over references, scaled by 10, and averaged over orders.
pub fn cider_d(candidate: &[u32], references: &[Vec<u32>], df: &DfTable) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Contract(
            "CIDEr-D needs at least one reference".into(),
        ));
    }
    let cand = content_tokens(candidate);
    let refs: Vec<Vec<u32>> = references.iter().map(|r| content_tokens(r)).collect();

    let mut order_sum = 0.0;
    for n in 1..=MAX_N {
        let g_c = tfidf(df, &cand, n);
        let nc = norm(&g_c);
        let mut ref_sum = 0.0;
        for r in &refs {
            let g_r = tfidf(df, r, n);
            let nr = norm(&g_r);
            let sim = if nc == 0.0 || nr == 0.0 {
                0.0
            } else {
                let dot: f64 = g_c
                    .iter()
                    .map(|(gram, &wc)| {
                        let wr = g_r.get(gram).copied().unwrap_or(0.0);
                        wc.min(wr) * wr
                    })
                    .sum();
                dot / (nc * nr)
            };
            let dl = cand.len() as f64 - r.len() as f64;
            ref_sum += sim * (-dl * dl / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        }
        order_sum += 10.0 * ref_sum / refs.len() as f64;
    }
    Ok(order_sum / MAX_N as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[u32]) -> Vec<u32> {
        xs.to_vec()
    }

    #[test]
    fn unigram_clipping_hand_case() {
        // Candidate of seven identical tokens against a reference holding
        // that token twice: p1 = 2/7.
        let cand = vec![10u32; 7];
        let refs = vec![toks(&[10, 10, 11, 12, 13, 14, 15])];
        let b1 = bleu(&cand, &refs, 1).unwrap();
        assert!((b1 - 2.0 / 7.0).abs() <= 1e-12, "{b1}");
    }

    #[test]
    fn identical_sentence_scores_one() {
        let s = toks(&[5, 6, 7, 8, 9]);
        for n in 1..=4 {
            let b = bleu(&s, &[s.clone()], n).unwrap();
            assert!((b - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_or_too_short_candidates() {
        let refs = vec![toks(&[5, 6, 7, 8])];
        assert_eq!(bleu(&[], &refs, 1).unwrap(), 0.0);
        assert_eq!(bleu(&[EOS, PAD, PAD], &refs, 1).unwrap(), 0.0);
        // Three tokens have no 4-grams.
        assert_eq!(bleu(&[5, 6, 7], &refs, 4).unwrap(), 0.0);
        assert!(bleu(&[5, 6, 7], &refs, 3).unwrap() > 0.0);
    }

    #[test]
    fn structural_tokens_are_ignored() {
        let a = toks(&[5, 6, 7]);
        let b = vec![BOS, 5, 6, 7, EOS, PAD, PAD];
        assert!((bleu(&b, &[a.clone()], 2).unwrap() - 1.0).abs() <= 1e-12);
        assert!((bleu(&a, &[b], 2).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn brevity_penalty_hand_case() {
        // Candidate length 2, reference length 4, perfect precision:
        // BLEU-1 = exp(1 - 4/2) = e^{-1}.
        let b = bleu(&[5, 6], &[toks(&[5, 6, 7, 8])], 1).unwrap();
        assert!((b - (-1.0f64).exp()).abs() <= 1e-12);
    }

    #[test]
    fn closest_reference_length_wins() {
        // Candidate length 3; refs of length 3 and 9. The closer ref
        // (3) gives BP = 1.
        let cand = toks(&[5, 6, 7]);
        let refs = vec![toks(&[5, 6, 8]), vec![9u32; 9]];
        let b = bleu(&cand, &refs, 1).unwrap();
        assert!((b - 2.0 / 3.0).abs() <= 1e-12, "{b}");
    }

    #[test]
    fn bleu_order_validation() {
        assert!(bleu(&[5], &[toks(&[5])], 0).is_err());
        assert!(bleu(&[5], &[toks(&[5])], 5).is_err());
        assert!(bleu(&[5], &[], 1).is_err());
    }

    #[test]
    fn bleu_all_is_consistent() {
        let cand = toks(&[5, 6, 7, 8, 9]);
        let refs = vec![toks(&[5, 6, 7, 10, 11])];
        let all = bleu_all(&cand, &refs).unwrap();
        for (i, &v) in all.iter().enumerate() {
            assert_eq!(v, bleu(&cand, &refs, i + 1).unwrap());
        }
        // Higher orders never score higher.
        for w in all.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    fn two_image_df() -> (DfTable, Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let refs1 = vec![toks(&[5, 6, 7, 8]), toks(&[5, 6, 9, 8])];
        let refs2 = vec![toks(&[10, 11, 12, 13])];
        let df = DfTable::build(&[refs1.clone(), refs2.clone()]).unwrap();
        (df, refs1, refs2)
    }

    #[test]
    fn cider_identity_with_informative_idf() {
        let (df, refs1, _) = two_image_df();
        // Candidate equal to one reference of image 1. Every matching
        // n-gram has positive idf (absent from image 2), so the
        // self-similarity term is exactly 1 for every order against that
        // reference.
        let cand = refs1[0].clone();
        let score = cider_d(&cand, &[cand.clone()], &df).unwrap();
        assert!((score - 10.0).abs() <= 1e-9, "{score}");
    }

    #[test]
    fn cider_disjoint_candidate_scores_zero() {
        let (df, refs1, _) = two_image_df();
        let cand = toks(&[20, 21, 22, 23]);
        let score = cider_d(&cand, &refs1, &df).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn cider_matches_brute_force_oracle() {
        let (df, refs1, _) = two_image_df();
        let cand = toks(&[5, 6, 7, 9]);

        // Independent unigram-only recomputation.
        let n = 1;
        let count = |s: &[u32], t: u32| s.iter().filter(|&&x| x == t).count() as f64;
        let idf = |t: u32| {
            // df over the two images.
            let in1 = refs1.iter().any(|r| r.contains(&t));
            let in2 = [10u32, 11, 12, 13].contains(&t);
            let d = (in1 as usize + in2 as usize).max(1) as f64;
            (2.0f64).ln() - d.ln()
        };
        let vocab: Vec<u32> = (5..=13).collect();
        let mut per_ref = Vec::new();
        for r in &refs1 {
            let mut dot = 0.0;
            let mut nc = 0.0;
            let mut nr = 0.0;
            for &t in &vocab {
                let wc = count(&cand, t) * idf(t);
                let wr = count(r, t) * idf(t);
                dot += wc.min(wr) * wr;
                nc += wc * wc;
                nr += wr * wr;
            }
            let dl = cand.len() as f64 - r.len() as f64;
            per_ref.push(
                dot / (nc.sqrt() * nr.sqrt())
                    * (-dl * dl / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp(),
            );
        }
        let expect1 = 10.0 * per_ref.iter().sum::<f64>() / refs1.len() as f64;

        // Compare against the unigram share of the full score by
        // recomputing with a candidate long enough only for unigrams.
        let g_c = tfidf(&df, &cand, n);
        let mut got1 = 0.0;
        for r in &refs1 {
            let g_r = tfidf(&df, r, n);
            let dot: f64 = g_c
                .iter()
                .map(|(g, &wc)| wc.min(*g_r.get(g).unwrap_or(&0.0)) * g_r.get(g).unwrap_or(&0.0))
                .sum();
            let dl = cand.len() as f64 - r.len() as f64;
            got1 += dot / (norm(&g_c) * norm(&g_r))
                * (-dl * dl / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        }
        let got1 = 10.0 * got1 / refs1.len() as f64;
        assert!((got1 - expect1).abs() <= 1e-9, "{got1} vs {expect1}");
    }

    #[test]
    fn length_penalty_decays() {
        let (df, refs1, _) = two_image_df();
        let short = toks(&[5, 6]);
        let mut long = toks(&[5, 6]);
        long.extend(vec![30u32; 10]);
        let s_short = cider_d(&short, &refs1, &df).unwrap();
        let s_long = cider_d(&long, &refs1, &df).unwrap();
        assert!(s_short > s_long);
    }

    #[test]
    fn df_table_roundtrip() {
        let (df, refs1, _) = two_image_df();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("df.json");
        df.save(&path).unwrap();
        let loaded = DfTable::load(&path).unwrap();
        let cand = toks(&[5, 6, 7, 8]);
        assert_eq!(
            cider_d(&cand, &refs1, &df).unwrap(),
            cider_d(&cand, &refs1, &loaded).unwrap()
        );
    }
}

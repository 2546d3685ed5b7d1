//! Vocabularies with frequency filtering.
//!
//! Two kinds share one structure: the caption word vocabulary (rare words
//! collapse to UNK below `min_count = 5`) and the pooled scene-graph
//! symbol vocabulary over objects, relations, and attributes together
//! (threshold 10). Ids are assigned deterministically: reserved tokens
//! first, then by descending count with a lexicographic tiebreak.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const PAD: u32 = 3;
pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabKind {
    Word,
    SgSymbol,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    pub kind: VocabKind,
    id_to_word: Vec<String>,
    #[serde(skip)]
    word_to_id: std::collections::HashMap<String, u32>,
}

impl Vocabulary {
    fn from_ordered(kind: VocabKind, words: Vec<String>) -> Self {
        let mut id_to_word: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_word.extend(words);
        let word_to_id = id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary {
            kind,
            id_to_word,
            word_to_id,
        }
    }

    /// Build from token counts with a frequency floor.
    fn from_counts(kind: VocabKind, counts: BTreeMap<String, usize>, min_count: usize) -> Self {
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(&w.as_str()))
            .collect();
        // Count desc, then lexicographic: deterministic ids.
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocabulary::from_ordered(kind, kept.into_iter().map(|(w, _)| w).collect())
    }

    /// Total size including the four reserved tokens.
    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.id_to_word
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<unk>")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Rebuild the word→id index after deserialization; errors if the
    /// reserved token block is absent or out of place.
    pub fn rebuild_index(&mut self) -> Result<()> {
        for (i, r) in RESERVED.iter().enumerate() {
            if self.id_to_word.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Data(
                    "vocabulary lacks the reserved token block".into(),
                ));
            }
        }
        self.word_to_id = self
            .id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut v: Vocabulary = serde_json::from_str(&text)?;
        v.rebuild_index().map_err(|_| {
            Error::Data(format!(
                "vocabulary file {} lacks reserved token block",
                path.display()
            ))
        })?;
        Ok(v)
    }
}

/// Caption word vocabulary. Words below `min_count` map to UNK.
pub fn build_word_vocab<S: AsRef<str>>(
    sentences: &[Vec<S>],
    min_count: usize,
) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(Error::Data("empty corpus: no sentences".into()));
    }
    let mut counts = BTreeMap::new();
    for s in sentences {
        for w in s {
            *counts.entry(w.as_ref().to_owned()).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary::from_counts(VocabKind::Word, counts, min_count))
}

/// Pooled scene-graph symbol vocabulary: object labels, predicates, and
/// attributes are grouped into one index space.
pub fn build_symbol_vocab(
    graphs: &[LabelledGraph<'_>],
    min_count: usize,
) -> Result<Vocabulary> {
    if graphs.is_empty() {
        return Err(Error::Data("empty graph set".into()));
    }
    let mut counts = BTreeMap::new();
    for g in graphs {
        for o in &g.objects {
            *counts.entry(o.label.to_owned()).or_insert(0) += 1;
            for a in &o.attributes {
                *counts.entry((*a).to_owned()).or_insert(0) += 1;
            }
        }
        for p in &g.predicates {
            *counts.entry((*p).to_owned()).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary::from_counts(
        VocabKind::SgSymbol,
        counts,
        min_count,
    ))
}

/// String-labelled view of a graph, as it appears in corpus files before
/// ids are assigned.
pub struct LabelledGraph<'a> {
    pub objects: Vec<LabelledObject<'a>>,
    pub predicates: Vec<&'a str>,
}

pub struct LabelledObject<'a> {
    pub label: &'a str,
    pub attributes: Vec<&'a str>,
}

//! Corpus ingestion: JSON Lines records pairing a tokenized sentence with
//! its sentence scene graph and, optionally, an image scene graph whose
//! nodes carry RoI features.
//!
//! Labels are strings in files; ids exist only in memory. Sentences are
//! trimmed to the configured cap and terminated with EOS.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ObjectNode, RelationshipEdge, SceneGraph};
use crate::vocab::{LabelledGraph, LabelledObject, Vocabulary, EOS};

/// One record as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub sentence: Vec<String>,
    pub sentence_graph: RawGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_graph: Option<RawGraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawGraph {
    pub objects: Vec<RawObject>,
    #[serde(default)]
    pub relationships: Vec<RawRelationship>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawObject {
    pub label: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRelationship {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

impl RawGraph {
    pub fn labelled(&self) -> LabelledGraph<'_> {
        LabelledGraph {
            objects: self
                .objects
                .iter()
                .map(|o| LabelledObject {
                    label: &o.label,
                    attributes: o.attributes.iter().map(String::as_str).collect(),
                })
                .collect(),
            predicates: self
                .relationships
                .iter()
                .map(|r| r.predicate.as_str())
                .collect(),
        }
    }

    pub fn to_ids(&self, symbols: &Vocabulary) -> SceneGraph {
        SceneGraph {
            objects: self
                .objects
                .iter()
                .map(|o| ObjectNode {
                    label_id: symbols.id(&o.label),
                    attribute_ids: o.attributes.iter().map(|a| symbols.id(a)).collect(),
                    roi_feature: o.feature.clone(),
                })
                .collect(),
            relationships: self
                .relationships
                .iter()
                .map(|r| RelationshipEdge {
                    subject_index: r.subject,
                    object_index: r.object,
                    predicate_id: symbols.id(&r.predicate),
                    roi_feature: r.feature.clone(),
                })
                .collect(),
        }
    }
}

/// In-memory record: token ids (EOS-terminated) plus id-mapped graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub id: Option<String>,
    /// Sentence tokens capped at `max_len`, terminated with EOS.
    pub sentence: Vec<u32>,
    pub sentence_graph: SceneGraph,
    pub image_graph: Option<SceneGraph>,
}

#[derive(Clone, Copy, Debug)]
pub struct CorpusConfig {
    pub max_len: usize,
    pub feature_dim: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_len: 16,
            feature_dim: crate::graph::DEFAULT_FEATURE_DIM,
        }
    }
}

pub fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open corpus {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "{}: line {}: malformed record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "{}: corpus is empty",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_raw(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Map raw records through the vocabularies, trim, and validate.
pub fn resolve(
    records: &[RawRecord],
    words: &Vocabulary,
    symbols: &Vocabulary,
    config: &CorpusConfig,
) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for (i, raw) in records.iter().enumerate() {
        let mut sentence: Vec<u32> = raw
            .sentence
            .iter()
            .take(config.max_len)
            .map(|w| words.id(w))
            .collect();
        sentence.push(EOS);

        let sentence_graph = raw.sentence_graph.to_ids(symbols);
        let image_graph = raw.image_graph.as_ref().map(|g| g.to_ids(symbols));

        let mut violations = sentence_graph.validate(config.feature_dim, Some(symbols.len()));
        if let Some(g) = &image_graph {
            violations.extend(g.validate(config.feature_dim, Some(symbols.len())));
        }
        if !violations.is_empty() {
            let list: Vec<String> = violations.into_iter().map(|v| v.0).collect();
            return Err(Error::Data(format!(
                "record {}: validation failed: {}",
                i + 1,
                list.join("; ")
            )));
        }
        out.push(CorpusRecord {
            id: raw.id.clone(),
            sentence,
            sentence_graph,
            image_graph,
        });
    }
    Ok(out)
}

/// Read a JSONL corpus and resolve it against the given vocabularies.
pub fn load_corpus(
    path: &Path,
    words: &Vocabulary,
    symbols: &Vocabulary,
    config: &CorpusConfig,
) -> Result<Vec<CorpusRecord>> {
    resolve(&read_raw(path)?, words, symbols, config)
}

/// Build both vocabularies from a raw corpus.
pub fn build_vocabs(
    records: &[RawRecord],
    word_min_count: usize,
    symbol_min_count: usize,
) -> Result<(Vocabulary, Vocabulary)> {
    let sentences: Vec<Vec<String>> = records.iter().map(|r| r.sentence.clone()).collect();
    let words = crate::vocab::build_word_vocab(&sentences, word_min_count)?;
    let mut graphs: Vec<LabelledGraph> =
        records.iter().map(|r| r.sentence_graph.labelled()).collect();
    graphs.extend(records.iter().filter_map(|r| {
        r.image_graph.as_ref().map(|g| g.labelled())
    }));
    let symbols = crate::vocab::build_symbol_vocab(&graphs, symbol_min_count)?;
    Ok((words, symbols))
}

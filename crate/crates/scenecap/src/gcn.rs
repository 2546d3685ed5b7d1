//! Sentence-side graph convolutional encoder.
//!
//! Produces three families of context-aware embeddings from a scene
//! graph: one per relationship triplet (g_r over the concatenated
//! subject/predicate/object embeddings), one per attributed object (mean
//! of g_a over its attributes), and one per object (role-split sums
//! through g_s and g_o, averaged over the relationships the object
//! participates in). The four g-functions share a structure — affine then
//! ReLU — with independent parameters.
//!
//! The flattened embedding set X is ordered deterministically: objects by
//! index, then relationships by index, then attributed objects by index.

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::params::{affine_relu, Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GcnConfig {
    /// Embedding dimension d (full scale 1,000; desk default 32).
    pub dim: usize,
    /// Symbol vocabulary size |Σ_S| including reserved tokens.
    pub symbols: usize,
}

pub const PREFIX: &str = "gcn";

/// Register all GCN parameters: the symbol embedding matrix and the four
/// g-functions (g_r, g_s, g_o: 3d→d; g_a: 2d→d).
pub fn init_gcn(store: &mut ParamStore, rng: &mut SeededRng, cfg: &GcnConfig) {
    let d = cfg.dim;
    store.init_matrix(rng, format!("{PREFIX}.w_sym"), d, cfg.symbols);
    store.init_affine(rng, &format!("{PREFIX}.g_r"), 3 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_a"), 2 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_s"), 3 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_o"), 3 * d, d);
}

/// Column lookup into the symbol embedding matrix; equivalent to
/// multiplying by a one-hot label vector.
pub fn embed_label(tape: &Tape, bound: &Bound, prefix: &str, label_id: u32) -> Result<Var> {
    let w = bound.var(&format!("{prefix}.w_sym"));
    let cols = tape.shape(w)[1];
    if label_id as usize >= cols {
        return Err(Error::Data(format!(
            "label id {label_id} out of range for embedding with {cols} columns"
        )));
    }
    tape.col(w, label_id as usize)
}

/// g_r over a relationship triplet's three embeddings.
pub fn relationship_embedding(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    e_subject: Var,
    e_predicate: Var,
    e_object: Var,
) -> Result<Var> {
    let cat = tape.concat(&[e_subject, e_predicate, e_object])?;
    affine_relu(tape, bound, &format!("{prefix}.g_r"), cat)
}

/// Mean of g_a over the object's attributes; callers must skip
/// attribute-less objects.
pub fn attribute_embedding(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    e_object: Var,
    attribute_embeddings: &[Var],
) -> Result<Var> {
    if attribute_embeddings.is_empty() {
        return Err(Error::Contract(
            "attribute embedding requires at least one attribute".into(),
        ));
    }
    let terms: Result<Vec<Var>> = attribute_embeddings
        .iter()
        .map(|&e_attr| {
            let cat = tape.concat(&[e_object, e_attr])?;
            affine_relu(tape, bound, &format!("{prefix}.g_a"), cat)
        })
        .collect();
    tape.mean_rows(&terms?)
}

/// Role-split object embedding. An isolated object (no relationships)
/// passes its own embedding through unchanged.
pub fn object_embedding(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    graph: &SceneGraph,
    index: usize,
    e_objects: &[Var],
    e_relationships: &[Var],
) -> Result<Var> {
    let as_subject = graph.subject_roles(index);
    let as_object = graph.object_roles(index);
    let n_rel = as_subject.len() + as_object.len();
    if n_rel == 0 {
        return Ok(e_objects[index]);
    }
    let mut acc: Option<Var> = None;
    for (rel_idx, other) in as_subject {
        let cat = tape.concat(&[e_objects[index], e_objects[other], e_relationships[rel_idx]])?;
        let term = affine_relu(tape, bound, &format!("{prefix}.g_s"), cat)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    for (rel_idx, other) in as_object {
        let cat = tape.concat(&[e_objects[other], e_objects[index], e_relationships[rel_idx]])?;
        let term = affine_relu(tape, bound, &format!("{prefix}.g_o"), cat)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / n_rel as f64)
}

/// Full encoder output.
#[derive(Debug)]
pub struct GcnOutput {
    /// One embedding per object, by index.
    pub x_objects: Vec<Var>,
    /// One embedding per relationship, by index.
    pub x_relationships: Vec<Var>,
    /// One embedding per object with >= 1 attribute: (object index, var).
    pub x_attributes: Vec<(usize, Var)>,
    /// Flattened set: objects, then relationships, then attributes.
    pub all: Vec<Var>,
}

/// Run the encoder over a validated graph, given per-node base
/// embeddings. Shared by the sentence-side (label embeddings) and
/// image-side (fused embeddings) encoders, which differ only in their
/// node inputs and parameter prefix.
pub fn encode_with(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    graph: &SceneGraph,
    e_objects: &[Var],
    e_relationships: &[Var],
    e_attributes: &[Vec<Var>],
) -> Result<GcnOutput> {
    let mut x_relationships = Vec::with_capacity(graph.relationships.len());
    for (k, r) in graph.relationships.iter().enumerate() {
        let cat = tape.concat(&[
            e_objects[r.subject_index],
            e_relationships[k],
            e_objects[r.object_index],
        ])?;
        x_relationships.push(affine_relu(tape, bound, &format!("{prefix}.g_r"), cat)?);
    }

    let mut x_attributes = Vec::new();
    for (i, attrs) in e_attributes.iter().enumerate() {
        if attrs.is_empty() {
            continue; // no entry emitted for attribute-less objects
        }
        x_attributes.push((
            i,
            attribute_embedding(tape, bound, prefix, e_objects[i], attrs)?,
        ));
    }

    let mut x_objects = Vec::with_capacity(graph.objects.len());
    for i in 0..graph.objects.len() {
        x_objects.push(object_embedding(
            tape,
            bound,
            prefix,
            graph,
            i,
            e_objects,
            e_relationships,
        )?);
    }

    let mut all = x_objects.clone();
    all.extend(&x_relationships);
    all.extend(x_attributes.iter().map(|&(_, v)| v));
    Ok(GcnOutput {
        x_objects,
        x_relationships,
        x_attributes,
        all,
    })
}

/// Sentence-side forward: embed labels, then encode.
pub fn gcn_forward(tape: &Tape, bound: &Bound, graph: &SceneGraph) -> Result<GcnOutput> {
    if graph.objects.is_empty() {
        return Err(Error::Data("cannot encode a graph with no objects".into()));
    }
    let e_objects: Result<Vec<Var>> = graph
        .objects
        .iter()
        .map(|o| embed_label(tape, bound, PREFIX, o.label_id))
        .collect();
    let e_objects = e_objects?;
    let e_relationships: Result<Vec<Var>> = graph
        .relationships
        .iter()
        .map(|r| embed_label(tape, bound, PREFIX, r.predicate_id))
        .collect();
    let e_attributes: Result<Vec<Vec<Var>>> = graph
        .objects
        .iter()
        .map(|o| {
            o.attribute_ids
                .iter()
                .map(|&a| embed_label(tape, bound, PREFIX, a))
                .collect()
        })
        .collect();
    encode_with(
        tape,
        bound,
        PREFIX,
        graph,
        &e_objects,
        &e_relationships?,
        &e_attributes?,
    )
}

//! Image-side multi-modal graph convolutional encoder.
//!
//! Image scene graphs attach an RoI visual feature to every object and
//! relationship node. Each node's input embedding fuses its symbol
//! embedding e with its visual feature v:
//!
//!   u = relu(W1·e + W2·v) − (W1·e − W2·v)²
//!
//! with separate (W1, W2) pairs for objects, relationships, and
//! attributes. Attributes have no RoI of their own and borrow the owning
//! object's feature. The fused embeddings then pass through the same
//! message-passing structure as the sentence-side encoder, with an
//! independent parameter set under the `mgcn.` prefix.

use crate::error::{Error, Result};
use crate::gcn::{embed_label, encode_with, GcnOutput};
use crate::graph::SceneGraph;
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Var};

pub const PREFIX: &str = "mgcn";

#[derive(Clone, Copy, Debug)]
pub struct MgcnConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Symbol vocabulary size |Σ_S|.
    pub symbols: usize,
    /// RoI feature dimension (full scale 2,048).
    pub feature_dim: usize,
}

/// Register all MGCN parameters: symbol embeddings, three fusion pairs,
/// and the four message functions.
pub fn init_mgcn(store: &mut ParamStore, rng: &mut SeededRng, cfg: &MgcnConfig) {
    let d = cfg.dim;
    store.init_matrix(rng, format!("{PREFIX}.w_sym"), d, cfg.symbols);
    for kind in ["obj", "rel", "attr"] {
        store.init_matrix(rng, format!("{PREFIX}.fuse_{kind}.w1"), d, d);
        store.init_matrix(rng, format!("{PREFIX}.fuse_{kind}.w2"), d, cfg.feature_dim);
    }
    store.init_affine(rng, &format!("{PREFIX}.g_r"), 3 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_a"), 2 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_s"), 3 * d, d);
    store.init_affine(rng, &format!("{PREFIX}.g_o"), 3 * d, d);
}

/// One fused node embedding: relu(W1·e + W2·v) − (W1·e − W2·v)².
pub fn fuse(tape: &Tape, bound: &Bound, kind: &str, e: Var, v: Var) -> Result<Var> {
    let w1e = tape.matmul(bound.var(&format!("{PREFIX}.fuse_{kind}.w1")), e)?;
    let w2v = tape.matmul(bound.var(&format!("{PREFIX}.fuse_{kind}.w2")), v)?;
    let lhs = tape.relu(tape.add(w1e, w2v)?)?;
    let rhs = tape.square(tape.sub(w1e, w2v)?)?;
    tape.sub(lhs, rhs)
}

fn roi_var(tape: &Tape, feature: &Option<Vec<f64>>, what: &str) -> Result<Var> {
    match feature {
        Some(f) => tape.constant_vector(f.clone()),
        None => Err(Error::Data(format!("{what} is missing an RoI feature"))),
    }
}

/// Image-side forward over a validated graph with RoI features on every
/// object and relationship.
pub fn mgcn_forward(tape: &Tape, bound: &Bound, graph: &SceneGraph) -> Result<GcnOutput> {
    if graph.objects.is_empty() {
        return Err(Error::Data("cannot encode a graph with no objects".into()));
    }

    let mut u_objects = Vec::with_capacity(graph.objects.len());
    let mut roi_objects = Vec::with_capacity(graph.objects.len());
    for (i, o) in graph.objects.iter().enumerate() {
        let v = roi_var(tape, &o.roi_feature, &format!("object {i}"))?;
        let e = embed_label(tape, bound, PREFIX, o.label_id)?;
        u_objects.push(fuse(tape, bound, "obj", e, v)?);
        roi_objects.push(v);
    }

    let mut u_relationships = Vec::with_capacity(graph.relationships.len());
    for (k, r) in graph.relationships.iter().enumerate() {
        let v = roi_var(tape, &r.roi_feature, &format!("relationship {k}"))?;
        let e = embed_label(tape, bound, PREFIX, r.predicate_id)?;
        u_relationships.push(fuse(tape, bound, "rel", e, v)?);
    }

    // Attributes fuse against the owning object's RoI.
    let mut u_attributes = Vec::with_capacity(graph.objects.len());
    for (i, o) in graph.objects.iter().enumerate() {
        let mut attrs = Vec::with_capacity(o.attribute_ids.len());
        for &a in &o.attribute_ids {
            let e = embed_label(tape, bound, PREFIX, a)?;
            attrs.push(fuse(tape, bound, "attr", e, roi_objects[i])?);
        }
        u_attributes.push(attrs);
    }

    encode_with(
        tape,
        bound,
        PREFIX,
        graph,
        &u_objects,
        &u_relationships,
        &u_attributes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{gcn_forward, init_gcn, GcnConfig};
    use crate::graph::{ObjectNode, RelationshipEdge};
    use crate::tensor::Tensor;

    const FDIM: usize = 5;

    fn obj(label: u32, attrs: Vec<u32>) -> ObjectNode {
        ObjectNode {
            label_id: label,
            attribute_ids: attrs,
            roi_feature: Some((0..FDIM).map(|i| 0.1 * (i as f64 + label as f64)).collect()),
        }
    }

    fn rel(s: usize, p: u32, o: usize) -> RelationshipEdge {
        RelationshipEdge {
            subject_index: s,
            object_index: o,
            predicate_id: p,
            roi_feature: Some(vec![0.25; FDIM]),
        }
    }

    fn toy_graph() -> SceneGraph {
        SceneGraph {
            objects: vec![obj(4, vec![5]), obj(6, vec![]), obj(7, vec![5, 9])],
            relationships: vec![rel(0, 8, 1), rel(2, 8, 0)],
        }
    }

    fn small_store(d: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        init_mgcn(
            &mut store,
            &mut SeededRng::new(seed),
            &MgcnConfig {
                dim: d,
                symbols: 10,
                feature_dim: FDIM,
            },
        );
        store
    }

    #[test]
    fn fuse_matches_hand_computation() {
        let d = 2;
        let mut store = ParamStore::new();
        // W1 = I, W2 = [[1,0,...],[0,1,0,...]] (selects first two coords).
        store.insert(
            "mgcn.fuse_obj.w1",
            Tensor::new(vec![d, d], vec![1., 0., 0., 1.]).unwrap(),
        );
        let mut w2 = vec![0.0; d * FDIM];
        w2[0] = 1.0;
        w2[FDIM + 1] = 1.0;
        store.insert("mgcn.fuse_obj.w2", Tensor::new(vec![d, FDIM], w2).unwrap());
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let e = tape.constant_vector(vec![0.5, -1.0]).unwrap();
        let mut v = vec![0.0; FDIM];
        v[0] = 0.3;
        v[1] = 0.4;
        let v = tape.constant_vector(v).unwrap();
        let u = fuse(&tape, &bound, "obj", e, v).unwrap();
        // coord 0: relu(0.5+0.3) − (0.5−0.3)² = 0.8 − 0.04
        // coord 1: relu(−1.0+0.4) − (−1.0−0.4)² = 0 − 1.96
        let got = tape.value(u);
        assert!((got[0] - 0.76).abs() <= 1e-12);
        assert!((got[1] + 1.96).abs() <= 1e-12);
    }

    #[test]
    fn forward_counts_match_graph() {
        let store = small_store(3, 11);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let out = mgcn_forward(&tape, &bound, &toy_graph()).unwrap();
        assert_eq!(out.x_objects.len(), 3);
        assert_eq!(out.x_relationships.len(), 2);
        assert_eq!(out.x_attributes.len(), 2);
        assert_eq!(out.all.len(), 7);
    }

    #[test]
    fn missing_roi_names_the_node() {
        let store = small_store(3, 11);
        let mut g = toy_graph();
        g.objects[1].roi_feature = None;
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let err = mgcn_forward(&tape, &bound, &g).unwrap_err().to_string();
        assert!(err.contains("object 1"), "{err}");

        let mut g = toy_graph();
        g.relationships[0].roi_feature = None;
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let err = mgcn_forward(&tape, &bound, &g).unwrap_err().to_string();
        assert!(err.contains("relationship 0"), "{err}");
    }

    #[test]
    fn message_passing_matches_sentence_encoder() {
        // Copy the image-side message functions into a sentence-side
        // store and feed the sentence encoder the same fused node
        // inputs: the shared message-passing structure must produce
        // identical outputs.
        let d = 3;
        let store = small_store(d, 17);
        let mut gstore = ParamStore::new();
        init_gcn(
            &mut gstore,
            &mut SeededRng::new(99),
            &GcnConfig { dim: d, symbols: 10 },
        );
        // Overwrite sentence-side message functions with the image-side ones.
        for f in ["g_r", "g_a", "g_s", "g_o"] {
            for part in ["weight", "bias"] {
                let src = store.get(&format!("mgcn.{f}.{part}")).unwrap().clone();
                gstore.insert(format!("gcn.{f}.{part}"), src);
            }
        }
        let g = toy_graph();

        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let out_m = mgcn_forward(&tape, &bound, &g).unwrap();

        // Re-run the shared encoder under the sentence-side prefix with
        // the same fused node inputs.
        let gtape = Tape::new();
        let gbound = gstore.bind(&gtape).unwrap();
        let copy =
            |v: Var| -> Var { gtape.constant_vector(tape.value(v).to_vec()).unwrap() };
        let mut u_obj = Vec::new();
        let mut u_rel = Vec::new();
        let mut u_attr = vec![Vec::new(); g.objects.len()];
        for (i, o) in g.objects.iter().enumerate() {
            let e = embed_label(&tape, &bound, PREFIX, o.label_id).unwrap();
            let v = tape.constant_vector(o.roi_feature.clone().unwrap()).unwrap();
            u_obj.push(copy(fuse(&tape, &bound, "obj", e, v).unwrap()));
            for &a in &o.attribute_ids {
                let ea = embed_label(&tape, &bound, PREFIX, a).unwrap();
                u_attr[i].push(copy(fuse(&tape, &bound, "attr", ea, v).unwrap()));
            }
        }
        for r in &g.relationships {
            let e = embed_label(&tape, &bound, PREFIX, r.predicate_id).unwrap();
            let v = tape.constant_vector(r.roi_feature.clone().unwrap()).unwrap();
            u_rel.push(copy(fuse(&tape, &bound, "rel", e, v).unwrap()));
        }
        let out_g = encode_with(&gtape, &gbound, "gcn", &g, &u_obj, &u_rel, &u_attr).unwrap();

        for (&a, &b) in out_m.all.iter().zip(out_g.all.iter()) {
            assert_eq!(&*tape.value(a), &*gtape.value(b));
        }
        // And the purely symbolic sentence forward differs (sanity that
        // fusion actually changes the inputs).
        let sym = gcn_forward(&gtape, &gbound, &{
            let mut g2 = g.clone();
            for o in &mut g2.objects {
                o.roi_feature = None;
            }
            g2
        })
        .unwrap();
        assert_ne!(&*tape.value(out_m.all[0]), &*gtape.value(sym.all[0]));
    }

    #[test]
    fn all_parameters_receive_gradients() {
        let mut store = small_store(3, 23);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let out = mgcn_forward(&tape, &bound, &toy_graph()).unwrap();
        let mut loss = tape.sum_all(tape.square(out.all[0]).unwrap()).unwrap();
        for &x in &out.all[1..] {
            loss = tape
                .add(loss, tape.sum_all(tape.square(x).unwrap()).unwrap())
                .unwrap();
        }
        tape.backward(loss).unwrap();
        store.accumulate_grads(&tape, &bound).unwrap();
        for (name, t) in store.iter() {
            assert!(
                t.grad.as_ref().unwrap().iter().any(|&v| v != 0.0),
                "parameter {name} received no gradient"
            );
        }
    }

    #[test]
    fn seed_determinism() {
        let s1 = small_store(3, 5);
        let s2 = small_store(3, 5);
        let (t1, t2) = (Tape::new(), Tape::new());
        let (b1, b2) = (s1.bind(&t1).unwrap(), s2.bind(&t2).unwrap());
        let o1 = mgcn_forward(&t1, &b1, &toy_graph()).unwrap();
        let o2 = mgcn_forward(&t2, &b2, &toy_graph()).unwrap();
        for (&a, &b) in o1.all.iter().zip(o2.all.iter()) {
            assert_eq!(&*t1.value(a), &*t2.value(b));
        }
    }
}

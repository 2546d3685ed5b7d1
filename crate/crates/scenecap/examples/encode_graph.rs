//! Encode one hand-built scene graph with both encoders: the
//! symbol-only GCN (sentence side) and the RoI-fused MGCN (image side).
//! Prints the derived edge list and the embedding layout.
//!
//!     cargo run --example encode_graph

use scenecap::gcn::{self, GcnConfig};
use scenecap::graph::{ObjectNode, RelationshipEdge, SceneGraph};
use scenecap::mgcn::{self, MgcnConfig};
use scenecap::params::ParamStore;
use scenecap::rng::SeededRng;
use scenecap::tensor::Tape;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> scenecap::Result<()> {
    // "helmeted man riding bike": man(0) -riding-> bike(1), man has one
    // attribute. Symbol ids index a small made-up symbol table.
    let mut graph = SceneGraph {
        objects: vec![
            ObjectNode { label_id: 0, attribute_ids: vec![3], roi_feature: None },
            ObjectNode { label_id: 1, attribute_ids: vec![], roi_feature: None },
        ],
        relationships: vec![RelationshipEdge {
            subject_index: 0,
            object_index: 1,
            predicate_id: 2,
            roi_feature: None,
        }],
    };

    println!("derived edges:");
    for (from, to) in graph.derived_edges() {
        println!("  {from} -> {to}");
    }

    let (dim, symbols, feat_dim) = (8, 4, 6);
    let mut rng = SeededRng::new(42);
    let mut store = ParamStore::new();
    gcn::init_gcn(&mut store, &mut rng, &GcnConfig { dim, symbols });
    mgcn::init_mgcn(&mut store, &mut rng, &MgcnConfig { dim, symbols, feature_dim: feat_dim });

    let tape = Tape::new();
    let bound = store.bind(&tape)?;
    let out = gcn::gcn_forward(&tape, &bound, &graph)?;
    println!(
        "\nGCN: {} object, {} relationship, {} attribute embeddings ({} total, each length {dim})",
        out.x_objects.len(),
        out.x_relationships.len(),
        out.x_attributes.len(),
        out.all.len()
    );
    for (i, &x) in out.x_objects.iter().enumerate() {
        println!("  |x_o[{i}]| = {:.4}", norm(&tape.value(x)));
    }

    // The image-side graph carries an RoI feature per node; attribute
    // nodes borrow the feature of their owning object.
    let mut feat_rng = SeededRng::new(7);
    let mut feat = |n: usize| Some((0..n).map(|_| feat_rng.gaussian_scaled(0.5)).collect());
    for o in &mut graph.objects {
        o.roi_feature = feat(feat_dim);
    }
    for r in &mut graph.relationships {
        r.roi_feature = feat(feat_dim);
    }

    let out = mgcn::mgcn_forward(&tape, &bound, &graph)?;
    println!("\nMGCN over the same graph with {feat_dim}-dim RoI features:");
    for (i, &x) in out.all.iter().enumerate() {
        println!("  |u[{i}]| = {:.4}", norm(&tape.value(x)));
    }
    Ok(())
}

//! Scene-graph data model and validation.
//!
//! A scene graph is objects (with attribute lists) plus directed
//! subject-predicate-object relationship triplets. Attribute ownership
//! induces an edge object -> attribute; a triplet <o_i - r_ij - o_j>
//! induces edges o_i -> r_ij and r_ij -> o_j. Image-side graphs
//! additionally carry per-node RoI feature vectors.

use serde::{Deserialize, Serialize};

pub const DEFAULT_FEATURE_DIM: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub label_id: u32,
    pub attribute_ids: Vec<u32>,
    /// RoI feature vector (image graphs only).
    pub roi_feature: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationshipEdge {
    pub subject_index: usize,
    pub object_index: usize,
    pub predicate_id: u32,
    pub roi_feature: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<ObjectNode>,
    pub relationships: Vec<RelationshipEdge>,
}

/// A single validation failure; violations are data, not errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl SceneGraph {
    /// Relationship indices where object `i` is the subject, paired with
    /// the other end. Drives the subject-role sum of the object
    /// embedding.
    pub fn subject_roles(&self, i: usize) -> Vec<(usize, usize)> {
        self.relationships
            .iter()
            .enumerate()
            .filter(|(_, r)| r.subject_index == i)
            .map(|(ri, r)| (ri, r.object_index))
            .collect()
    }

    /// Relationship indices where object `i` is the object of the
    /// triplet, paired with the subject end.
    pub fn object_roles(&self, i: usize) -> Vec<(usize, usize)> {
        self.relationships
            .iter()
            .enumerate()
            .filter(|(_, r)| r.object_index == i)
            .map(|(ri, r)| (ri, r.subject_index))
            .collect()
    }

    /// Derived edge list as (from, to) over node labels
    /// `obj(i)`, `rel(k)`, `attr(i,l)`; used by the edge-rule tests.
    pub fn derived_edges(&self) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        for (i, o) in self.objects.iter().enumerate() {
            for l in 0..o.attribute_ids.len() {
                edges.push((format!("obj({i})"), format!("attr({i},{l})")));
            }
        }
        for (k, r) in self.relationships.iter().enumerate() {
            edges.push((format!("obj({})", r.subject_index), format!("rel({k})")));
            edges.push((format!("rel({k})"), format!("obj({})", r.object_index)));
        }
        edges
    }

    /// Check index ranges, feature dimensions, and vocabulary-id bounds.
    /// Returns every violation found.
    pub fn validate(&self, feature_dim: usize, vocab_size: Option<usize>) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.objects.len();
        let in_vocab = |id: u32| vocab_size.map_or(true, |v| (id as usize) < v);
        for (i, o) in self.objects.iter().enumerate() {
            if !in_vocab(o.label_id) {
                out.push(Violation(format!(
                    "object {i}: label id {} out of vocabulary",
                    o.label_id
                )));
            }
            for (l, &a) in o.attribute_ids.iter().enumerate() {
                if !in_vocab(a) {
                    out.push(Violation(format!(
                        "object {i} attribute {l}: id {a} out of vocabulary"
                    )));
                }
            }
            if let Some(f) = &o.roi_feature {
                if f.len() != feature_dim {
                    out.push(Violation(format!(
                        "object {i}: roi feature has length {} but configured dim is {feature_dim}",
                        f.len()
                    )));
                }
            }
        }
        for (k, r) in self.relationships.iter().enumerate() {
            if r.subject_index >= n || r.object_index >= n {
                out.push(Violation(format!(
                    "relationship {k}: subject/object index out of range ({} or {} >= {n})",
                    r.subject_index, r.object_index
                )));
            }
            if !in_vocab(r.predicate_id) {
                out.push(Violation(format!(
                    "relationship {k}: predicate id {} out of vocabulary",
                    r.predicate_id
                )));
            }
            if let Some(f) = &r.roi_feature {
                if f.len() != feature_dim {
                    out.push(Violation(format!(
                        "relationship {k}: roi feature has length {} but configured dim is {feature_dim}",
                        f.len()
                    )));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(label: u32, attrs: Vec<u32>) -> ObjectNode {
        ObjectNode {
            label_id: label,
            attribute_ids: attrs,
            roi_feature: None,
        }
    }

    fn rel(s: usize, p: u32, o: usize) -> RelationshipEdge {
        RelationshipEdge {
            subject_index: s,
            object_index: o,
            predicate_id: p,
            roi_feature: None,
        }
    }

    #[test]
    fn well_formed_graph_is_ok() {
        let g = SceneGraph {
            objects: vec![obj(0, vec![2]), obj(1, vec![])],
            relationships: vec![rel(0, 3, 1)],
        };
        assert!(g.validate(DEFAULT_FEATURE_DIM, Some(10)).is_empty());
    }

    #[test]
    fn out_of_range_index_is_reported() {
        let g = SceneGraph {
            objects: vec![obj(0, vec![]), obj(1, vec![]), obj(2, vec![])],
            relationships: vec![rel(7, 0, 1)],
        };
        let v = g.validate(DEFAULT_FEATURE_DIM, None);
        assert_eq!(v.len(), 1);
        assert!(v[0].0.contains("out of range"));
    }

    #[test]
    fn wrong_feature_dim_is_reported() {
        let g = SceneGraph {
            objects: vec![ObjectNode {
                label_id: 0,
                attribute_ids: vec![],
                roi_feature: Some(vec![0.0; 100]),
            }],
            relationships: vec![],
        };
        let v = g.validate(2048, None);
        assert_eq!(v.len(), 1);
        assert!(v[0].0.contains("length 100"));
    }

    #[test]
    fn edge_rule_per_relationship_and_attribute() {
        let g = SceneGraph {
            objects: vec![obj(0, vec![5]), obj(1, vec![])],
            relationships: vec![rel(0, 4, 1)],
        };
        let edges = g.derived_edges();
        assert_eq!(
            edges,
            vec![
                ("obj(0)".into(), "attr(0,0)".into()),
                ("obj(0)".into(), "rel(0)".into()),
                ("rel(0)".into(), "obj(1)".into()),
            ]
        );
    }

    #[test]
    fn adjacency_matches_relationships() {
        let g = SceneGraph {
            objects: vec![obj(0, vec![]), obj(1, vec![]), obj(2, vec![])],
            relationships: vec![rel(0, 0, 1), rel(2, 1, 0), rel(0, 2, 2)],
        };
        assert_eq!(g.subject_roles(0), vec![(0, 1), (2, 2)]);
        assert_eq!(g.object_roles(0), vec![(1, 2)]);
        assert_eq!(g.subject_roles(1), vec![]);
    }

    #[test]
    fn self_loops_are_accepted() {
        let g = SceneGraph {
            objects: vec![obj(0, vec![])],
            relationships: vec![rel(0, 0, 0)],
        };
        assert!(g.validate(DEFAULT_FEATURE_DIM, None).is_empty());
        // A self-loop shows up in both role sets.
        assert_eq!(g.subject_roles(0), vec![(0, 0)]);
        assert_eq!(g.object_roles(0), vec![(0, 0)]);
    }
}

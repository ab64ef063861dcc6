//! Attributed graphs, their files, and single-node injection views.

mod inject;
mod io;
mod normalize;
mod ops;

use std::fmt;
use std::str::FromStr;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use inject::{inject_node, validate_plan, InjectionPlan, PerturbedView};
pub use io::{load_graph, load_graph_dir, write_graph, write_graph_dir, GraphFiles};
pub use normalize::{
    normalize_adjacency, normalize_graph_adjacency, AdjacencyPattern, NormalizedAdjacencyOp,
};
pub use ops::{
    attribute_bounds, average_degree, candidate_set, largest_connected_component, split_nodes,
    within_two_hops, AttributeBounds,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Continuous,
    Discrete,
}

impl AttrKind {
    pub fn file_tag(self) -> &'static str {
        match self {
            AttrKind::Continuous => "cont",
            AttrKind::Discrete => "disc",
        }
    }
}

impl FromStr for AttrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cont" | "continuous" => Ok(AttrKind::Continuous),
            "disc" | "discrete" => Ok(AttrKind::Discrete),
            other => Err(Error::Parse {
                location: "attribute kind".into(),
                message: format!("unknown kind {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse {
                location: "split".into(),
                message: format!("unknown split tag {other:?}"),
            }),
        }
    }
}

/// Undirected attributed graph with labels and a train/val/test split.
///
/// Adjacency is stored as sorted neighbor lists in CSR form. It is always
/// symmetric, has no self-loops and no duplicate edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    attributes: Tensor,
    labels: Vec<usize>,
    classes: usize,
    attr_kind: AttrKind,
    splits: Vec<Split>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Edges are symmetrized,
    /// duplicates collapse and self-loops are dropped. All nodes start in the
    /// training split.
    pub fn new(
        edges: &[(usize, usize)],
        attributes: Tensor,
        labels: Vec<usize>,
        classes: usize,
        attr_kind: AttrKind,
    ) -> Result<Self> {
        let n = attributes.rows();
        if labels.len() != n {
            return Err(Error::shape(
                "graph",
                format!("{} labels for {n} attribute rows", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if attr_kind == AttrKind::Discrete {
            for r in 0..n {
                if let Some(&value) = attributes.row(r).iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::NonBinaryAttribute { row: r, value });
                }
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut nbrs in adj {
            nbrs.sort_unstable();
            nbrs.dedup();
            indices.extend(nbrs);
            indptr.push(indices.len());
        }
        Ok(Graph {
            indptr,
            indices,
            attributes,
            labels,
            classes,
            attr_kind,
            splits: vec![Split::Train; n],
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.attributes.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn attr_kind(&self) -> AttrKind {
        self.attr_kind
    }

    pub fn attributes(&self) -> &Tensor {
        &self.attributes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.indptr[v + 1] - self.indptr[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn set_splits(&mut self, splits: Vec<Split>) -> Result<()> {
        if splits.len() != self.num_nodes() {
            return Err(Error::shape(
                "splits",
                format!("{} tags for {} nodes", splits.len(), self.num_nodes()),
            ));
        }
        self.splits = splits;
        Ok(())
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.splits[v] == split)
            .collect()
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes() {
            return Err(Error::NodeOutOfRange {
                id: v,
                n: self.num_nodes(),
            });
        }
        Ok(())
    }

    /// FNV-1a (64-bit) over the canonical byte serialization described in
    /// the README: counts, kind, CSR arrays, attribute bits, labels, splits.
    pub fn checksum(&self) -> u64 {
        let mut h = FnvHasher::default();
        let mut put = |x: u64| h.write(&x.to_le_bytes());
        put(self.num_nodes() as u64);
        put(self.num_features() as u64);
        put(self.classes as u64);
        put(match self.attr_kind {
            AttrKind::Continuous => 0,
            AttrKind::Discrete => 1,
        });
        for &p in &self.indptr {
            put(p as u64);
        }
        for &i in &self.indices {
            put(i as u64);
        }
        for &a in self.attributes.data() {
            put(a.to_bits());
        }
        for &y in &self.labels {
            put(y as u64);
        }
        let codes: Vec<u8> = self.splits.iter().map(|s| s.code()).collect();
        h.write(&codes);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes(edges: &[(usize, usize)]) -> Result<Graph> {
        Graph::new(
            edges,
            Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            vec![0, 1],
            2,
            AttrKind::Continuous,
        )
    }

    #[test]
    fn single_edge_is_symmetrized() {
        let g = two_nodes(&[(0, 1)]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn duplicate_directions_collapse() {
        assert_eq!(two_nodes(&[(0, 1), (1, 0), (0, 1)]).unwrap(), two_nodes(&[(0, 1)]).unwrap());
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = two_nodes(&[(0, 0)]).unwrap();
        assert_eq!(g.degree(0), 0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(two_nodes(&[(0, 2)]), Err(Error::NodeOutOfRange { id: 2, n: 2 })));
        let bad_label = Graph::new(&[], Tensor::zeros(1, 1), vec![2], 2, AttrKind::Continuous);
        assert!(matches!(bad_label, Err(Error::LabelOutOfRange { label: 2, .. })));
        let bad_attr = Graph::new(
            &[],
            Tensor::row_vector(vec![0.5]),
            vec![0],
            1,
            AttrKind::Discrete,
        );
        assert!(matches!(bad_attr, Err(Error::NonBinaryAttribute { row: 0, .. })));
    }

    #[test]
    fn fnv_reference_vector() {
        let mut h = FnvHasher::default();
        h.write(b"a");
        assert_eq!(h.finish(), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn checksum_tracks_content() {
        let a = two_nodes(&[(0, 1)]).unwrap();
        let b = two_nodes(&[]).unwrap();
        assert_eq!(a.checksum(), a.clone().checksum());
        assert_ne!(a.checksum(), b.checksum());
    }
}

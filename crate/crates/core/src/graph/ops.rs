use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{AttrKind, Graph, Split};

/// Box constraints on injected attributes, plus the nonzero budget for
/// binary attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub l0_budget: Option<usize>,
}

impl AttributeBounds {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        a.len() == self.lo.len()
            && a
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }
}

/// Induced subgraph on the largest connected component. Ties go to the
/// component holding the smallest node id; surviving nodes keep their
/// relative order.
pub fn largest_connected_component(g: &Graph) -> Graph {
    let n = g.num_nodes();
    let mut comp = vec![usize::MAX; n];
    let mut best = (0usize, 0usize);
    let mut queue = VecDeque::new();
    let mut next_id = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        comp[s] = id;
        queue.push_back(s);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in g.neighbors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    queue.push_back(v);
                }
            }
        }
        if size > best.1 {
            best = (id, size);
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&v| comp[v] == best.0).collect();
    induced_subgraph(g, &keep)
}

fn induced_subgraph(g: &Graph, keep: &[usize]) -> Graph {
    let mut remap = vec![usize::MAX; g.num_nodes()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let edges: Vec<(usize, usize)> = g
        .edges()
        .filter(|&(u, v)| remap[u] != usize::MAX && remap[v] != usize::MAX)
        .map(|(u, v)| (remap[u], remap[v]))
        .collect();
    let attributes = g.attributes().gather_rows(keep);
    let labels = keep.iter().map(|&v| g.label(v)).collect();
    let mut sub = Graph::new(&edges, attributes, labels, g.num_classes(), g.attr_kind())
        .expect("induced subgraph of a valid graph is valid");
    sub.set_splits(keep.iter().map(|&v| g.splits()[v]).collect())
        .expect("one split per kept node");
    sub
}

/// Sorted, deduplicated union of the targets and their one-hop neighbors.
pub fn candidate_set(g: &Graph, targets: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &t in targets {
        g.check_node(t)?;
        out.push(t);
        out.extend_from_slice(g.neighbors(t));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn attribute_bounds(g: &Graph) -> AttributeBounds {
    let x = g.attributes();
    let d = x.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in 0..x.rows() {
        for (j, &v) in x.row(r).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let l0_budget = match g.attr_kind() {
        AttrKind::Continuous => None,
        AttrKind::Discrete => {
            let total: usize = (0..x.rows())
                .map(|r| x.row(r).iter().filter(|&&v| v != 0.0).count())
                .sum();
            let mean = total as f64 / x.rows().max(1) as f64;
            Some((mean.round() as usize).max(1))
        }
    };
    AttributeBounds { lo, hi, l0_budget }
}

/// Tags 20% of nodes as test, then 20% of the remainder as validation, the
/// rest as training, using a seeded shuffle.
pub fn split_nodes(g: &Graph, seed: u64) -> Graph {
    let n = g.num_nodes();
    let n_test = (n as f64 * 0.2).round() as usize;
    let n_val = ((n - n_test) as f64 * 0.2).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; n];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_test {
            splits[v] = Split::Test;
        } else if rank < n_test + n_val {
            splits[v] = Split::Val;
        }
    }
    let mut out = g.clone();
    out.set_splits(splits).expect("one tag per node");
    out
}

/// Mean number of neighbors per node.
pub fn average_degree(g: &Graph) -> f64 {
    2.0 * g.num_edges() as f64 / g.num_nodes().max(1) as f64
}

/// True when `u` and `v` are at most two hops apart.
pub fn within_two_hops(g: &Graph, u: usize, v: usize) -> bool {
    if u == v || g.has_edge(u, v) {
        return true;
    }
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(
            edges,
            Tensor::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            vec![0; n],
            1,
            AttrKind::Continuous,
        )
        .unwrap()
    }

    #[test]
    fn lcc_keeps_larger_component() {
        let g = graph(5, &[(0, 1), (3, 4), (2, 4)]);
        let lcc = largest_connected_component(&g);
        assert_eq!(lcc.num_nodes(), 3);
        assert_eq!(lcc.attributes().data(), &[2.0, 3.0, 4.0]);
        assert_eq!(lcc.edges().collect::<Vec<_>>(), vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn lcc_of_connected_graph_is_identity() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(largest_connected_component(&g), g);
    }

    /// Exhaustive over all 64 edge sets on 4 nodes: the kept component is
    /// the largest and, among ties, the one holding the smallest id.
    #[test]
    fn lcc_tie_break_exhaustive() {
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for mask in 0..64u32 {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &e)| e)
                .collect();
            let g = graph(4, &edges);
            // brute-force components via union-find
            let mut parent: Vec<usize> = (0..4).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                if p[x] != x {
                    let r = find(p, p[x]);
                    p[x] = r;
                }
                p[x]
            }
            for &(u, v) in &edges {
                let (a, b) = (find(&mut parent, u), find(&mut parent, v));
                parent[a.max(b)] = a.min(b);
            }
            let roots: Vec<usize> = (0..4).map(|v| find(&mut parent, v)).collect();
            let size = |r: usize| roots.iter().filter(|&&x| x == r).count();
            let best_root = (0..4)
                .filter(|&r| roots[r] == r)
                .max_by(|&a, &b| size(a).cmp(&size(b)).then(b.cmp(&a)))
                .unwrap();
            let expected: Vec<f64> = (0..4)
                .filter(|&v| roots[v] == best_root)
                .map(|v| v as f64)
                .collect();
            let lcc = largest_connected_component(&g);
            assert_eq!(lcc.attributes().data(), expected.as_slice(), "mask {mask}");
        }
    }

    #[test]
    fn candidates() {
        let g = graph(5, &[(0, 3), (0, 1), (2, 3)]);
        assert_eq!(candidate_set(&g, &[0]).unwrap(), vec![0, 1, 3]);
        assert_eq!(candidate_set(&g, &[4]).unwrap(), vec![4]);
        assert_eq!(candidate_set(&g, &[0, 2]).unwrap(), vec![0, 1, 2, 3]);
        assert!(candidate_set(&g, &[9]).is_err());
    }

    #[test]
    fn bounds_continuous_and_discrete() {
        let g = Graph::new(
            &[],
            Tensor::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap(),
            vec![0, 0],
            1,
            AttrKind::Continuous,
        )
        .unwrap();
        let b = attribute_bounds(&g);
        assert_eq!((b.lo, b.hi, b.l0_budget), (vec![0.0, 0.0], vec![1.0, 2.0], None));

        let g = Graph::new(
            &[],
            Tensor::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]]).unwrap(),
            vec![0, 0],
            1,
            AttrKind::Discrete,
        )
        .unwrap();
        assert_eq!(attribute_bounds(&g).l0_budget, Some(3));

        let single = graph(1, &[]);
        let b = attribute_bounds(&single);
        assert_eq!(b.lo, b.hi);
        assert_eq!(b.lo, single.attributes().row(0));
    }

    #[test]
    fn split_counts_and_determinism() {
        let g = graph(100, &[]);
        let s = split_nodes(&g, 7);
        assert_eq!(s.nodes_in(Split::Train).len(), 64);
        assert_eq!(s.nodes_in(Split::Val).len(), 16);
        assert_eq!(s.nodes_in(Split::Test).len(), 20);
        assert_eq!(split_nodes(&g, 7).splits(), s.splits());
        assert_ne!(split_nodes(&g, 8).splits(), s.splits());
    }

    #[test]
    fn two_hop_check() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3)]);
        assert!(within_two_hops(&g, 0, 2));
        assert!(!within_two_hops(&g, 0, 3));
        assert!(!within_two_hops(&g, 0, 4));
    }
}

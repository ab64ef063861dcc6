//! Symmetric normalization `D^-1/2 (A + I) D^-1/2` for clean graphs and for
//! graphs carrying one injected node with (possibly soft) edge weights.

use std::sync::Arc;

use crate::autodiff::{CsrMatrix, CustomOp, SparsePattern, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Graph, PerturbedView};

/// Sparsity of `A + I`, optionally extended by an injected node `n` whose
/// row and column hold one slot per candidate.
///
/// Entry weights are 1 for base edges and self-loops and `e[j]` for the
/// slots between the injected node and candidate `j`. Degrees include the
/// self-loop, so the injected node has degree `1 + sum(e)` and candidate
/// `j` gains `e[j]`.
#[derive(Debug)]
pub struct AdjacencyPattern {
    sparse: Arc<SparsePattern>,
    entry_row: Vec<usize>,
    /// Degree of each node counting only weight-1 entries.
    base_degree: Vec<f64>,
    candidates: Vec<usize>,
    /// Value position of `(n, c_j)` and `(c_j, n)` for each candidate.
    inj_row_pos: Vec<usize>,
    inj_col_pos: Vec<usize>,
    injected: bool,
}

impl AdjacencyPattern {
    pub fn clean(g: &Graph) -> Self {
        Self::build(g, None)
    }

    /// Pattern for `g` plus an injected node allowed to attach to
    /// `candidates` (ascending, valid ids).
    pub fn with_injection(g: &Graph, candidates: &[usize]) -> Result<Self> {
        for w in candidates.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Precondition("candidates must be strictly ascending".into()));
            }
        }
        for &c in candidates {
            g.check_node(c)?;
        }
        Ok(Self::build(g, Some(candidates)))
    }

    fn build(g: &Graph, candidates: Option<&[usize]>) -> Self {
        let n = g.num_nodes();
        let total = n + usize::from(candidates.is_some());
        let cands = candidates.unwrap_or(&[]);
        let mut slot = vec![usize::MAX; n];
        for (j, &c) in cands.iter().enumerate() {
            slot[c] = j;
        }
        let mut indptr = Vec::with_capacity(total + 1);
        let mut indices = Vec::with_capacity(2 * g.num_edges() + total + 2 * cands.len());
        let mut entry_row = Vec::with_capacity(indices.capacity());
        let mut inj_col_pos = vec![0; cands.len()];
        let mut inj_row_pos = vec![0; cands.len()];
        let mut base_degree = Vec::with_capacity(total);
        indptr.push(0);
        for u in 0..n {
            let mut self_done = false;
            for &v in g.neighbors(u) {
                if !self_done && v > u {
                    indices.push(u);
                    self_done = true;
                }
                indices.push(v);
            }
            if !self_done {
                indices.push(u);
            }
            if slot[u] != usize::MAX {
                inj_col_pos[slot[u]] = indices.len();
                indices.push(n);
            }
            entry_row.resize(indices.len(), u);
            indptr.push(indices.len());
            base_degree.push(1.0 + g.degree(u) as f64);
        }
        if candidates.is_some() {
            for (j, &c) in cands.iter().enumerate() {
                inj_row_pos[j] = indices.len();
                indices.push(c);
            }
            indices.push(n);
            entry_row.resize(indices.len(), n);
            indptr.push(indices.len());
            base_degree.push(1.0);
        }
        AdjacencyPattern {
            sparse: Arc::new(SparsePattern {
                n_rows: total,
                n_cols: total,
                indptr,
                indices,
            }),
            entry_row,
            base_degree,
            candidates: cands.to_vec(),
            inj_row_pos,
            inj_col_pos,
            injected: candidates.is_some(),
        }
    }

    pub fn sparse(&self) -> &Arc<SparsePattern> {
        &self.sparse
    }

    pub fn num_nodes(&self) -> usize {
        self.sparse.n_rows
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn is_injected(&self) -> bool {
        self.injected
    }

    fn degrees(&self, e: &[f64]) -> Vec<f64> {
        let mut deg = self.base_degree.clone();
        if self.injected {
            let inj = deg.len() - 1;
            for (&c, &w) in self.candidates.iter().zip(e) {
                deg[c] += w;
                deg[inj] += w;
            }
        }
        deg
    }

    fn weights(&self, e: &[f64]) -> Vec<f64> {
        let mut w = vec![1.0; self.sparse.nnz()];
        for (j, &ej) in e.iter().enumerate() {
            w[self.inj_row_pos[j]] = ej;
            w[self.inj_col_pos[j]] = ej;
        }
        w
    }

    /// Normalized values for the stored entries given injected edge
    /// weights `e` (ignored for clean patterns).
    pub fn normalized_values(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.candidates.len() {
            return Err(Error::shape(
                "normalize_adjacency",
                format!("{} edge weights for {} candidates", e.len(), self.candidates.len()),
            ));
        }
        let deg = self.degrees(e);
        let w = self.weights(e);
        Ok((0..self.sparse.nnz())
            .map(|k| w[k] / (deg[self.entry_row[k]] * deg[self.sparse.indices[k]]).sqrt())
            .collect())
    }

    pub fn normalized(&self, e: &[f64]) -> Result<CsrMatrix> {
        CsrMatrix::new(Arc::clone(&self.sparse), self.normalized_values(e)?)
    }
}

/// Differentiable map from injected edge weights (`1 x m`) to the stored
/// normalized values (`1 x nnz`).
pub struct NormalizedAdjacencyOp {
    pub pattern: Arc<AdjacencyPattern>,
}

impl CustomOp for NormalizedAdjacencyOp {
    fn name(&self) -> &'static str {
        "normalized_adjacency"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let p = &self.pattern;
        if !p.injected {
            return vec![None];
        }
        let e = inputs[0].data();
        let g = grad.data();
        let deg = p.degrees(e);
        let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let w = p.weights(e);
        let idx = &p.sparse.indices;

        // d loss / d s_i, accumulated over entries where i is row or column.
        let mut ds = vec![0.0; deg.len()];
        for k in 0..idx.len() {
            let (r, c) = (p.entry_row[k], idx[k]);
            let gw = g[k] * w[k];
            ds[r] += gw * s[c];
            ds[c] += gw * s[r];
        }
        let dsdd = |i: usize| -0.5 * s[i] / deg[i];
        let inj = deg.len() - 1;
        let ge: Vec<f64> = p
            .candidates
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let direct = (g[p.inj_row_pos[j]] + g[p.inj_col_pos[j]]) * s[inj] * s[c];
                direct + ds[inj] * dsdd(inj) + ds[c] * dsdd(c)
            })
            .collect();
        vec![Some(Tensor::row_vector(ge))]
    }
}

/// Normalized adjacency of a graph without injection.
pub fn normalize_graph_adjacency(g: &Graph) -> CsrMatrix {
    AdjacencyPattern::clean(g)
        .normalized(&[])
        .expect("clean pattern takes no edge weights")
}

/// Normalized adjacency of an injection view, including the injected node.
pub fn normalize_adjacency(view: &PerturbedView<'_>) -> Result<CsrMatrix> {
    let pattern = AdjacencyPattern::with_injection(view.base(), &view.plan().candidates)?;
    pattern.normalized(&view.plan().edge_weights)
}

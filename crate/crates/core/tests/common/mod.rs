//! Fixtures and oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gnia_core::autodiff::{CsrMatrix, Tensor};
use gnia_core::graph::{attribute_bounds, split_nodes, AttrKind, AttributeBounds, Graph, InjectionPlan, Split};
use gnia_core::models::{argmax, train_surrogate, ModelKind, SurrogateConfig, SurrogateModel};
use gnia_core::synth::{stochastic_block_model, SbmConfig};

pub fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_graph(n: usize, d: usize, classes: usize, p: f64, kind: AttrKind, rng: &mut ChaCha8Rng) -> Graph {
    let edges = erdos_renyi(n, p, rng);
    let x = match kind {
        AttrKind::Continuous => Tensor::uniform(n, d, -1.0, 1.0, rng),
        AttrKind::Discrete => {
            let data = (0..n * d).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
            Tensor::from_vec(n, d, data).unwrap()
        }
    };
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Graph::new(&edges, x, labels, classes, kind).unwrap()
}

/// Same graph with labels replaced.
pub fn relabel(g: &Graph, labels: Vec<usize>) -> Graph {
    let edges: Vec<_> = g.edges().collect();
    Graph::new(&edges, g.attributes().clone(), labels, g.num_classes(), g.attr_kind()).unwrap()
}

/// Dense `D^{-1/2} (A + I) D^{-1/2}` including an optional injected node.
pub fn dense_normalized(g: &Graph, plan: Option<&InjectionPlan>) -> Vec<Vec<f64>> {
    let n = g.num_nodes() + usize::from(plan.is_some());
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (u, v) in g.edges() {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    if let Some(p) = plan {
        let inj = n - 1;
        for (&c, &w) in p.candidates.iter().zip(&p.edge_weights) {
            a[inj][c] = w;
            a[c][inj] = w;
        }
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

pub fn dense_matmul(a: &[Vec<f64>], b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.len(), b.cols());
    for (i, row) in a.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if v != 0.0 {
                for j in 0..b.cols() {
                    out.set(i, j, out.get(i, j) + v * b.get(k, j));
                }
            }
        }
    }
    out
}

/// Dense reference forward of a GCN or APPNP model.
pub fn dense_forward(model: &SurrogateModel, x: &Tensor, a: &[Vec<f64>]) -> Tensor {
    let p = model.params();
    let xw0 = x.matmul(&p.w0).unwrap();
    let logits = match p.kind {
        ModelKind::Gcn => {
            let h = dense_matmul(a, &xw0).map(|v| v.max(0.0));
            dense_matmul(a, &h.matmul(&p.w1).unwrap())
        }
        ModelKind::Appnp => {
            let h = xw0.map(|v| v.max(0.0)).matmul(&p.w1).unwrap();
            let mut z = h.clone();
            for _ in 0..p.steps {
                let mut next = dense_matmul(a, &z).scale(1.0 - p.alpha);
                next.add_assign(&h.scale(p.alpha));
                z = next;
            }
            z
        }
    };
    logits.row_softmax()
}

pub fn csr_to_dense(m: &CsrMatrix) -> Vec<Vec<f64>> {
    let t = m.to_dense();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Normwise relative error `|a - b| / max(|a|, |b|)`, absolute below 1e-10.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den < 1e-10 {
        num
    } else {
        num / den
    }
}

pub struct Suite {
    pub g: Graph,
    pub gcn: SurrogateModel,
    pub bounds: AttributeBounds,
    pub test_accuracy: f64,
}

pub fn sbm_config(seed: u64) -> SbmConfig {
    SbmConfig {
        seed,
        ..SbmConfig::default()
    }
}

pub fn accuracy(model: &SurrogateModel, g: &Graph, nodes: &[usize]) -> f64 {
    let hits = nodes
        .iter()
        .filter(|&&v| argmax(model.clean_probs().row(v)) == g.label(v))
        .count();
    hits as f64 / nodes.len().max(1) as f64
}

pub fn train_model(g: &Graph, kind: ModelKind, seed: u64) -> SurrogateModel {
    let cfg = SurrogateConfig {
        kind,
        seed,
        ..SurrogateConfig::default()
    };
    train_surrogate(g, &cfg).unwrap().0
}

/// 200-node two-class SBM split 64/16/20 with a trained GCN.
pub fn sbm_suite(seed: u64) -> Suite {
    let g = split_nodes(&stochastic_block_model(&sbm_config(seed)).unwrap(), seed);
    let gcn = train_model(&g, ModelKind::Gcn, seed);
    let bounds = attribute_bounds(&g);
    let test_accuracy = accuracy(&gcn, &g, &g.nodes_in(Split::Test));
    Suite {
        g,
        gcn,
        bounds,
        test_accuracy,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

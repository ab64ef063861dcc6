//! Stochastic block model graphs with class-correlated attributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{AttrKind, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: usize,
    pub attr_kind: AttrKind,
    /// Continuous: shift of the class mean on the class's own features.
    /// Discrete: on-probability of the class's own features.
    pub signal: f64,
    /// Continuous: noise standard deviation. Discrete: on-probability of
    /// every other feature.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 200,
            classes: 2,
            p_in: 0.05,
            p_out: 0.01,
            features: 16,
            attr_kind: AttrKind::Continuous,
            signal: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Samples an SBM graph. Node `v` belongs to block `v % classes`; features
/// are partitioned into contiguous per-class groups and a node's own group
/// carries the class signal.
pub fn stochastic_block_model(cfg: &SbmConfig) -> Result<Graph> {
    if cfg.classes == 0 || cfg.nodes == 0 {
        return Err(Error::Config("SBM needs at least one node and one class".into()));
    }
    for p in [cfg.p_in, cfg.p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..cfg.nodes).map(|v| v % cfg.classes).collect();
    let mut edges = Vec::new();
    for u in 0..cfg.nodes {
        for v in (u + 1)..cfg.nodes {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let per_class = (cfg.features / cfg.classes).max(1);
    let owns = |class: usize, f: usize| f / per_class == class;
    let mut data = Vec::with_capacity(cfg.nodes * cfg.features);
    match cfg.attr_kind {
        AttrKind::Continuous => {
            let normal = Normal::new(0.0, cfg.noise)
                .map_err(|e| Error::Config(format!("noise: {e}")))?;
            for &y in &labels {
                for f in 0..cfg.features {
                    let mean = if owns(y, f) { cfg.signal } else { 0.0 };
                    data.push(mean + normal.sample(&mut rng));
                }
            }
        }
        AttrKind::Discrete => {
            for &y in &labels {
                for f in 0..cfg.features {
                    let p = if owns(y, f) { cfg.signal } else { cfg.noise };
                    data.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                }
            }
        }
    }
    let attributes = Tensor::from_vec(cfg.nodes, cfg.features, data)?;
    Graph::new(&edges, attributes, labels, cfg.classes, cfg.attr_kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_is_deterministic_and_assortative() {
        let cfg = SbmConfig::default();
        let a = stochastic_block_model(&cfg).unwrap();
        assert_eq!(a, stochastic_block_model(&cfg).unwrap());
        let within = a.edges().filter(|&(u, v)| a.label(u) == a.label(v)).count();
        assert!(within as f64 > 0.8 * a.num_edges() as f64);
        let disc = stochastic_block_model(&SbmConfig {
            attr_kind: AttrKind::Discrete,
            signal: 0.6,
            noise: 0.1,
            ..cfg
        })
        .unwrap();
        assert!(disc.attributes().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

//! Browser bindings. Every export takes and returns plain numbers and JSON
//! strings so the same functions run under native tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use gnia_core::attack::{opti_attack, AttackProblem, OptiConfig};
use gnia_core::eval::{most_attr_attack, pref_edge_attack, random_attack};
use gnia_core::graph::{attribute_bounds, inject_node, split_nodes, AttributeBounds, Graph, InjectionPlan, Split};
use gnia_core::gumbel::{gumbel_topk_with_noise, harden, TopKNoise};
use gnia_core::models::{argmax, train_surrogate, SurrogateConfig, SurrogateModel};
use gnia_core::synth::{stochastic_block_model, SbmConfig};

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TopK {
    noise: Vec<Vec<f64>>,
    soft: Vec<f64>,
    mass: f64,
    hard: Vec<f64>,
}

/// Relaxed and hardened Top-k selection of `scores` with seeded noise.
#[wasm_bindgen]
pub fn topk_relax(scores: Vec<f64>, k: usize, tau: f64, eps: f64, seed: u32) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    if k == 0 || k > scores.len() {
        return Err(format!("k must be in 1..={}", scores.len()));
    }
    let noise = TopKNoise::sample(scores.len(), k, &mut rng);
    let soft = gumbel_topk_with_noise(&scores, tau, eps, &noise).map_err(|e| e.to_string())?;
    let hard = harden(&soft, k);
    to_json(&TopK {
        noise: (0..k).map(|j| noise.round(j).to_vec()).collect(),
        mass: soft.iter().sum(),
        soft,
        hard,
    })
}

#[derive(Serialize)]
struct NodeView {
    label: usize,
    prediction: usize,
    split: Split,
}

#[derive(Serialize)]
struct GraphView {
    nodes: Vec<NodeView>,
    edges: Vec<(usize, usize)>,
    test_accuracy: f64,
    test_targets: Vec<usize>,
}

#[derive(Serialize)]
struct AttackView {
    method: String,
    target: usize,
    label: usize,
    clean_probs: Vec<f64>,
    attacked_probs: Vec<f64>,
    success: bool,
    connected: Vec<usize>,
    attributes: Vec<f64>,
    wall_time: f64,
}

/// A seeded two-class SBM graph with a trained GCN, ready to attack.
#[wasm_bindgen]
pub struct Demo {
    graph: Graph,
    model: SurrogateModel,
    bounds: AttributeBounds,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, nodes: usize) -> Result<Demo, String> {
        let cfg = SbmConfig {
            nodes,
            seed: seed.into(),
            ..SbmConfig::default()
        };
        let g = stochastic_block_model(&cfg).map_err(|e| e.to_string())?;
        let graph = split_nodes(&g, seed.into());
        let (model, _) = train_surrogate(
            &graph,
            &SurrogateConfig {
                seed: seed.into(),
                ..SurrogateConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let bounds = attribute_bounds(&graph);
        Ok(Demo { graph, model, bounds })
    }

    /// Nodes with labels, clean predictions and splits, plus the edge list.
    pub fn graph(&self) -> Result<String, String> {
        let g = &self.graph;
        let test = g.nodes_in(Split::Test);
        let correct = test.iter().filter(|&&v| self.model.clean_prediction(v) == g.label(v)).count();
        to_json(&GraphView {
            nodes: (0..g.num_nodes())
                .map(|v| NodeView {
                    label: g.label(v),
                    prediction: self.model.clean_prediction(v),
                    split: g.splits()[v],
                })
                .collect(),
            edges: g.edges().collect(),
            test_accuracy: correct as f64 / test.len().max(1) as f64,
            test_targets: test,
        })
    }

    /// Injects one node against `target` with `method` (opti, random,
    /// mostattr or prefedge) and an edge budget of `delta`.
    pub fn attack(&self, target: usize, method: &str, delta: usize, seed: u32) -> Result<String, String> {
        let err = |e: gnia_core::Error| e.to_string();
        let g = &self.graph;
        let problem = AttackProblem::new(g, &self.model, &self.bounds, &[target], delta).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
        let start = web_time();
        let plan: InjectionPlan = match method {
            "opti" => {
                let cfg = OptiConfig {
                    seed: seed.into(),
                    ..OptiConfig::default()
                };
                opti_attack(&problem, &cfg).map_err(err)?.plan
            }
            "random" => random_attack(&problem, &mut rng).map_err(err)?,
            "mostattr" => most_attr_attack(&problem, &mut rng).map_err(err)?,
            "prefedge" => pref_edge_attack(&problem, &mut rng).map_err(err)?,
            other => return Err(format!("unknown method {other:?}")),
        };
        let wall_time = web_time() - start;
        let view = inject_node(g, plan.clone()).map_err(err)?;
        let probs = self.model.predict(&view).map_err(err)?;
        let attacked = probs.row(target).to_vec();
        to_json(&AttackView {
            method: method.to_string(),
            target,
            label: g.label(target),
            clean_probs: self.model.clean_probs().row(target).to_vec(),
            success: argmax(&attacked) != g.label(target),
            attacked_probs: attacked,
            connected: plan.connected(),
            attributes: plan.attributes,
            wall_time,
        })
    }
}

/// Seconds from a monotonic clock; zero where none is reachable.
fn web_time() -> f64 {
    #[cfg(target_arch = "wasm32")]
    {
        js_sys_now() / 1000.0
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        use std::time::{SystemTime, UNIX_EPOCH};
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
}

#[cfg(target_arch = "wasm32")]
#[wasm_bindgen]
extern "C" {
    #[wasm_bindgen(js_namespace = Date, js_name = now)]
    fn js_sys_now() -> f64;
}

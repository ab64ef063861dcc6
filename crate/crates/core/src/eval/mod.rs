//! Baselines, target groups, budgets, metrics and scenario runs.

mod baselines;
mod harness;
mod report;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{within_two_hops, Graph};

pub use baselines::{
    group_runner_up, most_attr_attack, pref_edge_attack, random_attack, MostAttrAttacker, PrefEdgeAttacker,
    RandomAttacker,
};
pub use harness::{
    build_instances, read_records, run_scenario, write_manifest, write_records, AccessEvent, AccessLog, AttackRecord,
    Attacker, DeltaRule, GniaAttacker, OptiAttacker, Phase, RunInputs, RunManifest, Scenario, ScenarioKind, Timing,
    Victim, SCHEMA_VERSION, VICTIM_ARTIFACT,
};
pub use report::render_report;

/// Fraction of successful attacks. A group attack succeeds only when every
/// one of its targets is misclassified.
pub fn misclassification_rate<T: AsRef<[bool]>>(flags: &[T]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::Precondition("no attacks to score".into()));
    }
    let hits = flags
        .iter()
        .filter(|f| {
            let f = f.as_ref();
            !f.is_empty() && f.iter().all(|&s| s)
        })
        .count();
    Ok(hits as f64 / flags.len() as f64)
}

/// Edge budget for a target group: `max(1, floor(min(n_t * avg_degree,
/// m / 2)))`.
pub fn multi_target_delta(group_size: usize, avg_degree: f64, candidates: usize) -> usize {
    let raw = (group_size as f64 * avg_degree).min(0.5 * candidates as f64);
    (raw.floor() as usize).max(1)
}

/// Greedy packing of disjoint triples from `pool` whose members are
/// pairwise at most two hops apart.
///
/// Nodes are scanned in ascending id order, or in a seeded shuffled order
/// when `seed` is given. For each unused node the lexicographically
/// smallest valid pair of unused partners is taken.
pub fn build_target_groups(g: &Graph, pool: &[usize], seed: Option<u64>) -> Result<Vec<[usize; 3]>> {
    for &v in pool {
        g.check_node(v)?;
    }
    let members: BTreeSet<usize> = pool.iter().copied().collect();
    let mut order: Vec<usize> = members.iter().copied().collect();
    if let Some(s) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let mut used = BTreeSet::new();
    let mut groups = Vec::new();
    for &u in &order {
        if used.contains(&u) {
            continue;
        }
        let mut near = BTreeSet::new();
        for &a in g.neighbors(u) {
            near.insert(a);
            near.extend(g.neighbors(a).iter().copied());
        }
        let near: Vec<usize> = near
            .into_iter()
            .filter(|&v| v != u && members.contains(&v) && !used.contains(&v))
            .collect();
        'search: for (i, &v) in near.iter().enumerate() {
            for &w in &near[i + 1..] {
                if within_two_hops(g, v, w) {
                    let mut grp = [u, v, w];
                    grp.sort_unstable();
                    used.extend(grp);
                    groups.push(grp);
                    break 'search;
                }
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests;

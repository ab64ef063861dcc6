//! Scenario runs: attack every instance with the surrogate's view, then
//! score the hardened plans on the victim.

use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{evaluate_clean, evaluate_plan, opti_attack, AttackOutcome, AttackProblem, Evaluation, OptiConfig};
use crate::error::{Error, Result};
use crate::eval::{build_target_groups, misclassification_rate, multi_target_delta};
use crate::gnia::{gnia_infer, GniaParams};
use crate::graph::{average_degree, candidate_set, validate_plan, AttributeBounds, Graph, InjectionPlan};
use crate::models::{ModelKind, SurrogateModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Anything that turns an attack instance into a hardened plan. Attackers
/// only ever see the surrogate through [`AttackProblem`].
pub trait Attacker {
    fn name(&self) -> &str;
    /// `index` identifies the instance within a run so seeded attackers
    /// can draw from a per-instance stream.
    fn attack(&mut self, index: usize, problem: &AttackProblem<'_>) -> Result<AttackOutcome>;
}

fn instance_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Clone, Debug)]
pub struct OptiAttacker {
    pub config: OptiConfig,
}

impl Attacker for OptiAttacker {
    fn name(&self) -> &str {
        "opti"
    }

    fn attack(&mut self, index: usize, problem: &AttackProblem<'_>) -> Result<AttackOutcome> {
        let cfg = OptiConfig {
            seed: instance_seed(self.config.seed, index),
            ..self.config.clone()
        };
        opti_attack(problem, &cfg)
    }
}

#[derive(Clone, Debug)]
pub struct GniaAttacker {
    pub params: GniaParams,
    pub seed: u64,
}

impl Attacker for GniaAttacker {
    fn name(&self) -> &str {
        match self.params.ablation.label() {
            "full" => "gnia",
            "no_attr" => "gnia_no_attr",
            "no_edge" => "gnia_no_edge",
            "no_joint" => "gnia_no_joint",
            _ => "gnia_ablated",
        }
    }

    fn attack(&mut self, index: usize, problem: &AttackProblem<'_>) -> Result<AttackOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(self.seed, index));
        gnia_infer(&self.params, problem, &mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleTarget,
    MultiTarget,
    BlackBox,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_target" | "single" => Ok(ScenarioKind::SingleTarget),
            "multi_target" | "multi" => Ok(ScenarioKind::MultiTarget),
            "black_box" | "blackbox" => Ok(ScenarioKind::BlackBox),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Fixed(usize),
    /// [`multi_target_delta`] of the group size, average degree and
    /// candidate count.
    GroupDegree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub delta: DeltaRule,
    pub surrogate: ModelKind,
    pub victim: ModelKind,
}

impl Scenario {
    pub fn single_target(model: ModelKind) -> Self {
        Scenario {
            kind: ScenarioKind::SingleTarget,
            delta: DeltaRule::Fixed(1),
            surrogate: model,
            victim: model,
        }
    }

    pub fn multi_target(model: ModelKind) -> Self {
        Scenario {
            kind: ScenarioKind::MultiTarget,
            delta: DeltaRule::GroupDegree,
            surrogate: model,
            victim: model,
        }
    }

    pub fn black_box(surrogate: ModelKind, victim: ModelKind) -> Self {
        Scenario {
            kind: ScenarioKind::BlackBox,
            delta: DeltaRule::Fixed(1),
            surrogate,
            victim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let transfer = self.kind == ScenarioKind::BlackBox;
        if transfer == (self.surrogate == self.victim) {
            return Err(Error::Config(if transfer {
                "black-box scenarios need a victim of a different kind".into()
            } else {
                "white-box scenarios attack the surrogate itself".into()
            }));
        }
        if self.delta == DeltaRule::Fixed(0) {
            return Err(Error::Config("edge budget must be at least 1".into()));
        }
        Ok(())
    }

    pub fn delta_for(&self, g: &Graph, targets: &[usize]) -> Result<usize> {
        Ok(match self.delta {
            DeltaRule::Fixed(d) => d,
            DeltaRule::GroupDegree => {
                multi_target_delta(targets.len(), average_degree(g), candidate_set(g, targets)?.len())
            }
        })
    }
}

/// Attack instances drawn from `pool`: every node alone, or disjoint
/// groups of three for multi-target scenarios.
pub fn build_instances(g: &Graph, scenario: &Scenario, pool: &[usize]) -> Result<Vec<Vec<usize>>> {
    Ok(match scenario.kind {
        ScenarioKind::MultiTarget => build_target_groups(g, pool, None)?.into_iter().map(|t| t.to_vec()).collect(),
        _ => pool.iter().map(|&v| vec![v]).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Setup,
    Attack,
    Evaluate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub phase: Phase,
    pub artifact: String,
}

/// Records which artifacts (victim model, checkpoint files) were touched
/// in which phase of a run.
#[derive(Debug)]
pub struct AccessLog {
    phase: Mutex<Phase>,
    events: Mutex<Vec<AccessEvent>>,
}

impl Default for AccessLog {
    fn default() -> Self {
        AccessLog {
            phase: Mutex::new(Phase::Setup),
            events: Mutex::new(Vec::new()),
        }
    }
}

impl AccessLog {
    pub fn set_phase(&self, phase: Phase) {
        *self.phase.lock().expect("access log poisoned") = phase;
    }

    pub fn phase(&self) -> Phase {
        *self.phase.lock().expect("access log poisoned")
    }

    pub fn record(&self, artifact: impl Into<String>) {
        let phase = self.phase();
        self.events.lock().expect("access log poisoned").push(AccessEvent {
            phase,
            artifact: artifact.into(),
        });
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        self.events.lock().expect("access log poisoned").clone()
    }

    /// Accesses to artifacts whose name starts with `prefix` made while
    /// an attacker was running.
    pub fn attack_phase_accesses(&self, prefix: &str) -> usize {
        self.events()
            .iter()
            .filter(|e| e.phase == Phase::Attack && e.artifact.starts_with(prefix))
            .count()
    }
}

/// The model under attack. Every use is logged.
pub struct Victim<'a> {
    model: &'a SurrogateModel,
    log: &'a AccessLog,
}

pub const VICTIM_ARTIFACT: &str = "victim";

impl<'a> Victim<'a> {
    pub fn new(model: &'a SurrogateModel, log: &'a AccessLog) -> Self {
        Victim { model, log }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn evaluate(&self, g: &Graph, plan: &InjectionPlan, targets: &[usize]) -> Result<Evaluation> {
        self.log.record(format!("{VICTIM_ARTIFACT}:forward"));
        evaluate_plan(self.model, g, plan, targets)
    }

    pub fn evaluate_clean(&self, g: &Graph, targets: &[usize]) -> Result<Evaluation> {
        self.log.record(format!("{VICTIM_ARTIFACT}:clean"));
        evaluate_clean(self.model, g, targets)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub schema_version: u32,
    pub method: String,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub instance: usize,
    pub target_ids: Vec<usize>,
    pub delta: usize,
    /// All targets misclassified by the victim.
    pub success: bool,
    pub target_success: Vec<bool>,
    /// Victim margin loss under the plan.
    pub loss: f64,
    pub surrogate_loss: f64,
    pub wall_time: f64,
    /// FNV-1a of the plan's JSON encoding, hex.
    pub plan_digest: String,
    pub plan: InjectionPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_wall_time: f64,
    pub total_wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub method: String,
    pub scenario: Scenario,
    pub seed: u64,
    /// Graph checksum, hex.
    pub graph_digest: String,
    pub instances: usize,
    pub misclassification_rate: f64,
    pub clean_rate: f64,
    pub victim_accesses_during_attack: usize,
    pub config: serde_json::Value,
    /// Wall-clock figures; the only part of a manifest that varies
    /// between identical runs.
    pub timing: Timing,
}

fn digest_hex(bytes: &[u8]) -> String {
    let mut h = FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

pub struct RunInputs<'a> {
    pub graph: &'a Graph,
    pub surrogate: &'a SurrogateModel,
    pub victim: &'a Victim<'a>,
    pub log: &'a AccessLog,
    pub bounds: &'a AttributeBounds,
    pub scenario: Scenario,
    pub instances: &'a [Vec<usize>],
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Attacks every instance, scores the plans on the victim and returns the
/// run manifest with one record per instance.
pub fn run_scenario(inputs: &RunInputs<'_>, attacker: &mut dyn Attacker) -> Result<(RunManifest, Vec<AttackRecord>)> {
    let RunInputs {
        graph: g,
        surrogate,
        victim,
        log,
        bounds,
        scenario,
        instances,
        ..
    } = *inputs;
    scenario.validate()?;
    if surrogate.kind() != scenario.surrogate || victim.kind() != scenario.victim {
        return Err(Error::Config(format!(
            "scenario expects {} surrogate and {} victim, got {} and {}",
            scenario.surrogate,
            scenario.victim,
            surrogate.kind(),
            victim.kind()
        )));
    }
    if instances.is_empty() {
        return Err(Error::Precondition("no attack instances".into()));
    }
    let checksum = g.checksum();

    log.set_phase(Phase::Evaluate);
    let mut clean_flags = Vec::with_capacity(instances.len());
    for targets in instances {
        clean_flags.push(victim.evaluate_clean(g, targets)?.success);
    }

    let mut records = Vec::with_capacity(instances.len());
    for (i, targets) in instances.iter().enumerate() {
        let delta = scenario.delta_for(g, targets)?;
        let problem = AttackProblem::new(g, surrogate, bounds, targets, delta)?;
        log.set_phase(Phase::Attack);
        let outcome = attacker.attack(i, &problem);
        log.set_phase(Phase::Evaluate);
        let outcome = outcome?;
        validate_plan(&outcome.plan, g, bounds)?;
        let eval = victim.evaluate(g, &outcome.plan, targets)?;
        let plan_json = serde_json::to_vec(&outcome.plan)?;
        records.push(AttackRecord {
            schema_version: SCHEMA_VERSION,
            method: attacker.name().to_string(),
            scenario: scenario.kind,
            seed: inputs.seed,
            instance: i,
            target_ids: targets.clone(),
            delta,
            success: eval.all_success(),
            target_success: eval.success,
            loss: eval.loss,
            surrogate_loss: outcome.loss,
            wall_time: outcome.wall_time,
            plan_digest: digest_hex(&plan_json),
            plan: outcome.plan,
        });
    }
    log.set_phase(Phase::Setup);
    if g.checksum() != checksum {
        return Err(Error::GraphMismatch {
            expected: checksum,
            actual: g.checksum(),
        });
    }

    let flags: Vec<&[bool]> = records.iter().map(|r| r.target_success.as_slice()).collect();
    let total: f64 = records.iter().map(|r| r.wall_time).sum();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        method: attacker.name().to_string(),
        scenario,
        seed: inputs.seed,
        graph_digest: format!("{checksum:016x}"),
        instances: records.len(),
        misclassification_rate: misclassification_rate(&flags)?,
        clean_rate: misclassification_rate(&clean_flags)?,
        victim_accesses_during_attack: log.attack_phase_accesses(VICTIM_ARTIFACT),
        config: inputs.config.clone(),
        timing: Timing {
            mean_wall_time: total / records.len() as f64,
            total_wall_time: total,
        },
    };
    Ok((manifest, records))
}

pub fn write_records(path: &Path, records: &[AttackRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<AttackRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AttackRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                message: format!("unsupported schema version {}", rec.schema_version),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use gnia_core::attack::{AttackProblem, OptiConfig};
use gnia_core::eval::{
    build_instances, render_report, run_scenario, write_manifest, write_records, AttackRecord, Attacker,
    DeltaRule, GniaAttacker, MostAttrAttacker, OptiAttacker, PrefEdgeAttacker, RandomAttacker, RunInputs, RunManifest,
    Scenario, ScenarioKind, Victim,
};
use gnia_core::gnia::{gnia_train, gnia_tune, save_gnia, Ablation, GniaParams, GniaTrainConfig, GniaTrainReport, LR_GRID};
use gnia_core::graph::{attribute_bounds, largest_connected_component, split_nodes, write_graph_dir, AttrKind, Graph, Split};
use gnia_core::gumbel::TAU_GRID;
use gnia_core::models::{save_surrogate, train_surrogate, ModelKind, SurrogateConfig, SurrogateModel};
use gnia_core::synth::{stochastic_block_model, SbmConfig};

use crate::artifacts::Store;
use crate::{
    AblateArgs, AblationArg, AttackArgs, Cli, Command, EvalArgs, GniaCommand, GniaTrainArgs, GniaTrainOpts, Method,
    ModelArg, PrepArgs, ReportArgs, ScenarioArg, SynthArgs, TrainSurrogateArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let store = Store::new(cli.data_dir);
    match cli.command {
        Command::Synth(a) => synth(&store, a),
        Command::Prep(a) => prep(&store, a),
        Command::TrainSurrogate(a) => train_model(&store, a),
        Command::Attack { method, args } => attack(&store, method, args),
        Command::Gnia(GniaCommand::Train(a)) => train_generator(&store, a),
        Command::Gnia(GniaCommand::Infer(a)) => attack(&store, Method::Gnia, a),
        Command::Eval(a) => eval(&store, a),
        Command::Ablate(a) => ablate(&store, a),
        Command::Report(a) => report(&store, a),
    }
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gcn => ModelKind::Gcn,
            ModelArg::Appnp => ModelKind::Appnp,
        }
    }
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        let none = Ablation::default();
        match a {
            AblationArg::Full => none,
            AblationArg::NoAttr => Ablation { no_attr: true, ..none },
            AblationArg::NoEdge => Ablation { no_edge: true, ..none },
            AblationArg::NoJoint => Ablation { no_joint: true, ..none },
        }
    }
}

fn scenario_tag(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::SingleTarget => "single",
        ScenarioKind::MultiTarget => "multi",
        ScenarioKind::BlackBox => "black-box",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn synth(store: &Store, a: SynthArgs) -> Result<()> {
    let base = SbmConfig::default();
    let cfg = SbmConfig {
        nodes: a.nodes,
        classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        features: a.features,
        attr_kind: if a.discrete { AttrKind::Discrete } else { AttrKind::Continuous },
        signal: a.signal.unwrap_or(if a.discrete { 0.5 } else { base.signal }),
        noise: a.noise.unwrap_or(if a.discrete { 0.05 } else { base.noise }),
        seed: a.seed,
    };
    let g = split_nodes(&stochastic_block_model(&cfg)?, a.seed);
    let out = store.output_dir(&a.out)?;
    write_graph_dir(&g, &out)?;
    eprintln!(
        "wrote {} nodes, {} edges, {} features to {}",
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        out.display()
    );
    Ok(())
}

fn prep(store: &Store, a: PrepArgs) -> Result<()> {
    let g = store.graph(&a.graph)?;
    let lcc = largest_connected_component(&g);
    let g = split_nodes(&lcc, a.seed);
    let out = store.output_dir(&a.out)?;
    write_graph_dir(&g, &out)?;
    eprintln!(
        "kept {} of {} nodes; train/val/test = {}/{}/{}",
        g.num_nodes(),
        lcc.num_nodes().max(g.num_nodes()),
        g.nodes_in(Split::Train).len(),
        g.nodes_in(Split::Val).len(),
        g.nodes_in(Split::Test).len()
    );
    Ok(())
}

fn train_model(store: &Store, a: TrainSurrogateArgs) -> Result<()> {
    let g = store.graph(&a.graph)?;
    let cfg = SurrogateConfig {
        kind: a.model.into(),
        hidden: a.hidden,
        epochs: a.epochs,
        seed: a.seed,
        ..SurrogateConfig::default()
    };
    let (model, report) = train_surrogate(&g, &cfg)?;
    let out = store.output(&a.out)?;
    save_surrogate(model.params(), &out)?;
    println!("{}", serde_json::to_string(&json!({ "config": cfg, "report": report }))?);
    Ok(())
}

fn attacker_for(store: &Store, method: Method, generator: Option<&Path>, seed: u64, max_iters: Option<usize>) -> Result<Box<dyn Attacker>> {
    Ok(match method {
        Method::Opti => {
            let mut config = OptiConfig { seed, ..OptiConfig::default() };
            if let Some(n) = max_iters {
                config.max_iters = n;
            }
            Box::new(OptiAttacker { config })
        }
        Method::Gnia => {
            let path = generator.context("the gnia method needs --generator")?;
            Box::new(GniaAttacker {
                params: store.generator(path)?,
                seed,
            })
        }
        Method::Random => Box::new(RandomAttacker { seed }),
        Method::Mostattr => Box::new(MostAttrAttacker { seed }),
        Method::Prefedge => Box::new(PrefEdgeAttacker { seed }),
    })
}

fn white_box(kind: ModelKind, delta: usize) -> Scenario {
    Scenario {
        delta: DeltaRule::Fixed(delta),
        ..Scenario::single_target(kind)
    }
}

struct Loaded {
    graph: Graph,
    surrogate: SurrogateModel,
    victim: SurrogateModel,
}

/// Runs one scenario. The victim is only ever reachable through the
/// logged [`Victim`] handle.
fn execute(
    store: &Store,
    loaded: &Loaded,
    scenario: Scenario,
    instances: &[Vec<usize>],
    attacker: &mut dyn Attacker,
    seed: u64,
    config: serde_json::Value,
) -> Result<(RunManifest, Vec<AttackRecord>)> {
    let bounds = attribute_bounds(&loaded.graph);
    let victim = Victim::new(&loaded.victim, &store.log);
    let inputs = RunInputs {
        graph: &loaded.graph,
        surrogate: &loaded.surrogate,
        victim: &victim,
        log: &store.log,
        bounds: &bounds,
        scenario,
        instances,
        seed,
        config,
    };
    Ok(run_scenario(&inputs, attacker)?)
}

fn attack(store: &Store, method: Method, a: AttackArgs) -> Result<()> {
    let graph = store.graph(&a.graph)?;
    let surrogate = store.surrogate(&a.model, &graph)?;
    // White-box: the victim is the surrogate checkpoint itself.
    let victim = store.victim(&a.model, &graph)?;
    let targets = if a.targets.is_empty() { graph.nodes_in(Split::Test) } else { a.targets.clone() };
    if targets.is_empty() {
        bail!("no targets given and the test split is empty");
    }
    let instances: Vec<Vec<usize>> = if a.group { vec![targets] } else { targets.into_iter().map(|t| vec![t]).collect() };
    let scenario = white_box(surrogate.kind(), a.delta);
    let mut attacker = attacker_for(store, method, a.generator.as_deref(), a.seed, a.max_iters)?;
    let loaded = Loaded { graph, surrogate, victim };
    let config = json!({ "method": attacker.name(), "delta": a.delta, "max_iters": a.max_iters });
    let (manifest, records) = execute(store, &loaded, scenario, &instances, attacker.as_mut(), a.seed, config)?;
    match &a.out {
        Some(p) => {
            let out = store.output(p)?;
            write_records(&out, &records)?;
            write_manifest(&sibling(&out, "manifest.json"), &manifest)?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            for r in &records {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
        }
    }
    eprintln!(
        "{}: {}/{} successful, mean time {:.3e} s",
        manifest.method,
        records.iter().filter(|r| r.success).count(),
        records.len(),
        manifest.timing.mean_wall_time
    );
    Ok(())
}

/// `runs/x.jsonl` -> `runs/x.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn scenario_from(arg: ScenarioArg, surrogate: ModelKind, victim: ModelKind, delta: Option<usize>) -> Result<Scenario> {
    let mut s = match arg {
        ScenarioArg::Single => Scenario::single_target(surrogate),
        ScenarioArg::Multi => Scenario::multi_target(surrogate),
        ScenarioArg::BlackBox => Scenario::black_box(surrogate, victim),
    };
    if let Some(d) = delta {
        s.delta = DeltaRule::Fixed(d);
    }
    s.validate()?;
    Ok(s)
}

fn problems<'a>(g: &'a Graph, model: &'a SurrogateModel, bounds: &'a gnia_core::graph::AttributeBounds, scenario: &Scenario, split: Split) -> Result<Vec<AttackProblem<'a>>> {
    build_instances(g, scenario, &g.nodes_in(split))?
        .iter()
        .map(|t| Ok(AttackProblem::new(g, model, bounds, t, scenario.delta_for(g, t)?)?))
        .collect()
}

fn train_config(opts: &GniaTrainOpts, ablation: Ablation, seed: u64) -> GniaTrainConfig {
    let base = GniaTrainConfig::default();
    let mut cfg = GniaTrainConfig {
        lr: opts.lr,
        max_epochs: opts.max_epochs,
        patience: opts.patience,
        batch_size: opts.batch_size.unwrap_or(base.batch_size),
        attr_hidden: opts.width,
        edge_hidden: opts.width,
        ablation,
        seed,
        ..base
    };
    cfg.gumbel.tau = opts.tau;
    cfg
}

fn fit(
    g: &Graph,
    model: &SurrogateModel,
    scenario: &Scenario,
    opts: &GniaTrainOpts,
    ablation: Ablation,
    seed: u64,
) -> Result<(GniaParams, GniaTrainReport, GniaTrainConfig)> {
    let bounds = attribute_bounds(g);
    let train = problems(g, model, &bounds, scenario, Split::Train)?;
    let val = problems(g, model, &bounds, scenario, Split::Val)?;
    let cfg = train_config(opts, ablation, seed);
    if opts.tune {
        let t = gnia_tune(&train, &val, &cfg, &LR_GRID, &TAU_GRID)?;
        Ok((t.params, t.report, t.config))
    } else {
        let (params, report) = gnia_train(&train, &val, &cfg)?;
        Ok((params, report, cfg))
    }
}

fn train_generator(store: &Store, a: GniaTrainArgs) -> Result<()> {
    let g = store.graph(&a.graph)?;
    let model = store.surrogate(&a.model, &g)?;
    let scenario = scenario_from(a.scenario, model.kind(), model.kind(), None)?;
    let (params, report, cfg) = fit(&g, &model, &scenario, &a.opts, a.ablation.into(), a.seed)?;
    let out = store.output(&a.out)?;
    save_gnia(&params, &out)?;
    let manifest = json!({
        "config": cfg,
        "seed": a.seed,
        "scenario": scenario,
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_val_rate": report.best_val_rate,
    });
    write_json(&sibling(&out, "train.json"), &manifest)?;
    eprintln!(
        "trained {} epochs, best validation rate {:.4} at epoch {}",
        report.epochs_run, report.best_val_rate, report.best_epoch
    );
    Ok(())
}

fn write_run(store: &Store, dir: &Path, manifest: &RunManifest, records: &[AttackRecord]) -> Result<PathBuf> {
    let stem = format!("{}-{}-{}", scenario_tag(manifest.scenario.kind), manifest.method, manifest.seed);
    write_records(&dir.join(format!("{stem}.jsonl")), records)?;
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    write_manifest(&manifest_path, manifest)?;
    write_json(&dir.join(format!("{stem}.access.json")), &store.log.events())?;
    Ok(manifest_path)
}

fn eval(store: &Store, a: EvalArgs) -> Result<()> {
    let graph = store.graph(&a.graph)?;
    let surrogate = store.surrogate(&a.model, &graph)?;
    let victim_path = match (a.scenario, &a.victim) {
        (ScenarioArg::BlackBox, None) => bail!("black-box runs need --victim"),
        (_, Some(v)) => v.clone(),
        (_, None) => a.model.clone(),
    };
    let victim = store.victim(&victim_path, &graph)?;
    let scenario = scenario_from(a.scenario, surrogate.kind(), victim.kind(), a.delta)?;
    let instances = build_instances(&graph, &scenario, &graph.nodes_in(Split::Test))?;
    let mut attacker = attacker_for(store, a.method, a.generator.as_deref(), a.seed, a.max_iters)?;
    let loaded = Loaded { graph, surrogate, victim };
    let config = json!({ "method": attacker.name(), "max_iters": a.max_iters });
    let (manifest, records) = execute(store, &loaded, scenario, &instances, attacker.as_mut(), a.seed, config)?;
    let dir = store.output_dir(&a.out)?;
    let path = write_run(store, &dir, &manifest, &records)?;
    eprintln!(
        "{}: rate {:.4} (clean {:.4}) over {} instances; manifest {}",
        manifest.method,
        manifest.misclassification_rate,
        manifest.clean_rate,
        manifest.instances,
        path.display()
    );
    Ok(())
}

fn ablate(store: &Store, a: AblateArgs) -> Result<()> {
    let graph = store.graph(&a.graph)?;
    let surrogate = store.surrogate(&a.model, &graph)?;
    let victim = store.victim(&a.model, &graph)?;
    let scenario = scenario_from(a.scenario, surrogate.kind(), victim.kind(), None)?;
    let instances = build_instances(&graph, &scenario, &graph.nodes_in(Split::Test))?;
    let dir = store.output_dir(&a.out)?;
    let loaded = Loaded { graph, surrogate, victim };
    let mut manifests = Vec::new();
    let mut opts = a.opts.clone();
    for arg in [AblationArg::Full, AblationArg::NoJoint, AblationArg::NoEdge, AblationArg::NoAttr] {
        let ablation: Ablation = arg.into();
        let (params, report, cfg) = fit(&loaded.graph, &loaded.surrogate, &scenario, &opts, ablation, a.seed)?;
        if opts.tune {
            // Ablations reuse the hyperparameters picked for the full model.
            opts.tune = false;
            opts.lr = cfg.lr;
            opts.tau = cfg.gumbel.tau;
        }
        save_gnia(&params, &dir.join(format!("generator-{}.ckpt", ablation.label())))?;
        let mut attacker = GniaAttacker { params, seed: a.seed };
        let config = json!({ "train": cfg, "epochs_run": report.epochs_run, "best_val_rate": report.best_val_rate });
        let (manifest, records) = execute(store, &loaded, scenario, &instances, &mut attacker, a.seed, config)?;
        write_run(store, &dir, &manifest, &records)?;
        eprintln!("{}: rate {:.4}", manifest.method, manifest.misclassification_rate);
        manifests.push(manifest);
    }
    print!("{}", render_report(&manifests));
    Ok(())
}

fn collect_manifests(store: &Store, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        let p = store.resolve(p);
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(&p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".manifest.json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn report(store: &Store, a: ReportArgs) -> Result<()> {
    let mut manifests = Vec::new();
    for path in collect_manifests(store, &a.inputs)? {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        manifests.push(m);
    }
    if manifests.is_empty() {
        bail!("no manifests found");
    }
    let table = render_report(&manifests);
    match a.out {
        Some(p) => fs::write(store.output(&p)?, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

//! Experiment harness: run a matrix of (instance, engine, epsilon, rgbf)
//! combinations from a TOML spec, compare each run against the exact
//! oracle, and emit text and JSON-lines summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use trc_core::format;
use trc_core::generate;
use trc_core::model::{DiscreteNetwork, Evidence};
use trc_core::oracle::{compare_report, exact_marginals, ExactMethod, OracleCaps};
use trc_core::propagate::{trc_run, Engine, EngineConfig, TrcOptions};

#[derive(Debug, Deserialize)]
struct Spec {
    #[serde(default)]
    instances: Vec<InstanceSpec>,
}

#[derive(Debug, Deserialize)]
struct InstanceSpec {
    name: String,
    /// "bfg", "complete" or "file".
    shape: String,
    #[serde(default)]
    n: usize,
    #[serde(default = "default_states")]
    states: usize,
    #[serde(default)]
    seed: u64,
    /// Model path for shape = "file".
    #[serde(default)]
    model: Option<PathBuf>,
    /// Optional evidence file.
    #[serde(default)]
    evidence: Option<PathBuf>,
    #[serde(default = "default_engines")]
    engines: Vec<String>,
    #[serde(default = "default_epsilons")]
    epsilons: Vec<f64>,
    /// Run with and/or without the two-parent rewrite.
    #[serde(default = "default_rgbf")]
    rgbf: Vec<bool>,
    /// Fail the harness when max KL exceeds this.
    #[serde(default)]
    max_kl_bound: Option<f64>,
    /// Fail the harness when average KL exceeds this.
    #[serde(default)]
    avg_kl_bound: Option<f64>,
}

fn default_states() -> usize {
    2
}
fn default_engines() -> Vec<String> {
    vec!["trc-cccp".to_string()]
}
fn default_epsilons() -> Vec<f64> {
    vec![1e-5]
}
fn default_rgbf() -> Vec<bool> {
    vec![true]
}

struct RunOutcome {
    instance: String,
    engine: String,
    epsilon: f64,
    rgbf: bool,
    seed: u64,
    iterations: usize,
    converged: bool,
    max_kl: Option<f64>,
    average_kl: Option<f64>,
    mean_abs_error: Option<f64>,
    region_count: usize,
    runtime_ms: u128,
    error: Option<String>,
    bound_violation: Option<String>,
}

pub fn run(spec_path: &Path, out_dir: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: Spec = toml::from_str(&text).context("parsing experiment spec")?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| spec_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out_dir)?;

    // Resolve instances up front so errors surface before the matrix runs.
    let mut jobs: Vec<(usize, &InstanceSpec, String, f64, bool)> = Vec::new();
    let mut nets: Vec<(DiscreteNetwork, Evidence)> = Vec::new();
    for inst in &spec.instances {
        let net = build_instance(inst, spec_path)?;
        let evidence = match &inst.evidence {
            None => Evidence::empty(),
            Some(p) => {
                let path = resolve(spec_path, p);
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                format::parse_evidence(&text, &net)?
            }
        };
        let idx = nets.len();
        nets.push((net, evidence));
        for engine in &inst.engines {
            for &epsilon in &inst.epsilons {
                for &rgbf in &inst.rgbf {
                    jobs.push((idx, inst, engine.clone(), epsilon, rgbf));
                }
            }
        }
    }

    // Instances run in parallel; each individual run stays sequential.
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|(idx, inst, engine, epsilon, rgbf)| {
            execute(&nets[*idx].0, &nets[*idx].1, inst, engine, *epsilon, *rgbf)
        })
        .collect();

    let jsonl_path = out_dir.join("experiment.jsonl");
    let mut jsonl = String::new();
    let mut any_violation = false;
    println!(
        "{:<18} {:<18} {:>8} {:>6} {:>7} {:>10} {:>10} {:>9}",
        "instance", "engine", "epsilon", "rgbf", "iters", "max(KL)", "avg(KL)", "time"
    );
    for o in &outcomes {
        let fmt_kl = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "{:<18} {:<18} {:>8.0e} {:>6} {:>7} {:>10} {:>10} {:>8}ms{}",
            o.instance,
            o.engine,
            o.epsilon,
            o.rgbf,
            o.iterations,
            fmt_kl(o.max_kl),
            fmt_kl(o.average_kl),
            o.runtime_ms,
            match (&o.error, &o.bound_violation) {
                (Some(e), _) => format!("  error: {e}"),
                (None, Some(b)) => format!("  BOUND VIOLATED: {b}"),
                _ => String::new(),
            }
        );
        if o.bound_violation.is_some() {
            any_violation = true;
        }
        jsonl.push_str(
            &serde_json::json!({
                "record": "experiment",
                "instance": o.instance,
                "engine": o.engine,
                "epsilon": o.epsilon,
                "rgbf": o.rgbf,
                "seed": o.seed,
                "iterations": o.iterations,
                "converged": o.converged,
                "max_kl": o.max_kl,
                "average_kl": o.average_kl,
                "mean_abs_error": o.mean_abs_error,
                "regions": o.region_count,
                "runtime_ms": o.runtime_ms,
                "error": o.error,
                "bound_violation": o.bound_violation,
            })
            .to_string(),
        );
        jsonl.push('\n');
    }
    fs::write(&jsonl_path, jsonl)?;
    println!("wrote {}", jsonl_path.display());
    if any_violation {
        Ok(ExitCode::FAILURE)
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn resolve(spec_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        spec_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn build_instance(inst: &InstanceSpec, spec_path: &Path) -> Result<DiscreteNetwork> {
    match inst.shape.as_str() {
        "bfg" => Ok(generate::kappa_bfg_network(inst.n, inst.states, inst.seed)),
        "complete" => Ok(generate::complete_network(inst.n, inst.states, inst.seed)),
        "file" => {
            let path = inst
                .model
                .as_ref()
                .with_context(|| format!("instance {} needs `model`", inst.name))?;
            let path = resolve(spec_path, path);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            Ok(format::parse_network(&text)?)
        }
        other => anyhow::bail!("instance {}: unknown shape `{other}`", inst.name),
    }
}

fn execute(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    inst: &InstanceSpec,
    engine: &str,
    epsilon: f64,
    rgbf: bool,
) -> RunOutcome {
    let started = Instant::now();
    let mut outcome = RunOutcome {
        instance: inst.name.clone(),
        engine: engine.to_string(),
        epsilon,
        rgbf,
        seed: inst.seed,
        iterations: 0,
        converged: false,
        max_kl: None,
        average_kl: None,
        mean_abs_error: None,
        region_count: 0,
        runtime_ms: 0,
        error: None,
        bound_violation: None,
    };
    let parsed_engine = match engine {
        "trc-cccp" => Engine::Cccp,
        "trc-gbp" => Engine::Gbp,
        other => {
            outcome.error = Some(format!("unknown engine `{other}`"));
            return outcome;
        }
    };
    let options = TrcOptions {
        engine: parsed_engine,
        rgbf,
        config: EngineConfig::with_epsilon(epsilon),
    };
    let report = match trc_run(net, evidence, &options) {
        Ok(r) => r,
        Err(e) => {
            outcome.error = Some(e.to_string());
            outcome.runtime_ms = started.elapsed().as_millis();
            return outcome;
        }
    };
    outcome.iterations = report.iterations;
    outcome.converged = report.converged;
    outcome.region_count = report.region_count;
    outcome.runtime_ms = started.elapsed().as_millis();
    match exact_marginals(net, evidence, ExactMethod::Auto, OracleCaps::default()) {
        Ok(exact) => match compare_report(&report, &exact) {
            Ok(cmp) => {
                outcome.max_kl = Some(cmp.max_kl);
                outcome.average_kl = Some(cmp.average_kl);
                outcome.mean_abs_error = Some(cmp.mean_abs_error);
                if let Some(bound) = inst.max_kl_bound {
                    if cmp.max_kl > bound {
                        outcome.bound_violation =
                            Some(format!("max KL {:.3e} > {bound:.3e}", cmp.max_kl));
                    }
                }
                if let Some(bound) = inst.avg_kl_bound {
                    if cmp.average_kl > bound {
                        outcome.bound_violation =
                            Some(format!("average KL {:.3e} > {bound:.3e}", cmp.average_kl));
                    }
                }
            }
            Err(e) => outcome.error = Some(e.to_string()),
        },
        Err(e) => {
            // Oracle out of reach: report the run without KL columns.
            outcome.error = Some(format!("oracle unavailable: {e}"));
        }
    }
    outcome
}

//! Command-line front end: model validation, factorization, region-graph
//! inspection, inference, oracle comparison, model generation and the
//! experiment harness.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure,
//! 4 not converged; `run-experiment` exits 1 when a declared bound is
//! violated.

mod experiment;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use trc_core::factorize;
use trc_core::format;
use trc_core::generate;
use trc_core::markov::moralize;
use trc_core::model::{DiscreteNetwork, Evidence};
use trc_core::oracle::{self, ExactMethod, OracleCaps};
use trc_core::ori;
use trc_core::propagate::{trc_run, Engine, EngineConfig, MarginalReport, TrcOptions};
use trc_core::regions::{self, cvm_construct};
use trc_core::rgbf;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "trc",
    about = "Discrete Bayesian-network inference by triplet region construction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against every structural and numerical invariant.
    Validate(ModelArg),
    /// Convert a model to its binary factorized graph and write it with a
    /// metadata sidecar.
    Factorize(FactorizeArgs),
    /// Moralize the (factorized) model; optionally export the moral graph.
    Moralize(MoralizeArgs),
    /// Build the region graph and report its structure.
    Regions(RegionsArgs),
    /// Run inference and print the per-variable marginals.
    Infer(InferArgs),
    /// Run an approximate method and the exact oracle, and report KL
    /// distances.
    Compare(CompareArgs),
    /// Generate a random model file.
    GenRandom(GenRandomArgs),
    /// Execute an experiment matrix from a spec file.
    RunExperiment(ExperimentArgs),
}

#[derive(Args)]
struct ModelArg {
    /// Model file in the trcnet format.
    #[arg(long, short = 'm')]
    model: PathBuf,
}

#[derive(Args)]
struct FactorizeArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Output model file.
    #[arg(long, short = 'o')]
    output: PathBuf,
    /// Metadata sidecar path (defaults to `<output>.meta`).
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct MoralizeArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Write the moral graph in GraphViz format (moral edges dashed).
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct RegionsArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Print the per-level structural report and property checks.
    #[arg(long)]
    report: bool,
    /// List outer regions with per-candidate rejection reasons.
    #[arg(long)]
    list_outer: bool,
    /// Apply the two-parent rewrite before reporting/exporting.
    #[arg(long)]
    rgbf: bool,
    /// Export the region DAG in GraphViz format.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Method {
    TrcCccp,
    TrcGbp,
    Exact,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Evidence file (`name = state` lines).
    #[arg(long, short = 'e')]
    evidence: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "trc-cccp")]
    method: Method,
    /// Convergence threshold on belief change.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Skip the region-graph two-parent rewrite.
    #[arg(long)]
    no_rgbf: bool,
    /// Deterministic shuffle seed for the update schedule.
    #[arg(long)]
    seed: Option<u64>,
    /// Damping factor for GBP.
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Worker threads for multiplier updates.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Append machine-readable records (JSON lines) to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, short = 'e')]
    evidence: Option<PathBuf>,
    /// Approximate method to compare against the oracle.
    #[arg(long, value_enum, default_value = "trc-cccp")]
    method: Method,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long)]
    no_rgbf: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Shape {
    /// Complete DAG over n nodes.
    Complete,
    /// BFG-shaped graph (factorized-complete structure, every node m states).
    Bfg,
}

#[derive(Args)]
struct GenRandomArgs {
    /// Number of (original) variables.
    #[arg(long, short = 'n')]
    nodes: usize,
    /// States per variable.
    #[arg(long, short = 's', default_value_t = 2)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "complete")]
    shape: Shape,
    #[arg(long, short = 'o')]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Directory for report files (defaults to the spec's directory).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate(args) => {
            let net = load_model(&args)?;
            let report = net.validate();
            if report.is_valid() {
                println!("valid: {} variables, {} edges", net.len(), net.edges().len());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("{report}");
                Ok(ExitCode::from(EXIT_VALIDATION))
            }
        }
        Command::Factorize(args) => cmd_factorize(args),
        Command::Moralize(args) => cmd_moralize(args),
        Command::Regions(args) => cmd_regions(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Compare(args) => cmd_compare(args),
        Command::GenRandom(args) => cmd_gen_random(args),
        Command::RunExperiment(args) => experiment::run(&args.spec, args.out.as_deref()),
    }
}

fn load_model(args: &ModelArg) -> Result<DiscreteNetwork> {
    let text = fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    Ok(format::parse_network(&text)?)
}

fn load_valid_model(args: &ModelArg) -> Result<DiscreteNetwork> {
    let net = load_model(args)?;
    let report = net.validate();
    if !report.is_valid() {
        bail!("model is invalid:\n{report}");
    }
    Ok(net)
}

fn load_evidence(net: &DiscreteNetwork, path: Option<&PathBuf>) -> Result<Evidence> {
    match path {
        None => Ok(Evidence::empty()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(format::parse_evidence(&text, net)?)
        }
    }
}

fn enumeration_cap() -> u128 {
    std::env::var("TRC_ENUM_CAP")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(trc_core::model::DEFAULT_ENUMERATION_CAP)
}

fn oracle_caps() -> OracleCaps {
    OracleCaps {
        enumeration: enumeration_cap(),
        ..OracleCaps::default()
    }
}

fn cmd_factorize(args: FactorizeArgs) -> Result<ExitCode> {
    let net = load_valid_model(&args.model)?;
    let (bfg, meta) = trc_core::propagate::to_bfg(&net)?;
    fs::write(&args.output, format::write_network(&bfg))?;
    let meta_path = args
        .meta
        .unwrap_or_else(|| args.output.with_extension("meta"));
    fs::write(&meta_path, format::write_metadata(&meta))?;
    println!(
        "wrote {} ({} variables, {} intermediate) and {}",
        args.output.display(),
        bfg.len(),
        bfg.len() - net.len(),
        meta_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_moralize(args: MoralizeArgs) -> Result<ExitCode> {
    let net = load_valid_model(&args.model)?;
    let (bfg, _) = trc_core::propagate::to_bfg(&net)?;
    let fs_ = moralize(&bfg);
    println!(
        "{} variables, {} undirected edges, {} moral edges",
        bfg.len(),
        fs_.adjacency().len(),
        fs_.moral_edges().len()
    );
    for &(a, b) in fs_.moral_edges() {
        println!("moral: {} -- {}", fs_.name(a), fs_.name(b));
    }
    if let Some(path) = args.dot {
        fs::write(&path, fs_.moral_graph_dot())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_regions(args: RegionsArgs) -> Result<ExitCode> {
    let net = load_valid_model(&args.model)?;
    let originals = net.original_vars().len();
    let (bfg, _) = trc_core::propagate::to_bfg(&net)?;
    let mut fs_ = moralize(&bfg);

    if args.list_outer {
        let primaries = ori::primary_triplets(&bfg, &fs_)?;
        println!("primary triplets ({}):", primaries.len());
        for t in &primaries {
            let names: Vec<&str> = t.label.iter().map(|&v| fs_.name(v)).collect();
            println!("  {{{}}}  child {}", names.join(" "), fs_.name(t.child));
        }
        let audit = ori::full_audit(&bfg, &fs_);
        println!("candidate interaction triplets ({}):", audit.len());
        for row in &audit {
            let names: Vec<&str> = row.label.iter().map(|&v| fs_.name(v)).collect();
            let verdict = match &row.verdict {
                None => "kept".to_string(),
                Some(ori::Rejection::Type1 { pair }) => format!(
                    "rejected type 1 (pair {} {} is not an edge)",
                    fs_.name(pair.0),
                    fs_.name(pair.1)
                ),
                Some(ori::Rejection::Type2 { root, moral }) => format!(
                    "rejected type 2 (root {}, moral edge {} {})",
                    fs_.name(*root),
                    fs_.name(moral.0),
                    fs_.name(moral.1)
                ),
                Some(ori::Rejection::Primary) => "rejected (primary)".to_string(),
            };
            println!("  {{{}}}  {verdict}", names.join(" "));
        }
    }

    let outer = ori::outer_regions(&bfg, &mut fs_)?;
    let mut graph = cvm_construct(&outer, &fs_)?;
    if args.rgbf {
        let before = graph.clone();
        graph = rgbf::rgbf_transform(&graph)?;
        let audit = rgbf::audit_equivalence(&before, &graph);
        if !audit.all_pass() {
            bail!("two-parent rewrite failed its equivalence audit: {audit:?}");
        }
    }
    if args.report {
        let report = regions::table2_report(&graph, originals);
        print!("{report}");
        let (sum, perfect) = regions::check_perfect_correlation(&graph);
        println!("sum of counting numbers = {sum} (perfect correlation: {perfect})");
        let dims = fs_.dims();
        println!(
            "uniform-belief entropy check: {}",
            regions::check_maxent_uniform(&graph, &dims)
        );
        let validity = regions::validity_report(&graph, &fs_);
        println!("region-graph validity: {}", validity.is_valid());
        println!(
            "{} regions, {} edges, {} stored table entries",
            graph.len(),
            graph.edge_count(),
            graph
                .regions
                .iter()
                .map(|r| r
                    .label
                    .iter()
                    .map(|&v| fs_.arity(v))
                    .product::<usize>())
                .sum::<usize>()
        );
    }
    if let Some(path) = args.dot {
        fs::write(&path, graph.dot(&fs_))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn engine_config(epsilon: f64, seed: Option<u64>, damping: f64, parallelism: usize) -> EngineConfig {
    EngineConfig {
        epsilon,
        damping,
        parallelism,
        schedule_seed: seed,
        ..EngineConfig::default()
    }
}

fn run_method(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    method: Method,
    epsilon: f64,
    no_rgbf: bool,
    seed: Option<u64>,
    damping: f64,
    parallelism: usize,
) -> Result<MarginalReport, trc_core::propagate::PropagateError> {
    match method {
        Method::Exact => {
            let report = oracle::exact_marginals(net, evidence, ExactMethod::Auto, oracle_caps())
                .map_err(|e| {
                    trc_core::propagate::PropagateError::InvalidInput(e.to_string())
                })?;
            Ok(report)
        }
        Method::TrcCccp | Method::TrcGbp => {
            let engine = if method == Method::TrcCccp {
                Engine::Cccp
            } else {
                Engine::Gbp
            };
            trc_run(
                net,
                evidence,
                &TrcOptions {
                    engine,
                    rgbf: !no_rgbf,
                    config: engine_config(epsilon, seed, damping, parallelism),
                },
            )
        }
    }
}

fn print_report(report: &MarginalReport) {
    println!(
        "method {}   iterations {}   converged {}",
        report.method, report.iterations, report.converged
    );
    if !report.free_energy_trace.is_empty() {
        println!(
            "free energy {:.6} -> {:.6}   consistency gap {:.3e}   regions {}",
            report.free_energy_trace.first().unwrap(),
            report.free_energy_trace.last().unwrap(),
            report.max_consistency_gap,
            report.region_count
        );
    }
    println!("{:<14} {:>8}  marginals", "variable", "mean");
    for v in &report.variables {
        let probs: Vec<String> = v
            .probs
            .iter()
            .zip(&v.states)
            .map(|(p, s)| format!("{s}:{p:.6}"))
            .collect();
        println!("{:<14} {:>8.4}  {}", v.name, v.mean, probs.join(" "));
    }
}

fn append_json(path: &PathBuf, records: &[serde_json::Value]) -> Result<()> {
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for r in records {
        writeln!(file, "{r}")?;
    }
    Ok(())
}

fn marginal_records(report: &MarginalReport, seed: Option<u64>) -> Vec<serde_json::Value> {
    let mut records = vec![serde_json::json!({
        "record": "run",
        "engine": report.method,
        "epsilon": report.epsilon,
        "seed": seed,
        "iterations": report.iterations,
        "converged": report.converged,
        "regions": report.region_count,
        "table_entries": report.table_entries,
        "consistency_gap": report.max_consistency_gap,
    })];
    for v in &report.variables {
        records.push(serde_json::json!({
            "record": "marginal",
            "variable": v.name,
            "probs": v.probs,
            "mean": v.mean,
            "engine": report.method,
            "epsilon": report.epsilon,
            "seed": seed,
        }));
    }
    records
}

fn cmd_infer(args: InferArgs) -> Result<ExitCode> {
    let net = load_model(&args.model)?;
    let report = net.validate();
    if !report.is_valid() {
        eprintln!("{report}");
        return Ok(ExitCode::from(EXIT_VALIDATION));
    }
    let evidence = load_evidence(&net, args.evidence.as_ref())?;
    let result = run_method(
        &net,
        &evidence,
        args.method,
        args.epsilon,
        args.no_rgbf,
        args.seed,
        args.damping,
        args.parallelism,
    );
    match result {
        Ok(report) => {
            print_report(&report);
            if let Some(path) = &args.json {
                append_json(path, &marginal_records(&report, args.seed))?;
            }
            if report.converged {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_NOT_CONVERGED))
            }
        }
        Err(trc_core::propagate::PropagateError::NumericalFailure(msg)) => {
            eprintln!("numerical failure: {msg}");
            Ok(ExitCode::from(EXIT_NUMERICAL))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let net = load_valid_model(&args.model)?;
    let evidence = load_evidence(&net, args.evidence.as_ref())?;
    let approx = match run_method(
        &net,
        &evidence,
        args.method,
        args.epsilon,
        args.no_rgbf,
        args.seed,
        0.5,
        1,
    ) {
        Ok(r) => r,
        Err(trc_core::propagate::PropagateError::NumericalFailure(msg)) => {
            eprintln!("numerical failure: {msg}");
            return Ok(ExitCode::from(EXIT_NUMERICAL));
        }
        Err(e) => return Err(e.into()),
    };
    let exact = oracle::exact_marginals(&net, &evidence, ExactMethod::Auto, oracle_caps())?;
    let cmp = oracle::compare_report(&approx, &exact)?;
    println!("{cmp}");
    if let Some(path) = &args.json {
        let mut records = vec![serde_json::json!({
            "record": "comparison",
            "engine": approx.method,
            "epsilon": approx.epsilon,
            "seed": args.seed,
            "iterations": cmp.iterations,
            "converged": cmp.converged,
            "max_kl": cmp.max_kl,
            "min_kl": cmp.min_kl,
            "average_kl": cmp.average_kl,
            "mean_abs_error": cmp.mean_abs_error,
        })];
        for row in &cmp.rows {
            records.push(serde_json::json!({
                "record": "variable",
                "variable": row.name,
                "kl": row.kl,
                "mean": row.mean_approx,
                "mean_exact": row.mean_exact,
                "engine": approx.method,
                "epsilon": approx.epsilon,
                "seed": args.seed,
            }));
        }
        append_json(path, &records)?;
    }
    if approx.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

fn cmd_gen_random(args: GenRandomArgs) -> Result<ExitCode> {
    if args.nodes < 3 || args.states < 2 {
        bail!("need at least 3 nodes and 2 states");
    }
    let net = match args.shape {
        Shape::Complete => generate::complete_network(args.nodes, args.states, args.seed),
        Shape::Bfg => generate::kappa_bfg_network(args.nodes, args.states, args.seed),
    };
    fs::write(&args.output, format::write_network(&net))?;
    let kappa = factorize::kappa(args.nodes as u64).unwrap_or(args.nodes as u64);
    println!(
        "wrote {} ({} variables; factorized form has {} nodes)",
        args.output.display(),
        net.len(),
        kappa
    );
    Ok(ExitCode::SUCCESS)
}

//! Region-based message passing over a (optionally two-parent-rewritten)
//! region graph, plus the end-to-end pipeline from a discrete network to a
//! marginal report.
//!
//! Two engines share one compiled representation: GBP, the two-way
//! parent/child message scheme with a damped blended update, and CCCP, the
//! convergent double loop that splits the region free energy into concave
//! and convex parts and solves the consistency multipliers in an inner
//! loop. All table arithmetic is log-space with max-subtraction; evidence
//! enters by clamping factor entries (floored at 1e-12) before compilation.

mod cccp;
mod gbp;

pub use cccp::cccp_run;
pub use gbp::gbp_run;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::factorize::{self, BfgMetadata};
use crate::markov::{moralize, FactorSystem};
use crate::model::{DiscreteNetwork, Evidence, VarId, PROB_FLOOR};
use crate::ori;
use crate::regions::{cvm_construct, RegionGraph};
use crate::rgbf::rgbf_transform;
use crate::table::{log_marginalize_into, log_sum_exp, projection_map, SegmentedProjection};

#[derive(Debug, Error)]
pub enum PropagateError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Region(#[from] crate::regions::RegionError),
    #[error(transparent)]
    Ori(#[from] crate::ori::OriError),
    #[error(transparent)]
    Factorize(#[from] crate::factorize::FactorizeError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Which message-passing engine drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Cccp,
    Gbp,
}

impl Engine {
    pub fn label(self) -> &'static str {
        match self {
            Engine::Cccp => "trc-cccp",
            Engine::Gbp => "trc-gbp",
        }
    }
}

/// Convergence and scheduling knobs shared by both engines.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Convergence threshold on the max per-state belief change.
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    /// CCCP inner loop: stop when the multiplicative multiplier correction
    /// deviates from one by less than this.
    pub inner_tolerance: f64,
    pub max_inner_iterations: usize,
    /// GBP damping factor in [0, 1); 0 disables damping.
    pub damping: f64,
    /// Worker threads for the independent-batch multiplier updates.
    pub parallelism: usize,
    /// Deterministic shuffle of the edge schedule.
    pub schedule_seed: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_outer_iterations: 20_000,
            inner_tolerance: 1e-7,
            max_inner_iterations: 200,
            damping: 0.5,
            parallelism: 1,
            schedule_seed: None,
        }
    }
}

impl EngineConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// Pipeline options for [`trc_run`].
#[derive(Debug, Clone)]
pub struct TrcOptions {
    pub engine: Engine,
    /// Apply the two-parent region rewrite before propagation.
    pub rgbf: bool,
    pub config: EngineConfig,
}

impl Default for TrcOptions {
    fn default() -> Self {
        Self {
            engine: Engine::Cccp,
            rgbf: true,
            config: EngineConfig::default(),
        }
    }
}

/// Compiled region: flat tables and index maps ready for iteration.
pub(crate) struct CompiledRegion {
    pub label: Vec<VarId>,
    pub dims: Vec<usize>,
    pub size: usize,
    pub counting: f64,
    pub level: u8,
    /// Sum of clamped log factor values over the region table (zeros for
    /// factor-less inner regions).
    pub log_factor: Vec<f64>,
    pub in_edges: Vec<usize>,
    pub out_edges: Vec<usize>,
}

pub(crate) struct CompiledEdge {
    pub parent: usize,
    pub child: usize,
    /// Parent linear index -> child linear index.
    pub proj: Vec<u32>,
    /// Parent indices grouped by child cell, for marginalization.
    pub seg: SegmentedProjection,
    /// GBP blend exponent of the child region.
    pub beta: f64,
}

/// Graph compiled for propagation; immutable across a run.
pub struct CompiledGraph {
    pub(crate) regions: Vec<CompiledRegion>,
    pub(crate) edges: Vec<CompiledEdge>,
    pub(crate) c_max: f64,
    /// Edge update order.
    pub(crate) schedule: Vec<usize>,
    /// Schedule partitioned into batches whose edges share no region.
    pub(crate) batches: Vec<Vec<usize>>,
}

impl CompiledGraph {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Total stored table entries across regions; the space-complexity
    /// measure reported by experiments.
    pub fn table_entries(&self) -> usize {
        self.regions.iter().map(|r| r.size).sum()
    }
}

/// All-states-allowed masks.
pub fn trivial_masks(fs: &FactorSystem) -> Vec<Vec<bool>> {
    fs.var_ids().map(|v| vec![true; fs.arity(v)]).collect()
}

/// Masks from plain evidence (no carrier replication).
pub fn masks_from_evidence(fs: &FactorSystem, evidence: &Evidence) -> Vec<Vec<bool>> {
    let mut masks = trivial_masks(fs);
    for (v, s) in evidence.iter() {
        for (k, allowed) in masks[v.index()].iter_mut().enumerate() {
            *allowed = k == s;
        }
    }
    masks
}

/// Compile a region graph against its factor system and evidence masks.
pub fn compile(
    graph: &RegionGraph,
    fs: &FactorSystem,
    masks: &[Vec<bool>],
    cfg: &EngineConfig,
) -> Result<CompiledGraph, PropagateError> {
    let mut regions = Vec::with_capacity(graph.len());
    for r in &graph.regions {
        let dims: Vec<usize> = r.label.iter().map(|&v| fs.arity(v)).collect();
        let size: usize = dims.iter().product();
        let mut log_factor = vec![0.0f64; size];
        if !r.factors.is_empty() {
            let mut digits = vec![0usize; r.label.len()];
            for idx in 0..size {
                crate::model::decode_row(idx, &dims, &mut digits);
                let mut acc = 0.0;
                for &f in &r.factors {
                    let factor = fs.factor(f);
                    let consistent = factor
                        .scope()
                        .iter()
                        .all(|v| {
                            let pos = r.label.iter().position(|w| w == v).unwrap();
                            masks[v.index()][digits[pos]]
                        });
                    let mut idx_f = 0usize;
                    for v in factor.scope() {
                        let pos = r.label.iter().position(|w| w == v).unwrap();
                        idx_f = idx_f * fs.arity(*v) + digits[pos];
                    }
                    let raw = if consistent {
                        factor.table.values[idx_f]
                    } else {
                        0.0
                    };
                    acc += raw.max(PROB_FLOOR).ln();
                }
                log_factor[idx] = acc;
            }
        }
        regions.push(CompiledRegion {
            label: r.label.clone(),
            dims,
            size,
            counting: r.counting_number as f64,
            level: r.level,
            log_factor,
            in_edges: vec![],
            out_edges: vec![],
        });
    }

    let mut edges = Vec::new();
    for parent in 0..graph.len() {
        for &child in graph.children(parent) {
            let proj = projection_map(
                &regions[parent].label,
                &regions[parent].dims,
                &regions[child].label,
                &regions[child].dims,
            );
            let seg = SegmentedProjection::from_map(&proj, regions[child].size);
            edges.push(CompiledEdge {
                parent,
                child,
                proj,
                seg,
                beta: 0.0,
            });
        }
    }
    // Blend exponent per child region: beta = 1 / (2 - (1 - c_r) / p_r).
    let mut parent_count = vec![0usize; regions.len()];
    for e in &edges {
        parent_count[e.child] += 1;
    }
    for (i, e) in edges.iter_mut().enumerate() {
        let p_r = parent_count[e.child] as f64;
        let denom = 2.0 - (1.0 - regions[e.child].counting) / p_r;
        if denom.abs() < 1e-12 {
            return Err(PropagateError::NumericalFailure(format!(
                "undefined blend exponent for region {:?}",
                regions[e.child].label
            )));
        }
        e.beta = 1.0 / denom;
        regions[e.parent].out_edges.push(i);
        regions[e.child].in_edges.push(i);
    }

    // Deterministic schedule: child level first, then labels and copies.
    let mut schedule: Vec<usize> = (0..edges.len()).collect();
    let sort_key = |e: &CompiledEdge| {
        (
            regions[e.child].level,
            regions[e.child].label.clone(),
            graph.regions[e.child].copy,
            regions[e.parent].label.clone(),
            graph.regions[e.parent].copy,
        )
    };
    schedule.sort_by(|&a, &b| sort_key(&edges[a]).cmp(&sort_key(&edges[b])));
    if let Some(seed) = cfg.schedule_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        schedule.shuffle(&mut rng);
    }

    // Greedy batching: an edge joins the first batch where neither endpoint
    // region is already in use.
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut used: Vec<std::collections::BTreeSet<usize>> = Vec::new();
    for &e in &schedule {
        let (p, c) = (edges[e].parent, edges[e].child);
        let slot = used
            .iter()
            .position(|set| !set.contains(&p) && !set.contains(&c));
        match slot {
            Some(i) => {
                batches[i].push(e);
                used[i].insert(p);
                used[i].insert(c);
            }
            None => {
                batches.push(vec![e]);
                used.push([p, c].into_iter().collect());
            }
        }
    }

    let c_max = regions
        .iter()
        .map(|r| r.counting)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CompiledGraph {
        regions,
        edges,
        c_max,
        schedule,
        batches,
    })
}

/// Mutable propagation state: per-region log beliefs plus the engine's
/// messages or multipliers. Owned by a single run.
pub struct BeliefState {
    pub log_beliefs: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub free_energy_trace: Vec<f64>,
    /// Per-edge (downward, upward) GBP messages, when GBP produced this.
    pub gbp_messages: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Per-edge consistency multipliers, when CCCP produced this.
    pub cccp_multipliers: Option<Vec<Vec<f64>>>,
}

impl BeliefState {
    /// Normalized linear-space belief of one region.
    pub fn belief(&self, region: usize) -> Vec<f64> {
        let log = &self.log_beliefs[region];
        let z = log_sum_exp(log);
        log.iter().map(|&x| (x - z).exp()).collect()
    }
}

/// A finished propagation run: compiled graph plus final state.
pub struct RegionRun {
    pub compiled: CompiledGraph,
    pub state: BeliefState,
}

impl RegionRun {
    /// Marginal of `v` from the smallest containing region, plus the max
    /// disagreement between the implied marginals across all regions that
    /// contain `v`.
    pub fn extract_marginal(&self, v: VarId) -> Result<(Vec<f64>, f64), PropagateError> {
        let mut hosts: Vec<usize> = (0..self.compiled.regions.len())
            .filter(|&r| self.compiled.regions[r].label.contains(&v))
            .collect();
        if hosts.is_empty() {
            return Err(PropagateError::UnknownVariable(format!("{v}")));
        }
        hosts.sort_by_key(|&r| {
            (
                self.compiled.regions[r].label.len(),
                self.compiled.regions[r].label.clone(),
                r,
            )
        });
        let marginals: Vec<Vec<f64>> = hosts
            .iter()
            .map(|&r| self.region_marginal(r, v))
            .collect();
        let mut gap = 0.0f64;
        for i in 0..marginals.len() {
            for j in i + 1..marginals.len() {
                for (a, b) in marginals[i].iter().zip(&marginals[j]) {
                    gap = gap.max((a - b).abs());
                }
            }
        }
        Ok((marginals[0].clone(), gap))
    }

    fn region_marginal(&self, r: usize, v: VarId) -> Vec<f64> {
        let region = &self.compiled.regions[r];
        let pos = region.label.iter().position(|w| *w == v).unwrap();
        let arity = region.dims[pos];
        let log = &self.state.log_beliefs[r];
        let map = projection_map(&region.label, &region.dims, &[v], &[arity]);
        let mut out = vec![f64::NEG_INFINITY; arity];
        log_marginalize_into(log, &map, &mut out);
        let z = log_sum_exp(&out);
        out.iter().map(|&x| (x - z).exp()).collect()
    }

    /// Max cross-region marginal disagreement over the given variables.
    pub fn max_consistency_gap(&self, vars: &[VarId]) -> f64 {
        vars.iter()
            .filter_map(|&v| self.extract_marginal(v).ok())
            .map(|(_, gap)| gap)
            .fold(0.0, f64::max)
    }
}

/// Region free energy `sum_r c_r (U_r - H_r)` evaluated at the current
/// normalized beliefs, with per-region energies from the clamped factors.
pub(crate) fn free_energy(compiled: &CompiledGraph, log_beliefs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (r, region) in compiled.regions.iter().enumerate() {
        let log = &log_beliefs[r];
        let z = log_sum_exp(log);
        let mut term = 0.0;
        for (x, &lb) in log.iter().enumerate() {
            let b = (lb - z).exp();
            if b > 0.0 {
                let energy = -region.log_factor[x];
                term += b * (energy + (lb - z));
            }
        }
        total += region.counting * term;
    }
    total
}

pub(crate) fn check_finite(log_beliefs: &[Vec<f64>]) -> Result<(), PropagateError> {
    for (r, table) in log_beliefs.iter().enumerate() {
        for &x in table {
            if x.is_nan() || x == f64::INFINITY {
                return Err(PropagateError::NumericalFailure(format!(
                    "non-finite belief in region {r}"
                )));
            }
        }
    }
    Ok(())
}

/// One reported marginal.
#[derive(Debug, Clone, Serialize)]
pub struct VariableMarginal {
    pub name: String,
    pub states: Vec<String>,
    pub probs: Vec<f64>,
    /// Mean under the numeric reading of states (state k has value k+1).
    pub mean: f64,
}

/// Outcome of an inference run, exact or approximate.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalReport {
    pub method: String,
    pub variables: Vec<VariableMarginal>,
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: Option<f64>,
    pub free_energy_trace: Vec<f64>,
    /// Max cross-region disagreement over reported variables (0 for exact).
    pub max_consistency_gap: f64,
    /// Regions in the compiled graph (0 for exact methods).
    pub region_count: usize,
    /// Stored table entries across regions (0 for exact methods).
    pub table_entries: usize,
}

impl MarginalReport {
    pub fn marginal(&self, name: &str) -> Option<&VariableMarginal> {
        self.variables.iter().find(|v| v.name == name)
    }
}

pub(crate) fn mean_value(probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| (k + 1) as f64 * p)
        .sum()
}

/// Normalize a network to its BFG: pre-built BFGs pass through, complete
/// graphs are binary factorized, everything else is factorized (if needed)
/// and completed to the full BFG shape.
pub fn to_bfg(
    net: &DiscreteNetwork,
) -> Result<(DiscreteNetwork, BfgMetadata), PropagateError> {
    let report = net.validate();
    if !report.is_valid() {
        return Err(PropagateError::InvalidInput(report.to_string()));
    }
    if net.max_indegree() <= 2 && net.has_intermediates() {
        let ordering = net
            .topological_order()
            .ok_or_else(|| PropagateError::InvalidInput("cyclic network".into()))?
            .iter()
            .map(|&v| net.name(v).to_string())
            .collect();
        return Ok((net.clone(), BfgMetadata::identity_public(net, ordering)));
    }
    let complete = net.is_complete_dag();
    let (stage1, meta1) = factorize::binary_factorize(net)?;
    if complete {
        return Ok((stage1, meta1));
    }
    let (bfg, meta2) = factorize::sparse_to_bfg(&stage1)?;
    Ok((bfg, BfgMetadata::compose(&meta1, &meta2)))
}

/// Full pipeline: factorize, moralize, identify outer regions, build the
/// region graph (optionally rewritten to two parents), propagate, and read
/// out the original variables' marginals.
pub fn trc_run(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    options: &TrcOptions,
) -> Result<MarginalReport, PropagateError> {
    if net.len() < 3 {
        return Err(PropagateError::InvalidInput(
            "triplet region construction needs at least 3 variables".into(),
        ));
    }
    let (bfg, meta) = to_bfg(net)?;

    // Evidence named on the input moves over by name and replicates onto
    // carriers.
    let mut bfg_evidence = Evidence::empty();
    for (v, s) in evidence.iter() {
        let id = bfg.var_id(net.name(v))?;
        bfg_evidence.set(&bfg, id, s)?;
    }
    let bfg_evidence = factorize::replicate_evidence(&bfg, &meta, &bfg_evidence)?;
    let masks = factorize::evidence_masks(&bfg, &meta, &bfg_evidence)?;

    let mut fs = moralize(&bfg);
    let outer = ori::outer_regions(&bfg, &mut fs)?;
    let mut graph = cvm_construct(&outer, &fs)?;
    if options.rgbf {
        graph = rgbf_transform(&graph)?;
    }
    let run = match options.engine {
        Engine::Cccp => cccp_run(&graph, &fs, &masks, &options.config)?,
        Engine::Gbp => gbp_run(&graph, &fs, &masks, &options.config)?,
    };

    let mut variables = Vec::new();
    let mut gap = 0.0f64;
    for v in net.original_vars() {
        let name = net.name(v).to_string();
        let bfg_id = bfg.var_id(&name)?;
        let (probs, g) = run.extract_marginal(bfg_id)?;
        gap = gap.max(g);
        variables.push(VariableMarginal {
            mean: mean_value(&probs),
            states: net.var(v).states.clone(),
            probs,
            name,
        });
    }
    let mut method = options.engine.label().to_string();
    if !options.rgbf {
        method.push_str("-no-rgbf");
    }
    Ok(MarginalReport {
        method,
        variables,
        iterations: run.state.iterations,
        converged: run.state.converged,
        epsilon: Some(options.config.epsilon),
        free_energy_trace: run.state.free_energy_trace.clone(),
        max_consistency_gap: gap,
        region_count: run.compiled.region_count(),
        table_entries: run.compiled.table_entries(),
    })
}

/// Beliefs initialized uniform over every region.
pub(crate) fn uniform_beliefs(compiled: &CompiledGraph) -> Vec<Vec<f64>> {
    compiled
        .regions
        .iter()
        .map(|r| vec![-(r.size as f64).ln(); r.size])
        .collect()
}

/// Max per-state absolute change between two belief sets, linear space.
pub(crate) fn belief_delta(
    compiled: &CompiledGraph,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> f64 {
    let mut delta = 0.0f64;
    for r in 0..compiled.regions.len() {
        let za = log_sum_exp(&a[r]);
        let zb = log_sum_exp(&b[r]);
        for (x, (&la, &lb)) in a[r].iter().zip(&b[r]).enumerate() {
            let _ = x;
            delta = delta.max(((la - za).exp() - (lb - zb).exp()).abs());
        }
    }
    delta
}

pub(crate) type EdgeTables = Vec<Vec<f64>>;

/// Per-edge zero tables sized to the child region.
pub(crate) fn zero_edge_tables(compiled: &CompiledGraph) -> EdgeTables {
    compiled
        .edges
        .iter()
        .map(|e| vec![0.0; compiled.regions[e.child].size])
        .collect()
}

pub(crate) fn normalized(mut table: Vec<f64>) -> Vec<f64> {
    let z = log_sum_exp(&table);
    if z.is_finite() {
        for x in &mut table {
            *x -= z;
        }
    }
    table
}


//! Double-loop concave-convex minimization of the region free energy.
//!
//! Outer iteration: freeze the current beliefs into the per-region term
//! `h_r(x) = exp(-(c_r/c_max) (E_r(x) + 1)) * b_r(x)^((c_max - c_r)/c_max)`.
//! The belief is `b_r = h_r * g_r` with
//! `g_r = exp(-gamma_r - sum_out lambda + sum_in lambda)`; the
//! normalization multiplier `gamma_r` is solved exactly every time a belief
//! is touched. Inner loop: sweep the parent-child consistency multipliers
//! with the multiplicative rule
//! `exp(2 lambda') = exp(2 lambda) * marg(b_parent) / b_child`
//! until the worst correction factor is within tolerance. The free energy
//! decreases across outer iterations, which is the convergence guarantee
//! the trace records.
//!
//! Representation: `h`, `lambda` and the per-outer belief assembly live in
//! log space (max-subtracted normalization). The inner sweeps run on the
//! normalized probability tables themselves - the correction is a plain
//! ratio there - with entries floored at 1e-300 so a ratio never divides by
//! zero; tables re-enter log space at the end of every inner loop.

use rayon::prelude::*;

use crate::markov::FactorSystem;
use crate::regions::RegionGraph;
use crate::table::log_sum_exp;

use super::{
    belief_delta, check_finite, compile, free_energy, uniform_beliefs, zero_edge_tables,
    BeliefState, CompiledGraph, EngineConfig, PropagateError, RegionRun,
};

const PROB_UNDERFLOW_FLOOR: f64 = 1e-300;

/// Run CCCP to convergence (belief change below `epsilon`) or the iteration
/// cap; non-convergence is reported in the returned state rather than as an
/// error.
pub fn cccp_run(
    graph: &RegionGraph,
    fs: &FactorSystem,
    masks: &[Vec<bool>],
    cfg: &EngineConfig,
) -> Result<RegionRun, PropagateError> {
    let compiled = compile(graph, fs, masks, cfg)?;
    let state = run_compiled(&compiled, cfg)?;
    Ok(RegionRun { compiled, state })
}

fn run_compiled(
    compiled: &CompiledGraph,
    cfg: &EngineConfig,
) -> Result<BeliefState, PropagateError> {
    let n = compiled.regions.len();
    let c_max = compiled.c_max;
    if c_max <= 0.0 {
        return Err(PropagateError::NumericalFailure(
            "max counting number must be positive".into(),
        ));
    }
    let mut log_b = uniform_beliefs(compiled);
    let mut lambda = zero_edge_tables(compiled);
    let mut log_h: Vec<Vec<f64>> = compiled.regions.iter().map(|r| vec![0.0; r.size]).collect();
    let mut prob: Vec<Vec<f64>> = compiled.regions.iter().map(|r| vec![0.0; r.size]).collect();
    let mut prev = log_b.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let max_size = compiled.regions.iter().map(|r| r.size).max().unwrap_or(1);
    let mut scratch = vec![0.0f64; max_size];

    for outer in 0..cfg.max_outer_iterations {
        iterations = outer + 1;
        // Freeze h from the current beliefs.
        for r in 0..n {
            let region = &compiled.regions[r];
            let scale = region.counting / c_max;
            let keep = (c_max - region.counting) / c_max;
            let z = log_sum_exp(&log_b[r]);
            for x in 0..region.size {
                // E_r(x) = -log_factor; h = exp(-scale (E+1)) b^keep.
                log_h[r][x] =
                    scale * (region.log_factor[x] - 1.0) + keep * (log_b[r][x] - z);
            }
        }
        // Rebuild beliefs from h and the current multipliers, then move to
        // probability space for the sweeps.
        for r in 0..n {
            rebuild_belief(compiled, &log_h, &lambda, r, &mut log_b[r]);
            for (p, &l) in prob[r].iter_mut().zip(&log_b[r]) {
                *p = l.exp().max(PROB_UNDERFLOW_FLOOR);
            }
        }

        // Inner loop: drive the consistency constraints.
        for _ in 0..cfg.max_inner_iterations {
            let mut worst = 0.0f64;
            if cfg.parallelism > 1 {
                for batch in &compiled.batches {
                    // Phase 1: correction ratios from the current beliefs.
                    // Edges in a batch share no region, so reads are stable
                    // and the phase runs in parallel; phase 2 applies them,
                    // and the order cannot matter within a batch.
                    let ratios: Vec<(usize, Vec<f64>)> = batch
                        .par_iter()
                        .map(|&e| (e, edge_ratios(compiled, &prob, e)))
                        .collect();
                    for (e, r) in ratios {
                        worst = worst.max(apply_ratios(
                            compiled,
                            &mut prob,
                            &mut lambda,
                            e,
                            &r,
                        ));
                    }
                }
            } else {
                for e in compiled.schedule.iter().copied() {
                    let edge = &compiled.edges[e];
                    let child_size = compiled.regions[edge.child].size;
                    marginal_ratios(compiled, &prob, e, &mut scratch[..child_size]);
                    worst = worst.max(apply_ratios(
                        compiled,
                        &mut prob,
                        &mut lambda,
                        e,
                        &scratch[..child_size],
                    ));
                }
            }
            if !worst.is_finite() {
                return Err(PropagateError::NumericalFailure(
                    "multiplier update diverged".into(),
                ));
            }
            if worst < cfg.inner_tolerance {
                break;
            }
        }

        // Back to log space for the h update and the convergence test.
        for r in 0..n {
            for (l, &p) in log_b[r].iter_mut().zip(&prob[r]) {
                *l = p.max(PROB_UNDERFLOW_FLOOR).ln();
            }
        }
        check_finite(&log_b)?;
        trace.push(free_energy(compiled, &log_b));
        let delta = belief_delta(compiled, &log_b, &prev);
        if delta < cfg.epsilon {
            converged = true;
            break;
        }
        prev.clone_from(&log_b);
    }

    Ok(BeliefState {
        log_beliefs: log_b,
        iterations,
        converged,
        free_energy_trace: trace,
        gbp_messages: None,
        cccp_multipliers: Some(lambda),
    })
}

/// Correction ratios for one edge: parent marginal over child belief, per
/// child state (this is the `exp(2 delta)` factor of the multiplier rule).
fn marginal_ratios(compiled: &CompiledGraph, prob: &[Vec<f64>], e: usize, out: &mut [f64]) {
    let edge = &compiled.edges[e];
    let parent = &prob[edge.parent];
    let child = &prob[edge.child];
    for (j, slot) in out.iter_mut().enumerate() {
        let seg = &edge.seg.order
            [edge.seg.offsets[j] as usize..edge.seg.offsets[j + 1] as usize];
        let mut sum = 0.0;
        for &i in seg {
            sum += parent[i as usize];
        }
        *slot = sum.max(PROB_UNDERFLOW_FLOOR) / child[j];
    }
}

fn edge_ratios(compiled: &CompiledGraph, prob: &[Vec<f64>], e: usize) -> Vec<f64> {
    let child_size = compiled.regions[compiled.edges[e].child].size;
    let mut out = vec![0.0f64; child_size];
    marginal_ratios(compiled, prob, e, &mut out);
    out
}

/// Apply one multiplier step from precomputed ratios and refresh the two
/// touched beliefs; returns the worst correction `|ratio - 1|`.
fn apply_ratios(
    compiled: &CompiledGraph,
    prob: &mut [Vec<f64>],
    lambda: &mut [Vec<f64>],
    e: usize,
    ratios: &[f64],
) -> f64 {
    let edge = &compiled.edges[e];
    let mut worst = 0.0f64;
    for (x, &r) in ratios.iter().enumerate() {
        worst = worst.max((r - 1.0).abs());
        lambda[e][x] += 0.5 * r.ln();
    }
    let (p, c) = (edge.parent, edge.child);
    // b_p picks up ratio^(-1/2), b_c picks up ratio^(+1/2); renormalize by
    // plain sums.
    let mut sum = 0.0;
    for (x, b) in prob[p].iter_mut().enumerate() {
        *b /= ratios[edge.proj[x] as usize].sqrt();
        sum += *b;
    }
    let inv = 1.0 / sum;
    for b in prob[p].iter_mut() {
        *b = (*b * inv).max(PROB_UNDERFLOW_FLOOR);
    }
    let mut sum = 0.0;
    for (b, &r) in prob[c].iter_mut().zip(ratios) {
        *b *= r.sqrt();
        sum += *b;
    }
    let inv = 1.0 / sum;
    for b in prob[c].iter_mut() {
        *b = (*b * inv).max(PROB_UNDERFLOW_FLOOR);
    }
    worst
}

/// Belief from scratch: `log b = log h + sum_in lambda - sum_out lambda`,
/// normalized (the normalization solves the gamma multiplier exactly).
fn rebuild_belief(
    compiled: &CompiledGraph,
    log_h: &[Vec<f64>],
    lambda: &[Vec<f64>],
    r: usize,
    out: &mut Vec<f64>,
) {
    let region = &compiled.regions[r];
    out.clear();
    out.extend_from_slice(&log_h[r]);
    for &e in &region.in_edges {
        for (x, l) in lambda[e].iter().enumerate() {
            out[x] += l;
        }
    }
    for &e in &region.out_edges {
        let proj = &compiled.edges[e].proj;
        for x in 0..region.size {
            out[x] -= lambda[e][proj[x] as usize];
        }
    }
    let z = log_sum_exp(out);
    if z.is_finite() {
        for x in out.iter_mut() {
            *x -= z;
        }
    }
}


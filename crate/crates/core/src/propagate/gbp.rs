//! Two-way generalized belief propagation over the region graph.
//!
//! Each parent-child edge carries a downward message `m` and an upward
//! message `n`, both over the child's variables. A sweep updates the
//! downward messages in level order and the upward ones in reverse, forming
//! the pseudo-messages
//! `m0 = sum over parent \ child of (f~_p * in-messages * other upward)`
//! and `n0 = f~_r * other in-messages * upward` (no marginalization), and
//! blending them with the exponent `beta = 1 / (2 - (1 - c_r) / p_r)`:
//! `m <- m0^beta * n0^(beta-1)`, `n <- m0^(beta-1) * n0^beta`. Updates are
//! geometrically damped. `f~_r` is the factor product raised to the
//! region's counting number, which is the factor product itself on level 1
//! and one elsewhere.
//!
//! GBP carries no convergence guarantee. The run tracks the local
//! consistency residual (which vanishes exactly at a GBP fixed point) every
//! sweep and, if the epsilon criterion is never met, hands back the most
//! consistent belief snapshot seen instead of the last iterate.

use crate::markov::FactorSystem;
use crate::regions::RegionGraph;
use crate::table::log_marginalize_into;

use super::{
    belief_delta, check_finite, compile, free_energy, normalized, uniform_beliefs,
    zero_edge_tables, BeliefState, CompiledGraph, EngineConfig, PropagateError, RegionRun,
};

/// Run damped two-way GBP until the belief change drops below `epsilon` or
/// the sweep cap is reached. Non-finite messages or beliefs raise
/// `NumericalFailure`.
pub fn gbp_run(
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
    // Scaled log factors: counting number times the log factor product.
    let scaled: Vec<Vec<f64>> = compiled
        .regions
        .iter()
        .map(|r| r.log_factor.iter().map(|&x| r.counting * x).collect())
        .collect();
    let mut down = zero_edge_tables(compiled); // m_{p->r}
    let mut up = zero_edge_tables(compiled); // n_{r->p}
    let mut log_b = uniform_beliefs(compiled);
    let mut prev = log_b.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut best_gap = f64::INFINITY;
    let mut best_beliefs: Option<Vec<Vec<f64>>> = None;

    for sweep in 0..cfg.max_outer_iterations {
        iterations = sweep + 1;
        // Downward pass in level order, then upward pass in reverse, so a
        // sweep carries information from the outer regions to the deepest
        // level and back.
        for &e in &compiled.schedule {
            let (m0, n0) = pseudo_messages(compiled, &scaled, &down, &up, e);
            apply_update(compiled, &mut down, e, &m0, &n0, cfg.damping, true)?;
        }
        for &e in compiled.schedule.iter().rev() {
            let (m0, n0) = pseudo_messages(compiled, &scaled, &down, &up, e);
            apply_update(compiled, &mut up, e, &m0, &n0, cfg.damping, false)?;
        }

        // Beliefs from the current messages.
        for r in 0..n {
            let region = &compiled.regions[r];
            let table = &mut log_b[r];
            table.copy_from_slice(&scaled[r]);
            for &e in &region.in_edges {
                for (x, v) in down[e].iter().enumerate() {
                    table[x] += v;
                }
            }
            for &e in &region.out_edges {
                let proj = &compiled.edges[e].proj;
                for x in 0..region.size {
                    table[x] += up[e][proj[x] as usize];
                }
            }
            let z = crate::table::log_sum_exp(table);
            if !z.is_finite() {
                return Err(PropagateError::NumericalFailure(
                    "belief normalizer is not finite".into(),
                ));
            }
            for x in table.iter_mut() {
                *x -= z;
            }
        }
        check_finite(&log_b)?;
        trace.push(free_energy(compiled, &log_b));
        let gap = consistency_gap(compiled, &log_b);
        if gap < best_gap {
            best_gap = gap;
            best_beliefs = Some(log_b.clone());
        }
        let delta = belief_delta(compiled, &log_b, &prev);
        if delta < cfg.epsilon {
            converged = true;
            break;
        }
        prev.clone_from(&log_b);
    }

    if !converged {
        if let Some(best) = best_beliefs {
            log_b = best;
        }
    }
    Ok(BeliefState {
        log_beliefs: log_b,
        iterations,
        converged,
        free_energy_trace: trace,
        gbp_messages: Some(down.into_iter().zip(up).collect()),
        cccp_multipliers: None,
    })
}

/// Worst violation of the running-intersection constraints: the max
/// per-state gap between a parent's implied marginal and its child's
/// belief, linear space.
fn consistency_gap(compiled: &CompiledGraph, log_b: &[Vec<f64>]) -> f64 {
    let mut scratch = vec![0.0f64; compiled.regions.iter().map(|r| r.size).max().unwrap_or(1)];
    let mut gap = 0.0f64;
    for edge in &compiled.edges {
        let child_size = compiled.regions[edge.child].size;
        edge.seg
            .log_marginalize(&log_b[edge.parent], &mut scratch[..child_size]);
        let z = crate::table::log_sum_exp(&scratch[..child_size]);
        for (m, b) in scratch[..child_size].iter().zip(&log_b[edge.child]) {
            gap = gap.max(((m - z).exp() - b.exp()).abs());
        }
    }
    gap
}

/// Pseudo-messages for one edge: the would-be downward message (parent
/// belief without this edge's upward factor, marginalized onto the child)
/// and the would-be upward message (child belief without this edge's
/// downward factor).
fn pseudo_messages(
    compiled: &CompiledGraph,
    scaled: &[Vec<f64>],
    down: &[Vec<f64>],
    up: &[Vec<f64>],
    e: usize,
) -> (Vec<f64>, Vec<f64>) {
    let edge = &compiled.edges[e];
    let (p, c) = (edge.parent, edge.child);
    let parent_size = compiled.regions[p].size;
    let mut work = vec![0.0f64; parent_size];
    work.copy_from_slice(&scaled[p]);
    for &e2 in &compiled.regions[p].in_edges {
        for (x, v) in down[e2].iter().enumerate() {
            work[x] += v;
        }
    }
    for &e2 in &compiled.regions[p].out_edges {
        if e2 == e {
            continue;
        }
        let proj = &compiled.edges[e2].proj;
        for x in 0..parent_size {
            work[x] += up[e2][proj[x] as usize];
        }
    }
    let child_size = compiled.regions[c].size;
    let mut m0 = vec![0.0f64; child_size];
    log_marginalize_into(&work, &edge.proj, &mut m0);

    let mut n0 = vec![0.0f64; child_size];
    n0.copy_from_slice(&scaled[c]);
    for &e2 in &compiled.regions[c].in_edges {
        if e2 == e {
            continue;
        }
        for (x, v) in down[e2].iter().enumerate() {
            n0[x] += v;
        }
    }
    for &e2 in &compiled.regions[c].out_edges {
        let proj = &compiled.edges[e2].proj;
        for x in 0..child_size {
            n0[x] += up[e2][proj[x] as usize];
        }
    }
    (m0, n0)
}

/// Blend the pseudo-messages with the region exponent and damp into the
/// stored table: `m <- m0^beta n0^(beta-1)`, `n <- m0^(beta-1) n0^beta`.
fn apply_update(
    compiled: &CompiledGraph,
    store: &mut [Vec<f64>],
    e: usize,
    m0: &[f64],
    n0: &[f64],
    damping: f64,
    downward: bool,
) -> Result<(), PropagateError> {
    let beta = compiled.edges[e].beta;
    let blended: Vec<f64> = if downward {
        m0.iter()
            .zip(n0)
            .map(|(a, b)| beta * a + (beta - 1.0) * b)
            .collect()
    } else {
        m0.iter()
            .zip(n0)
            .map(|(a, b)| (beta - 1.0) * a + beta * b)
            .collect()
    };
    let blended = normalized(blended);
    for (x, v) in blended.iter().enumerate() {
        store[e][x] = damping * store[e][x] + (1.0 - damping) * v;
        if store[e][x].is_nan() {
            return Err(PropagateError::NumericalFailure(
                "message update produced NaN".into(),
            ));
        }
    }
    Ok(())
}

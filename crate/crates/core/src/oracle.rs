//! Exact inference oracles and comparison metrics.
//!
//! Two independent exact routes are provided: full joint enumeration (the
//! brute-force reference) and variable elimination with a min-fill order
//! (the scalable route for high tree-width factorized models, whose peak
//! table is exponential in the tree width but fine at desk scale). Reports
//! are compared with KL distance oriented `KL(exact || approx)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    joint_assignment_iterator, DiscreteNetwork, Evidence, VarId, PROB_FLOOR,
};
use crate::propagate::{MarginalReport, VariableMarginal};
use crate::table::{normalize, projection_map, Table};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("distributions have different support ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("variable sets differ between reports")]
    VariableSetMismatch,
    #[error("evidence has zero probability")]
    ZeroProbabilityEvidence,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Resource guards for the exact methods.
#[derive(Debug, Clone, Copy)]
pub struct OracleCaps {
    /// Max joint assignments enumeration may visit.
    pub enumeration: u128,
    /// Max entries of any intermediate elimination table.
    pub elimination_entries: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self {
            enumeration: crate::model::DEFAULT_ENUMERATION_CAP,
            elimination_entries: 1 << 26,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMethod {
    /// Enumerate when small, eliminate otherwise.
    Auto,
    Enumeration,
    Elimination,
}

/// Exact posterior marginals for every variable.
pub fn exact_marginals(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    method: ExactMethod,
    caps: OracleCaps,
) -> Result<MarginalReport, OracleError> {
    let assignments: u128 = net
        .var_ids()
        .filter(|v| evidence.get(*v).is_none())
        .fold(1u128, |acc, v| acc.saturating_mul(net.arity(v) as u128));
    let (marginals, method_name) = match method {
        ExactMethod::Enumeration => (enumeration_marginals(net, evidence, caps)?, "exact-enum"),
        ExactMethod::Elimination => (elimination_marginals(net, evidence, caps)?, "exact-ve"),
        ExactMethod::Auto => {
            if assignments <= (1 << 20).min(caps.enumeration) {
                (enumeration_marginals(net, evidence, caps)?, "exact-enum")
            } else {
                (elimination_marginals(net, evidence, caps)?, "exact-ve")
            }
        }
    };
    let variables = net
        .var_ids()
        .map(|v| {
            let probs = marginals[v.index()].clone();
            VariableMarginal {
                name: net.name(v).to_string(),
                states: net.var(v).states.clone(),
                mean: probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (k + 1) as f64 * p)
                    .sum(),
                probs,
            }
        })
        .collect();
    Ok(MarginalReport {
        method: method_name.to_string(),
        variables,
        iterations: 0,
        converged: true,
        epsilon: None,
        free_energy_trace: vec![],
        max_consistency_gap: 0.0,
        region_count: 0,
        table_entries: 0,
    })
}

fn enumeration_marginals(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    caps: OracleCaps,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let mut acc: Vec<Vec<f64>> = net.var_ids().map(|v| vec![0.0; net.arity(v)]).collect();
    let iter = joint_assignment_iterator(net, evidence, Some(caps.enumeration))
        .map_err(|e| match e {
            crate::model::ModelError::TooLarge { needed, cap } => {
                OracleError::TooLarge(format!("{needed} assignments exceed cap {cap}"))
            }
            other => OracleError::Model(other),
        })?;
    let mut total = 0.0;
    for (assignment, p) in iter {
        total += p;
        for v in net.var_ids() {
            acc[v.index()][assignment[v.index()]] += p;
        }
    }
    if total <= 0.0 {
        return Err(OracleError::ZeroProbabilityEvidence);
    }
    for dist in &mut acc {
        normalize(dist);
    }
    Ok(acc)
}

fn elimination_marginals(
    net: &DiscreteNetwork,
    evidence: &Evidence,
    caps: OracleCaps,
) -> Result<Vec<Vec<f64>>, OracleError> {
    // CPT factors with evidence clamped to exact zeros.
    let base: Vec<Table> = net
        .var_ids()
        .map(|v| clamped_cpd_table(net, v, evidence))
        .collect();
    let order = min_fill_order(net);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(net.len());
    for q in net.var_ids() {
        out.push(eliminate_for_query(net, &base, &order, q, caps)?);
    }
    Ok(out)
}

fn clamped_cpd_table(net: &DiscreteNetwork, v: VarId, evidence: &Evidence) -> Table {
    let mut scope: Vec<VarId> = net.parents(v).to_vec();
    scope.push(v);
    scope.sort();
    let dims: Vec<usize> = scope.iter().map(|&x| net.arity(x)).collect();
    let size: usize = dims.iter().product();
    let mut values = vec![0.0; size];
    let cpt = net.cpt(v);
    let arity = net.arity(v);
    let mut digits = vec![0usize; scope.len()];
    for (idx, slot) in values.iter_mut().enumerate() {
        crate::model::decode_row(idx, &dims, &mut digits);
        let consistent = scope
            .iter()
            .zip(&digits)
            .all(|(s, &d)| evidence.get(*s).map_or(true, |obs| obs == d));
        if !consistent {
            continue;
        }
        let mut row = 0usize;
        for &p in &cpt.parents {
            let pos = scope.iter().position(|s| *s == p).unwrap();
            row = row * net.arity(p) + digits[pos];
        }
        let pos_v = scope.iter().position(|s| *s == v).unwrap();
        *slot = cpt.values[row * arity + digits[pos_v]];
    }
    Table::new(scope, dims, values)
}

/// Min-fill elimination order over the moral interaction graph.
fn min_fill_order(net: &DiscreteNetwork) -> Vec<VarId> {
    let mut neighbors: BTreeMap<VarId, BTreeSet<VarId>> =
        net.var_ids().map(|v| (v, BTreeSet::new())).collect();
    let connect = |a: VarId, b: VarId, nb: &mut BTreeMap<VarId, BTreeSet<VarId>>| {
        nb.get_mut(&a).unwrap().insert(b);
        nb.get_mut(&b).unwrap().insert(a);
    };
    for v in net.var_ids() {
        let mut family: Vec<VarId> = net.parents(v).to_vec();
        family.push(v);
        for i in 0..family.len() {
            for j in i + 1..family.len() {
                connect(family[i], family[j], &mut neighbors);
            }
        }
    }
    let mut order = Vec::with_capacity(net.len());
    let mut remaining: BTreeSet<VarId> = net.var_ids().collect();
    while !remaining.is_empty() {
        // Fewest fill-in edges; ties by id for determinism.
        let best = remaining
            .iter()
            .copied()
            .min_by_key(|&v| {
                let nb: Vec<VarId> = neighbors[&v]
                    .iter()
                    .copied()
                    .filter(|n| remaining.contains(n))
                    .collect();
                let mut fill = 0usize;
                for i in 0..nb.len() {
                    for j in i + 1..nb.len() {
                        if !neighbors[&nb[i]].contains(&nb[j]) {
                            fill += 1;
                        }
                    }
                }
                (fill, v.0)
            })
            .unwrap();
        let nb: Vec<VarId> = neighbors[&best]
            .iter()
            .copied()
            .filter(|n| remaining.contains(n))
            .collect();
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                connect(nb[i], nb[j], &mut neighbors);
            }
        }
        remaining.remove(&best);
        order.push(best);
    }
    order
}

fn eliminate_for_query(
    net: &DiscreteNetwork,
    base: &[Table],
    order: &[VarId],
    query: VarId,
    caps: OracleCaps,
) -> Result<Vec<f64>, OracleError> {
    let mut factors: Vec<Table> = base.to_vec();
    for &v in order {
        if v == query {
            continue;
        }
        let (touching, rest): (Vec<Table>, Vec<Table>) =
            factors.into_iter().partition(|f| f.vars.contains(&v));
        factors = rest;
        if touching.is_empty() {
            continue;
        }
        let product = multiply_all(&touching, caps)?;
        factors.push(sum_out(&product, v));
    }
    let product = multiply_all(&factors, caps)?;
    // Remaining scope is at most {query}; project and normalize.
    let mut dist = if product.vars.is_empty() {
        vec![product.values[0]; net.arity(query)]
    } else {
        let arity = net.arity(query);
        let map = projection_map(&product.vars, &product.dims, &[query], &[arity]);
        let mut out = vec![0.0; arity];
        for (i, &m) in map.iter().enumerate() {
            out[m as usize] += product.values[i];
        }
        out
    };
    if normalize(&mut dist) <= 0.0 {
        return Err(OracleError::ZeroProbabilityEvidence);
    }
    Ok(dist)
}

fn multiply_all(tables: &[Table], caps: OracleCaps) -> Result<Table, OracleError> {
    let mut scope: Vec<VarId> = Vec::new();
    for t in tables {
        for &v in &t.vars {
            if !scope.contains(&v) {
                scope.push(v);
            }
        }
    }
    scope.sort();
    let mut dims = Vec::with_capacity(scope.len());
    let mut size: usize = 1;
    for (i, &v) in scope.iter().enumerate() {
        let d = tables
            .iter()
            .find_map(|t| {
                t.vars
                    .iter()
                    .position(|w| *w == v)
                    .map(|p| t.dims[p])
            })
            .unwrap();
        dims.push(d);
        size = size.saturating_mul(d);
        if size > caps.elimination_entries {
            return Err(OracleError::TooLarge(format!(
                "elimination table over {} variables exceeds {} entries",
                i + 1,
                caps.elimination_entries
            )));
        }
    }
    let mut values = vec![1.0f64; size];
    for t in tables {
        let map = projection_map(&scope, &dims, &t.vars, &t.dims);
        for (i, value) in values.iter_mut().enumerate() {
            *value *= t.values[map[i] as usize];
        }
    }
    Ok(Table::new(scope, dims, values))
}

fn sum_out(table: &Table, v: VarId) -> Table {
    let keep_vars: Vec<VarId> = table.vars.iter().copied().filter(|&x| x != v).collect();
    let keep_dims: Vec<usize> = table
        .vars
        .iter()
        .zip(&table.dims)
        .filter(|(x, _)| **x != v)
        .map(|(_, d)| *d)
        .collect();
    let size: usize = keep_dims.iter().product::<usize>().max(1);
    let mut values = vec![0.0; size];
    let map = projection_map(&table.vars, &table.dims, &keep_vars, &keep_dims);
    for (i, &m) in map.iter().enumerate() {
        values[m as usize] += table.values[i];
    }
    Table::new(keep_vars, keep_dims, values)
}

/// `KL(p || q) = sum p ln(p/q)` with `q` floored at 1e-12.
pub fn kl_distance(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    if p.len() != q.len() {
        return Err(OracleError::SupportMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            kl += a * (a / b.max(PROB_FLOOR)).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Per-variable comparison row.
#[derive(Debug, Clone, Serialize)]
pub struct VariableComparison {
    pub name: String,
    pub kl: f64,
    pub mean_approx: f64,
    pub mean_exact: f64,
}

/// Summary of an approximate run against the exact oracle, in the
/// max/min/average KL format the experiment tables use.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<VariableComparison>,
    pub max_kl: f64,
    pub min_kl: f64,
    pub average_kl: f64,
    pub mean_abs_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>12} {:>10} {:>10}", "variable", "KL", "mean", "exact")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>12.3e} {:>10.4} {:>10.4}",
                r.name, r.kl, r.mean_approx, r.mean_exact
            )?;
        }
        writeln!(f, "max(KL)     = {:.3e}", self.max_kl)?;
        writeln!(f, "min(KL)     = {:.3e}", self.min_kl)?;
        writeln!(f, "average(KL) = {:.3e}", self.average_kl)?;
        writeln!(f, "mean |mean error| = {:.3e}", self.mean_abs_error)?;
        write!(f, "iterations = {} converged = {}", self.iterations, self.converged)
    }
}

/// Compare an approximate report against an exact one, matching variables
/// by name. Every variable of the approximate report must exist in the
/// exact one (the oracle may cover more, e.g. carrier variables).
pub fn compare_report(
    approx: &MarginalReport,
    exact: &MarginalReport,
) -> Result<Comparison, OracleError> {
    let mut rows = Vec::with_capacity(approx.variables.len());
    let mut abs_err = 0.0;
    for a in &approx.variables {
        let e = exact
            .marginal(&a.name)
            .ok_or(OracleError::VariableSetMismatch)?;
        let kl = kl_distance(&e.probs, &a.probs)?;
        abs_err += (a.mean - e.mean).abs();
        rows.push(VariableComparison {
            name: a.name.clone(),
            kl,
            mean_approx: a.mean,
            mean_exact: e.mean,
        });
    }
    let kls: Vec<f64> = rows.iter().map(|r| r.kl).collect();
    Ok(Comparison {
        max_kl: kls.iter().copied().fold(0.0, f64::max),
        min_kl: kls.iter().copied().fold(f64::INFINITY, f64::min),
        average_kl: kls.iter().sum::<f64>() / kls.len().max(1) as f64,
        mean_abs_error: abs_err / rows.len().max(1) as f64,
        iterations: approx.iterations,
        converged: approx.converged,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;

    #[test]
    fn dbn_prior_means() {
        let net = crate::format::dbn3_network();
        let report =
            exact_marginals(&net, &Evidence::empty(), ExactMethod::Enumeration, OracleCaps::default())
                .unwrap();
        let s1 = report.marginal("s1").unwrap();
        assert!((s1.mean - 1.2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_chain_is_degenerate() {
        let text = "trcnet 1\nvar A : 1 2\nvar B : 1 2\ncpt A : 1.0 0.0\ncpt B | A : 1.0 0.0 0.0 1.0\n";
        let net = crate::format::parse_network(text).unwrap();
        let report =
            exact_marginals(&net, &Evidence::empty(), ExactMethod::Auto, OracleCaps::default())
                .unwrap();
        assert_eq!(report.marginal("B").unwrap().probs, vec![1.0, 0.0]);
    }

    #[test]
    fn enumeration_and_elimination_agree() {
        for seed in [1u64, 2] {
            let net = generate::complete_network(6, 2, seed);
            let mut ev = Evidence::empty();
            ev.set(&net, VarId(5), 1).unwrap();
            let a = exact_marginals(&net, &ev, ExactMethod::Enumeration, OracleCaps::default())
                .unwrap();
            let b = exact_marginals(&net, &ev, ExactMethod::Elimination, OracleCaps::default())
                .unwrap();
            for (x, y) in a.variables.iter().zip(&b.variables) {
                for (p, q) in x.probs.iter().zip(&y.probs) {
                    assert!((p - q).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bfg_and_source_have_identical_marginals() {
        let net = generate::complete_network(6, 2, 4);
        let (bfg, _) = crate::factorize::binary_factorize(&net).unwrap();
        let a = exact_marginals(&net, &Evidence::empty(), ExactMethod::Elimination, OracleCaps::default())
            .unwrap();
        let b = exact_marginals(&bfg, &Evidence::empty(), ExactMethod::Elimination, OracleCaps::default())
            .unwrap();
        for v in net.var_ids() {
            let name = net.name(v);
            let pa = &a.marginal(name).unwrap().probs;
            let pb = &b.marginal(name).unwrap().probs;
            for (x, y) in pa.iter().zip(pb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn kl_basics() {
        assert_eq!(kl_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let kl = kl_distance(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-12);
        assert!(kl_distance(&[1.0], &[0.5, 0.5]).is_err());
        // Never negative, even with flooring in play.
        assert!(kl_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap() >= 0.0);
    }

    #[test]
    fn enumeration_refuses_large_networks() {
        let net = generate::kappa_bfg_network(40, 2, 1);
        let result = exact_marginals(
            &net,
            &Evidence::empty(),
            ExactMethod::Enumeration,
            OracleCaps::default(),
        );
        assert!(matches!(result, Err(OracleError::TooLarge(_))));
    }

    #[test]
    fn comparison_of_identical_reports_is_zero() {
        let net = generate::complete_network(4, 2, 1);
        let report =
            exact_marginals(&net, &Evidence::empty(), ExactMethod::Auto, OracleCaps::default())
                .unwrap();
        let cmp = compare_report(&report, &report).unwrap();
        assert_eq!(cmp.max_kl, 0.0);
        assert_eq!(cmp.mean_abs_error, 0.0);
    }
}

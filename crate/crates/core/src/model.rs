//! Discrete Bayesian network representation, validation, node ordering and
//! evidence handling.
//!
//! A network is a list of variable declarations plus one conditional
//! probability table per variable; the edge set is implied by the CPT parent
//! lists. CPT rows follow a fixed convention used everywhere in this crate:
//! parent-state combinations enumerate lexicographically over the declared
//! parent list with the **last parent varying fastest**, and the child state
//! varies fastest within a row. `p(B|A) = (0.1, 0.9, 0.2, 0.8)` therefore
//! reads `A=state0 -> (0.1, 0.9)`, `A=state1 -> (0.2, 0.8)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Row-sum tolerance used by validation.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Probabilities below this are floored during inference to avoid log(0).
pub const PROB_FLOOR: f64 = 1e-12;

/// Default cap on the number of joint assignments enumeration will visit.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 24;

/// Index of a variable within its network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Whether a variable came from the modeller or was introduced by binary
/// factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Original,
    Intermediate,
}

/// A discrete variable: name plus ordered state labels.
///
/// The numeric value of state `k` is `k + 1` for mean-value reporting, so a
/// binary variable with states `"1"`, `"2"` has mean `1*p0 + 2*p1`.
#[derive(Debug, Clone, Serialize)]
pub struct VariableDecl {
    pub name: String,
    pub states: Vec<String>,
    pub kind: VarKind,
}

impl VariableDecl {
    pub fn new(name: impl Into<String>, states: Vec<String>) -> Self {
        Self {
            name: name.into(),
            states,
            kind: VarKind::Original,
        }
    }

    /// Binary variable with states "1", "2".
    pub fn binary(name: impl Into<String>) -> Self {
        Self::numeric(name, 2)
    }

    /// Variable with `m` states labelled "1".."m".
    pub fn numeric(name: impl Into<String>, m: usize) -> Self {
        Self::new(name, (1..=m).map(|k| k.to_string()).collect())
    }

    pub fn intermediate(name: impl Into<String>, states: Vec<String>) -> Self {
        Self {
            name: name.into(),
            states,
            kind: VarKind::Intermediate,
        }
    }

    pub fn arity(&self) -> usize {
        self.states.len()
    }
}

/// Conditional probability table for one variable.
///
/// `values` is flat: `values[row * child_arity + child_state]`, with rows
/// enumerated over parent states per the module-level ordering convention.
#[derive(Debug, Clone, Serialize)]
pub struct Cpt {
    pub child: VarId,
    pub parents: Vec<VarId>,
    pub values: Vec<f64>,
}

impl Cpt {
    pub fn new(child: VarId, parents: Vec<VarId>, values: Vec<f64>) -> Self {
        Self {
            child,
            parents,
            values,
        }
    }

    /// Probability of `child_state` given the parent states (in declared
    /// parent order).
    pub fn prob(&self, parent_states: &[usize], parent_dims: &[usize], child_state: usize) -> f64 {
        let arity = self.values.len() / parent_dims.iter().product::<usize>().max(1);
        let row = row_index(parent_states, parent_dims);
        self.values[row * arity + child_state]
    }
}

/// Linear row index for a parent assignment: lexicographic, last parent
/// varying fastest.
pub fn row_index(states: &[usize], dims: &[usize]) -> usize {
    debug_assert_eq!(states.len(), dims.len());
    let mut idx = 0;
    for (s, d) in states.iter().zip(dims) {
        idx = idx * d + s;
    }
    idx
}

/// Inverse of [`row_index`]: decode a linear row into per-parent states.
pub fn decode_row(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        out[i] = idx % dims[i];
        idx /= dims[i];
    }
}

/// Errors for operations that need more than a validation report.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown state `{state}` for variable `{var}`")]
    UnknownState { var: String, state: String },
    #[error("state index {index} out of range for variable `{var}` ({arity} states)")]
    StateOutOfRange {
        var: String,
        index: usize,
        arity: usize,
    },
    #[error("graph is not a complete DAG: indegree multiset is not {{0..n-1}}")]
    NotComplete,
    #[error("joint enumeration needs {needed} assignments, cap is {cap}")]
    TooLarge { needed: u128, cap: u128 },
    #[error("network is cyclic")]
    Cyclic,
}

/// One violation found by [`DiscreteNetwork::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateVariable { name: String },
    TooFewStates { var: String, arity: usize },
    DuplicateState { var: String, label: String },
    Cycle { members: Vec<String> },
    RowCount { var: String, expected: usize, actual: usize },
    RowSum { var: String, row: usize, sum: f64 },
    EntryRange { var: String, offset: usize, value: f64 },
    UnknownParent { var: String, parent: String },
    SelfParent { var: String },
    DuplicateParent { var: String, parent: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateVariable { name } => write!(f, "duplicate variable `{name}`"),
            Violation::TooFewStates { var, arity } => {
                write!(f, "variable `{var}` has {arity} state(s), need at least 2")
            }
            Violation::DuplicateState { var, label } => {
                write!(f, "variable `{var}` repeats state label `{label}`")
            }
            Violation::Cycle { members } => {
                write!(f, "cycle through {{{}}}", members.join(", "))
            }
            Violation::RowCount { var, expected, actual } => write!(
                f,
                "CPT of `{var}` has {actual} rows, expected {expected}"
            ),
            Violation::RowSum { var, row, sum } => {
                write!(f, "CPT of `{var}` row {row} sums to {sum:.12}, expected 1")
            }
            Violation::EntryRange { var, offset, value } => write!(
                f,
                "CPT of `{var}` entry {offset} is {value}, outside [0, 1]"
            ),
            Violation::UnknownParent { var, parent } => {
                write!(f, "CPT of `{var}` names unknown parent `{parent}`")
            }
            Violation::SelfParent { var } => write!(f, "variable `{var}` is its own parent"),
            Violation::DuplicateParent { var, parent } => {
                write!(f, "CPT of `{var}` repeats parent `{parent}`")
            }
        }
    }
}

/// Validation outcome; empty iff the network satisfies every invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")
        } else {
            for v in &self.violations {
                writeln!(f, "- {v}")?;
            }
            Ok(())
        }
    }
}

/// A discrete Bayesian network: variables plus one CPT per variable.
///
/// Immutable after construction; inference runs may share it freely.
#[derive(Debug, Clone)]
pub struct DiscreteNetwork {
    vars: Vec<VariableDecl>,
    cpts: Vec<Cpt>,
    by_name: HashMap<String, VarId>,
}

impl DiscreteNetwork {
    /// Build a network from declarations and CPTs. `cpts` must be parallel to
    /// `vars` (one per variable, same order). Names must be unique; deeper
    /// invariants are left to [`validate`](Self::validate).
    pub fn new(vars: Vec<VariableDecl>, cpts: Vec<Cpt>) -> Result<Self, ModelError> {
        assert_eq!(vars.len(), cpts.len(), "one CPT per variable");
        let mut by_name = HashMap::new();
        for (i, v) in vars.iter().enumerate() {
            if by_name.insert(v.name.clone(), VarId(i as u32)).is_some() {
                return Err(ModelError::DuplicateVariable(v.name.clone()));
            }
        }
        Ok(Self { vars, cpts, by_name })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var_ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len() as u32).map(VarId)
    }

    pub fn var(&self, id: VarId) -> &VariableDecl {
        &self.vars[id.index()]
    }

    pub fn vars(&self) -> &[VariableDecl] {
        &self.vars
    }

    pub fn cpt(&self, id: VarId) -> &Cpt {
        &self.cpts[id.index()]
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    pub fn var_id(&self, name: &str) -> Result<VarId, ModelError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.vars[id.index()].name
    }

    pub fn arity(&self, id: VarId) -> usize {
        self.vars[id.index()].arity()
    }

    pub fn parents(&self, id: VarId) -> &[VarId] {
        &self.cpts[id.index()].parents
    }

    pub fn children(&self, id: VarId) -> Vec<VarId> {
        self.var_ids()
            .filter(|&c| self.parents(c).contains(&id))
            .collect()
    }

    /// Directed edge list (parent, child), derived from CPT parent lists.
    pub fn edges(&self) -> Vec<(VarId, VarId)> {
        let mut out = Vec::new();
        for c in self.var_ids() {
            for &p in self.parents(c) {
                out.push((p, c));
            }
        }
        out
    }

    pub fn max_indegree(&self) -> usize {
        self.cpts.iter().map(|c| c.parents.len()).max().unwrap_or(0)
    }

    pub fn has_intermediates(&self) -> bool {
        self.vars.iter().any(|v| v.kind == VarKind::Intermediate)
    }

    pub fn original_vars(&self) -> Vec<VarId> {
        self.var_ids()
            .filter(|&v| self.var(v).kind == VarKind::Original)
            .collect()
    }

    /// Kahn topological order, `None` if cyclic. Ties broken by declaration
    /// index, which makes the order deterministic.
    pub fn topological_order(&self) -> Option<Vec<VarId>> {
        self.topological_order_by(|a, b| a.cmp(&b))
    }

    /// Topological order with lexicographically smallest names first.
    pub fn lexicographic_topological_order(&self) -> Option<Vec<VarId>> {
        self.topological_order_by(|a, b| self.name(a).cmp(self.name(b)))
    }

    fn topological_order_by(
        &self,
        tie: impl Fn(VarId, VarId) -> std::cmp::Ordering,
    ) -> Option<Vec<VarId>> {
        let n = self.len();
        let mut indegree: Vec<usize> = (0..n).map(|i| self.cpts[i].parents.len()).collect();
        let mut ready: Vec<VarId> = self
            .var_ids()
            .filter(|v| indegree[v.index()] == 0)
            .collect();
        let mut order = Vec::with_capacity(n);
        while !ready.is_empty() {
            ready.sort_by(|&a, &b| tie(b, a)); // reversed: pop smallest last
            let next = ready.pop().unwrap();
            order.push(next);
            for c in self.var_ids() {
                if self.parents(c).contains(&next) {
                    indegree[c.index()] -= 1;
                    if indegree[c.index()] == 0 {
                        ready.push(c);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// True when every pair of variables is joined by a directed edge.
    pub fn is_complete_dag(&self) -> bool {
        let n = self.len();
        let edge_count: usize = self.cpts.iter().map(|c| c.parents.len()).sum();
        edge_count == n * (n - 1) / 2 && self.topological_order().is_some()
    }

    /// Check every structural and numerical invariant; report-style, so all
    /// violations are listed rather than failing on the first.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut seen = HashMap::new();
        for v in &self.vars {
            if seen.insert(v.name.as_str(), ()).is_some() {
                violations.push(Violation::DuplicateVariable {
                    name: v.name.clone(),
                });
            }
            if v.arity() < 2 {
                violations.push(Violation::TooFewStates {
                    var: v.name.clone(),
                    arity: v.arity(),
                });
            }
            let mut labels = HashMap::new();
            for s in &v.states {
                if labels.insert(s.as_str(), ()).is_some() {
                    violations.push(Violation::DuplicateState {
                        var: v.name.clone(),
                        label: s.clone(),
                    });
                }
            }
        }
        for (i, cpt) in self.cpts.iter().enumerate() {
            let var = &self.vars[i];
            let mut seen_parents = Vec::new();
            let mut parents_ok = true;
            for &p in &cpt.parents {
                if p.index() >= self.len() {
                    violations.push(Violation::UnknownParent {
                        var: var.name.clone(),
                        parent: format!("{p}"),
                    });
                    parents_ok = false;
                    continue;
                }
                if p.index() == i {
                    violations.push(Violation::SelfParent {
                        var: var.name.clone(),
                    });
                }
                if seen_parents.contains(&p) {
                    violations.push(Violation::DuplicateParent {
                        var: var.name.clone(),
                        parent: self.name(p).to_string(),
                    });
                }
                seen_parents.push(p);
            }
            if !parents_ok {
                continue;
            }
            let rows: usize = cpt.parents.iter().map(|&p| self.arity(p)).product();
            let arity = var.arity();
            if cpt.values.len() != rows * arity {
                violations.push(Violation::RowCount {
                    var: var.name.clone(),
                    expected: rows,
                    actual: cpt.values.len() / arity.max(1),
                });
                continue;
            }
            for (off, &x) in cpt.values.iter().enumerate() {
                if !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&x) || x.is_nan() {
                    violations.push(Violation::EntryRange {
                        var: var.name.clone(),
                        offset: off,
                        value: x,
                    });
                }
            }
            for row in 0..rows {
                let sum: f64 = cpt.values[row * arity..(row + 1) * arity].iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    violations.push(Violation::RowSum {
                        var: var.name.clone(),
                        row,
                        sum,
                    });
                }
            }
        }
        if self.topological_order().is_none() {
            // Name the variables still holding a nonzero indegree after Kahn.
            let mut indegree: Vec<usize> =
                (0..self.len()).map(|i| self.cpts[i].parents.len()).collect();
            let mut removed = vec![false; self.len()];
            loop {
                let Some(next) = self
                    .var_ids()
                    .find(|v| !removed[v.index()] && indegree[v.index()] == 0)
                else {
                    break;
                };
                removed[next.index()] = true;
                for c in self.var_ids() {
                    if !removed[c.index()] && self.parents(c).contains(&next) {
                        indegree[c.index()] -= 1;
                    }
                }
            }
            let members: Vec<String> = self
                .var_ids()
                .filter(|v| !removed[v.index()])
                .map(|v| self.name(v).to_string())
                .collect();
            violations.push(Violation::Cycle { members });
        }
        ValidationReport { violations }
    }
}

/// Report-style validation entry point.
pub fn validate_network(net: &DiscreteNetwork) -> ValidationReport {
    net.validate()
}

/// The unique ordering `X_1..X_n` of a complete DAG with
/// `indegree(X_i) = i - 1`.
///
/// A DAG on `n` nodes whose indegrees form the multiset `{0, 1, .., n-1}`
/// carries `n(n-1)/2` edges and is therefore complete, so the multiset check
/// doubles as the completeness test.
pub fn indegree_ordering(net: &DiscreteNetwork) -> Result<Vec<VarId>, ModelError> {
    let n = net.len();
    let mut by_indegree: Vec<Option<VarId>> = vec![None; n];
    for v in net.var_ids() {
        let d = net.parents(v).len();
        if d >= n || by_indegree[d].is_some() {
            return Err(ModelError::NotComplete);
        }
        by_indegree[d] = Some(v);
    }
    if net.topological_order().is_none() {
        return Err(ModelError::Cyclic);
    }
    Ok(by_indegree.into_iter().map(|v| v.unwrap()).collect())
}

/// Observed states, keyed by variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    assignments: BTreeMap<VarId, usize>,
}

impl Evidence {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn set(
        &mut self,
        net: &DiscreteNetwork,
        var: VarId,
        state: usize,
    ) -> Result<(), ModelError> {
        if state >= net.arity(var) {
            return Err(ModelError::StateOutOfRange {
                var: net.name(var).to_string(),
                index: state,
                arity: net.arity(var),
            });
        }
        self.assignments.insert(var, state);
        Ok(())
    }

    pub fn set_by_name(
        &mut self,
        net: &DiscreteNetwork,
        var: &str,
        state_label: &str,
    ) -> Result<(), ModelError> {
        let id = net.var_id(var)?;
        let state = net
            .var(id)
            .states
            .iter()
            .position(|s| s == state_label)
            .ok_or_else(|| ModelError::UnknownState {
                var: var.to_string(),
                state: state_label.to_string(),
            })?;
        self.assignments.insert(id, state);
        Ok(())
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.assignments.get(&var).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, usize)> + '_ {
        self.assignments.iter().map(|(&v, &s)| (v, s))
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Streaming enumeration of full joint assignments consistent with the
/// evidence, each with its chain-rule probability. The stream sums to the
/// prior probability of the evidence (1 when unobserved).
pub struct JointAssignmentIter<'a> {
    net: &'a DiscreteNetwork,
    free: Vec<VarId>,
    current: Vec<usize>,
    done: bool,
}

/// Enumerate `(assignment, probability)` pairs.
///
/// Fails with [`ModelError::TooLarge`] when the product of unobserved state
/// counts exceeds `cap` (default [`DEFAULT_ENUMERATION_CAP`]).
pub fn joint_assignment_iterator<'a>(
    net: &'a DiscreteNetwork,
    evidence: &Evidence,
    cap: Option<u128>,
) -> Result<JointAssignmentIter<'a>, ModelError> {
    let cap = cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    let free: Vec<VarId> = net
        .var_ids()
        .filter(|v| evidence.get(*v).is_none())
        .collect();
    let mut needed: u128 = 1;
    for &v in &free {
        needed = needed.saturating_mul(net.arity(v) as u128);
        if needed > cap {
            return Err(ModelError::TooLarge { needed, cap });
        }
    }
    let mut current = vec![0usize; net.len()];
    for (v, s) in evidence.iter() {
        current[v.index()] = s;
    }
    Ok(JointAssignmentIter {
        net,
        free,
        current,
        done: false,
    })
}

impl JointAssignmentIter<'_> {
    fn joint(&self) -> f64 {
        let mut p = 1.0;
        for v in self.net.var_ids() {
            let cpt = self.net.cpt(v);
            let arity = self.net.arity(v);
            let mut row = 0usize;
            for &q in &cpt.parents {
                row = row * self.net.arity(q) + self.current[q.index()];
            }
            p *= cpt.values[row * arity + self.current[v.index()]];
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }
}

impl Iterator for JointAssignmentIter<'_> {
    type Item = (Vec<usize>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = (self.current.clone(), self.joint());
        // Odometer step over the free variables, last fastest.
        let mut i = self.free.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            let v = self.free[i];
            self.current[v.index()] += 1;
            if self.current[v.index()] < self.net.arity(v) {
                break;
            }
            self.current[v.index()] = 0;
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;

    fn two_node_cycle() -> DiscreteNetwork {
        let vars = vec![VariableDecl::binary("A"), VariableDecl::binary("B")];
        let cpts = vec![
            Cpt::new(VarId(0), vec![VarId(1)], vec![0.5, 0.5, 0.5, 0.5]),
            Cpt::new(VarId(1), vec![VarId(0)], vec![0.5, 0.5, 0.5, 0.5]),
        ];
        DiscreteNetwork::new(vars, cpts).unwrap()
    }

    #[test]
    fn asia_is_valid() {
        let net = crate::format::asia_network();
        assert!(net.validate().is_valid(), "{}", net.validate());
        assert_eq!(net.len(), 8);
        assert_eq!(net.max_indegree(), 2);
    }

    #[test]
    fn cycle_is_reported() {
        let report = two_node_cycle().validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let vars = vec![VariableDecl::binary("A")];
        let cpts = vec![Cpt::new(VarId(0), vec![], vec![0.5, 0.6])];
        let net = DiscreteNetwork::new(vars, cpts).unwrap();
        let report = net.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSum { .. })));
    }

    #[test]
    fn indegree_ordering_on_complete_dag() {
        let net = generate::complete_network(5, 2, 11);
        let order = indegree_ordering(&net).unwrap();
        for (i, &v) in order.iter().enumerate() {
            assert_eq!(net.parents(v).len(), i);
        }
        // Rebuilding edges {X_i -> X_j : i < j} reproduces the input edge set.
        let mut rebuilt: Vec<(VarId, VarId)> = Vec::new();
        for i in 0..order.len() {
            for j in i + 1..order.len() {
                rebuilt.push((order[i], order[j]));
            }
        }
        let mut actual = net.edges();
        rebuilt.sort();
        actual.sort();
        assert_eq!(rebuilt, actual);
    }

    #[test]
    fn indegree_ordering_single_node() {
        let net = generate::complete_network(1, 2, 0);
        assert_eq!(indegree_ordering(&net).unwrap(), vec![VarId(0)]);
    }

    #[test]
    fn indegree_ordering_rejects_chain() {
        // A -> B -> C is missing A -> C: indegrees (0, 1, 1).
        let vars = vec![
            VariableDecl::binary("A"),
            VariableDecl::binary("B"),
            VariableDecl::binary("C"),
        ];
        let cpts = vec![
            Cpt::new(VarId(0), vec![], vec![0.3, 0.7]),
            Cpt::new(VarId(1), vec![VarId(0)], vec![0.1, 0.9, 0.2, 0.8]),
            Cpt::new(VarId(2), vec![VarId(1)], vec![0.6, 0.4, 0.5, 0.5]),
        ];
        let net = DiscreteNetwork::new(vars, cpts).unwrap();
        assert!(matches!(
            indegree_ordering(&net),
            Err(ModelError::NotComplete)
        ));
    }

    #[test]
    fn joint_iterator_single_binary_node() {
        let vars = vec![VariableDecl::binary("A")];
        let cpts = vec![Cpt::new(VarId(0), vec![], vec![0.8, 0.2])];
        let net = DiscreteNetwork::new(vars, cpts).unwrap();
        let items: Vec<_> =
            joint_assignment_iterator(&net, &Evidence::empty(), None)
                .unwrap()
                .collect();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0], (vec![0], 0.8));
        assert_eq!(items[1], (vec![1], 0.2));
    }

    #[test]
    fn joint_iterator_sums_to_one() {
        let net = generate::complete_network(6, 2, 3);
        let total: f64 = joint_assignment_iterator(&net, &Evidence::empty(), None)
            .unwrap()
            .map(|(_, p)| p)
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "total = {total}");
    }

    #[test]
    fn joint_iterator_fully_observed() {
        let net = generate::complete_network(4, 2, 3);
        let mut ev = Evidence::empty();
        for v in net.var_ids() {
            ev.set(&net, v, 1).unwrap();
        }
        let items: Vec<_> = joint_assignment_iterator(&net, &ev, None).unwrap().collect();
        assert_eq!(items.len(), 1);
        assert!(items[0].1 > 0.0);
    }

    #[test]
    fn joint_iterator_respects_cap() {
        let net = generate::complete_network(6, 2, 3);
        assert!(matches!(
            joint_assignment_iterator(&net, &Evidence::empty(), Some(32)),
            Err(ModelError::TooLarge { .. })
        ));
    }

    #[test]
    fn evidence_label_lookup() {
        let net = crate::format::asia_network();
        let mut ev = Evidence::empty();
        ev.set_by_name(&net, "asia", "2").unwrap();
        assert_eq!(ev.get(net.var_id("asia").unwrap()), Some(1));
        assert!(ev.set_by_name(&net, "asia", "maybe").is_err());
        assert!(ev.set_by_name(&net, "nosuch", "1").is_err());
    }
}

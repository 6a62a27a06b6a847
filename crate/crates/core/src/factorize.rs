//! Binary factorization: rewrite a discrete network so that every node has
//! at most two parents, preserving the marginals of all original variables.
//!
//! Two constructions are provided. [`binary_factorize`] inserts merge
//! intermediates for nodes with more than two parents (a node `D` with
//! parents `A, B, C` gains an intermediate `E` over the joint states of
//! `(A, B)` with a deterministic indicator table, and `P(D | E=e_ab, c) =
//! P(D | a, b, c)`). [`sparse_to_bfg`] completes a network that already has
//! at most two parents per node into the full `kappa_n` shape of a
//! factorized complete graph, reusing the original tables and keeping the
//! conditional-independence structure by making added parents vacuous.
//! Intermediate chain nodes carry forward exactly the original values later
//! slots still need, so evidence on an original variable can be replicated
//! onto its carriers.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{
    decode_row, Cpt, DiscreteNetwork, Evidence, VarId, VariableDecl,
};

#[derive(Debug, Error)]
pub enum FactorizeError {
    #[error("kappa is defined for n >= 3, got {0}")]
    DomainError(u64),
    #[error("variable `{var}` has {count} parents; expected at most 2")]
    TooManyParents { var: String, count: usize },
    #[error("input network is invalid:\n{0}")]
    InvalidNetwork(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Node count of the binary factorized form of an `n`-node complete graph:
/// `(n^2 - 3n + 6) / 2`.
pub fn kappa(n: u64) -> Result<u64, FactorizeError> {
    if n < 3 {
        return Err(FactorizeError::DomainError(n));
    }
    Ok((n * n - 3 * n + 6) / 2)
}

/// Number of intermediate nodes the factorization of an `n`-node complete
/// graph introduces: `(n-2)(n-3)/2`.
pub fn intermediate_count(n: u64) -> u64 {
    if n < 3 {
        0
    } else {
        (n - 2) * (n - 3) / 2
    }
}

/// How each BFG variable relates to the source network.
#[derive(Debug, Clone, Default)]
pub struct BfgMetadata {
    /// BFG variable name -> source variable names whose joint value it
    /// encodes. Originals map to themselves; padding constants map to
    /// nothing. Carrier states enumerate the listed sources row-major with
    /// the last source varying fastest.
    pub origin_map: BTreeMap<String, Vec<String>>,
    /// Original name -> its single-source carriers (replicas).
    pub replica_groups: BTreeMap<String, BTreeSet<String>>,
    /// Parent-child ordering of the original variables used by the
    /// construction.
    pub ordering: Vec<String>,
}

impl BfgMetadata {
    /// Identity metadata: every variable originates from itself.
    pub fn identity_public(net: &DiscreteNetwork, ordering: Vec<String>) -> Self {
        Self::identity(net, ordering)
    }

    /// Metadata for a two-stage conversion: `second` was produced from the
    /// network `first` describes. Source lists are flattened through the
    /// first stage so that carriers always reference the initial network.
    pub fn compose(first: &Self, second: &Self) -> Self {
        let resolve = |name: &str| -> Vec<String> {
            match first.origin_map.get(name) {
                Some(sources) if !(sources.len() == 1 && sources[0] == name) => sources.clone(),
                _ => vec![name.to_string()],
            }
        };
        let mut out = Self {
            ordering: second.ordering.clone(),
            ..Self::default()
        };
        for (name, sources) in &second.origin_map {
            if sources.len() == 1 && sources[0] == *name {
                // Original of the second stage; may be an intermediate of
                // the first.
                let flat = resolve(name);
                if flat.len() == 1 && flat[0] == *name {
                    out.origin_map.insert(name.clone(), vec![name.clone()]);
                } else {
                    out.note_carrier(name, flat);
                }
            } else {
                let mut flat = Vec::new();
                for s in sources {
                    flat.extend(resolve(s));
                }
                out.note_carrier(name, flat);
            }
        }
        out
    }

    fn identity(net: &DiscreteNetwork, ordering: Vec<String>) -> Self {
        let mut meta = Self {
            ordering,
            ..Self::default()
        };
        for v in net.var_ids() {
            meta.origin_map
                .insert(net.name(v).to_string(), vec![net.name(v).to_string()]);
        }
        meta
    }

    fn note_carrier(&mut self, name: &str, sources: Vec<String>) {
        if sources.len() == 1 {
            self.replica_groups
                .entry(sources[0].clone())
                .or_default()
                .insert(name.to_string());
        }
        self.origin_map.insert(name.to_string(), sources);
    }

    /// Carriers of `source` (any arity), by name.
    pub fn carriers_of(&self, source: &str) -> Vec<&str> {
        self.origin_map
            .iter()
            .filter(|(name, sources)| {
                name.as_str() != source && sources.iter().any(|s| s == source)
            })
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

/// Evidence on originals extended to every carrier whose sources are all
/// observed (replica variables get the copied state).
pub fn replicate_evidence(
    bfg: &DiscreteNetwork,
    meta: &BfgMetadata,
    evidence: &Evidence,
) -> Result<Evidence, crate::model::ModelError> {
    let mut out = evidence.clone();
    for (name, sources) in &meta.origin_map {
        if sources.len() == 1 && sources[0] == *name {
            continue;
        }
        if sources.is_empty() {
            continue;
        }
        let mut state = 0usize;
        let mut all_observed = true;
        for s in sources {
            let sid = bfg.var_id(s)?;
            match evidence.get(sid) {
                Some(obs) => state = state * bfg.arity(sid) + obs,
                None => {
                    all_observed = false;
                    break;
                }
            }
        }
        if all_observed {
            let id = bfg.var_id(name)?;
            out.set(bfg, id, state)?;
        }
    }
    Ok(out)
}

/// Allowed-state masks per BFG variable under the evidence, with carrier
/// states restricted to those consistent with any observed source. This is
/// the clamping rule the inference engines consume.
pub fn evidence_masks(
    bfg: &DiscreteNetwork,
    meta: &BfgMetadata,
    evidence: &Evidence,
) -> Result<Vec<Vec<bool>>, crate::model::ModelError> {
    let mut masks: Vec<Vec<bool>> = bfg
        .var_ids()
        .map(|v| vec![true; bfg.arity(v)])
        .collect();
    for (v, s) in evidence.iter() {
        for (k, allowed) in masks[v.index()].iter_mut().enumerate() {
            *allowed = k == s;
        }
    }
    for (name, sources) in &meta.origin_map {
        if sources.len() == 1 && sources[0] == *name {
            continue;
        }
        let id = bfg.var_id(name)?;
        let dims: Vec<usize> = sources
            .iter()
            .map(|s| bfg.var_id(s).map(|sid| bfg.arity(sid)))
            .collect::<Result<_, _>>()?;
        let mut states = vec![0usize; dims.len()];
        let arity = bfg.arity(id);
        for state in 0..arity {
            decode_row(state, &dims, &mut states);
            let consistent = sources.iter().zip(&states).all(|(s, &val)| {
                let sid = bfg.var_id(s).unwrap();
                evidence.get(sid).map_or(true, |obs| obs == val)
            });
            if !consistent {
                masks[id.index()][state] = false;
            }
        }
    }
    Ok(masks)
}

fn validated(net: &DiscreteNetwork) -> Result<(), FactorizeError> {
    let report = net.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(FactorizeError::InvalidNetwork(report.to_string()))
    }
}

/// Names `E1`, `E2`, ... skipping any name the network already uses.
struct IntermediateNamer {
    used: BTreeSet<String>,
    next: usize,
}

impl IntermediateNamer {
    fn new(net: &DiscreteNetwork) -> Self {
        Self {
            used: net.vars().iter().map(|v| v.name.clone()).collect(),
            next: 1,
        }
    }

    fn fresh(&mut self) -> String {
        loop {
            let candidate = format!("E{}", self.next);
            self.next += 1;
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
    }
}

fn pair_label(left: &str, right: &str) -> String {
    format!("({left},{right})")
}

/// Builder that accumulates the output network.
struct NetBuilder {
    vars: Vec<VariableDecl>,
    cpts: Vec<Cpt>,
    ids: BTreeMap<String, VarId>,
}

impl NetBuilder {
    fn new() -> Self {
        Self {
            vars: Vec::new(),
            cpts: Vec::new(),
            ids: BTreeMap::new(),
        }
    }

    fn push(&mut self, decl: VariableDecl, parents: Vec<VarId>, values: Vec<f64>) -> VarId {
        let id = VarId(self.vars.len() as u32);
        self.ids.insert(decl.name.clone(), id);
        self.vars.push(decl);
        self.cpts.push(Cpt::new(id, parents, values));
        id
    }

    fn arity(&self, id: VarId) -> usize {
        self.vars[id.index()].arity()
    }

    fn finish(self) -> DiscreteNetwork {
        DiscreteNetwork::new(self.vars, self.cpts).expect("builder names are unique")
    }
}

/// Deterministic indicator table for a merge node: given parent states
/// `(l, r)`, the merged state is `l * r_arity + r` with probability 1.
fn merge_cpt_values(left_arity: usize, right_arity: usize) -> Vec<f64> {
    let m = left_arity * right_arity;
    let mut values = vec![0.0; m * m];
    for row in 0..m {
        values[row * m + row] = 1.0;
    }
    values
}

/// Rewrite every node with more than two parents using merge intermediates.
///
/// Parents combine left to right in declared CPT order: parents 1 and 2
/// merge first, then the merge node with parent 3, and so on; the child ends
/// up with the last merge node and its final declared parent. Because the
/// merged state index enumerates exactly the leading parent block
/// row-major, the child's table is reused unchanged.
pub fn binary_factorize(
    net: &DiscreteNetwork,
) -> Result<(DiscreteNetwork, BfgMetadata), FactorizeError> {
    validated(net)?;
    let order = net.topological_order().ok_or_else(|| {
        FactorizeError::InvalidNetwork("cyclic network".into())
    })?;
    if net.max_indegree() <= 2 {
        let ordering = order.iter().map(|&v| net.name(v).to_string()).collect();
        return Ok((net.clone(), BfgMetadata::identity(net, ordering)));
    }

    let mut namer = IntermediateNamer::new(net);
    let mut builder = NetBuilder::new();
    let mut meta = BfgMetadata::default();
    meta.ordering = order.iter().map(|&v| net.name(v).to_string()).collect();
    // id of each input variable in the output network
    let mut mapped: BTreeMap<VarId, VarId> = BTreeMap::new();

    for &v in &order {
        let decl = net.var(v).clone();
        let parents: Vec<VarId> = net.parents(v).iter().map(|p| mapped[p]).collect();
        meta.origin_map
            .insert(decl.name.clone(), vec![decl.name.clone()]);
        if parents.len() <= 2 {
            let id = builder.push(decl, parents, net.cpt(v).values.clone());
            mapped.insert(v, id);
            continue;
        }
        // Chain of merge nodes over the leading parents.
        let mut sources: Vec<String> = Vec::new();
        let mut cur = parents[0];
        sources.push(builder.vars[cur.index()].name.clone());
        for t in 1..parents.len() - 1 {
            let right = parents[t];
            let left_arity = builder.arity(cur);
            let right_arity = builder.arity(right);
            let mut labels = Vec::with_capacity(left_arity * right_arity);
            for ls in &builder.vars[cur.index()].states.clone() {
                for rs in &builder.vars[right.index()].states {
                    labels.push(pair_label(ls, rs));
                }
            }
            let name = namer.fresh();
            sources.push(builder.vars[right.index()].name.clone());
            // Sources of a chained merge are the flattened originals, not the
            // previous merge node itself.
            let flat_sources = flatten_sources(&meta, &sources);
            meta.note_carrier(&name, flat_sources);
            let id = builder.push(
                VariableDecl::intermediate(name, labels),
                vec![cur, right],
                merge_cpt_values(left_arity, right_arity),
            );
            cur = id;
        }
        let last = parents[parents.len() - 1];
        let id = builder.push(decl, vec![cur, last], net.cpt(v).values.clone());
        mapped.insert(v, id);
    }

    let out = builder.finish();
    debug_assert!(out.validate().is_valid());
    Ok((out, meta))
}

fn flatten_sources(meta: &BfgMetadata, names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for n in names {
        match meta.origin_map.get(n) {
            Some(sources) if !(sources.len() == 1 && sources[0] == *n) => {
                out.extend(sources.iter().cloned())
            }
            _ => out.push(n.clone()),
        }
    }
    out
}

/// Complete a network with at most two parents per node into the full
/// `kappa_n` BFG over its `n` variables.
///
/// The spine follows the lexicographically smallest topological order of the
/// input, each original keeps its table (added parents are vacuous), and the
/// intermediate chains carry forward exactly the earlier originals each
/// later slot still needs. Chain positions that carry nothing are two-state
/// constants.
pub fn sparse_to_bfg(
    net: &DiscreteNetwork,
) -> Result<(DiscreteNetwork, BfgMetadata), FactorizeError> {
    validated(net)?;
    if let Some(v) = net.var_ids().find(|&v| net.parents(v).len() > 2) {
        return Err(FactorizeError::TooManyParents {
            var: net.name(v).to_string(),
            count: net.parents(v).len(),
        });
    }
    let spine = net.lexicographic_topological_order().ok_or_else(|| {
        FactorizeError::InvalidNetwork("cyclic network".into())
    })?;
    let _n = spine.len();
    let mut namer = IntermediateNamer::new(net);
    let mut builder = NetBuilder::new();
    let mut meta = BfgMetadata::default();
    meta.ordering = spine.iter().map(|&v| net.name(v).to_string()).collect();

    // Slot (1-based) of each input variable along the spine.
    let mut slot_of: BTreeMap<VarId, usize> = BTreeMap::new();
    for (i, &v) in spine.iter().enumerate() {
        slot_of.insert(v, i + 1);
    }
    // Output ids of spine variables, indexed by slot - 1.
    let mut spine_ids: Vec<VarId> = Vec::new();

    for (i, &v) in spine.iter().enumerate() {
        let slot = i + 1;
        let decl = net.var(v).clone();
        meta.origin_map
            .insert(decl.name.clone(), vec![decl.name.clone()]);
        // Original parents, by slot.
        let g_parents: Vec<VarId> = net.parents(v).to_vec();

        if slot == 1 {
            let id = builder.push(decl, vec![], net.cpt(v).values.clone());
            spine_ids.push(id);
            continue;
        }

        // Chain for slots >= 4; `carrier` is the last chain node (if any).
        let carried_target: Vec<VarId> = {
            // parents of v with slot < slot-1, in slot order
            let mut c: Vec<VarId> = g_parents
                .iter()
                .copied()
                .filter(|p| slot_of[p] < slot - 1)
                .collect();
            c.sort_by_key(|p| slot_of[p]);
            c
        };
        let mut carrier: Option<(VarId, Vec<VarId>)> = None; // (output id, carried input vars)
        if slot >= 4 {
            let mut prev: Option<(VarId, Vec<VarId>)> = None;
            for t in 1..=slot - 3 {
                // Parents of chain node t: (X1, X2) for t = 1, else
                // (previous chain node, X_{t+1}).
                let (left_id, left_carried): (VarId, Vec<VarId>) = match &prev {
                    None => (spine_ids[0], vec![]),
                    Some((id, carried)) => (*id, carried.clone()),
                };
                let right_slot = t + 1;
                let right_input = spine[right_slot - 1];
                let right_id = spine_ids[right_slot - 1];
                // For t = 1 the "left" is X1 and the right is X2.
                let (p_left, p_right) = if t == 1 {
                    (spine_ids[0], spine_ids[1])
                } else {
                    (left_id, right_id)
                };
                let mut carried: Vec<VarId> = if t == 1 { vec![] } else { left_carried };
                let newly: Vec<VarId> = if t == 1 {
                    [spine[0], spine[1]]
                        .iter()
                        .copied()
                        .filter(|x| carried_target.contains(x))
                        .collect()
                } else if carried_target.contains(&right_input) {
                    vec![right_input]
                } else {
                    vec![]
                };
                carried.extend(newly);

                let (decl_c, values) = build_carrier(
                    net,
                    &builder,
                    namer.fresh(),
                    p_left,
                    p_right,
                    &prev,
                    &carried,
                    t == 1,
                    &spine,
                );
                let sources: Vec<String> =
                    carried.iter().map(|&c| net.name(c).to_string()).collect();
                meta.note_carrier(&decl_c.name, sources);
                let id = builder.push(decl_c, vec![p_left, p_right], values);
                prev = Some((id, carried));
            }
            carrier = prev;
        }

        // The spine node itself: parents in G' are (carrier, X_{slot-1}) for
        // slot >= 4, (X1, X2) for slot 3, (X1,) for slot 2.
        let out_parents: Vec<VarId> = match slot {
            2 => vec![spine_ids[0]],
            3 => vec![spine_ids[0], spine_ids[1]],
            _ => vec![carrier.as_ref().unwrap().0, spine_ids[slot - 2]],
        };
        let values = reuse_cpt(
            net,
            v,
            &g_parents,
            slot,
            &spine,
            carrier.as_ref().map(|(_, c)| c.as_slice()).unwrap_or(&[]),
            &out_parents
                .iter()
                .map(|&p| builder.arity(p))
                .collect::<Vec<_>>(),
        );
        let id = builder.push(decl, out_parents, values);
        spine_ids.push(id);
    }

    let out = builder.finish();
    debug_assert!(out.validate().is_valid(), "{}", out.validate());
    Ok((out, meta))
}

/// Declaration and deterministic table for one chain node.
#[allow(clippy::too_many_arguments)]
fn build_carrier(
    net: &DiscreteNetwork,
    builder: &NetBuilder,
    name: String,
    p_left: VarId,
    p_right: VarId,
    prev: &Option<(VarId, Vec<VarId>)>,
    carried: &[VarId],
    first: bool,
    spine: &[VarId],
) -> (VariableDecl, Vec<f64>) {
    // State labels for the carried tuple (or a two-state constant).
    let (labels, arity) = if carried.is_empty() {
        (vec!["1".to_string(), "2".to_string()], 2usize)
    } else if carried.len() == 1 {
        let labels = net.var(carried[0]).states.clone();
        let arity = labels.len();
        (labels, arity)
    } else {
        let mut labels = Vec::new();
        for a in &net.var(carried[0]).states {
            for b in &net.var(carried[1]).states {
                labels.push(pair_label(a, b));
            }
        }
        let arity = labels.len();
        (labels, arity)
    };

    let left_arity = builder.arity(p_left);
    let right_arity = builder.arity(p_right);
    let rows = left_arity * right_arity;
    let mut values = vec![0.0; rows * arity];

    // Which carried value each parent contributes. For the first chain node
    // the parents are (X1, X2); later the left parent is the previous chain
    // node carrying a prefix of `carried`.
    let prev_carried: &[VarId] = prev.as_ref().map(|(_, c)| c.as_slice()).unwrap_or(&[]);
    for l in 0..left_arity {
        // Decode the previous carrier's tuple.
        let mut prev_values: BTreeMap<VarId, usize> = BTreeMap::new();
        if first {
            prev_values.insert(spine[0], l);
        } else {
            let dims: Vec<usize> = prev_carried.iter().map(|&c| net.arity(c)).collect();
            let mut states = vec![0usize; dims.len()];
            if !dims.is_empty() {
                decode_row(l, &dims, &mut states);
            }
            for (c, s) in prev_carried.iter().zip(states) {
                prev_values.insert(*c, s);
            }
        }
        for r in 0..right_arity {
            let mut all_values = prev_values.clone();
            if first {
                all_values.insert(spine[1], r);
            } else {
                // right parent is a spine original
                let right_input = carried
                    .iter()
                    .find(|c| !prev_carried.contains(c))
                    .copied();
                if let Some(ri) = right_input {
                    all_values.insert(ri, r);
                }
            }
            let state = if carried.is_empty() {
                0
            } else {
                let mut s = 0usize;
                for c in carried {
                    s = s * net.arity(*c) + all_values.get(c).copied().unwrap_or(0);
                }
                s
            };
            values[(l * right_arity + r) * arity + state] = 1.0;
        }
    }
    (VariableDecl::intermediate(name, labels), values)
}

/// Build the vacuous-extended table for a spine node: evaluate the original
/// CPT at the coordinates the new parents encode, ignoring the rest.
fn reuse_cpt(
    net: &DiscreteNetwork,
    v: VarId,
    g_parents: &[VarId],
    slot: usize,
    spine: &[VarId],
    carried: &[VarId],
    out_parent_dims: &[usize],
) -> Vec<f64> {
    let arity = net.arity(v);
    let rows: usize = out_parent_dims.iter().product::<usize>().max(1);
    let mut values = Vec::with_capacity(rows * arity);
    let carried_dims: Vec<usize> = carried.iter().map(|&c| net.arity(c)).collect();
    let mut row_states = vec![0usize; out_parent_dims.len()];
    for row in 0..rows {
        decode_row(row, out_parent_dims, &mut row_states);
        // Recover original-variable values visible at this row.
        let mut known: BTreeMap<VarId, usize> = BTreeMap::new();
        match slot {
            1 => {}
            2 => {
                known.insert(spine[0], row_states[0]);
            }
            3 => {
                known.insert(spine[0], row_states[0]);
                known.insert(spine[1], row_states[1]);
            }
            _ => {
                // row_states[0] is the carrier tuple, row_states[1] is X_{slot-1}.
                if !carried.is_empty() {
                    let mut states = vec![0usize; carried.len()];
                    decode_row(row_states[0], &carried_dims, &mut states);
                    for (c, s) in carried.iter().zip(states) {
                        known.insert(*c, s);
                    }
                }
                known.insert(spine[slot - 2], row_states[1]);
            }
        }
        let parent_states: Vec<usize> = g_parents
            .iter()
            .map(|p| *known.get(p).expect("parent value is encoded by construction"))
            .collect();
        let mut orig_row = 0usize;
        for (p, s) in g_parents.iter().zip(&parent_states) {
            orig_row = orig_row * net.arity(*p) + s;
        }
        values.extend_from_slice(
            &net.cpt(v).values[orig_row * arity..(orig_row + 1) * arity],
        );
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VarKind;
    use crate::generate;
    use crate::model::joint_assignment_iterator;

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(3).unwrap(), 3);
        assert_eq!(kappa(4).unwrap(), 5);
        assert_eq!(kappa(5).unwrap(), 8);
        assert_eq!(kappa(80).unwrap(), 3083);
        assert!(matches!(kappa(2), Err(FactorizeError::DomainError(2))));
    }

    #[test]
    fn pass_through_when_indegree_at_most_two() {
        let net = crate::format::asia_network();
        let (bfg, meta) = binary_factorize(&net).unwrap();
        assert_eq!(bfg.len(), net.len());
        assert!(meta.replica_groups.is_empty());
        assert_eq!(bfg.max_indegree(), 2);
    }

    #[test]
    fn complete_five_node_structure() {
        let net = generate::complete_network(5, 2, 1);
        let (bfg, _) = binary_factorize(&net).unwrap();
        assert_eq!(bfg.len(), 8);
        let by_name = |n: &str| bfg.var_id(n).unwrap();
        let parent_names = |n: &str| -> Vec<String> {
            bfg.parents(by_name(n))
                .iter()
                .map(|&p| bfg.name(p).to_string())
                .collect()
        };
        assert_eq!(parent_names("E1"), vec!["X1", "X2"]);
        assert_eq!(parent_names("X4"), vec!["E1", "X3"]);
        assert_eq!(parent_names("E2"), vec!["X1", "X2"]);
        assert_eq!(parent_names("E3"), vec!["E2", "X3"]);
        assert_eq!(parent_names("X5"), vec!["E3", "X4"]);
        assert_eq!(
            bfg.vars()
                .iter()
                .filter(|v| v.kind == VarKind::Intermediate)
                .count(),
            3
        );
        assert_eq!(bfg.max_indegree(), 2);
    }

    fn enumeration_marginals(net: &DiscreteNetwork, names: &[&str]) -> Vec<Vec<f64>> {
        let ids: Vec<VarId> = names.iter().map(|n| net.var_id(n).unwrap()).collect();
        let mut out: Vec<Vec<f64>> = ids.iter().map(|&v| vec![0.0; net.arity(v)]).collect();
        for (assignment, p) in
            joint_assignment_iterator(net, &Evidence::empty(), Some(1 << 26)).unwrap()
        {
            for (k, &v) in ids.iter().enumerate() {
                out[k][assignment[v.index()]] += p;
            }
        }
        out
    }

    #[test]
    fn factorization_preserves_marginals_exactly() {
        let net = generate::complete_network(6, 2, 1);
        let (bfg, _) = binary_factorize(&net).unwrap();
        assert_eq!(bfg.len() as u64, kappa(6).unwrap());
        let names: Vec<&str> = net.vars().iter().map(|v| v.name.as_str()).collect();
        let before = enumeration_marginals(&net, &names);
        let after = enumeration_marginals(&bfg, &names);
        for (b, a) in before.iter().zip(&after) {
            for (x, y) in b.iter().zip(a) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn sparse_to_bfg_chain_becomes_triangle() {
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
        let (bfg, _) = sparse_to_bfg(&net).unwrap();
        assert_eq!(bfg.len(), 3);
        let c = bfg.var_id("C").unwrap();
        let parents: Vec<&str> = bfg.parents(c).iter().map(|&p| bfg.name(p)).collect();
        assert_eq!(parents, vec!["A", "B"]);
        // P(C|A,B) = P(C|B): rows (a,b) with b fastest.
        assert_eq!(
            bfg.cpt(c).values,
            vec![0.6, 0.4, 0.5, 0.5, 0.6, 0.4, 0.5, 0.5]
        );
    }

    #[test]
    fn asia_becomes_kappa_eight() {
        let net = crate::format::asia_network();
        let (bfg, meta) = sparse_to_bfg(&net).unwrap();
        assert_eq!(bfg.len() as u64, kappa(8).unwrap());
        assert_eq!(bfg.max_indegree(), 2);
        assert!(bfg.validate().is_valid(), "{}", bfg.validate());
        assert_eq!(meta.ordering.len(), 8);
        // The spine head is the only parentless node; the second spine slot
        // has the head as its single parent.
        let roots: Vec<VarId> = bfg.var_ids().filter(|&v| bfg.parents(v).is_empty()).collect();
        assert_eq!(roots.len(), 1);
        let second = bfg.var_id(&meta.ordering[1]).unwrap();
        assert_eq!(bfg.parents(second), &[roots[0]]);
    }

    #[test]
    fn asia_bfg_preserves_posteriors_under_replicated_evidence() {
        let net = crate::format::asia_network();
        let (bfg, meta) = sparse_to_bfg(&net).unwrap();
        let mut ev = Evidence::empty();
        ev.set_by_name(&net, "asia", "2").unwrap();
        ev.set_by_name(&net, "dysp", "2").unwrap();
        let mut bfg_ev = Evidence::empty();
        bfg_ev.set_by_name(&bfg, "asia", "2").unwrap();
        bfg_ev.set_by_name(&bfg, "dysp", "2").unwrap();
        let bfg_ev = replicate_evidence(&bfg, &meta, &bfg_ev).unwrap();

        for v in net.var_ids() {
            let name = net.name(v);
            let mut p_in = vec![0.0; net.arity(v)];
            for (a, p) in joint_assignment_iterator(&net, &ev, None).unwrap() {
                p_in[a[v.index()]] += p;
            }
            let bv = bfg.var_id(name).unwrap();
            let mut p_out = vec![0.0; bfg.arity(bv)];
            for (a, p) in joint_assignment_iterator(&bfg, &bfg_ev, Some(1 << 26)).unwrap() {
                p_out[a[bv.index()]] += p;
            }
            crate::table::normalize(&mut p_in);
            crate::table::normalize(&mut p_out);
            for (x, y) in p_in.iter().zip(&p_out) {
                assert!((x - y).abs() < 1e-10, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn rejects_three_parent_input() {
        let net = crate::format::dbn3_network();
        assert!(matches!(
            sparse_to_bfg(&net),
            Err(FactorizeError::TooManyParents { .. })
        ));
    }

    #[test]
    fn dbn_factorizes_then_completes() {
        let net = crate::format::dbn3_network();
        let (bf, _) = binary_factorize(&net).unwrap();
        assert_eq!(bf.len(), 15); // three observation nodes gain one merge each
        let (bfg, meta) = sparse_to_bfg(&bf).unwrap();
        assert_eq!(bfg.len() as u64, kappa(15).unwrap());
        assert!(bfg.validate().is_valid());
        assert_eq!(meta.ordering.len(), 15);
    }

    #[test]
    fn evidence_masks_restrict_partial_carriers() {
        // D has parents A, B, C; the merge node carries (A, B). Observing A
        // must halve the merge node's allowed states.
        let net = generate::complete_network(4, 2, 9);
        let (bfg, meta) = binary_factorize(&net).unwrap();
        let a = bfg.var_id("X1").unwrap();
        let mut ev = Evidence::empty();
        ev.set(&bfg, a, 1).unwrap();
        let masks = evidence_masks(&bfg, &meta, &ev).unwrap();
        let e1 = bfg.var_id("E1").unwrap();
        assert_eq!(masks[e1.index()], vec![false, false, true, true]);
    }
}

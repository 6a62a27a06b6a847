//! Undirected parametrization of a BFG: factor conversion, moral graph, and
//! (coupled) Markov blankets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{decode_row, DiscreteNetwork, VarId, VariableDecl};
use crate::table::Table;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("coupled blanket needs two distinct variables")]
    SameVariable,
}

pub type FactorId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactorSource {
    /// Converted from the CPD of `child`.
    CpdConversion { child: VarId },
    /// Uniform factor introduced for an interaction triplet.
    UniformInteraction,
}

/// A potential over a variable subset; values are linear-space.
#[derive(Debug, Clone)]
pub struct Factor {
    pub id: FactorId,
    pub table: Table,
    pub source: FactorSource,
}

impl Factor {
    pub fn scope(&self) -> &[VarId] {
        &self.table.vars
    }
}

/// Undirected view of a BFG: one factor per CPD, the moral adjacency, and
/// the digraph needed for Markov blankets. Immutable once ORI has added its
/// interaction factors.
#[derive(Debug, Clone)]
pub struct FactorSystem {
    vars: Vec<VariableDecl>,
    parents: Vec<Vec<VarId>>,
    children: Vec<Vec<VarId>>,
    factors: Vec<Factor>,
    /// Undirected edges of the moral graph, normalized (lo, hi).
    adjacency: BTreeSet<(VarId, VarId)>,
    /// The subset of `adjacency` added by marrying co-parents.
    moral_edges: BTreeSet<(VarId, VarId)>,
}

fn norm(a: VarId, b: VarId) -> (VarId, VarId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Convert a BFG into its factor system: one factor per variable with scope
/// `{X} ∪ pa{X}` holding `P(X | pa{X})`, plus the moral graph with the
/// married co-parent pairs flagged.
pub fn moralize(bfg: &DiscreteNetwork) -> FactorSystem {
    let mut adjacency = BTreeSet::new();
    let mut moral_edges = BTreeSet::new();
    for v in bfg.var_ids() {
        for &p in bfg.parents(v) {
            adjacency.insert(norm(p, v));
        }
    }
    for v in bfg.var_ids() {
        let ps = bfg.parents(v);
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                let e = norm(ps[i], ps[j]);
                if adjacency.insert(e) {
                    moral_edges.insert(e);
                }
            }
        }
    }
    let factors = bfg
        .var_ids()
        .map(|v| cpd_factor(bfg, v))
        .collect::<Vec<_>>();
    FactorSystem {
        vars: bfg.vars().to_vec(),
        parents: bfg.var_ids().map(|v| bfg.parents(v).to_vec()).collect(),
        children: bfg.var_ids().map(|v| bfg.children(v)).collect(),
        factors,
        adjacency,
        moral_edges,
    }
}

/// CPD factor with scope sorted by variable id, in table layout.
fn cpd_factor(bfg: &DiscreteNetwork, v: VarId) -> Factor {
    let mut scope: Vec<VarId> = bfg.parents(v).to_vec();
    scope.push(v);
    scope.sort();
    let dims: Vec<usize> = scope.iter().map(|&x| bfg.arity(x)).collect();
    let size: usize = dims.iter().product();
    let mut values = vec![0.0; size];
    let cpt = bfg.cpt(v);
    let arity = bfg.arity(v);
    let parent_dims: Vec<usize> = cpt.parents.iter().map(|&p| bfg.arity(p)).collect();
    let mut digits = vec![0usize; scope.len()];
    let mut assignment: BTreeMap<VarId, usize> = BTreeMap::new();
    for (idx, slot) in values.iter_mut().enumerate() {
        decode_row(idx, &dims, &mut digits);
        assignment.clear();
        for (s, d) in scope.iter().zip(&digits) {
            assignment.insert(*s, *d);
        }
        let mut row = 0usize;
        for (p, pd) in cpt.parents.iter().zip(&parent_dims) {
            row = row * pd + assignment[p];
        }
        *slot = cpt.values[row * arity + assignment[&v]];
    }
    Factor {
        id: v.index(),
        table: Table::new(scope, dims, values),
        source: FactorSource::CpdConversion { child: v },
    }
}

impl FactorSystem {
    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn var(&self, id: VarId) -> &VariableDecl {
        &self.vars[id.index()]
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.vars[id.index()].name
    }

    pub fn arity(&self, id: VarId) -> usize {
        self.vars[id.index()].arity()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.vars.iter().map(|v| v.arity()).collect()
    }

    pub fn var_ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len() as u32).map(VarId)
    }

    pub fn parents(&self, id: VarId) -> &[VarId] {
        &self.parents[id.index()]
    }

    pub fn children(&self, id: VarId) -> &[VarId] {
        &self.children[id.index()]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, id: FactorId) -> &Factor {
        &self.factors[id]
    }

    pub fn adjacency(&self) -> &BTreeSet<(VarId, VarId)> {
        &self.adjacency
    }

    pub fn moral_edges(&self) -> &BTreeSet<(VarId, VarId)> {
        &self.moral_edges
    }

    pub fn is_edge(&self, a: VarId, b: VarId) -> bool {
        self.adjacency.contains(&norm(a, b))
    }

    pub fn is_moral_edge(&self, a: VarId, b: VarId) -> bool {
        self.moral_edges.contains(&norm(a, b))
    }

    /// Indegree-0 nodes of the underlying BFG.
    pub fn roots(&self) -> Vec<VarId> {
        self.var_ids()
            .filter(|v| self.parents[v.index()].is_empty())
            .collect()
    }

    /// Register a uniform interaction factor over `scope`; all entries 1, so
    /// the product of all factors is untouched.
    pub fn add_uniform_factor(&mut self, mut scope: Vec<VarId>) -> FactorId {
        scope.sort();
        let dims: Vec<usize> = scope.iter().map(|&v| self.arity(v)).collect();
        let id = self.factors.len();
        self.factors.push(Factor {
            id,
            table: Table::constant(scope, dims, 1.0),
            source: FactorSource::UniformInteraction,
        });
        id
    }

    /// Evaluate the product of all factors at a full assignment.
    pub fn product_at(&self, assignment: &[usize]) -> f64 {
        self.factors
            .iter()
            .map(|f| f.table.value_at(assignment))
            .product()
    }

    /// GraphViz rendering of the moral graph; moral edges come out dashed.
    pub fn moral_graph_dot(&self) -> String {
        let mut s = String::from("graph moral {\n  node [shape=circle];\n");
        for v in self.var_ids() {
            let _ = writeln!(s, "  \"{}\";", self.name(v));
        }
        for &(a, b) in &self.adjacency {
            let style = if self.moral_edges.contains(&(a, b)) {
                " [style=dashed]"
            } else {
                ""
            };
            let _ = writeln!(s, "  \"{}\" -- \"{}\"{};", self.name(a), self.name(b), style);
        }
        s.push_str("}\n");
        s
    }
}

/// Markov blanket of `v` in the BFG: parents, children, and the children's
/// other parents.
pub fn markov_blanket(fs: &FactorSystem, v: VarId) -> Result<BTreeSet<VarId>, MarkovError> {
    if v.index() >= fs.var_count() {
        return Err(MarkovError::UnknownVariable(format!("{v}")));
    }
    let mut out: BTreeSet<VarId> = fs.parents(v).iter().copied().collect();
    for &c in fs.children(v) {
        out.insert(c);
        for &p in fs.parents(c) {
            out.insert(p);
        }
    }
    out.remove(&v);
    Ok(out)
}

/// Coupled Markov blanket: union of both blankets, minus the pair itself.
pub fn coupled_markov_blanket(
    fs: &FactorSystem,
    a: VarId,
    b: VarId,
) -> Result<BTreeSet<VarId>, MarkovError> {
    if a == b {
        return Err(MarkovError::SameVariable);
    }
    let mut out = markov_blanket(fs, a)?;
    out.extend(markov_blanket(fs, b)?);
    out.remove(&a);
    out.remove(&b);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::model::{joint_assignment_iterator, Evidence};

    fn kappa5() -> (DiscreteNetwork, FactorSystem) {
        let net = generate::complete_network(5, 2, 1);
        let (bfg, _) = crate::factorize::binary_factorize(&net).unwrap();
        let fs = moralize(&bfg);
        (bfg, fs)
    }

    fn named(bfg: &DiscreteNetwork, names: &[&str]) -> BTreeSet<VarId> {
        names.iter().map(|n| bfg.var_id(n).unwrap()).collect()
    }

    #[test]
    fn kappa5_moral_edges() {
        let (bfg, fs) = kappa5();
        // One married pair per co-parent pair not already joined:
        // (E1, X3), (E2, X3), (E3, X4).
        let expected: BTreeSet<(VarId, VarId)> = [
            ("E1", "X3"),
            ("E2", "X3"),
            ("E3", "X4"),
        ]
        .iter()
        .map(|(a, b)| {
            let (a, b) = (bfg.var_id(a).unwrap(), bfg.var_id(b).unwrap());
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
        assert_eq!(fs.moral_edges(), &expected);
        assert_eq!(fs.moral_edges().len(), 3); // (n-2)(n-3)/2 at n = 5
    }

    #[test]
    fn chain_has_no_moral_edges() {
        let net = crate::format::asia_network();
        // tub <- asia is a chain segment: no co-parents among (asia).
        let fs = moralize(&net);
        // Asia's two married pairs: (tub, lung) for either, (either, bronc) for dysp.
        assert_eq!(fs.moral_edges().len(), 2);
    }

    #[test]
    fn moral_edge_count_matches_intermediate_count() {
        for n in 4..=9u64 {
            let net = generate::complete_network(n as usize, 2, n);
            let (bfg, _) = crate::factorize::binary_factorize(&net).unwrap();
            let fs = moralize(&bfg);
            assert_eq!(
                fs.moral_edges().len() as u64,
                crate::factorize::intermediate_count(n),
                "n = {n}"
            );
        }
    }

    #[test]
    fn blanket_of_x4_in_kappa5() {
        let (bfg, fs) = kappa5();
        let x4 = bfg.var_id("X4").unwrap();
        let blanket = markov_blanket(&fs, x4).unwrap();
        // Parents (E1, X3), child X5, co-parent E3.
        assert_eq!(blanket, named(&bfg, &["E1", "X3", "X5", "E3"]));
        assert!(!blanket.contains(&x4));
    }

    #[test]
    fn coupled_blanket_x1_x3_in_kappa5() {
        let (bfg, fs) = kappa5();
        let x1 = bfg.var_id("X1").unwrap();
        let x3 = bfg.var_id("X3").unwrap();
        let coupled = coupled_markov_blanket(&fs, x1, x3).unwrap();
        assert_eq!(coupled, named(&bfg, &["X2", "E1", "E2", "X4", "E3"]));
        assert_eq!(
            coupled,
            coupled_markov_blanket(&fs, x3, x1).unwrap(),
            "symmetric in the pair"
        );
        assert!(!coupled.contains(&x1) && !coupled.contains(&x3));
    }

    #[test]
    fn isolated_node_has_empty_blanket() {
        let vars = vec![
            VariableDecl::binary("A"),
            VariableDecl::binary("B"),
        ];
        let cpts = vec![
            crate::model::Cpt::new(VarId(0), vec![], vec![0.5, 0.5]),
            crate::model::Cpt::new(VarId(1), vec![], vec![0.5, 0.5]),
        ];
        let net = DiscreteNetwork::new(vars, cpts).unwrap();
        let fs = moralize(&net);
        assert!(markov_blanket(&fs, VarId(0)).unwrap().is_empty());
        assert!(coupled_markov_blanket(&fs, VarId(0), VarId(1))
            .unwrap()
            .is_empty());
        assert!(matches!(
            coupled_markov_blanket(&fs, VarId(0), VarId(0)),
            Err(MarkovError::SameVariable)
        ));
    }

    #[test]
    fn factor_product_equals_chain_rule() {
        for seed in [1u64, 2, 3] {
            let net = generate::complete_network(5, 2, seed);
            let (bfg, _) = crate::factorize::binary_factorize(&net).unwrap();
            let fs = moralize(&bfg);
            for f in fs.factors() {
                assert!(f.scope().len() <= 3, "triplet property");
            }
            for (assignment, p) in
                joint_assignment_iterator(&bfg, &Evidence::empty(), None).unwrap()
            {
                let q = fs.product_at(&assignment);
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
        }
    }
}

//! Region graphs: CVM construction from declared outer regions, counting
//! numbers, validity checks and the structural report for BFG-shaped inputs.
//!
//! Outer (level-1) regions hold all factors. Level 2 consists of the
//! distinct size-2 intersections of outer labels, level 3 of the distinct
//! intersections of level-2 labels (singletons). Counting numbers follow
//! `c_r = 1 - sum over ancestors`, and level-3 singletons whose counting
//! number works out to zero are pruned from the graph (they carry no weight
//! in the free energy; the construction records them for audit).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::markov::{FactorId, FactorSystem};
use crate::model::VarId;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("factor {factor} over {{{scope}}} fits no outer region")]
    UncoveredFactor { factor: FactorId, scope: String },
    #[error("factor {factor} assigned to more than one outer region")]
    FactorMultiplyAssigned { factor: FactorId },
    #[error("duplicate outer region label {{{0}}}")]
    DuplicateOuterLabel(String),
    #[error("{0}")]
    InvalidInput(String),
}

/// Index into [`RegionGraph::regions`].
pub type RegionId = usize;

/// Declared level-1 region: a variable set plus the factors assigned to it.
#[derive(Debug, Clone)]
pub struct OuterRegion {
    pub label: Vec<VarId>,
    pub factors: Vec<FactorId>,
}

/// One region of the graph. `copy` distinguishes duplicates made by the
/// two-parent rewrite; it is 0 straight out of CVM.
#[derive(Debug, Clone)]
pub struct Region {
    pub label: Vec<VarId>,
    pub factors: Vec<FactorId>,
    pub counting_number: i64,
    pub level: u8,
    pub copy: u16,
}

/// DAG of regions; edges go from level k to level k+1.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    pub regions: Vec<Region>,
    parents: Vec<Vec<RegionId>>,
    children: Vec<Vec<RegionId>>,
    /// Level-3 singletons whose counting number was zero and which were
    /// therefore pruned; kept for bookkeeping and audit output.
    pub dropped_zero_singletons: Vec<Vec<VarId>>,
}

impl RegionGraph {
    /// Assemble a graph from explicit parts; `parents` and `children` must
    /// be mutually consistent.
    pub fn from_parts(
        regions: Vec<Region>,
        parents: Vec<Vec<RegionId>>,
        children: Vec<Vec<RegionId>>,
        dropped_zero_singletons: Vec<Vec<VarId>>,
    ) -> Self {
        debug_assert_eq!(regions.len(), parents.len());
        debug_assert_eq!(regions.len(), children.len());
        Self {
            regions,
            parents,
            children,
            dropped_zero_singletons,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn parents(&self, r: RegionId) -> &[RegionId] {
        &self.parents[r]
    }

    pub fn children(&self, r: RegionId) -> &[RegionId] {
        &self.children[r]
    }

    pub fn level(&self, level: u8) -> impl Iterator<Item = RegionId> + '_ {
        self.regions
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.level == level)
            .map(|(i, _)| i)
    }

    pub fn regions_containing(&self, v: VarId) -> Vec<RegionId> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label.contains(&v))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ancestors in the DAG (transitive closure of parents).
    pub fn ancestors(&self, r: RegionId) -> BTreeSet<RegionId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<RegionId> = self.parents[r].to_vec();
        while let Some(p) = stack.pop() {
            if out.insert(p) {
                stack.extend(self.parents[p].iter().copied());
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(|c| c.len()).sum()
    }

    /// GraphViz rendering; regions are labelled with their variables and
    /// counting number.
    pub fn dot(&self, fs: &FactorSystem) -> String {
        let mut s = String::from("digraph regions {\n  rankdir=TB;\n  node [shape=box];\n");
        for (i, r) in self.regions.iter().enumerate() {
            let names: Vec<&str> = r.label.iter().map(|&v| fs.name(v)).collect();
            let copy = if r.copy > 0 {
                format!(" #{}", r.copy)
            } else {
                String::new()
            };
            let _ = writeln!(
                s,
                "  r{i} [label=\"{{{}}}{copy}\\nc={}\"];",
                names.join(" "),
                r.counting_number
            );
        }
        for (i, children) in self.children.iter().enumerate() {
            for &c in children {
                let _ = writeln!(s, "  r{i} -> r{c};");
            }
        }
        s.push_str("}\n");
        s
    }
}

fn label_string(label: &[VarId], fs: &FactorSystem) -> String {
    label
        .iter()
        .map(|&v| fs.name(v).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Build the three-level CVM region graph from the declared outer regions.
pub fn cvm_construct(
    outer: &[OuterRegion],
    fs: &FactorSystem,
) -> Result<RegionGraph, RegionError> {
    // Outer labels must be distinct.
    let mut seen: BTreeSet<Vec<VarId>> = BTreeSet::new();
    for o in outer {
        let mut label = o.label.clone();
        label.sort();
        if !seen.insert(label.clone()) {
            return Err(RegionError::DuplicateOuterLabel(label_string(&label, fs)));
        }
    }
    // Every factor must sit in exactly one outer region that covers it.
    let mut assigned = vec![0usize; fs.factors().len()];
    for o in outer {
        for &f in &o.factors {
            assigned[f] += 1;
            let scope = fs.factor(f).scope();
            if !scope.iter().all(|v| o.label.contains(v)) {
                return Err(RegionError::UncoveredFactor {
                    factor: f,
                    scope: label_string(scope, fs),
                });
            }
        }
    }
    for (f, &count) in assigned.iter().enumerate() {
        if count == 0 {
            return Err(RegionError::UncoveredFactor {
                factor: f,
                scope: label_string(fs.factor(f).scope(), fs),
            });
        }
        if count > 1 {
            return Err(RegionError::FactorMultiplyAssigned { factor: f });
        }
    }

    // Level 1, sorted by label for a reproducible ordering.
    let mut level1: Vec<(Vec<VarId>, Vec<FactorId>)> = outer
        .iter()
        .map(|o| {
            let mut label = o.label.clone();
            label.sort();
            (label, o.factors.clone())
        })
        .collect();
    level1.sort_by(|a, b| a.0.cmp(&b.0));

    // Level 2: distinct pairwise intersections of size two.
    let mut level2: BTreeSet<Vec<VarId>> = BTreeSet::new();
    for i in 0..level1.len() {
        for j in i + 1..level1.len() {
            let inter = intersect(&level1[i].0, &level1[j].0);
            if inter.len() == 2 {
                level2.insert(inter);
            }
        }
    }
    let level2: Vec<Vec<VarId>> = level2.into_iter().collect();

    // Level 3: distinct intersections of level-2 labels (singletons).
    let mut level3: BTreeSet<Vec<VarId>> = BTreeSet::new();
    for i in 0..level2.len() {
        for j in i + 1..level2.len() {
            let inter = intersect(&level2[i], &level2[j]);
            if inter.len() == 1 {
                level3.insert(inter);
            }
        }
    }
    let level3: Vec<Vec<VarId>> = level3.into_iter().collect();

    let mut regions: Vec<Region> = Vec::new();
    for (label, factors) in level1 {
        regions.push(Region {
            label,
            factors,
            counting_number: 1,
            level: 1,
            copy: 0,
        });
    }
    let l2_start = regions.len();
    for label in &level2 {
        regions.push(Region {
            label: label.clone(),
            factors: vec![],
            counting_number: 0,
            level: 2,
            copy: 0,
        });
    }
    let l3_start = regions.len();
    for label in &level3 {
        regions.push(Region {
            label: label.clone(),
            factors: vec![],
            counting_number: 0,
            level: 3,
            copy: 0,
        });
    }

    // Edges level k -> k+1 by label containment (pairs and singletons cannot
    // nest within their own level, so every containment is maximal).
    let mut parents: Vec<Vec<RegionId>> = vec![vec![]; regions.len()];
    let mut children: Vec<Vec<RegionId>> = vec![vec![]; regions.len()];
    for upper in 0..l2_start {
        for lower in l2_start..l3_start {
            if contains(&regions[upper].label, &regions[lower].label) {
                children[upper].push(lower);
                parents[lower].push(upper);
            }
        }
    }
    for upper in l2_start..l3_start {
        for lower in l3_start..regions.len() {
            if contains(&regions[upper].label, &regions[lower].label) {
                children[upper].push(lower);
                parents[lower].push(upper);
            }
        }
    }

    let mut graph = RegionGraph {
        regions,
        parents,
        children,
        dropped_zero_singletons: Vec::new(),
    };
    recompute_counting_numbers(&mut graph);

    // Prune zero-weight level-3 singletons.
    let dropped: Vec<RegionId> = graph
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.level == 3 && r.counting_number == 0)
        .map(|(i, _)| i)
        .collect();
    if !dropped.is_empty() {
        graph = prune(graph, &dropped);
    }
    Ok(graph)
}

fn intersect(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    a.iter().filter(|v| b.contains(v)).copied().collect()
}

fn contains(outer: &[VarId], inner: &[VarId]) -> bool {
    inner.iter().all(|v| outer.contains(v))
}

fn prune(graph: RegionGraph, drop: &[RegionId]) -> RegionGraph {
    let dropset: BTreeSet<RegionId> = drop.iter().copied().collect();
    let mut remap: Vec<Option<RegionId>> = vec![None; graph.regions.len()];
    let mut regions = Vec::new();
    let mut dropped_labels = Vec::new();
    for (i, r) in graph.regions.iter().enumerate() {
        if dropset.contains(&i) {
            dropped_labels.push(r.label.clone());
        } else {
            remap[i] = Some(regions.len());
            regions.push(r.clone());
        }
    }
    let remap_list = |ids: &[RegionId]| -> Vec<RegionId> {
        ids.iter().filter_map(|&i| remap[i]).collect()
    };
    let parents = graph
        .parents
        .iter()
        .enumerate()
        .filter(|(i, _)| remap[*i].is_some())
        .map(|(_, p)| remap_list(p))
        .collect();
    let children = graph
        .children
        .iter()
        .enumerate()
        .filter(|(i, _)| remap[*i].is_some())
        .map(|(_, c)| remap_list(c))
        .collect();
    RegionGraph {
        regions,
        parents,
        children,
        dropped_zero_singletons: dropped_labels,
    }
}

/// Recompute every counting number from the ancestor recursion
/// `c_r = 1 - sum_{r' in Ancestors(r)} c_{r'}`, top level first.
pub fn recompute_counting_numbers(graph: &mut RegionGraph) {
    let mut order: Vec<RegionId> = (0..graph.regions.len()).collect();
    order.sort_by_key(|&i| graph.regions[i].level);
    for &i in &order {
        let ancestors = graph.ancestors(i);
        let sum: i64 = ancestors
            .iter()
            .map(|&a| graph.regions[a].counting_number)
            .sum();
        graph.regions[i].counting_number = 1 - sum;
    }
}

/// Counting numbers keyed by region, computed fresh from the DAG.
pub fn counting_numbers(graph: &RegionGraph) -> BTreeMap<RegionId, i64> {
    let mut clone = graph.clone();
    recompute_counting_numbers(&mut clone);
    clone
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.counting_number))
        .collect()
}

/// Sum of all counting numbers; the graph satisfies the perfect correlation
/// property when the sum is one.
pub fn check_perfect_correlation(graph: &RegionGraph) -> (i64, bool) {
    let sum: i64 = graph.regions.iter().map(|r| r.counting_number).sum();
    (sum, sum == 1)
}

/// Evaluate the region-based entropy at uniform beliefs,
/// `H = sum_r c_r ln(prod_{v in r} m_v)`, and compare it against the true
/// maximum `sum_v ln m_v` over the variables of the graph.
pub fn check_maxent_uniform(graph: &RegionGraph, state_counts: &[usize]) -> bool {
    let mut vars: BTreeSet<VarId> = BTreeSet::new();
    let mut h = 0.0;
    for r in &graph.regions {
        let log_size: f64 = r
            .label
            .iter()
            .map(|v| (state_counts[v.index()] as f64).ln())
            .sum();
        h += r.counting_number as f64 * log_size;
        vars.extend(r.label.iter().copied());
    }
    let target: f64 = vars
        .iter()
        .map(|v| (state_counts[v.index()] as f64).ln())
        .sum();
    (h - target).abs() < 1e-9
}

/// Per-variable and per-factor validity: unity of counting numbers and
/// connectedness of the containing region set.
#[derive(Debug, Clone, Default)]
pub struct ValidityReport {
    pub unity_failures: Vec<(VarId, i64)>,
    pub connectivity_failures: Vec<VarId>,
    pub factor_failures: Vec<FactorId>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.unity_failures.is_empty()
            && self.connectivity_failures.is_empty()
            && self.factor_failures.is_empty()
    }
}

pub fn validity_report(graph: &RegionGraph, fs: &FactorSystem) -> ValidityReport {
    let mut report = ValidityReport::default();
    let mut vars: BTreeSet<VarId> = BTreeSet::new();
    for r in &graph.regions {
        vars.extend(r.label.iter().copied());
    }
    for &v in &vars {
        let containing = graph.regions_containing(v);
        let sum: i64 = containing
            .iter()
            .map(|&r| graph.regions[r].counting_number)
            .sum();
        if sum != 1 {
            report.unity_failures.push((v, sum));
        }
        if !connected_within(graph, &containing) {
            report.connectivity_failures.push(v);
        }
    }
    for f in fs.factors() {
        let hosts: Vec<RegionId> = graph
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.factors.contains(&f.id))
            .map(|(i, _)| i)
            .collect();
        let in_level1 = hosts.len() == 1 && graph.regions[hosts[0]].level == 1;
        let sum: i64 = graph
            .regions
            .iter()
            .filter(|r| contains(&r.label, f.scope()))
            .map(|r| r.counting_number)
            .sum();
        if !in_level1 || sum != 1 {
            report.factor_failures.push(f.id);
        }
    }
    report
}

fn connected_within(graph: &RegionGraph, members: &[RegionId]) -> bool {
    if members.len() <= 1 {
        return true;
    }
    let set: BTreeSet<RegionId> = members.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut stack = vec![members[0]];
    while let Some(r) = stack.pop() {
        if !seen.insert(r) {
            continue;
        }
        for &n in graph.parents(r).iter().chain(graph.children(r)) {
            if set.contains(&n) && !seen.contains(&n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}

/// Per-level statistics against the expected shape of a BFG-derived graph.
#[derive(Debug, Clone)]
pub struct LevelStats {
    pub level: u8,
    pub count: usize,
    pub region_sizes: BTreeSet<usize>,
    pub max_counting: i64,
    pub min_counting: i64,
}

#[derive(Debug, Clone)]
pub struct Table2Report {
    pub n: usize,
    pub levels: Vec<LevelStats>,
    pub deviations: Vec<String>,
}

impl Table2Report {
    pub fn matches(&self) -> bool {
        self.deviations.is_empty()
    }
}

impl fmt::Display for Table2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "level  v(r)  length  max(c_r)  min(c_r)")?;
        for l in &self.levels {
            let sizes: Vec<String> = l.region_sizes.iter().map(|s| s.to_string()).collect();
            writeln!(
                f,
                "{:>5}  {:>4}  {:>6}  {:>8}  {:>8}",
                l.level,
                sizes.join("/"),
                l.count,
                l.max_counting,
                l.min_counting
            )?;
        }
        if self.deviations.is_empty() {
            writeln!(f, "structure matches the expected n={} shape", self.n)
        } else {
            for d in &self.deviations {
                writeln!(f, "deviation: {d}")?;
            }
            Ok(())
        }
    }
}

/// Compare the graph against the expected structure for an `n`-variable
/// BFG-shaped input: level lengths `(n-2)^2, (n-2)^2, n-3`, level-1 counts
/// all one, level-2 counts spanning `[3-n, -1]`, level-3 counts spanning
/// `[1, n-3]`.
pub fn table2_report(graph: &RegionGraph, n: usize) -> Table2Report {
    let mut levels = Vec::new();
    for level in 1..=3u8 {
        let members: Vec<&Region> = graph.regions.iter().filter(|r| r.level == level).collect();
        let stats = LevelStats {
            level,
            count: members.len(),
            region_sizes: members.iter().map(|r| r.label.len()).collect(),
            max_counting: members
                .iter()
                .map(|r| r.counting_number)
                .max()
                .unwrap_or(0),
            min_counting: members
                .iter()
                .map(|r| r.counting_number)
                .min()
                .unwrap_or(0),
        };
        levels.push(stats);
    }
    let mut deviations = Vec::new();
    let expect = |deviations: &mut Vec<String>, ok: bool, message: String| {
        if !ok {
            deviations.push(message);
        }
    };
    let sq = (n.saturating_sub(2)) * (n.saturating_sub(2));
    let l = &levels;
    expect(
        &mut deviations,
        l[0].count == sq,
        format!("level-1 length {} != (n-2)^2 = {sq}", l[0].count),
    );
    expect(
        &mut deviations,
        l[1].count == sq,
        format!("level-2 length {} != (n-2)^2 = {sq}", l[1].count),
    );
    expect(
        &mut deviations,
        l[2].count == n.saturating_sub(3),
        format!("level-3 length {} != n-3 = {}", l[2].count, n - 3),
    );
    expect(
        &mut deviations,
        l[0].region_sizes.iter().all(|&s| s == 3),
        "level-1 regions are not all triplets".to_string(),
    );
    expect(
        &mut deviations,
        l[1].region_sizes.iter().all(|&s| s == 2),
        "level-2 regions are not all pairs".to_string(),
    );
    expect(
        &mut deviations,
        l[2].region_sizes.iter().all(|&s| s == 1),
        "level-3 regions are not all singletons".to_string(),
    );
    expect(
        &mut deviations,
        l[0].max_counting == 1 && l[0].min_counting == 1,
        "level-1 counting numbers are not all 1".to_string(),
    );
    if n > 3 {
        expect(
            &mut deviations,
            l[1].max_counting == -1,
            format!("level-2 max counting {} != -1", l[1].max_counting),
        );
        expect(
            &mut deviations,
            l[1].min_counting == 3 - n as i64,
            format!("level-2 min counting {} != 3-n = {}", l[1].min_counting, 3 - n as i64),
        );
        expect(
            &mut deviations,
            l[2].max_counting == n as i64 - 3,
            format!("level-3 max counting {} != n-3 = {}", l[2].max_counting, n as i64 - 3),
        );
        expect(
            &mut deviations,
            l[2].min_counting == 1,
            format!("level-3 min counting {} != 1", l[2].min_counting),
        );
    }
    Table2Report {
        n,
        levels,
        deviations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::markov::moralize;
    use crate::ori;

    fn trc_graph(n: usize) -> (RegionGraph, FactorSystem) {
        let net = generate::kappa_bfg_network(n, 2, 5);
        let mut fs = moralize(&net);
        let outer = ori::outer_regions(&net, &mut fs).unwrap();
        let graph = cvm_construct(&outer, &fs).unwrap();
        (graph, fs)
    }

    #[test]
    fn kappa5_level_sizes() {
        let (graph, _) = trc_graph(5);
        assert_eq!(graph.level(1).count(), 9);
        assert_eq!(graph.level(2).count(), 9);
        assert_eq!(graph.level(3).count(), 2);
        assert_eq!(graph.dropped_zero_singletons.len(), 4);
    }

    #[test]
    fn single_outer_region_graph() {
        let net = generate::kappa_bfg_network(3, 2, 1);
        let mut fs = moralize(&net);
        let outer = ori::outer_regions(&net, &mut fs).unwrap();
        let graph = cvm_construct(&outer, &fs).unwrap();
        assert_eq!(graph.len(), 1);
        assert_eq!(graph.regions[0].counting_number, 1);
        let (sum, ok) = check_perfect_correlation(&graph);
        assert!(ok && sum == 1);
    }

    #[test]
    fn counting_numbers_match_independent_ancestor_enumeration() {
        let (graph, _) = trc_graph(6);
        // Recompute each counting number from label-superset sets instead of
        // DAG ancestry; the two must agree on a CVM graph.
        for (i, r) in graph.regions.iter().enumerate() {
            let supersets: Vec<RegionId> = graph
                .regions
                .iter()
                .enumerate()
                .filter(|(j, s)| {
                    *j != i && r.label.iter().all(|v| s.label.contains(v))
                })
                .map(|(j, _)| j)
                .collect();
            let dag: BTreeSet<RegionId> = graph.ancestors(i);
            let by_label: BTreeSet<RegionId> = supersets.into_iter().collect();
            assert_eq!(dag, by_label, "region {i}");
            let sum: i64 = dag
                .iter()
                .map(|&a| graph.regions[a].counting_number)
                .sum();
            assert_eq!(r.counting_number, 1 - sum);
        }
    }

    #[test]
    fn perfect_correlation_for_kappa_range() {
        for n in 4..=12 {
            let (graph, _) = trc_graph(n);
            let (sum, ok) = check_perfect_correlation(&graph);
            assert!(ok, "n = {n}: sum = {sum}");
        }
    }

    #[test]
    fn maxent_uniform_at_kappa5() {
        let (graph, fs) = trc_graph(5);
        let dims = fs.dims();
        assert!(check_maxent_uniform(&graph, &dims));
        // H equals (number of BFG variables) * ln 2 for binary states.
        let mut h = 0.0;
        for r in &graph.regions {
            h += r.counting_number as f64 * (r.label.len() as f64) * 2f64.ln();
        }
        assert!((h - 8.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn maxent_detects_broken_unity() {
        let (mut graph, fs) = trc_graph(5);
        // Corrupt one counting number: unity for its variables breaks.
        graph.regions[0].counting_number = 2;
        let dims = fs.dims();
        assert!(!check_maxent_uniform(&graph, &dims));
        assert!(!validity_report(&graph, &fs).is_valid());
    }

    #[test]
    fn table2_shapes() {
        for (n, l3_max, l2_min) in [(4usize, 1i64, -1i64), (5, 2, -2), (8, 5, -5)] {
            let (graph, _) = trc_graph(n);
            let report = table2_report(&graph, n);
            assert!(report.matches(), "n = {n}: {report}");
            assert_eq!(report.levels[2].max_counting, l3_max);
            assert_eq!(report.levels[1].min_counting, l2_min);
        }
    }

    #[test]
    fn validity_holds_for_trc_graphs() {
        for n in 4..=9 {
            let (graph, fs) = trc_graph(n);
            let report = validity_report(&graph, &fs);
            assert!(report.is_valid(), "n = {n}: {report:?}");
        }
    }

    #[test]
    fn uncovered_factor_is_rejected() {
        let net = generate::kappa_bfg_network(4, 2, 2);
        let mut fs = moralize(&net);
        let mut outer = ori::outer_regions(&net, &mut fs).unwrap();
        outer.pop();
        let result = cvm_construct(&outer, &fs);
        assert!(matches!(
            result,
            Err(RegionError::UncoveredFactor { .. }) | Err(RegionError::FactorMultiplyAssigned { .. })
        ));
    }
}

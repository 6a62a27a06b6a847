//! Region graph binary factorization: duplicate every inner region that has
//! more than two parents into a chain of copies with exactly two parents
//! each, assigning copy counting numbers from {1, -1, 0} that accumulate to
//! the original.
//!
//! Levels are processed top down, so a region's parent multiplicity is
//! evaluated against the already-transformed level above. Neighboring copies
//! share one parent, which keeps the containing-region set of every variable
//! connected, and every copy inherits all of the original's children.

use std::collections::BTreeSet;

use crate::regions::{Region, RegionError, RegionGraph, RegionId};

/// Rewrite the graph so every region below level 1 has exactly two parents.
///
/// Fails with [`RegionError::InvalidInput`] when a factor sits below level 1
/// or a counting number cannot be accumulated from {1, -1, 0} over the
/// available copies.
pub fn rgbf_transform(graph: &RegionGraph) -> Result<RegionGraph, RegionError> {
    if graph
        .regions
        .iter()
        .any(|r| r.level > 1 && !r.factors.is_empty())
    {
        return Err(RegionError::InvalidInput(
            "factors must all sit in level-1 regions".into(),
        ));
    }
    let max_level = graph.regions.iter().map(|r| r.level).max().unwrap_or(1);

    let mut regions: Vec<Region> = Vec::new();
    let mut parents: Vec<Vec<RegionId>> = Vec::new();
    // old region id -> its copies in the new graph
    let mut mapped: Vec<Vec<RegionId>> = vec![vec![]; graph.regions.len()];

    for (i, r) in graph.regions.iter().enumerate() {
        if r.level == 1 {
            mapped[i] = vec![regions.len()];
            regions.push(r.clone());
            parents.push(vec![]);
        }
    }

    for level in 2..=max_level {
        let mut at_level: Vec<RegionId> = graph
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.level == level)
            .map(|(i, _)| i)
            .collect();
        at_level.sort_by(|&a, &b| {
            (&graph.regions[a].label, graph.regions[a].copy)
                .cmp(&(&graph.regions[b].label, graph.regions[b].copy))
        });
        for old in at_level {
            let r = &graph.regions[old];
            let mut new_parents: Vec<RegionId> = graph
                .parents(old)
                .iter()
                .flat_map(|&p| mapped[p].iter().copied())
                .collect();
            new_parents.sort_by(|&a, &b| {
                (&regions[a].label, regions[a].copy).cmp(&(&regions[b].label, regions[b].copy))
            });
            if new_parents.len() <= 2 {
                let id = regions.len();
                regions.push(r.clone());
                parents.push(new_parents);
                mapped[old] = vec![id];
                continue;
            }
            let copies = new_parents.len() - 1;
            let assigned = split_counting(r.counting_number, copies).ok_or_else(|| {
                RegionError::InvalidInput(format!(
                    "counting number {} cannot spread over {copies} copies",
                    r.counting_number
                ))
            })?;
            let mut ids = Vec::with_capacity(copies);
            for (z, &c) in assigned.iter().enumerate() {
                let id = regions.len();
                regions.push(Region {
                    label: r.label.clone(),
                    factors: vec![],
                    counting_number: c,
                    level: r.level,
                    copy: (z + 1) as u16,
                });
                parents.push(vec![new_parents[z], new_parents[z + 1]]);
                ids.push(id);
            }
            mapped[old] = ids;
        }
    }

    let mut children: Vec<Vec<RegionId>> = vec![vec![]; regions.len()];
    for (child, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(child);
        }
    }
    Ok(RegionGraph::from_parts(
        regions,
        parents,
        children,
        graph.dropped_zero_singletons.clone(),
    ))
}

/// Front-loaded split of `total` into `copies` values from {1, -1, 0}.
fn split_counting(total: i64, copies: usize) -> Option<Vec<i64>> {
    if total.unsigned_abs() as usize > copies {
        return None;
    }
    let unit = total.signum();
    let mut out = vec![0i64; copies];
    for slot in out.iter_mut().take(total.unsigned_abs() as usize) {
        *slot = unit;
    }
    Some(out)
}

/// Equivalence audit between a graph and its two-parent rewrite.
#[derive(Debug, Clone, Default)]
pub struct EquivalenceReport {
    /// Copy chains whose neighbors fail to share a parent.
    pub broken_chains: Vec<String>,
    /// Variables whose counting-number sum changed, with (before, after).
    pub unity_changes: Vec<(String, i64, i64)>,
    /// Regions with counting numbers outside {1, -1, 0}.
    pub counting_outliers: Vec<String>,
    /// Inner regions with a parent count other than two.
    pub parent_violations: Vec<String>,
    /// Largest number of local cycles through any level-3 region.
    pub max_level3_cycles: usize,
}

impl EquivalenceReport {
    pub fn all_pass(&self) -> bool {
        self.broken_chains.is_empty()
            && self.unity_changes.is_empty()
            && self.counting_outliers.is_empty()
            && self.parent_violations.is_empty()
    }
}

/// Verify the four Proposition-style conditions: chain consistency,
/// per-variable unity preservation, counting numbers restricted to
/// {1, -1, 0}, and the two-parent bound; also measures local cycles per
/// level-3 region.
pub fn audit_equivalence(before: &RegionGraph, after: &RegionGraph) -> EquivalenceReport {
    let mut report = EquivalenceReport::default();

    // (a) chain consistency: consecutive copies share a parent.
    let mut groups: std::collections::BTreeMap<(u8, Vec<crate::model::VarId>), Vec<RegionId>> =
        std::collections::BTreeMap::new();
    for (i, r) in after.regions.iter().enumerate() {
        groups.entry((r.level, r.label.clone())).or_default().push(i);
    }
    for ((_, label), mut ids) in groups {
        ids.sort_by_key(|&i| after.regions[i].copy);
        for w in ids.windows(2) {
            if after.regions[w[0]].copy == 0 {
                continue; // not a copy chain
            }
            let a: BTreeSet<RegionId> = after.parents(w[0]).iter().copied().collect();
            let b: BTreeSet<RegionId> = after.parents(w[1]).iter().copied().collect();
            if a.intersection(&b).next().is_none() {
                report.broken_chains.push(format!("{label:?}"));
            }
        }
    }

    // (b) unity: per-variable counting sums match.
    let mut vars: BTreeSet<crate::model::VarId> = BTreeSet::new();
    for r in &before.regions {
        vars.extend(r.label.iter().copied());
    }
    for v in vars {
        let sum = |g: &RegionGraph| -> i64 {
            g.regions
                .iter()
                .filter(|r| r.label.contains(&v))
                .map(|r| r.counting_number)
                .sum()
        };
        let (b, a) = (sum(before), sum(after));
        if b != a {
            report.unity_changes.push((format!("{v}"), b, a));
        }
    }

    // (c) counting numbers in {1, -1, 0}.
    for r in &after.regions {
        if !matches!(r.counting_number, -1 | 0 | 1) {
            report.counting_outliers.push(format!(
                "{:?} (level {}) has c = {}",
                r.label, r.level, r.counting_number
            ));
        }
    }

    // (d) every inner region has exactly two parents.
    for (i, r) in after.regions.iter().enumerate() {
        if r.level > 1 && after.parents(i).len() != 2 {
            report.parent_violations.push(format!(
                "{:?} (level {}) has {} parents",
                r.label,
                r.level,
                after.parents(i).len()
            ));
        }
    }

    // Local cycle count behind each level-3 region: common grandparents of
    // its two parents.
    for i in after.level(3) {
        let ps = after.parents(i);
        if ps.len() == 2 {
            let a: BTreeSet<RegionId> = after.parents(ps[0]).iter().copied().collect();
            let b: BTreeSet<RegionId> = after.parents(ps[1]).iter().copied().collect();
            let cycles = a.intersection(&b).count();
            report.max_level3_cycles = report.max_level3_cycles.max(cycles);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::markov::moralize;
    use crate::ori;
    use crate::regions::{check_perfect_correlation, cvm_construct};

    fn trc_graph(n: usize) -> (RegionGraph, crate::markov::FactorSystem) {
        let net = generate::kappa_bfg_network(n, 2, 5);
        let mut fs = moralize(&net);
        let outer = ori::outer_regions(&net, &mut fs).unwrap();
        (cvm_construct(&outer, &fs).unwrap(), fs)
    }

    #[test]
    fn split_counting_front_loads() {
        assert_eq!(split_counting(-2, 2).unwrap(), vec![-1, -1]);
        assert_eq!(split_counting(2, 3).unwrap(), vec![1, 1, 0]);
        assert_eq!(split_counting(0, 4).unwrap(), vec![0, 0, 0, 0]);
        assert!(split_counting(-3, 2).is_none());
    }

    #[test]
    fn two_parent_regions_pass_through() {
        let (graph, _) = trc_graph(4);
        let after = rgbf_transform(&graph).unwrap();
        // kappa_4 level-2 regions all have exactly two parents already.
        assert_eq!(graph.level(2).count(), after.level(2).count());
    }

    #[test]
    fn transformed_graph_passes_audit() {
        for n in [5usize, 6, 8, 10] {
            let (graph, _) = trc_graph(n);
            let after = rgbf_transform(&graph).unwrap();
            let report = audit_equivalence(&graph, &after);
            assert!(report.all_pass(), "n = {n}: {report:?}");
            assert!(report.max_level3_cycles <= 1, "n = {n}");
            let (sum_before, _) = check_perfect_correlation(&graph);
            let (sum_after, _) = check_perfect_correlation(&after);
            assert_eq!(sum_before, sum_after);
        }
    }

    #[test]
    fn transform_is_idempotent() {
        let (graph, _) = trc_graph(6);
        let once = rgbf_transform(&graph).unwrap();
        let twice = rgbf_transform(&once).unwrap();
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.regions.iter().zip(&twice.regions) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.counting_number, b.counting_number);
            assert_eq!(a.copy, b.copy);
        }
        for i in 0..once.len() {
            assert_eq!(once.parents(i), twice.parents(i));
        }
    }

    #[test]
    fn unity_preserved_on_kappa6() {
        let (graph, fs) = trc_graph(6);
        let after = rgbf_transform(&graph).unwrap();
        for v in fs.var_ids() {
            let sum: i64 = after
                .regions
                .iter()
                .filter(|r| r.label.contains(&v))
                .map(|r| r.counting_number)
                .sum();
            assert_eq!(sum, 1, "variable {}", fs.name(v));
        }
    }

    #[test]
    fn audit_flags_broken_unity() {
        let (graph, _) = trc_graph(5);
        let mut after = rgbf_transform(&graph).unwrap();
        after.regions.last_mut().unwrap().counting_number += 1;
        let report = audit_equivalence(&graph, &after);
        assert!(!report.unity_changes.is_empty());
    }

    #[test]
    fn rejects_factors_below_level_one() {
        let (mut graph, _) = trc_graph(5);
        let inner = graph.level(2).next().unwrap();
        graph.regions[inner].factors.push(0);
        assert!(matches!(
            rgbf_transform(&graph),
            Err(RegionError::InvalidInput(_))
        ));
    }
}

//! Outer region identification: primary triplets from the BFG families,
//! candidate interaction triplets from coupled Markov blankets, and the two
//! redundancy rejection rules that keep the region graph's counting
//! structure correct.
//!
//! Two construction paths exist. The exhaustive one enumerates node pairs of
//! every primary triplet and their coupled blankets, then rejects redundant
//! candidates; the streamlined one walks the moral edges directly. Both
//! yield the same outer set, which the tests cross-validate.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::markov::{coupled_markov_blanket, FactorSystem};
use crate::model::{DiscreteNetwork, VarId};
use crate::regions::OuterRegion;

#[derive(Debug, Error)]
pub enum OriError {
    #[error("factor over {{{0}}} fits no primary triplet")]
    UnabsorbedFactor(String),
}

/// Triplet formed by a two-parent family `{child} ∪ pa{child}`, carrying the
/// converted CPD factor (plus any absorbed root factors).
#[derive(Debug, Clone)]
pub struct PrimaryTriplet {
    pub child: VarId,
    pub label: Vec<VarId>,
    pub factors: Vec<usize>,
}

/// Uniform-factor triplet connecting primary triplets through a shared node
/// pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct InteractionTriplet {
    pub label: Vec<VarId>,
}

/// Why a candidate interaction triplet was not kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    /// Equals a primary triplet's node set.
    Primary,
    /// Contains a node pair with no edge in the moral graph.
    Type1 { pair: (VarId, VarId) },
    /// Contains a moral edge and a root node of the BFG.
    Type2 { root: VarId, moral: (VarId, VarId) },
}

/// Audit row: one candidate and its verdict (`None` = kept).
#[derive(Debug, Clone)]
pub struct CandidateAudit {
    pub label: Vec<VarId>,
    pub verdict: Option<Rejection>,
}

/// One primary triplet per two-parent BFG variable. Factors of root
/// variables (fewer than two parents) are absorbed into the first primary
/// triplet, in child order, whose label covers their scope.
pub fn primary_triplets(
    bfg: &DiscreteNetwork,
    fs: &FactorSystem,
) -> Result<Vec<PrimaryTriplet>, OriError> {
    let mut triplets: Vec<PrimaryTriplet> = Vec::new();
    for v in bfg.var_ids() {
        if bfg.parents(v).len() == 2 {
            let mut label = vec![v, bfg.parents(v)[0], bfg.parents(v)[1]];
            label.sort();
            triplets.push(PrimaryTriplet {
                child: v,
                label,
                factors: vec![v.index()],
            });
        }
    }
    // Absorb small factors (roots / single-parent nodes).
    for v in bfg.var_ids() {
        if bfg.parents(v).len() < 2 {
            let scope = fs.factor(v.index()).scope();
            let host = triplets
                .iter_mut()
                .find(|t| scope.iter().all(|s| t.label.contains(s)))
                .ok_or_else(|| {
                    OriError::UnabsorbedFactor(
                        scope
                            .iter()
                            .map(|&s| fs.name(s).to_string())
                            .collect::<Vec<_>>()
                            .join(" "),
                    )
                })?;
            host.factors.push(v.index());
        }
    }
    Ok(triplets)
}

/// All candidate interaction triplets: for each node pair of each primary
/// triplet, one candidate per member of the pair's coupled Markov blanket.
/// Deduplicated; candidates equal to a primary triplet node set are dropped.
pub fn candidate_interactions(
    bfg: &DiscreteNetwork,
    fs: &FactorSystem,
) -> Vec<InteractionTriplet> {
    let primaries = primary_triplets(bfg, fs).unwrap_or_default();
    let primary_labels: BTreeSet<Vec<VarId>> =
        primaries.iter().map(|t| t.label.clone()).collect();
    let mut out: BTreeSet<Vec<VarId>> = BTreeSet::new();
    for t in &primaries {
        for i in 0..t.label.len() {
            for j in i + 1..t.label.len() {
                let (a, b) = (t.label[i], t.label[j]);
                let blanket = coupled_markov_blanket(fs, a, b).expect("members exist");
                for c in blanket {
                    let mut label = vec![a, b, c];
                    label.sort();
                    label.dedup();
                    if label.len() == 3 && !primary_labels.contains(&label) {
                        out.insert(label);
                    }
                }
            }
        }
    }
    out.into_iter()
        .map(|label| InteractionTriplet { label })
        .collect()
}

fn classify(
    label: &[VarId],
    fs: &FactorSystem,
    roots: &BTreeSet<VarId>,
) -> Option<Rejection> {
    // Type 1: some pair is not an edge of the moral graph.
    for i in 0..label.len() {
        for j in i + 1..label.len() {
            if !fs.is_edge(label[i], label[j]) {
                return Some(Rejection::Type1 {
                    pair: (label[i], label[j]),
                });
            }
        }
    }
    // Type 2: contains a moral edge and a root of the BFG.
    let root = label.iter().find(|v| roots.contains(v));
    if let Some(&root) = root {
        for i in 0..label.len() {
            for j in i + 1..label.len() {
                if fs.is_moral_edge(label[i], label[j]) {
                    return Some(Rejection::Type2 {
                        root,
                        moral: (label[i], label[j]),
                    });
                }
            }
        }
    }
    None
}

/// Apply the redundancy rules to a candidate list; returns the kept
/// triplets plus a per-candidate audit trail.
pub fn reject_redundant(
    candidates: &[InteractionTriplet],
    fs: &FactorSystem,
    bfg: &DiscreteNetwork,
) -> (Vec<InteractionTriplet>, Vec<CandidateAudit>) {
    let roots: BTreeSet<VarId> = bfg
        .var_ids()
        .filter(|&v| bfg.parents(v).is_empty())
        .collect();
    let mut kept = Vec::new();
    let mut audit = Vec::new();
    for cand in candidates {
        let verdict = classify(&cand.label, fs, &roots);
        if verdict.is_none() {
            kept.push(cand.clone());
        }
        audit.push(CandidateAudit {
            label: cand.label.clone(),
            verdict,
        });
    }
    (kept, audit)
}

/// Streamlined construction: one pass over the moral edges, one candidate
/// per coupled-blanket member, with the same redundancy dropping applied.
pub fn interaction_from_moral_edges(
    bfg: &DiscreteNetwork,
    fs: &FactorSystem,
) -> Vec<InteractionTriplet> {
    let primaries = primary_triplets(bfg, fs).unwrap_or_default();
    let primary_labels: BTreeSet<Vec<VarId>> =
        primaries.iter().map(|t| t.label.clone()).collect();
    let mut candidates: BTreeSet<Vec<VarId>> = BTreeSet::new();
    for &(a, b) in fs.moral_edges() {
        let blanket = coupled_markov_blanket(fs, a, b).expect("members exist");
        for c in blanket {
            let mut label = vec![a, b, c];
            label.sort();
            label.dedup();
            if label.len() == 3 && !primary_labels.contains(&label) {
                candidates.insert(label);
            }
        }
    }
    let list: Vec<InteractionTriplet> = candidates
        .into_iter()
        .map(|label| InteractionTriplet { label })
        .collect();
    let (kept, _) = reject_redundant(&list, fs, bfg);
    kept
}

/// Full outer-region set for a BFG: primary triplets (with their factors)
/// followed by interaction triplets (each given a fresh uniform factor in
/// `fs`).
pub fn outer_regions(
    bfg: &DiscreteNetwork,
    fs: &mut FactorSystem,
) -> Result<Vec<OuterRegion>, OriError> {
    let primaries = primary_triplets(bfg, fs)?;
    let interactions = interaction_from_moral_edges(bfg, fs);
    let mut out: Vec<OuterRegion> = primaries
        .into_iter()
        .map(|t| OuterRegion {
            label: t.label,
            factors: t.factors,
        })
        .collect();
    for t in interactions {
        let factor = fs.add_uniform_factor(t.label.clone());
        out.push(OuterRegion {
            label: t.label,
            factors: vec![factor],
        });
    }
    Ok(out)
}

/// Audit of the exhaustive path (candidates plus verdicts), for the
/// `--list-outer` report.
pub fn full_audit(bfg: &DiscreteNetwork, fs: &FactorSystem) -> Vec<CandidateAudit> {
    let candidates = candidate_interactions(bfg, fs);
    let (_, audit) = reject_redundant(&candidates, fs, bfg);
    audit
}

/// Expected triplet counts for BFG-shaped inputs on `n` original variables.
pub fn expected_counts(n: u64) -> (u64, u64) {
    let interactions = crate::factorize::intermediate_count(n);
    let primaries = n - 2 + interactions;
    (primaries, interactions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::markov::moralize;

    fn kappa(n: usize) -> (DiscreteNetwork, FactorSystem) {
        let net = generate::kappa_bfg_network(n, 2, 1);
        let fs = moralize(&net);
        (net, fs)
    }

    fn label(bfg: &DiscreteNetwork, names: &[&str]) -> Vec<VarId> {
        let mut ids: Vec<VarId> = names.iter().map(|n| bfg.var_id(n).unwrap()).collect();
        ids.sort();
        ids
    }

    #[test]
    fn primary_triplet_counts() {
        for (n, expected) in [(3usize, 1usize), (4, 3), (5, 6)] {
            let (bfg, fs) = kappa(n);
            let primaries = primary_triplets(&bfg, &fs).unwrap();
            assert_eq!(primaries.len(), expected, "n = {n}");
        }
    }

    #[test]
    fn root_factors_are_absorbed_into_first_family() {
        let (bfg, fs) = kappa(4);
        let primaries = primary_triplets(&bfg, &fs).unwrap();
        let x3_family = primaries
            .iter()
            .find(|t| t.label == label(&bfg, &["X1", "X2", "X3"]))
            .unwrap();
        // That region carries the CPDs of X3, X1 and X2.
        assert_eq!(x3_family.factors.len(), 3);
        let total: usize = primaries.iter().map(|t| t.factors.len()).sum();
        assert_eq!(total, bfg.len());
    }

    #[test]
    fn kappa5_candidates_for_pair_x1_x3() {
        let (bfg, fs) = kappa(5);
        let candidates = candidate_interactions(&bfg, &fs);
        let labels: BTreeSet<Vec<VarId>> =
            candidates.iter().map(|c| c.label.clone()).collect();
        for expected in [
            label(&bfg, &["X1", "X3", "E1"]),
            label(&bfg, &["X1", "X3", "E2"]),
            label(&bfg, &["X1", "X3", "X4"]),
            label(&bfg, &["X1", "X3", "E3"]),
        ] {
            assert!(labels.contains(&expected), "{expected:?}");
        }
        // The primary {X1 X2 X3} never shows up as a candidate.
        assert!(!labels.contains(&label(&bfg, &["X1", "X2", "X3"])));
    }

    #[test]
    fn table1_verdicts() {
        let (bfg, fs) = kappa(5);
        let audit = full_audit(&bfg, &fs);
        let verdict = |names: &[&str]| {
            let l = label(&bfg, names);
            audit
                .iter()
                .find(|a| a.label == l)
                .map(|a| a.verdict.clone())
                .expect("candidate present")
        };
        assert!(matches!(
            verdict(&["X1", "X3", "X4"]),
            Some(Rejection::Type1 { .. })
        ));
        assert!(matches!(
            verdict(&["X1", "X3", "E2"]),
            Some(Rejection::Type2 { .. })
        ));
        assert_eq!(verdict(&["X2", "X3", "E1"]), None);
    }

    #[test]
    fn interaction_counts_match_moral_edges() {
        for n in [4usize, 5, 6, 8] {
            let (bfg, fs) = kappa(n);
            let kept = interaction_from_moral_edges(&bfg, &fs);
            let expected = crate::factorize::intermediate_count(n as u64) as usize;
            assert_eq!(kept.len(), expected, "n = {n}");
        }
    }

    #[test]
    fn kappa4_single_interaction() {
        let (bfg, fs) = kappa(4);
        let kept = interaction_from_moral_edges(&bfg, &fs);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].label, label(&bfg, &["X2", "X3", "E1"]));
    }

    #[test]
    fn kappa3_has_no_interactions() {
        let (bfg, fs) = kappa(3);
        assert!(interaction_from_moral_edges(&bfg, &fs).is_empty());
        assert!(candidate_interactions(&bfg, &fs).is_empty());
    }

    #[test]
    fn construction_paths_agree() {
        for n in 4..=10usize {
            let (bfg, fs) = kappa(n);
            let exhaustive: BTreeSet<Vec<VarId>> = {
                let candidates = candidate_interactions(&bfg, &fs);
                let (kept, _) = reject_redundant(&candidates, &fs, &bfg);
                kept.into_iter().map(|t| t.label).collect()
            };
            let streamlined: BTreeSet<Vec<VarId>> = interaction_from_moral_edges(&bfg, &fs)
                .into_iter()
                .map(|t| t.label)
                .collect();
            assert_eq!(exhaustive, streamlined, "n = {n}");
        }
    }

    #[test]
    fn outer_count_is_n_minus_2_squared() {
        for n in 4..=10usize {
            let net = generate::kappa_bfg_network(n, 2, 3);
            let mut fs = moralize(&net);
            let outer = outer_regions(&net, &mut fs).unwrap();
            assert_eq!(outer.len(), (n - 2) * (n - 2), "n = {n}");
            // Interaction factors are uniform.
            for o in &outer {
                for &f in &o.factors {
                    if fs.factor(f).source == crate::markov::FactorSource::UniformInteraction {
                        let values = &fs.factor(f).table.values;
                        assert!(values.iter().all(|&x| x == values[0]));
                    }
                }
            }
        }
    }

    #[test]
    fn maximal_exhaustiveness() {
        // The interaction triplets exhaust the local pair-wise correlations
        // left implicit by moralization: every moral edge ends up shared by
        // at least two outer regions, and every pair whose candidate
        // interactions were all rejected is redundant (contains a root or a
        // non-edge) rather than silently missed.
        for n in 4..=8usize {
            let net = generate::kappa_bfg_network(n, 2, 2);
            let mut fs = moralize(&net);
            let outer = outer_regions(&net, &mut fs).unwrap();
            let shared = |a: VarId, b: VarId| {
                outer
                    .iter()
                    .filter(|o| o.label.contains(&a) && o.label.contains(&b))
                    .count()
                    >= 2
            };
            for &(a, b) in fs.moral_edges() {
                assert!(shared(a, b), "n = {n}: moral edge ({a}, {b}) not shared");
            }
            let roots: BTreeSet<VarId> = net
                .var_ids()
                .filter(|&v| net.parents(v).is_empty())
                .collect();
            let primaries = primary_triplets(&net, &fs).unwrap();
            let primary_labels: BTreeSet<Vec<VarId>> =
                primaries.iter().map(|t| t.label.clone()).collect();
            for t in &primaries {
                for i in 0..3 {
                    for j in i + 1..3 {
                        let (a, b) = (t.label[i], t.label[j]);
                        if !fs.is_edge(a, b) || shared(a, b) {
                            continue;
                        }
                        // An unshared pair means no candidate over it was
                        // keepable: every completing moral-graph triangle is
                        // a primary triplet or Type-2 redundant.
                        for c in net.var_ids() {
                            if c == a || c == b || !fs.is_edge(c, a) || !fs.is_edge(c, b) {
                                continue;
                            }
                            let mut label = vec![a, b, c];
                            label.sort();
                            if primary_labels.contains(&label) {
                                continue;
                            }
                            let has_root = label.iter().any(|v| roots.contains(v));
                            let has_moral = [(a, b), (a, c), (b, c)]
                                .iter()
                                .any(|&(x, y)| fs.is_moral_edge(x, y));
                            assert!(
                                has_root && has_moral,
                                "n = {n}: keepable candidate over unshared pair ({a}, {b})"
                            );
                        }
                    }
                }
            }
        }
    }
}

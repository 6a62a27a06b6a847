//! Seeded random model generators for experiments and tests.
//!
//! CPT rows are symmetric Dirichlet(1) draws, clipped to `[0.01, 0.99]` and
//! renormalized so no conditional probability is extreme.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Cpt, DiscreteNetwork, VarId, VariableDecl};

/// One Dirichlet(1) row over `m` states: normalized Exp(1) draws, clipped
/// away from 0 and 1.
fn dirichlet_row(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..m)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -u.ln()
        })
        .collect();
    let total: f64 = row.iter().sum();
    for x in &mut row {
        *x = (*x / total).clamp(0.01, 0.99);
    }
    let total: f64 = row.iter().sum();
    for x in &mut row {
        *x /= total;
    }
    row
}

fn random_cpt(rng: &mut ChaCha8Rng, child: VarId, parents: Vec<VarId>, dims: &[usize], m: usize) -> Cpt {
    let rows: usize = parents.iter().map(|p| dims[p.index()]).product();
    let mut values = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        values.extend(dirichlet_row(rng, m));
    }
    Cpt::new(child, parents, values)
}

/// Complete DAG on `n` nodes `X1..Xn` (edge `Xi -> Xj` for `i < j`), every
/// variable with `m` states and random NPTs.
pub fn complete_network(n: usize, m: usize, seed: u64) -> DiscreteNetwork {
    assert!(n >= 1 && m >= 2, "need n >= 1, m >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<VariableDecl> = (1..=n)
        .map(|i| VariableDecl::numeric(format!("X{i}"), m))
        .collect();
    let dims = vec![m; n];
    let cpts = (0..n)
        .map(|i| {
            let parents: Vec<VarId> = (0..i as u32).map(VarId).collect();
            random_cpt(&mut rng, VarId(i as u32), parents, &dims, m)
        })
        .collect();
    DiscreteNetwork::new(vars, cpts).unwrap()
}

/// A BFG-shaped network: the DAG of a binary factorized `n`-node complete
/// graph, with every variable (spine and intermediate alike) carrying `m`
/// states and random NPTs.
///
/// This is the high tree-width test family: node count is
/// `kappa(n) = (n^2 - 3n + 6) / 2` while every CPT stays at most
/// `m^2 x m`, so the model is storable at dimensions where an actual
/// complete BN would be exponential. Spine variables keep kind `original`;
/// chain variables are marked `intermediate`.
pub fn kappa_bfg_network(n: usize, m: usize, seed: u64) -> DiscreteNetwork {
    assert!(n >= 3 && m >= 2, "need n >= 3, m >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars: Vec<VariableDecl> = Vec::new();
    let mut parent_plan: Vec<Vec<usize>> = Vec::new();
    let mut spine: Vec<usize> = Vec::new();
    let mut next_e = 1usize;

    // X1, X2, X3 with the triangle structure.
    for i in 1..=3.min(n) {
        spine.push(vars.len());
        vars.push(VariableDecl::numeric(format!("X{i}"), m));
        parent_plan.push(spine[..i - 1].to_vec());
    }
    // Each later spine node hangs off a fresh intermediate chain.
    for k in 4..=n {
        let mut prev = {
            let idx = vars.len();
            vars.push(VariableDecl::numeric(format!("E{next_e}"), m));
            vars[idx].kind = crate::model::VarKind::Intermediate;
            next_e += 1;
            parent_plan.push(vec![spine[0], spine[1]]);
            idx
        };
        for j in 2..=k - 3 {
            let idx = vars.len();
            vars.push(VariableDecl::numeric(format!("E{next_e}"), m));
            vars[idx].kind = crate::model::VarKind::Intermediate;
            next_e += 1;
            parent_plan.push(vec![prev, spine[j]]);
            prev = idx;
        }
        let idx = vars.len();
        vars.push(VariableDecl::numeric(format!("X{k}"), m));
        parent_plan.push(vec![prev, spine[k - 2]]);
        spine.push(idx);
    }

    let dims = vec![m; vars.len()];
    let cpts = parent_plan
        .iter()
        .enumerate()
        .map(|(i, parents)| {
            let parents: Vec<VarId> = parents.iter().map(|&p| VarId(p as u32)).collect();
            random_cpt(&mut rng, VarId(i as u32), parents, &dims, m)
        })
        .collect();
    DiscreteNetwork::new(vars, cpts).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize;

    #[test]
    fn complete_network_is_valid_and_complete() {
        let net = complete_network(6, 2, 1);
        assert!(net.validate().is_valid());
        assert!(net.is_complete_dag());
        assert_eq!(net.len(), 6);
    }

    #[test]
    fn kappa_bfg_network_has_kappa_nodes() {
        for n in [3usize, 4, 5, 8, 12, 20] {
            let net = kappa_bfg_network(n, 2, 7);
            assert!(net.validate().is_valid(), "n={n}: {}", net.validate());
            assert_eq!(net.len() as u64, factorize::kappa(n as u64).unwrap());
            assert_eq!(net.max_indegree(), 2.min(n - 1));
            assert_eq!(net.original_vars().len(), n);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = complete_network(5, 3, 42);
        let b = complete_network(5, 3, 42);
        let c = complete_network(5, 3, 43);
        assert_eq!(a.cpt(VarId(4)).values, b.cpt(VarId(4)).values);
        assert_ne!(a.cpt(VarId(4)).values, c.cpt(VarId(4)).values);
    }

    #[test]
    fn rows_avoid_extreme_probabilities() {
        let net = kappa_bfg_network(8, 4, 3);
        for cpt in net.cpts() {
            for &x in &cpt.values {
                assert!(x > 0.005 && x < 0.995);
            }
        }
    }
}

//! Dense tables over subsets of variables.
//!
//! A table stores one `f64` per joint state of its scope, row-major with the
//! **last scope variable varying fastest** — the same convention CPT rows
//! use. Factors keep linear-space values; the propagation engines reuse the
//! same layout for log-space tables.

use crate::model::VarId;

/// Dense table over an ordered variable scope.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub vars: Vec<VarId>,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(vars: Vec<VarId>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(vars.len(), dims.len());
        debug_assert_eq!(values.len(), dims.iter().product::<usize>());
        Self { vars, dims, values }
    }

    pub fn constant(vars: Vec<VarId>, dims: Vec<usize>, value: f64) -> Self {
        let size = dims.iter().product();
        Self {
            vars,
            dims,
            values: vec![value; size],
        }
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    /// Linear index of a full assignment, read through `assignment[var]`.
    pub fn index_of(&self, assignment: &[usize]) -> usize {
        let mut idx = 0;
        for (v, d) in self.vars.iter().zip(&self.dims) {
            idx = idx * d + assignment[v.index()];
        }
        idx
    }

    pub fn value_at(&self, assignment: &[usize]) -> f64 {
        self.values[self.index_of(assignment)]
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// For each linear index of `outer` (vars/dims), the linear index of the
/// projection onto `inner` (a subset of `outer`'s variables).
///
/// The returned map drives both marginalization (accumulate outer entries
/// into inner cells) and broadcasting (read an inner value per outer cell).
pub fn projection_map(
    outer_vars: &[VarId],
    outer_dims: &[usize],
    inner_vars: &[VarId],
    inner_dims: &[usize],
) -> Vec<u32> {
    // Stride of each inner variable in the inner table.
    let mut inner_stride = vec![0usize; inner_vars.len()];
    let mut s = 1;
    for i in (0..inner_vars.len()).rev() {
        inner_stride[i] = s;
        s *= inner_dims[i];
    }
    // Contribution of each outer digit to the inner index.
    let contrib: Vec<usize> = outer_vars
        .iter()
        .map(|v| {
            inner_vars
                .iter()
                .position(|w| w == v)
                .map_or(0, |i| inner_stride[i])
        })
        .collect();
    let outer_size: usize = outer_dims.iter().product();
    let mut map = vec![0u32; outer_size];
    let mut digits = vec![0usize; outer_vars.len()];
    for (idx, slot) in map.iter_mut().enumerate() {
        let mut inner_idx = 0;
        for (d, c) in digits.iter().zip(&contrib) {
            inner_idx += d * c;
        }
        *slot = inner_idx as u32;
        let _ = idx;
        // Odometer, last digit fastest.
        for i in (0..digits.len()).rev() {
            digits[i] += 1;
            if digits[i] < outer_dims[i] {
                break;
            }
            digits[i] = 0;
        }
    }
    map
}

/// Projection map reorganized for allocation-free marginalization: parent
/// indices grouped by the child cell they fall into.
#[derive(Debug, Clone)]
pub struct SegmentedProjection {
    /// Parent linear indices ordered by child cell.
    pub order: Vec<u32>,
    /// `order[offsets[j]..offsets[j+1]]` projects onto child cell `j`.
    pub offsets: Vec<u32>,
}

impl SegmentedProjection {
    pub fn from_map(map: &[u32], child_size: usize) -> Self {
        let mut counts = vec![0u32; child_size + 1];
        for &j in map {
            counts[j as usize + 1] += 1;
        }
        for j in 0..child_size {
            counts[j + 1] += counts[j];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut order = vec![0u32; map.len()];
        for (i, &j) in map.iter().enumerate() {
            order[cursor[j as usize] as usize] = i as u32;
            cursor[j as usize] += 1;
        }
        Self { order, offsets }
    }

    pub fn child_size(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `out[j] = logsumexp { values[i] : i projects onto j }`, no
    /// allocation.
    pub fn log_marginalize(&self, values: &[f64], out: &mut [f64]) {
        for j in 0..self.child_size() {
            let seg = &self.order[self.offsets[j] as usize..self.offsets[j + 1] as usize];
            let mut max = f64::NEG_INFINITY;
            for &i in seg {
                let v = values[i as usize];
                if v > max {
                    max = v;
                }
            }
            out[j] = if max.is_finite() {
                let mut sum = 0.0;
                for &i in seg {
                    sum += (values[i as usize] - max).exp();
                }
                max + sum.ln()
            } else {
                max
            };
        }
    }
}

/// log(sum(exp(x))) with max-subtraction; `-inf` for an empty or all `-inf`
/// input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Marginalize a log-space table onto a smaller scope through a projection
/// map: `out[j] = logsumexp { values[i] : map[i] == j }`.
pub fn log_marginalize_into(values: &[f64], map: &[u32], out: &mut [f64]) {
    out.fill(f64::NEG_INFINITY);
    // First pass: per-cell max.
    for (i, &v) in values.iter().enumerate() {
        let j = map[i] as usize;
        if v > out[j] {
            out[j] = v;
        }
    }
    let maxes: Vec<f64> = out.to_vec();
    let mut sums = vec![0.0f64; out.len()];
    for (i, &v) in values.iter().enumerate() {
        let j = map[i] as usize;
        if maxes[j].is_finite() {
            sums[j] += (v - maxes[j]).exp();
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if maxes[j].is_finite() {
            *o = maxes[j] + sums[j].ln();
        }
    }
}

/// Normalize a linear-space vector in place; returns the pre-normalization
/// total (0 means the vector was left untouched).
pub fn normalize(values: &mut [f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        for v in values.iter_mut() {
            *v /= total;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_and_marginalization_agree_with_direct_sum() {
        // Outer scope (a, b, c) with dims (2, 3, 2); inner scope (b,).
        let a = VarId(0);
        let b = VarId(1);
        let c = VarId(2);
        let outer_vars = vec![a, b, c];
        let outer_dims = vec![2, 3, 2];
        let inner_vars = vec![b];
        let inner_dims = vec![3];
        let values: Vec<f64> = (0..12).map(|i| (i as f64 + 1.0).ln()).collect();
        let map = projection_map(&outer_vars, &outer_dims, &inner_vars, &inner_dims);
        let mut out = vec![0.0; 3];
        log_marginalize_into(&values, &map, &mut out);
        // Direct: index = (a*3 + b)*2 + c, entry i+1.
        for bs in 0..3 {
            let mut direct = 0.0;
            for as_ in 0..2 {
                for cs in 0..2 {
                    let idx = (as_ * 3 + bs) * 2 + cs;
                    direct += idx as f64 + 1.0;
                }
            }
            assert!((out[bs].exp() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn segmented_projection_matches_map_marginalization() {
        let outer_vars = vec![VarId(0), VarId(1), VarId(2)];
        let outer_dims = vec![2, 3, 2];
        let inner_vars = vec![VarId(1), VarId(2)];
        let inner_dims = vec![3, 2];
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let map = projection_map(&outer_vars, &outer_dims, &inner_vars, &inner_dims);
        let mut a = vec![0.0; 6];
        log_marginalize_into(&values, &map, &mut a);
        let seg = SegmentedProjection::from_map(&map, 6);
        let mut b = vec![0.0; 6];
        seg.log_marginalize(&values, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let x = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((x - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn table_index_respects_last_fastest() {
        let t = Table::new(vec![VarId(0), VarId(1)], vec![2, 3], (0..6).map(|x| x as f64).collect());
        let mut assignment = vec![0usize; 2];
        assignment[0] = 1;
        assignment[1] = 2;
        assert_eq!(t.index_of(&assignment), 5);
        assert_eq!(t.value_at(&assignment), 5.0);
    }
}

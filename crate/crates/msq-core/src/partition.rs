//! Intra-layer row partitioning.
//!
//! Each row of a layer's GEMM weight matrix is assigned to the SP2 or the
//! fixed-point scheme by row variance: low-variance (Gaussian-like) rows go
//! to SP2, high-variance (uniform-like) rows to fixed-point. The split is
//! rank-based — the `round(pr_sp2 * rows)` smallest-variance rows become SP2
//! — so the reported threshold `theta` is descriptive, not load-bearing.
//! Variance ties break toward the lower row index joining SP2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{row_variance, Matrix2D};

/// Scheme tag of one weight row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowScheme {
    Sp2,
    Fixed,
}

/// Per-row scheme assignment for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowPartition {
    assignments: Vec<RowScheme>,
    theta: f64,
    pr_sp2: f64,
}

impl RowPartition {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignment(&self, row: usize) -> RowScheme {
        self.assignments[row]
    }

    pub fn assignments(&self) -> &[RowScheme] {
        &self.assignments
    }

    /// Variance threshold between the two groups.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The target SP2 fraction this partition was built for.
    pub fn pr_sp2(&self) -> f64 {
        self.pr_sp2
    }

    pub fn sp2_count(&self) -> usize {
        self.assignments
            .iter()
            .filter(|s| **s == RowScheme::Sp2)
            .count()
    }

    /// Row indices per scheme, ascending.
    pub fn rows_of(&self, scheme: RowScheme) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (*s == scheme).then_some(i))
            .collect()
    }
}

/// Assigns the `round(pr_sp2 * R)` smallest-variance rows to SP2.
///
/// `theta` is set to the midpoint of the two sorted variances straddling the
/// cut; when the cut sits at either end it is placed one unit outside the
/// observed range so that strict comparisons stay vacuously true.
pub fn partition_rows(variances: &[f64], pr_sp2: f64) -> Result<RowPartition> {
    if variances.is_empty() {
        return Err(Error::Degenerate("no rows to partition".into()));
    }
    if !(0.0..=1.0).contains(&pr_sp2) {
        return Err(Error::Config(format!("pr_sp2 {pr_sp2} outside [0, 1]")));
    }
    if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric(
            "variances must be finite and nonnegative".into(),
        ));
    }
    let rows = variances.len();
    let k = ((pr_sp2 * rows as f64).round() as usize).min(rows);

    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| {
        variances[a]
            .partial_cmp(&variances[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut assignments = vec![RowScheme::Fixed; rows];
    for &r in &order[..k] {
        assignments[r] = RowScheme::Sp2;
    }

    let sorted: Vec<f64> = order.iter().map(|&r| variances[r]).collect();
    let theta = if k == 0 {
        sorted[0] - 1.0
    } else if k == rows {
        sorted[rows - 1] + 1.0
    } else {
        0.5 * (sorted[k - 1] + sorted[k])
    };

    Ok(RowPartition {
        assignments,
        theta,
        pr_sp2,
    })
}

/// Computes row variances of `w` and partitions on them.
pub fn partition_layer(w: &Matrix2D, pr_sp2: f64) -> Result<RowPartition> {
    partition_rows(&row_variance(w)?, pr_sp2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn takes_smallest_variances_and_brackets_theta() {
        let v = [0.1, 0.5, 0.2, 0.9, 0.05, 0.3];
        let p = partition_rows(&v, 2.0 / 3.0).unwrap();
        // smallest 4 of 6: indices 4, 0, 2, 5
        let sp2 = p.rows_of(RowScheme::Sp2);
        assert_eq!(sp2, vec![0, 2, 4, 5]);
        assert!(p.theta() > 0.3 && p.theta() < 0.5, "theta {}", p.theta());
    }

    #[test]
    fn extreme_fractions() {
        let v = [0.3, 0.1, 0.2];
        let all_fixed = partition_rows(&v, 0.0).unwrap();
        assert_eq!(all_fixed.sp2_count(), 0);
        assert!(all_fixed.theta() < 0.1);
        let all_sp2 = partition_rows(&v, 1.0).unwrap();
        assert_eq!(all_sp2.sp2_count(), 3);
        assert!(all_sp2.theta() > 0.3);
    }

    #[test]
    fn layer_partition_orders_by_row_variance() {
        let w = Matrix2D::new(2, 2, vec![-1.0, 1.0, 0.01, -0.01]).unwrap();
        let p = partition_layer(&w, 0.5).unwrap();
        assert_eq!(p.assignment(0), RowScheme::Fixed);
        assert_eq!(p.assignment(1), RowScheme::Sp2);
    }

    #[test]
    fn identical_rows_tie_break_deterministically() {
        let w = Matrix2D::new(4, 3, [0.5, -0.5, 0.25].repeat(4)).unwrap();
        let p = partition_layer(&w, 0.5).unwrap();
        assert_eq!(p.sp2_count(), 2);
        // lower indices win the SP2 slots on ties
        assert_eq!(p.rows_of(RowScheme::Sp2), vec![0, 1]);
        let again = partition_layer(&w, 0.5).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn single_row_rounding() {
        let w = Matrix2D::new(1, 4, vec![0.1, 0.4, -0.2, 0.3]).unwrap();
        let p = partition_layer(&w, 2.0 / 3.0).unwrap();
        assert_eq!(p.assignment(0), RowScheme::Sp2); // round(2/3 * 1) = 1
    }

    #[test]
    fn fraction_accuracy_within_one_row() {
        let mut rng = Rng::new(41);
        for _ in 0..50 {
            let rows = 1 + rng.below(40);
            let v: Vec<f64> = (0..rows).map(|_| rng.uniform(0.0, 1.0)).collect();
            let pr = rng.next_f64();
            let p = partition_rows(&v, pr).unwrap();
            let frac = p.sp2_count() as f64 / rows as f64;
            assert!(
                (frac - pr).abs() <= 1.0 / rows as f64 + 1e-12,
                "rows={rows} pr={pr} frac={frac}"
            );
        }
    }

    #[test]
    fn monotone_in_pr_sp2() {
        let mut rng = Rng::new(43);
        let v: Vec<f64> = (0..20).map(|_| rng.uniform(0.0, 1.0)).collect();
        let mut prev: Option<RowPartition> = None;
        for step in 0..=10 {
            let p = partition_rows(&v, step as f64 / 10.0).unwrap();
            if let Some(prev) = &prev {
                for r in 0..v.len() {
                    assert!(
                        !(prev.assignment(r) == RowScheme::Sp2
                            && p.assignment(r) == RowScheme::Fixed),
                        "row {r} left SP2 as pr grew"
                    );
                }
            }
            prev = Some(p);
        }
    }

    #[test]
    fn rank_correct_and_scale_invariant() {
        let mut rng = Rng::new(47);
        for _ in 0..20 {
            let w = Matrix2D::from_fn(8, 6, |_, _| rng.uniform(-1.0, 1.0));
            let p = partition_layer(&w, 0.5).unwrap();
            let v = row_variance(&w).unwrap();
            let max_sp2 = p
                .rows_of(RowScheme::Sp2)
                .iter()
                .map(|&r| v[r])
                .fold(f64::NEG_INFINITY, f64::max);
            let min_fixed = p
                .rows_of(RowScheme::Fixed)
                .iter()
                .map(|&r| v[r])
                .fold(f64::INFINITY, f64::min);
            assert!(max_sp2 <= min_fixed);

            let scaled = Matrix2D::new(8, 6, w.data().iter().map(|x| x * 3.0).collect()).unwrap();
            let ps = partition_layer(&scaled, 0.5).unwrap();
            assert_eq!(p.assignments(), ps.assignments());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(partition_rows(&[], 0.5).is_err());
        assert!(partition_rows(&[0.1], 1.5).is_err());
        assert!(partition_rows(&[0.1], -0.1).is_err());
        assert!(partition_rows(&[f64::NAN], 0.5).is_err());
    }
}

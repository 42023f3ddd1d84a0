//! Column grouping, sampling, and fusion.
//!
//! A permutation from the LSH stage is cut into consecutive slices of `G*`
//! indices; each slice is one group. From a Q block we keep one representative
//! column per group (sampling) and in K^T we sum the rows of each group
//! (fusion). Multiplying the sampled columns by the fused rows gives the
//! approximate score block with `1/G*` of the exact multiplications.
//!
//! ```
//! use distrattn::grouping::{make_plan, approx_scores};
//! use distrattn::matrix::{Matrix, Rng};
//!
//! let mut rng = Rng::new(2);
//! let q_block = Matrix::random_uniform(&mut rng, 4, 8);
//! let kt = Matrix::random_uniform(&mut rng, 8, 6); // K^T is d x N
//!
//! // G* = 1: every column is its own group, so nothing is approximated
//! let perm: Vec<usize> = (0..8).collect();
//! let plan = make_plan(&perm, 1, 8).unwrap();
//! let s_hat = approx_scores(&q_block, &kt, &plan).unwrap();
//! let s = q_block.matmul(&kt).unwrap();
//! for (a, b) in s.data().iter().zip(s_hat.data()) {
//!     assert!((a - b).abs() < 1e-5);
//! }
//! ```

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Partition of column indices `0..d` into groups of exactly `group_size`,
/// cut from consecutive slices of `perm`, with one representative per group.
#[derive(Debug, Clone)]
pub struct GroupingPlan {
    pub perm: Vec<usize>,
    pub group_size: usize,
    /// Group members in permutation order.
    pub groups: Vec<Vec<usize>>,
    /// First member of each group in permutation order.
    pub representatives: Vec<usize>,
}

impl GroupingPlan {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }
}

pub fn make_plan(perm: &[usize], group_size: usize, d: usize) -> Result<GroupingPlan> {
    if group_size == 0 || d % group_size != 0 {
        return Err(Error::Divisibility { d, group_size });
    }
    if perm.len() != d {
        return Err(Error::InvalidPermutation(d));
    }
    let mut seen = vec![false; d];
    for &p in perm {
        if p >= d || seen[p] {
            return Err(Error::InvalidPermutation(d));
        }
        seen[p] = true;
    }
    let groups: Vec<Vec<usize>> = perm.chunks(group_size).map(|c| c.to_vec()).collect();
    let representatives = groups.iter().map(|g| g[0]).collect();
    Ok(GroupingPlan { perm: perm.to_vec(), group_size, groups, representatives })
}

/// Gathers the representative column of each group: output column j is
/// `q_block` column `representatives[j]`.
pub fn sample_q(q_block: &Matrix, plan: &GroupingPlan) -> Result<Matrix> {
    if q_block.cols() != plan.dim() {
        return Err(Error::ShapeMismatch(format!(
            "sample_q: block has {} columns, plan covers {}",
            q_block.cols(),
            plan.dim()
        )));
    }
    let l = q_block.rows();
    let k = plan.num_groups();
    let mut out = Matrix::zeros(l, k);
    for (j, &rep) in plan.representatives.iter().enumerate() {
        for r in 0..l {
            out.set(r, j, q_block.get(r, rep));
        }
    }
    Ok(out)
}

/// Sums the K^T rows of each group; summation runs in ascending member-index
/// order so results are bitwise deterministic.
pub fn fuse_kt(kt_block: &Matrix, plan: &GroupingPlan) -> Result<Matrix> {
    if kt_block.rows() != plan.dim() {
        return Err(Error::ShapeMismatch(format!(
            "fuse_kt: block has {} rows, plan covers {}",
            kt_block.rows(),
            plan.dim()
        )));
    }
    let m = kt_block.cols();
    let mut out = Matrix::zeros(plan.num_groups(), m);
    for (j, group) in plan.groups.iter().enumerate() {
        let mut members = group.clone();
        members.sort_unstable();
        for i in members {
            let src = kt_block.row(i);
            let dst = &mut out.data_mut()[j * m..(j + 1) * m];
            for (o, x) in dst.iter_mut().zip(src) {
                *o += x;
            }
        }
    }
    Ok(out)
}

/// Approximate score block: `sample_q(q_block) * fuse_kt(kt_block)`, using
/// `l*m*(d/G*)` multiplications in the product stage.
pub fn approx_scores(q_block: &Matrix, kt_block: &Matrix, plan: &GroupingPlan) -> Result<Matrix> {
    let sampled = sample_q(q_block, plan)?;
    let fused = fuse_kt(kt_block, plan)?;
    sampled.matmul(&fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Rng;

    #[test]
    fn plan_matches_figure_example() {
        // 0-based version of the paper's {3, 2, 1, 4} permutation with G*=2
        let plan = make_plan(&[2, 1, 0, 3], 2, 4).unwrap();
        assert_eq!(plan.groups, vec![vec![2, 1], vec![0, 3]]);
        assert_eq!(plan.representatives, vec![2, 0]);
    }

    #[test]
    fn singleton_groups_are_self_representing() {
        let plan = make_plan(&[1, 0, 3, 2], 1, 4).unwrap();
        assert_eq!(plan.num_groups(), 4);
        assert_eq!(plan.representatives, vec![1, 0, 3, 2]);
    }

    #[test]
    fn identity_perm_groups_consecutively() {
        let perm: Vec<usize> = (0..8).collect();
        let plan = make_plan(&perm, 4, 8).unwrap();
        assert_eq!(plan.groups, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(plan.representatives, vec![0, 4]);
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        assert!(matches!(make_plan(&[0, 1, 2], 2, 3), Err(Error::Divisibility { .. })));
        assert!(matches!(make_plan(&[0, 0, 1, 2], 2, 4), Err(Error::InvalidPermutation(_))));
        assert!(matches!(make_plan(&[0, 1], 2, 4), Err(Error::InvalidPermutation(_))));
    }

    #[test]
    fn groups_partition_all_indices() {
        let plan = make_plan(&[5, 3, 1, 7, 0, 2, 4, 6], 2, 8).unwrap();
        let mut seen = vec![false; 8];
        for g in &plan.groups {
            assert_eq!(g.len(), 2);
            for &i in g {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        for (j, &rep) in plan.representatives.iter().enumerate() {
            assert!(plan.groups[j].contains(&rep));
        }
    }

    #[test]
    fn sample_q_gathers_representatives() {
        let mut rng = Rng::new(3);
        let q = Matrix::random_uniform(&mut rng, 4, 4);
        let plan = make_plan(&[2, 1, 0, 3], 2, 4).unwrap();
        let s = sample_q(&q, &plan).unwrap();
        assert_eq!(s.rows(), 4);
        assert_eq!(s.cols(), 2);
        for r in 0..4 {
            assert_eq!(s.get(r, 0), q.get(r, 2));
            assert_eq!(s.get(r, 1), q.get(r, 0));
        }
    }

    #[test]
    fn sample_q_with_identical_columns() {
        let mut q = Matrix::zeros(3, 4);
        for r in 0..3 {
            for c in 0..4 {
                q.set(r, c, r as f32 + 0.5);
            }
        }
        let plan = make_plan(&[3, 1, 2, 0], 2, 4).unwrap();
        let s = sample_q(&q, &plan).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(s.get(r, c), r as f32 + 0.5);
            }
        }
    }

    #[test]
    fn gstar_one_is_a_column_permutation() {
        let q = Matrix::random_uniform(&mut Rng::new(4), 2, 4);
        let plan = make_plan(&[2, 0, 3, 1], 1, 4).unwrap();
        let s = sample_q(&q, &plan).unwrap();
        for (j, &rep) in plan.representatives.iter().enumerate() {
            for r in 0..2 {
                assert_eq!(s.get(r, j), q.get(r, rep));
            }
        }
    }

    #[test]
    fn fuse_kt_sums_group_rows() {
        let kt = Matrix::random_uniform(&mut Rng::new(5), 4, 3);
        let plan = make_plan(&[2, 1, 0, 3], 2, 4).unwrap();
        let fused = fuse_kt(&kt, &plan).unwrap();
        assert_eq!(fused.rows(), 2);
        for c in 0..3 {
            assert_eq!(fused.get(0, c), kt.get(1, c) + kt.get(2, c));
            assert_eq!(fused.get(1, c), kt.get(0, c) + kt.get(3, c));
        }
    }

    #[test]
    fn fuse_kt_doubles_identical_rows_and_reorders_at_gstar_one() {
        let mut kt = Matrix::zeros(2, 3);
        for c in 0..3 {
            kt.set(0, c, c as f32 + 1.0);
            kt.set(1, c, c as f32 + 1.0);
        }
        let plan = make_plan(&[0, 1], 2, 2).unwrap();
        let fused = fuse_kt(&kt, &plan).unwrap();
        for c in 0..3 {
            assert_eq!(fused.get(0, c), 2.0 * (c as f32 + 1.0));
        }

        let kt2 = Matrix::random_uniform(&mut Rng::new(6), 4, 2);
        let plan1 = make_plan(&[3, 0, 2, 1], 1, 4).unwrap();
        let fused1 = fuse_kt(&kt2, &plan1).unwrap();
        for (j, &rep) in plan1.representatives.iter().enumerate() {
            for c in 0..2 {
                assert_eq!(fused1.get(j, c), kt2.get(rep, c));
            }
        }
    }

    #[test]
    fn approx_scores_matches_brute_force_eq2_oracle() {
        let mut rng = Rng::new(7);
        let q = Matrix::random_uniform(&mut rng, 4, 4);
        let kt = Matrix::random_uniform(&mut rng, 4, 4);
        let plan = make_plan(&[1, 3, 0, 2], 2, 4).unwrap();
        let s_hat = approx_scores(&q, &kt, &plan).unwrap();
        // oracle: sum_j q_hat_j * (sum_{i in G_j} k_i^T), term by term in f64
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0f64;
                for (j, group) in plan.groups.iter().enumerate() {
                    let rep = plan.representatives[j];
                    let mut fused = 0.0f64;
                    let mut members = group.clone();
                    members.sort_unstable();
                    for &i in &members {
                        fused += kt.get(i, c) as f64;
                    }
                    acc += q.get(r, rep) as f64 * fused;
                }
                assert!((s_hat.get(r, c) as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn duplicated_group_columns_make_approximation_exact() {
        // columns 0==2 and 1==3; plan pairs the duplicates
        let mut rng = Rng::new(8);
        let base = Matrix::random_uniform(&mut rng, 4, 2);
        let mut q = Matrix::zeros(4, 4);
        for r in 0..4 {
            q.set(r, 0, base.get(r, 0));
            q.set(r, 2, base.get(r, 0));
            q.set(r, 1, base.get(r, 1));
            q.set(r, 3, base.get(r, 1));
        }
        let kt = Matrix::random_uniform(&mut rng, 4, 4);
        let plan = make_plan(&[0, 2, 1, 3], 2, 4).unwrap();
        let s_hat = approx_scores(&q, &kt, &plan).unwrap();
        let exact = q.matmul(&kt).unwrap();
        let inf = exact.data().iter().fold(0.0f32, |a, &x| a.max(x.abs()));
        for (a, b) in s_hat.data().iter().zip(exact.data()) {
            assert!((a - b).abs() <= 1e-5 * inf);
        }
    }

    #[test]
    fn gstar_one_matches_exact_product() {
        let mut rng = Rng::new(9);
        let q = Matrix::random_uniform(&mut rng, 4, 4);
        let kt = Matrix::random_uniform(&mut rng, 4, 4);
        let plan = make_plan(&[2, 0, 3, 1], 1, 4).unwrap();
        let s_hat = approx_scores(&q, &kt, &plan).unwrap();
        let exact = q.matmul(&kt).unwrap();
        for (a, b) in s_hat.data().iter().zip(exact.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn l1_error_matches_residual_oracle() {
        // || S_hat - S ||_1 equals the Eq.-style residual
        // || sum_j sum_{i in G_j} (q_hat_j - q_i) k_i^T ||_1 on small instances
        let mut rng = Rng::new(10);
        for d in [4usize, 8] {
            let q = Matrix::random_uniform(&mut rng, 8, d);
            let kt = Matrix::random_uniform(&mut rng, d, 8);
            let perm: Vec<usize> = (0..d).rev().collect();
            let plan = make_plan(&perm, 2, d).unwrap();
            let s_hat = approx_scores(&q, &kt, &plan).unwrap();
            let s = q.matmul(&kt).unwrap();
            let l1: f64 = s_hat
                .data()
                .iter()
                .zip(s.data())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum();
            // residual matrix assembled term by term
            let mut resid = vec![0.0f64; 8 * 8];
            for (j, group) in plan.groups.iter().enumerate() {
                let rep = plan.representatives[j];
                for &i in group {
                    for r in 0..8 {
                        let dq = q.get(r, rep) as f64 - q.get(r, i) as f64;
                        for c in 0..8 {
                            resid[r * 8 + c] += dq * kt.get(i, c) as f64;
                        }
                    }
                }
            }
            let l1_resid: f64 = resid.iter().map(|x| x.abs()).sum();
            assert!((l1 - l1_resid).abs() < 1e-3, "{l1} vs {l1_resid}");
        }
    }
}

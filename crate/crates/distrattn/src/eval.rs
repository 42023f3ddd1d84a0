//! Error-statistics harness for synthesized workloads.
//!
//! Each trial draws Q, K uniform on (0,1), computes the exact score matrix
//! S = QK^T (unscaled) and the block-wise approximation S_hat, and pools
//! elementwise relative errors over all elements of all trials. Trials derive
//! independent substreams from (seed, trial index), so reports are identical
//! for any worker count.
//!
//! ```
//! use distrattn::eval::score_error_stats;
//!
//! let report = score_error_stats(32, 32, 2, 2, 3, 7, false).unwrap();
//! assert!(report.min_pct <= report.mean_pct && report.mean_pct <= report.max_pct);
//! assert_eq!(report.per_trial_means.len(), 3);
//! ```

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::grouping::{self};
use crate::lsh::{self, GrayTable};
use crate::matrix::{Matrix, Rng};
use crate::{Error, Result};

/// Pooled relative-error statistics, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub group_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub min_pct: f64,
    pub max_pct: f64,
    pub mean_pct: f64,
    pub per_trial_means: Vec<f64>,
    /// |S - S_hat| for trial 0, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<Vec<Vec<f32>>>,
}

/// Runs the synthesized error study: `trials` repetitions of an N x d
/// workload with Q-block height `l` and group size `group_size`.
pub fn score_error_stats(
    n: usize,
    d: usize,
    l: usize,
    group_size: usize,
    trials: usize,
    seed: u64,
    with_heatmap: bool,
) -> Result<ErrorReport> {
    if group_size == 0 || d % group_size != 0 {
        return Err(Error::Divisibility { d, group_size });
    }
    if trials < 1 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if l < 1 || n < 1 || d < 1 {
        return Err(Error::InvalidArgument("n, d, l must be >= 1".into()));
    }
    let proj = lsh::build_projection(seed, 16, l);
    let table = GrayTable::new(16);

    let mut min_pct = f64::INFINITY;
    let mut max_pct = f64::NEG_INFINITY;
    let mut sum_pct = 0.0f64;
    let mut count = 0u64;
    let mut per_trial_means = Vec::with_capacity(trials);
    let mut heatmap = None;

    for trial in 0..trials {
        let mut rng = Rng::substream(seed, trial as u64);
        let q = Matrix::random_uniform(&mut rng, n, d);
        let k = Matrix::random_uniform(&mut rng, n, d);
        let kt = k.transpose();
        let s = q.matmul(&kt)?;

        let mut s_hat = Matrix::zeros(n, n);
        let mut q0 = 0usize;
        while q0 < n {
            let lb = l.min(n - q0);
            let q_block = q.row_block(q0, lb);
            let hashes = lsh::hash_block(&q_block, &proj, &table)?;
            let perm = lsh::sort_permutation(&hashes);
            let plan = grouping::make_plan(&perm, group_size, d)?;
            let block = grouping::approx_scores(&q_block, &kt, &plan)?;
            s_hat.data_mut()[q0 * n..(q0 + lb) * n].copy_from_slice(block.data());
            q0 += l;
        }

        let mut trial_sum = 0.0f64;
        for (a, b) in s.data().iter().zip(s_hat.data()) {
            let denom = (*a as f64).abs().max(1e-12);
            let pct = 100.0 * (*a as f64 - *b as f64).abs() / denom;
            min_pct = min_pct.min(pct);
            max_pct = max_pct.max(pct);
            trial_sum += pct;
        }
        let elems = (n * n) as f64;
        sum_pct += trial_sum;
        count += (n * n) as u64;
        per_trial_means.push(trial_sum / elems);

        if trial == 0 && with_heatmap {
            let mut rows = Vec::with_capacity(n);
            for r in 0..n {
                rows.push(
                    s.row(r)
                        .iter()
                        .zip(s_hat.row(r))
                        .map(|(a, b)| (a - b).abs())
                        .collect::<Vec<f32>>(),
                );
            }
            heatmap = Some(rows);
        }
    }

    Ok(ErrorReport {
        n,
        d,
        l,
        group_size,
        trials,
        seed,
        min_pct,
        max_pct,
        mean_pct: sum_pct / count as f64,
        per_trial_means,
        heatmap,
    })
}

/// Relative output-error metrics between an exact and an approximate O.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OutputError {
    pub mean_abs_rel_pct: f64,
    pub max_abs_rel_pct: f64,
    pub frobenius_rel: f64,
}

pub fn output_error(o_exact: &Matrix, o_approx: &Matrix) -> Result<OutputError> {
    if o_exact.rows() != o_approx.rows() || o_exact.cols() != o_approx.cols() {
        return Err(Error::ShapeMismatch(format!(
            "output_error: {}x{} vs {}x{}",
            o_exact.rows(),
            o_exact.cols(),
            o_approx.rows(),
            o_approx.cols()
        )));
    }
    let mut sum_pct = 0.0f64;
    let mut max_pct = 0.0f64;
    let mut diff_sq = 0.0f64;
    let mut norm_sq = 0.0f64;
    for (a, b) in o_exact.data().iter().zip(o_approx.data()) {
        let (a, b) = (*a as f64, *b as f64);
        let pct = 100.0 * (a - b).abs() / a.abs().max(1e-12);
        sum_pct += pct;
        max_pct = max_pct.max(pct);
        diff_sq += (a - b) * (a - b);
        norm_sq += a * a;
    }
    let count = (o_exact.rows() * o_exact.cols()) as f64;
    Ok(OutputError {
        mean_abs_rel_pct: sum_pct / count,
        max_abs_rel_pct: max_pct,
        frobenius_rel: (diff_sq / norm_sq.max(1e-24)).sqrt(),
    })
}

/// Writes a matrix as plain CSV: one row per line, `,` separator, `.` decimal.
pub fn emit_heatmap(matrix: &Matrix, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in 0..matrix.rows() {
        let line = matrix
            .row(r)
            .iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn gstar_one_is_floating_point_noise() {
        let report = score_error_stats(32, 32, 4, 1, 3, 7, false).unwrap();
        assert!(report.mean_pct <= 1e-3, "mean {}%", report.mean_pct);
    }

    #[test]
    fn report_invariants_hold() {
        let report = score_error_stats(32, 32, 2, 2, 5, 7, true).unwrap();
        assert!(report.min_pct >= 0.0);
        assert!(report.min_pct <= report.mean_pct);
        assert!(report.mean_pct <= report.max_pct);
        assert_eq!(report.per_trial_means.len(), 5);
        let hm = report.heatmap.as_ref().unwrap();
        assert_eq!(hm.len(), 32);
        assert_eq!(hm[0].len(), 32);
    }

    #[test]
    fn reports_are_reproducible() {
        let a = score_error_stats(16, 16, 2, 2, 4, 9, false).unwrap();
        let b = score_error_stats(16, 16, 2, 2, 4, 9, false).unwrap();
        assert_eq!(a.mean_pct, b.mean_pct);
        assert_eq!(a.min_pct, b.min_pct);
        assert_eq!(a.max_pct, b.max_pct);
        assert_eq!(a.per_trial_means, b.per_trial_means);
    }

    #[test]
    fn stats_reject_bad_arguments() {
        assert!(matches!(
            score_error_stats(16, 15, 2, 2, 1, 0, false),
            Err(Error::Divisibility { .. })
        ));
        assert!(score_error_stats(16, 16, 2, 2, 0, 0, false).is_err());
    }

    #[test]
    fn output_error_identical_is_zero() {
        let m = Matrix::random_uniform(&mut crate::matrix::Rng::new(1), 4, 4);
        let e = output_error(&m, &m).unwrap();
        assert_eq!(e.mean_abs_rel_pct, 0.0);
        assert_eq!(e.max_abs_rel_pct, 0.0);
        assert_eq!(e.frobenius_rel, 0.0);
    }

    #[test]
    fn output_error_scaling_by_one_percent() {
        let m = Matrix::random_uniform(&mut crate::matrix::Rng::new(2), 8, 8);
        let scaled = Matrix::from_vec(8, 8, m.data().iter().map(|x| x * 1.01).collect());
        let e = output_error(&m, &scaled).unwrap();
        assert!((e.mean_abs_rel_pct - 1.0).abs() < 1e-4, "{}", e.mean_abs_rel_pct);
    }

    #[test]
    fn heatmap_format_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let m = Matrix::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        emit_heatmap(&m, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "0,1\n2,3\n");
        emit_heatmap(&m, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "0,1\n2,3\n");
    }

    #[test]
    fn heatmap_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let m = Matrix::random_uniform(&mut crate::matrix::Rng::new(3), 3, 5);
        emit_heatmap(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for (r, line) in text.lines().enumerate() {
            for (c, field) in line.split(',').enumerate() {
                let parsed: f32 = field.parse().unwrap();
                assert!((parsed - m.get(r, c)).abs() < 1e-6);
            }
        }
    }
}

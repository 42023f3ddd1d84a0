//! Attention backends sharing one contract.
//!
//! `naive` materializes S and P and is the oracle. `blocked-exact` runs the
//! double loop (Q blocks outer, K/V blocks inner) with an online softmax and
//! never materializes P. `distr` is the approximate backend: each Q block is
//! hashed, sorted, and grouped once, then the same plan samples Q columns and
//! fuses K^T rows for every K block of the inner loop, cutting the score-stage
//! multiplications by `1/G*`. V is never reduced.
//!
//! ```
//! use distrattn::attention::{attention, AttentionConfig, Backend};
//! use distrattn::eval::output_error;
//! use distrattn::matrix::{Matrix, Rng};
//!
//! let mut rng = Rng::new(3);
//! let q = Matrix::random_uniform(&mut rng, 64, 32);
//! let k = Matrix::random_uniform(&mut rng, 64, 32);
//! let v = Matrix::random_uniform(&mut rng, 64, 32);
//!
//! let exact_cfg = AttentionConfig::new(Backend::BlockedExact).with_blocks(16, 16);
//! let distr_cfg = AttentionConfig::new(Backend::Distr)
//!     .with_blocks(16, 16)
//!     .with_group_size(2)
//!     .with_seed(42);
//! let exact = attention(&q, &k, &v, &exact_cfg).unwrap();
//! let approx = attention(&q, &k, &v, &distr_cfg).unwrap();
//! let err = output_error(&exact, &approx).unwrap();
//! assert!(err.mean_abs_rel_pct < 5.0); // the softmax damps score errors further
//! ```

use std::time::Instant;

use crate::grouping;
use crate::lsh::{self, GrayTable, Projection};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Which attention implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Naive,
    BlockedExact,
    Distr,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Backend::Naive),
            "blocked-exact" => Ok(Backend::BlockedExact),
            "distr" => Ok(Backend::Distr),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend '{other}' (expected naive, blocked-exact, or distr)"
            ))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Naive => "naive",
            Backend::BlockedExact => "blocked-exact",
            Backend::Distr => "distr",
        })
    }
}

/// Shared configuration for all backends.
///
/// `q_block_rows` is l, `kv_block_rows` is m. `scale = None` means the usual
/// `1/sqrt(d)`; pass `Some(1.0)` for unscaled scores.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub q_block_rows: usize,
    pub kv_block_rows: usize,
    pub group_size: usize,
    pub hash_width: usize,
    pub scale: Option<f32>,
    pub causal: bool,
    pub backend: Backend,
    pub seed: u64,
}

impl AttentionConfig {
    pub fn new(backend: Backend) -> Self {
        AttentionConfig {
            q_block_rows: 128,
            kv_block_rows: 128,
            group_size: 2,
            hash_width: 16,
            scale: None,
            causal: false,
            backend,
            seed: 0,
        }
    }

    pub fn with_blocks(mut self, l: usize, m: usize) -> Self {
        self.q_block_rows = l;
        self.kv_block_rows = m;
        self
    }

    pub fn with_group_size(mut self, g: usize) -> Self {
        self.group_size = g;
        self
    }

    pub fn with_scale(mut self, scale: f32) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Score multiplier for embedding width `d`; the fused sums approximate
    /// full d-length inner products, so the original d sets the default.
    pub fn scale_for(&self, d: usize) -> f32 {
        self.scale.unwrap_or(1.0 / (d as f32).sqrt())
    }

    fn validate(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
        if self.q_block_rows == 0 || self.kv_block_rows == 0 {
            return Err(Error::InvalidArgument("block sizes must be >= 1".into()));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("scale must be > 0".into()));
            }
        }
        let (n, d) = (q.rows(), q.cols());
        if k.rows() != n || k.cols() != d || v.rows() != n || v.cols() != d {
            return Err(Error::ShapeMismatch(format!(
                "attention: Q {}x{}, K {}x{}, V {}x{} must all be {n}x{d}",
                q.rows(),
                q.cols(),
                k.rows(),
                k.cols(),
                v.rows(),
                v.cols()
            )));
        }
        if self.backend == Backend::Distr && d % self.group_size != 0 {
            return Err(Error::Divisibility { d, group_size: self.group_size });
        }
        Ok(())
    }
}

/// Streaming-softmax accumulator for one Q block.
///
/// Finalized output row r is `accum[r] / running_sum[r]`.
#[derive(Debug, Clone)]
pub struct SoftmaxState {
    pub running_max: Vec<f32>,
    pub running_sum: Vec<f32>,
    pub accum: Matrix,
}

impl SoftmaxState {
    pub fn new(rows: usize, d: usize) -> Self {
        SoftmaxState {
            running_max: vec![f32::NEG_INFINITY; rows],
            running_sum: vec![0.0; rows],
            accum: Matrix::zeros(rows, d),
        }
    }

    pub fn finalize(&self) -> Matrix {
        let d = self.accum.cols();
        let mut out = self.accum.clone();
        for r in 0..self.accum.rows() {
            let sum = self.running_sum[r];
            if sum > 0.0 {
                for x in &mut out.data_mut()[r * d..(r + 1) * d] {
                    *x /= sum;
                }
            }
        }
        out
    }
}

/// Folds one score block and its V block into the running state.
///
/// Per row: rescale the old accumulator by `exp(old_max - new_max)`, add
/// `exp(s - new_max) * v`. Rows whose block entries are all masked (-inf)
/// are left untouched.
pub fn online_update(state: &mut SoftmaxState, s_block: &Matrix, v_block: &Matrix) -> Result<()> {
    if s_block.rows() != state.accum.rows()
        || s_block.cols() != v_block.rows()
        || v_block.cols() != state.accum.cols()
    {
        return Err(Error::ShapeMismatch(format!(
            "online_update: S {}x{}, V {}x{}, accum {}x{}",
            s_block.rows(),
            s_block.cols(),
            v_block.rows(),
            v_block.cols(),
            state.accum.rows(),
            state.accum.cols()
        )));
    }
    let m = s_block.cols();
    let d = v_block.cols();
    for r in 0..s_block.rows() {
        let s_row = s_block.row(r);
        let block_max = s_row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if block_max == f32::NEG_INFINITY {
            continue; // fully masked row
        }
        let new_max = state.running_max[r].max(block_max);
        let correction = if state.running_max[r] == f32::NEG_INFINITY {
            0.0
        } else {
            (state.running_max[r] - new_max).exp()
        };
        let accum_row = &mut state.accum.data_mut()[r * d..(r + 1) * d];
        if correction != 1.0 {
            for x in accum_row.iter_mut() {
                *x *= correction;
            }
        }
        let mut p_sum = 0.0f32;
        for c in 0..m {
            let s = s_row[c];
            if s == f32::NEG_INFINITY {
                continue;
            }
            let p = (s - new_max).exp();
            p_sum += p;
            let v_row = v_block.row(c);
            for (a, vv) in accum_row.iter_mut().zip(v_row) {
                *a += p * vv;
            }
        }
        state.running_sum[r] = correction * state.running_sum[r] + p_sum;
        state.running_max[r] = new_max;
    }
    Ok(())
}

/// Exact attention by materializing S and P; the oracle backend.
pub fn attention_naive(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
    cfg.validate(q, k, v)?;
    let scale = cfg.scale_for(q.cols());
    let mut s = q.matmul(&k.transpose())?;
    for x in s.data_mut() {
        *x *= scale;
    }
    if cfg.causal {
        let n = s.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                s.set(i, j, f32::NEG_INFINITY);
            }
        }
    }
    s.softmax_rows()?.matmul(v)
}

/// Per-phase wall-clock accumulator, in nanoseconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseNanos {
    pub hash: u64,
    pub plan: u64,
    pub fuse: u64,
    pub score: u64,
    pub softmax: u64,
}

impl PhaseNanos {
    pub fn add(&mut self, other: &PhaseNanos) {
        self.hash += other.hash;
        self.plan += other.plan;
        self.fuse += other.fuse;
        self.score += other.score;
        self.softmax += other.softmax;
    }
}

/// Score-stage operation counters, incremented block by block as the loops
/// actually execute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub score_mults: u64,
    pub fusion_adds: u64,
    pub hash_mults: u64,
}

/// Closed-form operation counts for a full N x d attention at config `cfg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct OpCounts {
    pub score_mults_exact: u64,
    pub score_mults_distr: u64,
    pub fusion_adds: u64,
    pub hash_mults: u64,
}

pub fn op_counts(cfg: &AttentionConfig, n: usize, d: usize) -> OpCounts {
    let (l, m, g) = (cfg.q_block_rows, cfg.kv_block_rows, cfg.group_size);
    let d64 = d as u64;
    let mut score_exact = 0u64;
    let mut score_distr = 0u64;
    let mut fusion = 0u64;
    let mut hash = 0u64;
    let mut q0 = 0usize;
    while q0 < n {
        let lb = l.min(n - q0) as u64;
        hash += (cfg.hash_width as u64) * (l as u64) * d64;
        let mut k0 = 0usize;
        while k0 < n {
            let mb = m.min(n - k0) as u64;
            score_exact += lb * mb * d64;
            score_distr += lb * mb * (d64 / g as u64);
            fusion += (d64 / g as u64) * (g as u64 - 1) * mb;
            k0 += m;
        }
        q0 += l;
    }
    OpCounts {
        score_mults_exact: score_exact,
        score_mults_distr: score_distr,
        fusion_adds: fusion,
        hash_mults: hash,
    }
}

fn scored_block(
    q: &Matrix,
    k: &Matrix,
    q0: usize,
    lb: usize,
    k0: usize,
    mb: usize,
    scale: f32,
    causal: bool,
) -> Result<Matrix> {
    let q_block = q.row_block(q0, lb);
    let kt_block = k.row_block(k0, mb).transpose();
    let mut s = q_block.matmul(&kt_block)?;
    apply_scale_and_mask(&mut s, q0, k0, scale, causal);
    Ok(s)
}

fn apply_scale_and_mask(s: &mut Matrix, q0: usize, k0: usize, scale: f32, causal: bool) {
    let (lb, mb) = (s.rows(), s.cols());
    for r in 0..lb {
        for c in 0..mb {
            if causal && k0 + c > q0 + r {
                s.set(r, c, f32::NEG_INFINITY);
            } else {
                s.set(r, c, s.get(r, c) * scale);
            }
        }
    }
}

/// One Q block of the exact double loop; returns its output rows.
pub(crate) fn exact_q_block(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    q0: usize,
    lb: usize,
    cfg: &AttentionConfig,
    counters: &mut OpCounters,
    phases: &mut PhaseNanos,
) -> Result<Matrix> {
    let (n, d) = (q.rows(), q.cols());
    let scale = cfg.scale_for(d);
    let m = cfg.kv_block_rows;
    let mut state = SoftmaxState::new(lb, d);
    let mut k0 = 0usize;
    while k0 < n {
        let mb = m.min(n - k0);
        // blocks entirely above the diagonal contribute nothing
        if cfg.causal && k0 > q0 + lb - 1 {
            break;
        }
        let t = Instant::now();
        let s_block = scored_block(q, k, q0, lb, k0, mb, scale, cfg.causal)?;
        counters.score_mults += (lb * mb * d) as u64;
        phases.score += t.elapsed().as_nanos() as u64;

        let t = Instant::now();
        let v_block = v.row_block(k0, mb);
        online_update(&mut state, &s_block, &v_block)?;
        phases.softmax += t.elapsed().as_nanos() as u64;
        k0 += m;
    }
    Ok(state.finalize())
}

/// One Q block of the approximate double loop: hash, sort, plan, and sample
/// once, then fuse and multiply per K block with the same plan.
pub(crate) fn distr_q_block(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    q0: usize,
    lb: usize,
    cfg: &AttentionConfig,
    proj: &Projection,
    table: &GrayTable,
    counters: &mut OpCounters,
    phases: &mut PhaseNanos,
) -> Result<Matrix> {
    let (n, d) = (q.rows(), q.cols());
    let scale = cfg.scale_for(d);
    let m = cfg.kv_block_rows;
    let g = cfg.group_size;

    let q_block = q.row_block(q0, lb);
    let t = Instant::now();
    let hashes = lsh::hash_block(&q_block, proj, table)?;
    counters.hash_mults += (proj.hash_width * proj.block_height * d) as u64;
    phases.hash += t.elapsed().as_nanos() as u64;

    let t = Instant::now();
    let perm = lsh::sort_permutation(&hashes);
    let plan = grouping::make_plan(&perm, g, d)?;
    let sampled = grouping::sample_q(&q_block, &plan)?;
    phases.plan += t.elapsed().as_nanos() as u64;

    let mut state = SoftmaxState::new(lb, d);
    let mut k0 = 0usize;
    while k0 < n {
        let mb = m.min(n - k0);
        if cfg.causal && k0 > q0 + lb - 1 {
            break;
        }
        let t = Instant::now();
        let kt_block = k.row_block(k0, mb).transpose();
        let fused = grouping::fuse_kt(&kt_block, &plan)?;
        counters.fusion_adds += ((d / g) * (g - 1) * mb) as u64;
        phases.fuse += t.elapsed().as_nanos() as u64;

        let t = Instant::now();
        let mut s_block = sampled.matmul(&fused)?;
        counters.score_mults += (lb * mb * (d / g)) as u64;
        apply_scale_and_mask(&mut s_block, q0, k0, scale, cfg.causal);
        phases.score += t.elapsed().as_nanos() as u64;

        let t = Instant::now();
        let v_block = v.row_block(k0, mb); // V is never reduced
        online_update(&mut state, &s_block, &v_block)?;
        phases.softmax += t.elapsed().as_nanos() as u64;
        k0 += m;
    }
    Ok(state.finalize())
}

fn run_blocked<F>(q: &Matrix, cfg: &AttentionConfig, mut block_fn: F) -> Result<Matrix>
where
    F: FnMut(usize, usize) -> Result<Matrix>,
{
    let (n, d) = (q.rows(), q.cols());
    let mut out = Matrix::zeros(n, d);
    let l = cfg.q_block_rows;
    let mut q0 = 0usize;
    while q0 < n {
        let lb = l.min(n - q0);
        let block = block_fn(q0, lb)?;
        out.data_mut()[q0 * d..(q0 + lb) * d].copy_from_slice(block.data());
        q0 += l;
    }
    Ok(out)
}

/// Blocked exact attention; agrees with `attention_naive` within 1e-5
/// relative for all shapes, ragged tails included.
pub fn attention_blocked_exact(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.validate(q, k, v)?;
    let mut counters = OpCounters::default();
    let mut phases = PhaseNanos::default();
    run_blocked(q, cfg, |q0, lb| exact_q_block(q, k, v, q0, lb, cfg, &mut counters, &mut phases))
}

/// DistrAttention: blocked approximate attention with per-Q-block LSH plans.
pub fn attention_distr(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    proj: &Projection,
    table: &GrayTable,
) -> Result<Matrix> {
    let mut counters = OpCounters::default();
    attention_distr_counted(q, k, v, cfg, proj, table, &mut counters)
}

/// Same as [`attention_distr`] but exposes the block-level operation counters.
pub fn attention_distr_counted(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    proj: &Projection,
    table: &GrayTable,
    counters: &mut OpCounters,
) -> Result<Matrix> {
    let mut check = cfg.clone();
    check.backend = Backend::Distr;
    check.validate(q, k, v)?;
    let mut phases = PhaseNanos::default();
    run_blocked(q, &check, |q0, lb| {
        distr_q_block(q, k, v, q0, lb, &check, proj, table, counters, &mut phases)
    })
}

/// Dispatches on `cfg.backend`; `distr` builds its projection and Gray table
/// from `cfg.seed`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
    match cfg.backend {
        Backend::Naive => attention_naive(q, k, v, cfg),
        Backend::BlockedExact => attention_blocked_exact(q, k, v, cfg),
        Backend::Distr => {
            let proj = lsh::build_projection(cfg.seed, cfg.hash_width, cfg.q_block_rows);
            let table = GrayTable::new(cfg.hash_width);
            attention_distr(q, k, v, cfg, &proj, &table)
        }
    }
}

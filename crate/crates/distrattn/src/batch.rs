//! Data-parallel execution over (head, Q-block) work items.
//!
//! Work items are assigned to workers round-robin by index and each item
//! writes its own disjoint output rows, so results are bitwise identical for
//! any worker count. The inner K-loop of every item stays sequential. The
//! projection and Gray table are built once and shared read-only.
//!
//! ```
//! use distrattn::attention::{AttentionConfig, Backend};
//! use distrattn::batch::run_batch;
//! use distrattn::matrix::{Matrix, Rng};
//!
//! let mut rng = Rng::new(4);
//! let head = (
//!     Matrix::random_uniform(&mut rng, 64, 16),
//!     Matrix::random_uniform(&mut rng, 64, 16),
//!     Matrix::random_uniform(&mut rng, 64, 16),
//! );
//! let cfg = AttentionConfig::new(Backend::Distr).with_blocks(16, 16).with_group_size(2);
//! let one = run_batch(&[head.clone()], &cfg, 1).unwrap();
//! let eight = run_batch(&[head], &cfg, 8).unwrap();
//! assert_eq!(one.outputs[0].data(), eight.outputs[0].data()); // bitwise equal
//! ```

use std::time::Instant;

use crate::attention::{
    self, AttentionConfig, Backend, OpCounters, PhaseNanos,
};
use crate::lsh::{build_projection, GrayTable};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Per-phase wall-clock totals in microseconds, summed over all work items.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct PhaseTimings {
    pub hash_us: u64,
    pub plan_us: u64,
    pub fuse_us: u64,
    pub score_us: u64,
    pub softmax_us: u64,
    pub total_us: u64,
}

impl PhaseTimings {
    fn from_nanos(p: &PhaseNanos, total_us: u64) -> Self {
        PhaseTimings {
            hash_us: p.hash / 1_000,
            plan_us: p.plan / 1_000,
            fuse_us: p.fuse / 1_000,
            score_us: p.score / 1_000,
            softmax_us: p.softmax / 1_000,
            total_us,
        }
    }

    pub fn phase_sum_us(&self) -> u64 {
        self.hash_us + self.plan_us + self.fuse_us + self.score_us + self.softmax_us
    }
}

#[derive(Debug)]
pub struct BatchResult {
    pub outputs: Vec<Matrix>,
    pub timings: PhaseTimings,
    pub counters: OpCounters,
}

struct WorkItem {
    head: usize,
    q0: usize,
    rows: usize,
}

/// Runs one attention per (batch, head) entry. Outputs are independent of
/// `workers`; phase timings are wall-clock sums over all items.
pub fn run_batch(
    heads: &[(Matrix, Matrix, Matrix)],
    cfg: &AttentionConfig,
    workers: usize,
) -> Result<BatchResult> {
    if heads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let workers = workers.max(1);
    let d = heads[0].0.cols();
    for (q, k, v) in heads {
        if q.cols() != d || k.cols() != d || v.cols() != d {
            return Err(Error::ShapeMismatch("run_batch: heads must share d".into()));
        }
    }
    let started = Instant::now();

    let proj = build_projection(cfg.seed, cfg.hash_width, cfg.q_block_rows);
    let table = GrayTable::new(cfg.hash_width);

    // naive heads are one item each; blocked backends split by Q block
    let mut items: Vec<WorkItem> = Vec::new();
    for (head, (q, _, _)) in heads.iter().enumerate() {
        match cfg.backend {
            Backend::Naive => items.push(WorkItem { head, q0: 0, rows: q.rows() }),
            _ => {
                let mut q0 = 0;
                while q0 < q.rows() {
                    let rows = cfg.q_block_rows.min(q.rows() - q0);
                    items.push(WorkItem { head, q0, rows });
                    q0 += cfg.q_block_rows;
                }
            }
        }
    }

    type ItemOut = (usize, Result<Matrix>, OpCounters, PhaseNanos);
    let run_item = |item: &WorkItem| -> (Result<Matrix>, OpCounters, PhaseNanos) {
        let (q, k, v) = &heads[item.head];
        let mut counters = OpCounters::default();
        let mut phases = PhaseNanos::default();
        let out = match cfg.backend {
            Backend::Naive => {
                let t = Instant::now();
                let r = attention::attention_naive(q, k, v, cfg);
                phases.score += t.elapsed().as_nanos() as u64;
                r
            }
            Backend::BlockedExact => attention::exact_q_block(
                q, k, v, item.q0, item.rows, cfg, &mut counters, &mut phases,
            ),
            Backend::Distr => attention::distr_q_block(
                q, k, v, item.q0, item.rows, cfg, &proj, &table, &mut counters, &mut phases,
            ),
        };
        (out, counters, phases)
    };

    let results: Vec<ItemOut> = if workers == 1 {
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let (out, counters, phases) = run_item(item);
                (i, out, counters, phases)
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                let items = &items;
                let run_item = &run_item;
                handles.push(scope.spawn(move || {
                    let mut local: Vec<ItemOut> = Vec::new();
                    let mut i = w;
                    while i < items.len() {
                        let (out, counters, phases) = run_item(&items[i]);
                        local.push((i, out, counters, phases));
                        i += workers;
                    }
                    local
                }));
            }
            let mut all: Vec<ItemOut> = Vec::new();
            for h in handles {
                all.extend(h.join().expect("worker panicked"));
            }
            all.sort_by_key(|(i, _, _, _)| *i);
            all
        })
    };

    let mut outputs: Vec<Matrix> =
        heads.iter().map(|(q, _, _)| Matrix::zeros(q.rows(), d)).collect();
    let mut counters = OpCounters::default();
    let mut phases = PhaseNanos::default();
    for (i, out, item_counters, item_phases) in results {
        let block = out?;
        let item = &items[i];
        outputs[item.head].data_mut()[item.q0 * d..(item.q0 + item.rows) * d]
            .copy_from_slice(block.data());
        counters.score_mults += item_counters.score_mults;
        counters.fusion_adds += item_counters.fusion_adds;
        counters.hash_mults += item_counters.hash_mults;
        phases.add(&item_phases);
    }

    let total_us = started.elapsed().as_micros() as u64;
    Ok(BatchResult { outputs, timings: PhaseTimings::from_nanos(&phases, total_us), counters })
}

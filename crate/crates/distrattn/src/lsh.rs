//! Sign-random-projection hashing of Q-block columns.
//!
//! A length-`l` column is projected to `N'` dimensions by a seeded Gaussian
//! matrix, binarized by sign (positive -> 1), and the resulting bit pattern is
//! mapped through a binary-reflected Gray table to its rank. Sorting the ranks
//! yields the permutation the grouping stage consumes. Nearby columns collide
//! or land on adjacent ranks with high probability.
//!
//! ```
//! use distrattn::lsh::{build_projection, hash_block, sort_permutation, GrayTable};
//! use distrattn::matrix::{Matrix, Rng};
//!
//! let mut rng = Rng::new(1);
//! let q_block = Matrix::random_uniform(&mut rng, 8, 16); // l=8 rows, d=16 columns
//! let proj = build_projection(42, 16, 8);
//! let table = GrayTable::new(16);
//! let hashes = hash_block(&q_block, &proj, &table).unwrap();
//! let perm = sort_permutation(&hashes);
//! let mut sorted = perm.clone();
//! sorted.sort_unstable();
//! assert_eq!(sorted, (0..16).collect::<Vec<_>>()); // a permutation of the columns
//! ```

use crate::matrix::{Matrix, Rng};
use crate::{Error, Result};

/// Seeded Gaussian projection used to binarize columns.
///
/// Built once per run and reused for all blocks, heads, and batches.
#[derive(Debug, Clone)]
pub struct Projection {
    pub hash_width: usize,
    pub block_height: usize,
    /// `hash_width` x `block_height`; row i produces bit i of the pattern.
    pub weights: Matrix,
    pub seed: u64,
}

/// `hash_width` is N' (default 16); `block_height` is the Q-block row count l.
pub fn build_projection(seed: u64, hash_width: usize, block_height: usize) -> Projection {
    assert!(hash_width >= 1 && block_height >= 1);
    let mut rng = Rng::substream(seed, 0x4c53_48); // dedicated LSH substream
    let mut weights = Matrix::zeros(hash_width, block_height);
    for x in weights.data_mut() {
        *x = rng.next_standard_normal();
    }
    Projection { hash_width, block_height, weights, seed }
}

/// Lookup table mapping an N'-bit pattern to its rank in the binary-reflected
/// Gray sequence; `entries` is a permutation of `0..2^width`.
#[derive(Debug, Clone)]
pub struct GrayTable {
    pub width: usize,
    pub entries: Vec<u32>,
}

impl GrayTable {
    pub fn new(width: usize) -> Self {
        assert!(width >= 1 && width <= 24, "gray table width out of range");
        let entries = (0..1u32 << width).map(gray_decode).collect();
        GrayTable { width, entries }
    }
}

/// Rank of `pattern` in the binary-reflected Gray sequence, i.e. the inverse
/// of `g = b ^ (b >> 1)`.
pub fn gray_rank(pattern: u32, width: usize) -> Result<u32> {
    if width < 32 && pattern >= 1 << width {
        return Err(Error::InvalidArgument(format!(
            "pattern {pattern:#x} out of range for width {width}"
        )));
    }
    Ok(gray_decode(pattern))
}

fn gray_decode(g: u32) -> u32 {
    let mut b = g;
    b ^= b >> 1;
    b ^= b >> 2;
    b ^= b >> 4;
    b ^= b >> 8;
    b ^= b >> 16;
    b
}

pub fn gray_encode(rank: u32) -> u32 {
    rank ^ (rank >> 1)
}

/// Hashes one column: project, binarize by sign (bit i = 1 iff y\[i\] > 0,
/// LSB-first), then take the Gray rank of the pattern.
pub fn hash_column(col: &[f32], proj: &Projection, table: &GrayTable) -> Result<u32> {
    if col.len() != proj.block_height {
        return Err(Error::ShapeMismatch(format!(
            "hash_column: column length {} != block height {}",
            col.len(),
            proj.block_height
        )));
    }
    if proj.hash_width != table.width {
        return Err(Error::ShapeMismatch(format!(
            "hash_column: projection width {} != table width {}",
            proj.hash_width, table.width
        )));
    }
    let mut pattern = 0u32;
    for i in 0..proj.hash_width {
        let w = proj.weights.row(i);
        let mut y = 0.0f32;
        for (a, b) in w.iter().zip(col) {
            y += a * b;
        }
        if y > 0.0 {
            pattern |= 1 << i;
        }
    }
    Ok(table.entries[pattern as usize])
}

/// Hashes every column of a Q block. A ragged block (fewer than
/// `block_height` rows) is treated as zero-padded, which is equivalent to
/// truncating the projection to the rows that exist.
pub fn hash_block(q_block: &Matrix, proj: &Projection, table: &GrayTable) -> Result<Vec<u32>> {
    if q_block.rows() > proj.block_height {
        return Err(Error::ShapeMismatch(format!(
            "hash_block: block has {} rows, projection expects at most {}",
            q_block.rows(),
            proj.block_height
        )));
    }
    if proj.hash_width != table.width {
        return Err(Error::ShapeMismatch("hash_block: projection/table width mismatch".into()));
    }
    let d = q_block.cols();
    let rows = q_block.rows();
    let mut hashes = vec![0u32; d];
    for (j, h) in hashes.iter_mut().enumerate() {
        let mut pattern = 0u32;
        for i in 0..proj.hash_width {
            let w = proj.weights.row(i);
            let mut y = 0.0f32;
            for r in 0..rows {
                y += w[r] * q_block.get(r, j);
            }
            if y > 0.0 {
                pattern |= 1 << i;
            }
        }
        *h = table.entries[pattern as usize];
    }
    Ok(hashes)
}

/// Stable ascending sort permutation over the hash values; ties keep original
/// column order.
pub fn sort_permutation(hashes: &[u32]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..hashes.len()).collect();
    perm.sort_by_key(|&j| hashes[j]);
    perm
}

//! Dense-allocation audit.
//!
//! The estimation and inference paths must never materialize an N x N dense
//! matrix for N > [`DENSE_DIM_LIMIT`]; everything large stays in sparse or
//! low-rank factored form. All dense matrix constructors in this crate route
//! through [`check_dense`], which enforces the contract at runtime and keeps a
//! high-water mark that tests can inspect.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Largest admissible dimension for a square-ish dense allocation.
pub const DENSE_DIM_LIMIT: usize = 1000;

static MAX_MIN_DIM: AtomicUsize = AtomicUsize::new(0);

/// Record a dense `rows x cols` allocation and enforce the memory contract.
///
/// Rectangular buffers with one small side (N x p data matrices, d x N
/// projector slices) are always fine; a buffer whose smaller side exceeds
/// [`DENSE_DIM_LIMIT`] is a contract violation.
pub fn check_dense(rows: usize, cols: usize) {
    let min_dim = rows.min(cols);
    MAX_MIN_DIM.fetch_max(min_dim, Ordering::Relaxed);
    assert!(
        min_dim <= DENSE_DIM_LIMIT,
        "dense allocation contract violated: requested {rows} x {cols} dense buffer \
         (min dimension {min_dim} > {DENSE_DIM_LIMIT})"
    );
}

/// High-water mark of the smaller dimension over all audited dense allocations.
pub fn dense_high_water() -> usize {
    MAX_MIN_DIM.load(Ordering::Relaxed)
}

/// Reset the high-water mark (test hook).
pub fn reset_dense_high_water() {
    MAX_MIN_DIM.store(0, Ordering::Relaxed);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangular_buffers_pass() {
        check_dense(1_000_000, 6);
        check_dense(8, 1_000_000);
    }

    #[test]
    #[should_panic(expected = "dense allocation contract")]
    fn square_dense_above_limit_panics() {
        check_dense(1001, 1001);
    }
}

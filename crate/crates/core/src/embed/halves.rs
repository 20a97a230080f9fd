//! Half-window split along the time axis.
//!
//! Graph nodes keep the first half of each window; generation queries keep
//! the second half, which overlaps in time with the first half of the next
//! window. Odd frame counts drop the final frame before splitting.

use nalgebra::DMatrix;

fn half_len(m: &DMatrix<f64>) -> usize {
    m.nrows() / 2
}

pub fn halve_keep_first(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.rows(0, half_len(m)).into_owned()
}

pub fn halve_keep_second(m: &DMatrix<f64>) -> DMatrix<f64> {
    let h = half_len(m);
    m.rows(h, h).into_owned()
}

/// Row-major (frame-major) flattening of a `frames × D` matrix.
pub fn flatten_time_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

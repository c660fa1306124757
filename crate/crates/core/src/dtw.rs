//! Dynamic time warping between point sequences.

use crate::error::{Error, Result};
use crate::geometry::{euclidean, Point};

/// Accumulated-cost DTW with Euclidean local cost and the three classic
/// steps (insertion, deletion, match). Runs in O(|a|·|b|) time and O(|b|)
/// memory.
pub fn dtw_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    dtw_distance_banded(a, b, None)
}

/// DTW restricted to a Sakoe-Chiba band of half-width
/// `ceil(fraction * max(|a|, |b|))` cells (never narrower than the length
/// difference). `None` or a fraction of at least 1 is unconstrained.
pub fn dtw_distance_banded(a: &[Point], b: &[Point], band: Option<f64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let window = match band {
        Some(f) if f < 1.0 => {
            let w = (f.max(0.0) * n.max(m) as f64).ceil() as usize;
            w.max(n.abs_diff(m))
        }
        _ => usize::MAX,
    };
    let in_band = |i: usize, j: usize| i.abs_diff(j) <= window;

    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            if !in_band(i, j) {
                cur[j] = f64::INFINITY;
                continue;
            }
            let cost = euclidean(ai, bj);
            cur[j] = if i == 0 && j == 0 {
                cost
            } else if i == 0 {
                cost + cur[j - 1]
            } else if j == 0 {
                cost + prev[0]
            } else {
                cost + prev[j].min(cur[j - 1]).min(prev[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

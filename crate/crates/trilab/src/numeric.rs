//! Deterministic reductions, least-squares fits and seeded generators.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Below this length sums run sequentially.
const PAIRWISE_BLOCK: usize = 64;

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Complex counterpart of [`pairwise_sum`].
pub fn pairwise_sum_complex(values: &[Complex64]) -> Complex64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum_complex(&values[..mid]) + pairwise_sum_complex(&values[mid..])
}

/// Result of an ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Fits `y = slope * x + intercept`. Needs at least two distinct abscissae.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let m = xs.len() as f64;
    let mx = pairwise_sum(xs) / m;
    let my = pairwise_sum(ys) / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    Some(LineFit {
        slope,
        intercept,
        residual: (ss / m).sqrt(),
    })
}

/// Fits `log y` against `log x`. All values must be positive.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

/// The crate-wide seeded generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Midpoints of `res` equal cells tiling `[lo, hi]`.
pub fn midpoints(lo: f64, hi: f64, res: usize) -> Vec<f64> {
    let h = (hi - lo) / res as f64;
    (0..res).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

/// Decodes a flat lexicographic index (first axis slowest).
pub fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for axis in (0..shape.len()).rev() {
        out[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
}

/// Encodes a multi-index into a flat lexicographic index.
pub fn ravel(index: &[usize], shape: &[usize]) -> usize {
    index
        .iter()
        .zip(shape)
        .fold(0, |acc, (&i, &s)| acc * s + i)
}

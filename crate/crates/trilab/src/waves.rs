//! Frequency densities on midpoint grids and their extension fields.
//!
//! The extension of a density `f` on a patch is the midpoint sum
//! `sum_nodes exp(i X . Sigma(xi)) f(xi) h^n` for ambient points `X`. With the
//! identity rotation and `graph_axis = n`, `X = (x, t)` and the phase is
//! `x . xi + t phi(xi)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{Domain, HypersurfacePatch};
use crate::numeric::{midpoints, pairwise_sum, ravel, unravel};

/// Amplitudes below this modulus are flushed to zero.
pub const FLUSH: f64 = 1e-300;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WaveError {
    #[error("grid must have positive resolution on every axis")]
    EmptyGrid,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid node {0:?} lies outside the patch domain")]
    NodeOutsideDomain(Vec<f64>),
    #[error("reference set does not contain the grid box")]
    ReferenceTooSmall,
    #[error("exponent p must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("wave {0} has zero mass")]
    ZeroMass(usize),
    #[error("waves live on different grids")]
    GridMismatch,
    #[error("malformed wave file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, WaveError>;

/// Tensor grid of cell midpoints on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl FrequencyGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != res.len() {
            return Err(WaveError::DimensionMismatch {
                expected: lo.len(),
                found: res.len().min(hi.len()),
            });
        }
        if lo.is_empty() || res.contains(&0) || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(WaveError::EmptyGrid);
        }
        Ok(Self { lo, hi, res })
    }

    /// Grid with exact spacing `h` on every axis and at least the requested extent.
    pub fn with_spacing(center: &[f64], half_width: f64, h: f64) -> Result<Self> {
        let count = ((2.0 * half_width / h) - 1e-9).ceil().max(1.0) as usize;
        let half = 0.5 * count as f64 * h;
        Self::new(
            center.iter().map(|c| c - half).collect(),
            center.iter().map(|c| c + half).collect(),
            vec![count; center.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.res[axis] as f64
    }

    /// Cell volume `h^n`.
    pub fn weight(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        midpoints(self.lo[axis], self.hi[axis], self.res[axis])
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim()];
        unravel(flat, &self.res, &mut idx);
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * self.spacing(a))
            .collect()
    }

    pub fn as_domain(&self) -> Domain {
        Domain {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }
}

/// Grid, patch and per-node geometry shared by a wave and everything derived from it.
#[derive(Debug)]
pub struct WaveBasis {
    pub grid: FrequencyGrid,
    pub patch: HypersurfacePatch,
    /// Node coordinates, `n` entries per node.
    pub nodes: Vec<f64>,
    /// Phase value per node.
    pub phi: Vec<f64>,
    /// `(axis, sign)` per column when the rotation is a signed permutation.
    signed_perm: Option<Vec<(usize, f64)>>,
}

impl WaveBasis {
    pub fn new(patch: HypersurfacePatch, grid: FrequencyGrid) -> Result<Arc<Self>> {
        if grid.dim() != patch.n {
            return Err(WaveError::DimensionMismatch {
                expected: patch.n,
                found: grid.dim(),
            });
        }
        let mut nodes = Vec::with_capacity(grid.len() * grid.dim());
        let mut phi = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let xi = grid.node(k);
            if !patch.contains(&xi) {
                return Err(WaveError::NodeOutsideDomain(xi));
            }
            phi.push(patch.phase.value(&xi));
            nodes.extend(xi);
        }
        let signed_perm = signed_permutation(&patch.rotation);
        Ok(Arc::new(Self {
            grid,
            patch,
            nodes,
            phi,
            signed_perm,
        }))
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.nodes[k * n..(k + 1) * n]
    }

    /// Local coordinates `Q^T X` paired with the unrotated embedding.
    fn local(&self, x: &[f64]) -> Vec<f64> {
        let q = &self.patch.rotation;
        (0..q.ncols()).map(|b| (0..q.nrows()).map(|a| q[(a, b)] * x[a]).sum()).collect()
    }
}

/// Detects matrices with one `+-1` per column; returns the row and sign of each column.
fn signed_permutation(m: &DMatrix<f64>) -> Option<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let nz: Vec<(usize, f64)> = col.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        match nz.as_slice() {
            [(row, v)] if v.abs() == 1.0 => out.push((*row, *v)),
            _ => return None,
        }
    }
    Some(out)
}

/// A frequency density together with its reference set for margins.
#[derive(Debug, Clone)]
pub struct FreeWave {
    pub basis: Arc<WaveBasis>,
    pub amplitudes: Vec<Complex64>,
    pub reference: Domain,
}

impl FreeWave {
    /// Reference set defaults to the grid box.
    pub fn new(basis: Arc<WaveBasis>, amplitudes: Vec<Complex64>) -> Result<Self> {
        let reference = basis.grid.as_domain();
        Self::with_reference(basis, amplitudes, reference)
    }

    pub fn with_reference(basis: Arc<WaveBasis>, mut amplitudes: Vec<Complex64>, reference: Domain) -> Result<Self> {
        if amplitudes.len() != basis.grid.len() {
            return Err(WaveError::DimensionMismatch {
                expected: basis.grid.len(),
                found: amplitudes.len(),
            });
        }
        let g = &basis.grid;
        if reference.lo.len() != g.dim()
            || reference.lo.iter().zip(&g.lo).any(|(v, u)| v > u)
            || reference.hi.iter().zip(&g.hi).any(|(v, u)| v < u)
        {
            return Err(WaveError::ReferenceTooSmall);
        }
        for a in &mut amplitudes {
            if a.norm() < FLUSH {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self {
            basis,
            amplitudes,
            reference,
        })
    }

    pub fn zero(basis: Arc<WaveBasis>) -> Self {
        let len = basis.grid.len();
        Self::new(basis, vec![Complex64::new(0.0, 0.0); len]).expect("zero wave is valid")
    }

    pub fn from_fn(basis: Arc<WaveBasis>, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let amps = (0..basis.grid.len()).map(|k| f(basis.node(k))).collect();
        Self::new(basis, amps)
    }

    /// Same grid and reference set, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<Complex64>) -> Result<Self> {
        Self::with_reference(self.basis.clone(), amplitudes, self.reference.clone())
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.basis.grid
    }

    pub fn patch(&self) -> &HypersurfacePatch {
        &self.basis.patch
    }

    pub fn scaled(&self, lambda: Complex64) -> Self {
        let amps = self.amplitudes.iter().map(|a| a * lambda).collect();
        self.with_amplitudes(amps).expect("same shape")
    }

    /// `sum |f|^2 h^n`.
    pub fn mass(&self) -> f64 {
        let sq: Vec<f64> = self.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        pairwise_sum(&sq) * self.grid().weight()
    }

    /// Distance from the union of support cells to the complement of the reference set.
    pub fn margin(&self) -> f64 {
        let g = self.grid();
        let half: Vec<f64> = (0..g.dim()).map(|a| 0.5 * g.spacing(a)).collect();
        let mut best = f64::INFINITY;
        for (k, a) in self.amplitudes.iter().enumerate() {
            if a.norm() == 0.0 {
                continue;
            }
            let xi = self.basis.node(k);
            for axis in 0..g.dim() {
                let lower = xi[axis] - half[axis] - self.reference.lo[axis];
                let upper = self.reference.hi[axis] - (xi[axis] + half[axis]);
                best = best.min(lower.min(upper).max(0.0));
            }
        }
        best
    }

    /// Multiplies by `exp(i t phi)`.
    pub fn evolve(&self, t: f64) -> Self {
        let amps = self
            .amplitudes
            .iter()
            .zip(&self.basis.phi)
            .map(|(a, phi)| a * Complex64::from_polar(1.0, t * phi))
            .collect();
        self.with_amplitudes(amps).expect("same shape")
    }

    /// Direct midpoint sums at arbitrary ambient points.
    pub fn extend(&self, points: &[Vec<f64>]) -> Vec<Complex64> {
        let weight = self.grid().weight();
        let n = self.grid().dim();
        let g = self.patch().graph_axis;
        let support: Vec<usize> = (0..self.amplitudes.len())
            .filter(|&k| self.amplitudes[k].norm() > 0.0)
            .collect();
        points
            .par_iter()
            .map(|x| {
                let y = self.basis.local(x);
                let mut acc = Complex64::new(0.0, 0.0);
                for &k in &support {
                    let xi = self.basis.node(k);
                    let mut phase = y[g] * self.basis.phi[k];
                    for j in 0..n {
                        phase += y[self.patch().slot(j)] * xi[j];
                    }
                    let (s, c) = phase.sin_cos();
                    acc += self.amplitudes[k] * Complex64::new(c, s);
                }
                acc * weight
            })
            .collect()
    }

    /// Extension on the tensor product of ambient coordinate lists, lexicographic order.
    ///
    /// Signed-permutation rotations use axis-by-axis contraction; other rotations
    /// fall back to [`FreeWave::extend`].
    pub fn extend_tensor(&self, axes: &[Vec<f64>]) -> Vec<Complex64> {
        let d = self.grid().dim() + 1;
        assert_eq!(axes.len(), d, "need one coordinate list per ambient axis");
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = shape.iter().product();
        let Some(perm) = &self.basis.signed_perm else {
            let mut idx = vec![0; d];
            let points: Vec<Vec<f64>> = (0..total)
                .map(|f| {
                    unravel(f, &shape, &mut idx);
                    (0..d).map(|a| axes[a][idx[a]]).collect()
                })
                .collect();
            return self.extend(&points);
        };
        let n = d - 1;
        let patch = self.patch();
        let g = patch.graph_axis;
        let (time_axis, time_sign) = perm[g];
        let targets: Vec<(usize, f64)> = (0..n).map(|j| perm[patch.slot(j)]).collect();
        let res = self.grid().res.clone();
        let weight = self.grid().weight();
        let mats: Vec<Vec<Complex64>> = (0..n)
            .map(|j| {
                let (axis, sign) = targets[j];
                let nodes = self.grid().axis_nodes(j);
                axes[axis]
                    .iter()
                    .flat_map(|x| nodes.iter().map(move |xi| Complex64::from_polar(1.0, sign * x * xi)))
                    .collect()
            })
            .collect();
        let slices: Vec<Vec<Complex64>> = axes[time_axis]
            .par_iter()
            .map(|t| {
                let mut data: Vec<Complex64> = self
                    .amplitudes
                    .iter()
                    .zip(&self.basis.phi)
                    .map(|(a, phi)| a * Complex64::from_polar(weight, time_sign * t * phi))
                    .collect();
                let mut cur = res.clone();
                for j in 0..n {
                    let rows = axes[targets[j].0].len();
                    data = contract(&data, &cur, j, &mats[j], rows);
                    cur[j] = rows;
                }
                data
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); total];
        let local_shape: Vec<usize> = targets.iter().map(|(a, _)| shape[*a]).collect();
        let mut li = vec![0; n];
        let mut oi = vec![0; d];
        for (ti, slice) in slices.iter().enumerate() {
            for (f, v) in slice.iter().enumerate() {
                unravel(f, &local_shape, &mut li);
                oi[time_axis] = ti;
                for j in 0..n {
                    oi[targets[j].0] = li[j];
                }
                out[ravel(&oi, &shape)] = *v;
            }
        }
        out
    }
}

/// Applies `mat` (`rows x shape[axis]`, row-major) along one tensor axis.
fn contract(data: &[Complex64], shape: &[usize], axis: usize, mat: &[Complex64], rows: usize) -> Vec<Complex64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let m = shape[axis];
    let mut out = vec![Complex64::new(0.0, 0.0); outer * rows * inner];
    for o in 0..outer {
        for k in 0..m {
            let src = &data[(o * m + k) * inner..(o * m + k + 1) * inner];
            if src.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
                continue;
            }
            for r in 0..rows {
                let w = mat[r * m + k];
                let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Cube in space-time sampled at cell midpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeCube {
    pub center: Vec<f64>,
    pub side: f64,
    pub resolution: usize,
}

impl SpaceTimeCube {
    pub fn new(center: Vec<f64>, side: f64, resolution: usize) -> Result<Self> {
        if !(side > 0.0) || resolution == 0 {
            return Err(WaveError::EmptyGrid);
        }
        Ok(Self {
            center,
            side,
            resolution,
        })
    }

    pub fn axes(&self) -> Vec<Vec<f64>> {
        self.center
            .iter()
            .map(|c| midpoints(c - 0.5 * self.side, c + 0.5 * self.side, self.resolution))
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (self.side / self.resolution as f64).powi(self.center.len() as i32)
    }
}

/// Riemann-sum `L^p` norm of the pointwise product of the extensions over the cube.
pub fn product_lp_norm(waves: &[&FreeWave], cube: &SpaceTimeCube, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(WaveError::NonPositiveExponent(p));
    }
    let axes = cube.axes();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut modulus = vec![1.0; total];
    for w in waves {
        if w.grid().dim() + 1 != cube.center.len() {
            return Err(WaveError::DimensionMismatch {
                expected: w.grid().dim() + 1,
                found: cube.center.len(),
            });
        }
        for (m, v) in modulus.iter_mut().zip(w.extend_tensor(&axes)) {
            *m *= v.norm();
        }
    }
    let powered: Vec<f64> = modulus.iter().map(|m| m.powf(p)).collect();
    Ok((pairwise_sum(&powered) * cube.cell_volume()).powf(1.0 / p))
}

/// `product_lp_norm / prod mass^{1/2}`.
pub fn trilinear_ratio(waves: [&FreeWave; 3], cube: &SpaceTimeCube, p: f64) -> Result<f64> {
    let mut denom = 1.0;
    for (i, w) in waves.iter().enumerate() {
        let m = w.mass();
        if m == 0.0 {
            return Err(WaveError::ZeroMass(i));
        }
        denom *= m.sqrt();
    }
    Ok(product_lp_norm(&waves, cube, p)? / denom)
}

/// Text form: `lo`, `hi`, `res` header lines then one `re im` pair per node.
pub fn write_wave_text(wave: &FreeWave) -> String {
    let g = wave.grid();
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
    let mut out = format!(
        "lo {}\nhi {}\nres {}\n",
        join(&g.lo),
        join(&g.hi),
        g.res.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ")
    );
    for a in &wave.amplitudes {
        out.push_str(&format!("{:.16e} {:.16e}\n", a.re, a.im));
    }
    out
}

/// Inverse of [`write_wave_text`].
pub fn read_wave_text(text: &str) -> Result<(FrequencyGrid, Vec<Complex64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut header = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| WaveError::Parse(format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(WaveError::Parse(format!("expected `{key}` line")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let num = |s: &String| s.parse::<f64>().map_err(|e| WaveError::Parse(e.to_string()));
    let lo = header("lo")?.iter().map(num).collect::<Result<Vec<_>>>()?;
    let hi = header("hi")?.iter().map(num).collect::<Result<Vec<_>>>()?;
    let res = header("res")?
        .iter()
        .map(|s| s.parse::<usize>().map_err(|e| WaveError::Parse(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let grid = FrequencyGrid::new(lo, hi, res)?;
    let amps = lines
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| WaveError::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            match v.as_slice() {
                [re, im] => Ok(Complex64::new(*re, *im)),
                _ => Err(WaveError::Parse(format!("bad amplitude line `{l}`"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if amps.len() != grid.len() {
        return Err(WaveError::Parse(format!("expected {} amplitudes, found {}", grid.len(), amps.len())));
    }
    Ok((grid, amps))
}

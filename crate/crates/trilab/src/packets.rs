//! Wave-packet decomposition over leaf representatives and a spatial lattice.
//!
//! A wave is split in two exact steps. Every node goes to the nearest leaf
//! representative in projected chart coordinates (hard Voronoi cells). Each
//! leaf piece is then multiplied on the position side by a partition of unity
//! `sum_a w_a = 1` indexed by lattice points. On a grid with spacing `h` the
//! position side is `2 pi / h` periodic; when that period holds exactly `K`
//! lattice spacings per axis, the Fejer weights
//! `w_a(x) = (1/K) sum_{|m|<K} (1 - |m|/K) exp(i m h (x - x_a))`
//! are nonnegative, sum to one, and act on amplitudes as a short convolution
//! of at most `K - 1` nodes per axis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{Domain, GeometryError, HypersurfacePatch};
use crate::numeric::{fit_loglog, pairwise_sum, unravel};
use crate::waves::{FreeWave, FrequencyGrid, SpaceTimeCube, WaveError};

/// Default decay power of tube cutoffs.
pub const DEFAULT_DECAY_POWER: i32 = 10;
/// Localization and margin constants asserted for hard Voronoi cells.
pub const LOCALIZATION_CONSTANT: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PacketError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error("invalid lattice parameter: {0}")]
    InvalidParameter(String),
    #[error("grid period {period} on axis {axis} is not a multiple of the lattice spacing {spacing}")]
    IncompatibleGrid { axis: usize, period: f64, spacing: f64 },
    #[error("wave margin must be positive")]
    NonPositiveMargin,
    #[error("wave support is closer than {needed} nodes to the grid edge on axis {axis}")]
    InsufficientPadding { axis: usize, needed: usize },
    #[error("need at least 3 distances, got {0}")]
    TooFewDistances(usize),
    #[error("weights have shape {found:?}, expected {expected:?}")]
    WeightShape { expected: (usize, usize), found: (usize, usize) },
    #[error("weight row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
}

pub type Result<T> = std::result::Result<T, PacketError>;

/// Dyadic inner scale nearest to `sqrt(R)`; ties go to the smaller value.
pub fn dyadic_level(big_r: f64) -> Result<(u32, f64)> {
    if !(big_r >= 1.0) {
        return Err(PacketError::InvalidParameter(format!("scale R = {big_r} must be at least 1")));
    }
    let target = big_r.sqrt();
    let mut best = (0u32, big_r);
    let mut j = 0u32;
    loop {
        let r = big_r / 2f64.powi(j as i32);
        if (r - target).abs() < (best.1 - target).abs() {
            best = (j, r);
        }
        if r < target {
            break;
        }
        j += 1;
    }
    Ok(best)
}

/// Leaf representatives plus the spatial lattice `c^{-2} r Z^n` on one period box.
#[derive(Debug, Clone, Serialize)]
pub struct PacketLattice {
    pub big_r: f64,
    pub level: u32,
    pub r: f64,
    pub c: f64,
    /// Representative frequency per selected leaf, in scan order.
    pub leaf_reps: Vec<Vec<f64>>,
    /// Projected chart coordinates of each representative.
    pub leaf_ids: Vec<Vec<f64>>,
    pub spacing: f64,
    /// Lattice points per axis inside the bounding box.
    pub per_axis: Vec<usize>,
    pub bounding_box: Domain,
    pub decay_power: i32,
}

impl PacketLattice {
    /// Lattice point with per-axis index `a`.
    pub fn position(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .enumerate()
            .map(|(axis, &a)| self.first_point(axis) + a as f64 * self.spacing)
            .collect()
    }

    fn first_point(&self, axis: usize) -> f64 {
        (self.bounding_box.lo[axis] / self.spacing - 1e-9).ceil() * self.spacing
    }

    pub fn position_count(&self) -> usize {
        self.per_axis.iter().product()
    }

    pub fn tube_count(&self) -> usize {
        self.leaf_reps.len() * self.position_count()
    }

    /// Leaf index of the nearest representative; ties go to the earliest one.
    pub fn nearest_leaf(&self, leaf_id: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, rep) in self.leaf_ids.iter().enumerate() {
            let d = dist(rep, leaf_id);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Spatial box `[-pi/h, pi/h)` per axis, one period of the position side.
pub fn period_box(grid: &FrequencyGrid) -> Domain {
    let half: Vec<f64> = (0..grid.dim()).map(|a| PI / grid.spacing(a)).collect();
    Domain {
        lo: half.iter().map(|h| -h).collect(),
        hi: half,
    }
}

/// Grid whose period holds exactly `periods` lattice spacings `c^{-2} r`.
pub fn lattice_grid(center: &[f64], half_width: f64, big_r: f64, c: f64, periods: usize) -> Result<FrequencyGrid> {
    let (_, r) = dyadic_level(big_r)?;
    if periods == 0 || !(c > 0.0 && c <= 1.0) {
        return Err(PacketError::InvalidParameter("need periods >= 1 and c in (0, 1]".into()));
    }
    let h = 2.0 * PI / (periods as f64 * r / (c * c));
    Ok(FrequencyGrid::with_spacing(center, half_width, h)?)
}

/// Greedy maximal `1/r`-separated set of projected chart coordinates of grid nodes.
pub fn build_lattice(patch: &HypersurfacePatch, grid: &FrequencyGrid, big_r: f64, c: f64, bounding_box: Domain) -> Result<PacketLattice> {
    let chart = patch.leaf_chart.as_ref().ok_or(GeometryError::MissingLeafChart)?;
    if !(c > 0.0 && c <= 1.0) {
        return Err(PacketError::InvalidParameter(format!("c = {c} must lie in (0, 1]")));
    }
    if grid.is_empty() || bounding_box.dim() != patch.n {
        return Err(PacketError::InvalidParameter("empty grid or bounding box of wrong dimension".into()));
    }
    let (level, r) = dyadic_level(big_r)?;
    let sep = 1.0 / r;
    let mut leaf_reps = Vec::new();
    let mut leaf_ids: Vec<Vec<f64>> = Vec::new();
    for k in 0..grid.len() {
        let xi = grid.node(k);
        if !patch.contains(&xi) {
            continue;
        }
        let id = chart.leaf_id(&xi);
        if leaf_ids.iter().all(|l| dist(l, &id) >= sep) {
            leaf_reps.push(xi);
            leaf_ids.push(id);
        }
    }
    if leaf_reps.is_empty() {
        return Err(PacketError::InvalidParameter("no grid node lies in the patch domain".into()));
    }
    let spacing = r / (c * c);
    let per_axis = (0..patch.n)
        .map(|a| {
            let first = (bounding_box.lo[a] / spacing - 1e-9).ceil();
            let mut count = 0usize;
            while (first + count as f64) * spacing < bounding_box.hi[a] - 1e-9 * spacing {
                count += 1;
            }
            count
        })
        .collect();
    Ok(PacketLattice {
        big_r,
        level,
        r,
        c,
        leaf_reps,
        leaf_ids,
        spacing,
        per_axis,
        bounding_box,
        decay_power: DEFAULT_DECAY_POWER,
    })
}

/// A tube: lattice point, leaf representative and its transport velocity.
#[derive(Debug, Clone, Serialize)]
pub struct Tube {
    pub leaf: usize,
    pub position_index: Vec<usize>,
    pub x_t: Vec<f64>,
    pub xi_t: Vec<f64>,
    /// `grad phi(xi_T)`; the axis is `x = x_T - t * velocity`.
    pub velocity: Vec<f64>,
    pub radius: f64,
    pub decay_power: i32,
}

impl Tube {
    /// Distance from the axis at time `t` to the spatial point `x`.
    pub fn axis_distance(&self, x: &[f64], t: f64) -> f64 {
        self.x_t
            .iter()
            .zip(&self.velocity)
            .zip(x)
            .map(|((xt, v), xx)| {
                let d = xx - xt + t * v;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `(1 + |x - x_T + t grad phi(xi_T)| / radius)^{-N}`.
    pub fn cutoff(&self, x: &[f64], t: f64) -> f64 {
        (1.0 + self.axis_distance(x, t) / self.radius).powi(-self.decay_power)
    }

    /// Cutoff at an ambient point, read in the patch frame.
    pub fn cutoff_ambient(&self, patch: &HypersurfacePatch, point: &[f64]) -> f64 {
        let (x, t) = local_space_time(patch, point);
        self.cutoff(&x, t)
    }
}

/// Splits `Q^T X` into the spatial part (parameter order) and the graph coordinate.
pub fn local_space_time(patch: &HypersurfacePatch, point: &[f64]) -> (Vec<f64>, f64) {
    let y = patch.rotation.transpose() * DVector::from_column_slice(point);
    let x = (0..patch.n).map(|j| y[patch.slot(j)]).collect();
    (x, y[patch.graph_axis])
}

/// Packets of one wave, in tube order.
#[derive(Debug, Clone)]
pub struct PacketDecomposition {
    pub source: FreeWave,
    pub lattice: PacketLattice,
    pub tubes: Vec<Tube>,
    pub packets: Vec<FreeWave>,
    /// Leaf index per grid node.
    pub assignment: Vec<usize>,
}

impl PacketDecomposition {
    /// Sum of all packets.
    pub fn reconstruct(&self) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.source.amplitudes.len()];
        for p in &self.packets {
            for (o, a) in out.iter_mut().zip(&p.amplitudes) {
                *o += a;
            }
        }
        out
    }

    /// Relative `l^2` distance between the packet sum and the source amplitudes.
    pub fn reconstruction_error(&self) -> f64 {
        let rec = self.reconstruct();
        let num: Vec<f64> = rec.iter().zip(&self.source.amplitudes).map(|(a, b)| (a - b).norm_sqr()).collect();
        let den: Vec<f64> = self.source.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        let den = pairwise_sum(&den);
        if den == 0.0 {
            return pairwise_sum(&num).sqrt();
        }
        (pairwise_sum(&num) / den).sqrt()
    }

    /// Largest chart distance from a packet's support to its leaf, in units of `1/r`.
    pub fn localization(&self) -> f64 {
        let chart = self.source.patch().leaf_chart.as_ref().expect("lattice requires a chart");
        let mut worst = 0.0f64;
        for (tube, packet) in self.tubes.iter().zip(&self.packets) {
            let leaf = &self.lattice.leaf_ids[tube.leaf];
            for (k, a) in packet.amplitudes.iter().enumerate() {
                if a.norm() > 0.0 {
                    let id = chart.leaf_id(self.source.basis.node(k));
                    worst = worst.max(dist(&id, leaf) * self.lattice.r);
                }
            }
        }
        worst
    }

    /// Smallest `margin(phi_T) - margin(phi)`, in units of `1/r`.
    pub fn margin_loss(&self) -> f64 {
        let base = self.source.margin();
        self.packets
            .iter()
            .map(|p| p.margin())
            .filter(|m| m.is_finite())
            .map(|m| (m - base) * self.lattice.r)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn packet_mass_sum(&self) -> f64 {
        let masses: Vec<f64> = self.packets.iter().map(FreeWave::mass).collect();
        pairwise_sum(&masses)
    }
}

/// Fejer taps `c_m exp(-i m h x_a)` for `|m| < K`, index `m + K - 1`.
fn fejer_taps(periods: usize, h: f64, x_a: f64) -> Vec<Complex64> {
    let k = periods as i64;
    (-(k - 1)..k)
        .map(|m| {
            let c = (1.0 - m.abs() as f64 / k as f64) / k as f64;
            Complex64::from_polar(c, -(m as f64) * h * x_a)
        })
        .collect()
}

/// Convolves along one axis with taps centred at index `taps.len() / 2`.
fn convolve_axis(data: &[Complex64], shape: &[usize], axis: usize, taps: &[Complex64]) -> Vec<Complex64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let m = shape[axis];
    let half = (taps.len() / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for o in 0..outer {
        for j in 0..m {
            for (t, tap) in taps.iter().enumerate() {
                let src = j as isize - (t as isize - half);
                if src < 0 || src >= m as isize {
                    continue;
                }
                let s = &data[(o * m + src as usize) * inner..(o * m + src as usize + 1) * inner];
                let d = &mut out[(o * m + j) * inner..(o * m + j + 1) * inner];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += tap * sv;
                }
            }
        }
    }
    out
}

/// Exact decomposition of `wave` into one packet per tube.
pub fn decompose(wave: &FreeWave, lattice: &PacketLattice) -> Result<PacketDecomposition> {
    let grid = wave.grid();
    let patch = wave.patch();
    let chart = patch.leaf_chart.as_ref().ok_or(GeometryError::MissingLeafChart)?;
    let n = grid.dim();
    for axis in 0..n {
        let h = grid.spacing(axis);
        let period = 2.0 * PI / h;
        let width = lattice.bounding_box.hi[axis] - lattice.bounding_box.lo[axis];
        let k = lattice.per_axis[axis] as f64;
        if ((period - k * lattice.spacing) / period).abs() > 1e-9 || ((width - period) / period).abs() > 1e-9 {
            return Err(PacketError::IncompatibleGrid {
                axis,
                period,
                spacing: lattice.spacing,
            });
        }
    }
    if !(wave.margin() > 0.0) {
        return Err(PacketError::NonPositiveMargin);
    }
    check_padding(wave, &lattice.per_axis)?;
    let assignment: Vec<usize> = (0..grid.len())
        .map(|k| lattice.nearest_leaf(&chart.leaf_id(wave.basis.node(k))))
        .collect();
    let positions = lattice.position_count();
    let mut tubes = Vec::with_capacity(lattice.tube_count());
    let mut jobs = Vec::with_capacity(lattice.tube_count());
    let mut index = vec![0; n];
    for leaf in 0..lattice.leaf_reps.len() {
        let xi_t = lattice.leaf_reps[leaf].clone();
        let velocity: Vec<f64> = patch.phase.gradient(&xi_t).iter().copied().collect();
        for p in 0..positions {
            unravel(p, &lattice.per_axis, &mut index);
            let x_t = lattice.position(&index);
            jobs.push((leaf, x_t.clone()));
            tubes.push(Tube {
                leaf,
                position_index: index.clone(),
                x_t,
                xi_t: xi_t.clone(),
                velocity: velocity.clone(),
                radius: lattice.spacing,
                decay_power: lattice.decay_power,
            });
        }
    }
    let pieces: Vec<Vec<Complex64>> = (0..lattice.leaf_reps.len())
        .map(|leaf| {
            wave.amplitudes
                .iter()
                .zip(&assignment)
                .map(|(a, &l)| if l == leaf { *a } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    let packets = jobs
        .par_iter()
        .map(|(leaf, x_t)| {
            let mut data = pieces[*leaf].clone();
            for axis in 0..n {
                let taps = fejer_taps(lattice.per_axis[axis], grid.spacing(axis), x_t[axis]);
                data = convolve_axis(&data, &grid.res, axis, &taps);
            }
            wave.with_amplitudes(data).map_err(PacketError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PacketDecomposition {
        source: wave.clone(),
        lattice: lattice.clone(),
        tubes,
        packets,
        assignment,
    })
}

fn check_padding(wave: &FreeWave, per_axis: &[usize]) -> Result<()> {
    let res = &wave.grid().res;
    let mut idx = vec![0; res.len()];
    for (k, a) in wave.amplitudes.iter().enumerate() {
        if a.norm() == 0.0 {
            continue;
        }
        unravel(k, res, &mut idx);
        for axis in 0..res.len() {
            let needed = per_axis[axis] - 1;
            if idx[axis] < needed || idx[axis] + needed >= res[axis] {
                return Err(PacketError::InsufficientPadding { axis, needed });
            }
        }
    }
    Ok(())
}

/// Log-log decay of `sup |phi_T|` over cubes displaced from the tube axis.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub sup_values: Vec<f64>,
    pub below_resolution: bool,
}

/// Places cubes at `distances` from the axis along the first spatial direction at `t = 0`.
pub fn tube_decay(packet: &FreeWave, tube: &Tube, cube_side: f64, distances: &[f64], resolution: usize) -> Result<DecayFit> {
    if distances.len() < 3 {
        return Err(PacketError::TooFewDistances(distances.len()));
    }
    let patch = packet.patch();
    let mut sups = Vec::with_capacity(distances.len());
    for d in distances {
        let mut local = vec![0.0; patch.n + 1];
        for j in 0..patch.n {
            local[patch.slot(j)] = tube.x_t[j] + if j == 0 { *d } else { 0.0 };
        }
        let center = (&patch.rotation * DVector::from_vec(local)).iter().copied().collect();
        let cube = SpaceTimeCube::new(center, cube_side, resolution)?;
        let sup = packet.extend_tensor(&cube.axes()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        sups.push(sup);
    }
    let slope = fit_loglog(distances, &sups).map(|f| f.slope).unwrap_or(0.0);
    Ok(DecayFit {
        slope,
        sup_values: sups,
        below_resolution: slope > -0.5,
    })
}

/// `sum_T sup_q chi_T(q)^{-1} ||phi_T||^2_{L^2(q)} / (r M(phi))` over the cubes of side `r`.
pub fn local_mass_census(decomposition: &PacketDecomposition, cube: &SpaceTimeCube, per_subcube: usize) -> Result<f64> {
    let mass = decomposition.source.mass();
    if mass == 0.0 {
        return Ok(0.0);
    }
    let lattice = &decomposition.lattice;
    let split = (cube.side / lattice.r).round().max(1.0) as usize;
    let fine = SpaceTimeCube::new(cube.center.clone(), cube.side, split * per_subcube)?;
    let axes = fine.axes();
    let d = axes.len();
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let sub_shape = vec![split; d];
    let subcubes: usize = sub_shape.iter().product();
    let vol = fine.cell_volume();
    let patch = decomposition.source.patch();
    let sub_side = cube.side / split as f64;
    let sub_centers: Vec<Vec<f64>> = (0..subcubes)
        .map(|s| {
            let mut idx = vec![0; d];
            unravel(s, &sub_shape, &mut idx);
            (0..d)
                .map(|a| cube.center[a] - 0.5 * cube.side + (idx[a] as f64 + 0.5) * sub_side)
                .collect()
        })
        .collect();
    let terms: Vec<f64> = decomposition
        .tubes
        .par_iter()
        .zip(&decomposition.packets)
        .map(|(tube, packet)| {
            if packet.mass() == 0.0 {
                return 0.0;
            }
            let field = packet.extend_tensor(&axes);
            let mut local = vec![0.0; subcubes];
            let mut idx = vec![0; d];
            let mut sidx = vec![0; d];
            for (f, v) in field.iter().enumerate() {
                unravel(f, &shape, &mut idx);
                for a in 0..d {
                    sidx[a] = idx[a] / per_subcube;
                }
                local[crate::numeric::ravel(&sidx, &sub_shape)] += v.norm_sqr() * vol;
            }
            local
                .iter()
                .zip(&sub_centers)
                .map(|(m, c)| m / tube.cutoff_ambient(patch, c))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(pairwise_sum(&terms) / (lattice.r * mass))
}

/// Both sides of the weighted regrouping bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedMassReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Packets regrouped by column: `Phi^(q) = sum_T m[T, q] phi_T`.
pub fn regroup(decomposition: &PacketDecomposition, weights: &DMatrix<f64>) -> Result<Vec<FreeWave>> {
    let tubes = decomposition.tubes.len();
    if weights.nrows() != tubes {
        return Err(PacketError::WeightShape {
            expected: (tubes, weights.ncols()),
            found: weights.shape(),
        });
    }
    let len = decomposition.source.amplitudes.len();
    (0..weights.ncols())
        .into_par_iter()
        .map(|q| {
            let mut amps = vec![Complex64::new(0.0, 0.0); len];
            for (t, packet) in decomposition.packets.iter().enumerate() {
                let m = weights[(t, q)];
                if m == 0.0 {
                    continue;
                }
                for (a, p) in amps.iter_mut().zip(&packet.amplitudes) {
                    *a += p * m;
                }
            }
            decomposition.source.with_amplitudes(amps).map_err(PacketError::from)
        })
        .collect()
}

/// `(sum_q M(Phi^(q)))^{1/2}` against `(1 + c C) M(phi)^{1/2}`.
pub fn weighted_mass_check(decomposition: &PacketDecomposition, weights: &DMatrix<f64>, c: f64, constant: f64) -> Result<WeightedMassReport> {
    for (row, r) in weights.row_iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || r.iter().any(|v| *v < 0.0) {
            return Err(PacketError::RowSum { row, sum });
        }
    }
    let groups = regroup(decomposition, weights)?;
    let masses: Vec<f64> = groups.iter().map(FreeWave::mass).collect();
    let lhs = pairwise_sum(&masses).sqrt();
    let rhs = (1.0 + c * constant) * decomposition.source.mass().sqrt();
    Ok(WeightedMassReport {
        lhs,
        rhs,
        pass: lhs <= rhs,
    })
}

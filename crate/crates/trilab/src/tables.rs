//! Dyadic cube families, the averaging-cube search, tube weights and tables,
//! and the localized trilinear diagnostics measured on them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::numeric::{midpoints, pairwise_sum, ravel, unravel};
use crate::packets::{PacketDecomposition, PacketError, regroup};
use crate::waves::{FreeWave, SpaceTimeCube, WaveError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error("subdivision level must be nonnegative, got {0}")]
    NegativeLevel(i64),
    #[error("no candidate centres")]
    NoCandidates,
    #[error("field samples do not cover the cube")]
    FieldTooSmall,
    #[error("resolution {0} gives fewer than 2 nodes per subcube axis")]
    ResolutionTooCoarse(usize),
    #[error("weight matrix is {found:?}, expected {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("source and target cube coincide")]
    SameCube,
    #[error("slab thickness {mu} is below 1/r = {min}")]
    ThinSlab { mu: f64, min: f64 },
    #[error("cube families have different scales")]
    ScaleMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, TableError>;

/// Closed axis-aligned cube.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, side: f64) -> Self {
        Self { center, side }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.center).all(|(a, c)| (a - c).abs() <= 0.5 * self.side)
    }

    /// The concentric cube `(1 - c) q`.
    pub fn shrink(&self, c: f64) -> Self {
        Self::new(self.center.clone(), (1.0 - c) * self.side)
    }

    pub fn sampling(&self, resolution: usize) -> SpaceTimeCube {
        SpaceTimeCube {
            center: self.center.clone(),
            side: self.side,
            resolution,
        }
    }
}

/// The `2^{(n+1) j}` children of a cube, in lexicographic order of their index.
#[derive(Debug, Clone, Serialize)]
pub struct CubeFamily {
    pub parent: Cube,
    pub level: u32,
    pub children: Vec<Cube>,
}

impl CubeFamily {
    pub fn per_axis(&self) -> usize {
        1 << self.level
    }

    /// Child index of a point of the parent.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.parent.contains(x) {
            return None;
        }
        let k = self.per_axis();
        let side = self.children[0].side;
        let idx: Vec<usize> = x
            .iter()
            .zip(&self.parent.center)
            .map(|(a, c)| (((a - c + 0.5 * self.parent.side) / side).floor() as usize).min(k - 1))
            .collect();
        Some(ravel(&idx, &vec![k; x.len()]))
    }

    /// Membership in `I^{c,j} = union (1 - c) q`.
    pub fn interior_contains(&self, c: f64, x: &[f64]) -> bool {
        self.locate(x).is_some_and(|q| self.children[q].shrink(c).contains(x))
    }
}

pub fn subdivide(parent: &Cube, level: i64) -> Result<CubeFamily> {
    if level < 0 {
        return Err(TableError::NegativeLevel(level));
    }
    let level = level as u32;
    let d = parent.dim();
    let k = 1usize << level;
    let side = parent.side / k as f64;
    let shape = vec![k; d];
    let mut idx = vec![0; d];
    let children = (0..k.pow(d as u32))
        .map(|f| {
            unravel(f, &shape, &mut idx);
            let center = (0..d)
                .map(|a| parent.center[a] - 0.5 * parent.side + (idx[a] as f64 + 0.5) * side)
                .collect();
            Cube::new(center, side)
        })
        .collect();
    Ok(CubeFamily {
        parent: parent.clone(),
        level,
        children,
    })
}

/// `|Q \ I^{c,j}(Q)| / |Q| = 1 - (1 - c)^{n+1}`, independent of `j`.
pub fn interior_complement_fraction(dim: usize, c: f64) -> f64 {
    1.0 - (1.0 - c).powi(dim as i32)
}

/// Upper bound on the averaging-cube ratio: `(1 + (n+1) 2^{n+1} c)^{1/p}`.
pub fn averaging_bound(dim: usize, c: f64, p: f64) -> f64 {
    (1.0 + dim as f64 * 2f64.powi(dim as i32) * c).powf(1.0 / p)
}

/// Real field values at the midpoints of a tensor grid.
#[derive(Debug, Clone, Serialize)]
pub struct FieldSamples {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
    pub values: Vec<f64>,
}

impl FieldSamples {
    pub fn from_fn(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Self {
        let axes: Vec<Vec<f64>> = (0..lo.len()).map(|a| midpoints(lo[a], hi[a], res[a])).collect();
        let total = res.iter().product();
        let mut idx = vec![0; res.len()];
        let values = (0..total)
            .map(|k| {
                unravel(k, &res, &mut idx);
                let x: Vec<f64> = (0..res.len()).map(|a| axes[a][idx[a]]).collect();
                f(&x)
            })
            .collect();
        Self { lo, hi, res, values }
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.res.len()).map(|a| (self.hi[a] - self.lo[a]) / self.res[a] as f64).product()
    }

    /// Sample points with their values, in grid order.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let axes: Vec<Vec<f64>> = (0..self.lo.len()).map(|a| midpoints(self.lo[a], self.hi[a], self.res[a])).collect();
        let mut idx = vec![0; self.res.len()];
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                unravel(k, &self.res, &mut idx);
                ((0..self.res.len()).map(|a| axes[a][idx[a]]).collect(), *v)
            })
            .collect()
    }
}

/// Best averaging cube among the candidates.
#[derive(Debug, Clone, Serialize)]
pub struct AveragingCube {
    pub cube: Cube,
    pub ratio: f64,
    pub bound: f64,
    /// Ratio per candidate, in candidate order.
    pub candidate_ratios: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
}

/// Candidate centres: midpoints of a `per_axis`-subdivision of `q_r`.
pub fn candidate_centers(q_r: &Cube, per_axis: usize) -> Vec<Vec<f64>> {
    let d = q_r.dim();
    let axes: Vec<Vec<f64>> = q_r
        .center
        .iter()
        .map(|c| midpoints(c - 0.5 * q_r.side, c + 0.5 * q_r.side, per_axis))
        .collect();
    let shape = vec![per_axis; d];
    let mut idx = vec![0; d];
    (0..per_axis.pow(d as u32))
        .map(|f| {
            unravel(f, &shape, &mut idx);
            (0..d).map(|a| axes[a][idx[a]]).collect()
        })
        .collect()
}

/// `||f||_{L^p(Q_R)} / ||f||_{L^p(Q_R cap I^{c,j}(Q(x,t;2R)))}`, minimized over candidates.
pub fn find_averaging_cube(field: &FieldSamples, q_r: &Cube, c: f64, level: u32, p: f64, candidates: &[Vec<f64>]) -> Result<AveragingCube> {
    if candidates.is_empty() {
        return Err(TableError::NoCandidates);
    }
    if !(p > 0.0) {
        return Err(TableError::InvalidParameter(format!("p = {p} must be positive")));
    }
    let d = q_r.dim();
    let covers = (0..d).all(|a| {
        field.lo[a] <= q_r.center[a] - 0.5 * q_r.side && field.hi[a] >= q_r.center[a] + 0.5 * q_r.side
    });
    if field.lo.len() != d || !covers {
        return Err(TableError::FieldTooSmall);
    }
    let inside: Vec<(Vec<f64>, f64)> = field
        .points()
        .into_iter()
        .filter(|(x, _)| q_r.contains(x))
        .map(|(x, v)| (x, v.abs().powf(p)))
        .collect();
    let total = pairwise_sum(&inside.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let big = 2.0 * q_r.side;
    let sub = big / (1u64 << level) as f64;
    let core = 0.5 * (1.0 - c);
    let ratios: Vec<f64> = candidates
        .par_iter()
        .map(|center| {
            let kept: Vec<f64> = inside
                .iter()
                .filter(|(x, _)| {
                    x.iter().zip(center).all(|(a, m)| {
                        let local = (a - (m - 0.5 * big)) / sub;
                        (local - local.floor() - 0.5).abs() <= core
                    })
                })
                .map(|(_, v)| *v)
                .collect();
            let kept = pairwise_sum(&kept);
            if kept > 0.0 { (total / kept).powf(1.0 / p) } else { f64::INFINITY }
        })
        .collect();
    let best = (0..ratios.len()).fold(0, |b, i| if ratios[i] < ratios[b] { i } else { b });
    Ok(AveragingCube {
        cube: Cube::new(candidates[best].clone(), big),
        ratio: ratios[best],
        bound: averaging_bound(d, c, p),
        candidate_ratios: ratios,
        candidates: candidates.to_vec(),
    })
}

/// Tube-by-subcube weights `||chi_T phi_2||^2_{L^2(q0)}` with row sums.
#[derive(Debug, Clone, Serialize)]
pub struct TubeWeightMatrix {
    #[serde(skip)]
    pub entries: DMatrix<f64>,
    pub row_sums: Vec<f64>,
}

/// Grid sums of `|chi_T phi_2|^2` over each `q0` of depth `depth`.
pub fn tube_weights(decomposition: &PacketDecomposition, phi2: &FreeWave, q: &Cube, depth: u32, resolution: usize) -> Result<TubeWeightMatrix> {
    if resolution < 2 {
        return Err(TableError::ResolutionTooCoarse(resolution));
    }
    let family = subdivide(q, depth as i64)?;
    let k = family.per_axis();
    let fine = q.sampling(k * resolution);
    let axes = fine.axes();
    let d = axes.len();
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let field: Vec<f64> = phi2.extend_tensor(&axes).iter().map(|v| v.norm_sqr()).collect();
    let vol = fine.cell_volume();
    let patch = decomposition.source.patch();
    let cols = family.children.len();
    let rows: Vec<Vec<f64>> = decomposition
        .tubes
        .par_iter()
        .map(|tube| {
            let mut row = vec![0.0; cols];
            let mut idx = vec![0; d];
            let mut sub = vec![0; d];
            let mut x = vec![0.0; d];
            for (f, v) in field.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                unravel(f, &shape, &mut idx);
                for a in 0..d {
                    x[a] = axes[a][idx[a]];
                    sub[a] = idx[a] / resolution;
                }
                let chi = tube.cutoff_ambient(patch, &x);
                row[ravel(&sub, &vec![k; d])] += chi * chi * v * vol;
            }
            row
        })
        .collect();
    let entries = DMatrix::from_fn(rows.len(), cols, |t, c| rows[t][c]);
    let row_sums = rows.iter().map(|r| pairwise_sum(r)).collect();
    Ok(TubeWeightMatrix { entries, row_sums })
}

/// Packets of `phi_1` regrouped by subcube: `Phi^(q0) = sum_T (m_{q0,T} / m_T) phi_T`.
#[derive(Debug, Clone)]
pub struct WaveTable {
    pub coefficients: DMatrix<f64>,
    pub depth: u32,
    pub zero_rows: usize,
    pub entries: Vec<FreeWave>,
}

impl WaveTable {
    /// Largest node deviation of `sum_q Phi^(q)` from the source, relative to its size.
    pub fn decomposition_error(&self, source: &FreeWave) -> f64 {
        let mut worst = 0.0f64;
        let scale = source.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for k in 0..source.amplitudes.len() {
            let sum: Complex64 = self.entries.iter().map(|e| e.amplitudes[k]).sum();
            worst = worst.max((sum - source.amplitudes[k]).norm() / scale);
        }
        worst
    }

    /// `M(Phi) = sum_q M(Phi^(q))`.
    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.entries.iter().map(FreeWave::mass).collect::<Vec<_>>())
    }

    pub fn margin(&self) -> f64 {
        self.entries.iter().map(FreeWave::margin).fold(f64::INFINITY, f64::min)
    }
}

pub fn build_table(decomposition: &PacketDecomposition, weights: &TubeWeightMatrix, depth: u32) -> Result<WaveTable> {
    let d = decomposition.source.grid().dim() + 1;
    let cols = 1usize << (d as u32 * depth);
    let tubes = decomposition.tubes.len();
    if weights.entries.shape() != (tubes, cols) {
        return Err(TableError::ShapeMismatch {
            expected: (tubes, cols),
            found: weights.entries.shape(),
        });
    }
    let mut zero_rows = 0;
    let coefficients = DMatrix::from_fn(tubes, cols, |t, q| {
        let total = weights.row_sums[t];
        if total > 0.0 { weights.entries[(t, q)] / total } else { 1.0 / cols as f64 }
    });
    for t in 0..tubes {
        if !(weights.row_sums[t] > 0.0) {
            zero_rows += 1;
        }
    }
    let entries = regroup(decomposition, &coefficients)?;
    Ok(WaveTable {
        coefficients,
        depth,
        zero_rows,
        entries,
    })
}

/// `||Phi^(q') phi_2 phi_3||_{L^1((1 - c) q'')}` on a midpoint grid.
#[allow(clippy::too_many_arguments)]
pub fn cross_cube_l1(
    table: &WaveTable,
    family: &CubeFamily,
    source: usize,
    target: usize,
    phi2: &FreeWave,
    phi3: &FreeWave,
    c: f64,
    resolution: usize,
) -> Result<f64> {
    if source == target {
        return Err(TableError::SameCube);
    }
    let region = family.children[target].shrink(c).sampling(resolution);
    let axes = region.axes();
    let f1 = table.entries[source].extend_tensor(&axes);
    let f2 = phi2.extend_tensor(&axes);
    let f3 = phi3.extend_tensor(&axes);
    let terms: Vec<f64> = (0..f1.len()).map(|i| f1[i].norm() * f2[i].norm() * f3[i].norm()).collect();
    Ok(pairwise_sum(&terms) * region.cell_volume())
}

/// Frequencies within `mu` of one leaf in chart coordinates get amplitude one.
pub fn slab_wave(basis: std::sync::Arc<crate::waves::WaveBasis>, leaf_id: &[f64], mu: f64) -> Result<FreeWave> {
    let chart = basis
        .patch
        .leaf_chart
        .clone()
        .ok_or(PacketError::Geometry(crate::geometry::GeometryError::MissingLeafChart))?;
    Ok(FreeWave::from_fn(basis, |xi| {
        let id = chart.leaf_id(xi);
        let d: f64 = id.iter().zip(leaf_id).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Complex64::new(if d <= mu { 1.0 } else { 0.0 }, 0.0)
    })?)
}

/// `||prod phi_i||_{L^1(q)} / (mu^{(n-2)/2} r^{-3/2} prod ||chi_q phi_i||_{L^2})`.
///
/// The weighted norms are truncated to the concentric cube of side `3 r`.
pub fn localized_trilinear_diagnostic(q: &Cube, mu: f64, waves: [&FreeWave; 3], resolution: usize, decay_power: i32) -> Result<f64> {
    let r = q.side;
    if mu < 1.0 / r {
        return Err(TableError::ThinSlab { mu, min: 1.0 / r });
    }
    let n = q.dim() - 1;
    let inner = q.sampling(resolution);
    let inner_axes = inner.axes();
    let fields: Vec<Vec<Complex64>> = waves.iter().map(|w| w.extend_tensor(&inner_axes)).collect();
    let prod: Vec<f64> = (0..fields[0].len())
        .map(|i| fields.iter().map(|f| f[i].norm()).product())
        .collect();
    let numerator = pairwise_sum(&prod) * inner.cell_volume();
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let outer = Cube::new(q.center.clone(), 3.0 * r).sampling(3 * resolution);
    let axes = outer.axes();
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let mut idx = vec![0; shape.len()];
    let weights: Vec<f64> = (0..shape.iter().product())
        .map(|f| {
            unravel(f, &shape, &mut idx);
            let d: f64 = (0..shape.len()).map(|a| (axes[a][idx[a]] - q.center[a]).powi(2)).sum::<f64>().sqrt();
            (1.0 + d / r).powi(-decay_power)
        })
        .collect();
    let mut denom = mu.powf(0.5 * (n as f64 - 2.0)) * r.powf(-1.5);
    for w in waves {
        let field = w.extend_tensor(&axes);
        let terms: Vec<f64> = field.iter().zip(&weights).map(|(v, c)| (c * v.norm()).powi(2)).collect();
        denom *= (pairwise_sum(&terms) * outer.cell_volume()).sqrt();
    }
    Ok(numerator / denom)
}

/// Axis line of a tube in ambient coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct TubeLine {
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub radius: f64,
}

impl TubeLine {
    pub fn distance(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.point).map(|(a, b)| a - b).collect();
        let along: f64 = diff.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        diff.iter()
            .zip(&self.direction)
            .map(|(a, b)| (a - along * b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Children of `family` whose centre lies within `radius` of the line, sorted.
    pub fn cubes_met(&self, family: &CubeFamily) -> Vec<usize> {
        let d = self.point.len();
        let k = family.per_axis() as i64;
        let side = family.children[0].side;
        let half = 0.5 * family.parent.side + self.radius;
        let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..d {
            let rel = self.point[a] - family.parent.center[a];
            let v = self.direction[a];
            if v.abs() < 1e-14 {
                if rel.abs() > half {
                    return Vec::new();
                }
                continue;
            }
            let (t0, t1) = ((-half - rel) / v, (half - rel) / v);
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
        if t_lo > t_hi {
            return Vec::new();
        }
        // A met centre lies within radius + side/4 of some marched point.
        let reach = (self.radius / side + 0.75).ceil() as i64;
        let steps = ((t_hi - t_lo) / (0.5 * side)).ceil() as usize + 1;
        let span = (2 * reach + 1) as usize;
        let shape = vec![k as usize; d];
        let mut base = vec![0i64; d];
        let mut off = vec![0usize; d];
        let mut idx = vec![0usize; d];
        let mut out = Vec::new();
        for step in 0..steps {
            let t = (t_lo + step as f64 * 0.5 * side).min(t_hi);
            for a in 0..d {
                let x = self.point[a] + t * self.direction[a] - family.parent.center[a] + 0.5 * family.parent.side;
                base[a] = (x / side).floor() as i64;
            }
            'near: for f in 0..span.pow(d as u32) {
                unravel(f, &vec![span; d], &mut off);
                for a in 0..d {
                    let v = base[a] + off[a] as i64 - reach;
                    if v < 0 || v >= k {
                        continue 'near;
                    }
                    idx[a] = v as usize;
                }
                let q = ravel(&idx, &shape);
                if self.distance(&family.children[q].center) <= self.radius {
                    out.push(q);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Lines of all tubes of a patch with axes at lattice points `spacing Z^n` within `extent`,
/// keeping those that meet the cube family. A tube meets a cube of side `spacing` when the
/// centre lies within half a side of the axis, so each tube claims the cubes its axis crosses.
pub fn tube_lines(
    patch: &crate::geometry::HypersurfacePatch,
    leaf_reps: &[Vec<f64>],
    spacing: f64,
    extent: f64,
    family: &CubeFamily,
) -> Vec<TubeLine> {
    let n = patch.n;
    let k = (extent / spacing).floor() as i64;
    let per = (2 * k + 1) as usize;
    let shape = vec![per; n];
    let total = per.pow(n as u32);
    let mut out = Vec::new();
    for xi in leaf_reps {
        let normal = patch.unit_normal(xi).expect("representatives lie in the domain");
        let direction: Vec<f64> = normal.iter().copied().collect();
        let mut idx = vec![0; n];
        for f in 0..total {
            unravel(f, &shape, &mut idx);
            let mut local = DVector::zeros(n + 1);
            for j in 0..n {
                local[patch.slot(j)] = (idx[j] as i64 - k) as f64 * spacing;
            }
            let point: Vec<f64> = (&patch.rotation * local).iter().copied().collect();
            let line = TubeLine {
                point,
                direction: direction.clone(),
                radius: 0.5 * spacing,
            };
            if !line.cubes_met(family).is_empty() {
                out.push(line);
            }
        }
    }
    out
}

/// Multiplicities of `(T2, T3)` pairs over related cube configurations.
#[derive(Debug, Clone, Serialize)]
pub struct CensusReport {
    pub max_multiplicity: usize,
    pub pairs_counted: usize,
    pub occurrences: usize,
    pub relation_size: usize,
}

/// Per-worker scratch: `T_2` occurrences bucketed by line, and the touched buckets.
type PairBuckets = (Vec<Vec<(u32, u32)>>, Vec<usize>);

/// Counts, for each pair of tube lines, the cube pairs `(q, q')` with `q'` in the
/// `r`-neighbourhood of `q + {alpha N_1 : c R <= |alpha| <= diam Q}`, `T_3` meeting `q`
/// and `T_2` meeting `q'`. An occurrence within `merge_radius` cube sides (Euclidean, on
/// cube indices) of an already counted one in both slots is merged into it.
pub fn pair_census(
    lines2: &[TubeLine],
    lines3: &[TubeLine],
    family: &CubeFamily,
    pivot_normals: &[DVector<f64>],
    c: f64,
    merge_radius: f64,
) -> Result<CensusReport> {
    let d = family.parent.dim();
    let k = family.per_axis() as i64;
    let r = family.children[0].side;
    let big_r = family.parent.side;
    if pivot_normals.iter().any(|v| v.len() != d) {
        return Err(TableError::ScaleMismatch);
    }
    let cover = |lines: &[TubeLine]| -> Vec<Vec<usize>> { lines.par_iter().map(|l| l.cubes_met(family)).collect() };
    let cubes2 = cover(lines2);
    let cubes3 = cover(lines3);
    let mut tubes_at: Vec<Vec<usize>> = vec![Vec::new(); family.children.len()];
    for (t, cubes) in cubes2.iter().enumerate() {
        for &q in cubes {
            tubes_at[q].push(t);
        }
    }
    let diam = big_r * (d as f64).sqrt();
    let shape = vec![(2 * k - 1) as usize; d];
    let mut idx = vec![0; d];
    let relation: Vec<Vec<i64>> = (0..shape.iter().product())
        .filter_map(|f| {
            unravel(f, &shape, &mut idx);
            let off: Vec<i64> = idx.iter().map(|&i| i as i64 - (k - 1)).collect();
            let z = DVector::from_iterator(d, off.iter().map(|&o| o as f64 * r));
            let near = pivot_normals.iter().any(|nrm| {
                let a = z.dot(nrm);
                let alpha = a.abs().clamp(c * big_r, diam) * a.signum();
                (&z - nrm * alpha).norm() <= r
            });
            near.then_some(off)
        })
        .collect();
    let kshape = vec![k as usize; d];
    let coords: Vec<Vec<usize>> = (0..family.children.len())
        .map(|q| {
            let mut c = vec![0; d];
            unravel(q, &kshape, &mut c);
            c
        })
        .collect();
    let per_t3: Vec<(usize, usize, usize)> = cubes3
        .par_iter()
        .map_init(
            || (vec![Vec::new(); lines2.len()], Vec::new()),
            |(buckets, touched): &mut PairBuckets, cubes| {
                let mut qp = vec![0usize; d];
                let mut occurrences = 0;
                for &q in cubes {
                    'offsets: for off in &relation {
                        for a in 0..d {
                            let v = coords[q][a] as i64 + off[a];
                            if v < 0 || v >= k {
                                continue 'offsets;
                            }
                            qp[a] = v as usize;
                        }
                        let qp_flat = ravel(&qp, &kshape);
                        for &t2 in &tubes_at[qp_flat] {
                            if buckets[t2].is_empty() {
                                touched.push(t2);
                            }
                            buckets[t2].push((q as u32, qp_flat as u32));
                            occurrences += 1;
                        }
                    }
                }
                let mut max = 0;
                let pairs = touched.len();
                for t2 in touched.drain(..) {
                    max = max.max(cluster_count(&buckets[t2], &coords, merge_radius));
                    buckets[t2].clear();
                }
                (max, pairs, occurrences)
            },
        )
        .collect();
    Ok(CensusReport {
        max_multiplicity: per_t3.iter().map(|p| p.0).max().unwrap_or(0),
        pairs_counted: per_t3.iter().map(|p| p.1).sum(),
        occurrences: per_t3.iter().map(|p| p.2).sum(),
        relation_size: relation.len(),
    })
}

/// Greedy count of occurrences pairwise farther than `radius` cube sides in some slot.
fn cluster_count(occurrences: &[(u32, u32)], coords: &[Vec<usize>], radius: f64) -> usize {
    let sq = radius * radius;
    let dist_sq = |a: u32, b: u32| -> f64 {
        coords[a as usize]
            .iter()
            .zip(&coords[b as usize])
            .map(|(x, y)| (x.abs_diff(*y) as f64).powi(2))
            .sum()
    };
    let mut kept: Vec<(u32, u32)> = Vec::new();
    for &(q, qp) in occurrences {
        if kept.iter().all(|&(a, b)| dist_sq(a, q) > sq || dist_sq(b, qp) > sq) {
            kept.push((q, qp));
        }
    }
    kept.len()
}

//! Graph-type hypersurfaces in `R^{n+1}` with optional flat foliations.
//!
//! A patch is the graph of a phase over an axis-aligned box, inserted at
//! `graph_axis` and then rotated. Parameter coordinates are the `n` graph
//! variables; embedding slots are the `n + 1` ambient coordinates before the
//! rotation is applied.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::numeric::seeded_rng;

/// Normal-combination samples shorter than this are discarded.
pub const DSPAN_MIN_NORM: f64 = 1e-9;
/// Eigenvalues below this magnitude count as vanishing curvature.
pub const FLAT_EIGENVALUE: f64 = 1e-9;
/// Leaf flatness above this is flagged.
pub const FLATNESS_FLAG: f64 = 1e-8;
/// Gl constants below this are flagged as degenerate.
pub const GL_FLAG: f64 = 1e-3;

const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty vector list")]
    Empty,
    #[error("point lies outside the patch domain")]
    OutsideDomain,
    #[error("patch has no leaf chart")]
    MissingLeafChart,
    #[error("need three patches, got {0}")]
    TooFewPatches(usize),
    #[error("pivot index {0} out of range")]
    InvalidPivot(usize),
    #[error("degenerate first fundamental form")]
    DegenerateMetric,
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Built-in phases `phi` on `n` frequency variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Phase {
    /// `phi = a . xi`.
    Hyperplane { slope: Vec<f64> },
    /// `phi = sqrt(radius^2 - |xi|^2)`.
    SphereCap { radius: f64 },
    /// `phi = |xi|^2 / 2`.
    Paraboloid,
    /// `phi = |(xi_1..xi_{n-1})| - xi_n`; two flat directions off the apex.
    DoubleCone,
    /// `phi = sqrt(1 - |(xi_1..xi_{n-2})|^2)`; the last two variables are free.
    Cylinder,
}

impl Phase {
    pub fn value(&self, xi: &[f64]) -> f64 {
        let n = xi.len();
        match self {
            Phase::Hyperplane { slope } => slope.iter().zip(xi).map(|(a, x)| a * x).sum(),
            Phase::SphereCap { radius } => (radius * radius - norm_sq(xi)).sqrt(),
            Phase::Paraboloid => 0.5 * norm_sq(xi),
            Phase::DoubleCone => norm_sq(&xi[..n - 1]).sqrt() - xi[n - 1],
            Phase::Cylinder => (1.0 - norm_sq(&xi[..n - 2])).sqrt(),
        }
    }

    pub fn gradient(&self, xi: &[f64]) -> DVector<f64> {
        let n = xi.len();
        match self {
            Phase::Hyperplane { slope } => DVector::from_column_slice(slope),
            Phase::SphereCap { .. } => {
                let phi = self.value(xi);
                DVector::from_iterator(n, xi.iter().map(|x| -x / phi))
            }
            Phase::Paraboloid => DVector::from_column_slice(xi),
            Phase::DoubleCone => {
                let rho = norm_sq(&xi[..n - 1]).sqrt();
                let mut g = DVector::from_iterator(n, xi.iter().map(|x| x / rho));
                g[n - 1] = -1.0;
                g
            }
            Phase::Cylinder => {
                let phi = self.value(xi);
                DVector::from_fn(n, |j, _| if j < n - 2 { -xi[j] / phi } else { 0.0 })
            }
        }
    }

    pub fn hessian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = xi.len();
        match self {
            Phase::Hyperplane { .. } => DMatrix::zeros(n, n),
            Phase::SphereCap { .. } => ball_hessian(xi, n, self.value(xi)),
            Phase::Paraboloid => DMatrix::identity(n, n),
            Phase::DoubleCone => {
                let m = n - 1;
                let rho = norm_sq(&xi[..m]).sqrt();
                DMatrix::from_fn(n, n, |i, j| {
                    if i >= m || j >= m {
                        0.0
                    } else {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        (delta - xi[i] * xi[j] / (rho * rho)) / rho
                    }
                })
            }
            Phase::Cylinder => ball_hessian(&xi[..n - 2], n, self.value(xi)),
        }
    }

    /// Points where the phase is smooth and the built-in charts are valid.
    pub fn admissible(&self, xi: &[f64]) -> bool {
        let n = xi.len();
        match self {
            Phase::Hyperplane { slope } => slope.len() == n,
            Phase::SphereCap { radius } => norm_sq(xi) < radius * radius,
            Phase::Paraboloid => true,
            Phase::DoubleCone => n >= 2 && xi[0] > 0.0,
            Phase::Cylinder => n >= 2 && norm_sq(&xi[..n - 2]) < 1.0,
        }
    }
}

/// Hessian of `sqrt(1 - |y|^2)` (or the sphere cap) embedded in the leading block.
fn ball_hessian(y: &[f64], n: usize, phi: f64) -> DMatrix<f64> {
    let m = y.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i >= m || j >= m {
            0.0
        } else {
            let delta = if i == j { 1.0 } else { 0.0 };
            -(delta / phi + y[i] * y[j] / (phi * phi * phi))
        }
    })
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(GeometryError::InvalidPatch("domain box must have positive volume".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(center: &[f64], half_width: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        xi.len() == self.dim() && xi.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| a <= x && x <= b)
    }
}

/// Coordinates `x~` in which leaves are the fibers of dropping the first two entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LeafChart {
    /// `x~_i = xi_{perm[i]}`.
    Permuted(Vec<usize>),
    /// `(|xi'|, xi_n, xi_2/xi_1, .., xi_{n-1}/xi_1)` with `xi' = (xi_1..xi_{n-1})`.
    Conic,
}

impl LeafChart {
    pub fn identity(n: usize) -> Self {
        LeafChart::Permuted((0..n).collect())
    }

    /// Leaf coordinates of the cylinder: the two free variables first.
    pub fn cylinder(n: usize) -> Self {
        let mut perm = vec![n - 2, n - 1];
        perm.extend(0..n - 2);
        LeafChart::Permuted(perm)
    }

    pub fn forward(&self, xi: &[f64]) -> Vec<f64> {
        let n = xi.len();
        match self {
            LeafChart::Permuted(perm) => perm.iter().map(|&p| xi[p]).collect(),
            LeafChart::Conic => {
                let mut out = Vec::with_capacity(n);
                out.push(norm_sq(&xi[..n - 1]).sqrt());
                out.push(xi[n - 1]);
                out.extend(xi[1..n - 1].iter().map(|x| x / xi[0]));
                out
            }
        }
    }

    pub fn inverse(&self, chart: &[f64]) -> Vec<f64> {
        let n = chart.len();
        match self {
            LeafChart::Permuted(perm) => {
                let mut xi = vec![0.0; n];
                for (i, &p) in perm.iter().enumerate() {
                    xi[p] = chart[i];
                }
                xi
            }
            LeafChart::Conic => {
                let u = &chart[2..];
                let first = chart[0] / (1.0 + norm_sq(u)).sqrt();
                let mut xi = Vec::with_capacity(n);
                xi.push(first);
                xi.extend(u.iter().map(|v| v * first));
                xi.push(chart[1]);
                xi
            }
        }
    }

    /// Projection onto the leaf-labelling coordinates.
    pub fn leaf_id(&self, xi: &[f64]) -> Vec<f64> {
        self.forward(xi).split_off(2)
    }

    /// Parameter-space derivatives of the inverse along the two leaf coordinates.
    pub fn leaf_directions(&self, xi: &[f64]) -> [DVector<f64>; 2] {
        let n = xi.len();
        match self {
            LeafChart::Permuted(perm) => {
                [0, 1].map(|k| DVector::from_fn(n, |j, _| if j == perm[k] { 1.0 } else { 0.0 }))
            }
            LeafChart::Conic => {
                let rho = norm_sq(&xi[..n - 1]).sqrt();
                let radial = DVector::from_fn(n, |j, _| if j < n - 1 { xi[j] / rho } else { 0.0 });
                let vertical = DVector::from_fn(n, |j, _| if j == n - 1 { 1.0 } else { 0.0 });
                [radial, vertical]
            }
        }
    }
}

/// Principal curvature data at one point.
#[derive(Debug, Clone)]
pub struct ShapeOperator {
    /// Weingarten map in parameter coordinates.
    pub weingarten: DMatrix<f64>,
    /// Principal curvatures sorted by increasing magnitude.
    pub eigenvalues: Vec<f64>,
    /// Parameter-space principal directions, one column per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
}

/// A graph-type hypersurface patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypersurfacePatch {
    pub n: usize,
    pub graph_axis: usize,
    pub phase: Phase,
    pub domain: Domain,
    pub leaf_chart: Option<LeafChart>,
    /// Orthogonal `(n+1) x (n+1)` matrix applied after embedding.
    #[serde(skip)]
    pub rotation: DMatrix<f64>,
}

impl HypersurfacePatch {
    pub fn new(graph_axis: usize, phase: Phase, domain: Domain, leaf_chart: Option<LeafChart>) -> Result<Self> {
        let n = domain.dim();
        if n < 1 || graph_axis > n {
            return Err(GeometryError::InvalidPatch(format!("graph axis {graph_axis} out of range")));
        }
        match (&phase, n) {
            (Phase::Hyperplane { slope }, _) if slope.len() != n => {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    found: slope.len(),
                });
            }
            (Phase::DoubleCone, n) | (Phase::Cylinder, n) if n < 3 => {
                return Err(GeometryError::InvalidPatch("foliated models need n >= 3".into()));
            }
            _ => {}
        }
        if let Some(LeafChart::Permuted(perm)) = &leaf_chart {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(GeometryError::InvalidPatch("leaf chart is not a permutation".into()));
            }
        }
        Ok(Self {
            n,
            graph_axis,
            phase,
            domain,
            leaf_chart,
            rotation: DMatrix::identity(n + 1, n + 1),
        })
    }

    /// Replaces the rotation; rejects matrices that are not orthogonal.
    pub fn with_rotation(mut self, rotation: DMatrix<f64>) -> Result<Self> {
        let d = self.n + 1;
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: rotation.nrows(),
            });
        }
        let defect = (rotation.transpose() * &rotation - DMatrix::identity(d, d)).abs().max();
        if defect > 1e-10 {
            return Err(GeometryError::InvalidPatch(format!("rotation not orthogonal (defect {defect:.3e})")));
        }
        self.rotation = rotation;
        Ok(self)
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        self.domain.contains(xi) && self.phase.admissible(xi)
    }

    fn check(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.n {
            return Err(GeometryError::DimensionMismatch {
                expected: self.n,
                found: xi.len(),
            });
        }
        if !self.contains(xi) {
            return Err(GeometryError::OutsideDomain);
        }
        Ok(())
    }

    /// Embedding slot of parameter coordinate `j`.
    pub fn slot(&self, j: usize) -> usize {
        if j < self.graph_axis { j } else { j + 1 }
    }

    /// Surface point in the unrotated frame.
    pub fn embed_local(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n + 1);
        out.extend_from_slice(&xi[..self.graph_axis]);
        out.push(self.phase.value(xi));
        out.extend_from_slice(&xi[self.graph_axis..]);
        out
    }

    /// Surface point `rotation * Sigma(xi)`.
    pub fn embed(&self, xi: &[f64]) -> DVector<f64> {
        &self.rotation * DVector::from_vec(self.embed_local(xi))
    }

    pub fn unit_normal(&self, xi: &[f64]) -> Result<DVector<f64>> {
        self.check(xi)?;
        Ok(self.normal_unchecked(xi))
    }

    fn normal_unchecked(&self, xi: &[f64]) -> DVector<f64> {
        let g = self.phase.gradient(xi);
        let w = (1.0 + g.norm_squared()).sqrt();
        let mut local = DVector::zeros(self.n + 1);
        for j in 0..self.n {
            local[self.slot(j)] = -g[j] / w;
        }
        local[self.graph_axis] = 1.0 / w;
        &self.rotation * local
    }

    /// Columns are the ambient images of the parameter coordinate vectors.
    pub fn tangent_frame(&self, xi: &[f64]) -> DMatrix<f64> {
        let g = self.phase.gradient(xi);
        let mut local = DMatrix::zeros(self.n + 1, self.n);
        for j in 0..self.n {
            local[(self.slot(j), j)] = 1.0;
            local[(self.graph_axis, j)] = g[j];
        }
        &self.rotation * local
    }

    pub fn shape_operator(&self, xi: &[f64]) -> Result<ShapeOperator> {
        self.check(xi)?;
        let n = self.n;
        let g = self.phase.gradient(xi);
        let w = (1.0 + g.norm_squared()).sqrt();
        let first = DMatrix::identity(n, n) + &g * g.transpose();
        let second = self.phase.hessian(xi) / w;
        let chol = first.clone().cholesky().ok_or(GeometryError::DegenerateMetric)?;
        let l = chol.l();
        let l_inv = l.clone().try_inverse().ok_or(GeometryError::DegenerateMetric)?;
        let sym = &l_inv * &second * l_inv.transpose();
        let sym = (&sym + sym.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()));
        let back = l_inv.transpose();
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| (&back * eig.eigenvectors.column(order[c]))[r]);
        let weingarten = chol.solve(&second);
        Ok(ShapeOperator {
            weingarten,
            eigenvalues,
            eigenvectors,
        })
    }

    /// Ambient image of the shape operator applied to a parameter-space vector.
    pub fn apply_shape(&self, xi: &[f64], v: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.shape_operator(xi)?;
        Ok(self.tangent_frame(xi) * (&s.weingarten * v))
    }

    fn chart(&self) -> Result<&LeafChart> {
        self.leaf_chart.as_ref().ok_or(GeometryError::MissingLeafChart)
    }

    /// Leaf label `pi(x~(xi))`.
    pub fn leaf_id(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.chart()?.leaf_id(xi))
    }

    /// Uniform sample from the domain box restricted to admissible points.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        for _ in 0..MAX_REJECTIONS {
            let xi: Vec<f64> = self
                .domain
                .lo
                .iter()
                .zip(&self.domain.hi)
                .map(|(a, b)| rng.random_range(*a..*b))
                .collect();
            if self.phase.admissible(&xi) {
                return Ok(xi);
            }
        }
        Err(GeometryError::InvalidPatch("no admissible points found in the domain".into()))
    }
}

/// Volume of the parallelepiped spanned by the vectors, `sqrt(det(G^T G))`.
pub fn gram_volume(vectors: &[DVector<f64>]) -> Result<f64> {
    let first = vectors.first().ok_or(GeometryError::Empty)?;
    let d = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if vectors.len() > d {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: vectors.len(),
        });
    }
    let g = DMatrix::from_columns(vectors);
    let r = g.qr().r();
    Ok((0..vectors.len()).map(|i| r[(i, i)].abs()).product())
}

/// Sampled transversality and curvature quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub nu_transversal: f64,
    /// Present when every patch carries a leaf chart.
    pub nu_curvature: Option<f64>,
    pub leaf_flatness_max: Option<f64>,
    pub gl_constant: Option<f64>,
    pub dispersion_ratio_range: Option<(f64, f64)>,
    pub sample_count: usize,
    pub seed: u64,
}

fn three(patches: &[HypersurfacePatch]) -> Result<[&HypersurfacePatch; 3]> {
    if patches.len() < 3 {
        return Err(GeometryError::TooFewPatches(patches.len()));
    }
    let n = patches[0].n;
    if let Some(p) = patches[..3].iter().find(|p| p.n != n) {
        return Err(GeometryError::DimensionMismatch { expected: n, found: p.n });
    }
    Ok([&patches[0], &patches[1], &patches[2]])
}

/// Orthonormal ambient basis of the tangent directions orthogonal to the leaf.
pub fn leaf_complement(patch: &HypersurfacePatch, xi: &[f64]) -> Result<Vec<DVector<f64>>> {
    let chart = patch.chart()?;
    let frame = patch.tangent_frame(xi);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    let leaf = chart.leaf_directions(xi).map(|d| &frame * d);
    let candidates = leaf.iter().cloned().chain(frame.column_iter().map(|c| c.into_owned()));
    for (k, mut v) in candidates.enumerate() {
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            if k >= 2 {
                out.push(v.clone());
            }
            basis.push(v);
        }
    }
    Ok(out)
}

/// Ambient shape-operator images of the leaf-complement basis.
fn curvature_images(patch: &HypersurfacePatch, xi: &[f64]) -> Result<Vec<DVector<f64>>> {
    let frame = patch.tangent_frame(xi);
    let metric = frame.transpose() * &frame;
    let chol = metric.cholesky().ok_or(GeometryError::DegenerateMetric)?;
    let shape = patch.shape_operator(xi)?;
    leaf_complement(patch, xi)?
        .into_iter()
        .map(|w| {
            let coords = chol.solve(&(frame.transpose() * w));
            Ok(&frame * (&shape.weingarten * coords))
        })
        .collect()
}

/// Minimum of the three-normal volume and of the curvature volume over samples.
///
/// Samples are drawn sequentially, so a larger `sample_count` with the same
/// seed evaluates a superset and can only lower the minima.
pub fn estimate_transversality(patches: &[HypersurfacePatch], sample_count: usize, seed: u64) -> Result<ConditionReport> {
    let ps = three(patches)?;
    let mut rng = seeded_rng(seed);
    let with_charts = ps.iter().all(|p| p.leaf_chart.is_some());
    let mut nu_t = f64::INFINITY;
    let mut nu_c = f64::INFINITY;
    for _ in 0..sample_count {
        let z = [ps[0].sample(&mut rng)?, ps[1].sample(&mut rng)?, ps[2].sample(&mut rng)?];
        let normals: Vec<DVector<f64>> = ps.iter().zip(&z).map(|(p, x)| p.normal_unchecked(x)).collect();
        nu_t = nu_t.min(gram_volume(&normals)?);
        if with_charts {
            for (p, x) in ps.iter().zip(&z) {
                let mut vecs = normals.clone();
                vecs.extend(curvature_images(p, x)?);
                nu_c = nu_c.min(gram_volume(&vecs)?);
            }
        }
    }
    Ok(ConditionReport {
        nu_transversal: nu_t,
        nu_curvature: with_charts.then_some(nu_c),
        leaf_flatness_max: None,
        gl_constant: None,
        dispersion_ratio_range: None,
        sample_count,
        seed,
    })
}

/// Outcome of the sampled separation constant for normal combinations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlReport {
    pub kappa: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
    /// Random coefficient triples tested against the lower bound.
    pub inequality_checks: usize,
    pub inequality_violations: usize,
    pub degenerate: bool,
}

/// Minimum of `vol(N, N_2, N_3) / |N|` over sampled `N` in the span of two pivot normals.
pub fn gl_constant(patches: &[HypersurfacePatch], pivot: usize, sample_count: usize, seed: u64) -> Result<GlReport> {
    let ps = three(patches)?;
    if pivot >= 3 {
        return Err(GeometryError::InvalidPivot(pivot));
    }
    ps[pivot].chart()?;
    let others: Vec<&HypersurfacePatch> = (0..3).filter(|&i| i != pivot).map(|i| ps[i]).collect();
    let mut rng = seeded_rng(seed);
    let mut kappa = f64::INFINITY;
    let mut skipped = 0;
    let mut draws = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let za = ps[pivot].sample(&mut rng)?;
        let zb = ps[pivot].sample(&mut rng)?;
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let z2 = others[0].sample(&mut rng)?;
        let z3 = others[1].sample(&mut rng)?;
        let n = ps[pivot].normal_unchecked(&za) * a + ps[pivot].normal_unchecked(&zb) * b;
        let len = n.norm();
        if len < DSPAN_MIN_NORM {
            skipped += 1;
            continue;
        }
        let n2 = others[0].normal_unchecked(&z2);
        let n3 = others[1].normal_unchecked(&z3);
        kappa = kappa.min(gram_volume(&[n.clone(), n2.clone(), n3.clone()])? / len);
        draws.push((n, n2, n3));
    }
    let mut violations = 0;
    for (n, n2, n3) in &draws {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let c: f64 = rng.random_range(-1.0..1.0);
        let lhs = (n * a + n2 * b + n3 * c).norm();
        let bound = kappa * (a.abs() * n.norm()).max(b.abs()).max(c.abs()) / 4.0;
        if lhs < bound {
            violations += 1;
        }
    }
    Ok(GlReport {
        kappa,
        samples_used: draws.len(),
        samples_skipped: skipped,
        inequality_checks: draws.len(),
        inequality_violations: violations,
        degenerate: kappa < GL_FLAG,
    })
}

/// Range of `|N(z1) - N(z2)| / d(leaf(z1), leaf(z2))` over sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    pub non_dispersive: bool,
}

pub fn normal_dispersion_ratio(patch: &HypersurfacePatch, sample_count: usize, seed: u64) -> Result<DispersionReport> {
    let chart = patch.chart()?;
    let mut rng = seeded_rng(seed);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let (mut used, mut skipped) = (0, 0);
    for _ in 0..sample_count {
        let a = patch.sample(&mut rng)?;
        let b = patch.sample(&mut rng)?;
        let d = DVector::from_vec(chart.leaf_id(&a)) - DVector::from_vec(chart.leaf_id(&b));
        let d = d.norm();
        if d < 1e-12 {
            skipped += 1;
            continue;
        }
        let ratio = (patch.normal_unchecked(&a) - patch.normal_unchecked(&b)).norm() / d;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        used += 1;
    }
    Ok(DispersionReport {
        min_ratio: lo,
        max_ratio: hi,
        pairs_used: used,
        pairs_skipped: skipped,
        non_dispersive: !(lo > 1e-12),
    })
}

/// Largest `|S_N v|` over unit leaf tangents and largest normal change along leaves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub leaf_flatness_max: f64,
    pub normal_variation_max: f64,
    pub flagged: bool,
}

pub fn check_foliation_flatness(patch: &HypersurfacePatch, sample_count: usize, seed: u64) -> Result<FlatnessReport> {
    let chart = patch.chart()?;
    let mut rng = seeded_rng(seed);
    let (mut flat, mut drift) = (0.0f64, 0.0f64);
    let width = patch
        .domain
        .lo
        .iter()
        .zip(&patch.domain.hi)
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..sample_count {
        let xi = patch.sample(&mut rng)?;
        let frame = patch.tangent_frame(&xi);
        let shape = patch.shape_operator(&xi)?;
        let normal = patch.normal_unchecked(&xi);
        for (k, dir) in chart.leaf_directions(&xi).iter().enumerate() {
            let len = (&frame * dir).norm();
            let image = &frame * (&shape.weingarten * dir) / len;
            flat = flat.max(image.norm());
            let mut moved = chart.forward(&xi);
            moved[k] += 0.05 * width;
            let other = chart.inverse(&moved);
            if patch.contains(&other) {
                drift = drift.max((patch.normal_unchecked(&other) - &normal).norm());
            }
        }
    }
    Ok(FlatnessReport {
        leaf_flatness_max: flat,
        normal_variation_max: drift,
        flagged: flat > FLATNESS_FLAG,
    })
}

/// Full report for a triple: transversality, flatness, separation and dispersion.
pub fn condition_report(patches: &[HypersurfacePatch], pivot: usize, sample_count: usize, seed: u64) -> Result<ConditionReport> {
    let mut report = estimate_transversality(patches, sample_count, seed)?;
    let ps = three(patches)?;
    if ps.iter().all(|p| p.leaf_chart.is_some()) {
        let mut flat = 0.0f64;
        let mut range = (f64::INFINITY, 0.0f64);
        for p in ps {
            flat = flat.max(check_foliation_flatness(p, sample_count, seed)?.leaf_flatness_max);
            let d = normal_dispersion_ratio(p, sample_count, seed)?;
            range = (range.0.min(d.min_ratio), range.1.max(d.max_ratio));
        }
        report.leaf_flatness_max = Some(flat);
        report.dispersion_ratio_range = Some(range);
    }
    if ps.get(pivot).is_some_and(|p| p.leaf_chart.is_some()) {
        report.gl_constant = Some(gl_constant(patches, pivot, sample_count, seed)?.kappa);
    }
    Ok(report)
}

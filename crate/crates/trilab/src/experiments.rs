//! End-to-end studies: the squashed-cap sharpness example, the threshold
//! exponent, the induction-on-scales recursion and double-cone trends.

use std::sync::Arc;

use num_complex::Complex64;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{Domain, GeometryError, HypersurfacePatch, Phase, estimate_transversality};
use crate::models::double_cone_triple;
use crate::numeric::{LineFit, fit_line, midpoints, pairwise_sum, unravel};
use crate::waves::{FreeWave, FrequencyGrid, SpaceTimeCube, WaveBasis, WaveError, trilinear_ratio};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error("k = {k} must satisfy 1 <= k <= n + 1 = {}", n + 1)]
    KOutOfRange { n: usize, k: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("axis {axis} of the cap grid has {nodes} nodes, need at least 2")]
    ResolutionTooCoarse { axis: usize, nodes: usize },
    #[error("a fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("norm value {0} is not positive")]
    NonPositiveNorm(f64),
    #[error("transversality constant {0} is below 0.01")]
    NotTransversal(f64),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// `2(n+1+k) / (k(n+k-1))`, exactly.
pub fn threshold_exponent(n: usize, k: usize) -> Result<Ratio<i64>> {
    if k == 0 || k > n + 1 || n + k < 2 {
        return Err(ExperimentError::KOutOfRange { n, k });
    }
    let (n, k) = (n as i64, k as i64);
    Ok(Ratio::new(2 * (n + 1 + k), k * (n + k - 1)))
}

/// Parameters of the squashed-cap family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquashedCapConfig {
    pub n: usize,
    pub k: usize,
    pub epsilons: Vec<f64>,
    /// Box constant of the space-time region.
    pub c_small: f64,
    /// Nodes per axis of each cap grid, `n` entries.
    pub cap_resolution: Vec<usize>,
    /// Samples per axis of the space-time box, `n + 1` entries.
    pub box_resolution: Vec<usize>,
    pub exponents: Vec<f64>,
}

impl SquashedCapConfig {
    /// `n = 3, k = 3` with 4 nodes per cap axis and 6 samples per box axis.
    pub fn standard(epsilons: Vec<f64>, exponents: Vec<f64>) -> Self {
        Self {
            n: 3,
            k: 3,
            epsilons,
            c_small: 0.1,
            cap_resolution: vec![4; 3],
            box_resolution: vec![6; 4],
            exponents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n + 1 {
            return Err(ExperimentError::KOutOfRange { n: self.n, k: self.k });
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 0.25)) {
            return Err(ExperimentError::InvalidConfig("epsilon must lie in (0, 1/4]".into()));
        }
        if !(self.c_small > 0.0 && self.c_small <= 0.5) {
            return Err(ExperimentError::InvalidConfig("c_small must lie in (0, 1/2]".into()));
        }
        if self.cap_resolution.len() != self.n || self.box_resolution.len() != self.n + 1 {
            return Err(ExperimentError::InvalidConfig(format!(
                "need {} cap resolutions and {} box resolutions",
                self.n,
                self.n + 1
            )));
        }
        if let Some((axis, &nodes)) = self.cap_resolution.iter().enumerate().find(|(_, r)| **r < 2) {
            return Err(ExperimentError::ResolutionTooCoarse { axis, nodes });
        }
        if self.box_resolution.contains(&0) {
            return Err(ExperimentError::InvalidConfig("box resolution must be positive".into()));
        }
        if self.exponents.iter().any(|p| !(*p > 0.0)) {
            return Err(ExperimentError::InvalidConfig("exponents must be positive".into()));
        }
        Ok(())
    }
}

/// Measurements at one value of `epsilon`.
#[derive(Debug, Clone, Serialize)]
pub struct CapRecord {
    pub epsilon: f64,
    /// `|U_i|`, the same for every cap.
    pub cap_volume: f64,
    pub l2_closed_form: f64,
    /// Numeric `||f_i||_2` per cap.
    pub l2_numeric: Vec<f64>,
    /// `min |E_i f_i(x)| / |U_i|` over the box samples and caps.
    pub min_ratio: f64,
    /// `max |x . Sigma_i(xi) - x_i|` over box samples, cap nodes and caps.
    pub max_phase_deviation: f64,
    /// `(p, ||prod E_i f_i||_{L^p(box)})`.
    pub norms: Vec<(f64, f64)>,
    /// Norms divided by `prod ||f_i||_2`.
    pub normalized_norms: Vec<(f64, f64)>,
}

/// Unit-sphere cap around `e_axis` over the squashed box `U_axis`.
pub fn squashed_cap(n: usize, k: usize, axis: usize, epsilon: f64) -> Result<HypersurfacePatch> {
    let half: Vec<f64> = (0..=n)
        .filter(|&a| a != axis)
        .map(|a| if a < k { epsilon * epsilon } else { epsilon })
        .collect();
    let lo = half.iter().map(|h| -h).collect();
    let domain = Domain::new(lo, half)?;
    Ok(HypersurfacePatch::new(axis, Phase::SphereCap { radius: 1.0 }, domain, None)?)
}

/// `|U_i| = (2 eps^2)^{k-1} (2 eps)^{n+1-k}`.
pub fn cap_volume(n: usize, k: usize, epsilon: f64) -> f64 {
    (2.0 * epsilon * epsilon).powi(k as i32 - 1) * (2.0 * epsilon).powi((n + 1 - k) as i32)
}

/// Half-sides of the space-time box: `c eps^{-2}` on the first `k` axes, `c eps^{-1}` after.
pub fn box_half_sides(n: usize, k: usize, c_small: f64, epsilon: f64) -> Vec<f64> {
    (0..=n)
        .map(|a| if a < k { c_small / (epsilon * epsilon) } else { c_small / epsilon })
        .collect()
}

/// Density `f_i = 1` on each cap, extended over the box and multiplied.
pub fn squashed_cap_run(config: &SquashedCapConfig) -> Result<Vec<CapRecord>> {
    config.validate()?;
    config
        .epsilons
        .par_iter()
        .map(|&eps| squashed_cap_single(config, eps))
        .collect()
}

fn squashed_cap_single(config: &SquashedCapConfig, eps: f64) -> Result<CapRecord> {
    let (n, k) = (config.n, config.k);
    let half = box_half_sides(n, k, config.c_small, eps);
    let axes: Vec<Vec<f64>> = (0..=n).map(|a| midpoints(-half[a], half[a], config.box_resolution[a])).collect();
    let total: usize = config.box_resolution.iter().product();
    let cell: f64 = (0..=n).map(|a| 2.0 * half[a] / config.box_resolution[a] as f64).product();
    let volume = cap_volume(n, k, eps);
    let mut modulus = vec![1.0; total];
    let mut l2_numeric = Vec::with_capacity(k);
    let mut min_ratio = f64::INFINITY;
    let mut max_dev: f64 = 0.0;
    let mut idx = vec![0; n + 1];
    for axis in 0..k {
        let patch = squashed_cap(n, k, axis, eps)?;
        let grid = FrequencyGrid::new(patch.domain.lo.clone(), patch.domain.hi.clone(), config.cap_resolution.clone())?;
        let basis = WaveBasis::new(patch, grid)?;
        let wave = FreeWave::from_fn(basis.clone(), |_| Complex64::new(1.0, 0.0))?;
        l2_numeric.push(wave.mass().sqrt());
        let values = wave.extend_tensor(&axes);
        for (m, v) in modulus.iter_mut().zip(&values) {
            let r = v.norm();
            *m *= r;
            min_ratio = min_ratio.min(r / volume);
        }
        max_dev = max_dev.max(phase_deviation(&basis, &axes, &mut idx));
    }
    let denom: f64 = l2_numeric.iter().product();
    let mut norms = Vec::with_capacity(config.exponents.len());
    let mut normalized = Vec::with_capacity(config.exponents.len());
    for &p in &config.exponents {
        let powered: Vec<f64> = modulus.iter().map(|m| m.powf(p)).collect();
        let norm = (pairwise_sum(&powered) * cell).powf(1.0 / p);
        norms.push((p, norm));
        normalized.push((p, norm / denom));
    }
    Ok(CapRecord {
        epsilon: eps,
        cap_volume: volume,
        l2_closed_form: volume.sqrt(),
        l2_numeric,
        min_ratio,
        max_phase_deviation: max_dev,
        norms,
        normalized_norms: normalized,
    })
}

/// `max |x . Sigma(xi) - x_axis|` over the tensor samples and the cap nodes.
fn phase_deviation(basis: &Arc<WaveBasis>, axes: &[Vec<f64>], idx: &mut [usize]) -> f64 {
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let patch = &basis.patch;
    let mut worst: f64 = 0.0;
    for f in 0..total {
        unravel(f, &shape, idx);
        let x: Vec<f64> = (0..axes.len()).map(|a| axes[a][idx[a]]).collect();
        for node in 0..basis.grid.len() {
            let point = patch.embed_local(basis.node(node));
            let dot: f64 = x.iter().zip(&point).map(|(a, b)| a * b).sum();
            worst = worst.max((dot - x[patch.graph_axis]).abs());
        }
    }
    worst
}

/// Certified pointwise factor `cos(3 c)`.
pub fn certified_factor(c_small: f64) -> f64 {
    (3.0 * c_small).cos()
}

/// Norms over a range of `epsilon` at one exponent, with their log-log fit.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingSeries {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub p: f64,
    pub fit: Option<LineFit>,
}

impl ScalingSeries {
    pub fn new(epsilons: Vec<f64>, values: Vec<f64>, p: f64) -> Self {
        Self {
            epsilons,
            values,
            p,
            fit: None,
        }
    }

    /// Series at exponent index `which` of the records, raw or mass-normalized.
    pub fn from_records(records: &[CapRecord], which: usize, normalized: bool) -> Self {
        let pick = |r: &CapRecord| if normalized { r.normalized_norms[which] } else { r.norms[which] };
        let p = records.first().map_or(f64::NAN, |r| pick(r).0);
        Self::new(
            records.iter().map(|r| r.epsilon).collect(),
            records.iter().map(|r| pick(r).1).collect(),
            p,
        )
    }
}

/// Predicted slopes in `log epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeTargets {
    /// `k(n+k-1) - (n+1+k)/p`.
    pub raw: f64,
    /// `raw - k(n+k-1)/2`.
    pub normalized: f64,
}

pub fn slope_targets(n: usize, k: usize, p: f64) -> SlopeTargets {
    let a = (k * (n + k - 1)) as f64;
    let raw = a - (n + 1 + k) as f64 / p;
    SlopeTargets {
        raw,
        normalized: raw - 0.5 * a,
    }
}

/// Least-squares slope of `log value` against `log epsilon`; fills `series.fit`.
pub fn scaling_fit(series: &mut ScalingSeries) -> Result<LineFit> {
    if series.epsilons.len() < 3 || series.epsilons.len() != series.values.len() {
        return Err(ExperimentError::TooFewPoints(series.epsilons.len().min(series.values.len())));
    }
    if let Some(v) = series.values.iter().chain(&series.epsilons).find(|v| !(**v > 0.0)) {
        return Err(ExperimentError::NonPositiveNorm(*v));
    }
    let xs: Vec<f64> = series.epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = series.values.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or(ExperimentError::TooFewPoints(xs.len()))?;
    series.fit = Some(fit);
    Ok(fit)
}

/// Constants of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionConfig {
    pub n: usize,
    pub p: f64,
    /// Loss exponent `C` in `c^{-C}`.
    pub big_c: f64,
    /// Initial scale is `R_0 = 2^{2 C_0}`.
    pub c0: f64,
    pub epsilon: f64,
    /// Constant in front of the localized term.
    pub c_epsilon: f64,
    pub tolerance: f64,
    pub max_steps: usize,
}

impl RecursionConfig {
    pub fn standard(p: f64) -> Self {
        Self {
            n: 3,
            p,
            big_c: 10.0,
            c0: 4.0,
            epsilon: 0.01,
            c_epsilon: 1.0,
            tolerance: 1e-9,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Bounded,
    Divergent,
}

/// Iterates of the recursion in log coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct RecursionTrace {
    pub config: RecursionConfig,
    /// Exponent `e` with `c(R) = R^{e / C}`.
    pub exponent: f64,
    /// `log2 R_m`, with `R_m = 2^m R_0`.
    pub log2_scales: Vec<f64>,
    /// `ln A_p(R_m)` of the running supremum.
    pub log_bounds: Vec<f64>,
    pub classification: Classification,
    /// Whether the Cauchy test or the growth test decided, rather than the step cap.
    pub decided: bool,
}

impl RecursionTrace {
    pub fn steps(&self) -> usize {
        self.log_bounds.len() - 1
    }
}

/// `(n+4)/4 (1/p - 3(n+2)/(2(n+4))) + eps`; the trajectory is bounded iff this is negative.
pub fn recursion_exponent(n: usize, p: f64, epsilon: f64) -> f64 {
    let n = n as f64;
    (n + 4.0) / 4.0 * (1.0 / p - 1.5 * (n + 2.0) / (n + 4.0)) + epsilon
}

pub fn closed_form_classification(n: usize, p: f64, epsilon: f64) -> Classification {
    if recursion_exponent(n, p, epsilon) < 0.0 {
        Classification::Bounded
    } else {
        Classification::Divergent
    }
}

/// Steps after which the growth test may declare divergence, and its window.
const GROWTH_BURN_IN: usize = 2000;
const GROWTH_WINDOW: usize = 1000;

/// Runs `A(2R) = (1 + cC)((1 + cC)^p A(R)^p + (C_eps c^{-C} (2R)^{2e - eps})^p)^{1/p}` with
/// `c = (2R)^{e/C}`, keeping the running supremum.
pub fn recursion_iterate(config: &RecursionConfig) -> Result<RecursionTrace> {
    if !(config.p > 0.0 && config.big_c > 0.0 && config.c0 > 0.0 && config.c_epsilon > 0.0 && config.tolerance > 0.0) {
        return Err(ExperimentError::InvalidConfig("p and constants must be positive".into()));
    }
    let p = config.p;
    let e = recursion_exponent(config.n, p, config.epsilon);
    let ln2 = std::f64::consts::LN_2;
    let mut log2_r = 2.0 * config.c0;
    let mut log_a = 0.0f64;
    let mut log2_scales = vec![log2_r];
    let mut log_bounds = vec![log_a];
    let mut increments: Vec<f64> = Vec::new();
    let mut outcome = None;
    for step in 0..config.max_steps {
        log2_r += 1.0;
        let ln_r = log2_r * ln2;
        // ln(1 + cC) with c = R^{e/C}
        let ln_c = ln_r * e / config.big_c;
        let ln_gain = ln_1p_exp(ln_c + config.big_c.ln());
        // Localized term C_eps c^{-C} R^{2e - eps} = C_eps R^{e - eps}.
        let ln_term = config.c_epsilon.ln() + ln_r * (e - config.epsilon);
        let ln_inner = log_sum_exp(p * (ln_gain + log_a), p * ln_term) / p;
        let next = (ln_gain + ln_inner).max(log_a);
        let inc = next - log_a;
        log_a = next;
        log2_scales.push(log2_r);
        log_bounds.push(log_a);
        if inc < config.tolerance {
            outcome = Some(Classification::Bounded);
            break;
        }
        increments.push(inc);
        if step >= GROWTH_BURN_IN && increments[increments.len() - GROWTH_WINDOW..].windows(2).all(|w| w[1] >= w[0]) {
            outcome = Some(Classification::Divergent);
            break;
        }
    }
    Ok(RecursionTrace {
        config: config.clone(),
        exponent: e,
        log2_scales,
        log_bounds,
        classification: outcome.unwrap_or(Classification::Divergent),
        decided: outcome.is_some(),
    })
}

/// `ln(1 + e^x)` without overflow.
fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trilinear ratios of the double-cone triple at growing scales.
#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub n: usize,
    pub p: f64,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Fit of `log ratio` against `log R`; absent when some ratio vanishes.
    pub fit: Option<LineFit>,
    pub nu_transversal: f64,
}

/// Settings for [`double_cone_trend`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendConfig {
    pub half_width: f64,
    /// Nodes per axis of each frequency grid.
    pub grid_resolution: usize,
    /// Largest sample spacing in space-time; resolves the oscillation of unit frequencies.
    pub sample_spacing: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            half_width: 0.2,
            grid_resolution: 6,
            sample_spacing: 1.5,
            sample_count: 200,
            seed: 1,
        }
    }
}

/// Heuristic trend of `||prod E_i f_i||_{L^p(Q_R)} / prod ||f_i||_2` for the given densities.
/// This measures one family of densities; it is not evidence for every density.
pub fn double_cone_trend(
    p: f64,
    scales: &[f64],
    config: &TrendConfig,
    density: impl Fn(usize, &[f64]) -> Complex64 + Sync,
) -> Result<TrendReport> {
    let triple = double_cone_triple(config.half_width)?;
    let report = estimate_transversality(&triple, config.sample_count, config.seed)?;
    if report.nu_transversal < 0.01 {
        return Err(ExperimentError::NotTransversal(report.nu_transversal));
    }
    let mut waves = Vec::with_capacity(3);
    for (i, patch) in triple.into_iter().enumerate() {
        let grid = FrequencyGrid::new(patch.domain.lo.clone(), patch.domain.hi.clone(), vec![config.grid_resolution; patch.n])?;
        let basis = WaveBasis::new(patch, grid)?;
        waves.push(FreeWave::from_fn(basis, |xi| density(i, xi))?);
    }
    let n = waves[0].grid().dim();
    let ratios = scales
        .par_iter()
        .map(|&big_r| {
            if waves.iter().any(|w| w.mass() == 0.0) {
                return Ok(0.0);
            }
            let resolution = (big_r / config.sample_spacing).ceil().max(1.0) as usize;
            let cube = SpaceTimeCube::new(vec![0.0; n + 1], big_r, resolution)?;
            Ok(trilinear_ratio([&waves[0], &waves[1], &waves[2]], &cube, p)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = if ratios.iter().all(|r| *r > 0.0) && scales.len() >= 2 {
        let xs: Vec<f64> = scales.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
        fit_line(&xs, &ys)
    } else {
        None
    };
    Ok(TrendReport {
        n,
        p,
        scales: scales.to_vec(),
        ratios,
        fit,
        nu_transversal: report.nu_transversal,
    })
}

//! Ready-made patches and triples used by the experiments and the CLI.

use nalgebra::DMatrix;

use crate::geometry::{Domain, GeometryError, HypersurfacePatch, LeafChart, Phase, Result};

/// Double-cone patch graphed over the last axis, centred at `(1, 0, .., 0)`.
pub fn double_cone(n: usize, half_width: f64) -> Result<HypersurfacePatch> {
    if !(half_width > 0.0 && half_width < 1.0) {
        return Err(GeometryError::InvalidPatch("half width must lie in (0, 1)".into()));
    }
    let mut center = vec![0.0; n];
    center[0] = 1.0;
    HypersurfacePatch::new(n, Phase::DoubleCone, Domain::cube(&center, half_width)?, Some(LeafChart::Conic))
}

/// Cylinder patch `|(z_1..z_{n-1})| = 1` graphed over the first axis.
pub fn cylinder(n: usize, half_width: f64) -> Result<HypersurfacePatch> {
    HypersurfacePatch::new(0, Phase::Cylinder, Domain::cube(&vec![0.0; n], half_width)?, Some(LeafChart::cylinder(n)))
}

/// Unit-sphere cap around the basis vector `e_axis`, graphed over that axis.
pub fn sphere_cap(n: usize, axis: usize, half_width: f64) -> Result<HypersurfacePatch> {
    HypersurfacePatch::new(axis, Phase::SphereCap { radius: 1.0 }, Domain::cube(&vec![0.0; n], half_width)?, None)
}

/// Horizontal hyperplane graphed over `axis`; its normal is `e_axis`.
pub fn flat(n: usize, axis: usize, half_width: f64) -> Result<HypersurfacePatch> {
    HypersurfacePatch::new(
        axis,
        Phase::Hyperplane { slope: vec![0.0; n] },
        Domain::cube(&vec![0.0; n], half_width)?,
        Some(LeafChart::identity(n)),
    )
}

/// Row-major signed permutations placing the second and third cones transversally.
const SECOND_CONE: [f64; 16] = [0., 0., 1., 0., 0., -1., 0., 0., -1., 0., 0., 0., 0., 0., 0., 1.];
const THIRD_CONE: [f64; 16] = [0., 0., -1., 0., 0., -1., 0., 0., 0., 0., 0., 1., 1., 0., 0., 0.];

/// Three double cones in `R^4` satisfying transversality and the curvature condition.
pub fn double_cone_triple(half_width: f64) -> Result<Vec<HypersurfacePatch>> {
    let base = double_cone(3, half_width)?;
    Ok(vec![
        base.clone(),
        base.clone().with_rotation(DMatrix::from_row_slice(4, 4, &SECOND_CONE))?,
        base.with_rotation(DMatrix::from_row_slice(4, 4, &THIRD_CONE))?,
    ])
}

/// The compliant triple with the second surface replaced by a copy of the first,
/// so every second normal lies in the span of first normals.
pub fn degenerate_cone_triple(half_width: f64) -> Result<Vec<HypersurfacePatch>> {
    let mut triple = double_cone_triple(half_width)?;
    triple[1] = triple[0].clone();
    Ok(triple)
}

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use trilab::geometry::*;
use trilab::models;
use trilab::numeric::seeded_rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn flat_with_normal(n: usize, axis: usize) -> HypersurfacePatch {
    models::flat(n, axis, 0.3).unwrap()
}

/// Central-difference gradient of the phase, independent of the closed forms.
fn fd_gradient(phase: &Phase, xi: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..xi.len())
        .map(|j| {
            let mut a = xi.to_vec();
            let mut b = xi.to_vec();
            a[j] += h;
            b[j] -= h;
            (phase.value(&a) - phase.value(&b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gram_volume_examples() {
    assert_relative_eq!(gram_volume(&[v(&[1., 0., 0.]), v(&[0., 1., 0.])]).unwrap(), 1.0, epsilon = 1e-14);
    assert!(gram_volume(&[v(&[1., 0., 0.]), v(&[2., 0., 0.])]).unwrap() < 1e-14);
    // det [[1, 1], [1, 2]] = 1
    assert_relative_eq!(gram_volume(&[v(&[1., 0.]), v(&[1., 1.])]).unwrap(), 1.0, epsilon = 1e-14);
}

#[test]
fn gram_volume_errors() {
    assert_eq!(gram_volume(&[] as &[DVector<f64>]), Err(GeometryError::Empty));
    assert!(matches!(
        gram_volume(&[v(&[1., 0.]), v(&[1., 0., 0.])]),
        Err(GeometryError::DimensionMismatch { .. })
    ));
}

#[test]
fn unit_normal_of_sphere_cap_top() {
    let cap = models::sphere_cap(3, 3, 0.3).unwrap();
    let nrm = cap.unit_normal(&[0.0, 0.0, 0.0]).unwrap();
    assert_relative_eq!(nrm, v(&[0., 0., 0., 1.]), epsilon = 1e-15);
}

#[test]
fn unit_normal_of_hyperplane_matches_closed_form() {
    let a = [0.3, -0.2, 0.5];
    let patch = HypersurfacePatch::new(
        3,
        Phase::Hyperplane { slope: a.to_vec() },
        Domain::cube(&[0.0; 3], 1.0).unwrap(),
        None,
    )
    .unwrap();
    let w = (1.0 + a.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let expected = v(&[-a[0] / w, -a[1] / w, -a[2] / w, 1.0 / w]);
    assert_relative_eq!(patch.unit_normal(&[0.1, 0.2, -0.3]).unwrap(), expected, epsilon = 1e-15);
}

#[test]
fn unit_normal_rejects_points_outside_domain() {
    let cone = models::double_cone(3, 0.2).unwrap();
    assert_eq!(cone.unit_normal(&[0.0, 0.0, 0.0]), Err(GeometryError::OutsideDomain));
}

#[test]
fn double_cone_normal_matches_finite_difference_oracle() {
    let cone = models::double_cone(3, 0.2).unwrap();
    let mut rng = seeded_rng(5);
    for _ in 0..20 {
        let xi = cone.sample(&mut rng).unwrap();
        let g = fd_gradient(&cone.phase, &xi);
        let w = (1.0 + g.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let oracle = v(&[-g[0] / w, -g[1] / w, -g[2] / w, 1.0 / w]);
        assert_relative_eq!(cone.unit_normal(&xi).unwrap(), oracle, epsilon = 1e-6);
    }
}

#[test]
fn phase_gradients_match_finite_differences() {
    let phases = [
        Phase::SphereCap { radius: 1.0 },
        Phase::Paraboloid,
        Phase::DoubleCone,
        Phase::Cylinder,
        Phase::Hyperplane { slope: vec![0.1, 0.2, 0.3] },
    ];
    let xi = [0.7, 0.1, -0.2];
    for phase in &phases {
        let g = phase.gradient(&xi);
        for (a, b) in g.iter().zip(fd_gradient(phase, &xi)) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{phase:?}: {a} vs {b}");
        }
    }
}

#[test]
fn hyperplane_is_flat() {
    let patch = flat_with_normal(3, 1);
    let s = patch.shape_operator(&[0.1, 0.0, -0.1]).unwrap();
    assert!(s.eigenvalues.iter().all(|l| l.abs() < 1e-15));
}

#[test]
fn sphere_cap_has_unit_curvatures() {
    let cap = models::sphere_cap(3, 3, 0.3).unwrap();
    let mut rng = seeded_rng(2);
    for _ in 0..20 {
        let xi = cap.sample(&mut rng).unwrap();
        let s = cap.shape_operator(&xi).unwrap();
        assert_eq!(s.eigenvalues.len(), 3);
        for l in &s.eigenvalues {
            assert_relative_eq!(l.abs(), 1.0, epsilon = 1e-8);
        }
    }
}

#[test]
fn double_cone_has_two_vanishing_curvatures() {
    let cone = models::double_cone(3, 0.2).unwrap();
    let mut rng = seeded_rng(9);
    for _ in 0..50 {
        let xi = cone.sample(&mut rng).unwrap();
        let s = cone.shape_operator(&xi).unwrap();
        let flat = s.eigenvalues.iter().filter(|l| l.abs() < FLAT_EIGENVALUE).count();
        assert_eq!(flat, 2, "{:?}", s.eigenvalues);
        // Ordered by magnitude, so the curved direction comes last.
        assert!(s.eigenvalues[2].abs() > 1e-3);
    }
}

#[test]
fn leaf_chart_round_trips() {
    let mut rng = seeded_rng(4);
    for patch in [models::double_cone(3, 0.2).unwrap(), models::cylinder(4, 0.3).unwrap()] {
        let chart = patch.leaf_chart.clone().unwrap();
        for _ in 0..20 {
            let xi = patch.sample(&mut rng).unwrap();
            let back = chart.inverse(&chart.forward(&xi));
            for (a, b) in xi.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
            assert_eq!(patch.leaf_id(&xi).unwrap(), chart.forward(&xi)[2..].to_vec());
        }
    }
}

#[test]
fn foliated_models_are_flat_along_leaves() {
    for patch in [models::double_cone(3, 0.2).unwrap(), models::cylinder(3, 0.3).unwrap()] {
        let report = check_foliation_flatness(&patch, 50, 1).unwrap();
        assert!(report.leaf_flatness_max < 1e-8, "{report:?}");
        assert!(report.normal_variation_max < 1e-12, "{report:?}");
        assert!(!report.flagged);
    }
}

#[test]
fn sphere_with_false_foliation_is_flagged() {
    let cap = HypersurfacePatch::new(
        3,
        Phase::SphereCap { radius: 1.0 },
        Domain::cube(&[0.0; 3], 0.1).unwrap(),
        Some(LeafChart::identity(3)),
    )
    .unwrap();
    let report = check_foliation_flatness(&cap, 20, 1).unwrap();
    assert!(report.flagged);
    assert!((report.leaf_flatness_max - 1.0).abs() < 0.05, "{report:?}");
}

#[test]
fn flatness_requires_a_chart() {
    let cap = models::sphere_cap(3, 3, 0.1).unwrap();
    assert_eq!(check_foliation_flatness(&cap, 5, 1), Err(GeometryError::MissingLeafChart));
}

#[test]
fn transversality_examples() {
    let same = vec![models::flat(3, 0, 0.1).unwrap(); 3];
    assert!(estimate_transversality(&same, 10, 1).unwrap().nu_transversal < 1e-15);

    let orth = vec![flat_with_normal(3, 0), flat_with_normal(3, 1), flat_with_normal(3, 2)];
    assert_relative_eq!(estimate_transversality(&orth, 10, 1).unwrap().nu_transversal, 1.0, epsilon = 1e-15);

    let caps: Vec<_> = (0..3).map(|a| models::sphere_cap(2, a, 0.05).unwrap()).collect();
    let nu = estimate_transversality(&caps, 200, 3).unwrap().nu_transversal;
    assert!((0.9..=1.0).contains(&nu), "{nu}");
    assert_eq!(estimate_transversality(&caps[..2], 5, 1), Err(GeometryError::TooFewPatches(2)));
}

#[test]
fn transversality_is_reproducible_and_monotone() {
    let triple = models::double_cone_triple(0.2).unwrap();
    let a = estimate_transversality(&triple, 50, 13).unwrap();
    let b = estimate_transversality(&triple, 50, 13).unwrap();
    assert_eq!(a, b);
    let more = estimate_transversality(&triple, 150, 13).unwrap();
    assert!(more.nu_transversal <= a.nu_transversal);
    assert!(more.nu_curvature.unwrap() <= a.nu_curvature.unwrap());
}

#[test]
fn gl_constant_examples() {
    let orth = vec![flat_with_normal(3, 0), flat_with_normal(3, 1), flat_with_normal(3, 2)];
    assert_relative_eq!(gl_constant(&orth, 0, 50, 1).unwrap().kappa, 1.0, epsilon = 1e-12);
    assert_eq!(gl_constant(&orth, 3, 50, 1), Err(GeometryError::InvalidPivot(3)));

    // Frozen Monte Carlo minimum for seed 7.
    let good = gl_constant(&models::double_cone_triple(0.2).unwrap(), 0, 400, 7).unwrap();
    assert_relative_eq!(good.kappa, 0.7574322559448318, max_relative = 1e-12);
    assert!(!good.degenerate);
    assert_eq!(good.inequality_violations, 0);

    let bad = gl_constant(&models::degenerate_cone_triple(0.2).unwrap(), 0, 400, 7).unwrap();
    assert!(bad.kappa < GL_FLAG && bad.degenerate, "{bad:?}");
}

#[test]
fn gl_constant_is_rotation_invariant() {
    let triple = models::double_cone_triple(0.2).unwrap();
    let q = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) as f64).sin()).qr().q();
    let rotated: Vec<_> = triple
        .iter()
        .map(|p| p.clone().with_rotation(&q * &p.rotation).unwrap())
        .collect();
    let a = gl_constant(&triple, 0, 100, 21).unwrap().kappa;
    let b = gl_constant(&rotated, 0, 100, 21).unwrap().kappa;
    assert_relative_eq!(a, b, max_relative = 1e-9);
}

#[test]
fn dispersion_ratio_of_double_cone_is_bracketed() {
    // N = (-w, 1, 1)/sqrt(3) with w the unit radial direction and leaf label tan(theta),
    // so the ratio is 2 sin(dtheta/2) / (sqrt(3) |d tan theta|). The mean value theorem and
    // dtheta <= 2 theta_max bound it by [0.99 cos^2(theta_max), 1] / sqrt(3).
    let cone = models::double_cone(3, 0.2).unwrap();
    let report = normal_dispersion_ratio(&cone, 200, 3).unwrap();
    let theta_max = (0.2f64 / 0.8).atan();
    let upper = 1.0 / 3f64.sqrt();
    assert!(report.min_ratio >= 0.99 * theta_max.cos().powi(2) * upper, "{report:?}");
    assert!(report.max_ratio <= upper * (1.0 + 1e-9), "{report:?}");
    assert!(!report.non_dispersive);
}

#[test]
fn flat_patch_is_non_dispersive() {
    let report = normal_dispersion_ratio(&flat_with_normal(3, 0), 20, 1).unwrap();
    assert_eq!(report.min_ratio, 0.0);
    assert!(report.non_dispersive);
}

#[test]
fn rotation_must_be_orthogonal() {
    let cone = models::double_cone(3, 0.2).unwrap();
    let skew = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.0 });
    assert!(matches!(cone.with_rotation(skew), Err(GeometryError::InvalidPatch(_))));
}

#[test]
fn condition_report_of_standard_triple() {
    let report = condition_report(&models::double_cone_triple(0.2).unwrap(), 0, 100, 11).unwrap();
    assert!(report.nu_transversal > 0.5);
    assert!(report.nu_curvature.unwrap() > 0.1);
    assert!(report.leaf_flatness_max.unwrap() < FLATNESS_FLAG);
    assert!(report.gl_constant.unwrap() > GL_FLAG);
    let (lo, hi) = report.dispersion_ratio_range.unwrap();
    assert!(0.0 < lo && lo <= hi);
}

proptest! {
    #[test]
    fn gram_volume_is_permutation_invariant_and_homogeneous(
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 4),
        c in prop::collection::vec(-1.0f64..1.0, 4),
        s in 0.1f64..5.0,
    ) {
        let (a, b, c) = (v(&a), v(&b), v(&c));
        let base = gram_volume(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let swapped = gram_volume(&[c.clone(), a.clone(), b.clone()]).unwrap();
        prop_assert!((base - swapped).abs() <= 1e-12 * (1.0 + base));
        let scaled = gram_volume(&[a * s, b, c]).unwrap();
        prop_assert!((scaled - s * base).abs() <= 1e-12 * (1.0 + s * base));
    }

    #[test]
    fn unit_normal_is_unit_and_orthogonal_to_tangents(seed in 0u64..1000) {
        let triple = models::double_cone_triple(0.2).unwrap();
        let mut rng = seeded_rng(seed);
        for patch in &triple {
            let xi = patch.sample(&mut rng).unwrap();
            let nrm = patch.unit_normal(&xi).unwrap();
            prop_assert!((nrm.norm() - 1.0).abs() < 1e-12);
            let frame = patch.tangent_frame(&xi);
            for col in frame.column_iter() {
                prop_assert!(col.dot(&nrm).abs() < 1e-12);
            }
            prop_assert_eq!(patch.shape_operator(&xi).unwrap().eigenvectors.ncols(), 3);
        }
    }

    #[test]
    fn double_cone_kernel_has_dimension_two(
        x in 0.8f64..1.2, y in -0.2f64..0.2, z in -0.2f64..0.2,
    ) {
        let cone = models::double_cone(3, 0.2).unwrap();
        let s = cone.shape_operator(&[x, y, z]).unwrap();
        prop_assert_eq!(s.eigenvalues.iter().filter(|l| l.abs() < FLAT_EIGENVALUE).count(), 2);
    }
}

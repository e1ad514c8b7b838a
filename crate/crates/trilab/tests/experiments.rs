use num_complex::Complex64;
use num_rational::Ratio;
use proptest::prelude::*;
use trilab::experiments::*;
use trilab::waves::{FreeWave, FrequencyGrid, WaveBasis};

#[test]
fn threshold_exponent_endpoints() {
    for n in 2..10usize {
        let ni = n as i64;
        assert_eq!(threshold_exponent(n, 2).unwrap(), Ratio::new(ni + 3, ni + 1));
        assert_eq!(threshold_exponent(n, n + 1).unwrap(), Ratio::new(2, ni));
    }
    assert_eq!(threshold_exponent(3, 3).unwrap(), Ratio::new(14, 15));
}

#[test]
fn threshold_exponent_rejects_out_of_range() {
    assert_eq!(threshold_exponent(3, 0), Err(ExperimentError::KOutOfRange { n: 3, k: 0 }));
    assert_eq!(threshold_exponent(3, 5), Err(ExperimentError::KOutOfRange { n: 3, k: 5 }));
}

#[test]
fn cap_volume_and_box_sides() {
    assert!((cap_volume(3, 3, 0.25) - (2.0 * 0.0625f64).powi(2) * 0.5).abs() < 1e-15);
    assert_eq!(box_half_sides(3, 3, 0.1, 0.5), vec![0.4, 0.4, 0.4, 0.2]);
}

#[test]
fn extension_at_origin_is_the_cap_volume() {
    let eps = 0.125;
    let patch = squashed_cap(3, 3, 1, eps).unwrap();
    let grid = FrequencyGrid::new(patch.domain.lo.clone(), patch.domain.hi.clone(), vec![4, 4, 4]).unwrap();
    let basis = WaveBasis::new(patch, grid).unwrap();
    let wave = FreeWave::from_fn(basis, |_| Complex64::new(1.0, 0.0)).unwrap();
    let value = wave.extend(&[vec![0.0; 4]])[0];
    assert!((value.re - cap_volume(3, 3, eps)).abs() < 1e-12 * cap_volume(3, 3, eps));
    assert!(value.im.abs() < 1e-15);
}

#[test]
fn squashed_cap_run_records() {
    let cfg = SquashedCapConfig::standard(vec![0.25, 0.125], vec![1.0]);
    let records = squashed_cap_run(&cfg).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        for l2 in &r.l2_numeric {
            assert!((l2 - r.l2_closed_form).abs() < 1e-12 * r.l2_closed_form);
        }
        assert!(r.min_ratio >= certified_factor(cfg.c_small) - 1e-9 || r.min_ratio >= 0.9);
        assert!(r.min_ratio <= 1.0 + 1e-12);
        assert_eq!(r.norms.len(), 1);
    }
}

#[test]
fn squashed_cap_config_validation() {
    let mut cfg = SquashedCapConfig::standard(vec![0.5], vec![1.0]);
    assert!(matches!(cfg.validate(), Err(ExperimentError::InvalidConfig(_))));
    cfg.epsilons = vec![0.25];
    cfg.cap_resolution = vec![4, 1, 4];
    assert_eq!(cfg.validate(), Err(ExperimentError::ResolutionTooCoarse { axis: 1, nodes: 1 }));
    cfg.cap_resolution = vec![4; 3];
    cfg.k = 5;
    assert_eq!(cfg.validate(), Err(ExperimentError::KOutOfRange { n: 3, k: 5 }));
}

#[test]
fn slope_targets_at_the_standard_case() {
    let t = slope_targets(3, 3, 14.0 / 15.0);
    assert!(t.normalized.abs() < 1e-12);
    assert!((t.raw - 7.5).abs() < 1e-12);
}

#[test]
fn scaling_fit_recovers_planted_slopes() {
    let eps = vec![0.25, 0.125, 0.0625, 0.03125];
    for slope in [-2.0, 0.0, 1.7] {
        let values = eps.iter().map(|e: &f64| 5.0 * e.powf(slope)).collect();
        let mut series = ScalingSeries::new(eps.clone(), values, 1.0);
        let fit = scaling_fit(&mut series).unwrap();
        assert!((fit.slope - slope).abs() < 1e-12);
        assert_eq!(series.fit, Some(fit));
    }
}

#[test]
fn scaling_fit_errors() {
    let mut short = ScalingSeries::new(vec![0.25, 0.125], vec![1.0, 1.0], 1.0);
    assert_eq!(scaling_fit(&mut short), Err(ExperimentError::TooFewPoints(2)));
    let mut zero = ScalingSeries::new(vec![0.25, 0.125, 0.0625], vec![1.0, 0.0, 1.0], 1.0);
    assert_eq!(scaling_fit(&mut zero), Err(ExperimentError::NonPositiveNorm(0.0)));
}

#[test]
fn recursion_standard_classifications() {
    let bounded = recursion_iterate(&RecursionConfig::standard(0.95)).unwrap();
    assert_eq!(bounded.classification, Classification::Bounded);
    assert!(bounded.decided);
    let divergent = recursion_iterate(&RecursionConfig::standard(0.90)).unwrap();
    assert_eq!(divergent.classification, Classification::Divergent);
    assert!(divergent.decided);
    assert!(divergent.log_bounds.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(divergent.log2_scales[0], 8.0);
}

#[test]
fn recursion_rejects_nonpositive_constants() {
    let mut cfg = RecursionConfig::standard(0.0);
    assert!(matches!(recursion_iterate(&cfg), Err(ExperimentError::InvalidConfig(_))));
    cfg.p = 1.0;
    cfg.big_c = -1.0;
    assert!(matches!(recursion_iterate(&cfg), Err(ExperimentError::InvalidConfig(_))));
}

#[test]
fn recursion_exponent_changes_sign_at_the_closed_form_threshold() {
    // Zero of 7/4 (1/p - 15/14) + eps at n = 3.
    let eps = 0.01;
    let p_star = 1.0 / (15.0 / 14.0 - 4.0 * eps / 7.0);
    assert!(recursion_exponent(3, p_star, eps).abs() < 1e-12);
    assert_eq!(closed_form_classification(3, p_star + 1e-6, eps), Classification::Bounded);
    assert_eq!(closed_form_classification(3, p_star - 1e-6, eps), Classification::Divergent);
}

fn small_trend() -> TrendConfig {
    TrendConfig {
        grid_resolution: 3,
        sample_count: 50,
        ..TrendConfig::default()
    }
}

#[test]
fn trend_of_zero_density_is_zero() {
    let report = double_cone_trend(1.0, &[2.0, 4.0], &small_trend(), |_, _| Complex64::new(0.0, 0.0)).unwrap();
    assert_eq!(report.ratios, vec![0.0, 0.0]);
    assert!(report.fit.is_none());
    assert!(report.nu_transversal >= 0.01);
}

#[test]
fn trend_is_homogeneous_in_each_density() {
    let cfg = small_trend();
    let density = |i: usize, xi: &[f64]| Complex64::new(1.0 + xi[0] * i as f64, xi[1]);
    let base = double_cone_trend(1.0, &[2.0, 4.0], &cfg, density).unwrap();
    let scaled = double_cone_trend(1.0, &[2.0, 4.0], &cfg, |i, xi| density(i, xi) * if i == 1 { 3.0 } else { 1.0 }).unwrap();
    for (a, b) in base.ratios.iter().zip(&scaled.ratios) {
        assert!((a - b).abs() < 1e-12 * a);
    }
    assert!(base.fit.is_some());
}

proptest! {
    #[test]
    fn threshold_exponent_decreases_in_k(n in 2usize..11) {
        for k in 2..=n {
            prop_assert!(threshold_exponent(n, k + 1).unwrap() < threshold_exponent(n, k).unwrap());
        }
    }

    #[test]
    fn threshold_exponent_below_multilinear_endpoint(n in 2usize..11) {
        // Strict below the top dimension; both sides equal 2/n at k = n + 1.
        for k in 2..=n {
            prop_assert!(threshold_exponent(n, k).unwrap() < Ratio::new(2, k as i64 - 1));
        }
        prop_assert_eq!(threshold_exponent(n, n + 1).unwrap(), Ratio::new(2, n as i64));
    }

    #[test]
    fn recursion_classification_sign(p in 0.5f64..2.0) {
        let e = recursion_exponent(3, p, 0.01);
        let expected = if e < 0.0 { Classification::Bounded } else { Classification::Divergent };
        prop_assert_eq!(closed_form_classification(3, p, 0.01), expected);
    }
}

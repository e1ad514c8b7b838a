use num_complex::Complex64;
use proptest::prelude::*;
use trilab::numeric::*;

#[test]
fn pairwise_sum_matches_closed_form() {
    let values: Vec<f64> = (1..=1000).map(f64::from).collect();
    assert_eq!(pairwise_sum(&values), 500_500.0);
    assert_eq!(pairwise_sum(&[]), 0.0);
    let z: Vec<Complex64> = (0..300).map(|k| Complex64::new(1.0, k as f64)).collect();
    assert_eq!(pairwise_sum_complex(&z), Complex64::new(300.0, 44_850.0));
}

#[test]
fn pairwise_sum_is_more_accurate_than_naive_on_small_increments() {
    let mut values = vec![1.0];
    values.extend(std::iter::repeat_n(1e-16, 1 << 16));
    let exact = 1.0 + 65_536.0e-16;
    let naive: f64 = values.iter().sum();
    assert!((naive - exact).abs() > 1e-12);
    // Only the leading sequential block can drop increments.
    assert!((pairwise_sum(&values) - exact).abs() < 1e-14);
}

#[test]
fn fit_line_rejects_degenerate_input() {
    assert!(fit_line(&[1.0], &[2.0]).is_none());
    assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    assert!(fit_line(&[1.0, 2.0], &[1.0]).is_none());
}

#[test]
fn fit_loglog_recovers_power_law_and_rejects_nonpositive() {
    let xs = [1.0, 2.0, 4.0, 8.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
    let fit = fit_loglog(&xs, &ys).unwrap();
    assert!((fit.slope + 1.5).abs() < 1e-12);
    assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
    assert!(fit_loglog(&xs, &[1.0, 0.0, 1.0, 1.0]).is_none());
    assert!(fit_loglog(&[-1.0, 2.0], &[1.0, 1.0]).is_none());
}

#[test]
fn midpoints_tile_the_interval() {
    assert_eq!(midpoints(0.0, 1.0, 4), vec![0.125, 0.375, 0.625, 0.875]);
}

#[test]
fn seeded_rng_is_reproducible() {
    use rand::RngExt;
    let a: Vec<u32> = (0..5).map({ let mut r = seeded_rng(7); move |_| r.random_range(0..1000) }).collect();
    let b: Vec<u32> = (0..5).map({ let mut r = seeded_rng(7); move |_| r.random_range(0..1000) }).collect();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn fit_line_is_exact_on_lines(slope in -10.0f64..10.0, intercept in -10.0f64..10.0, m in 3usize..20) {
        let xs: Vec<f64> = (0..m).map(|i| i as f64 * 0.7 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - intercept).abs() < 1e-9);
        prop_assert!(fit.residual < 1e-9);
    }

    #[test]
    fn ravel_inverts_unravel(shape in prop::collection::vec(1usize..6, 1..5), seed in any::<usize>()) {
        let total: usize = shape.iter().product();
        let flat = seed % total;
        let mut idx = vec![0; shape.len()];
        unravel(flat, &shape, &mut idx);
        prop_assert!(idx.iter().zip(&shape).all(|(i, s)| i < s));
        prop_assert_eq!(ravel(&idx, &shape), flat);
    }

    #[test]
    fn pairwise_sum_is_close_to_naive(values in prop::collection::vec(-1e3f64..1e3, 0..400)) {
        let naive: f64 = values.iter().sum();
        prop_assert!((pairwise_sum(&values) - naive).abs() <= 1e-9 * (1.0 + values.iter().map(|v| v.abs()).sum::<f64>()));
    }
}

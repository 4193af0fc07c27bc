mod common;

use proptest::prelude::*;
use supmean::bandwidth::{loocv, BandwidthGrid};
use supmean::estimation::{estimate_from_mean, CurveDataset, EstimatorConfig};
use supmean::grid::{
    box_count_bound, count_in_box, quantile_grid, uniform_grid, AxisDensity, EvalGrid, Grid,
};
use supmean::kernel::Kernel;
use supmean::rates::{classify_regime, optimal_bandwidth, RateInputs, Regime};
use supmean::weights::{locpol_weight_field, MultiIndexBasis};

fn grid_for(d: usize, p: usize, slope: Option<f64>) -> Grid {
    match slope {
        None => uniform_grid(&vec![p; d]).unwrap(),
        Some(s) => {
            let dens = vec![AxisDensity::linear(s).unwrap(); d];
            quantile_grid(&dens, &vec![p; d], 1e-12).unwrap()
        }
    }
}

fn regime_rank(r: Regime) -> u8 {
    match r {
        Regime::Sparse => 0,
        Regime::Intermediate => 1,
        Regime::Dense => 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_reproduce_moments_and_stay_local(
        d in 1usize..=2,
        m in 0usize..=2,
        p_raw in 10usize..200,
        hf in 0.0f64..1.0,
        x0 in 0.0f64..=1.0,
        x1 in 0.0f64..=1.0,
    ) {
        let p = if d == 1 { p_raw } else { 8 + p_raw % 25 };
        let grid = grid_for(d, p, None);
        let h = 3.0 / p as f64 + hf * (0.25 - 3.0 / p as f64).max(0.0);
        let x = [x0, x1][..d].to_vec();
        let field = locpol_weight_field(&grid, &Kernel::epanechnikov_product(d), &MultiIndexBasis::new(m, d), &x, h);
        prop_assume!(field.is_ok());
        let field = field.unwrap();
        prop_assert!((field.sum() - 1.0).abs() < 1e-10);
        for r in common::exponents(m, d).iter().filter(|r| r.iter().sum::<u32>() > 0) {
            let moment: f64 = field.entries.iter().map(|&(j, w)| {
                grid.point(j).iter().zip(&x).zip(r).map(|((a, b), &e)| (a - b).powi(e as i32)).product::<f64>() * w
            }).sum();
            prop_assert!(moment.abs() < 1e-8, "moment {r:?} = {moment}");
        }
        for &(j, w) in &field.entries {
            let inside = grid.point(j).iter().zip(&x).all(|(a, b)| (a - b).abs() <= h + 1e-12);
            prop_assert!(inside || w == 0.0);
        }
    }

    #[test]
    fn estimator_is_linear_and_translation_equivariant(
        values in proptest::collection::vec(-5.0f64..5.0, 60),
        other in proptest::collection::vec(-5.0f64..5.0, 60),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        shift in -10.0f64..10.0,
        h in 0.05f64..0.25,
    ) {
        let grid = uniform_grid(&[60]).unwrap();
        let eval = EvalGrid::uniform(&[33]).unwrap();
        let config = EstimatorConfig::local_polynomial(2, h);
        let est = |v: &[f64]| estimate_from_mean(&grid, v, &config, &eval).unwrap().values;
        let combo: Vec<f64> = values.iter().zip(&other).map(|(u, v)| a * u + b * v).collect();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (e1, e2, ec, es) = (est(&values), est(&other), est(&combo), est(&shifted));
        for i in 0..eval.len() {
            prop_assert!((ec[i] - (a * e1[i] + b * e2[i])).abs() < 1e-9);
            prop_assert!((es[i] - (e1[i] + shift)).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_grid_location_and_spacing(slope in -1.9f64..1.9, p in 2usize..300) {
        let dens = AxisDensity::linear(slope).unwrap();
        let grid = quantile_grid(std::slice::from_ref(&dens), &[p], 1e-12).unwrap();
        let xs = grid.axis(0);
        let (lo, hi) = (dens.f_min(), dens.f_max());
        let slack = 1e-8 / lo;
        for j in 0..p {
            let t = (j as f64 + 0.5) / p as f64;
            prop_assert!(xs[j] >= t / hi - slack && xs[j] <= t / lo + slack);
            if j + 1 < p {
                let gap = xs[j + 1] - xs[j];
                prop_assert!(gap >= 1.0 / (hi * p as f64) - 2.0 * slack);
                prop_assert!(gap <= 1.0 / (lo * p as f64) + 2.0 * slack);
            }
        }
    }

    #[test]
    fn count_in_box_matches_enumeration_and_bound(
        d in 1usize..=2,
        p in 2usize..60,
        slope in -1.5f64..1.5,
        c0 in 0.0f64..=1.0,
        c1 in 0.0f64..=1.0,
        h in 0.0f64..0.6,
    ) {
        let dens = AxisDensity::linear(slope).unwrap();
        let grid = grid_for(d, p, Some(slope));
        let center = [c0, c1][..d].to_vec();
        let count = count_in_box(&grid, &center, h);
        prop_assert_eq!(count, common::brute_force_count(&grid, &center, h));
        let fmax = vec![dens.f_max(); d];
        prop_assert!(count as f64 <= box_count_bound(&fmax, &grid.counts(), &center, h));
    }

    #[test]
    fn regime_is_monotone_in_p(n in 10usize..100_000, alpha in 0.6f64..4.0, d in 1usize..=2) {
        let mut last = 0;
        for p in (2..400).step_by(7) {
            let inputs = RateInputs::isotropic(n, p, d, alpha, 3.0).unwrap();
            let rank = regime_rank(classify_regime(&inputs).regime);
            prop_assert!(rank >= last);
            last = rank;
        }
    }

    #[test]
    fn optimal_bandwidth_respects_floor(n in 2usize..1_000_000, p in 4usize..5000, alpha in 0.5f64..4.0, c in 0.5f64..3.0) {
        let inputs = RateInputs::isotropic(n, p, 1, alpha, c).unwrap();
        let h = optimal_bandwidth(&inputs);
        prop_assert!(h >= c / p as f64 * (1.0 - 1e-12));
    }
}

fn random_dataset(seed: u64, n: usize, p: usize, missing: f64) -> CurveDataset {
    use rand::Rng;
    let mut rng = supmean::simulation::substream(seed, 0);
    let grid = uniform_grid(&[p]).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            grid.axis(0)
                .iter()
                .map(|&x| (6.0 * x).sin() + rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect();
    for j in 0..p {
        // keep the first two curves complete so every column has two values
        for row in rows.iter_mut().skip(2) {
            if rng.random::<f64>() < missing {
                row[j] = f64::NAN;
            }
        }
    }
    CurveDataset::from_rows(grid, &rows).unwrap()
}

fn direct_loocv(ds: &CurveDataset, config: &EstimatorConfig) -> f64 {
    let grid = ds.grid().clone();
    let eval = EvalGrid::design(&grid);
    let mut total = 0.0;
    for i in 0..ds.n() {
        let rows: Vec<Vec<f64>> = (0..ds.n()).filter(|&k| k != i).map(|k| ds.row(k).to_vec()).collect();
        let rest = CurveDataset::from_rows(grid.clone(), &rows).unwrap();
        let fit = estimate_from_mean(&grid, rest.mean_curve(), config, &eval).unwrap().values;
        for (y, f) in ds.row(i).iter().zip(&fit) {
            if !y.is_nan() {
                total += (y - f).powi(2);
            }
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loocv_shortcut_equals_direct_refit(seed in 0u64..1000, missing in prop_oneof![Just(0.0), 0.05f64..0.3], h in 0.12f64..0.3) {
        let ds = random_dataset(seed, 7, 40, missing);
        let config = EstimatorConfig::local_polynomial(1, h);
        let report = loocv(&ds, &config, &BandwidthGrid::new(vec![h]).unwrap()).unwrap();
        let fast = report.scores[0].score.unwrap();
        let slow = direct_loocv(&ds, &config);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.max(1.0), "fast={fast} slow={slow}");
    }

    #[test]
    fn loocv_ignores_a_common_shift(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let ds = random_dataset(seed, 6, 30, 0.0);
        let rows: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.row(i).iter().map(|v| v + shift).collect()).collect();
        let moved = CurveDataset::from_rows(ds.grid().clone(), &rows).unwrap();
        let hs = BandwidthGrid::new(vec![0.1, 0.2, 0.3]).unwrap();
        let config = EstimatorConfig::local_polynomial(2, 0.2);
        let a = loocv(&ds, &config, &hs).unwrap();
        let b = loocv(&moved, &config, &hs).unwrap();
        prop_assert_eq!(a.best_h, b.best_h);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            let (x, y) = (x.score.unwrap(), y.score.unwrap());
            prop_assert!((x - y).abs() <= 1e-8 * x.max(1.0));
        }
    }
}

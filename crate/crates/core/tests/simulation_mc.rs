mod common;

use supmean::bandwidth::{grid_search_supnorm, loocv, BandwidthGrid};
use supmean::estimation::EstimatorConfig;
use supmean::grid::{uniform_grid, EvalGrid};
use supmean::simulation::{
    mean_mu0, run_replications, sample_averaged, sample_brownian, sample_dataset, substream,
    MeanFunction, Process, SimulationModel,
};

#[test]
fn mu0_values() {
    assert_eq!(mean_mu0(0.5), 0.0);
    assert!((mean_mu0(0.75) + (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn brownian_variance_and_covariance() {
    let mut rng = substream(21, 0);
    let coords = [0.3, 0.5, 0.7];
    let draws = 100_000;
    let (mut v5, mut c37) = (0.0, 0.0);
    for _ in 0..draws {
        let b = sample_brownian(&coords, &mut rng).unwrap();
        v5 += b[1] * b[1];
        c37 += b[0] * b[2];
    }
    let (v5, c37) = (v5 / draws as f64, c37 / draws as f64);
    assert!((v5 / 0.5 - 1.0).abs() < 0.03, "var {v5}");
    assert!((c37 / 0.3 - 1.0).abs() < 0.03, "cov {c37}");
}

#[test]
fn brownian_rejects_unsorted_coordinates() {
    let mut rng = substream(22, 0);
    assert!(sample_brownian(&[0.5, 0.2], &mut rng).is_err());
    assert!(sample_brownian(&[0.5, 1.2], &mut rng).is_err());
}

#[test]
fn brownian_increments_scale_with_lag() {
    let mut rng = substream(23, 0);
    let coords: Vec<f64> = (1..=1024).map(|i| i as f64 / 1024.0).collect();
    for lag in [1usize, 8, 64] {
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..200 {
            let b = sample_brownian(&coords, &mut rng).unwrap();
            for j in (lag..coords.len()).step_by(lag) {
                acc += (b[j] - b[j - lag]).powi(2);
                count += 1;
            }
        }
        let ratio = acc / count as f64 / (lag as f64 / 1024.0);
        assert!((ratio - 1.0).abs() < 0.05, "lag {lag}: {ratio}");
    }
}

#[test]
fn averaged_noise_variance() {
    let model = SimulationModel::new(MeanFunction::zero(), Process::None, 1.0).unwrap();
    let grid = uniform_grid(&[10]).unwrap();
    let mut rng = substream(24, 0);
    let mut acc = 0.0;
    let draws = 10_000;
    for _ in 0..draws {
        let d = sample_averaged(&model, 100, &grid, &mut rng).unwrap();
        acc += d.eps_bar.iter().map(|e| e * e).sum::<f64>();
        assert!(d.z_bar.iter().all(|&z| z == 0.0));
    }
    let var = acc / (draws * 10) as f64;
    assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn averaged_shortcut_matches_explicit_sampling() {
    let model = SimulationModel::mu0_brownian(0.7).unwrap();
    let grid = uniform_grid(&[3]).unwrap();
    let n = 8;
    let draws = 100_000;
    let mu: Vec<f64> = grid.axis(0).iter().map(|&x| mean_mu0(x)).collect();
    let mut fast: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(draws)).collect();
    let mut slow: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(draws)).collect();
    let mut rng = substream(25, 0);
    for _ in 0..draws {
        let a = sample_averaged(&model, n, &grid, &mut rng).unwrap();
        let ds = sample_dataset(&model, n, &grid, &mut rng).unwrap();
        for j in 0..3 {
            fast[j].push(mu[j] + a.z_bar[j] + a.eps_bar[j]);
            slow[j].push(ds.mean_curve()[j]);
        }
    }
    for j in 0..3 {
        let (vf, vs) = (common::sample_variance(&fast[j]), common::sample_variance(&slow[j]));
        let expected = (grid.axis(0)[j] + 0.49) / n as f64;
        assert!((vf / expected - 1.0).abs() < 0.03, "point {j}: {vf} vs {expected}");
        assert!((vs / expected - 1.0).abs() < 0.03, "point {j}: {vs} vs {expected}");
        let mean_gap = (common::sample_mean(&fast[j]) - common::sample_mean(&slow[j])).abs();
        assert!(mean_gap < 0.03 * expected.sqrt(), "point {j}: mean gap {mean_gap}");
    }
}

#[test]
fn noise_free_polynomial_has_no_error() {
    let model = SimulationModel::new(MeanFunction::polynomial(vec![0.3, -1.0, 2.0]), Process::None, 0.0).unwrap();
    let grid = uniform_grid(&[80]).unwrap();
    let eval = EvalGrid::uniform(&[201]).unwrap();
    let rep = run_replications(&model, 10, &grid, &EstimatorConfig::local_polynomial(2, 0.1), &eval, 5, 1).unwrap();
    assert!(rep.records.iter().all(|r| r.total < 1e-8));
}

#[test]
fn replications_are_deterministic() {
    let model = SimulationModel::mu0_brownian(1.0).unwrap();
    let grid = uniform_grid(&[65]).unwrap();
    let eval = EvalGrid::uniform(&[101]).unwrap();
    let config = EstimatorConfig::local_polynomial(2, 0.1);
    let a = run_replications(&model, 50, &grid, &config, &eval, 20, 7).unwrap();
    let b = run_replications(&model, 50, &grid, &config, &eval, 20, 7).unwrap();
    let c = run_replications(&model, 50, &grid, &config, &eval, 20, 8).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.summary, b.summary);
    assert_ne!(a.records, c.records);
}

#[test]
fn standard_error_follows_root_n_law() {
    let model = SimulationModel::mu0_brownian(1.0).unwrap();
    let grid = uniform_grid(&[100]).unwrap();
    let eval = EvalGrid::uniform(&[201]).unwrap();
    let config = EstimatorConfig::local_polynomial(2, 0.1);
    let se = |reps| run_replications(&model, 200, &grid, &config, &eval, reps, 31).unwrap().summary.se_total;
    let (s1, s2, s4) = (se(400), se(800), se(1600));
    let r2 = s2 / s1 * 2f64.sqrt();
    let r4 = s4 / s1 * 2.0;
    assert!((r2 - 1.0).abs() < 0.2, "{s1} {s2}");
    assert!((r4 - 1.0).abs() < 0.2, "{s1} {s4}");
}

#[test]
fn supnorm_error_is_u_shaped_in_h() {
    let model = SimulationModel::mu0_brownian(1.0).unwrap();
    let grid = uniform_grid(&[400]).unwrap();
    let eval = EvalGrid::uniform(&[401]).unwrap();
    let hs = BandwidthGrid::default_for(&grid).unwrap();
    let search = grid_search_supnorm(
        &model,
        600,
        &grid,
        &EstimatorConfig::local_polynomial(2, 0.1),
        &hs,
        &eval,
        100,
        41,
    )
    .unwrap();
    let valid: Vec<f64> = search.curve.iter().filter(|c| c.summary.is_some()).map(|c| c.h).collect();
    assert!(search.best_h > valid[0] && search.best_h < *valid.last().unwrap(), "best {}", search.best_h);
    let errs: Vec<f64> = search.curve.iter().filter_map(|c| c.summary.map(|s| s.mean_total)).collect();
    let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(errs[0] > min && *errs.last().unwrap() > min);

    let again = grid_search_supnorm(&model, 600, &grid, &EstimatorConfig::local_polynomial(2, 0.1), &hs, &eval, 100, 41).unwrap();
    assert_eq!(again.best_h, search.best_h);
}

#[test]
fn loocv_tracks_the_supnorm_choice() {
    let model = SimulationModel::mu0_brownian(1.0).unwrap();
    let (n, p) = (600, 400);
    let grid = uniform_grid(&[p]).unwrap();
    let eval = EvalGrid::uniform(&[401]).unwrap();
    let hs = BandwidthGrid::default_for(&grid).unwrap();
    let config = EstimatorConfig::local_polynomial(2, 0.1);
    let target = grid_search_supnorm(&model, n, &grid, &config, &hs, &eval, 200, 51).unwrap().best_h;
    let mut close = 0;
    for seed in 0..20 {
        let data = sample_dataset(&model, n, &grid, &mut substream(52, seed)).unwrap();
        let h = loocv(&data, &config, &hs).unwrap().best_h;
        if h / target <= 2.0 && target / h <= 2.0 {
            close += 1;
        }
    }
    assert!(close >= 16, "{close} of 20 within a factor 2 of {target}");
}

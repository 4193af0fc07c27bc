use nalgebra::DMatrix;
use rand::Rng;
use supmean::bands::{
    estimate_covariance, gaussian_sup_quantile, h_set_check, residual_curves, residual_row_means,
    simultaneous_band, BandMode, CovarianceEstimate,
};
use supmean::estimation::{estimate_on_grid, CurveDataset, EstimatorConfig};
use supmean::grid::{uniform_grid, EvalGrid};
use supmean::simulation::{sample_dataset, substream, MeanFunction, Process, SimulationModel};

fn covariance_of(model: &SimulationModel, n: usize, p: usize, eval: &EvalGrid, seed: u64) -> CovarianceEstimate {
    let grid = uniform_grid(&[p]).unwrap();
    let data = sample_dataset(model, n, &grid, &mut substream(seed, 0)).unwrap();
    let fitted = estimate_on_grid(&data, &EstimatorConfig::local_polynomial(2, 0.06), &EvalGrid::design(&grid))
        .unwrap()
        .values;
    let resid = residual_curves(&data, &fitted).unwrap();
    estimate_covariance(&resid, &grid, eval, None).unwrap()
}

#[test]
fn brownian_covariance_recovered() {
    let model = SimulationModel::new(MeanFunction::mu0(), Process::BrownianMotion, 0.0).unwrap();
    let eval = EvalGrid::from_points(1, vec![0.3, 0.7]).unwrap();
    let cov = covariance_of(&model, 2000, 200, &eval, 61);
    assert!((cov.gamma[(0, 1)] / 0.3 - 1.0).abs() < 0.10, "{}", cov.gamma[(0, 1)]);
    assert!((cov.gamma[(1, 1)] / 0.7 - 1.0).abs() < 0.10, "{}", cov.gamma[(1, 1)]);
    assert_eq!(cov.n_used, 2000);
}

#[test]
fn noise_only_covariance_vanishes_off_diagonal() {
    let n = 2000;
    let model = SimulationModel::new(MeanFunction::mu0(), Process::None, 1.0).unwrap();
    let grid = uniform_grid(&[50]).unwrap();
    let eval = EvalGrid::design(&grid);
    let cov = covariance_of(&model, n, 50, &eval, 62);
    let se = 1.0 / (n as f64).sqrt();
    let mut large = 0;
    let mut total = 0;
    for a in 0..50 {
        for b in 0..50 {
            if a != b {
                total += 1;
                large += (cov.gamma[(a, b)].abs() >= 3.0 * se) as usize;
            }
        }
    }
    assert!(large * 100 <= total, "{large} of {total} entries beyond 3 SE");
    // the noise variance must not leak into the diagonal
    let mean_diag: f64 = (0..50).map(|a| cov.gamma[(a, a)]).sum::<f64>() / 50.0;
    assert!(mean_diag < 0.1, "{mean_diag}");
}

#[test]
fn covariance_is_symmetric_and_psd() {
    let model = SimulationModel::mu0_brownian(0.5).unwrap();
    let eval = EvalGrid::uniform(&[77]).unwrap();
    let cov = covariance_of(&model, 300, 60, &eval, 63);
    assert_eq!(cov.gamma, cov.gamma.transpose());
    let eig = cov.gamma.clone().symmetric_eigenvalues();
    assert!(eig.iter().all(|&v| v >= -1e-8));
}

#[test]
fn residual_curves_match_direct_subtraction() {
    let grid = uniform_grid(&[12]).unwrap();
    let mut rng = substream(64, 0);
    let mut rows: Vec<Vec<f64>> = (0..5).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    rows[3][4] = f64::NAN;
    let fitted: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = CurveDataset::from_rows(grid, &rows).unwrap();
    let r = residual_curves(&data, &fitted).unwrap();
    for i in 0..5 {
        for j in 0..12 {
            let expect = rows[i][j] - fitted[j];
            if expect.is_nan() {
                assert!(r[(i, j)].is_nan());
            } else {
                assert_eq!(r[(i, j)], expect);
            }
        }
    }
    let means = residual_row_means(&r);
    let expect3: f64 = (0..12).filter(|&j| j != 4).map(|j| rows[3][j] - fitted[j]).sum::<f64>() / 11.0;
    assert!((means[3] - expect3).abs() < 1e-14);
}

#[test]
fn exact_fit_leaves_zero_residuals() {
    let grid = uniform_grid(&[20]).unwrap();
    let row: Vec<f64> = grid.axis(0).iter().map(|&x| 2.0 * x - 1.0).collect();
    let data = CurveDataset::from_rows(grid, &[row.clone(), row.clone()]).unwrap();
    let r = residual_curves(&data, &row).unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
}

fn point_cov(v: f64) -> CovarianceEstimate {
    CovarianceEstimate {
        eval_grid: EvalGrid::from_points(1, vec![0.5]).unwrap(),
        gamma: DMatrix::from_element(1, 1, v),
        n_used: 10,
    }
}

#[test]
fn single_point_quantile_is_normal_quantile() {
    let q = gaussian_sup_quantile(&point_cov(1.0), 0.95, 100_000, 65).unwrap();
    assert!((q - 1.96).abs() < 0.05, "{q}");
    assert_eq!(gaussian_sup_quantile(&point_cov(0.0), 0.95, 1000, 65).unwrap(), 0.0);
    assert_eq!(gaussian_sup_quantile(&point_cov(1.0), 0.0, 1000, 65).unwrap(), 0.0);
    assert!(gaussian_sup_quantile(&point_cov(1.0), 0.95, 50, 65).is_err());
    assert!(gaussian_sup_quantile(&point_cov(1.0), 1.0, 1000, 65).is_err());
}

fn brownian_cov(k: usize) -> CovarianceEstimate {
    let eval = EvalGrid::uniform(&[k]).unwrap();
    let pts: Vec<f64> = eval.iter().map(|x| x[0]).collect();
    CovarianceEstimate {
        gamma: DMatrix::from_fn(k, k, |a, b| pts[a].min(pts[b])),
        eval_grid: eval,
        n_used: 100,
    }
}

#[test]
fn quantile_is_monotone_and_stable_in_draws() {
    let cov = brownian_cov(101);
    let q50 = gaussian_sup_quantile(&cov, 0.5, 4000, 66).unwrap();
    let q95 = gaussian_sup_quantile(&cov, 0.95, 4000, 66).unwrap();
    let q99 = gaussian_sup_quantile(&cov, 0.99, 4000, 66).unwrap();
    assert!(q50 <= q95 && q95 <= q99);
    let q95_double = gaussian_sup_quantile(&cov, 0.95, 8000, 67).unwrap();
    // Monte-Carlo standard error of a 95% quantile at 4000 draws is about 0.02
    assert!((q95 - q95_double).abs() < 0.08, "{q95} vs {q95_double}");
    assert_eq!(q95, gaussian_sup_quantile(&cov, 0.95, 4000, 66).unwrap());
}

#[test]
fn band_shapes() {
    let cov = brownian_cov(51);
    let model = SimulationModel::mu0_brownian(0.5).unwrap();
    let grid = uniform_grid(&[100]).unwrap();
    let data = sample_dataset(&model, 50, &grid, &mut substream(68, 0)).unwrap();
    let est = estimate_on_grid(&data, &EstimatorConfig::local_polynomial(2, 0.1), &cov.eval_grid).unwrap();
    let band = simultaneous_band(&est, &cov, 50, 0.95, 1000, 69, BandMode::Unstudentized).unwrap();
    assert!(band.halfwidth.iter().all(|&w| w >= 0.0));
    assert!(band.contains(&est.values));
    assert!(band.halfwidth.windows(2).all(|w| w[0] == w[1]));
    let stud = simultaneous_band(&est, &cov, 50, 0.95, 1000, 69, BandMode::Studentized).unwrap();
    assert_eq!(stud.halfwidth[0], 0.0);
    assert!(stud.halfwidth[50] > stud.halfwidth[10]);
    let zero = simultaneous_band(&est, &cov, 50, 0.0, 1000, 69, BandMode::Unstudentized).unwrap();
    assert!(zero.halfwidth.iter().all(|&w| w == 0.0));
    let mut off = est.values.clone();
    off[7] += 10.0;
    assert_eq!(band.first_violation(&off), Some(7));
}

#[test]
fn band_width_shrinks_like_root_n() {
    let model = SimulationModel::mu0_brownian(0.5).unwrap();
    let grid = uniform_grid(&[200]).unwrap();
    let eval = EvalGrid::design(&grid);
    let config = EstimatorConfig::local_polynomial(2, 0.06);
    let width = |n: usize, seed: u64| {
        let data = sample_dataset(&model, n, &grid, &mut substream(seed, 0)).unwrap();
        let est = estimate_on_grid(&data, &config, &eval).unwrap();
        let resid = residual_curves(&data, &est.values).unwrap();
        let cov = estimate_covariance(&resid, &grid, &eval, None).unwrap();
        simultaneous_band(&est, &cov, n, 0.95, 4000, seed + 1, BandMode::Unstudentized).unwrap().halfwidth[0]
    };
    let ratio = width(8000, 70) / width(2000, 72);
    assert!((ratio / 0.5 - 1.0).abs() < 0.10, "{ratio}");
}

#[test]
fn h_set_flags() {
    let ok = h_set_check(0.06, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
    assert!(ok.pass && ok.above_floor && ok.undersmoothing && ok.enough_points && ok.below_h0);
    let wide = h_set_check(0.2, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
    assert!(!wide.undersmoothing && !wide.pass);
    let narrow = h_set_check(0.01, 2000, &[200], 2.0, 3.0, 0.25).unwrap();
    assert!(!narrow.above_floor && !narrow.pass);
    assert!(h_set_check(1.5, 2000, &[200], 2.0, 3.0, 0.25).is_err());
}

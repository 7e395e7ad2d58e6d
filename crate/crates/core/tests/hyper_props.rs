use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rkhs_sysid::hyper::{nll, oracle_select_m, tune_ml, KernelFamily, OracleData, TunerConfig, ORACLE_NOTE};
use rkhs_sysid::kernels::{GramMatrix, KernelSpec};
use rkhs_sysid::systems::white_input;
use rkhs_sysid::{Dataset, InputLocation, Signal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    l
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = b.to_vec();
    for i in 0..n {
        z[i] = (z[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    for i in (0..n).rev() {
        z[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * z[k]).sum::<f64>()) / l[i][i];
    }
    z
}

/// `−log N(y; 0, Z)`, `Z = λK + σ²I`.
fn neg_log_density(y: &[f64], k: &[Vec<f64>], lambda: f64, sigma2: f64) -> f64 {
    let n = y.len();
    let z: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| lambda * k[i][j] + if i == j { sigma2 } else { 0.0 }).collect()).collect();
    let l = cholesky(&z);
    let logdet: f64 = 2.0 * l.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>();
    let quad: f64 = y.iter().zip(chol_solve(&l, y)).map(|(a, b)| a * b).sum();
    0.5 * logdet + 0.5 * quad + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..rank).map(|_| normal(rng)).collect()).collect();
    (0..n).map(|i| (0..n).map(|j| (0..rank).map(|r| a[i][r] * a[j][r]).sum()).collect()).collect()
}

fn nonlinear_data(seed: u64, n: usize, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs: Vec<InputLocation> =
        (0..n).map(|_| InputLocation::truncated((0..5).map(|_| normal(&mut rng)).collect())).collect();
    let y = locs.iter().map(|x| x.values[0] + 0.5 * x.values[1].powi(2) + noise * normal(&mut rng)).collect();
    Dataset::new(locs, y, (0..n).map(|t| t as f64).collect()).unwrap()
}

fn small_config(starts: usize) -> TunerConfig {
    TunerConfig { starts, max_evals: 120, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nll_is_the_gaussian_evidence(
        seed in any::<u64>(),
        n in 1usize..25,
        log_lambda in -3.0..3.0f64,
        log_sigma2 in -3.0..3.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_psd(&mut rng, n, (n / 2).max(1));
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let (lambda, sigma2) = (10f64.powf(log_lambda), 10f64.powf(log_sigma2));
        let got = nll(&y, &GramMatrix::from_rows(&k).unwrap(), lambda, sigma2).unwrap();
        let want = neg_log_density(&y, &k, lambda, sigma2);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn nll_scaling_identity(seed in any::<u64>(), n in 1usize..20, c in 0.1..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = GramMatrix::from_rows(&random_psd(&mut rng, n, n)).unwrap();
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let a = nll(&y, &k, 0.7, 0.2).unwrap();
        let b = nll(&cy, &k, 0.7 * c * c, 0.2 * c * c).unwrap();
        prop_assert!((b - a - n as f64 * c.ln()).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn every_start_trace_is_monotone() {
    for family in [KernelFamily::Gaussian, "nss".parse().unwrap(), KernelFamily::Laplacian] {
        let data = nonlinear_data(1, 60, 0.3);
        let r = tune_ml(&family, &data, &small_config(4), 2).unwrap();
        for s in &r.trace {
            assert!(s.nll_trace.windows(2).all(|w| w[1] <= w[0]), "{family:?}: {:?}", s.nll_trace);
        }
        let min = r.trace.iter().map(|s| s.nll_value).fold(f64::INFINITY, f64::min);
        assert_eq!(r.nll_value, min);
    }
}

#[test]
fn tuned_network_solves_the_evidence_system() {
    let data = nonlinear_data(5, 50, 0.2);
    let family: KernelFamily = "nss".parse().unwrap();
    let r = tune_ml(&family, &data, &small_config(2), 9).unwrap();
    let model = r.fit(&data).unwrap();
    let k = family.build(&r.best.kernel_params, 5).unwrap().gram(&data.locations).unwrap().to_rows();
    let n = data.len();
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| r.best.lambda * k[i][j] + if i == j { r.best.sigma2 } else { 0.0 }).collect())
        .collect();
    let c = chol_solve(&cholesky(&z), &data.outputs);
    let scale = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (a, b) in model.coefficients.iter().zip(&c) {
        assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
    }
    assert!((r.gamma - r.best.sigma2 / n as f64).abs() <= 1e-15 * r.gamma);
    assert!(matches!(r.kernel, KernelSpec::Scaled { scale, .. } if scale == r.best.lambda));
}

#[test]
fn same_seed_same_result() {
    let data = nonlinear_data(3, 50, 0.5);
    let family: KernelFamily = "nss".parse().unwrap();
    let a = tune_ml(&family, &data, &small_config(3), 42).unwrap();
    let b = tune_ml(&family, &data, &small_config(3), 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn more_starts_never_hurt() {
    let data = nonlinear_data(8, 80, 0.5);
    let family: KernelFamily = "nss".parse().unwrap();
    for seed in 0..3 {
        let one = tune_ml(&family, &data, &small_config(1), seed).unwrap();
        let eight = tune_ml(&family, &data, &small_config(8), seed).unwrap();
        assert!(eight.nll_value <= one.nll_value, "seed {seed}");
        assert_eq!(eight.starts_tried, 8);
    }
}

#[test]
fn optimizer_matches_the_generating_hyperparameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 300;
    let locs: Vec<InputLocation> =
        (0..n).map(|_| InputLocation::truncated((0..3).map(|_| normal(&mut rng)).collect())).collect();
    let (eta, lambda, sigma2) = (2.0, 3.0, 0.1);
    let k = KernelSpec::Gaussian { eta }.gram(&locs).unwrap().to_rows();
    let z: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| lambda * k[i][j] + if i == j { sigma2 } else { 0.0 }).collect()).collect();
    let l = cholesky(&z);
    let e: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| (0..=i).map(|j| l[i][j] * e[j]).sum()).collect();
    let data = Dataset::new(locs, y, (0..n).map(|t| t as f64).collect()).unwrap();
    let r = tune_ml(&KernelFamily::Gaussian, &data, &TunerConfig::default(), 0).unwrap();
    let truth = neg_log_density(&data.outputs, &k, lambda, sigma2);
    assert!(r.nll_value <= truth + 1e-9, "{} > {truth}", r.nll_value);
}

#[test]
fn scaled_outputs_scale_the_optimum() {
    let data = nonlinear_data(4, 60, 0.3);
    let c = 3.0;
    let scaled = Dataset::new(
        data.locations.clone(),
        data.outputs.iter().map(|v| c * v).collect(),
        data.timestamps.clone(),
    )
    .unwrap();
    let a = tune_ml(&KernelFamily::Gaussian, &data, &small_config(2), 5).unwrap();
    let b = tune_ml(&KernelFamily::Gaussian, &scaled, &small_config(2), 5).unwrap();
    // separate simplex runs: agreement up to the optimizer's stopping tolerance
    assert!((b.best.lambda / a.best.lambda - c * c).abs() < 1e-3 * c * c);
    assert!((b.best.sigma2 / a.best.sigma2 - c * c).abs() < 1e-3 * c * c);
    assert!((b.best.kernel_params["eta"] / a.best.kernel_params["eta"] - 1.0).abs() < 1e-3);
    assert!((b.nll_value - a.nll_value - 60.0 * c.ln()).abs() < 1e-6 * a.nll_value.abs());
}

#[test]
fn noiseless_data_hits_the_noise_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = [1.0, 0.5, 0.25, 0.125];
    let locs: Vec<InputLocation> =
        (0..80).map(|_| InputLocation::finite((0..4).map(|_| normal(&mut rng)).collect())).collect();
    let y = locs.iter().map(|x| x.values.iter().zip(&theta).map(|(a, b)| a * b).sum()).collect();
    let data = Dataset::new(locs, y, (0..80).map(|t| t as f64).collect()).unwrap();
    let r = tune_ml(&KernelFamily::StableSplineFir, &data, &TunerConfig::default(), 1).unwrap();
    assert!(r.boundary);
    assert!(r.boundary_params.contains(&"sigma2".to_string()), "{:?}", r.boundary_params);
}

fn fir_signals(seed: u64, n: usize, noise: f64) -> (Signal, Signal, Signal, Signal) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = [1.0, -0.8, 0.5];
    let mut make = |noise: f64| {
        let u = white_input(n + 2, 1.0, 0, &mut rng).unwrap();
        let s = u.samples();
        let y: Vec<f64> = (2..n + 2)
            .map(|t| theta.iter().enumerate().map(|(k, th)| th * s[t - k]).sum::<f64>() + noise * normal(&mut rng))
            .collect();
        (u, Signal::discrete(y, 2).unwrap())
    };
    let (u_train, y_train) = make(noise);
    let (u_test, y_test) = make(0.0);
    (u_train, y_train, u_test, y_test)
}

#[test]
fn oracle_with_a_single_candidate() {
    let (ut, yt, us, ys) = fir_signals(0, 120, 0.3);
    let data = OracleData { u_train: &ut, y_train: &yt, u_test: &us, y_test: &ys };
    // the regressors need m − 1 earlier samples: start the outputs later
    let yt = Signal::discrete(yt.samples()[3..].to_vec(), 5).unwrap();
    let ys = Signal::discrete(ys.samples()[3..].to_vec(), 5).unwrap();
    let data = OracleData { y_train: &yt, y_test: &ys, ..data };
    let r = oracle_select_m(&data, &[5], &small_config(2), 0).unwrap();
    assert_eq!(r.m_star, 5);
    assert_eq!(r.table.len(), 1);
    assert_eq!(r.table[0].fit, Some(r.fit));
    assert_eq!(r.note, ORACLE_NOTE);
}

#[test]
fn oracle_prefers_short_memories_on_short_systems() {
    let mut picks = Vec::new();
    for seed in 0..10 {
        let (ut, yt, us, ys) = fir_signals(100 + seed, 200, 0.2);
        let yt = Signal::discrete(yt.samples()[6..].to_vec(), 8).unwrap();
        let ys = Signal::discrete(ys.samples()[6..].to_vec(), 8).unwrap();
        let data = OracleData { u_train: &ut, y_train: &yt, u_test: &us, y_test: &ys };
        let grid: Vec<usize> = (1..=8).collect();
        let r = oracle_select_m(&data, &grid, &small_config(2), seed).unwrap();
        assert_eq!(r.table.len(), 8);
        picks.push(r.m_star);
    }
    picks.sort_unstable();
    let median = picks[picks.len() / 2];
    assert!((3..=5).contains(&median), "{picks:?}");
}

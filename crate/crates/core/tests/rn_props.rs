use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rkhs_sysid::kernels::{IrKernelSpec, KernelSpec, LagGrid};
use rkhs_sysid::rn::{extract_impulse_response, fit_rn, RnModel};
use rkhs_sysid::{Dataset, InputLocation};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Dense Cholesky solve of an SPD system, used as an independent primal solver.
fn spd_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        z[i] = (z[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    for i in (0..n).rev() {
        z[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * z[k]).sum::<f64>()) / l[i][i];
    }
    z
}

struct FirInstance {
    kernel: KernelSpec,
    /// `K = A Aᵀ`
    a: Vec<Vec<f64>>,
    data: Dataset,
    gamma: f64,
}

fn fir_instance(seed: u64) -> FirInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=200);
    let m = rng.gen_range(1..=30);
    let rank = rng.gen_range(1..=m);
    let gamma = 10f64.powf(rng.gen_range(-4.0..=1.0));
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..rank).map(|_| normal(&mut rng)).collect()).collect();
    let k: Vec<Vec<f64>> =
        (0..m).map(|i| (0..m).map(|j| (0..rank).map(|r| a[i][r] * a[j][r]).sum()).collect()).collect();
    let locs: Vec<InputLocation> =
        (0..n).map(|_| InputLocation::finite((0..m).map(|_| normal(&mut rng)).collect())).collect();
    let y: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut rng)).collect();
    let data = Dataset::new(locs, y, (0..n).map(|t| t as f64).collect()).unwrap();
    FirInstance { kernel: KernelSpec::LinearFir { k: IrKernelSpec::Explicit { matrix: k }, dim: m }, a, data, gamma }
}

/// `θ̂ = A β`, `β = (AᵀΦᵀΦA + γN I)⁻¹ AᵀΦᵀY`: the primal estimate with
/// regularizer `γN θᵀK⁻¹θ`, written without inverting `K`.
fn primal_theta(inst: &FirInstance) -> Vec<f64> {
    let n = inst.data.len();
    let m = inst.a.len();
    let rank = inst.a[0].len();
    let pa: Vec<Vec<f64>> = inst
        .data
        .locations
        .iter()
        .map(|x| (0..rank).map(|r| (0..m).map(|i| x.values[i] * inst.a[i][r]).sum()).collect())
        .collect();
    let mut lhs = vec![vec![0.0; rank]; rank];
    for (r, row) in lhs.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            *v = pa.iter().map(|p| p[r] * p[s]).sum::<f64>() + if r == s { inst.gamma * n as f64 } else { 0.0 };
        }
    }
    let rhs: Vec<f64> = (0..rank).map(|r| pa.iter().zip(&inst.data.outputs).map(|(p, y)| p[r] * y).sum()).collect();
    let beta = spd_solve(&lhs, &rhs);
    (0..m).map(|i| (0..rank).map(|r| inst.a[i][r] * beta[r]).sum()).collect()
}

fn ynorm(d: &Dataset) -> f64 {
    d.outputs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn dual_and_primal_predictions_agree() {
    for seed in 0..50 {
        let inst = fir_instance(seed);
        let model = fit_rn(&inst.kernel, &inst.data, inst.gamma).unwrap();
        assert!(model.residual <= 1e-10, "seed {seed}: residual {}", model.residual);
        let theta = primal_theta(&inst);
        let dual = model.predict_many(&inst.data.locations).unwrap();
        let worst = inst
            .data
            .locations
            .iter()
            .zip(&dual)
            .map(|(x, d)| (d - x.values.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8 * ynorm(&inst.data), "seed {seed}: discrepancy {worst}");
        let extracted = extract_impulse_response(&model, theta.len()).unwrap();
        for (a, b) in extracted.iter().zip(&theta) {
            assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()), "seed {seed}");
        }
    }
}

fn nonlinear_data(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs: Vec<InputLocation> =
        (0..n).map(|_| InputLocation::truncated((0..6).map(|_| normal(&mut rng)).collect())).collect();
    let y = locs.iter().map(|x| x.values[0].sin() + 0.5 * x.values[1] * x.values[2] + 0.1 * normal(&mut rng)).collect();
    Dataset::new(locs, y, (0..n).map(|t| t as f64).collect()).unwrap()
}

fn kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Gaussian { eta: 4.0 },
        KernelSpec::Laplacian { eta: 3.0 },
        KernelSpec::nss(0.7, 5.0, Some(6)),
        KernelSpec::LinearIir { k: IrKernelSpec::StableSpline { alpha: 0.6 }, truncation: 6 },
        KernelSpec::sum(KernelSpec::Gaussian { eta: 2.0 }, KernelSpec::nss(0.5, 1.0, Some(6))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn representer_residual_is_tiny(seed in any::<u64>(), n in 1usize..120, log_gamma in -6.0..1.0f64) {
        let data = nonlinear_data(seed, n);
        for k in kernels() {
            let model = fit_rn(&k, &data, 10f64.powf(log_gamma)).unwrap();
            prop_assert!(model.residual <= 1e-10, "{k:?}: {}", model.residual);
        }
    }

    #[test]
    fn fitted_network_minimizes_the_objective(seed in any::<u64>(), n in 5usize..80, log_gamma in -3.0..0.0f64) {
        let data = nonlinear_data(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let eps = 1e-4;
        for k in kernels() {
            let mut model = fit_rn(&k, &data, 10f64.powf(log_gamma)).unwrap();
            let base = model.objective_with(&data.outputs, &vec![0.0; n]).unwrap();
            let g = model.gram().unwrap().clone();
            for _ in 0..20 {
                let d: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                let gd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| g.get(i, j) * d[j]).sum()).collect();
                let h_norm: f64 = d.iter().zip(&gd).map(|(a, b)| a * b).sum();
                let h_emp: f64 = gd.iter().map(|v| v * v).sum::<f64>() / n as f64;
                let curvature = h_emp + model.gamma * h_norm;
                for sign in [1.0, -1.0] {
                    let delta: Vec<f64> = d.iter().map(|v| sign * eps * v).collect();
                    let rise = model.objective_with(&data.outputs, &delta).unwrap() - base;
                    prop_assert!(rise >= -1e-13 * base.abs(), "{k:?}: objective fell by {rise}");
                    if curvature * eps * eps > 1e-9 * base.abs() {
                        prop_assert!(
                            (rise - eps * eps * curvature).abs() <= 1e-3 * eps * eps * curvature + 1e-12 * base.abs(),
                            "{k:?}: rise {rise} vs second-order {}", eps * eps * curvature
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rkhs_norm_shrinks_with_gamma(seed in any::<u64>(), n in 2usize..100) {
        let data = nonlinear_data(seed, n);
        for k in kernels() {
            let norms: Vec<f64> = (0..10)
                .map(|i| {
                    let mut m = fit_rn(&k, &data, 10f64.powf(-5.0 + 0.6 * i as f64)).unwrap();
                    m.rkhs_norm_sq().unwrap()
                })
                .collect();
            for w in norms.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-14, "{k:?}: {norms:?}");
            }
        }
    }
}

#[test]
fn noiseless_fir_recovers_the_impulse_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = 20;
    let theta: Vec<f64> = (0..p).map(|k| 0.8f64.powi(k as i32) * (0.5 * k as f64).cos()).collect();
    let u: Vec<f64> = (0..2000 + p).map(|_| normal(&mut rng)).collect();
    let locs: Vec<InputLocation> =
        (p..2000 + p).map(|t| InputLocation::finite((0..p).map(|k| u[t - k]).collect())).collect();
    let y: Vec<f64> = locs.iter().map(|x| x.values.iter().zip(&theta).map(|(a, b)| a * b).sum()).collect();
    let data = Dataset::new(locs, y, (0..2000).map(|t| t as f64).collect()).unwrap();
    let k = KernelSpec::LinearFir { k: IrKernelSpec::StableSpline { alpha: 0.9 }, dim: p };
    let model = fit_rn(&k, &data, 1e-6).unwrap();
    assert!(model.residual <= 1e-10);
    let est = extract_impulse_response(&model, p).unwrap();
    let err = est.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "relative error {}", err / norm);
}

#[test]
fn model_json_round_trip_predicts_identically() {
    let data = nonlinear_data(9, 40);
    let k = KernelSpec::nss(0.8, 2.0, Some(6));
    let model = fit_rn(&k, &data, 0.01).unwrap();
    let back: RnModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(back.coefficients, model.coefficients);
    assert_eq!(back.predict_many(&data.locations).unwrap(), model.predict_many(&data.locations).unwrap());
}

#[test]
fn continuous_time_fit_residual() {
    let grid = LagGrid::new(0.5, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let locs: Vec<InputLocation> = (0..30)
        .map(|_| InputLocation::sampled((0..11).map(|_| normal(&mut rng)).collect(), grid.lags()))
        .collect();
    let y = (0..30).map(|_| normal(&mut rng)).collect();
    let data = Dataset::new(locs, y, (0..30).map(|t| t as f64).collect()).unwrap();
    let k = KernelSpec::LinearCt { k: IrKernelSpec::StableSplineCt { beta: 1.0 }, grid };
    assert!(fit_rn(&k, &data, 1e-3).unwrap().residual <= 1e-10);
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkhs_sysid::kernels::{IrKernelSpec, KernelSpec, LagGrid, NssVariant};
use rkhs_sysid::stability::{certify, summability_test, Verdict, DEFAULT_PROBES};
use rkhs_sysid::InputLocation;

fn smallest_p(alpha: f64) -> usize {
    let mut p = 1;
    while alpha.powi(p as i32) >= 1e-12 {
        p += 1;
    }
    p
}

#[test]
fn stable_spline_partial_sums_hit_the_closed_form() {
    for alpha in [0.3, 0.5, 0.9] {
        let k = IrKernelSpec::StableSpline { alpha };
        let p = smallest_p(alpha);
        let v = summability_test(&k, p, DEFAULT_PROBES, 0);
        assert_eq!(v.verdict, Verdict::Stable, "alpha {alpha}");
        let closed = alpha * (1.0 + alpha) / (1.0 - alpha).powi(2);
        let partial = v.evidence["partial_sum"];
        assert!((partial - closed).abs() <= 1e-9 * closed.max(1.0), "alpha {alpha}: {partial} vs {closed}");
    }
}

#[test]
fn nonnegative_non_decaying_kernels_are_unstable() {
    for k in [IrKernelSpec::RadialGaussian { eta: 2.0 }, IrKernelSpec::RadialLaplacian { eta: 5.0 }] {
        for p in [10, 40, 200] {
            assert_eq!(summability_test(&k, p, DEFAULT_PROBES, 1).verdict, Verdict::Unstable);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn longer_probes_never_flip_stable_to_unstable(alpha in 0.05..0.98f64, p1 in 5usize..200, extra in 1usize..400) {
        for k in [IrKernelSpec::StableSpline { alpha }, IrKernelSpec::DiagonalSs { alpha }] {
            let a = summability_test(&k, p1, 8, 3);
            let b = summability_test(&k, p1 + extra, 8, 3);
            if a.verdict == Verdict::Stable {
                prop_assert_ne!(b.verdict, Verdict::Unstable);
            }
        }
    }
}

fn certified_kernels() -> Vec<KernelSpec> {
    let p = 25;
    vec![
        KernelSpec::LinearIir { k: IrKernelSpec::StableSpline { alpha: 0.7 }, truncation: p },
        KernelSpec::LinearFir { k: IrKernelSpec::StableSpline { alpha: 0.9 }, dim: p },
        KernelSpec::Gaussian { eta: 4.0 },
        KernelSpec::Laplacian { eta: 1.0 },
        KernelSpec::nss(0.8, 2.0, Some(p)),
        KernelSpec::Nss { alpha: 0.6, eta: 0.5, truncation: Some(p), variant: NssVariant::Diagonal },
        KernelSpec::sum(KernelSpec::Gaussian { eta: 1.0 }, KernelSpec::nss(0.8, 2.0, Some(p))),
        KernelSpec::product(KernelSpec::Laplacian { eta: 3.0 }, KernelSpec::nss(0.5, 1.0, Some(p))),
        KernelSpec::scaled(3.0, KernelSpec::nss(0.7, 1.0, Some(p))),
    ]
}

/// Random members of the unit ball of the RKHS, driven by inputs with
/// `|u| ≤ 1`, never exceed the certificate's `√C_1`.
#[test]
fn certified_members_respect_the_output_bound() {
    let p = 25;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in certified_kernels() {
        let v = certify(&k);
        assert_eq!(v.verdict, Verdict::Stable, "{k:?}");
        let c_r = v.evidence["C_r[r=1]"];
        for _ in 0..50 {
            let centers: Vec<InputLocation> = (0..5)
                .map(|_| InputLocation::truncated((0..p).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
                .collect();
            let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = k.gram(&centers).unwrap();
            let norm_sq: f64 = (0..5).map(|i| (0..5).map(|j| c[i] * g.get(i, j) * c[j]).sum::<f64>()).sum();
            if norm_sq <= 1e-12 {
                continue;
            }
            let c: Vec<f64> = c.iter().map(|v| v / norm_sq.sqrt()).collect();
            let u: Vec<f64> = (0..200 + p).map(|_| if rng.gen::<bool>() { 1.0 } else { rng.gen_range(-1.0..=1.0) }).collect();
            for t in p..200 + p {
                let x = InputLocation::truncated((0..p).map(|lag| u[t - lag]).collect());
                let out: f64 = centers.iter().zip(&c).map(|(a, ci)| ci * k.eval(a, &x).unwrap()).sum();
                assert!(out.abs() <= c_r.sqrt() * (1.0 + 1e-9), "{k:?}: |g| = {} > {}", out.abs(), c_r.sqrt());
            }
        }
    }
}

#[test]
fn continuous_time_stable_spline_is_integrable() {
    let k = KernelSpec::LinearCt { k: IrKernelSpec::StableSplineCt { beta: 0.5 }, grid: LagGrid::new(0.1, 50).unwrap() };
    let v = certify(&k);
    assert_eq!(v.verdict, Verdict::Stable);
    assert!((v.evidence["abs_integral"] - 8.0).abs() < 1e-12);
}

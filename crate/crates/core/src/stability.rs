//! Stability certificates for kernels.
//!
//! A verdict is `stable` or `unstable` only when an analytic rule applies;
//! finite numerical evidence on its own never yields more than `inconclusive`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{IrKernelSpec, KernelSpec};
use crate::signal::InputLocation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

/// Verdict plus the rule that produced it and the numbers it rests on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    pub rule: String,
    pub evidence: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<StabilityVerdict>,
}

impl StabilityVerdict {
    fn new(verdict: Verdict, rule: &str) -> Self {
        Self { verdict, rule: rule.into(), evidence: BTreeMap::new(), components: Vec::new() }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.evidence.insert(key.into(), value);
        self
    }

    pub fn is_stable(&self) -> bool {
        self.verdict == Verdict::Stable
    }
}

/// Default number of random sign probes.
pub const DEFAULT_PROBES: usize = 32;

/// Default truncation for a lag kernel: where its decay drops below the
/// truncation level, else 200.
pub fn default_probe_length(k: &IrKernelSpec) -> usize {
    k.default_truncation().unwrap_or(200).max(1)
}

fn abs_partial_sum(k: &IrKernelSpec, p: usize) -> f64 {
    (1..=p).map(|i| (1..=p).map(|j| k.entry(i, j).abs()).sum::<f64>()).sum()
}

/// `Σ_i |Σ_j K(i, j) a_j|` over the leading `p` lags.
fn probe_response(k: &IrKernelSpec, a: &[f64]) -> f64 {
    k.apply(a).iter().map(|v| v.abs()).sum()
}

/// Summability of a lag kernel: `Σ_{i,j} |K(i, j)| < ∞` for nonnegative
/// kernels, random `ℓ∞` sign probes otherwise.
pub fn summability_test(k: &IrKernelSpec, p: usize, probes: usize, seed: u64) -> StabilityVerdict {
    let p = p.max(1);
    let partial = abs_partial_sum(k, p);
    if k.is_nonnegative() {
        if let Some(closed) = k.abs_sum_closed_form() {
            return StabilityVerdict::new(Verdict::Stable, "absolute summability (closed form)")
                .with("truncation", p as f64)
                .with("partial_sum", partial)
                .with("closed_form_sum", closed)
                .with("tail_bound", (closed - partial).max(0.0));
        }
        let diag = k.entry(1, 1);
        let constant_diagonal = (1..=p).all(|i| (k.entry(i, i) - diag).abs() <= 1e-12 * diag.abs());
        if diag > 0.0 && constant_diagonal {
            // S_P ≥ Σ_i K(i, i) = P·K(1, 1): no nonnegative kernel of this
            // shape is summable, and summability is necessary when K ≥ 0.
            return StabilityVerdict::new(Verdict::Unstable, "nonnegative kernel with constant diagonal")
                .with("truncation", p as f64)
                .with("partial_sum", partial)
                .with("diagonal", diag)
                .with("lower_bound", p as f64 * diag);
        }
        let partial4 = abs_partial_sum(k, 4 * p);
        return StabilityVerdict::new(Verdict::Inconclusive, "absolute summability (numerical only)")
            .with("truncation", p as f64)
            .with("partial_sum", partial)
            .with("partial_sum_4p", partial4);
    }

    // sign-indefinite: evaluate probes at P, 2P, 4P on nested prefixes
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [p, 2 * p, 4 * p];
    let mut worst = [0.0f64; 3];
    let mut signs: Vec<Vec<f64>> = (0..probes.max(1))
        .map(|_| (0..4 * p).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    signs.push(vec![1.0; 4 * p]);
    for a in &signs {
        for (w, &len) in worst.iter_mut().zip(&levels) {
            *w = w.max(probe_response(k, &a[..len]));
        }
    }
    let growth = (worst[2] / worst[0].max(f64::MIN_POSITIVE)).log2() / 2.0;
    let v = StabilityVerdict::new(Verdict::Inconclusive, "sign probes")
        .with("truncation", p as f64)
        .with("partial_sum", partial)
        .with("probes", signs.len() as f64)
        .with("probe_max_p", worst[0])
        .with("probe_max_2p", worst[1])
        .with("probe_max_4p", worst[2])
        .with("growth_exponent", growth);
    // a probe whose response keeps growing at least linearly with every
    // doubling of the horizon exhibits a bounded input with unbounded output
    let doubles = worst[1] >= 1.9 * worst[0] && worst[2] >= 1.9 * worst[1];
    if doubles && worst[0] > 0.0 {
        StabilityVerdict { verdict: Verdict::Unstable, rule: "diverging sign probe".into(), ..v }
    } else {
        v
    }
}

/// Analytic `C_r ≥ sup_{‖x‖∞ ≤ r} 𝒦(x, x)` when one is known for the family.
pub fn analytic_diagonal_bound(kernel: &KernelSpec, r: f64) -> Option<f64> {
    match kernel {
        KernelSpec::Gaussian { .. } | KernelSpec::Laplacian { .. } => Some(1.0),
        KernelSpec::Nss { alpha, variant, .. } => {
            let k = match variant {
                crate::kernels::NssVariant::Full => IrKernelSpec::StableSpline { alpha: *alpha },
                crate::kernels::NssVariant::Diagonal => IrKernelSpec::DiagonalSs { alpha: *alpha },
            };
            Some(r * r * k.abs_sum_closed_form()?)
        }
        KernelSpec::LinearFir { k, dim } => Some(r * r * abs_partial_sum(k, *dim)),
        KernelSpec::LinearIir { k, .. } => Some(r * r * k.abs_sum_closed_form()?),
        KernelSpec::LinearCt { k, .. } => Some(r * r * k.abs_integral_closed_form()?),
        KernelSpec::Sum { left, right } => {
            Some(analytic_diagonal_bound(left, r)? + analytic_diagonal_bound(right, r)?)
        }
        KernelSpec::Product { left, right } => {
            Some(analytic_diagonal_bound(left, r)? * analytic_diagonal_bound(right, r)?)
        }
        KernelSpec::Scaled { scale, kernel } => Some(scale * analytic_diagonal_bound(kernel, r)?),
    }
}

/// Location shape used when probing a kernel: `(length, lag grid if sampled)`.
fn probe_shape(kernel: &KernelSpec) -> (usize, Option<Vec<f64>>) {
    match kernel {
        KernelSpec::LinearFir { dim, .. } => (*dim, None),
        KernelSpec::LinearIir { truncation, .. } => (*truncation, None),
        KernelSpec::LinearCt { grid, .. } => (grid.points, Some(grid.lags())),
        KernelSpec::Nss { alpha, truncation, .. } => (KernelSpec::nss_truncation(*alpha, *truncation), None),
        KernelSpec::Gaussian { .. } | KernelSpec::Laplacian { .. } => (10, None),
        KernelSpec::Sum { left, right } | KernelSpec::Product { left, right } => {
            let (a, g) = probe_shape(left);
            let (b, _) = probe_shape(right);
            (a.max(b), g)
        }
        KernelSpec::Scaled { kernel, .. } => probe_shape(kernel),
    }
}

fn make_location(values: Vec<f64>, grid: &Option<Vec<f64>>) -> InputLocation {
    match grid {
        Some(g) => InputLocation::sampled(values, g.clone()),
        None => InputLocation::truncated(values),
    }
}

/// Bounded-diagonal test: `𝒦(x, x) ≤ C_r` on every `ℓ∞` ball.
///
/// Samples uniform points and random sign corners of each ball and reports
/// the largest diagonal value seen. The verdict is `stable` only if the family
/// has an analytic bound for every radius.
pub fn diagonal_bound_test(kernel: &KernelSpec, radii: &[f64], samples_per_radius: usize, seed: u64) -> StabilityVerdict {
    let (len, grid) = probe_shape(kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = StabilityVerdict::new(Verdict::Stable, "bounded kernel diagonal on ℓ∞ balls");
    let mut all_analytic = true;
    for &r in radii {
        let mut sup = 0.0f64;
        for s in 0..samples_per_radius.max(1) {
            let values: Vec<f64> = if s % 2 == 0 {
                (0..len).map(|_| rng.gen_range(-r..=r)).collect()
            } else {
                (0..len).map(|_| if rng.gen::<bool>() { r } else { -r }).collect()
            };
            let x = make_location(values, &grid);
            if let Ok(d) = kernel.eval(&x, &x) {
                sup = sup.max(d);
            }
        }
        let x = make_location(vec![r; len], &grid);
        if let Ok(d) = kernel.eval(&x, &x) {
            sup = sup.max(d);
        }
        v.evidence.insert(format!("empirical_sup[r={r}]"), sup);
        match analytic_diagonal_bound(kernel, r) {
            Some(c) => {
                v.evidence.insert(format!("C_r[r={r}]"), c);
            }
            None => all_analytic = false,
        }
    }
    v.evidence.insert("location_length".into(), len as f64);
    if !all_analytic || radii.is_empty() {
        v.verdict = Verdict::Inconclusive;
        v.rule = "bounded kernel diagonal (empirical only)".into();
    }
    v
}

fn lag_kernel_verdict(k: &IrKernelSpec, p: Option<usize>) -> StabilityVerdict {
    let p = p.unwrap_or_else(|| default_probe_length(k));
    summability_test(k, p, DEFAULT_PROBES, 0)
}

/// Certifies any kernel by recursion: linear kernels through summability of
/// their lag kernel, radial and NSS kernels through their diagonal bound,
/// sums and products through both operands being stable.
pub fn composed_stability(kernel: &KernelSpec) -> StabilityVerdict {
    match kernel {
        KernelSpec::Sum { left, right } | KernelSpec::Product { left, right } => {
            let l = composed_stability(left);
            let r = composed_stability(right);
            let op = if matches!(kernel, KernelSpec::Sum { .. }) { "sum" } else { "product" };
            let verdict = if l.is_stable() && r.is_stable() { Verdict::Stable } else { Verdict::Inconclusive };
            let rule = if verdict == Verdict::Stable {
                format!("{op} of stable kernels")
            } else {
                format!("{op} with an operand not certified stable")
            };
            StabilityVerdict { verdict, rule, evidence: BTreeMap::new(), components: vec![l, r] }
        }
        KernelSpec::Scaled { kernel, .. } => {
            let inner = composed_stability(kernel);
            StabilityVerdict {
                verdict: inner.verdict,
                rule: "positive scaling".into(),
                evidence: BTreeMap::new(),
                components: vec![inner],
            }
        }
        KernelSpec::LinearFir { k, dim } => {
            let mut v = summability_test(k, *dim, DEFAULT_PROBES, 0);
            // finitely many lags: every impulse response is summable
            v.verdict = Verdict::Stable;
            v.rule = "finite impulse response".into();
            v
        }
        KernelSpec::LinearIir { k, .. } => lag_kernel_verdict(k, None),
        KernelSpec::LinearCt { k, .. } => match k.abs_integral_closed_form() {
            Some(int) if k.is_nonnegative() => {
                StabilityVerdict::new(Verdict::Stable, "absolute integrability (closed form)")
                    .with("abs_integral", int)
            }
            _ => StabilityVerdict::new(Verdict::Inconclusive, "absolute integrability unknown"),
        },
        KernelSpec::Gaussian { .. } | KernelSpec::Laplacian { .. } => {
            diagonal_bound_test(kernel, &[1.0], 4, 0)
        }
        KernelSpec::Nss { alpha, variant, .. } => {
            // linear stable-spline factor times a radial factor with unit diagonal
            let k = match variant {
                crate::kernels::NssVariant::Full => IrKernelSpec::StableSpline { alpha: *alpha },
                crate::kernels::NssVariant::Diagonal => IrKernelSpec::DiagonalSs { alpha: *alpha },
            };
            let lin = lag_kernel_verdict(&k, None);
            let radial = StabilityVerdict::new(Verdict::Stable, "radial factor with unit diagonal")
                .with("C_r", 1.0);
            let verdict = if lin.is_stable() { Verdict::Stable } else { Verdict::Inconclusive };
            StabilityVerdict {
                verdict,
                rule: "product of a summable linear kernel and a radial kernel".into(),
                evidence: BTreeMap::new(),
                components: vec![lin, radial],
            }
        }
    }
}

/// Kernel certification used by the CLI: composition rules, plus the
/// diagonal-bound evidence at radius 1.
pub fn certify(kernel: &KernelSpec) -> StabilityVerdict {
    let mut v = composed_stability(kernel);
    if let Some(c) = analytic_diagonal_bound(kernel, 1.0) {
        v.evidence.insert("C_r[r=1]".into(), c);
    }
    v
}

/// `‖θ‖₁ = θᵀ sign(θ)` over the first `p` lags: the output at the time the
/// worst-case unit-bounded input `u = sign(θ)` lines up with the response.
pub fn sign_probe_bound(theta: &[f64], p: usize) -> f64 {
    theta.iter().take(p).map(|t| t * t.signum()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::LagGrid;

    #[test]
    fn stable_spline_sum_is_three() {
        let k = IrKernelSpec::StableSpline { alpha: 0.5 };
        let v = summability_test(&k, 200, 8, 1);
        assert_eq!(v.verdict, Verdict::Stable);
        assert!((v.evidence["partial_sum"] - 3.0).abs() < 1e-9);
        assert_eq!(v.evidence["closed_form_sum"], 3.0);
    }

    #[test]
    fn radial_ir_kernel_is_unstable() {
        let v = summability_test(&IrKernelSpec::RadialGaussian { eta: 2.0 }, 100, 8, 1);
        assert_eq!(v.verdict, Verdict::Unstable);
        assert!(v.evidence["partial_sum"] >= 100.0);
    }

    #[test]
    fn zero_kernel_is_stable() {
        let v = summability_test(&IrKernelSpec::Explicit { matrix: vec![vec![0.0; 3]; 3] }, 3, 4, 0);
        assert_eq!(v.verdict, Verdict::Stable);
        assert_eq!(v.evidence["partial_sum"], 0.0);
        let fir = KernelSpec::LinearFir { k: IrKernelSpec::Explicit { matrix: vec![vec![0.0; 3]; 3] }, dim: 3 };
        let d = diagonal_bound_test(&fir, &[1.0, 2.0], 10, 0);
        assert_eq!(d.verdict, Verdict::Stable);
        assert_eq!(d.evidence["C_r[r=2]"], 0.0);
    }

    #[test]
    fn cosine_probe_diverges_and_damped_is_inconclusive() {
        let v = summability_test(&IrKernelSpec::Cosine { omega: 0.7 }, 64, 8, 3);
        assert_eq!(v.verdict, Verdict::Unstable, "{v:?}");
        let v = summability_test(&IrKernelSpec::DampedCosine { alpha: 0.8, omega: 0.7 }, 64, 8, 3);
        assert_eq!(v.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn diagonal_bounds() {
        let g = diagonal_bound_test(&KernelSpec::Gaussian { eta: 1.0 }, &[0.5, 3.0], 20, 0);
        assert_eq!(g.verdict, Verdict::Stable);
        assert_eq!(g.evidence["C_r[r=3]"], 1.0);
        let nss = KernelSpec::nss(0.9, 1.0, None);
        let v = diagonal_bound_test(&nss, &[2.0], 50, 0);
        assert_eq!(v.verdict, Verdict::Stable);
        assert!((v.evidence["C_r[r=2]"] - 684.0).abs() < 1e-9);
        assert!(v.evidence["empirical_sup[r=2]"] <= 684.0);
        let iir = KernelSpec::LinearIir { k: IrKernelSpec::RadialGaussian { eta: 1.0 }, truncation: 20 };
        assert_eq!(diagonal_bound_test(&iir, &[1.0], 5, 0).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn composition() {
        let ss = KernelSpec::LinearFir { k: IrKernelSpec::StableSpline { alpha: 0.8 }, dim: 20 };
        let p = KernelSpec::product(ss, KernelSpec::Gaussian { eta: 1.0 });
        assert_eq!(composed_stability(&p).verdict, Verdict::Stable);
        let s = KernelSpec::sum(KernelSpec::Gaussian { eta: 1.0 }, KernelSpec::Laplacian { eta: 1.0 });
        assert_eq!(composed_stability(&s).verdict, Verdict::Stable);
        let weak = KernelSpec::LinearIir { k: IrKernelSpec::DampedCosine { alpha: 0.8, omega: 1.0 }, truncation: 50 };
        let p = KernelSpec::product(KernelSpec::Gaussian { eta: 1.0 }, weak);
        assert_eq!(composed_stability(&p).verdict, Verdict::Inconclusive);
        assert_eq!(composed_stability(&KernelSpec::nss(0.9, 1.0, None)).verdict, Verdict::Stable);
        let ct = KernelSpec::LinearCt {
            k: IrKernelSpec::StableSplineCt { beta: 1.0 },
            grid: LagGrid::new(0.1, 50).unwrap(),
        };
        assert_eq!(composed_stability(&ct).verdict, Verdict::Stable);
    }

    #[test]
    fn sign_probe() {
        assert_eq!(sign_probe_bound(&[1.0, -2.0, 3.0], 3), 6.0);
        assert_eq!(sign_probe_bound(&[0.0; 4], 4), 0.0);
        let geo: Vec<f64> = (1..=60).map(|k| 0.5f64.powi(k)).collect();
        assert!((sign_probe_bound(&geo, 60) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn verdict_json() {
        let v = certify(&KernelSpec::nss(0.9, 1.0, None));
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"verdict\":\"stable\""));
        let back: StabilityVerdict = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}

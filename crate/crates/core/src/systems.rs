//! Benchmark systems: the nonlinear FIR (S1), its sum with a random stable
//! linear system (S2), and the random linear system generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Number of past lags (beyond `u_t`) the S1 nonlinearity reads.
pub const S1_LAGS: usize = 6;

/// The nonlinear FIR of the benchmark; `x = [u_t, u_{t−1}, …, u_{t−6}]`.
pub fn s1_nonlinearity(x: &[f64]) -> f64 {
    let u = |k: usize| x[k];
    u(0) + 0.6 * u(1) + 0.35 * (u(2) + u(4)) - 0.25 * u(3).powi(2)
        + 0.2 * (u(5) + u(6))
        + 0.9 * u(3)
        + 0.25 * u(0) * u(1)
        + 0.75 * u(2).powi(3)
        - u(1) * u(2)
        + 0.5 * (u(0).powi(2) + u(0) * u(2) + u(1) * u(3))
}

fn noise(noise_variance: f64) -> Result<Normal<f64>> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance must be nonnegative, got {noise_variance}")));
    }
    Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn lags(u: &Signal, t: i64, n: usize) -> Vec<f64> {
    (0..n as i64).map(|k| u.at(t - k).expect("lag inside signal")).collect()
}

/// `y_t = f(x_t) + e_t` for every `t` with a full lag window.
pub fn simulate_s1(u: &Signal, noise_variance: f64, seed: u64) -> Result<Signal> {
    simulate_s2(u, &LinearSystem::zero(), noise_variance, seed)
}

/// `y_t = (θ ⊗ u)_t + f(x_t) + e_t`; outputs start once every lag of both
/// the linear and the nonlinear part lies inside `u`.
pub fn simulate_s2(u: &Signal, sys: &LinearSystem, noise_variance: f64, seed: u64) -> Result<Signal> {
    let dist = noise(noise_variance)?;
    let theta = sys.effective_response();
    let burn_in = S1_LAGS.max(theta.len().saturating_sub(1));
    let first = u.start_index() + burn_in as i64;
    if first > u.end_index() {
        return Err(Error::Boundary { requested: u.end_index(), first_valid: first });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (first..=u.end_index())
        .map(|t| {
            let x = lags(u, t, S1_LAGS + 1);
            let linear: f64 = theta.iter().enumerate().map(|(k, th)| th * u.at(t - k as i64).unwrap()).sum();
            linear + s1_nonlinearity(&x) + dist.sample(&mut rng)
        })
        .collect();
    Signal::discrete(samples, first)
}

/// A discrete-time linear system given by its (truncated) impulse response,
/// `impulse_response[k]` being the coefficient of lag `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub impulse_response: Vec<f64>,
    pub order: usize,
    /// Poles as `[re, im]`; conjugates are listed once, with `im ≥ 0`.
    pub poles: Vec<[f64; 2]>,
    pub zeros: Vec<[f64; 2]>,
}

impl LinearSystem {
    pub fn zero() -> Self {
        Self { impulse_response: vec![0.0], order: 0, poles: vec![], zeros: vec![] }
    }

    pub fn fir(impulse_response: Vec<f64>) -> Self {
        Self { impulse_response, order: 0, poles: vec![], zeros: vec![] }
    }

    pub fn l2_norm(&self) -> f64 {
        self.impulse_response.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn pole_moduli(&self) -> Vec<f64> {
        self.poles.iter().map(|p| p[0].hypot(p[1])).collect()
    }

    /// Impulse response without trailing zeros.
    pub fn effective_response(&self) -> &[f64] {
        let n = self.impulse_response.iter().rposition(|&v| v != 0.0).map_or(0, |k| k + 1);
        &self.impulse_response[..n]
    }
}

/// Multiplies polynomials in the delay operator, lowest degree first.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Real-coefficient polynomial `Π (1 − r q)` over the roots, conjugate pairs
/// expanded as `1 − 2 Re(r) q + |r|² q²`.
fn from_roots(pairs: &[[f64; 2]], reals: &[f64]) -> Vec<f64> {
    let mut p = vec![1.0];
    for r in pairs {
        p = poly_mul(&p, &[1.0, -2.0 * r[0], r[0] * r[0] + r[1] * r[1]]);
    }
    for &r in reals {
        p = poly_mul(&p, &[1.0, -r]);
    }
    p
}

fn disk_point(rng: &mut impl Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let phi = std::f64::consts::PI * rng.gen::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

/// Relative ℓ2 tail (as a norm ratio) below which the impulse response is cut.
pub const TAIL_TOLERANCE: f64 = 1e-8;
const SIMULATION_LENGTH: usize = 20_000;

/// Draws a strictly proper rational system of the given order: `order/2`
/// conjugate pole pairs uniform in the disk of radius `pole_radius` (plus a
/// real pole for odd orders), `order − 1` zeros uniform in the unit disk.
/// The impulse response is cut where the remaining ℓ2 tail falls below
/// [`TAIL_TOLERANCE`] of the total and rescaled to norm `target_l2`.
pub fn random_linear_system(order: usize, pole_radius: f64, target_l2: f64, seed: u64) -> Result<LinearSystem> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if !(pole_radius > 0.0 && pole_radius < 1.0) {
        return Err(Error::InvalidArgument(format!("pole radius must be in (0, 1), got {pole_radius}")));
    }
    if !(target_l2 > 0.0 && target_l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("target norm must be positive, got {target_l2}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pole_pairs: Vec<[f64; 2]> = (0..order / 2).map(|_| disk_point(&mut rng, pole_radius)).collect();
        let real_poles: Vec<f64> =
            (0..order % 2).map(|_| pole_radius * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let n_zeros = order - 1;
        let zero_pairs: Vec<[f64; 2]> = (0..n_zeros / 2).map(|_| disk_point(&mut rng, 1.0)).collect();
        let real_zeros: Vec<f64> = (0..n_zeros % 2).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();

        let den = from_roots(&pole_pairs, &real_poles);
        // one-step delay: strictly proper
        let num = poly_mul(&[0.0, 1.0], &from_roots(&zero_pairs, &real_zeros));

        let mut h = vec![0.0; SIMULATION_LENGTH];
        for k in 0..SIMULATION_LENGTH {
            let mut v = num.get(k).copied().unwrap_or(0.0);
            for j in 1..den.len().min(k + 1) {
                v -= den[j] * h[k - j];
            }
            h[k] = v;
        }
        let total: f64 = h.iter().map(|v| v * v).sum();
        if !total.is_finite() || total <= f64::MIN_POSITIVE {
            continue;
        }
        let mut tail = 0.0;
        let mut cut = h.len();
        for k in (0..h.len()).rev() {
            let next = tail + h[k] * h[k];
            if next > TAIL_TOLERANCE * TAIL_TOLERANCE * total {
                cut = k + 1;
                break;
            }
            tail = next;
        }
        if cut >= SIMULATION_LENGTH {
            continue;
        }
        h.truncate(cut);
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = target_l2 / norm;
        h.iter_mut().for_each(|v| *v *= scale);

        let mut poles = pole_pairs;
        poles.extend(real_poles.iter().map(|&r| [r, 0.0]));
        let mut zeros = zero_pairs;
        zeros.extend(real_zeros.iter().map(|&r| [r, 0.0]));
        return Ok(LinearSystem { impulse_response: h, order, poles, zeros });
    }
}

/// White Gaussian input of the given variance.
pub fn white_input(len: usize, variance: f64, start_index: i64, rng: &mut impl Rng) -> Result<Signal> {
    let dist = noise(variance)?;
    Signal::discrete((0..len).map(|_| dist.sample(rng)).collect(), start_index)
}

//! Log-space densities for the two Poisson-Kingman prior classes.
//!
//! The positive σ-stable density has no closed form for general σ. It is
//! evaluated from its alternating power series in `t^{-σ}`, summed in
//! sign/log-magnitude form, and falls back to Kanter's integral representation
//! when the series cancels too badly (small `t`) or does not converge.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock, PoisonError};

use crate::error::{PkError, Result};
use crate::quad;
use crate::real::{lit, log1mexp, Real};

/// Bounds on σ accepted at the API boundary; both evaluation routes degrade
/// outside them.
pub const SIGMA_MIN: f64 = 0.05;
pub const SIGMA_MAX: f64 = 0.95;

/// Number of series coefficients precomputed per parameter set.
pub const DEFAULT_MAX_TERMS: usize = 512;

/// Largest tolerated relative rounding error of a series sum, as bounded by
/// the running error estimate; beyond it the quadrature takes over.
const MAX_SERIES_ERROR: f64 = 1e-9;

const KANTER_EPS: f64 = 1e-12;

/// Spacing in `log t` of the grid on which density values are memoised.
pub(crate) const GRID_STEP: f64 = 0.25 / (1u64 << 20) as f64;

/// Point `t = exp(key * GRID_STEP)` of the memoisation grid.
pub(crate) fn grid_point<T: Real>(key: i64) -> T {
    lit((key as f64 * GRID_STEP).exp())
}

#[derive(Debug)]
struct SeriesCoefficients<T> {
    // log(Gamma(sigma*j + 1) / j!) for j = 0..len
    log_gamma_ratio: Vec<T>,
    // (-1)^{j+1} sin(pi sigma j)
    signed_sin: Vec<T>,
    mode: OnceLock<T>,
    mode_value: OnceLock<T>,
    grid: Mutex<HashMap<i64, T>>,
}

impl<T: Real> SeriesCoefficients<T> {
    fn new(sigma: T, len: usize) -> Self {
        let mut log_gamma_ratio = Vec::with_capacity(len);
        let mut signed_sin = Vec::with_capacity(len);
        let mut log_fact = T::zero();
        for j in 0..len {
            let jt = T::from_usize(j).unwrap();
            if j > 0 {
                log_fact += jt.ln();
            }
            log_gamma_ratio.push((sigma * jt + T::one()).ln_gamma() - log_fact);
            let sign = if j % 2 == 1 { T::one() } else { -T::one() };
            signed_sin.push(sign * (T::PI() * sigma * jt).sin());
        }
        SeriesCoefficients {
            log_gamma_ratio,
            signed_sin,
            mode: OnceLock::new(),
            mode_value: OnceLock::new(),
            grid: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, sigma: T, j: usize) -> (T, T) {
        if j < self.log_gamma_ratio.len() {
            return (self.log_gamma_ratio[j], self.signed_sin[j]);
        }
        let jt = T::from_usize(j).unwrap();
        let lg = (sigma * jt + T::one()).ln_gamma() - (jt + T::one()).ln_gamma();
        let sign = if j % 2 == 1 { T::one() } else { -T::one() };
        (lg, sign * (T::PI() * sigma * jt).sin())
    }
}

/// Stability index of a positive σ-stable law, optionally carrying the
/// rational form `u/v` in lowest terms.
#[derive(Debug, Clone)]
pub struct SigmaStableParams<T> {
    sigma: T,
    rational: Option<(u32, u32)>,
    coeffs: Arc<SeriesCoefficients<T>>,
}

impl<T: Real> SigmaStableParams<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma > lit(SIGMA_MIN) && sigma < lit(SIGMA_MAX)) {
            return Err(PkError::Domain(format!(
                "sigma must lie in ({SIGMA_MIN}, {SIGMA_MAX}), got {sigma}"
            )));
        }
        Ok(SigmaStableParams {
            sigma,
            rational: None,
            coeffs: Arc::new(SeriesCoefficients::new(sigma, DEFAULT_MAX_TERMS)),
        })
    }

    /// σ = u/v with `u < v` coprime.
    pub fn rational(u: u32, v: u32) -> Result<Self> {
        if u == 0 || u >= v {
            return Err(PkError::Domain(format!("need 0 < u < v, got {u}/{v}")));
        }
        if gcd(u, v) != 1 {
            return Err(PkError::Domain(format!("{u}/{v} is not in lowest terms")));
        }
        let mut p = Self::new(T::from_u32(u).unwrap() / T::from_u32(v).unwrap())?;
        p.rational = Some((u, v));
        Ok(p)
    }

    #[inline]
    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn rational_form(&self) -> Option<(u32, u32)> {
        self.rational
    }

    pub fn is_one_half(&self) -> bool {
        self.rational == Some((1, 2)) || self.sigma == lit(0.5)
    }

    /// Density with the default tolerance and term budget.
    pub fn log_density(&self, t: T) -> Result<T> {
        log_f_sigma(t, self, T::epsilon(), DEFAULT_MAX_TERMS)
    }

    /// Location of the maximum of the (unimodal) density, computed once by
    /// golden-section search in `log t`.
    pub fn mode(&self) -> Result<T> {
        if let Some(m) = self.coeffs.mode.get() {
            return Ok(*m);
        }
        let m = self.find_mode()?;
        Ok(*self.coeffs.mode.get_or_init(|| m))
    }

    /// `log f_σ` at the mode.
    pub fn log_density_at_mode(&self) -> Result<T> {
        if let Some(v) = self.coeffs.mode_value.get() {
            return Ok(*v);
        }
        let v = self.log_density(self.mode()?)?;
        Ok(*self.coeffs.mode_value.get_or_init(|| v))
    }

    /// `log f_σ` at [`grid_point`]`(key)`, memoised and shared by every clone.
    pub(crate) fn log_density_at_key(&self, key: i64) -> Result<T> {
        let cached = self
            .coeffs
            .grid
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .get(&key)
            .copied();
        if let Some(v) = cached {
            return Ok(v);
        }
        let v = self.log_density(grid_point(key))?;
        self.coeffs
            .grid
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(key, v);
        Ok(v)
    }

    fn find_mode(&self) -> Result<T> {
        let g = (lit::<T>(5.0).sqrt() - T::one()) / lit(2.0);
        let (mut a, mut b) = (lit::<T>(-12.0), lit::<T>(12.0));
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.log_density(c.exp())?;
        let mut fd = self.log_density(d.exp())?;
        let tol = lit::<T>(1e-9).max(T::epsilon() * lit(100.0));
        while b - a > tol {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.log_density(c.exp())?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.log_density(d.exp())?;
            }
        }
        Ok((lit::<T>(0.5) * (a + b)).exp())
    }
}

impl<T: PartialEq> PartialEq for SigmaStableParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sigma == other.sigma && self.rational == other.rational
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Parameters of the −logBeta(a, b) class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBetaParams<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> LogBetaParams<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        if !(a > T::zero() && a.is_finite()) {
            return Err(PkError::Domain(format!("logBeta a must be > 0, got {a}")));
        }
        if !(b >= T::one() && b.is_finite()) {
            return Err(PkError::Domain(format!("logBeta b must be >= 1, got {b}")));
        }
        Ok(LogBetaParams { a, b })
    }
}

/// Tilting function `h` of the mixing distribution `γ(dt) ∝ h(t) f(t) dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TiltFunction<T> {
    /// `h(t) ∝ t^{-θ}`.
    PitmanYor {
        theta: T,
    },
    NormalizedStable,
    /// `h(t) ∝ exp(-τ^{1/σ} t)`.
    Ngg {
        tau: T,
    },
    /// `h ≡ 1`, used by the −logBeta class.
    LogBetaUnit,
}

impl<T: Real> TiltFunction<T> {
    pub fn validate(&self, sigma: T) -> Result<()> {
        match *self {
            TiltFunction::PitmanYor { theta } if !(theta > -sigma && theta.is_finite()) => Err(
                PkError::Domain(format!("Pitman-Yor needs theta > -sigma, got {theta}")),
            ),
            TiltFunction::Ngg { tau } if !(tau > T::zero() && tau.is_finite()) => {
                Err(PkError::Domain(format!("NGG needs tau > 0, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    /// Exponential tilt rate `τ^{1/σ}` for NGG, zero otherwise.
    pub fn exp_tilt(&self, sigma: T) -> T {
        match *self {
            TiltFunction::Ngg { tau } => tau.powf(sigma.recip()),
            _ => T::zero(),
        }
    }
}

fn check_positive<T: Real>(x: T, what: &str) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(PkError::Domain(format!(
            "{what} must be positive and finite, got {x}"
        )))
    }
}

/// Log-density of the positive σ-stable law with Laplace transform
/// `exp(-λ^σ)`.
///
/// Partial sums terminate once the term envelope is decreasing and below
/// `tol` times the running sum. If the bounded rounding error of the sum
/// is too large relative to it, or `max_terms` is exhausted, the Kanter
/// integral is used.
pub fn log_f_sigma<T: Real>(t: T, p: &SigmaStableParams<T>, tol: T, max_terms: usize) -> Result<T> {
    check_positive(t, "stable density argument")?;
    if !(tol > T::zero()) {
        return Err(PkError::Domain(format!(
            "series tolerance must be > 0, got {tol}"
        )));
    }
    match series(t, p, tol, max_terms) {
        Some(v) => Ok(v),
        None => log_f_sigma_quadrature(t, p).map_err(|e| {
            PkError::Evaluation(format!(
                "stable density at t={t}, sigma={}: series unusable and quadrature failed ({e})",
                p.sigma
            ))
        }),
    }
}

/// Series alone, `None` where it does not converge to `tol` within
/// `max_terms` or its rounding-error bound exceeds `1e-9` relative.
pub fn log_f_sigma_series<T: Real>(
    t: T,
    p: &SigmaStableParams<T>,
    tol: T,
    max_terms: usize,
) -> Option<T> {
    if !(t > T::zero() && t.is_finite() && tol > T::zero()) {
        return None;
    }
    series(t, p, tol, max_terms)
}

fn series<T: Real>(t: T, p: &SigmaStableParams<T>, tol: T, max_terms: usize) -> Option<T> {
    let sigma = p.sigma;
    let log_t = t.ln();
    let step = -sigma * log_t;
    let eps = T::epsilon();
    let max_err = lit::<T>(MAX_SERIES_ERROR).max(eps * lit(1e4));
    let log_tol = tol.ln();
    let pi_sigma = T::PI() * sigma;

    // sum = acc * exp(scale); Neumaier compensation kept in the same scale
    let mut scale = T::neg_infinity();
    let mut acc = T::zero();
    let mut comp = T::zero();
    // bound on the accumulated rounding error, same scale; a term's log
    // magnitude is only known to eps times its size, and sin(πσj) to eps·πσj
    let mut err = T::zero();
    let mut prev_env = T::neg_infinity();
    for j in 1..=max_terms {
        let (lg, ssin) = p.coeffs.get(sigma, j);
        let jt = T::from_usize(j).unwrap();
        let env = lg + jt * step - log_t;
        if env > scale {
            let r = (scale - env).exp();
            acc *= r;
            comp *= r;
            err *= r;
            scale = env;
        }
        let mag = (env - scale).exp();
        let log_size = lg.abs() + (jt * step).abs() + log_t.abs() + lit(2.0);
        err += mag * eps * (ssin.abs() * log_size + pi_sigma * jt);
        let term = ssin * mag;
        let s = acc + term;
        if acc.abs() >= term.abs() {
            comp += (acc - s) + term;
        } else {
            comp += (term - s) + acc;
        }
        acc = s;

        let total = acc + comp;
        if env < prev_env && total > T::zero() {
            let (lg_next, _) = p.coeffs.get(sigma, j + 1);
            let env_next = lg_next + T::from_usize(j + 1).unwrap() * step - log_t;
            if env_next < env && env_next < log_tol + scale + total.ln() {
                if err > max_err * total {
                    return None;
                }
                return Some(scale + total.ln() - T::PI().ln());
            }
        }
        prev_env = env;
    }
    None
}

// Taylor coefficients of log(sin x / x) in x², x⁴, ..., x¹⁸.
const LOG_SINC_COEFFS: [f64; 9] = [
    -1.0 / 6.0,
    -1.0 / 180.0,
    -1.0 / 2835.0,
    -1.0 / 37800.0,
    -1.0 / 467_775.0,
    -691.0 / 3_831_077_250.0,
    -2.0 / 127_702_575.0,
    -3617.0 / 2_605_132_530_000.0,
    -43867.0 / 350_813_659_321_125.0,
];

/// `log(sin x / x)` for `0 < x < π`, accurate in relative terms near zero.
#[inline]
fn log_sinc<T: Real>(x: T) -> T {
    if x < lit(0.25) {
        let x2 = x * x;
        let mut acc = T::zero();
        for &c in LOG_SINC_COEFFS.iter().rev() {
            acc = acc * x2 + lit(c);
        }
        acc * x2
    } else {
        (x.sin() / x).ln()
    }
}

/// `log A(z) - log A(0+)`: a sum of `log sinc` terms, so it is computed
/// without cancellation even when it is tiny.
pub fn log_zolotarev_excess<T: Real>(z: T, sigma: T) -> T {
    let one = T::one();
    let pi = T::PI();
    let ls_pi_z = if z > lit(0.5) {
        // sin(πz) = sin(π(1-z)) keeps precision near z = 1
        (pi * (one - z)).sin().ln() - (pi * z).ln()
    } else {
        log_sinc(pi * z)
    };
    sigma / (one - sigma) * log_sinc(sigma * pi * z) + log_sinc((one - sigma) * pi * z)
        - ls_pi_z / (one - sigma)
}

/// `log A(z)`.
pub fn log_zolotarev_a<T: Real>(z: T, sigma: T) -> T {
    log_zolotarev_a_at_zero(sigma) + log_zolotarev_excess(z, sigma)
}

/// `A(z) = sin(σπz)^{σ/(1-σ)} sin((1-σ)πz) / sin(πz)^{1/(1-σ)}` on (0, 1).
pub fn zolotarev_a<T: Real>(z: T, p: &SigmaStableParams<T>) -> Result<T> {
    if !(z > T::zero() && z < T::one()) {
        return Err(PkError::Domain(format!(
            "Zolotarev argument must be in (0,1), got {z}"
        )));
    }
    Ok(log_zolotarev_a(z, p.sigma).exp())
}

/// `log A(0+) = (σ/(1-σ)) log σ + log(1-σ)`.
pub fn log_zolotarev_a_at_zero<T: Real>(sigma: T) -> T {
    sigma / (T::one() - sigma) * sigma.ln() + (T::one() - sigma).ln()
}

/// The Kanter kernel `z ↦ A(z) exp(-c A(z))` on (0,1), scaled by its
/// maximum. With `u = log(c A(z))` the log kernel is `u - e^u - log c`,
/// maximised at `u = 0` when that is reachable and at `z → 0` otherwise.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KanterKernel<T> {
    sigma: T,
    // log(c A(0+))
    u0: T,
    // max over z of (u - e^u)
    peak: T,
    peak_z: T,
}

impl<T: Real> KanterKernel<T> {
    pub(crate) fn new(log_c: T, sigma: T) -> Self {
        let u0 = log_c + log_zolotarev_a_at_zero(sigma);
        if u0 >= T::zero() {
            KanterKernel {
                sigma,
                u0,
                peak: u0 - u0.exp(),
                peak_z: T::zero(),
            }
        } else {
            KanterKernel {
                sigma,
                u0,
                peak: -T::one(),
                peak_z: zolotarev_excess_inverse(-u0, sigma),
            }
        }
    }

    /// `log A(z) - c A(z)` minus its maximum; always `≤ 0`.
    #[inline]
    pub(crate) fn log_scaled(&self, z: T) -> T {
        let d = log_zolotarev_excess(z, self.sigma);
        let v = if self.peak_z == T::zero() {
            d - self.u0.exp() * d.exp_m1()
        } else {
            let u = self.u0 + d;
            -(u.exp_m1() - u)
        };
        if v.is_nan() {
            T::neg_infinity()
        } else {
            v
        }
    }

    /// Maximum of `log A(z) - c A(z)` over z, given `log c`.
    pub(crate) fn log_peak(&self, log_c: T) -> T {
        self.peak - log_c
    }

    pub(crate) fn peak_z(&self) -> T {
        self.peak_z
    }

    /// Breakpoints on (0,1) concentrating resolution near both ends and
    /// around the peak.
    pub(crate) fn breaks(&self) -> Vec<T> {
        let eps = lit::<T>(KANTER_EPS);
        let one = T::one();
        let mut b: Vec<T> = vec![T::zero()];
        for &x in &[1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5] {
            b.push(lit(x));
        }
        for &x in &[0.25, 0.1, 0.05, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8] {
            b.push(one - lit(x));
        }
        b.push(one);
        let peak = self.peak_z;
        if peak > eps && peak < one - eps {
            let gap = one - peak;
            for &f in &[1.0, 2.0, 0.5] {
                b.push(one - gap * lit(f));
            }
            for &f in &[0.5, 2.0] {
                b.push(peak * lit(f));
            }
        } else {
            // peak at zero with width ~ 1/sqrt(c A(0+))
            let width = (-lit::<T>(0.5) * self.u0).exp();
            for &f in &[0.5, 1.0, 2.0, 4.0, 8.0] {
                b.push(width * lit(f));
            }
        }
        b.retain(|x| *x >= T::zero() && *x <= one && x.is_finite());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup();
        b
    }
}

/// Solves `log A(z) - log A(0+) = target` (target > 0) by bisection; `A` is
/// increasing on (0,1).
fn zolotarev_excess_inverse<T: Real>(target: T, sigma: T) -> T {
    let mut lo = T::zero();
    let mut hi = T::one();
    for _ in 0..200 {
        let mid = lit::<T>(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_zolotarev_excess(mid, sigma) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lit::<T>(0.5) * (lo + hi)
}

/// Kanter's integral representation:
/// `f(t) = σ/(1-σ) t^{-1/(1-σ)} ∫₀¹ A(z) exp(-t^{-σ/(1-σ)} A(z)) dz`,
/// evaluated with the integrand scaled by its peak so that densities far
/// below the smallest double remain representable in log space.
pub fn log_f_sigma_quadrature<T: Real>(t: T, p: &SigmaStableParams<T>) -> Result<T> {
    check_positive(t, "stable density argument")?;
    let sigma = p.sigma;
    let one = T::one();
    let log_c = -sigma / (one - sigma) * t.ln();
    let kernel = KanterKernel::new(log_c, sigma);
    let breaks = kernel.breaks();
    let r = quad::integrate(
        |z| kernel.log_scaled(z).exp(),
        &breaks,
        T::quad_tol(),
        T::zero(),
        2000,
    )?;
    if !(r.value > T::zero()) {
        return Err(PkError::Evaluation(format!(
            "Kanter integral vanished at t={t}, sigma={sigma}"
        )));
    }
    // t^{-1/(1-σ)} / c = 1/t
    Ok((sigma / (one - sigma)).ln() - t.ln() / (one - sigma)
        + kernel.log_peak(log_c)
        + r.value.ln())
}

/// `log ρ_σ(x) = log(σ/Γ(1-σ)) - (σ+1) log x`.
pub fn log_levy_sigma<T: Real>(x: T, p: &SigmaStableParams<T>) -> Result<T> {
    check_positive(x, "Levy density argument")?;
    let s = p.sigma;
    Ok(s.ln() - (T::one() - s).ln_gamma() - (s + T::one()) * x.ln())
}

fn log_beta_norm<T: Real>(p: &LogBetaParams<T>) -> T {
    (p.a + p.b).ln_gamma() - p.a.ln_gamma() - p.b.ln_gamma()
}

/// Density of `-log Y`, `Y ~ Beta(a, b)`.
pub fn log_f_logbeta<T: Real>(t: T, p: &LogBetaParams<T>) -> Result<T> {
    check_positive(t, "logBeta density argument")?;
    let tail = if p.b == T::one() {
        T::zero()
    } else {
        (p.b - T::one()) * log1mexp(t)
    };
    Ok(log_beta_norm(p) - p.a * t + tail)
}

/// `log ρ(x)` for `ρ(x) = e^{-ax}(1-e^{-bx}) / (x(1-e^{-x}))`.
pub fn log_levy_logbeta<T: Real>(x: T, p: &LogBetaParams<T>) -> Result<T> {
    check_positive(x, "Levy density argument")?;
    Ok(-p.a * x + log_ratio_1mexp(x, p.b) - x.ln())
}

/// `log[(1-e^{-bx}) / (1-e^{-x})]`, tending to `log b` as `x → 0`.
pub(crate) fn log_ratio_1mexp<T: Real>(x: T, b: T) -> T {
    if x < lit(1e-6) {
        // ratio = b (1 - (b-1) x / 2 + O(x²))
        b.ln() + (-(b - T::one()) * x * lit(0.5)).ln_1p()
    } else {
        log1mexp(b * x) - log1mexp(x)
    }
}

/// Unnormalised `log h(t)`; additive constants are dropped.
pub fn log_h<T: Real>(t: T, tilt: &TiltFunction<T>, p: &SigmaStableParams<T>) -> T {
    match *tilt {
        TiltFunction::PitmanYor { theta } => -theta * t.ln(),
        TiltFunction::NormalizedStable | TiltFunction::LogBetaUnit => T::zero(),
        TiltFunction::Ngg { .. } => -tilt.exp_tilt(p.sigma) * t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn closed_half(t: f64) -> f64 {
        -1.5 * t.ln() - 0.25 / t - (2.0 * std::f64::consts::PI.sqrt()).ln()
    }

    fn half() -> SigmaStableParams<f64> {
        SigmaStableParams::new(0.5).unwrap()
    }

    #[test]
    fn series_matches_closed_form_at_one_half() {
        let p = half();
        let v = p.log_density(1.0).unwrap();
        assert_relative_eq!(v.exp(), 0.219_695_644_733_861_2, max_relative = 1e-10);
        let v = p.log_density(0.25).unwrap();
        assert_relative_eq!(v.exp(), 0.830_24, max_relative = 1e-4);
        assert_relative_eq!(v, closed_half(0.25), epsilon = 1e-10);
    }

    #[test]
    fn series_and_quadrature_agree_at_sigma_03() {
        let p = SigmaStableParams::new(0.3).unwrap();
        let s: f64 = p.log_density(1.0).unwrap();
        let q = log_f_sigma_quadrature(1.0, &p).unwrap();
        assert!((s - q).abs() < 1e-8, "{s} vs {q}");
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let p = half();
        for &t in &[1.0, 2.0, 0.05, 30.0] {
            let q = log_f_sigma_quadrature(t, &p).unwrap();
            assert!(
                (q - closed_half(t)).abs() < 1e-6,
                "t={t}: {q} vs {}",
                closed_half(t)
            );
        }
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        for &s in &[0.3, 0.5, 0.7, 0.9] {
            let p = SigmaStableParams::<f64>::new(s).unwrap();
            for &t in &[1e-4, 1e-2, 1e4] {
                let v: f64 = p.log_density(t).unwrap();
                assert!(v.is_finite(), "sigma={s} t={t} -> {v}");
            }
        }
        let v = half().log_density(1e-4).unwrap();
        assert!((v - closed_half(1e-4)).abs() < 1e-6 * closed_half(1e-4).abs());
    }

    #[test]
    fn zolotarev_values() {
        let p = half();
        assert_relative_eq!(zolotarev_a(0.5, &p).unwrap(), 0.5, max_relative = 1e-14);
        // limit at 0 is σ^{σ/(1-σ)} (1-σ) = 1/4 for σ = 1/2
        assert_relative_eq!(zolotarev_a(1e-12, &p).unwrap(), 0.25, max_relative = 1e-10);
        assert!(zolotarev_a(0.9, &p).unwrap() > zolotarev_a(0.5, &p).unwrap());
        assert!(zolotarev_a(0.0, &p).is_err());
        assert!(zolotarev_a(1.0, &p).is_err());
    }

    #[test]
    fn zolotarev_is_increasing() {
        for &s in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..2000 {
                let z = i as f64 / 2000.0;
                let la = log_zolotarev_a(z, s);
                assert!(la >= prev - 1e-12, "sigma={s} z={z}");
                prev = la;
            }
        }
    }

    #[test]
    fn levy_sigma_values() {
        let p = half();
        let l1 = log_levy_sigma(1.0, &p).unwrap();
        assert_relative_eq!(l1.exp(), 0.282_094_791_773_878_1, max_relative = 1e-12);
        let l4 = log_levy_sigma(4.0, &p).unwrap();
        assert_relative_eq!(l4, l1 - 1.5 * 4f64.ln(), epsilon = 1e-13);
        assert!(log_levy_sigma(0.0, &p).is_err());
    }

    #[test]
    fn logbeta_densities() {
        let p = LogBetaParams::new(1.0, 1.0).unwrap();
        assert_relative_eq!(log_f_logbeta(0.7, &p).unwrap(), -0.7, epsilon = 1e-14);
        let p = LogBetaParams::new(2.0, 1.0).unwrap();
        assert_relative_eq!(
            log_f_logbeta(0.5, &p).unwrap(),
            2f64.ln() - 1.0,
            epsilon = 1e-14
        );
        assert!(log_f_logbeta(-1.0, &p).is_err());

        let g = LogBetaParams::new(1.0, 1.0).unwrap();
        assert_relative_eq!(log_levy_logbeta(1.0, &g).unwrap(), -1.0, epsilon = 1e-14);

        let p = LogBetaParams::new(1.0, 2.0).unwrap();
        let x: f64 = 1e-9;
        let rho_x = (log_levy_logbeta(x, &p).unwrap() + x.ln()).exp();
        assert_relative_eq!(rho_x, 2.0, max_relative = 1e-8);

        let p = LogBetaParams::new(2.0, 3.0).unwrap();
        let x: f64 = 0.5;
        let naive = ((-2.0 * x).exp() * (1.0 - (-3.0 * x).exp()) / (x * (1.0 - (-x).exp()))).ln();
        assert_relative_eq!(log_levy_logbeta(x, &p).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn tilt_functions() {
        let p = half();
        assert_eq!(log_h(3.0, &TiltFunction::NormalizedStable, &p), 0.0);
        let py = TiltFunction::PitmanYor { theta: 10.0 };
        assert_relative_eq!(log_h(2.0, &py, &p), -10.0 * 2f64.ln());
        assert_relative_eq!(log_h(3.0, &TiltFunction::Ngg { tau: 1.0 }, &p), -3.0);
        assert!(TiltFunction::PitmanYor { theta: -0.6 }
            .validate(0.5)
            .is_err());
        assert!(TiltFunction::Ngg { tau: 0.0 }.validate(0.5).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(SigmaStableParams::<f64>::new(0.02).is_err());
        assert!(SigmaStableParams::<f64>::new(1.0).is_err());
        assert!(SigmaStableParams::<f64>::rational(2, 4).is_err());
        assert!(SigmaStableParams::<f64>::rational(3, 2).is_err());
        let p = SigmaStableParams::<f64>::rational(1, 3).unwrap();
        assert_eq!(p.rational_form(), Some((1, 3)));
        assert!(LogBetaParams::new(1.0, 0.5).is_err());
        assert!(LogBetaParams::new(0.0, 2.0).is_err());
        assert!(log_f_sigma(1.0, &half(), 0.0, 10).is_err());
    }

    #[test]
    fn single_precision_series() {
        let p = SigmaStableParams::<f32>::new(0.5).unwrap();
        let v = p.log_density(1.0).unwrap();
        assert!((v - closed_half(1.0) as f32).abs() < 1e-4);
    }
}

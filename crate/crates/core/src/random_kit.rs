//! Non-uniform variate generation for the sampler and the forward simulator.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PkError, Result};
use crate::model::PriorSpec;
use crate::real::{lit, log1mexp, Real};
use crate::stable_math::{
    grid_point, log_f_logbeta, log_f_sigma, log_ratio_1mexp, log_zolotarev_a, KanterKernel,
    LogBetaParams, SigmaStableParams, DEFAULT_MAX_TERMS, GRID_STEP,
};

/// Cap on proposals for every rejection loop.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Cells in the tabulated inverse CDF of the generic new-weight sampler.
pub const INVERSE_CDF_CELLS: usize = 512;

/// Seedable stream with independent, reproducible substreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream `k` of the same seed. Substreams never overlap the parent or
    /// each other.
    pub fn substream(&self, k: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(k.wrapping_add(1));
        RngStream {
            seed: self.seed,
            inner,
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Positive σ-stable draw with Laplace transform `exp(-λ^σ)` (Kanter's
/// representation: `(A(U)/E)^{(1-σ)/σ}`).
pub fn sample_positive_stable<T: Real, R: rand::Rng + ?Sized>(
    p: &SigmaStableParams<T>,
    rng: &mut R,
) -> T {
    let sigma = p.sigma();
    loop {
        let u = T::open01(rng);
        let e = T::exp1(rng);
        let s = ((T::one() - sigma) / sigma * (log_zolotarev_a(u, sigma) - e.ln())).exp();
        if s > T::zero() && s.is_finite() {
            return s;
        }
    }
}

fn naive_tilted<T: Real, R: rand::Rng + ?Sized>(
    p: &SigmaStableParams<T>,
    lambda: T,
    rng: &mut R,
) -> Result<T> {
    for _ in 0..MAX_REJECTIONS {
        let s = sample_positive_stable(p, rng);
        // accept with probability exp(-λ s)
        if T::exp1(rng) >= lambda * s {
            return Ok(s);
        }
    }
    Err(PkError::Sampling(format!(
        "tilted stable rejection exceeded {MAX_REJECTIONS} proposals (lambda={lambda})"
    )))
}

/// Draw with density `∝ e^{-λt} f_σ(t)`.
///
/// For `λ^σ ≤ 2` a stable proposal is accepted with probability `e^{-λt}`.
/// Beyond that the law is split into `m = ⌈λ^σ⌉` infinitely-divisible pieces,
/// each a tilted stable with `λ'^σ = λ^σ/m ≤ 1` scaled by `m^{-1/σ}`, so the
/// expected number of proposals stays below `e` per piece.
pub fn sample_tilted_stable<T: Real, R: rand::Rng + ?Sized>(
    p: &SigmaStableParams<T>,
    lambda: T,
    rng: &mut R,
) -> Result<T> {
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(PkError::Domain(format!("tilt must be >= 0, got {lambda}")));
    }
    if lambda == T::zero() {
        return Ok(sample_positive_stable(p, rng));
    }
    let sigma = p.sigma();
    let mass = lambda.powf(sigma);
    if mass <= lit(2.0) {
        return naive_tilted(p, lambda, rng);
    }
    let m = mass.ceil();
    let scale = m.powf(-sigma.recip());
    let piece_lambda = lambda * scale;
    let pieces = m.to_usize().unwrap();
    let mut total = T::zero();
    for _ in 0..pieces {
        total += naive_tilted(p, piece_lambda, rng)?;
    }
    Ok(total * scale)
}

/// Gamma draw with the given shape and rate.
pub fn sample_gamma<T: Real, R: rand::Rng + ?Sized>(shape: T, rate: T, rng: &mut R) -> T {
    debug_assert!(shape > T::zero() && rate > T::zero());
    T::std_gamma(shape, rng) / rate
}

/// Inverse-gamma draw: reciprocal of a gamma with the same shape, rate = scale.
pub fn sample_inverse_gamma<T: Real, R: rand::Rng + ?Sized>(shape: T, scale: T, rng: &mut R) -> T {
    debug_assert!(shape > T::zero() && scale > T::zero());
    scale / T::std_gamma(shape, rng)
}

/// Exact i.i.d. draw of a new size-biased weight given the surplus for the
/// σ = 1/2 class: `G ~ Gamma(3/4, 1)`, `IG ~ InvGamma(1/4, v^{-2}/64)`, and
/// the weight is `v √G / (√G + √IG)`.
///
/// Other σ return [`PkError::Capability`]; use
/// [`sample_new_weight_stable`] for them.
pub fn sample_new_weight_exact<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    p: &SigmaStableParams<T>,
    rng: &mut R,
) -> Result<T> {
    if !(surplus > T::zero() && surplus.is_finite()) {
        return Err(PkError::Domain(format!(
            "surplus must be > 0, got {surplus}"
        )));
    }
    if !p.is_one_half() {
        return Err(PkError::Capability(format!(
            "closed-form new-weight sampling is only available for sigma = 1/2 (got {}); \
             use the envelope sampler",
            p.sigma()
        )));
    }
    let scale = (lit::<T>(64.0) * surplus * surplus).recip();
    for _ in 0..100 {
        let g = sample_gamma(lit(0.75), T::one(), rng).sqrt();
        let ig = sample_inverse_gamma(lit(0.25), scale, rng).sqrt();
        let s = surplus * (g / (g + ig));
        let rest = surplus * (ig / (g + ig));
        if s > T::zero() && rest > T::zero() && s < surplus {
            return Ok(s);
        }
    }
    Err(PkError::Sampling(format!(
        "new weight kept hitting the support boundary (surplus={surplus})"
    )))
}

/// Tabulated inverse CDF of the new-weight density
/// `∝ f_ρ(v-s) ρ(s) s` on `(0, v)`.
#[derive(Debug, Clone)]
pub struct NewWeightTable<T> {
    surplus: T,
    // s = surplus * w^power, w in (0, 1)
    power: T,
    nodes: Vec<T>,
    cdf: Vec<T>,
}

impl<T: Real> NewWeightTable<T> {
    /// Builds the table. For the stable class the coordinate
    /// `s = v w^{1/(1-σ)}` absorbs the `s^{-σ}` singularity at zero; nodes
    /// are Chebyshev-spaced so both ends of `(0, 1)` are resolved.
    pub fn build(surplus: T, prior: &PriorSpec<T>) -> Result<Self> {
        if !(surplus > T::zero() && surplus.is_finite()) {
            return Err(PkError::Domain(format!(
                "surplus must be > 0, got {surplus}"
            )));
        }
        let n = INVERSE_CDF_CELLS;
        let power = match prior {
            PriorSpec::StableClass { params, .. } => (T::one() - params.sigma()).recip(),
            PriorSpec::LogBetaClass { .. } => T::one(),
        };
        let log_density = |w: T| -> Result<T> {
            if w <= T::zero() {
                return match prior {
                    PriorSpec::StableClass { params, .. } => {
                        log_f_sigma(surplus, params, T::epsilon(), DEFAULT_MAX_TERMS)
                    }
                    PriorSpec::LogBetaClass { params } => {
                        Ok(log_f_logbeta(surplus, params)? + params.b.ln())
                    }
                };
            }
            let s = surplus * w.powf(power);
            let rest = surplus - s;
            if w >= T::one() || rest <= T::zero() {
                return Ok(match prior {
                    PriorSpec::LogBetaClass { params } if params.b == T::one() => {
                        logbeta_weight_log_density(s.min(surplus), surplus, params)
                    }
                    _ => T::neg_infinity(),
                });
            }
            match prior {
                PriorSpec::StableClass { params, .. } => {
                    log_f_sigma(rest, params, T::epsilon(), DEFAULT_MAX_TERMS)
                }
                PriorSpec::LogBetaClass { params } => {
                    Ok(logbeta_weight_log_density(s, surplus, params))
                }
            }
        };

        let pi = T::PI();
        let nt = T::from_usize(2 * n).unwrap();
        let half = lit::<T>(0.5);
        let mut pts = Vec::with_capacity(2 * n + 1);
        let mut vals = Vec::with_capacity(2 * n + 1);
        for k in 0..=2 * n {
            let w = half * (T::one() - (pi * T::from_usize(k).unwrap() / nt).cos());
            let ld = log_density(w)?;
            if ld.is_nan() || ld == T::infinity() {
                return Err(PkError::Evaluation(format!(
                    "new-weight density is {ld} at w={w} (surplus={surplus})"
                )));
            }
            pts.push(w);
            vals.push(ld);
        }
        let peak = vals.iter().copied().fold(T::neg_infinity(), T::max);
        if !peak.is_finite() {
            return Err(PkError::Evaluation(format!(
                "new-weight density vanishes on the whole grid (surplus={surplus})"
            )));
        }
        let mut nodes = Vec::with_capacity(n + 1);
        let mut cdf = Vec::with_capacity(n + 1);
        nodes.push(pts[0]);
        cdf.push(T::zero());
        let mut acc = T::zero();
        let six = lit::<T>(6.0);
        let four = lit::<T>(4.0);
        for j in 0..n {
            let (a, m, b) = (2 * j, 2 * j + 1, 2 * j + 2);
            // Simpson on a non-uniform cell using the midpoint value at the
            // Chebyshev interior node; the node sits close enough to the cell
            // centre for the 1-4-1 rule to remain second-order accurate.
            let width = pts[b] - pts[a];
            let fa = (vals[a] - peak).exp();
            let fm = (vals[m] - peak).exp();
            let fb = (vals[b] - peak).exp();
            acc += width * (fa + four * fm + fb) / six;
            nodes.push(pts[b]);
            cdf.push(acc);
        }
        if !(acc > T::zero() && acc.is_finite()) {
            return Err(PkError::Evaluation(format!(
                "new-weight density is not integrable (surplus={surplus})"
            )));
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Ok(NewWeightTable {
            surplus,
            power,
            nodes,
            cdf,
        })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<T> {
        for _ in 0..1000 {
            let u = T::open01(rng);
            let j = self
                .cdf
                .partition_point(|c| *c < u)
                .clamp(1, self.cdf.len() - 1);
            let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
            let (w0, w1) = (self.nodes[j - 1], self.nodes[j]);
            let w = if c1 > c0 {
                w0 + (u - c0) / (c1 - c0) * (w1 - w0)
            } else {
                w0
            };
            let s = self.surplus * w.powf(self.power);
            if s > T::zero() && s < self.surplus {
                return Ok(s);
            }
        }
        Err(PkError::Sampling(format!(
            "inverse-CDF draws kept hitting the support boundary (surplus={})",
            self.surplus
        )))
    }

    /// CDF of the tabulated law at `s`, linear between nodes.
    pub fn cdf(&self, s: T) -> T {
        if s <= T::zero() {
            return T::zero();
        }
        if s >= self.surplus {
            return T::one();
        }
        let w = (s / self.surplus).powf(self.power.recip());
        let j = self
            .nodes
            .partition_point(|x| *x < w)
            .clamp(1, self.nodes.len() - 1);
        let (w0, w1) = (self.nodes[j - 1], self.nodes[j]);
        let f = ((w - w0) / (w1 - w0)).max(T::zero()).min(T::one());
        self.cdf[j - 1] + f * (self.cdf[j] - self.cdf[j - 1])
    }
}

// log of (1-e^{s-v})^{b-1} (1-e^{-bs}) / (1-e^{-s}); the e^{-av} factor is
// constant in s
fn logbeta_weight_log_density<T: Real>(s: T, surplus: T, p: &LogBetaParams<T>) -> T {
    let head = if s <= T::zero() {
        p.b.ln()
    } else {
        log_ratio_1mexp(s, p.b)
    };
    if p.b == T::one() {
        return head;
    }
    let rest = surplus - s;
    if rest <= T::zero() {
        return T::neg_infinity();
    }
    (p.b - T::one()) * log1mexp(rest) + head
}

/// Generic i.i.d. new-weight draw by tabulated inverse CDF; valid for every
/// prior in both classes.
pub fn sample_new_weight_generic<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    prior: &PriorSpec<T>,
    rng: &mut R,
) -> Result<T> {
    NewWeightTable::build(surplus, prior)?.sample(rng)
}

/// Rejection sampler for the −logBeta new weight: uniform proposal on
/// `(0, v)` accepted with probability `target(s)/sup`. The target is
/// decreasing with supremum `b (1 - e^{-v})^{b-1}` at `0+`; bounding by that
/// rather than by `b` keeps acceptance near `1/b` for small surpluses.
///
/// Returns the draw and the number of proposals it took.
pub fn sample_new_weight_logbeta<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    p: &LogBetaParams<T>,
    rng: &mut R,
) -> Result<(T, usize)> {
    if !(surplus > T::zero() && surplus.is_finite()) {
        return Err(PkError::Domain(format!(
            "surplus must be > 0, got {surplus}"
        )));
    }
    let log_sup = p.b.ln() + (p.b - T::one()) * log1mexp(surplus);
    for tries in 1..=MAX_REJECTIONS {
        let s = surplus * T::open01(rng);
        if !(s > T::zero() && s < surplus) {
            continue;
        }
        if p.b == T::one() {
            return Ok((s, tries));
        }
        let accept = logbeta_weight_log_density(s, surplus, p) - log_sup;
        if T::open01(rng).ln() <= accept {
            return Ok((s, tries));
        }
    }
    Err(PkError::Sampling(format!(
        "logBeta new-weight rejection exceeded {MAX_REJECTIONS} proposals"
    )))
}

/// Unnormalised logBeta new-weight target `target(s)`, at most `b`.
pub fn logbeta_new_weight_target<T: Real>(s: T, surplus: T, p: &LogBetaParams<T>) -> T {
    logbeta_weight_log_density(s, surplus, p).exp()
}

/// Draw from the −logBeta(a, b) total-mass law: `-log Y`, `Y ~ Beta(a, b)`.
pub fn sample_logbeta_total<T: Real, R: rand::Rng + ?Sized>(
    p: &LogBetaParams<T>,
    rng: &mut R,
) -> T {
    loop {
        let x = T::std_gamma(p.a, rng);
        let y = T::std_gamma(p.b, rng);
        // -log(x/(x+y)) = log1p(y/x)
        let t = (y / x).ln_1p();
        if t > T::zero() && t.is_finite() {
            return t;
        }
    }
}

/// Envelope-rejection draw on `[0, 1]` from an unnormalised density that is
/// monotone between consecutive `breaks` (so the mode must be one of them).
///
/// The envelope is piecewise constant at the larger endpoint value. Intervals
/// are bisected until the envelope exceeds the matching lower step function
/// by at most 30% of its mass, which keeps acceptance above 0.7.
fn sample_piecewise_monotone<T, F, R>(mut log_g: F, breaks: &[T], rng: &mut R) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
    R: rand::Rng + ?Sized,
{
    const MAX_POINTS: usize = 256;
    let mut pts: Vec<T> = breaks.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut vals = Vec::with_capacity(pts.len());
    for &w in &pts {
        vals.push(log_g(w)?);
    }
    loop {
        let peak = vals.iter().copied().fold(T::neg_infinity(), T::max);
        if !peak.is_finite() {
            return Err(PkError::Evaluation(
                "envelope target vanishes on every breakpoint".into(),
            ));
        }
        let mut upper = T::zero();
        let mut slack = T::zero();
        let mut worst = (0usize, T::zero());
        for j in 0..pts.len() - 1 {
            let len = pts[j + 1] - pts[j];
            let hi = (vals[j].max(vals[j + 1]) - peak).exp();
            let lo = (vals[j].min(vals[j + 1]) - peak).exp();
            upper += len * hi;
            let gap = len * (hi - lo);
            slack += gap;
            if gap > worst.1 {
                worst = (j, gap);
            }
        }
        if slack <= lit::<T>(0.3) * upper || pts.len() >= MAX_POINTS {
            break;
        }
        let j = worst.0;
        let mid = lit::<T>(0.5) * (pts[j] + pts[j + 1]);
        if !(mid > pts[j] && mid < pts[j + 1]) {
            break;
        }
        pts.insert(j + 1, mid);
        vals.insert(j + 1, log_g(mid)?);
    }
    let peak = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = T::zero();
    for j in 0..pts.len() - 1 {
        acc += (pts[j + 1] - pts[j]) * (vals[j].max(vals[j + 1]) - peak).exp();
        cum.push(acc);
    }
    for _ in 0..MAX_REJECTIONS {
        let u = T::open01(rng) * acc;
        let j = cum.partition_point(|c| *c < u).min(cum.len() - 1);
        let (a, b) = (pts[j], pts[j + 1]);
        let w = a + T::open01(rng) * (b - a);
        let hi = vals[j].max(vals[j + 1]);
        if T::exp1(rng) >= hi - log_g(w)? {
            return Ok(w);
        }
    }
    Err(PkError::Sampling(format!(
        "envelope rejection exceeded {MAX_REJECTIONS} proposals"
    )))
}

/// Exact draw of Kanter's auxiliary variable given the surplus:
/// `p(z | v) ∝ A(z) exp(-v^{-σ/(1-σ)} A(z))` on (0, 1).
pub fn sample_kanter_z<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    p: &SigmaStableParams<T>,
    rng: &mut R,
) -> Result<T> {
    if !(surplus > T::zero() && surplus.is_finite()) {
        return Err(PkError::Domain(format!(
            "surplus must be > 0, got {surplus}"
        )));
    }
    let sigma = p.sigma();
    let log_c = -sigma / (T::one() - sigma) * surplus.ln();
    let kernel = KanterKernel::new(log_c, sigma);
    let mut breaks = kernel.breaks();
    breaks.push(kernel.peak_z());
    for _ in 0..100 {
        let z = sample_piecewise_monotone(|z| Ok(kernel.log_scaled(z)), &breaks, rng)?;
        if z > T::zero() && z < T::one() {
            return Ok(z);
        }
    }
    Err(PkError::Sampling(format!(
        "auxiliary draw kept hitting the boundary (surplus={surplus})"
    )))
}

/// Cell of the new-weight envelope in `t = v - s`.
#[derive(Debug, Clone, Copy)]
struct WeightCell<T> {
    ta: T,
    tb: T,
    log_hi: T,
    log_lo: T,
    log_mass: T,
}

/// Exact new-weight draw for any σ by envelope rejection.
///
/// With `t = v - s` the target is `f_σ(t) (v - t)^{-σ}` on (0, v). On each
/// cell of a dyadic grid in `log t`, `f_σ` is bounded above and below from
/// its endpoint values (it is unimodal), while the singular factor is drawn
/// exactly by inversion in `s^{1-σ}`. Grid values are memoised on the
/// parameters, so after warm-up most proposals are accepted by the squeeze
/// alone and only the rest need a fresh density evaluation.
pub fn sample_new_weight_stable<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    p: &SigmaStableParams<T>,
    rng: &mut R,
) -> Result<T> {
    if !(surplus > T::zero() && surplus.is_finite()) {
        return Err(PkError::Domain(format!(
            "surplus must be > 0, got {surplus}"
        )));
    }
    let cells = weight_envelope(surplus, p)?;
    let peak = cells
        .iter()
        .map(|c| c.log_mass)
        .fold(T::neg_infinity(), T::max);
    let mut cum = Vec::with_capacity(cells.len());
    let mut acc = T::zero();
    for c in &cells {
        acc += (c.log_mass - peak).exp();
        cum.push(acc);
    }
    let r = T::one() - p.sigma();
    for _ in 0..MAX_REJECTIONS {
        let u = T::open01(rng) * acc;
        let c = &cells[cum.partition_point(|x| *x < u).min(cells.len() - 1)];
        // w = (s/v)^r is uniform under the singular factor
        let wa = (r * (-c.ta / surplus).ln_1p()).exp();
        let wb = (r * (-c.tb / surplus).ln_1p()).exp();
        let w = wb + T::open01(rng) * (wa - wb);
        let s = surplus * w.powf(r.recip());
        let t = surplus - s;
        if !(s > T::zero() && t > T::zero() && t >= c.ta && t <= c.tb) {
            continue;
        }
        let e = T::exp1(rng);
        if e >= c.log_hi - c.log_lo || e >= c.log_hi - p.log_density(t)? {
            return Ok(s);
        }
    }
    Err(PkError::Sampling(format!(
        "new-weight envelope rejection exceeded {MAX_REJECTIONS} proposals (surplus={surplus})"
    )))
}

fn weight_envelope<T: Real>(v: T, p: &SigmaStableParams<T>) -> Result<Vec<WeightCell<T>>> {
    // one coarse cell spans 0.25 in log t
    const COARSE: i64 = 1 << 20;
    const FINEST: i64 = 1 << 4;
    // cells wider than this in log f are split while they carry real mass
    const MAX_SPREAD: f64 = 0.25;
    // margin absorbing evaluation error in the monotonicity bounds
    const MARGIN: f64 = 1e-9;
    // relative mass below e^-30 is merged into the tail cell
    const NEGLIGIBLE: f64 = 30.0;
    // cells below e^-8 of the heaviest one are not worth refining
    const REFINE: f64 = 8.0;
    const MIN_LOG_T: f64 = -200.0;

    let r = T::one() - p.sigma();
    let mode = p.mode()?;
    let log_f_mode = p.log_density_at_mode()?;
    let margin = lit::<T>(MARGIN);
    let log_vr = r * v.ln() - r.ln();
    // log of ∫_a^b (v - t)^{-σ} dt
    let log_width = |ta: T, tb: T| -> T {
        let alpha = r * (-ta / v).ln_1p();
        let beta = if tb >= v {
            T::neg_infinity()
        } else {
            r * (-tb / v).ln_1p()
        };
        log_vr + alpha + (-(beta - alpha).exp_m1()).ln()
    };
    // the cell holding v is clipped there, and f_σ can be very steep near v
    let log_f_v = p.log_density(v)?;
    let bounds = |ka: i64, kb: i64| -> Result<(T, T)> {
        let ta = grid_point::<T>(ka);
        let fa = p.log_density_at_key(ka)?;
        let (tb, fb) = match grid_point::<T>(kb) {
            tb if tb > v => (v, log_f_v),
            tb => (tb, p.log_density_at_key(kb)?),
        };
        Ok(if tb <= mode {
            (fb, fa)
        } else if ta >= mode {
            (fa, fb)
        } else {
            (log_f_mode, fa.min(fb))
        })
    };

    let key_v = (v.to_f64().unwrap().ln() / GRID_STEP).floor() as i64;
    let mut ka = key_v.div_euclid(COARSE) * COARSE;
    let mut cells: Vec<WeightCell<T>> = Vec::new();
    let mut best = T::neg_infinity();
    loop {
        let mut stack = vec![(ka, ka + COARSE)];
        while let Some((a, b)) = stack.pop() {
            let ta = grid_point::<T>(a);
            if ta >= v {
                continue;
            }
            let tb = grid_point::<T>(b).min(v);
            if tb <= ta {
                continue;
            }
            let (hi, lo) = bounds(a, b)?;
            let log_mass = hi + log_width(ta, tb);
            if hi - lo > lit(MAX_SPREAD) && b - a > FINEST && log_mass > best - lit::<T>(REFINE) {
                let mid = a + (b - a) / 2;
                stack.push((a, mid));
                stack.push((mid, b));
                continue;
            }
            best = best.max(log_mass);
            cells.push(WeightCell {
                ta,
                tb,
                log_hi: hi + margin,
                log_lo: lo - margin,
                log_mass: log_mass + margin,
            });
        }
        let ta = grid_point::<T>(ka);
        // left of the mode f_σ only decreases, so everything below `ta` is
        // covered by one cell bounded by f_σ(ta)
        if ta <= mode {
            let fa = p.log_density_at_key(ka)?;
            let tail = fa + log_width(T::zero(), ta);
            if tail < best - lit::<T>(NEGLIGIBLE) || (ka as f64) * GRID_STEP < MIN_LOG_T {
                cells.push(WeightCell {
                    ta: T::zero(),
                    tb: ta,
                    log_hi: fa + margin,
                    log_lo: T::neg_infinity(),
                    log_mass: tail + margin,
                });
                break;
            }
        }
        ka -= COARSE;
    }
    cells.retain(|c| c.log_mass.is_finite());
    if cells.is_empty() {
        return Err(PkError::Evaluation(format!(
            "new-weight envelope is empty (surplus={v})"
        )));
    }
    Ok(cells)
}

/// How new size-biased weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NewWeightMethod {
    /// Closed-form sampler at σ = 1/2, envelope rejection for other σ,
    /// uniform-proposal rejection for −logBeta.
    #[default]
    Auto,
    /// Tabulated inverse CDF for every prior.
    Table,
}

/// New size-biased weight given the current surplus, dispatched on prior and
/// method.
pub fn sample_new_weight<T: Real, R: rand::Rng + ?Sized>(
    surplus: T,
    prior: &PriorSpec<T>,
    method: NewWeightMethod,
    rng: &mut R,
) -> Result<T> {
    match (method, prior) {
        (NewWeightMethod::Table, _) => sample_new_weight_generic(surplus, prior, rng),
        (NewWeightMethod::Auto, PriorSpec::StableClass { params, .. }) => {
            if params.is_one_half() {
                sample_new_weight_exact(surplus, params, rng)
            } else {
                sample_new_weight_stable(surplus, params, rng)
            }
        }
        (NewWeightMethod::Auto, PriorSpec::LogBetaClass { params }) => {
            Ok(sample_new_weight_logbeta(surplus, params, rng)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable_math::TiltFunction;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStream::new(7);
        let mut s1 = a.substream(3);
        let mut s2 = a.substream(3);
        let mut s3 = a.substream(4);
        let x1: Vec<u64> = (0..4).map(|_| s1.next_u64()).collect();
        let x2: Vec<u64> = (0..4).map(|_| s2.next_u64()).collect();
        let x3: Vec<u64> = (0..4).map(|_| s3.next_u64()).collect();
        assert_eq!(x1, x2);
        assert_ne!(x1, x3);
    }

    #[test]
    fn stable_laplace_transform() {
        let p = SigmaStableParams::<f64>::new(0.5).unwrap();
        let mut rng = RngStream::new(1);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| (-sample_positive_stable(&p, &mut rng)).exp())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - (-1f64).exp()).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn zero_tilt_is_plain_stable() {
        let p = SigmaStableParams::new(0.5).unwrap();
        let mut a = RngStream::new(9);
        let mut b = RngStream::new(9);
        for _ in 0..10 {
            assert_eq!(
                sample_tilted_stable(&p, 0.0, &mut a).unwrap(),
                sample_positive_stable(&p, &mut b)
            );
        }
    }

    #[test]
    fn tilted_means() {
        let p = SigmaStableParams::new(0.5).unwrap();
        let mut rng = RngStream::new(2);
        for &lambda in &[1.0f64, 4.0, 50.0] {
            let xs: Vec<f64> = (0..100_000)
                .map(|_| sample_tilted_stable(&p, lambda, &mut rng).unwrap())
                .collect();
            let (m, se) = mean_se(&xs);
            let want = 0.5 * lambda.powf(-0.5);
            assert!(
                (m - want).abs() < 3.0 * se,
                "lambda={lambda}: {m} vs {want} (se {se})"
            );
        }
        assert!(sample_tilted_stable(&p, -1.0, &mut rng).is_err());
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(3);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_gamma(0.75, 1.0, &mut rng))
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.75).abs() < 3.0 * se);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_gamma(2.0, 4.0, &mut rng))
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_inverse_gamma(3.0, 2.0, &mut rng))
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn exact_weight_support_and_capability() {
        let p = SigmaStableParams::new(0.5).unwrap();
        let mut rng = RngStream::new(4);
        for &v in &[1e-3, 1.0, 50.0] {
            for _ in 0..2000 {
                let s = sample_new_weight_exact(v, &p, &mut rng).unwrap();
                assert!(s > 0.0 && s < v);
            }
        }
        let q = SigmaStableParams::new(0.3).unwrap();
        assert!(matches!(
            sample_new_weight_exact(1.0, &q, &mut rng),
            Err(PkError::Capability(_))
        ));
    }

    #[test]
    fn logbeta_unit_b_always_accepts() {
        let p = LogBetaParams::new(1.0, 1.0).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..1000 {
            let (s, tries) = sample_new_weight_logbeta(2.0, &p, &mut rng).unwrap();
            assert_eq!(tries, 1);
            assert!(s > 0.0 && s < 2.0);
        }
    }

    #[test]
    fn logbeta_tiny_surplus_stays_efficient() {
        // for v -> 0 the b = 2 target is ∝ (v - s), so s/v ~ Beta(1, 2)
        let p = LogBetaParams::new(1.0, 2.0).unwrap();
        let mut rng = RngStream::new(26);
        let v = 1e-9;
        let (mut sum, mut tries) = (0.0, 0);
        let n = 20_000;
        for _ in 0..n {
            let (s, k) = sample_new_weight_logbeta(v, &p, &mut rng).unwrap();
            sum += s / v;
            tries += k;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.01, "{mean}");
        assert!((tries as f64 / n as f64) < 2.2);
    }

    #[test]
    fn logbeta_target_bounded_by_b() {
        let p = LogBetaParams::new(1.0, 2.0).unwrap();
        for i in 1..1000 {
            let s = 3.0 * i as f64 / 1000.0;
            let t = logbeta_new_weight_target(s, 3.0, &p);
            assert!(t <= 2.0 + 1e-12 && t > 0.0, "s={s} t={t}");
        }
    }

    #[test]
    fn generic_table_is_monotone_and_supported() {
        let prior = PriorSpec::StableClass {
            params: SigmaStableParams::new(0.3).unwrap(),
            tilt: TiltFunction::NormalizedStable,
        };
        let mut rng = RngStream::new(6);
        for &v in &[0.05, 1.0, 20.0] {
            let table = NewWeightTable::build(v, &prior).unwrap();
            assert!(table.cdf.windows(2).all(|w| w[1] >= w[0]));
            for _ in 0..500 {
                let s = table.sample(&mut rng).unwrap();
                assert!(s > 0.0 && s < v);
            }
        }
    }

    #[test]
    fn logbeta_total_mass_mean() {
        // E[-log Beta(1, 2)] = psi(3) - psi(1) = 1 + 1/2
        let p = LogBetaParams::new(1.0, 2.0).unwrap();
        let mut rng = RngStream::new(8);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_logbeta_total(&p, &mut rng))
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.5).abs() < 3.0 * se, "{m}");
    }

    // max |F_emp - F| over a grid, with F from adaptive quadrature
    fn grid_ks(draws: &mut [f64], lo: f64, hi: f64, density: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total = crate::quad::integrate(&density, &[lo, hi], 1e-10, 0.0, 2000)
            .unwrap()
            .value;
        let mut worst: f64 = 0.0;
        for k in 1..200 {
            let x = lo + (hi - lo) * k as f64 / 200.0;
            let f = crate::quad::integrate(&density, &[lo, x], 1e-10, 0.0, 2000)
                .unwrap()
                .value
                / total;
            let emp = draws.partition_point(|d| *d <= x) as f64 / draws.len() as f64;
            worst = worst.max((emp - f).abs());
        }
        worst
    }

    #[test]
    fn kanter_z_matches_its_density() {
        let mut rng = RngStream::new(21);
        for &(sigma, v) in &[(0.5, 1.0), (0.3, 0.05), (0.7, 20.0), (0.7, 0.2)] {
            let p = SigmaStableParams::new(sigma).unwrap();
            let mut zs: Vec<f64> = (0..20_000)
                .map(|_| sample_kanter_z(v, &p, &mut rng).unwrap())
                .collect();
            let c = v.powf(-sigma / (1.0 - sigma));
            let d = grid_ks(&mut zs, 0.0, 1.0, |z| {
                let a = log_zolotarev_a(z, sigma).exp();
                (a.ln() - c * a).exp()
            });
            assert!(d < 0.015, "sigma={sigma} v={v} ks={d}");
        }
    }

    #[test]
    fn stable_envelope_weight_matches_density() {
        let mut rng = RngStream::new(22);
        for &(sigma, v) in &[(0.3, 0.7), (0.3, 0.02), (0.7, 3.0), (0.5, 0.4)] {
            let p = SigmaStableParams::new(sigma).unwrap();
            let mut ss: Vec<f64> = (0..20_000)
                .map(|_| sample_new_weight_stable(v, &p, &mut rng).unwrap())
                .collect();
            assert!(ss.iter().all(|s| *s > 0.0 && *s < v));
            let d = grid_ks(&mut ss, 0.0, v, |s| {
                if s <= 0.0 || s >= v {
                    return 0.0;
                }
                (-sigma * s.ln() + p.log_density(v - s).unwrap()).exp()
            });
            assert!(d < 0.015, "sigma={sigma} v={v} ks={d}");
        }
    }

    #[test]
    fn stable_envelope_handles_extreme_surplus() {
        // in w = (s/v)^{1-σ} the target f_σ(v - v w^{1/(1-σ)}) is bounded
        let mut rng = RngStream::new(25);
        for &(sigma, v) in &[(0.3f64, 3e-5f64), (0.7, 0.05), (0.3, 500.0), (0.9, 0.3)] {
            let p = SigmaStableParams::new(sigma).unwrap();
            let r = 1.0 - sigma;
            let mut ws: Vec<f64> = (0..20_000)
                .map(|_| (sample_new_weight_stable(v, &p, &mut rng).unwrap() / v).powf(r))
                .collect();
            let shift = p
                .log_density(v * 0.999)
                .unwrap()
                .max(p.log_density(p.mode().unwrap()).unwrap());
            let d = grid_ks(&mut ws, 0.0, 1.0, |w| {
                let t = v - v * w.powf(1.0 / r);
                if t <= 0.0 || w <= 0.0 {
                    return 0.0;
                }
                (p.log_density(t).unwrap() - shift).exp()
            });
            assert!(d < 0.015, "sigma={sigma} v={v} ks={d}");
        }
    }

    #[test]
    fn stable_envelope_handles_steep_density_at_the_surplus() {
        // far left of the mode log f_σ is linear on the scale of s, so the
        // new weight is Gamma(1 - σ) with rate (log f_σ)'(v)
        let mut rng = RngStream::new(26);
        for &(sigma, v) in &[(0.786f64, 1.56e-3f64), (0.6, 3e-4)] {
            let p = SigmaStableParams::new(sigma).unwrap();
            let h = v * 1e-7;
            let rate = (p.log_density(v + h).unwrap() - p.log_density(v - h).unwrap()) / (2.0 * h);
            let xs: Vec<f64> = (0..4000)
                .map(|_| sample_new_weight_stable(v, &p, &mut rng).unwrap() * rate)
                .collect();
            let (m, se) = mean_se(&xs);
            assert!(
                (m - (1.0 - sigma)).abs() < 4.0 * se,
                "sigma={sigma} mean={m} se={se}"
            );
        }
    }

    #[test]
    fn envelope_and_closed_form_agree_at_one_half() {
        let p = SigmaStableParams::new(0.5).unwrap();
        let mut rng = RngStream::new(23);
        let n = 40_000;
        let a: Vec<f64> = (0..n)
            .map(|_| sample_new_weight_stable(1.3, &p, &mut rng).unwrap())
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| sample_new_weight_exact(1.3, &p, &mut rng).unwrap())
            .collect();
        let (ma, sa) = mean_se(&a);
        let (mb, sb) = mean_se(&b);
        assert!(
            (ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt(),
            "{ma} vs {mb}"
        );
    }

    #[test]
    fn dispatch_routes_by_prior() {
        let mut rng = RngStream::new(24);
        let lb = PriorSpec::log_beta(1.0, 2.0).unwrap();
        let s = sample_new_weight(0.8, &lb, NewWeightMethod::Auto, &mut rng).unwrap();
        assert!(s > 0.0 && s < 0.8);
        let st = PriorSpec::stable(0.3, TiltFunction::NormalizedStable).unwrap();
        for method in [NewWeightMethod::Auto, NewWeightMethod::Table] {
            let s = sample_new_weight(0.8, &st, method, &mut rng).unwrap();
            assert!(s > 0.0 && s < 0.8);
        }
    }
}

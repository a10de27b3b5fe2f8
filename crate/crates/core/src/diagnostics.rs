//! Effective sample sizes, partition oracles, forward simulation and the
//! Geweke joint-distribution test.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{PkError, Result};
use crate::model::{Cluster, LikelihoodSpec, PriorSpec, SeatingState};
use crate::random_kit::{
    sample_gamma, sample_logbeta_total, sample_new_weight, sample_positive_stable,
    sample_tilted_stable, NewWeightMethod,
};
use crate::real::Real;
use crate::sampler::{gibbs_sweep, initial_state, SamplerConfig};
use crate::stable_math::TiltFunction;

/// Minimum series length accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EssReport {
    pub name: String,
    pub len: usize,
    pub ess: f64,
    /// Last lag included in the autocorrelation sum.
    pub cutoff: usize,
    /// Set when the series is constant; `ess` is then 1.
    pub degenerate: bool,
}

/// Sample autocovariances at lags `0..n` (biased, divided by `n`) via FFT.
pub fn autocovariance<T: Real>(series: &[T]) -> Vec<T> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let nt = T::from_usize(n).unwrap();
    let mean = series.iter().fold(T::zero(), |a, &x| a + x) / nt;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<T>> = series
        .iter()
        .map(|&x| Complex::new(x - mean, T::zero()))
        .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())))
        .take(size)
        .collect();
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), T::zero());
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = T::from_usize(size).unwrap() * nt;
    buf[..n].iter().map(|c| c.re / scale).collect()
}

/// ESS `N / (1 + 2 Σ ρ_t)` with Geyer's initial monotone sequence
/// truncation, capped at `N`.
pub fn ess<T: Real>(name: &str, series: &[T]) -> Result<EssReport> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(PkError::Precondition(format!(
            "ESS needs at least {MIN_ESS_LEN} values, got {n}"
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(PkError::Precondition(format!(
            "series {name} has non-finite values"
        )));
    }
    let gamma: Vec<f64> = autocovariance(series)
        .into_iter()
        .map(|g| g.to_f64().unwrap())
        .collect();
    let spread = series
        .iter()
        .fold(T::zero(), |a, &x| a.max((x - series[0]).abs()))
        .to_f64()
        .unwrap();
    if gamma[0] <= 0.0 || spread == 0.0 {
        return Ok(EssReport {
            name: name.to_string(),
            len: n,
            ess: 1.0,
            cutoff: 0,
            degenerate: true,
        });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut cutoff = 0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = gamma[2 * m] + gamma[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        cutoff = 2 * m + 1;
        m += 1;
    }
    // τ = (-γ₀ + 2 Σ Γ_m) / γ₀
    let tau = (2.0 * sum - gamma[0]) / gamma[0];
    let ess = (n as f64 / tau).min(n as f64);
    Ok(EssReport {
        name: name.to_string(),
        len: n,
        ess,
        cutoff,
        degenerate: false,
    })
}

/// Pitman-Yor EPPF of any set partition with the given block sizes:
/// `Π_{i=1}^{K-1}(θ + iσ) / (θ+1)_{n-1} · Π_k (1-σ)_{n_k-1}`.
pub fn py_eppf(sizes: &[usize], theta: f64, sigma: f64) -> Result<f64> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(PkError::Precondition(format!(
            "invalid block sizes {sizes:?}"
        )));
    }
    if !(0.0..1.0).contains(&sigma) || theta <= -sigma {
        return Err(PkError::Precondition(format!(
            "need 0 <= sigma < 1 and theta > -sigma, got sigma={sigma}, theta={theta}"
        )));
    }
    let n: usize = sizes.iter().sum();
    let k = sizes.len();
    let mut lp = 0.0;
    for i in 1..k {
        lp += (theta + i as f64 * sigma).ln();
    }
    for j in 1..n {
        lp -= (theta + j as f64).ln();
    }
    for &nk in sizes {
        for j in 1..nk {
            lp += (j as f64 - sigma).ln();
        }
    }
    Ok(lp.exp())
}

/// All set partitions of `{0..n}` as canonical label vectors (first
/// occurrence order).
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = if prefix.is_empty() { 0 } else { max + 1 };
        for l in 0..=next {
            prefix.push(l);
            rec(prefix, n, max.max(l), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(&mut Vec::with_capacity(n), n, 0, &mut out);
    }
    out
}

/// Relabels a clustering so labels appear in order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

pub fn block_sizes(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// One exact draw of the generative process: partition, size-biased weights
/// in order of discovery, cluster parameters, remaining surplus and total.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDraw<T> {
    pub labels: Vec<usize>,
    pub weights: Vec<T>,
    pub params: Vec<T>,
    pub surplus: T,
    pub total: T,
}

impl<T: Real> ForwardDraw<T> {
    /// Packs the draw and a dataset into a sampler state.
    pub fn into_state(self, data: Vec<T>, pool: Vec<T>) -> Result<SeatingState<T>> {
        let mut clusters: Vec<Cluster<T>> = self
            .weights
            .iter()
            .zip(&self.params)
            .map(|(&weight, &param)| Cluster {
                members: Default::default(),
                weight,
                param,
            })
            .collect();
        for (i, &l) in self.labels.iter().enumerate() {
            clusters[l].members.insert(i);
        }
        SeatingState::from_parts(data, clusters, self.surplus, pool)
    }

    /// Draws one observation per index from its cluster's likelihood.
    pub fn sample_data<R: rand::Rng + ?Sized>(
        &self,
        lik: &LikelihoodSpec<T>,
        rng: &mut R,
    ) -> Vec<T> {
        self.labels
            .iter()
            .map(|&l| lik.sample_obs(self.params[l], rng))
            .collect()
    }
}

/// Exact draw of the total mass `T ~ γ`.
///
/// Pitman-Yor with `θ > 0` uses `t^{-θ} = Γ(θ)^{-1} ∫ u^{θ-1} e^{-ut} du`: draw
/// `u^σ ~ Gamma(θ/σ)`, then `T` from the stable law tilted by `e^{-ut}`.
pub fn sample_total_mass<T: Real, R: rand::Rng + ?Sized>(
    prior: &PriorSpec<T>,
    rng: &mut R,
) -> Result<T> {
    match prior {
        PriorSpec::LogBetaClass { params } => Ok(sample_logbeta_total(params, rng)),
        PriorSpec::StableClass { params, tilt } => match *tilt {
            TiltFunction::NormalizedStable => Ok(sample_positive_stable(params, rng)),
            TiltFunction::Ngg { .. } => {
                sample_tilted_stable(params, tilt.exp_tilt(params.sigma()), rng)
            }
            TiltFunction::PitmanYor { theta } if theta == T::zero() => {
                Ok(sample_positive_stable(params, rng))
            }
            TiltFunction::PitmanYor { theta } if theta > T::zero() => {
                let sigma = params.sigma();
                let w = sample_gamma(theta / sigma, T::one(), rng);
                sample_tilted_stable(params, w.powf(sigma.recip()), rng)
            }
            TiltFunction::PitmanYor { theta } => Err(PkError::Capability(format!(
                "exact total-mass draws need theta >= 0, got {theta}"
            ))),
            TiltFunction::LogBetaUnit => Err(PkError::Config(
                "the logBeta unit tilt cannot index a stable-class prior".into(),
            )),
        },
    }
}

/// Forward simulation of `n` draws: observation `i` joins discovered atom `k`
/// with probability `J̃_k / T` and discovers a new atom with probability
/// `V / T`, the new weight coming from the size-biased kernel given `V`.
pub fn forward_generate<T: Real, R: rand::Rng + ?Sized>(
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
    n: usize,
    method: NewWeightMethod,
    rng: &mut R,
) -> Result<ForwardDraw<T>> {
    let total = sample_total_mass(prior, rng)?;
    let mut surplus = total;
    let mut weights: Vec<T> = Vec::new();
    let mut params = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = T::open01(rng) * total;
        let mut acc = T::zero();
        let mut pick = None;
        for (k, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = Some(k);
                break;
            }
        }
        let k = match pick {
            Some(k) => k,
            None => {
                let s = sample_new_weight(surplus, prior, method, rng)?;
                surplus -= s;
                weights.push(s);
                params.push(lik.sample_base(rng));
                weights.len() - 1
            }
        };
        labels.push(k);
    }
    Ok(ForwardDraw {
        labels,
        weights,
        params,
        surplus,
        total,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d))
}

// P(K > x) for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One line of a Geweke comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GewekeRow {
    pub name: String,
    pub forward_mean: f64,
    pub chain_mean: f64,
    pub chain_ess: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub rows: Vec<GewekeRow>,
    pub sweeps: usize,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.chain_ess)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self, threshold: f64) -> bool {
        self.max_abs_z() < threshold
    }

    /// Plain-text table, one statistic per line.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>14} {:>14} {:>10} {:>8}\n",
            "statistic", "forward", "chain", "chain_ess", "z"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>14.6} {:>14.6} {:>10.0} {:>8.3}\n",
                r.name, r.forward_mean, r.chain_mean, r.chain_ess, r.z
            ));
        }
        out
    }
}

const GEWEKE_STATS: [&str; 6] = ["K", "log_T", "log_V", "log_mean_w", "data_mean", "data_sq"];

fn geweke_stats<T: Real>(k: usize, total: T, surplus: T, data: &[T], out: &mut [Vec<f64>; 6]) {
    let f = |x: T| x.to_f64().unwrap();
    out[0].push(k as f64);
    out[1].push(f(total.ln()));
    out[2].push(f(surplus.ln()));
    if k > 0 {
        out[3].push(f(((total - surplus) / T::from_usize(k).unwrap()).ln()));
    }
    if !data.is_empty() {
        let n = T::from_usize(data.len()).unwrap();
        out[4].push(f(data.iter().fold(T::zero(), |a, &x| a + x) / n));
        out[5].push(f(data.iter().fold(T::zero(), |a, &x| a + x * x) / n));
    }
}

/// Geweke test: `sweeps` independent forward draws of (state, data) against
/// `sweeps` iterations of a chain that alternates a Gibbs sweep with a fresh
/// data draw. Both sample the same joint when every update is correct.
///
/// z-scores use the chain's ESS for its standard error. With no
/// observations only `T` and `V` are compared.
pub fn geweke_test<T: Real, R: rand::Rng + ?Sized>(
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
    cfg: &SamplerConfig<T>,
    n_obs: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<GewekeReport> {
    cfg.validate(prior)?;
    if sweeps < MIN_ESS_LEN {
        return Err(PkError::Precondition(format!(
            "need at least {MIN_ESS_LEN} sweeps"
        )));
    }
    let mut forward: [Vec<f64>; 6] = Default::default();
    for _ in 0..sweeps {
        let draw = forward_generate(prior, lik, n_obs, cfg.new_weight, rng)?;
        let data = draw.sample_data(lik, rng);
        geweke_stats(
            draw.weights.len(),
            draw.total,
            draw.surplus,
            &data,
            &mut forward,
        );
    }

    let mut state = if n_obs == 0 {
        initial_state(Vec::new(), prior, lik, cfg, rng)?
    } else {
        let draw = forward_generate(prior, lik, n_obs, cfg.new_weight, rng)?;
        let data = draw.sample_data(lik, rng);
        let pool = (0..cfg.pool_size).map(|_| lik.sample_base(rng)).collect();
        draw.into_state(data, pool)?
    };
    let mut chain: [Vec<f64>; 6] = Default::default();
    for it in 0..sweeps {
        gibbs_sweep(&mut state, prior, lik, cfg, it, rng)?;
        let data: Vec<T> = (0..state.n())
            .map(|i| {
                let c = state.label(i).expect("every observation is seated");
                lik.sample_obs(state.clusters()[c].param, rng)
            })
            .collect();
        state.set_data(data)?;
        geweke_stats(
            state.num_clusters(),
            state.total_mass(),
            state.surplus(),
            state.data(),
            &mut chain,
        );
    }

    let mut rows = Vec::new();
    for (j, name) in GEWEKE_STATS.iter().enumerate() {
        if n_obs == 0 && j != 1 && j != 2 {
            continue;
        }
        let (a, b) = (&forward[j], &chain[j]);
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let rep = ess(name, b)?;
        let se = (va / a.len() as f64 + vb / rep.ess).sqrt();
        let z = if se > 0.0 { (ma - mb) / se } else { 0.0 };
        rows.push(GewekeRow {
            name: name.to_string(),
            forward_mean: ma,
            chain_mean: mb,
            chain_ess: rep.ess,
            z,
        });
    }
    Ok(GewekeReport { rows, sweeps })
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v)
}

/// Observed frequency of one set partition next to its EPPF value.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub labels: Vec<usize>,
    pub eppf: f64,
    pub freq: f64,
    pub se: f64,
}

impl PartitionRow {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            (self.freq - self.eppf) / self.se
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub source: String,
    pub rows: Vec<PartitionRow>,
}

impl PartitionReport {
    pub fn passed(&self, max_se: f64) -> bool {
        self.rows.iter().all(|r| r.z().abs() <= max_se)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{}\n{:<12} {:>10} {:>10} {:>10} {:>7}\n",
            self.source, "partition", "eppf", "observed", "mc_se", "z"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>10.6} {:>10.6} {:>10.6} {:>7.2}\n",
                format_partition(&r.labels),
                r.eppf,
                r.freq,
                r.se,
                r.z()
            ));
        }
        out
    }
}

/// Renders a labelling as blocks, e.g. `{1,2}{3}`.
pub fn format_partition(labels: &[usize]) -> String {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = String::new();
    for b in 0..k {
        let members: Vec<String> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == b)
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        out.push_str(&format!("{{{}}}", members.join(",")));
    }
    out
}

fn partition_report(
    source: &str,
    n: usize,
    theta: f64,
    sigma: f64,
    draws: &[Vec<usize>],
    autocorrelated: bool,
) -> Result<PartitionReport> {
    let mut rows = Vec::new();
    for p in set_partitions(n) {
        let indicator: Vec<f64> = draws.iter().map(|d| f64::from(u8::from(*d == p))).collect();
        let (freq, var) = mean_var(&indicator);
        let eff = if autocorrelated {
            ess("indicator", &indicator)?.ess
        } else {
            indicator.len() as f64
        };
        let eppf = py_eppf(&block_sizes(&p), theta, sigma)?;
        // standard error under the oracle, so rare partitions never get se = 0
        let se = (eppf * (1.0 - eppf) / eff).sqrt().max((var / eff).sqrt());
        rows.push(PartitionRow {
            labels: p,
            eppf,
            freq,
            se,
        });
    }
    Ok(PartitionReport {
        source: source.to_string(),
        rows,
    })
}

/// Partition frequencies from a prior-only chain (constant likelihood) with
/// `n` observations, compared against the Pitman-Yor EPPF.
pub fn prior_check_chain<T: Real, R: rand::Rng + ?Sized>(
    sigma: T,
    theta: T,
    cfg: &SamplerConfig<T>,
    n: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<PartitionReport> {
    let prior = PriorSpec::stable(sigma, TiltFunction::PitmanYor { theta })?;
    let lik = LikelihoodSpec::flat();
    let mut state = initial_state(vec![T::zero(); n], &prior, &lik, cfg, rng)?;
    let mut draws = Vec::with_capacity(sweeps);
    let mut labels = vec![0; n];
    for it in 0..sweeps {
        gibbs_sweep(&mut state, &prior, &lik, cfg, it, rng)?;
        for (i, l) in labels.iter_mut().enumerate() {
            *l = state.label(i).expect("every observation is seated");
        }
        draws.push(canonical_labels(&labels));
    }
    partition_report(
        &format!("hybrid sampler ({}), {sweeps} sweeps", cfg.variant.name()),
        n,
        theta.to_f64().unwrap(),
        sigma.to_f64().unwrap(),
        &draws,
        true,
    )
}

/// Partition frequencies from independent forward simulations.
pub fn prior_check_forward<T: Real, R: rand::Rng + ?Sized>(
    sigma: T,
    theta: T,
    n: usize,
    runs: usize,
    rng: &mut R,
) -> Result<PartitionReport> {
    let prior = PriorSpec::stable(sigma, TiltFunction::PitmanYor { theta })?;
    let lik = LikelihoodSpec::flat();
    let mut draws = Vec::with_capacity(runs);
    for _ in 0..runs {
        let d = forward_generate(&prior, &lik, n, NewWeightMethod::Auto, rng)?;
        draws.push(canonical_labels(&d.labels));
    }
    partition_report(
        &format!("forward simulation, {runs} runs"),
        n,
        theta.to_f64().unwrap(),
        sigma.to_f64().unwrap(),
        &draws,
        false,
    )
}

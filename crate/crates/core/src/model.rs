//! Poisson-Kingman mixture state and its target log-densities.
//!
//! The state keeps only occupied clusters explicitly: their size-biased
//! weights, a surplus mass `V` standing in for every unoccupied atom, and a
//! pool of `M` candidate parameters for new clusters. The total mass is
//! `T = V + Σ weights`.

use std::collections::BTreeSet;

use crate::error::{PkError, Result};
use crate::real::{lit, Real};
use crate::slice::{slice_sample, SliceConfig};
use crate::stable_math::{
    log_f_logbeta, log_h, log_levy_logbeta, log_levy_sigma, log_zolotarev_a, LogBetaParams,
    SigmaStableParams, TiltFunction,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec<T> {
    StableClass {
        params: SigmaStableParams<T>,
        tilt: TiltFunction<T>,
    },
    LogBetaClass {
        params: LogBetaParams<T>,
    },
}

impl<T: Real> PriorSpec<T> {
    pub fn stable(sigma: T, tilt: TiltFunction<T>) -> Result<Self> {
        let params = SigmaStableParams::new(sigma)?;
        Self::stable_with(params, tilt)
    }

    pub fn stable_with(params: SigmaStableParams<T>, tilt: TiltFunction<T>) -> Result<Self> {
        if tilt == TiltFunction::LogBetaUnit {
            return Err(PkError::Config(
                "the logBeta unit tilt cannot index a stable-class prior".into(),
            ));
        }
        tilt.validate(params.sigma())?;
        Ok(PriorSpec::StableClass { params, tilt })
    }

    pub fn log_beta(a: T, b: T) -> Result<Self> {
        Ok(PriorSpec::LogBetaClass {
            params: LogBetaParams::new(a, b)?,
        })
    }

    pub fn sigma(&self) -> Option<T> {
        match self {
            PriorSpec::StableClass { params, .. } => Some(params.sigma()),
            PriorSpec::LogBetaClass { .. } => None,
        }
    }

    /// Log density of the total mass under the underlying CRM.
    pub fn log_f(&self, t: T) -> Result<T> {
        match self {
            PriorSpec::StableClass { params, .. } => params.log_density(t),
            PriorSpec::LogBetaClass { params } => log_f_logbeta(t, params),
        }
    }

    pub fn log_levy(&self, x: T) -> Result<T> {
        match self {
            PriorSpec::StableClass { params, .. } => log_levy_sigma(x, params),
            PriorSpec::LogBetaClass { params } => log_levy_logbeta(x, params),
        }
    }

    pub fn log_h(&self, t: T) -> T {
        match self {
            PriorSpec::StableClass { params, tilt } => log_h(t, tilt, params),
            PriorSpec::LogBetaClass { .. } => T::zero(),
        }
    }

    pub fn stable_params(&self) -> Result<&SigmaStableParams<T>> {
        match self {
            PriorSpec::StableClass { params, .. } => Ok(params),
            PriorSpec::LogBetaClass { .. } => Err(PkError::Config(
                "operation requires a stable-class prior".into(),
            )),
        }
    }
}

/// Normal likelihood `N(x | μ_k, σ₁²)` with base `H₀ = N(μ₀, σ₀²)` on the
/// cluster means. A flat likelihood ignores the data entirely, which turns
/// the sampler into a prior simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodSpec<T> {
    pub mu0: T,
    pub sigma0_sq: T,
    pub sigma1_sq: T,
    pub flat: bool,
}

impl<T: Real> LikelihoodSpec<T> {
    pub fn normal(mu0: T, sigma0_sq: T, sigma1_sq: T) -> Result<Self> {
        if !(sigma0_sq > T::zero() && sigma1_sq > T::zero()) || !mu0.is_finite() {
            return Err(PkError::Config(format!(
                "need finite mu0 and positive variances, got mu0={mu0}, \
                 sigma0^2={sigma0_sq}, sigma1^2={sigma1_sq}"
            )));
        }
        Ok(LikelihoodSpec {
            mu0,
            sigma0_sq,
            sigma1_sq,
            flat: false,
        })
    }

    /// Constant likelihood; cluster means are still drawn from `N(0, 1)`.
    pub fn flat() -> Self {
        LikelihoodSpec {
            mu0: T::zero(),
            sigma0_sq: T::one(),
            sigma1_sq: T::one(),
            flat: true,
        }
    }

    /// Empirical-Bayes defaults: μ₀ and σ₀² from the data, σ₁² given.
    pub fn empirical(data: &[T], sigma1_sq: T) -> Result<Self> {
        if data.len() < 2 {
            return Err(PkError::Config(
                "empirical hyperparameters need >= 2 points".into(),
            ));
        }
        let n = T::from_usize(data.len()).unwrap();
        let mean = data.iter().fold(T::zero(), |a, &x| a + x) / n;
        let var = data.iter().fold(T::zero(), |a, &x| a + (x - mean).powi(2)) / (n - T::one());
        Self::normal(mean, var, sigma1_sq)
    }

    #[inline]
    pub fn log_base(&self, y: T) -> T {
        log_normal(y, self.mu0, self.sigma0_sq)
    }

    #[inline]
    pub fn log_lik(&self, x: T, y: T) -> T {
        if self.flat {
            T::zero()
        } else {
            log_normal(x, y, self.sigma1_sq)
        }
    }

    pub fn sample_base<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.mu0 + self.sigma0_sq.sqrt() * T::std_normal(rng)
    }

    pub fn sample_obs<R: rand::Rng + ?Sized>(&self, y: T, rng: &mut R) -> T {
        y + self.sigma1_sq.sqrt() * T::std_normal(rng)
    }
}

#[inline]
pub fn log_normal<T: Real>(x: T, mean: T, var: T) -> T {
    let d = x - mean;
    lit::<T>(-0.5) * ((T::PI() + T::PI()).ln() + var.ln() + d * d / var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    pub members: BTreeSet<usize>,
    pub weight: T,
    pub param: T,
}

impl<T: Real> Cluster<T> {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

const UNASSIGNED: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct SeatingState<T> {
    clusters: Vec<Cluster<T>>,
    surplus: T,
    kanter_z: Option<T>,
    empty_pool: Vec<T>,
    data: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Real> SeatingState<T> {
    /// Assembles a state and checks every invariant.
    pub fn from_parts(
        data: Vec<T>,
        clusters: Vec<Cluster<T>>,
        surplus: T,
        empty_pool: Vec<T>,
    ) -> Result<Self> {
        let mut labels = vec![UNASSIGNED; data.len()];
        for (c, cl) in clusters.iter().enumerate() {
            for &i in &cl.members {
                if i >= data.len() {
                    return Err(PkError::Precondition(format!(
                        "cluster {c} holds observation {i} but n = {}",
                        data.len()
                    )));
                }
                if labels[i] != UNASSIGNED {
                    return Err(PkError::Precondition(format!(
                        "observation {i} is in more than one cluster"
                    )));
                }
                labels[i] = c;
            }
        }
        let s = SeatingState {
            clusters,
            surplus,
            kanter_z: None,
            empty_pool,
            data,
            labels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PkError::Precondition(m));
        if !(self.surplus > T::zero() && self.surplus.is_finite()) {
            return fail(format!("surplus must be positive, got {}", self.surplus));
        }
        if self.empty_pool.is_empty() {
            return fail("empty-parameter pool must hold at least one slot".into());
        }
        let mut seen = 0usize;
        for (c, cl) in self.clusters.iter().enumerate() {
            if cl.members.is_empty() {
                return fail(format!("cluster {c} is empty"));
            }
            if !(cl.weight > T::zero() && cl.weight.is_finite()) {
                return fail(format!("cluster {c} has weight {}", cl.weight));
            }
            if !cl.param.is_finite() {
                return fail(format!("cluster {c} has parameter {}", cl.param));
            }
            for &i in &cl.members {
                if self.labels.get(i) != Some(&c) {
                    return fail(format!(
                        "label of observation {i} disagrees with cluster {c}"
                    ));
                }
            }
            seen += cl.members.len();
        }
        if seen != self.data.len() || self.labels.contains(&UNASSIGNED) {
            return fail("clusters do not partition the observations".into());
        }
        let t = self.total_mass();
        if !(t > T::zero() && t.is_finite()) {
            return fail(format!("total mass is {t}"));
        }
        if let Some(z) = self.kanter_z {
            if !(z > T::zero() && z < T::one()) {
                return fail(format!("auxiliary z = {z} outside (0,1)"));
            }
        }
        Ok(())
    }

    pub fn clusters(&self) -> &[Cluster<T>] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn surplus(&self) -> T {
        self.surplus
    }

    pub fn set_surplus(&mut self, v: T) {
        self.surplus = v;
    }

    pub fn kanter_z(&self) -> Option<T> {
        self.kanter_z
    }

    pub fn set_kanter_z(&mut self, z: Option<T>) {
        self.kanter_z = z;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(PkError::Precondition("replacement data changes n".into()));
        }
        self.data = data;
        Ok(())
    }

    pub fn empty_pool(&self) -> &[T] {
        &self.empty_pool
    }

    pub fn empty_pool_mut(&mut self) -> &mut [T] {
        &mut self.empty_pool
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.get(i).copied().filter(|&l| l != UNASSIGNED)
    }

    pub fn weight_sum(&self) -> T {
        self.clusters.iter().fold(T::zero(), |a, c| a + c.weight)
    }

    pub fn total_mass(&self) -> T {
        self.surplus + self.weight_sum()
    }

    /// Remaining stick length before cluster `i` in creation order:
    /// `V + Σ_{j ≥ i} J̃_j`.
    pub fn surpmass(&self, i: usize) -> T {
        self.surplus
            + self.clusters[i..]
                .iter()
                .fold(T::zero(), |a, c| a + c.weight)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    pub fn set_weight(&mut self, c: usize, w: T) {
        self.clusters[c].weight = w;
    }

    pub fn set_param(&mut self, c: usize, y: T) {
        self.clusters[c].param = y;
    }

    /// Takes observation `i` out of its cluster. If the cluster empties it is
    /// deleted and returned so the caller can recycle its weight and
    /// parameter.
    pub fn remove_observation(&mut self, i: usize) -> Option<Cluster<T>> {
        let c = self.labels[i];
        if c == UNASSIGNED {
            return None;
        }
        self.labels[i] = UNASSIGNED;
        self.clusters[c].members.remove(&i);
        if !self.clusters[c].members.is_empty() {
            return None;
        }
        let removed = self.clusters.remove(c);
        for l in self.labels.iter_mut() {
            if *l != UNASSIGNED && *l > c {
                *l -= 1;
            }
        }
        Some(removed)
    }

    pub fn add_to_cluster(&mut self, i: usize, c: usize) {
        debug_assert_eq!(self.labels[i], UNASSIGNED);
        self.clusters[c].members.insert(i);
        self.labels[i] = c;
    }

    /// Opens a new cluster at the end of the creation order holding only `i`.
    pub fn open_cluster(&mut self, i: usize, weight: T, param: T) -> usize {
        debug_assert_eq!(self.labels[i], UNASSIGNED);
        let c = self.clusters.len();
        self.clusters.push(Cluster {
            members: BTreeSet::from([i]),
            weight,
            param,
        });
        self.labels[i] = c;
        c
    }

    fn member_sum(&self, c: usize) -> T {
        self.clusters[c]
            .members
            .iter()
            .fold(T::zero(), |a, &i| a + self.data[i])
    }
}

/// Per-sweep snapshot emitted by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T> {
    pub iter: usize,
    pub k: usize,
    pub surplus: T,
    pub total: T,
    pub log_joint: T,
    pub sizes: Vec<usize>,
    /// Whether the MH surplus proposal was accepted; `None` for slice variants.
    pub accept_mh: Option<bool>,
    pub seconds: f64,
}

/// Unnormalised log of the joint over partition, weights, surplus, cluster
/// parameters and data:
///
/// `-n log T + log h(T) + log f(V) + Σ_k [|c_k| log s_k + log ρ(s_k) + log H₀(y_k)
///  + Σ_{i∈c_k} log F(x_i | y_k)]`, with `T = V + Σ s_k`.
pub fn log_joint<T: Real>(
    state: &SeatingState<T>,
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
) -> Result<T> {
    state.validate()?;
    let n = T::from_usize(state.n()).unwrap();
    let t = state.total_mass();
    let mut acc = -n * t.ln() + prior.log_h(t) + prior.log_f(state.surplus)?;
    for c in &state.clusters {
        let size = T::from_usize(c.size()).unwrap();
        acc += size * c.weight.ln() + prior.log_levy(c.weight)? + lik.log_base(c.param);
        for &i in &c.members {
            acc += lik.log_lik(state.data[i], c.param);
        }
    }
    Ok(acc)
}

/// `log P(V = v | rest) = -n log(v + S) + log f(v) + log h(v + S) + const`.
pub fn log_cond_surplus<T: Real>(v: T, state: &SeatingState<T>, prior: &PriorSpec<T>) -> Result<T> {
    if !(v > T::zero()) || !v.is_finite() {
        return Ok(T::neg_infinity());
    }
    let n = T::from_usize(state.n()).unwrap();
    let t = v + state.weight_sum();
    Ok(-n * t.ln() + prior.log_f(v)? + prior.log_h(t))
}

/// Joint log density of `(V, Z)` under Kanter's augmentation:
/// `-n log(v+S) + log h(v+S) + log(σ/(1-σ)) - log(v)/(1-σ) + log A(z) - v^{-σ/(1-σ)} A(z)`.
/// Integrating over `z ∈ (0,1)` recovers [`log_cond_surplus`].
pub fn log_cond_surplus_aux<T: Real>(
    v: T,
    z: T,
    state: &SeatingState<T>,
    prior: &PriorSpec<T>,
) -> Result<T> {
    let sigma = prior.stable_params()?.sigma();
    if !(v > T::zero()) || !v.is_finite() {
        return Ok(T::neg_infinity());
    }
    let n = T::from_usize(state.n()).unwrap();
    let t = v + state.weight_sum();
    let one = T::one();
    let kanter = (sigma / (one - sigma)).ln() - v.ln() / (one - sigma) + log_cond_z(z, v, prior)?;
    Ok(-n * t.ln() + prior.log_h(t) + kanter)
}

/// `log P(Z = z | V = v) = log A(z) - v^{-σ/(1-σ)} A(z) + const`.
pub fn log_cond_z<T: Real>(z: T, v: T, prior: &PriorSpec<T>) -> Result<T> {
    let sigma = prior.stable_params()?.sigma();
    if !(z > T::zero() && z < T::one()) || !(v > T::zero()) {
        return Ok(T::neg_infinity());
    }
    let la = log_zolotarev_a(z, sigma);
    let c = (-sigma / (T::one() - sigma) * v.ln()).exp();
    let val = la - c * la.exp();
    Ok(if val.is_nan() { T::neg_infinity() } else { val })
}

/// Log complete conditional of the `i`-th size-biased weight with the
/// surplus held fixed:
/// `-n log(v + s + S_{-i}) + log h(v + s + S_{-i}) + |c_i| log s + log ρ(s)`.
///
/// The stick-breaking indicator `s < Surpmass_i` is evaluated at the
/// candidate value and therefore only excludes `s ≤ 0`.
pub fn log_cond_weight<T: Real>(
    s: T,
    i: usize,
    state: &SeatingState<T>,
    prior: &PriorSpec<T>,
) -> Result<T> {
    let cl = state.clusters.get(i).ok_or_else(|| {
        PkError::Precondition(format!(
            "cluster index {i} out of range (K = {})",
            state.num_clusters()
        ))
    })?;
    if !(s > T::zero()) || !s.is_finite() {
        return Ok(T::neg_infinity());
    }
    let others = state.weight_sum() - cl.weight;
    let t = state.surplus + others + s;
    let n = T::from_usize(state.n()).unwrap();
    let size = T::from_usize(cl.size()).unwrap();
    Ok(-n * t.ln() + prior.log_h(t) + size * s.ln() + prior.log_levy(s)?)
}

/// Log reassignment scores for observation `i` (already removed from its
/// cluster): `log s_c + log F(x_i | y_c)` for each occupied cluster, then
/// `log(V/M) + log F(x_i | y^e_j)` for each pool slot.
pub fn log_predictive_weights<T: Real>(
    i: usize,
    state: &SeatingState<T>,
    lik: &LikelihoodSpec<T>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(state.num_clusters() + state.empty_pool.len());
    log_predictive_weights_into(i, state, lik, &mut out);
    out
}

pub(crate) fn log_predictive_weights_into<T: Real>(
    i: usize,
    state: &SeatingState<T>,
    lik: &LikelihoodSpec<T>,
    out: &mut Vec<T>,
) {
    debug_assert!(
        state.label(i).is_none(),
        "observation {i} must be unassigned"
    );
    out.clear();
    let x = state.data[i];
    for c in &state.clusters {
        out.push(c.weight.ln() + lik.log_lik(x, c.param));
    }
    let m = T::from_usize(state.empty_pool.len()).unwrap();
    let new_mass = (state.surplus / m).ln();
    for &y in &state.empty_pool {
        out.push(new_mass + lik.log_lik(x, y));
    }
}

/// Conjugate Normal posterior `(mean, variance)` of cluster `c`'s parameter.
pub fn cluster_param_posterior<T: Real>(
    state: &SeatingState<T>,
    c: usize,
    lik: &LikelihoodSpec<T>,
) -> (T, T) {
    if lik.flat {
        return (lik.mu0, lik.sigma0_sq);
    }
    let n = T::from_usize(state.clusters[c].size()).unwrap();
    let prec = lik.sigma0_sq.recip() + n / lik.sigma1_sq;
    let mean = (lik.mu0 / lik.sigma0_sq + state.member_sum(c) / lik.sigma1_sq) / prec;
    (mean, prec.recip())
}

/// Redraws every occupied cluster mean from its Normal full conditional.
pub fn update_cluster_params<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    lik: &LikelihoodSpec<T>,
    rng: &mut R,
) {
    for c in 0..state.num_clusters() {
        let (m, v) = cluster_param_posterior(state, c, lik);
        state.clusters[c].param = m + v.sqrt() * T::std_normal(rng);
    }
}

/// Non-conjugate path: one slice transition per cluster mean against
/// `log H₀(y) + Σ log F(x_i | y)`.
pub fn update_cluster_params_slice<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    lik: &LikelihoodSpec<T>,
    rng: &mut R,
) -> Result<()> {
    let width = lik.sigma0_sq.min(lik.sigma1_sq).sqrt();
    let cfg = SliceConfig::new(width)?;
    for c in 0..state.num_clusters() {
        let members: Vec<T> = state.clusters[c]
            .members
            .iter()
            .map(|&i| state.data[i])
            .collect();
        let target = |y: T| {
            lik.log_base(y)
                + members
                    .iter()
                    .fold(T::zero(), |a, &x| a + lik.log_lik(x, y))
        };
        let y0 = state.clusters[c].param;
        state.clusters[c].param = slice_sample(target, y0, &cfg, rng)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_kit::RngStream;
    use approx::assert_relative_eq;

    fn one_cluster(x: f64, weight: f64, param: f64, surplus: f64) -> SeatingState<f64> {
        SeatingState::from_parts(
            vec![x],
            vec![Cluster {
                members: BTreeSet::from([0]),
                weight,
                param,
            }],
            surplus,
            vec![0.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn log_joint_by_hand_logbeta() {
        let prior = PriorSpec::log_beta(1.0, 1.0).unwrap();
        let lik = LikelihoodSpec::normal(0.0, 2.0, 0.5).unwrap();
        let (x, s, y, v) = (0.3, 0.8, 0.1, 1.7);
        let st = one_cluster(x, s, y, v);
        let t: f64 = v + s;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let want = -t.ln()                      // t^{-n}, n = 1
            + (-v)                              // f(v) = e^{-v}
            + s.ln()                            // s^{|c|}
            + ((-s).exp() / s).ln()             // ρ(s) = e^{-s}/s for b = 1
            - 0.5 * (ln2pi + 2f64.ln() + y * y / 2.0)
            - 0.5 * (ln2pi + 0.5f64.ln() + (x - y) * (x - y) / 0.5);
        let got = log_joint(&st, &prior, &lik).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn shifting_data_moves_only_likelihood() {
        let prior = PriorSpec::stable(0.5, TiltFunction::NormalizedStable).unwrap();
        let lik = LikelihoodSpec::normal(0.0, 1.0, 1.0).unwrap();
        let a = one_cluster(0.2, 0.4, 0.0, 0.9);
        let b = one_cluster(1.2, 0.4, 0.0, 0.9);
        let flat = LikelihoodSpec::flat();
        let da = log_joint(&a, &prior, &lik).unwrap() - log_joint(&a, &prior, &flat).unwrap();
        let db = log_joint(&b, &prior, &lik).unwrap() - log_joint(&b, &prior, &flat).unwrap();
        let shift = log_normal(1.2, 0.0, 1.0) - log_normal(0.2, 0.0, 1.0);
        assert_relative_eq!(db - da, shift, epsilon = 1e-12);
    }

    #[test]
    fn corrupted_state_is_rejected() {
        let prior = PriorSpec::log_beta(1.0, 1.0).unwrap();
        let lik = LikelihoodSpec::normal(0.0, 1.0, 1.0).unwrap();
        let mut st = one_cluster(0.0, 1.0, 0.0, 1.0);
        st.set_surplus(-0.5);
        assert!(matches!(
            log_joint(&st, &prior, &lik),
            Err(PkError::Precondition(_))
        ));
        let bad = SeatingState::from_parts(
            vec![0.0, 1.0],
            vec![Cluster {
                members: BTreeSet::from([0]),
                weight: 1.0,
                param: 0.0,
            }],
            1.0,
            vec![0.0],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn surplus_conditional_by_hand() {
        let prior = PriorSpec::log_beta(1.0, 1.0).unwrap();
        let st = SeatingState::from_parts(
            vec![0.0, 0.0],
            vec![Cluster {
                members: BTreeSet::from([0, 1]),
                weight: 1.0,
                param: 0.0,
            }],
            0.5,
            vec![0.0],
        )
        .unwrap();
        let got = log_cond_surplus(1.0, &st, &prior).unwrap();
        assert_relative_eq!(got, -2.0 * 2f64.ln() - 1.0, epsilon = 1e-14);
        assert_eq!(
            log_cond_surplus(0.0, &st, &prior).unwrap(),
            f64::NEG_INFINITY
        );

        let stable = PriorSpec::stable(0.5, TiltFunction::NormalizedStable).unwrap();
        assert!(log_cond_surplus(1e-4, &st, &stable).unwrap() < -2000.0);
    }

    #[test]
    fn aux_conditionals_finite_and_match_a() {
        let prior = PriorSpec::stable(0.5, TiltFunction::NormalizedStable).unwrap();
        let st = one_cluster(0.0, 1.0, 0.0, 1.0);
        let lz = log_cond_z(0.5, 1.0, &prior).unwrap();
        assert_relative_eq!(lz, 0.5f64.ln() - 0.5, epsilon = 1e-14);
        assert!(log_cond_surplus_aux(1e4, 0.5, &st, &prior)
            .unwrap()
            .is_finite());
        assert!(log_cond_z(0.5, 1e4, &prior).unwrap().is_finite());
        let lb = PriorSpec::log_beta(1.0, 2.0).unwrap();
        assert!(log_cond_z(0.5, 1.0, &lb).is_err());
    }

    #[test]
    fn weight_conditional_exponents() {
        let stable = PriorSpec::stable(0.5, TiltFunction::NormalizedStable).unwrap();
        let st = one_cluster(0.0, 1.0, 0.0, 1.0);
        // with n = 1, |c| = 1, the s-dependence besides the total-mass factor
        // is s^{|c| - σ - 1}
        let a = log_cond_weight(0.5, 0, &st, &stable).unwrap();
        let b = log_cond_weight(2.0, 0, &st, &stable).unwrap();
        let expected =
            -(3.0f64.ln() - 1.5f64.ln()) + (1.0 - 0.5 - 1.0) * (2.0f64.ln() - 0.5f64.ln());
        assert_relative_eq!(b - a, expected, epsilon = 1e-12);
        assert!(log_cond_weight(1.0, 3, &st, &stable).is_err());
        assert_eq!(
            log_cond_weight(0.0, 0, &st, &stable).unwrap(),
            f64::NEG_INFINITY
        );

        let lb = PriorSpec::log_beta(1.0, 1.0).unwrap();
        let st = SeatingState::from_parts(
            vec![0.0; 3],
            vec![Cluster {
                members: BTreeSet::from([0, 1, 2]),
                weight: 1.0,
                param: 0.0,
            }],
            1.0,
            vec![0.0],
        )
        .unwrap();
        let got = log_cond_weight(1.0, 0, &st, &lb).unwrap();
        assert_relative_eq!(got, -3.0 * 2f64.ln() + 0.0 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn predictive_scores() {
        let lik = LikelihoodSpec::normal(0.0, 1.0, 1.0).unwrap();
        let mut st = SeatingState::from_parts(
            vec![0.0, 0.0],
            vec![Cluster {
                members: BTreeSet::from([0, 1]),
                weight: 2.0,
                param: 0.0,
            }],
            1.0,
            vec![10.0],
        )
        .unwrap();
        st.remove_observation(1);
        let w = log_predictive_weights(1, &st, &lik);
        assert_eq!(w.len(), 2);
        assert_relative_eq!(w[0], 2f64.ln() + log_normal(0.0, 0.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(w[1], log_normal(0.0, 10.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(w[0] - w[1], 2f64.ln() + 50.0, epsilon = 1e-12);
    }

    #[test]
    fn removing_last_member_deletes_and_relabels() {
        let mut st = SeatingState::from_parts(
            vec![0.0, 1.0, 2.0],
            vec![
                Cluster {
                    members: BTreeSet::from([0]),
                    weight: 1.0,
                    param: 0.0,
                },
                Cluster {
                    members: BTreeSet::from([1, 2]),
                    weight: 2.0,
                    param: 1.0,
                },
            ],
            0.5,
            vec![0.0],
        )
        .unwrap();
        let gone = st.remove_observation(0).unwrap();
        assert_eq!(gone.weight, 1.0);
        assert_eq!(st.label(1), Some(0));
        let c = st.open_cluster(0, 0.25, 3.0);
        assert_eq!(c, 1);
        st.validate().unwrap();
        assert_relative_eq!(st.surpmass(1), 0.75);
    }

    #[test]
    fn conjugate_posterior_singleton() {
        let lik = LikelihoodSpec::normal(0.0, 1.0, 1.0).unwrap();
        let st = one_cluster(5.0, 1.0, 0.0, 1.0);
        let (m, v) = cluster_param_posterior(&st, 0, &lik);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(v, 0.5);

        let wide = LikelihoodSpec::normal(0.0, 1e12, 1.0).unwrap();
        let (m, _) = cluster_param_posterior(&st, 0, &wide);
        assert_relative_eq!(m, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn conjugate_and_slice_param_updates_hit_posterior_mean() {
        let lik = LikelihoodSpec::normal(0.0, 1.0, 1.0).unwrap();
        let mut rng = RngStream::new(11);
        let mut st = one_cluster(5.0, 1.0, 0.0, 1.0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            update_cluster_params(&mut st, &lik, &mut rng);
            sum += st.clusters()[0].param;
        }
        let se = (0.5f64 / n as f64).sqrt();
        assert!((sum / n as f64 - 2.5).abs() < 3.0 * se);

        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            update_cluster_params_slice(&mut st, &lik, &mut rng).unwrap();
            let y = st.clusters()[0].param;
            sum += y;
            sq += y * y;
        }
        let m = sum / n as f64;
        assert!((m - 2.5).abs() < 0.02, "{m}");
        assert!((sq / n as f64 - m * m - 0.5).abs() < 0.02);
    }
}

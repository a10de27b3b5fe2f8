//! Hybrid conditional/marginal Gibbs sampler.
//!
//! One sweep updates the surplus mass, then every occupied weight, then
//! reassigns each observation with the ReUse scheme, then redraws the cluster
//! parameters. The surplus and weights are sampled conditionally; the
//! infinitely many unoccupied atoms are integrated out into the surplus.

use std::time::Instant;

use crate::error::{PkError, Result};
use crate::model::{
    log_cond_surplus, log_cond_surplus_aux, log_cond_weight, log_joint,
    log_predictive_weights_into, update_cluster_params, update_cluster_params_slice, Cluster,
    LikelihoodSpec, PriorSpec, SeatingState, TraceRecord,
};
use crate::random_kit::{
    sample_kanter_z, sample_logbeta_total, sample_new_weight, sample_positive_stable,
    sample_tilted_stable, NewWeightMethod,
};
use crate::real::{lit, Real};
use crate::slice::{slice_sample, SliceConfig};

/// How the surplus mass is updated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerVariant<T> {
    /// Slice sampling of `V` jointly with Kanter's auxiliary `Z` (σ-stable
    /// class).
    SliceAux,
    /// Independence Metropolis-Hastings with an exponentially tilted stable
    /// proposal; `lambda = 0` proposes from the plain stable law.
    MhStable { lambda: T },
    /// Slice sampling of `V` against its closed-form conditional (−logBeta
    /// class).
    DirectSlice,
}

impl<T: Real> SamplerVariant<T> {
    pub fn check(&self, prior: &PriorSpec<T>) -> Result<()> {
        let stable = matches!(prior, PriorSpec::StableClass { .. });
        match self {
            SamplerVariant::SliceAux | SamplerVariant::MhStable { .. } if !stable => Err(
                PkError::Config("SliceAux and MhStable need a stable-class prior".into()),
            ),
            SamplerVariant::DirectSlice if stable => {
                Err(PkError::Config("DirectSlice needs a -logBeta prior".into()))
            }
            SamplerVariant::MhStable { lambda }
                if !(*lambda >= T::zero() && lambda.is_finite()) =>
            {
                Err(PkError::Config(format!(
                    "MH tilt must be >= 0, got {lambda}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerVariant::SliceAux => "slice_aux",
            SamplerVariant::MhStable { .. } => "mh_stable",
            SamplerVariant::DirectSlice => "direct_slice",
        }
    }
}

/// When the pool of candidate parameters for new clusters is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolRefresh {
    /// Whole pool redrawn after every observation.
    #[default]
    PerObs,
    /// Only a used slot is redrawn immediately; the whole pool at sweep end.
    PerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOrder {
    #[default]
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamUpdate {
    #[default]
    Conjugate,
    Slice,
}

/// Deliberate errors for checking that correctness harnesses can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Every weight is doubled after its update.
    DoubleWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig<T> {
    pub variant: SamplerVariant<T>,
    /// Number of candidate parameters for new clusters (`M`).
    pub pool_size: usize,
    pub pool_refresh: PoolRefresh,
    pub scan_order: ScanOrder,
    pub param_update: ParamUpdate,
    pub new_weight: NewWeightMethod,
    /// Slice width on the log scale for `V` and the weights.
    pub log_width: T,
    pub fault: Option<Fault>,
}

impl<T: Real> SamplerConfig<T> {
    pub fn new(variant: SamplerVariant<T>) -> Self {
        SamplerConfig {
            variant,
            pool_size: 3,
            pool_refresh: PoolRefresh::default(),
            scan_order: ScanOrder::default(),
            param_update: ParamUpdate::default(),
            new_weight: NewWeightMethod::default(),
            log_width: T::one(),
            fault: None,
        }
    }

    pub fn validate(&self, prior: &PriorSpec<T>) -> Result<()> {
        self.variant.check(prior)?;
        if self.pool_size == 0 {
            return Err(PkError::Config("pool size M must be >= 1".into()));
        }
        if !(self.log_width > T::zero() && self.log_width.is_finite()) {
            return Err(PkError::Config(format!(
                "slice width must be > 0, got {}",
                self.log_width
            )));
        }
        Ok(())
    }
}

/// Running Metropolis-Hastings acceptance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MhStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MhStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

// Slice step on log x for a density on (0, ∞); errors from the density are
// carried out of the closure.
fn slice_log_scale<T, F, R>(mut log_density: F, x0: T, width: T, rng: &mut R) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
    R: rand::Rng + ?Sized,
{
    let cfg = SliceConfig::new(width)?;
    let mut failure = None;
    let u = slice_sample(
        |u: T| {
            let x = u.exp();
            if !(x > T::zero() && x.is_finite()) {
                return T::neg_infinity();
            }
            match log_density(x) {
                Ok(v) => v + u,
                Err(e) => {
                    failure.get_or_insert(e);
                    T::neg_infinity()
                }
            }
        },
        x0.ln(),
        &cfg,
        rng,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(u?.exp())
}

/// `log r` of the independence MH step for the surplus.
pub fn mh_log_ratio<T: Real>(
    v: T,
    v_new: T,
    weight_sum: T,
    n: usize,
    lambda: T,
    prior: &PriorSpec<T>,
) -> T {
    let n = T::from_usize(n).unwrap();
    let part = |x: T| -n * (x + weight_sum).ln() + prior.log_h(x + weight_sum);
    (part(v_new) - lambda * v) - (part(v) - lambda * v_new)
}

/// Updates the surplus mass; returns whether an MH proposal was accepted
/// (`None` for the slice variants).
pub fn update_surplus<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    prior: &PriorSpec<T>,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<Option<bool>> {
    cfg.variant.check(prior)?;
    let v = state.surplus();
    match cfg.variant {
        SamplerVariant::SliceAux => {
            let params = prior.stable_params()?;
            let z = sample_kanter_z(v, params, rng)?;
            state.set_kanter_z(Some(z));
            let snapshot = &*state;
            let v_new = slice_log_scale(
                |x| log_cond_surplus_aux(x, z, snapshot, prior),
                v,
                cfg.log_width,
                rng,
            )?;
            state.set_surplus(v_new);
            Ok(None)
        }
        SamplerVariant::MhStable { lambda } => {
            let params = prior.stable_params()?;
            let v_new = sample_tilted_stable(params, lambda, rng)?;
            let r = mh_log_ratio(v, v_new, state.weight_sum(), state.n(), lambda, prior);
            let accept = !(r < T::zero()) || T::exp1(rng) > -r;
            if accept {
                state.set_surplus(v_new);
            }
            Ok(Some(accept))
        }
        SamplerVariant::DirectSlice => {
            let snapshot = &*state;
            let v_new = slice_log_scale(
                |x| log_cond_surplus(x, snapshot, prior),
                v,
                cfg.log_width,
                rng,
            )?;
            state.set_surplus(v_new);
            Ok(None)
        }
    }
}

/// Slice-updates each occupied weight with the surplus held fixed.
///
/// Clusters are visited in order of their smallest member. That order is a
/// function of the partition alone, which this step leaves unchanged; the
/// creation order would not do, because it carries information about the
/// weights (the newest cluster's weight was just drawn from the surplus) and
/// a weight-dependent scan order breaks invariance.
pub fn update_weights<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    prior: &PriorSpec<T>,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<()> {
    let mut order: Vec<usize> = (0..state.num_clusters()).collect();
    order.sort_by_key(|&c| state.clusters()[c].members.first().copied());
    for c in order {
        let snapshot = &*state;
        let s0 = snapshot.clusters()[c].weight;
        let mut s = slice_log_scale(
            |x| log_cond_weight(x, c, snapshot, prior),
            s0,
            cfg.log_width,
            rng,
        )?;
        if cfg.fault == Some(Fault::DoubleWeights) {
            s = s + s;
        }
        state.set_weight(c, s);
    }
    Ok(())
}

// Index drawn with probability proportional to exp(scores).
fn sample_log_categorical<T: Real, R: rand::Rng + ?Sized>(
    scores: &[T],
    buf: &mut Vec<T>,
    rng: &mut R,
) -> Result<usize> {
    let peak = scores.iter().copied().fold(T::neg_infinity(), T::max);
    if !peak.is_finite() {
        return Err(PkError::Evaluation(format!(
            "reassignment scores have maximum {peak}"
        )));
    }
    buf.clear();
    let mut acc = T::zero();
    for &s in scores {
        acc += (s - peak).exp();
        buf.push(acc);
    }
    let u = T::open01(rng) * acc;
    Ok(buf.partition_point(|c| *c < u).min(scores.len() - 1))
}

fn refresh_pool<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    lik: &LikelihoodSpec<T>,
    rng: &mut R,
) {
    for y in state.empty_pool_mut() {
        *y = lik.sample_base(rng);
    }
}

/// Reassigns every observation in turn (ReUse). An emptied cluster returns
/// its weight to the surplus and its parameter to a random pool slot; a new
/// cluster takes a weight out of the surplus and its parameter from the
/// chosen slot.
pub fn reassign_all<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<()> {
    let n = state.n();
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.scan_order == ScanOrder::Random {
        use rand::seq::SliceRandom;
        order.shuffle(rng);
    }
    let mut scores = Vec::new();
    let mut buf = Vec::new();
    for i in order {
        if let Some(gone) = state.remove_observation(i) {
            state.set_surplus(state.surplus() + gone.weight);
            let m = state.empty_pool().len();
            let slot = rng.random_range(0..m);
            state.empty_pool_mut()[slot] = gone.param;
        }
        log_predictive_weights_into(i, state, lik, &mut scores);
        let k = state.num_clusters();
        let pick = sample_log_categorical(&scores, &mut buf, rng)?;
        if pick < k {
            state.add_to_cluster(i, pick);
        } else {
            let slot = pick - k;
            let v = state.surplus();
            let s = sample_new_weight(v, prior, cfg.new_weight, rng)?;
            if !(s > T::zero() && s < v) {
                return Err(PkError::Internal(format!(
                    "new weight {s} outside (0, {v})"
                )));
            }
            state.set_surplus(v - s);
            let y = state.empty_pool()[slot];
            state.open_cluster(i, s, y);
            if cfg.pool_refresh == PoolRefresh::PerSlot {
                state.empty_pool_mut()[slot] = lik.sample_base(rng);
            }
        }
        if cfg.pool_refresh == PoolRefresh::PerObs {
            refresh_pool(state, lik, rng);
        }
    }
    if cfg.pool_refresh == PoolRefresh::PerSlot {
        refresh_pool(state, lik, rng);
    }
    Ok(())
}

/// Draws the initial state: every observation in one cluster, the total
/// mass from the prior's underlying CRM, the cluster's weight from the
/// new-weight kernel and its parameter from the base.
pub fn initial_state<T: Real, R: rand::Rng + ?Sized>(
    data: Vec<T>,
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<SeatingState<T>> {
    cfg.validate(prior)?;
    let total = match prior {
        PriorSpec::StableClass { params, .. } => sample_positive_stable(params, rng),
        PriorSpec::LogBetaClass { params } => sample_logbeta_total(params, rng),
    };
    let pool: Vec<T> = (0..cfg.pool_size).map(|_| lik.sample_base(rng)).collect();
    let mut state = if data.is_empty() {
        SeatingState::from_parts(data, Vec::new(), total, pool)?
    } else {
        let s = sample_new_weight(total, prior, cfg.new_weight, rng)?;
        let cluster = Cluster {
            members: (0..data.len()).collect(),
            weight: s,
            param: lik.sample_base(rng),
        };
        SeatingState::from_parts(data, vec![cluster], total - s, pool)?
    };
    if cfg.variant == SamplerVariant::SliceAux {
        let z = sample_kanter_z(state.surplus(), prior.stable_params()?, rng)?;
        state.set_kanter_z(Some(z));
    }
    Ok(state)
}

/// One full sweep. The returned record carries the log joint after the
/// sweep; `seconds` is left at zero for the caller to fill.
pub fn gibbs_sweep<T: Real, R: rand::Rng + ?Sized>(
    state: &mut SeatingState<T>,
    prior: &PriorSpec<T>,
    lik: &LikelihoodSpec<T>,
    cfg: &SamplerConfig<T>,
    iter: usize,
    rng: &mut R,
) -> Result<TraceRecord<T>> {
    let accept_mh = update_surplus(state, prior, cfg, rng)?;
    update_weights(state, prior, cfg, rng)?;
    reassign_all(state, prior, lik, cfg, rng)?;
    match cfg.param_update {
        ParamUpdate::Conjugate => update_cluster_params(state, lik, rng),
        ParamUpdate::Slice => update_cluster_params_slice(state, lik, rng)?,
    }
    Ok(TraceRecord {
        iter,
        k: state.num_clusters(),
        surplus: state.surplus(),
        total: state.total_mass(),
        log_joint: log_joint(state, prior, lik)?,
        sizes: state.cluster_sizes(),
        accept_mh,
        seconds: 0.0,
    })
}

/// A single chain: configuration, state and running statistics.
#[derive(Debug, Clone)]
pub struct Chain<T> {
    pub prior: PriorSpec<T>,
    pub lik: LikelihoodSpec<T>,
    pub cfg: SamplerConfig<T>,
    pub state: SeatingState<T>,
    pub mh: MhStats,
    iter: usize,
    started: Instant,
}

impl<T: Real> Chain<T> {
    pub fn new<R: rand::Rng + ?Sized>(
        data: Vec<T>,
        prior: PriorSpec<T>,
        lik: LikelihoodSpec<T>,
        cfg: SamplerConfig<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let state = initial_state(data, &prior, &lik, &cfg, rng)?;
        Ok(Chain {
            prior,
            lik,
            cfg,
            state,
            mh: MhStats::default(),
            iter: 0,
            started: Instant::now(),
        })
    }

    /// Runs one sweep; `seconds` in the record is wall time since the chain
    /// was created.
    pub fn step<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TraceRecord<T>> {
        self.iter += 1;
        let mut rec = gibbs_sweep(
            &mut self.state,
            &self.prior,
            &self.lik,
            &self.cfg,
            self.iter,
            rng,
        )?;
        if let Some(a) = rec.accept_mh {
            self.mh.proposed += 1;
            self.mh.accepted += u64::from(a);
        }
        rec.seconds = self.started.elapsed().as_secs_f64();
        Ok(rec)
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }
}

/// Default MH tilt: 50 at σ = 1/2, otherwise 0.
pub fn default_mh_lambda<T: Real>(sigma: T) -> T {
    if sigma == lit(0.5) {
        lit(50.0)
    } else {
        T::zero()
    }
}

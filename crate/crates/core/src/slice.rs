//! Univariate slice sampling with stepping out and shrinkage.

use crate::error::{PkError, Result};
use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceConfig<T> {
    pub width: T,
    pub max_steps: usize,
    pub lower: Option<T>,
    pub upper: Option<T>,
}

impl<T: Real> SliceConfig<T> {
    pub fn new(width: T) -> Result<Self> {
        if !(width > T::zero() && width.is_finite()) {
            return Err(PkError::Config(format!(
                "slice width must be > 0, got {width}"
            )));
        }
        Ok(SliceConfig {
            width,
            max_steps: 32,
            lower: None,
            upper: None,
        })
    }

    pub fn bounded(width: T, lower: Option<T>, upper: Option<T>) -> Result<Self> {
        if let (Some(l), Some(u)) = (lower, upper) {
            if !(l < u) {
                return Err(PkError::Config(format!(
                    "slice bounds need lower < upper, got {l}, {u}"
                )));
            }
        }
        Ok(SliceConfig {
            lower,
            upper,
            ..Self::new(width)?
        })
    }

    pub fn with_max_steps(self, max_steps: usize) -> Self {
        SliceConfig { max_steps, ..self }
    }

    fn inside(&self, x: T) -> bool {
        self.lower.is_none_or(|l| x > l) && self.upper.is_none_or(|u| x < u)
    }
}

/// One slice-sampling transition from `x0` leaving `exp(log_density)`
/// invariant. Bounds are open; the bracket is truncated to them.
pub fn slice_sample<T, F, R>(
    mut log_density: F,
    x0: T,
    cfg: &SliceConfig<T>,
    rng: &mut R,
) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> T,
    R: rand::Rng + ?Sized,
{
    if !cfg.inside(x0) {
        return Err(PkError::Precondition(format!(
            "slice start {x0} outside bounds"
        )));
    }
    let f0 = log_density(x0);
    if !f0.is_finite() {
        return Err(PkError::Precondition(format!(
            "log density at slice start {x0} is {f0}"
        )));
    }
    let mut f = |x: T| {
        if cfg.inside(x) {
            let v = log_density(x);
            if v.is_nan() {
                T::neg_infinity()
            } else {
                v
            }
        } else {
            T::neg_infinity()
        }
    };
    let level = f0 - T::exp1(rng);

    let w = cfg.width;
    let mut left = x0 - w * T::open01(rng);
    let mut right = left + w;
    let steps = T::from_usize(cfg.max_steps).unwrap();
    let mut j = (steps * T::open01(rng)).floor().to_usize().unwrap_or(0);
    let mut k = cfg.max_steps.saturating_sub(1).saturating_sub(j);
    if let Some(l) = cfg.lower {
        left = left.max(l);
    }
    if let Some(u) = cfg.upper {
        right = right.min(u);
    }
    while j > 0 && cfg.lower.is_none_or(|l| left > l) && f(left) > level {
        left -= w;
        if let Some(l) = cfg.lower {
            left = left.max(l);
        }
        j -= 1;
    }
    while k > 0 && cfg.upper.is_none_or(|u| right < u) && f(right) > level {
        right += w;
        if let Some(u) = cfg.upper {
            right = right.min(u);
        }
        k -= 1;
    }

    let collapse =
        lit::<T>(1e-14).max(T::epsilon() * lit(4.0)) * x0.abs().max(T::min_positive_value());
    loop {
        let x1 = left + (right - left) * T::open01(rng);
        if f(x1) > level {
            return Ok(x1);
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if right - left <= collapse {
            return Err(PkError::Sampling(format!(
                "slice bracket collapsed around {x0} without finding a point above the level"
            )));
        }
    }
}

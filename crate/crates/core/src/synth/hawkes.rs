//! Hawkes arrivals with an exponential kernel, sampled by Ogata thinning.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::rng;
use crate::special::softplus;

/// Link applied to the linear Hawkes intensity.
#[derive(Clone)]
pub enum Link {
    Identity,
    /// `scale * ln(1 + exp(x - shift))`.
    Softplus { shift: f64, scale: f64 },
    /// `min(x, cap)`.
    Min { cap: f64 },
    /// A user link. `bound(lo, hi)` must dominate the link on `[lo, hi]`;
    /// it may be omitted only for nondecreasing links.
    Custom {
        func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        monotone: bool,
        bound: Option<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
    },
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Identity => write!(f, "Identity"),
            Link::Softplus { shift, scale } => write!(f, "Softplus {{ shift: {shift}, scale: {scale} }}"),
            Link::Min { cap } => write!(f, "Min {{ cap: {cap} }}"),
            Link::Custom { monotone, bound, .. } => write!(
                f,
                "Custom {{ monotone: {monotone}, bound: {} }}",
                bound.is_some()
            ),
        }
    }
}

impl Link {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Softplus { shift, scale } => scale * softplus(x - shift),
            Link::Min { cap } => x.min(*cap),
            Link::Custom { func, .. } => func(x),
        }
    }

    /// Upper bound of the link over `[lo, hi]`.
    fn sup(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Link::Custom {
                bound: Some(bound), ..
            } => bound(lo, hi),
            _ => self.apply(hi),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HawkesSpec {
    pub base_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub link: Link,
}

impl HawkesSpec {
    pub fn new(base_rate: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::with_link(base_rate, alpha, beta, Link::Identity)
    }

    pub fn with_link(base_rate: f64, alpha: f64, beta: f64, link: Link) -> Result<Self> {
        if !(base_rate > 0.0 && base_rate.is_finite()) {
            return Err(Error::Config(format!("base rate must be positive, got {base_rate}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "kernel needs alpha >= 0 and beta > 0, got alpha={alpha}, beta={beta}"
            )));
        }
        match &link {
            Link::Identity if alpha / beta >= 1.0 => {
                return Err(Error::Config(format!(
                    "nonstationary kernel: alpha/beta = {} >= 1",
                    alpha / beta
                )))
            }
            Link::Softplus { scale, .. } if !(*scale > 0.0) => {
                return Err(Error::Config(format!("softplus scale must be positive, got {scale}")))
            }
            Link::Softplus { scale, .. } if scale * alpha / beta >= 1.0 => {
                return Err(Error::Config(format!(
                    "nonstationary kernel: scale*alpha/beta = {} >= 1",
                    scale * alpha / beta
                )))
            }
            Link::Min { cap } if !(*cap > 0.0) => {
                return Err(Error::Config(format!("cap must be positive, got {cap}")))
            }
            Link::Custom {
                monotone: false,
                bound: None,
                ..
            } => {
                return Err(Error::Config(
                    "a non-monotone link needs an explicit bound".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            base_rate,
            alpha,
            beta,
            link,
        })
    }

    pub fn poisson(rate: f64) -> Result<Self> {
        Self::new(rate, 0.0, 1.0)
    }

    /// Long-run rate `λ0 / (1 - α/β)` of the linear process.
    pub fn stationary_rate(&self) -> f64 {
        self.base_rate / (1.0 - self.alpha / self.beta)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.link, Link::Identity)
    }
}

/// Linear Hawkes arrivals on `[0, horizon]`. Requires an identity link.
pub fn simulate_hawkes(spec: &HawkesSpec, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    if !spec.is_linear() {
        return Err(Error::Config(
            "simulate_hawkes needs an identity link; use simulate_nonlinear_hawkes".into(),
        ));
    }
    thin(spec, horizon, &mut rng::stream(seed, STREAM))
}

/// Arrivals with intensity `φ(λ_H(t))`, `φ` being the `HawkesSpec` link.
pub fn simulate_nonlinear_hawkes(spec: &HawkesSpec, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    thin(spec, horizon, &mut rng::stream(seed, STREAM))
}

const STREAM: u64 = 0x4841_574b;

/// Ogata thinning. Between arrivals the excitation decays, so the linear
/// intensity on `[t, next)` lies in `[λ0, λ0 + E(t)]`; the envelope is the
/// link's bound over that range, refreshed after every candidate.
pub fn thin<R: Rng + ?Sized>(spec: &HawkesSpec, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid horizon {horizon}")));
    }
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut excite = 0.0;
    loop {
        let hi = spec.base_rate + excite;
        let envelope = spec.link.sup(spec.base_rate, hi);
        if !(envelope.is_finite() && envelope >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "thinning envelope {envelope} is not a finite nonnegative rate"
            )));
        }
        if envelope == 0.0 {
            break;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / envelope;
        t += wait;
        if t > horizon {
            break;
        }
        excite *= (-spec.beta * wait).exp();
        let lambda = spec.link.apply(spec.base_rate + excite);
        let u: f64 = rng.random();
        if u * envelope <= lambda {
            if lambda > envelope * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "link value {lambda} exceeds its bound {envelope}"
                )));
            }
            // Ties from a zero wait would break strict ordering.
            if out.last().is_some_and(|&p| t <= p) {
                continue;
            }
            out.push(t);
            excite += spec.alpha;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_specs() {
        assert!(HawkesSpec::new(1.0, 1.0, 1.0).is_err());
        assert!(HawkesSpec::new(0.0, 0.1, 1.0).is_err());
        let wild = Link::Custom {
            func: Arc::new(|x: f64| x.sin().abs()),
            monotone: false,
            bound: None,
        };
        assert!(HawkesSpec::with_link(1.0, 0.5, 1.0, wild).is_err());
    }

    #[test]
    fn strictly_increasing_and_deterministic() {
        let spec = HawkesSpec::new(1.0, 0.5, 1.0).unwrap();
        let a = simulate_hawkes(&spec, 500.0, 3).unwrap();
        let b = simulate_hawkes(&spec, 500.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&t| (0.0..=500.0).contains(&t)));
    }

    #[test]
    fn identity_link_matches_linear_exactly() {
        let spec = HawkesSpec::new(1.0, 0.5, 1.0).unwrap();
        let a = simulate_hawkes(&spec, 300.0, 11).unwrap();
        let b = simulate_nonlinear_hawkes(&spec, 300.0, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cap_limits_rate() {
        let spec = HawkesSpec::with_link(1.0, 0.5, 1.0, Link::Min { cap: 0.5 }).unwrap();
        let t = simulate_nonlinear_hawkes(&spec, 20_000.0, 5).unwrap();
        let rate = t.len() as f64 / 20_000.0;
        assert!(rate <= 0.5 + 3.0 * (0.5f64 / 20_000.0).sqrt(), "rate {rate}");
    }

    #[test]
    fn custom_bounded_link() {
        let link = Link::Custom {
            func: Arc::new(|x: f64| 0.5 + 0.5 * x.sin()),
            monotone: false,
            bound: Some(Arc::new(|_, _| 1.0)),
        };
        let spec = HawkesSpec::with_link(1.0, 0.3, 1.0, link).unwrap();
        let t = simulate_nonlinear_hawkes(&spec, 1000.0, 2).unwrap();
        assert!(!t.is_empty());
        assert!(simulate_hawkes(&spec, 10.0, 2).is_err());
    }
}

//! Synthetic G/G/inf traces: an arrival law paired with a service law.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};

use super::hawkes::{thin, HawkesSpec, Link};
use super::phase_type::PhaseTypeSpec;
use super::ps::simulate_ps_queue;
use crate::error::{Error, Result};
use crate::eventlog::{ArrivalEvent, QueueTrace};
use crate::rng;

#[derive(Clone, Debug)]
pub enum ServiceLaw {
    PhaseType(PhaseTypeSpec),
    /// Processor sharing with i.i.d. exponential requirements of this rate.
    ProcessorSharing { requirement_rate: f64 },
    Exponential { rate: f64 },
    /// Mixture of log-normals, components `(weight, mu, sigma)`.
    LogNormalMixture(Vec<(f64, f64, f64)>),
    /// `s_i = base[i % 2] * (offset + δ_i) * exp(sigma * Z)` with `δ_i` the
    /// gap before arrival `i` (zero for the first).
    Alternating {
        base: [f64; 2],
        offset: f64,
        sigma: f64,
    },
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub arrivals: HawkesSpec,
    pub service: ServiceLaw,
}

/// Named synthetic families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFamily {
    HPt,
    HPs,
    NhPt,
    NhPs,
    /// Poisson arrivals, exponential services.
    MmInf,
    /// Poisson arrivals, two-mode log-normal services.
    Bimodal,
    /// Poisson arrivals, parity-alternating service scale.
    Alternating,
}

impl FromStr for DatasetFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "h-pt" => DatasetFamily::HPt,
            "h-ps" => DatasetFamily::HPs,
            "nh-pt" => DatasetFamily::NhPt,
            "nh-ps" => DatasetFamily::NhPs,
            "mm-inf" => DatasetFamily::MmInf,
            "bimodal" => DatasetFamily::Bimodal,
            "alternating" => DatasetFamily::Alternating,
            other => {
                return Err(Error::Config(format!(
                    "unknown family `{other}` (expected h-pt, h-ps, nh-pt, nh-ps, mm-inf, bimodal, alternating)"
                )))
            }
        })
    }
}

impl DatasetFamily {
    pub fn name(self) -> &'static str {
        match self {
            DatasetFamily::HPt => "h-pt",
            DatasetFamily::HPs => "h-ps",
            DatasetFamily::NhPt => "nh-pt",
            DatasetFamily::NhPs => "nh-ps",
            DatasetFamily::MmInf => "mm-inf",
            DatasetFamily::Bimodal => "bimodal",
            DatasetFamily::Alternating => "alternating",
        }
    }

    /// Documented default parameters for each family.
    pub fn default_spec(self) -> DatasetSpec {
        let hawkes = HawkesSpec::new(1.0, 0.5, 1.0).expect("valid default");
        let nonlinear = HawkesSpec::with_link(
            1.0,
            0.5,
            1.0,
            Link::Softplus {
                shift: 1.0,
                scale: 1.0,
            },
        )
        .expect("valid default");
        let poisson = HawkesSpec::poisson(1.0).expect("valid default");
        let pt = PhaseTypeSpec::new(
            vec![vec![-2.0, 1.5, 0.0], vec![0.0, -1.0, 0.5], vec![0.2, 0.0, -0.8]],
            vec![0.6, 0.3, 0.1],
        )
        .expect("valid default");
        let ps = ServiceLaw::ProcessorSharing {
            requirement_rate: 4.0,
        };
        let (arrivals, service) = match self {
            DatasetFamily::HPt => (hawkes, ServiceLaw::PhaseType(pt)),
            DatasetFamily::HPs => (hawkes, ps),
            DatasetFamily::NhPt => (nonlinear, ServiceLaw::PhaseType(pt)),
            DatasetFamily::NhPs => (nonlinear, ps),
            DatasetFamily::MmInf => (poisson, ServiceLaw::Exponential { rate: 2.0 }),
            DatasetFamily::Bimodal => (
                poisson,
                ServiceLaw::LogNormalMixture(vec![(0.6, 0.5f64.ln(), 0.15), (0.4, 3.0f64.ln(), 0.15)]),
            ),
            DatasetFamily::Alternating => (
                poisson,
                ServiceLaw::Alternating {
                    base: [1.0, 3.0],
                    offset: 0.5,
                    sigma: 0.1,
                },
            ),
        };
        DatasetSpec { arrivals, service }
    }
}

/// Trace of a named family with default parameters.
pub fn make_dataset(family: DatasetFamily, horizon: f64, seed: u64) -> Result<QueueTrace> {
    make_trace(&family.default_spec(), horizon, seed)
}

/// Samples arrivals on `[0, horizon]`, then services, then censors at the horizon.
pub fn make_trace(spec: &DatasetSpec, horizon: f64, seed: u64) -> Result<QueueTrace> {
    let arrivals = thin(&spec.arrivals, horizon, &mut rng::stream(seed, 1))?;
    let services = sample_services(&spec.service, &arrivals, &mut rng::stream(seed, 2))?;
    let events = arrivals
        .iter()
        .zip(&services)
        .map(|(&a, &s)| ArrivalEvent::new(a, Some(a + s)))
        .collect();
    QueueTrace::new(events, horizon)
}

/// Service times for the given arrivals under `law`.
pub fn sample_services<R: Rng + ?Sized>(
    law: &ServiceLaw,
    arrivals: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = arrivals.len();
    Ok(match law {
        ServiceLaw::PhaseType(pt) => (0..n).map(|_| pt.sample(rng)).collect(),
        ServiceLaw::ProcessorSharing { requirement_rate } => {
            let exp = exp_dist(*requirement_rate)?;
            let req: Vec<f64> = (0..n).map(|_| exp.sample(rng)).collect();
            let dep = simulate_ps_queue(arrivals, &req)?;
            dep.iter().zip(arrivals).map(|(d, a)| d - a).collect()
        }
        ServiceLaw::Exponential { rate } => {
            let exp = exp_dist(*rate)?;
            (0..n).map(|_| exp.sample(rng)).collect()
        }
        ServiceLaw::LogNormalMixture(comps) => {
            if comps.is_empty() {
                return Err(Error::Config("empty log-normal mixture".into()));
            }
            let total: f64 = comps.iter().map(|c| c.0).sum();
            let dists = comps
                .iter()
                .map(|&(_, mu, sigma)| {
                    LogNormal::new(mu, sigma)
                        .map_err(|e| Error::Config(format!("log-normal component: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    let mut k = comps.len() - 1;
                    for (j, c) in comps.iter().enumerate() {
                        if u < c.0 {
                            k = j;
                            break;
                        }
                        u -= c.0;
                    }
                    dists[k].sample(rng)
                })
                .collect()
        }
        ServiceLaw::Alternating {
            base,
            offset,
            sigma,
        } => (0..n)
            .map(|i| {
                let gap = if i == 0 { 0.0 } else { arrivals[i] - arrivals[i - 1] };
                let z: f64 = rng.sample(StandardNormal);
                base[i % 2] * (offset + gap) * (sigma * z).exp()
            })
            .collect(),
    })
}

fn exp_dist(rate: f64) -> Result<Exp<f64>> {
    Exp::new(rate).map_err(|e| Error::Config(format!("exponential rate {rate}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in [
            DatasetFamily::HPt,
            DatasetFamily::HPs,
            DatasetFamily::NhPt,
            DatasetFamily::NhPs,
            DatasetFamily::MmInf,
            DatasetFamily::Bimodal,
            DatasetFamily::Alternating,
        ] {
            assert_eq!(f.name().parse::<DatasetFamily>().unwrap(), f);
        }
        assert!("x-y".parse::<DatasetFamily>().is_err());
    }

    #[test]
    fn censoring_at_horizon() {
        for f in [DatasetFamily::HPt, DatasetFamily::HPs, DatasetFamily::NhPt, DatasetFamily::NhPs] {
            let t = make_dataset(f, 200.0, 9).unwrap();
            assert!(!t.is_empty());
            for e in t.events() {
                if let Some(d) = e.departure {
                    assert!(d <= 200.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_csv() {
        let a = make_dataset(DatasetFamily::HPs, 100.0, 1).unwrap();
        let b = make_dataset(DatasetFamily::HPs, 100.0, 1).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn degenerate_mm_inf() {
        let spec = DatasetSpec {
            arrivals: HawkesSpec::poisson(1.0).unwrap(),
            service: ServiceLaw::PhaseType(PhaseTypeSpec::exponential(2.0).unwrap()),
        };
        let t = make_trace(&spec, 5000.0, 3).unwrap();
        let s = t.observed_services();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() < 4.0 * 0.5 / (s.len() as f64).sqrt());
    }
}

//! Conditioning data shared by the service-time models.

use crate::error::{Error, Result};
use crate::eventlog::QueueTrace;
use crate::rpp::{RppModel, RppState};

/// Per-event inputs in normalized units, in arrival order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ServiceData {
    /// Arrival hidden state `h^a_i` after event `i`.
    pub hidden: Vec<Vec<f64>>,
    /// Standardized covariates `x_i`.
    pub covariates: Vec<Vec<f64>>,
    /// `s_i` for observed events, `T_i = T - a_i` for censored ones.
    pub targets: Vec<f64>,
    pub censored: Vec<bool>,
    /// Original time units per normalized unit.
    pub time_scale: f64,
}

impl ServiceData {
    /// Runs the frozen arrival model over `trace`, continuing from `init`.
    /// Returns the data and the arrival state after the last event.
    pub fn from_trace(
        rpp: &RppModel,
        trace: &QueueTrace,
        init: Option<&RppState>,
    ) -> Result<(Self, Option<RppState>)> {
        let states = rpp.scan(trace, init)?;
        let ts = rpp.normalizer.time_scale;
        let mut data = Self {
            time_scale: ts,
            ..Self::default()
        };
        for (e, st) in trace.events().iter().zip(&states) {
            data.hidden.push(st.h.clone());
            data.covariates.push(rpp.normalizer.covariates(&e.covariates));
            match e.service_time() {
                Some(s) => {
                    data.targets.push(s / ts);
                    data.censored.push(false);
                }
                None => {
                    data.targets.push((trace.horizon() - e.arrival) / ts);
                    data.censored.push(true);
                }
            }
        }
        Ok((data, states.last().cloned()))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.first().map_or(0, Vec::len)
    }

    pub fn cov_dim(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    /// `[h^a_i, x_i]` for event `i`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut v = self.hidden[i].clone();
        v.extend_from_slice(&self.covariates[i]);
        v
    }

    /// Row-major inputs for the given events.
    pub fn input_rows(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.input(i)).collect()
    }

    pub fn uncensored(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.censored[i]).collect()
    }

    pub fn censored_idx(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.censored[i]).collect()
    }

    /// Smallest observed service time, normalized.
    pub fn min_observed(&self) -> Option<f64> {
        self.uncensored()
            .into_iter()
            .map(|i| self.targets[i])
            .min_by(f64::total_cmp)
    }

    pub fn check_dims(&self, hidden: usize, cov: usize) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.hidden_dim() != hidden {
            return Err(Error::dim("arrival hidden state", hidden, self.hidden_dim()));
        }
        if self.cov_dim() != cov {
            return Err(Error::dim("service covariates", cov, self.cov_dim()));
        }
        Ok(())
    }
}

/// Monte Carlo service prediction for one event, original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ServicePrediction {
    /// Distribution parameters after links; empty for sample-only models.
    pub params: Vec<f64>,
    pub mean: f64,
    pub samples: Vec<f64>,
}

impl ServicePrediction {
    pub fn from_samples(params: Vec<f64>, samples: Vec<f64>) -> Self {
        let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
        Self {
            params,
            mean,
            samples,
        }
    }
}

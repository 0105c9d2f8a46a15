//! Prediction error, two-sample KS, Q-Q pairs and the constant-mean baseline.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::service::ServicePrediction;

/// Mean absolute error `1/N Σ |s_i - ŝ_i|`.
pub fn prediction_error(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::dim("prediction_error", observed.len(), predicted.len()));
    }
    if observed.is_empty() {
        return Err(Error::InvalidArgument("prediction_error needs at least one event".into()));
    }
    let total: f64 = observed.iter().zip(predicted).map(|(s, p)| (s - p).abs()).sum();
    Ok(total / observed.len() as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact supremum distance between the two empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("ks_two_sample needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("ks_two_sample got NaN".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
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
    // Once one side is exhausted the gap only shrinks toward zero.
    Ok(d)
}

/// Type-7 sample quantile of sorted data.
fn quantile7(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Matched quantiles of `a` and `b` at `k/(n+1)`, `k = 1..=n`. `n` is capped
/// at the smaller sample size.
pub fn qq_export(a: &[f64], b: &[f64], n_quantiles: usize) -> Result<Vec<(f64, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("qq_export needs two nonempty samples".into()));
    }
    if n_quantiles == 0 {
        return Err(Error::InvalidArgument("n_quantiles must be at least 1".into()));
    }
    let cap = a.len().min(b.len());
    let n = if n_quantiles > cap {
        warn!("qq_export: {n_quantiles} quantiles requested from {cap} points; using {cap}");
        cap
    } else {
        n_quantiles
    };
    let (a, b) = (sorted(a), sorted(b));
    Ok((1..=n)
        .map(|k| {
            let p = k as f64 / (n + 1) as f64;
            (quantile7(&a, p), quantile7(&b, p))
        })
        .collect())
}

/// Error of always predicting the training mean.
pub fn mean_baseline(train: &[f64], test: &[f64]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("mean_baseline needs training data".into()));
    }
    let mu = train.iter().sum::<f64>() / train.len() as f64;
    prediction_error(test, &vec![mu; test.len()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub error: f64,
    pub ks: f64,
    pub qq_pairs: Vec<(f64, f64)>,
    pub n_events: usize,
    pub n_censored: usize,
    pub baseline_error: f64,
}

impl EvalReport {
    /// Scores per-event predictions against observed service times; `None`
    /// marks a censored event, which is counted but not scored.
    pub fn from_predictions(
        observed: &[Option<f64>],
        predictions: &[ServicePrediction],
        train_observed: &[f64],
        n_quantiles: usize,
    ) -> Result<Self> {
        if observed.len() != predictions.len() {
            return Err(Error::dim("evaluation predictions", observed.len(), predictions.len()));
        }
        let mut s = Vec::new();
        let mut means = Vec::new();
        let mut pool = Vec::new();
        for (o, p) in observed.iter().zip(predictions) {
            if let Some(v) = o {
                s.push(*v);
                means.push(p.mean);
                pool.extend_from_slice(&p.samples);
            }
        }
        if s.is_empty() {
            return Err(Error::Data("no uncensored test events to evaluate".into()));
        }
        Ok(Self {
            error: prediction_error(&s, &means)?,
            ks: ks_two_sample(&s, &pool)?,
            qq_pairs: qq_export(&s, &pool, n_quantiles)?,
            n_events: s.len(),
            n_censored: observed.len() - s.len(),
            baseline_error: mean_baseline(train_observed, &s)?,
        })
    }

    /// Flat JSON object; floats print in shortest round-trip form.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, report: &Path, qq: Option<&Path>) -> Result<()> {
        std::fs::write(report, self.to_json()? + "\n")?;
        if let Some(q) = qq {
            write_qq_csv(&self.qq_pairs, File::create(q)?)?;
        }
        Ok(())
    }
}

pub fn write_qq_csv<W: Write>(pairs: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["empirical", "model"])?;
    for (a, b) in pairs {
        out.write_record([a.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(prediction_error(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(prediction_error(&[1.0, 3.0], &[2.0, 3.0]).unwrap(), 0.5);
        assert!(prediction_error(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(mean_baseline(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 1.0);
        assert_eq!(mean_baseline(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap(), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn qq_examples() {
        let a = [3.0, 1.0, 2.0, 5.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        for (x, y) in qq_export(&a, &a, 3).unwrap() {
            assert_eq!(x, y);
        }
        for (x, y) in qq_export(&a, &b, 3).unwrap() {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        assert_eq!(qq_export(&a, &b, 10).unwrap().len(), 4);
        // Median of 1,2,3,5 under type 7.
        assert_eq!(qq_export(&a, &a, 1).unwrap()[0].0, 2.5);
    }

    #[test]
    fn report_skips_censored() {
        let preds = vec![
            ServicePrediction::from_samples(vec![], vec![1.0, 2.0]),
            ServicePrediction::from_samples(vec![], vec![5.0]),
            ServicePrediction::from_samples(vec![], vec![3.0, 3.0]),
        ];
        let r = EvalReport::from_predictions(&[Some(1.0), None, Some(3.0)], &preds, &[2.0], 2).unwrap();
        assert_eq!((r.n_events, r.n_censored), (2, 1));
        assert_eq!(r.error, 0.25);
        assert_eq!(r.baseline_error, 1.0);
        let json = r.to_json().unwrap();
        for key in ["error", "ks", "qq_pairs", "n_events", "n_censored", "baseline_error"] {
            assert!(json.contains(&format!("\"{key}\"")));
        }
    }
}

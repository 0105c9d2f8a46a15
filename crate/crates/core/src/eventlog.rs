//! Queue traces: arrivals, optional departures, covariates and the censoring
//! bookkeeping derived from an observation window `[0, T]`.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalEvent {
    pub arrival: f64,
    /// `None` when the departure was not observed inside the window.
    pub departure: Option<f64>,
    pub covariates: Vec<f64>,
}

impl ArrivalEvent {
    pub fn new(arrival: f64, departure: Option<f64>) -> Self {
        Self {
            arrival,
            departure,
            covariates: Vec::new(),
        }
    }

    pub fn service_time(&self) -> Option<f64> {
        self.departure.map(|d| d - self.arrival)
    }
}

/// Events sorted by arrival inside an observation window `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueTrace {
    events: Vec<ArrivalEvent>,
    horizon: f64,
}

impl QueueTrace {
    /// Builds a trace, sorting events stably by arrival and censoring every
    /// departure that falls after the horizon.
    pub fn new(mut events: Vec<ArrivalEvent>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let cov_dim = events.first().map_or(0, |e| e.covariates.len());
        for (i, e) in events.iter().enumerate() {
            if !(e.arrival >= 0.0 && e.arrival <= horizon) {
                return Err(Error::Data(format!(
                    "event {i}: arrival {} outside [0, {horizon}]",
                    e.arrival
                )));
            }
            if let Some(d) = e.departure {
                if !(d >= e.arrival) {
                    return Err(Error::Data(format!(
                        "event {i}: departure {d} precedes arrival {}",
                        e.arrival
                    )));
                }
            }
            if e.covariates.len() != cov_dim {
                return Err(Error::dim(format!("event {i} covariates"), cov_dim, e.covariates.len()));
            }
        }
        events.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
        for e in &mut events {
            if e.departure.is_some_and(|d| d > horizon) {
                e.departure = None;
            }
        }
        Ok(Self { events, horizon })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), horizon)
    }

    pub fn events(&self) -> &[ArrivalEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.events.first().map_or(0, |e| e.covariates.len())
    }

    pub fn arrivals(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.arrival).collect()
    }

    pub fn censor_split(&self) -> CensorSplit {
        let mut uncensored = Vec::new();
        let mut censored = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            match e.service_time() {
                Some(s) => uncensored.push((i, s)),
                None => censored.push((i, self.horizon - e.arrival)),
            }
        }
        CensorSplit {
            uncensored,
            censored,
        }
    }

    /// Observed service times of the uncensored events, in event order.
    pub fn observed_services(&self) -> Vec<f64> {
        self.events.iter().filter_map(|e| e.service_time()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["arrival_time".to_string(), "departure_time".to_string()];
        header.extend((0..self.covariate_dim()).map(|k| format!("cov_{k}")));
        out.write_record(&header)?;
        for e in &self.events {
            let mut rec = vec![
                e.arrival.to_string(),
                e.departure.map(|d| d.to_string()).unwrap_or_default(),
            ];
            rec.extend(e.covariates.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Partition of event indices into observed (`s_i`) and censored (`T_i = T - a_i`).
#[derive(Clone, Debug, PartialEq)]
pub struct CensorSplit {
    pub uncensored: Vec<(usize, f64)>,
    pub censored: Vec<(usize, f64)>,
}

/// Reads the event CSV schema `arrival_time,departure_time,cov_0,...`.
///
/// Rows with a departure before their arrival, or an arrival outside the
/// window, are skipped with a warning. Departures after `horizon` are stored
/// as unobserved.
pub fn ingest_csv(path: &Path, horizon: f64) -> Result<QueueTrace> {
    let file = std::fs::File::open(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, path, horizon)
}

pub fn read_csv<R: Read>(reader: R, path: &Path, horizon: f64) -> Result<QueueTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = rdr.records();
    let header = match records.next() {
        None => return QueueTrace::empty(horizon),
        Some(h) => h?,
    };
    if header.len() < 2 || &header[0] != "arrival_time" || &header[1] != "departure_time" {
        return Err(parse_err(
            1,
            "header must start with `arrival_time,departure_time`".into(),
        ));
    }
    let cov_dim = header.len() - 2;
    let mut events = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != cov_dim + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cov_dim + 2, rec.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(line, format!("cannot parse {what} `{s}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{what} `{s}` is not finite")));
            }
            Ok(v)
        };
        let arrival = num(&rec[0], "arrival_time")?;
        let departure = if rec[1].is_empty() {
            None
        } else {
            Some(num(&rec[1], "departure_time")?)
        };
        let covariates = (0..cov_dim)
            .map(|k| num(&rec[k + 2], &format!("cov_{k}")))
            .collect::<Result<Vec<_>>>()?;
        if let Some(d) = departure {
            if d < arrival {
                warn!("{}:{line}: departure {d} precedes arrival {arrival}; row skipped", path.display());
                continue;
            }
        }
        if arrival < 0.0 || arrival > horizon {
            warn!("{}:{line}: arrival {arrival} outside [0, {horizon}]; row skipped", path.display());
            continue;
        }
        events.push(ArrivalEvent {
            arrival,
            departure,
            covariates,
        });
    }
    QueueTrace::new(events, horizon)
}

/// Splits off the last `test_fraction` of events (by arrival order) as the
/// test trace. The training horizon becomes the first test arrival, so
/// training departures after it are censored.
pub fn split_chronological(trace: &QueueTrace, test_fraction: f64) -> Result<(QueueTrace, QueueTrace)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = trace.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 events to split, have {n}")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let cut = n - n_test;
    let train_horizon = trace.events[cut].arrival;
    let train_events: Vec<ArrivalEvent> = trace.events[..cut].to_vec();
    let test_events = trace.events[cut..].to_vec();
    // A zero-length window (every arrival at t = 0) cannot host a trace.
    let train = QueueTrace::new(train_events, train_horizon.max(f64::MIN_POSITIVE))?;
    let test = QueueTrace {
        events: test_events,
        horizon: trace.horizon,
    };
    Ok((train, test))
}

/// Gaps `a_{i+1} - a_i`; empty for fewer than two events.
pub fn compute_interarrivals(trace: &QueueTrace) -> Vec<f64> {
    trace
        .events
        .windows(2)
        .map(|w| w[1].arrival - w[0].arrival)
        .collect()
}

/// Time rescaling and covariate z-scoring fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub time_scale: f64,
    pub covariate_means: Vec<f64>,
    pub covariate_stds: Vec<f64>,
}

impl NormalizationSpec {
    pub fn identity(cov_dim: usize) -> Self {
        Self {
            time_scale: 1.0,
            covariate_means: vec![0.0; cov_dim],
            covariate_stds: vec![1.0; cov_dim],
        }
    }

    pub fn time(&self, t: f64) -> f64 {
        t / self.time_scale
    }

    pub fn inv_time(&self, t: f64) -> f64 {
        t * self.time_scale
    }

    pub fn covariates(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.covariate_means)
            .zip(&self.covariate_stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inv_covariates(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.covariate_means)
            .zip(&self.covariate_stds)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn cov_dim(&self) -> usize {
        self.covariate_means.len()
    }
}

/// Fits on the pooled training traces: `time_scale` is the mean gap between
/// arrivals, covariates are standardized (zero-variance columns keep std 1).
pub fn fit_normalizer(train: &[&QueueTrace]) -> Result<NormalizationSpec> {
    let gaps: Vec<f64> = train.iter().flat_map(|t| compute_interarrivals(t)).collect();
    let mean_gap = if gaps.is_empty() {
        1.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let time_scale = if mean_gap > 0.0 && mean_gap.is_finite() {
        mean_gap
    } else {
        1.0
    };
    let cov_dim = train.first().map_or(0, |t| t.covariate_dim());
    let mut means = vec![0.0; cov_dim];
    let mut stds = vec![1.0; cov_dim];
    let n: usize = train.iter().map(|t| t.len()).sum();
    if n > 0 {
        for k in 0..cov_dim {
            let vals = train.iter().flat_map(|t| t.events.iter().map(move |e| e.covariates[k]));
            let mean = vals.clone().sum::<f64>() / n as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            means[k] = mean;
            let sd = var.sqrt();
            stds[k] = if sd > 1e-12 { sd } else { 1.0 };
        }
    }
    Ok(NormalizationSpec {
        time_scale,
        covariate_means: means,
        covariate_stds: stds,
    })
}

/// Rescales times (and the horizon) and standardizes covariates.
pub fn apply_normalizer(spec: &NormalizationSpec, trace: &QueueTrace) -> Result<QueueTrace> {
    map_trace(trace, spec.time(trace.horizon), |e| ArrivalEvent {
        arrival: spec.time(e.arrival),
        departure: e.departure.map(|d| spec.time(d)),
        covariates: spec.covariates(&e.covariates),
    })
}

pub fn invert_normalizer(spec: &NormalizationSpec, trace: &QueueTrace) -> Result<QueueTrace> {
    map_trace(trace, spec.inv_time(trace.horizon), |e| ArrivalEvent {
        arrival: spec.inv_time(e.arrival),
        departure: e.departure.map(|d| spec.inv_time(d)),
        covariates: spec.inv_covariates(&e.covariates),
    })
}

fn map_trace(
    trace: &QueueTrace,
    horizon: f64,
    f: impl Fn(&ArrivalEvent) -> ArrivalEvent,
) -> Result<QueueTrace> {
    Ok(QueueTrace {
        events: trace.events.iter().map(f).collect(),
        horizon,
    })
}

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::rng;

pub const CSV_HEADER: [&str; 3] = ["block_time", "unconfirmed_count", "accepted_count"];

/// One block: the backlog `u_i` just before block time `d_i` and the `b_i`
/// transactions the block accepted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MempoolRecord {
    pub block_time: f64,
    pub unconfirmed: f64,
    pub accepted: f64,
    /// `d_i - d_{i-1}`, measured from time zero for the first block.
    pub inter_block: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MempoolSeries {
    records: Vec<MempoolRecord>,
    horizon: f64,
}

impl MempoolSeries {
    /// Builds a series from `(d, u, b)` rows; `origin` is the reference time
    /// for the first inter-block gap.
    pub fn from_rows(rows: &[(f64, f64, f64)], origin: f64, horizon: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("mempool series must be nonempty".into()));
        }
        let mut prev = origin;
        let mut records = Vec::with_capacity(rows.len());
        for (i, &(d, u, b)) in rows.iter().enumerate() {
            if !(d.is_finite() && u.is_finite() && b.is_finite()) {
                return Err(Error::Data(format!("record {i}: non-finite value")));
            }
            if d <= prev {
                return Err(Error::Data(format!("record {i}: block times must increase strictly")));
            }
            if u < 0.0 || b < 0.0 || b > u {
                return Err(Error::Data(format!("record {i}: need 0 <= accepted <= unconfirmed")));
            }
            records.push(MempoolRecord {
                block_time: d,
                unconfirmed: u,
                accepted: b,
                inter_block: d - prev,
            });
            prev = d;
        }
        if horizon < prev {
            return Err(Error::Data("horizon precedes the last block".into()));
        }
        Ok(Self { records, horizon })
    }

    pub fn records(&self) -> &[MempoolRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn unconfirmed(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.unconfirmed).collect()
    }

    pub fn accepted(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accepted).collect()
    }

    pub fn inter_blocks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.inter_block).collect()
    }

    /// Records `start..end` as their own series, gaps kept relative to the
    /// preceding block.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!("bad record range {start}..{end}")));
        }
        let origin = if start == 0 { 0.0 } else { self.records[start - 1].block_time };
        let rows: Vec<_> = self.records[start..end]
            .iter()
            .map(|r| (r.block_time, r.unconfirmed, r.accepted))
            .collect();
        let horizon = if end == self.len() { self.horizon } else { self.records[end - 1].block_time };
        Self::from_rows(&rows, origin, horizon)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.records {
            out.write_record([
                format!("{}", r.block_time),
                format!("{}", r.unconfirmed),
                format!("{}", r.accepted),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

pub fn ingest_mempool_csv(path: &Path) -> Result<MempoolSeries> {
    let f = File::open(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    read_mempool_csv(f, path)
}

/// Parses the mempool CSV. Rows violating `accepted <= unconfirmed` or the
/// ordering are skipped with a warning; unparsable rows are errors.
pub fn read_mempool_csv<R: Read>(reader: R, path: &Path) -> Result<MempoolSeries> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rd.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let field = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "missing field".into(),
                })?
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
        };
        let (d, u, b) = (field(0)?, field(1)?, field(2)?);
        let last = rows.last().map_or(0.0, |r| r.0);
        if d <= last || b > u || u < 0.0 || b < 0.0 {
            warn!("{}:{line}: skipping inconsistent record", path.display());
            continue;
        }
        rows.push((d, u, b));
    }
    let horizon = rows.last().map_or(0.0, |r| r.0);
    MempoolSeries::from_rows(&rows, 0.0, horizon)
}

/// Backlog that grows at `rate` between Poisson(`block_rate`) blocks, each
/// block accepting half of the backlog. The backlog left before the first
/// block is the stationary mean residual `rate / block_rate`.
pub fn simulate_sawtooth(rate: f64, block_rate: f64, horizon: f64, seed: u64) -> Result<MempoolSeries> {
    if !(rate > 0.0 && block_rate > 0.0 && horizon > 0.0) {
        return Err(Error::Config("sawtooth needs positive rate, block rate and horizon".into()));
    }
    let exp = Exp::new(block_rate).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::stream(seed, 40);
    let mut t = 0.0;
    let mut residual = rate / block_rate;
    let mut rows = Vec::new();
    loop {
        let gap = exp.sample(&mut r);
        if t + gap > horizon {
            break;
        }
        t += gap;
        let u = residual + rate * gap;
        let b = 0.5 * u;
        rows.push((t, u, b));
        residual = u - b;
    }
    MempoolSeries::from_rows(&rows, 0.0, horizon)
}

/// Chronological split with `round(n * frac)` test records, at least one on each side.
pub fn split_mempool(series: &MempoolSeries, test_fraction: f64) -> Result<(MempoolSeries, MempoolSeries)> {
    let n = series.len();
    if n < 2 || !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument("need two records and a fraction in [0, 1)".into()));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    Ok((series.slice(0, n - n_test)?, series.slice(n - n_test, n)?))
}

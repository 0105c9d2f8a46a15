//! The `servtime` command line: one subcommand per pipeline stage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::{Arg, ArgAction, Command};
use log::{info, warn};

use crate::adv::{self, AdvConfig, AdvModel, Variant};
use crate::config::{load_kv, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{ks_two_sample, mean_baseline, prediction_error, qq_export, EvalReport};
use crate::eventlog::{ingest_csv, split_chronological, ArrivalEvent, QueueTrace};
use crate::mempool::{self, ingest_mempool_csv, MempoolConfig, MempoolModel, MempoolSeries, MempoolVariant};
use crate::nn::Checkpoint;
use crate::nsx::{self, Family, NsConfig, NsxModel};
use crate::rpp::{self, RppConfig, RppModel, RppState};
use crate::service::{ServiceData, ServicePrediction};
use crate::synth::{make_dataset, DatasetFamily};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_NON_FINITE: i32 = 5;

type Keys = &'static [(&'static str, &'static str)];

const TRACE: Keys = &[
    ("data", "event CSV"),
    ("horizon", "observation window end T"),
];

const ADV_KEYS: Keys = &[
    ("variant", "as, ras or ras-nh"),
    ("lambda1", "critic gradient penalty weight"),
    ("lambda2", "censoring penalty weight"),
    ("lambda3", "matching penalty weight"),
    ("critic-steps", "critic updates per generator update"),
    ("noise-dim", "width of the generator noise"),
    ("noise-inject", "add noise to hidden layers (true/false)"),
    ("gen-hidden", "generator hidden width"),
    ("critic-hidden", "critic hidden width"),
    ("n-layers", "affine maps per MLP"),
    ("state-dim", "recurrent generator state size"),
    ("epochs", "training epochs"),
    ("batch-size", "events per minibatch"),
    ("bptt", "truncated backpropagation window"),
    ("windows", "windows per recurrent minibatch"),
    ("lr", "Adam learning rate"),
    ("lr-final", "final learning rate as a fraction of lr"),
];

const MEMPOOL_KEYS: Keys = &[
    ("variant", "nms-g or ams"),
    ("data", "mempool CSV"),
    ("state-dim", "LSTM state size"),
    ("head-hidden", "head hidden width"),
    ("n-layers", "affine maps per MLP"),
    ("noise-dim", "width of the generator noise"),
    ("lambda1", "critic gradient penalty weight"),
    ("critic-steps", "critic updates per generator update"),
    ("epochs", "training epochs"),
    ("lr", "Adam learning rate"),
    ("lr-final", "final learning rate as a fraction of lr"),
    ("batch-size", "blocks per accepted-count minibatch"),
    ("bptt", "truncated backpropagation window"),
    ("windows", "windows per recurrent minibatch"),
];

struct Spec {
    name: &'static str,
    about: &'static str,
    groups: &'static [Keys],
}

const SEED_OUT: Keys = &[("seed", "random seed"), ("out", "output path")];

const SPECS: &[Spec] = &[
    Spec {
        name: "simulate",
        about: "Simulate a synthetic queue trace",
        groups: &[&[("family", "h-pt, h-ps, nh-pt, nh-ps, mm-inf, bimodal or alternating"), ("horizon", "trace length")], SEED_OUT],
    },
    Spec {
        name: "simulate-mempool",
        about: "Simulate a sawtooth mempool series",
        groups: &[
            &[
                ("rate", "backlog growth per unit time"),
                ("block-rate", "Poisson rate of blocks"),
                ("horizon", "series length"),
            ],
            SEED_OUT,
        ],
    },
    Spec {
        name: "ingest",
        about: "Validate an event CSV and optionally split it chronologically",
        groups: &[
            TRACE,
            &[
                ("out", "cleaned (training) CSV"),
                ("test-fraction", "share of events held out"),
                ("test-out", "held-out CSV"),
            ],
        ],
    },
    Spec {
        name: "train-rpp",
        about: "Train the recurrent arrival model",
        groups: &[
            TRACE,
            &[
                ("hidden", "GRU state size"),
                ("epochs", "training epochs"),
                ("lr", "Adam learning rate"),
                ("bptt", "truncated backpropagation window"),
                ("chunks", "contiguous chunks per batch"),
                ("tail-survival", "score the open gap after the last arrival (true/false)"),
            ],
            SEED_OUT,
        ],
    },
    Spec {
        name: "train-ns",
        about: "Train a parametric service model",
        groups: &[
            TRACE,
            &[
                ("rpp", "arrival model checkpoint"),
                ("family", "exponential, gamma, pareto, chi_square or log_normal"),
                ("hidden", "head hidden width"),
                ("n-layers", "affine maps in the head"),
                ("epochs", "training epochs"),
                ("lr", "Adam learning rate"),
                ("batch-size", "events per minibatch"),
            ],
            SEED_OUT,
        ],
    },
    Spec {
        name: "train-adv",
        about: "Train an adversarial service model",
        groups: &[TRACE, &[("rpp", "arrival model checkpoint")], ADV_KEYS, SEED_OUT],
    },
    Spec {
        name: "train-mempool",
        about: "Train a mempool model",
        groups: &[MEMPOOL_KEYS, SEED_OUT],
    },
    Spec {
        name: "sample-rpp",
        about: "Sample arrival times from a trained arrival model",
        groups: &[&[("model", "arrival model checkpoint"), ("horizon", "sample window end")], SEED_OUT],
    },
    Spec {
        name: "predict",
        about: "Per-event predictions from a service or mempool model",
        groups: &[
            &[
                ("model", "service or mempool checkpoint"),
                ("rpp", "arrival model checkpoint (service models)"),
                ("data", "event or mempool CSV"),
                ("horizon", "observation window end (event data)"),
                ("context", "preceding data used to warm up recurrent states"),
                ("n-samples", "Monte Carlo samples per event"),
            ],
            SEED_OUT,
        ],
    },
    Spec {
        name: "evaluate",
        about: "Prediction error, KS and Q-Q pairs against held-out data",
        groups: &[
            &[
                ("model", "service or mempool checkpoint"),
                ("rpp", "arrival model checkpoint (service models)"),
                ("data", "held-out event or mempool CSV"),
                ("horizon", "observation window end (event data)"),
                ("context", "training data: warm-up and mean baseline"),
                ("n-samples", "Monte Carlo samples per event"),
                ("n-quantiles", "Q-Q pairs to export"),
                ("seed", "random seed"),
                ("report", "JSON report path"),
                ("qq", "Q-Q CSV path"),
            ],
        ],
    },
];

fn keys(spec: &Spec) -> Vec<&'static str> {
    let mut k: Vec<&str> = spec.groups.iter().flat_map(|g| g.iter().map(|p| p.0)).collect();
    k.dedup();
    k
}

pub fn command() -> Command {
    let mut cmd = Command::new("servtime")
        .about("Arrival and service-time models for infinite-server queues")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in SPECS {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file; flags take precedence"),
        );
        let mut seen = Vec::new();
        for &(key, help) in spec.groups.iter().flat_map(|g| g.iter()) {
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            sub = sub.arg(Arg::new(key).long(key).value_name("VALUE").help(help).action(ArgAction::Set));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingFile { .. } => EXIT_MISSING_FILE,
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Diverged { .. } | Error::NonFinite { .. } => EXIT_NON_FINITE,
        _ => EXIT_OTHER,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Dimension { .. } => "dimension",
        Error::InvalidArgument(_) => "argument",
        Error::Data(_) => "data",
        Error::Parse { .. } => "parse",
        Error::NonFinite { .. } => "non-finite",
        Error::Diverged { .. } => "diverged",
        Error::Checkpoint(_) => "checkpoint",
        Error::MissingFile { .. } => "missing-file",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

/// Runs one invocation and returns its exit code. Errors print a single
/// `servtime: error[kind]: message` line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let Some((name, sub)) = matches.subcommand() else {
        return EXIT_USAGE;
    };
    let spec = SPECS.iter().find(|s| s.name == name).expect("registered subcommand");
    let result = resolve(spec, sub).and_then(|cfg| dispatch(cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("servtime: error[{}]: {msg}", kind(&e));
            exit_code(&e)
        }
    }
}

fn resolve(spec: &Spec, m: &clap::ArgMatches) -> Result<RunConfig> {
    let file = match m.get_one::<String>("config") {
        Some(p) => load_kv(Path::new(p)).map_err(|e| match e {
            Error::Parse { path, line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
            other => other,
        })?,
        None => BTreeMap::new(),
    };
    let allowed = keys(spec);
    let flags = allowed
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(spec.name, &allowed, file, flags)
}

fn dispatch(cfg: RunConfig) -> Result<()> {
    match cfg.command.as_str() {
        "simulate" => simulate(cfg),
        "simulate-mempool" => simulate_mempool(cfg),
        "ingest" => ingest(cfg),
        "train-rpp" => train_rpp(cfg),
        "train-ns" => train_ns(cfg),
        "train-adv" => train_adv(cfg),
        "train-mempool" => train_mempool(cfg),
        "sample-rpp" => sample_rpp(cfg),
        "predict" => predict(cfg),
        "evaluate" => evaluate(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn load_trace(cfg: &RunConfig, key: &str) -> Result<QueueTrace> {
    ingest_csv(&cfg.path(key)?, cfg.req("horizon")?)
}

fn load_rpp(cfg: &RunConfig) -> Result<RppModel> {
    RppModel::from_checkpoint(&Checkpoint::load(&cfg.path("rpp")?)?)
}

/// Saves the last finite parameters next to `out` when training diverges.
fn keep_last_good<T>(r: Result<T>, out: &Path) -> Result<T> {
    if let Err(Error::Diverged {
        last_good: Some(store), ..
    }) = &r
    {
        let mut name = out.as_os_str().to_owned();
        name.push(".diverged");
        let p = std::path::PathBuf::from(name);
        if Checkpoint::new((**store).clone()).with_meta("kind", "diverged").save(&p).is_ok() {
            warn!("last finite parameters written to {}", p.display());
        }
    }
    r
}

fn finish(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.write_beside(out)?;
    info!("wrote {} and {}", out.display(), p.display());
    Ok(())
}

fn simulate(mut cfg: RunConfig) -> Result<()> {
    let family: DatasetFamily = cfg.req("family")?;
    let seed = cfg.get("seed", 0u64)?;
    let trace = make_dataset(family, cfg.req("horizon")?, seed)?;
    let out = cfg.path("out")?;
    trace.save_csv(&out)?;
    finish(&cfg, &out)
}

fn simulate_mempool(mut cfg: RunConfig) -> Result<()> {
    let seed = cfg.get("seed", 0u64)?;
    let s = mempool::simulate_sawtooth(cfg.req("rate")?, cfg.req("block-rate")?, cfg.req("horizon")?, seed)?;
    let out = cfg.path("out")?;
    s.save_csv(&out)?;
    finish(&cfg, &out)
}

fn ingest(cfg: RunConfig) -> Result<()> {
    let trace = load_trace(&cfg, "data")?;
    let out = cfg.path("out")?;
    match cfg.opt::<f64>("test-fraction")? {
        Some(f) => {
            let test_out = cfg.path("test-out")?;
            let (train, test) = split_chronological(&trace, f)?;
            train.save_csv(&out)?;
            test.save_csv(&test_out)?;
            println!("train_events={} test_events={} train_horizon={}", train.len(), test.len(), train.horizon());
        }
        None => {
            trace.save_csv(&out)?;
            println!("events={}", trace.len());
        }
    }
    finish(&cfg, &out)
}

fn train_rpp(mut cfg: RunConfig) -> Result<()> {
    let trace = load_trace(&cfg, "data")?;
    let d = RppConfig::default();
    let rc = RppConfig {
        hidden: cfg.get("hidden", d.hidden)?,
        epochs: cfg.get("epochs", d.epochs)?,
        lr: cfg.get("lr", d.lr)?,
        seed: cfg.get("seed", d.seed)?,
        bptt: cfg.get("bptt", d.bptt)?,
        chunks: cfg.get("chunks", d.chunks)?,
        tail_survival: cfg.get("tail-survival", d.tail_survival)?,
    };
    let out = cfg.path("out")?;
    let (model, _) = keep_last_good(rpp::train(&[&trace], None, &rc), &out)?;
    model.to_checkpoint().save(&out)?;
    finish(&cfg, &out)
}

fn train_ns(mut cfg: RunConfig) -> Result<()> {
    let family: Family = cfg.req("family")?;
    let rpp = load_rpp(&cfg)?;
    let trace = load_trace(&cfg, "data")?;
    let d = NsConfig::default();
    let nc = NsConfig {
        hidden: cfg.get("hidden", d.hidden)?,
        n_layers: cfg.get("n-layers", d.n_layers)?,
        epochs: cfg.get("epochs", d.epochs)?,
        lr: cfg.get("lr", d.lr)?,
        batch_size: cfg.get("batch-size", d.batch_size)?,
        seed: cfg.get("seed", d.seed)?,
    };
    let out = cfg.path("out")?;
    let (model, _) = keep_last_good(nsx::train_ns(&rpp, &trace, None, family, &nc), &out)?;
    model.to_checkpoint().save(&out)?;
    finish(&cfg, &out)
}

fn train_adv(mut cfg: RunConfig) -> Result<()> {
    let variant: Variant = cfg.req("variant")?;
    let rpp = load_rpp(&cfg)?;
    let trace = load_trace(&cfg, "data")?;
    let d = AdvConfig::default();
    let ac = AdvConfig {
        lambda1: cfg.get("lambda1", d.lambda1)?,
        lambda2: cfg.get("lambda2", d.lambda2)?,
        lambda3: cfg.get("lambda3", d.lambda3)?,
        critic_steps: cfg.get("critic-steps", d.critic_steps)?,
        noise_dim: cfg.get("noise-dim", d.noise_dim)?,
        noise_inject: cfg.get("noise-inject", d.noise_inject)?,
        gen_hidden: cfg.get("gen-hidden", d.gen_hidden)?,
        critic_hidden: cfg.get("critic-hidden", d.critic_hidden)?,
        n_layers: cfg.get("n-layers", d.n_layers)?,
        state_dim: cfg.get("state-dim", d.state_dim)?,
        epochs: cfg.get("epochs", d.epochs)?,
        batch_size: cfg.get("batch-size", d.batch_size)?,
        bptt: cfg.get("bptt", d.bptt)?,
        windows: cfg.get("windows", d.windows)?,
        lr: cfg.get("lr", d.lr)?,
        lr_final: cfg.get("lr-final", d.lr_final)?,
        seed: cfg.get("seed", d.seed)?,
        ..d
    };
    let out = cfg.path("out")?;
    let (model, _) = keep_last_good(adv::train_adversarial(variant, &rpp, &trace, &ac), &out)?;
    model.to_checkpoint().save(&out)?;
    finish(&cfg, &out)
}

fn train_mempool(mut cfg: RunConfig) -> Result<()> {
    let variant: MempoolVariant = cfg.req("variant")?;
    let series = ingest_mempool_csv(&cfg.path("data")?)?;
    let d = MempoolConfig::default();
    let mc = MempoolConfig {
        state_dim: cfg.get("state-dim", d.state_dim)?,
        head_hidden: cfg.get("head-hidden", d.head_hidden)?,
        n_layers: cfg.get("n-layers", d.n_layers)?,
        noise_dim: cfg.get("noise-dim", d.noise_dim)?,
        lambda1: cfg.get("lambda1", d.lambda1)?,
        critic_steps: cfg.get("critic-steps", d.critic_steps)?,
        epochs: cfg.get("epochs", d.epochs)?,
        lr: cfg.get("lr", d.lr)?,
        lr_final: cfg.get("lr-final", d.lr_final)?,
        batch_size: cfg.get("batch-size", d.batch_size)?,
        bptt: cfg.get("bptt", d.bptt)?,
        windows: cfg.get("windows", d.windows)?,
        seed: cfg.get("seed", d.seed)?,
    };
    let out = cfg.path("out")?;
    let (model, _) = keep_last_good(mempool::train_mempool(variant, &series, &mc), &out)?;
    model.to_checkpoint().save(&out)?;
    finish(&cfg, &out)
}

fn sample_rpp(mut cfg: RunConfig) -> Result<()> {
    let model = RppModel::from_checkpoint(&Checkpoint::load(&cfg.path("model")?)?)?;
    let horizon: f64 = cfg.req("horizon")?;
    let seed = cfg.get("seed", 0u64)?;
    let times = model.sample_path(None, horizon, seed)?;
    let cov = model.normalizer.covariate_means.clone();
    let events = times
        .into_iter()
        .map(|t| ArrivalEvent {
            arrival: t,
            departure: None,
            covariates: cov.clone(),
        })
        .collect();
    let trace = QueueTrace::new(events, horizon)?;
    match cfg.opt_path("out")? {
        Some(out) => {
            trace.save_csv(&out)?;
            finish(&cfg, &out)
        }
        None => trace.write_csv(std::io::stdout().lock()),
    }
}

enum Loaded {
    Ns(NsxModel),
    Adv(AdvModel),
    Mempool(MempoolModel),
}

fn load_model(cfg: &RunConfig) -> Result<Loaded> {
    let ck = Checkpoint::load(&cfg.path("model")?)?;
    match ck.meta_str("kind")? {
        "ns" => Ok(Loaded::Ns(NsxModel::from_checkpoint(&ck)?)),
        "adv" => Ok(Loaded::Adv(AdvModel::from_checkpoint(&ck)?)),
        "mempool" => Ok(Loaded::Mempool(MempoolModel::from_checkpoint(&ck)?)),
        other => Err(Error::Config(format!(
            "--model must be a service or mempool checkpoint, got kind `{other}`"
        ))),
    }
}

/// Service predictions for every event of `data`, arrival state and
/// recurrent generators continued from `context`.
fn service_predictions(
    model: &Loaded,
    rpp: &RppModel,
    data: &QueueTrace,
    context: Option<&QueueTrace>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ServicePrediction>> {
    let (ctx, last): (Option<ServiceData>, Option<RppState>) = match context {
        Some(c) => {
            let (d, s) = ServiceData::from_trace(rpp, c, None)?;
            (Some(d), s)
        }
        None => (None, None),
    };
    let (test, _) = ServiceData::from_trace(rpp, data, last.as_ref())?;
    match model {
        Loaded::Ns(m) => m.predict_all(&test, n_samples, seed),
        Loaded::Adv(m) => adv::predict_adv(m, &test, ctx.as_ref(), n_samples, seed),
        Loaded::Mempool(_) => unreachable!("mempool handled separately"),
    }
}

/// `context` followed by `data` as one series, plus the index of the first
/// transition that predicts a record of `data`.
fn joined_series(cfg: &RunConfig) -> Result<(MempoolSeries, usize, Option<MempoolSeries>)> {
    let data = ingest_mempool_csv(&cfg.path("data")?)?;
    let Some(cp) = cfg.opt_path("context")? else {
        return Ok((data, 0, None));
    };
    let ctx = ingest_mempool_csv(&cp)?;
    let rows: Vec<_> = ctx
        .records()
        .iter()
        .chain(data.records())
        .map(|r| (r.block_time, r.unconfirmed, r.accepted))
        .collect();
    let joined = MempoolSeries::from_rows(&rows, 0.0, data.horizon())?;
    Ok((joined, ctx.len() - 1, Some(ctx)))
}

fn mempool_predictions(m: &MempoolModel, cfg: &RunConfig, n_samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Option<MempoolSeries>)> {
    let (series, skip, ctx) = joined_series(cfg)?;
    let pred = m.predict_unconfirmed(&series, n_samples, seed)?;
    let rec = series.records();
    let times: Vec<f64> = rec[skip + 1..].iter().map(|r| r.block_time).collect();
    let truth: Vec<f64> = rec[skip + 1..].iter().map(|r| r.unconfirmed).collect();
    Ok((times, truth, pred[skip..].to_vec(), ctx))
}

fn predict(mut cfg: RunConfig) -> Result<()> {
    let model = load_model(&cfg)?;
    let n_samples = cfg.get("n-samples", 100usize)?;
    let seed = cfg.get("seed", 0u64)?;
    let out = cfg.path("out")?;
    let mut w = csv::Writer::from_path(&out)?;
    match &model {
        Loaded::Mempool(m) => {
            let (times, truth, pred, _) = mempool_predictions(m, &cfg, n_samples, seed)?;
            w.write_record(["block_time", "unconfirmed_count", "predicted_unconfirmed"])?;
            for ((t, u), p) in times.iter().zip(&truth).zip(&pred) {
                w.write_record([t.to_string(), u.to_string(), p.to_string()])?;
            }
        }
        _ => {
            let rpp = load_rpp(&cfg)?;
            let data = load_trace(&cfg, "data")?;
            let context = match cfg.opt_path("context")? {
                Some(_) => Some(load_trace(&cfg, "context")?),
                None => None,
            };
            let preds = service_predictions(&model, &rpp, &data, context.as_ref(), n_samples, seed)?;
            w.write_record(["arrival_time", "service_time", "predicted_mean"])?;
            for (e, p) in data.events().iter().zip(&preds) {
                let s = e.service_time().map_or(String::new(), |v| v.to_string());
                w.write_record([e.arrival.to_string(), s, p.mean.to_string()])?;
            }
        }
    }
    w.flush()?;
    finish(&cfg, &out)
}

fn evaluate(mut cfg: RunConfig) -> Result<()> {
    let model = load_model(&cfg)?;
    let n_samples = cfg.get("n-samples", 100usize)?;
    let n_quantiles = cfg.get("n-quantiles", 99usize)?;
    let seed = cfg.get("seed", 0u64)?;
    let report_path = cfg.path("report")?;
    let qq_path = cfg.opt_path("qq")?;
    let report = match &model {
        Loaded::Mempool(m) => {
            let (_, truth, pred, ctx) = mempool_predictions(m, &cfg, n_samples, seed)?;
            let train = match &ctx {
                Some(c) => c.unconfirmed(),
                None => {
                    warn!("no --context given; the mean baseline uses the evaluated series itself");
                    truth.clone()
                }
            };
            EvalReport {
                error: prediction_error(&truth, &pred)?,
                ks: ks_two_sample(&truth, &pred)?,
                qq_pairs: qq_export(&truth, &pred, n_quantiles)?,
                n_events: truth.len(),
                n_censored: 0,
                baseline_error: mean_baseline(&train, &truth)?,
            }
        }
        _ => {
            let rpp = load_rpp(&cfg)?;
            let data = load_trace(&cfg, "data")?;
            let context = match cfg.opt_path("context")? {
                Some(_) => Some(load_trace(&cfg, "context")?),
                None => None,
            };
            let preds = service_predictions(&model, &rpp, &data, context.as_ref(), n_samples, seed)?;
            let observed: Vec<Option<f64>> = data.events().iter().map(ArrivalEvent::service_time).collect();
            let train = match &context {
                Some(c) => c.observed_services(),
                None => {
                    warn!("no --context given; the mean baseline uses the evaluated trace itself");
                    data.observed_services()
                }
            };
            EvalReport::from_predictions(&observed, &preds, &train, n_quantiles)?
        }
    };
    report.save(&report_path, qq_path.as_deref())?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "error={} ks={} baseline_error={} n_events={} n_censored={}",
        report.error, report.ks, report.baseline_error, report.n_events, report.n_censored
    )?;
    finish(&cfg, &report_path)
}

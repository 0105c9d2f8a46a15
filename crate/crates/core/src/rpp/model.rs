use log::info;
use rand::Rng;

use super::head::{IntensityHead, QuadConfig};
use crate::error::{Error, Result};
use crate::eventlog::{fit_normalizer, NormalizationSpec, QueueTrace};
use crate::nn::{self, AdamState, Checkpoint, Gru, LayerSpec, ParamId, ParamStore, Tape, TrainHistory, Unary, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct RppConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Truncated backpropagation window, in events.
    pub bptt: usize,
    /// Number of contiguous chunks processed side by side as one batch.
    pub chunks: usize,
    /// Adds `ln G(T - a_n)` for the open gap after the last arrival.
    pub tail_survival: bool,
}

impl Default for RppConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 20,
            lr: 1e-4,
            seed: 0,
            bptt: 64,
            chunks: 8,
            tail_survival: false,
        }
    }
}

/// Recurrent arrival model: a GRU over `(ln(1 + δ_j), x_j)` and the head
/// `α_j = v·h_j + b`, `λ(t) = exp(α_j + w (t - a_j))` in normalized time.
#[derive(Clone, Debug)]
pub struct RppModel {
    pub store: ParamStore,
    pub gru: Gru,
    pub v: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    pub normalizer: NormalizationSpec,
}

/// Hidden state after the most recent arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct RppState {
    pub h: Vec<f64>,
    /// Arrival time of the last event, original units.
    pub last_arrival: f64,
    pub alpha: f64,
}

/// A trace in normalized units, ready for the recurrence.
struct Sequence {
    feats: Vec<Vec<f64>>,
    /// `δ_{j+1}` for every event but the last.
    next_gap: Vec<f64>,
    tail: f64,
}

fn features(delta_norm: f64, cov_norm: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(1 + cov_norm.len());
    f.push(delta_norm.ln_1p());
    f.extend_from_slice(cov_norm);
    f
}

impl RppModel {
    pub fn new(hidden: usize, normalizer: NormalizationSpec, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, 10);
        let mut store = ParamStore::new();
        let spec = LayerSpec::gru(1 + normalizer.cov_dim(), hidden);
        let gru = Gru::new(&mut store, "rpp.gru", spec, &mut r)?;
        let v = store.add_glorot("rpp.v", 1, hidden, &mut r)?;
        let w = store.add_zeros("rpp.w", vec![1])?;
        let b = store.add_zeros("rpp.b", vec![1])?;
        Ok(Self {
            store,
            gru,
            v,
            w,
            b,
            normalizer,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn cov_dim(&self) -> usize {
        self.normalizer.cov_dim()
    }

    pub fn w_value(&self) -> f64 {
        self.store.tensor(self.w).values[0]
    }

    pub fn alpha_of(&self, h: &[f64]) -> f64 {
        let v = &self.store.tensor(self.v).values;
        let b = self.store.tensor(self.b).values[0];
        v.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + b
    }

    /// State before any arrival, anchored at time zero.
    pub fn initial_state(&self) -> RppState {
        let h = vec![0.0; self.hidden_dim()];
        RppState {
            alpha: self.alpha_of(&h),
            h,
            last_arrival: 0.0,
        }
    }

    /// Head in normalized time for the given state.
    pub fn head(&self, state: &RppState) -> IntensityHead {
        IntensityHead::new(state.alpha, self.w_value())
    }

    fn step_values(&self, tape: &mut Tape, h: &[f64], feat: &[f64]) -> Result<Vec<f64>> {
        tape.clear();
        let x = tape.row_vector(feat);
        let hv = tape.row_vector(h);
        let out = self.gru.step(tape, &self.store, x, hv)?;
        Ok(tape.value(out).to_vec())
    }

    /// Consumes an arrival at `arrival` (original units) with raw covariates.
    pub fn advance(&self, state: &RppState, arrival: f64, covariates: &[f64]) -> Result<RppState> {
        if covariates.len() != self.cov_dim() {
            return Err(Error::dim("rpp covariates", self.cov_dim(), covariates.len()));
        }
        if arrival < state.last_arrival {
            return Err(Error::InvalidArgument(format!(
                "arrival {arrival} precedes the last arrival {}",
                state.last_arrival
            )));
        }
        let delta = self.normalizer.time(arrival - state.last_arrival);
        let feat = features(delta, &self.normalizer.covariates(covariates));
        let h = self.step_values(&mut Tape::new(), &state.h, &feat)?;
        Ok(RppState {
            alpha: self.alpha_of(&h),
            h,
            last_arrival: arrival,
        })
    }

    /// States after each event of `trace`, starting from `init` or time zero.
    pub fn scan(&self, trace: &QueueTrace, init: Option<&RppState>) -> Result<Vec<RppState>> {
        let mut state = init.cloned().unwrap_or_else(|| self.initial_state());
        let mut tape = Tape::new();
        let mut out = Vec::with_capacity(trace.len());
        for e in trace.events() {
            if e.covariates.len() != self.cov_dim() {
                return Err(Error::dim("rpp covariates", self.cov_dim(), e.covariates.len()));
            }
            let delta = self.normalizer.time(e.arrival - state.last_arrival);
            let feat = features(delta.max(0.0), &self.normalizer.covariates(&e.covariates));
            let h = self.step_values(&mut tape, &state.h, &feat)?;
            state = RppState {
                alpha: self.alpha_of(&h),
                h,
                last_arrival: e.arrival,
            };
            out.push(state.clone());
        }
        Ok(out)
    }

    /// Hidden vectors `h^a_i` after each event.
    pub fn hidden_states(&self, trace: &QueueTrace, init: Option<&RppState>) -> Result<Vec<Vec<f64>>> {
        Ok(self.scan(trace, init)?.into_iter().map(|s| s.h).collect())
    }

    /// `λ*(t)` in events per original time unit.
    pub fn intensity(&self, state: &RppState, t: f64) -> Result<f64> {
        if t < state.last_arrival {
            return Err(Error::InvalidArgument(format!(
                "time {t} precedes the last arrival {}",
                state.last_arrival
            )));
        }
        let ts = self.normalizer.time_scale;
        Ok(self.head(state).intensity((t - state.last_arrival) / ts)? / ts)
    }

    /// Log density of the next gap `δ` (original units).
    pub fn log_f_star(&self, state: &RppState, delta: f64) -> Result<f64> {
        let ts = self.normalizer.time_scale;
        Ok(self.head(state).log_f_star(delta / ts)? - ts.ln())
    }

    pub fn survival(&self, state: &RppState, tau: f64) -> Result<f64> {
        self.head(state).survival(self.normalizer.time(tau))
    }

    pub fn expected_next(&self, state: &RppState, cfg: &QuadConfig) -> Result<(f64, bool)> {
        let ts = self.normalizer.time_scale;
        let cfg = QuadConfig {
            tol: cfg.tol / ts,
            defective_horizon: cfg.defective_horizon.map(|h| h / ts),
        };
        let (m, flag) = self.head(state).expected_next(&cfg)?;
        Ok((m * ts, flag))
    }

    /// Next gap for quantile `y`; `None` if no arrival occurs.
    pub fn inverse_cdf_sample(&self, state: &RppState, y: f64) -> Result<Option<f64>> {
        Ok(self
            .head(state)
            .inverse_cdf(y)?
            .map(|t| self.normalizer.inv_time(t)))
    }

    /// Arrival times in `(start, horizon]` by inverse-transform sampling.
    /// Sampled arrivals carry mean covariates.
    pub fn sample_path(&self, init: Option<&RppState>, horizon: f64, seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::stream(seed, 11);
        let mut state = init.cloned().unwrap_or_else(|| self.initial_state());
        let cov = self.normalizer.covariate_means.clone();
        let mut out = Vec::new();
        loop {
            let y: f64 = r.random();
            let Some(tau) = self.inverse_cdf_sample(&state, y)? else { break };
            let t = state.last_arrival + tau;
            if t > horizon {
                break;
            }
            state = self.advance(&state, t, &cov)?;
            out.push(t);
        }
        Ok(out)
    }

    /// Mean `ln f*` per observed gap in original units, continuing from `init`.
    /// The gap from `init` (or time zero) to the first event is included.
    pub fn mean_log_likelihood(&self, trace: &QueueTrace, init: Option<&RppState>) -> Result<f64> {
        if trace.is_empty() {
            return Err(Error::Data("empty trace".into()));
        }
        let mut state = init.cloned().unwrap_or_else(|| self.initial_state());
        let states = self.scan(trace, Some(&state))?;
        let mut total = 0.0;
        for (e, next) in trace.events().iter().zip(states) {
            total += self.log_f_star(&state, e.arrival - state.last_arrival)?;
            state = next;
        }
        Ok(total / trace.len() as f64)
    }

    fn sequence(&self, trace: &QueueTrace) -> Result<Sequence> {
        if trace.covariate_dim() != self.cov_dim() && !trace.is_empty() {
            return Err(Error::dim("rpp covariates", self.cov_dim(), trace.covariate_dim()));
        }
        let n = trace.len();
        let ev = trace.events();
        let mut feats = Vec::with_capacity(n);
        let mut next_gap = Vec::with_capacity(n.saturating_sub(1));
        let mut prev = 0.0;
        for (j, e) in ev.iter().enumerate() {
            let delta = self.normalizer.time(e.arrival - prev);
            feats.push(features(delta, &self.normalizer.covariates(&e.covariates)));
            if j + 1 < n {
                next_gap.push(self.normalizer.time(ev[j + 1].arrival - e.arrival));
            }
            prev = e.arrival;
        }
        Ok(Sequence {
            feats,
            next_gap,
            tail: self.normalizer.time(trace.horizon() - prev),
        })
    }

    /// `ln f*` per row for gaps `delta` given head offsets `alpha` (both `K x 1`).
    fn log_f_rows(&self, tape: &mut Tape, alpha: Var, delta: Var) -> Var {
        let cum = self.cumulative_rows(tape, alpha, delta);
        let w = tape.param(&self.store, self.w);
        let wd = tape.mul(w, delta);
        let lin = tape.add(alpha, wd);
        tape.sub(lin, cum)
    }

    fn cumulative_rows(&self, tape: &mut Tape, alpha: Var, delta: Var) -> Var {
        let w = tape.param(&self.store, self.w);
        let wd = tape.mul(w, delta);
        let er = tape.unary(wd, Unary::Exprel);
        let ea = tape.exp(alpha);
        let ead = tape.mul(ea, delta);
        tape.mul(ead, er)
    }

    fn alpha_rows(&self, tape: &mut Tape, h: Var) -> Var {
        let v = tape.param(&self.store, self.v);
        let b = tape.param(&self.store, self.b);
        let hv = tape.matmul_t(h, v);
        tape.add(hv, b)
    }

    /// Builds `L_RPP` over the whole trace (normalized units) on `tape`.
    fn build_log_likelihood(&self, tape: &mut Tape, seq: &Sequence, tail: bool) -> Result<Var> {
        let mut h = tape.zeros(1, self.hidden_dim());
        let mut parts = Vec::with_capacity(seq.feats.len());
        for (j, f) in seq.feats.iter().enumerate() {
            let x = tape.row_vector(f);
            h = self.gru.step(tape, &self.store, x, h)?;
            let alpha = self.alpha_rows(tape, h);
            if let Some(&gap) = seq.next_gap.get(j) {
                let d = tape.scalar_const(gap);
                parts.push(self.log_f_rows(tape, alpha, d));
            } else if tail {
                let d = tape.scalar_const(seq.tail);
                let cum = self.cumulative_rows(tape, alpha, d);
                parts.push(tape.neg(cum));
            }
        }
        if parts.is_empty() {
            return Ok(tape.scalar_const(0.0));
        }
        let stacked = tape.stack_rows(&parts);
        Ok(tape.sum(stacked))
    }

    /// `L_RPP = Σ ln f*(δ_{j+1} | h_j)` in normalized units.
    pub fn log_likelihood(&self, trace: &QueueTrace, tail: bool) -> Result<f64> {
        let seq = self.sequence(trace)?;
        let mut tape = Tape::new();
        let ll = self.build_log_likelihood(&mut tape, &seq, tail)?;
        Ok(tape.scalar(ll))
    }

    /// As [`Self::log_likelihood`], also writing `∂L/∂θ` into the store's grads.
    pub fn log_likelihood_grad(&mut self, trace: &QueueTrace, tail: bool) -> Result<f64> {
        let seq = self.sequence(trace)?;
        let mut tape = Tape::new();
        let ll = self.build_log_likelihood(&mut tape, &seq, tail)?;
        nn::backprop(&tape, ll, &mut self.store);
        Ok(tape.scalar(ll))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.store.clone())
            .with_meta("kind", "rpp")
            .with_meta("hidden", self.hidden_dim())
            .with_meta("time_scale", self.normalizer.time_scale)
            .with_meta_list("cov_means", &self.normalizer.covariate_means)
            .with_meta_list("cov_stds", &self.normalizer.covariate_stds)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("rpp")?;
        let normalizer = NormalizationSpec {
            time_scale: ck.meta_parse("time_scale")?,
            covariate_means: ck.meta_list("cov_means")?,
            covariate_stds: ck.meta_list("cov_stds")?,
        };
        if normalizer.covariate_means.len() != normalizer.covariate_stds.len() {
            return Err(Error::Checkpoint("covariate statistics differ in length".into()));
        }
        let mut model = Self::new(ck.meta_parse("hidden")?, normalizer, 0)?;
        model.store.load_values_from(&ck.store)?;
        Ok(model)
    }
}

struct Chunk {
    seq: usize,
    start: usize,
    len: usize,
}

/// Fits the normalizer and the model by Adam on `L_RPP`, truncated to
/// windows of `cfg.bptt` events with the carried state detached.
pub fn train(
    traces: &[&QueueTrace],
    val: Option<&QueueTrace>,
    cfg: &RppConfig,
) -> Result<(RppModel, TrainHistory)> {
    if traces.is_empty() || traces.iter().any(|t| t.len() < 2) {
        return Err(Error::Data("rpp training needs at least 2 arrivals per trace".into()));
    }
    if cfg.bptt == 0 || cfg.chunks == 0 || cfg.epochs == 0 {
        return Err(Error::Config("bptt, chunks and epochs must be positive".into()));
    }
    let normalizer = fit_normalizer(traces)?;
    let mut model = RppModel::new(cfg.hidden, normalizer, cfg.seed)?;
    let seqs = traces
        .iter()
        .map(|t| model.sequence(t))
        .collect::<Result<Vec<_>>>()?;

    let mut chunks = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        let n = seq.feats.len();
        let len = n.div_ceil(cfg.chunks).max(cfg.bptt.min(n));
        let mut start = 0;
        while start < n {
            let l = len.min(n - start);
            chunks.push(Chunk { seq: s, start, len: l });
            start += l;
        }
    }
    let k = chunks.len();
    let hdim = cfg.hidden;
    let fdim = 1 + model.cov_dim();
    let max_len = chunks.iter().map(|c| c.len).max().unwrap_or(0);
    let transitions: usize = seqs
        .iter()
        .map(|s| s.next_gap.len() + usize::from(cfg.tail_survival))
        .sum();

    let mut init_h = vec![0.0; k * hdim];
    let mut adam = AdamState::for_all(&model.store, cfg.lr);
    let mut history = TrainHistory::default();
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        let snapshot = model.store.clone();
        let mut h_vals = init_h.clone();
        let mut final_h = vec![0.0; k * hdim];
        let mut epoch_ll = 0.0;
        let mut start = 0;
        while start < max_len {
            let end = (start + cfg.bptt).min(max_len);
            tape.clear();
            let mut h = tape.constant(k, hdim, h_vals.clone());
            let mut total: Option<Var> = None;
            let mut count = 0usize;
            for t in start..end {
                let mut x = vec![0.0; k * fdim];
                let mut gap = vec![0.0; k];
                let mut mask = vec![0.0; k];
                let mut tail_mask = vec![0.0; k];
                for (c, ch) in chunks.iter().enumerate() {
                    if t >= ch.len {
                        continue;
                    }
                    let seq = &seqs[ch.seq];
                    let j = ch.start + t;
                    x[c * fdim..(c + 1) * fdim].copy_from_slice(&seq.feats[j]);
                    if let Some(&g) = seq.next_gap.get(j) {
                        gap[c] = g;
                        mask[c] = 1.0;
                    } else if cfg.tail_survival {
                        gap[c] = seq.tail;
                        tail_mask[c] = 1.0;
                    }
                }
                let xv = tape.constant(k, fdim, x);
                h = model.gru.step(&mut tape, &model.store, xv, h)?;
                for (c, ch) in chunks.iter().enumerate() {
                    if t + 1 == ch.len {
                        final_h[c * hdim..(c + 1) * hdim].copy_from_slice(tape.row(h, c));
                    }
                }
                let n_obs = mask.iter().chain(&tail_mask).filter(|&&m| m > 0.0).count();
                if n_obs == 0 {
                    continue;
                }
                count += n_obs;
                let alpha = model.alpha_rows(&mut tape, h);
                let d = tape.column(&gap);
                let lf = model.log_f_rows(&mut tape, alpha, d);
                let m = tape.column(&mask);
                let mut term = tape.mul(lf, m);
                if cfg.tail_survival {
                    let cum = model.cumulative_rows(&mut tape, alpha, d);
                    let tm = tape.column(&tail_mask);
                    let tail = tape.mul(cum, tm);
                    term = tape.sub(term, tail);
                }
                let s = tape.sum(term);
                total = Some(match total {
                    None => s,
                    Some(acc) => tape.add(acc, s),
                });
            }
            h_vals = tape.value(h).to_vec();
            start = end;
            let Some(total) = total else { continue };
            let ll = tape.scalar(total);
            if !ll.is_finite() {
                return Err(nn::diverged("rpp", epoch, &snapshot));
            }
            epoch_ll += ll;
            let loss = tape.scale(total, -1.0 / count as f64);
            nn::backprop(&tape, loss, &mut model.store);
            adam.update(&mut model.store)
                .map_err(|_| nn::diverged("rpp", epoch, &snapshot))?;
        }
        // The next epoch starts each chunk where its predecessor ended.
        for c in 1..k {
            if chunks[c].seq == chunks[c - 1].seq {
                init_h[c * hdim..(c + 1) * hdim].copy_from_slice(&final_h[(c - 1) * hdim..c * hdim]);
            }
        }
        let train_loss = -epoch_ll / transitions.max(1) as f64;
        history.train_loss.push(train_loss);
        if let Some(val) = val {
            let init = model.scan(traces[traces.len() - 1], None)?.pop();
            let v = -model.mean_log_likelihood(val, init.as_ref())?;
            history.val_loss.push(v);
            info!("rpp epoch {epoch}: train nll {train_loss:.6}, held-out nll {v:.6}");
        } else {
            info!("rpp epoch {epoch}: train nll {train_loss:.6}");
        }
        if !model.store.all_finite() {
            return Err(nn::diverged("rpp", epoch, &snapshot));
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_trace, DatasetSpec, HawkesSpec, ServiceLaw};

    fn poisson_trace(horizon: f64, seed: u64) -> QueueTrace {
        let spec = DatasetSpec {
            arrivals: HawkesSpec::poisson(1.0).unwrap(),
            service: ServiceLaw::Exponential { rate: 1.0 },
        };
        make_trace(&spec, horizon, seed).unwrap()
    }

    fn small_cfg() -> RppConfig {
        RppConfig {
            hidden: 4,
            epochs: 2,
            lr: 1e-3,
            bptt: 16,
            chunks: 2,
            ..RppConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let t = poisson_trace(200.0, 1);
        let (_, a) = train(&[&t], None, &small_cfg()).unwrap();
        let (_, b) = train(&[&t], None, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_loss.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = poisson_trace(100.0, 2);
        let (m, _) = train(&[&t], None, &small_cfg()).unwrap();
        let back = RppModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        let ids: Vec<_> = m.store.ids().collect();
        assert_eq!(back.store.flat_values(&ids), m.store.flat_values(&ids));
        assert_eq!(back.normalizer, m.normalizer);
        assert_eq!(back.mean_log_likelihood(&t, None).unwrap(), m.mean_log_likelihood(&t, None).unwrap());
    }

    #[test]
    fn units_follow_time_scale() {
        let mut norm = NormalizationSpec::identity(0);
        norm.time_scale = 2.0;
        let m = RppModel::new(3, norm, 4).unwrap();
        let s = m.initial_state();
        let unit = NormalizationSpec::identity(0);
        let m1 = RppModel { normalizer: unit, ..m.clone() };
        let (e2, _) = m.expected_next(&s, &QuadConfig::default()).unwrap();
        let (e1, _) = m1.expected_next(&s, &QuadConfig::default()).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-8);
        assert!((m.intensity(&s, 1.0).unwrap() - m1.intensity(&s, 0.5).unwrap() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn tape_likelihood_matches_scan() {
        let t = poisson_trace(30.0, 5);
        let m = RppModel::new(5, fit_normalizer(&[&t]).unwrap(), 6).unwrap();
        let states = m.scan(&t, None).unwrap();
        let ev = t.events();
        let mut manual = 0.0;
        for j in 0..ev.len() - 1 {
            let d = m.normalizer.time(ev[j + 1].arrival - ev[j].arrival);
            manual += m.head(&states[j]).log_f_star(d).unwrap();
        }
        let ll = m.log_likelihood(&t, false).unwrap();
        assert!((ll - manual).abs() < 1e-10 * manual.abs().max(1.0));
    }

    #[test]
    fn sample_path_is_reproducible() {
        let m = RppModel::new(4, NormalizationSpec::identity(0), 1).unwrap();
        let a = m.sample_path(None, 50.0, 9).unwrap();
        assert_eq!(a, m.sample_path(None, 50.0, 9).unwrap());
        assert!(a.windows(2).all(|w| w[0] <= w[1]) && a.iter().all(|&t| t <= 50.0));
    }
}

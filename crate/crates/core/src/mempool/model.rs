use std::str::FromStr;

use log::info;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use super::series::MempoolSeries;
use crate::adv::{lipschitz_penalty, wasserstein_loss, GenState};
use crate::error::{Error, Result};
use crate::nn::{self, AdamState, Checkpoint, LayerSpec, Lstm, Mlp, ParamId, ParamStore, Tape, TrainHistory, Unary, Var};
use crate::nsx::Family;
use crate::rng::{self, Rng as SimRng};
use crate::rpp::IntensityHead;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MempoolVariant {
    /// Gamma heads trained by maximum likelihood, noise-free recurrence.
    NmsG,
    /// Noise-driven generators trained against critics.
    Ams,
}

impl FromStr for MempoolVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nms-g" | "nms_g" | "nmsg" => Ok(MempoolVariant::NmsG),
            "ams" => Ok(MempoolVariant::Ams),
            other => Err(Error::Config(format!("unknown mempool variant `{other}` (expected nms-g or ams)"))),
        }
    }
}

impl MempoolVariant {
    pub fn name(self) -> &'static str {
        match self {
            MempoolVariant::NmsG => "nms-g",
            MempoolVariant::Ams => "ams",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MempoolConfig {
    pub state_dim: usize,
    pub head_hidden: usize,
    /// Affine maps per head MLP.
    pub n_layers: usize,
    /// Width of ε for the AMS generators.
    pub noise_dim: usize,
    pub lambda1: f64,
    pub critic_steps: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_final: f64,
    pub batch_size: usize,
    pub bptt: usize,
    pub windows: usize,
    pub seed: u64,
}

impl Default for MempoolConfig {
    fn default() -> Self {
        Self {
            state_dim: 16,
            head_hidden: 20,
            n_layers: 4,
            noise_dim: 4,
            lambda1: 10.0,
            critic_steps: 5,
            epochs: 20,
            lr: 1e-5,
            lr_final: 1.0,
            batch_size: 32,
            bptt: 64,
            windows: 2,
            seed: 0,
        }
    }
}

/// Which training objective to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MempoolObjective {
    /// Gamma NLL of `u_{i+1}` (NMS-G) or the generator loss (AMS).
    Unconfirmed,
    /// AMS critic loss for the backlog model.
    UnconfirmedCritic,
    /// `-L_RPP` of the block times under the combined intensity.
    Blocks,
    /// Gamma NLL of `b_{i+1}` (NMS-G) or the generator loss (AMS).
    Accepted,
    AcceptedCritic,
}

/// Normalized per-record features.
#[derive(Clone, Debug)]
struct Features {
    /// `[ln(1 + g_i), u_i]` with `g_i = d_{i+1} - d_i`, one per transition.
    xu: Vec<[f64; 2]>,
    u_next: Vec<f64>,
    /// `[ln(1 + b_i), ln(1 + τ̃_i)]`, one per record.
    xm: Vec<[f64; 2]>,
    gaps: Vec<f64>,
    b_next: Vec<f64>,
}

/// Teacher-forced recurrent states, noise off.
#[derive(Clone, Debug, PartialEq)]
pub struct MempoolStates {
    /// `h^U_i` for each transition `i`.
    pub u: Vec<Vec<f64>>,
    /// `h^M_i` for each record.
    pub m: Vec<Vec<f64>>,
}

impl MempoolStates {
    /// `h^U_{i-1}`, zero before the first transition.
    pub fn u_prev(&self, i: usize) -> Vec<f64> {
        match i.checked_sub(1) {
            Some(k) if k < self.u.len() => self.u[k].clone(),
            Some(_) => self.u.last().cloned().unwrap_or_default(),
            None => vec![0.0; self.u.first().map_or(0, Vec::len)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct MempoolModel {
    pub variant: MempoolVariant,
    pub store: ParamStore,
    pub cfg: MempoolConfig,
    /// Original time units per normalized unit (mean inter-block gap).
    pub time_scale: f64,
    /// Transactions per normalized unit (mean backlog).
    pub count_scale: f64,
    u_cell: Lstm,
    u_head: Mlp,
    m_cell: Lstm,
    v_m: ParamId,
    v_u: ParamId,
    w: ParamId,
    b: ParamId,
    acc_head: Mlp,
    u_critic: Option<Mlp>,
    b_critic: Option<Mlp>,
}

fn ln1p_pos(x: f64) -> f64 {
    x.max(0.0).ln_1p()
}

fn zero_state(rows: usize, d: usize) -> GenState {
    GenState {
        h: vec![0.0; rows * d],
        c: vec![0.0; rows * d],
    }
}

impl MempoolModel {
    pub fn new(variant: MempoolVariant, time_scale: f64, count_scale: f64, cfg: &MempoolConfig) -> Result<Self> {
        if !(time_scale > 0.0 && count_scale > 0.0) {
            return Err(Error::Config("mempool scales must be positive".into()));
        }
        if cfg.state_dim == 0 || cfg.head_hidden == 0 || cfg.n_layers == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        let mut r = rng::stream(cfg.seed, 41);
        let mut store = ParamStore::new();
        let ams = variant == MempoolVariant::Ams;
        let nd = if ams { cfg.noise_dim } else { 0 };
        let h = cfg.state_dim;
        let head = |input: usize, out: usize| {
            let spec = LayerSpec::mlp(input, cfg.head_hidden, out, cfg.n_layers);
            if ams {
                spec.with_noise()
            } else {
                spec
            }
        };
        let n_out = if ams { 1 } else { 2 };
        let u_cell = Lstm::new(&mut store, "mp.u.cell", LayerSpec::lstm(nd + 2, h), &mut r)?;
        let u_head = Mlp::new(&mut store, "mp.u.head", head(h, n_out), &mut r)?;
        let m_cell = Lstm::new(&mut store, "mp.block.cell", LayerSpec::lstm(2, h), &mut r)?;
        let v_m = store.add_glorot("mp.block.v_m", 1, h, &mut r)?;
        let v_u = store.add_zeros("mp.block.v_u", vec![1, h])?;
        let w = store.add_zeros("mp.block.w", vec![1])?;
        let b = store.add_zeros("mp.block.b", vec![1])?;
        let acc_head = Mlp::new(&mut store, "mp.acc.head", head(2 * h + nd, n_out), &mut r)?;
        let (u_critic, b_critic) = if ams {
            let c = |s: &mut ParamStore, name: &str, input: usize, r: &mut SimRng| {
                Mlp::new(s, name, LayerSpec::mlp(input, cfg.head_hidden, 1, cfg.n_layers), r)
            };
            (
                Some(c(&mut store, "mp.critic_u", 3, &mut r)?),
                Some(c(&mut store, "mp.critic_b", 1, &mut r)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            variant,
            store,
            cfg: cfg.clone(),
            time_scale,
            count_scale,
            u_cell,
            u_head,
            m_cell,
            v_m,
            v_u,
            w,
            b,
            acc_head,
            u_critic,
            b_critic,
        })
    }

    fn noise_dim(&self) -> usize {
        match self.variant {
            MempoolVariant::Ams => self.cfg.noise_dim,
            MempoolVariant::NmsG => 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim
    }

    fn features(&self, series: &MempoolSeries) -> Result<Features> {
        if series.len() < 2 {
            return Err(Error::Data("mempool model needs at least two records".into()));
        }
        let rec = series.records();
        let (ts, cs) = (self.time_scale, self.count_scale);
        let n = rec.len();
        let mut f = Features {
            xu: Vec::with_capacity(n - 1),
            u_next: Vec::with_capacity(n - 1),
            xm: Vec::with_capacity(n),
            gaps: Vec::with_capacity(n - 1),
            b_next: Vec::with_capacity(n - 1),
        };
        for (i, r) in rec.iter().enumerate() {
            f.xm.push([ln1p_pos(r.accepted / cs), ln1p_pos(r.inter_block / ts)]);
            if i + 1 < n {
                let g = rec[i + 1].inter_block / ts;
                f.gaps.push(g);
                f.xu.push([g.ln_1p(), r.unconfirmed / cs]);
                // Zero counts sit outside the open support; floor them.
                f.u_next.push((rec[i + 1].unconfirmed / cs).max(1e-9));
                f.b_next.push((rec[i + 1].accepted / cs).max(1e-9));
            }
        }
        Ok(f)
    }

    fn epsilon<R: Rng + ?Sized>(&self, tape: &mut Tape, rows: usize, r: &mut R) -> Option<Var> {
        let nd = self.noise_dim();
        (nd > 0).then(|| {
            let v = (0..rows * nd).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            tape.constant(rows, nd, v)
        })
    }

    /// Batched recurrent unroll over windows of `len` steps. Returns the
    /// per-step state rows as `(step index, row var)` and the final states.
    #[allow(clippy::too_many_arguments)]
    fn unroll<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        cell: &Lstm,
        inputs: &[[f64; 2]],
        noisy: bool,
        starts: &[usize],
        len: usize,
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Vec<(usize, Var)>, Vec<GenState>)> {
        let k = starts.len();
        let d = self.cfg.state_dim;
        let hv: Vec<f64> = init.iter().flat_map(|s| s.h.iter().copied()).collect();
        let cv: Vec<f64> = init.iter().flat_map(|s| s.c.iter().copied()).collect();
        let mut state = (tape.constant(k, d, hv), tape.constant(k, d, cv));
        let mut rows = Vec::new();
        let mut finals = init.to_vec();
        let total = inputs.len();
        for t in 0..len {
            if starts.iter().all(|&s| s + t >= total) {
                break;
            }
            let mut x = vec![0.0; 2 * k];
            for (w, &s) in starts.iter().enumerate() {
                if let Some(v) = inputs.get(s + t) {
                    x[2 * w..2 * w + 2].copy_from_slice(v);
                }
            }
            let xv = tape.constant(k, 2, x);
            let input = match noisy.then(|| self.epsilon(tape, k, r)).flatten() {
                Some(e) => tape.concat_cols(&[e, xv]),
                None => xv,
            };
            state = cell.step(tape, &self.store, input, state)?;
            for (w, &s) in starts.iter().enumerate() {
                let j = s + t;
                if j < total {
                    rows.push((j, tape.slice_rows(state.0, w, 1)));
                    if j + 1 == total.min(s + len) {
                        finals[w] = GenState {
                            h: tape.row(state.0, w).to_vec(),
                            c: tape.row(state.1, w).to_vec(),
                        };
                    }
                }
            }
        }
        Ok((rows, finals))
    }

    fn gamma_nll(&self, tape: &mut Tape, head: &Mlp, input: Var, targets: &[f64]) -> Result<Var> {
        let raw = head.forward(tape, &self.store, input, None)?;
        let p = Family::Gamma.link_tape(tape, raw, 1.0);
        let y = tape.column(targets);
        let lp = Family::Gamma.log_pdf_tape(tape, &p, y);
        let m = tape.mean(lp);
        Ok(tape.neg(m))
    }

    fn sample_head<R: Rng + ?Sized>(&self, tape: &mut Tape, head: &Mlp, input: Var, r: &mut R) -> Result<Var> {
        let rows = tape.shape(input).0;
        let noise = head.noise_vars(tape, rows, r);
        let out = head.forward(tape, &self.store, input, noise.as_deref())?;
        Ok(tape.softplus(out))
    }

    fn u_rows<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        starts: &[usize],
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Var, Vec<usize>, Vec<GenState>)> {
        let noisy = self.variant == MempoolVariant::Ams;
        let (rows, finals) = self.unroll(tape, &self.u_cell, &f.xu, noisy, starts, self.cfg.bptt, init, r)?;
        let idx: Vec<usize> = rows.iter().map(|p| p.0).collect();
        let vars: Vec<Var> = rows.iter().map(|p| p.1).collect();
        Ok((tape.stack_rows(&vars), idx, finals))
    }

    /// Generated `u_{i+1}` for the given windows, with their step indices.
    fn u_fake<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        starts: &[usize],
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Var, Vec<usize>, Vec<GenState>)> {
        let (h, idx, finals) = self.u_rows(tape, f, starts, init, r)?;
        let s = self.sample_head(tape, &self.u_head, h, r)?;
        Ok((s, idx, finals))
    }

    fn u_critic_input(f: &Features, idx: &[usize], u: &[f64]) -> Vec<f64> {
        idx.iter()
            .zip(u)
            .flat_map(|(&i, &v)| [v, f.xu[i][0], f.xu[i][1]])
            .collect()
    }

    fn critic<'a>(&self, which: &'a Option<Mlp>) -> Result<&'a Mlp> {
        which
            .as_ref()
            .ok_or_else(|| Error::Config("critic objectives need the ams variant".into()))
    }

    fn build_u_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        starts: &[usize],
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Var, Vec<GenState>)> {
        match self.variant {
            MempoolVariant::NmsG => {
                let (h, idx, finals) = self.u_rows(tape, f, starts, init, r)?;
                let y: Vec<f64> = idx.iter().map(|&i| f.u_next[i]).collect();
                Ok((self.gamma_nll(tape, &self.u_head, h, &y)?, finals))
            }
            MempoolVariant::Ams => {
                let critic = self.critic(&self.u_critic)?;
                let (s, idx, finals) = self.u_fake(tape, f, starts, init, r)?;
                let cond: Vec<f64> = idx.iter().flat_map(|&i| f.xu[i]).collect();
                let c = tape.constant(idx.len(), 2, cond);
                let input = tape.concat_cols(&[s, c]);
                let out = critic.forward(tape, &self.store, input, None)?;
                let m = tape.mean(out);
                Ok((tape.neg(m), finals))
            }
        }
    }

    fn build_u_critic_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        starts: &[usize],
        init: &[GenState],
        r: &mut R,
    ) -> Result<Var> {
        let critic = self.critic(&self.u_critic)?;
        let (s, idx, _) = self.u_fake(tape, f, starts, init, r)?;
        let fake: Vec<f64> = tape.value(s).to_vec();
        let real: Vec<f64> = idx.iter().map(|&i| f.u_next[i]).collect();
        let rv = tape.constant(idx.len(), 3, Self::u_critic_input(f, &idx, &real));
        let fv = tape.constant(idx.len(), 3, Self::u_critic_input(f, &idx, &fake));
        let wd = wasserstein_loss(tape, critic, &self.store, rv, fv)?;
        let cov: Vec<Vec<f64>> = idx.iter().map(|&i| f.xu[i].to_vec()).collect();
        let l1 = lipschitz_penalty(tape, critic, &self.store, &real, &fake, &cov, r)?;
        let neg = tape.neg(wd);
        let pen = tape.scale(l1, self.cfg.lambda1);
        Ok(tape.add(neg, pen))
    }

    fn alpha_rows(&self, tape: &mut Tape, hm: Var, hu_prev: Var) -> Var {
        let vm = tape.param(&self.store, self.v_m);
        let vu = tape.param(&self.store, self.v_u);
        let b = tape.param(&self.store, self.b);
        let a = tape.matmul_t(hm, vm);
        let u = tape.matmul_t(hu_prev, vu);
        let au = tape.add(a, u);
        tape.add(au, b)
    }

    /// `ln f*(g | α)` per row: `α + w g - e^α g exprel(w g)`.
    fn log_f_rows(&self, tape: &mut Tape, alpha: Var, gaps: Var) -> Var {
        let w = tape.param(&self.store, self.w);
        let wg = tape.mul(w, gaps);
        let er = tape.unary(wg, Unary::Exprel);
        let ea = tape.exp(alpha);
        let eag = tape.mul(ea, gaps);
        let cum = tape.mul(eag, er);
        let lin = tape.add(alpha, wg);
        tape.sub(lin, cum)
    }

    fn build_block_loss(
        &self,
        tape: &mut Tape,
        f: &Features,
        states: &MempoolStates,
        starts: &[usize],
        init: &[GenState],
    ) -> Result<(Var, Vec<GenState>)> {
        // Only records with a following block carry a gap to score.
        let xm = &f.xm[..f.gaps.len()];
        let mut r = rng::seeded(0);
        let (rows, finals) = self.unroll(tape, &self.m_cell, xm, false, starts, self.cfg.bptt, init, &mut r)?;
        let idx: Vec<usize> = rows.iter().map(|p| p.0).collect();
        let vars: Vec<Var> = rows.iter().map(|p| p.1).collect();
        let hm = tape.stack_rows(&vars);
        let d = self.cfg.state_dim;
        let hu = tape.constant(idx.len(), d, idx.iter().flat_map(|&j| states.u_prev(j)).collect());
        let alpha = self.alpha_rows(tape, hm, hu);
        let g = tape.column(&idx.iter().map(|&j| f.gaps[j]).collect::<Vec<_>>());
        let lf = self.log_f_rows(tape, alpha, g);
        let m = tape.mean(lf);
        Ok((tape.neg(m), finals))
    }

    fn acc_input<R: Rng + ?Sized>(&self, tape: &mut Tape, states: &MempoolStates, idx: &[usize], r: &mut R) -> Var {
        let d = self.cfg.state_dim;
        let rows: Vec<f64> = idx
            .iter()
            .flat_map(|&i| states.m[i].iter().copied().chain(states.u_prev(i)))
            .collect();
        let x = tape.constant(idx.len(), 2 * d, rows);
        match self.epsilon(tape, idx.len(), r) {
            Some(e) => tape.concat_cols(&[x, e]),
            None => x,
        }
    }

    fn build_acc_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        states: &MempoolStates,
        idx: &[usize],
        r: &mut R,
    ) -> Result<Var> {
        let input = self.acc_input(tape, states, idx, r);
        let y: Vec<f64> = idx.iter().map(|&i| f.b_next[i]).collect();
        match self.variant {
            MempoolVariant::NmsG => self.gamma_nll(tape, &self.acc_head, input, &y),
            MempoolVariant::Ams => {
                let critic = self.critic(&self.b_critic)?;
                let s = self.sample_head(tape, &self.acc_head, input, r)?;
                let out = critic.forward(tape, &self.store, s, None)?;
                let m = tape.mean(out);
                Ok(tape.neg(m))
            }
        }
    }

    fn build_acc_critic_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        f: &Features,
        states: &MempoolStates,
        idx: &[usize],
        r: &mut R,
    ) -> Result<Var> {
        let critic = self.critic(&self.b_critic)?;
        let input = self.acc_input(tape, states, idx, r);
        let s = self.sample_head(tape, &self.acc_head, input, r)?;
        let fake = tape.value(s).to_vec();
        let real: Vec<f64> = idx.iter().map(|&i| f.b_next[i]).collect();
        let rv = tape.column(&real);
        let fv = tape.column(&fake);
        let wd = wasserstein_loss(tape, critic, &self.store, rv, fv)?;
        let l1 = lipschitz_penalty(tape, critic, &self.store, &real, &fake, &vec![Vec::new(); real.len()], r)?;
        let neg = tape.neg(wd);
        let pen = tape.scale(l1, self.cfg.lambda1);
        Ok(tape.add(neg, pen))
    }

    /// Teacher-forced `h^U` and `h^M` over the whole series with ε = 0.
    pub fn states(&self, series: &MempoolSeries) -> Result<MempoolStates> {
        let f = self.features(series)?;
        let d = self.cfg.state_dim;
        let nd = self.noise_dim();
        let mut tape = Tape::new();
        let mut run = |cell: &Lstm, inputs: &[[f64; 2]], pad: usize| -> Result<Vec<Vec<f64>>> {
            let mut st = zero_state(1, d);
            let mut out = Vec::with_capacity(inputs.len());
            for x in inputs {
                tape.clear();
                let mut row = vec![0.0; pad];
                row.extend_from_slice(x);
                let xv = tape.row_vector(&row);
                let (h, c) = (tape.row_vector(&st.h), tape.row_vector(&st.c));
                let (h, c) = cell.step(&mut tape, &self.store, xv, (h, c))?;
                st = GenState {
                    h: tape.value(h).to_vec(),
                    c: tape.value(c).to_vec(),
                };
                out.push(st.h.clone());
            }
            Ok(out)
        };
        let u = run(&self.u_cell, &f.xu, nd)?;
        let m = run(&self.m_cell, &f.xm, 0)?;
        Ok(MempoolStates { u, m })
    }

    /// Evaluates one objective on the whole series; the seed fixes all noise.
    pub fn objective(&self, series: &MempoolSeries, which: MempoolObjective, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.build_objective(&mut tape, series, which, seed)?;
        Ok(tape.scalar(l))
    }

    /// As [`Self::objective`], writing gradients into the store.
    pub fn objective_grad(&mut self, series: &MempoolSeries, which: MempoolObjective, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.build_objective(&mut tape, series, which, seed)?;
        nn::backprop(&tape, l, &mut self.store);
        Ok(tape.scalar(l))
    }

    fn build_objective(&self, tape: &mut Tape, series: &MempoolSeries, which: MempoolObjective, seed: u64) -> Result<Var> {
        let f = self.features(series)?;
        let mut r = rng::stream(seed, 42);
        let t = f.xu.len();
        let starts: Vec<usize> = (0..t).step_by(self.cfg.bptt).collect();
        let init = vec![zero_state(1, self.cfg.state_dim); starts.len()];
        let all: Vec<usize> = (0..t).collect();
        match which {
            MempoolObjective::Unconfirmed => Ok(self.build_u_loss(tape, &f, &starts, &init, &mut r)?.0),
            MempoolObjective::UnconfirmedCritic => self.build_u_critic_loss(tape, &f, &starts, &init, &mut r),
            MempoolObjective::Blocks => {
                let states = self.states(series)?;
                Ok(self.build_block_loss(tape, &f, &states, &starts, &init)?.0)
            }
            MempoolObjective::Accepted => {
                let states = self.states(series)?;
                self.build_acc_loss(tape, &f, &states, &all, &mut r)
            }
            MempoolObjective::AcceptedCritic => {
                let states = self.states(series)?;
                self.build_acc_critic_loss(tape, &f, &states, &all, &mut r)
            }
        }
    }

    /// One backlog step: the next recurrent state and either Gamma
    /// parameters (NMS-G, in normalized counts) or a sample (AMS, in counts).
    pub fn step_u<R: Rng + ?Sized>(
        &self,
        gap: f64,
        u: f64,
        state: &GenState,
        noise: bool,
        r: &mut R,
    ) -> Result<(Vec<f64>, GenState)> {
        let mut tape = Tape::new();
        let mut row = Vec::new();
        let nd = self.noise_dim();
        if nd > 0 {
            if noise {
                row.extend((0..nd).map(|_| r.sample::<f64, _>(StandardNormal)));
            } else {
                row.resize(nd, 0.0);
            }
        }
        row.push((gap / self.time_scale).ln_1p());
        row.push(u / self.count_scale);
        let x = tape.row_vector(&row);
        let (h, c) = (tape.row_vector(&state.h), tape.row_vector(&state.c));
        let (h, c) = self.u_cell.step(&mut tape, &self.store, x, (h, c))?;
        let next = GenState {
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        };
        let out = match self.variant {
            MempoolVariant::NmsG => {
                let raw = self.u_head.forward(&mut tape, &self.store, h, None)?;
                Family::Gamma.link(tape.value(raw), 1.0)
            }
            MempoolVariant::Ams => {
                let noise_vars = if noise { self.u_head.noise_vars(&mut tape, 1, r) } else { None };
                let out = self.u_head.forward(&mut tape, &self.store, h, noise_vars.as_deref())?;
                let s = tape.softplus(out);
                vec![tape.scalar(s) * self.count_scale]
            }
        };
        Ok((out, next))
    }

    /// Block-creation intensity `exp(v_M·h^M + v_U·h^U + w dt + b)`, `dt` in original time.
    pub fn block_intensity(&self, hm: &[f64], hu: &[f64], dt: f64) -> Result<f64> {
        if dt < 0.0 {
            return Err(Error::InvalidArgument("block intensity before the last block".into()));
        }
        Ok(self.block_head(hm, hu)?.intensity(dt / self.time_scale)? / self.time_scale)
    }

    /// Head for the next gap in normalized time.
    pub fn block_head(&self, hm: &[f64], hu: &[f64]) -> Result<IntensityHead> {
        let d = self.cfg.state_dim;
        if hm.len() != d || hu.len() != d {
            return Err(Error::dim("block head state", d, hm.len().min(hu.len())));
        }
        let dot = |id: ParamId, h: &[f64]| -> f64 { self.store.tensor(id).values.iter().zip(h).map(|(a, b)| a * b).sum() };
        let alpha = dot(self.v_m, hm) + dot(self.v_u, hu) + self.store.tensor(self.b).values[0];
        Ok(IntensityHead::new(alpha, self.store.tensor(self.w).values[0]))
    }

    /// Block recurrence on `(ln(1+b), ln(1+τ̃))`, both in original units.
    pub fn step_blocks(&self, accepted: f64, inter_block: f64, state: &GenState) -> Result<GenState> {
        let mut tape = Tape::new();
        let x = tape.row_vector(&[ln1p_pos(accepted / self.count_scale), ln1p_pos(inter_block / self.time_scale)]);
        let (h, c) = (tape.row_vector(&state.h), tape.row_vector(&state.c));
        let (h, c) = self.m_cell.step(&mut tape, &self.store, x, (h, c))?;
        Ok(GenState {
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        })
    }

    /// Accepted count for the next block: Gamma parameters (NMS-G,
    /// normalized) or a sample in counts (AMS), clamped to `cap` when given.
    pub fn generate_accepted<R: Rng + ?Sized>(
        &self,
        hm: &[f64],
        hu_prev: &[f64],
        cap: Option<f64>,
        r: &mut R,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut row = hm.to_vec();
        row.extend_from_slice(hu_prev);
        let x = tape.row_vector(&row);
        let input = match self.epsilon(&mut tape, 1, r) {
            Some(e) => tape.concat_cols(&[x, e]),
            None => x,
        };
        match self.variant {
            MempoolVariant::NmsG => {
                let raw = self.acc_head.forward(&mut tape, &self.store, input, None)?;
                Ok(Family::Gamma.link(tape.value(raw), 1.0))
            }
            MempoolVariant::Ams => {
                let s = self.sample_head(&mut tape, &self.acc_head, input, r)?;
                let b = tape.scalar(s) * self.count_scale;
                Ok(vec![cap.map_or(b, |c| b.min(c))])
            }
        }
    }

    /// One-step predictions of `u_{i+1}` for every transition of `series`,
    /// in counts. AMS averages `n_samples` noise trajectories.
    pub fn predict_unconfirmed(&self, series: &MempoolSeries, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        let f = self.features(series)?;
        let d = self.cfg.state_dim;
        let mut tape = Tape::new();
        let mut r = rng::stream(seed, 43);
        let rows = match self.variant {
            MempoolVariant::NmsG => 1,
            MempoolVariant::Ams => n_samples,
        };
        let mut st = zero_state(rows, d);
        let mut out = Vec::with_capacity(f.xu.len());
        for x in &f.xu {
            tape.clear();
            let xv = tape.constant(rows, 2, x.repeat(rows));
            let input = match self.epsilon(&mut tape, rows, &mut r) {
                Some(e) => tape.concat_cols(&[e, xv]),
                None => xv,
            };
            let (h, c) = (tape.constant(rows, d, st.h), tape.constant(rows, d, st.c));
            let (h, c) = self.u_cell.step(&mut tape, &self.store, input, (h, c))?;
            st = GenState {
                h: tape.value(h).to_vec(),
                c: tape.value(c).to_vec(),
            };
            let pred = match self.variant {
                MempoolVariant::NmsG => {
                    let raw = self.u_head.forward(&mut tape, &self.store, h, None)?;
                    Family::Gamma.mean(&Family::Gamma.link(tape.value(raw), 1.0))
                }
                MempoolVariant::Ams => {
                    let s = self.sample_head(&mut tape, &self.u_head, h, &mut r)?;
                    tape.value(s).iter().sum::<f64>() / rows as f64
                }
            };
            out.push(pred * self.count_scale);
        }
        Ok(out)
    }

    /// Expected gap to each following block under the block model, original time.
    pub fn expected_inter_blocks(&self, series: &MempoolSeries) -> Result<Vec<f64>> {
        let states = self.states(series)?;
        let n = series.len() - 1;
        (0..n)
            .map(|j| {
                let head = self.block_head(&states.m[j], &states.u_prev(j))?;
                Ok(head.expected_next(&Default::default())?.0 * self.time_scale)
            })
            .collect()
    }

    /// Block-model log-likelihood with `v_U` as stored, per gap, normalized time.
    pub fn block_log_likelihoods(&self, series: &MempoolSeries) -> Result<Vec<f64>> {
        let f = self.features(series)?;
        let states = self.states(series)?;
        (0..f.gaps.len())
            .map(|j| self.block_head(&states.m[j], &states.u_prev(j))?.log_f_star(f.gaps[j]))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        Checkpoint::new(self.store.clone())
            .with_meta("kind", "mempool")
            .with_meta("variant", self.variant.name())
            .with_meta("state_dim", c.state_dim)
            .with_meta("head_hidden", c.head_hidden)
            .with_meta("n_layers", c.n_layers)
            .with_meta("noise_dim", c.noise_dim)
            .with_meta("lambda1", c.lambda1)
            .with_meta("bptt", c.bptt)
            .with_meta("time_scale", self.time_scale)
            .with_meta("count_scale", self.count_scale)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("mempool")?;
        let cfg = MempoolConfig {
            state_dim: ck.meta_parse("state_dim")?,
            head_hidden: ck.meta_parse("head_hidden")?,
            n_layers: ck.meta_parse("n_layers")?,
            noise_dim: ck.meta_parse("noise_dim")?,
            lambda1: ck.meta_parse("lambda1")?,
            bptt: ck.meta_parse("bptt")?,
            ..MempoolConfig::default()
        };
        let variant: MempoolVariant = ck.meta_str("variant")?.parse()?;
        let mut m = Self::new(variant, ck.meta_parse("time_scale")?, ck.meta_parse("count_scale")?, &cfg)?;
        m.store.load_values_from(&ck.store)?;
        Ok(m)
    }
}

fn adam_group(store: &ParamStore, prefix: &str, cfg: &MempoolConfig, adversarial: bool) -> AdamState {
    let mut a = AdamState::new(store, store.ids_with_prefix(prefix), cfg.lr);
    if adversarial {
        a.beta1 = 0.5;
        a.beta2 = 0.9;
    }
    a
}

fn window_batches(n_windows: usize, per: usize, r: &mut SimRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_windows).collect();
    order.shuffle(r);
    order.chunks(per.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains the backlog model, then the block model, then the accepted
/// model each epoch, with states teacher-forced from the data.
pub fn train_mempool(variant: MempoolVariant, series: &MempoolSeries, cfg: &MempoolConfig) -> Result<(MempoolModel, TrainHistory)> {
    if series.len() < 3 {
        return Err(Error::Data("mempool training needs at least three records".into()));
    }
    if cfg.epochs == 0 || cfg.bptt == 0 || cfg.windows == 0 || cfg.batch_size == 0 || cfg.critic_steps == 0 {
        return Err(Error::Config("epochs, batch sizes and step counts must be positive".into()));
    }
    let n = series.len() as f64;
    let time_scale = series.inter_blocks().iter().sum::<f64>() / n;
    let count_scale = (series.unconfirmed().iter().sum::<f64>() / n).max(f64::MIN_POSITIVE);
    let mut model = MempoolModel::new(variant, time_scale, count_scale, cfg)?;
    let f = model.features(series)?;
    let ams = variant == MempoolVariant::Ams;
    let mut opt_u = adam_group(&model.store, "mp.u.", cfg, ams);
    let mut opt_m = adam_group(&model.store, "mp.block.", cfg, false);
    let mut opt_b = adam_group(&model.store, "mp.acc.", cfg, ams);
    let mut opt_cu = adam_group(&model.store, "mp.critic_u.", cfg, true);
    let mut opt_cb = adam_group(&model.store, "mp.critic_b.", cfg, true);
    let mut r = rng::stream(cfg.seed, 44);
    let t = f.xu.len();
    let n_windows = t.div_ceil(cfg.bptt);
    let d = cfg.state_dim;
    let mut u_init = vec![zero_state(1, d); n_windows];
    let mut m_init = vec![zero_state(1, d); n_windows];
    let mut history = TrainHistory::default();
    let mut tape = Tape::new();
    let all: Vec<usize> = (0..t).collect();

    for epoch in 0..cfg.epochs {
        let snapshot = model.store.clone();
        let diverged = || nn::diverged("mempool", epoch, &snapshot);
        let frac = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        let lr = cfg.lr * (1.0 + (cfg.lr_final - 1.0) * frac);
        for o in [&mut opt_u, &mut opt_m, &mut opt_b, &mut opt_cu, &mut opt_cb] {
            o.lr = lr;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        let mut record = |v: f64| -> Result<()> {
            if !v.is_finite() {
                return Err(nn::diverged("mempool", epoch, &snapshot));
            }
            total += v;
            count += 1;
            Ok(())
        };

        for batch in window_batches(n_windows, cfg.windows, &mut r) {
            let starts: Vec<usize> = batch.iter().map(|w| w * cfg.bptt).collect();
            let init: Vec<GenState> = batch.iter().map(|&w| u_init[w].clone()).collect();
            if ams {
                for _ in 0..cfg.critic_steps {
                    let wins: Vec<usize> = index::sample(&mut r, n_windows, cfg.windows.min(n_windows)).into_vec();
                    let cs: Vec<usize> = wins.iter().map(|w| w * cfg.bptt).collect();
                    let ci: Vec<GenState> = wins.iter().map(|&w| u_init[w].clone()).collect();
                    tape.clear();
                    let l = model.build_u_critic_loss(&mut tape, &f, &cs, &ci, &mut r)?;
                    if !tape.scalar(l).is_finite() {
                        return Err(diverged());
                    }
                    nn::backprop(&tape, l, &mut model.store);
                    opt_cu.update(&mut model.store).map_err(|_| diverged())?;
                }
            }
            tape.clear();
            let (l, finals) = model.build_u_loss(&mut tape, &f, &starts, &init, &mut r)?;
            record(tape.scalar(l))?;
            nn::backprop(&tape, l, &mut model.store);
            opt_u.update(&mut model.store).map_err(|_| diverged())?;
            carry(&mut u_init, &batch, finals);
        }

        let states = model.states(series)?;
        for batch in window_batches(n_windows, cfg.windows, &mut r) {
            let starts: Vec<usize> = batch.iter().map(|w| w * cfg.bptt).collect();
            let init: Vec<GenState> = batch.iter().map(|&w| m_init[w].clone()).collect();
            tape.clear();
            let (l, finals) = model.build_block_loss(&mut tape, &f, &states, &starts, &init)?;
            record(tape.scalar(l))?;
            nn::backprop(&tape, l, &mut model.store);
            opt_m.update(&mut model.store).map_err(|_| diverged())?;
            carry(&mut m_init, &batch, finals);
        }

        let states = model.states(series)?;
        let mut order = all.clone();
        order.shuffle(&mut r);
        for idx in order.chunks(cfg.batch_size) {
            if ams {
                for _ in 0..cfg.critic_steps {
                    let ci: Vec<usize> = index::sample(&mut r, t, cfg.batch_size.min(t)).into_vec();
                    tape.clear();
                    let l = model.build_acc_critic_loss(&mut tape, &f, &states, &ci, &mut r)?;
                    if !tape.scalar(l).is_finite() {
                        return Err(diverged());
                    }
                    nn::backprop(&tape, l, &mut model.store);
                    opt_cb.update(&mut model.store).map_err(|_| diverged())?;
                }
            }
            tape.clear();
            let l = model.build_acc_loss(&mut tape, &f, &states, idx, &mut r)?;
            record(tape.scalar(l))?;
            nn::backprop(&tape, l, &mut model.store);
            opt_b.update(&mut model.store).map_err(|_| diverged())?;
        }
        let mean = total / count.max(1) as f64;
        history.train_loss.push(mean);
        info!("mempool-{} epoch {epoch}: mean objective {mean:.6}", variant.name());
    }
    Ok((model, history))
}

fn carry(init: &mut [GenState], batch: &[usize], finals: Vec<GenState>) {
    for (&w, st) in batch.iter().zip(finals) {
        if w + 1 < init.len() {
            init[w + 1] = st;
        }
    }
}

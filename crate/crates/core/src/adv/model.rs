use std::str::FromStr;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use super::penalties::{censor_penalty, lipschitz_penalty, match_penalty, ObjectiveParts};
use crate::error::{Error, Result};
use crate::eventlog::QueueTrace;
use crate::nn::{self, AdamState, Checkpoint, LayerSpec, Lstm, Mlp, ParamStore, Tape, TrainHistory, Var};
use crate::rng::{self, Rng as SimRng};
use crate::rpp::RppModel;
use crate::service::{ServiceData, ServicePrediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Static generator on `(h^a, x, ε)`.
    As,
    /// Stochastic recurrent transition on `(ε, h^a, x)`.
    Ras,
    /// Recurrent transition without the arrival state, on `(ε, x)`.
    RasNh,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "as" => Variant::As,
            "ras" => Variant::Ras,
            "ras-nh" | "ras_nh" | "rasnh" => Variant::RasNh,
            other => return Err(Error::Config(format!("unknown adversarial variant `{other}`"))),
        })
    }
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::As => "as",
            Variant::Ras => "ras",
            Variant::RasNh => "ras-nh",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != Variant::As
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub critic_steps: usize,
    pub noise_dim: usize,
    /// Adds standard-normal noise to the generator's hidden pre-activations.
    pub noise_inject: bool,
    pub gen_hidden: usize,
    pub critic_hidden: usize,
    /// Affine maps per MLP; 4 gives three hidden layers.
    pub n_layers: usize,
    /// Width of the recurrent generator state.
    pub state_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Unroll length for the recurrent variants.
    pub bptt: usize,
    /// Windows per recurrent minibatch.
    pub windows: usize,
    pub lr: f64,
    /// Learning rate at the last epoch as a fraction of `lr`, reached linearly.
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 1.0,
            lambda3: 1.0,
            critic_steps: 5,
            noise_dim: 8,
            noise_inject: true,
            gen_hidden: 32,
            critic_hidden: 32,
            n_layers: 4,
            state_dim: 16,
            epochs: 20,
            batch_size: 32,
            bptt: 64,
            windows: 2,
            lr: 1e-4,
            lr_final: 1.0,
            beta1: 0.5,
            beta2: 0.9,
            seed: 0,
        }
    }
}

/// Sample generator. Parameters live under the `gen.` prefix.
#[derive(Clone, Debug)]
pub struct Generator {
    pub variant: Variant,
    pub noise_dim: usize,
    pub hidden_dim: usize,
    pub cov_dim: usize,
    pub mlp: Mlp,
    pub lstm: Option<Lstm>,
}

/// Recurrent generator state `(h^Φ, c^Φ)`, one row per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Generator {
    fn new(store: &mut ParamStore, variant: Variant, hidden_dim: usize, cov_dim: usize, cfg: &AdvConfig, r: &mut SimRng) -> Result<Self> {
        let nd = cfg.noise_dim;
        let mut mlp_spec;
        let mut lstm = None;
        match variant {
            Variant::As => {
                mlp_spec = LayerSpec::mlp(hidden_dim + cov_dim + nd, cfg.gen_hidden, 1, cfg.n_layers);
            }
            Variant::Ras | Variant::RasNh => {
                let cond = if variant == Variant::Ras { hidden_dim + cov_dim } else { cov_dim };
                let spec = LayerSpec::lstm(nd + cond, cfg.state_dim);
                lstm = Some(Lstm::new(store, "gen.transition", spec, r)?);
                mlp_spec = LayerSpec::mlp(cfg.state_dim + cond, cfg.gen_hidden, 1, cfg.n_layers);
            }
        }
        if cfg.noise_inject {
            mlp_spec = mlp_spec.with_noise();
        }
        let mlp = Mlp::new(store, "gen.head", mlp_spec, r)?;
        Ok(Self {
            variant,
            noise_dim: nd,
            hidden_dim,
            cov_dim,
            mlp,
            lstm,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.hidden_dim + self.cov_dim
    }

    pub fn state_dim(&self) -> usize {
        self.lstm.as_ref().map_or(0, Lstm::hidden_dim)
    }

    fn epsilon<R: Rng + ?Sized>(&self, tape: &mut Tape, rows: usize, r: &mut R) -> Option<Var> {
        (self.noise_dim > 0).then(|| {
            let v = (0..rows * self.noise_dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            tape.constant(rows, self.noise_dim, v)
        })
    }

    /// Conditioning the recurrent parts see: everything for RAS, covariates only for RAS-NH.
    fn visible(&self, tape: &mut Tape, cond: Var) -> Option<Var> {
        match self.variant {
            Variant::RasNh if self.cov_dim == 0 => None,
            Variant::RasNh => Some(tape.slice_cols(cond, self.hidden_dim, self.cov_dim)),
            _ => Some(cond),
        }
    }

    fn head<R: Rng + ?Sized>(&self, tape: &mut Tape, store: &ParamStore, input: Var, r: &mut R) -> Result<Var> {
        let rows = tape.shape(input).0;
        let noise = self.mlp.noise_vars(tape, rows, r);
        let out = self.mlp.forward(tape, store, input, noise.as_deref())?;
        Ok(tape.softplus(out))
    }

    /// Static samples, one per row of `cond = [h^a, x]`.
    pub fn forward_static<R: Rng + ?Sized>(&self, tape: &mut Tape, store: &ParamStore, cond: Var, r: &mut R) -> Result<Var> {
        let rows = tape.shape(cond).0;
        let mut parts = vec![cond];
        parts.extend(self.epsilon(tape, rows, r));
        let input = tape.concat_cols(&parts);
        self.head(tape, store, input, r)
    }

    /// One recurrent step: returns samples and the next state.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cond: Var,
        state: (Var, Var),
        r: &mut R,
    ) -> Result<(Var, (Var, Var))> {
        let lstm = self
            .lstm
            .as_ref()
            .ok_or_else(|| Error::Config("static generator has no transition".into()))?;
        let rows = tape.shape(state.0).0;
        let vis = self.visible(tape, cond);
        let mut parts = Vec::new();
        parts.extend(self.epsilon(tape, rows, r));
        parts.extend(vis);
        let x = if parts.is_empty() {
            tape.zeros(rows, 0)
        } else {
            tape.concat_cols(&parts)
        };
        let next = lstm.step(tape, store, x, state)?;
        let mut head_in = vec![next.0];
        head_in.extend(vis);
        let input = tape.concat_cols(&head_in);
        Ok((self.head(tape, store, input, r)?, next))
    }
}

/// Trained adversarial service model: generator and critic in one store.
#[derive(Clone, Debug)]
pub struct AdvModel {
    pub store: ParamStore,
    pub gen: Generator,
    /// `f(s, x)`, parameters under the `critic.` prefix.
    pub critic: Mlp,
    pub cfg: AdvConfig,
    pub time_scale: f64,
}

/// Events used by one objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    /// Observed events for the Wasserstein and matching terms, censored ones for the hinge.
    Static { observed: Vec<usize>, censored: Vec<usize> },
    /// Start indices of unrolled windows.
    Windows(Vec<usize>),
}

struct Unrolled {
    /// `(window slot, event index, sample)` per valid step.
    samples: Vec<(usize, usize, Var)>,
    finals: Vec<GenState>,
}

impl AdvModel {
    pub fn new(variant: Variant, hidden_dim: usize, cov_dim: usize, time_scale: f64, cfg: &AdvConfig) -> Result<Self> {
        if cfg.n_layers == 0 || cfg.gen_hidden == 0 || cfg.critic_hidden == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if variant.is_recurrent() && cfg.state_dim == 0 {
            return Err(Error::Config("recurrent variants need state_dim > 0".into()));
        }
        let mut r = rng::stream(cfg.seed, 30);
        let mut store = ParamStore::new();
        let gen = Generator::new(&mut store, variant, hidden_dim, cov_dim, cfg, &mut r)?;
        let critic = Mlp::new(
            &mut store,
            "critic",
            LayerSpec::mlp(1 + cov_dim, cfg.critic_hidden, 1, cfg.n_layers),
            &mut r,
        )?;
        Ok(Self {
            store,
            gen,
            critic,
            cfg: cfg.clone(),
            time_scale,
        })
    }

    pub fn variant(&self) -> Variant {
        self.gen.variant
    }

    fn zero_state(&self, rows: usize) -> GenState {
        let d = self.gen.state_dim();
        GenState {
            h: vec![0.0; rows * d],
            c: vec![0.0; rows * d],
        }
    }

    fn critic_rows(data: &ServiceData, idx: &[usize], s: &[f64]) -> Vec<f64> {
        idx.iter()
            .zip(s)
            .flat_map(|(&i, &v)| std::iter::once(v).chain(data.covariates[i].iter().copied()))
            .collect()
    }

    /// Unrolls the recurrent generator over windows starting at `starts`.
    fn unroll<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        data: &ServiceData,
        starts: &[usize],
        init: &[GenState],
        r: &mut R,
    ) -> Result<Unrolled> {
        let k = starts.len();
        let d = self.gen.state_dim();
        let hv: Vec<f64> = init.iter().flat_map(|s| s.h.iter().copied()).collect();
        let cv: Vec<f64> = init.iter().flat_map(|s| s.c.iter().copied()).collect();
        let mut state = (tape.constant(k, d, hv), tape.constant(k, d, cv));
        let mut samples = Vec::new();
        let mut finals = init.to_vec();
        let cd = self.gen.cond_dim();
        for t in 0..self.cfg.bptt {
            let mut rows = vec![0.0; k * cd];
            let mut any = false;
            for (w, &s0) in starts.iter().enumerate() {
                let j = s0 + t;
                if j < data.len() {
                    rows[w * cd..(w + 1) * cd].copy_from_slice(&data.input(j));
                    any = true;
                }
            }
            if !any {
                break;
            }
            let cond = tape.constant(k, cd, rows);
            let (s, next) = self.gen.forward_step(tape, &self.store, cond, state, r)?;
            state = next;
            for (w, &s0) in starts.iter().enumerate() {
                let j = s0 + t;
                if j < data.len() {
                    let row = tape.slice_rows(s, w, 1);
                    samples.push((w, j, row));
                    if j + 1 == data.len().min(s0 + self.cfg.bptt) {
                        finals[w] = GenState {
                            h: tape.row(state.0, w).to_vec(),
                            c: tape.row(state.1, w).to_vec(),
                        };
                    }
                }
            }
        }
        Ok(Unrolled { samples, finals })
    }

    /// Generated samples (vars, event index) for a selection.
    fn generate_for<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        data: &ServiceData,
        sel: &Selection,
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Vec<(usize, Var)>, Vec<GenState>)> {
        match sel {
            Selection::Static { observed, censored } => {
                let mut out = Vec::new();
                for idx in [observed, censored] {
                    if idx.is_empty() {
                        continue;
                    }
                    let cond = tape.constant(idx.len(), self.gen.cond_dim(), data.input_rows(idx));
                    let s = self.gen.forward_static(tape, &self.store, cond, r)?;
                    for (row, &i) in idx.iter().enumerate() {
                        let v = tape.slice_rows(s, row, 1);
                        out.push((i, v));
                    }
                }
                Ok((out, Vec::new()))
            }
            Selection::Windows(starts) => {
                let u = self.unroll(tape, data, starts, init, r)?;
                Ok((u.samples.into_iter().map(|(_, j, v)| (j, v)).collect(), u.finals))
            }
        }
    }

    fn init_for(&self, sel: &Selection, states: Option<&[GenState]>) -> Vec<GenState> {
        match sel {
            Selection::Static { .. } => Vec::new(),
            Selection::Windows(starts) => match states {
                Some(all) => starts.iter().map(|&s| all[s / self.cfg.bptt].clone()).collect(),
                None => vec![self.zero_state(1); starts.len()],
            },
        }
    }

    /// Critic loss `-(E_real f - E_fake f) + λ1 L1` with detached fakes.
    fn build_critic_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        data: &ServiceData,
        sel: &Selection,
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Var, ObjectiveParts)> {
        let (gen, _) = self.generate_for(tape, data, sel, init, r)?;
        let observed: Vec<(usize, f64)> = gen
            .iter()
            .filter(|(i, _)| !data.censored[*i])
            .map(|&(i, v)| (i, tape.scalar(v)))
            .collect();
        if observed.is_empty() {
            return Err(Error::Data("critic batch has no observed events".into()));
        }
        let idx: Vec<usize> = observed.iter().map(|o| o.0).collect();
        let fake_s: Vec<f64> = observed.iter().map(|o| o.1).collect();
        let real_s: Vec<f64> = idx.iter().map(|&i| data.targets[i]).collect();
        let w = self.critic.spec.input_dim;
        let real = tape.constant(idx.len(), w, Self::critic_rows(data, &idx, &real_s));
        let fake = tape.constant(idx.len(), w, Self::critic_rows(data, &idx, &fake_s));
        let wd = super::penalties::wasserstein_loss(tape, &self.critic, &self.store, real, fake)?;
        let covs: Vec<Vec<f64>> = idx.iter().map(|&i| data.covariates[i].clone()).collect();
        let l1 = lipschitz_penalty(tape, &self.critic, &self.store, &real_s, &fake_s, &covs, r)?;
        let parts = ObjectiveParts {
            wasserstein: tape.scalar(wd),
            lipschitz: tape.scalar(l1),
            ..ObjectiveParts::default()
        };
        let neg = tape.neg(wd);
        let pen = tape.scale(l1, self.cfg.lambda1);
        Ok((tape.add(neg, pen), parts))
    }

    /// Generator loss `-E_fake f + λ2 L2 + λ3 L3`; L3 reuses the fakes of the
    /// Wasserstein term.
    fn build_gen_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        data: &ServiceData,
        sel: &Selection,
        init: &[GenState],
        r: &mut R,
    ) -> Result<(Var, ObjectiveParts, Vec<GenState>)> {
        let (gen, finals) = self.generate_for(tape, data, sel, init, r)?;
        let (obs, cen): (Vec<_>, Vec<_>) = gen.into_iter().partition(|(i, _)| !data.censored[*i]);
        let stack = |tape: &mut Tape, v: &[(usize, Var)]| -> Option<Var> {
            (!v.is_empty()).then(|| {
                let vars: Vec<Var> = v.iter().map(|p| p.1).collect();
                tape.stack_rows(&vars)
            })
        };
        let s_obs = stack(tape, &obs);
        let s_cen = stack(tape, &cen);
        let obs_idx: Vec<usize> = obs.iter().map(|p| p.0).collect();
        let targets: Vec<f64> = obs_idx.iter().map(|&i| data.targets[i]).collect();
        let windows: Vec<f64> = cen.iter().map(|p| data.targets[p.0]).collect();

        let adv = match s_obs {
            Some(s) => {
                let covs = tape.constant(
                    obs_idx.len(),
                    self.gen.cov_dim,
                    obs_idx.iter().flat_map(|&i| data.covariates[i].iter().copied()).collect(),
                );
                let input = if self.gen.cov_dim == 0 { s } else { tape.concat_cols(&[s, covs]) };
                let f = self.critic.forward(tape, &self.store, input, None)?;
                let m = tape.mean(f);
                tape.neg(m)
            }
            None => tape.scalar_const(0.0),
        };
        let l2 = censor_penalty(tape, s_cen, &windows)?;
        let l3 = match_penalty(tape, s_obs, &targets)?;
        let parts = ObjectiveParts {
            wasserstein: tape.scalar(adv),
            censor: tape.scalar(l2),
            matching: tape.scalar(l3),
            ..ObjectiveParts::default()
        };
        let a = tape.scale(l2, self.cfg.lambda2);
        let b = tape.scale(l3, self.cfg.lambda3);
        let ab = tape.add(a, b);
        Ok((tape.add(adv, ab), parts, finals))
    }

    /// Critic objective on a fixed selection; the seed fixes all noise.
    pub fn critic_objective(&self, data: &ServiceData, sel: &Selection, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let init = self.init_for(sel, None);
        let (l, _) = self.build_critic_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 31))?;
        Ok(tape.scalar(l))
    }

    pub fn critic_objective_grad(&mut self, data: &ServiceData, sel: &Selection, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let init = self.init_for(sel, None);
        let (l, _) = self.build_critic_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 31))?;
        nn::backprop(&tape, l, &mut self.store);
        Ok(tape.scalar(l))
    }

    pub fn generator_objective(&self, data: &ServiceData, sel: &Selection, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let init = self.init_for(sel, None);
        let (l, _, _) = self.build_gen_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 32))?;
        Ok(tape.scalar(l))
    }

    pub fn generator_objective_grad(&mut self, data: &ServiceData, sel: &Selection, seed: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let init = self.init_for(sel, None);
        let (l, _, _) = self.build_gen_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 32))?;
        nn::backprop(&tape, l, &mut self.store);
        Ok(tape.scalar(l))
    }

    /// Objective pieces on a selection: the Wasserstein estimate and L1 from
    /// the critic pass, L2 and L3 from the generator pass.
    pub fn objective_parts(&self, data: &ServiceData, sel: &Selection, seed: u64) -> Result<ObjectiveParts> {
        let init = self.init_for(sel, None);
        let mut tape = Tape::new();
        let (_, c) = self.build_critic_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 31))?;
        tape.clear();
        let (_, g, _) = self.build_gen_loss(&mut tape, data, sel, &init, &mut rng::stream(seed, 32))?;
        Ok(ObjectiveParts {
            wasserstein: c.wasserstein,
            lipschitz: c.lipschitz,
            censor: g.censor,
            matching: g.matching,
        })
    }

    /// One static sample for a normalized input `[h^a, x]`, original units.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        state: Option<&GenState>,
        r: &mut R,
    ) -> Result<(f64, Option<GenState>)> {
        let mut tape = Tape::new();
        let cond = tape.row_vector(input);
        if self.variant().is_recurrent() {
            let st = state.cloned().unwrap_or_else(|| self.zero_state(1));
            let d = self.gen.state_dim();
            let hs = (tape.constant(1, d, st.h), tape.constant(1, d, st.c));
            let (s, (h, c)) = self.gen.forward_step(&mut tape, &self.store, cond, hs, r)?;
            let next = GenState {
                h: tape.value(h).to_vec(),
                c: tape.value(c).to_vec(),
            };
            Ok((tape.scalar(s) * self.time_scale, Some(next)))
        } else {
            let s = self.gen.forward_static(&mut tape, &self.store, cond, r)?;
            Ok((tape.scalar(s) * self.time_scale, None))
        }
    }

    /// Monte Carlo predictions per event of `data`, original units. Recurrent
    /// variants run `n_samples` independent trajectories, first through
    /// `warmup` (outputs discarded) and then through `data`.
    pub fn predict(
        &self,
        data: &ServiceData,
        warmup: Option<&ServiceData>,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<ServicePrediction>> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        let mut r = rng::stream(seed, 33);
        let mut tape = Tape::new();
        let cd = self.gen.cond_dim();
        if !self.variant().is_recurrent() {
            return (0..data.len())
                .map(|i| {
                    tape.clear();
                    let row = tape.row_vector(&data.input(i));
                    let cond = tape.constant(n_samples, cd, row_repeat(tape.value(row), n_samples));
                    let s = self.gen.forward_static(&mut tape, &self.store, cond, &mut r)?;
                    let samples = tape.value(s).iter().map(|v| v * self.time_scale).collect();
                    Ok(ServicePrediction::from_samples(Vec::new(), samples))
                })
                .collect();
        }
        let mut st = self.zero_state(n_samples);
        let d = self.gen.state_dim();
        let mut out = Vec::with_capacity(data.len());
        for (set, keep) in [(warmup, false), (Some(data), true)] {
            let Some(set) = set else { continue };
            for i in 0..set.len() {
                tape.clear();
                let cond = tape.constant(n_samples, cd, row_repeat(&set.input(i), n_samples));
                let hs = (tape.constant(n_samples, d, st.h), tape.constant(n_samples, d, st.c));
                let (s, (h, c)) = self.gen.forward_step(&mut tape, &self.store, cond, hs, &mut r)?;
                st = GenState {
                    h: tape.value(h).to_vec(),
                    c: tape.value(c).to_vec(),
                };
                if keep {
                    let samples = tape.value(s).iter().map(|v| v * self.time_scale).collect();
                    out.push(ServicePrediction::from_samples(Vec::new(), samples));
                }
            }
        }
        Ok(out)
    }

    /// `h^Φ` trajectory over `data` with the given seed, one row per event.
    pub fn state_trajectory(&self, data: &ServiceData, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut r = rng::stream(seed, 34);
        let mut st = self.zero_state(1);
        let mut out = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let (_, next) = self.generate(&data.input(i), Some(&st), &mut r)?;
            st = next.ok_or_else(|| Error::Config("static generator has no state".into()))?;
            out.push(st.h.clone());
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        Checkpoint::new(self.store.clone())
            .with_meta("kind", "adv")
            .with_meta("variant", self.variant().name())
            .with_meta("hidden_dim", self.gen.hidden_dim)
            .with_meta("cov_dim", self.gen.cov_dim)
            .with_meta("time_scale", self.time_scale)
            .with_meta("noise_dim", c.noise_dim)
            .with_meta("noise_inject", c.noise_inject)
            .with_meta("gen_hidden", c.gen_hidden)
            .with_meta("critic_hidden", c.critic_hidden)
            .with_meta("n_layers", c.n_layers)
            .with_meta("state_dim", c.state_dim)
            .with_meta("bptt", c.bptt)
            .with_meta_list("lambda", &[c.lambda1, c.lambda2, c.lambda3])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("adv")?;
        let lambda = ck.meta_list("lambda")?;
        if lambda.len() != 3 {
            return Err(Error::Checkpoint("expected three lambda weights".into()));
        }
        let cfg = AdvConfig {
            noise_dim: ck.meta_parse("noise_dim")?,
            noise_inject: ck.meta_parse("noise_inject")?,
            gen_hidden: ck.meta_parse("gen_hidden")?,
            critic_hidden: ck.meta_parse("critic_hidden")?,
            n_layers: ck.meta_parse("n_layers")?,
            state_dim: ck.meta_parse("state_dim")?,
            bptt: ck.meta_parse("bptt")?,
            lambda1: lambda[0],
            lambda2: lambda[1],
            lambda3: lambda[2],
            ..AdvConfig::default()
        };
        let variant: Variant = ck.meta_str("variant")?.parse()?;
        let mut m = Self::new(
            variant,
            ck.meta_parse("hidden_dim")?,
            ck.meta_parse("cov_dim")?,
            ck.meta_parse("time_scale")?,
            &cfg,
        )?;
        m.store.load_values_from(&ck.store)?;
        Ok(m)
    }
}

fn row_repeat(row: &[f64], n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        v.extend_from_slice(row);
    }
    v
}

fn adam_group(store: &ParamStore, prefix: &str, cfg: &AdvConfig) -> AdamState {
    let mut a = AdamState::new(store, store.ids_with_prefix(prefix), cfg.lr);
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a
}

fn sample_indices(pool: &[usize], n: usize, r: &mut SimRng) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    if n >= pool.len() {
        return pool.to_vec();
    }
    index::sample(r, pool.len(), n).into_iter().map(|k| pool[k]).collect()
}

/// Alternating critic/generator training with the arrival model frozen.
pub fn train_adversarial(
    variant: Variant,
    rpp: &RppModel,
    train: &QueueTrace,
    cfg: &AdvConfig,
) -> Result<(AdvModel, TrainHistory)> {
    let (data, _) = ServiceData::from_trace(rpp, train, None)?;
    train_adversarial_data(variant, &data, cfg)
}

/// As [`train_adversarial`] on prepared conditioning data.
pub fn train_adversarial_data(variant: Variant, data: &ServiceData, cfg: &AdvConfig) -> Result<(AdvModel, TrainHistory)> {
    if data.uncensored().is_empty() {
        return Err(Error::Data("adversarial training needs observed service times".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.critic_steps == 0 || cfg.bptt == 0 || cfg.windows == 0 {
        return Err(Error::Config("epochs, batch sizes and step counts must be positive".into()));
    }
    let mut model = AdvModel::new(variant, data.hidden_dim(), data.cov_dim(), data.time_scale, cfg)?;
    let mut adam_c = adam_group(&model.store, "critic.", cfg);
    let mut adam_g = adam_group(&model.store, "gen.", cfg);
    let mut r = rng::stream(cfg.seed, 35);
    let mut history = TrainHistory::default();
    let observed = data.uncensored();
    let n_windows = data.len().div_ceil(cfg.bptt);
    let mut win_states = vec![model.zero_state(1); n_windows];
    let stage = format!("adv-{}", variant.name());
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        let snapshot = model.store.clone();
        let frac = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        let lr = cfg.lr * (1.0 + (cfg.lr_final - 1.0) * frac);
        adam_c.lr = lr;
        adam_g.lr = lr;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut r);
        let mut win_order: Vec<usize> = (0..n_windows).collect();
        win_order.shuffle(&mut r);
        let iterations = if variant.is_recurrent() {
            n_windows.div_ceil(cfg.windows)
        } else {
            data.len().div_ceil(cfg.batch_size)
        };
        let mut gen_total = 0.0;
        let mut max_pen: f64 = 0.0;
        for it in 0..iterations {
            // Generator batches cover the whole trace, so the hinge term sees
            // censored events at their share of the data.
            let pick_sel = |r: &mut SimRng, gen_batch: Option<usize>| -> Selection {
                if variant.is_recurrent() {
                    let wins: Vec<usize> = match gen_batch {
                        Some(it) => win_order.iter().skip(it * cfg.windows).take(cfg.windows).copied().collect(),
                        None => sample_indices(&(0..n_windows).collect::<Vec<_>>(), cfg.windows, r),
                    };
                    Selection::Windows(wins.into_iter().map(|w| w * cfg.bptt).collect())
                } else {
                    match gen_batch {
                        Some(it) => {
                            let (cen, obs): (Vec<usize>, Vec<usize>) = order
                                .iter()
                                .skip(it * cfg.batch_size)
                                .take(cfg.batch_size)
                                .partition(|&&i| data.censored[i]);
                            Selection::Static { observed: obs, censored: cen }
                        }
                        None => Selection::Static {
                            observed: sample_indices(&observed, cfg.batch_size, r),
                            censored: Vec::new(),
                        },
                    }
                }
            };
            for _ in 0..cfg.critic_steps {
                let sel = pick_sel(&mut r, None);
                let init = model.init_for(&sel, Some(&win_states));
                tape.clear();
                let attempt = model.build_critic_loss(&mut tape, data, &sel, &init, &mut r);
                let (loss, parts) = match attempt {
                    Ok(v) => v,
                    // A window set without observed events carries no critic signal.
                    Err(Error::Data(_)) => continue,
                    Err(e) => return Err(e),
                };
                if !tape.scalar(loss).is_finite() {
                    return Err(nn::diverged(&stage, epoch, &snapshot));
                }
                max_pen = max_pen.max(parts.lipschitz);
                nn::backprop(&tape, loss, &mut model.store);
                adam_c.update(&mut model.store).map_err(|_| nn::diverged(&stage, epoch, &snapshot))?;
            }
            let sel = pick_sel(&mut r, Some(it));
            let init = model.init_for(&sel, Some(&win_states));
            tape.clear();
            let (loss, _, finals) = model.build_gen_loss(&mut tape, data, &sel, &init, &mut r)?;
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(nn::diverged(&stage, epoch, &snapshot));
            }
            gen_total += lv;
            nn::backprop(&tape, loss, &mut model.store);
            adam_g.update(&mut model.store).map_err(|_| nn::diverged(&stage, epoch, &snapshot))?;
            if let Selection::Windows(starts) = &sel {
                for (s, st) in starts.iter().zip(finals) {
                    let next = s / cfg.bptt + 1;
                    if next < n_windows {
                        win_states[next] = st;
                    }
                }
            }
        }
        if max_pen > 1e3 {
            warn!("{stage} epoch {epoch}: critic gradient penalty {max_pen:.3e} suggests collapse");
        }
        let mean = gen_total / iterations.max(1) as f64;
        history.train_loss.push(mean);
        info!("{stage} epoch {epoch}: generator loss {mean:.6}");
    }
    Ok((model, history))
}

/// Monte Carlo prediction for every event of `data`.
pub fn predict_adv(
    model: &AdvModel,
    data: &ServiceData,
    warmup: Option<&ServiceData>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ServicePrediction>> {
    model.predict(data, warmup, n_samples, seed)
}

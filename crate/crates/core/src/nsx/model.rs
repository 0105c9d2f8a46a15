use log::info;
use rand::seq::SliceRandom;

use super::family::Family;
use crate::error::{Error, Result};
use crate::eventlog::QueueTrace;
use crate::nn::{self, AdamState, Checkpoint, LayerSpec, Mlp, ParamStore, Tape, TrainHistory, Var};
use crate::rng;
use crate::rpp::RppModel;
use crate::service::{ServiceData, ServicePrediction};

#[derive(Clone, Debug, PartialEq)]
pub struct NsConfig {
    pub hidden: usize,
    /// Affine maps in the head; 4 gives three hidden layers.
    pub n_layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            n_layers: 4,
            epochs: 20,
            lr: 1e-4,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// MLP from `[h^a, x]` to the parameters of a service-time family.
#[derive(Clone, Debug)]
pub struct NsxModel {
    pub family: Family,
    pub store: ParamStore,
    pub mlp: Mlp,
    /// Upper bound for the Pareto scale, normalized units.
    pub pareto_cap: f64,
    pub time_scale: f64,
}

/// A minibatch of normalized inputs and targets.
pub struct Batch<'a> {
    pub data: &'a ServiceData,
    pub idx: &'a [usize],
}

impl NsxModel {
    pub fn new(
        family: Family,
        input_dim: usize,
        hidden: usize,
        n_layers: usize,
        time_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let spec = LayerSpec::mlp(input_dim, hidden, family.n_params(), n_layers);
        let mlp = Mlp::new(&mut store, "ns.head", spec, &mut rng::stream(seed, 20))?;
        Ok(Self {
            family,
            store,
            mlp,
            pareto_cap: 1.0,
            time_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim
    }

    /// Raw head outputs for one input row.
    fn raw(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.row_vector(input);
        let out = self.mlp.forward(&mut tape, &self.store, x, None)?;
        Ok(tape.value(out).to_vec())
    }

    /// Distribution parameters (normalized time units) for `[h^a, x]`.
    pub fn params(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.family.link(&self.raw(input)?, self.pareto_cap))
    }

    fn build_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let (obs, cen): (Vec<usize>, Vec<usize>) =
            batch.idx.iter().partition(|&&i| !batch.data.censored[i]);
        let mut parts = Vec::new();
        for (rows, censored) in [(obs, false), (cen, true)] {
            if rows.is_empty() {
                continue;
            }
            let x = tape.constant(rows.len(), self.input_dim(), batch.data.input_rows(&rows));
            let raw = self.mlp.forward(tape, &self.store, x, None)?;
            let p = self.family.link_tape(tape, raw, self.pareto_cap);
            let y: Vec<f64> = rows.iter().map(|&i| batch.data.targets[i]).collect();
            let yv = tape.column(&y);
            let ll = if censored {
                self.family.log_survival_tape(tape, &p, yv)
            } else {
                self.family.log_pdf_tape(tape, &p, yv)
            };
            parts.push(tape.sum(ll));
        }
        let total = match parts.as_slice() {
            [] => return Err(Error::Data("empty service batch".into())),
            [a] => *a,
            [a, b] => tape.add(*a, *b),
            _ => unreachable!(),
        };
        Ok(tape.neg(total))
    }

    /// `-(Σ_D ln Φ(s_i) + Σ_C ln Φ̄(T_i))` over the batch, normalized units.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.build_loss(&mut tape, batch)?;
        Ok(tape.scalar(l))
    }

    /// As [`Self::loss`], also writing gradients into the store.
    pub fn loss_grad(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.build_loss(&mut tape, batch)?;
        nn::backprop(&tape, l, &mut self.store);
        Ok(tape.scalar(l))
    }

    /// Monte Carlo prediction for a normalized input, original units.
    pub fn predict(&self, input: &[f64], n_samples: usize, seed: u64) -> Result<ServicePrediction> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        let p = self.params(input)?;
        let mut r = rng::stream(seed, 21);
        let samples = (0..n_samples)
            .map(|_| Ok(self.family.sample(&p, &mut r)? * self.time_scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(ServicePrediction::from_samples(p, samples))
    }

    /// Predictions for every event of `data`, seeds derived per event.
    pub fn predict_all(&self, data: &ServiceData, n_samples: usize, seed: u64) -> Result<Vec<ServicePrediction>> {
        (0..data.len())
            .map(|i| self.predict(&data.input(i), n_samples, seed.wrapping_add(i as u64)))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.store.clone())
            .with_meta("kind", "ns")
            .with_meta("family", self.family.name())
            .with_meta("input_dim", self.input_dim())
            .with_meta("hidden", self.mlp.spec.hidden_dim)
            .with_meta("n_layers", self.mlp.spec.n_layers)
            .with_meta("pareto_cap", self.pareto_cap)
            .with_meta("time_scale", self.time_scale)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("ns")?;
        let family: Family = ck.meta_str("family")?.parse()?;
        let mut m = Self::new(
            family,
            ck.meta_parse("input_dim")?,
            ck.meta_parse("hidden")?,
            ck.meta_parse("n_layers")?,
            ck.meta_parse("time_scale")?,
            0,
        )?;
        m.pareto_cap = ck.meta_parse("pareto_cap")?;
        m.store.load_values_from(&ck.store)?;
        Ok(m)
    }
}

/// One evaluation of `loss_ns` on a batch.
pub fn loss_ns(model: &NsxModel, data: &ServiceData, idx: &[usize]) -> Result<f64> {
    model.loss(&Batch { data, idx })
}

/// Censored maximum likelihood with the arrival model frozen.
pub fn train_ns(
    rpp: &RppModel,
    train: &QueueTrace,
    val: Option<&QueueTrace>,
    family: Family,
    cfg: &NsConfig,
) -> Result<(NsxModel, TrainHistory)> {
    let (data, last) = ServiceData::from_trace(rpp, train, None)?;
    let val_data = match val {
        Some(v) => Some(ServiceData::from_trace(rpp, v, last.as_ref())?.0),
        None => None,
    };
    train_ns_data(&data, val_data.as_ref(), family, cfg)
}

/// As [`train_ns`] on prepared conditioning data.
pub fn train_ns_data(
    data: &ServiceData,
    val: Option<&ServiceData>,
    family: Family,
    cfg: &NsConfig,
) -> Result<(NsxModel, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::Data("no service events to train on".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    let input_dim = data.hidden_dim() + data.cov_dim();
    let mut model = NsxModel::new(family, input_dim, cfg.hidden, cfg.n_layers, data.time_scale, cfg.seed)?;
    if family == Family::Pareto {
        model.pareto_cap = match data.min_observed() {
            Some(m) if m > 0.0 => 0.9 * m,
            _ => 1.0,
        };
    }
    let mut adam = AdamState::for_all(&model.store, cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, 22);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let snapshot = model.store.clone();
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let l = model.build_loss(&mut tape, &Batch { data, idx })?;
            let lv = tape.scalar(l);
            if !lv.is_finite() {
                return Err(nn::diverged("ns", epoch, &snapshot));
            }
            total += lv;
            let mean = tape.scale(l, 1.0 / idx.len() as f64);
            nn::backprop(&tape, mean, &mut model.store);
            adam.update(&mut model.store)
                .map_err(|_| nn::diverged("ns", epoch, &snapshot))?;
        }
        let train_loss = total / data.len() as f64;
        history.train_loss.push(train_loss);
        match val {
            Some(v) if !v.is_empty() => {
                let all: Vec<usize> = (0..v.len()).collect();
                let vl = model.loss(&Batch { data: v, idx: &all })? / v.len() as f64;
                history.val_loss.push(vl);
                info!("ns-{} epoch {epoch}: train {train_loss:.6}, held-out {vl:.6}", family.name());
            }
            _ => info!("ns-{} epoch {epoch}: train {train_loss:.6}", family.name()),
        }
    }
    Ok((model, history))
}

/// Monte Carlo prediction for one event.
pub fn predict_ns(model: &NsxModel, input: &[f64], n_samples: usize, seed: u64) -> Result<ServicePrediction> {
    model.predict(input, n_samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_exponential(input_dim: usize) -> NsxModel {
        let mut m = NsxModel::new(Family::Exponential, input_dim, 4, 2, 1.0, 0).unwrap();
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.tensor_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        // Output bias b with softplus(b) + floor = 1.
        let last = m.mlp.layers.last().unwrap().bias;
        m.store.tensor_mut(last).values[0] = (1.0f64 - 1e-6).exp_m1().ln();
        m
    }

    fn data(targets: &[f64], censored: &[bool]) -> ServiceData {
        ServiceData {
            hidden: vec![vec![0.3]; targets.len()],
            covariates: vec![vec![]; targets.len()],
            targets: targets.to_vec(),
            censored: censored.to_vec(),
            time_scale: 1.0,
        }
    }

    #[test]
    fn loss_examples() {
        let m = zero_exponential(1);
        let d = data(&[1.0, 2.0], &[false, true]);
        assert!((loss_ns(&m, &d, &[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((loss_ns(&m, &d, &[1]).unwrap() - 2.0).abs() < 1e-12);
        assert!((loss_ns(&m, &d, &[0, 1]).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_seeded() {
        let m = zero_exponential(1);
        let a = m.predict(&[0.3], 50, 4).unwrap();
        assert_eq!(a, m.predict(&[0.3], 50, 4).unwrap());
        assert!(a.samples.iter().all(|&s| s > 0.0));
        assert!((a.mean - a.samples.iter().sum::<f64>() / 50.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = NsxModel::new(Family::Pareto, 3, 5, 3, 2.5, 7).unwrap();
        m.pareto_cap = 0.123;
        let back = NsxModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.params(&[0.1, 0.2, 0.3]).unwrap(), m.params(&[0.1, 0.2, 0.3]).unwrap());
        assert_eq!(back.time_scale, 2.5);
    }
}

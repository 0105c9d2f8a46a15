//! Dense, GRU and LSTM layers whose parameters live in a [`ParamStore`].

use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Mlp,
    Gru,
    Lstm,
}

/// Shape description of a layer stack.
///
/// For [`LayerKind::Mlp`], `n_layers` counts affine maps: every map but the
/// last is followed by `tanh`, the last is linear. Recurrent kinds use a
/// single cell and ignore `output_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub n_layers: usize,
    pub noise_inject: bool,
}

impl LayerSpec {
    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize, n_layers: usize) -> Self {
        Self {
            kind: LayerKind::Mlp,
            input_dim,
            hidden_dim,
            output_dim,
            n_layers,
            noise_inject: false,
        }
    }

    pub fn with_noise(mut self) -> Self {
        self.noise_inject = true;
        self
    }

    pub fn gru(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            kind: LayerKind::Gru,
            input_dim,
            hidden_dim,
            output_dim: hidden_dim,
            n_layers: 1,
            noise_inject: false,
        }
    }

    pub fn lstm(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            kind: LayerKind::Lstm,
            ..Self::gru(input_dim, hidden_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero-width input is legal for recurrent cells driven only by
        // their own state, never for the hidden or output widths.
        if self.hidden_dim == 0 || self.output_dim == 0 || self.n_layers == 0 {
            return Err(Error::Config(format!("layer dims must be positive: {self:?}")));
        }
        if self.kind != LayerKind::Mlp && self.n_layers != 1 {
            return Err(Error::Config("recurrent layers support n_layers = 1".into()));
        }
        if self.noise_inject && self.kind != LayerKind::Mlp {
            return Err(Error::Config("noise injection is only valid for mlp layers".into()));
        }
        if self.kind == LayerKind::Mlp && self.input_dim == 0 {
            return Err(Error::Config("mlp input_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add_glorot(&format!("{name}.weight"), output, input, rng)?,
            bias: store.add_zeros(&format!("{name}.bias"), vec![output])?,
        })
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

/// Multilayer perceptron with tanh hidden activations and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: LayerSpec,
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::Mlp {
            return Err(Error::Config(format!("expected an mlp spec, got {:?}", spec.kind)));
        }
        let mut layers = Vec::with_capacity(spec.n_layers);
        for l in 0..spec.n_layers {
            let input = if l == 0 { spec.input_dim } else { spec.hidden_dim };
            let output = if l + 1 == spec.n_layers {
                spec.output_dim
            } else {
                spec.hidden_dim
            };
            layers.push(Dense::new(store, &format!("{name}.{l}"), input, output, rng)?);
        }
        Ok(Self { spec, layers })
    }

    pub fn n_hidden(&self) -> usize {
        self.spec.n_layers - 1
    }

    /// Fresh standard-normal noise, one `rows x hidden_dim` block per hidden layer.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.n_hidden())
            .map(|_| {
                (0..rows * self.spec.hidden_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Draws noise when the layer spec enables it and binds it on the tape.
    pub fn noise_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        rows: usize,
        rng: &mut R,
    ) -> Option<Vec<Var>> {
        if !self.spec.noise_inject {
            return None;
        }
        let h = self.spec.hidden_dim;
        Some(
            self.sample_noise(rows, rng)
                .into_iter()
                .map(|n| tape.constant(rows, h, n))
                .collect(),
        )
    }

    fn check_input(&self, tape: &Tape, x: Var, noise: Option<&[Var]>) -> Result<()> {
        let (rows, cols) = tape.shape(x);
        if cols != self.spec.input_dim {
            return Err(Error::dim("mlp input", self.spec.input_dim, cols));
        }
        if let Some(noise) = noise {
            if noise.len() != self.n_hidden() {
                return Err(Error::dim("mlp noise layers", self.n_hidden(), noise.len()));
            }
            for &n in noise {
                let (nr, nc) = tape.shape(n);
                if nc != self.spec.hidden_dim {
                    return Err(Error::dim("mlp noise width", self.spec.hidden_dim, nc));
                }
                if nr != rows && nr != 1 {
                    return Err(Error::dim("mlp noise rows", rows, nr));
                }
            }
        }
        Ok(())
    }

    /// Forward pass; `noise[l]` is added to the pre-activation of hidden layer `l`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        noise: Option<&[Var]>,
    ) -> Result<Var> {
        self.check_input(tape, x, noise)?;
        let mut a = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(tape, store, a);
            if l == last {
                return Ok(z);
            }
            if let Some(noise) = noise {
                z = tape.add(z, noise[l]);
            }
            a = tape.tanh(z);
        }
        unreachable!()
    }

    /// Forward pass that also returns `d out / d x[:, col]` for each row,
    /// built from differentiable tape ops so it can itself be penalized.
    pub fn forward_with_input_grad(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        col: usize,
        noise: Option<&[Var]>,
    ) -> Result<(Var, Var)> {
        self.check_input(tape, x, noise)?;
        if col >= self.spec.input_dim {
            return Err(Error::dim("mlp gradient column", self.spec.input_dim, col));
        }
        let mut onehot = vec![0.0; self.spec.input_dim];
        onehot[col] = 1.0;
        let e = tape.row_vector(&onehot);
        let mut a = x;
        let mut da = e;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let mut z = tape.linear(a, w, b);
            let dz = tape.matmul_t(da, w);
            if l == last {
                return Ok((z, dz));
            }
            if let Some(noise) = noise {
                z = tape.add(z, noise[l]);
            }
            a = tape.tanh(z);
            let a2 = tape.square(a);
            let one_minus = tape.neg(a2);
            let slope = tape.add_scalar(one_minus, 1.0);
            da = tape.mul(slope, dz);
        }
        unreachable!()
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r  = sigmoid(W_ir x + W_hr h + b_r)
/// z  = sigmoid(W_iz x + W_hz h + b_z)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub spec: LayerSpec,
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_in: ParamId,
    pub b_hn: ParamId,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::Gru {
            return Err(Error::Config(format!("expected a gru spec, got {:?}", spec.kind)));
        }
        let (i, h) = (spec.input_dim, spec.hidden_dim);
        let wi = |s: &mut ParamStore, n: &str, r: &mut R| {
            if i == 0 {
                s.add_zeros(&format!("{name}.{n}"), vec![h, 1])
            } else {
                s.add_glorot(&format!("{name}.{n}"), h, i, r)
            }
        };
        let w_ir = wi(store, "w_ir", rng)?;
        let w_iz = wi(store, "w_iz", rng)?;
        let w_in = wi(store, "w_in", rng)?;
        Ok(Self {
            spec,
            w_ir,
            w_iz,
            w_in,
            w_hr: store.add_glorot(&format!("{name}.w_hr"), h, h, rng)?,
            w_hz: store.add_glorot(&format!("{name}.w_hz"), h, h, rng)?,
            w_hn: store.add_glorot(&format!("{name}.w_hn"), h, h, rng)?,
            b_r: store.add_zeros(&format!("{name}.b_r"), vec![h])?,
            b_z: store.add_zeros(&format!("{name}.b_z"), vec![h])?,
            b_in: store.add_zeros(&format!("{name}.b_in"), vec![h])?,
            b_hn: store.add_zeros(&format!("{name}.b_hn"), vec![h])?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        check_recurrent_input(tape, &self.spec, x, h)?;
        let x = pad_empty_input(tape, &self.spec, x);
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (w_ir, w_iz, w_in) = (p(tape, self.w_ir), p(tape, self.w_iz), p(tape, self.w_in));
        let (w_hr, w_hz, w_hn) = (p(tape, self.w_hr), p(tape, self.w_hz), p(tape, self.w_hn));
        let (b_r, b_z, b_in, b_hn) = (
            p(tape, self.b_r),
            p(tape, self.b_z),
            p(tape, self.b_in),
            p(tape, self.b_hn),
        );

        let xr = tape.linear(x, w_ir, b_r);
        let hr = tape.matmul_t(h, w_hr);
        let r_pre = tape.add(xr, hr);
        let r = tape.sigmoid(r_pre);

        let xz = tape.linear(x, w_iz, b_z);
        let hz = tape.matmul_t(h, w_hz);
        let z_pre = tape.add(xz, hz);
        let z = tape.sigmoid(z_pre);

        let xn = tape.linear(x, w_in, b_in);
        let hn = tape.linear(h, w_hn, b_hn);
        let rhn = tape.mul(r, hn);
        let n_pre = tape.add(xn, rhn);
        let n = tape.tanh(n_pre);

        // h' = n + z * (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        Ok(tape.add(n, zd))
    }
}

/// Long short-term memory cell:
///
/// ```text
/// i = sigmoid(W_ii x + W_hi h + b_i)     f = sigmoid(W_if x + W_hf h + b_f)
/// g = tanh(W_ig x + W_hg h + b_g)        o = sigmoid(W_io x + W_ho h + b_o)
/// c' = f * c + i * g                     h' = o * tanh(c')
/// ```
#[derive(Clone, Debug)]
pub struct Lstm {
    pub spec: LayerSpec,
    pub w_ii: ParamId,
    pub w_if: ParamId,
    pub w_ig: ParamId,
    pub w_io: ParamId,
    pub w_hi: ParamId,
    pub w_hf: ParamId,
    pub w_hg: ParamId,
    pub w_ho: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_g: ParamId,
    pub b_o: ParamId,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::Lstm {
            return Err(Error::Config(format!("expected an lstm spec, got {:?}", spec.kind)));
        }
        let (i, h) = (spec.input_dim, spec.hidden_dim);
        let wi = |s: &mut ParamStore, n: &str, r: &mut R| {
            if i == 0 {
                s.add_zeros(&format!("{name}.{n}"), vec![h, 1])
            } else {
                s.add_glorot(&format!("{name}.{n}"), h, i, r)
            }
        };
        let w_ii = wi(store, "w_ii", rng)?;
        let w_if = wi(store, "w_if", rng)?;
        let w_ig = wi(store, "w_ig", rng)?;
        let w_io = wi(store, "w_io", rng)?;
        Ok(Self {
            spec,
            w_ii,
            w_if,
            w_ig,
            w_io,
            w_hi: store.add_glorot(&format!("{name}.w_hi"), h, h, rng)?,
            w_hf: store.add_glorot(&format!("{name}.w_hf"), h, h, rng)?,
            w_hg: store.add_glorot(&format!("{name}.w_hg"), h, h, rng)?,
            w_ho: store.add_glorot(&format!("{name}.w_ho"), h, h, rng)?,
            b_i: store.add_zeros(&format!("{name}.b_i"), vec![h])?,
            b_f: store.add_zeros(&format!("{name}.b_f"), vec![h])?,
            b_g: store.add_zeros(&format!("{name}.b_g"), vec![h])?,
            b_o: store.add_zeros(&format!("{name}.b_o"), vec![h])?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        (h, c): (Var, Var),
    ) -> Result<(Var, Var)> {
        check_recurrent_input(tape, &self.spec, x, h)?;
        if tape.shape(c) != tape.shape(h) {
            return Err(Error::dim("lstm cell state", tape.shape(h).1, tape.shape(c).1));
        }
        let x = pad_empty_input(tape, &self.spec, x);
        let gate = |tape: &mut Tape, wi: ParamId, wh: ParamId, b: ParamId| {
            let wi = tape.param(store, wi);
            let wh = tape.param(store, wh);
            let b = tape.param(store, b);
            let xi = tape.linear(x, wi, b);
            let hh = tape.matmul_t(h, wh);
            tape.add(xi, hh)
        };
        let i_pre = gate(tape, self.w_ii, self.w_hi, self.b_i);
        let f_pre = gate(tape, self.w_if, self.w_hf, self.b_f);
        let g_pre = gate(tape, self.w_ig, self.w_hg, self.b_g);
        let o_pre = gate(tape, self.w_io, self.w_ho, self.b_o);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc);
        Ok((h_next, c_next))
    }
}

fn check_recurrent_input(tape: &Tape, spec: &LayerSpec, x: Var, h: Var) -> Result<()> {
    let (xr, xc) = tape.shape(x);
    let (hr, hc) = tape.shape(h);
    if xc != spec.input_dim && !(spec.input_dim == 0 && xc == 1) {
        return Err(Error::dim("recurrent input", spec.input_dim, xc));
    }
    if hc != spec.hidden_dim {
        return Err(Error::dim("recurrent state", spec.hidden_dim, hc));
    }
    if xr != hr && xr != 1 {
        return Err(Error::dim("recurrent batch rows", hr, xr));
    }
    Ok(())
}

/// Cells built with `input_dim = 0` carry a single zero-weight input column.
fn pad_empty_input(tape: &mut Tape, spec: &LayerSpec, x: Var) -> Var {
    if spec.input_dim == 0 && tape.shape(x).1 == 0 {
        let rows = tape.shape(x).0;
        tape.zeros(rows, 1)
    } else {
        x
    }
}

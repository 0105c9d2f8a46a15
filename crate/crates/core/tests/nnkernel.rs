//! Layers against hand-written forward passes, autodiff against finite
//! differences, Adam arithmetic and checkpoint round trips.

use proptest::prelude::*;
use rand::Rng;
use servtime::nn::{self, AdamState, Checkpoint, Gru, LayerSpec, Lstm, Mlp, ParamId, ParamStore, Tape};
use servtime::rng;
use servtime_oracles::fd::{central_grad, rel_err};
use servtime_oracles::nets::{self, GruParams, LstmParams, Matrix};

fn matrix(store: &ParamStore, id: ParamId) -> Matrix {
    let t = store.tensor(id);
    let cols = t.values.len() / t.shape[0];
    t.values.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn vector(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.tensor(id).values.clone()
}

/// Replaces every parameter with a uniform draw from (-1, 1).
fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng::seeded(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in &mut store.tensor_mut(id).values {
            *v = r.random::<f64>() * 2.0 - 1.0;
        }
    }
}

fn random_vec(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn mlp_matches_hand_forward() {
    for (seed, noisy) in [(1, false), (2, true), (3, true)] {
        let mut store = ParamStore::new();
        let mut spec = LayerSpec::mlp(2, 4, 3, 3);
        if noisy {
            spec = spec.with_noise();
        }
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng::seeded(seed)).unwrap();
        randomize(&mut store, seed + 10);
        let layers: Vec<_> = mlp
            .layers
            .iter()
            .map(|d| (matrix(&store, d.weight), vector(&store, d.bias)))
            .collect();
        let x = [0.5, -0.3];
        let mut r = rng::seeded(seed + 20);
        let noise: Vec<Vec<f64>> = (0..2).map(|_| random_vec(4, &mut r)).collect();
        let mut tape = Tape::new();
        let xv = tape.row_vector(&x);
        let nv: Vec<_> = noise.iter().map(|n| tape.row_vector(n)).collect();
        let out = mlp.forward(&mut tape, &store, xv, noisy.then_some(&nv[..])).unwrap();
        let want = nets::mlp(&layers, &x, noisy.then_some(&noise[..]));
        for (a, b) in tape.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gru_matches_hand_step() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let g = Gru::new(&mut store, "g", LayerSpec::gru(3, 4), &mut rng::seeded(seed)).unwrap();
        randomize(&mut store, seed + 100);
        let p = GruParams {
            w_ir: matrix(&store, g.w_ir),
            w_iz: matrix(&store, g.w_iz),
            w_in: matrix(&store, g.w_in),
            w_hr: matrix(&store, g.w_hr),
            w_hz: matrix(&store, g.w_hz),
            w_hn: matrix(&store, g.w_hn),
            b_r: vector(&store, g.b_r),
            b_z: vector(&store, g.b_z),
            b_in: vector(&store, g.b_in),
            b_hn: vector(&store, g.b_hn),
        };
        let mut r = rng::seeded(seed + 200);
        let (x, h) = (random_vec(3, &mut r), random_vec(4, &mut r));
        let mut tape = Tape::new();
        let (xv, hv) = (tape.row_vector(&x), tape.row_vector(&h));
        let out = g.step(&mut tape, &store, xv, hv).unwrap();
        let want = nets::gru(&p, &x, &h);
        for (a, b) in tape.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
            assert!(a.abs() < 1.0);
        }
    }
}

#[test]
fn lstm_matches_hand_step() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let l = Lstm::new(&mut store, "l", LayerSpec::lstm(2, 3), &mut rng::seeded(seed)).unwrap();
        randomize(&mut store, seed + 300);
        let p = LstmParams {
            wx: [l.w_ii, l.w_if, l.w_ig, l.w_io].map(|id| matrix(&store, id)),
            wh: [l.w_hi, l.w_hf, l.w_hg, l.w_ho].map(|id| matrix(&store, id)),
            b: [l.b_i, l.b_f, l.b_g, l.b_o].map(|id| vector(&store, id)),
        };
        let mut r = rng::seeded(seed + 400);
        let (x, h, c) = (random_vec(2, &mut r), random_vec(3, &mut r), random_vec(3, &mut r));
        let mut tape = Tape::new();
        let (xv, hv, cv) = (tape.row_vector(&x), tape.row_vector(&h), tape.row_vector(&c));
        let (hn, cn) = l.step(&mut tape, &store, xv, (hv, cv)).unwrap();
        let (wh, wc) = nets::lstm(&p, &x, &h, &c);
        for (a, b) in tape.value(hn).iter().zip(&wh).chain(tape.value(cn).iter().zip(&wc)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Two recurrent steps feeding an MLP, squared and summed.
struct Composite {
    store: ParamStore,
    gru: Gru,
    lstm: Lstm,
    mlp: Mlp,
    xs: Vec<Vec<f64>>,
}

impl Composite {
    fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", LayerSpec::gru(2, 3), &mut r).unwrap();
        let lstm = Lstm::new(&mut store, "l", LayerSpec::lstm(3, 3), &mut r).unwrap();
        let mlp = Mlp::new(&mut store, "m", LayerSpec::mlp(3, 4, 2, 3), &mut r).unwrap();
        randomize(&mut store, seed + 1);
        let xs = (0..2).map(|_| random_vec(2, &mut r)).collect();
        Self { store, gru, lstm, mlp, xs }
    }

    fn build(&self, tape: &mut Tape) -> servtime::nn::Var {
        let mut h = tape.row_vector(&[0.0; 3]);
        let mut s = (tape.row_vector(&[0.1; 3]), tape.row_vector(&[-0.2; 3]));
        for x in &self.xs {
            let xv = tape.row_vector(x);
            h = self.gru.step(tape, &self.store, xv, h).unwrap();
            s = self.lstm.step(tape, &self.store, h, s).unwrap();
        }
        let out = self.mlp.forward(tape, &self.store, s.0, None).unwrap();
        let sq = tape.mul(out, out);
        let sum = tape.sum(sq);
        let e = tape.exp(s.1);
        let ec = tape.mean(e);
        tape.add(sum, ec)
    }

    fn loss(&self) -> f64 {
        let mut tape = Tape::new();
        let l = self.build(&mut tape);
        tape.scalar(l)
    }
}

#[test]
fn composite_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut m = Composite::new(seed);
        let ids: Vec<_> = m.store.ids().collect();
        let mut tape = Tape::new();
        let l = m.build(&mut tape);
        nn::backprop(&tape, l, &mut m.store);
        let analytic = m.store.flat_grads(&ids);
        let x0 = m.store.flat_values(&ids);
        let numeric = central_grad(
            |x| {
                m.store.set_flat_values(&ids, x);
                m.loss()
            },
            &x0,
            1e-5,
        );
        let e = rel_err(&analytic, &numeric, 1e-8);
        assert!(e < 1e-4, "seed {seed}: rel err {e}");
    }
}

#[test]
fn sum_and_constant_losses() {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", LayerSpec::mlp(2, 3, 1, 2), &mut rng::seeded(4)).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(&store, mlp.layers[0].weight);
    let l = tape.sum(w);
    nn::backprop(&tape, l, &mut store);
    assert!(store.tensor(mlp.layers[0].weight).grad.iter().all(|&g| g == 1.0));
    assert!(store.tensor(mlp.layers[1].weight).grad.iter().all(|&g| g == 0.0));

    let mut tape = Tape::new();
    let c = tape.scalar_const(3.0);
    nn::backprop(&tape, c, &mut store);
    let ids: Vec<_> = store.ids().collect();
    assert!(store.flat_grads(&ids).iter().all(|&g| g == 0.0));
}

#[test]
fn adam_first_step() {
    let mut store = ParamStore::new();
    let id = store.add_zeros("p", vec![1]).unwrap();
    let mut adam = AdamState::new(&store, vec![id], 0.001);
    store.tensor_mut(id).grad[0] = 1.0;
    adam.update(&mut store).unwrap();
    let delta = store.tensor(id).values[0];
    // m̂ = 1, v̂ = 1, so the step is -lr / (1 + eps).
    assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    adam.update(&mut store).unwrap();
    assert!(store.tensor(id).values[0] < delta);

    store.tensor_mut(id).grad[0] = f64::NAN;
    let err = adam.update(&mut store).unwrap_err().to_string();
    assert!(err.contains('p'), "{err}");
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", LayerSpec::mlp(2, 3, 1, 2), &mut rng::seeded(5)).unwrap();
    let before = store.clone();
    let mut adam = AdamState::for_all(&store, 0.01);
    adam.update(&mut store).unwrap();
    let w = mlp.layers[0].weight;
    assert_eq!(store.tensor(w).values, before.tensor(w).values);
}

#[test]
fn softplus_asymptotes() {
    assert!((nn::softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    assert!(((nn::softplus(50.0) - 50.0) / 50.0).abs() < 1e-9);
    let tiny = nn::softplus(-50.0);
    assert!(tiny > 0.0 && ((tiny - (-50f64).exp()) / tiny).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in 0u64..1000, hidden in 1usize..6) {
        let mut store = ParamStore::new();
        Gru::new(&mut store, "g", LayerSpec::gru(2, hidden), &mut rng::seeded(seed)).unwrap();
        randomize(&mut store, seed);
        let ck = Checkpoint::new(store.clone()).with_meta("kind", "test");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let ids: Vec<_> = store.ids().collect();
        let a: Vec<u64> = store.flat_values(&ids).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.store.flat_values(&ids).iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn softplus_is_positive_and_monotone(a in -700.0f64..700.0, d in 1e-3f64..10.0) {
        prop_assert!(nn::softplus(a) > 0.0);
        prop_assert!(nn::softplus(a + d) > nn::softplus(a));
    }
}

//! Wasserstein objective and its three regularizers.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, ParamStore, Tape, Var};

/// `mean f(real) - mean f(fake)`; rows are critic inputs `[s, x]`.
pub fn wasserstein_loss(tape: &mut Tape, critic: &Mlp, store: &ParamStore, real: Var, fake: Var) -> Result<Var> {
    let fr = critic.forward(tape, store, real, None)?;
    let ff = critic.forward(tape, store, fake, None)?;
    let mr = tape.mean(fr);
    let mf = tape.mean(ff);
    Ok(tape.sub(mr, mf))
}

/// One-sided gradient penalty `E[(max(0, |∂f/∂s| - 1))²]` at interpolates
/// `u s_real + (1 - u) s_fake`, fakes paired to reals by a random
/// permutation. Covariates at an interpolate come from its real member.
pub fn lipschitz_penalty<R: Rng + ?Sized>(
    tape: &mut Tape,
    critic: &Mlp,
    store: &ParamStore,
    real_s: &[f64],
    fake_s: &[f64],
    real_cov: &[Vec<f64>],
    rng: &mut R,
) -> Result<Var> {
    if real_s.is_empty() || fake_s.is_empty() {
        return Err(Error::InvalidArgument("lipschitz penalty needs nonempty batches".into()));
    }
    if real_cov.len() != real_s.len() {
        return Err(Error::dim("penalty covariates", real_s.len(), real_cov.len()));
    }
    let n = real_s.len();
    let mut perm: Vec<usize> = (0..fake_s.len()).collect();
    perm.shuffle(rng);
    let width = critic.spec.input_dim;
    let mut rows = Vec::with_capacity(n * width);
    for i in 0..n {
        let u: f64 = rng.random();
        let f = fake_s[perm[i % perm.len()]];
        rows.push(u * real_s[i] + (1.0 - u) * f);
        rows.extend_from_slice(&real_cov[i]);
    }
    let x = tape.constant(n, width, rows);
    let (_, grad) = critic.forward_with_input_grad(tape, store, x, 0, None)?;
    let norm = tape.abs(grad);
    let excess = tape.add_scalar(norm, -1.0);
    let hinge = tape.relu(excess);
    let sq = tape.square(hinge);
    Ok(tape.mean(sq))
}

/// `E[max(0, T - s)]` over censored events; zero for an empty batch.
pub fn censor_penalty(tape: &mut Tape, generated: Option<Var>, windows: &[f64]) -> Result<Var> {
    let Some(s) = generated else {
        return Ok(tape.scalar_const(0.0));
    };
    if tape.shape(s) != (windows.len(), 1) {
        return Err(Error::dim("censor penalty rows", windows.len(), tape.shape(s).0));
    }
    let t = tape.column(windows);
    let gap = tape.sub(t, s);
    let hinge = tape.relu(gap);
    Ok(tape.mean(hinge))
}

/// `E|s̃ - s|` over observed events; zero for an empty batch.
pub fn match_penalty(tape: &mut Tape, generated: Option<Var>, observed: &[f64]) -> Result<Var> {
    let Some(s) = generated else {
        return Ok(tape.scalar_const(0.0));
    };
    if tape.shape(s) != (observed.len(), 1) {
        return Err(Error::dim("match penalty rows", observed.len(), tape.shape(s).0));
    }
    let o = tape.column(observed);
    let d = tape.sub(o, s);
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Values of the objective pieces on one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveParts {
    /// Wasserstein estimate `E_real f - E_fake f`.
    pub wasserstein: f64,
    pub lipschitz: f64,
    pub censor: f64,
    pub matching: f64,
}

impl ObjectiveParts {
    /// `L + λ1 L1 + λ2 L2 + λ3 L3`.
    pub fn combine(&self, lambda: [f64; 3]) -> f64 {
        self.wasserstein + lambda[0] * self.lipschitz + lambda[1] * self.censor + lambda[2] * self.matching
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn linear_critic(slope: f64) -> (Mlp, ParamStore) {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "c", LayerSpec::mlp(1, 1, 1, 1), &mut crate::rng::seeded(0)).unwrap();
        store.tensor_mut(mlp.layers[0].weight).values[0] = slope;
        store.tensor_mut(mlp.layers[0].bias).values[0] = 0.0;
        (mlp, store)
    }

    #[test]
    fn wasserstein_examples() {
        let (c, s) = linear_critic(1.0);
        let mut t = Tape::new();
        let real = t.column(&[1.0, 1.0, 1.0]);
        let fake = t.column(&[0.0, 0.0]);
        let w = wasserstein_loss(&mut t, &c, &s, real, fake).unwrap();
        assert_eq!(t.scalar(w), 1.0);
        let back = wasserstein_loss(&mut t, &c, &s, fake, real).unwrap();
        assert_eq!(t.scalar(back), -1.0);
        let same = wasserstein_loss(&mut t, &c, &s, real, real).unwrap();
        assert_eq!(t.scalar(same), 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let mut rng = crate::rng::seeded(3);
        let cov = vec![vec![]; 4];
        for (slope, expected) in [(1.0, 0.0), (2.0, 1.0), (0.5, 0.0), (-2.0, 1.0)] {
            let (c, s) = linear_critic(slope);
            let mut t = Tape::new();
            let p = lipschitz_penalty(&mut t, &c, &s, &[1.0, 2.0, 3.0, 4.0], &[0.5, 0.1, 0.2, 9.0], &cov, &mut rng).unwrap();
            assert!((t.scalar(p) - expected).abs() < 1e-12, "slope {slope}");
        }
    }

    #[test]
    fn hinge_examples() {
        let mut t = Tape::new();
        let g = t.column(&[3.0, 7.0]);
        let c = censor_penalty(&mut t, Some(g), &[5.0, 5.0]).unwrap();
        assert_eq!(t.scalar(c), 1.0);
        let g1 = t.column(&[7.0]);
        let c1 = censor_penalty(&mut t, Some(g1), &[5.0]).unwrap();
        assert_eq!(t.scalar(c1), 0.0);
        let e = censor_penalty(&mut t, None, &[]).unwrap();
        assert_eq!(t.scalar(e), 0.0);

        let g2 = t.column(&[2.5]);
        let m = match_penalty(&mut t, Some(g2), &[4.0]).unwrap();
        assert_eq!(t.scalar(m), 1.5);
        let g3 = t.column(&[2.5, 1.0, 2.5, 1.0]);
        let m2 = match_penalty(&mut t, Some(g3), &[4.0, 1.0, 4.0, 1.0]).unwrap();
        let g4 = t.column(&[2.5, 1.0]);
        let m1 = match_penalty(&mut t, Some(g4), &[4.0, 1.0]).unwrap();
        assert_eq!(t.scalar(m2), t.scalar(m1));
    }

    #[test]
    fn combine_is_weighted_sum() {
        let p = ObjectiveParts {
            wasserstein: 0.3,
            lipschitz: 0.02,
            censor: 1.5,
            matching: 0.7,
        };
        assert_eq!(p.combine([10.0, 2.0, 1.0]), 0.3 + 10.0 * 0.02 + 2.0 * 1.5 + 0.7);
    }
}

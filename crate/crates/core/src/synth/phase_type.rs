//! Continuous phase-type service times: absorption time of a finite CTMC.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTypeSpec {
    /// Row-major `n x n` sub-generator over the transient phases.
    pub sub_generator: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl PhaseTypeSpec {
    pub fn new(sub_generator: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::Config("phase-type needs at least one phase".into()));
        }
        if sub_generator.len() != n || sub_generator.iter().any(|r| r.len() != n) {
            return Err(Error::dim("phase-type sub-generator", n, sub_generator.len()));
        }
        if initial.iter().any(|&p| !(p >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "initial distribution must be a probability vector, got {initial:?}"
            )));
        }
        let mut any_exit = false;
        for (i, row) in sub_generator.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || (i != j && v < 0.0) {
                    return Err(Error::Config(format!("invalid rate S[{i}][{j}] = {v}")));
                }
            }
            if !(row[i] < 0.0) {
                return Err(Error::Config(format!("phase {i} has no outflow")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1e-12 * row[i].abs() {
                return Err(Error::Config(format!("row {i} sums to {sum} > 0")));
            }
            if sum < 0.0 {
                any_exit = true;
            }
        }
        if !any_exit {
            return Err(Error::Config("absorbing state is unreachable".into()));
        }
        Ok(Self {
            sub_generator,
            initial,
        })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![vec![-rate]], vec![1.0])
    }

    /// `k` sequential phases with a common rate.
    pub fn erlang(k: usize, rate: f64) -> Result<Self> {
        let mut s = vec![vec![0.0; k]; k];
        for i in 0..k {
            s[i][i] = -rate;
            if i + 1 < k {
                s[i][i + 1] = rate;
            }
        }
        let mut init = vec![0.0; k];
        if k > 0 {
            init[0] = 1.0;
        }
        Self::new(s, init)
    }

    pub fn n_phases(&self) -> usize {
        self.initial.len()
    }

    fn exit_rate(&self, i: usize) -> f64 {
        -self.sub_generator[i].iter().sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut phase = pick(&self.initial, rng.random());
        let mut t = 0.0;
        loop {
            let out = -self.sub_generator[phase][phase];
            t += rng.sample::<f64, _>(Exp1) / out;
            let mut u: f64 = rng.random::<f64>() * out;
            let exit = self.exit_rate(phase).max(0.0);
            if u < exit {
                return t;
            }
            u -= exit;
            let mut next = None;
            for (j, &r) in self.sub_generator[phase].iter().enumerate() {
                if j == phase || r <= 0.0 {
                    continue;
                }
                if u < r {
                    next = Some(j);
                    break;
                }
                u -= r;
                next = Some(j);
            }
            match next {
                Some(j) => phase = j,
                None => return t,
            }
        }
    }
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// One draw from `spec`, seeded.
pub fn sample_phase_type(spec: &PhaseTypeSpec, seed: u64) -> f64 {
    spec.sample(&mut crate::rng::stream(seed, 0x5054))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(PhaseTypeSpec::new(vec![vec![1.0]], vec![1.0]).is_err());
        assert!(PhaseTypeSpec::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![1.0, 0.0]).is_err());
        assert!(PhaseTypeSpec::new(vec![vec![-1.0]], vec![0.5]).is_err());
        assert!(PhaseTypeSpec::erlang(3, 2.0).is_ok());
    }

    #[test]
    fn samples_positive() {
        let spec = PhaseTypeSpec::new(
            vec![vec![-3.0, 1.0, 1.0], vec![0.5, -2.0, 0.5], vec![0.0, 1.0, -1.5]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let mut rng = crate::rng::seeded(1);
        assert!((0..5000).all(|_| spec.sample(&mut rng) > 0.0));
    }

    #[test]
    fn erlang_two_moments() {
        let spec = PhaseTypeSpec::erlang(2, 1.0).unwrap();
        let mut rng = crate::rng::seeded(4);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (2.0 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}");
        // Var of the sample variance for Erlang(2,1): (m4 - σ⁴)/n with m4 = 24.
        let se_var = ((24.0 - 4.0) / n as f64).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se_var, "var {var}");
    }
}

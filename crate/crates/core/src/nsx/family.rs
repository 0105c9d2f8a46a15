//! Parametric service-time families with censored log-likelihood pieces.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Gamma, LogNormal, Pareto};

use crate::error::{Error, Result};
use crate::nn::{Tape, Unary, Var};
use crate::special::{ln_gamma, ln_gamma_q, ln_normal_sf, softplus, LN_SQRT_2PI};

/// Floor added after every positivity link.
pub const LINK_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Shape `α`, rate `β`.
    Gamma,
    /// Rate `β`.
    Exponential,
    /// Shape `a`, scale `x_m`; support `[x_m, ∞)`.
    Pareto,
    /// Degrees of freedom `k`, continuous.
    ChiSquare,
    /// Location `μ`, scale `σ` of `ln s`.
    LogNormal,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "gamma" | "g" => Family::Gamma,
            "exponential" | "e" => Family::Exponential,
            "pareto" | "p" => Family::Pareto,
            "chi_square" | "chi-square" | "chisquare" | "c" => Family::ChiSquare,
            "log_normal" | "log-normal" | "lognormal" | "l" => Family::LogNormal,
            other => return Err(Error::Config(format!("unknown service family `{other}`"))),
        })
    }
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gamma,
        Family::Exponential,
        Family::Pareto,
        Family::ChiSquare,
        Family::LogNormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gamma => "gamma",
            Family::Exponential => "exponential",
            Family::Pareto => "pareto",
            Family::ChiSquare => "chi_square",
            Family::LogNormal => "log_normal",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            Family::Exponential | Family::ChiSquare => 1,
            _ => 2,
        }
    }

    /// Maps raw head outputs to distribution parameters. `pareto_cap` bounds
    /// the Pareto scale from above.
    pub fn link(self, raw: &[f64], pareto_cap: f64) -> Vec<f64> {
        let pos = |x: f64| softplus(x) + LINK_FLOOR;
        match self {
            Family::Gamma => vec![pos(raw[0]), pos(raw[1])],
            Family::Exponential => vec![pos(raw[0])],
            Family::Pareto => vec![pos(raw[0]), pareto_cap * crate::special::sigmoid(raw[1])],
            Family::ChiSquare => vec![pos(raw[0])],
            Family::LogNormal => vec![raw[0], pos(raw[1])],
        }
    }

    pub fn validate(self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::dim(format!("{} parameters", self.name()), self.n_params(), p.len()));
        }
        let positive = match self {
            Family::LogNormal => &p[1..],
            _ => p,
        };
        if p.iter().any(|v| !v.is_finite()) || positive.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{} parameters out of domain: {p:?}",
                self.name()
            )));
        }
        Ok(())
    }

    /// Log density at `s > 0`; `-∞` outside the support.
    pub fn log_pdf(self, p: &[f64], s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self {
            Family::Gamma => gamma_log_pdf(p[0], p[1], s),
            Family::Exponential => p[0].ln() - p[0] * s,
            Family::Pareto => {
                let (a, xm) = (p[0], p[1]);
                if s < xm {
                    f64::NEG_INFINITY
                } else {
                    a.ln() + a * xm.ln() - (a + 1.0) * s.ln()
                }
            }
            Family::ChiSquare => gamma_log_pdf(p[0] / 2.0, 0.5, s),
            Family::LogNormal => {
                let (mu, sigma) = (p[0], p[1]);
                let z = (s.ln() - mu) / sigma;
                -s.ln() - sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
        }
    }

    /// `ln P(S > t)` for `t ≥ 0`.
    pub fn log_survival(self, p: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Family::Gamma => ln_gamma_q(p[0], p[1] * t),
            Family::Exponential => -p[0] * t,
            Family::Pareto => -p[0] * (t.ln() - p[1].ln()).max(0.0),
            Family::ChiSquare => ln_gamma_q(p[0] / 2.0, t / 2.0),
            Family::LogNormal => ln_normal_sf((t.ln() - p[0]) / p[1]),
        }
    }

    pub fn mean(self, p: &[f64]) -> f64 {
        match self {
            Family::Gamma => p[0] / p[1],
            Family::Exponential => 1.0 / p[0],
            Family::Pareto if p[0] > 1.0 => p[0] * p[1] / (p[0] - 1.0),
            Family::Pareto => f64::INFINITY,
            Family::ChiSquare => p[0],
            Family::LogNormal => (p[0] + 0.5 * p[1] * p[1]).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, p: &[f64], rng: &mut R) -> Result<f64> {
        let bad = |e: String| Error::InvalidArgument(format!("{} sampler: {e}", self.name()));
        let s = match self {
            Family::Gamma => Gamma::new(p[0], 1.0 / p[1]).map_err(|e| bad(e.to_string()))?.sample(rng),
            Family::Exponential => Exp::new(p[0]).map_err(|e| bad(e.to_string()))?.sample(rng),
            Family::Pareto => Pareto::new(p[1], p[0]).map_err(|e| bad(e.to_string()))?.sample(rng),
            Family::ChiSquare => ChiSquared::new(p[0]).map_err(|e| bad(e.to_string()))?.sample(rng),
            Family::LogNormal => LogNormal::new(p[0], p[1]).map_err(|e| bad(e.to_string()))?.sample(rng),
        };
        // Tiny shapes can underflow to zero; keep samples in the open support.
        Ok(s.max(f64::MIN_POSITIVE))
    }

    /// Tape version of [`Self::link`]; `raw` is `B x n_params`.
    pub fn link_tape(self, tape: &mut Tape, raw: Var, pareto_cap: f64) -> Vec<Var> {
        let pos = |tape: &mut Tape, v: Var| {
            let sp = tape.softplus(v);
            tape.add_scalar(sp, LINK_FLOOR)
        };
        let col = |tape: &mut Tape, j: usize| tape.slice_cols(raw, j, 1);
        match self {
            Family::Gamma => {
                let (a, b) = (col(tape, 0), col(tape, 1));
                vec![pos(tape, a), pos(tape, b)]
            }
            Family::Exponential | Family::ChiSquare => {
                let a = col(tape, 0);
                vec![pos(tape, a)]
            }
            Family::Pareto => {
                let (a, m) = (col(tape, 0), col(tape, 1));
                let a = pos(tape, a);
                let sig = tape.sigmoid(m);
                vec![a, tape.scale(sig, pareto_cap)]
            }
            Family::LogNormal => {
                let (m, s) = (col(tape, 0), col(tape, 1));
                vec![m, pos(tape, s)]
            }
        }
    }

    /// Tape log density, `s` a `B x 1` constant.
    pub fn log_pdf_tape(self, tape: &mut Tape, p: &[Var], s: Var) -> Var {
        let ln_s = tape.ln(s);
        match self {
            Family::Gamma => gamma_log_pdf_tape(tape, p[0], p[1], s, ln_s),
            Family::ChiSquare => {
                let a = tape.scale(p[0], 0.5);
                let b = tape.scalar_const(0.5);
                gamma_log_pdf_tape(tape, a, b, s, ln_s)
            }
            Family::Exponential => {
                let lb = tape.ln(p[0]);
                let bs = tape.mul(p[0], s);
                tape.sub(lb, bs)
            }
            Family::Pareto => {
                let (a, xm) = (p[0], p[1]);
                let la = tape.ln(a);
                let lxm = tape.ln(xm);
                let t1 = tape.mul(a, lxm);
                let a1 = tape.add_scalar(a, 1.0);
                let t2 = tape.mul(a1, ln_s);
                let head = tape.add(la, t1);
                tape.sub(head, t2)
            }
            Family::LogNormal => {
                let (mu, sigma) = (p[0], p[1]);
                let d = tape.sub(ln_s, mu);
                let z = tape.div(d, sigma);
                let z2 = tape.square(z);
                let hz = tape.scale(z2, -0.5);
                let ls = tape.ln(sigma);
                let base = tape.add(ln_s, ls);
                let neg = tape.neg(base);
                let out = tape.add(neg, hz);
                tape.add_scalar(out, -LN_SQRT_2PI)
            }
        }
    }

    /// Tape log survival, `t` a `B x 1` constant of positive values.
    pub fn log_survival_tape(self, tape: &mut Tape, p: &[Var], t: Var) -> Var {
        match self {
            Family::Gamma => {
                let bt = tape.mul(p[1], t);
                tape.ln_gamma_q(p[0], bt)
            }
            Family::ChiSquare => {
                let a = tape.scale(p[0], 0.5);
                let x = tape.scale(t, 0.5);
                tape.ln_gamma_q(a, x)
            }
            Family::Exponential => {
                let bt = tape.mul(p[0], t);
                tape.neg(bt)
            }
            Family::Pareto => {
                let lt = tape.ln(t);
                let lxm = tape.ln(p[1]);
                let d = tape.sub(lt, lxm);
                let r = tape.relu(d);
                let ar = tape.mul(p[0], r);
                tape.neg(ar)
            }
            Family::LogNormal => {
                let lt = tape.ln(t);
                let d = tape.sub(lt, p[0]);
                let z = tape.div(d, p[1]);
                tape.unary(z, Unary::LnNormalSf)
            }
        }
    }
}

fn gamma_log_pdf(a: f64, b: f64, s: f64) -> f64 {
    a * b.ln() + (a - 1.0) * s.ln() - b * s - ln_gamma(a)
}

fn gamma_log_pdf_tape(tape: &mut Tape, a: Var, b: Var, s: Var, ln_s: Var) -> Var {
    let lb = tape.ln(b);
    let t1 = tape.mul(a, lb);
    let am1 = tape.add_scalar(a, -1.0);
    let t2 = tape.mul(am1, ln_s);
    let bs = tape.mul(b, s);
    let lg = tape.unary(a, Unary::LnGamma);
    let x = tape.add(t1, t2);
    let y = tape.sub(x, bs);
    tape.sub(y, lg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_values() {
        assert_eq!(Family::Exponential.log_pdf(&[1.0], 1.0), -1.0);
        assert_eq!(Family::Exponential.log_survival(&[1.0], 2.0), -2.0);
    }

    #[test]
    fn gamma_reduces_to_exponential() {
        for k in 1..=20 {
            let s = 0.37 * k as f64;
            let a = Family::Gamma.log_pdf(&[1.0, 1.0], s);
            let b = Family::Exponential.log_pdf(&[1.0], s);
            assert!((a - b).abs() < 1e-12);
            let a = Family::Gamma.log_survival(&[1.0, 1.0], s);
            assert!((a + s).abs() < 1e-10, "{a} vs {}", -s);
        }
    }

    #[test]
    fn pareto_domain() {
        assert_eq!(Family::Pareto.log_pdf(&[2.0, 1.0], 0.5), f64::NEG_INFINITY);
        assert_eq!(Family::Pareto.log_survival(&[2.0, 1.0], 0.5), 0.0);
        assert!((Family::Pareto.log_survival(&[2.0, 1.0], 4.0) - 2.0 * 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tape_matches_scalar() {
        let cases: [(Family, Vec<f64>); 5] = [
            (Family::Gamma, vec![0.3, -0.2]),
            (Family::Exponential, vec![0.7]),
            (Family::Pareto, vec![0.4, 0.1]),
            (Family::ChiSquare, vec![1.1]),
            (Family::LogNormal, vec![-0.3, 0.2]),
        ];
        for (fam, raw) in cases {
            let p = fam.link(&raw, 0.5);
            let mut tape = Tape::new();
            let r = tape.row_vector(&raw);
            let pv = fam.link_tape(&mut tape, r, 0.5);
            for (a, &v) in p.iter().zip(&pv) {
                assert!((a - tape.scalar(v)).abs() < 1e-15);
            }
            for s in [0.6, 1.3, 4.0] {
                let sv = tape.scalar_const(s);
                let lp = fam.log_pdf_tape(&mut tape, &pv, sv);
                let ls = fam.log_survival_tape(&mut tape, &pv, sv);
                assert!((tape.scalar(lp) - fam.log_pdf(&p, s)).abs() < 1e-12, "{fam:?} pdf");
                assert!((tape.scalar(ls) - fam.log_survival(&p, s)).abs() < 1e-12, "{fam:?} sf");
            }
        }
    }

    #[test]
    fn names_parse() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }
}

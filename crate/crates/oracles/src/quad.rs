//! Adaptive Simpson quadrature and fixed composite Gauss-Legendre panels.

const NODES: [f64; 5] = [
    0.0,
    0.538_469_310_105_683_1,
    -0.538_469_310_105_683_1,
    0.906_179_845_938_664,
    -0.906_179_845_938_664,
];
const WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

const MAX_DEPTH: usize = 60;

struct Simpson<'a> {
    f: &'a dyn Fn(f64) -> f64,
    evaluations: usize,
    error: f64,
}

impl Simpson<'_> {
    fn eval(&mut self, x: f64) -> f64 {
        self.evaluations += 1;
        (self.f)(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn step(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> Result<f64, String> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (self.eval(lm), self.eval(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if diff.abs() <= 15.0 * tol {
            self.error += diff.abs() / 15.0;
            return Ok(left + right + diff / 15.0);
        }
        if depth == 0 {
            return Err(format!("adaptive Simpson did not converge on [{a}, {b}]"));
        }
        Ok(self.step(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + self.step(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }

    fn run(&mut self, a: f64, b: f64, tol: f64) -> Result<f64, String> {
        let (fa, fb) = (self.eval(a), self.eval(b));
        let fm = self.eval(0.5 * (a + b));
        // Split once up front so a symmetric integrand cannot fool the first test.
        let m = 0.5 * (a + b);
        let mut total = 0.0;
        for (lo, hi, flo, fhi) in [(a, m, fa, fm), (m, b, fm, fb)] {
            let mid = self.eval(0.5 * (lo + hi));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * mid + fhi);
            total += self.step(lo, hi, flo, mid, fhi, whole, 0.5 * tol, MAX_DEPTH)?;
        }
        Ok(total)
    }
}

/// `∫_a^b f` by adaptive Simpson; `b = None` integrates to infinity over
/// doubling pieces until the integrand falls below 1e-14.
pub fn quad(f: impl Fn(f64) -> f64, a: f64, b: Option<f64>, tol: f64) -> Result<QuadratureResult, String> {
    let mut s = Simpson {
        f: &f,
        evaluations: 0,
        error: 0.0,
    };
    let value = match b {
        Some(b) => s.run(a, b, tol)?,
        None => {
            let mut total = 0.0;
            let (mut lo, mut width) = (a, 1.0);
            loop {
                let hi = lo + width;
                total += s.run(lo, hi, tol)?;
                if s.eval(hi).abs() < 1e-14 {
                    break;
                }
                if width > 1e12 {
                    return Err("integrand does not decay".into());
                }
                lo = hi;
                width *= 2.0;
            }
            total
        }
    };
    if !value.is_finite() {
        return Err("non-finite integral".into());
    }
    Ok(QuadratureResult {
        value,
        abs_error_estimate: s.error,
        evaluations: s.evaluations,
    })
}

/// `∫_a^b f` with `panels` equal five-point panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// `∫_a^∞ f` through `x = a + t / (1 - t)`.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, panels: usize) -> f64 {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let x = a + t / (1.0 - t);
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / ((1.0 - t) * (1.0 - t))
            }
        },
        0.0,
        1.0,
        panels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_tail() {
        let v = integrate_to_inf(|x| (-x).exp(), 1.0, 2000);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        let p = integrate(|x| x * x, 0.0, 3.0, 10);
        assert!((p - 9.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_examples() {
        let r = quad(|x| x, 0.0, Some(1.0), 1e-13).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12 && r.abs_error_estimate <= 1e-13);
        let r = quad(|x| (-x).exp(), 0.0, None, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
        // e E1(1) from the series evaluator.
        let target = 1f64.exp() * crate::special::e1(1.0);
        let r = quad(|t| (-(t.exp() - 1.0)).exp(), 0.0, None, 1e-12).unwrap();
        assert!((r.value - target).abs() < 1e-9 && (r.value - 0.59634).abs() < 1e-5);
        assert!(quad(|x| 1.0 / x, -1.0, Some(1.0), 1e-12).is_err());
    }
}

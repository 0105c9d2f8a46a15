//! Scalar special functions used by the likelihoods, all evaluated in log
//! space where the tails would otherwise underflow.

use statrs::function::erf::erfc;
use statrs::function::gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    gamma::digamma(x)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(softplus(x))`, finite even where `softplus(x)` underflows.
pub fn ln_softplus(x: f64) -> f64 {
    if x < -30.0 {
        // ln(ln(1+e^x)) = x + ln(1 - e^x/2 + ...)
        x + (-0.5 * x.exp()).ln_1p()
    } else {
        softplus(x).ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(e^x - 1) / x`, equal to 1 at the origin.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// Derivative of [`exprel`].
pub fn exprel_deriv(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        0.5 + x / 3.0 + x * x / 8.0
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

/// `ln(1 + x) / x`, equal to 1 at the origin.
pub fn log1p_over(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x / 2.0 + x * x / 3.0
    } else {
        x.ln_1p() / x
    }
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 10_000;

/// Log of the regularized upper incomplete gamma function `Q(a, x)`.
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        let ln_p = ln_gamma_p_series(a, x);
        (-ln_p.exp_m1()).ln()
    } else {
        ln_gamma_q_cf(a, x)
    }
}

/// Log of the regularized lower incomplete gamma function `P(a, x)`.
pub fn ln_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < a + 1.0 {
        ln_gamma_p_series(a, x)
    } else {
        let ln_q = ln_gamma_q_cf(a, x);
        (-ln_q.exp()).ln_1p()
    }
}

fn ln_gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum.ln() - x + a * x.ln() - ln_gamma(a)
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, x)`.
fn ln_gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h.ln() - x + a * x.ln() - ln_gamma(a)
}

/// Partial derivatives `(d/da, d/dx)` of `ln Q(a, x)`.
///
/// The shape derivative has no elementary closed form; it is taken by a
/// Richardson-extrapolated central difference of [`ln_gamma_q`], which is
/// accurate to roughly 1e-10 relative.
pub fn ln_gamma_q_grad(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    let ln_q = ln_gamma_q(a, x);
    let dx = -((a - 1.0) * x.ln() - x - ln_gamma(a) - ln_q).exp();
    let h = 1e-3 * a.min(1.0);
    let central = |h: f64| (ln_gamma_q(a + h, x) - ln_gamma_q(a - h, x)) / (2.0 * h);
    let d1 = central(h);
    let d2 = central(h / 2.0);
    let da = (4.0 * d2 - d1) / 3.0;
    (da, dx)
}

/// `ln(1 - Phi(z))` for the standard normal CDF `Phi`.
pub fn ln_normal_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let z2 = z * z;
        -0.5 * z2 - LN_SQRT_2PI - z.ln() + (-1.0 / z2 + 3.0 / (z2 * z2)).ln_1p()
    }
}

/// Derivative of [`ln_normal_sf`]: `-phi(z) / (1 - Phi(z))`.
pub fn ln_normal_sf_deriv(z: f64) -> f64 {
    let ln_phi = -0.5 * z * z - LN_SQRT_2PI;
    -(ln_phi - ln_normal_sf(z)).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_closed_forms() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(((softplus(50.0) - 50.0) / 50.0).abs() < 1e-9);
        let s = softplus(-50.0);
        assert!(s > 0.0);
        assert!(((s - (-50.0f64).exp()) / s).abs() < 1e-12);
        assert!((ln_softplus(-50.0) + 50.0).abs() < 1e-12);
        assert!(ln_softplus(-800.0).is_finite());
    }

    #[test]
    fn exponential_q_is_closed_form() {
        for x in [0.1, 0.5, 1.0, 2.0, 5.0, 30.0, 200.0] {
            assert!((ln_gamma_q(1.0, x) + x).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn q_and_p_sum_to_one() {
        for &(a, x) in &[(0.3, 0.2), (2.5, 1.0), (3.5, 2.4), (10.0, 12.0), (0.7, 5.0)] {
            let s = ln_gamma_q(a, x).exp() + ln_gamma_p(a, x).exp();
            assert!((s - 1.0).abs() < 1e-12, "a={a} x={x} s={s}");
        }
    }

    #[test]
    fn q_grad_matches_difference() {
        for &(a, x) in &[(0.5, 0.3), (2.0, 3.0), (3.5, 1.2), (7.0, 20.0)] {
            let (da, dx) = ln_gamma_q_grad(a, x);
            let h = 1e-6;
            let fa = (ln_gamma_q(a + h, x) - ln_gamma_q(a - h, x)) / (2.0 * h);
            let fx = (ln_gamma_q(a, x + h) - ln_gamma_q(a, x - h)) / (2.0 * h);
            assert!((da - fa).abs() < 1e-6 * (1.0 + fa.abs()), "{da} {fa}");
            assert!((dx - fx).abs() < 1e-6 * (1.0 + fx.abs()), "{dx} {fx}");
        }
    }

    #[test]
    fn normal_tail_is_continuous_at_switch() {
        let below = ln_normal_sf(30.0 - 1e-9);
        let above = ln_normal_sf(30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
        assert!((ln_normal_sf(0.0) + std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn exprel_and_log1p_over_near_zero() {
        for x in [-1e-7f64, 0.0, 1e-7, 1e-3, -0.5, 2.0] {
            let e = if x == 0.0 { 1.0 } else { x.exp_m1() / x };
            assert!((exprel(x) - e).abs() < 1e-12);
            let l = if x == 0.0 { 1.0 } else { x.ln_1p() / x };
            assert!((log1p_over(x) - l).abs() < 1e-12);
        }
    }
}

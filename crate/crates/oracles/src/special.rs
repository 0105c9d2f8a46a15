const EULER: f64 = 0.577_215_664_901_532_9;

/// Exponential integral `E1(x)` for `x > 0`: power series below 1, a
/// continued fraction above.
pub fn e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        -EULER - x.ln() + sum
    } else {
        // Modified Lentz on E1(x) = e^{-x} / (x + 1 / (1 + 1 / (x + 2 / (1 + 2 / (x + ...))))).
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// `E[τ]` for intensity `exp(alpha + w τ)`, `w > 0`: `e^c E1(c) / w` with `c = e^alpha / w`.
pub fn exp_ramp_mean(alpha: f64, w: f64) -> f64 {
    let c = alpha.exp() / w;
    c.exp() * e1(c) / w
}

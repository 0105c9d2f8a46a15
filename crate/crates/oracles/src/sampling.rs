use rand::Rng;

/// First event time of intensity `exp(alpha + w τ)` by thinning over windows
/// of length `window`, each with its own constant envelope. `None` when no
/// event occurs before `give_up`.
pub fn thin_exp_ramp<R: Rng + ?Sized>(alpha: f64, w: f64, window: f64, give_up: f64, rng: &mut R) -> Option<f64> {
    let mut start = 0.0;
    while start < give_up {
        let end = start + window;
        let bound = (alpha + w * start).exp().max((alpha + w * end).exp());
        let mut t = start;
        loop {
            let u: f64 = rng.random();
            t -= (1.0 - u).ln() / bound;
            if t >= end {
                break;
            }
            let accept: f64 = rng.random();
            if accept * bound <= (alpha + w * t).exp() {
                return Some(t);
            }
        }
        start = end;
    }
    None
}

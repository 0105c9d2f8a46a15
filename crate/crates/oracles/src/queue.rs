/// Processor-sharing departures by walking events in real time: every job in
/// the system receives rate `1 / n`.
pub fn ps_walk(arrivals: &[f64], work: &[f64]) -> Vec<f64> {
    let n = arrivals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| arrivals[a].total_cmp(&arrivals[b]));
    let mut remaining: Vec<(usize, f64)> = Vec::new();
    let mut depart = vec![f64::NAN; n];
    let mut t = 0.0;
    let mut next = 0;
    while next < n || !remaining.is_empty() {
        let t_arr = if next < n { arrivals[order[next]] } else { f64::INFINITY };
        let t_dep = if remaining.is_empty() {
            f64::INFINITY
        } else {
            let min = remaining.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            t + min * remaining.len() as f64
        };
        let until = t_arr.min(t_dep);
        if !remaining.is_empty() {
            let served = (until - t) / remaining.len() as f64;
            for r in remaining.iter_mut() {
                r.1 -= served;
            }
        }
        t = until;
        if t_dep <= t_arr {
            let min = remaining.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * (1.0 + min.abs());
            remaining.retain(|&(j, rem)| {
                if rem <= min + tol {
                    depart[j] = t;
                    false
                } else {
                    true
                }
            });
        } else {
            let j = order[next];
            remaining.push((j, work[j]));
            next += 1;
        }
    }
    depart
}

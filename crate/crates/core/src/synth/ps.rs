//! Processor-sharing queue: every job in the system is served at rate `1/U(t)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// A job keyed by the virtual time at which it completes.
#[derive(Clone, Copy, Debug)]
struct Pending {
    finish: f64,
    job: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // Reversed for a min-heap on finish time, ties by job index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .total_cmp(&self.finish)
            .then_with(|| other.job.cmp(&self.job))
    }
}

/// Exact departure times, in job order.
///
/// Virtual time `V` advances at rate `1/U(t)` while the system is busy, so a
/// job arriving at `V_a` with requirement `r` leaves when `V = V_a + r`.
pub fn simulate_ps_queue(arrivals: &[f64], requirements: &[f64]) -> Result<Vec<f64>> {
    if arrivals.len() != requirements.len() {
        return Err(Error::dim("ps requirements", arrivals.len(), requirements.len()));
    }
    if arrivals.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("arrivals must be sorted".into()));
    }
    if let Some(r) = requirements.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(format!("requirement {r} is not positive")));
    }
    let n = arrivals.len();
    let mut departures = vec![f64::NAN; n];
    let mut heap = BinaryHeap::new();
    let mut clock = 0.0;
    let mut virt = 0.0;
    let mut next = 0;
    while next < n || !heap.is_empty() {
        let u = heap.len() as f64;
        let dep_time = heap
            .peek()
            .map(|p: &Pending| clock + (p.finish - virt) * u);
        let arrive_first = match dep_time {
            None => true,
            Some(d) => next < n && arrivals[next] < d,
        };
        if arrive_first {
            let a = arrivals[next];
            if u > 0.0 {
                virt += (a - clock) / u;
            }
            clock = a;
            heap.push(Pending {
                finish: virt + requirements[next],
                job: next,
            });
            next += 1;
        } else {
            let p = heap.pop().expect("peeked");
            clock = dep_time.expect("peeked");
            virt = p.finish;
            departures[p.job] = clock;
        }
    }
    Ok(departures)
}

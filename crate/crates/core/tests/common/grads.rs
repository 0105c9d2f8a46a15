//! Autodiff gradients of every training objective against central finite
//! differences. Each case returns `(label, relative error)`.

use rand::Rng;
use servtime::adv::{AdvConfig, AdvModel, Selection, Variant};
use servtime::eventlog::{fit_normalizer, ArrivalEvent, QueueTrace};
use servtime::nn::{ParamId, ParamStore};
use servtime::nsx::{Batch, Family, NsxModel};
use servtime::rng;
use servtime::rpp::RppModel;
use servtime::service::ServiceData;
use servtime_oracles::fd::{central_grad, rel_err};

pub const TOL: f64 = 1e-4;

/// Compares the autodiff gradient over `ids` against finite differences of `eval`.
fn check<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    ids: &[ParamId],
    eval: impl Fn(&M) -> f64,
    grad: impl Fn(&mut M),
) -> f64 {
    grad(model);
    let analytic = store(model).flat_grads(ids);
    let x0 = store(model).flat_values(ids);
    let numeric = central_grad(
        |x| {
            store(model).set_flat_values(ids, x);
            eval(model)
        },
        &x0,
        1e-5,
    );
    store(model).set_flat_values(ids, &x0);
    let e = rel_err(&analytic, &numeric, 1e-8);
    assert!(analytic.iter().any(|g| *g != 0.0), "gradient vanished");
    e
}

fn trace(n: usize, cov: usize, seed: u64) -> QueueTrace {
    let mut r = rng::seeded(seed);
    let mut t = 0.0;
    let events = (0..n)
        .map(|i| {
            t += 0.2 + r.random::<f64>();
            let s = 0.3 + 2.0 * r.random::<f64>();
            let dep = if i % 4 == 3 { None } else { Some(t + s) };
            let mut e = ArrivalEvent::new(t, dep);
            e.covariates = (0..cov).map(|_| r.random::<f64>()).collect();
            e
        })
        .collect();
    QueueTrace::new(events, t + 0.5).unwrap()
}

fn rpp_model(cov: usize) -> (RppModel, QueueTrace) {
    let tr = trace(12, cov, 1);
    let norm = fit_normalizer(&[&tr]).unwrap();
    (RppModel::new(4, norm, 3).unwrap(), tr)
}

/// Relative errors for `L_RPP` with and without covariates and the open tail.
pub fn rpp_log_likelihood() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (cov, tail) in [(0, false), (2, true)] {
        let (mut m, tr) = rpp_model(cov);
        // Nonzero ramp so the w path is exercised away from its series branch.
        let w = m.store.find("rpp.w").unwrap();
        m.store.tensor_mut(w).values[0] = 0.3;
        let ids: Vec<_> = m.store.ids().collect();
        let e = check(
            &mut m,
            |m| &mut m.store,
            &ids,
            |m| m.log_likelihood(&tr, tail).unwrap(),
            |m| {
                m.log_likelihood_grad(&tr, tail).unwrap();
            },
        );
        out.push((format!("rpp cov={cov} tail={tail}"), e));
    }
    out
}

fn service_data(cov: usize) -> ServiceData {
    let (m, tr) = rpp_model(cov);
    ServiceData::from_trace(&m, &tr, None).unwrap().0
}

pub fn ns_losses_all_families() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let data = service_data(1);
    let idx: Vec<usize> = (0..data.len()).collect();
    for family in Family::ALL {
        let mut m = NsxModel::new(family, data.hidden_dim() + data.cov_dim(), 5, 3, data.time_scale, 11).unwrap();
        if family == Family::Pareto {
            m.pareto_cap = 0.9 * data.min_observed().unwrap();
        }
        let ids: Vec<_> = m.store.ids().collect();
        let e = check(
            &mut m,
            |m| &mut m.store,
            &ids,
            |m| m.loss(&Batch { data: &data, idx: &idx }).unwrap(),
            |m| {
                m.loss_grad(&Batch { data: &data, idx: &idx }).unwrap();
            },
        );
        out.push((format!("ns {family:?}"), e));
    }
    out
}

fn adv_model(variant: Variant, cov: usize) -> (AdvModel, ServiceData, Selection) {
    let data = service_data(cov);
    let cfg = AdvConfig {
        gen_hidden: 5,
        critic_hidden: 5,
        n_layers: 3,
        noise_dim: 2,
        state_dim: 3,
        bptt: 4,
        lambda2: 2.0,
        ..AdvConfig::default()
    };
    let m = AdvModel::new(variant, data.hidden_dim(), data.cov_dim(), data.time_scale, &cfg).unwrap();
    let sel = match variant {
        Variant::As => Selection::Static {
            observed: data.uncensored(),
            censored: data.censored_idx(),
        },
        _ => Selection::Windows(vec![0, 4, 8]),
    };
    (m, data, sel)
}

pub fn adversarial_critic_objective() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for variant in [Variant::As, Variant::Ras, Variant::RasNh] {
        let (mut m, data, sel) = adv_model(variant, 1);
        // Generated samples are detached from the critic loss, so only the critic moves.
        let ids = m.store.ids_with_prefix("critic.");
        let e = check(
            &mut m,
            |m| &mut m.store,
            &ids,
            |m| m.critic_objective(&data, &sel, 3).unwrap(),
            |m| {
                m.critic_objective_grad(&data, &sel, 3).unwrap();
            },
        );
        out.push((format!("{variant:?} critic"), e));
    }
    out
}

/// The generator objective sums the Wasserstein, L1, L2 and L3 terms.
pub fn adversarial_generator_objective() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for variant in [Variant::As, Variant::Ras, Variant::RasNh] {
        let (mut m, data, sel) = adv_model(variant, 1);
        let ids: Vec<_> = m.store.ids().collect();
        let e = check(
            &mut m,
            |m| &mut m.store,
            &ids,
            |m| m.generator_objective(&data, &sel, 4).unwrap(),
            |m| {
                m.generator_objective_grad(&data, &sel, 4).unwrap();
            },
        );
        out.push((format!("{variant:?} generator"), e));
    }
    out
}

pub fn mempool_objectives() -> Vec<(String, f64)> {
    use servtime::mempool::{simulate_sawtooth, MempoolConfig, MempoolModel, MempoolObjective as O, MempoolVariant as V};
    let s = simulate_sawtooth(5.0, 1.0, 14.0, 3).unwrap();
    assert!(s.len() >= 8);
    let cfg = MempoolConfig {
        state_dim: 3,
        head_hidden: 4,
        n_layers: 3,
        noise_dim: 2,
        bptt: 4,
        ..MempoolConfig::default()
    };
    let cases = [
        (V::NmsG, O::Unconfirmed, "mp.u."),
        (V::NmsG, O::Blocks, "mp.block."),
        (V::NmsG, O::Accepted, "mp.acc."),
        (V::Ams, O::Unconfirmed, "mp."),
        (V::Ams, O::UnconfirmedCritic, "mp.critic_u."),
        (V::Ams, O::Blocks, "mp.block."),
        (V::Ams, O::Accepted, "mp.acc."),
        (V::Ams, O::AcceptedCritic, "mp.critic_b."),
    ];
    let mut out = Vec::new();
    // Block and accepted objectives see teacher-forced states as constants.
    for (variant, which, prefix) in cases {
        let mut m = MempoolModel::new(variant, 1.0, 6.0, &cfg).unwrap();
        let w = m.store.find("mp.block.w").unwrap();
        m.store.tensor_mut(w).values[0] = 0.2;
        let vu = m.store.find("mp.block.v_u").unwrap();
        m.store.tensor_mut(vu).values.iter_mut().for_each(|v| *v = 0.1);
        let ids = m.store.ids_with_prefix(prefix);
        let e = check(
            &mut m,
            |m| &mut m.store,
            &ids,
            |m| m.objective(&s, which, 5).unwrap(),
            |m| {
                m.objective_grad(&s, which, 5).unwrap();
            },
        );
        out.push((format!("{variant:?} {which:?}"), e));
    }
    out
}

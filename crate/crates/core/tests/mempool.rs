//! Mempool model: fits on synthetic series, block-time recovery, training
//! smoke behavior and count positivity.

use proptest::prelude::*;
use servtime::mempool::{
    ingest_mempool_csv, simulate_sawtooth, split_mempool, train_mempool, MempoolConfig, MempoolModel,
    MempoolObjective, MempoolSeries, MempoolVariant,
};
use servtime::rng;
use servtime::rpp::QuadConfig;

fn constant_series(c: f64, n: usize, seed: u64) -> MempoolSeries {
    let gaps = simulate_sawtooth(1.0, 1.0, n as f64 * 1.5, seed).unwrap();
    let rows: Vec<(f64, f64, f64)> = gaps
        .records()
        .iter()
        .take(n)
        .map(|r| (r.block_time, c, c / 4.0))
        .collect();
    let end = rows.last().unwrap().0;
    MempoolSeries::from_rows(&rows, 0.0, end).unwrap()
}

fn quick(epochs: usize, lr: f64) -> MempoolConfig {
    MempoolConfig {
        epochs,
        lr,
        lr_final: 0.1,
        seed: 1,
        ..MempoolConfig::default()
    }
}

#[test]
fn constant_series_is_learned() {
    let s = constant_series(50.0, 400, 1);
    let (m, _) = train_mempool(MempoolVariant::NmsG, &s, &quick(40, 1e-2)).unwrap();
    let pred = m.predict_unconfirmed(&s, 1, 2).unwrap();
    let mean = pred.iter().sum::<f64>() / pred.len() as f64;
    assert!((mean - 50.0).abs() < 2.5, "{mean}");
    let tail = &pred[pred.len() / 2..];
    assert!(tail.iter().all(|p| (p - 50.0).abs() < 2.5));
}

#[test]
fn block_model_recovers_mean_gap() {
    let s = simulate_sawtooth(10.0, 0.5, 1_000.0, 3).unwrap();
    let gaps = s.inter_blocks();
    let truth = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((truth - 2.0).abs() < 0.2);
    let (m, _) = train_mempool(MempoolVariant::NmsG, &s, &quick(20, 3e-3)).unwrap();
    let exp = m.expected_inter_blocks(&s).unwrap();
    let fitted = exp.iter().sum::<f64>() / exp.len() as f64;
    assert!((fitted - 2.0).abs() < 0.2, "fitted mean gap {fitted}");
}

/// Full-series negative log-likelihood of the three NMS-G objectives.
fn full_nll(m: &MempoolModel, s: &MempoolSeries) -> f64 {
    [MempoolObjective::Unconfirmed, MempoolObjective::Blocks, MempoolObjective::Accepted]
        .into_iter()
        .map(|o| m.objective(s, o, 0).unwrap())
        .sum()
}

#[test]
fn nmsg_loss_decreases_at_small_lr() {
    let s = simulate_sawtooth(10.0, 1.0, 300.0, 4).unwrap();
    // With a constant learning rate a k-epoch run is the prefix of a longer one.
    let losses: Vec<f64> = (1..=10)
        .map(|epochs| {
            let cfg = MempoolConfig {
                epochs,
                seed: 2,
                ..MempoolConfig::default()
            };
            assert_eq!((cfg.lr, cfg.lr_final), (1e-5, 1.0));
            let (m, hist) = train_mempool(MempoolVariant::NmsG, &s, &cfg).unwrap();
            assert_eq!(hist.train_loss.len(), epochs);
            full_nll(&m, &s)
        })
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn ams_one_step_beats_mean_on_sawtooth() {
    let s = simulate_sawtooth(10.0, 1.0, 600.0, 5).unwrap();
    let (train, _) = split_mempool(&s, 0.2).unwrap();
    let cfg = MempoolConfig {
        noise_dim: 4,
        ..quick(20, 3e-3)
    };
    let (m, hist) = train_mempool(MempoolVariant::Ams, &train, &cfg).unwrap();
    assert!(hist.train_loss.iter().all(|v| v.is_finite()));
    let full = s.slice(train.len() - 1, s.len()).unwrap();
    let pred = m.predict_unconfirmed(&full, 20, 3).unwrap();
    let truth = &full.unconfirmed()[1..];
    assert!(pred.iter().all(|&p| p > 0.0));
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64;
    let mu = train.unconfirmed().iter().sum::<f64>() / train.len() as f64;
    let base = truth.iter().map(|t| (t - mu).abs()).sum::<f64>() / truth.len() as f64;
    assert!(mae < base, "mae {mae} vs mean predictor {base}");
}

#[test]
fn checkpoint_and_csv_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = simulate_sawtooth(4.0, 1.0, 60.0, 6).unwrap();
    let p = dir.path().join("mp.csv");
    s.save_csv(&p).unwrap();
    let back = ingest_mempool_csv(&p).unwrap();
    assert_eq!(back.records(), s.records());
    let m = MempoolModel::new(MempoolVariant::NmsG, 1.0, 10.0, &MempoolConfig::default()).unwrap();
    let ck = dir.path().join("mp.ckpt");
    m.to_checkpoint().save(&ck).unwrap();
    let loaded = MempoolModel::from_checkpoint(&servtime::nn::Checkpoint::load(&ck).unwrap()).unwrap();
    assert_eq!(m.predict_unconfirmed(&s, 1, 1).unwrap(), loaded.predict_unconfirmed(&s, 1, 1).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_counts_are_positive_and_clamped(seed in 0u64..500, ams in any::<bool>(), cap in 0.1f64..50.0) {
        let variant = if ams { MempoolVariant::Ams } else { MempoolVariant::NmsG };
        let cfg = MempoolConfig { seed, ..MempoolConfig::default() };
        let m = MempoolModel::new(variant, 1.0, 20.0, &cfg).unwrap();
        let s = simulate_sawtooth(5.0, 1.0, 30.0, seed).unwrap();
        prop_assert!(m.predict_unconfirmed(&s, 3, seed).unwrap().iter().all(|&u| u > 0.0));
        let st = m.states(&s).unwrap();
        let mut r = rng::seeded(seed);
        for j in 1..st.m.len() {
            let hu = st.u_prev(j);
            let out = m.generate_accepted(&st.m[j], &hu, Some(cap), &mut r).unwrap();
            prop_assert!(out.iter().all(|&v| v > 0.0));
            if ams {
                prop_assert!(out[0] <= cap);
            }
            let head = m.block_head(&st.m[j], &hu).unwrap();
            prop_assert!(head.intensity(0.5).unwrap() > 0.0);
            prop_assert!(head.expected_next(&QuadConfig::default()).unwrap().0 > 0.0);
        }
    }
}

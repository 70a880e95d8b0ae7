use herbage::ridge::{autolabel, biomass_targets, fit, RidgeParams, TargetKind};
use herbage::rng::rng_from_seed;
use herbage::robust::{perturb_label, train_linear, MixedDataset, Sample, TrainConfig};
use rand::Rng;

fn one_target() -> (Vec<String>, Vec<TargetKind>) {
    (vec!["y".into()], vec![TargetKind::Mass])
}

fn random_x(seed: u64, n: usize, f: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn linear(x: &[Vec<f64>], w: &[f64], b: f64) -> Vec<Vec<f64>> {
    x.iter().map(|r| vec![b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()]).collect()
}

#[test]
fn duplicating_rows_matches_doubled_lambda() {
    let (n, k) = one_target();
    let x = random_x(1, 15, 4);
    let mut y = linear(&x, &[1.0, -2.0, 0.5, 3.0], 7.0);
    let mut rng = rng_from_seed(2);
    y.iter_mut().for_each(|v| v[0] += rng.random_range(-0.5..0.5));
    let single = fit(&x, &y, &n, &k, RidgeParams { lambda: 0.7, ..RidgeParams::default() }).unwrap();
    let x2 = [x.clone(), x].concat();
    let y2 = [y.clone(), y].concat();
    let double = fit(&x2, &y2, &n, &k, RidgeParams { lambda: 1.4, ..RidgeParams::default() }).unwrap();
    for (a, b) in single.weights[0].iter().zip(&double.weights[0]) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert!((single.intercepts[0] - double.intercepts[0]).abs() < 1e-10);
}

#[test]
fn standardized_fit_ignores_affine_feature_changes() {
    let (n, k) = one_target();
    let x = random_x(3, 25, 3);
    let mut y = linear(&x, &[4.0, 0.0, -1.0], 100.0);
    let mut rng = rng_from_seed(4);
    y.iter_mut().for_each(|v| v[0] += rng.random_range(-1.0..1.0));
    let scale = [1000.0, -0.01, 3.0];
    let shift = [-50.0, 7.0, 1e4];
    let warp = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| v * scale[j] + shift[j]).collect())
            .collect()
    };
    let a = fit(&x, &y, &n, &k, RidgeParams::default()).unwrap();
    let b = fit(&warp(&x), &y, &n, &k, RidgeParams::default()).unwrap();
    let probe = random_x(5, 10, 3);
    for (p, q) in a.predict_many(&probe).unwrap().iter().zip(b.predict_many(&warp(&probe)).unwrap()) {
        assert!((p[0] - q[0]).abs() < 1e-9);
    }
}

#[test]
fn recovers_an_exact_linear_rule() {
    let (n, k) = one_target();
    let w = [2.5, -1.0, 0.25, 4.0, -3.0];
    let x = random_x(6, 40, 5);
    let m = fit(&x, &linear(&x, &w, 900.0), &n, &k, RidgeParams { lambda: 1e-9, ..RidgeParams::default() }).unwrap();
    let probe = random_x(7, 100, 5);
    let truth = linear(&probe, &w, 900.0);
    let worst = m
        .predict_many(&probe)
        .unwrap()
        .iter()
        .zip(&truth)
        .map(|(p, t)| (p[0] - t[0]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn autolabel_rows_are_valid_labels() {
    let species = vec!["grass".to_string(), "clover".to_string(), "weeds".to_string()];
    let (names, kinds) = biomass_targets(&species);
    let x = random_x(8, 52, 9);
    let mut rng = rng_from_seed(9);
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            vec![
                1500.0 + 3000.0 * r[0],
                80.0 + 30.0 * r[1],
                15.0 + 20.0 * r[2],
                5.0 + rng.random_range(-10.0..10.0),
            ]
        })
        .collect();
    let m = fit(&x, &y, &names, &kinds, RidgeParams::default()).unwrap();
    let unlabeled = random_x(10, 594, 9);
    let ids: Vec<String> = (0..594).map(|i| format!("u{i}")).collect();
    let out = autolabel(&m, &ids, &unlabeled).unwrap();
    assert_eq!(out.table.rows.len(), 594);
    for r in &out.table.rows {
        assert!(r.total_mass >= 0.0);
        assert!(r.species_pct.iter().all(|p| (0.0..=100.0).contains(p)));
    }
    assert_eq!(out.model_hash, m.hash());
    let empty = autolabel(&m, &[], &[]).unwrap();
    assert!(empty.table.rows.is_empty());
}

fn samples(prefix: &str, x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Sample> {
    x.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (f, t))| Sample {
            image_id: format!("{prefix}{i}"),
            features: f.clone(),
            targets: t.clone(),
        })
        .collect()
}

fn held_out_rmse(ds: &MixedDataset, cfg: &TrainConfig, w: &[f64], b: f64) -> f64 {
    let model = train_linear(ds, cfg).unwrap().model;
    let probe = random_x(99, 200, w.len());
    let truth = linear(&probe, w, b);
    let preds = model.predict_many(&probe).unwrap();
    (preds.iter().zip(&truth).map(|(p, t)| (p[0] - t[0]).powi(2)).sum::<f64>() / 200.0).sqrt()
}

#[test]
fn noiseless_linear_targets_are_learned() {
    let (n, k) = one_target();
    let w = [3.0, -2.0, 1.0];
    let (xt, xa) = (random_x(11, 52, 3), random_x(12, 594, 3));
    let ds = MixedDataset::new(
        samples("t", &xt, &linear(&xt, &w, 10.0)),
        samples("a", &xa, &linear(&xa, &w, 10.0)),
        n,
        k,
        vec![0.0],
    )
    .unwrap();
    let cfg = TrainConfig {
        perturb: false,
        ..TrainConfig::default()
    };
    let rmse = held_out_rmse(&ds, &cfg, &w, 10.0);
    assert!(rmse < 1e-3, "held-out RMSE {rmse}");
}

#[test]
fn oversized_perturbation_hurts() {
    let (n, k) = one_target();
    let w = [3.0, -2.0, 1.0];
    let (xt, xa) = (random_x(13, 52, 3), random_x(14, 594, 3));
    let build = |sigma: f64| {
        MixedDataset::new(
            samples("t", &xt, &linear(&xt, &w, 10.0)),
            samples("a", &xa, &linear(&xa, &w, 10.0)),
            n.clone(),
            k.clone(),
            vec![sigma],
        )
        .unwrap()
    };
    let cfg = TrainConfig::default();
    let clean = held_out_rmse(&build(0.0), &cfg, &w, 10.0);
    let noisy = held_out_rmse(&build(100.0), &cfg, &w, 10.0);
    assert!(noisy > 10.0 * clean.max(1e-6), "sigma 0: {clean}, sigma 100: {noisy}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let (n, k) = one_target();
    let x = random_x(15, 60, 2);
    let y: Vec<Vec<f64>> = x.iter().map(|r| vec![(r[0] * 5.0).sin() * 10.0 + 20.0]).collect();
    let ds = MixedDataset::new(
        samples("t", &x[..20], &y[..20]),
        samples("a", &x[20..], &y[20..]),
        n,
        k,
        vec![2.0],
    )
    .unwrap();
    let cfg = TrainConfig {
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train_linear(&ds, &cfg).unwrap();
    let b = train_linear(&ds, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    let c = train_linear(&ds, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn perturbation_is_unbiased_away_from_clips() {
    let mut rng = rng_from_seed(16);
    let kinds = [TargetKind::Mass, TargetKind::Percent];
    let n = 200_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let p = perturb_label(&[1000.0, 40.0], &kinds, &[50.0, 5.0], &mut rng);
        sum[0] += p[0];
        sum[1] += p[1];
    }
    assert!((sum[0] / n as f64 - 1000.0).abs() < 0.5);
    assert!((sum[1] / n as f64 - 40.0).abs() < 0.05);
    let clipped = perturb_label(&[1.0, 99.0], &kinds, &[100.0, 100.0], &mut rng);
    assert!(clipped[0] >= 0.0 && (0.0..=100.0).contains(&clipped[1]));
}

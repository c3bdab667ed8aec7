//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use wop::cnn::{layers::cross_entropy, CnnConfig, CnnModel, ConvBlock, Precision, Tensor};
use wop::rng;

/// Analytic-vs-central-difference comparison for every parameter of `model`
/// on one batch. The finite differences only call the forward pass.
/// Returns the worst relative error and where it occurred.
pub fn gradient_check(
    model: &mut CnnModel<f64>,
    x: &Tensor<f64>,
    labels: &[u8],
    dropout_seed: u64,
    eps: f64,
) -> (f64, String) {
    let fresh = || rng::derive(dropout_seed, &[1]);
    let (_, grads) = model.loss_and_grads(x, labels, true, &mut fresh()).unwrap();
    let names = model.param_names().to_vec();
    let mut worst = (0.0, String::new());
    for t in 0..grads.len() {
        for j in 0..grads[t].len() {
            let orig = model.params()[t][j];
            let mut loss_at = |v: f64| {
                model.params_mut()[t][j] = v;
                let p = model.forward(x, true, &mut fresh()).unwrap();
                cross_entropy(&p, labels).unwrap()
            };
            let numeric = (loss_at(orig + eps) - loss_at(orig - eps)) / (2.0 * eps);
            model.params_mut()[t][j] = orig;
            let analytic = grads[t][j];
            let err = rel_error(analytic, numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{j}] analytic={analytic:e} numeric={numeric:e}", names[t]));
            }
        }
    }
    worst
}

/// `|a - n| / max(|a|, |n|, 1e-6)`: relative error with an absolute floor
/// for gradients that are numerically zero.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Random small configuration for gradient checks.
pub fn random_small_config(seed: u64) -> CnnConfig {
    let mut r = rng::derive(seed, &[77]);
    let window = [5, 7, 9][r.random_range(0..3)];
    let masks1 = r.random_range(2..=4);
    let masks2 = r.random_range(2..=4);
    let k1 = [1, 3, 5][r.random_range(0..3)];
    let k2 = [1, 3][r.random_range(0..2)];
    CnnConfig {
        window_w: window,
        window_h: window,
        blocks: vec![
            ConvBlock {
                masks: masks1,
                mask_size: k1,
            },
            ConvBlock {
                masks: masks2,
                mask_size: k2,
            },
        ],
        fc_hidden: r.random_range(2..=8),
        dropout_rate: [0.0, 0.25, 0.5][r.random_range(0..3)],
        seed,
        precision: Precision::F64,
        ..CnnConfig::default()
    }
}

/// Model with random non-zero biases so no pre-activation sits exactly on a
/// ReLU kink, plus a random binary batch.
pub fn random_model_and_batch(cfg: CnnConfig, batch: usize) -> (CnnModel<f64>, Tensor<f64>, Vec<u8>) {
    let mut r = rng::derive(cfg.seed, &[78]);
    let mut m = CnnModel::<f64>::new(cfg.clone()).unwrap();
    for (name, p) in m.param_names().to_vec().iter().zip(m.params_mut()) {
        if name.ends_with(".bias") {
            p.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        }
    }
    let area = cfg.window_w * cfg.window_h;
    let flat: Vec<u8> = (0..batch * area).map(|_| u8::from(r.random::<f64>() < 0.4)).collect();
    let labels: Vec<u8> = (0..batch).map(|_| u8::from(r.random::<f64>() < 0.5)).collect();
    let x = m.batch_from_flat(&flat).unwrap();
    (m, x, labels)
}

/// Pattern -> (count of label 0, count of label 1) by direct recount.
pub fn hash_count(patches: &[Vec<u8>], labels: &[u8]) -> HashMap<Vec<u8>, (u64, u64)> {
    let mut m: HashMap<Vec<u8>, (u64, u64)> = HashMap::new();
    for (p, &l) in patches.iter().zip(labels) {
        let e = m.entry(p.clone()).or_default();
        if l == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    m
}

/// Small synthetic score pages as `(input, output)` pairs.
pub fn toy_pairs(n: usize, seed: u64) -> Vec<(wop::BinaryImage, wop::BinaryImage)> {
    (0..n)
        .map(|i| {
            let cfg = wop::synth::SynthConfig {
                width: 64,
                height: 40,
                staves: 1,
                line_spacing: (5, 6),
                line_thickness: (1, 1),
                symbols_per_staff: (3, 5),
                seed: seed * 1000 + i as u64,
                ..Default::default()
            };
            let p = wop::synth::generate(&cfg).unwrap();
            (p.input, p.output)
        })
        .collect()
}

/// Grid over a tiny f64 network, cheap enough for unit-speed tests.
pub fn tiny_grid(windows: Vec<usize>, lrs: Vec<f64>, epochs: usize) -> wop::selection::GridSpec {
    wop::selection::GridSpec {
        window_sizes: windows,
        learning_rates: lrs,
        dropout_rates: vec![0.0],
        mask_sizes: vec![3],
        epochs,
        base: CnnConfig {
            blocks: vec![
                ConvBlock { masks: 2, mask_size: 3 },
                ConvBlock { masks: 2, mask_size: 3 },
            ],
            fc_hidden: 4,
            batch_size: 16,
            seed: 3,
            precision: Precision::F64,
            ..CnnConfig::default()
        },
        ..Default::default()
    }
}

/// Linear scan over records with the documented tie order.
pub fn brute_force_best(records: &[wop::selection::GridRecord]) -> Option<(usize, f64, usize, f64)> {
    let mut best: Option<&wop::selection::GridRecord> = None;
    for r in records {
        if !r.val_mae.is_finite() {
            continue;
        }
        let wins = match best {
            None => true,
            Some(b) => {
                let ka = (r.val_mae, r.cell.window, r.epoch, r.cell.learning_rate, r.cell.dropout, r.cell.mask_size);
                let kb = (b.val_mae, b.cell.window, b.epoch, b.cell.learning_rate, b.cell.dropout, b.cell.mask_size);
                ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
            }
        };
        if wins {
            best = Some(r);
        }
    }
    best.map(|b| (b.cell.window, b.cell.learning_rate, b.epoch, b.val_mae))
}

/// Random report with coarse MAE values so ties are frequent.
pub fn random_report(seed: u64) -> wop::selection::SelectionReport {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let windows = [9, 11, 13];
    let lrs = [1e-2, 1e-3, 1e-4];
    let mut records = Vec::new();
    for &w in &windows[..rng.random_range(1..=3)] {
        for &lr in &lrs {
            for d in [0.0, 0.5] {
                for e in 1..=rng.random_range(1..=4) {
                    let mae = if rng.random_bool(0.1) {
                        f64::INFINITY
                    } else {
                        // Coarse values make ties common.
                        rng.random_range(0..5) as f64 / 10.0
                    };
                    records.push(wop::selection::GridRecord {
                        cell: wop::selection::CellKey { window: w, learning_rate: lr, dropout: d, mask_size: 5 },
                        epoch: e,
                        val_mae: mae,
                        train_loss: None,
                        diverged: !mae.is_finite(),
                        seed: 0,
                        checkpoint: None,
                    });
                }
            }
        }
    }
    let n = records.len();
    for i in (1..n).rev() {
        records.swap(i, rng.random_range(0..=i));
    }
    serde_json::from_value(serde_json::json!({
        "records": records,
        "windows": [],
        "best": null,
        "stopped_after": null,
    }))
    .unwrap()
}


//! Checks shared by the integration tests and the acceptance runner.
//! Each returns whether it held plus a one-line summary of what was seen.

#![allow(dead_code)]

use std::collections::BTreeMap;

use bpsfair::data::{apply_encoder, fit_encoder, mc_split, synthesize_biased, SplitPlan, SynthParams};
use bpsfair::engine::{train_model, TrainConfig};
use bpsfair::losses::{soft_measure, DenominatorMode, FairnessTerm, MissingCell, Objective, SoftVariant};
use bpsfair::metrics::{bps_binary, bps_report, confusion, hard_measure, MeasureKind};
use bpsfair::nn::{Activation, NetworkConfig, NetworkState};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

/// Analytic and numeric derivatives agree when either the absolute or the
/// relative error is within tolerance.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_TOL || err <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// 16 samples with every (group, class) cell populated.
pub fn fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>, Vec<i64>) {
    let n = 16;
    let probs = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let groups: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    labels[..4].copy_from_slice(&[0, 0, 1, 1]);
    (probs, labels, groups)
}

pub fn all_variants() -> [SoftVariant; 2] {
    [SoftVariant::Continuous, SoftVariant::Sigmoided { beta: 1.0 }]
}

pub fn all_modes() -> [DenominatorMode; 2] {
    [DenominatorMode::AsWritten, DenominatorMode::Rate]
}

fn total(obj: &Objective, p: &[f64], l: &[u8], g: &[i64]) -> f64 {
    obj.evaluate(p, l, g, MissingCell::Fail, None).unwrap().total
}

/// Largest violation ratio (`err / allowed`) of `d objective / d prob`
/// against central differences; below 1 passes.
pub fn objective_fd_worst(obj: &Objective, probs: &[f64], labels: &[u8], groups: &[i64]) -> f64 {
    let mut grad = vec![0.0; probs.len()];
    obj.evaluate(probs, labels, groups, MissingCell::Fail, Some(&mut grad)).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..probs.len() {
        let mut p = probs.to_vec();
        p[i] = probs[i] + h;
        let up = total(obj, &p, labels, groups);
        p[i] = probs[i] - h;
        let down = total(obj, &p, labels, groups);
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs();
        let allowed = ABS_TOL.max(REL_TOL * grad[i].abs().max(fd.abs()));
        worst = worst.max(err / allowed);
    }
    worst
}

/// Every single-term objective (6 kinds x 2 variants x 2 modes, random
/// power and weight) plus random mixes of several terms.
pub fn objective_cases(seed: u64) -> Vec<Objective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mode in all_modes() {
        for kind in MeasureKind::ALL {
            for variant in all_variants() {
                let t = FairnessTerm::new(kind, variant, rng.random_range(0.05..1.0), rng.random_range(1..=4)).unwrap();
                out.push(Objective::new(vec![t], mode).unwrap());
            }
        }
        for _ in 0..8 {
            let mut terms = Vec::new();
            for kind in MeasureKind::ALL {
                if rng.random_bool(0.5) {
                    let variant = all_variants()[rng.random_range(0..2)];
                    terms.push(FairnessTerm::new(kind, variant, rng.random_range(0.05..1.0), rng.random_range(1..=4)).unwrap());
                }
            }
            out.push(Objective::new(terms, mode).unwrap());
        }
    }
    out.push(Objective::bce_only());
    out
}

pub fn check_objective_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for round in 0..5 {
        let (p, l, g) = fixture(&mut rng);
        for obj in objective_cases(round) {
            worst = worst.max(objective_fd_worst(&obj, &p, &l, &g));
            cases += 1;
        }
    }
    Outcome::new(worst <= 1.0, format!("{cases} objectives on 16-sample fixtures, worst err/tol {worst:.3}"))
}

/// Worst err/tol over every parameter of a small network with batch norm
/// and fixed dropout masks, differentiating the full objective.
pub fn network_fd_worst(activation: Activation, batch_norm: bool, obj: &Objective, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = NetworkConfig::two_layer(5, [6, 4], activation, seed);
    cfg.use_batch_norm = batch_norm;
    cfg.dropout_rate = 0.25;
    let mut state = NetworkState::init(&cfg).unwrap();
    // move batch-norm affine parameters off their identity init
    for layer in &mut state.params.hidden {
        layer.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        layer.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let (_, labels, groups) = fixture(&mut rng);
    let x = Array2::from_shape_simple_fn((16, 5), || rng.random_range(-2.0..2.0));
    let masks = state.sample_masks(16, &mut rng);

    let loss = |s: &NetworkState| -> f64 {
        let c = s.forward_train_with_masks(x.view(), masks.clone()).unwrap();
        total(obj, c.probs.as_slice().unwrap(), &labels, &groups)
    };
    let cache = state.forward_train_with_masks(x.view(), masks.clone()).unwrap();
    let mut d_probs = vec![0.0; 16];
    obj.evaluate(cache.probs.as_slice().unwrap(), &labels, &groups, MissingCell::Fail, Some(&mut d_probs))
        .unwrap();
    let grads = state.backward(&cache, &d_probs).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let n_slices = state.params.slices().len();
    for s in 0..n_slices {
        let len = state.params.slices()[s].len();
        for j in 0..len {
            let orig = state.params.slices()[s][j];
            state.params.slices_mut()[s][j] = orig + h;
            let up = loss(&state);
            state.params.slices_mut()[s][j] = orig - h;
            let down = loss(&state);
            state.params.slices_mut()[s][j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[k];
            let allowed = ABS_TOL.max(REL_TOL * a.abs().max(fd.abs()));
            worst = worst.max((a - fd).abs() / allowed);
            k += 1;
        }
    }
    worst
}

pub fn check_network_gradients() -> Outcome {
    let mixed = Objective::new(
        vec![
            "FPR:sigmoided:0.3:2".parse().unwrap(),
            "FNR:continuous:0.5:1".parse().unwrap(),
            "STP:continuous:0.2:3".parse().unwrap(),
        ],
        DenominatorMode::AsWritten,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (i, act) in [Activation::Relu, Activation::LeakyRelu].into_iter().enumerate() {
        for bn in [true, false] {
            for obj in [Objective::bce_only(), mixed.clone()] {
                worst = worst.max(network_fd_worst(act, bn, &obj, 10 + i as u64));
            }
        }
    }
    Outcome::new(worst <= 1.0, format!("network parameters through BN and dropout, worst err/tol {worst:.3}"))
}

/// One measure's per-group values and BPS counted sample by sample.
pub fn brute_force(kind: MeasureKind, preds: &[u8], labels: &[u8], groups: &[i64]) -> (BTreeMap<i64, Option<f64>>, Option<f64>) {
    let in_scope = |y: u8| match kind {
        MeasureKind::Fpr | MeasureKind::Tnr => y == 0,
        MeasureKind::Fnr | MeasureKind::Tpr => y == 1,
        MeasureKind::Acc | MeasureKind::Stp => true,
    };
    let hit = |c: u8, y: u8| match kind {
        MeasureKind::Fpr | MeasureKind::Tpr | MeasureKind::Stp => c == 1,
        MeasureKind::Fnr | MeasureKind::Tnr => c == 0,
        MeasureKind::Acc => c == y,
    };
    let rate = |select: &dyn Fn(usize) -> bool| -> Option<f64> {
        let (mut num, mut den) = (0usize, 0usize);
        for i in 0..preds.len() {
            if select(i) && in_scope(labels[i]) {
                den += 1;
                if hit(preds[i], labels[i]) {
                    num += 1;
                }
            }
        }
        (den > 0).then(|| num as f64 / den as f64)
    };
    let mut ids: Vec<i64> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let values: BTreeMap<i64, Option<f64>> = ids.iter().map(|&g| (g, rate(&|i| groups[i] == g))).collect();
    let pop = rate(&|_| true);
    let ratio = |a: f64, b: f64| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if hi == 0.0 {
            100.0
        } else {
            100.0 * lo / hi
        }
    };
    let all: Option<Vec<f64>> = values.values().copied().collect();
    let bps = match all {
        Some(v) if v.len() == 2 => Some(ratio(v[0], v[1])),
        Some(v) => pop.map(|p| v.iter().map(|&m| ratio(m, p) / v.len() as f64).sum()),
        None => None,
    };
    (values, bps)
}

/// Random prediction dump: 2 groups most of the time, sometimes 1 or 3-4.
pub fn random_dump(rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>, Vec<i64>) {
    let n = rng.random_range(1..=300);
    let n_groups = match rng.random_range(0..10) {
        0 => 1,
        1 => 3,
        2 => 4,
        _ => 2,
    };
    let pos_rate: f64 = rng.random_range(0.0..1.0);
    let preds = (0..n).map(|_| rng.random_bool(pos_rate) as u8).collect();
    let labels = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
    let groups = (0..n).map(|_| rng.random_range(0..n_groups) as i64 * 7 - 3).collect();
    (preds, labels, groups)
}

pub fn check_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (p, l, g) = random_dump(&mut rng);
        let report = bps_report(&p, &l, &g).unwrap();
        for kind in MeasureKind::ALL {
            let (values, bps) = brute_force(kind, &p, &l, &g);
            let e = report.get(kind);
            let got: BTreeMap<i64, Option<f64>> = e.per_group.iter().map(|v| (v.group, v.value)).collect();
            if got != values || e.bps != bps {
                mismatches += 1;
            }
        }
    }
    let worst = saturated_rate_worst();
    Outcome::new(
        mismatches == 0 && worst <= 1e-9,
        format!("1000 dumps: {mismatches} mismatching measures; saturated Rate-mode max |soft - hard| {worst:.2e}"),
    )
}

/// Max gap between Rate-mode soft measures on saturated outputs and the
/// hard measures of the thresholded predictions.
pub fn saturated_rate_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(8..120);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let groups: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
        labels[..4].copy_from_slice(&[0, 0, 1, 1]);
        let preds: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        // within 1e-12 of the hard label, and exactly on it
        let near: Vec<f64> = preds.iter().map(|&c| if c == 1 { 1.0 - 1e-12 } else { 1e-12 }).collect();
        let exact: Vec<f64> = preds.iter().map(|&c| c as f64).collect();
        let counts = confusion(&preds, &labels, &groups).unwrap();
        for kind in MeasureKind::ALL {
            for c in &counts {
                let mask: Vec<bool> = groups.iter().map(|&x| x == c.group).collect();
                let hard = hard_measure(kind, c).unwrap();
                for probs in [&near, &exact] {
                    let soft = soft_measure(kind, SoftVariant::Continuous, DenominatorMode::Rate, probs, &labels, &mask).unwrap();
                    worst = worst.max((soft - hard).abs());
                }
            }
        }
    }
    worst
}

/// Trains on a small synthetic problem with all weights zero and with no
/// terms at all; everything must agree bit for bit.
pub fn check_reduction_identity() -> Outcome {
    let table = synthesize_biased(&SynthParams { n: 2000, seed: 3, ..Default::default() }).unwrap();
    let plan = SplitPlan { iterations: 1, ..Default::default() };
    let split = mc_split(table.len(), &plan, 0).unwrap();
    let enc = fit_encoder(&table, &split.train).unwrap();
    let all: Vec<usize> = (0..table.len()).collect();
    let ds = apply_encoder(&table, &all, &enc).unwrap();
    let mut base = TrainConfig::new(NetworkConfig::two_layer(ds.x.ncols(), [16, 16], Activation::Relu, 9));
    base.epochs = 8;
    base.batch_size = 64;

    let zero_terms: Vec<FairnessTerm> = MeasureKind::ALL
        .iter()
        .zip([1, 2, 3, 4, 1, 2])
        .flat_map(|(&k, pow)| {
            all_variants().map(move |v| FairnessTerm::new(k, v, 0.0, pow).unwrap())
        })
        .collect();
    let mut identical = true;
    for mode in all_modes() {
        let mut bce_cfg = base.clone();
        bce_cfg.objective = Objective::bce_only();
        let mut zero_cfg = base.clone();
        zero_cfg.objective = Objective::new(zero_terms.clone(), mode).unwrap();
        let a = train_model(&ds, &split, &bce_cfg).unwrap();
        let b = train_model(&ds, &split, &zero_cfg).unwrap();
        let bits = |s: &NetworkState| -> Vec<u64> {
            let mut v: Vec<u64> = s.params.slices().concat().iter().map(|x| x.to_bits()).collect();
            for r in &s.running {
                v.extend(r.mean.iter().chain(r.var.iter()).map(|x| x.to_bits()));
            }
            v
        };
        identical &= bits(&a.state) == bits(&b.state)
            && a.result.accuracy.to_bits() == b.result.accuracy.to_bits()
            && a.result.bce.to_bits() == b.result.bce.to_bits()
            && a.result.best_epoch == b.result.best_epoch
            && a.result.report == b.result.report;
    }
    Outcome::new(
        identical,
        format!("12 zero-weight terms in both denominator modes vs cross-entropy only: {}", if identical { "bit-identical" } else { "differ" }),
    )
}

pub fn check_golden_values() -> Outcome {
    let a = bps_binary(0.0589, 0.0628);
    let b = bps_binary(0.4431, 0.5105);
    Outcome::new(
        (a - 93.79).abs() <= 0.01 && (b - 86.80).abs() <= 0.01,
        format!("bps_binary(0.0589, 0.0628) = {a:.4}, bps_binary(0.4431, 0.5105) = {b:.4}"),
    )
}

//! Shared helpers for integration tests: a central-difference gradient
//! oracle, random inputs, small configurations and the toy pipeline.

#![allow(dead_code)]

use mcod::encoder::EncoderConfig;
use mcod::io::synthetic::{two_pattern, BLOB_CLASS};
use mcod::io::{mix_dataset, MixSpec, MixedDataset};
use mcod::metrics::{self, MetricsReport};
use mcod::numeric::{AdamConfig, Tape, Tensor, Var};
use mcod::trainer::{EpochLog, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = random_tensor(rng, &[rows, cols], 1.0);
    for i in 0..rows {
        let row = &mut t.data_mut()[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    t
}

pub fn random_probability_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(1e-3..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Largest relative error between tape gradients and central differences
/// of `build` with respect to every entry of every input.
pub fn gradient_error(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> mcod::Result<Var>,
) -> f64 {
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).item().unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for (j, &x) in input.data().iter().enumerate() {
            probe[k].data_mut()[j] = x + FD_STEP;
            let up = eval(&probe);
            probe[k].data_mut()[j] = x - FD_STEP;
            let down = eval(&probe);
            probe[k].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            // A NaN must not be swallowed by `max`.
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
    }
    worst
}

pub fn tiny_encoder(seed: u64) -> EncoderConfig {
    EncoderConfig {
        input_shape: [8, 8, 1],
        conv_channels: vec![4],
        feature_dim: 8,
        embed_hidden: 8,
        embed_dim: 6,
        prototypes: 4,
        init_seed: seed,
    }
}

/// A few-second configuration on 8×8 images.
pub fn tiny_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_warmup: 2,
        epochs_memory: 2,
        batch_size: 8,
        queue_capacity: 24,
        momentum: 0.9,
        seed,
        optimizer: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        encoder: tiny_encoder(seed),
        ..TrainConfig::default()
    }
}

pub fn tiny_images(n: usize, seed: u64) -> mcod::image::ImageSet {
    let mut r = rng(seed);
    let px = (0..n * 64).map(|_| r.random_range(0.0..=1.0)).collect();
    mcod::image::ImageSet::new([8, 8, 1], px).unwrap()
}

/// Training settings used for the 16×16 two-pattern experiments.
pub fn synthetic_train_config(seed: u64, forgetting: bool) -> TrainConfig {
    TrainConfig {
        epochs_warmup: 20,
        epochs_memory: 20,
        batch_size: 64,
        queue_capacity: 512,
        momentum: 0.99,
        seed,
        forgetting,
        optimizer: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        encoder: EncoderConfig {
            input_shape: [16, 16, 1],
            conv_channels: vec![8, 16],
            feature_dim: 32,
            embed_hidden: 32,
            embed_dim: 16,
            prototypes: 5,
            init_seed: seed,
        },
        ..TrainConfig::default()
    }
}

/// 900 blob inliers mixed with stripe outliers at proportion `p`.
pub fn synthetic_mixture(p: f64, seed: u64) -> MixedDataset {
    let full = two_pattern(900, 500, seed).unwrap();
    let spec = MixSpec {
        inlier_class: BLOB_CLASS,
        p,
        seed,
        max_inliers: None,
    };
    mix_dataset(&full, &spec).unwrap()
}

/// Trains on `data` and evaluates on the same mixture.
pub fn train_and_evaluate(config: TrainConfig, data: &MixedDataset) -> (TrainState, Vec<EpochLog>, MetricsReport) {
    let mut state = TrainState::new(config).unwrap();
    let logs = state.run(&data.images, |_, _| Ok(())).unwrap();
    let mut records = metrics::score(&state, &data.images).unwrap();
    for (r, &l) in records.iter_mut().zip(&data.truth.labels) {
        r.label = Some(l);
    }
    let report = metrics::evaluate(&records).unwrap();
    (state, logs, report)
}

/// Gradient-check errors of every loss and of the full objective for one
/// random draw at small sizes (`N ≤ 8`, `K ≤ 5`, `d ≤ 16`).
pub fn loss_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use mcod::encoder::Tower;
    use mcod::losses;
    use mcod::memory::{AssignmentWeights, MemoryBank, NoiseState};

    let mut r = rng(seed);
    let n = r.random_range(2..=8);
    let k = r.random_range(2..=5);
    let d = r.random_range(2..=16);
    let q = r.random_range(0..=12);
    let tau_z = r.random_range(0.2..2.0);
    let tau_c = r.random_range(0.2..2.0);
    let queue = random_unit_rows(&mut r, q, d);
    let mut out = Vec::new();

    // Instance loss through row normalization of raw query and key vectors.
    let raw_q = random_tensor(&mut r, &[n, d], 1.0);
    let raw_k = random_tensor(&mut r, &[n, d], 1.0);
    let err = gradient_error(&[raw_q, raw_k], |t, v| {
        let zq = t.normalize_rows(v[0])?;
        let zk = t.normalize_rows(v[1])?;
        losses::instance_infonce(t, zq, zk, &queue, tau_z)
    });
    out.push(("instance", err));

    let logits_q = random_tensor(&mut r, &[n, k], 2.0);
    let logits_k = random_tensor(&mut r, &[n, k], 2.0);
    let err = gradient_error(&[logits_q.clone(), logits_k], |t, v| {
        let cq = t.softmax_rows(v[0])?;
        let ck = t.softmax_rows(v[1])?;
        losses::cluster_infonce(t, cq, ck, tau_c)
    });
    out.push(("cluster", err));

    let err = gradient_error(std::slice::from_ref(&logits_q), |t, v| {
        let c = t.softmax_rows(v[0])?;
        losses::balance_regularizer(t, c)
    });
    out.push(("regularizer", err));

    let prototypes = random_tensor(&mut r, &[k, d], 1.0);
    let weights = if seed.is_multiple_of(2) {
        AssignmentWeights::Softmax
    } else {
        AssignmentWeights::Direct
    };
    let bank = MemoryBank::restore(prototypes, vec![0; k], weights, true, NoiseState { seed, word_pos: 0 }).unwrap();
    let features = random_tensor(&mut r, &[n, d], 1.0);
    let err = gradient_error(&[features, logits_q], |t, v| {
        let c = t.softmax_rows(v[1])?;
        let read = bank.read_soft_on_tape(t, c)?;
        losses::consistency(t, v[0], read)
    });
    out.push(("consistency", err));

    // Full objective through a small encoder, with respect to every parameter.
    let enc = mcod::encoder::EncoderConfig {
        input_shape: [4, 4, 1],
        conv_channels: vec![6],
        feature_dim: d.max(4),
        embed_hidden: 10,
        embed_dim: d.min(6),
        prototypes: k,
        init_seed: seed,
    };
    let tower = Tower::init(&enc).unwrap();
    let images = Tensor::new(
        &[n, 4, 4, 1],
        (0..n * 16).map(|_| r.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let zk = random_unit_rows(&mut r, n, enc.embed_dim);
    let ck = random_probability_rows(&mut r, n, k);
    let neg = random_unit_rows(&mut r, q, enc.embed_dim);
    let bank = MemoryBank::restore(
        random_tensor(&mut r, &[k, enc.feature_dim], 1.0),
        vec![0; k],
        weights,
        true,
        NoiseState { seed, word_pos: 0 },
    )
    .unwrap();
    let lambda = r.random_range(0.0..0.5);
    let err = gradient_error(tower.params().tensors(), |t, params| {
        let o = tower.forward(t, params, &images)?;
        let zk = t.constant(zk.clone());
        let ck = t.constant(ck.clone());
        let l_z = losses::instance_infonce(t, o.embeddings, zk, &neg, tau_z)?;
        let l_c = losses::cluster_infonce(t, o.relevancy, ck, tau_c)?;
        let l_r = losses::balance_regularizer(t, o.relevancy)?;
        let read = bank.read_soft_on_tape(t, o.relevancy)?;
        let l_m = losses::consistency(t, o.features, read)?;
        losses::weighted_total(t, l_z, l_c, Some(l_m), l_r, lambda)
    });
    out.push(("total", err));
    out
}

/// Outcome of a randomized check: a summary on success, the first
/// counterexample on failure.
pub type Check = Result<String, String>;

/// Memory-bank invariants over random writes and forgetting calls.
pub fn memory_invariants(writes: usize, seed: u64) -> Check {
    use mcod::memory::{support_counts, AssignmentWeights, MemoryBank, NoiseState};

    let mut r = rng(seed);
    for t in 0..writes {
        let k = r.random_range(1..=6);
        let d = r.random_range(1..=8);
        let q = r.random_range(1..=40);
        let weights = if t % 2 == 0 {
            AssignmentWeights::Softmax
        } else {
            AssignmentWeights::Direct
        };
        let f = random_tensor(&mut r, &[q, d], 3.0);
        let c = random_probability_rows(&mut r, q, k);
        let mut bank = MemoryBank::new(k, d, weights, t as u64);
        bank.write(&f, &c).map_err(|e| format!("write {t}: {e}"))?;
        for dim in 0..d {
            let col = (0..q).map(|i| f.data()[i * d + dim]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            for j in 0..k {
                let m = bank.prototypes().data()[j * d + dim];
                // Allow for rounding in the weighted sum.
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                if m < lo - slack || m > hi + slack {
                    return Err(format!("write {t}: m[{j}][{dim}] = {m} outside [{lo}, {hi}]"));
                }
            }
        }
        let counts = support_counts(&c).map_err(|e| e.to_string())?;
        if counts.iter().sum::<usize>() != q {
            return Err(format!("write {t}: support counts {counts:?} do not sum to {q}"));
        }
        let before = bank.prototypes().clone();
        let mut full = vec![0; k];
        full[t % k] = q;
        bank.forget(&full, q).map_err(|e| e.to_string())?;
        let j = t % k;
        if bank.prototypes().row(j) != before.row(j) {
            return Err(format!("write {t}: fully supported prototype {j} changed"));
        }
    }

    let draws = 10_000;
    let mut worst: f64 = 0.0;
    for (counts, queue) in [(vec![3usize, 1], 4usize), (vec![2, 2], 4), (vec![4, 0], 4)] {
        let zeros = Tensor::zeros(&[2, draws]);
        let mut bank = MemoryBank::restore(
            zeros,
            vec![0, 0],
            AssignmentWeights::Softmax,
            true,
            NoiseState { seed, word_pos: 0 },
        )
        .unwrap();
        bank.forget(&counts, queue).unwrap();
        for (j, &n) in counts.iter().enumerate() {
            let sigma = 1.0 - n as f64 / queue as f64;
            let row = bank.prototypes().row(j);
            if sigma == 0.0 {
                if row.iter().any(|&v| v != 0.0) {
                    return Err("zero-sigma prototype was perturbed".into());
                }
                continue;
            }
            let mean = row.iter().sum::<f64>() / draws as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let rel = (var.sqrt() - sigma).abs() / sigma;
            if [0.25, 0.5, 1.0].contains(&sigma) {
                worst = worst.max(rel);
            }
            if rel > 0.05 {
                return Err(format!("noise std {} vs sigma {sigma}", var.sqrt()));
            }
        }
    }
    Ok(format!("{writes} writes; worst noise std deviation {:.2}%", worst * 100.0))
}

/// Random enqueue sequences against a plain list model.
pub fn queue_model_check(ops: usize, seed: u64) -> Check {
    use mcod::encoder::BatchFeatures;
    use mcod::queue::{ContrastQueue, QueueDims, QueueEntry};

    let mut r = rng(seed);
    let dims = QueueDims {
        feature: 2,
        embedding: 3,
        relevancy: 2,
    };
    let mut done = 0;
    let mut next_id = 0.0;
    while done < ops {
        let capacity = r.random_range(1..=64);
        let mut queue = ContrastQueue::new(capacity, dims).unwrap();
        let mut model: Vec<f64> = Vec::new();
        let steps = r.random_range(1..=200).min(ops - done);
        for _ in 0..steps {
            let batch = r.random_range(1..=capacity + 5);
            let ids: Vec<f64> = (0..batch).map(|i| next_id + i as f64).collect();
            next_id += batch as f64;
            if r.random_bool(0.3) {
                for &id in &ids {
                    queue
                        .push(QueueEntry {
                            feature: vec![id, -id],
                            embedding: vec![id, 0.0, 1.0],
                            relevancy: vec![id, 2.0 * id],
                        })
                        .unwrap();
                }
            } else {
                let rows = |w: usize, f: &dyn Fn(f64) -> Vec<f64>| {
                    Tensor::matrix(batch, w, ids.iter().flat_map(|&id| f(id)).collect()).unwrap()
                };
                let b = BatchFeatures {
                    features: rows(2, &|id| vec![id, -id]),
                    embeddings: rows(3, &|id| vec![id, 0.0, 1.0]),
                    relevancy: rows(2, &|id| vec![id, 2.0 * id]),
                };
                queue.enqueue(&b).unwrap();
            }
            model.extend(&ids);
            let start = model.len().saturating_sub(capacity);
            let expected = &model[start..];
            let got: Vec<f64> = queue.entries().map(|e| e.feature[0]).collect();
            if got != expected {
                return Err(format!("capacity {capacity}: queue {got:?} vs model {expected:?}"));
            }
            if queue.entries().any(|e| e.feature[1] != -e.feature[0] || e.relevancy[1] != 2.0 * e.relevancy[0]) {
                return Err("entry fields were mixed up".into());
            }
            if queue.inserted() != model.len() as u64 || queue.len() > capacity {
                return Err(format!("capacity {capacity}: counters disagree"));
            }
            done += 1;
        }
    }
    Ok(format!("{ops} operations agree with the list model"))
}

/// `L_r ≥ N/K` on random probability matrices, equality on uniform rows.
pub fn regularizer_bound(trials: usize, seed: u64) -> Check {
    use mcod::losses::balance_regularizer_value;

    let mut r = rng(seed);
    let mut tightest = f64::INFINITY;
    for t in 0..trials {
        let n = r.random_range(2..=32);
        let k = r.random_range(2..=10);
        let c = random_probability_rows(&mut r, n, k);
        let value = balance_regularizer_value(&c).unwrap();
        let bound = n as f64 / k as f64;
        if value < bound - 1e-10 {
            return Err(format!("trial {t}: L_r = {value} < N/K = {bound}"));
        }
        tightest = tightest.min(value - bound);
        let uniform = Tensor::matrix(n, k, vec![1.0 / k as f64; n * k]).unwrap();
        let u = balance_regularizer_value(&uniform).unwrap();
        if (u - bound).abs() > 1e-10 {
            return Err(format!("trial {t}: uniform L_r = {u} vs N/K = {bound}"));
        }
    }
    Ok(format!("{trials} matrices; smallest gap above N/K {tightest:.3e}"))
}

/// Pairwise AUROC oracle: mean over outlier–inlier pairs of 1 / 0.5 / 0.
pub fn pairwise_auroc(records: &[mcod::metrics::ScoreRecord]) -> f64 {
    use mcod::metrics::Label;
    let pos: Vec<f64> = records.iter().filter(|r| r.label == Some(Label::Outlier)).map(|r| r.score).collect();
    let neg: Vec<f64> = records.iter().filter(|r| r.label == Some(Label::Inlier)).map(|r| r.score).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Exact average precision: for each positive, count by brute force the
/// positives ranked at or above it, using rational arithmetic.
pub fn brute_force_ap(
    records: &[mcod::metrics::ScoreRecord],
    positive: mcod::metrics::Label,
) -> num_rational::Ratio<i64> {
    use mcod::metrics::Label;
    use num_rational::Ratio;
    // `a` ranks above `b`.
    let above = |a: &mcod::metrics::ScoreRecord, b: &mcod::metrics::ScoreRecord| {
        let better = match positive {
            Label::Outlier => a.score > b.score,
            Label::Inlier => a.score < b.score,
        };
        better || (a.score == b.score && a.id < b.id)
    };
    let positives: Vec<_> = records.iter().filter(|r| r.label == Some(positive)).collect();
    let mut total = Ratio::from_integer(0);
    for p in &positives {
        let rank = 1 + records.iter().filter(|o| above(o, p)).count() as i64;
        let hits = 1 + positives.iter().filter(|o| above(o, p)).count() as i64;
        total += Ratio::new(hits, rank);
    }
    total / positives.len() as i64
}

fn random_records(r: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<mcod::metrics::ScoreRecord> {
    use mcod::metrics::{Label, ScoreRecord};
    let mut ids: Vec<u64> = (0..n as u64).collect();
    use rand::seq::SliceRandom;
    ids.shuffle(r);
    (0..n)
        .map(|i| {
            let label = if i == 0 {
                Label::Outlier
            } else if i == 1 {
                Label::Inlier
            } else if r.random_bool(0.4) {
                Label::Outlier
            } else {
                Label::Inlier
            };
            let score = if ties {
                r.random_range(0..4) as f64 * 0.25
            } else {
                r.random_range(0.0..10.0)
            };
            ScoreRecord {
                id: ids[i],
                score,
                label: Some(label),
            }
        })
        .collect()
}

/// AUROC against the pairwise oracle and AP against exact enumeration.
pub fn metric_oracles(instances: usize, seed: u64) -> Check {
    use mcod::metrics::{aupr, auroc, Label};
    let mut r = rng(seed);
    let mut worst_auc: f64 = 0.0;
    let mut worst_ap: f64 = 0.0;
    for t in 0..instances {
        let n = r.random_range(2..=30);
        let recs = random_records(&mut r, n, t % 3 == 0);
        let ours = auroc(&recs).map_err(|e| e.to_string())?;
        let oracle = pairwise_auroc(&recs);
        worst_auc = worst_auc.max((ours - oracle).abs());
        if (ours - oracle).abs() > 1e-12 {
            return Err(format!("instance {t}: auroc {ours} vs pairwise {oracle}"));
        }
        if n <= 12 {
            for positive in [Label::Outlier, Label::Inlier] {
                let ours = aupr(&recs, positive).map_err(|e| e.to_string())?;
                let exact = brute_force_ap(&recs, positive);
                let exact = *exact.numer() as f64 / *exact.denom() as f64;
                worst_ap = worst_ap.max((ours - exact).abs());
                if (ours - exact).abs() > 1e-12 {
                    return Err(format!("instance {t}: ap {ours} vs exact {exact}"));
                }
            }
        }
    }
    Ok(format!(
        "{instances} instances; max |auroc - oracle| {worst_auc:.1e}, max |ap - exact| {worst_ap:.1e}"
    ))
}

/// Scores `data` with labels attached, as written to a score file.
pub fn score_file(state: &TrainState, data: &MixedDataset) -> Vec<u8> {
    let mut records = metrics::score(state, &data.images).unwrap();
    for (r, &l) in records.iter_mut().zip(&data.truth.labels) {
        r.label = Some(l);
    }
    let mut buf = Vec::new();
    mcod::io::csv::write_scores(&mut buf, &records).unwrap();
    buf
}

fn loss_log_bytes(logs: &[EpochLog]) -> Vec<u8> {
    let mut buf = Vec::new();
    mcod::io::csv::write_loss_log(&mut buf, logs).unwrap();
    buf
}

/// Two independent runs agree on loss logs, checkpoints and score files.
pub fn determinism_check(config: &TrainConfig, data: &MixedDataset) -> Check {
    let run = || {
        let mut state = TrainState::new(config.clone()).unwrap();
        let logs = state.run(&data.images, |_, _| Ok(())).unwrap();
        let ckpt = mcod::io::checkpoint::encode_checkpoint(&state, None).unwrap();
        (loss_log_bytes(&logs), ckpt, score_file(&state, data))
    };
    let (a, b) = (run(), run());
    if a.0 != b.0 {
        return Err("loss logs differ".into());
    }
    if a.1 != b.1 {
        return Err("checkpoints differ".into());
    }
    if a.2 != b.2 {
        return Err("score files differ".into());
    }
    Ok(format!("loss log, {}-byte checkpoint and score file identical", a.1.len()))
}

/// Saving after every epoch, reloading and finishing the run reproduces the
/// uninterrupted run bit for bit.
pub fn resume_check(config: &TrainConfig, data: &MixedDataset) -> Check {
    use mcod::io::checkpoint::{decode_checkpoint, encode_checkpoint};

    let mut saved = Vec::new();
    let mut state = TrainState::new(config.clone()).unwrap();
    saved.push(encode_checkpoint(&state, None).unwrap());
    let full = state
        .run(&data.images, |_, s| {
            saved.push(encode_checkpoint(s, None)?);
            Ok(())
        })
        .unwrap();
    let final_bytes = encode_checkpoint(&state, None).unwrap();

    for (e, bytes) in saved.iter().enumerate() {
        let mut resumed = decode_checkpoint(bytes).map_err(|err| format!("epoch {e}: {err}"))?.state;
        if resumed.epoch != e {
            return Err(format!("checkpoint {e} reports epoch {}", resumed.epoch));
        }
        let rest = resumed.run(&data.images, |_, _| Ok(())).unwrap();
        if loss_log_bytes(&rest) != loss_log_bytes(&full[e..]) {
            return Err(format!("losses after resuming at epoch {e} differ"));
        }
        if encode_checkpoint(&resumed, None).unwrap() != final_bytes {
            return Err(format!("final state after resuming at epoch {e} differs"));
        }
    }
    Ok(format!("resume at each of epochs 0..={} matches", saved.len() - 1))
}

/// Warm-up leaves the memory bank exactly as constructed and `l_m` at zero
/// on every step.
pub fn warmup_check(config: &TrainConfig, data: &mcod::image::ImageSet) -> Check {
    let mut state = TrainState::new(config.clone()).unwrap();
    let hash = |s: &TrainState| {
        let mut h = crc32fast::Hasher::new();
        for v in s.memory.prototypes().data() {
            h.update(&v.to_bits().to_le_bytes());
        }
        for &n in s.memory.support() {
            h.update(&(n as u64).to_le_bytes());
        }
        let noise = s.memory.noise_state();
        h.update(&noise.seed.to_le_bytes());
        h.update(&noise.word_pos.to_le_bytes());
        h.update(&[s.memory.is_initialized() as u8]);
        h.finalize()
    };
    let before = hash(&state);
    let mut steps = 0;
    while state.epoch < config.epochs_warmup {
        let order = state.epoch_order(state.epoch, data.len());
        for batch in order.chunks_exact(config.batch_size) {
            let report = state.train_step(data, batch).map_err(|e| e.to_string())?;
            if report.l_m != 0.0 {
                return Err(format!("step {steps}: l_m = {}", report.l_m));
            }
            if hash(&state) != before {
                return Err(format!("step {steps}: memory bank changed"));
            }
            steps += 1;
        }
        state.epoch += 1;
    }
    Ok(format!("{steps} steps, bank hash {before:08x} unchanged"))
}

/// 40 random 8×8 inliers plus 10 outliers, for the tiny configuration.
pub fn tiny_mixture(seed: u64) -> MixedDataset {
    let labels = (0..80).map(|i| i % 2).collect();
    let full = mcod::io::LabeledImageSet::new(tiny_images(80, seed), labels, "tiny").unwrap();
    let spec = MixSpec {
        inlier_class: 0,
        p: 0.2,
        seed,
        max_inliers: None,
    };
    mix_dataset(&full, &spec).unwrap()
}

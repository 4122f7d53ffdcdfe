//! Two-phase training loop.
//!
//! Every step augments a pair per sample, encodes the query view on a tape
//! and the key view without one, and minimizes `l_z + l_c + λ·l_r`. Once the
//! warm-up epochs are over, `l_m` joins the objective and the memory bank is
//! rewritten (and optionally perturbed) from the queue after every step.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::encoder::{EncoderConfig, Tower};
use crate::error::{ensure, Error, Result};
use crate::image::{self, ImageSet};
use crate::losses::{self, LossReport};
use crate::memory::{self, AssignmentWeights, MemoryBank};
use crate::numeric::{AdamConfig, AdamState, Tape};
use crate::queue::{ContrastQueue, QueueDims};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_warmup: usize,
    pub epochs_memory: usize,
    pub batch_size: usize,
    pub tau_z: f64,
    pub tau_c: f64,
    pub lambda: f64,
    pub queue_capacity: usize,
    pub momentum: f64,
    pub seed: u64,
    pub forgetting: bool,
    pub assignment: AssignmentWeights,
    pub optimizer: AdamConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_warmup: 100,
            epochs_memory: 100,
            batch_size: 256,
            tau_z: 1.0,
            tau_c: 1.0,
            lambda: 0.05,
            queue_capacity: 4096,
            momentum: 0.999,
            seed: 0,
            forgetting: true,
            assignment: AssignmentWeights::Softmax,
            optimizer: AdamConfig::default(),
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, Config, "batch_size must be at least 1");
        ensure!(self.queue_capacity >= 1, Config, "queue_capacity must be at least 1");
        ensure!(
            self.epochs_warmup + self.epochs_memory >= 1,
            Config,
            "at least one training epoch is required"
        );
        for (name, tau) in [("tau_z", self.tau_z), ("tau_c", self.tau_c)] {
            ensure!(tau > 0.0 && tau.is_finite(), Config, "{name} = {tau} must be positive");
        }
        ensure!(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            Config,
            "lambda = {} must be non-negative",
            self.lambda
        );
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Config,
            "momentum = {} must lie in [0, 1)",
            self.momentum
        );
        let o = &self.optimizer;
        ensure!(
            o.lr >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0,
            Config,
            "invalid optimizer settings {o:?}"
        );
        ensure!(o.weight_decay >= 0.0, Config, "weight_decay must be non-negative");
        for (name, seed) in [("seed", self.seed), ("encoder.init_seed", self.encoder.init_seed)] {
            ensure!(seed <= i64::MAX as u64, Config, "{name} = {seed} exceeds {}", i64::MAX);
        }
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augment.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_warmup + self.epochs_memory
    }
}

/// Mean losses over one epoch's steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub losses: LossReport,
}

/// Everything needed to continue training or to score: both towers, the
/// optimizer, the queue and the memory bank, plus progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub query: Tower,
    pub key: Tower,
    pub optimizer: AdamState,
    pub queue: ContrastQueue,
    pub memory: MemoryBank,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

/// A saved [`TrainState`].
pub type Checkpoint = TrainState;

/// Seed for a named sub-generator of the run.
fn derived_seed(seed: u64, purpose: u64) -> u64 {
    let key = augment::sample_key(seed, u64::MAX, purpose);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

const NOISE_PURPOSE: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

impl TrainState {
    /// Fresh state: the key tower starts as a copy of the query tower.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let query = Tower::init(&config.encoder)?;
        let key = query.clone();
        let optimizer = AdamState::new(config.optimizer.clone(), query.params().tensors());
        let enc = &config.encoder;
        let queue = ContrastQueue::new(
            config.queue_capacity,
            QueueDims {
                feature: enc.feature_dim,
                embedding: enc.embed_dim,
                relevancy: enc.prototypes,
            },
        )?;
        let memory = MemoryBank::new(
            enc.prototypes,
            enc.feature_dim,
            config.assignment,
            derived_seed(config.seed, NOISE_PURPOSE),
        );
        Ok(Self {
            config,
            query,
            key,
            optimizer,
            queue,
            memory,
            epoch: 0,
            step: 0,
        })
    }

    /// Whether the epoch in progress uses the memory module.
    pub fn in_memory_phase(&self) -> bool {
        self.epoch >= self.config.epochs_warmup
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    /// One optimizer step on the samples `indices` of `data`.
    pub fn train_step(&mut self, data: &ImageSet, indices: &[usize]) -> Result<LossReport> {
        ensure!(!indices.is_empty(), Contract, "empty minibatch");
        ensure!(
            data.shape() == self.config.encoder.input_shape,
            Contract,
            "images of shape {:?}, encoder expects {:?}",
            data.shape(),
            self.config.encoder.input_shape
        );
        let cfg = &self.config;

        // Step 1: augmented pairs.
        let mut views_q = Vec::with_capacity(indices.len());
        let mut views_k = Vec::with_capacity(indices.len());
        for &i in indices {
            ensure!(i < data.len(), Contract, "sample index {i} out of range");
            let (q, k) = augment::make_pair(&cfg.augment, &data.image(i), cfg.seed, self.epoch as u64, i as u64)?;
            views_q.push(q);
            views_k.push(k);
        }
        let xq = image::stack(&views_q)?;
        let xk = image::stack(&views_k)?;

        // Step 2: both towers.
        let mut tape = Tape::new();
        let params = self.query.register(&mut tape, true);
        let out_q = self.query.forward(&mut tape, &params, &xq)?;
        let out_k = self.key.encode(&xk)?;

        // Step 3: contrastive losses against the queue as it was before this batch.
        let negatives = self.queue.snapshot().embeddings;
        let zk = tape.constant(out_k.embeddings.clone());
        let ck = tape.constant(out_k.relevancy.clone());
        let l_z = losses::instance_infonce(&mut tape, out_q.embeddings, zk, &negatives, cfg.tau_z)?;
        let l_c = losses::cluster_infonce(&mut tape, out_q.relevancy, ck, cfg.tau_c)?;
        let l_r = losses::balance_regularizer(&mut tape, out_q.relevancy)?;

        self.queue.enqueue(&out_k)?;
        let snapshot = self.queue.snapshot();

        // Steps 4-5: memory read, consistency loss, write and forget.
        let l_m = if self.in_memory_phase() {
            if !self.memory.is_initialized() {
                self.memory.write(&snapshot.features, &snapshot.relevancy)?;
            }
            let read = self.memory.read_soft_on_tape(&mut tape, out_q.relevancy)?;
            let l_m = losses::consistency(&mut tape, out_q.features, read)?;
            self.memory.write(&snapshot.features, &snapshot.relevancy)?;
            let counts = memory::support_counts(&snapshot.relevancy)?;
            if cfg.forgetting {
                self.memory.forget(&counts, snapshot.len())?;
            } else {
                self.memory.record_support(&counts, snapshot.len())?;
            }
            Some(l_m)
        } else {
            None
        };

        // Step 6: update both towers.
        let total = losses::weighted_total(&mut tape, l_z, l_c, l_m, l_r, cfg.lambda)?;
        let report = LossReport::new(
            tape.value(l_z).item()?,
            tape.value(l_c).item()?,
            match l_m {
                Some(v) => tape.value(v).item()?,
                None => 0.0,
            },
            tape.value(l_r).item()?,
            cfg.lambda,
        )?;
        tape.backward(total)?;
        let grads: Vec<&[f64]> = params
            .iter()
            .map(|&p| tape.grad(p).expect("query parameters are leaves"))
            .collect();
        self.optimizer.step(self.query.params_mut().tensors_mut(), &grads)?;
        self.key.momentum_update(&self.query, cfg.momentum)?;
        self.step += 1;
        Ok(report)
    }

    /// Sample order for `epoch`: a seeded shuffle of `0..n`.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng: ChaCha8Rng = augment::sample_rng(self.config.seed, epoch as u64, u64::MAX, SHUFFLE_STREAM);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs the next epoch; the last partial batch is dropped.
    pub fn train_epoch(&mut self, data: &ImageSet) -> Result<EpochLog> {
        ensure!(!self.is_finished(), State, "all {} epochs are done", self.epoch);
        let batch = self.config.batch_size;
        if data.len() < batch {
            return Err(Error::Config(format!(
                "dataset of {} images is smaller than one batch of {batch}",
                data.len()
            )));
        }
        let order = self.epoch_order(self.epoch, data.len());
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks_exact(batch) {
            let r = self.train_step(data, chunk)?;
            for (s, v) in sums.iter_mut().zip([r.l_z, r.l_c, r.l_m, r.l_r]) {
                *s += v;
            }
            steps += 1;
        }
        let m = steps as f64;
        let losses = LossReport::new(sums[0] / m, sums[1] / m, sums[2] / m, sums[3] / m, self.config.lambda)?;
        let log = EpochLog {
            epoch: self.epoch,
            losses,
        };
        self.epoch += 1;
        log::info!(
            "epoch {} l_z={:.5} l_c={:.5} l_m={:.5} l_r={:.5} total={:.5}",
            log.epoch,
            losses.l_z,
            losses.l_c,
            losses.l_m,
            losses.l_r,
            losses.total
        );
        Ok(log)
    }

    /// Trains until every configured epoch is done, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        data: &ImageSet,
        mut on_epoch: impl FnMut(&EpochLog, &TrainState) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.is_finished() {
            let log = self.train_epoch(data)?;
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains from scratch and returns the final state with the per-epoch log.
pub fn train(config: &TrainConfig, data: &ImageSet) -> Result<(Checkpoint, Vec<EpochLog>)> {
    ensure!(!data.is_empty(), Config, "empty dataset");
    let mut state = TrainState::new(config.clone())?;
    let logs = state.run(data, |_, _| Ok(()))?;
    Ok((state, logs))
}

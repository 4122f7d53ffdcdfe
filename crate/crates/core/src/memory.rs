//! Prototype memory: soft/hard reading, writing from the queue, support
//! counting and noise-based forgetting.
//!
//! Prototypes are buffers, not parameters. They change only through
//! [`MemoryBank::write`] and [`MemoryBank::forget`]; on a tape they enter as
//! constants, so gradients of the consistency loss reach the features and the
//! relevancy rows but never `M`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numeric::{self, Tape, Tensor, Var};

/// How relevancy rows are turned into mixing weights for reading and writing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentWeights {
    /// Apply a softmax to the (already probabilistic) relevancy values:
    /// over prototypes when reading, over queue rows when writing.
    #[default]
    Softmax,
    /// Use relevancy values directly: rows as-is when reading, each column
    /// divided by its sum when writing.
    Direct,
}

/// Position of the forgetting noise generator, enough to resume it exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoiseState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    prototypes: Tensor,
    support: Vec<usize>,
    weights: AssignmentWeights,
    initialized: bool,
    noise_seed: u64,
    noise: ChaCha8Rng,
}

impl PartialEq for MemoryBank {
    fn eq(&self, other: &Self) -> bool {
        self.prototypes == other.prototypes
            && self.support == other.support
            && self.weights == other.weights
            && self.initialized == other.initialized
            && self.noise_state() == other.noise_state()
    }
}

impl MemoryBank {
    pub fn new(prototypes: usize, feature_dim: usize, weights: AssignmentWeights, seed: u64) -> Self {
        Self {
            prototypes: Tensor::zeros(&[prototypes, feature_dim]),
            support: vec![0; prototypes],
            weights,
            initialized: false,
            noise_seed: seed,
            noise: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Rebuilds a bank from saved state.
    pub fn restore(
        prototypes: Tensor,
        support: Vec<usize>,
        weights: AssignmentWeights,
        initialized: bool,
        noise: NoiseState,
    ) -> Result<Self> {
        let (k, _) = prototypes.dims2()?;
        ensure!(support.len() == k, Format, "{} support counts for {k} prototypes", support.len());
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_word_pos(noise.word_pos);
        Ok(Self {
            prototypes,
            support,
            weights,
            initialized,
            noise_seed: noise.seed,
            noise: rng,
        })
    }

    pub fn num_prototypes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.cols()
    }

    /// `K × d_f` prototype matrix.
    pub fn prototypes(&self) -> &Tensor {
        &self.prototypes
    }

    /// Support counts from the most recent [`MemoryBank::forget`].
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> AssignmentWeights {
        self.weights
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn noise_state(&self) -> NoiseState {
        NoiseState {
            seed: self.noise_seed,
            word_pos: self.noise.get_word_pos(),
        }
    }

    fn ensure_ready(&self, relevancy_len: usize) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("memory bank has not been written yet".into()));
        }
        ensure!(
            relevancy_len == self.num_prototypes(),
            Contract,
            "relevancy row of length {relevancy_len} for {} prototypes",
            self.num_prototypes()
        );
        Ok(())
    }

    /// Per-prototype read weights for one relevancy row.
    pub fn read_weights(&self, relevancy: &[f64]) -> Result<Vec<f64>> {
        match self.weights {
            AssignmentWeights::Softmax => numeric::softmax(relevancy),
            AssignmentWeights::Direct => {
                if relevancy.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidValue("relevancy row is not finite".into()));
                }
                Ok(relevancy.to_vec())
            }
        }
    }

    /// Weighted combination of prototypes for one relevancy row.
    pub fn read_soft(&self, relevancy: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready(relevancy.len())?;
        let w = self.read_weights(relevancy)?;
        let mut out = vec![0.0; self.feature_dim()];
        for (wj, m) in w.iter().zip(self.prototypes.row_iter()) {
            for (o, x) in out.iter_mut().zip(m) {
                *o += wj * x;
            }
        }
        Ok(out)
    }

    /// The prototype with the largest relevancy (lowest index on ties).
    pub fn read_hard(&self, relevancy: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready(relevancy.len())?;
        if relevancy.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("relevancy row is not finite".into()));
        }
        Ok(self.prototypes.row(numeric::argmax(relevancy)).to_vec())
    }

    /// Soft read of every row of `relevancy` (`N × K`) recorded on `tape`.
    /// The prototypes enter as a constant.
    pub fn read_soft_on_tape(&self, tape: &mut Tape, relevancy: Var) -> Result<Var> {
        let (_, k) = tape.value(relevancy).dims2()?;
        self.ensure_ready(k)?;
        let weights = match self.weights {
            AssignmentWeights::Softmax => tape.softmax_rows(relevancy)?,
            AssignmentWeights::Direct => relevancy,
        };
        let memory = tape.constant(self.prototypes.clone());
        tape.matmul(weights, memory)
    }

    /// Recomputes every prototype as a weighted mean of queue features:
    /// `m_j = Σ_i w_ij f_i`, with the weights of each prototype summing to
    /// one over the queue rows.
    pub fn write(&mut self, features: &Tensor, relevancy: &Tensor) -> Result<()> {
        let (n, d) = features.dims2()?;
        let (nc, k) = relevancy.dims2()?;
        if n == 0 {
            return Err(Error::State("cannot write memory from an empty queue".into()));
        }
        ensure!(
            nc == n && k == self.num_prototypes() && d == self.feature_dim(),
            Contract,
            "write from {n}x{d} features and {nc}x{k} relevancy into {}x{} memory",
            self.num_prototypes(),
            self.feature_dim()
        );
        if !relevancy.is_finite() {
            return Err(Error::InvalidValue("relevancy is not finite".into()));
        }

        let mut column = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let mut next = vec![0.0; k * d];
        for j in 0..k {
            for (i, c) in column.iter_mut().enumerate() {
                *c = relevancy.data()[i * k + j];
            }
            match self.weights {
                AssignmentWeights::Softmax => numeric::softmax_into(&column, &mut weights),
                AssignmentWeights::Direct => {
                    let total: f64 = column.iter().sum();
                    if !(total > 0.0) {
                        return Err(Error::DegenerateVector {
                            norm: total,
                            eps: 0.0,
                        });
                    }
                    for (w, c) in weights.iter_mut().zip(&column) {
                        *w = c / total;
                    }
                }
            }
            let m = &mut next[j * d..(j + 1) * d];
            for (w, f) in weights.iter().zip(features.row_iter()) {
                for (mv, fv) in m.iter_mut().zip(f) {
                    *mv += w * fv;
                }
            }
        }
        self.prototypes = Tensor::matrix(k, d, next)?;
        self.initialized = true;
        Ok(())
    }

    /// Records `counts` (support per prototype over a queue of `queue_size`
    /// rows) without perturbing the prototypes.
    pub fn record_support(&mut self, counts: &[usize], queue_size: usize) -> Result<()> {
        if queue_size == 0 {
            return Err(Error::State("support counts of an empty queue".into()));
        }
        ensure!(
            counts.len() == self.num_prototypes(),
            Contract,
            "{} support counts for {} prototypes",
            counts.len(),
            self.num_prototypes()
        );
        let total: usize = counts.iter().sum();
        ensure!(
            total == queue_size,
            Contract,
            "support counts sum to {total}, queue holds {queue_size}"
        );
        self.support = counts.to_vec();
        Ok(())
    }

    /// Adds `N(0, σ_j²)` noise to each prototype with `σ_j = 1 − n_j / queue_size`
    /// and records `counts` as the current support.
    pub fn forget(&mut self, counts: &[usize], queue_size: usize) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("memory bank has not been written yet".into()));
        }
        self.record_support(counts, queue_size)?;
        let d = self.feature_dim();
        for (j, &n_j) in counts.iter().enumerate() {
            let sigma = forgetting_std(n_j, queue_size);
            if sigma == 0.0 {
                continue;
            }
            for v in &mut self.prototypes.data_mut()[j * d..(j + 1) * d] {
                let eta: f64 = StandardNormal.sample(&mut self.noise);
                *v += sigma * eta;
            }
        }
        Ok(())
    }
}

/// Standard deviation of the forgetting noise for a prototype with `support`
/// of `queue_size` queue rows.
pub fn forgetting_std(support: usize, queue_size: usize) -> f64 {
    1.0 - support as f64 / queue_size as f64
}

/// Number of rows of `relevancy` (`N × K`) whose argmax is each prototype.
pub fn support_counts(relevancy: &Tensor) -> Result<Vec<usize>> {
    let (n, k) = relevancy.dims2()?;
    if n == 0 {
        return Err(Error::State("support counts of an empty queue".into()));
    }
    let mut counts = vec![0; k];
    for row in relevancy.row_iter() {
        counts[numeric::argmax(row)] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_with(rows: &[Vec<f64>], weights: AssignmentWeights) -> MemoryBank {
        let m = Tensor::from_rows(rows).unwrap();
        let k = rows.len();
        MemoryBank::restore(
            m,
            vec![0; k],
            weights,
            true,
            NoiseState {
                seed: 1,
                word_pos: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn single_prototype_read_returns_it() {
        let bank = bank_with(&[vec![1.0, -2.0]], AssignmentWeights::Softmax);
        assert_eq!(bank.read_soft(&[0.3]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(bank.read_soft(&[42.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn soft_read_weights_two_prototypes() {
        let bank = bank_with(&[vec![1.0, 0.0], vec![0.0, 1.0]], AssignmentWeights::Softmax);
        let f = bank.read_soft(&[2.0, 0.0]).unwrap();
        assert!((f[0] - 0.88080).abs() < 1e-4);
        assert!((f[1] - 0.11920).abs() < 1e-4);
    }

    #[test]
    fn equal_prototypes_read_back_unchanged() {
        let bank = bank_with(&vec![vec![0.5, 2.0]; 3], AssignmentWeights::Softmax);
        let f = bank.read_soft(&[0.1, 0.7, 0.2]).unwrap();
        assert!((f[0] - 0.5).abs() < 1e-15 && (f[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn direct_read_uses_relevancy_as_weights() {
        let bank = bank_with(&[vec![1.0, 0.0], vec![0.0, 1.0]], AssignmentWeights::Direct);
        assert_eq!(bank.read_soft(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn hard_read_cases() {
        let bank = bank_with(&[vec![1.0], vec![2.0]], AssignmentWeights::Softmax);
        assert_eq!(bank.read_hard(&[0.1, 0.9]).unwrap(), vec![2.0]);
        assert_eq!(bank.read_hard(&[0.5, 0.5]).unwrap(), vec![1.0]);
        assert_eq!(bank.read_hard(&[10.0, 90.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn uninitialized_bank_refuses_reads() {
        let bank = MemoryBank::new(2, 3, AssignmentWeights::Softmax, 0);
        assert!(matches!(bank.read_soft(&[0.5, 0.5]), Err(Error::State(_))));
        assert!(matches!(bank.read_hard(&[0.5, 0.5]), Err(Error::State(_))));
    }

    #[test]
    fn write_examples() {
        let mut bank = MemoryBank::new(1, 2, AssignmentWeights::Softmax, 0);
        let f = Tensor::from_rows(&[vec![0.0, 2.0], vec![4.0, 0.0]]).unwrap();
        let equal = Tensor::from_rows(&[vec![0.3], vec![0.3]]).unwrap();
        bank.write(&f, &equal).unwrap();
        assert!(bank.is_initialized());
        assert_eq!(bank.prototypes().row(0), &[2.0, 1.0]);

        let skewed = Tensor::from_rows(&[vec![2.0], vec![0.0]]).unwrap();
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        bank.write(&f, &skewed).unwrap();
        let m = bank.prototypes().row(0);
        assert!((m[0] - 0.88080).abs() < 1e-4 && (m[1] - 0.11920).abs() < 1e-4);

        let mut bank = MemoryBank::new(3, 2, AssignmentWeights::Softmax, 0);
        let single = Tensor::from_rows(&[vec![0.7, -0.1]]).unwrap();
        let c = Tensor::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        bank.write(&single, &c).unwrap();
        for row in bank.prototypes().row_iter() {
            assert_eq!(row, &[0.7, -0.1]);
        }
    }

    #[test]
    fn write_from_empty_queue_is_state_error() {
        let mut bank = MemoryBank::new(2, 2, AssignmentWeights::Softmax, 0);
        let f = Tensor::matrix(0, 2, vec![]).unwrap();
        let c = Tensor::matrix(0, 2, vec![]).unwrap();
        assert!(matches!(bank.write(&f, &c), Err(Error::State(_))));
        assert!(!bank.is_initialized());
    }

    #[test]
    fn support_count_examples() {
        let c = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        assert_eq!(support_counts(&c).unwrap(), vec![2, 1]);
        let uniform = Tensor::from_rows(&vec![vec![0.25; 4]; 5]).unwrap();
        assert_eq!(support_counts(&uniform).unwrap(), vec![5, 0, 0, 0]);
        let one_hot = Tensor::from_rows(&[vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(support_counts(&one_hot).unwrap(), vec![0, 0, 1, 0]);
        let empty = Tensor::matrix(0, 3, vec![]).unwrap();
        assert!(matches!(support_counts(&empty), Err(Error::State(_))));
    }

    #[test]
    fn forget_std_boundaries() {
        assert_eq!(forgetting_std(10, 10), 0.0);
        assert_eq!(forgetting_std(0, 10), 1.0);
        assert_eq!(forgetting_std(5, 10), 0.5);
    }

    #[test]
    fn fully_supported_prototype_is_untouched() {
        let mut bank = bank_with(&[vec![-0.0, 1.5], vec![3.0, 4.0]], AssignmentWeights::Softmax);
        let before = bank.prototypes().row(0).to_vec();
        bank.forget(&[8, 0], 8).unwrap();
        let after = bank.prototypes().row(0);
        assert!(before.iter().zip(after).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_ne!(bank.prototypes().row(1), &[3.0, 4.0]);
        assert_eq!(bank.support(), &[8, 0]);
    }

    #[test]
    fn forget_errors() {
        let mut bank = bank_with(&[vec![0.0]], AssignmentWeights::Softmax);
        assert!(matches!(bank.forget(&[0], 0), Err(Error::State(_))));
        assert!(matches!(bank.forget(&[3], 4), Err(Error::Contract(_))));
    }

    #[test]
    fn forget_is_reproducible_and_resumable() {
        let mut a = bank_with(&[vec![0.0; 4], vec![0.0; 4]], AssignmentWeights::Softmax);
        let mut b = a.clone();
        a.forget(&[1, 3], 4).unwrap();
        b.forget(&[1, 3], 4).unwrap();
        assert_eq!(a, b);

        let saved = a.noise_state();
        let mut resumed = MemoryBank::restore(
            a.prototypes().clone(),
            a.support().to_vec(),
            a.weights(),
            true,
            saved,
        )
        .unwrap();
        a.forget(&[2, 2], 4).unwrap();
        resumed.forget(&[2, 2], 4).unwrap();
        assert_eq!(a, resumed);
    }
}

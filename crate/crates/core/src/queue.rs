//! Fixed-capacity FIFO of key-tower outputs.
//!
//! Supplies the negatives for the instance contrastive loss and the
//! population from which memory prototypes are rebuilt.

use std::collections::VecDeque;

use crate::encoder::BatchFeatures;
use crate::error::{ensure, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry {
    pub feature: Vec<f64>,
    pub embedding: Vec<f64>,
    pub relevancy: Vec<f64>,
}

/// Row dimensions of the stored `(f, z, c)` triples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueDims {
    pub feature: usize,
    pub embedding: usize,
    pub relevancy: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastQueue {
    capacity: usize,
    dims: QueueDims,
    entries: VecDeque<QueueEntry>,
    inserted: u64,
}

/// Copy of the queue contents, oldest row first.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueSnapshot {
    pub features: Tensor,
    pub embeddings: Tensor,
    pub relevancy: Tensor,
}

impl QueueSnapshot {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ContrastQueue {
    pub fn new(capacity: usize, dims: QueueDims) -> Result<Self> {
        ensure!(capacity >= 1, Contract, "queue capacity must be positive");
        Ok(Self {
            capacity,
            dims,
            entries: VecDeque::with_capacity(capacity),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dims(&self) -> QueueDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Total number of entries ever enqueued.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Appends one entry, evicting the oldest when full.
    pub fn push(&mut self, entry: QueueEntry) -> Result<()> {
        ensure!(
            entry.feature.len() == self.dims.feature
                && entry.embedding.len() == self.dims.embedding
                && entry.relevancy.len() == self.dims.relevancy,
            Contract,
            "entry dims ({}, {}, {}) do not match queue {:?}",
            entry.feature.len(),
            entry.embedding.len(),
            entry.relevancy.len(),
            self.dims
        );
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        self.inserted += 1;
        Ok(())
    }

    /// Appends every row of `batch` in order.
    pub fn enqueue(&mut self, batch: &BatchFeatures) -> Result<()> {
        let n = batch.features.rows();
        ensure!(
            batch.features.shape() == [n, self.dims.feature]
                && batch.embeddings.shape() == [n, self.dims.embedding]
                && batch.relevancy.shape() == [n, self.dims.relevancy],
            Contract,
            "batch shapes {:?}/{:?}/{:?} do not match queue {:?}",
            batch.features.shape(),
            batch.embeddings.shape(),
            batch.relevancy.shape(),
            self.dims
        );
        for i in 0..n {
            self.push(QueueEntry {
                feature: batch.features.row(i).to_vec(),
                embedding: batch.embeddings.row(i).to_vec(),
                relevancy: batch.relevancy.row(i).to_vec(),
            })?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        let n = self.entries.len();
        let gather = |pick: fn(&QueueEntry) -> &Vec<f64>, width: usize| {
            let data: Vec<f64> = self.entries.iter().flat_map(|e| pick(e).iter().copied()).collect();
            Tensor::matrix(n, width, data).expect("rows have queue dims")
        };
        QueueSnapshot {
            features: gather(|e| &e.feature, self.dims.feature),
            embeddings: gather(|e| &e.embedding, self.dims.embedding),
            relevancy: gather(|e| &e.relevancy, self.dims.relevancy),
        }
    }

    /// Rebuilds a queue from a snapshot (used when restoring checkpoints).
    pub fn restore(capacity: usize, snapshot: &QueueSnapshot, inserted: u64) -> Result<Self> {
        let dims = QueueDims {
            feature: snapshot.features.cols(),
            embedding: snapshot.embeddings.cols(),
            relevancy: snapshot.relevancy.cols(),
        };
        ensure!(
            snapshot.len() <= capacity && inserted >= snapshot.len() as u64,
            Format,
            "queue snapshot of {} rows for capacity {capacity} after {inserted} insertions",
            snapshot.len()
        );
        let mut queue = Self::new(capacity, dims)?;
        for i in 0..snapshot.len() {
            queue.push(QueueEntry {
                feature: snapshot.features.row(i).to_vec(),
                embedding: snapshot.embeddings.row(i).to_vec(),
                relevancy: snapshot.relevancy.row(i).to_vec(),
            })?;
        }
        queue.inserted = inserted;
        Ok(queue)
    }
}

//! Epoch shuffling and batch streaming.
//!
//! Each epoch draws its own permutation from the stream
//! `"shuffle/epoch{e}"`, so the batch served at any global iteration is a
//! pure function of `(seed, dataset length, batch size, iteration)` — this
//! is what makes resume-from-checkpoint continue bit-identically.

use rand::seq::SliceRandom;

use crate::rng::make_rng;

/// Number of batches one epoch yields (the last batch may be short).
pub fn batches_per_epoch(n_records: usize, batch_size: usize) -> usize {
    n_records.div_ceil(batch_size)
}

fn epoch_permutation(seed: i64, n_records: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_records).collect();
    let mut rng = make_rng(seed, &format!("shuffle/epoch{epoch}"));
    order.shuffle(&mut rng);
    order
}

/// Record indices of the batch served at a global iteration.
pub fn batch_indices(
    seed: i64,
    n_records: usize,
    batch_size: usize,
    iteration: usize,
) -> Vec<usize> {
    assert!(n_records > 0 && batch_size > 0);
    let per_epoch = batches_per_epoch(n_records, batch_size);
    let epoch = iteration / per_epoch;
    let slot = iteration % per_epoch;
    let order = epoch_permutation(seed, n_records, epoch);
    let start = slot * batch_size;
    let end = (start + batch_size).min(n_records);
    order[start..end].to_vec()
}

/// Infinite stream of index batches: uniformly shuffled without replacement
/// within each epoch, re-shuffled every epoch.
pub struct TrainingBatches {
    seed: i64,
    n_records: usize,
    batch_size: usize,
    iteration: usize,
    epoch_order: Vec<usize>,
    epoch: usize,
}

impl TrainingBatches {
    pub fn new(seed: i64, n_records: usize, batch_size: usize) -> Self {
        assert!(n_records > 0 && batch_size > 0);
        TrainingBatches {
            seed,
            n_records,
            batch_size,
            iteration: 0,
            epoch_order: epoch_permutation(seed, n_records, 0),
            epoch: 0,
        }
    }

    /// Starts the stream at a given global iteration (for resume).
    pub fn starting_at(seed: i64, n_records: usize, batch_size: usize, iteration: usize) -> Self {
        let per_epoch = batches_per_epoch(n_records, batch_size);
        let epoch = iteration / per_epoch;
        TrainingBatches {
            seed,
            n_records,
            batch_size,
            iteration,
            epoch_order: epoch_permutation(seed, n_records, epoch),
            epoch,
        }
    }
}

impl Iterator for TrainingBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let per_epoch = batches_per_epoch(self.n_records, self.batch_size);
        let epoch = self.iteration / per_epoch;
        if epoch != self.epoch {
            self.epoch = epoch;
            self.epoch_order = epoch_permutation(self.seed, self.n_records, epoch);
        }
        let slot = self.iteration % per_epoch;
        let start = slot * self.batch_size;
        let end = (start + self.batch_size).min(self.n_records);
        self.iteration += 1;
        Some(self.epoch_order[start..end].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn partial_final_batch() {
        let mut stream = TrainingBatches::new(1, 10, 4);
        let sizes: Vec<usize> = (0..3).map(|_| stream.next().unwrap().len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn each_epoch_visits_every_record_once() {
        let mut stream = TrainingBatches::new(5, 10, 4);
        for _epoch in 0..3 {
            let mut seen = Vec::new();
            for _ in 0..batches_per_epoch(10, 4) {
                seen.extend(stream.next().unwrap());
            }
            let unique: BTreeSet<usize> = seen.iter().copied().collect();
            assert_eq!(seen.len(), 10);
            assert_eq!(unique, (0..10).collect());
        }
    }

    #[test]
    fn epochs_are_reshuffled_but_reproducible() {
        let collect_epoch = |seed: i64, epoch: usize| -> Vec<usize> {
            let per_epoch = batches_per_epoch(10, 4);
            let mut out = Vec::new();
            for slot in 0..per_epoch {
                out.extend(batch_indices(seed, 10, 4, epoch * per_epoch + slot));
            }
            out
        };
        let e0 = collect_epoch(7, 0);
        let e1 = collect_epoch(7, 1);
        assert_ne!(e0, e1, "within-epoch orders should differ across epochs");
        assert_eq!(e0, collect_epoch(7, 0), "reruns reproduce the order");
    }

    #[test]
    fn random_access_matches_stream() {
        let mut stream = TrainingBatches::new(3, 13, 5);
        for it in 0..12 {
            assert_eq!(stream.next().unwrap(), batch_indices(3, 13, 5, it));
        }
        let mut resumed = TrainingBatches::starting_at(3, 13, 5, 7);
        assert_eq!(resumed.next().unwrap(), batch_indices(3, 13, 5, 7));
    }
}

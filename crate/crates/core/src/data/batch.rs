//! Mini-batch streams over an in-memory data part.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentParams};
use crate::error::DataError;
use crate::tensor::Tensor;

/// One labelled image, already decoded to a 150×150×3 tensor in [0, 1].
#[derive(Clone, PartialEq, Debug)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Tensor,
    /// 1 = diseased, 0 = healthy.
    pub label: u8,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// B × H × W × C.
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.outer(i).expect("index within batch")
    }
}

/// Position of a stream: which pass, how far into it, and how many
/// augmentation draws have been consumed so far.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct StreamCursor {
    pub pass: u64,
    pub position: usize,
    pub draws: u64,
}

/// Endless batch stream. Each pass visits every record once, in an order
/// keyed by `(shuffle_seed, pass)` or in storage order when unshuffled. The
/// last batch of a pass may be short; the next pass then begins.
pub struct BatchStream<'a> {
    records: &'a [ImageRecord],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    augment: Option<AugmentParams>,
    cursor: StreamCursor,
    order: Vec<usize>,
}

pub fn batches<'a>(
    records: &'a [ImageRecord],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    augment: Option<AugmentParams>,
) -> Result<BatchStream<'a>, DataError> {
    BatchStream::resume(records, batch_size, shuffle_seed, augment, StreamCursor::default())
}

impl<'a> BatchStream<'a> {
    pub fn resume(
        records: &'a [ImageRecord],
        batch_size: usize,
        shuffle_seed: Option<u64>,
        augment: Option<AugmentParams>,
        cursor: StreamCursor,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyPart("batch source".into()));
        }
        if batch_size == 0 {
            return Err(DataError::BatchSize);
        }
        let mut s = Self { records, batch_size, shuffle_seed, augment, cursor, order: Vec::new() };
        s.order = s.pass_order(cursor.pass);
        Ok(s)
    }

    pub fn cursor(&self) -> StreamCursor {
        self.cursor
    }

    /// Number of batches in one pass, counting the short final batch.
    pub fn batches_per_pass(&self) -> usize {
        self.records.len().div_ceil(self.batch_size)
    }

    fn pass_order(&self, pass: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        if let Some(seed) = self.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pass);
            order.shuffle(&mut rng);
        }
        order
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor.position >= self.records.len() {
            self.cursor.pass += 1;
            self.cursor.position = 0;
            self.order = self.pass_order(self.cursor.pass);
        }
        let start = self.cursor.position;
        let end = (start + self.batch_size).min(self.records.len());
        let picked = &self.order[start..end];
        let first_draw = self.cursor.draws;
        let aug = self.augment;
        // augmentation is keyed by draw index, so parallel work keeps the sequential result
        let images: Vec<Tensor> = picked
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let px = &self.records[i].pixels;
                match &aug {
                    Some(p) => augment(px, p, first_draw + k as u64),
                    None => px.clone(),
                }
            })
            .collect();
        if aug.is_some() {
            self.cursor.draws += picked.len() as u64;
        }
        self.cursor.position = end;
        Some(Batch {
            ids: picked.iter().map(|&i| self.records[i].id.clone()).collect(),
            images: Tensor::stack(&images).expect("records share one shape"),
            labels: picked.iter().map(|&i| self.records[i].label).collect(),
        })
    }
}

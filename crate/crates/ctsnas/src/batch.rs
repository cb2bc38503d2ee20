//! Deterministic batch iteration over window sets. Order is a pure function
//! of `(seed, role, wrap count)`, so loaders can resume from counters alone.

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;

use crate::data::window::WindowSet;
use crate::rng;
use crate::scalar::Scalar;

pub struct Loader {
    n: usize,
    batch: usize,
    shuffle: bool,
    seed: u64,
    role: String,
    wraps: u64,
    pos: usize,
    order: Vec<usize>,
}

impl Loader {
    pub fn new(n: usize, batch: usize, shuffle: bool, seed: u64, role: impl Into<String>) -> Self {
        assert!(n > 0 && batch > 0);
        let mut loader = Loader {
            n,
            batch,
            shuffle,
            seed,
            role: role.into(),
            wraps: 0,
            pos: 0,
            order: Vec::new(),
        };
        loader.rebuild_order();
        loader
    }

    fn rebuild_order(&mut self) {
        self.order = (0..self.n).collect();
        if self.shuffle {
            let mut r = rng::stream(self.seed, &format!("loader/{}", self.role), &[self.wraps]);
            self.order.shuffle(&mut r);
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch)
    }

    /// Next batch of window indices; wraps around with a fresh order.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.wraps += 1;
            self.pos = 0;
            self.rebuild_order();
        }
        let end = (self.pos + self.batch).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn state(&self) -> (u64, usize) {
        (self.wraps, self.pos)
    }

    pub fn restore(&mut self, wraps: u64, pos: usize) {
        self.wraps = wraps;
        self.pos = pos.min(self.n);
        self.rebuild_order();
    }
}

/// Materialize `(inputs, targets)` for the given window indices.
pub fn gather_batch<F: Scalar>(ws: &WindowSet<F>, idx: &[usize]) -> (Array4<F>, Array4<F>) {
    let ish = ws.inputs.shape();
    let tsh = ws.targets.shape();
    let mut inputs = Array4::<F>::zeros((idx.len(), ish[1], ish[2], ish[3]));
    let mut targets = Array4::<F>::zeros((idx.len(), tsh[1], tsh[2], tsh[3]));
    for (k, &s) in idx.iter().enumerate() {
        inputs
            .index_axis_mut(Axis(0), k)
            .assign(&ws.inputs.index_axis(Axis(0), s));
        targets
            .index_axis_mut(Axis(0), k)
            .assign(&ws.targets.index_axis(Axis(0), s));
    }
    (inputs, targets)
}

/// Fixed-order index chunks for evaluation passes.
pub fn eval_chunks(n: usize, batch: usize) -> Vec<Vec<usize>> {
    (0..n)
        .step_by(batch)
        .map(|start| (start..(start + batch).min(n)).collect())
        .collect()
}

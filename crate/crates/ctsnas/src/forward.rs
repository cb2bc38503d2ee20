//! Per-forward-pass context: ties a fresh [`Tape`] to the parameter store,
//! memoizes parameter leaves so shared parameters accumulate gradients, and
//! owns the sampling plans for sparse attention.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::ArrayD;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Vid};

/// Sorted query indices per leading row, one plan per sparse-attention call.
pub type SamplePlan = Arc<Vec<Vec<usize>>>;

/// Where sparse attention gets its query selection from. `Fresh` derives a
/// seeded stream per operator; `Cached` records plans on first use and
/// replays them afterwards, which keeps finite-difference checks consistent
/// (the selection is piecewise constant and must not flip between probes).
pub enum PlanMode<'p> {
    Fresh,
    Cached(&'p mut HashMap<u64, SamplePlan>),
}

pub struct Fwd<'a, 'p, F: Scalar> {
    pub tape: Tape<F>,
    store: &'a mut ParamStore<F>,
    leaves: HashMap<usize, Vid>,
    pub train: bool,
    /// Seed material for this forward pass (run seed + step counters).
    pub sample_seed: u64,
    pub plans: PlanMode<'p>,
}

impl<'a, 'p, F: Scalar> Fwd<'a, 'p, F> {
    pub fn new(
        store: &'a mut ParamStore<F>,
        train: bool,
        sample_seed: u64,
        plans: PlanMode<'p>,
    ) -> Self {
        Fwd {
            tape: Tape::new(),
            store,
            leaves: HashMap::new(),
            train,
            sample_seed,
            plans,
        }
    }

    /// Leaf node for a parameter; repeated requests share one node so
    /// gradients accumulate across uses.
    pub fn param(&mut self, id: ParamId) -> Vid {
        if let Some(v) = self.leaves.get(&id.0) {
            return *v;
        }
        let v = self.tape.leaf(self.store.value(id).clone());
        self.leaves.insert(id.0, v);
        v
    }

    pub fn constant(&mut self, arr: ArrayD<F>) -> Vid {
        self.tape.leaf(arr)
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        self.store
    }

    /// Look up or create the sampling plan for operator `uid`.
    pub fn plan_for(&mut self, uid: u64, make: impl FnOnce(u64) -> Vec<Vec<usize>>) -> SamplePlan {
        match &mut self.plans {
            PlanMode::Fresh => Arc::new(make(self.sample_seed)),
            PlanMode::Cached(cache) => {
                if let Some(p) = cache.get(&uid) {
                    return p.clone();
                }
                let p: SamplePlan = Arc::new(make(self.sample_seed));
                cache.insert(uid, p.clone());
                p
            }
        }
    }

    /// Collect gradients for every parameter leaf touched this pass,
    /// keyed by parameter index.
    pub fn param_grads(&self, grads: &crate::tape::Grads<F>) -> HashMap<usize, ArrayD<F>> {
        let mut out = HashMap::new();
        for (pid, vid) in &self.leaves {
            if let Some(g) = grads.of(*vid) {
                out.insert(*pid, g.clone());
            }
        }
        out
    }
}

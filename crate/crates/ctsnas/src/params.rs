//! Central storage for model parameters, split into disjoint groups so the
//! bi-level search can update architecture parameters and network weights
//! with separate optimizers. Batch-norm running statistics live here too as
//! non-optimized buffers so checkpoints capture the full model state.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

/// Which optimizer (if any) owns a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Architecture parameters: alpha, beta, gamma.
    Theta,
    /// Network weights: kernels, projections, norms, head.
    Weight,
    /// Non-optimized state (batch-norm running statistics).
    Buffer,
}

impl ParamGroup {
    pub fn tag(self) -> &'static str {
        match self {
            ParamGroup::Theta => "theta",
            ParamGroup::Weight => "weight",
            ParamGroup::Buffer => "buffer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub group: ParamGroup,
    pub value: ArrayD<F>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: ArrayD<F>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn scalar_count(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }

    /// Bit-level checksum of one group, for frozen-set assertions.
    pub fn checksum(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.group == group) {
            h.update(e.name.as_bytes());
            for v in e.value.iter() {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Glorot-uniform matrix/kernel initialization: bound `sqrt(6/(fan_in+fan_out))`.
pub fn glorot<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> ArrayD<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Small Gaussian init for architecture parameters.
pub fn arch_init<F: Scalar, R: Rng>(rng: &mut R, len: usize) -> ArrayD<F> {
    let data: Vec<F> = (0..len)
        .map(|_| {
            // Box-Muller on two uniforms; sigma 1e-3
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            F::from_f64_lossy(z * 1e-3)
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(&[len]), data).unwrap()
}

pub fn zeros<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::from_elem(IxDyn(shape), F::one())
}

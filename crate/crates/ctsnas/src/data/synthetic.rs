//! Desk-scale synthetic datasets with known spatial/temporal structure.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::CtsDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Generating process for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticProcess {
    /// Graph diffusion plus a shared sinusoid: strong spatial signal.
    Diffusion,
    /// Per-node phase-shifted sinusoids, no graph.
    Seasonal,
}

impl std::str::FromStr for SyntheticProcess {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(SyntheticProcess::Diffusion),
            "seasonal" => Ok(SyntheticProcess::Seasonal),
            other => Err(Error::config(format!("unknown process {other:?}"))),
        }
    }
}

const RHO: f64 = 0.6;
const NOISE_STD: f64 = 0.05;
const SEASON_PERIOD: f64 = 64.0;
const SEASON_AMPLITUDE: f64 = 0.8;
const BURN_IN: usize = 128;
const KERNEL_SIGMA: f64 = 0.35;
const KERNEL_THRESHOLD: f64 = 0.3;

/// Random geometric graph with thresholded-Gaussian-kernel edge weights.
fn geometric_adjacency(n: usize, master_seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(master_seed, "synthetic/graph", &[]);
    let xs: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let mut adj = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dx = xs[i].0 - xs[j].0;
            let dy = xs[i].1 - xs[j].1;
            let w = (-(dx * dx + dy * dy) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA)).exp();
            if w >= KERNEL_THRESHOLD {
                adj[(i, j)] = w;
            }
        }
    }
    adj
}

fn row_normalized(adj: &Array2<f64>) -> Array2<f64> {
    let n = adj.nrows();
    let mut out = adj.clone();
    for i in 0..n {
        let s: f64 = out.row(i).sum();
        if s > 0.0 {
            out.row_mut(i).mapv_inplace(|v| v / s);
        }
    }
    out
}

/// Generate a synthetic dataset; deterministic for a fixed seed. Values are
/// quantized to float32 so in-memory data matches the on-disk payload.
pub fn generate_synthetic<F: Scalar>(
    n_nodes: usize,
    n_steps: usize,
    seed: u64,
    process: SyntheticProcess,
) -> Result<CtsDataset<F>> {
    if n_nodes < 2 {
        return Err(Error::config("n_nodes must be at least 2"));
    }
    if n_steps < 64 {
        return Err(Error::config(
            "n_steps too small to form one window (need at least 64)",
        ));
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut values = Array3::<f64>::zeros((n_nodes, n_steps, 1));
    let adjacency = match process {
        SyntheticProcess::Diffusion => {
            let adj = geometric_adjacency(n_nodes, seed);
            let trans = row_normalized(&adj);
            let mut rng = rng::stream(seed, "synthetic/diffusion", &[]);
            let mut x = Array1::<f64>::zeros(n_nodes);
            for step in 0..BURN_IN + n_steps {
                let s = SEASON_AMPLITUDE
                    * (2.0 * std::f64::consts::PI * step as f64 / SEASON_PERIOD).sin();
                let mixed = trans.dot(&x);
                let mut next = Array1::<f64>::zeros(n_nodes);
                for i in 0..n_nodes {
                    next[i] = RHO * mixed[i] + s + noise.sample(&mut rng);
                }
                x = next;
                if step >= BURN_IN {
                    for i in 0..n_nodes {
                        values[(i, step - BURN_IN, 0)] = x[i];
                    }
                }
            }
            Some(adj)
        }
        SyntheticProcess::Seasonal => {
            let mut rng = rng::stream(seed, "synthetic/seasonal", &[]);
            for t in 0..n_steps {
                for i in 0..n_nodes {
                    let phase = i as f64 / n_nodes as f64;
                    let v = (2.0 * std::f64::consts::PI * (t as f64 / 96.0 + phase)).sin()
                        + 0.25
                            * (2.0 * std::f64::consts::PI * (t as f64 / 24.0 + 2.0 * phase))
                                .sin()
                        + noise.sample(&mut rng);
                    values[(i, t, 0)] = v;
                }
            }
            None
        }
    };

    let values = values.mapv(|v| F::from_f64_lossy(v as f32 as f64));
    let adjacency = adjacency.map(|a| a.mapv(|v| F::from_f64_lossy(v as f32 as f64)));
    let name = match process {
        SyntheticProcess::Diffusion => format!("syn-diffusion-n{n_nodes}-t{n_steps}-s{seed}"),
        SyntheticProcess::Seasonal => format!("syn-seasonal-n{n_nodes}-t{n_steps}-s{seed}"),
    };
    CtsDataset::new(values, adjacency, name)
}

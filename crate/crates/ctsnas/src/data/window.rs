//! Chronological splitting, z-score scaling and sliding-window extraction.

use ndarray::{Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::dataset::CtsDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forecasting task variant: predict the next `Q` steps, or the single step
/// that lies `Q` ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    MultiStep,
    SingleStep,
}

impl std::str::FromStr for ForecastMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_step" => Ok(ForecastMode::MultiStep),
            "single_step" => Ok(ForecastMode::SingleStep),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Train/val/test ratios plus the pseudo-split fraction used by the search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub pseudo_split: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.6, 0.2, 0.2],
            pseudo_split: 0.5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| *r < 0.0) {
            return Err(Error::config("split ratios must be nonnegative"));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        if !(self.pseudo_split > 0.0 && self.pseudo_split < 1.0) {
            return Err(Error::config("pseudo_split must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Per-feature z-score scaler fit on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scaler<F: Scalar> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

impl<F: Scalar> Scaler<F> {
    pub fn fit(train: ArrayView3<'_, F>) -> Result<Self> {
        let f = train.shape()[2];
        let count = F::from_usize(train.shape()[0] * train.shape()[1]).unwrap();
        let mut mean = vec![F::zero(); f];
        let mut std = vec![F::zero(); f];
        for fi in 0..f {
            let lane = train.index_axis(Axis(2), fi);
            let mut m = F::zero();
            for v in lane.iter() {
                m += *v;
            }
            m /= count;
            let mut var = F::zero();
            for v in lane.iter() {
                let c = *v - m;
                var += c * c;
            }
            var /= count;
            let s = var.sqrt();
            if !(s > F::zero()) {
                return Err(Error::data(format!(
                    "feature {fi} is constant on the training split; cannot scale"
                )));
            }
            mean[fi] = m;
            std[fi] = s;
        }
        Ok(Scaler { mean, std })
    }

    pub fn transform_value(&self, v: F, feature: usize) -> F {
        (v - self.mean[feature]) / self.std[feature]
    }

    pub fn inverse_value(&self, v: F, feature: usize) -> F {
        v * self.std[feature] + self.mean[feature]
    }

    /// Mean/std of the forecast feature (feature 0) as 1-element arrays, for
    /// building inverse-transform graphs.
    pub fn target_mean_std(&self) -> (F, F) {
        (self.mean[0], self.std[0])
    }

    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }
}

/// Windowed model inputs and targets for one split.
///
/// `inputs` is `[S, N, P, F]` (z-scored); `targets` is `[S, N, Q, 1]` for
/// multi-step and `[S, N, 1, 1]` for single-step, in original units.
#[derive(Debug, Clone)]
pub struct WindowSet<F: Scalar> {
    pub inputs: Array4<F>,
    pub targets: Array4<F>,
    pub p: usize,
    pub q: usize,
    pub mode: ForecastMode,
}

impl<F: Scalar> WindowSet<F> {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn n_nodes(&self) -> usize {
        self.inputs.shape()[1]
    }
    pub fn n_features(&self) -> usize {
        self.inputs.shape()[3]
    }
    pub fn target_steps(&self) -> usize {
        self.targets.shape()[2]
    }
}

/// Extract windows whose target blocks start at absolute timestamps
/// `target_starts`; the input block covers the `p` steps before each start,
/// which for val/test may reach back into the preceding split (inputs are
/// past observations, targets never cross the boundary).
fn windows_for_targets<F: Scalar>(
    values: ArrayView3<'_, F>,
    scaler: &Scaler<F>,
    target_starts: std::ops::Range<usize>,
    p: usize,
    q: usize,
    mode: ForecastMode,
) -> WindowSet<F> {
    let (n, f) = (values.shape()[0], values.shape()[2]);
    let s_count = target_starts.len();
    let q_dim = match mode {
        ForecastMode::MultiStep => q,
        ForecastMode::SingleStep => 1,
    };
    let mut inputs = Array4::<F>::zeros((s_count, n, p, f));
    let mut targets = Array4::<F>::zeros((s_count, n, q_dim, 1));
    for (s, start) in target_starts.enumerate() {
        debug_assert!(start >= p);
        for ni in 0..n {
            for k in 0..p {
                for fi in 0..f {
                    inputs[(s, ni, k, fi)] =
                        scaler.transform_value(values[(ni, start - p + k, fi)], fi);
                }
            }
            match mode {
                ForecastMode::MultiStep => {
                    for k in 0..q {
                        targets[(s, ni, k, 0)] = values[(ni, start + k, 0)];
                    }
                }
                ForecastMode::SingleStep => {
                    targets[(s, ni, 0, 0)] = values[(ni, start + q - 1, 0)];
                }
            }
        }
    }
    WindowSet {
        inputs,
        targets,
        p,
        q,
        mode,
    }
}

/// Contiguous chronological train/val/test split, scaler fit on train only,
/// inputs z-scored, targets kept in original units.
///
/// Train windows lie fully inside the train split (count `T' - P - Q + 1`);
/// val/test windows keep their targets inside the split but may take input
/// history from before the boundary, so every val/test step is forecast.
pub fn split_and_window<F: Scalar>(
    ds: &CtsDataset<F>,
    spec: &SplitSpec,
    p: usize,
    q: usize,
    mode: ForecastMode,
) -> Result<(WindowSet<F>, WindowSet<F>, WindowSet<F>, Scaler<F>)> {
    spec.validate()?;
    if p == 0 || q == 0 {
        return Err(Error::config("P and Q must be positive"));
    }
    let t = ds.n_steps();
    let t_train = (spec.ratios[0] * t as f64).floor() as usize;
    let t_val = (spec.ratios[1] * t as f64).floor() as usize;
    let t_test = t - t_train - t_val;
    if t_train < p + q {
        return Err(Error::data(format!(
            "train split of length {t_train} too short for one window (P={p}, Q={q})"
        )));
    }
    if t_val < q || t_test < q {
        return Err(Error::data(format!(
            "split too short for one window: val={t_val}, test={t_test}, Q={q}"
        )));
    }
    let train_v = ds.values.slice_axis(Axis(1), ndarray::Slice::from(0..t_train));
    let scaler = Scaler::fit(train_v.view())?;
    let all = ds.values.view();
    let train = windows_for_targets(all, &scaler, p..t_train - q + 1, p, q, mode);
    let val = windows_for_targets(all, &scaler, t_train..t_train + t_val - q + 1, p, q, mode);
    let test = windows_for_targets(
        all,
        &scaler,
        t_train + t_val..t - q + 1,
        p,
        q,
        mode,
    );
    Ok((train, val, test, scaler))
}

/// Partition training windows into pseudo-train and pseudo-validation parts;
/// the first part receives the extra window on odd counts.
pub fn pseudo_split<F: Scalar>(
    train: &WindowSet<F>,
    fraction: f64,
) -> Result<(WindowSet<F>, WindowSet<F>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("pseudo-split fraction must lie in (0, 1)"));
    }
    let s = train.len();
    if s < 2 {
        return Err(Error::data(format!(
            "need at least 2 windows to pseudo-split, got {s}"
        )));
    }
    let n_a = ((s as f64) * fraction).ceil() as usize;
    let n_a = n_a.clamp(1, s - 1);
    let take = |from: usize, to: usize| WindowSet {
        inputs: train
            .inputs
            .slice_axis(Axis(0), ndarray::Slice::from(from..to))
            .to_owned(),
        targets: train
            .targets
            .slice_axis(Axis(0), ndarray::Slice::from(from..to))
            .to_owned(),
        p: train.p,
        q: train.q,
        mode: train.mode,
    };
    Ok((take(0, n_a), take(n_a, s)))
}

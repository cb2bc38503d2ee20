//! Architecture evaluation stage: train a derived model from scratch with
//! fresh weights on the original train/validation splits, early-stop on
//! validation loss, and report test metrics.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::batch::{eval_chunks, gather_batch, Loader};
use crate::data::window::{Scaler, WindowSet};
use crate::error::{Error, Result};
use crate::forward::{Fwd, PlanMode};
use crate::genotype::Genotype;
use crate::loss::{forecast_loss, LossKind};
use crate::metrics::{report_from_predictions, MetricsReport};
use crate::model::{build_discrete_model, build_from_spec, DiscreteModel, ModelConfig, ModelSpec};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use crate::task::TaskData;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Early-stopping patience in epochs, judged on validation loss.
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub residual: bool,
    pub horizons: Vec<usize>,
    pub zero_mask_all: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 1e-3,
            betas: (0.9, 0.999),
            weight_decay: 1e-4,
            clip_norm: 5.0,
            patience: 15,
            loss: LossKind::Mae,
            seed: 0,
            residual: true,
            horizons: vec![3, 6, 12],
            zero_mask_all: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainEpochRecord {
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_val: f64,
}

pub struct TrainOutcome<F: Scalar> {
    pub model: DiscreteModel<F>,
    pub store: ParamStore<F>,
    pub report: MetricsReport,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub log: Vec<TrainEpochRecord>,
}

/// Deterministic eval-mode predictions in original units, `[S, N, Qd, 1]`.
pub fn predict_units<F: Scalar>(
    model: &DiscreteModel<F>,
    store: &mut ParamStore<F>,
    windows: &WindowSet<F>,
    scaler: &Scaler<F>,
    batch_size: usize,
) -> ArrayD<F> {
    let shape = windows.targets.shape().to_vec();
    let mut out = ArrayD::<F>::zeros(IxDyn(&shape));
    let (mu, sigma) = scaler.target_mean_std();
    for (ci, chunk) in eval_chunks(windows.len(), batch_size).into_iter().enumerate() {
        let (x, _) = gather_batch(windows, &chunk);
        let mut fwd = Fwd::new(store, false, rng::mix(0, "predict", ci as u64), PlanMode::Fresh);
        let pred = model.forward(&mut fwd, &x);
        let vals = fwd.tape.value(pred);
        for (k, &s) in chunk.iter().enumerate() {
            for ni in 0..shape[1] {
                for qi in 0..shape[2] {
                    let z = vals[IxDyn(&[k, ni, qi, 0])];
                    out[IxDyn(&[s, ni, qi, 0])] = z * sigma + mu;
                }
            }
        }
    }
    out
}

/// Mean loss (in original units) of eval-mode predictions on a window set.
pub fn eval_loss<F: Scalar>(
    model: &DiscreteModel<F>,
    store: &mut ParamStore<F>,
    windows: &WindowSet<F>,
    scaler: &Scaler<F>,
    batch_size: usize,
    kind: LossKind,
) -> f64 {
    let pred = predict_units(model, store, windows, scaler, batch_size);
    let truth = &windows.targets;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let d = p.to_f64_lossy() - t.to_f64_lossy();
        acc += match kind {
            LossKind::Mae => d.abs(),
            LossKind::Mse => d * d,
        };
        n += 1;
    }
    acc / n as f64
}

/// Full evaluation of a trained model on a window set.
pub fn evaluate<F: Scalar>(
    model: &DiscreteModel<F>,
    store: &mut ParamStore<F>,
    windows: &WindowSet<F>,
    scaler: &Scaler<F>,
    horizons: &[usize],
    dataset: &str,
    genotype_hash: &str,
    zero_mask_all: bool,
    batch_size: usize,
) -> Result<MetricsReport> {
    for &h in horizons {
        if h > windows.target_steps() {
            return Err(Error::Metric(format!(
                "horizon {h} exceeds target steps {}",
                windows.target_steps()
            )));
        }
    }
    let pred = predict_units(model, store, windows, scaler, batch_size);
    let (mu, sigma) = scaler.target_mean_std();
    report_from_predictions(
        &pred,
        &windows.targets.clone().into_dyn(),
        windows.mode,
        horizons,
        (mu.to_f64_lossy(), sigma.to_f64_lossy()),
        dataset,
        genotype_hash,
        zero_mask_all,
    )
}

fn snapshot_weights<F: Scalar>(store: &ParamStore<F>) -> Vec<(ParamId, ArrayD<F>)> {
    store
        .entries()
        .filter(|(_, e)| matches!(e.group, ParamGroup::Weight | ParamGroup::Buffer))
        .map(|(id, e)| (id, e.value.clone()))
        .collect()
}

fn restore_weights<F: Scalar>(store: &mut ParamStore<F>, snap: &[(ParamId, ArrayD<F>)]) {
    for (id, v) in snap {
        *store.value_mut(*id) = v.clone();
    }
}

fn train_model<F: Scalar>(
    model: DiscreteModel<F>,
    mut store: ParamStore<F>,
    data: &TaskData<F>,
    cfg: &TrainConfig,
    genotype_hash: &str,
) -> Result<TrainOutcome<F>> {
    let mut opt = Adam::new(
        &store,
        ParamGroup::Weight,
        AdamConfig::new(cfg.lr, cfg.betas, cfg.weight_decay, Some(cfg.clip_norm)),
    );
    let mut loader = Loader::new(data.train.len(), cfg.batch_size, true, cfg.seed, "train");
    let mut log = Vec::new();
    let mut best: Option<(f64, Vec<(ParamId, ArrayD<F>)>)> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    let mut iter = 0u64;

    'outer: for epoch in 0..cfg.epochs {
        let mut train_sum = 0.0;
        let mut finite = 0usize;
        for _ in 0..loader.batches_per_epoch() {
            let idx = loader.next_batch();
            let (x, y) = gather_batch(&data.train, &idx);
            let sample_seed = rng::mix(cfg.seed, "train-step", iter);
            iter += 1;
            let mut fwd = Fwd::new(&mut store, true, sample_seed, PlanMode::Fresh);
            let pred = model.forward(&mut fwd, &x);
            let loss = forecast_loss(&mut fwd, pred, &y, &data.scaler, cfg.loss);
            let value = fwd.tape.value(loss)[IxDyn(&[0])].to_f64_lossy();
            if !value.is_finite() {
                // divergence: fall back to the best validation checkpoint
                epochs_run = epoch;
                break 'outer;
            }
            let grads = fwd.tape.backward(loss);
            let pg = fwd.param_grads(&grads);
            if pg.values().any(|g| g.iter().any(|v| !v.is_finite())) {
                continue;
            }
            opt.step(&mut store, &pg);
            train_sum += value;
            finite += 1;
        }
        let loss_train = if finite > 0 {
            train_sum / finite as f64
        } else {
            f64::NAN
        };
        let loss_val = eval_loss(&model, &mut store, &data.val, &data.scaler, cfg.batch_size, cfg.loss);
        log.push(TrainEpochRecord {
            epoch: epoch + 1,
            loss_train,
            loss_val,
        });
        epochs_run = epoch + 1;
        if !loss_val.is_finite() {
            break;
        }
        let improved = best.as_ref().map(|(b, _)| loss_val < *b).unwrap_or(true);
        if improved {
            best = Some((loss_val, snapshot_weights(&store)));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_val_loss, snap) = best.ok_or_else(|| {
        Error::Divergence("training produced no finite validation checkpoint".into())
    })?;
    restore_weights(&mut store, &snap);
    let report = evaluate(
        &model,
        &mut store,
        &data.test,
        &data.scaler,
        &cfg.horizons,
        &data.dataset_name,
        genotype_hash,
        cfg.zero_mask_all,
        cfg.batch_size,
    )?;
    Ok(TrainOutcome {
        model,
        store,
        report,
        best_val_loss,
        epochs_run,
        log,
    })
}

/// Train a derived genotype from scratch on the original splits.
pub fn train_from_scratch<F: Scalar>(
    genotype: &Genotype,
    data: &TaskData<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    let model_cfg = ModelConfig::from_hyper(
        genotype.meta.d,
        cfg.residual,
        data.n_features(),
        data.n_nodes(),
        data.out_steps(),
        data.mode,
        Default::default(),
    );
    let (model, store) =
        build_discrete_model(genotype, model_cfg, data.adjacency.as_ref(), cfg.seed)?;
    train_model(model, store, data, cfg, &genotype.content_hash())
}

/// Train an explicit layout (harness path; may carry reference operators).
pub fn train_spec<F: Scalar>(
    spec: ModelSpec,
    d: usize,
    data: &TaskData<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    let model_cfg = ModelConfig::from_hyper(
        d,
        cfg.residual,
        data.n_features(),
        data.n_nodes(),
        data.out_steps(),
        data.mode,
        Default::default(),
    );
    let (model, store) = build_from_spec(spec, model_cfg, data.adjacency.as_ref(), cfg.seed)?;
    train_model(model, store, data, cfg, "spec")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticProcess};
    use crate::data::window::{ForecastMode, SplitSpec};
    use crate::genotype::Genotype;
    use crate::task::prepare_task;

    fn tiny_task() -> TaskData<f64> {
        let ds = generate_synthetic::<f64>(4, 200, 3, SyntheticProcess::Diffusion).unwrap();
        prepare_task(&ds, &SplitSpec::default(), 6, 6, ForecastMode::MultiStep).unwrap()
    }

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            horizons: vec![1, 3, 6],
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn identity_genotype_trains_and_reports() {
        let task = tiny_task();
        let g = Genotype::all_identity(3, 2, 8, &task.dataset_name);
        let out = train_from_scratch(&g, &task, &tiny_cfg(3)).unwrap();
        assert!(out.report.average.mae.is_finite());
        assert!(out.report.average.mae <= out.report.average.rmse);
        assert_eq!(out.report.per_horizon.len(), 3);
        assert_eq!(out.log.len(), out.epochs_run);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let task = tiny_task();
        let g = Genotype::all_identity(3, 1, 8, &task.dataset_name);
        let a = train_from_scratch(&g, &task, &tiny_cfg(2)).unwrap();
        let b = train_from_scratch(&g, &task, &tiny_cfg(2)).unwrap();
        let ja = serde_json::to_string(&a.report).unwrap();
        let jb = serde_json::to_string(&b.report).unwrap();
        assert_eq!(ja, jb);
        for (x, y) in a.log.iter().zip(b.log.iter()) {
            assert_eq!(x.loss_train.to_bits(), y.loss_train.to_bits());
            assert_eq!(x.loss_val.to_bits(), y.loss_val.to_bits());
        }
    }

    #[test]
    fn early_stopping_uses_validation_not_test() {
        let task = tiny_task();
        let g = Genotype::all_identity(3, 1, 8, &task.dataset_name);
        let mut cfg = tiny_cfg(40);
        cfg.patience = 2;
        let out = train_from_scratch(&g, &task, &cfg).unwrap();
        // stopped at or before the epoch budget, and the kept checkpoint is
        // the validation minimum of the recorded curve
        assert!(out.epochs_run <= 40);
        let min_val = out
            .log
            .iter()
            .map(|r| r.loss_val)
            .fold(f64::INFINITY, f64::min);
        assert!((out.best_val_loss - min_val).abs() < 1e-12);
    }

    #[test]
    fn transfer_to_same_feature_count_dataset_runs() {
        let task_a = tiny_task();
        let g = Genotype::all_identity(3, 1, 8, &task_a.dataset_name);
        // different dataset, same F=1
        let ds_b = generate_synthetic::<f64>(6, 200, 9, SyntheticProcess::Seasonal).unwrap();
        let task_b = prepare_task(&ds_b, &SplitSpec::default(), 6, 6, ForecastMode::MultiStep)
            .unwrap();
        let out = train_from_scratch(&g, &task_b, &tiny_cfg(2)).unwrap();
        assert!(out.report.average.mae.is_finite());
    }

    #[test]
    fn single_step_training_reports_rrse_corr() {
        let ds = generate_synthetic::<f64>(4, 220, 3, SyntheticProcess::Diffusion).unwrap();
        let task = prepare_task(&ds, &SplitSpec::default(), 8, 3, ForecastMode::SingleStep)
            .unwrap();
        let g = Genotype::all_identity(3, 1, 8, &task.dataset_name);
        let mut cfg = tiny_cfg(2);
        cfg.horizons = vec![];
        let out = train_from_scratch(&g, &task, &cfg).unwrap();
        let ss = out.report.single_step.unwrap();
        assert!(ss.rrse.is_finite());
        assert!((-1.0..=1.0).contains(&ss.corr));
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let task = tiny_task();
        let g = Genotype::all_identity(3, 1, 8, &task.dataset_name);
        let mut out = train_from_scratch(&g, &task, &tiny_cfg(2)).unwrap();
        let r1 = evaluate(
            &out.model,
            &mut out.store,
            &task.test,
            &task.scaler,
            &[1, 3],
            "x",
            "y",
            false,
            16,
        )
        .unwrap();
        let r2 = evaluate(
            &out.model,
            &mut out.store,
            &task.test,
            &task.scaler,
            &[1, 3],
            "x",
            "y",
            false,
            16,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }
}

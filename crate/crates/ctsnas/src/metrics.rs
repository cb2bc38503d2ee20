//! Forecast-quality metrics and report assembly.
//!
//! Multi-step reports carry MAE/RMSE/MAPE per requested horizon plus the
//! all-step pooled average; single-step reports carry RRSE and the mean
//! per-series correlation. MAPE always skips zero-truth entries; an optional
//! flag extends that mask to MAE/RMSE for dropout-heavy data.

use ndarray::{ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::data::window::ForecastMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn masked_pairs<'a, F: Scalar>(
    pred: &'a ArrayD<F>,
    truth: &'a ArrayD<F>,
    mask_zero: bool,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter()
        .zip(truth.iter())
        .map(|(p, t)| (p.to_f64_lossy(), t.to_f64_lossy()))
        .filter(move |(_, t)| !mask_zero || *t != 0.0)
}

pub fn mae<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>, mask_zero: bool) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, t) in masked_pairs(pred, truth, mask_zero) {
        acc += (p - t).abs();
        n += 1;
    }
    finish(acc, n)
}

pub fn rmse<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>, mask_zero: bool) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, t) in masked_pairs(pred, truth, mask_zero) {
        acc += (p - t) * (p - t);
        n += 1;
    }
    finish(acc, n).map(f64::sqrt)
}

/// Mean absolute percentage error over entries with nonzero truth, as a
/// percentage.
pub fn mape<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, t) in masked_pairs(pred, truth, true) {
        acc += ((p - t) / t).abs();
        n += 1;
    }
    finish(acc, n).map(|v| v * 100.0)
}

/// Root relative squared error, pooled over all entries:
/// `sqrt(sum (p-y)^2 / sum (y-ybar)^2)`.
pub fn rrse<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let n = truth.len();
    if n == 0 {
        return Err(Error::Metric("no valid entries".into()));
    }
    let ybar: f64 = truth.iter().map(|t| t.to_f64_lossy()).sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let (p, t) = (p.to_f64_lossy(), t.to_f64_lossy());
        num += (p - t) * (p - t);
        den += (t - ybar) * (t - ybar);
    }
    if den <= 0.0 {
        return Err(Error::Metric("truth has zero variance".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean over series of the Pearson correlation between prediction and truth
/// across windows. Expects `[S, N, ..]`; series with zero truth variance are
/// skipped.
pub fn corr<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let s = pred.shape()[0];
    let n = pred.shape()[1];
    if s < 2 {
        return Err(Error::Metric("need at least 2 windows for correlation".into()));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for ni in 0..n {
        let p: Vec<f64> = pred
            .index_axis(Axis(1), ni)
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let t: Vec<f64> = truth
            .index_axis(Axis(1), ni)
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let m = p.len() as f64;
        let (pm, tm) = (
            p.iter().sum::<f64>() / m,
            t.iter().sum::<f64>() / m,
        );
        let mut cov = 0.0;
        let mut pv = 0.0;
        let mut tv = 0.0;
        for (pi, ti) in p.iter().zip(t.iter()) {
            cov += (pi - pm) * (ti - tm);
            pv += (pi - pm) * (pi - pm);
            tv += (ti - tm) * (ti - tm);
        }
        if tv <= 0.0 || pv <= 0.0 {
            continue;
        }
        total += cov / (pv.sqrt() * tv.sqrt());
        used += 1;
    }
    if used == 0 {
        return Err(Error::Metric("all series have zero variance".into()));
    }
    Ok(total / used as f64)
}

fn check_shapes<F: Scalar>(pred: &ArrayD<F>, truth: &ArrayD<F>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "metric shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

fn finish(acc: f64, n: usize) -> Result<f64> {
    if n == 0 {
        Err(Error::Metric("no valid entries".into()))
    } else {
        Ok(acc / n as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based forecast step; `None` marks the all-step average row.
    pub horizon: Option<usize>,
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleStepMetrics {
    pub rrse: f64,
    pub corr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub genotype_hash: String,
    pub mode: ForecastMode,
    pub n_windows: usize,
    pub per_horizon: Vec<HorizonMetrics>,
    pub average: HorizonMetrics,
    pub single_step: Option<SingleStepMetrics>,
    /// Masking policy metadata: MAPE always skips zero truth; when set, the
    /// zero mask also applies to MAE/RMSE.
    pub mape_zero_masked: bool,
    pub zero_mask_all_metrics: bool,
}

impl MetricsReport {
    /// Aligned plain-text table, one row per horizon plus the average.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset: {}  windows: {}  genotype: {}\n",
            self.dataset,
            self.n_windows,
            &self.genotype_hash[..12.min(self.genotype_hash.len())]
        ));
        out.push_str(&format!(
            "{:>8} {:>10} {:>10} {:>9}\n",
            "horizon", "MAE", "RMSE", "MAPE"
        ));
        for row in &self.per_horizon {
            out.push_str(&format!(
                "{:>8} {:>10.4} {:>10.4} {:>8.2}%\n",
                row.horizon.expect("per-horizon rows are numbered"),
                row.mae,
                row.rmse,
                row.mape_pct
            ));
        }
        out.push_str(&format!(
            "{:>8} {:>10.4} {:>10.4} {:>8.2}%\n",
            "avg", self.average.mae, self.average.rmse, self.average.mape_pct
        ));
        if let Some(ss) = &self.single_step {
            out.push_str(&format!(
                "{:>8} {:>10.4}\n{:>8} {:>10.4}\n",
                "RRSE", ss.rrse, "CORR", ss.corr
            ));
        }
        out
    }
}

/// Assemble a report from unit-space predictions and targets `[S, N, Qd, 1]`.
/// For single-step reports RRSE/CORR are computed on standardized values via
/// the provided `(mean, std)` of the target feature.
#[allow(clippy::too_many_arguments)]
pub fn report_from_predictions<F: Scalar>(
    pred: &ArrayD<F>,
    truth: &ArrayD<F>,
    mode: ForecastMode,
    horizons: &[usize],
    target_stats: (f64, f64),
    dataset: &str,
    genotype_hash: &str,
    zero_mask_all: bool,
) -> Result<MetricsReport> {
    check_shapes(pred, truth)?;
    let q = pred.shape()[2];
    let n_windows = pred.shape()[0];
    let mut per_horizon = Vec::new();
    if matches!(mode, ForecastMode::MultiStep) {
        for &h in horizons {
            if h == 0 || h > q {
                return Err(Error::Metric(format!(
                    "horizon {h} outside 1..={q}"
                )));
            }
            let p = pred.index_axis(Axis(2), h - 1).to_owned().into_dyn();
            let t = truth.index_axis(Axis(2), h - 1).to_owned().into_dyn();
            per_horizon.push(HorizonMetrics {
                horizon: Some(h),
                mae: mae(&p, &t, zero_mask_all)?,
                rmse: rmse(&p, &t, zero_mask_all)?,
                mape_pct: mape(&p, &t)?,
            });
        }
    }
    let average = HorizonMetrics {
        horizon: None,
        mae: mae(pred, truth, zero_mask_all)?,
        rmse: rmse(pred, truth, zero_mask_all)?,
        mape_pct: mape(pred, truth)?,
    };
    let single_step = if matches!(mode, ForecastMode::SingleStep) {
        let (mu, sigma) = target_stats;
        let z = |a: &ArrayD<F>| -> ArrayD<F> {
            a.mapv(|v| F::from_f64_lossy((v.to_f64_lossy() - mu) / sigma))
        };
        let zp = z(pred);
        let zt = z(truth);
        Some(SingleStepMetrics {
            rrse: rrse(&zp, &zt)?,
            corr: corr(&zp, &zt)?,
        })
    } else {
        None
    };
    let report = MetricsReport {
        dataset: dataset.into(),
        genotype_hash: genotype_hash.into(),
        mode,
        n_windows,
        per_horizon,
        average,
        single_step,
        mape_zero_masked: true,
        zero_mask_all_metrics: zero_mask_all,
    };
    for row in report.per_horizon.iter().chain([&report.average]) {
        if row.mae > row.rmse * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Metric(format!(
                "MAE {} exceeds RMSE {}",
                row.mae, row.rmse
            )));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::Rng;

    fn arr(v: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
    }

    #[test]
    fn mae_hand_sum() {
        let (p, t) = (arr(&[1.0, 2.0]), arr(&[2.0, 4.0]));
        assert_eq!(mae(&p, &t, false).unwrap(), 1.5);
    }

    #[test]
    fn rmse_hand_arithmetic() {
        let (p, t) = (arr(&[1.0, 2.0]), arr(&[2.0, 4.0]));
        // sqrt((1 + 4) / 2)
        let expected = (2.5f64).sqrt();
        assert!((rmse(&p, &t, false).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.58114).abs() < 1e-5);
    }

    #[test]
    fn four_element_hand_values() {
        let p = arr(&[1.0, 2.0, 3.0, 4.0]);
        let t = arr(&[2.0, 4.0, 1.0, 4.0]);
        assert!((mae(&p, &t, false).unwrap() - 1.25).abs() < 1e-9);
        assert!((rmse(&p, &t, false).unwrap() - 1.5).abs() < 1e-9);
        assert!((mape(&p, &t).unwrap() - 75.0).abs() < 1e-9);
        assert!((rrse(&p, &t).unwrap() - (9.0f64 / 6.75).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn zero_truth_excluded_from_mape_only() {
        let p = arr(&[1.0, 2.0, 3.0]);
        let t = arr(&[2.0, 0.0, 4.0]);
        // MAPE over entries 0 and 2: (0.5 + 0.25)/2 = 37.5%
        assert!((mape(&p, &t).unwrap() - 37.5).abs() < 1e-12);
        // MAE includes the zero-truth entry: (1 + 2 + 1)/3
        assert!((mae(&p, &t, false).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        // optional full mask drops it everywhere
        assert!((mae(&p, &t, true).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_errors() {
        let p = arr(&[1.0, 2.0]);
        let t = arr(&[0.0, 0.0]);
        let err = mape(&p, &t).unwrap_err();
        assert!(err.to_string().contains("no valid entries"), "{err}");
    }

    #[test]
    fn rrse_examples() {
        let t = arr(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(rrse(&t, &t).unwrap(), 0.0);
        let mean = arr(&[3.0, 3.0, 3.0, 3.0]);
        assert!((rrse(&mean, &t).unwrap() - 1.0).abs() < 1e-12);
        let p = arr(&[0.0, 0.0]);
        let y = arr(&[1.0, -1.0]);
        assert!((rrse(&p, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(rrse(&mean, &mean).is_err(), "zero variance rejected");
    }

    fn series(vals: &[f64]) -> ArrayD<f64> {
        // [S, 1, 1, 1] single-node series
        ArrayD::from_shape_vec(IxDyn(&[vals.len(), 1, 1, 1]), vals.to_vec()).unwrap()
    }

    #[test]
    fn corr_perfect_and_inverted() {
        let t = series(&[1.0, 3.0, 2.0, 5.0]);
        assert!((corr(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let neg = t.mapv(|v| -v);
        assert!((corr(&neg, &t).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn corr_uncorrelated_noise_is_small() {
        let mut rng = crate::rng::stream(5, "corr-mc", &[]);
        let n = 10_000;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = corr(&series(&p), &series(&t)).unwrap();
        assert!(c.abs() < 0.05, "{c}");
    }

    #[test]
    fn corr_skips_constant_series() {
        // two nodes: one constant truth, one varying
        let mut p = ArrayD::zeros(IxDyn(&[4, 2, 1, 1]));
        let mut t = ArrayD::zeros(IxDyn(&[4, 2, 1, 1]));
        for s in 0..4 {
            p[IxDyn(&[s, 0, 0, 0])] = s as f64;
            t[IxDyn(&[s, 0, 0, 0])] = s as f64 * 2.0;
            p[IxDyn(&[s, 1, 0, 0])] = s as f64;
            t[IxDyn(&[s, 1, 0, 0])] = 7.0; // constant: skipped
        }
        assert!((corr(&p, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_symmetry_and_scale_covariance() {
        let mut rng = crate::rng::stream(6, "sym", &[]);
        for _ in 0..20 {
            let p: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let t: Vec<f64> = (0..16).map(|_| rng.gen_range(1.0..4.0)).collect();
            let (pa, ta) = (arr(&p), arr(&t));
            assert!((mae(&pa, &ta, false).unwrap() - mae(&ta, &pa, false).unwrap()).abs() < 1e-12);
            assert!((rmse(&pa, &ta, false).unwrap() - rmse(&ta, &pa, false).unwrap()).abs() < 1e-12);
            let c = rng.gen_range(0.5..3.0);
            let (pc, tc) = (pa.mapv(|v| c * v), ta.mapv(|v| c * v));
            assert!(
                (mae(&pc, &tc, false).unwrap() - c * mae(&pa, &ta, false).unwrap()).abs() < 1e-9
            );
            assert!((mape(&pc, &tc).unwrap() - mape(&pa, &ta).unwrap()).abs() < 1e-9);
        }
    }

    fn pred_truth(q: usize) -> (ArrayD<f64>, ArrayD<f64>) {
        let shape = [5usize, 3, q, 1];
        let p = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            1.0 + (ix[0] * 7 + ix[1] * 3 + ix[2]) as f64 * 0.1
        });
        let t = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            1.2 + (ix[0] * 5 + ix[1] * 2 + ix[2]) as f64 * 0.11
        });
        (p, t)
    }

    #[test]
    fn report_has_horizon_rows_plus_average() {
        let (p, t) = pred_truth(12);
        let r = report_from_predictions(
            &p,
            &t,
            ForecastMode::MultiStep,
            &[3, 6, 12],
            (0.0, 1.0),
            "toy",
            "cafe",
            false,
        )
        .unwrap();
        assert_eq!(r.per_horizon.len(), 3);
        assert!(r.single_step.is_none());
        assert!(r.average.mae <= r.average.rmse);
        let table = r.to_table();
        assert!(table.contains("avg"), "{table}");
        assert_eq!(table.lines().count(), 2 + 3 + 1);
    }

    #[test]
    fn perfect_oracle_scores_zero() {
        let (_, t) = pred_truth(4);
        let r = report_from_predictions(
            &t,
            &t,
            ForecastMode::MultiStep,
            &[1, 4],
            (0.0, 1.0),
            "toy",
            "cafe",
            false,
        )
        .unwrap();
        assert_eq!(r.average.mae, 0.0);
        assert_eq!(r.average.rmse, 0.0);
        assert_eq!(r.average.mape_pct, 0.0);
    }

    #[test]
    fn horizon_beyond_q_rejected() {
        let (p, t) = pred_truth(12);
        let err = report_from_predictions(
            &p,
            &t,
            ForecastMode::MultiStep,
            &[13],
            (0.0, 1.0),
            "toy",
            "cafe",
            false,
        )
        .unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
    }

    #[test]
    fn single_step_report_computes_standardized_rrse_corr() {
        let (p, t) = pred_truth(1);
        let r = report_from_predictions(
            &p,
            &t,
            ForecastMode::SingleStep,
            &[],
            (1.5, 0.8),
            "toy",
            "cafe",
            false,
        )
        .unwrap();
        let ss = r.single_step.unwrap();
        assert!(ss.rrse >= 0.0);
        assert!(ss.corr >= -1.0 && ss.corr <= 1.0);
        // standardization with the shared scaler leaves RRSE unchanged
        let raw = rrse(&p, &t).unwrap();
        assert!((ss.rrse - raw).abs() < 1e-9);
    }
}

//! Training objective: error between inverse-transformed predictions and
//! targets kept in original units.

use std::sync::Arc;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::data::window::Scaler;
use crate::error::{Error, Result};
use crate::forward::Fwd;
use crate::scalar::Scalar;
use crate::tape::Vid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Map z-space predictions back to original units on the tape.
pub fn predictions_in_units<F: Scalar>(fwd: &mut Fwd<F>, pred: Vid, scaler: &Scaler<F>) -> Vid {
    let (mu, sigma) = scaler.target_mean_std();
    let scaled = fwd.tape.scale(pred, sigma);
    fwd.tape.add_scalar(scaled, mu)
}

/// Loss node against unit-space targets.
pub fn forecast_loss<F: Scalar>(
    fwd: &mut Fwd<F>,
    pred: Vid,
    targets: &Array4<F>,
    scaler: &Scaler<F>,
    kind: LossKind,
) -> Vid {
    let units = predictions_in_units(fwd, pred, scaler);
    let target = Arc::new(targets.clone().into_dyn());
    match kind {
        LossKind::Mae => fwd.tape.mae_loss(units, target),
        LossKind::Mse => fwd.tape.mse_loss(units, target),
    }
}

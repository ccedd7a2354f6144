//! Sphering: ZCA whitening fit on negative-control wells.

use nalgebra::DMatrix;

use crate::linalg::{column_means, covariance, inverse_sqrt_spd};
use crate::{CoreError, Result};

/// Default ridge added to the control covariance diagonal.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Centers by the control mean and multiplies by the inverse square root of
/// the (ridge-regularized) control covariance. Controls must span at least
/// two samples.
pub fn sphering_transform(
    x: &[Vec<f64>],
    controls: &[bool],
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() || controls.len() != x.len() {
        return Err(CoreError::invalid("one control flag per sample required"));
    }
    let ctrl: Vec<&Vec<f64>> = x
        .iter()
        .zip(controls)
        .filter_map(|(row, &c)| c.then_some(row))
        .collect();
    if ctrl.len() < 2 {
        return Err(CoreError::invalid(format!(
            "sphering needs at least 2 control wells, found {}",
            ctrl.len()
        )));
    }
    let ctrl_owned: Vec<Vec<f64>> = ctrl.iter().map(|r| (*r).clone()).collect();
    let mean = column_means(&ctrl_owned);
    let d = mean.len();
    let mut cov = covariance(&ctrl_owned, &mean);
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    let w: DMatrix<f64> = inverse_sqrt_spd(&cov, 1e-12);

    let out = x
        .iter()
        .map(|row| {
            (0..d)
                .map(|j| {
                    let mut s = 0.0;
                    for i in 0..d {
                        s += (row[i] - mean[i]) * w[(i, j)];
                    }
                    s
                })
                .collect()
        })
        .collect();
    Ok(out)
}

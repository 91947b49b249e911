//! Closed forms for the shift model: the chain is the linear recursion
//! `Z_{n+1} = (1-eta) Z_n + eta theta_n`, the flow is an Ornstein-Uhlenbeck
//! process with rate `1 + eta/2` and noise strength `sqrt(eta)`.

use crate::error::{CoreError, Result};
use serde::Serialize;

/// Endpoint mean and variance of both descriptions at horizon `T = n eta`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearClosedForms {
    pub sgd_mean: f64,
    pub sgd_var: f64,
    pub smf_mean: f64,
    pub smf_var: f64,
}

/// The four closed forms for initial point `x`. `horizon / eta` must be an
/// integer number of chain steps.
pub fn closed_form_linear_oracle(eta: f64, horizon: f64, x: f64) -> Result<LinearClosedForms> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(CoreError::NonPositiveLearningRate(eta));
    }
    let steps = horizon / eta;
    let n = steps.round();
    if (steps - n).abs() > f64::EPSILON * steps.abs().max(1.0) {
        return Err(CoreError::NonIntegerSteps {
            what: "horizon / eta",
            value: steps,
        });
    }
    let n = n as i32;
    let contraction = (1.0 - eta).powi(n);
    let rate = 1.0 + eta / 2.0;
    Ok(LinearClosedForms {
        sgd_mean: contraction * x,
        sgd_var: eta * (1.0 - (1.0 - eta).powi(2 * n)) / (2.0 - eta),
        smf_mean: x * (-rate * horizon).exp(),
        smf_var: eta * (1.0 - (-2.0 * rate * horizon).exp()) / (2.0 * rate),
    })
}

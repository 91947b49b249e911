//! Two-point covariation estimators. The realized covariation of the flows
//! is accumulated from the *martingale* increments (the generated noise), so
//! drift does not bias the short-window estimate; the chain statistic is the
//! plain one-step covariance over replicates.
//!
//! On the scale model at `x = 1, xbar = -1` the two flow couplings separate:
//! the cylindrical flow sees the two-point kernel `A~(x, xbar) = x*xbar < 0`,
//! the root-covariance flow sees `Sigma^{1/2}(x) Sigma^{1/2}(xbar) = |x||xbar| > 0`.

use super::mean_and_se;
use crate::error::{CoreError, Result};
use crate::integrators::{gaussian_increment, smf_noise_increment, sme_noise_increment};
use crate::linalg;
use crate::loss_models::LossModel;
use crate::rng::RngStream;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoPointMethod {
    Smf,
    Sme,
    Sgd,
}

impl TwoPointMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TwoPointMethod::Smf => "smf",
            TwoPointMethod::Sme => "sme",
            TwoPointMethod::Sgd => "sgd",
        }
    }
}

pub struct TwoPointSpec<'a> {
    pub model: &'a dyn LossModel,
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub eta: f64,
    /// Number of integrator steps in the averaging window (flows only).
    pub window_steps: usize,
    pub dt_divisor: u32,
    pub replicates: usize,
}

/// Row-major `d x d` estimate with per-entry standard errors.
///
/// For the flows this is the realized covariation divided by the elapsed
/// window time (so the target is `eta * A~(x, xbar)` and
/// `eta * S^{1/2}(x) S^{1/2}(xbar)` respectively); for the chain it is the
/// one-step covariance itself (target `eta^2 A~(x, y)`).
#[derive(Debug, Clone, Serialize)]
pub struct CovariationEstimate {
    pub method: TwoPointMethod,
    pub rate: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub replicates: usize,
}

pub fn two_point_covariation(
    method: TwoPointMethod,
    spec: &TwoPointSpec,
    stream: &RngStream,
) -> Result<CovariationEstimate> {
    if spec.replicates == 0 {
        return Err(CoreError::ZeroReplicates);
    }
    if spec.window_steps == 0 {
        return Err(CoreError::Invalid("window must be at least one step".into()));
    }
    let d = spec.model.dim();
    let per_replicate: Vec<Vec<f64>> = match method {
        TwoPointMethod::Smf => (0..spec.replicates)
            .into_par_iter()
            .map(|rep| flow_replicate(spec, stream.child(rep as u64), false))
            .collect::<Result<_>>()?,
        TwoPointMethod::Sme => (0..spec.replicates)
            .into_par_iter()
            .map(|rep| flow_replicate(spec, stream.child(rep as u64), true))
            .collect::<Result<_>>()?,
        TwoPointMethod::Sgd => {
            return sgd_one_step_covariance(spec, stream);
        }
    };
    let mut rate = Vec::with_capacity(d * d);
    let mut ses = Vec::with_capacity(d * d);
    for entry in 0..d * d {
        let column: Vec<f64> = per_replicate.iter().map(|r| r[entry]).collect();
        let (m, se) = mean_and_se(&column);
        rate.push(m);
        ses.push(se);
    }
    Ok(CovariationEstimate {
        method,
        rate,
        std_errors: ses,
        replicates: spec.replicates,
    })
}

/// One window of the coupled two-point flow; returns
/// `sum_steps dN(x) (x) dN(xbar) / (window * dt)`.
fn flow_replicate(spec: &TwoPointSpec, stream: RngStream, root_covariance: bool) -> Result<Vec<f64>> {
    let model = spec.model;
    let d = model.dim();
    let eta = spec.eta;
    let dt = eta / spec.dt_divisor as f64;
    let mut x = spec.x.clone();
    let mut xbar = spec.xbar.clone();
    let mut acc = vec![0.0; d * d];
    for step in 0..spec.window_steps {
        let mut rng = stream.child(step as u64).rng();
        let (noise_x, noise_xbar) = if root_covariance {
            let dw = gaussian_increment(d, dt, &mut rng);
            (
                sme_noise_increment(model, eta, &x, &dw)?,
                sme_noise_increment(model, eta, &xbar, &dw)?,
            )
        } else {
            let inc = model.data().draw_increment(dt, &mut rng)?;
            (
                smf_noise_increment(model, eta, &x, &inc),
                smf_noise_increment(model, eta, &xbar, &inc),
            )
        };
        linalg::outer_acc(&mut acc, 1.0, &noise_x, &noise_xbar);
        let drift_x = model.modified_drift(eta, &x);
        let drift_xbar = model.modified_drift(eta, &xbar);
        linalg::axpy(&mut x, dt, &drift_x);
        linalg::axpy(&mut x, 1.0, &noise_x);
        linalg::axpy(&mut xbar, dt, &drift_xbar);
        linalg::axpy(&mut xbar, 1.0, &noise_xbar);
        if !linalg::all_finite(&x) || !linalg::all_finite(&xbar) {
            return Err(CoreError::NonFinite("two-point flow update"));
        }
    }
    let elapsed = spec.window_steps as f64 * dt;
    Ok(linalg::scaled(&acc, 1.0 / elapsed))
}

/// Covariance of the one-step chain endpoints over replicates, driven by the
/// shared data sample.
fn sgd_one_step_covariance(spec: &TwoPointSpec, stream: &RngStream) -> Result<CovariationEstimate> {
    let model = spec.model;
    let d = model.dim();
    let eta = spec.eta;
    let endpoints: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream.child(rep as u64).rng();
            let atom = model.data().sample(&mut rng);
            let mut zx = spec.x.clone();
            linalg::axpy(&mut zx, -eta, &model.grad_pointwise(&spec.x, atom));
            let mut zy = spec.xbar.clone();
            linalg::axpy(&mut zy, -eta, &model.grad_pointwise(&spec.xbar, atom));
            (zx, zy)
        })
        .collect();
    let n = endpoints.len() as f64;
    let mut mean_x = vec![0.0; d];
    let mut mean_y = vec![0.0; d];
    for (zx, zy) in &endpoints {
        linalg::axpy(&mut mean_x, 1.0 / n, zx);
        linalg::axpy(&mut mean_y, 1.0 / n, zy);
    }
    let mut rate = Vec::with_capacity(d * d);
    let mut ses = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let products: Vec<f64> = endpoints
                .iter()
                .map(|(zx, zy)| (zx[i] - mean_x[i]) * (zy[j] - mean_y[j]))
                .collect();
            let (m, se) = mean_and_se(&products);
            rate.push(m);
            ses.push(se);
        }
    }
    Ok(CovariationEstimate {
        method: TwoPointMethod::Sgd,
        rate,
        std_errors: ses,
        replicates: spec.replicates,
    })
}

/// Realized quadratic variation of the difference process `X(x) - X(xbar)`
/// under the cylindrical flow, per unit time, from martingale increments.
pub fn smf_difference_quadratic_variation(
    spec: &TwoPointSpec,
    stream: &RngStream,
) -> Result<CovariationEstimate> {
    if spec.replicates == 0 {
        return Err(CoreError::ZeroReplicates);
    }
    let model = spec.model;
    let d = model.dim();
    let eta = spec.eta;
    let dt = eta / spec.dt_divisor as f64;
    let per_replicate: Vec<Vec<f64>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let stream = stream.child(rep as u64);
            let mut x = spec.x.clone();
            let mut xbar = spec.xbar.clone();
            let mut acc = vec![0.0; d * d];
            for step in 0..spec.window_steps {
                let mut rng = stream.child(step as u64).rng();
                let inc = model.data().draw_increment(dt, &mut rng)?;
                let noise_x = smf_noise_increment(model, eta, &x, &inc);
                let noise_xbar = smf_noise_increment(model, eta, &xbar, &inc);
                let diff = linalg::sub(&noise_x, &noise_xbar);
                linalg::outer_acc(&mut acc, 1.0, &diff, &diff);
                let drift_x = model.modified_drift(eta, &x);
                let drift_xbar = model.modified_drift(eta, &xbar);
                linalg::axpy(&mut x, dt, &drift_x);
                linalg::axpy(&mut x, 1.0, &noise_x);
                linalg::axpy(&mut xbar, dt, &drift_xbar);
                linalg::axpy(&mut xbar, 1.0, &noise_xbar);
            }
            let elapsed = spec.window_steps as f64 * dt;
            Ok(linalg::scaled(&acc, 1.0 / elapsed))
        })
        .collect::<Result<_>>()?;
    let mut rate = Vec::with_capacity(d * d);
    let mut ses = Vec::with_capacity(d * d);
    for entry in 0..d * d {
        let column: Vec<f64> = per_replicate.iter().map(|r| r[entry]).collect();
        let (m, se) = mean_and_se(&column);
        rate.push(m);
        ses.push(se);
    }
    Ok(CovariationEstimate {
        method: TwoPointMethod::Smf,
        rate,
        std_errors: ses,
        replicates: spec.replicates,
    })
}

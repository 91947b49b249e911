//! Weak-error curves `|E Phi(flow at T) - E Phi(chain after T/eta steps)|`
//! over a learning-rate sweep, and the log-log order fit.

use super::mean_and_se;
use crate::analysis::oracle::closed_form_linear_oracle;
use crate::error::{CoreError, Result};
use crate::integrators::{integrate_smf_endpoint, DriftOrder, FlowState};
use crate::loss_models::LossModel;
use crate::measures::CylindricalFunctional;
use crate::rng::{tags, RngStream};
use crate::sgd_chain::{run_chain_endpoint, ChainState};
use rayon::prelude::*;
use serde::Serialize;

/// One error point per learning rate, with its Monte Carlo standard error
/// (zero for closed-form curves) and a flag for points whose error does not
/// clear the signal-to-noise floor.
#[derive(Debug, Clone, Serialize)]
pub struct WeakErrorCurve {
    pub method: String,
    pub etas: Vec<f64>,
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub noise_dominated: Vec<bool>,
}

impl WeakErrorCurve {
    pub fn new(
        method: impl Into<String>,
        etas: Vec<f64>,
        errors: Vec<f64>,
        std_errors: Vec<f64>,
        snr_floor: f64,
    ) -> Result<Self> {
        if etas.len() != errors.len() || etas.len() != std_errors.len() {
            return Err(CoreError::LengthMismatch {
                what: "curve columns",
                expected: etas.len(),
                got: errors.len().min(std_errors.len()),
            });
        }
        if !etas.windows(2).all(|w| w[0] > w[1]) {
            return Err(CoreError::Invalid(
                "learning rates must be strictly decreasing".into(),
            ));
        }
        if errors.iter().any(|e| *e < 0.0) {
            return Err(CoreError::Invalid("errors must be nonnegative".into()));
        }
        let noise_dominated = errors
            .iter()
            .zip(&std_errors)
            .map(|(e, se)| *se > 0.0 && *e <= snr_floor * *se)
            .collect();
        Ok(WeakErrorCurve {
            method: method.into(),
            etas,
            errors,
            std_errors,
            noise_dominated,
        })
    }
}

/// Least-squares slope of `log error` against `log eta`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub half_width: f64,
    pub points_used: usize,
}

/// Fits the order over the usable (not noise-dominated, positive) points;
/// needs at least three of them. The half width is twice the slope's
/// standard error from the fit residuals.
pub fn fit_order(curve: &WeakErrorCurve) -> Result<OrderFit> {
    let usable: Vec<(f64, f64)> = curve
        .etas
        .iter()
        .zip(&curve.errors)
        .zip(&curve.noise_dominated)
        .filter(|((_, e), flagged)| !**flagged && **e > 0.0)
        .map(|((eta, e), _)| (eta.ln(), e.ln()))
        .collect();
    if usable.is_empty() {
        return Err(CoreError::NoiseDominated);
    }
    if usable.len() < 3 {
        return Err(CoreError::TooFewPoints {
            need: 3,
            got: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = usable
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    Ok(OrderFit {
        slope,
        half_width: 2.0 * se,
        points_used: usable.len(),
    })
}

/// Deterministic curve for the shift model with `Phi` = coordinate mean:
/// both expectations are in closed form, so no sampling error at all.
/// With the modified drift the flow mean is `x e^{-(1+eta/2)T}`; with the
/// first-order drift it is `x e^{-T}`.
pub fn closed_form_shift_curve(
    etas: &[f64],
    horizon: f64,
    x: f64,
    order: DriftOrder,
) -> Result<WeakErrorCurve> {
    let mut errors = Vec::with_capacity(etas.len());
    for &eta in etas {
        let forms = closed_form_linear_oracle(eta, horizon, x)?;
        let flow_mean = match order {
            DriftOrder::Modified => forms.smf_mean,
            DriftOrder::FirstOrder => x * (-horizon).exp(),
        };
        errors.push((flow_mean - forms.sgd_mean).abs());
    }
    let method = match order {
        DriftOrder::Modified => "closed-form-modified",
        DriftOrder::FirstOrder => "closed-form-first-order",
    };
    WeakErrorCurve::new(method, etas.to_vec(), errors, vec![0.0; etas.len()], 0.0)
}

/// Monte Carlo weak-error study: chain versus cylindrical flow.
pub struct WeakErrorSpec<'a> {
    pub model: &'a dyn LossModel,
    pub phi: &'a CylindricalFunctional,
    /// Initial points; all are tracked jointly (shared data/noise).
    pub initial: Vec<Vec<f64>>,
    pub etas: Vec<f64>,
    pub horizon: f64,
    pub dt_divisor: u32,
    pub replicates: usize,
    pub order: DriftOrder,
    /// Points with `error <= snr_floor * se` are flagged noise-dominated.
    pub snr_floor: f64,
}

/// Estimates `|E Phi(Gamma_n) - E Phi(Lambda_T)|` per learning rate.
/// Replicates share data streams across learning rates so the sweep is
/// positively coupled; chain and flow noises are independent.
pub fn monte_carlo_weak_error(spec: &WeakErrorSpec, stream: &RngStream) -> Result<WeakErrorCurve> {
    if spec.replicates == 0 {
        return Err(CoreError::ZeroReplicates);
    }
    if spec.dt_divisor < 10 {
        return Err(CoreError::Invalid(format!(
            "dt divisor must be at least 10, got {}",
            spec.dt_divisor
        )));
    }
    let mut errors = Vec::with_capacity(spec.etas.len());
    let mut ses = Vec::with_capacity(spec.etas.len());
    for (ei, &eta) in spec.etas.iter().enumerate() {
        let ratio = spec.horizon / eta;
        let n_steps = ratio.round();
        if (ratio - n_steps).abs() > f64::EPSILON * ratio.abs().max(1.0) {
            return Err(CoreError::NonIntegerSteps {
                what: "horizon / eta",
                value: ratio,
            });
        }
        let n_steps = n_steps as usize;
        let dt = eta / spec.dt_divisor as f64;
        let eta_stream = stream.child(ei as u64);

        let cells: Vec<(f64, f64)> = (0..spec.replicates)
            .into_par_iter()
            .map(|rep| {
                let rep = rep as u64;
                let chain_init = ChainState::new(spec.initial.clone(), eta).expect("valid state");
                // Data streams are keyed by replicate only, so every eta sees
                // the same data randomness per replicate.
                let data_stream = stream.child(tags::DATA).child(rep);
                let chain_end = run_chain_endpoint(spec.model, &chain_init, n_steps, &data_stream)
                    .expect("chain step");
                let chain_value = spec.phi.eval(&chain_end.measure());

                let flow_init =
                    FlowState::new(spec.initial.clone(), eta, dt).expect("valid state");
                let noise_stream = eta_stream.child(tags::NOISE).child(rep);
                let flow_end = integrate_smf_endpoint(
                    spec.model,
                    &flow_init,
                    spec.horizon,
                    &noise_stream,
                    spec.order,
                )
                .expect("flow step");
                let flow_value = spec.phi.eval(&flow_end.measure());
                (chain_value, flow_value)
            })
            .collect();

        let chain_vals: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let flow_vals: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let (chain_mean, chain_se) = mean_and_se(&chain_vals);
        let (flow_mean, flow_se) = mean_and_se(&flow_vals);
        errors.push((chain_mean - flow_mean).abs());
        ses.push((chain_se * chain_se + flow_se * flow_se).sqrt());
    }
    WeakErrorCurve::new(
        "monte-carlo",
        spec.etas.clone(),
        errors,
        ses,
        spec.snr_floor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_models::ShiftModel;

    #[test]
    fn synthetic_slopes() {
        let etas = vec![0.1, 0.05, 0.025, 0.0125];
        let quadratic: Vec<f64> = etas.iter().map(|e| 3.0 * e * e).collect();
        let curve =
            WeakErrorCurve::new("synthetic", etas.clone(), quadratic, vec![0.0; 4], 0.0).unwrap();
        let fit = fit_order(&curve).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);

        let linear: Vec<f64> = etas.iter().map(|e| 0.7 * e).collect();
        let curve =
            WeakErrorCurve::new("synthetic", etas.clone(), linear, vec![0.0; 4], 0.0).unwrap();
        assert!((fit_order(&curve).unwrap().slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_curve_spot_values() {
        let curve =
            closed_form_shift_curve(&[0.1, 0.05, 0.025, 0.0125], 1.0, 1.0, DriftOrder::Modified)
                .unwrap();
        assert!((curve.errors[0] - 1.2593090111552296e-3).abs() < 1e-12);
        assert!((curve.errors[1] - 3.105429974097351e-4).abs() < 1e-12);
        let fit = fit_order(&curve).unwrap();
        assert!(fit.slope > 1.9 && fit.slope < 2.1, "slope {}", fit.slope);
    }

    #[test]
    fn first_order_curve_has_slope_one() {
        let curve =
            closed_form_shift_curve(&[0.1, 0.05, 0.025, 0.0125], 1.0, 1.0, DriftOrder::FirstOrder)
                .unwrap();
        let fit = fit_order(&curve).unwrap();
        assert!(fit.slope > 0.9 && fit.slope < 1.1, "slope {}", fit.slope);
    }

    #[test]
    fn constant_phi_gives_zero_errors() {
        // Both expectations of a constant functional coincide; the curve is
        // all zeros and refuses an order fit.
        let model = ShiftModel::standard();
        let phi = CylindricalFunctional::constant(2.5);
        let spec = WeakErrorSpec {
            model: &model,
            phi: &phi,
            initial: vec![vec![1.0]],
            etas: vec![0.2, 0.1],
            horizon: 0.4,
            dt_divisor: 10,
            replicates: 8,
            order: DriftOrder::Modified,
            snr_floor: 3.0,
        };
        let curve = monte_carlo_weak_error(&spec, &RngStream::new(5)).unwrap();
        assert!(curve.errors.iter().all(|e| *e == 0.0));
        assert!(fit_order(&curve).is_err());
    }

    #[test]
    fn fit_requires_three_points() {
        let curve = WeakErrorCurve::new(
            "short",
            vec![0.1, 0.05],
            vec![1e-3, 2.5e-4],
            vec![0.0, 0.0],
            0.0,
        )
        .unwrap();
        assert!(matches!(
            fit_order(&curve),
            Err(CoreError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn noise_dominated_points_are_flagged_and_skipped() {
        let curve = WeakErrorCurve::new(
            "noisy",
            vec![0.1, 0.05, 0.025, 0.0125],
            vec![1e-3, 2.5e-4, 1e-6, 1e-7],
            vec![0.0, 0.0, 1e-5, 1e-5],
            3.0,
        )
        .unwrap();
        assert_eq!(curve.noise_dominated, vec![false, false, true, true]);
        assert!(matches!(
            fit_order(&curve),
            Err(CoreError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn monte_carlo_matches_closed_form_on_shift() {
        let model = ShiftModel::standard();
        let phi = CylindricalFunctional::coordinate_mean();
        let spec = WeakErrorSpec {
            model: &model,
            phi: &phi,
            initial: vec![vec![1.0]],
            etas: vec![0.2],
            horizon: 1.0,
            dt_divisor: 50,
            replicates: 40_000,
            order: DriftOrder::Modified,
            snr_floor: 0.0,
        };
        let curve = monte_carlo_weak_error(&spec, &RngStream::new(11)).unwrap();
        let forms = closed_form_linear_oracle(0.2, 1.0, 1.0).unwrap();
        let exact = (forms.smf_mean - forms.sgd_mean).abs();
        assert!(
            (curve.errors[0] - exact).abs() < 5.0 * curve.std_errors[0] + 2e-3,
            "mc {} vs exact {exact}",
            curve.errors[0]
        );
    }
}

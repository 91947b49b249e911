//! Euler-Maruyama integrators for the three continuum limits of SGD.
//!
//! All three evolve a whole ensemble of tracked points under *shared* noise,
//! which is what fixes the joint multi-point law:
//!
//! * `smf_step` drives every point with the same per-atom increments; the
//!   noise at `x` is `sqrt(eta) sum_k sqrt(w_k) G(x, theta_k) dB_k`.
//! * `sme_step` drives every point with one shared `d`-dimensional Gaussian
//!   through the pointwise covariance root `Sigma(x)^{1/2}`.
//! * `ddsmf_step` is the measure-dependent variant: the drift sees the
//!   ensemble's empirical measure, frozen over the step.
//!
//! The corrected drift is `-grad(R + (eta/4)|grad R|^2)` (plus the two
//! measure terms in the distribution-dependent case); `DriftOrder::FirstOrder`
//! zeroes those corrections, which drops the weak order from two to one.

use crate::data_space::{CylindricalIncrement, DataDistribution};
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::loss_models::{sqrt_psd, LossModel};
use crate::rng::RngStream;
use crate::sgd_chain::{FrozenKernel, MeasureKernel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Whether the O(eta) drift corrections are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftOrder {
    Modified,
    FirstOrder,
}

/// Ensemble state of a flow integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    positions: Vec<Vec<f64>>,
    steps_taken: usize,
    learning_rate: f64,
    dt: f64,
}

impl FlowState {
    pub fn new(positions: Vec<Vec<f64>>, learning_rate: f64, dt: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(CoreError::EmptyEnsemble);
        }
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(CoreError::NonPositiveLearningRate(learning_rate));
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(CoreError::NonPositiveStep(dt));
        }
        if dt > learning_rate {
            return Err(CoreError::StepTooCoarse {
                dt,
                eta: learning_rate,
            });
        }
        for p in &positions {
            if !linalg::all_finite(p) {
                return Err(CoreError::NonFinite("flow position"));
            }
        }
        Ok(FlowState {
            positions,
            steps_taken: 0,
            learning_rate,
            dt,
        })
    }

    pub fn single(x: Vec<f64>, learning_rate: f64, dt: f64) -> Result<Self> {
        Self::new(vec![x], learning_rate, dt)
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    /// Elapsed time, computed as steps x dt so it does not accumulate
    /// summation error.
    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.dt
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn measure(&self) -> crate::measures::EmpiricalMeasure {
        crate::measures::EmpiricalMeasure::new(self.positions.clone())
            .expect("positions stay finite")
    }
}

/// Number of steps covering `horizon`; the horizon must be an integer
/// multiple of `dt` to within one ulp.
pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if horizon < 0.0 {
        return Err(CoreError::Invalid(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    if horizon == 0.0 {
        return Ok(0);
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if (ratio - n).abs() > f64::EPSILON * ratio.abs().max(1.0) {
        return Err(CoreError::NonIntegerSteps {
            what: "horizon / dt",
            value: ratio,
        });
    }
    Ok(n as usize)
}

/// A `d`-dimensional vector of independent `N(0, dt)` draws.
pub fn gaussian_increment(dim: usize, dt: f64, rng: &mut impl Rng) -> Vec<f64> {
    let s = dt.sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect()
}

/// Noise increment of the cylindrical flow at point `x`:
/// `sqrt(eta) sum_k sqrt(w_k) G(x, theta_k) dB_k`.
pub fn smf_noise_increment(
    model: &dyn LossModel,
    eta: f64,
    x: &[f64],
    inc: &CylindricalIncrement,
) -> Vec<f64> {
    let data = model.data();
    let mut out = inc.integrate(data, |k| model.noise_field(x, k));
    for v in out.iter_mut() {
        *v *= eta.sqrt();
    }
    out
}

fn flow_drift(model: &dyn LossModel, eta: f64, x: &[f64], order: DriftOrder) -> Vec<f64> {
    match order {
        DriftOrder::Modified => model.modified_drift(eta, x),
        DriftOrder::FirstOrder => linalg::scaled(&model.grad_risk(x), -1.0),
    }
}

/// One Euler-Maruyama step of the cylindrical flow. The same increment
/// drives every tracked point.
pub fn smf_step(
    model: &dyn LossModel,
    state: &mut FlowState,
    inc: &CylindricalIncrement,
    order: DriftOrder,
) -> Result<()> {
    if inc.dt() != state.dt {
        return Err(CoreError::IncrementMismatch {
            inc: inc.dt(),
            dt: state.dt,
        });
    }
    let eta = state.learning_rate;
    let dt = state.dt;
    for x in state.positions.iter_mut() {
        let drift = flow_drift(model, eta, x, order);
        let noise = smf_noise_increment(model, eta, x, inc);
        linalg::axpy(x, dt, &drift);
        linalg::axpy(x, 1.0, &noise);
        if !linalg::all_finite(x) {
            return Err(CoreError::NonFinite("smf update"));
        }
    }
    state.steps_taken += 1;
    Ok(())
}

/// Noise increment of the root-covariance flow at `x`:
/// `sqrt(eta) Sigma(x)^{1/2} dW`.
pub fn sme_noise_increment(
    model: &dyn LossModel,
    eta: f64,
    x: &[f64],
    dw: &[f64],
) -> Result<Vec<f64>> {
    let sigma = model.sigma(x);
    let root = sqrt_psd(&sigma, x.len())?;
    Ok(linalg::scaled(&linalg::mat_vec(&root, dw), eta.sqrt()))
}

/// One Euler-Maruyama step of the root-covariance flow; the same
/// `d`-dimensional Gaussian drives every tracked point.
pub fn sme_step(
    model: &dyn LossModel,
    state: &mut FlowState,
    dw: &[f64],
    order: DriftOrder,
) -> Result<()> {
    let eta = state.learning_rate;
    let dt = state.dt;
    let dim = state.positions[0].len();
    if dw.len() != dim {
        return Err(CoreError::LengthMismatch {
            what: "gaussian increment",
            expected: dim,
            got: dw.len(),
        });
    }
    for x in state.positions.iter_mut() {
        let drift = flow_drift(model, eta, x, order);
        let noise = sme_noise_increment(model, eta, x, dw)?;
        linalg::axpy(x, dt, &drift);
        linalg::axpy(x, 1.0, &noise);
        if !linalg::all_finite(x) {
            return Err(CoreError::NonFinite("sme update"));
        }
    }
    state.steps_taken += 1;
    Ok(())
}

/// Drift of the measure-dependent flow at a frozen measure:
/// `V - (eta/2) J^T V - (eta/4) <D|V|^2, nu>` in the modified regime.
pub fn ddsmf_drift(frozen: &dyn FrozenKernel, eta: f64, x: &[f64], order: DriftOrder) -> Vec<f64> {
    let mut drift = frozen.drift(x);
    if let DriftOrder::FirstOrder = order {
        return drift;
    }
    let jac = frozen.drift_jacobian(x);
    let jtv = linalg::mat_t_vec(&jac, &drift);
    let lions = frozen.lions_sq_drift(x);
    linalg::axpy(&mut drift, -eta / 2.0, &jtv);
    linalg::axpy(&mut drift, -eta / 4.0, &lions);
    drift
}

/// Noise increment of the measure-dependent flow at `x`.
pub fn ddsmf_noise_increment(
    frozen: &dyn FrozenKernel,
    data: &DataDistribution,
    eta: f64,
    x: &[f64],
    inc: &CylindricalIncrement,
) -> Vec<f64> {
    let mut out = inc.integrate(data, |k| frozen.noise(x, k));
    for v in out.iter_mut() {
        *v *= eta.sqrt();
    }
    out
}

/// One Euler-Maruyama step of the measure-dependent flow. The empirical
/// measure is frozen at the current ensemble; every particle then updates
/// independently under the shared increment.
pub fn ddsmf_step(
    kernel: &dyn MeasureKernel,
    state: &mut FlowState,
    inc: &CylindricalIncrement,
    order: DriftOrder,
) -> Result<()> {
    if inc.dt() != state.dt {
        return Err(CoreError::IncrementMismatch {
            inc: inc.dt(),
            dt: state.dt,
        });
    }
    let eta = state.learning_rate;
    let dt = state.dt;
    let frozen_measure = state.positions.clone();
    let bound = kernel.at(&frozen_measure);
    let data = kernel.data();
    for x in state.positions.iter_mut() {
        let drift = ddsmf_drift(bound.as_ref(), eta, x, order);
        let noise = ddsmf_noise_increment(bound.as_ref(), data, eta, x, inc);
        linalg::axpy(x, dt, &drift);
        linalg::axpy(x, 1.0, &noise);
        if !linalg::all_finite(x) {
            return Err(CoreError::NonFinite("ddsmf update"));
        }
    }
    state.steps_taken += 1;
    Ok(())
}

fn checkpoint_steps(times: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let n = steps_for(t, dt)?;
        if n > n_steps {
            return Err(CoreError::CheckpointOutOfRange(n));
        }
        out.push(n);
    }
    Ok(out)
}

fn integrate_with(
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    checkpoint_times: &[f64],
    mut step: impl FnMut(&mut FlowState, &RngStream, usize) -> Result<()>,
) -> Result<Vec<FlowState>> {
    let n_steps = steps_for(horizon, initial.dt)?;
    let marks = checkpoint_steps(checkpoint_times, initial.dt, n_steps)?;
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(marks.len());
    if marks.contains(&0) {
        out.push(state.clone());
    }
    for i in 0..n_steps {
        step(&mut state, stream, i)?;
        if marks.contains(&(i + 1)) {
            out.push(state.clone());
        }
    }
    Ok(out)
}

/// Integrates the cylindrical flow to `horizon`, drawing one increment per
/// step from a per-step keyed stream, and returns the states at the
/// requested times (which must be multiples of `dt`).
pub fn integrate_smf(
    model: &dyn LossModel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    checkpoint_times: &[f64],
    order: DriftOrder,
) -> Result<Vec<FlowState>> {
    let data = model.data();
    integrate_with(initial, horizon, stream, checkpoint_times, |s, st, i| {
        let inc = data.draw_increment(s.dt, &mut st.child(i as u64).rng())?;
        smf_step(model, s, &inc, order)
    })
}

pub fn integrate_smf_endpoint(
    model: &dyn LossModel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    order: DriftOrder,
) -> Result<FlowState> {
    if horizon == 0.0 {
        return Ok(initial.clone());
    }
    Ok(
        integrate_smf(model, initial, horizon, stream, &[horizon], order)?
            .pop()
            .expect("one checkpoint requested"),
    )
}

pub fn integrate_sme(
    model: &dyn LossModel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    checkpoint_times: &[f64],
    order: DriftOrder,
) -> Result<Vec<FlowState>> {
    let dim = model.dim();
    integrate_with(initial, horizon, stream, checkpoint_times, |s, st, i| {
        let dw = gaussian_increment(dim, s.dt, &mut st.child(i as u64).rng());
        sme_step(model, s, &dw, order)
    })
}

pub fn integrate_sme_endpoint(
    model: &dyn LossModel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    order: DriftOrder,
) -> Result<FlowState> {
    if horizon == 0.0 {
        return Ok(initial.clone());
    }
    Ok(
        integrate_sme(model, initial, horizon, stream, &[horizon], order)?
            .pop()
            .expect("one checkpoint requested"),
    )
}

pub fn integrate_ddsmf(
    kernel: &dyn MeasureKernel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    checkpoint_times: &[f64],
    order: DriftOrder,
) -> Result<Vec<FlowState>> {
    let data = kernel.data();
    integrate_with(initial, horizon, stream, checkpoint_times, |s, st, i| {
        let inc = data.draw_increment(s.dt, &mut st.child(i as u64).rng())?;
        ddsmf_step(kernel, s, &inc, order)
    })
}

pub fn integrate_ddsmf_endpoint(
    kernel: &dyn MeasureKernel,
    initial: &FlowState,
    horizon: f64,
    stream: &RngStream,
    order: DriftOrder,
) -> Result<FlowState> {
    if horizon == 0.0 {
        return Ok(initial.clone());
    }
    Ok(
        integrate_ddsmf(kernel, initial, horizon, stream, &[horizon], order)?
            .pop()
            .expect("one checkpoint requested"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_models::ShiftModel;
    use crate::measures::{wasserstein2, EmpiricalMeasure};
    use crate::sgd_chain::GradientDescentKernel;
    use rayon::prelude::*;

    #[test]
    fn flow_state_validation() {
        assert!(FlowState::single(vec![0.0], 0.1, 0.2).is_err()); // dt > eta
        assert!(FlowState::single(vec![0.0], 0.1, 0.0).is_err());
        assert!(FlowState::single(vec![0.0], 0.1, 0.002).is_ok());
    }

    #[test]
    fn horizon_must_divide() {
        assert_eq!(steps_for(1.0, 0.002).unwrap(), 500);
        assert_eq!(steps_for(0.0, 0.002).unwrap(), 0);
        assert!(matches!(
            steps_for(1.0, 0.3),
            Err(CoreError::NonIntegerSteps { .. })
        ));
    }

    #[test]
    fn single_atom_noise_vanishes() {
        // With one atom the noise field is centered to zero, so the flow is
        // the deterministic Euler scheme of the corrected drift.
        let data = crate::data_space::DataDistribution::uniform(vec![vec![1.0]]).unwrap();
        let model = ShiftModel::new(data);
        let eta = 0.1;
        let dt = eta / 50.0;
        let initial = FlowState::single(vec![0.5], eta, dt).unwrap();
        let end = integrate_smf_endpoint(&model, &initial, 0.2, &RngStream::new(1), DriftOrder::Modified)
            .unwrap();

        let mut x = 0.5;
        for _ in 0..steps_for(0.2, dt).unwrap() {
            x += dt * model.modified_drift(eta, &[x])[0];
        }
        assert!((end.positions()[0][0] - x).abs() < 1e-14);
    }

    #[test]
    fn shift_one_step_noise_variance() {
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let reps = 100_000u64;
        let root = RngStream::new(7);
        let mut sum_sq = 0.0;
        for rep in 0..reps {
            let inc = model
                .data()
                .draw_increment(dt, &mut root.child(rep).rng())
                .unwrap();
            let n = smf_noise_increment(&model, eta, &[0.3], &inc);
            sum_sq += n[0] * n[0];
        }
        let var = sum_sq / reps as f64;
        let expected = eta * dt; // A~ == 1 for the shift model
        let se = expected * (2.0 / reps as f64).sqrt();
        assert!((var - expected).abs() < 5.0 * se, "var = {var}");
    }

    #[test]
    fn shift_two_point_difference_is_deterministic() {
        // G does not depend on z, so both points receive identical noise and
        // their difference follows the deterministic linear contraction.
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let run = |seed: u64| {
            let initial = FlowState::new(vec![vec![1.0], vec![-0.5]], eta, dt).unwrap();
            let end = integrate_smf_endpoint(
                &model,
                &initial,
                0.5,
                &RngStream::new(seed),
                DriftOrder::Modified,
            )
            .unwrap();
            end.positions()[0][0] - end.positions()[1][0]
        };
        let d1 = run(11);
        let d2 = run(5555);
        assert!((d1 - d2).abs() < 1e-12, "{d1} vs {d2}");
        // And the difference contracts at the corrected rate.
        let expected = 1.5 * (-(1.0 + eta / 2.0) * 0.5_f64).exp();
        assert!((d1 - expected).abs() < 1e-3, "{d1} vs {expected}");
    }

    #[test]
    fn ou_closed_forms_at_horizon() {
        // Shift-model flow is an Ornstein-Uhlenbeck process:
        // mean x e^{-(1+eta/2)T}, variance eta(1-e^{-2(1+eta/2)T})/(2(1+eta/2)).
        let eta = 0.1;
        let dt = eta / 50.0;
        let t = 1.0;
        let reps = 200_000u64;
        let root = RngStream::new(2718);
        let endpoints: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let model = ShiftModel::standard();
                let initial = FlowState::single(vec![1.0], eta, dt).unwrap();
                integrate_smf_endpoint(&model, &initial, t, &root.child(rep), DriftOrder::Modified)
                    .unwrap()
                    .positions()[0][0]
            })
            .collect();
        let n = reps as f64;
        let mean = endpoints.iter().sum::<f64>() / n;
        let var = endpoints.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let a = 1.0 + eta / 2.0;
        let expected_mean = (-a * t).exp();
        let expected_var = eta * (1.0 - (-2.0 * a * t).exp()) / (2.0 * a);
        let se_mean = (var / n).sqrt();
        assert!(
            (mean - expected_mean).abs() < 5.0 * se_mean,
            "mean {mean} vs {expected_mean} (5se = {})",
            5.0 * se_mean
        );
        let se_var = expected_var * (2.0 / n).sqrt();
        // Euler bias in the variance is O(dt); widen by that much.
        let bias = expected_var * a * dt;
        assert!(
            (var - expected_var).abs() < 5.0 * se_var + bias,
            "var {var} vs {expected_var}"
        );
    }

    #[test]
    fn dt_refinement_is_within_monte_carlo_noise() {
        let eta = 0.1;
        let t = 1.0;
        let reps = 50_000u64;
        let run = |divisor: f64| {
            let dt = eta / divisor;
            let root = RngStream::new(31415);
            let xs: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let model = ShiftModel::standard();
                    let initial = FlowState::single(vec![1.0], eta, dt).unwrap();
                    integrate_smf_endpoint(
                        &model,
                        &initial,
                        t,
                        &root.child(rep),
                        DriftOrder::Modified,
                    )
                    .unwrap()
                    .positions()[0][0]
                })
                .collect();
            let n = reps as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, (var / n).sqrt())
        };
        let (m50, se50) = run(50.0);
        let (m100, se100) = run(100.0);
        let combined = (se50 * se50 + se100 * se100).sqrt();
        assert!(
            (m50 - m100).abs() < 3.0 * combined,
            "refinement shift {} vs 3se {}",
            (m50 - m100).abs(),
            3.0 * combined
        );
    }

    #[test]
    fn sme_and_smf_coincide_on_shift_with_matched_draws() {
        // Sigma^{1/2} == 1 and the cylindrical increment integrates to a
        // N(0, dt) scalar, so feeding that scalar to the root-covariance
        // stepper reproduces the smf update exactly.
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let inc = model
            .data()
            .draw_increment(dt, &mut RngStream::new(4).rng())
            .unwrap();
        let dw = inc.integrate(model.data(), |k| model.noise_field(&[0.0], k));

        let mut a = FlowState::new(vec![vec![1.0], vec![-2.0]], eta, dt).unwrap();
        smf_step(&model, &mut a, &inc, DriftOrder::Modified).unwrap();
        let mut b = FlowState::new(vec![vec![1.0], vec![-2.0]], eta, dt).unwrap();
        sme_step(&model, &mut b, &dw, DriftOrder::Modified).unwrap();
        assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn sme_zero_draw_is_pure_drift() {
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let mut s = FlowState::single(vec![1.0], eta, dt).unwrap();
        sme_step(&model, &mut s, &[0.0], DriftOrder::Modified).unwrap();
        let expected = 1.0 + dt * model.modified_drift(eta, &[1.0])[0];
        assert_eq!(s.positions()[0][0], expected);
    }

    #[test]
    fn ddsmf_with_measure_free_kernel_matches_smf() {
        // The gradient-descent kernel carries the chain-form noise -G, so
        // negating the increment reproduces the cylindrical flow bit for bit.
        let model = ShiftModel::standard();
        let kernel = GradientDescentKernel::new(&model);
        let eta = 0.1;
        let dt = eta / 50.0;
        let inc = model
            .data()
            .draw_increment(dt, &mut RngStream::new(8).rng())
            .unwrap();
        let neg = model
            .data()
            .draw_increment(dt, &mut RngStream::new(8).rng())
            .map(|i| {
                // Rebuild with negated draws via integrate on -1: simplest is a
                // fresh increment with mirrored entries.
                CylindricalIncrement::from_parts(
                    i.per_atom().iter().map(|v| -v).collect(),
                    i.dt(),
                )
            })
            .unwrap();

        let mut a = FlowState::new(vec![vec![0.7], vec![-0.2]], eta, dt).unwrap();
        smf_step(&model, &mut a, &inc, DriftOrder::Modified).unwrap();
        let mut b = FlowState::new(vec![vec![0.7], vec![-0.2]], eta, dt).unwrap();
        ddsmf_step(&kernel, &mut b, &neg, DriftOrder::Modified).unwrap();
        for (pa, pb) in a.positions().iter().zip(b.positions()) {
            assert!((pa[0] - pb[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn first_order_flag_drops_the_correction() {
        let model = ShiftModel::standard();
        let eta = 0.2;
        let dt = eta / 50.0;
        let mut s = FlowState::single(vec![1.0], eta, dt).unwrap();
        sme_step(&model, &mut s, &[0.0], DriftOrder::FirstOrder).unwrap();
        assert_eq!(s.positions()[0][0], 1.0 - dt);
    }

    #[test]
    fn continuity_in_initial_measure() {
        // Perturbing every initial point by delta moves the endpoint law by
        // O(delta); the gap shrinks monotonically as delta does.
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let base: Vec<Vec<f64>> = vec![vec![0.9], vec![-0.4], vec![0.2], vec![1.4]];
        let stream = RngStream::new(77);
        let run = |points: Vec<Vec<f64>>| {
            let initial = FlowState::new(points, eta, dt).unwrap();
            integrate_smf_endpoint(&model, &initial, 0.5, &stream, DriftOrder::Modified)
                .unwrap()
                .measure()
        };
        let reference = run(base.clone());
        let mut gaps = Vec::new();
        for delta in [0.1, 0.05, 0.025] {
            let shifted: Vec<Vec<f64>> =
                base.iter().map(|p| vec![p[0] + delta]).collect();
            let gap = wasserstein2(&reference, &run(shifted)).unwrap();
            gaps.push(gap);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn integrate_zero_horizon_returns_initial() {
        let model = ShiftModel::standard();
        let initial = FlowState::single(vec![0.3], 0.1, 0.002).unwrap();
        let end =
            integrate_smf_endpoint(&model, &initial, 0.0, &RngStream::new(0), DriftOrder::Modified)
                .unwrap();
        assert_eq!(end, initial);
    }

    #[test]
    fn increment_step_mismatch_is_rejected() {
        let model = ShiftModel::standard();
        let mut s = FlowState::single(vec![0.0], 0.1, 0.002).unwrap();
        let inc = model
            .data()
            .draw_increment(0.001, &mut RngStream::new(0).rng())
            .unwrap();
        assert!(matches!(
            smf_step(&model, &mut s, &inc, DriftOrder::Modified),
            Err(CoreError::IncrementMismatch { .. })
        ));
    }

    #[test]
    fn checkpoints_are_recorded_at_times() {
        let model = ShiftModel::standard();
        let initial = FlowState::single(vec![1.0], 0.1, 0.002).unwrap();
        let states = integrate_smf(
            &model,
            &initial,
            0.01,
            &RngStream::new(5),
            &[0.0, 0.004, 0.01],
            DriftOrder::Modified,
        )
        .unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(states[0].time(), 0.0);
        assert!((states[1].time() - 0.004).abs() < 1e-15);
        assert!((states[2].time() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn smf_multi_point_and_singles_agree() {
        // Integrating an ensemble under shared noise equals integrating each
        // point separately with the same stream.
        let model = ShiftModel::standard();
        let eta = 0.1;
        let dt = eta / 50.0;
        let stream = RngStream::new(21);
        let joint = integrate_smf_endpoint(
            &model,
            &FlowState::new(vec![vec![1.0], vec![-1.0]], eta, dt).unwrap(),
            0.2,
            &stream,
            DriftOrder::Modified,
        )
        .unwrap();
        for (i, x) in [1.0, -1.0].iter().enumerate() {
            let single = integrate_smf_endpoint(
                &model,
                &FlowState::single(vec![*x], eta, dt).unwrap(),
                0.2,
                &stream,
                DriftOrder::Modified,
            )
            .unwrap();
            assert_eq!(single.positions()[0], joint.positions()[i]);
        }
        let _ = EmpiricalMeasure::new(joint.positions().to_vec()).unwrap();
    }
}

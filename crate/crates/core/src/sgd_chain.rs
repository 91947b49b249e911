//! Discrete-time chains: plain stochastic gradient descent on a loss model,
//! and the general measure-dependent chain
//! `z <- z + eta V(nu, z) + eta G(nu, z, theta)` driven by one shared data
//! sample per step. All tracked points see the same sample; that coupling is
//! what makes multi-point statistics meaningful.

use crate::data_space::DataDistribution;
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::loss_models::LossModel;
use crate::measures::EmpiricalMeasure;
use crate::rng::RngStream;

/// Positions of the tracked points together with the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    positions: Vec<Vec<f64>>,
    step_index: usize,
    learning_rate: f64,
}

impl ChainState {
    pub fn new(positions: Vec<Vec<f64>>, learning_rate: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(CoreError::EmptyEnsemble);
        }
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(CoreError::NonPositiveLearningRate(learning_rate));
        }
        for p in &positions {
            if !linalg::all_finite(p) {
                return Err(CoreError::NonFinite("chain position"));
            }
        }
        Ok(ChainState {
            positions,
            step_index: 0,
            learning_rate,
        })
    }

    pub fn single(x: Vec<f64>, learning_rate: f64) -> Result<Self> {
        Self::new(vec![x], learning_rate)
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// The empirical measure carried by the tracked points.
    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.positions.clone()).expect("positions stay finite")
    }
}

/// One SGD step: every tracked point moves along its own per-sample gradient
/// evaluated at the shared atom.
pub fn sgd_step(model: &dyn LossModel, state: &mut ChainState, atom: usize) -> Result<()> {
    let eta = state.learning_rate;
    for z in state.positions.iter_mut() {
        let g = model.grad_pointwise(z, atom);
        linalg::axpy(z, -eta, &g);
        if !linalg::all_finite(z) {
            return Err(CoreError::NonFinite("sgd update"));
        }
    }
    state.step_index += 1;
    Ok(())
}

/// Drift and noise of a measure-dependent system, with the derivatives used
/// by the corrected drift and by the generator expansion. `at` freezes the
/// measure once per step; the returned evaluator must be a pure function of
/// the point arguments so that particle updates can run in any order.
pub trait MeasureKernel: Send + Sync {
    fn dim(&self) -> usize;

    fn data(&self) -> &DataDistribution;

    /// Binds the kernel to a frozen empirical measure.
    fn at<'k>(&'k self, nu: &[Vec<f64>]) -> Box<dyn FrozenKernel + 'k>;
}

/// Kernel evaluations against the measure frozen by [`MeasureKernel::at`].
pub trait FrozenKernel: Sync {
    /// `V(nu, x)`.
    fn drift(&self, x: &[f64]) -> Vec<f64>;

    /// `G(nu, x, theta_k)`; centered over the data distribution.
    fn noise(&self, x: &[f64], atom: usize) -> Vec<f64>;

    /// Space Jacobian, row-major `d x d`: `[i*d + j] = d V_i / d x_j`.
    fn drift_jacobian(&self, x: &[f64]) -> Vec<f64>;

    /// Lions derivative of the drift, row-major `d x d`:
    /// `[i*d + j] = (D V_i(nu, x))(y)_j`.
    fn drift_lions(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    /// `<D |V(nu, x)|^2 (y), nu(dy)>`, the measure derivative of the squared
    /// drift integrated over the frozen measure. Default: zero (measure-free
    /// drifts). Kernels with genuine measure dependence must override.
    fn lions_sq_drift(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Plain gradient descent written in the general-chain form:
/// `V = -grad_risk`, `G(., theta) = -(grad_pointwise - grad_risk)`, so that
/// `z + eta V + eta G` is exactly the SGD recursion.
pub struct GradientDescentKernel<'m> {
    model: &'m dyn LossModel,
}

impl<'m> GradientDescentKernel<'m> {
    pub fn new(model: &'m dyn LossModel) -> Self {
        GradientDescentKernel { model }
    }
}

impl MeasureKernel for GradientDescentKernel<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn data(&self) -> &DataDistribution {
        self.model.data()
    }

    fn at<'k>(&'k self, _nu: &[Vec<f64>]) -> Box<dyn FrozenKernel + 'k> {
        Box::new(FrozenGradientDescent { model: self.model })
    }
}

struct FrozenGradientDescent<'m> {
    model: &'m dyn LossModel,
}

impl FrozenKernel for FrozenGradientDescent<'_> {
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        linalg::scaled(&self.model.grad_risk(x), -1.0)
    }

    fn noise(&self, x: &[f64], atom: usize) -> Vec<f64> {
        linalg::scaled(&self.model.noise_field(x, atom), -1.0)
    }

    fn drift_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.model.dim();
        let mut jac = vec![0.0; d * d];
        let mut basis = vec![0.0; d];
        for j in 0..d {
            basis[j] = 1.0;
            let col = self.model.hessian_vec(x, &basis);
            basis[j] = 0.0;
            for i in 0..d {
                jac[i * d + j] = -col[i];
            }
        }
        jac
    }

    fn drift_lions(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0; x.len() * x.len()]
    }
}

/// Kernel with no drift and no noise; particles stay frozen.
pub struct ZeroKernel {
    dim: usize,
    data: DataDistribution,
}

impl ZeroKernel {
    pub fn new(dim: usize, data: DataDistribution) -> Self {
        ZeroKernel { dim, data }
    }
}

impl MeasureKernel for ZeroKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn data(&self) -> &DataDistribution {
        &self.data
    }

    fn at<'k>(&'k self, _nu: &[Vec<f64>]) -> Box<dyn FrozenKernel + 'k> {
        Box::new(FrozenZero { dim: self.dim })
    }
}

struct FrozenZero {
    dim: usize,
}

impl FrozenKernel for FrozenZero {
    fn drift(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn noise(&self, _x: &[f64], _atom: usize) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn drift_jacobian(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim * self.dim]
    }

    fn drift_lions(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim * self.dim]
    }
}

/// One step of the general chain. The empirical measure is frozen at the
/// current positions; all particles update simultaneously against it.
pub fn interacting_sgd_step(
    kernel: &dyn MeasureKernel,
    state: &mut ChainState,
    atom: usize,
) -> Result<()> {
    let eta = state.learning_rate;
    let frozen_measure = state.positions.clone();
    let bound = kernel.at(&frozen_measure);
    for z in state.positions.iter_mut() {
        let v = bound.drift(z);
        let g = bound.noise(z, atom);
        linalg::axpy(z, eta, &v);
        linalg::axpy(z, eta, &g);
        if !linalg::all_finite(z) {
            return Err(CoreError::NonFinite("interacting sgd update"));
        }
    }
    state.step_index += 1;
    Ok(())
}

fn checkpoint_states(
    checkpoints: &[usize],
    n_steps: usize,
) -> Result<()> {
    for &c in checkpoints {
        if c > n_steps {
            return Err(CoreError::CheckpointOutOfRange(c));
        }
    }
    Ok(())
}

fn run_with_step(
    initial: &ChainState,
    n_steps: usize,
    stream: &RngStream,
    data: &DataDistribution,
    checkpoints: &[usize],
    mut step: impl FnMut(&mut ChainState, usize) -> Result<()>,
) -> Result<Vec<ChainState>> {
    checkpoint_states(checkpoints, n_steps)?;
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(checkpoints.len());
    if checkpoints.contains(&0) {
        out.push(state.clone());
    }
    for n in 0..n_steps {
        let atom = data.sample(&mut stream.child(n as u64).rng());
        step(&mut state, atom)?;
        if checkpoints.contains(&(n + 1)) {
            out.push(state.clone());
        }
    }
    Ok(out)
}

/// Runs the plain SGD chain, sampling one atom per step from a per-step
/// keyed stream, and returns the states at the requested step indices.
pub fn run_chain(
    model: &dyn LossModel,
    initial: &ChainState,
    n_steps: usize,
    stream: &RngStream,
    checkpoints: &[usize],
) -> Result<Vec<ChainState>> {
    run_with_step(initial, n_steps, stream, model.data(), checkpoints, |s, atom| {
        sgd_step(model, s, atom)
    })
}

/// Endpoint of the plain chain after `n_steps`.
pub fn run_chain_endpoint(
    model: &dyn LossModel,
    initial: &ChainState,
    n_steps: usize,
    stream: &RngStream,
) -> Result<ChainState> {
    if n_steps == 0 {
        return Ok(initial.clone());
    }
    Ok(run_chain(model, initial, n_steps, stream, &[n_steps])?
        .pop()
        .expect("one checkpoint requested"))
}

/// Runs the measure-dependent chain; same sampling contract as `run_chain`.
pub fn run_interacting_chain(
    kernel: &dyn MeasureKernel,
    initial: &ChainState,
    n_steps: usize,
    stream: &RngStream,
    checkpoints: &[usize],
) -> Result<Vec<ChainState>> {
    run_with_step(initial, n_steps, stream, kernel.data(), checkpoints, |s, atom| {
        interacting_sgd_step(kernel, s, atom)
    })
}

pub fn run_interacting_endpoint(
    kernel: &dyn MeasureKernel,
    initial: &ChainState,
    n_steps: usize,
    stream: &RngStream,
) -> Result<ChainState> {
    if n_steps == 0 {
        return Ok(initial.clone());
    }
    Ok(
        run_interacting_chain(kernel, initial, n_steps, stream, &[n_steps])?
            .pop()
            .expect("one checkpoint requested"),
    )
}

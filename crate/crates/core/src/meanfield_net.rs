//! Shallow-network mean-field coefficients for square-loss risk:
//! response kernels `F` and `K`, the interaction drift
//! `V(nu, z) = grad F(z) - <grad_z K(z, .), nu>`, the centered noise
//! `G(nu, z, theta)`, and the measure derivative of `|V|^2` that enters the
//! corrected drift of the distribution-dependent flow.
//!
//! Every measure argument is an equal-weight finite ensemble. Binding a
//! kernel to a measure precomputes two per-atom statistics, the response
//! `<Psi(., theta_k), nu>` and the mean feature gradient; both are reduced in
//! a canonical value order so that permuting the ensemble permutes
//! trajectories bit-exactly.

use crate::data_space::DataDistribution;
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::sgd_chain::{FrozenKernel, MeasureKernel};

/// Feature map `Psi : R^d x Theta -> R^{k0}` with analytic derivatives in
/// the parameter `z`.
pub trait FeatureMap: Send + Sync {
    /// Parameter dimension `d`.
    fn param_dim(&self) -> usize;

    /// Data dimension expected of the atoms.
    fn input_dim(&self) -> usize;

    /// Output dimension `k0`.
    fn output_dim(&self) -> usize;

    /// `Psi(z, theta)`, length `k0`.
    fn eval(&self, z: &[f64], theta: &[f64]) -> Vec<f64>;

    /// Gradient in `z`, row-major `k0 x d`: `[a*d + j] = d Psi_a / d z_j`.
    fn grad(&self, z: &[f64], theta: &[f64]) -> Vec<f64>;

    /// Hessian in `z`, `k0` stacked `d x d` blocks:
    /// `[a*d*d + i*d + j] = d^2 Psi_a / (d z_i d z_j)`.
    fn hess(&self, z: &[f64], theta: &[f64]) -> Vec<f64>;
}

/// `Psi(z, theta) = z . theta`; linear in the parameters, exactly solvable.
/// Unbounded, so meant for closed-form tests on bounded trajectories.
#[derive(Debug, Clone)]
pub struct LinearFeature {
    dim: usize,
}

impl LinearFeature {
    pub fn new(dim: usize) -> Self {
        LinearFeature { dim }
    }
}

impl FeatureMap for LinearFeature {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![linalg::dot(z, theta)]
    }

    fn grad(&self, _z: &[f64], theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn hess(&self, _z: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim * self.dim]
    }
}

/// Single-hidden-neuron response `Psi(z, theta) = c tanh(u . theta + b)` with
/// parameters `z = (c, u, b)`; smooth and bounded in the data.
#[derive(Debug, Clone)]
pub struct TanhFeature {
    input_dim: usize,
}

impl TanhFeature {
    pub fn new(input_dim: usize) -> Self {
        TanhFeature { input_dim }
    }

    fn split<'z>(&self, z: &'z [f64]) -> (f64, &'z [f64], f64) {
        (z[0], &z[1..1 + self.input_dim], z[1 + self.input_dim])
    }
}

impl FeatureMap for TanhFeature {
    fn param_dim(&self) -> usize {
        self.input_dim + 2
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Vec<f64> {
        let (c, u, b) = self.split(z);
        vec![c * (linalg::dot(u, theta) + b).tanh()]
    }

    fn grad(&self, z: &[f64], theta: &[f64]) -> Vec<f64> {
        let (c, u, b) = self.split(z);
        let t = (linalg::dot(u, theta) + b).tanh();
        let dphi = 1.0 - t * t;
        let d = self.param_dim();
        let mut g = vec![0.0; d];
        g[0] = t;
        for (i, &th) in theta.iter().enumerate() {
            g[1 + i] = c * dphi * th;
        }
        g[d - 1] = c * dphi;
        g
    }

    fn hess(&self, z: &[f64], theta: &[f64]) -> Vec<f64> {
        let (c, u, b) = self.split(z);
        let t = (linalg::dot(u, theta) + b).tanh();
        let dphi = 1.0 - t * t;
        let ddphi = -2.0 * t * dphi;
        let d = self.param_dim();
        let mut h = vec![0.0; d * d];
        let mut set = |i: usize, j: usize, v: f64| {
            h[i * d + j] = v;
            h[j * d + i] = v;
        };
        // Rows/cols: 0 = c, 1..=n0 = u, d-1 = b.
        for (i, &ti) in theta.iter().enumerate() {
            set(0, 1 + i, dphi * ti);
            for (j, &tj) in theta.iter().enumerate().skip(i) {
                set(1 + i, 1 + j, c * ddphi * ti * tj);
            }
            set(1 + i, d - 1, c * ddphi * ti);
        }
        set(0, d - 1, dphi);
        set(d - 1, d - 1, c * ddphi);
        h
    }
}

/// Shallow-network model: a feature map, one label per data atom, and the
/// data distribution.
pub struct NetworkModel {
    features: Box<dyn FeatureMap>,
    labels: Vec<Vec<f64>>,
    data: DataDistribution,
}

impl NetworkModel {
    pub fn new(
        features: Box<dyn FeatureMap>,
        labels: Vec<Vec<f64>>,
        data: DataDistribution,
    ) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(CoreError::LengthMismatch {
                what: "labels",
                expected: data.len(),
                got: labels.len(),
            });
        }
        let k0 = features.output_dim();
        for l in &labels {
            if l.len() != k0 {
                return Err(CoreError::LengthMismatch {
                    what: "label components",
                    expected: k0,
                    got: l.len(),
                });
            }
            if !linalg::all_finite(l) {
                return Err(CoreError::NonFinite("label"));
            }
        }
        if data.atom_dim() != features.input_dim() {
            return Err(CoreError::LengthMismatch {
                what: "atom coordinates for the feature map",
                expected: features.input_dim(),
                got: data.atom_dim(),
            });
        }
        Ok(NetworkModel {
            features,
            labels,
            data,
        })
    }

    /// Scalar linear network on scalar atoms; the workhorse of the
    /// closed-form tests.
    pub fn linear_scalar(atoms: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        let data = DataDistribution::uniform(atoms.into_iter().map(|a| vec![a]).collect())?;
        Self::new(
            Box::new(LinearFeature::new(1)),
            labels.into_iter().map(|l| vec![l]).collect(),
            data,
        )
    }

    pub fn features(&self) -> &dyn FeatureMap {
        self.features.as_ref()
    }

    pub fn labels(&self) -> &[Vec<f64>] {
        &self.labels
    }

    pub fn param_dim(&self) -> usize {
        self.features.param_dim()
    }

    /// `F(z) = sum_k w_k f(theta_k) . Psi(z, theta_k)`.
    pub fn kernel_f(&self, z: &[f64]) -> f64 {
        (0..self.data.len())
            .map(|k| {
                self.data.weight(k)
                    * linalg::dot(&self.labels[k], &self.features.eval(z, self.data.atom(k)))
            })
            .sum()
    }

    /// Gradient of `F`.
    pub fn grad_f(&self, z: &[f64]) -> Vec<f64> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut out = vec![0.0; d];
        for k in 0..self.data.len() {
            let g = self.features.grad(z, self.data.atom(k));
            let w = self.data.weight(k);
            for a in 0..k0 {
                linalg::axpy(&mut out, w * self.labels[k][a], &g[a * d..(a + 1) * d]);
            }
        }
        out
    }

    /// Hessian of `F`, row-major `d x d`.
    pub fn hess_f(&self, z: &[f64]) -> Vec<f64> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut out = vec![0.0; d * d];
        for k in 0..self.data.len() {
            let h = self.features.hess(z, self.data.atom(k));
            let w = self.data.weight(k);
            for a in 0..k0 {
                linalg::axpy(
                    &mut out,
                    w * self.labels[k][a],
                    &h[a * d * d..(a + 1) * d * d],
                );
            }
        }
        out
    }

    /// `K(z, y) = sum_k w_k Psi(z, theta_k) . Psi(y, theta_k)`.
    pub fn kernel_k(&self, z: &[f64], y: &[f64]) -> f64 {
        (0..self.data.len())
            .map(|k| {
                let atom = self.data.atom(k);
                self.data.weight(k)
                    * linalg::dot(&self.features.eval(z, atom), &self.features.eval(y, atom))
            })
            .sum()
    }

    /// `grad_z K(z, y)`.
    pub fn grad_k(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut out = vec![0.0; d];
        for k in 0..self.data.len() {
            let atom = self.data.atom(k);
            let g = self.features.grad(z, atom);
            let psi_y = self.features.eval(y, atom);
            let w = self.data.weight(k);
            for a in 0..k0 {
                linalg::axpy(&mut out, w * psi_y[a], &g[a * d..(a + 1) * d]);
            }
        }
        out
    }

    /// Mixed derivative `[i*d + j] = d^2 K / (d z_i d y_j)`; the sum of
    /// feature-gradient outer products over the atoms.
    pub fn mixed_grad_k(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut out = vec![0.0; d * d];
        for k in 0..self.data.len() {
            let atom = self.data.atom(k);
            let gz = self.features.grad(z, atom);
            let gy = self.features.grad(y, atom);
            let w = self.data.weight(k);
            for a in 0..k0 {
                linalg::outer_acc(&mut out, w, &gz[a * d..(a + 1) * d], &gy[a * d..(a + 1) * d]);
            }
        }
        out
    }

    /// `grad_z grad_z K(z, y)`, row-major `d x d`.
    pub fn hess_k_z(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut out = vec![0.0; d * d];
        for k in 0..self.data.len() {
            let atom = self.data.atom(k);
            let h = self.features.hess(z, atom);
            let psi_y = self.features.eval(y, atom);
            let w = self.data.weight(k);
            for a in 0..k0 {
                linalg::axpy(&mut out, w * psi_y[a], &h[a * d * d..(a + 1) * d * d]);
            }
        }
        out
    }

    /// Ensemble response at an atom: `<Psi(., theta_k), nu>`.
    pub fn response(&self, nu: &[Vec<f64>], atom: usize) -> Vec<f64> {
        let theta = self.data.atom(atom);
        let values: Vec<Vec<f64>> = nu.iter().map(|y| self.features.eval(y, theta)).collect();
        linalg::stable_mean_rows(values.iter().map(|v| v.as_slice()), self.features.output_dim())
    }

    /// `C_f = E_w |f(theta)|^2 / 2`; enters risk reporting only.
    pub fn label_energy(&self) -> f64 {
        0.5 * (0..self.data.len())
            .map(|k| self.data.weight(k) * linalg::dot(&self.labels[k], &self.labels[k]))
            .sum::<f64>()
    }

    /// Network risk at an ensemble: `E_w |f(theta) - <Psi(., theta), nu>|^2 / 2`.
    pub fn risk(&self, nu: &[Vec<f64>]) -> f64 {
        0.5 * (0..self.data.len())
            .map(|k| {
                let r = linalg::sub(&self.labels[k], &self.response(nu, k));
                self.data.weight(k) * linalg::dot(&r, &r)
            })
            .sum::<f64>()
    }

    /// `V(nu, z)`.
    pub fn drift_v(&self, nu: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        self.at(nu).drift(z)
    }

    /// `G(nu, z, theta_k)`.
    pub fn noise_g(&self, nu: &[Vec<f64>], z: &[f64], atom: usize) -> Vec<f64> {
        self.at(nu).noise(z, atom)
    }

    /// `<D |V(nu, z)|^2 (y), nu(dy)>`.
    pub fn lions_sq_v(&self, nu: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        self.at(nu).lions_sq_drift(z)
    }

    /// The Lions term of the corrected drift, `-(eta/4) <D |V|^2, nu>`.
    pub fn lions_correction(&self, nu: &[Vec<f64>], z: &[f64], eta: f64) -> Vec<f64> {
        linalg::scaled(&self.lions_sq_v(nu, z), -eta / 4.0)
    }
}

impl MeasureKernel for NetworkModel {
    fn dim(&self) -> usize {
        self.param_dim()
    }

    fn data(&self) -> &DataDistribution {
        &self.data
    }

    fn at<'k>(&'k self, nu: &[Vec<f64>]) -> Box<dyn FrozenKernel + 'k> {
        let d = self.param_dim();
        let k0 = self.features.output_dim();
        let mut responses = Vec::with_capacity(self.data.len());
        let mut grad_means = Vec::with_capacity(self.data.len());
        for k in 0..self.data.len() {
            let theta = self.data.atom(k);
            let psis: Vec<Vec<f64>> = nu.iter().map(|y| self.features.eval(y, theta)).collect();
            responses.push(linalg::stable_mean_rows(
                psis.iter().map(|v| v.as_slice()),
                k0,
            ));
            let grads: Vec<Vec<f64>> = nu.iter().map(|y| self.features.grad(y, theta)).collect();
            grad_means.push(linalg::stable_mean_rows(
                grads.iter().map(|v| v.as_slice()),
                k0 * d,
            ));
        }
        Box::new(FrozenNetwork {
            net: self,
            responses,
            grad_means,
        })
    }
}

/// Network kernel bound to a frozen ensemble through its per-atom responses
/// and mean feature gradients.
struct FrozenNetwork<'n> {
    net: &'n NetworkModel,
    /// `<Psi(., theta_k), nu>`, one `k0` vector per atom.
    responses: Vec<Vec<f64>>,
    /// `<grad Psi(., theta_k), nu>`, one `k0 x d` matrix per atom.
    grad_means: Vec<Vec<f64>>,
}

impl FrozenNetwork<'_> {
    /// `(f(theta_k) - response_k) . grad Psi(z, theta_k)`, the un-centered
    /// residual force whose data average is the drift.
    fn residual_force(&self, z: &[f64], atom: usize) -> Vec<f64> {
        let d = self.net.param_dim();
        let k0 = self.net.features.output_dim();
        let g = self.net.features.grad(z, self.net.data.atom(atom));
        let mut out = vec![0.0; d];
        for a in 0..k0 {
            let r = self.net.labels[atom][a] - self.responses[atom][a];
            linalg::axpy(&mut out, r, &g[a * d..(a + 1) * d]);
        }
        out
    }
}

impl FrozenKernel for FrozenNetwork<'_> {
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let data = &self.net.data;
        let mut out = vec![0.0; self.net.param_dim()];
        for k in 0..data.len() {
            linalg::axpy(&mut out, data.weight(k), &self.residual_force(x, k));
        }
        out
    }

    fn noise(&self, x: &[f64], atom: usize) -> Vec<f64> {
        let mut out = self.residual_force(x, atom);
        linalg::axpy(&mut out, -1.0, &self.drift(x));
        out
    }

    fn drift_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.net.param_dim();
        let k0 = self.net.features.output_dim();
        let data = &self.net.data;
        let mut out = vec![0.0; d * d];
        for k in 0..data.len() {
            let h = self.net.features.hess(x, data.atom(k));
            let w = data.weight(k);
            for a in 0..k0 {
                let r = self.net.labels[k][a] - self.responses[k][a];
                linalg::axpy(&mut out, w * r, &h[a * d * d..(a + 1) * d * d]);
            }
        }
        out
    }

    fn drift_lions(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        linalg::scaled(&self.net.mixed_grad_k(x, y), -1.0)
    }

    fn lions_sq_drift(&self, x: &[f64]) -> Vec<f64> {
        // <D|V|^2(y), nu(dy)> = -2 M^T V with
        // M = <d_z d_y K(x, y), nu(dy)> assembled from the mean gradients.
        let d = self.net.param_dim();
        let k0 = self.net.features.output_dim();
        let data = &self.net.data;
        let v = self.drift(x);
        let mut m = vec![0.0; d * d];
        for k in 0..data.len() {
            let gx = self.net.features.grad(x, data.atom(k));
            let w = data.weight(k);
            for a in 0..k0 {
                linalg::outer_acc(
                    &mut m,
                    w,
                    &gx[a * d..(a + 1) * d],
                    &self.grad_means[k][a * d..(a + 1) * d],
                );
            }
        }
        linalg::scaled(&linalg::mat_t_vec(&m, &v), -2.0)
    }
}

//! One-step generator expansion oracle. Over a finite data space the
//! one-step transition operator
//! `S Phi(mu) = E_theta Phi(mu o Y^{-1})`, `Y(y) = y + eta V + eta G`,
//! is an exact finite sum, so the residual against the second-order
//! expansion `Phi + eta L1 Phi + eta^2 (L2 + L1^2/2) Phi` isolates the cubic
//! remainder without any sampling.

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::measures::{CylindricalFunctional, EmpiricalMeasure};
use crate::sgd_chain::{FrozenKernel, MeasureKernel};
use serde::Serialize;

/// The expansion operators evaluated at one measure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorPieces {
    pub l1: f64,
    pub l2: f64,
    pub l1_sq: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorExpansion {
    pub phi: f64,
    pub s_phi: f64,
    pub expansion: f64,
    pub residual: f64,
    pub pieces: GeneratorPieces,
}

/// Evaluates `S Phi(mu)` exactly and subtracts the second-order expansion.
pub fn one_step_generator_residual(
    kernel: &dyn MeasureKernel,
    phi: &CylindricalFunctional,
    mu: &EmpiricalMeasure,
    eta: f64,
) -> Result<GeneratorExpansion> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(CoreError::NonPositiveLearningRate(eta));
    }
    let data = kernel.data();
    let weights: Vec<f64> = data.weights().to_vec();
    let points = mu.points();
    let frozen = kernel.at(points);

    // Exact transition expectation: one pushforward per data atom.
    let mut s_phi = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        let mapped: Vec<Vec<f64>> = points
            .iter()
            .map(|y| {
                let mut out = y.clone();
                linalg::axpy(&mut out, eta, &frozen.drift(y));
                linalg::axpy(&mut out, eta, &frozen.noise(y, k));
                out
            })
            .collect();
        s_phi += w * phi.eval(&EmpiricalMeasure::new(mapped)?);
    }

    let phi_mu = phi.eval(mu);
    let pieces = expansion_pieces(frozen.as_ref(), &weights, phi, mu);
    let expansion = phi_mu + eta * pieces.l1 + eta * eta * (pieces.l2 + 0.5 * pieces.l1_sq);
    Ok(GeneratorExpansion {
        phi: phi_mu,
        s_phi,
        expansion,
        residual: s_phi - expansion,
        pieces,
    })
}

fn expansion_pieces(
    frozen: &dyn FrozenKernel,
    weights: &[f64],
    phi: &CylindricalFunctional,
    mu: &EmpiricalMeasure,
) -> GeneratorPieces {
    let points = mu.points();
    let n = points.len();
    let d = mu.dim();
    let nf = n as f64;

    // Per-point caches.
    let drifts: Vec<Vec<f64>> = points.iter().map(|x| frozen.drift(x)).collect();
    let lions_phi: Vec<Vec<f64>> = points.iter().map(|x| phi.lions_derivative(mu, x)).collect();
    let grad_lions_phi: Vec<Vec<f64>> = points.iter().map(|x| phi.grad_lions(mu, x)).collect();
    let noises: Vec<Vec<Vec<f64>>> = points
        .iter()
        .map(|x| (0..weights.len()).map(|k| frozen.noise(x, k)).collect())
        .collect();

    // L1 Phi = <V . DPhi, mu>.
    let l1: f64 = (0..n)
        .map(|i| linalg::dot(&drifts[i], &lions_phi[i]))
        .sum::<f64>()
        / nf;

    // L2 Phi = 1/2 <<A~ : D^2 Phi>> + 1/2 <A : grad DPhi>
    //        - 1/4 <grad|V|^2 . DPhi> - 1/4 <<D|V|^2(y) . DPhi(x)>>.
    let mut l2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut kernel_ij = vec![0.0; d * d];
            for (k, &w) in weights.iter().enumerate() {
                linalg::outer_acc(&mut kernel_ij, w, &noises[i][k], &noises[j][k]);
            }
            let d2 = phi.lions_second(mu, &points[i], &points[j]);
            l2 += 0.5 * linalg::frobenius_dot(&kernel_ij, &d2) / (nf * nf);
        }
        let mut diag = vec![0.0; d * d];
        for (k, &w) in weights.iter().enumerate() {
            linalg::outer_acc(&mut diag, w, &noises[i][k], &noises[i][k]);
        }
        l2 += 0.5 * linalg::frobenius_dot(&diag, &grad_lions_phi[i]) / nf;

        let jac = frozen.drift_jacobian(&points[i]);
        let grad_sq = linalg::scaled(&linalg::mat_t_vec(&jac, &drifts[i]), 2.0);
        l2 -= 0.25 * linalg::dot(&grad_sq, &lions_phi[i]) / nf;

        let lions_sq = frozen.lions_sq_drift(&points[i]);
        l2 -= 0.25 * linalg::dot(&lions_sq, &lions_phi[i]) / nf;
    }

    // L1^2 Phi = <V . D(L1 Phi), mu> with
    // D(L1 Phi)(x) = J^T DPhi + (grad DPhi)^T V
    //              + <(DV(y, .)(x))^T DPhi(y), mu(dy)>
    //              + <D^2 Phi(y, x)^T V(y), mu(dy)>.
    let mut l1_sq = 0.0;
    for i in 0..n {
        let x = &points[i];
        let jac = frozen.drift_jacobian(x);
        let mut d_l1 = linalg::mat_t_vec(&jac, &lions_phi[i]);
        let second = linalg::mat_t_vec(&grad_lions_phi[i], &drifts[i]);
        linalg::axpy(&mut d_l1, 1.0, &second);
        for j in 0..n {
            let lions_v = frozen.drift_lions(&points[j], x);
            linalg::axpy(
                &mut d_l1,
                1.0 / nf,
                &linalg::mat_t_vec(&lions_v, &lions_phi[j]),
            );
            let d2 = phi.lions_second(mu, &points[j], x);
            linalg::axpy(&mut d_l1, 1.0 / nf, &linalg::mat_t_vec(&d2, &drifts[j]));
        }
        l1_sq += linalg::dot(&drifts[i], &d_l1) / nf;
    }

    GeneratorPieces { l1, l2, l1_sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_models::ShiftModel;
    use crate::meanfield_net::NetworkModel;
    use crate::sgd_chain::{GradientDescentKernel, ZeroKernel};

    fn probe_measure() -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(&[0.5, -0.3]).unwrap()
    }

    #[test]
    fn constant_functional_has_zero_residual() {
        let model = ShiftModel::standard();
        let kernel = GradientDescentKernel::new(&model);
        let phi = CylindricalFunctional::constant(3.0);
        for eta in [0.2, 0.05] {
            let out = one_step_generator_residual(&kernel, &phi, &probe_measure(), eta).unwrap();
            assert_eq!(out.residual, 0.0);
            assert_eq!(out.pieces.l1, 0.0);
        }
    }

    #[test]
    fn zero_kernel_is_the_identity() {
        let kernel = ZeroKernel::new(1, crate::data_space::DataDistribution::scalar_pair(-1.0, 1.0));
        let phi = CylindricalFunctional::mean_power(3);
        let out = one_step_generator_residual(&kernel, &phi, &probe_measure(), 0.1).unwrap();
        assert_eq!(out.s_phi, out.phi);
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn shift_model_expansion_pieces_match_hand_values() {
        // Shift model, mu on {0.5, -0.3} (mean m = 0.1), Phi = mean^3:
        // L1 = -3 m^3, L2 = 3m - 1.5 m^3, L1^2 = 9 m^3, and the residual is
        // exactly -eta^3 (m^3 + 3m).
        let model = ShiftModel::standard();
        let kernel = GradientDescentKernel::new(&model);
        let phi = CylindricalFunctional::mean_power(3);
        let mu = probe_measure();
        let m: f64 = 0.1;
        for eta in [0.2, 0.1, 0.05, 0.025] {
            let out = one_step_generator_residual(&kernel, &phi, &mu, eta).unwrap();
            assert!((out.pieces.l1 - (-3.0 * m.powi(3))).abs() < 1e-14);
            assert!((out.pieces.l2 - (3.0 * m - 1.5 * m.powi(3))).abs() < 1e-13);
            assert!((out.pieces.l1_sq - 9.0 * m.powi(3)).abs() < 1e-14);
            let predicted = -eta.powi(3) * (m.powi(3) + 3.0 * m);
            assert!(
                (out.residual - predicted).abs() < 1e-12,
                "eta={eta}: {} vs {predicted}",
                out.residual
            );
        }
    }

    #[test]
    fn quadratic_functional_is_expanded_exactly() {
        // For Phi = mean^2 the map is affine and the functional quadratic, so
        // the second-order expansion is exact: residual at rounding level.
        let model = ShiftModel::standard();
        let kernel = GradientDescentKernel::new(&model);
        let phi = CylindricalFunctional::mean_power(2);
        for eta in [0.2, 0.1, 0.05, 0.025] {
            let out = one_step_generator_residual(&kernel, &phi, &probe_measure(), eta).unwrap();
            assert!(out.residual.abs() < 1e-14, "eta={eta}: {}", out.residual);
        }
    }

    #[test]
    fn network_kernel_residual_is_exactly_cubic() {
        // Linear network on atoms {0, 2} with labels f = theta: the map is
        // y -> y + eta (1 - mean) theta^2 in terms of the ensemble mean, so
        // for Phi = mean^3 the residual is exactly eta^3 (1-m)^3 E[theta^6]
        // = 32 eta^3 (1-m)^3. This pins every measure-derivative term of the
        // expansion, including the Lions pieces.
        let net = NetworkModel::linear_scalar(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
        let phi = CylindricalFunctional::mean_power(3);
        let mu = probe_measure();
        let m: f64 = 0.1;
        for eta in [0.2, 0.1, 0.05, 0.025] {
            let out = one_step_generator_residual(&net, &phi, &mu, eta).unwrap();
            let predicted = 32.0 * eta.powi(3) * (1.0 - m).powi(3);
            assert!(
                (out.residual - predicted).abs() < 1e-9 * predicted.abs().max(1.0),
                "eta={eta}: {} vs {predicted}",
                out.residual
            );
        }
    }

    #[test]
    fn cubic_residual_decays_with_slope_three() {
        let model = ShiftModel::standard();
        let kernel = GradientDescentKernel::new(&model);
        let phi = CylindricalFunctional::mean_power(3);
        let mu = probe_measure();
        let etas = [0.2, 0.1, 0.05, 0.025];
        let resid: Vec<f64> = etas
            .iter()
            .map(|&eta| {
                one_step_generator_residual(&kernel, &phi, &mu, eta)
                    .unwrap()
                    .residual
                    .abs()
            })
            .collect();
        let curve = crate::analysis::WeakErrorCurve::new(
            "generator",
            etas.to_vec(),
            resid,
            vec![0.0; 4],
            0.0,
        )
        .unwrap();
        let fit = crate::analysis::fit_order(&curve).unwrap();
        assert!(fit.slope >= 2.7, "slope {}", fit.slope);
    }
}

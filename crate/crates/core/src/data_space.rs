//! The finite training-data space: atoms with weights, sampling, and the
//! per-atom Brownian increments that drive the flow integrators.
//!
//! With finitely many atoms the driving noise reduces to one independent
//! scalar Brownian motion per atom. An integrand `g` enters stochastic
//! integrals through the exact finite sum `sum_k sqrt(w_k) g(theta_k) dB_k`,
//! whose covariance over one step is `dt * E_w[g (x) g]`.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Finite data distribution: atoms `theta_k` in `R^{n0}` with strictly
/// positive weights that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DataDistribution {
    /// Builds a distribution, rescaling the weights to sum exactly to one.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CoreError::EmptyAtoms);
        }
        if atoms.len() != weights.len() {
            return Err(CoreError::LengthMismatch {
                what: "weights",
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        let dim = atoms[0].len();
        for a in &atoms {
            if a.len() != dim {
                return Err(CoreError::LengthMismatch {
                    what: "atom coordinates",
                    expected: dim,
                    got: a.len(),
                });
            }
            if !crate::linalg::all_finite(a) {
                return Err(CoreError::NonFinite("data atom"));
            }
        }
        for &w in &weights {
            if w <= 0.0 || !w.is_finite() {
                return Err(CoreError::BadWeight(w));
            }
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        // Guard the sampler against the running sum landing below 1.
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(DataDistribution {
            atoms,
            weights,
            cumulative,
        })
    }

    /// Equal-weight distribution on the given atoms.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0; n.max(1)])
    }

    /// Equal-weight two-point distribution on scalar atoms.
    pub fn scalar_pair(a: f64, b: f64) -> Self {
        Self::uniform(vec![vec![a], vec![b]]).expect("finite scalars")
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Dimension of the data points.
    pub fn atom_dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k]
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.atom_dim()];
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            crate::linalg::axpy(&mut out, w, a);
        }
        out
    }

    /// Weighted expectation of a scalar function of the atom.
    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, &w)| w * f(a))
            .sum()
    }

    /// Draws an atom index with probability proportional to its weight.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(k) | Err(k) => k.min(self.atoms.len() - 1),
        }
    }

    /// One independent `N(0, dt)` draw per atom.
    pub fn draw_increment(&self, dt: f64, rng: &mut impl Rng) -> Result<CylindricalIncrement> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(CoreError::NonPositiveStep(dt));
        }
        let scale = dt.sqrt();
        let per_atom = (0..self.atoms.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        Ok(CylindricalIncrement { per_atom, dt })
    }
}

/// One Brownian increment per data atom over a step of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalIncrement {
    per_atom: Vec<f64>,
    dt: f64,
}

impl CylindricalIncrement {
    /// Assembles an increment from explicit draws (antithetic variates,
    /// tests). Prefer [`DataDistribution::draw_increment`] for simulation.
    pub fn from_parts(per_atom: Vec<f64>, dt: f64) -> Self {
        CylindricalIncrement { per_atom, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn per_atom(&self) -> &[f64] {
        &self.per_atom
    }

    /// The integral increment of a vector integrand `g` against the noise:
    /// `sum_k sqrt(w_k) g(theta_k) dB_k`.
    pub fn integrate(&self, dist: &DataDistribution, mut g: impl FnMut(usize) -> Vec<f64>) -> Vec<f64> {
        assert_eq!(self.per_atom.len(), dist.len());
        let mut out = vec![0.0; 0];
        for k in 0..dist.len() {
            let gk = g(k);
            if out.is_empty() {
                out = vec![0.0; gk.len()];
            }
            crate::linalg::axpy(&mut out, dist.weight(k).sqrt() * self.per_atom[k], &gk);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn weights_are_normalized() {
        let d = DataDistribution::new(vec![vec![-1.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(d.weights(), &[0.5, 0.5]);
        let s: f64 = d.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_of_two_atoms() {
        let d = DataDistribution::new(vec![vec![0.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(d.mean(), vec![1.0]);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DataDistribution::new(vec![], vec![]),
            Err(CoreError::EmptyAtoms)
        ));
        assert!(matches!(
            DataDistribution::new(vec![vec![1.0]], vec![0.0]),
            Err(CoreError::BadWeight(_))
        ));
        assert!(matches!(
            DataDistribution::new(vec![vec![1.0]], vec![1.0, 2.0]),
            Err(CoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn single_atom_always_sampled() {
        let d = DataDistribution::new(vec![vec![3.0]], vec![1.0]).unwrap();
        let mut rng = RngStream::new(1).rng();
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 0);
        }
    }

    #[test]
    fn sampling_frequency_within_three_sigma() {
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let mut rng = RngStream::new(42).rng();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| d.sample(&mut rng) == 0).count();
        let freq = hits as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!(
            (freq - 0.5).abs() < 3.0 * sigma,
            "freq = {freq}, sigma = {sigma}"
        );
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let draw = |seed| {
            let mut rng = RngStream::new(seed).rng();
            (0..32).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn increment_rejects_bad_dt() {
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let mut rng = RngStream::new(0).rng();
        assert!(matches!(
            d.draw_increment(0.0, &mut rng),
            Err(CoreError::NonPositiveStep(_))
        ));
        assert!(d.draw_increment(0.01, &mut rng).is_ok());
    }

    #[test]
    fn increments_are_reproducible() {
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let stream = RngStream::new(5).child(11);
        let a = d.draw_increment(0.01, &mut stream.rng()).unwrap();
        let b = d.draw_increment(0.01, &mut stream.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_atom_covariance_is_dt_identity() {
        let d = DataDistribution::uniform(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let dt = 0.05;
        let n = 200_000;
        let root = RngStream::new(17);
        let mut sums = vec![0.0; 3 * 3];
        for rep in 0..n {
            let inc = d
                .draw_increment(dt, &mut root.child(rep as u64).rng())
                .unwrap();
            crate::linalg::outer_acc(&mut sums, 1.0, inc.per_atom(), inc.per_atom());
        }
        let nf = n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let cov = sums[i * 3 + j] / nf;
                let expected = if i == j { dt } else { 0.0 };
                // SE of a variance entry is dt*sqrt(2/n); of an off-diagonal, dt/sqrt(n).
                let se = if i == j {
                    dt * (2.0 / nf).sqrt()
                } else {
                    dt / nf.sqrt()
                };
                assert!(
                    (cov - expected).abs() < 5.0 * se,
                    "cov[{i}][{j}] = {cov}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn constant_integrand_variance_is_dt() {
        // g == c: Var(sum_k sqrt(w_k) c dB_k) = c^2 dt because the weights sum to 1.
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let dt = 0.02;
        let c = 3.0;
        let n = 100_000;
        let root = RngStream::new(23);
        let mut sum_sq = 0.0;
        for rep in 0..n {
            let inc = d
                .draw_increment(dt, &mut root.child(rep as u64).rng())
                .unwrap();
            let v = inc.integrate(&d, |_| vec![c]);
            sum_sq += v[0] * v[0];
        }
        let var = sum_sq / n as f64;
        let expected = c * c * dt;
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 5.0 * se, "var = {var}");
    }

    #[test]
    fn integral_covariance_matches_weighted_tensor() {
        // g(theta) = -theta on atoms {-1,+1}: E[theta^2] = 1 per unit time.
        let d = DataDistribution::scalar_pair(-1.0, 1.0);
        let dt = 0.01;
        let n = 100_000;
        let root = RngStream::new(31);
        let mut sum_sq = 0.0;
        for rep in 0..n {
            let inc = d
                .draw_increment(dt, &mut root.child(rep as u64).rng())
                .unwrap();
            let v = inc.integrate(&d, |k| vec![-d.atom(k)[0]]);
            sum_sq += v[0] * v[0];
        }
        let var = sum_sq / n as f64;
        let expected = dt * d.expect(|a| a[0] * a[0]);
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 5.0 * se, "var = {var}");
    }
}

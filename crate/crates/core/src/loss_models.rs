//! Loss oracles for the non-interacting dynamics: per-sample gradients, the
//! averaged risk gradient, Hessian-vector products, the centered noise field
//! `G(z, theta) = grad_pointwise - grad_risk`, its covariance kernel, and the
//! learning-rate-corrected drift used by the flow integrators.
//!
//! Two built-in models are exactly solvable and serve as oracles throughout:
//!
//! * `shift`: per-sample loss `|z - theta|^2 / 2` on atoms {-1, +1}. The
//!   noise field is `-theta`, independent of `z`, so the covariance kernel
//!   is constant and the flow is an Ornstein-Uhlenbeck process.
//! * `scale`: per-sample loss `theta |z|^2 / 2` on atoms {0, 2}. The noise
//!   field is `(theta - 1) z`, so the two-point kernel `x y` changes sign
//!   across the origin, which is what separates the two flow couplings.

use crate::data_space::DataDistribution;
use crate::error::{CoreError, Result};
use crate::linalg;

/// Loss oracle for a model with parameters in `R^d`.
///
/// `grad_risk` and `hessian_vec` have consistent defaults (weighted atom sum
/// and central finite differences); built-ins override them with closed forms.
pub trait LossModel: Send + Sync {
    fn dim(&self) -> usize;

    fn data(&self) -> &DataDistribution;

    /// Gradient of the per-sample loss at `z` for the given atom.
    fn grad_pointwise(&self, z: &[f64], atom: usize) -> Vec<f64>;

    /// Gradient of the averaged risk.
    fn grad_risk(&self, z: &[f64]) -> Vec<f64> {
        let data = self.data();
        let mut out = vec![0.0; self.dim()];
        for k in 0..data.len() {
            linalg::axpy(&mut out, data.weight(k), &self.grad_pointwise(z, k));
        }
        out
    }

    /// Hessian-vector product of the risk. Default: central differences of
    /// `grad_risk` with step `1e-5 * (1 + |z|)`.
    fn hessian_vec(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let h = 1e-5 * (1.0 + linalg::norm(z));
        let vn = linalg::norm(v);
        if vn == 0.0 {
            return vec![0.0; self.dim()];
        }
        let step = h / vn;
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        linalg::axpy(&mut zp, step, v);
        linalg::axpy(&mut zm, -step, v);
        let gp = self.grad_risk(&zp);
        let gm = self.grad_risk(&zm);
        gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * step)).collect()
    }

    /// Centered noise field `G(z, theta_k)`; its weighted atom average vanishes.
    fn noise_field(&self, z: &[f64], atom: usize) -> Vec<f64> {
        let mut g = self.grad_pointwise(z, atom);
        let risk = self.grad_risk(z);
        linalg::axpy(&mut g, -1.0, &risk);
        g
    }

    /// Two-point covariance kernel `sum_k w_k G(x,theta_k) (x) G(y,theta_k)`,
    /// returned as a row-major `d x d` matrix.
    fn covariance_kernel(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let data = self.data();
        let mut out = vec![0.0; d * d];
        for k in 0..data.len() {
            let gx = self.noise_field(x, k);
            let gy = self.noise_field(y, k);
            linalg::outer_acc(&mut out, data.weight(k), &gx, &gy);
        }
        out
    }

    /// Diagonal of the kernel: the noise covariance at a single point.
    fn sigma(&self, x: &[f64]) -> Vec<f64> {
        self.covariance_kernel(x, x)
    }

    /// Drift of the corrected flow:
    /// `-grad_risk(z) - (eta/2) Hess(z) grad_risk(z)`.
    fn modified_drift(&self, eta: f64, z: &[f64]) -> Vec<f64> {
        let mut out = self.grad_risk(z);
        let correction = self.hessian_vec(z, &out);
        for v in out.iter_mut() {
            *v = -*v;
        }
        linalg::axpy(&mut out, -eta / 2.0, &correction);
        out
    }
}

/// `shift` model: per-sample loss `|z - theta|^2 / 2`.
#[derive(Debug, Clone)]
pub struct ShiftModel {
    data: DataDistribution,
    mean: Vec<f64>,
}

impl ShiftModel {
    pub fn new(data: DataDistribution) -> Self {
        let mean = data.mean();
        ShiftModel { data, mean }
    }

    /// Atoms {-1, +1} with equal weights in one dimension.
    pub fn standard() -> Self {
        Self::new(DataDistribution::scalar_pair(-1.0, 1.0))
    }
}

impl LossModel for ShiftModel {
    fn dim(&self) -> usize {
        self.data.atom_dim()
    }

    fn data(&self) -> &DataDistribution {
        &self.data
    }

    fn grad_pointwise(&self, z: &[f64], atom: usize) -> Vec<f64> {
        linalg::sub(z, self.data.atom(atom))
    }

    fn grad_risk(&self, z: &[f64]) -> Vec<f64> {
        linalg::sub(z, &self.mean)
    }

    fn hessian_vec(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    // Closed form: the position cancels exactly, G(z, theta) = mean - theta.
    fn noise_field(&self, _z: &[f64], atom: usize) -> Vec<f64> {
        linalg::sub(&self.mean, self.data.atom(atom))
    }
}

/// `scale` model: per-sample loss `theta_0 |z|^2 / 2`, with `theta_0` the
/// first coordinate of the atom.
#[derive(Debug, Clone)]
pub struct ScaleModel {
    data: DataDistribution,
    dim: usize,
    mean_scale: f64,
}

impl ScaleModel {
    pub fn new(data: DataDistribution, dim: usize) -> Self {
        let mean_scale = data.expect(|a| a[0]);
        ScaleModel {
            data,
            dim,
            mean_scale,
        }
    }

    /// Atoms {0, 2} with equal weights, one parameter dimension.
    pub fn standard() -> Self {
        Self::new(DataDistribution::scalar_pair(0.0, 2.0), 1)
    }
}

impl LossModel for ScaleModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn data(&self) -> &DataDistribution {
        &self.data
    }

    fn grad_pointwise(&self, z: &[f64], atom: usize) -> Vec<f64> {
        linalg::scaled(z, self.data.atom(atom)[0])
    }

    fn grad_risk(&self, z: &[f64]) -> Vec<f64> {
        linalg::scaled(z, self.mean_scale)
    }

    fn hessian_vec(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        linalg::scaled(v, self.mean_scale)
    }
}

/// User-defined model: the per-sample loss is a sum of univariate
/// polynomials, one per coordinate, with coefficients per atom. Degree is
/// capped at four. The Hessian comes from the finite-difference default.
#[derive(Debug, Clone)]
pub struct PolynomialModel {
    data: DataDistribution,
    dim: usize,
    /// coeffs[atom][coordinate][power], powers 0..=4.
    coeffs: Vec<Vec<Vec<f64>>>,
}

pub const MAX_POLY_DEGREE: usize = 4;

impl PolynomialModel {
    pub fn new(data: DataDistribution, coeffs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if coeffs.len() != data.len() {
            return Err(CoreError::LengthMismatch {
                what: "coefficient tables",
                expected: data.len(),
                got: coeffs.len(),
            });
        }
        let dim = coeffs[0].len();
        if dim == 0 {
            return Err(CoreError::Invalid(
                "polynomial model needs at least one coordinate".into(),
            ));
        }
        for table in &coeffs {
            if table.len() != dim {
                return Err(CoreError::LengthMismatch {
                    what: "per-coordinate polynomials",
                    expected: dim,
                    got: table.len(),
                });
            }
            for poly in table {
                if poly.len() > MAX_POLY_DEGREE + 1 {
                    return Err(CoreError::Invalid(format!(
                        "polynomial degree {} exceeds the cap {}",
                        poly.len() - 1,
                        MAX_POLY_DEGREE
                    )));
                }
                if !linalg::all_finite(poly) {
                    return Err(CoreError::NonFinite("polynomial coefficient"));
                }
            }
        }
        Ok(PolynomialModel { data, dim, coeffs })
    }
}

impl LossModel for PolynomialModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn data(&self) -> &DataDistribution {
        &self.data
    }

    fn grad_pointwise(&self, z: &[f64], atom: usize) -> Vec<f64> {
        let table = &self.coeffs[atom];
        (0..self.dim)
            .map(|i| {
                let mut acc = 0.0;
                let mut pow = 1.0;
                for (p, &c) in table[i].iter().enumerate().skip(1) {
                    acc += p as f64 * c * pow;
                    pow *= z[i];
                }
                acc
            })
            .collect()
    }
}

/// Symmetric PSD square root. Eigenvalues in `[-1e-10, 0)` are clamped to
/// zero; anything below that threshold is treated as a broken covariance.
pub fn sqrt_psd(matrix: &[f64], d: usize) -> Result<Vec<f64>> {
    assert_eq!(matrix.len(), d * d);
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            asym = asym.max((matrix[i * d + j] - matrix[j * d + i]).abs());
        }
    }
    if asym > 1e-10 {
        return Err(CoreError::NotSymmetric(asym));
    }
    const CLAMP: f64 = 1e-10;
    let m = nalgebra::DMatrix::from_row_slice(d, d, matrix);
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut roots = Vec::with_capacity(d);
    for &lambda in eig.eigenvalues.iter() {
        if lambda < -CLAMP {
            return Err(CoreError::NotPositiveSemidefinite(lambda));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    let q = eig.eigenvectors;
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for (r, &root) in roots.iter().enumerate() {
                acc += q[(i, r)] * root * q[(j, r)];
            }
            out[i * d + j] = acc;
            out[j * d + i] = acc;
        }
    }
    Ok(out)
}

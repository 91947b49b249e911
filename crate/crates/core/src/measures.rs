//! Equal-weight empirical measures: push-forwards, moments, exact
//! Wasserstein-2 distance, and cylindrical test functionals with the measure
//! derivatives the generator expansion needs.

use crate::error::{CoreError, Result};
use crate::linalg;

/// Largest support for which the exact matcher runs; beyond this, callers
/// are expected to subsample (see `analysis::w2_subsampled`).
pub const MAX_EXACT_SUPPORT: usize = 512;

/// Equal-weight atomic measure on `N` points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::EmptyEnsemble);
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(CoreError::LengthMismatch {
                    what: "point coordinates",
                    expected: dim,
                    got: p.len(),
                });
            }
            if !linalg::all_finite(p) {
                return Err(CoreError::NonFinite("measure atom"));
            }
        }
        Ok(EmpiricalMeasure { points })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    /// Applies a map atom-wise.
    pub fn push_forward(&self, map: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let points: Vec<Vec<f64>> = self.points.iter().map(|p| map(p)).collect();
        Self::new(points)
    }

    /// `(1/N) sum_i |x_i|^p`.
    pub fn moment(&self, p: f64) -> Result<f64> {
        if p < 0.0 {
            return Err(CoreError::NegativeMoment(p));
        }
        Ok(self
            .points
            .iter()
            .map(|x| linalg::norm(x).powf(p))
            .sum::<f64>()
            / self.len() as f64)
    }

    /// Average of a scalar function over the atoms.
    pub fn average(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().map(|p| f(p)).sum::<f64>() / self.len() as f64
    }
}

/// Exact Wasserstein-2 distance between two equal-size empirical measures.
///
/// In one dimension the optimal coupling is the sorted pairing; in higher
/// dimensions a minimum-cost perfect matching on squared Euclidean costs is
/// solved exactly. Supports of different sizes are rejected.
pub fn wasserstein2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    wasserstein2_sq(a, b).map(f64::sqrt)
}

/// Squared distance; the matched cost is averaged over atoms.
pub fn wasserstein2_sq(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::UnequalSupport(a.len(), b.len()));
    }
    if a.len() > MAX_EXACT_SUPPORT {
        return Err(CoreError::SupportTooLarge {
            got: a.len(),
            limit: MAX_EXACT_SUPPORT,
        });
    }
    if a.dim() != b.dim() {
        return Err(CoreError::LengthMismatch {
            what: "measure dimensions",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let n = a.len();
    let matching = if a.dim() == 1 {
        sorted_matching(a, b)
    } else {
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cost[i * n + j] = linalg::dist_sq(a.point(i), b.point(j));
            }
        }
        assignment(&cost, n)
    };
    let total: f64 = (0..n)
        .map(|i| linalg::dist_sq(a.point(i), b.point(matching[i])))
        .sum();
    Ok(total / n as f64)
}

/// Optimal 1-d matching: pair in increasing order, reported per source index.
fn sorted_matching(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Vec<usize> {
    let n = a.len();
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    ia.sort_by(|&i, &j| a.point(i)[0].total_cmp(&a.point(j)[0]));
    ib.sort_by(|&i, &j| b.point(i)[0].total_cmp(&b.point(j)[0]));
    let mut matching = vec![0; n];
    for r in 0..n {
        matching[ia[r]] = ib[r];
    }
    matching
}

/// Exact minimum-cost perfect matching (Jonker-Volgenant style shortest
/// augmenting paths with potentials), O(n^3). Returns the column matched to
/// each row.
fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-indexed arrays; row/column 0 is the virtual root.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < min_v[j] {
                        min_v[j] = cur;
                        way[j] = j0;
                    }
                    if min_v[j] < delta {
                        delta = min_v[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut matching = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            matching[matched_row[j] - 1] = j - 1;
        }
    }
    matching
}

/// Inner test function of a cylindrical functional, with analytic
/// derivatives up to second order.
#[derive(Debug, Clone)]
pub enum InnerFn {
    /// `x_i`
    Coordinate(usize),
    /// `x_i^p`
    Power { index: usize, exponent: u32 },
    /// `|x|^2`
    NormSq,
    /// `sin(wave . x + phase)`
    Sinusoid { wave: Vec<f64>, phase: f64 },
}

impl InnerFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InnerFn::Coordinate(i) => x[*i],
            InnerFn::Power { index, exponent } => x[*index].powi(*exponent as i32),
            InnerFn::NormSq => linalg::dot(x, x),
            InnerFn::Sinusoid { wave, phase } => (linalg::dot(wave, x) + phase).sin(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            InnerFn::Coordinate(i) => {
                let mut g = vec![0.0; d];
                g[*i] = 1.0;
                g
            }
            InnerFn::Power { index, exponent } => {
                let mut g = vec![0.0; d];
                if *exponent >= 1 {
                    g[*index] = *exponent as f64 * x[*index].powi(*exponent as i32 - 1);
                }
                g
            }
            InnerFn::NormSq => linalg::scaled(x, 2.0),
            InnerFn::Sinusoid { wave, phase } => {
                let c = (linalg::dot(wave, x) + phase).cos();
                linalg::scaled(wave, c)
            }
        }
    }

    /// Row-major `d x d` Hessian.
    pub fn hess(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut h = vec![0.0; d * d];
        match self {
            InnerFn::Coordinate(_) => {}
            InnerFn::Power { index, exponent } => {
                let p = *exponent as f64;
                if *exponent >= 2 {
                    h[*index * d + *index] =
                        p * (p - 1.0) * x[*index].powi(*exponent as i32 - 2);
                }
            }
            InnerFn::NormSq => {
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
            }
            InnerFn::Sinusoid { wave, phase } => {
                let s = (linalg::dot(wave, x) + phase).sin();
                linalg::outer_acc(&mut h, -s, wave, wave);
            }
        }
        h
    }
}

/// Outer function `h : R^n -> R` of a cylindrical functional.
#[derive(Debug, Clone)]
pub enum OuterFn {
    Constant(f64),
    /// `u_0` (arity 1)
    Identity,
    /// `u_0^p` (arity 1)
    Power(u32),
    /// `c . u`
    Linear(Vec<f64>),
    /// `c . u + u^T Q u / 2`, `Q` symmetric row-major
    Quadratic { lin: Vec<f64>, quad: Vec<f64> },
}

impl OuterFn {
    /// Required number of inner functions, if fixed.
    pub fn arity(&self) -> Option<usize> {
        match self {
            OuterFn::Constant(_) => None,
            OuterFn::Identity | OuterFn::Power(_) => Some(1),
            OuterFn::Linear(c) => Some(c.len()),
            OuterFn::Quadratic { lin, .. } => Some(lin.len()),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            OuterFn::Constant(c) => *c,
            OuterFn::Identity => u[0],
            OuterFn::Power(p) => u[0].powi(*p as i32),
            OuterFn::Linear(c) => linalg::dot(c, u),
            OuterFn::Quadratic { lin, quad } => {
                linalg::dot(lin, u) + 0.5 * linalg::dot(&linalg::mat_vec(quad, u), u)
            }
        }
    }

    pub fn grad(&self, u: &[f64]) -> Vec<f64> {
        match self {
            OuterFn::Constant(_) => vec![0.0; u.len()],
            OuterFn::Identity => vec![1.0],
            OuterFn::Power(p) => {
                if *p >= 1 {
                    vec![*p as f64 * u[0].powi(*p as i32 - 1)]
                } else {
                    vec![0.0]
                }
            }
            OuterFn::Linear(c) => c.clone(),
            OuterFn::Quadratic { lin, quad } => {
                let mut g = linalg::mat_vec(quad, u);
                linalg::axpy(&mut g, 1.0, lin);
                g
            }
        }
    }

    /// Row-major `n x n` Hessian.
    pub fn hess(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        match self {
            OuterFn::Constant(_) | OuterFn::Identity | OuterFn::Linear(_) => vec![0.0; n * n],
            OuterFn::Power(p) => {
                let pf = *p as f64;
                vec![if *p >= 2 {
                    pf * (pf - 1.0) * u[0].powi(*p as i32 - 2)
                } else {
                    0.0
                }]
            }
            OuterFn::Quadratic { quad, .. } => quad.clone(),
        }
    }
}

/// Cylindrical functional `Phi(mu) = h(<phi_1, mu>, ..., <phi_n, mu>)`.
#[derive(Debug, Clone)]
pub struct CylindricalFunctional {
    inner: Vec<InnerFn>,
    outer: OuterFn,
}

impl CylindricalFunctional {
    pub fn new(inner: Vec<InnerFn>, outer: OuterFn) -> Result<Self> {
        if let Some(n) = outer.arity() {
            if inner.len() != n {
                return Err(CoreError::LengthMismatch {
                    what: "inner functions",
                    expected: n,
                    got: inner.len(),
                });
            }
        }
        Ok(CylindricalFunctional { inner, outer })
    }

    /// `Phi(mu) = <x_0, mu>`: the mean of the first coordinate.
    pub fn coordinate_mean() -> Self {
        CylindricalFunctional {
            inner: vec![InnerFn::Coordinate(0)],
            outer: OuterFn::Identity,
        }
    }

    /// `Phi(mu) = <x_0, mu>^p`.
    pub fn mean_power(p: u32) -> Self {
        CylindricalFunctional {
            inner: vec![InnerFn::Coordinate(0)],
            outer: OuterFn::Power(p),
        }
    }

    pub fn constant(c: f64) -> Self {
        CylindricalFunctional {
            inner: vec![],
            outer: OuterFn::Constant(c),
        }
    }

    /// The vector of inner averages `<phi_i, mu>`.
    pub fn inner_means(&self, m: &EmpiricalMeasure) -> Vec<f64> {
        self.inner
            .iter()
            .map(|phi| m.average(|x| phi.eval(x)))
            .collect()
    }

    pub fn eval(&self, m: &EmpiricalMeasure) -> f64 {
        self.outer.eval(&self.inner_means(m))
    }

    /// Lions derivative `D Phi(mu, x) = sum_i d_i h(..) grad phi_i(x)`.
    pub fn lions_derivative(&self, m: &EmpiricalMeasure, x: &[f64]) -> Vec<f64> {
        let u = self.inner_means(m);
        let hg = self.outer.grad(&u);
        let mut out = vec![0.0; x.len()];
        for (phi, &c) in self.inner.iter().zip(&hg) {
            if c != 0.0 {
                linalg::axpy(&mut out, c, &phi.grad(x));
            }
        }
        out
    }

    /// Second Lions derivative `D^2 Phi(mu, x, y)`, row index for `x`,
    /// column index for `y`:
    /// `sum_ij d_ij h(..) grad phi_i(x) (x) grad phi_j(y)`.
    pub fn lions_second(&self, m: &EmpiricalMeasure, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = x.len();
        let u = self.inner_means(m);
        let hh = self.outer.hess(&u);
        let n = self.inner.len();
        let grads_x: Vec<Vec<f64>> = self.inner.iter().map(|p| p.grad(x)).collect();
        let grads_y: Vec<Vec<f64>> = self.inner.iter().map(|p| p.grad(y)).collect();
        let mut out = vec![0.0; d * d];
        for i in 0..n {
            for j in 0..n {
                let c = hh[i * n + j];
                if c != 0.0 {
                    linalg::outer_acc(&mut out, c, &grads_x[i], &grads_y[j]);
                }
            }
        }
        out
    }

    /// Space gradient of the Lions derivative, `grad_x D Phi(mu, x)`:
    /// `sum_i d_i h(..) hess phi_i(x)`. Row-major `d x d`, symmetric.
    pub fn grad_lions(&self, m: &EmpiricalMeasure, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let u = self.inner_means(m);
        let hg = self.outer.grad(&u);
        let mut out = vec![0.0; d * d];
        for (phi, &c) in self.inner.iter().zip(&hg) {
            if c != 0.0 {
                linalg::axpy(&mut out, c, &phi.hess(x));
            }
        }
        out
    }
}

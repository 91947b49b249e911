//! The verification harness: weak-error curves with order fitting, two-point
//! covariation estimators, the one-step generator-expansion residual, closed
//! forms for the linear model, and the finite-width gap study.

mod covariation;
mod generator;
mod meanfield;
mod oracle;
mod weak_error;

pub use covariation::{
    smf_difference_quadratic_variation, two_point_covariation, CovariationEstimate,
    TwoPointMethod, TwoPointSpec,
};
pub use generator::{one_step_generator_residual, GeneratorExpansion, GeneratorPieces};
pub use meanfield::{
    meanfield_gap, w2_subsampled, InitialSampler, MeanFieldGapReport, MeanFieldGapSpec,
};
pub use oracle::{closed_form_linear_oracle, LinearClosedForms};
pub use weak_error::{
    closed_form_shift_curve, fit_order, monte_carlo_weak_error, OrderFit, WeakErrorCurve,
    WeakErrorSpec,
};

/// Sample mean and its standard error.
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Median; even counts average the middle pair.
pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Finite-width gap study: the interacting chain with `M` particles against
//! a large-ensemble flow reference, measured in Wasserstein-2.
//!
//! The mean-field law itself is out of numerical reach, so the reference is
//! a self-converged particle discretization of the flow with at least four
//! times the largest compared width and a finer time step. Supports of
//! different sizes are compared by subsampling the larger one without
//! replacement and taking the median over a fixed number of draws.

use super::median;
use crate::error::{CoreError, Result};
use crate::integrators::{integrate_ddsmf_endpoint, DriftOrder, FlowState};
use crate::measures::{wasserstein2, EmpiricalMeasure};
use crate::rng::{tags, RngStream};
use crate::sgd_chain::{run_interacting_endpoint, ChainState, MeasureKernel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// How the initial particle positions are drawn.
#[derive(Debug, Clone)]
pub enum InitialSampler {
    Gaussian { mean: Vec<f64>, std: f64 },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitialSampler {
    pub fn dim(&self) -> usize {
        match self {
            InitialSampler::Gaussian { mean, .. } => mean.len(),
            InitialSampler::Uniform { low, .. } => low.len(),
        }
    }

    pub fn draw(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| match self {
                InitialSampler::Gaussian { mean, std } => mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + std * z
                    })
                    .collect(),
                InitialSampler::Uniform { low, high } => low
                    .iter()
                    .zip(high)
                    .map(|(&l, &h)| rng.random_range(l..h))
                    .collect(),
            })
            .collect()
    }
}

/// Wasserstein-2 between possibly unequal supports: the larger side is
/// subsampled to the smaller without replacement, and the median over
/// `subsamples` draws is reported. Equal supports use the exact matcher.
pub fn w2_subsampled(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    subsamples: usize,
    stream: &RngStream,
) -> Result<f64> {
    if a.len() == b.len() {
        return wasserstein2(a, b);
    }
    if subsamples == 0 {
        return Err(CoreError::ZeroReplicates);
    }
    let (small, large) = if a.len() < b.len() { (a, b) } else { (b, a) };
    let target = small.len();
    let mut values = Vec::with_capacity(subsamples);
    for i in 0..subsamples {
        let mut rng = stream.child(i as u64).rng();
        let mut indices: Vec<usize> = (0..large.len()).collect();
        // Partial Fisher-Yates: the first `target` entries are the sample.
        for j in 0..target {
            let pick = rng.random_range(j..indices.len());
            indices.swap(j, pick);
        }
        let sampled = EmpiricalMeasure::new(
            indices[..target]
                .iter()
                .map(|&ix| large.point(ix).to_vec())
                .collect(),
        )?;
        values.push(wasserstein2(small, &sampled)?);
    }
    Ok(median(&values))
}

pub struct MeanFieldGapSpec<'a> {
    pub kernel: &'a dyn MeasureKernel,
    /// Compared particle counts, strictly increasing.
    pub m_values: Vec<usize>,
    /// Reference ensemble size; at least four times the largest `M`.
    pub m_ref: usize,
    pub eta: f64,
    pub horizon: f64,
    /// Time-step divisor for the reference flow (dt = eta / divisor).
    pub dt_divisor: u32,
    pub seeds: usize,
    pub subsamples: usize,
    pub sampler: InitialSampler,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanFieldGapReport {
    pub m_values: Vec<usize>,
    /// Median over seeds of the subsampled W2 gap, per M.
    pub medians: Vec<f64>,
    /// Per-M, per-seed gaps.
    pub gaps: Vec<Vec<f64>>,
    /// Whether the medians strictly decrease in M.
    pub strictly_decreasing: bool,
}

/// Runs the gap study: per seed, one reference flow with `m_ref` particles,
/// then one `M`-particle chain per compared width, each started from fresh
/// independent draws of the same initial law.
pub fn meanfield_gap(spec: &MeanFieldGapSpec, stream: &RngStream) -> Result<MeanFieldGapReport> {
    if spec.m_values.is_empty() {
        return Err(CoreError::EmptyEnsemble);
    }
    if !spec.m_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(CoreError::Invalid(
            "particle counts must be strictly increasing".into(),
        ));
    }
    let max_m = *spec.m_values.last().expect("nonempty");
    if spec.m_ref < 4 * max_m {
        return Err(CoreError::Invalid(format!(
            "reference width {} must be at least 4 x the largest compared width {max_m}",
            spec.m_ref
        )));
    }
    if spec.seeds == 0 {
        return Err(CoreError::ZeroReplicates);
    }
    let ratio = spec.horizon / spec.eta;
    let n_steps = ratio.round();
    if (ratio - n_steps).abs() > f64::EPSILON * ratio.abs().max(1.0) {
        return Err(CoreError::NonIntegerSteps {
            what: "horizon / eta",
            value: ratio,
        });
    }
    let n_steps = n_steps as usize;
    let dt = spec.eta / spec.dt_divisor as f64;

    let per_seed: Vec<Vec<f64>> = (0..spec.seeds)
        .into_par_iter()
        .map(|seed| -> Result<Vec<f64>> {
            let seed_stream = stream.child(seed as u64);
            let ref_init = spec.sampler.draw(
                spec.m_ref,
                &mut seed_stream.child(tags::INIT).child(0).rng(),
            );
            let ref_state = FlowState::new(ref_init, spec.eta, dt)?;
            let reference = integrate_ddsmf_endpoint(
                spec.kernel,
                &ref_state,
                spec.horizon,
                &seed_stream.child(tags::NOISE),
                DriftOrder::Modified,
            )?
            .measure();

            let mut gaps = Vec::with_capacity(spec.m_values.len());
            for (mi, &m) in spec.m_values.iter().enumerate() {
                let chain_init = spec.sampler.draw(
                    m,
                    &mut seed_stream.child(tags::INIT).child(1 + mi as u64).rng(),
                );
                let chain_state = ChainState::new(chain_init, spec.eta)?;
                let end = run_interacting_endpoint(
                    spec.kernel,
                    &chain_state,
                    n_steps,
                    &seed_stream.child(tags::DATA).child(mi as u64),
                )?;
                let gap = w2_subsampled(
                    &end.measure(),
                    &reference,
                    spec.subsamples,
                    &seed_stream.child(tags::SUBSAMPLE).child(mi as u64),
                )?;
                gaps.push(gap);
            }
            Ok(gaps)
        })
        .collect::<Result<_>>()?;

    let mut gaps = vec![Vec::with_capacity(spec.seeds); spec.m_values.len()];
    for seed_gaps in &per_seed {
        for (mi, &g) in seed_gaps.iter().enumerate() {
            gaps[mi].push(g);
        }
    }
    let medians: Vec<f64> = gaps.iter().map(|g| median(g)).collect();
    let strictly_decreasing = medians.windows(2).all(|w| w[0] > w[1]);
    Ok(MeanFieldGapReport {
        m_values: spec.m_values.clone(),
        medians,
        gaps,
        strictly_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_space::DataDistribution;
    use crate::meanfield_net::NetworkModel;
    use crate::sgd_chain::ZeroKernel;

    #[test]
    fn subsampled_w2_equals_exact_on_equal_supports() {
        let a = EmpiricalMeasure::from_scalars(&[0.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::from_scalars(&[0.5, 2.0]).unwrap();
        let exact = wasserstein2(&a, &b).unwrap();
        let sub = w2_subsampled(&a, &b, 8, &RngStream::new(1)).unwrap();
        assert_eq!(exact, sub);
    }

    #[test]
    fn subsampled_w2_detects_identical_laws() {
        // Subsampling a measure against its own subset stays small compared
        // with a shifted copy.
        let big: Vec<f64> = (0..64).map(|i| (i as f64) / 8.0).collect();
        let small: Vec<f64> = (0..16).map(|i| (i as f64) / 2.0 + 0.25).collect();
        let shifted: Vec<f64> = small.iter().map(|x| x + 5.0).collect();
        let b = EmpiricalMeasure::from_scalars(&big).unwrap();
        let s = EmpiricalMeasure::from_scalars(&small).unwrap();
        let far = EmpiricalMeasure::from_scalars(&shifted).unwrap();
        let near_gap = w2_subsampled(&s, &b, 16, &RngStream::new(2)).unwrap();
        let far_gap = w2_subsampled(&far, &b, 16, &RngStream::new(2)).unwrap();
        assert!(near_gap < far_gap);
    }

    #[test]
    fn zero_kernel_gap_is_pure_sampling_error() {
        // With V = G = 0 both descriptions stay at their initial draws, so
        // the gap is the empirical-measure sampling gap, shrinking with M.
        let kernel = ZeroKernel::new(1, DataDistribution::scalar_pair(-1.0, 1.0));
        let spec = MeanFieldGapSpec {
            kernel: &kernel,
            m_values: vec![8, 32, 128],
            m_ref: 512,
            eta: 0.05,
            horizon: 0.5,
            dt_divisor: 20,
            seeds: 9,
            subsamples: 16,
            sampler: InitialSampler::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            },
        };
        let report = meanfield_gap(&spec, &RngStream::new(7)).unwrap();
        assert!(report.strictly_decreasing, "medians {:?}", report.medians);
    }

    #[test]
    fn reference_width_validation() {
        let kernel = ZeroKernel::new(1, DataDistribution::scalar_pair(-1.0, 1.0));
        let spec = MeanFieldGapSpec {
            kernel: &kernel,
            m_values: vec![8, 32],
            m_ref: 64,
            eta: 0.05,
            horizon: 0.5,
            dt_divisor: 20,
            seeds: 2,
            subsamples: 4,
            sampler: InitialSampler::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            },
        };
        assert!(meanfield_gap(&spec, &RngStream::new(0)).is_err());
    }

    #[test]
    fn linear_network_gap_decreases_smoke() {
        // Small version of the full study: medians shrink with width.
        let net = NetworkModel::linear_scalar(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
        let spec = MeanFieldGapSpec {
            kernel: &net,
            m_values: vec![4, 16],
            m_ref: 64,
            eta: 0.05,
            horizon: 0.25,
            dt_divisor: 25,
            seeds: 7,
            subsamples: 8,
            sampler: InitialSampler::Gaussian {
                mean: vec![0.5],
                std: 0.5,
            },
        };
        let report = meanfield_gap(&spec, &RngStream::new(11)).unwrap();
        assert!(report.strictly_decreasing, "medians {:?}", report.medians);
    }
}

//! JSON experiment configuration: schema, validation, and construction of
//! the library objects. Seeds are mandatory; there are no entropy defaults
//! anywhere.

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use smflow::analysis::{InitialSampler, TwoPointMethod};
use smflow::loss_models::{LossModel, PolynomialModel, ScaleModel, ShiftModel};
use smflow::measures::{CylindricalFunctional, InnerFn, OuterFn};
use smflow::meanfield_net::{LinearFeature, NetworkModel, TanhFeature};
use smflow::DataDistribution;

#[derive(Debug, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    WeakError(WeakErrorConfig),
    TwoPoint(TwoPointConfig),
    Generator(GeneratorConfig),
    Meanfield(MeanfieldConfig),
    Simulate(SimulateConfig),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::WeakError(_) => "weak-error",
            ExperimentConfig::TwoPoint(_) => "two-point",
            ExperimentConfig::Generator(_) => "generator",
            ExperimentConfig::Meanfield(_) => "meanfield",
            ExperimentConfig::Simulate(_) => "simulate",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::WeakError(c) => c.seed,
            ExperimentConfig::TwoPoint(c) => c.seed,
            ExperimentConfig::Generator(c) => c.seed,
            ExperimentConfig::Meanfield(c) => c.seed,
            ExperimentConfig::Simulate(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::WeakError(c) => c.seed = seed,
            ExperimentConfig::TwoPoint(c) => c.seed = seed,
            ExperimentConfig::Generator(c) => c.seed = seed,
            ExperimentConfig::Meanfield(c) => c.seed = seed,
            ExperimentConfig::Simulate(c) => c.seed = seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::WeakError(c) => c.validate(),
            ExperimentConfig::TwoPoint(c) => c.validate(),
            ExperimentConfig::Generator(c) => c.validate(),
            ExperimentConfig::Meanfield(c) => c.validate(),
            ExperimentConfig::Simulate(c) => c.validate(),
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_str(text).context("config does not match the schema")?;
    config.validate()?;
    Ok(config)
}

fn check_horizon_divisible(horizon: f64, eta: f64) -> Result<usize> {
    if !(eta > 0.0) {
        bail!("learning rate must be positive, got {eta}");
    }
    let ratio = horizon / eta;
    let n = ratio.round();
    if (ratio - n).abs() > f64::EPSILON * ratio.abs().max(1.0) {
        bail!(
            "horizon {horizon} is not an integer number of steps of size {eta} \
             (horizon/eta = {ratio})"
        );
    }
    Ok(n as usize)
}

fn check_dt_divisor(divisor: u32) -> Result<()> {
    if divisor < 10 {
        bail!("dt_divisor must be at least 10, got {divisor}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Building blocks shared across experiments.

/// Built-in loss models and the polynomial user model.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// Per-sample loss `|z - theta|^2 / 2`. Defaults: atoms {-1, +1}.
    Shift {
        #[serde(default)]
        atoms: Option<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Per-sample loss `theta |z|^2 / 2`. Defaults: atoms {0, 2}.
    Scale {
        #[serde(default)]
        atoms: Option<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Per-sample loss given as univariate polynomials per coordinate,
    /// coefficients indexed `[atom][coordinate][power]`, degree at most 4.
    Polynomial {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        coeffs: Vec<Vec<Vec<f64>>>,
    },
}

fn scalar_distribution(atoms: &Option<Vec<f64>>, weights: &Option<Vec<f64>>, default: [f64; 2]) -> Result<DataDistribution> {
    let atom_values = atoms.clone().unwrap_or_else(|| default.to_vec());
    let points: Vec<Vec<f64>> = atom_values.into_iter().map(|a| vec![a]).collect();
    let dist = match weights {
        Some(w) => DataDistribution::new(points, w.clone()),
        None => DataDistribution::uniform(points),
    };
    Ok(dist?)
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn LossModel>> {
        Ok(match self {
            ModelConfig::Shift { atoms, weights } => {
                Box::new(ShiftModel::new(scalar_distribution(atoms, weights, [-1.0, 1.0])?))
            }
            ModelConfig::Scale { atoms, weights } => {
                let dist = scalar_distribution(atoms, weights, [0.0, 2.0])?;
                Box::new(ScaleModel::new(dist, 1))
            }
            ModelConfig::Polynomial {
                atoms,
                weights,
                coeffs,
            } => {
                let dist = DataDistribution::new(atoms.clone(), weights.clone())?;
                Box::new(PolynomialModel::new(dist, coeffs.clone())?)
            }
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Linear,
    Tanh,
}

/// Shallow-network specification: feature map, data atoms, labels.
#[derive(Debug, Deserialize)]
pub struct NetworkConfig {
    pub features: FeatureKind,
    pub atoms: Vec<Vec<f64>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
}

impl NetworkConfig {
    pub fn build(&self) -> Result<NetworkModel> {
        if self.atoms.is_empty() {
            bail!("network needs at least one data atom");
        }
        let dist = match &self.weights {
            Some(w) => DataDistribution::new(self.atoms.clone(), w.clone())?,
            None => DataDistribution::uniform(self.atoms.clone())?,
        };
        let input_dim = dist.atom_dim();
        let features: Box<dyn smflow::FeatureMap> = match self.features {
            FeatureKind::Linear => Box::new(LinearFeature::new(input_dim)),
            FeatureKind::Tanh => Box::new(TanhFeature::new(input_dim)),
        };
        Ok(NetworkModel::new(features, self.labels.clone(), dist)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerConfig {
    Coordinate { index: usize },
    Power { index: usize, exponent: u32 },
    NormSq,
    Sinusoid { wave: Vec<f64>, phase: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OuterConfig {
    Identity,
    Power { exponent: u32 },
    Constant { value: f64 },
    Linear { coeffs: Vec<f64> },
    Quadratic { lin: Vec<f64>, quad: Vec<f64> },
}

/// Cylindrical test functional `h(<phi_1, mu>, ..., <phi_n, mu>)`.
#[derive(Debug, Deserialize)]
pub struct PhiConfig {
    pub inner: Vec<InnerConfig>,
    pub outer: OuterConfig,
}

impl PhiConfig {
    pub fn build(&self) -> Result<CylindricalFunctional> {
        let inner = self
            .inner
            .iter()
            .map(|i| match i {
                InnerConfig::Coordinate { index } => InnerFn::Coordinate(*index),
                InnerConfig::Power { index, exponent } => InnerFn::Power {
                    index: *index,
                    exponent: *exponent,
                },
                InnerConfig::NormSq => InnerFn::NormSq,
                InnerConfig::Sinusoid { wave, phase } => InnerFn::Sinusoid {
                    wave: wave.clone(),
                    phase: *phase,
                },
            })
            .collect();
        let outer = match &self.outer {
            OuterConfig::Identity => OuterFn::Identity,
            OuterConfig::Power { exponent } => OuterFn::Power(*exponent),
            OuterConfig::Constant { value } => OuterFn::Constant(*value),
            OuterConfig::Linear { coeffs } => OuterFn::Linear(coeffs.clone()),
            OuterConfig::Quadratic { lin, quad } => OuterFn::Quadratic {
                lin: lin.clone(),
                quad: quad.clone(),
            },
        };
        Ok(CylindricalFunctional::new(inner, outer)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitConfig {
    Gaussian { mean: Vec<f64>, std: f64 },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitConfig {
    pub fn build(&self) -> InitialSampler {
        match self {
            InitConfig::Gaussian { mean, std } => InitialSampler::Gaussian {
                mean: mean.clone(),
                std: *std,
            },
            InitConfig::Uniform { low, high } => InitialSampler::Uniform {
                low: low.clone(),
                high: high.clone(),
            },
        }
    }
}

fn default_snr_floor() -> f64 {
    3.0
}

fn default_subsamples() -> usize {
    32
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Deserialize)]
pub struct OrderBand {
    pub min: f64,
    pub max: f64,
}

// ---------------------------------------------------------------------------
// Per-experiment configs.

#[derive(Debug, Deserialize)]
pub struct WeakErrorConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub phi: PhiConfig,
    pub etas: Vec<f64>,
    pub horizon: f64,
    pub dt_divisor: u32,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub replicates: usize,
    pub initial: Vec<Vec<f64>>,
    #[serde(default)]
    pub first_order: bool,
    #[serde(default = "default_snr_floor")]
    pub snr_floor: f64,
    #[serde(default)]
    pub expected_order: Option<OrderBand>,
}

impl WeakErrorConfig {
    fn validate(&self) -> Result<()> {
        if self.etas.is_empty() {
            bail!("eta sweep is empty");
        }
        if !self.etas.windows(2).all(|w| w[0] > w[1]) {
            bail!("etas must be strictly decreasing");
        }
        for &eta in &self.etas {
            check_horizon_divisible(self.horizon, eta)?;
        }
        check_dt_divisor(self.dt_divisor)?;
        if matches!(self.estimator, EstimatorKind::MonteCarlo) && self.replicates == 0 {
            bail!("monte-carlo estimator needs replicates > 0");
        }
        if matches!(self.estimator, EstimatorKind::ClosedForm) {
            let shift_on_mean = matches!(self.model, ModelConfig::Shift { .. })
                && self.initial.len() == 1
                && self.initial[0].len() == 1;
            if !shift_on_mean {
                bail!(
                    "the closed-form estimator covers only the shift model with a \
                     single scalar initial point"
                );
            }
        }
        if self.initial.is_empty() {
            bail!("initial ensemble is empty");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct TwoPointConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub eta: f64,
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub window_steps: usize,
    pub dt_divisor: u32,
    pub replicates: usize,
    pub methods: Vec<MethodKind>,
    #[serde(default)]
    pub expected_signs: Vec<SignExpectation>,
    /// Also estimate the quadratic variation of the difference process
    /// under the cylindrical flow, and assert it is zero within 5 SE.
    #[serde(default)]
    pub difference_qv_zero: bool,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Smf,
    Sme,
    Sgd,
}

impl MethodKind {
    pub fn to_method(self) -> TwoPointMethod {
        match self {
            MethodKind::Smf => TwoPointMethod::Smf,
            MethodKind::Sme => TwoPointMethod::Sme,
            MethodKind::Sgd => TwoPointMethod::Sgd,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct SignExpectation {
    pub method: MethodKind,
    pub sign: Sign,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Negative,
    Positive,
}

impl TwoPointConfig {
    fn validate(&self) -> Result<()> {
        check_dt_divisor(self.dt_divisor)?;
        if self.replicates == 0 {
            bail!("replicates must be positive");
        }
        if self.window_steps == 0 {
            bail!("window_steps must be positive");
        }
        if self.methods.is_empty() {
            bail!("no methods requested");
        }
        if self.x.len() != self.xbar.len() {
            bail!("x and xbar must have the same dimension");
        }
        for exp in &self.expected_signs {
            if !self.methods.contains(&exp.method) {
                bail!("expected sign refers to a method that is not run");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub phi: PhiConfig,
    pub probe_measure: Vec<Vec<f64>>,
    pub etas: Vec<f64>,
    #[serde(default)]
    pub min_slope: Option<f64>,
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        match (&self.model, &self.network) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => bail!("generator needs exactly one of `model` or `network`"),
        }
        if self.probe_measure.is_empty() {
            bail!("probe measure is empty");
        }
        if self.etas.len() < 2 {
            bail!("eta sweep needs at least two points");
        }
        if !self.etas.windows(2).all(|w| w[0] > w[1]) {
            bail!("etas must be strictly decreasing");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct MeanfieldConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub m_values: Vec<usize>,
    pub m_ref: usize,
    pub eta: f64,
    pub horizon: f64,
    pub dt_divisor: u32,
    pub seeds: usize,
    #[serde(default = "default_subsamples")]
    pub subsamples: usize,
    pub init: InitConfig,
    #[serde(default)]
    pub expect_decreasing: bool,
}

impl MeanfieldConfig {
    fn validate(&self) -> Result<()> {
        check_horizon_divisible(self.horizon, self.eta)?;
        check_dt_divisor(self.dt_divisor)?;
        if self.m_values.is_empty() {
            bail!("m_values is empty");
        }
        if !self.m_values.windows(2).all(|w| w[0] < w[1]) {
            bail!("m_values must be strictly increasing");
        }
        let max_m = *self.m_values.last().expect("nonempty");
        if self.m_ref < 4 * max_m {
            bail!(
                "m_ref = {} must be at least 4 x the largest compared width {max_m}",
                self.m_ref
            );
        }
        if self.seeds == 0 {
            bail!("seeds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SimulateMethod {
    Sgd,
    InteractingSgd,
    Smf,
    Sme,
    Ddsmf,
}

impl SimulateMethod {
    pub fn name(self) -> &'static str {
        match self {
            SimulateMethod::Sgd => "sgd",
            SimulateMethod::InteractingSgd => "interacting-sgd",
            SimulateMethod::Smf => "smf",
            SimulateMethod::Sme => "sme",
            SimulateMethod::Ddsmf => "ddsmf",
        }
    }

    pub fn needs_network(self) -> bool {
        matches!(self, SimulateMethod::InteractingSgd | SimulateMethod::Ddsmf)
    }

    pub fn is_flow(self) -> bool {
        matches!(
            self,
            SimulateMethod::Smf | SimulateMethod::Sme | SimulateMethod::Ddsmf
        )
    }
}

#[derive(Debug, Deserialize)]
pub struct SimulateConfig {
    pub seed: u64,
    pub method: SimulateMethod,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub eta: f64,
    pub horizon: f64,
    #[serde(default)]
    pub dt_divisor: Option<u32>,
    pub initial: Vec<Vec<f64>>,
    pub replicates: usize,
    /// Checkpoint times; must be multiples of eta (chains) or of the
    /// integrator step (flows).
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub first_order: bool,
}

impl SimulateConfig {
    fn validate(&self) -> Result<()> {
        if self.method.needs_network() {
            if self.network.is_none() {
                bail!("method `{}` needs a `network`", self.method.name());
            }
        } else if self.model.is_none() {
            bail!("method `{}` needs a `model`", self.method.name());
        }
        check_horizon_divisible(self.horizon, self.eta)?;
        if self.method.is_flow() {
            check_dt_divisor(self.dt_divisor.unwrap_or(0))?;
        }
        if self.initial.is_empty() {
            bail!("initial ensemble is empty");
        }
        if self.replicates == 0 {
            bail!("replicates must be positive");
        }
        for &t in &self.checkpoints {
            if t < 0.0 || t > self.horizon {
                bail!("checkpoint {t} outside [0, horizon]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_weak_error_config_parses() {
        let text = r#"{
            "experiment": "weak-error",
            "seed": 42,
            "model": {"kind": "shift"},
            "phi": {"inner": [{"kind": "coordinate", "index": 0}], "outer": {"kind": "identity"}},
            "etas": [0.1, 0.05, 0.025],
            "horizon": 1.0,
            "dt_divisor": 50,
            "estimator": "closed-form",
            "initial": [[1.0]]
        }"#;
        let config = parse_config(text).unwrap();
        assert_eq!(config.kind(), "weak-error");
        assert_eq!(config.seed(), 42);
    }

    #[test]
    fn non_integer_step_count_is_rejected() {
        let text = r#"{
            "experiment": "weak-error",
            "seed": 42,
            "model": {"kind": "shift"},
            "phi": {"inner": [{"kind": "coordinate", "index": 0}], "outer": {"kind": "identity"}},
            "etas": [0.3],
            "horizon": 1.0,
            "dt_divisor": 50,
            "estimator": "closed-form",
            "initial": [[1.0]]
        }"#;
        let err = parse_config(text).unwrap_err();
        assert!(format!("{err:#}").contains("integer number of steps"), "{err:#}");
    }

    #[test]
    fn missing_seed_is_an_error() {
        let text = r#"{
            "experiment": "generator",
            "model": {"kind": "shift"},
            "phi": {"inner": [{"kind": "coordinate", "index": 0}], "outer": {"kind": "power", "exponent": 3}},
            "probe_measure": [[0.5], [-0.3]],
            "etas": [0.2, 0.1]
        }"#;
        let err = parse_config(text).unwrap_err();
        assert!(format!("{err:#}").contains("seed"), "{err:#}");
    }

    #[test]
    fn unknown_model_lists_alternatives() {
        let text = r#"{
            "experiment": "weak-error",
            "seed": 1,
            "model": {"kind": "transformer"},
            "phi": {"inner": [{"kind": "coordinate", "index": 0}], "outer": {"kind": "identity"}},
            "etas": [0.1],
            "horizon": 1.0,
            "dt_divisor": 50,
            "estimator": "closed-form",
            "initial": [[1.0]]
        }"#;
        let err = format!("{:#}", parse_config(text).unwrap_err());
        assert!(err.contains("shift"), "{err}");
        assert!(err.contains("scale"), "{err}");
        assert!(err.contains("polynomial"), "{err}");
    }

    #[test]
    fn small_dt_divisor_rejected() {
        let text = r#"{
            "experiment": "two-point",
            "seed": 3,
            "model": {"kind": "scale"},
            "eta": 0.1,
            "x": [1.0],
            "xbar": [-1.0],
            "window_steps": 4,
            "dt_divisor": 5,
            "replicates": 100,
            "methods": ["smf"]
        }"#;
        let err = format!("{:#}", parse_config(text).unwrap_err());
        assert!(err.contains("dt_divisor"), "{err}");
    }
}

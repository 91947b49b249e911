//! Experiment dispatch and machine-readable outputs.
//!
//! Every run writes `summary.json` plus `curve.csv` (sweep experiments) or
//! `trajectory.csv` (simulate) into the output directory. Outputs are pure
//! functions of (config, seed): reruns and different worker counts produce
//! byte-identical files.

use crate::config::{
    parse_config, EstimatorKind, ExperimentConfig, GeneratorConfig, MeanfieldConfig, MethodKind,
    Sign, SimulateConfig, SimulateMethod, TwoPointConfig, WeakErrorConfig,
};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use smflow::analysis::{
    closed_form_shift_curve, fit_order, meanfield_gap, monte_carlo_weak_error,
    one_step_generator_residual, smf_difference_quadratic_variation, two_point_covariation,
    CovariationEstimate, MeanFieldGapSpec, TwoPointSpec, WeakErrorSpec,
};
use smflow::integrators::{
    integrate_ddsmf, integrate_sme, integrate_smf, DriftOrder, FlowState,
};
use smflow::rng::{tags, RngStream};
use smflow::sgd_chain::{run_chain, run_interacting_chain, ChainState, GradientDescentKernel};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub workers: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Assertion {
    name: String,
    pass: bool,
    detail: String,
}

impl Assertion {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Assertion {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

/// One row of `curve.csv`. The schema is fixed:
/// `method,quantity,param,estimate,std_error,n`.
struct CurveRow {
    method: String,
    quantity: String,
    param: f64,
    estimate: f64,
    std_error: f64,
    n: usize,
}

fn write_curve(dir: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut text = String::from("method,quantity,param,estimate,std_error,n\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.quantity, r.param, r.estimate, r.std_error, r.n
        ));
    }
    fs::write(dir.join("curve.csv"), text).context("writing curve.csv")?;
    Ok(())
}

/// One row of `trajectory.csv`:
/// `run_id,method,step_or_time,particle,x0,...`.
struct TrajectoryRow {
    run_id: usize,
    method: &'static str,
    step_or_time: f64,
    particle: usize,
    coords: Vec<f64>,
}

fn write_trajectory(dir: &Path, dim: usize, rows: &[TrajectoryRow]) -> Result<()> {
    let mut header = String::from("run_id,method,step_or_time,particle");
    for j in 0..dim {
        header.push_str(&format!(",x{j}"));
    }
    header.push('\n');
    let mut text = header;
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}",
            r.run_id, r.method, r.step_or_time, r.particle
        ));
        for c in &r.coords {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    fs::write(dir.join("trajectory.csv"), text).context("writing trajectory.csv")?;
    Ok(())
}

fn write_summary(dir: &Path, summary: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text).context("writing summary.json")?;
    Ok(())
}

fn assertions_to_json(assertions: &[Assertion]) -> (bool, serde_json::Value) {
    let pass = assertions.iter().all(|a| a.pass);
    (pass, serde_json::to_value(assertions).expect("serializable"))
}

/// Loads, validates, and runs a config file. Returns whether all of the
/// config's assertions passed; output files are written either way.
pub fn run_file(expected_kind: &str, path: &Path, opts: &RunOptions) -> Result<bool> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config = parse_config(&text)?;
    if config.kind() != expected_kind {
        bail!(
            "config {} is a `{}` experiment, but the `{}` subcommand was invoked",
            path.display(),
            config.kind(),
            expected_kind
        );
    }
    if let Some(seed) = opts.seed_override {
        config.set_seed(seed);
    }
    fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating output directory {}", opts.out_dir.display()))?;

    let run = || run_config(&config, &opts.out_dir);
    if opts.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .context("building worker pool")?
            .install(run)
    }
}

fn run_config(config: &ExperimentConfig, out_dir: &Path) -> Result<bool> {
    match config {
        ExperimentConfig::WeakError(c) => run_weak_error(c, out_dir),
        ExperimentConfig::TwoPoint(c) => run_two_point(c, out_dir),
        ExperimentConfig::Generator(c) => run_generator(c, out_dir),
        ExperimentConfig::Meanfield(c) => run_meanfield(c, out_dir),
        ExperimentConfig::Simulate(c) => run_simulate(c, out_dir),
    }
}

fn drift_order(first_order: bool) -> DriftOrder {
    if first_order {
        DriftOrder::FirstOrder
    } else {
        DriftOrder::Modified
    }
}

fn run_weak_error(config: &WeakErrorConfig, out_dir: &Path) -> Result<bool> {
    let order = drift_order(config.first_order);
    let (curve, method_name) = match config.estimator {
        EstimatorKind::ClosedForm => (
            closed_form_shift_curve(&config.etas, config.horizon, config.initial[0][0], order)?,
            "closed-form",
        ),
        EstimatorKind::MonteCarlo => {
            let model = config.model.build()?;
            let phi = config.phi.build()?;
            let spec = WeakErrorSpec {
                model: model.as_ref(),
                phi: &phi,
                initial: config.initial.clone(),
                etas: config.etas.clone(),
                horizon: config.horizon,
                dt_divisor: config.dt_divisor,
                replicates: config.replicates,
                order,
                snr_floor: config.snr_floor,
            };
            (
                monte_carlo_weak_error(&spec, &RngStream::new(config.seed))?,
                "monte-carlo",
            )
        }
    };

    let fit = fit_order(&curve);
    let mut assertions = Vec::new();
    if let Some(band) = &config.expected_order {
        match &fit {
            Ok(f) => assertions.push(Assertion::new(
                "fitted order in band",
                f.slope >= band.min && f.slope <= band.max,
                format!("slope {:.4} in [{}, {}]", f.slope, band.min, band.max),
            )),
            Err(e) => assertions.push(Assertion::new(
                "fitted order in band",
                false,
                format!("order fit unavailable: {e}"),
            )),
        }
    }

    let rows: Vec<CurveRow> = curve
        .etas
        .iter()
        .zip(&curve.errors)
        .zip(&curve.std_errors)
        .map(|((eta, err), se)| CurveRow {
            method: method_name.to_string(),
            quantity: "weak_error".to_string(),
            param: *eta,
            estimate: *err,
            std_error: *se,
            n: config.replicates,
        })
        .collect();
    write_curve(out_dir, &rows)?;

    let (pass, assertions_json) = assertions_to_json(&assertions);
    let summary = json!({
        "experiment": "weak-error",
        "seed": config.seed,
        "method": method_name,
        "curve": serde_json::to_value(&curve)?,
        "fit": match &fit {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => json!({"unavailable": e.to_string()}),
        },
        "assertions": assertions_json,
        "pass": pass,
    });
    write_summary(out_dir, &summary)?;
    Ok(pass)
}

fn sign_flag(estimate: f64, se: f64) -> &'static str {
    if estimate + 5.0 * se < 0.0 {
        "negative"
    } else if estimate - 5.0 * se > 0.0 {
        "positive"
    } else {
        "indeterminate"
    }
}

fn run_two_point(config: &TwoPointConfig, out_dir: &Path) -> Result<bool> {
    let model = config.model.build()?;
    let spec = TwoPointSpec {
        model: model.as_ref(),
        x: config.x.clone(),
        xbar: config.xbar.clone(),
        eta: config.eta,
        window_steps: config.window_steps,
        dt_divisor: config.dt_divisor,
        replicates: config.replicates,
    };
    let root = RngStream::new(config.seed);
    let d = config.x.len();

    let mut estimates: Vec<(MethodKind, CovariationEstimate)> = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        let est = two_point_covariation(method.to_method(), &spec, &root.child(mi as u64))?;
        estimates.push((*method, est));
    }
    let qv = if config.difference_qv_zero {
        Some(smf_difference_quadratic_variation(
            &spec,
            &root.child(0xD1FF),
        )?)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut flags = serde_json::Map::new();
    for (_, est) in &estimates {
        let name = est.method.name();
        flags.insert(
            name.to_string(),
            json!(sign_flag(est.rate[0], est.std_errors[0])),
        );
        for i in 0..d {
            for j in 0..d {
                rows.push(CurveRow {
                    method: name.to_string(),
                    quantity: format!("covariation_rate_{i}_{j}"),
                    param: config.eta,
                    estimate: est.rate[i * d + j],
                    std_error: est.std_errors[i * d + j],
                    n: est.replicates,
                });
            }
        }
    }
    if let Some(qv) = &qv {
        for i in 0..d {
            for j in 0..d {
                rows.push(CurveRow {
                    method: "smf-difference".to_string(),
                    quantity: format!("quadratic_variation_rate_{i}_{j}"),
                    param: config.eta,
                    estimate: qv.rate[i * d + j],
                    std_error: qv.std_errors[i * d + j],
                    n: qv.replicates,
                });
            }
        }
    }
    write_curve(out_dir, &rows)?;

    let mut assertions = Vec::new();
    for expectation in &config.expected_signs {
        let est = estimates
            .iter()
            .find(|(m, _)| *m == expectation.method)
            .map(|(_, e)| e)
            .expect("validated");
        let expected = match expectation.sign {
            Sign::Negative => "negative",
            Sign::Positive => "positive",
        };
        let actual = sign_flag(est.rate[0], est.std_errors[0]);
        assertions.push(Assertion::new(
            &format!("{} covariation sign", est.method.name()),
            actual == expected,
            format!(
                "estimate {} +- {} classified {actual}, expected {expected}",
                est.rate[0], est.std_errors[0]
            ),
        ));
    }
    if let Some(qv) = &qv {
        let pass = qv.rate[0] <= 5.0 * qv.std_errors[0] + 1e-18;
        assertions.push(Assertion::new(
            "difference quadratic variation is zero",
            pass,
            format!("rate {} +- {}", qv.rate[0], qv.std_errors[0]),
        ));
    }

    let (pass, assertions_json) = assertions_to_json(&assertions);
    let summary = json!({
        "experiment": "two-point",
        "seed": config.seed,
        "eta": config.eta,
        "estimates": estimates
            .iter()
            .map(|(_, e)| serde_json::to_value(e))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        "difference_qv": match &qv {
            Some(q) => serde_json::to_value(q)?,
            None => serde_json::Value::Null,
        },
        "sign_flags": serde_json::Value::Object(flags),
        "assertions": assertions_json,
        "pass": pass,
    });
    write_summary(out_dir, &summary)?;
    Ok(pass)
}

fn run_generator(config: &GeneratorConfig, out_dir: &Path) -> Result<bool> {
    let phi = config.phi.build()?;
    let mu = smflow::EmpiricalMeasure::new(config.probe_measure.clone())?;

    // Hold whichever system the config names; both expose the kernel trait.
    let model;
    let plain_kernel;
    let network;
    let kernel: &dyn smflow::MeasureKernel = if let Some(mc) = &config.model {
        model = mc.build()?;
        plain_kernel = GradientDescentKernel::new(model.as_ref());
        &plain_kernel
    } else {
        network = config.network.as_ref().expect("validated").build()?;
        &network
    };

    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    let mut expansions = Vec::new();
    for &eta in &config.etas {
        let out = one_step_generator_residual(kernel, &phi, &mu, eta)?;
        residuals.push(out.residual.abs());
        rows.push(CurveRow {
            method: "generator".to_string(),
            quantity: "residual".to_string(),
            param: eta,
            estimate: out.residual.abs(),
            std_error: 0.0,
            n: 0,
        });
        expansions.push(serde_json::to_value(out)?);
    }
    write_curve(out_dir, &rows)?;

    let curve = smflow::analysis::WeakErrorCurve::new(
        "generator",
        config.etas.clone(),
        residuals.clone(),
        vec![0.0; config.etas.len()],
        0.0,
    )?;
    let fit = fit_order(&curve);

    let mut assertions = Vec::new();
    if let Some(min_slope) = config.min_slope {
        match &fit {
            Ok(f) => assertions.push(Assertion::new(
                "residual decay order",
                f.slope >= min_slope,
                format!("slope {:.4} >= {min_slope}", f.slope),
            )),
            Err(e) => assertions.push(Assertion::new(
                "residual decay order",
                false,
                format!("order fit unavailable: {e}"),
            )),
        }
    }

    let (pass, assertions_json) = assertions_to_json(&assertions);
    let summary = json!({
        "experiment": "generator",
        "seed": config.seed,
        "etas": config.etas,
        "expansions": expansions,
        "fit": match &fit {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => json!({"unavailable": e.to_string()}),
        },
        "assertions": assertions_json,
        "pass": pass,
    });
    write_summary(out_dir, &summary)?;
    Ok(pass)
}

fn run_meanfield(config: &MeanfieldConfig, out_dir: &Path) -> Result<bool> {
    let network = config.network.build()?;
    let spec = MeanFieldGapSpec {
        kernel: &network,
        m_values: config.m_values.clone(),
        m_ref: config.m_ref,
        eta: config.eta,
        horizon: config.horizon,
        dt_divisor: config.dt_divisor,
        seeds: config.seeds,
        subsamples: config.subsamples,
        sampler: config.init.build(),
    };
    let report = meanfield_gap(&spec, &RngStream::new(config.seed))?;

    let rows: Vec<CurveRow> = report
        .m_values
        .iter()
        .zip(&report.medians)
        .map(|(m, median)| CurveRow {
            method: "ddsmf-gap".to_string(),
            quantity: "w2_median".to_string(),
            param: *m as f64,
            estimate: *median,
            std_error: 0.0,
            n: config.seeds,
        })
        .collect();
    write_curve(out_dir, &rows)?;

    let mut assertions = Vec::new();
    if config.expect_decreasing {
        assertions.push(Assertion::new(
            "median gap strictly decreasing in M",
            report.strictly_decreasing,
            format!("medians {:?}", report.medians),
        ));
    }
    let (pass, assertions_json) = assertions_to_json(&assertions);
    let summary = json!({
        "experiment": "meanfield",
        "seed": config.seed,
        "report": serde_json::to_value(&report)?,
        "assertions": assertions_json,
        "pass": pass,
    });
    write_summary(out_dir, &summary)?;
    Ok(pass)
}

fn run_simulate(config: &SimulateConfig, out_dir: &Path) -> Result<bool> {
    let method = config.method;
    let order = drift_order(config.first_order);
    let root = RngStream::new(config.seed).child(tags::REPLICATE);
    let dim = config.initial[0].len();
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut final_risk: Option<f64> = None;

    if method.needs_network() {
        let network = config.network.as_ref().expect("validated").build()?;
        let mut risks = Vec::new();
        for rep in 0..config.replicates {
            let stream = root.child(rep as u64);
            let ensembles: Vec<(f64, Vec<Vec<f64>>)> = match method {
                SimulateMethod::InteractingSgd => {
                    let n_steps = (config.horizon / config.eta).round() as usize;
                    let checkpoints = checkpoint_steps(&config.checkpoints, config.eta)?;
                    let state = ChainState::new(config.initial.clone(), config.eta)?;
                    run_interacting_chain(&network, &state, n_steps, &stream, &checkpoints)?
                        .into_iter()
                        .map(|s| (s.step_index() as f64, s.positions().to_vec()))
                        .collect()
                }
                SimulateMethod::Ddsmf => {
                    let dt = config.eta / config.dt_divisor.expect("validated") as f64;
                    let state = FlowState::new(config.initial.clone(), config.eta, dt)?;
                    integrate_ddsmf(
                        &network,
                        &state,
                        config.horizon,
                        &stream,
                        &config.checkpoints,
                        order,
                    )?
                    .into_iter()
                    .map(|s| (s.time(), s.positions().to_vec()))
                    .collect()
                }
                _ => unreachable!("validated"),
            };
            if let Some((_, last)) = ensembles.last() {
                risks.push(network.risk(last));
            }
            push_rows(&mut rows, rep, method.name(), &ensembles);
        }
        if !risks.is_empty() {
            final_risk = Some(risks.iter().sum::<f64>() / risks.len() as f64);
        }
    } else {
        let model = config.model.as_ref().expect("validated").build()?;
        for rep in 0..config.replicates {
            let stream = root.child(rep as u64);
            let ensembles: Vec<(f64, Vec<Vec<f64>>)> = match method {
                SimulateMethod::Sgd => {
                    let n_steps = (config.horizon / config.eta).round() as usize;
                    let checkpoints = checkpoint_steps(&config.checkpoints, config.eta)?;
                    let state = ChainState::new(config.initial.clone(), config.eta)?;
                    run_chain(model.as_ref(), &state, n_steps, &stream, &checkpoints)?
                        .into_iter()
                        .map(|s| (s.step_index() as f64, s.positions().to_vec()))
                        .collect()
                }
                SimulateMethod::Smf | SimulateMethod::Sme => {
                    let dt = config.eta / config.dt_divisor.expect("validated") as f64;
                    let state = FlowState::new(config.initial.clone(), config.eta, dt)?;
                    let states = if matches!(method, SimulateMethod::Smf) {
                        integrate_smf(
                            model.as_ref(),
                            &state,
                            config.horizon,
                            &stream,
                            &config.checkpoints,
                            order,
                        )?
                    } else {
                        integrate_sme(
                            model.as_ref(),
                            &state,
                            config.horizon,
                            &stream,
                            &config.checkpoints,
                            order,
                        )?
                    };
                    states
                        .into_iter()
                        .map(|s| (s.time(), s.positions().to_vec()))
                        .collect()
                }
                _ => unreachable!("validated"),
            };
            push_rows(&mut rows, rep, method.name(), &ensembles);
        }
    }

    write_trajectory(out_dir, dim, &rows)?;
    let summary = json!({
        "experiment": "simulate",
        "seed": config.seed,
        "method": method.name(),
        "replicates": config.replicates,
        "checkpoints": config.checkpoints,
        "particles": config.initial.len(),
        "mean_final_risk": final_risk,
        "assertions": [],
        "pass": true,
    });
    write_summary(out_dir, &summary)?;
    Ok(true)
}

fn checkpoint_steps(times: &[f64], eta: f64) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            let ratio = t / eta;
            let n = ratio.round();
            if (ratio - n).abs() > f64::EPSILON * ratio.abs().max(1.0) {
                bail!("checkpoint {t} is not an integer number of chain steps of size {eta}");
            }
            Ok(n as usize)
        })
        .collect()
}

fn push_rows(
    rows: &mut Vec<TrajectoryRow>,
    rep: usize,
    method: &'static str,
    ensembles: &[(f64, Vec<Vec<f64>>)],
) {
    for (stamp, positions) in ensembles {
        for (pi, coords) in positions.iter().enumerate() {
            rows.push(TrajectoryRow {
                run_id: rep,
                method,
                step_or_time: *stamp,
                particle: pi,
                coords: coords.clone(),
            });
        }
    }
}

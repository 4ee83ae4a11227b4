//! Runs a resolved scenario and assembles its report.

use std::time::{Duration, Instant};

use bohmlab_core::equilibrium::{wilson_interval, Binning, CellDensity, RateEstimate};
use bohmlab_core::experiments::{
    run_absolute_uncertainty, run_double_slit, run_free_gaussian, run_packet_exchange, NamedHistogram, HISTOGRAM_TAIL,
};
use bohmlab_core::guidance::{Configuration, TrajectoryEnsemble};
use bohmlab_core::measurement::{repeat_measurement, run_stage1, run_stage2_camera, MeasurementScenario};
use bohmlab_core::propagator::HamiltonianSpec;
use bohmlab_core::report::Check;
use bohmlab_core::{Axis, Error, GridField, GridSpec, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{Experiment, ScenarioSpec, SCHEMA_VERSION};

pub struct RunOutput {
    pub report: Value,
    pub passed: bool,
    pub ensemble: TrajectoryEnsemble,
    pub histograms: Vec<NamedHistogram>,
    pub field: Option<GridField>,
    /// Axis drawn against time in trajectory plots.
    pub fan_axis: usize,
    pub elapsed: Duration,
}

struct Raw {
    results: Value,
    checks: Vec<Check>,
    ensemble: TrajectoryEnsemble,
    histograms: Vec<NamedHistogram>,
    field: Option<GridField>,
    grid: Vec<Axis>,
    dt: Option<f64>,
    fan_axis: usize,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report is serializable")
}

fn half_stable_dt(axes: &[Axis], masses: &[f64], dt: Option<f64>) -> Result<f64> {
    match dt {
        Some(dt) => Ok(dt),
        None => {
            let grid = GridSpec::periodic(axes.to_vec())?;
            Ok(0.5 * HamiltonianSpec::free(masses[..axes.len()].to_vec()).max_stable_dt(&grid)?)
        }
    }
}

fn line_configs(xs: &[Configuration], axis: usize) -> Vec<Configuration> {
    xs.iter().map(|x| Configuration::new(&[x.get(axis)])).collect()
}

/// Empirical histogram of one coordinate on `bins` equal bins of its axis.
fn axis_histogram(name: &str, ens: &TrajectoryEnsemble, axis: usize, grid_axis: Axis, bins: usize) -> Result<NamedHistogram> {
    let grid = GridSpec::periodic(vec![grid_axis])?;
    let binning = Binning::new(&grid, &[0], &[bins.clamp(1, grid_axis.points)])?;
    let values = binning.empirical(&line_configs(&ens.finals(), axis));
    Ok(NamedHistogram {
        name: name.to_string(),
        histogram: binning.histogram(values),
    })
}

fn measurement_axes(s: &MeasurementScenario, dims: usize) -> Vec<Axis> {
    let mut axes = vec![s.system, s.pointer];
    if dims == 3 {
        axes.extend(s.camera);
    }
    axes
}

fn execute_raw(spec: &ScenarioSpec) -> Result<Raw> {
    let ens = &spec.ensemble;
    let sqrt_n = (ens.trajectories as f64).sqrt().round() as usize;
    Ok(match &spec.experiment {
        Experiment::PointerReadout(s) => {
            let out = run_stage1(s, ens)?;
            let d = CellDensity::from_field(&out.field)?.marginal(&[1])?;
            let binning = Binning::covering(&d, sqrt_n, HISTOGRAM_TAIL)?;
            let finals = line_configs(&out.ensemble.finals(), 1);
            let histograms = vec![
                NamedHistogram {
                    name: "pointer-empirical".into(),
                    histogram: binning.histogram(binning.empirical(&finals)),
                },
                NamedHistogram {
                    name: "pointer-quadrature".into(),
                    histogram: binning.histogram(binning.quadrature(&d)?),
                },
            ];
            let axes = measurement_axes(s, 2);
            Raw {
                results: to_value(&out.report),
                checks: out.report.checks.clone(),
                dt: Some(half_stable_dt(&axes, &s.masses, s.dt)?),
                grid: axes,
                ensemble: out.ensemble,
                histograms,
                field: Some(out.field),
                fan_axis: 1,
            }
        }
        Experiment::Camera(s) | Experiment::RepeatMeasurement(s) => {
            let camera = s.camera.ok_or_else(|| Error::Schema("`camera` axis is required".into()))?;
            let (results, checks, ensemble) = if matches!(spec.experiment, Experiment::Camera(_)) {
                let out = run_stage2_camera(s, ens)?;
                (to_value(&out.report), out.report.checks, out.ensemble)
            } else {
                let out = repeat_measurement(s, ens)?;
                (to_value(&out.report), out.report.checks, out.ensemble)
            };
            let histograms = vec![
                axis_histogram("pointer-empirical", &ensemble, 1, s.pointer, sqrt_n)?,
                axis_histogram("second-axis-empirical", &ensemble, 2, camera, sqrt_n)?,
            ];
            let axes = measurement_axes(s, 3);
            Raw {
                results,
                checks,
                dt: Some(half_stable_dt(&axes, &s.masses, s.dt)?),
                grid: axes,
                ensemble,
                histograms,
                field: None,
                fan_axis: 1,
            }
        }
        Experiment::DoubleSlit(p) => {
            let out = run_double_slit(p, ens)?;
            Raw {
                results: to_value(&out.report),
                checks: out.report.checks,
                ensemble: out.ensemble,
                histograms: out.histograms,
                field: out.field,
                grid: vec![p.axis],
                dt: Some(half_stable_dt(&[p.axis], &[p.mass], p.dt)?),
                fan_axis: 0,
            }
        }
        Experiment::PacketExchange(p) => {
            let out = run_packet_exchange(p, ens)?;
            let mut grid = vec![p.axis];
            grid.extend(p.transverse_offset.map(|_| p.transverse_axis));
            let masses = vec![p.mass; grid.len()];
            Raw {
                results: to_value(&out.report),
                checks: out.report.checks,
                histograms: vec![axis_histogram("final-x-empirical", &out.ensemble, 0, p.axis, sqrt_n)?],
                ensemble: out.ensemble,
                field: out.field,
                dt: Some(half_stable_dt(&grid, &masses, p.dt)?),
                grid,
                fan_axis: 0,
            }
        }
        Experiment::AbsoluteUncertainty(p) => {
            let out = run_absolute_uncertainty(p, ens)?;
            Raw {
                results: to_value(&out.report),
                checks: out.report.checks,
                ensemble: out.ensemble,
                histograms: out.histograms,
                field: out.field,
                grid: vec![p.system, p.pointer],
                dt: None,
                fan_axis: 1,
            }
        }
        Experiment::FreeGaussian(p) => {
            let out = run_free_gaussian(p, ens)?;
            Raw {
                results: to_value(&out.report),
                checks: out.report.checks,
                ensemble: out.ensemble,
                histograms: out.histograms,
                field: out.field,
                grid: vec![p.axis],
                dt: Some(half_stable_dt(&[p.axis], &[p.mass], p.dt)?),
                fan_axis: 0,
            }
        }
    })
}

/// One verdict per acceptance predicate; every predicate must match exactly
/// one check.
pub fn acceptance_verdicts(predicates: &[String], checks: &[Check]) -> Result<Vec<(String, bool)>> {
    let names: Vec<String> = if predicates.is_empty() {
        checks.iter().map(|c| c.name.clone()).collect()
    } else {
        predicates.to_vec()
    };
    names
        .into_iter()
        .map(|p| {
            let hits: Vec<&Check> = checks.iter().filter(|c| c.name == p).collect();
            match hits.as_slice() {
                [c] => Ok((p, c.passed)),
                _ => Err(Error::Config(format!(
                    "acceptance predicate `{p}` has {} verdicts in the report (expected exactly one)",
                    hits.len()
                ))),
            }
        })
        .collect()
}

pub fn execute(spec: &ScenarioSpec) -> Result<RunOutput> {
    let started = Instant::now();
    let raw = execute_raw(spec)?;
    let verdicts = acceptance_verdicts(&spec.acceptance, &raw.checks)?;
    let passed = verdicts.iter().all(|(_, ok)| *ok);
    let ens = &raw.ensemble;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": spec.to_json(),
        "verdict": if passed { "pass" } else { "fail" },
        "acceptance": verdicts
            .iter()
            .map(|(p, ok)| json!({ "predicate": p, "verdict": if *ok { "pass" } else { "fail" } }))
            .collect::<Vec<_>>(),
        "checks": raw.checks,
        "results": raw.results,
        "diagnostics": {
            "grid": raw.grid,
            "dt": raw.dt,
            "trajectories": ens.len(),
            "samples_per_trajectory": ens.times.len(),
            "node_events": ens.node_event_count(),
            "absorbed": ens.absorbed_count(),
        },
    });
    Ok(RunOutput {
        report,
        passed,
        ensemble: raw.ensemble,
        histograms: raw.histograms,
        field: raw.field,
        fan_axis: raw.fan_axis,
        elapsed: started.elapsed(),
    })
}

/// Summary statistics recomputed from stored final positions.
#[derive(Debug, Clone, Serialize)]
pub struct AxisSummary {
    pub axis: usize,
    pub mean: f64,
    pub std: f64,
    pub below_zero: RateEstimate,
}

pub fn summarize_finals(finals: &[Vec<f64>]) -> Vec<AxisSummary> {
    let n = finals.len();
    let dims = finals.first().map_or(0, Vec::len);
    (0..dims)
        .map(|a| {
            let mean = finals.iter().map(|x| x[a]).sum::<f64>() / n as f64;
            let var = finals.iter().map(|x| (x[a] - mean).powi(2)).sum::<f64>() / n as f64;
            let below = finals.iter().filter(|x| x[a] < 0.0).count();
            AxisSummary {
                axis: a,
                mean,
                std: var.sqrt(),
                below_zero: wilson_interval(below, n),
            }
        })
        .collect()
}

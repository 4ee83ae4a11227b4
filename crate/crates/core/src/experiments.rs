//! Preset experiments on trajectories: two-slit which-side inference, packet
//! exchange, the absolute-uncertainty demonstration and the free Gaussian.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    check_equivariance, ks_critical_1pct, ks_statistic, sample_initial, sample_separable, total_variation, wilson_interval,
    Binning, CellDensity, EnsembleSpec, EquivarianceReport, Histogram, RateEstimate,
};
use crate::error::{Error, Result};
use crate::evolution::{run_protocol, DenseEvolution, Integrator, Protocol, SeparableEvolution};
use crate::field::{gaussian_packet, GridField};
use crate::grid::{Axis, Boundary, GridSpec};
use crate::guidance::{check_no_crossing, Configuration, EnsembleIntegrator, GuidingWave, TrajectoryEnsemble};
use crate::propagator::{CouplingSchedule, HamiltonianSpec, PointerObservable};
use crate::report::Check;
use crate::separable::SeparableField;

/// Mass left outside adaptive histogram ranges on each side.
pub const HISTOGRAM_TAIL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub name: String,
    pub histogram: Histogram,
}

/// Output of any preset: its report plus the raw trajectories.
pub struct Outcome<R> {
    pub report: R,
    pub ensemble: TrajectoryEnsemble,
    pub histograms: Vec<NamedHistogram>,
    pub field: Option<GridField>,
}

struct DenseRun {
    ensemble: TrajectoryEnsemble,
    densities: Vec<(f64, CellDensity)>,
    field: GridField,
}

/// Evolves a dense field with an ensemble, keeping the cell density of every
/// snapshot whose time is also a trajectory sample time.
fn run_dense(
    f0: GridField,
    h: HamiltonianSpec,
    protocol: &Protocol,
    ens: &EnsembleSpec,
    keep_densities: bool,
) -> Result<DenseRun> {
    let starts = sample_initial(&f0, ens)?;
    let grid = f0.spec().clone();
    let mut integ = EnsembleIntegrator::new(&grid, &h.masses, &starts, ens.seeds())?;
    let mut evo = DenseEvolution::new(f0, h, protocol.dt, Integrator::SplitOperator)?;
    let mut all = Vec::new();
    run_protocol(&mut evo, protocol, Some(&mut integ), |w| {
        if keep_densities {
            all.push((w.time(), CellDensity::from_field(w.field())?));
        }
        Ok(())
    })?;
    let ensemble = integ.finish();
    let densities = all
        .into_iter()
        .filter(|(t, _)| ensemble.times.iter().any(|s| (s - t).abs() < 1e-12))
        .collect();
    Ok(DenseRun {
        ensemble,
        densities,
        field: evo.into_field(),
    })
}

fn record_interval(steps: usize, stride: usize, records: usize) -> usize {
    (steps.div_ceil(stride) / records.max(1)).max(1)
}

/// Equivariance at `samples` evenly spaced recorded times after `t = 0`,
/// each with adaptive bins over the support of `|psi_t|^2`.
fn equivariance_series(run: &DenseRun, ens: &EnsembleSpec, samples: usize) -> Result<(EquivarianceReport, Vec<EquivarianceReport>)> {
    let k_max = run.densities.len() - 1;
    let bins = ens.bins_per_axis(run.densities[0].1.grid(), &[0])[0];
    let at = |k: usize| -> Result<EquivarianceReport> {
        let (t, d) = &run.densities[k];
        let binning = Binning::covering(d, bins, HISTOGRAM_TAIL)?;
        check_equivariance(&run.ensemble.at(k), d, &binning, *t)
    };
    let baseline = at(0)?;
    let series = (1..=samples)
        .map(|j| at((j * k_max).div_ceil(samples).min(k_max)))
        .collect::<Result<Vec<_>>>()?;
    Ok((baseline, series))
}

fn equivariance_checks(baseline: &EquivarianceReport, series: &[EquivarianceReport]) -> Vec<Check> {
    series
        .iter()
        .map(|r| {
            Check::below(
                &format!("equivariance-tv-t{:.3}", r.time),
                r.total_variation,
                3.0 * baseline.total_variation,
            )
        })
        .collect()
}

/// Largest depth of an interior minimum below the smaller of the highest
/// bins on either side, in units of the Poisson noise of that level.
pub fn minimum_significance(counts: &[f64]) -> f64 {
    let n = counts.len();
    if n < 3 {
        return 0.0;
    }
    let mut left_max = vec![0.0; n];
    let mut right_max = vec![0.0; n];
    for i in 1..n {
        left_max[i] = f64::max(left_max[i - 1], counts[i - 1]);
    }
    for i in (0..n - 1).rev() {
        right_max[i] = f64::max(right_max[i + 1], counts[i + 1]);
    }
    (1..n - 1)
        .map(|i| {
            let level = left_max[i].min(right_max[i]);
            if level > counts[i] {
                (level - counts[i]) / level.sqrt()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Number of strict interior local minima of an exact (noise-free) profile.
pub fn interior_minima(values: &[f64]) -> usize {
    let rel = 1e-12 * values.iter().cloned().fold(0.0, f64::max);
    values
        .windows(3)
        .filter(|w| w[1] + rel < w[0] && w[1] + rel < w[2])
        .count()
}

fn side(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// Trajectories whose side of `x_axis = 0` changes at any recorded sample.
fn side_changes(ens: &TrajectoryEnsemble, axis: usize) -> usize {
    ens.trajectories
        .par_iter()
        .filter(|t| {
            let s0 = side(t.initial().get(axis));
            t.samples.iter().any(|x| side(x.get(axis)) != s0)
        })
        .count()
}

// ---------------------------------------------------------------- double slit

fn default_slit_axis() -> Axis {
    Axis::symmetric(40.0, 1024).expect("valid axis")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubleSlitParams {
    /// Transverse axis (the slit plane is `t = 0`).
    pub axis: Axis,
    /// Slit centers sit at `-half_separation` and `+half_separation`.
    pub half_separation: f64,
    /// Standard deviation of `|psi|^2` of each slit mode.
    pub slit_sigma: f64,
    /// Amplitudes of the lower and upper slit modes.
    pub amplitudes: [f64; 2],
    pub screen_time: f64,
    /// Keep only the upper slit (control run).
    pub single_slit: bool,
    pub mass: f64,
    pub dt: Option<f64>,
    pub snapshot_stride: usize,
    /// Times after `t = 0` at which equivariance is checked.
    pub sample_times: usize,
}

impl Default for DoubleSlitParams {
    fn default() -> Self {
        DoubleSlitParams {
            axis: default_slit_axis(),
            half_separation: 3.0,
            slit_sigma: 0.3,
            amplitudes: [1.0, 1.0],
            screen_time: 4.0,
            single_slit: false,
            mass: 1.0,
            dt: None,
            snapshot_stride: 10,
            sample_times: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleSlitReport {
    pub trajectories: usize,
    pub single_slit: bool,
    pub screen_time: f64,
    /// `(initial side, final side)` per trajectory, `-1` below the axis.
    pub sides: Vec<[i8; 2]>,
    pub side_flips: usize,
    pub axis_crossings: usize,
    pub order_violations: usize,
    pub minimum_significance: f64,
    pub quadrature_minima: usize,
    pub symmetry_chi_square: Option<f64>,
    pub symmetry_p_value: Option<f64>,
    pub baseline: EquivarianceReport,
    pub equivariance: Vec<EquivarianceReport>,
    pub screen_chi_square_p: f64,
    pub node_events: usize,
    pub absorbed: usize,
    pub checks: Vec<Check>,
}

fn mirror_symmetry(xs: &[Configuration], half_width: f64, bins: usize) -> (f64, f64) {
    let mut counts = vec![0.0f64; bins];
    for x in xs {
        let u = (x.get(0) + half_width) / (2.0 * half_width);
        if (0.0..1.0).contains(&u) {
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
    }
    let mut stat = 0.0;
    let mut dof = 0usize;
    for i in 0..bins / 2 {
        let (a, b) = (counts[i], counts[bins - 1 - i]);
        if a + b > 0.0 {
            stat += (a - b).powi(2) / (a + b);
            dof += 1;
        }
    }
    let p = statrs::distribution::ChiSquared::new(dof.max(1) as f64)
        .map(|d| 1.0 - statrs::distribution::ContinuousCDF::cdf(&d, stat))
        .unwrap_or(f64::NAN);
    (stat, p)
}

pub fn run_double_slit(p: &DoubleSlitParams, ens: &EnsembleSpec) -> Result<Outcome<DoubleSlitReport>> {
    ens.validate()?;
    p.axis.validate()?;
    if !p.single_slit {
        let symmetric_axis = (p.axis.min + p.axis.max).abs() < 1e-12;
        if !symmetric_axis || p.amplitudes[0] != p.amplitudes[1] {
            return Err(Error::PresetViolation(
                "two-slit preset needs equal slit amplitudes on an axis symmetric about zero".into(),
            ));
        }
    }
    if !(p.half_separation > 0.0 && p.slit_sigma > 0.0 && p.screen_time > 0.0) {
        return Err(Error::PresetViolation("slit geometry and screen time must be positive".into()));
    }
    let lower = gaussian_packet(p.axis, -p.half_separation, p.slit_sigma, 0.0)?;
    let upper = gaussian_packet(p.axis, p.half_separation, p.slit_sigma, 0.0)?;
    let f0 = if p.single_slit {
        upper
    } else {
        lower.combine(C64::new(p.amplitudes[0], 0.0), &upper, C64::new(p.amplitudes[1], 0.0))?
    }
    .normalized()?;
    let grid = f0.spec().clone();
    let h = HamiltonianSpec::free(vec![p.mass]);
    let dt = p.dt.map_or_else(|| h.max_stable_dt(&grid).map(|l| 0.5 * l), Ok)?;
    let steps = (p.screen_time / dt).ceil() as usize;
    let protocol = Protocol::free(dt, p.screen_time, p.snapshot_stride)
        .recording_every(record_interval(steps, p.snapshot_stride, 40));
    let run = run_dense(f0, h, &protocol, ens, true)?;

    let ensemble = &run.ensemble;
    let finals = ensemble.finals();
    let sides: Vec<[i8; 2]> = ensemble
        .trajectories
        .iter()
        .map(|t| [side(t.initial().get(0)), side(t.last().get(0))])
        .collect();
    let side_flips = sides.iter().filter(|s| s[0] != s[1]).count();
    let axis_crossings = side_changes(ensemble, 0);
    let crossing = check_no_crossing(ensemble, 0, p.axis.dx());

    let (t_screen, d_screen) = run.densities.last().expect("screen density");
    let bins = ens.bins_per_axis(&grid, &[0])[0];
    let screen_bins = Binning::covering(d_screen, bins, HISTOGRAM_TAIL)?;
    let emp = screen_bins.empirical(&finals);
    let quad = screen_bins.quadrature(d_screen)?;
    let counts: Vec<f64> = emp.iter().map(|v| v * finals.len() as f64).collect();
    let minimum_significance = minimum_significance(&counts);
    let quadrature_minima = interior_minima(&quad);
    let (baseline, equivariance) = equivariance_series(&run, ens, p.sample_times)?;
    let screen = check_equivariance(&finals, d_screen, &screen_bins, *t_screen)?;

    let mut checks = equivariance_checks(&baseline, &equivariance);
    checks.push(Check::at_least("screen-chi-square-p", screen.chi_square.p_value, 0.01));
    checks.push(Check::equals("order-violations", crossing.violations.len() as f64, 0.0));
    let (mut symmetry_chi_square, mut symmetry_p_value) = (None, None);
    if p.single_slit {
        checks.push(Check::equals("single-slit-quadrature-minima", quadrature_minima as f64, 0.0));
        checks.push(Check::below("single-slit-minimum-significance", minimum_significance, 10.0));
    } else {
        let edges = &screen_bins.edges()[0];
        let half = edges[0].abs().max(edges[edges.len() - 1].abs());
        let (stat, pv) = mirror_symmetry(&finals, half, bins);
        symmetry_chi_square = Some(stat);
        symmetry_p_value = Some(pv);
        checks.push(Check::equals("side-flips", side_flips as f64, 0.0));
        checks.push(Check::equals("axis-crossings", axis_crossings as f64, 0.0));
        checks.push(Check::at_least("interference-minimum-significance", minimum_significance, 10.0));
        checks.push(Check::at_least("mirror-symmetry-p", pv, 0.01));
    }
    let histograms = vec![
        NamedHistogram {
            name: "screen-empirical".into(),
            histogram: screen_bins.histogram(emp),
        },
        NamedHistogram {
            name: "screen-quadrature".into(),
            histogram: screen_bins.histogram(quad),
        },
    ];
    let report = DoubleSlitReport {
        trajectories: finals.len(),
        single_slit: p.single_slit,
        screen_time: *t_screen,
        sides,
        side_flips,
        axis_crossings,
        order_violations: crossing.violations.len(),
        minimum_significance,
        quadrature_minima,
        symmetry_chi_square,
        symmetry_p_value,
        baseline,
        equivariance,
        screen_chi_square_p: screen.chi_square.p_value,
        node_events: ensemble.node_event_count(),
        absorbed: ensemble.absorbed_count(),
        checks,
    };
    Ok(Outcome {
        report,
        ensemble: run.ensemble,
        histograms,
        field: Some(run.field),
    })
}

// ------------------------------------------------------------ packet exchange

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketExchangeParams {
    pub axis: Axis,
    /// Packets start at `-offset` (moving right) and `+offset` (moving left).
    pub offset: f64,
    pub momentum: f64,
    pub sigma: f64,
    pub end_time: f64,
    /// Separate the packets along a second axis so they pass each other.
    pub transverse_offset: Option<f64>,
    pub transverse_axis: Axis,
    pub mass: f64,
    pub dt: Option<f64>,
    pub snapshot_stride: usize,
}

impl Default for PacketExchangeParams {
    fn default() -> Self {
        PacketExchangeParams {
            axis: Axis::symmetric(20.0, 512).expect("valid axis"),
            offset: 6.0,
            momentum: 3.0,
            sigma: 1.0,
            end_time: 4.0,
            transverse_offset: None,
            transverse_axis: Axis::symmetric(20.0, 256).expect("valid axis"),
            mass: 1.0,
            dt: None,
            snapshot_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketExchangeReport {
    pub trajectories: usize,
    pub meeting_time: f64,
    pub initial_overlap: f64,
    /// Trajectories whose side of the plane `x = 0` ever changes.
    pub plane_crossings: usize,
    /// Fraction of trajectories whose start side differs from that of the
    /// packet which, evolved alone, dominates at the final position.
    pub attribution_mismatch: RateEstimate,
    pub order_violations: Option<usize>,
    pub checks: Vec<Check>,
}

pub fn run_packet_exchange(p: &PacketExchangeParams, ens: &EnsembleSpec) -> Result<Outcome<PacketExchangeReport>> {
    ens.validate()?;
    let a = gaussian_packet(p.axis, -p.offset, p.sigma, p.momentum)?;
    let b = gaussian_packet(p.axis, p.offset, p.sigma, -p.momentum)?;
    let overlap = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x.norm() * y.norm()).sum::<f64>()
        * p.axis.dx();
    if overlap > 1e-6 {
        return Err(Error::PresetViolation(format!(
            "packets overlap by {overlap:.3e} at t = 0 (limit 1e-6)"
        )));
    }
    if (p.axis.min + p.axis.max).abs() > 1e-12 || !(p.momentum > 0.0) {
        return Err(Error::PresetViolation(
            "packets must approach each other on an axis symmetric about zero".into(),
        ));
    }
    let meeting_time = p.offset * p.mass / p.momentum;
    let (ensemble, order_violations) = match p.transverse_offset {
        None => {
            let f0 = a.combine(C64::new(1.0, 0.0), &b, C64::new(1.0, 0.0))?.normalized()?;
            let h = HamiltonianSpec::free(vec![p.mass]);
            let dt = p.dt.map_or_else(|| h.max_stable_dt(f0.spec()).map(|l| 0.5 * l), Ok)?;
            let steps = (p.end_time / dt).ceil() as usize;
            let protocol = Protocol::free(dt, p.end_time, p.snapshot_stride)
                .recording_every(record_interval(steps, p.snapshot_stride, 40));
            let run = run_dense(f0, h, &protocol, ens, false)?;
            let v = check_no_crossing(&run.ensemble, 0, p.axis.dx()).violations.len();
            (run.ensemble, Some(v))
        }
        Some(dy) => {
            let sigma_y = p.sigma;
            let ga = gaussian_packet(p.transverse_axis, -dy, sigma_y, 0.0)?;
            let gb = gaussian_packet(p.transverse_axis, dy, sigma_y, 0.0)?;
            let one = C64::new(1.0, 0.0);
            let f0 = SeparableField::product(&[&a, &ga])?
                .superpose(one, &SeparableField::product(&[&b, &gb])?, one)?
                .normalized()?;
            let grid = f0.grid().clone();
            let h = HamiltonianSpec::free(vec![p.mass, p.mass]);
            let dt = p.dt.map_or_else(|| h.max_stable_dt(&grid).map(|l| 0.5 * l), Ok)?;
            let steps = (p.end_time / dt).ceil() as usize;
            let protocol = Protocol::free(dt, p.end_time, p.snapshot_stride)
                .recording_every(record_interval(steps, p.snapshot_stride, 40));
            let starts = sample_separable(&f0, ens)?;
            let mut integ = EnsembleIntegrator::new(&grid, &h.masses, &starts, ens.seeds())?;
            let mut evo = SeparableEvolution::new(f0, h, dt)?;
            run_protocol(&mut evo, &protocol, Some(&mut integ), |_| Ok(()))?;
            (integ.finish(), None)
        }
    };
    let plane_crossings = side_changes(&ensemble, 0);
    let [lone_a, lone_b] = lone_packets(p, &a, &b)?;
    let mismatch = ensemble
        .trajectories
        .iter()
        .filter(|t| {
            let x = t.last();
            let from_a = lone_a.local(x.coords()).0.norm_sqr() >= lone_b.local(x.coords()).0.norm_sqr();
            // Packet a starts on the left.
            (side(t.initial().get(0)) < 0) != from_a
        })
        .count();
    let attribution_mismatch = wilson_interval(mismatch, ensemble.len());
    let mut checks = Vec::new();
    if p.end_time > meeting_time {
        if p.transverse_offset.is_none() {
            checks.push(Check::equals("plane-crossings", plane_crossings as f64, 0.0));
            checks.push(Check::equals("attribution-mismatch", attribution_mismatch.rate, 1.0));
            if let Some(v) = order_violations {
                checks.push(Check::equals("order-violations", v as f64, 0.0));
            }
        } else {
            checks.push(Check::equals("attribution-mismatch", attribution_mismatch.rate, 0.0));
        }
    }
    Ok(Outcome {
        report: PacketExchangeReport {
            trajectories: ensemble.len(),
            meeting_time,
            initial_overlap: overlap,
            plane_crossings,
            attribution_mismatch,
            order_violations,
            checks,
        },
        ensemble,
        histograms: Vec::new(),
        field: None,
    })
}

/// Each packet evolved alone to `end_time`, as the naive attribution sees
/// them.
fn lone_packets(p: &PacketExchangeParams, a: &GridField, b: &GridField) -> Result<[SeparableField; 2]> {
    let lone = |f: &GridField, dy: Option<f64>| -> Result<SeparableField> {
        let (f0, masses) = match dy {
            None => (SeparableField::product(&[f])?, vec![p.mass]),
            Some(y) => {
                let g = gaussian_packet(p.transverse_axis, y, p.sigma, 0.0)?;
                (SeparableField::product(&[f, &g])?, vec![p.mass, p.mass])
            }
        };
        let h = HamiltonianSpec::free(masses);
        let dt = p.dt.map_or_else(|| h.max_stable_dt(f0.grid()).map(|l| 0.5 * l), Ok)?;
        let mut evo = SeparableEvolution::new(f0, h, dt)?;
        run_protocol(&mut evo, &Protocol::free(dt, p.end_time, 1), None, |_| Ok(()))?;
        Ok(evo.into_field())
    };
    let dy = p.transverse_offset;
    Ok([lone(a, dy.map(|d| -d))?, lone(b, dy)?])
}

// ------------------------------------------------------- absolute uncertainty

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsoluteUncertaintyParams {
    pub system: Axis,
    pub pointer: Axis,
    /// Standard deviation of the prior `|phi|^2`.
    pub prior_sigma: f64,
    /// Pointer ready-state width `w` (`exp(-y^2 / 2 w^2)`).
    pub pointer_width: f64,
    /// Coupling strength times window length; the pointer moves by this
    /// times `x`.
    pub coupling: f64,
    /// Pointer width of the comparison run used for the width law.
    pub comparison_width: f64,
    pub record_bins: usize,
    pub min_per_bin: usize,
    pub boundary: Boundary,
}

impl Default for AbsoluteUncertaintyParams {
    fn default() -> Self {
        AbsoluteUncertaintyParams {
            system: Axis::symmetric(6.0, 512).expect("valid axis"),
            pointer: Axis::symmetric(16.0, 512).expect("valid axis"),
            prior_sigma: 1.0,
            pointer_width: 0.5,
            coupling: 2.0,
            comparison_width: 0.25,
            record_bins: 10,
            min_per_bin: 300,
            boundary: Boundary::Periodic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordBin {
    pub record_lo: f64,
    pub record_hi: f64,
    pub samples: usize,
    pub x_bins: usize,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteUncertaintyReport {
    pub trajectories: usize,
    pub record_bins: Vec<RecordBin>,
    pub max_total_variation: f64,
    /// KS statistic of `F_cond(X_i | Y_i)` against the uniform distribution.
    pub pit_ks: f64,
    pub pit_ks_critical: f64,
    pub prior_width: f64,
    /// Conditional widths at the median record for `w` and the comparison width.
    pub conditional_width: f64,
    pub comparison_conditional_width: f64,
    pub checks: Vec<Check>,
}

fn linear_coupling(p: &AbsoluteUncertaintyParams) -> CouplingSchedule {
    CouplingSchedule {
        system_axis: 0,
        apparatus_axis: 1,
        strength: p.coupling,
        start: 0.0,
        end: 1.0,
        observable: PointerObservable::Linear,
    }
}

fn measured_field(p: &AbsoluteUncertaintyParams, width: f64) -> Result<(GridField, GridField)> {
    let prior = gaussian_packet(p.system, 0.0, p.prior_sigma, 0.0)?;
    let ready = crate::measurement::ready_state(p.pointer, width, crate::measurement::ReadyShape::Gaussian)?;
    let f0 = prior.tensor_product(&ready)?;
    let f0 = GridField::new(
        GridSpec::new(f0.spec().axes.clone(), p.boundary)?,
        f0.into_amplitudes(),
        0.0,
    )?;
    Ok((f0, prior))
}

fn line_std(f: &GridField) -> f64 {
    let axis = f.spec().axes[0];
    let w: Vec<f64> = f.amplitudes().iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = w.iter().sum();
    let mean: f64 = w.iter().enumerate().map(|(i, m)| m * axis.coord(i)).sum::<f64>() / total;
    let var: f64 = w.iter().enumerate().map(|(i, m)| m * (axis.coord(i) - mean).powi(2)).sum::<f64>() / total;
    var.sqrt()
}

fn conditional_width_at(p: &AbsoluteUncertaintyParams, width: f64, y: f64) -> Result<f64> {
    let (f0, _) = measured_field(p, width)?;
    let f = crate::propagator::apply_coupling_for(&f0, &linear_coupling(p), 1.0)?;
    let cond = crate::measurement::conditional_wavefunction(&f, &[(1, y)])?;
    Ok(line_std(&cond.field))
}

pub fn run_absolute_uncertainty(p: &AbsoluteUncertaintyParams, ens: &EnsembleSpec) -> Result<Outcome<AbsoluteUncertaintyReport>> {
    ens.validate()?;
    if p.record_bins == 0 || p.min_per_bin == 0 {
        return Err(Error::Config("record bins and samples per bin must be positive".into()));
    }
    let (f0, prior) = measured_field(p, p.pointer_width)?;
    let grid = f0.spec().clone();
    let h = HamiltonianSpec::free(vec![1.0, 1.0]);
    let dt = 0.5 * h.max_stable_dt(&grid)?;
    let coupling = linear_coupling(p);
    let protocol = Protocol::free(dt, coupling.end, 1).with_couplings(vec![coupling]);
    let run = run_dense(f0, h, &protocol, ens, false)?;
    let field = run.field;
    let finals = run.ensemble.finals();
    let n = finals.len();

    // Conditional cell masses of x given each trajectory's record.
    let conds: Vec<Vec<f64>> = finals
        .par_iter()
        .map(|x| {
            let c = crate::measurement::conditional_wavefunction(&field, &[(1, x.get(1))])?;
            let m: Vec<f64> = c.field.amplitudes().iter().map(|z| z.norm_sqr()).collect();
            let s: f64 = m.iter().sum();
            Ok(m.into_iter().map(|v| v / s).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    // Probability integral transform against each conditional.
    let xaxis = p.system;
    let pit: Vec<f64> = finals
        .iter()
        .zip(&conds)
        .map(|(x, m)| {
            let u = ((x.get(0) - xaxis.min) / xaxis.dx()).clamp(0.0, xaxis.points as f64);
            let i = (u.floor() as usize).min(xaxis.points - 1);
            m[..i].iter().sum::<f64>() + m[i] * (u - i as f64)
        })
        .collect();
    let pit_ks = ks_statistic(&pit, |u| u.clamp(0.0, 1.0));

    // Record bins by quantiles of Y.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| finals[i].get(1).total_cmp(&finals[j].get(1)).then(i.cmp(&j)));
    let nb = p.record_bins.min(n / p.min_per_bin).max(1);
    let xgrid = prior.spec().clone();
    let mut record_bins = Vec::with_capacity(nb);
    let mut histograms = Vec::new();
    for b in 0..nb {
        let members = &order[b * n / nb..(b + 1) * n / nb];
        let mut mix = vec![0.0; xaxis.points];
        for &i in members {
            mix.iter_mut().zip(&conds[i]).for_each(|(a, c)| *a += c);
        }
        let d = CellDensity::new(xgrid.clone(), mix)?;
        let xs: Vec<Configuration> = members.iter().map(|&i| Configuration::new(&[finals[i].get(0)])).collect();
        let x_bins = ((members.len() as f64).cbrt().round() as usize).clamp(4, 20);
        let binning = Binning::covering(&d, x_bins, HISTOGRAM_TAIL)?;
        let emp = binning.empirical(&xs);
        let quad = binning.quadrature(&d)?;
        let tv = total_variation(&emp, &quad);
        record_bins.push(RecordBin {
            record_lo: finals[members[0]].get(1),
            record_hi: finals[*members.last().unwrap()].get(1),
            samples: members.len(),
            x_bins: binning.len(),
            total_variation: tv,
        });
        histograms.push(NamedHistogram {
            name: format!("record-bin-{b}-empirical"),
            histogram: binning.histogram(emp),
        });
        histograms.push(NamedHistogram {
            name: format!("record-bin-{b}-conditional"),
            histogram: binning.histogram(quad),
        });
    }
    let max_tv = record_bins.iter().map(|b| b.total_variation).fold(0.0, f64::max);
    let min_samples = record_bins.iter().map(|b| b.samples).min().unwrap_or(0);

    let median_y = finals[order[n / 2]].get(1);
    let conditional_width = conditional_width_at(p, p.pointer_width, median_y)?;
    let comparison_conditional_width = conditional_width_at(p, p.comparison_width, median_y)?;
    let prior_width = line_std(&prior);
    let mut checks = vec![
        Check::at_least("samples-per-record-bin", min_samples as f64, p.min_per_bin as f64),
        Check::below("record-bin-tv", max_tv, 0.05),
        Check::below("conditional-pit-ks", pit_ks, ks_critical_1pct(n)),
    ];
    if p.coupling != 0.0 {
        let ratio = comparison_conditional_width / conditional_width;
        let expected = p.comparison_width / p.pointer_width;
        checks.push(Check::within("width-ratio", ratio, expected, 0.1 * expected));
    }
    Ok(Outcome {
        report: AbsoluteUncertaintyReport {
            trajectories: n,
            record_bins,
            max_total_variation: max_tv,
            pit_ks,
            pit_ks_critical: ks_critical_1pct(n),
            prior_width,
            conditional_width,
            comparison_conditional_width,
            checks,
        },
        ensemble: run.ensemble,
        histograms,
        field: Some(field),
    })
}

// --------------------------------------------------------------- free gaussian

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeGaussianParams {
    pub axis: Axis,
    pub sigma: f64,
    pub center: f64,
    pub momentum: f64,
    pub end_time: f64,
    pub mass: f64,
    pub dt: Option<f64>,
    pub snapshot_stride: usize,
    pub sample_times: usize,
}

impl Default for FreeGaussianParams {
    fn default() -> Self {
        FreeGaussianParams {
            axis: Axis::symmetric(20.0, 512).expect("valid axis"),
            sigma: 1.0,
            center: 0.0,
            momentum: 0.0,
            end_time: 2.0,
            mass: 1.0,
            dt: None,
            snapshot_stride: 10,
            sample_times: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeGaussianReport {
    pub trajectories: usize,
    pub final_width: f64,
    pub analytic_width: f64,
    /// Largest `|x(t) - x_c(t) - (x0 - x_c(0)) sigma(t)/sigma0|` relative to
    /// the predicted offset, over trajectories starting at least
    /// `0.1 sigma0` from the center.
    pub max_scaling_error: f64,
    pub order_violations: usize,
    pub baseline: EquivarianceReport,
    pub equivariance: Vec<EquivarianceReport>,
    pub checks: Vec<Check>,
}

pub fn gaussian_width(sigma0: f64, mass: f64, t: f64) -> f64 {
    sigma0 * (1.0 + (t / (2.0 * mass * sigma0 * sigma0)).powi(2)).sqrt()
}

pub fn run_free_gaussian(p: &FreeGaussianParams, ens: &EnsembleSpec) -> Result<Outcome<FreeGaussianReport>> {
    ens.validate()?;
    let f0 = gaussian_packet(p.axis, p.center, p.sigma, p.momentum)?;
    let h = HamiltonianSpec::free(vec![p.mass]);
    let dt = p.dt.map_or_else(|| h.max_stable_dt(f0.spec()).map(|l| 0.5 * l), Ok)?;
    let steps = (p.end_time / dt).ceil() as usize;
    let protocol = Protocol::free(dt, p.end_time, p.snapshot_stride)
        .recording_every(record_interval(steps, p.snapshot_stride, 40));
    let run = run_dense(f0, h, &protocol, ens, true)?;
    let ens_out = &run.ensemble;
    let t = *ens_out.times.last().unwrap();
    let scale = gaussian_width(p.sigma, p.mass, t) / p.sigma;
    let drift = p.momentum / p.mass * t;
    let max_scaling_error = ens_out
        .trajectories
        .iter()
        .filter(|tr| (tr.initial().get(0) - p.center).abs() >= 0.1 * p.sigma)
        .map(|tr| {
            let expected = (tr.initial().get(0) - p.center) * scale;
            let actual = tr.last().get(0) - p.center - drift;
            ((actual - expected) / expected).abs()
        })
        .fold(0.0, f64::max);
    let crossing = check_no_crossing(ens_out, 0, p.axis.dx());
    let (baseline, equivariance) = equivariance_series(&run, ens, p.sample_times)?;
    let final_width = {
        let f = &run.field;
        line_std(f)
    };
    let analytic_width = gaussian_width(p.sigma, p.mass, t);
    let mut checks = equivariance_checks(&baseline, &equivariance);
    checks.push(Check::below("trajectory-scaling", max_scaling_error, 0.005));
    checks.push(Check::within("width-law", final_width, analytic_width, 1e-3 * analytic_width));
    checks.push(Check::equals("order-violations", crossing.violations.len() as f64, 0.0));
    let (_, d_end) = run.densities.last().unwrap();
    let bins = Binning::covering(d_end, ens.bins_per_axis(d_end.grid(), &[0])[0], HISTOGRAM_TAIL)?;
    let histograms = vec![
        NamedHistogram {
            name: "final-empirical".into(),
            histogram: bins.histogram(bins.empirical(&ens_out.finals())),
        },
        NamedHistogram {
            name: "final-quadrature".into(),
            histogram: bins.histogram(bins.quadrature(d_end)?),
        },
    ];
    Ok(Outcome {
        report: FreeGaussianReport {
            trajectories: ens_out.len(),
            final_width,
            analytic_width,
            max_scaling_error,
            order_violations: crossing.violations.len(),
            baseline,
            equivariance,
            checks,
        },
        ensemble: run.ensemble,
        histograms,
        field: Some(run.field),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minima_detection() {
        let bimodal = [1.0, 50.0, 400.0, 90.0, 2.0, 100.0, 390.0, 40.0, 1.0];
        assert!(minimum_significance(&bimodal) > 10.0);
        let unimodal = [1.0, 30.0, 200.0, 400.0, 210.0, 25.0, 1.0];
        assert_eq!(minimum_significance(&unimodal), 0.0);
        assert_eq!(interior_minima(&unimodal), 0);
        assert_eq!(interior_minima(&bimodal), 1);
    }

    #[test]
    fn asymmetric_slits_rejected() {
        let p = DoubleSlitParams {
            amplitudes: [1.0, 0.5],
            ..Default::default()
        };
        let e = run_double_slit(&p, &EnsembleSpec::new(10, 1)).err().unwrap();
        assert_eq!(e.kind(), "preset-violation");
    }

    #[test]
    fn overlapping_packets_rejected() {
        let p = PacketExchangeParams {
            offset: 1.0,
            ..Default::default()
        };
        let e = run_packet_exchange(&p, &EnsembleSpec::new(10, 1)).err().unwrap();
        assert_eq!(e.kind(), "preset-violation");
    }

    #[test]
    fn small_free_gaussian() {
        let out = run_free_gaussian(&FreeGaussianParams::default(), &EnsembleSpec::new(2000, 4)).unwrap();
        for c in &out.report.checks {
            assert!(c.passed, "{}", c.summary());
        }
    }
}

//! Guiding equation `dX_a/dt = (1/m_a) Im(d_a psi / psi)(X)` and trajectory
//! integration over a field history.
//!
//! Trajectories advance with fixed-step RK4 whose step equals the snapshot
//! interval. Between snapshots the amplitude and its gradient are
//! interpolated linearly in time; in space both are interpolated cubically
//! from node values (gradients are spectral unless stated otherwise).

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{spectral_derivative, SpectralPlan};
use crate::field::{GridField, ZERO};
use crate::grid::{GridSpec, MAX_AXES};
use crate::propagator::CouplingSchedule;
use crate::separable::SeparableField;

/// Node threshold relative to `max |psi|`.
pub const NODE_THRESHOLD: f64 = 1e-7;

/// A step is halved while its stage velocities disagree by more than this
/// fraction of the smallest cell width (in displacement over the step).
pub const REFINE_TOLERANCE: f64 = 1e-3;
/// At most `2^MAX_REFINE_DEPTH` sub-steps per snapshot interval.
pub const MAX_REFINE_DEPTH: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    coords: [f64; MAX_AXES],
    dims: usize,
}

impl Configuration {
    pub fn new(coords: &[f64]) -> Self {
        assert!(!coords.is_empty() && coords.len() <= MAX_AXES, "1..=3 coordinates");
        let mut c = [0.0; MAX_AXES];
        c[..coords.len()].copy_from_slice(coords);
        Configuration {
            coords: c,
            dims: coords.len(),
        }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dims]
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn get(&self, axis: usize) -> f64 {
        self.coords[axis]
    }

    #[inline]
    fn offset(&self, v: &[f64; MAX_AXES], h: f64) -> Self {
        let mut out = *self;
        for a in 0..self.dims {
            out.coords[a] += h * v[a];
        }
        out
    }
}

pub type Velocity = [f64; MAX_AXES];

/// Amplitude and gradient at a point.
#[derive(Debug, Clone, Copy)]
pub struct LocalWave {
    pub psi: C64,
    pub grad: [C64; MAX_AXES],
}

impl LocalWave {
    fn blend(a: &LocalWave, b: &LocalWave, alpha: f64) -> LocalWave {
        let mut grad = [ZERO; MAX_AXES];
        for (g, (x, y)) in grad.iter_mut().zip(a.grad.iter().zip(&b.grad)) {
            *g = x * (1.0 - alpha) + y * alpha;
        }
        LocalWave {
            psi: a.psi * (1.0 - alpha) + b.psi * alpha,
            grad,
        }
    }

    /// `(1/m_a) Im(d_a psi / psi)`, or a node error when `|psi|` is below
    /// `NODE_THRESHOLD * scale`.
    pub fn velocity(&self, masses: &[f64], scale: f64) -> Result<Velocity> {
        let mag = self.psi.norm();
        let threshold = NODE_THRESHOLD * scale;
        if !(mag >= threshold) || mag == 0.0 {
            return Err(Error::Node {
                magnitude: mag,
                threshold,
            });
        }
        let mut v = [0.0; MAX_AXES];
        for (a, m) in masses.iter().enumerate() {
            v[a] = (self.grad[a] / self.psi).im / m;
        }
        Ok(v)
    }
}

/// Anything that can report `psi` and `grad psi` at a configuration.
pub trait GuidingWave: Sync {
    fn grid(&self) -> &GridSpec;
    fn time(&self) -> f64;
    fn local(&self, x: &[f64]) -> LocalWave;
    /// Reference magnitude for the node threshold.
    fn scale(&self) -> f64;
}

/// How node gradients of a dense snapshot are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScheme {
    Spectral,
    /// Fourth-order central differences (periodic wrap).
    FourthOrder,
}

/// A dense field with precomputed node gradients.
#[derive(Debug, Clone)]
pub struct DenseSnapshot {
    field: Arc<GridField>,
    grads: Vec<Vec<C64>>,
    max_abs: f64,
}

impl DenseSnapshot {
    pub fn new(field: GridField) -> Self {
        let plan = SpectralPlan::new(field.spec());
        Self::with_plan(field, &plan)
    }

    pub fn with_plan(field: GridField, plan: &SpectralPlan) -> Self {
        let grads = (0..field.spec().dims())
            .map(|a| spectral_derivative(plan, field.spec(), field.amplitudes(), a))
            .collect();
        Self::from_parts(field, grads)
    }

    pub fn with_scheme(field: GridField, scheme: GradientScheme) -> Self {
        match scheme {
            GradientScheme::Spectral => Self::new(field),
            GradientScheme::FourthOrder => {
                let grads = (0..field.spec().dims())
                    .map(|a| fourth_order_derivative(&field, a))
                    .collect();
                Self::from_parts(field, grads)
            }
        }
    }

    fn from_parts(field: GridField, grads: Vec<Vec<C64>>) -> Self {
        let max_abs = field.max_abs();
        DenseSnapshot {
            field: Arc::new(field),
            grads,
            max_abs,
        }
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn gradient(&self, axis: usize) -> &[C64] {
        &self.grads[axis]
    }
}

impl GuidingWave for DenseSnapshot {
    fn grid(&self) -> &GridSpec {
        self.field.spec()
    }

    fn time(&self) -> f64 {
        self.field.time()
    }

    fn local(&self, x: &[f64]) -> LocalWave {
        let spec = self.field.spec();
        let mut grad = [ZERO; MAX_AXES];
        for (a, g) in self.grads.iter().enumerate() {
            grad[a] = GridField::interpolate(spec, g, x);
        }
        LocalWave {
            psi: GridField::interpolate(spec, self.field.amplitudes(), x),
            grad,
        }
    }

    fn scale(&self) -> f64 {
        self.max_abs
    }
}

impl GuidingWave for SeparableField {
    fn grid(&self) -> &GridSpec {
        SeparableField::grid(self)
    }

    fn time(&self) -> f64 {
        SeparableField::time(self)
    }

    fn local(&self, x: &[f64]) -> LocalWave {
        let (psi, grad) = SeparableField::local(self, x);
        LocalWave { psi, grad }
    }

    fn scale(&self) -> f64 {
        self.max_abs_bound()
    }
}

fn fourth_order_derivative(f: &GridField, axis: usize) -> Vec<C64> {
    let spec = f.spec();
    let n = spec.axes[axis].points;
    let stride = spec.strides()[axis];
    let dx = spec.axes[axis].dx();
    let psi = f.amplitudes();
    (0..psi.len())
        .into_par_iter()
        .map(|flat| {
            let i = (flat / stride) % n;
            let at = |o: i64| {
                let j = (i as i64 + o).rem_euclid(n as i64) as usize;
                psi[flat - i * stride + j * stride]
            };
            (at(-2) - at(-1) * 8.0 + at(1) * 8.0 - at(2)) / (12.0 * dx)
        })
        .collect()
}

/// Bohmian velocity of a single field at `x` (spectral gradient).
pub fn velocity_field(f: &GridField, x: &Configuration, masses: &[f64]) -> Result<Velocity> {
    check_masses(f.spec(), masses)?;
    let snap = DenseSnapshot::new(f.clone());
    velocity_at(&snap, x, masses)
}

pub fn velocity_at<W: GuidingWave + ?Sized>(w: &W, x: &Configuration, masses: &[f64]) -> Result<Velocity> {
    w.local(x.coords()).velocity(masses, w.scale())
}

fn check_masses(grid: &GridSpec, masses: &[f64]) -> Result<()> {
    if masses.len() != grid.dims() {
        return Err(Error::Config(format!(
            "{} masses for a {}-axis grid",
            masses.len(),
            grid.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    Active,
    /// Left the grid at `time`; later samples repeat the last position.
    Absorbed { time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Arc<[f64]>,
    pub samples: Vec<Configuration>,
    pub status: TrajectoryStatus,
    /// Times at which the node-freeze policy was applied.
    pub node_events: Vec<f64>,
}

impl Trajectory {
    pub fn initial(&self) -> &Configuration {
        &self.samples[0]
    }

    pub fn last(&self) -> &Configuration {
        self.samples.last().expect("trajectory has samples")
    }

    pub fn is_regularized(&self) -> bool {
        !self.node_events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Arc<[f64]>,
    pub trajectories: Vec<Trajectory>,
    pub seeds: Vec<u64>,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn finals(&self) -> Vec<Configuration> {
        self.trajectories.iter().map(|t| *t.last()).collect()
    }

    pub fn initials(&self) -> Vec<Configuration> {
        self.trajectories.iter().map(|t| *t.initial()).collect()
    }

    /// Positions at sample index `k`.
    pub fn at(&self, k: usize) -> Vec<Configuration> {
        self.trajectories.iter().map(|t| t.samples[k]).collect()
    }

    pub fn node_event_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.node_events.len()).sum()
    }

    pub fn absorbed_count(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| matches!(t.status, TrajectoryStatus::Absorbed { .. }))
            .count()
    }
}

/// One RK4 step over the fraction `[a0, a1]` of a snapshot interval of
/// length `h`, halved recursively while the stage velocities disagree by more
/// than `tol` in displacement.
fn rk4_refined<F>(v: &F, x: Configuration, a0: f64, a1: f64, h: f64, tol: f64, depth: u32) -> Result<(Configuration, Velocity)>
where
    F: Fn(f64, &Configuration) -> Result<Velocity>,
{
    let hs = h * (a1 - a0);
    let mid = 0.5 * (a0 + a1);
    let k1 = v(a0, &x)?;
    let k2 = v(mid, &x.offset(&k1, 0.5 * hs))?;
    let k3 = v(mid, &x.offset(&k2, 0.5 * hs))?;
    let k4 = v(a1, &x.offset(&k3, hs))?;
    let spread = (0..x.dims())
        .map(|a| (k1[a] - k2[a]).abs().max((k2[a] - k3[a]).abs()).max((k3[a] - k4[a]).abs()))
        .fold(0.0, f64::max)
        * hs.abs();
    if spread > tol && depth < MAX_REFINE_DEPTH {
        let (xm, _) = rk4_refined(v, x, a0, mid, h, tol, depth + 1)?;
        return rk4_refined(v, xm, mid, a1, h, tol, depth + 1);
    }
    let mut k = [0.0; MAX_AXES];
    for a in 0..MAX_AXES {
        k[a] = (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]) / 6.0;
    }
    Ok((x.offset(&k, hs), k4))
}

#[derive(Debug, Clone)]
struct Walker {
    x: Configuration,
    last_velocity: Velocity,
    absorbed_at: Option<f64>,
    node_events: Vec<f64>,
    samples: Vec<Configuration>,
}

impl Walker {
    fn new(x: Configuration) -> Self {
        Walker {
            x,
            last_velocity: [0.0; MAX_AXES],
            absorbed_at: None,
            node_events: Vec::new(),
            samples: Vec::new(),
        }
    }

    fn rk4<W: GuidingWave>(&mut self, from: &W, to: &W, masses: &[f64]) {
        if self.absorbed_at.is_some() {
            return;
        }
        let (t0, t1) = (from.time(), to.time());
        let h = t1 - t0;
        let scale = from.scale().max(to.scale());
        let tol = REFINE_TOLERANCE * from.grid().axes.iter().map(|a| a.dx()).fold(f64::INFINITY, f64::min);
        let v = |alpha: f64, x: &Configuration| {
            let a = from.local(x.coords());
            let b = to.local(x.coords());
            LocalWave::blend(&a, &b, alpha).velocity(masses, scale)
        };
        match rk4_refined(&v, self.x, 0.0, 1.0, h, tol, 0) {
            Ok((next, k4)) => {
                self.last_velocity = k4;
                self.move_to(next, from.grid(), t1);
            }
            Err(_) => {
                // Freeze at the last finite velocity for this step.
                self.node_events.push(t0);
                let next = self.x.offset(&self.last_velocity, h);
                self.move_to(next, from.grid(), t1);
            }
        }
    }

    fn transport(&mut self, c: &CouplingSchedule, duration: f64, grid: &GridSpec, t1: f64) {
        if self.absorbed_at.is_some() {
            return;
        }
        let mut next = self.x;
        next.coords[c.apparatus_axis] += c.transport_velocity(self.x.coords()) * duration;
        self.move_to(next, grid, t1);
    }

    fn move_to(&mut self, next: Configuration, grid: &GridSpec, t: f64) {
        if grid.contains(next.coords()) && next.coords().iter().all(|v| v.is_finite()) {
            self.x = next;
        } else {
            self.absorbed_at = Some(t);
        }
    }
}

/// Lock-step integrator for an ensemble sharing one field history. The
/// caller feeds consecutive snapshot pairs (or coupling windows) as the
/// field is propagated, so only two snapshots need to be alive at a time.
#[derive(Debug, Clone)]
pub struct EnsembleIntegrator {
    grid: GridSpec,
    masses: Vec<f64>,
    walkers: Vec<Walker>,
    seeds: Vec<u64>,
    times: Vec<f64>,
}

impl EnsembleIntegrator {
    pub fn new(grid: &GridSpec, masses: &[f64], starts: &[Configuration], seeds: Vec<u64>) -> Result<Self> {
        check_masses(grid, masses)?;
        if starts.iter().any(|x| x.dims() != grid.dims()) {
            return Err(Error::Shape("configuration dimension differs from grid".into()));
        }
        if seeds.len() != starts.len() {
            return Err(Error::Shape("one seed per trajectory required".into()));
        }
        Ok(EnsembleIntegrator {
            grid: grid.clone(),
            masses: masses.to_vec(),
            walkers: starts.iter().map(|&x| Walker::new(x)).collect(),
            seeds,
            times: Vec::new(),
        })
    }

    pub fn record(&mut self, t: f64) {
        if self.times.last().is_some_and(|&last| (last - t).abs() < 1e-12) {
            return;
        }
        self.times.push(t);
        self.walkers.par_iter_mut().for_each(|w| {
            let x = w.x;
            w.samples.push(x);
        });
    }

    /// One RK4 step from `from.time()` to `to.time()`.
    pub fn advance<W: GuidingWave>(&mut self, from: &W, to: &W) {
        let masses = &self.masses;
        self.walkers.par_iter_mut().for_each(|w| w.rk4(from, to, masses));
    }

    /// Transport through (part of) an impulsive coupling window.
    pub fn advance_coupling(&mut self, c: &CouplingSchedule, duration: f64, t_end: f64) {
        let grid = &self.grid;
        self.walkers
            .par_iter_mut()
            .for_each(|w| w.transport(c, duration, grid, t_end));
    }

    pub fn positions(&self) -> Vec<Configuration> {
        self.walkers.iter().map(|w| w.x).collect()
    }

    pub fn len(&self) -> usize {
        self.walkers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walkers.is_empty()
    }

    pub fn finish(self) -> TrajectoryEnsemble {
        let times: Arc<[f64]> = self.times.into();
        let trajectories = self
            .walkers
            .into_iter()
            .map(|w| Trajectory {
                times: times.clone(),
                samples: w.samples,
                status: match w.absorbed_at {
                    Some(time) => TrajectoryStatus::Absorbed { time },
                    None => TrajectoryStatus::Active,
                },
                node_events: w.node_events,
            })
            .collect();
        TrajectoryEnsemble {
            times,
            trajectories,
            seeds: self.seeds,
        }
    }
}

/// Integrates one trajectory through an in-memory history of snapshots,
/// recording every snapshot time.
pub fn integrate_trajectory<W: GuidingWave>(history: &[W], x0: Configuration, masses: &[f64]) -> Result<Trajectory> {
    let first = history
        .first()
        .ok_or_else(|| Error::Config("empty field history".into()))?;
    if history.windows(2).any(|w| !(w[1].time() > w[0].time())) {
        return Err(Error::Config("field history times must increase".into()));
    }
    let mut ens = EnsembleIntegrator::new(first.grid(), masses, &[x0], vec![0])?;
    ens.record(first.time());
    for pair in history.windows(2) {
        ens.advance(&pair[0], &pair[1]);
        ens.record(pair[1].time());
    }
    Ok(ens.finish().trajectories.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingViolation {
    pub time: f64,
    /// Trajectory indices (lower, upper in the initial ordering).
    pub lower: usize,
    pub upper: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub axis: usize,
    pub tolerance: f64,
    pub samples_checked: usize,
    pub violations: Vec<CrossingViolation>,
}

impl CrossingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that the order of coordinates along `axis` at the first sample is
/// preserved at every later sample: a violation is a pair adjacent in the
/// initial order whose coordinates invert by more than `tolerance`.
pub fn check_no_crossing(ens: &TrajectoryEnsemble, axis: usize, tolerance: f64) -> CrossingReport {
    let mut order: Vec<usize> = (0..ens.len()).collect();
    order.sort_by(|&i, &j| {
        let a = ens.trajectories[i].initial().get(axis);
        let b = ens.trajectories[j].initial().get(axis);
        a.total_cmp(&b).then(i.cmp(&j))
    });
    let violations: Vec<CrossingViolation> = (1..ens.times.len())
        .into_par_iter()
        .flat_map_iter(|k| {
            let order = &order;
            order
                .windows(2)
                .filter_map(move |w| {
                    let lo = ens.trajectories[w[0]].samples[k].get(axis);
                    let hi = ens.trajectories[w[1]].samples[k].get(axis);
                    (lo > hi + tolerance).then(|| CrossingViolation {
                        time: ens.times[k],
                        lower: w[0],
                        upper: w[1],
                        gap: lo - hi,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    CrossingReport {
        axis,
        tolerance,
        samples_checked: ens.times.len(),
        violations,
    }
}

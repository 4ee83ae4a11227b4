//! Pointer measurements: `(c1 phi1 + c2 phi2) Phi0 -> c1 phi1 Phi1 + c2 phi2 Phi2`,
//! outcome statistics, conditional wave functions, the camera stage that
//! records the pointer, and repeated measurements.
//!
//! Axes are ordered system `x`, pointer `y`, then camera `z` (or a second
//! pointer `y'` for repeated measurements). Outcome regions split the pointer
//! and camera axes at zero: `L`/`𝓛` below, `R`/`𝓡` at or above. A system
//! state supported left of `x = 0` drives the pointer into `L`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{binomial_sigma, sample_initial, sample_separable, wilson_interval, EnsembleSpec, RateEstimate};
use crate::error::{Error, Result};
use crate::evolution::{run_protocol, DenseEvolution, Integrator, Protocol, SeparableEvolution};
use crate::field::{gaussian_packet, GridField};
use crate::grid::{Axis, Boundary, GridSpec, RegionSpec};
use crate::guidance::{velocity_at, Configuration, DenseSnapshot, EnsembleIntegrator, TrajectoryEnsemble, NODE_THRESHOLD};
use crate::propagator::{CouplingSchedule, HamiltonianSpec, PointerObservable, SplitOperator};
use crate::report::Check;
use crate::separable::{shift_line, SeparableField};

/// Gaussian packet: `|psi|^2` has mean `center` and standard deviation
/// `sigma`; `momentum` is the mean wave number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl PacketSpec {
    pub fn field(&self, axis: Axis) -> Result<GridField> {
        gaussian_packet(axis, self.center, self.sigma, self.momentum)
    }
}

/// Shape of pointer and camera ready states of width `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReadyShape {
    /// `exp(-y^2 / 2 w^2)`.
    #[default]
    Gaussian,
    /// `(1 + (y/w)^2)^(-1/2)` for `|y| <= cutoff * w`, zero beyond, so that
    /// `|Phi|^2` is a truncated Cauchy density.
    TruncatedCauchy { cutoff: f64 },
}

/// Normalized ready state of width `w` centered at zero.
pub fn ready_state(axis: Axis, width: f64, shape: ReadyShape) -> Result<GridField> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Config(format!("ready-state width {width} must be positive")));
    }
    let spec = GridSpec::periodic(vec![axis])?;
    let f = match shape {
        ReadyShape::Gaussian => {
            GridField::from_fn(spec, |x| C64::new((-x[0] * x[0] / (2.0 * width * width)).exp(), 0.0))
        }
        ReadyShape::TruncatedCauchy { cutoff } => {
            if !(cutoff > 0.0) {
                return Err(Error::Config("truncation cutoff must be positive".into()));
            }
            GridField::from_fn(spec, |x| {
                let u = x[0] / width;
                let v = if u.abs() <= cutoff { (1.0 + u * u).powf(-0.5) } else { 0.0 };
                C64::new(v, 0.0)
            })
        }
    };
    f.normalized()
}

fn default_separation() -> f64 {
    6.0
}

fn default_min_separation() -> f64 {
    6.0
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_duration() -> f64 {
    1.0
}

fn default_masses() -> Vec<f64> {
    vec![1.0; 3]
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementScenario {
    pub system: Axis,
    pub pointer: Axis,
    /// Camera axis for the second stage, or the second pointer for repeated
    /// measurements.
    #[serde(default)]
    pub camera: Option<Axis>,
    #[serde(default)]
    pub boundary: Boundary,
    /// `(re, im)` of the coefficient of `phi1`.
    pub c1: [f64; 2],
    pub c2: [f64; 2],
    pub phi1: PacketSpec,
    pub phi2: PacketSpec,
    pub pointer_width: f64,
    pub camera_width: f64,
    /// Pointer displacement in units of the ready-state width.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Smallest displacement (in widths) accepted as a working device.
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    #[serde(default)]
    pub ready_shape: ReadyShape,
    /// Duration of each impulsive coupling window.
    #[serde(default = "default_duration")]
    pub coupling_duration: f64,
    /// Free evolution after the last coupling.
    #[serde(default)]
    pub settle_time: f64,
    /// Time step for free evolution; half the stability limit when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_masses")]
    pub masses: Vec<f64>,
    /// Largest pointer-state mass allowed in the wrong outcome region.
    #[serde(default = "default_tolerance")]
    pub localization_tolerance: f64,
}

impl MeasurementScenario {
    pub fn coefficients(&self) -> (C64, C64) {
        (C64::new(self.c1[0], self.c1[1]), C64::new(self.c2[0], self.c2[1]))
    }

    pub fn left_weight(&self) -> f64 {
        self.coefficients().0.norm_sqr()
    }

    pub fn validate(&self) -> Result<()> {
        let (c1, c2) = self.coefficients();
        let norm = c1.norm_sqr() + c2.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::semantic(
                "|c1|^2 + |c2|^2 = 1",
                format!("coefficients have total weight {norm}"),
            ));
        }
        for (name, a) in [("system", Some(self.system)), ("pointer", Some(self.pointer)), ("camera", self.camera)] {
            if let Some(a) = a {
                a.validate().map_err(|e| Error::Config(format!("{name} axis: {e}")))?;
            }
        }
        if !(self.pointer_width > 0.0 && self.camera_width > 0.0) {
            return Err(Error::semantic("ready-state widths > 0", "pointer or camera width not positive"));
        }
        if !(self.separation > 0.0 && self.coupling_duration > 0.0 && self.settle_time >= 0.0) {
            return Err(Error::semantic(
                "separation > 0, coupling duration > 0, settle time >= 0",
                "timing or separation out of range",
            ));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot stride must be at least 1".into()));
        }
        if self.masses.len() < self.dims() || self.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("one positive mass per axis required".into()));
        }
        if !(self.phi1.center < 0.0 && self.phi2.center > 0.0) {
            return Err(Error::semantic(
                "phi1 left of x = 0, phi2 right of it",
                format!("centers {} and {}", self.phi1.center, self.phi2.center),
            ));
        }
        let (p1, p2) = self.basis()?;
        let overlap = p1.inner(&p2)?.norm();
        if overlap > 1e-8 {
            return Err(Error::semantic("<phi1, phi2> = 0", format!("overlap {overlap:.3e}")));
        }
        Ok(())
    }

    fn dims(&self) -> usize {
        if self.camera.is_some() {
            3
        } else {
            2
        }
    }

    pub fn basis(&self) -> Result<(GridField, GridField)> {
        Ok((self.phi1.field(self.system)?, self.phi2.field(self.system)?))
    }

    pub fn system_state(&self) -> Result<GridField> {
        let (c1, c2) = self.coefficients();
        let (p1, p2) = self.basis()?;
        p1.combine(c1, &p2, c2)
    }

    pub fn pointer_ready(&self) -> Result<GridField> {
        ready_state(self.pointer, self.pointer_width, self.ready_shape)
    }

    pub fn camera_ready(&self) -> Result<GridField> {
        let axis = self.camera.ok_or_else(|| Error::Config("scenario has no camera axis".into()))?;
        ready_state(axis, self.camera_width, self.ready_shape)
    }

    pub fn pointer_displacement(&self) -> f64 {
        self.separation * self.pointer_width
    }

    pub fn camera_displacement(&self) -> f64 {
        self.separation * self.camera_width
    }

    fn window(&self, k: usize) -> (f64, f64) {
        let t = self.coupling_duration;
        (k as f64 * t, (k + 1) as f64 * t)
    }

    /// System `x` drives the pointer `y` during the first window.
    pub fn stage1_coupling(&self) -> CouplingSchedule {
        let (start, end) = self.window(0);
        CouplingSchedule {
            system_axis: 0,
            apparatus_axis: 1,
            strength: self.pointer_displacement() / self.coupling_duration,
            start,
            end,
            observable: PointerObservable::split(&self.system, 0.0, -1.0),
        }
    }

    /// The camera `z` reads the pointer region during the second window.
    pub fn camera_coupling(&self) -> CouplingSchedule {
        let (start, end) = self.window(1);
        CouplingSchedule {
            system_axis: 1,
            apparatus_axis: 2,
            strength: self.camera_displacement() / self.coupling_duration,
            start,
            end,
            observable: PointerObservable::split(&self.pointer, 0.0, -1.0),
        }
    }

    /// A second pointer on axis 2 reads the system again.
    pub fn repeat_coupling(&self) -> CouplingSchedule {
        let (start, end) = self.window(1);
        CouplingSchedule {
            system_axis: 0,
            apparatus_axis: 2,
            strength: self.pointer_displacement() / self.coupling_duration,
            start,
            end,
            observable: PointerObservable::split(&self.system, 0.0, -1.0),
        }
    }

    pub fn grid(&self, dims: usize) -> Result<GridSpec> {
        let mut axes = vec![self.system, self.pointer];
        if dims == 3 {
            axes.push(self.camera.ok_or_else(|| Error::Config("scenario has no camera axis".into()))?);
        }
        GridSpec::new(axes, self.boundary)
    }

    pub fn hamiltonian(&self, dims: usize) -> HamiltonianSpec {
        HamiltonianSpec::free(self.masses[..dims].to_vec())
    }

    pub fn step(&self, grid: &GridSpec, h: &HamiltonianSpec) -> Result<f64> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => Ok(0.5 * h.max_stable_dt(grid)?),
        }
    }

    /// The two pointer states after the coupling and any settling time.
    pub fn pointer_states(&self) -> Result<(GridField, GridField)> {
        let ready = self.pointer_ready()?;
        let plan = crate::fft::SpectralPlan::new(ready.spec());
        let d = self.pointer_displacement();
        let mut out = Vec::with_capacity(2);
        for sign in [-1.0, 1.0] {
            let values = shift_line(&plan, &self.pointer, ready.amplitudes(), sign * d);
            let mut f = GridField::new(ready.spec().clone(), values, 0.0)?;
            if self.settle_time > 0.0 {
                let h = HamiltonianSpec::free(vec![self.masses[1]]);
                let dt = self.step(f.spec(), &h)?;
                let n = (self.settle_time / dt).ceil() as usize;
                SplitOperator::new(f.spec(), &h, self.settle_time / n as f64)?.steps(&mut f, n)?;
            }
            out.push(f);
        }
        let b = out.pop().unwrap();
        Ok((out.pop().unwrap(), b))
    }

    /// Masses `int_R |Phi1|^2` and `int_L |Phi2|^2`; a device whose pointer
    /// states leak more than the tolerance, or whose displacement is below
    /// the minimum separation, is rejected.
    pub fn check_localization(&self) -> Result<[f64; 2]> {
        if self.separation < self.min_separation {
            return Err(Error::DeviceNoGood(format!(
                "pointer displacement {} widths is below the required {}",
                self.separation, self.min_separation
            )));
        }
        let (f1, f2) = self.pointer_states()?;
        let g = f1.spec();
        let leak1 = f1.region_probability(&RegionSpec::above("R", g, 0, 0.0))?;
        let leak2 = f2.region_probability(&RegionSpec::below("L", g, 0, 0.0))?;
        if leak1.max(leak2) > self.localization_tolerance {
            return Err(Error::DeviceNoGood(format!(
                "pointer states leak {leak1:.3e} / {leak2:.3e} into the wrong region (tolerance {:.1e})",
                self.localization_tolerance
            )));
        }
        Ok([leak1, leak2])
    }
}

fn left(grid: &GridSpec, axis: usize) -> RegionSpec {
    RegionSpec::below("L", grid, axis, 0.0)
}

fn right(grid: &GridSpec, axis: usize) -> RegionSpec {
    RegionSpec::above("R", grid, axis, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub left_weight: f64,
    pub trajectories: usize,
    pub localization_leak: [f64; 2],
    /// `P(Y in L)` and `P(Y in R)` by quadrature of the final field.
    pub quadrature_left: f64,
    pub quadrature_right: f64,
    /// `|c1|^2 int_L |Phi1|^2 + |c2|^2 int_L |Phi2|^2`.
    pub diagonal_left: f64,
    /// `2 Re(conj(c1) c2 <phi1 Phi1, phi2 Phi2>_L)` and its Cauchy-Schwarz bound.
    pub cross_term: f64,
    pub cross_term_bound: f64,
    pub empirical_left: RateEstimate,
    pub empirical_right: RateEstimate,
    /// Trajectories whose pointer region disagrees with the side of `x = 0`
    /// their system coordinate is on.
    pub pointer_mismatch: RateEstimate,
    pub node_events: usize,
    pub absorbed: usize,
    pub checks: Vec<Check>,
}

pub struct Stage1Outcome {
    pub report: Stage1Report,
    pub field: GridField,
    pub ensemble: TrajectoryEnsemble,
}

fn region_rate(xs: &[Configuration], axis: usize, below: bool) -> RateEstimate {
    let count = xs.iter().filter(|x| (x.get(axis) < 0.0) == below).count();
    wilson_interval(count, xs.len())
}

fn mismatch_rate(xs: &[Configuration], a: usize, b: usize) -> RateEstimate {
    let count = xs.iter().filter(|x| (x.get(a) < 0.0) != (x.get(b) < 0.0)).count();
    wilson_interval(count, xs.len())
}

/// Stage one on the dense `(x, y)` grid.
pub fn run_stage1(s: &MeasurementScenario, ens: &EnsembleSpec) -> Result<Stage1Outcome> {
    s.validate()?;
    ens.validate()?;
    let leak = s.check_localization()?;
    let grid = s.grid(2)?;
    let (c1, c2) = s.coefficients();
    let (p1, p2) = s.basis()?;
    let ready = s.pointer_ready()?;
    let psi0 = s.system_state()?.tensor_product(&ready)?;
    let branches = [p1.scaled(c1).tensor_product(&ready)?, p2.scaled(c2).tensor_product(&ready)?];
    let h = s.hamiltonian(2);
    let dt = s.step(&grid, &h)?;
    let coupling = s.stage1_coupling();
    let protocol = Protocol::free(dt, coupling.end + s.settle_time, s.snapshot_stride).with_couplings(vec![coupling]);

    let starts = sample_initial(&psi0, ens)?;
    let mut integ = EnsembleIntegrator::new(&grid, &h.masses, &starts, ens.seeds())?;
    let mut evo = DenseEvolution::new(psi0, h.clone(), dt, Integrator::SplitOperator)?;
    run_protocol(&mut evo, &protocol, Some(&mut integ), |_| Ok(()))?;
    let field = evo.into_field();
    let mut evolved = Vec::with_capacity(2);
    for b in branches {
        let mut e = DenseEvolution::new(b, h.clone(), dt, Integrator::SplitOperator)?;
        run_protocol(&mut e, &protocol, None, |_| Ok(()))?;
        evolved.push(e.into_field());
    }

    let (l, r) = (left(&grid, 1), right(&grid, 1));
    let quadrature_left = field.region_probability(&l)?;
    let quadrature_right = field.region_probability(&r)?;
    let diagonal_left = evolved[0].region_probability(&l)? + evolved[1].region_probability(&l)?;
    let cross_term = 2.0 * evolved[0].region_inner(&evolved[1], &l)?.re;
    let cross_term_bound = 2.0 * evolved[0].cross_term_bound(&evolved[1], &l)?;

    let ensemble = integ.finish();
    let finals = ensemble.finals();
    let n = finals.len();
    let w = s.left_weight();
    let empirical_left = region_rate(&finals, 1, true);
    let empirical_right = region_rate(&finals, 1, false);
    let pointer_mismatch = mismatch_rate(&finals, 0, 1);
    let checks = vec![
        Check::within(
            "born-rule-empirical",
            empirical_left.rate,
            w,
            3.0 * binomial_sigma(w, n),
        ),
        Check::within("born-rule-quadrature", quadrature_left, w, 1e-5 + cross_term_bound),
        Check::at_most("cross-term-within-bound", cross_term.abs(), cross_term_bound + 1e-12),
        Check::within(
            "decomposition-consistent",
            diagonal_left + cross_term,
            quadrature_left,
            1e-10,
        ),
    ];
    let report = Stage1Report {
        left_weight: w,
        trajectories: n,
        localization_leak: leak,
        quadrature_left,
        quadrature_right,
        diagonal_left,
        cross_term,
        cross_term_bound,
        empirical_left,
        empirical_right,
        pointer_mismatch,
        node_events: ensemble.node_event_count(),
        absorbed: ensemble.absorbed_count(),
        checks,
    };
    Ok(Stage1Outcome {
        report,
        field,
        ensemble,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalWaveFunction {
    pub field: GridField,
    pub normalized: bool,
    pub fixed: Vec<(usize, f64)>,
}

impl ConditionalWaveFunction {
    /// `|<self, other>|` with both sides normalized.
    pub fn fidelity(&self, other: &GridField) -> Result<f64> {
        self.field.fidelity(other)
    }
}

fn conditional_from_slice(slice: GridField, scale: f64, fixed: &[(usize, f64)]) -> Result<ConditionalWaveFunction> {
    let peak = slice.max_abs();
    if !(peak >= NODE_THRESHOLD * scale) || peak == 0.0 {
        return Err(Error::UndefinedConditional(format!(
            "slice at {fixed:?} peaks at {peak:.3e}, below the node threshold {:.3e}",
            NODE_THRESHOLD * scale
        )));
    }
    Ok(ConditionalWaveFunction {
        field: slice.normalized()?,
        normalized: true,
        fixed: fixed.to_vec(),
    })
}

/// `psi(., Y)` normalized, with the listed axes fixed at actual positions.
pub fn conditional_wavefunction(f: &GridField, fixed: &[(usize, f64)]) -> Result<ConditionalWaveFunction> {
    conditional_from_slice(f.slice(fixed)?, f.max_abs(), fixed)
}

pub fn conditional_separable(f: &SeparableField, fixed: &[(usize, f64)]) -> Result<ConditionalWaveFunction> {
    conditional_from_slice(f.slice(fixed)?, f.max_abs_bound(), fixed)
}

/// `z`-component of the velocity of a two-axis `(y, z)` field at `(Y, Z)`.
pub fn conditional_z_velocity(f: &GridField, y: f64, z: f64, mass: f64) -> Result<f64> {
    if f.spec().dims() != 2 {
        return Err(Error::Shape("conditional z velocity needs a (y, z) field".into()));
    }
    let snap = DenseSnapshot::new(f.clone());
    Ok(velocity_at(&snap, &Configuration::new(&[y, z]), &[1.0, mass])?[1])
}

/// The field `Phi_L(y) Psi_<(z) + Phi_R(y) Psi_>(z)` in the middle of the
/// camera stage: camera packets leave `z = 0` with momenta `-k` and `+k`
/// and have moved freely for `elapsed`.
#[derive(Debug, Clone)]
pub struct SeparatingPackets {
    pub pointer_left: GridField,
    pub pointer_right: GridField,
    pub camera_left: GridField,
    pub camera_right: GridField,
    pub field: SeparableField,
}

pub fn separating_packets(s: &MeasurementScenario, momentum: f64, elapsed: f64) -> Result<SeparatingPackets> {
    let (c1, c2) = s.coefficients();
    let (pl, pr) = s.pointer_states()?;
    let camera = s.camera.ok_or_else(|| Error::Config("scenario has no camera axis".into()))?;
    let sigma = s.camera_width / std::f64::consts::SQRT_2;
    let mut cams = Vec::with_capacity(2);
    for k in [-momentum, momentum] {
        let mut f = gaussian_packet(camera, 0.0, sigma, k)?;
        if elapsed > 0.0 {
            let h = HamiltonianSpec::free(vec![s.masses[2]]);
            let dt = s.step(f.spec(), &h)?;
            let n = (elapsed / dt).ceil() as usize;
            SplitOperator::new(f.spec(), &h, elapsed / n as f64)?.steps(&mut f, n)?;
        }
        cams.push(f);
    }
    let a = SeparableField::product(&[&pl.clone().scaled(c1), &cams[0]])?;
    let b = SeparableField::product(&[&pr.clone().scaled(c2), &cams[1]])?;
    let field = a.superpose(C64::new(1.0, 0.0), &b, C64::new(1.0, 0.0))?;
    let camera_right = cams.pop().unwrap();
    Ok(SeparatingPackets {
        pointer_left: pl,
        pointer_right: pr,
        camera_left: cams.pop().unwrap(),
        camera_right,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    /// `[Y in L][Z in 𝓛]`, `[L][𝓡]`, `[R][𝓛]`, `[R][𝓡]`.
    pub quadrature: [f64; 4],
    pub empirical: [RateEstimate; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraReport {
    pub trajectories: usize,
    pub localization_leak: [f64; 2],
    pub cells: CellProbabilities,
    /// `P(Y in L)` after the first stage (quadrature).
    pub stage1_left: f64,
    /// Fraction of trajectories whose camera region matches their pointer region.
    pub camera_agreement: f64,
    /// Off-diagonal `(Y in L, Z in 𝓡)` as an atypical-event rate.
    pub off_diagonal: RateEstimate,
    pub pointer_mismatch: RateEstimate,
    pub long_tails: bool,
    pub checks: Vec<Check>,
}

pub struct CameraOutcome {
    pub report: CameraReport,
    pub field: SeparableField,
    pub ensemble: TrajectoryEnsemble,
}

fn cell_regions(grid: &GridSpec, a: usize, b: usize) -> [RegionSpec; 4] {
    let l = |axis| left(grid, axis).intervals[axis];
    let r = |axis| right(grid, axis).intervals[axis];
    let cell = |label: &str, ia: Option<crate::grid::Interval>, ib: Option<crate::grid::Interval>| {
        RegionSpec::whole(label, grid.dims())
            .with_interval(a, ia.unwrap())
            .with_interval(b, ib.unwrap())
    };
    [
        cell("L-L", l(a), l(b)),
        cell("L-R", l(a), r(b)),
        cell("R-L", r(a), l(b)),
        cell("R-R", r(a), r(b)),
    ]
}

fn cell_counts(xs: &[Configuration], a: usize, b: usize) -> [RateEstimate; 4] {
    let mut c = [0usize; 4];
    for x in xs {
        let i = (x.get(a) >= 0.0) as usize * 2 + (x.get(b) >= 0.0) as usize;
        c[i] += 1;
    }
    c.map(|k| wilson_interval(k, xs.len()))
}

struct ThreeAxisRun {
    field: SeparableField,
    after_first: SeparableField,
    ensemble: TrajectoryEnsemble,
    leak: [f64; 2],
}

fn run_three_axis(s: &MeasurementScenario, ens: &EnsembleSpec, second: CouplingSchedule, second_ready: GridField) -> Result<ThreeAxisRun> {
    s.validate()?;
    ens.validate()?;
    let leak = s.check_localization()?;
    let first = s.stage1_coupling();
    let psi0 = SeparableField::product(&[&s.system_state()?, &s.pointer_ready()?, &second_ready])?;
    let grid = psi0.grid().clone();
    let h = s.hamiltonian(3);
    let dt = s.step(&grid, &h)?;
    let split_time = first.end;
    let protocol = Protocol::free(dt, second.end + s.settle_time, s.snapshot_stride).with_couplings(vec![first, second]);
    let starts = sample_separable(&psi0, ens)?;
    let mut integ = EnsembleIntegrator::new(&grid, &h.masses, &starts, ens.seeds())?;
    let mut evo = SeparableEvolution::new(psi0, h, dt)?;
    let mut after_first = None;
    run_protocol(&mut evo, &protocol, Some(&mut integ), |w| {
        if after_first.is_none() && (w.time() - split_time).abs() < 1e-12 {
            after_first = Some(w.clone());
        }
        Ok(())
    })?;
    Ok(ThreeAxisRun {
        field: evo.into_field(),
        after_first: after_first.expect("protocol passes the end of the first window"),
        ensemble: integ.finish(),
        leak,
    })
}

/// Stage two: the camera records the pointer region. With long-tailed
/// ready states the off-diagonal cells carry a small but nonzero weight.
pub fn run_stage2_camera(s: &MeasurementScenario, ens: &EnsembleSpec) -> Result<CameraOutcome> {
    let run = run_three_axis(s, ens, s.camera_coupling(), s.camera_ready()?)?;
    let grid = run.field.grid().clone();
    let regions = cell_regions(&grid, 1, 2);
    let mut quadrature = [0.0; 4];
    for (q, r) in quadrature.iter_mut().zip(&regions) {
        *q = run.field.region_probability(r)?;
    }
    let stage1_left = run.after_first.region_probability(&left(&grid, 1))?;
    let finals = run.ensemble.finals();
    let n = finals.len();
    let empirical = cell_counts(&finals, 1, 2);
    let camera_agreement = (empirical[0].count + empirical[3].count) as f64 / n as f64;
    let long_tails = !matches!(s.ready_shape, ReadyShape::Gaussian);
    let mut checks = vec![
        Check::within(
            "marginal-consistency",
            quadrature[0] + quadrature[1],
            stage1_left,
            1e-6,
        ),
        Check::within(
            "born-rule-empirical",
            empirical[0].rate + empirical[1].rate,
            stage1_left,
            3.0 * binomial_sigma(stage1_left, n),
        ),
    ];
    if long_tails {
        checks.push(Check::at_least("off-diagonal-quadrature-positive", quadrature[1], f64::MIN_POSITIVE));
        let consistent = empirical[1].contains(quadrature[1]);
        checks.push(Check::equals(
            "off-diagonal-within-wilson",
            consistent as u8 as f64,
            1.0,
        ));
    } else {
        checks.push(Check::below("off-diagonal-quadrature", quadrature[1].max(quadrature[2]), 1e-6));
        checks.push(Check::equals(
            "off-diagonal-count",
            (empirical[1].count + empirical[2].count) as f64,
            0.0,
        ));
        checks.push(Check::at_least("camera-agreement", camera_agreement, 1.0 - 1e-3));
    }
    let report = CameraReport {
        trajectories: n,
        localization_leak: run.leak,
        cells: CellProbabilities {
            quadrature,
            empirical,
        },
        stage1_left,
        camera_agreement,
        off_diagonal: empirical[1],
        pointer_mismatch: mismatch_rate(&finals, 0, 1),
        long_tails,
        checks,
    };
    Ok(CameraOutcome {
        report,
        field: run.field,
        ensemble: run.ensemble,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub trajectories: usize,
    pub agreement: f64,
    pub quadrature_disagreement: f64,
    /// Smallest `|<conditional, phi_i>|` over trajectories, `phi_i` chosen by
    /// the pointer region after the first stage.
    pub min_conditional_fidelity: f64,
    pub checks: Vec<Check>,
}

pub struct RepeatOutcome {
    pub report: RepeatReport,
    pub ensemble: TrajectoryEnsemble,
}

/// Measures the system twice with identical devices (the second pointer on
/// axis 2) and compares the outcomes trajectory by trajectory.
pub fn repeat_measurement(s: &MeasurementScenario, ens: &EnsembleSpec) -> Result<RepeatOutcome> {
    let second = s.camera.ok_or_else(|| Error::Config("repeat measurement needs a second pointer axis".into()))?;
    let ready2 = ready_state(second, s.pointer_width, s.ready_shape)?;
    let run = run_three_axis(s, ens, s.repeat_coupling(), ready2)?;
    let grid = run.field.grid().clone();
    let regions = cell_regions(&grid, 1, 2);
    let quadrature_disagreement = run.field.region_probability(&regions[1])? + run.field.region_probability(&regions[2])?;
    let finals = run.ensemble.finals();
    let n = finals.len();
    let agree = finals.iter().filter(|x| (x.get(1) < 0.0) == (x.get(2) < 0.0)).count();
    let agreement = agree as f64 / n as f64;

    let split = s.stage1_coupling().end;
    let k = run
        .ensemble
        .times
        .iter()
        .position(|t| (t - split).abs() < 1e-12)
        .expect("first window end is recorded");
    let (p1, p2) = s.basis()?;
    let mut min_fid = f64::INFINITY;
    for x in run.ensemble.at(k) {
        let y = x.get(1);
        let cond = conditional_separable(&run.after_first, &[(1, y), (2, x.get(2))])?;
        let target = if y < 0.0 { &p1 } else { &p2 };
        min_fid = min_fid.min(cond.fidelity(target)?);
    }

    let well_separated = s.separation >= s.min_separation && s.min_separation >= 6.0;
    let checks = if well_separated {
        vec![
            Check::equals("repeat-agreement", agreement, 1.0),
            Check::below("repeat-quadrature-disagreement", quadrature_disagreement, 1e-6),
            Check::at_least("conditional-fidelity", min_fid, 1.0 - 1e-4),
        ]
    } else {
        let p = 1.0 - quadrature_disagreement;
        vec![Check::within(
            "repeat-agreement-vs-overlap",
            agreement,
            p,
            3.0 * binomial_sigma(p, n).max(1.0 / n as f64),
        )]
    };
    Ok(RepeatOutcome {
        report: RepeatReport {
            trajectories: n,
            agreement,
            quadrature_disagreement,
            min_conditional_fidelity: min_fid,
            checks,
        },
        ensemble: run.ensemble,
    })
}

//! Protocol driver: free evolution interleaved with impulsive coupling
//! windows, with trajectories advanced in lock step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::SpectralPlan;
use crate::field::GridField;
use crate::guidance::{DenseSnapshot, EnsembleIntegrator, GuidingWave};
use crate::propagator::{
    apply_coupling_for, CouplingSchedule, CrankNicolson, HamiltonianSpec, Potential, SplitOperator,
};
use crate::separable::SeparableField;

/// A wave function that can be propagated by the protocol driver.
pub trait Evolving {
    type Wave: GuidingWave + Send + Sync;

    fn time(&self) -> f64;
    fn snapshot(&self) -> Self::Wave;
    /// One free step of length `dt` (the configured step unless it is the
    /// final partial step of a segment).
    fn free_step(&mut self, dt: f64) -> Result<()>;
    fn couple(&mut self, c: &CouplingSchedule, duration: f64) -> Result<()>;
    fn norm_squared(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    SplitOperator,
    CrankNicolson,
}

#[derive(Debug, Clone)]
enum Stepper {
    Split(SplitOperator),
    Cn(CrankNicolson),
}

impl Stepper {
    fn new(kind: Integrator, f: &GridField, h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        Ok(match kind {
            Integrator::SplitOperator => Stepper::Split(SplitOperator::new(f.spec(), h, dt)?),
            Integrator::CrankNicolson => Stepper::Cn(CrankNicolson::new(f.spec(), h, dt)?),
        })
    }

    fn step(&self, f: &mut GridField) -> Result<()> {
        match self {
            Stepper::Split(s) => s.step(f),
            Stepper::Cn(s) => s.step(f),
        }
    }
}

/// Dense grid field with a cached stepper for the configured `dt`.
#[derive(Debug, Clone)]
pub struct DenseEvolution {
    field: GridField,
    h: HamiltonianSpec,
    kind: Integrator,
    dt: f64,
    stepper: Stepper,
    plan: SpectralPlan,
}

impl DenseEvolution {
    pub fn new(field: GridField, h: HamiltonianSpec, dt: f64, kind: Integrator) -> Result<Self> {
        let stepper = Stepper::new(kind, &field, &h, dt)?;
        let plan = SpectralPlan::new(field.spec());
        Ok(DenseEvolution {
            field,
            h,
            kind,
            dt,
            stepper,
            plan,
        })
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn into_field(self) -> GridField {
        self.field
    }
}

impl Evolving for DenseEvolution {
    type Wave = DenseSnapshot;

    fn time(&self) -> f64 {
        self.field.time()
    }

    fn snapshot(&self) -> DenseSnapshot {
        DenseSnapshot::with_plan(self.field.clone(), &self.plan)
    }

    fn free_step(&mut self, dt: f64) -> Result<()> {
        if dt == self.dt {
            self.stepper.step(&mut self.field)
        } else {
            Stepper::new(self.kind, &self.field, &self.h, dt)?.step(&mut self.field)
        }
    }

    fn couple(&mut self, c: &CouplingSchedule, duration: f64) -> Result<()> {
        self.field = apply_coupling_for(&self.field, c, duration)?;
        Ok(())
    }

    fn norm_squared(&self) -> f64 {
        self.field.norm_squared()
    }
}

/// Product-state sum evolved factor by factor (separable potentials only).
#[derive(Debug, Clone)]
pub struct SeparableEvolution {
    field: SeparableField,
    h: HamiltonianSpec,
    dt: f64,
    steppers: Vec<SplitOperator>,
}

impl SeparableEvolution {
    pub fn new(field: SeparableField, h: HamiltonianSpec, dt: f64) -> Result<Self> {
        h.validate(field.grid())?;
        h.check_step(field.grid(), dt)?;
        let steppers = Self::steppers(&field, &h, dt)?;
        Ok(SeparableEvolution {
            field,
            h,
            dt,
            steppers,
        })
    }

    fn steppers(field: &SeparableField, h: &HamiltonianSpec, dt: f64) -> Result<Vec<SplitOperator>> {
        if !h.potential.is_separable() {
            return Err(Error::Config(
                "separable evolution needs a potential that separates along grid axes".into(),
            ));
        }
        (0..field.grid().dims())
            .map(|a| {
                let g = field.axis_grid(a);
                let values = h.potential.axis_values(field.grid(), a, h.masses[a])?;
                let h1 = HamiltonianSpec::free(vec![h.masses[a]]).with_potential(Potential::Tabulated { values });
                SplitOperator::new(g, &h1, dt)
            })
            .collect()
    }

    pub fn field(&self) -> &SeparableField {
        &self.field
    }

    pub fn into_field(self) -> SeparableField {
        self.field
    }
}

impl Evolving for SeparableEvolution {
    type Wave = SeparableField;

    fn time(&self) -> f64 {
        self.field.time()
    }

    fn snapshot(&self) -> SeparableField {
        self.field.clone()
    }

    fn free_step(&mut self, dt: f64) -> Result<()> {
        let fresh;
        let steppers = if dt == self.dt {
            &self.steppers
        } else {
            fresh = Self::steppers(&self.field, &self.h, dt)?;
            &fresh
        };
        for (a, op) in steppers.iter().enumerate() {
            let g = self.field.axis_grid(a).clone();
            self.field.map_axis(a, |values| {
                let mut f = GridField::new(g.clone(), std::mem::take(values), 0.0)?;
                op.step(&mut f)?;
                *values = f.into_amplitudes();
                Ok(())
            })?;
        }
        let t = self.field.time() + dt;
        self.field.set_time(t);
        Ok(())
    }

    fn couple(&mut self, c: &CouplingSchedule, duration: f64) -> Result<()> {
        self.field = self.field.apply_coupling_for(c, duration)?;
        Ok(())
    }

    fn norm_squared(&self) -> f64 {
        self.field.norm_squared()
    }
}

/// Time stepping plan. Snapshots are taken every `stride` steps (this is also
/// the trajectory RK4 step); trajectory positions are recorded every
/// `record_every` snapshots and at every segment boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub dt: f64,
    pub end_time: f64,
    pub stride: usize,
    pub record_every: usize,
    #[serde(default)]
    pub couplings: Vec<CouplingSchedule>,
}

impl Protocol {
    pub fn free(dt: f64, end_time: f64, stride: usize) -> Self {
        Protocol {
            dt,
            end_time,
            stride,
            record_every: 1,
            couplings: Vec::new(),
        }
    }

    pub fn with_couplings(mut self, couplings: Vec<CouplingSchedule>) -> Self {
        self.couplings = couplings;
        self
    }

    pub fn recording_every(mut self, n: usize) -> Self {
        self.record_every = n;
        self
    }

    pub fn validate(&self, t0: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::StepSize(format!("dt = {} must be positive", self.dt)));
        }
        if self.stride == 0 || self.record_every == 0 {
            return Err(Error::Config("stride and record interval must be at least 1".into()));
        }
        if !(self.end_time >= t0) {
            return Err(Error::Config(format!(
                "end time {} precedes start time {t0}",
                self.end_time
            )));
        }
        let mut last = t0;
        for c in self.ordered_couplings() {
            if c.start < last - 1e-12 || c.end > self.end_time + 1e-12 {
                return Err(Error::Config(format!(
                    "coupling window [{}, {}] must lie in [{last}, {}] without overlap",
                    c.start, c.end, self.end_time
                )));
            }
            last = c.end;
        }
        Ok(())
    }

    fn ordered_couplings(&self) -> Vec<&CouplingSchedule> {
        let mut cs: Vec<_> = self.couplings.iter().collect();
        cs.sort_by(|a, b| a.start.total_cmp(&b.start));
        cs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub steps: usize,
    pub snapshots: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
}

/// Runs `protocol` on `evo`, advancing `ens` (if any) in lock step and
/// calling `on_snapshot` for every snapshot including the first and last.
pub fn run_protocol<E: Evolving>(
    evo: &mut E,
    protocol: &Protocol,
    mut ens: Option<&mut EnsembleIntegrator>,
    mut on_snapshot: impl FnMut(&E::Wave) -> Result<()>,
) -> Result<ProtocolSummary> {
    protocol.validate(evo.time())?;
    let initial_norm = evo.norm_squared();
    let mut summary = ProtocolSummary {
        steps: 0,
        snapshots: 1,
        initial_norm,
        final_norm: initial_norm,
    };
    let mut prev = evo.snapshot();
    on_snapshot(&prev)?;
    if let Some(e) = ens.as_deref_mut() {
        e.record(evo.time());
    }
    let mut since_record = 0usize;

    for c in protocol.ordered_couplings() {
        free_until(
            evo,
            protocol,
            &mut prev,
            &mut ens,
            &mut summary,
            &mut since_record,
            &mut on_snapshot,
            c.start,
        )?;
        let duration = c.end - evo.time();
        evo.couple(c, duration)?;
        if let Some(e) = ens.as_deref_mut() {
            e.advance_coupling(c, duration, evo.time());
            e.record(evo.time());
        }
        prev = evo.snapshot();
        summary.snapshots += 1;
        on_snapshot(&prev)?;
    }
    free_until(
        evo,
        protocol,
        &mut prev,
        &mut ens,
        &mut summary,
        &mut since_record,
        &mut on_snapshot,
        protocol.end_time,
    )?;
    summary.final_norm = evo.norm_squared();
    Ok(summary)
}


#[allow(clippy::too_many_arguments)]
fn free_until<E: Evolving>(
    evo: &mut E,
    protocol: &Protocol,
    prev: &mut E::Wave,
    ens: &mut Option<&mut EnsembleIntegrator>,
    summary: &mut ProtocolSummary,
    since_record: &mut usize,
    on_snapshot: &mut impl FnMut(&E::Wave) -> Result<()>,
    target: f64,
) -> Result<()> {
    let span = target - evo.time();
    if span <= 1e-12 {
        return Ok(());
    }
    let n = (span / protocol.dt - 1e-9).ceil().max(1.0) as usize;
    let mut done = 0;
    while done < n {
        let chunk = protocol.stride.min(n - done);
        for j in 0..chunk {
            let dt = if done + j + 1 == n {
                target - evo.time()
            } else {
                protocol.dt
            };
            evo.free_step(dt)?;
        }
        done += chunk;
        summary.steps += chunk;
        let next = evo.snapshot();
        summary.snapshots += 1;
        on_snapshot(&next)?;
        if let Some(e) = ens.as_deref_mut() {
            e.advance(prev, &next);
            *since_record += 1;
            if *since_record >= protocol.record_every || done == n {
                e.record(evo.time());
                *since_record = 0;
            }
        }
        *prev = next;
    }
    Ok(())
}

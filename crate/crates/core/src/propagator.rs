//! Time evolution under `i d/dt psi = H psi` with `H = sum p_a^2 / 2 m_a + V`
//! plus impulsive von Neumann couplings (natural units, hbar = 1).
//!
//! Two integrators are provided. [`SplitOperator`] is the workhorse (Strang
//! splitting with a spectral kinetic step). [`CrankNicolson`] uses a
//! second-order finite-difference Laplacian and a cyclic tridiagonal solve;
//! it exists to cross-check the spectral integrator.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{for_each_mode, SpectralPlan};
use crate::field::{GridField, ZERO};
use crate::grid::{Axis, Boundary, GridSpec, Interval};

/// Maximum phase accumulated per step by either half of the splitting.
pub const STABILITY_PHASE: f64 = PI / 4.0;
/// Peak of the quartic absorbing ramp.
pub const ABSORBER_PEAK: f64 = 5.0;
/// Fraction of each axis covered by the absorbing ramp at either end.
pub const ABSORBER_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Free,
    /// `sum 1/2 m_a omega_a^2 (x_a - c_a)^2`.
    Harmonic { omega: Vec<f64>, center: Vec<f64> },
    /// Wall of height `height` perpendicular to `wall_axis` with two openings
    /// along `slit_axis`. Needs a grid of at least two axes.
    DoubleSlit {
        wall_axis: usize,
        slit_axis: usize,
        wall_position: f64,
        wall_thickness: f64,
        slit_centers: [f64; 2],
        slit_width: f64,
        height: f64,
    },
    /// Values at every grid node in row-major order.
    Tabulated { values: Vec<f64> },
}

impl Potential {
    pub fn values(&self, grid: &GridSpec, masses: &[f64]) -> Result<Vec<f64>> {
        let dims = grid.dims();
        let v = match self {
            Potential::Free => vec![0.0; grid.len()],
            Potential::Harmonic { omega, center } => {
                if omega.len() != dims || center.len() != dims {
                    return Err(Error::Config(format!(
                        "harmonic potential needs {dims} frequencies and centers"
                    )));
                }
                (0..grid.len())
                    .map(|i| {
                        let x = grid.point(i);
                        (0..dims)
                            .map(|a| 0.5 * masses[a] * (omega[a] * (x[a] - center[a])).powi(2))
                            .sum()
                    })
                    .collect()
            }
            Potential::DoubleSlit {
                wall_axis,
                slit_axis,
                wall_position,
                wall_thickness,
                slit_centers,
                slit_width,
                height,
            } => {
                if *wall_axis >= dims || *slit_axis >= dims || wall_axis == slit_axis {
                    return Err(Error::Config("double-slit barrier needs two distinct grid axes".into()));
                }
                (0..grid.len())
                    .map(|i| {
                        let x = grid.point(i);
                        let in_wall = (x[*wall_axis] - wall_position).abs() <= 0.5 * wall_thickness;
                        let in_slit = slit_centers
                            .iter()
                            .any(|c| (x[*slit_axis] - c).abs() <= 0.5 * slit_width);
                        if in_wall && !in_slit {
                            *height
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            Potential::Tabulated { values } => {
                if values.len() != grid.len() {
                    return Err(Error::Shape(format!(
                        "tabulated potential has {} values, grid has {} nodes",
                        values.len(),
                        grid.len()
                    )));
                }
                values.clone()
            }
        };
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("potential value {bad} is not finite")));
        }
        Ok(v)
    }

    /// Restriction of a separable potential to one axis.
    pub fn axis_values(&self, grid: &GridSpec, axis: usize, mass: f64) -> Result<Vec<f64>> {
        let a = grid.axes[axis];
        match self {
            Potential::Free => Ok(vec![0.0; a.points]),
            Potential::Harmonic { omega, center } => {
                if omega.len() != grid.dims() || center.len() != grid.dims() {
                    return Err(Error::Config("harmonic potential dimension mismatch".into()));
                }
                Ok(a.coords()
                    .iter()
                    .map(|x| 0.5 * mass * (omega[axis] * (x - center[axis])).powi(2))
                    .collect())
            }
            _ => Err(Error::Config("potential is not separable along grid axes".into())),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, Potential::Free | Potential::Harmonic { .. })
    }
}

/// Absorbing strength `W >= 0` on one axis (the potential gets `-i W`).
pub fn absorber_profile(axis: &Axis) -> Vec<f64> {
    let layer = ABSORBER_FRACTION * axis.length();
    axis.coords()
        .iter()
        .map(|&x| {
            let depth = (axis.min + layer - x).max(x - (axis.max - layer)).max(0.0);
            ABSORBER_PEAK * (depth / layer).powi(4)
        })
        .collect()
}

/// `W` on every node of the grid (zero for periodic grids).
pub fn absorber_values(grid: &GridSpec) -> Vec<f64> {
    if grid.boundary == Boundary::Periodic {
        return vec![0.0; grid.len()];
    }
    let profiles: Vec<Vec<f64>> = grid.axes.iter().map(absorber_profile).collect();
    (0..grid.len())
        .map(|i| {
            let idx = grid.unravel(i);
            profiles.iter().enumerate().map(|(a, p)| p[idx[a]]).sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PointerObservable {
    /// `A = first_sign * P_first + second_sign * P_second`; the two intervals
    /// must partition the system axis.
    ProjectionPair {
        first: Interval,
        first_sign: f64,
        second: Interval,
        second_sign: f64,
    },
    /// `A = x_a`.
    Linear,
}

impl PointerObservable {
    /// Two-outcome observable split at `at`: `below_sign` left of it.
    pub fn split(axis: &Axis, at: f64, below_sign: f64) -> Self {
        PointerObservable::ProjectionPair {
            first: Interval::new(axis.min - axis.dx(), at),
            first_sign: below_sign,
            second: Interval::new(at, axis.max + axis.dx()),
            second_sign: -below_sign,
        }
    }

    /// Eigenvalue of `A` at system coordinate `x`.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            PointerObservable::ProjectionPair {
                first,
                first_sign,
                second,
                second_sign,
            } => {
                if first.contains(x) {
                    *first_sign
                } else if second.contains(x) {
                    *second_sign
                } else {
                    0.0
                }
            }
            PointerObservable::Linear => x,
        }
    }
}

/// Impulsive coupling `g * A(x_a) (x) p_b` active on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSchedule {
    pub system_axis: usize,
    pub apparatus_axis: usize,
    pub strength: f64,
    pub start: f64,
    pub end: f64,
    pub observable: PointerObservable,
}

impl CouplingSchedule {
    #[inline]
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Full pointer displacement per unit eigenvalue, `g * (t1 - t0)`.
    #[inline]
    pub fn displacement(&self) -> f64 {
        self.strength * self.duration()
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.start < self.end) {
            return Err(Error::Config(format!(
                "coupling window [{}, {}] must have start < end",
                self.start, self.end
            )));
        }
        if !self.displacement().is_finite() {
            return Err(Error::Config("coupling strength times duration is not finite".into()));
        }
        let dims = grid.dims();
        if self.system_axis >= dims || self.apparatus_axis >= dims || self.system_axis == self.apparatus_axis {
            return Err(Error::Config(format!(
                "coupling axes {} -> {} invalid on a {dims}-axis grid",
                self.system_axis, self.apparatus_axis
            )));
        }
        if let PointerObservable::ProjectionPair { first, second, .. } = &self.observable {
            let axis = grid.axes[self.system_axis];
            for i in 0..axis.points {
                let x = axis.coord(i);
                if first.contains(x) == second.contains(x) {
                    return Err(Error::Config(format!(
                        "projection regions do not partition axis {} (cell at {x})",
                        self.system_axis
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bohmian velocity of the apparatus coordinate while the coupling acts:
    /// the current of `g A p_b` is `g A(x_a) |psi|^2` along `b`.
    #[inline]
    pub fn transport_velocity(&self, x: &[f64]) -> f64 {
        self.strength * self.observable.value(x[self.system_axis])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub masses: Vec<f64>,
    pub potential: Potential,
    #[serde(default)]
    pub couplings: Vec<CouplingSchedule>,
}

impl HamiltonianSpec {
    pub fn free(masses: Vec<f64>) -> Self {
        HamiltonianSpec {
            masses,
            potential: Potential::Free,
            couplings: Vec::new(),
        }
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_coupling(mut self, c: CouplingSchedule) -> Self {
        self.couplings.push(c);
        self
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.masses.len() != grid.dims() {
            return Err(Error::Config(format!(
                "{} masses given for a {}-axis grid",
                self.masses.len(),
                grid.dims()
            )));
        }
        if self.masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("masses must be positive and finite".into()));
        }
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for c in &self.couplings {
            c.validate(grid)?;
            if windows.iter().any(|&(s, e)| c.start < e && s < c.end) {
                return Err(Error::Config(format!(
                    "coupling window [{}, {}] overlaps another impulsive coupling",
                    c.start, c.end
                )));
            }
            windows.push((c.start, c.end));
        }
        Ok(())
    }

    /// Largest kinetic eigenvalue representable on the grid.
    pub fn max_kinetic(&self, grid: &GridSpec) -> f64 {
        grid.axes
            .iter()
            .zip(&self.masses)
            .map(|(a, m)| a.nyquist().powi(2) / (2.0 * m))
            .sum()
    }

    /// Complex potential `V - i W` on every node.
    pub fn complex_potential(&self, grid: &GridSpec) -> Result<Vec<C64>> {
        let v = self.potential.values(grid, &self.masses)?;
        let w = absorber_values(grid);
        Ok(v.iter().zip(&w).map(|(&v, &w)| C64::new(v, -w)).collect())
    }

    /// Largest `dt` allowed by the phase guard.
    pub fn max_stable_dt(&self, grid: &GridSpec) -> Result<f64> {
        let vmax = self
            .complex_potential(grid)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let emax = self.max_kinetic(grid).max(vmax);
        Ok(STABILITY_PHASE / emax)
    }

    pub fn check_step(&self, grid: &GridSpec, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepSize(format!("dt = {dt} must be positive")));
        }
        let limit = self.max_stable_dt(grid)?;
        if dt >= limit {
            return Err(Error::StepSize(format!(
                "dt = {dt:.3e} exceeds the phase guard limit {limit:.3e}"
            )));
        }
        Ok(())
    }

    /// `<H>` of a field (normalized by its norm), kinetic part spectral.
    pub fn energy(&self, f: &GridField) -> Result<f64> {
        let grid = f.spec();
        let plan = SpectralPlan::new(grid);
        let mut k = f.amplitudes().to_vec();
        plan.forward(&mut k);
        let masses = self.masses.clone();
        let kin_weights: Vec<f64> = {
            let mut w = vec![C64::new(0.0, 0.0); grid.len()];
            for_each_mode(grid, &mut w, |kv, z| {
                let t: f64 = kv.iter().zip(&masses).map(|(k, m)| k * k / (2.0 * m)).sum();
                *z = C64::new(t, 0.0);
            });
            w.iter().map(|z| z.re).collect()
        };
        let spec_norm: f64 = k.iter().map(|z| z.norm_sqr()).sum();
        let kinetic: f64 = k
            .iter()
            .zip(&kin_weights)
            .map(|(z, t)| z.norm_sqr() * t)
            .sum::<f64>()
            / spec_norm;
        let v = self.potential.values(grid, &self.masses)?;
        let pos_norm: f64 = f.amplitudes().iter().map(|z| z.norm_sqr()).sum();
        let potential: f64 = f
            .amplitudes()
            .iter()
            .zip(&v)
            .map(|(z, v)| z.norm_sqr() * v)
            .sum::<f64>()
            / pos_norm;
        Ok(kinetic + potential)
    }
}

/// Strang splitting `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}` with precomputed
/// phase tables.
#[derive(Debug, Clone)]
pub struct SplitOperator {
    grid: GridSpec,
    dt: f64,
    plan: SpectralPlan,
    half_potential: Vec<C64>,
    kinetic: Vec<C64>,
}

impl SplitOperator {
    pub fn new(grid: &GridSpec, h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        h.validate(grid)?;
        h.check_step(grid, dt)?;
        let half_potential = h
            .complex_potential(grid)?
            .into_iter()
            .map(|v| (C64::new(0.0, -0.5 * dt) * v).exp())
            .collect();
        let mut kinetic = vec![ZERO; grid.len()];
        let masses = h.masses.clone();
        for_each_mode(grid, &mut kinetic, |k, z| {
            let t: f64 = k.iter().zip(&masses).map(|(k, m)| k * k / (2.0 * m)).sum();
            *z = C64::from_polar(1.0, -t * dt);
        });
        Ok(SplitOperator {
            grid: grid.clone(),
            dt,
            plan: SpectralPlan::new(grid),
            half_potential,
            kinetic,
        })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, f: &mut GridField) -> Result<()> {
        if !f.spec().same_as(&self.grid) {
            return Err(Error::Shape("field grid differs from propagator grid".into()));
        }
        let t = f.time() + self.dt;
        let psi = f.amplitudes_mut();
        mul_assign(psi, &self.half_potential);
        self.plan.forward(psi);
        mul_assign(psi, &self.kinetic);
        self.plan.inverse(psi);
        mul_assign(psi, &self.half_potential);
        f.set_time(t);
        Ok(())
    }

    pub fn steps(&self, f: &mut GridField, n: usize) -> Result<()> {
        (0..n).try_for_each(|_| self.step(f))
    }
}

fn mul_assign(a: &mut [C64], b: &[C64]) {
    a.par_iter_mut().zip(b).for_each(|(x, y)| *x *= y);
}

/// One Strang step of `f` under `h`.
pub fn step_split_operator(f: &GridField, h: &HamiltonianSpec, dt: f64) -> Result<GridField> {
    let op = SplitOperator::new(f.spec(), h, dt)?;
    let mut out = f.clone();
    op.step(&mut out)?;
    Ok(out)
}

/// Cayley-form step `(1 + i H dt/2)^{-1} (1 - i H dt/2)` for a single axis,
/// periodic second-order Laplacian.
#[derive(Debug, Clone)]
struct CnAxis {
    n: usize,
    off: C64,
    rhs_diag: Vec<C64>,
    lhs_diag: Vec<C64>,
    rhs_off: C64,
}

impl CnAxis {
    fn new(axis: &Axis, mass: f64, potential: &[f64], absorber: &[f64], dt: f64) -> Self {
        let dx = axis.dx();
        let kin = 1.0 / (2.0 * mass * dx * dx);
        let half = C64::new(0.0, 0.5 * dt);
        // H_ii = 2 kin + V_i - i W_i, H_{i,i+-1} = -kin.
        let h_diag: Vec<C64> = potential
            .iter()
            .zip(absorber)
            .map(|(&v, &w)| C64::new(2.0 * kin + v, -w))
            .collect();
        CnAxis {
            n: axis.points,
            off: half * (-kin),
            lhs_diag: h_diag.iter().map(|h| 1.0 + half * h).collect(),
            rhs_diag: h_diag.iter().map(|h| 1.0 - half * h).collect(),
            rhs_off: -half * (-kin),
        }
    }

    /// Applies the step to one contiguous line in place.
    fn apply(&self, line: &mut [C64], scratch: &mut Vec<C64>) {
        let n = self.n;
        scratch.clear();
        scratch.extend((0..n).map(|i| {
            self.rhs_diag[i] * line[i] + self.rhs_off * (line[(i + n - 1) % n] + line[(i + 1) % n])
        }));
        solve_cyclic(&self.lhs_diag, self.off, scratch, line);
    }
}

/// Solves the cyclic tridiagonal system with diagonal `d`, constant off
/// diagonals `e` (including the corner entries) and right-hand side `r`,
/// via Sherman-Morrison around a Thomas solve.
fn solve_cyclic(d: &[C64], e: C64, r: &[C64], out: &mut [C64]) {
    let n = d.len();
    let gamma = -d[0];
    let mut diag = d.to_vec();
    diag[0] -= gamma;
    diag[n - 1] -= e * e / gamma;
    let mut u = vec![ZERO; n];
    u[0] = gamma;
    u[n - 1] = e;
    let x = thomas(&diag, e, r);
    let z = thomas(&diag, e, &u);
    let fact = (x[0] + e * x[n - 1] / gamma) / (1.0 + z[0] + e * z[n - 1] / gamma);
    for i in 0..n {
        out[i] = x[i] - fact * z[i];
    }
}

fn thomas(d: &[C64], e: C64, r: &[C64]) -> Vec<C64> {
    let n = d.len();
    let mut c = vec![ZERO; n];
    let mut x = vec![ZERO; n];
    let mut beta = d[0];
    x[0] = r[0] / beta;
    for i in 1..n {
        c[i] = e / beta;
        beta = d[i] - e * c[i];
        x[i] = (r[i] - e * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i + 1] * next;
    }
    x
}

/// Crank-Nicolson stepper for 1D grids and separable 2D problems (applied
/// axis by axis; the axis Hamiltonians commute).
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: GridSpec,
    dt: f64,
    axes: Vec<CnAxis>,
}

impl CrankNicolson {
    pub fn new(grid: &GridSpec, h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        h.validate(grid)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepSize(format!("dt = {dt} must be positive")));
        }
        match grid.dims() {
            1 => {}
            2 if h.potential.is_separable() => {}
            2 => {
                return Err(Error::Config(
                    "Crank-Nicolson in 2D requires a separable potential".into(),
                ))
            }
            d => {
                return Err(Error::Config(format!(
                    "Crank-Nicolson supports 1D or separable 2D grids, got {d} axes"
                )))
            }
        }
        let axes = (0..grid.dims())
            .map(|a| {
                let axis = grid.axes[a];
                let v = if grid.dims() == 1 {
                    h.potential.values(grid, &h.masses)?
                } else {
                    h.potential.axis_values(grid, a, h.masses[a])?
                };
                let w = match grid.boundary {
                    Boundary::Periodic => vec![0.0; axis.points],
                    Boundary::AbsorbingLayer => absorber_profile(&axis),
                };
                Ok(CnAxis::new(&axis, h.masses[a], &v, &w, dt))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CrankNicolson {
            grid: grid.clone(),
            dt,
            axes,
        })
    }

    pub fn step(&self, f: &mut GridField) -> Result<()> {
        if !f.spec().same_as(&self.grid) {
            return Err(Error::Shape("field grid differs from propagator grid".into()));
        }
        let t = f.time() + self.dt;
        let shape = self.grid.shape();
        let psi = f.amplitudes_mut();
        match shape.len() {
            1 => {
                let mut scratch = Vec::with_capacity(shape[0]);
                self.axes[0].apply(psi, &mut scratch);
            }
            _ => {
                let (nx, ny) = (shape[0], shape[1]);
                // Along y: contiguous rows.
                psi.par_chunks_mut(ny).for_each(|row| {
                    let mut scratch = Vec::with_capacity(ny);
                    self.axes[1].apply(row, &mut scratch);
                });
                // Along x: gather columns.
                let mut cols: Vec<Vec<C64>> = (0..ny)
                    .map(|j| (0..nx).map(|i| psi[i * ny + j]).collect())
                    .collect();
                cols.par_iter_mut().for_each(|col| {
                    let mut scratch = Vec::with_capacity(nx);
                    self.axes[0].apply(col, &mut scratch);
                });
                for (j, col) in cols.iter().enumerate() {
                    for (i, v) in col.iter().enumerate() {
                        psi[i * ny + j] = *v;
                    }
                }
            }
        }
        f.set_time(t);
        Ok(())
    }
}

/// One Crank-Nicolson step of `f` under `h`.
pub fn step_crank_nicolson(f: &GridField, h: &HamiltonianSpec, dt: f64) -> Result<GridField> {
    let op = CrankNicolson::new(f.spec(), h, dt)?;
    let mut out = f.clone();
    op.step(&mut out)?;
    Ok(out)
}

/// Evolves `f` under the coupling alone for `duration` (kinetic and
/// potential terms frozen): `psi(.., x_b, ..) -> psi(.., x_b - g A(x_a) t, ..)`.
/// The shift is spectral along the apparatus axis, hence exactly unitary
/// and linear.
pub fn apply_coupling_for(f: &GridField, c: &CouplingSchedule, duration: f64) -> Result<GridField> {
    c.validate(f.spec())?;
    let grid = f.spec();
    let (a, b) = (c.system_axis, c.apparatus_axis);
    if c.strength == 0.0 || duration == 0.0 {
        return Ok(f.clone().with_time(f.time() + duration));
    }
    let plan = SpectralPlan::new(grid);
    let mut psi = f.amplitudes().to_vec();
    plan.forward_axis(&mut psi, b);
    let kb = grid.axes[b].wavenumbers();
    let xa = grid.axes[a].coords();
    let g = c.strength * duration;
    psi.par_iter_mut().enumerate().for_each(|(flat, z)| {
        let idx = grid.unravel(flat);
        let d = g * c.observable.value(xa[idx[a]]);
        *z *= C64::from_polar(1.0, -kb[idx[b]] * d);
    });
    plan.inverse_axis(&mut psi, b);
    GridField::new(grid.clone(), psi, f.time() + duration)
}

/// Applies the full coupling window: `(sum c_i phi_i) Phi_0 -> sum c_i phi_i Phi_i`.
pub fn apply_measurement_coupling(f: &GridField, c: &CouplingSchedule) -> Result<GridField> {
    apply_coupling_for(f, c, c.duration())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gaussian_packet, plane_wave};
    use crate::grid::RegionSpec;

    fn width(f: &GridField) -> f64 {
        let spec = f.spec();
        let n = f.norm_squared();
        let dv = spec.cell_volume();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (i, z) in f.amplitudes().iter().enumerate() {
            let x = spec.point(i)[0];
            m1 += x * z.norm_sqr() * dv;
            m2 += x * x * z.norm_sqr() * dv;
        }
        (m2 / n - (m1 / n).powi(2)).sqrt()
    }

    #[test]
    fn plane_wave_picks_up_phase() {
        let axis = Axis::new(0.0, 2.0 * PI, 64).unwrap();
        let k = 3.0;
        let f = plane_wave(axis, k).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        let dt = 1e-3;
        let g = step_split_operator(&f, &h, dt).unwrap();
        let phase = C64::from_polar(1.0, -k * k * dt / 2.0);
        for (a, b) in f.amplitudes().iter().zip(g.amplitudes()) {
            assert!((a * phase - b).norm() < 1e-9);
        }
    }

    #[test]
    fn free_gaussian_width_law() {
        let axis = Axis::symmetric(40.0, 1024).unwrap();
        let sigma0 = 1.0;
        let mut f = gaussian_packet(axis, 0.0, sigma0, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        let op = SplitOperator::new(f.spec(), &h, 5e-4).unwrap();
        op.steps(&mut f, 6000).unwrap();
        let t = f.time();
        let expected = sigma0 * (1.0 + (t / (2.0 * sigma0 * sigma0)).powi(2)).sqrt();
        assert!((width(&f) / expected - 1.0).abs() < 1e-3, "{} vs {}", width(&f), expected);
    }

    #[test]
    fn harmonic_ground_state_is_stationary() {
        let axis = Axis::symmetric(10.0, 256).unwrap();
        let omega: f64 = 1.0;
        let f0 = gaussian_packet(axis, 0.0, (1.0 / (2.0 * omega)).sqrt(), 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(Potential::Harmonic {
            omega: vec![omega],
            center: vec![0.0],
        });
        let period = 2.0 * PI / omega;
        let n = 8000;
        let op = SplitOperator::new(f0.spec(), &h, period / n as f64).unwrap();
        let mut f = f0.clone();
        op.steps(&mut f, n).unwrap();
        assert!(f.fidelity(&f0).unwrap() >= 1.0 - 1e-6);
    }

    #[test]
    fn stability_guard_rejects_large_steps() {
        let axis = Axis::symmetric(10.0, 256).unwrap();
        let f = gaussian_packet(axis, 0.0, 1.0, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        let limit = h.max_stable_dt(f.spec()).unwrap();
        assert!(matches!(step_split_operator(&f, &h, 1.01 * limit), Err(Error::StepSize(_))));
        assert!(step_split_operator(&f, &h, 0.99 * limit).is_ok());
        assert!(matches!(step_split_operator(&f, &h, -1.0), Err(Error::StepSize(_))));
    }

    #[test]
    fn unitarity_per_step() {
        let axis = Axis::symmetric(10.0, 256).unwrap();
        let mut f = gaussian_packet(axis, 1.0, 0.5, 2.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(Potential::Harmonic {
            omega: vec![0.7],
            center: vec![0.0],
        });
        let op = SplitOperator::new(f.spec(), &h, 5e-4).unwrap();
        let cn = CrankNicolson::new(f.spec(), &h, 5e-4).unwrap();
        let mut g = f.clone();
        for _ in 0..50 {
            let n0 = f.norm_squared();
            op.step(&mut f).unwrap();
            assert!((f.norm_squared() - n0).abs() < 1e-10);
            let m0 = g.norm_squared();
            cn.step(&mut g).unwrap();
            assert!((g.norm_squared() - m0).abs() < 1e-10);
        }
    }

    #[test]
    fn crank_nicolson_keeps_constant_field() {
        let axis = Axis::symmetric(5.0, 64).unwrap();
        let spec = GridSpec::periodic(vec![axis]).unwrap();
        let f = GridField::from_fn(spec, |_| C64::new(0.3, 0.1));
        let g = step_crank_nicolson(&f, &HamiltonianSpec::free(vec![1.0]), 0.1).unwrap();
        for (a, b) in f.amplitudes().iter().zip(g.amplitudes()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn crank_nicolson_rejects_unsupported_shapes() {
        let a = Axis::symmetric(5.0, 16).unwrap();
        let g3 = GridSpec::periodic(vec![a, a, a]).unwrap();
        let f = GridField::zeros(g3);
        let h = HamiltonianSpec::free(vec![1.0; 3]);
        assert!(matches!(step_crank_nicolson(&f, &h, 0.01), Err(Error::Config(_))));
        let g2 = GridSpec::periodic(vec![a, a]).unwrap();
        let h2 = HamiltonianSpec::free(vec![1.0; 2]).with_potential(Potential::Tabulated {
            values: vec![0.0; g2.len()],
        });
        assert!(matches!(step_crank_nicolson(&GridField::zeros(g2), &h2, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn cyclic_solver_matches_dense_product() {
        let n = 16;
        let d: Vec<C64> = (0..n).map(|i| C64::new(3.0 + i as f64 * 0.1, 0.5)).collect();
        let e = C64::new(-0.7, 0.2);
        let x_true: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), (i as f64).cos())).collect();
        let r: Vec<C64> = (0..n)
            .map(|i| d[i] * x_true[i] + e * (x_true[(i + n - 1) % n] + x_true[(i + 1) % n]))
            .collect();
        let mut x = vec![ZERO; n];
        solve_cyclic(&d, e, &r, &mut x);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    fn pointer_grid() -> GridSpec {
        GridSpec::periodic(vec![Axis::symmetric(8.0, 128).unwrap(), Axis::symmetric(16.0, 256).unwrap()]).unwrap()
    }

    fn readout(grid: &GridSpec, c1: f64, g: f64) -> (GridField, CouplingSchedule) {
        let w = 0.5;
        let phi1 = gaussian_packet(grid.axes[0], -4.0, 0.5, 0.0).unwrap();
        let phi2 = gaussian_packet(grid.axes[0], 4.0, 0.5, 0.0).unwrap();
        let sys = phi1.combine(C64::new(c1.sqrt(), 0.0), &phi2, C64::new((1.0 - c1).sqrt(), 0.0)).unwrap();
        let pointer = gaussian_packet(grid.axes[1], 0.0, w / 2f64.sqrt(), 0.0).unwrap();
        let c = CouplingSchedule {
            system_axis: 0,
            apparatus_axis: 1,
            strength: g,
            start: 0.0,
            end: 1.0,
            observable: PointerObservable::split(&grid.axes[0], 0.0, -1.0),
        };
        (sys.tensor_product(&pointer).unwrap(), c)
    }

    #[test]
    fn coupling_zero_strength_is_identity() {
        let grid = pointer_grid();
        let (f, c) = readout(&grid, 0.3, 0.0);
        let out = apply_measurement_coupling(&f, &c).unwrap();
        assert_eq!(out.amplitudes(), f.amplitudes());
    }

    #[test]
    fn coupling_single_branch_moves_into_l() {
        let grid = pointer_grid();
        let (f, c) = readout(&grid, 1.0, 3.0);
        let out = apply_measurement_coupling(&f, &c).unwrap();
        let l = RegionSpec::below("L", &grid, 1, 0.0);
        assert!(out.region_probability(&l).unwrap() >= 1.0 - 1e-6);
        assert!((out.norm_squared() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coupling_splits_superposition() {
        let grid = pointer_grid();
        // displacement 3.0 = 6 pointer widths
        let (f, c) = readout(&grid, 0.3, 3.0);
        let out = apply_measurement_coupling(&f, &c).unwrap();
        let l = RegionSpec::below("L", &grid, 1, 0.0);
        let r = RegionSpec::above("R", &grid, 1, 0.0);
        assert!((out.region_probability(&l).unwrap() - 0.3).abs() < 1e-6);
        assert!((out.region_probability(&r).unwrap() - 0.7).abs() < 1e-6);
        // Branches evolved separately: overlap of the two outcome packets.
        let (b1, _) = readout(&grid, 1.0, 3.0);
        let (b2, _) = readout(&grid, 0.0, 3.0);
        let o1 = apply_measurement_coupling(&b1, &c).unwrap();
        let o2 = apply_measurement_coupling(&b2, &c).unwrap();
        assert!(o1.inner(&o2).unwrap().norm() <= 1e-8);
        // Linearity of the coupling.
        let sum = o1.combine(C64::new(0.3f64.sqrt(), 0.0), &o2, C64::new(0.7f64.sqrt(), 0.0)).unwrap();
        for (a, b) in sum.amplitudes().iter().zip(out.amplitudes()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn coupling_rejects_non_partition() {
        let grid = pointer_grid();
        let (f, mut c) = readout(&grid, 0.5, 1.0);
        c.observable = PointerObservable::ProjectionPair {
            first: Interval::new(-8.0, -1.0),
            first_sign: -1.0,
            second: Interval::new(1.0, 8.1),
            second_sign: 1.0,
        };
        assert!(matches!(apply_measurement_coupling(&f, &c), Err(Error::Config(_))));
    }
}

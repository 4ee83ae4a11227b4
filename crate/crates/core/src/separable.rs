//! Wave functions stored as short sums of product states,
//! `psi = sum_j c_j f_j0(x_0) f_j1(x_1) ...`.
//!
//! Free evolution under a separable Hamiltonian acts factor by factor and a
//! projection-pair coupling splits every term into two, so the measurement
//! chains (system, pointer, camera) never need the dense joint grid. Region
//! integrals reduce to products of one-axis overlaps.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{spectral_derivative, SpectralPlan};
use crate::field::{GridField, ZERO};
use crate::grid::{GridSpec, RegionSpec, MAX_AXES};
use crate::interp::cubic_stencil;
use crate::propagator::{CouplingSchedule, PointerObservable};

/// One-axis factor with its spectral derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub values: Vec<C64>,
    pub grad: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub coeff: C64,
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone)]
pub struct SeparableField {
    grid: GridSpec,
    terms: Vec<ProductTerm>,
    time: f64,
    plans: Vec<SpectralPlan>,
    axis_grids: Vec<GridSpec>,
}

impl SeparableField {
    /// Single product state from one-axis fields (axes in order).
    pub fn product(factors: &[&GridField]) -> Result<Self> {
        let mut axes = Vec::with_capacity(factors.len());
        for f in factors {
            if f.spec().dims() != 1 {
                return Err(Error::Shape("product factors must be one-axis fields".into()));
            }
            axes.push(f.spec().axes[0]);
        }
        let boundary = factors.first().map(|f| f.spec().boundary).unwrap_or_default();
        let grid = GridSpec::new(axes, boundary)?;
        let mut out = Self::empty(grid)?;
        let term = ProductTerm {
            coeff: C64::new(1.0, 0.0),
            factors: factors
                .iter()
                .enumerate()
                .map(|(a, f)| out.make_factor(a, f.amplitudes().to_vec()))
                .collect(),
        };
        out.terms.push(term);
        out.time = factors.first().map(|f| f.time()).unwrap_or(0.0);
        Ok(out)
    }

    pub fn empty(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let axis_grids = (0..grid.dims())
            .map(|a| grid.sub_grid(&[a]))
            .collect::<Result<Vec<_>>>()?;
        let plans = axis_grids.iter().map(SpectralPlan::new).collect();
        Ok(SeparableField {
            grid,
            terms: Vec::new(),
            time: 0.0,
            plans,
            axis_grids,
        })
    }

    fn make_factor(&self, axis: usize, values: Vec<C64>) -> Factor {
        let grad = spectral_derivative(&self.plans[axis], &self.axis_grids[axis], &values, 0);
        Factor { values, grad }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn axis_grid(&self, axis: usize) -> &GridSpec {
        &self.axis_grids[axis]
    }

    /// `a * self + b * other` (term lists concatenated).
    pub fn superpose(&self, a: C64, other: &SeparableField, b: C64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::Shape("separable fields live on different grids".into()));
        }
        let mut out = self.clone();
        out.terms.iter_mut().for_each(|t| t.coeff *= a);
        out.terms.extend(other.terms.iter().cloned().map(|mut t| {
            t.coeff *= b;
            t
        }));
        Ok(out)
    }

    pub fn scaled(mut self, c: C64) -> Self {
        self.terms.iter_mut().for_each(|t| t.coeff *= c);
        self
    }

    /// Term-pair overlap restricted to `r`:
    /// `sum_jk conj(c_j) c_k prod_a <f_ja, g_ka>_{r_a}`.
    fn region_form(&self, other: &SeparableField, r: &RegionSpec) -> Result<C64> {
        r.check_within(&self.grid)?;
        let masks = r.axis_masks(&self.grid);
        let dv: Vec<f64> = self.grid.axes.iter().map(|a| a.dx()).collect();
        let pairs: Vec<(usize, usize)> = (0..self.terms.len())
            .flat_map(|j| (0..other.terms.len()).map(move |k| (j, k)))
            .collect();
        let total = pairs
            .par_iter()
            .map(|&(j, k)| {
                let (tj, tk) = (&self.terms[j], &other.terms[k]);
                let mut prod = tj.coeff.conj() * tk.coeff;
                for a in 0..self.grid.dims() {
                    let s: C64 = tj.factors[a]
                        .values
                        .iter()
                        .zip(&tk.factors[a].values)
                        .zip(&masks[a])
                        .filter(|(_, &m)| m)
                        .map(|((f, g), _)| f.conj() * g)
                        .sum();
                    prod *= s * dv[a];
                }
                prod
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(ZERO, |acc, z| acc + z);
        Ok(total)
    }

    pub fn norm_squared(&self) -> f64 {
        let all = RegionSpec::whole("all", self.grid.dims());
        self.region_form(self, &all).map(|z| z.re).unwrap_or(0.0)
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm_squared();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain(format!("cannot normalize a field with norm^2 {n}")));
        }
        Ok(self.scaled(C64::new(1.0 / n.sqrt(), 0.0)))
    }

    pub fn region_probability(&self, r: &RegionSpec) -> Result<f64> {
        Ok(self.region_form(self, r)?.re)
    }

    pub fn region_inner(&self, other: &SeparableField, r: &RegionSpec) -> Result<C64> {
        self.region_form(other, r)
    }

    pub fn inner(&self, other: &SeparableField) -> Result<C64> {
        self.region_form(other, &RegionSpec::whole("all", self.grid.dims()))
    }

    /// Dense expansion; only sensible for small grids.
    pub fn to_dense(&self) -> Result<GridField> {
        let grid = self.grid.clone();
        let dims = grid.dims();
        let amps = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let idx = grid.unravel(flat);
                self.terms
                    .iter()
                    .map(|t| {
                        (0..dims).fold(t.coeff, |acc, a| acc * t.factors[a].values[idx[a]])
                    })
                    .sum()
            })
            .collect();
        Ok(GridField::new(grid.clone(), amps, self.time)?)
    }

    /// Amplitude and gradient at an arbitrary point.
    pub fn local(&self, x: &[f64]) -> (C64, [C64; MAX_AXES]) {
        let dims = self.grid.dims();
        let mut stencils = [([0usize; 4], [0.0f64; 4]); MAX_AXES];
        for a in 0..dims {
            stencils[a] = cubic_stencil(&self.grid.axes[a], x[a]);
        }
        let mut psi = ZERO;
        let mut grad = [ZERO; MAX_AXES];
        for t in &self.terms {
            let mut val = [ZERO; MAX_AXES];
            let mut der = [ZERO; MAX_AXES];
            for a in 0..dims {
                let (idx, w) = stencils[a];
                let f = &t.factors[a];
                for p in 0..4 {
                    val[a] += f.values[idx[p]] * w[p];
                    der[a] += f.grad[idx[p]] * w[p];
                }
            }
            let prod: C64 = val[..dims].iter().product::<C64>() * t.coeff;
            psi += prod;
            for a in 0..dims {
                let mut g = t.coeff * der[a];
                for (b, v) in val[..dims].iter().enumerate() {
                    if b != a {
                        g *= v;
                    }
                }
                grad[a] += g;
            }
        }
        (psi, grad)
    }

    /// Upper bound on `max |psi|` (triangle inequality over terms).
    pub fn max_abs_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coeff.norm()
                    * t.factors
                        .iter()
                        .map(|f| f.values.iter().map(|z| z.norm()).fold(0.0, f64::max))
                        .product::<f64>()
            })
            .sum()
    }

    /// Replaces every factor on `axis` by `op(values)`, refreshing gradients.
    pub fn map_axis(&mut self, axis: usize, op: impl Fn(&mut Vec<C64>) -> Result<()> + Sync) -> Result<()> {
        let plan = &self.plans[axis];
        let g = &self.axis_grids[axis];
        self.terms.par_iter_mut().try_for_each(|t| {
            let f = &mut t.factors[axis];
            op(&mut f.values)?;
            f.grad = spectral_derivative(plan, g, &f.values, 0);
            Ok(())
        })
    }

    /// Drops terms whose amplitude is exactly zero.
    fn prune(&mut self) {
        self.terms.retain(|t| {
            t.coeff != ZERO && t.factors.iter().all(|f| f.values.iter().any(|z| *z != ZERO))
        });
    }

    /// Impulsive projection-pair coupling acting for `duration`: each term is
    /// split by the two projections on the system axis and the apparatus
    /// factor of each piece is shifted by `sign * g * duration`.
    pub fn apply_coupling_for(&self, c: &CouplingSchedule, duration: f64) -> Result<Self> {
        c.validate(&self.grid)?;
        let PointerObservable::ProjectionPair {
            first,
            first_sign,
            second,
            second_sign,
        } = &c.observable
        else {
            return Err(Error::Config(
                "a linear pointer coupling does not preserve product structure; use a dense grid".into(),
            ));
        };
        let (a, b) = (c.system_axis, c.apparatus_axis);
        let axis_a = self.grid.axes[a];
        let mut out = self.clone();
        out.terms.clear();
        for t in &self.terms {
            for (iv, sign) in [(first, *first_sign), (second, *second_sign)] {
                let mut term = t.clone();
                let fa: Vec<C64> = t.factors[a]
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, z)| if iv.contains(axis_a.coord(i)) { *z } else { ZERO })
                    .collect();
                term.factors[a] = self.make_factor(a, fa);
                let shifted = shift_line(&self.plans[b], &self.grid.axes[b], &t.factors[b].values, sign * c.strength * duration);
                term.factors[b] = self.make_factor(b, shifted);
                out.terms.push(term);
            }
        }
        out.prune();
        out.time = self.time + duration;
        Ok(out)
    }

    /// Fixes the listed axes at actual coordinates and returns the dense
    /// (unnormalized) field on the remaining axes.
    pub fn slice(&self, fixed: &[(usize, f64)]) -> Result<GridField> {
        let dims = self.grid.dims();
        let mut fixed_at = [None; MAX_AXES];
        for &(a, v) in fixed {
            if a >= dims || fixed_at[a].is_some() {
                return Err(Error::Config(format!("invalid fixed axis {a}")));
            }
            if !self.grid.axes[a].contains(v) {
                return Err(Error::Domain(format!("fixed coordinate {v} outside axis {a}")));
            }
            fixed_at[a] = Some(v);
        }
        let keep: Vec<usize> = (0..dims).filter(|&a| fixed_at[a].is_none()).collect();
        if keep.is_empty() || keep.len() == dims {
            return Err(Error::Config("slice must fix at least one and leave at least one axis".into()));
        }
        let sub = self.grid.sub_grid(&keep)?;
        let weights: Vec<C64> = self
            .terms
            .iter()
            .map(|t| {
                let mut w = t.coeff;
                for a in 0..dims {
                    if let Some(v) = fixed_at[a] {
                        let (idx, wt) = cubic_stencil(&self.grid.axes[a], v);
                        w *= (0..4).map(|p| t.factors[a].values[idx[p]] * wt[p]).sum::<C64>();
                    }
                }
                w
            })
            .collect();
        let amps = (0..sub.len())
            .map(|flat| {
                let idx = sub.unravel(flat);
                self.terms
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| {
                        keep.iter()
                            .enumerate()
                            .fold(*w, |acc, (k, &a)| acc * t.factors[a].values[idx[k]])
                    })
                    .sum()
            })
            .collect();
        GridField::new(sub, amps, self.time)
    }
}

/// `f(x) -> f(x - d)` by a Fourier phase ramp (exact roll for whole cells).
pub fn shift_line(plan: &SpectralPlan, axis: &crate::grid::Axis, values: &[C64], d: f64) -> Vec<C64> {
    if d == 0.0 {
        return values.to_vec();
    }
    let mut work = values.to_vec();
    plan.forward(&mut work);
    for (z, k) in work.iter_mut().zip(axis.wavenumbers()) {
        *z *= C64::from_polar(1.0, -k * d);
    }
    plan.inverse(&mut work);
    work
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use crate::grid::Axis;
    use crate::propagator::apply_coupling_for;

    fn three_factors() -> (GridField, GridField, GridField) {
        (
            gaussian_packet(Axis::symmetric(8.0, 32).unwrap(), -1.0, 0.8, 0.3).unwrap(),
            gaussian_packet(Axis::symmetric(8.0, 32).unwrap(), 0.0, 0.6, 0.0).unwrap(),
            gaussian_packet(Axis::symmetric(8.0, 32).unwrap(), 0.5, 0.7, -0.4).unwrap(),
        )
    }

    #[test]
    fn product_matches_dense_tensor_product() {
        let (f, g, h) = three_factors();
        let sep = SeparableField::product(&[&f, &g, &h]).unwrap();
        let dense = f.tensor_product(&g).unwrap().tensor_product(&h).unwrap();
        let exp = sep.to_dense().unwrap();
        for (a, b) in dense.amplitudes().iter().zip(exp.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!((sep.norm_squared() - 1.0).abs() < 1e-10);
        let r = RegionSpec::below("L", sep.grid(), 1, 0.0).with_interval(2, crate::grid::Interval::new(0.0, 8.5));
        let p_sep = sep.region_probability(&r).unwrap();
        let p_dense = dense.region_probability(&r).unwrap();
        assert!((p_sep - p_dense).abs() < 1e-12);
    }

    #[test]
    fn coupling_matches_dense_coupling() {
        let (f, g, h) = three_factors();
        let f2 = gaussian_packet(f.spec().axes[0], 2.0, 0.5, 0.0).unwrap();
        let a = SeparableField::product(&[&f, &g, &h]).unwrap();
        let b = SeparableField::product(&[&f2, &g, &h]).unwrap();
        let sep = a.superpose(C64::new(0.6, 0.0), &b, C64::new(0.0, 0.8)).unwrap();
        let c = CouplingSchedule {
            system_axis: 0,
            apparatus_axis: 2,
            strength: 1.3,
            start: 0.0,
            end: 1.0,
            observable: PointerObservable::split(&sep.grid().axes[0], 0.25, -1.0),
        };
        let out_sep = sep.apply_coupling_for(&c, 1.0).unwrap().to_dense().unwrap();
        let out_dense = apply_coupling_for(&sep.to_dense().unwrap(), &c, 1.0).unwrap();
        for (x, y) in out_sep.amplitudes().iter().zip(out_dense.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn local_value_and_gradient_match_dense_on_nodes() {
        let (f, g, h) = three_factors();
        let sep = SeparableField::product(&[&f, &g, &h]).unwrap();
        let grid = sep.grid().clone();
        let x = grid.point(5 * 32 * 32 + 17 * 32 + 9);
        let (psi, grad) = sep.local(&x[..3]);
        assert!((psi - f.amplitudes()[5] * g.amplitudes()[17] * h.amplitudes()[9]).norm() < 1e-14);
        // Analytic x-derivative of the first Gaussian factor.
        let d0 = f.amplitudes()[5] * C64::new(-(x[0] + 1.0) / (2.0 * 0.64), 0.3);
        assert!((grad[0] - d0 * g.amplitudes()[17] * h.amplitudes()[9]).norm() < 1e-6);
    }

    #[test]
    fn slice_of_product_is_remaining_factors() {
        let (f, g, h) = three_factors();
        let sep = SeparableField::product(&[&f, &g, &h]).unwrap();
        let s = sep.slice(&[(0, -0.7), (1, 0.2)]).unwrap().normalized().unwrap();
        assert!((s.fidelity(&h).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn whole_cell_shift_is_a_roll() {
        let axis = Axis::symmetric(8.0, 32).unwrap();
        let g = GridSpec::periodic(vec![axis]).unwrap();
        let plan = SpectralPlan::new(&g);
        let v: Vec<C64> = (0..32).map(|i| C64::new(if i < 10 { 1.0 } else { 0.0 }, 0.0)).collect();
        let s = shift_line(&plan, &axis, &v, 3.0 * axis.dx());
        for i in 0..32 {
            assert!((s[(i + 3) % 32] - v[i]).norm() < 1e-13);
        }
    }
}

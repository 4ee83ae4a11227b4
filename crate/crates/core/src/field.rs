//! Complex fields sampled on a [`GridSpec`]: norms, inner products, region
//! integrals and tensor products.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Axis, GridSpec, RegionSpec, MAX_AXES};
use crate::interp::cubic_stencil;

pub const ZERO: C64 = C64::new(0.0, 0.0);

const SUM_CHUNK: usize = 4096;

/// Sum of `f(i)` over `0..n` in fixed chunks, so the rounding does not
/// depend on the number of threads.
pub(crate) fn chunked_sum<T>(n: usize, f: impl Fn(usize) -> T + Sync) -> T
where
    T: std::iter::Sum + Send,
{
    (0..n.div_ceil(SUM_CHUNK))
        .into_par_iter()
        .map(|c| (c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(n)).map(&f).sum::<T>())
        .collect::<Vec<T>>()
        .into_iter()
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    amplitudes: Vec<C64>,
    time: f64,
}

impl GridField {
    pub fn new(spec: GridSpec, amplitudes: Vec<C64>, time: f64) -> Result<Self> {
        if amplitudes.len() != spec.len() {
            return Err(Error::Shape(format!(
                "amplitude array has {} entries, grid needs {}",
                amplitudes.len(),
                spec.len()
            )));
        }
        Ok(GridField {
            spec,
            amplitudes,
            time,
        })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        GridField {
            spec,
            amplitudes: vec![ZERO; n],
            time: 0.0,
        }
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> C64 + Sync) -> Self {
        let dims = spec.dims();
        let amplitudes = (0..spec.len())
            .into_par_iter()
            .map(|i| f(&spec.point(i)[..dims]))
            .collect();
        GridField {
            spec,
            amplitudes,
            time: 0.0,
        }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    #[inline]
    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    /// `sum |psi|^2 * prod dx`.
    pub fn norm_squared(&self) -> f64 {
        chunked_sum(self.amplitudes.len(), |i| self.amplitudes[i].norm_sqr()) * self.spec.cell_volume()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_squared();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain(format!("cannot normalize a field with norm^2 {n}")));
        }
        let s = 1.0 / n.sqrt();
        self.amplitudes.par_iter_mut().for_each(|z| *z *= s);
        Ok(self)
    }

    pub fn scaled(mut self, c: C64) -> Self {
        self.amplitudes.par_iter_mut().for_each(|z| *z *= c);
        self
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: C64, other: &GridField, b: C64) -> Result<GridField> {
        self.check_same_grid(other)?;
        let amplitudes = self
            .amplitudes
            .par_iter()
            .zip(&other.amplitudes)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(GridField {
            spec: self.spec.clone(),
            amplitudes,
            time: self.time,
        })
    }

    pub fn check_same_grid(&self, other: &GridField) -> Result<()> {
        if self.spec.same_as(&other.spec) {
            Ok(())
        } else {
            Err(Error::Shape("fields live on different grids".into()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.amplitudes
            .par_iter()
            .map(|z| z.norm())
            .reduce(|| 0.0, f64::max)
    }

    /// `<self, other> = integral of conj(self) * other`.
    pub fn inner(&self, other: &GridField) -> Result<C64> {
        self.check_same_grid(other)?;
        let (a, b) = (&self.amplitudes, &other.amplitudes);
        let s: C64 = chunked_sum(a.len(), |i| a[i].conj() * b[i]);
        Ok(s * self.spec.cell_volume())
    }

    /// `|<self, other>|` for normalized fields.
    pub fn fidelity(&self, other: &GridField) -> Result<f64> {
        let n = (self.norm_squared() * other.norm_squared()).sqrt();
        Ok(self.inner(other)?.norm() / n)
    }

    fn region_mask(&self, r: &RegionSpec) -> Result<Vec<Vec<bool>>> {
        r.check_within(&self.spec)?;
        Ok(r.axis_masks(&self.spec))
    }

    #[inline]
    fn in_mask(&self, masks: &[Vec<bool>], flat: usize) -> bool {
        let idx = self.spec.unravel(flat);
        masks.iter().enumerate().all(|(a, m)| m[idx[a]])
    }

    /// `integral over r of |psi|^2`. For a normalized field this is the
    /// probability of finding the configuration in `r`.
    pub fn region_probability(&self, r: &RegionSpec) -> Result<f64> {
        let masks = self.region_mask(r)?;
        let a = &self.amplitudes;
        let s: f64 = chunked_sum(a.len(), |i| if self.in_mask(&masks, i) { a[i].norm_sqr() } else { 0.0 });
        Ok(s * self.spec.cell_volume())
    }

    /// `integral over r of conj(self) * other`.
    pub fn region_inner(&self, other: &GridField, r: &RegionSpec) -> Result<C64> {
        self.check_same_grid(other)?;
        let masks = self.region_mask(r)?;
        let (a, b) = (&self.amplitudes, &other.amplitudes);
        let s: C64 = chunked_sum(a.len(), |i| {
            if self.in_mask(&masks, i) {
                a[i].conj() * b[i]
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Ok(s * self.spec.cell_volume())
    }

    /// Cauchy-Schwarz bound `sqrt(int_r |f|^2) * sqrt(int_r |g|^2)` on
    /// `|int_r conj(f) g|`.
    pub fn cross_term_bound(&self, other: &GridField, r: &RegionSpec) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok((self.region_probability(r)? * other.region_probability(r)?).sqrt())
    }

    /// Product state on the joint grid, axes of `self` first.
    pub fn tensor_product(&self, other: &GridField) -> Result<GridField> {
        let spec = self.spec.product(&other.spec)?;
        let m = other.amplitudes.len();
        let amplitudes = (0..spec.len())
            .into_par_iter()
            .map(|i| self.amplitudes[i / m] * other.amplitudes[i % m])
            .collect();
        Ok(GridField {
            spec,
            amplitudes,
            time: self.time,
        })
    }

    /// Density `|psi|^2` integrated over all axes not in `keep`, returned on
    /// the kept sub-grid in row-major order.
    pub fn marginal(&self, keep: &[usize]) -> Result<Vec<f64>> {
        if keep.iter().any(|&a| a >= self.spec.dims()) || keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("marginal axes must be increasing and on the grid".into()));
        }
        let sub = self.spec.sub_grid(keep)?;
        let sub_strides = sub.strides();
        let traced: f64 = (0..self.spec.dims())
            .filter(|a| !keep.contains(a))
            .map(|a| self.spec.axes[a].dx())
            .product();
        let mut out = vec![0.0; sub.len()];
        for (flat, z) in self.amplitudes.iter().enumerate() {
            let idx = self.spec.unravel(flat);
            let j: usize = keep.iter().zip(&sub_strides).map(|(&a, s)| idx[a] * s).sum();
            out[j] += z.norm_sqr();
        }
        out.iter_mut().for_each(|v| *v *= traced);
        Ok(out)
    }

    /// Cubic interpolation of an arbitrary per-node array at `x`.
    pub(crate) fn interpolate(spec: &GridSpec, data: &[C64], x: &[f64]) -> C64 {
        let dims = spec.dims();
        let strides = spec.strides();
        let mut stencils = [([0usize; 4], [0.0f64; 4]); MAX_AXES];
        for a in 0..dims {
            stencils[a] = cubic_stencil(&spec.axes[a], x[a]);
        }
        match dims {
            1 => {
                let (i, w) = stencils[0];
                (0..4).map(|p| data[i[p]] * w[p]).sum()
            }
            2 => {
                let ((i0, w0), (i1, w1)) = (stencils[0], stencils[1]);
                let mut s = ZERO;
                for p in 0..4 {
                    let row = i0[p] * strides[0];
                    let mut r = ZERO;
                    for q in 0..4 {
                        r += data[row + i1[q]] * w1[q];
                    }
                    s += r * w0[p];
                }
                s
            }
            _ => {
                let ((i0, w0), (i1, w1), (i2, w2)) = (stencils[0], stencils[1], stencils[2]);
                let mut s = ZERO;
                for p in 0..4 {
                    for q in 0..4 {
                        let base = i0[p] * strides[0] + i1[q] * strides[1];
                        let mut r = ZERO;
                        for u in 0..4 {
                            r += data[base + i2[u]] * w2[u];
                        }
                        s += r * (w0[p] * w1[q]);
                    }
                }
                s
            }
        }
    }

    /// Amplitude at an arbitrary point (cubic interpolation).
    pub fn value_at(&self, x: &[f64]) -> C64 {
        Self::interpolate(&self.spec, &self.amplitudes, x)
    }

    /// Fixes the listed axes at the given coordinates and returns the
    /// (unnormalized) field on the remaining axes. Off-node coordinates are
    /// interpolated cubically.
    pub fn slice(&self, fixed: &[(usize, f64)]) -> Result<GridField> {
        let dims = self.spec.dims();
        if fixed.is_empty() || fixed.len() >= dims {
            return Err(Error::Config(format!(
                "slice must fix between 1 and {} axes",
                dims - 1
            )));
        }
        let mut is_fixed = [None; MAX_AXES];
        for &(a, v) in fixed {
            if a >= dims || is_fixed[a].is_some() {
                return Err(Error::Config(format!("invalid fixed axis {a}")));
            }
            if !self.spec.axes[a].contains(v) {
                return Err(Error::Domain(format!("fixed coordinate {v} outside axis {a}")));
            }
            is_fixed[a] = Some(v);
        }
        let keep: Vec<usize> = (0..dims).filter(|&a| is_fixed[a].is_none()).collect();
        let sub = self.spec.sub_grid(&keep)?;
        let amplitudes = (0..sub.len())
            .into_par_iter()
            .map(|j| {
                let p = sub.point(j);
                let mut x = [0.0; MAX_AXES];
                let mut k = 0;
                for a in 0..dims {
                    x[a] = match is_fixed[a] {
                        Some(v) => v,
                        None => {
                            k += 1;
                            p[k - 1]
                        }
                    };
                }
                // Free axes sit on nodes; only fixed axes get non-trivial
                // weights.
                self.value_at(&x[..dims])
            })
            .collect();
        GridField::new(sub, amplitudes, self.time)
    }
}

/// Normalized Gaussian packet on one axis: `|psi|^2` has standard deviation
/// `sigma`, mean `center`, and the packet carries mean momentum `k0`.
pub fn gaussian_packet(axis: Axis, center: f64, sigma: f64, k0: f64) -> Result<GridField> {
    let spec = GridSpec::periodic(vec![axis])?;
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    let f = GridField::from_fn(spec, |x| {
        let d = x[0] - center;
        C64::from_polar(norm * (-d * d / (4.0 * sigma * sigma)).exp(), k0 * x[0])
    });
    f.normalized()
}

/// Plane wave `exp(i k x)` normalized on the box.
pub fn plane_wave(axis: Axis, k: f64) -> Result<GridField> {
    let spec = GridSpec::periodic(vec![axis])?;
    GridField::from_fn(spec, |x| C64::from_polar(1.0, k * x[0])).normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Interval;
    use proptest::prelude::*;

    fn axis() -> Axis {
        Axis::symmetric(10.0, 256).unwrap()
    }

    #[test]
    fn gaussian_norms() {
        let g = gaussian_packet(axis(), 0.3, 0.8, 1.5).unwrap();
        assert!((g.norm_squared() - 1.0).abs() < 1e-9);
        let z = GridField::zeros(g.spec().clone());
        assert_eq!(z.norm_squared(), 0.0);
        let g2 = g.clone().scaled(C64::new(2.0, 0.0));
        assert!((g2.norm_squared() - 4.0).abs() < 1e-8);
    }

    #[test]
    fn region_probabilities() {
        let g = gaussian_packet(axis(), -5.0, 0.4, 0.0).unwrap();
        let spec = g.spec().clone();
        let l = RegionSpec::below("L", &spec, 0, 0.0);
        let r = RegionSpec::above("R", &spec, 0, 0.0);
        assert!(g.region_probability(&l).unwrap() >= 1.0 - 1e-6);
        assert!(g.region_probability(&r).unwrap() <= 1e-6);

        let sym = gaussian_packet(axis(), 0.0, 1.3, 0.0).unwrap();
        assert!((sym.region_probability(&l).unwrap() - 0.5).abs() < 1e-8);

        let far = RegionSpec::on_axis("far", 1, 0, Interval::new(20.0, 30.0));
        assert!(matches!(g.region_probability(&far), Err(Error::Domain(_))));
    }

    #[test]
    fn cross_term_bound_cases() {
        let g = gaussian_packet(axis(), 0.0, 1.0, 0.7).unwrap();
        let all = RegionSpec::whole("all", 1);
        assert!((g.cross_term_bound(&g, &all).unwrap() - 1.0).abs() < 1e-9);

        let a = gaussian_packet(axis(), -6.0, 0.3, 0.0).unwrap();
        let b = gaussian_packet(axis(), 6.0, 0.3, 0.0).unwrap();
        // Disjoint supports: on either half space one side of the bound vanishes.
        let left = RegionSpec::below("L", a.spec(), 0, 0.0);
        let right = RegionSpec::above("R", a.spec(), 0, 0.0);
        assert!(a.cross_term_bound(&b, &left).unwrap() < 1e-12);
        assert!(a.cross_term_bound(&b, &right).unwrap() < 1e-12);
        assert!(a.inner(&b).unwrap().norm() < 1e-12);

        // Overlapping pair on a half space: direct quadrature of both sides.
        let f = gaussian_packet(axis(), -0.5, 1.0, 0.4).unwrap();
        let h = gaussian_packet(axis(), 0.7, 0.8, -0.9).unwrap();
        let half = RegionSpec::above("R", f.spec(), 0, 0.0);
        let dx = f.spec().cell_volume();
        let mut cross = ZERO;
        let (mut nf, mut nh) = (0.0, 0.0);
        for i in 0..f.spec().len() {
            if f.spec().point(i)[0] >= 0.0 {
                cross += f.amplitudes()[i].conj() * h.amplitudes()[i] * dx;
                nf += f.amplitudes()[i].norm_sqr() * dx;
                nh += h.amplitudes()[i].norm_sqr() * dx;
            }
        }
        let bound = f.cross_term_bound(&h, &half).unwrap();
        assert!((bound - (nf * nh).sqrt()).abs() < 1e-12);
        assert!(bound >= cross.norm());
        assert!((f.region_inner(&h, &half).unwrap() - cross).norm() < 1e-12);
    }

    #[test]
    fn cross_term_bound_grid_mismatch() {
        let a = gaussian_packet(axis(), 0.0, 1.0, 0.0).unwrap();
        let b = gaussian_packet(Axis::symmetric(5.0, 256).unwrap(), 0.0, 1.0, 0.0).unwrap();
        let all = RegionSpec::whole("all", 1);
        assert!(matches!(a.cross_term_bound(&b, &all), Err(Error::Shape(_))));
    }

    #[test]
    fn tensor_product_marginal() {
        let f = gaussian_packet(Axis::symmetric(6.0, 64).unwrap(), 1.0, 0.7, 0.5).unwrap();
        let g = gaussian_packet(Axis::symmetric(4.0, 32).unwrap(), -0.5, 0.4, 0.0).unwrap();
        let fg = f.tensor_product(&g).unwrap();
        assert!((fg.norm_squared() - 1.0).abs() < 1e-8);
        let marg = fg.marginal(&[0]).unwrap();
        // Quadrature oracle: sum over the second factor by hand.
        let dy = g.spec().cell_volume();
        for (i, m) in marg.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..32 {
                s += (f.amplitudes()[i] * g.amplitudes()[j]).norm_sqr() * dy;
            }
            assert!((m - s).abs() < 1e-8);
            assert!((m - f.amplitudes()[i].norm_sqr()).abs() < 1e-8);
        }
        let zero = GridField::zeros(g.spec().clone());
        assert_eq!(f.tensor_product(&zero).unwrap().norm_squared(), 0.0);
        let three = fg.tensor_product(&g).unwrap();
        assert!(three.tensor_product(&g).is_err());
    }

    #[test]
    fn slice_of_product_is_factor() {
        let f = gaussian_packet(Axis::symmetric(6.0, 64).unwrap(), 1.0, 0.7, 0.5).unwrap();
        let g = gaussian_packet(Axis::symmetric(4.0, 64).unwrap(), -0.5, 0.6, 0.0).unwrap();
        let fg = f.tensor_product(&g).unwrap();
        let s = fg.slice(&[(1, -0.33)]).unwrap().normalized().unwrap();
        assert!((s.fidelity(&f).unwrap() - 1.0).abs() < 1e-9);
    }

    fn arb_field() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32)
    }

    proptest! {
        #[test]
        fn disjoint_cover_sums_to_one(amps in arb_field(), split in -3.9f64..3.9) {
            let spec = GridSpec::periodic(vec![Axis::symmetric(4.0, 32).unwrap()]).unwrap();
            let f = GridField::new(spec.clone(), amps.iter().map(|&(a, b)| C64::new(a, b)).collect(), 0.0).unwrap();
            prop_assume!(f.norm_squared() > 1e-6);
            let f = f.normalized().unwrap();
            let l = RegionSpec::below("L", &spec, 0, split);
            let r = RegionSpec::above("R", &spec, 0, split);
            let total = f.region_probability(&l).unwrap() + f.region_probability(&r).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-8);
        }

        #[test]
        fn cauchy_schwarz_holds(a in arb_field(), b in arb_field(), lo in -4.0f64..0.0, width in 0.1f64..4.0) {
            let spec = GridSpec::periodic(vec![Axis::symmetric(4.0, 32).unwrap()]).unwrap();
            let f = GridField::new(spec.clone(), a.iter().map(|&(x, y)| C64::new(x, y)).collect(), 0.0).unwrap();
            let g = GridField::new(spec.clone(), b.iter().map(|&(x, y)| C64::new(x, y)).collect(), 0.0).unwrap();
            let r = RegionSpec::on_axis("r", 1, 0, Interval::new(lo, lo + width));
            let actual = f.region_inner(&g, &r).unwrap().norm();
            prop_assert!(actual <= f.cross_term_bound(&g, &r).unwrap() + 1e-10);
        }
    }
}

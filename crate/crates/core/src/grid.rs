//! Uniform configuration-space grids and axis-aligned regions.
//!
//! Sample points are cell centers: point `i` of an axis sits at
//! `min + (i + 1/2) * dx` with `dx = (max - min) / points`. Region membership
//! of a cell is decided by containment of its center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_AXES: usize = 3;
pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        let axis = Axis { min, max, points };
        axis.validate()?;
        Ok(axis)
    }

    /// Symmetric axis `[-half, half]`.
    pub fn symmetric(half: f64, points: usize) -> Result<Self> {
        Self::new(-half, half, points)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max <= self.min {
            return Err(Error::Config(format!(
                "axis extent [{}, {}] must be finite and strictly positive",
                self.min, self.max
            )));
        }
        if self.points < MIN_POINTS {
            return Err(Error::Config(format!(
                "axis has {} points, at least {MIN_POINTS} required",
                self.points
            )));
        }
        if !self.points.is_power_of_two() {
            return Err(Error::Config(format!(
                "axis point count {} is not a power of two",
                self.points
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length() / self.points as f64
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.dx()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points;
        let dk = 2.0 * std::f64::consts::PI / self.length();
        (0..n)
            .map(|i| {
                let j = if i < n.div_ceil(2) { i as i64 } else { i as i64 - n as i64 };
                j as f64 * dk
            })
            .collect()
    }

    #[inline]
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Smooth imaginary potential ramp over the outer 10% of every axis.
    AbsorbingLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>, boundary: Boundary) -> Result<Self> {
        let spec = GridSpec { axes, boundary };
        spec.validate()?;
        Ok(spec)
    }

    pub fn periodic(axes: Vec<Axis>) -> Result<Self> {
        Self::new(axes, Boundary::Periodic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > MAX_AXES {
            return Err(Error::Config(format!(
                "grid must have 1..={MAX_AXES} axes, got {}",
                self.axes.len()
            )));
        }
        self.axes.iter().try_for_each(Axis::validate)
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    /// Volume element `prod dx`.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::dx).product()
    }

    /// Row-major strides; the last axis is contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims()];
        for a in (0..self.dims().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.axes[a + 1].points;
        }
        strides
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize) -> [usize; MAX_AXES] {
        let mut idx = [0; MAX_AXES];
        for a in (0..self.dims()).rev() {
            let n = self.axes[a].points;
            idx[a] = flat % n;
            flat /= n;
        }
        idx
    }

    /// Cell-center coordinates of a flat index.
    pub fn point(&self, flat: usize) -> [f64; MAX_AXES] {
        let idx = self.unravel(flat);
        let mut x = [0.0; MAX_AXES];
        for (a, axis) in self.axes.iter().enumerate() {
            x[a] = axis.coord(idx[a]);
        }
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.iter().zip(x).all(|(a, &v)| a.contains(v))
    }

    /// Grids are compatible when every axis matches to rounding.
    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.dims() == other.dims()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                a.points == b.points
                    && (a.min - b.min).abs() <= 1e-12 * a.length()
                    && (a.max - b.max).abs() <= 1e-12 * a.length()
            })
    }

    /// Joint grid whose axes are `self` followed by `other`.
    pub fn product(&self, other: &GridSpec) -> Result<GridSpec> {
        let dims = self.dims() + other.dims();
        if dims > MAX_AXES {
            return Err(Error::Config(format!(
                "tensor product would have {dims} axes, at most {MAX_AXES} supported"
            )));
        }
        let mut axes = self.axes.clone();
        axes.extend_from_slice(&other.axes);
        GridSpec::new(axes, self.boundary)
    }

    pub fn sub_grid(&self, keep: &[usize]) -> Result<GridSpec> {
        let axes = keep.iter().map(|&a| self.axes[a]).collect();
        GridSpec::new(axes, self.boundary)
    }
}

/// Half-open interval `[lo, hi)` on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

/// Axis-aligned subset of configuration space. `None` on an axis is a
/// wildcard covering the whole axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub label: String,
    pub intervals: Vec<Option<Interval>>,
}

impl RegionSpec {
    pub fn whole(label: &str, dims: usize) -> Self {
        RegionSpec {
            label: label.to_string(),
            intervals: vec![None; dims],
        }
    }

    pub fn on_axis(label: &str, dims: usize, axis: usize, interval: Interval) -> Self {
        let mut r = Self::whole(label, dims);
        r.intervals[axis] = Some(interval);
        r
    }

    /// Cells of `axis` with center below `split`.
    pub fn below(label: &str, grid: &GridSpec, axis: usize, split: f64) -> Self {
        let a = grid.axes[axis];
        Self::on_axis(label, grid.dims(), axis, Interval::new(a.min, split))
    }

    /// Cells of `axis` with center at or above `split`.
    pub fn above(label: &str, grid: &GridSpec, axis: usize, split: f64) -> Self {
        let a = grid.axes[axis];
        // `max` itself is never a cell center, so widen slightly to keep the
        // half-open interval closed on the grid edge.
        Self::on_axis(label, grid.dims(), axis, Interval::new(split, a.max + a.dx()))
    }

    pub fn with_interval(mut self, axis: usize, interval: Interval) -> Self {
        self.intervals[axis] = Some(interval);
        self
    }

    pub fn check_within(&self, grid: &GridSpec) -> Result<()> {
        if self.intervals.len() != grid.dims() {
            return Err(Error::Domain(format!(
                "region `{}` has {} axes, grid has {}",
                self.label,
                self.intervals.len(),
                grid.dims()
            )));
        }
        for (a, (iv, axis)) in self.intervals.iter().zip(&grid.axes).enumerate() {
            if let Some(iv) = iv {
                let slack = axis.dx();
                if !(iv.lo < iv.hi) || iv.lo < axis.min - slack || iv.hi > axis.max + slack {
                    return Err(Error::Domain(format!(
                        "region `{}` interval [{}, {}) on axis {a} lies outside grid extent [{}, {}]",
                        self.label, iv.lo, iv.hi, axis.min, axis.max
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(x)
            .all(|(iv, &v)| iv.is_none_or(|iv| iv.contains(v)))
    }

    /// Per-axis cell masks; `true` where the cell center is inside.
    pub fn axis_masks(&self, grid: &GridSpec) -> Vec<Vec<bool>> {
        grid.axes
            .iter()
            .zip(&self.intervals)
            .map(|(axis, iv)| {
                (0..axis.points)
                    .map(|i| iv.is_none_or(|iv| iv.contains(axis.coord(i))))
                    .collect()
            })
            .collect()
    }

    /// True when the two regions share no point (some axis has disjoint
    /// intervals).
    pub fn disjoint_from(&self, other: &RegionSpec) -> bool {
        self.intervals
            .iter()
            .zip(&other.intervals)
            .any(|(a, b)| matches!((a, b), (Some(a), Some(b)) if !a.intersects(b)))
    }

    /// Checks disjointness cell by cell on a concrete grid.
    pub fn disjoint_on(&self, other: &RegionSpec, grid: &GridSpec) -> bool {
        let ma = self.axis_masks(grid);
        let mb = other.axis_masks(grid);
        ma.iter()
            .zip(&mb)
            .any(|(a, b)| a.iter().zip(b).all(|(&p, &q)| !(p && q)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_rejects_bad_extents_and_counts() {
        assert!(Axis::new(0.0, 0.0, 64).is_err());
        assert!(Axis::new(1.0, 0.0, 64).is_err());
        assert!(Axis::new(0.0, 1.0, 8).is_err());
        assert!(Axis::new(0.0, 1.0, 48).is_err());
        assert!(Axis::new(0.0, 1.0, 64).is_ok());
    }

    #[test]
    fn cell_centers_are_symmetric() {
        let a = Axis::symmetric(4.0, 32).unwrap();
        for i in 0..32 {
            assert!((a.coord(i) + a.coord(31 - i)).abs() < 1e-14);
        }
        assert!((a.dx() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unravel_matches_strides() {
        let g = GridSpec::periodic(vec![
            Axis::symmetric(1.0, 16).unwrap(),
            Axis::symmetric(1.0, 32).unwrap(),
        ])
        .unwrap();
        assert_eq!(g.strides(), vec![32, 1]);
        let idx = g.unravel(3 * 32 + 7);
        assert_eq!(&idx[..2], &[3, 7]);
    }

    #[test]
    fn too_many_axes() {
        let a = Axis::symmetric(1.0, 16).unwrap();
        let g2 = GridSpec::periodic(vec![a, a]).unwrap();
        assert!(g2.product(&g2).is_err());
        assert!(GridSpec::periodic(vec![a; 4]).is_err());
    }

    #[test]
    fn left_and_right_are_disjoint() {
        let g = GridSpec::periodic(vec![Axis::symmetric(4.0, 64).unwrap()]).unwrap();
        let l = RegionSpec::below("L", &g, 0, 0.0);
        let r = RegionSpec::above("R", &g, 0, 0.0);
        assert!(l.disjoint_from(&r));
        assert!(l.disjoint_on(&r, &g));
        assert!(!l.disjoint_from(&RegionSpec::whole("all", 1)));
        l.check_within(&g).unwrap();
        r.check_within(&g).unwrap();
    }

    #[test]
    fn region_outside_grid_is_a_domain_error() {
        let g = GridSpec::periodic(vec![Axis::symmetric(4.0, 64).unwrap()]).unwrap();
        let r = RegionSpec::on_axis("far", 1, 0, Interval::new(10.0, 12.0));
        assert!(matches!(r.check_within(&g), Err(Error::Domain(_))));
    }
}

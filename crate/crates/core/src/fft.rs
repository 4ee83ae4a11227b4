//! Multi-dimensional FFTs on row-major grids, parallel over lines.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

/// Lines handed to one rayon task.
const LINES_PER_TASK: usize = 32;

#[derive(Clone)]
pub struct SpectralPlan {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("shape", &self.shape).finish()
    }
}

impl SpectralPlan {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let shape = grid.shape();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        SpectralPlan {
            shape,
            forward,
            inverse,
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        for axis in 0..self.shape.len() {
            self.transform_axis(data, axis, true);
        }
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [C64]) {
        for axis in 0..self.shape.len() {
            self.transform_axis(data, axis, false);
        }
        let scale = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|z| *z *= scale);
    }

    pub fn forward_axis(&self, data: &mut [C64], axis: usize) {
        self.transform_axis(data, axis, true);
    }

    /// Inverse along one axis including `1/n` for that axis.
    pub fn inverse_axis(&self, data: &mut [C64], axis: usize) {
        self.transform_axis(data, axis, false);
        let scale = 1.0 / self.shape[axis] as f64;
        data.par_iter_mut().for_each(|z| *z *= scale);
    }

    fn transform_axis(&self, data: &mut [C64], axis: usize, forward: bool) {
        let plan = if forward {
            &self.forward[axis]
        } else {
            &self.inverse[axis]
        };
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        if inner == 1 {
            data.par_chunks_mut(n * LINES_PER_TASK)
                .for_each(|chunk| plan.process(chunk));
            return;
        }
        // Strided axis: gather each block into contiguous lines, transform,
        // scatter back.
        data.par_chunks_mut(n * inner).for_each(|block| {
            let mut lines = vec![C64::new(0.0, 0.0); n * inner];
            for i in 0..n {
                for j in 0..inner {
                    lines[j * n + i] = block[i * inner + j];
                }
            }
            lines
                .chunks_mut(n * LINES_PER_TASK)
                .for_each(|chunk| plan.process(chunk));
            for i in 0..n {
                for j in 0..inner {
                    block[i * inner + j] = lines[j * n + i];
                }
            }
        });
    }
}

/// Applies `f(flat_index, value)` to every element of a spectral array using
/// per-axis wavenumbers.
pub fn for_each_mode(
    grid: &GridSpec,
    data: &mut [C64],
    f: impl Fn(&[f64], &mut C64) + Sync,
) {
    let ks: Vec<Vec<f64>> = grid.axes.iter().map(|a| a.wavenumbers()).collect();
    let dims = grid.dims();
    data.par_iter_mut().enumerate().for_each(|(flat, z)| {
        let idx = grid.unravel(flat);
        let mut k = [0.0; crate::grid::MAX_AXES];
        for a in 0..dims {
            k[a] = ks[a][idx[a]];
        }
        f(&k[..dims], z);
    });
}

/// Spectral partial derivative along `axis`.
pub fn spectral_derivative(plan: &SpectralPlan, grid: &GridSpec, data: &[C64], axis: usize) -> Vec<C64> {
    let mut work = data.to_vec();
    plan.forward_axis(&mut work, axis);
    let ks = grid.axes[axis].wavenumbers();
    let n = grid.axes[axis].points;
    let nyquist = n / 2;
    let inner: usize = grid.shape()[axis + 1..].iter().product();
    work.par_iter_mut().enumerate().for_each(|(flat, z)| {
        let i = (flat / inner) % n;
        // The Nyquist mode of an even-length grid has no sign; zero it so
        // real fields keep real derivatives.
        *z = if i == nyquist {
            C64::new(0.0, 0.0)
        } else {
            *z * C64::new(0.0, ks[i])
        };
    });
    plan.inverse_axis(&mut work, axis);
    work
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    #[test]
    fn round_trip_2d() {
        let g = GridSpec::periodic(vec![
            Axis::symmetric(3.0, 16).unwrap(),
            Axis::symmetric(2.0, 32).unwrap(),
        ])
        .unwrap();
        let plan = SpectralPlan::new(&g);
        let orig: Vec<C64> = (0..g.len())
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut data = orig.clone();
        plan.forward(&mut data);
        plan.inverse(&mut data);
        for (a, b) in orig.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_periodic_sine() {
        let g = GridSpec::periodic(vec![
            Axis::new(0.0, 2.0 * std::f64::consts::PI, 64).unwrap(),
            Axis::new(0.0, 2.0 * std::f64::consts::PI, 32).unwrap(),
        ])
        .unwrap();
        let plan = SpectralPlan::new(&g);
        let data: Vec<C64> = (0..g.len())
            .map(|i| {
                let x = g.point(i);
                C64::new((3.0 * x[0]).sin() * (2.0 * x[1]).cos(), 0.0)
            })
            .collect();
        let d0 = spectral_derivative(&plan, &g, &data, 0);
        let d1 = spectral_derivative(&plan, &g, &data, 1);
        for i in 0..g.len() {
            let x = g.point(i);
            let e0 = 3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos();
            let e1 = -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin();
            assert!((d0[i].re - e0).abs() < 1e-10 && d0[i].im.abs() < 1e-10);
            assert!((d1[i].re - e1).abs() < 1e-10);
        }
    }
}

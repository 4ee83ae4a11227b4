//! Four-point Lagrange (cubic) interpolation on cell-centered periodic axes.

use crate::grid::Axis;

/// Node indices (wrapped) and weights for the cubic stencil around `x`.
#[inline]
pub fn cubic_stencil(axis: &Axis, x: f64) -> ([usize; 4], [f64; 4]) {
    let n = axis.points as i64;
    let u = (x - axis.min) / axis.dx() - 0.5;
    let base = u.floor();
    let t = u - base;
    let i0 = base as i64;
    let mut idx = [0usize; 4];
    for (j, slot) in idx.iter_mut().enumerate() {
        *slot = (i0 - 1 + j as i64).rem_euclid(n) as usize;
    }
    // Lagrange basis on nodes -1, 0, 1, 2.
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    (idx, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity_and_reproduce_cubics() {
        let axis = Axis::symmetric(2.0, 32).unwrap();
        let f = |x: f64| 0.3 * x * x * x - x * x + 2.0 * x - 1.0;
        for &x in &[-0.37, 0.0, 0.11, 0.5, 1.2] {
            let (idx, w) = cubic_stencil(&axis, x);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            let v: f64 = idx.iter().zip(&w).map(|(&i, &w)| w * f(axis.coord(i))).sum();
            assert!((v - f(x)).abs() < 1e-12, "x={x} v={v} f={}", f(x));
        }
    }

    #[test]
    fn exact_on_nodes() {
        let axis = Axis::symmetric(2.0, 32).unwrap();
        let (idx, w) = cubic_stencil(&axis, axis.coord(7));
        assert_eq!(idx[1], 7);
        assert!((w[1] - 1.0).abs() < 1e-14);
    }
}

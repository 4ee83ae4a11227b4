use bohmlab_core::fft::SpectralPlan;
use bohmlab_core::field::gaussian_packet;
use bohmlab_core::propagator::{CrankNicolson, HamiltonianSpec, Potential, SplitOperator};
use bohmlab_core::{Axis, Boundary, GridField, GridSpec, C64};
use proptest::prelude::*;

fn harmonic() -> HamiltonianSpec {
    HamiltonianSpec::free(vec![1.0]).with_potential(Potential::Harmonic {
        omega: vec![1.0],
        center: vec![0.0],
    })
}

fn l2(a: &GridField, b: &GridField) -> f64 {
    let d: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d * a.spec().cell_volume()).sqrt()
}

fn on_grid(f: GridField, boundary: Boundary) -> GridField {
    let spec = GridSpec::new(f.spec().axes.clone(), boundary).unwrap();
    GridField::new(spec, f.into_amplitudes(), 0.0).unwrap()
}

/// Mass in the interior `|x| < 16` (smoothly windowed) moving left.
fn backward_interior_mass(f: &GridField) -> f64 {
    let axis = f.spec().axes[0];
    let mut d: Vec<C64> = f
        .amplitudes()
        .iter()
        .zip(axis.coords())
        .map(|(z, x)| {
            let w = ((16.0 - x.abs()) / 3.0).clamp(0.0, 1.0);
            z * (w * std::f64::consts::FRAC_PI_2).sin().powi(2)
        })
        .collect();
    SpectralPlan::new(f.spec()).forward(&mut d);
    let n = d.len();
    d[n / 2 + 1..].iter().map(|c| c.norm_sqr()).sum::<f64>() * axis.dx() / n as f64
}

#[test]
fn absorbing_layer_barely_reflects() {
    let axis = Axis::symmetric(20.0, 512).unwrap();
    // From Nyquist/10 up to Nyquist/4.
    for k in [4.0, 10.0] {
        let f0 = on_grid(gaussian_packet(axis, 5.0, 1.0, k).unwrap(), Boundary::AbsorbingLayer);
        let h = HamiltonianSpec::free(vec![1.0]);
        let dt = 0.5 * h.max_stable_dt(f0.spec()).unwrap();
        let so = SplitOperator::new(f0.spec(), &h, dt).unwrap();
        let mut f = f0;
        let chunk = (0.4 / k / dt).ceil() as usize;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            so.steps(&mut f, chunk).unwrap();
            worst = worst.max(backward_interior_mass(&f));
        }
        assert!(worst < 1e-4, "k = {k}: reflected mass {worst:e}");
    }
}

#[test]
fn energy_is_conserved() {
    let f0 = gaussian_packet(Axis::symmetric(10.0, 256).unwrap(), 1.5, 0.6, 0.7).unwrap();
    let h = harmonic();
    let dt = 0.5 * h.max_stable_dt(f0.spec()).unwrap();
    let e0 = h.energy(&f0).unwrap();
    let mut f = f0;
    SplitOperator::new(f.spec(), &h, dt).unwrap().steps(&mut f, 3000).unwrap();
    let e1 = h.energy(&f).unwrap();
    assert!(((e1 - e0) / e0).abs() < 1e-5, "{e0} -> {e1}");
}

#[test]
fn split_operator_agrees_with_crank_nicolson() {
    let f0 = gaussian_packet(Axis::symmetric(20.0, 1024).unwrap(), 1.0, 1.0, 0.0).unwrap();
    let h = HamiltonianSpec::free(vec![1.0]);
    let so = SplitOperator::new(f0.spec(), &h, 2e-4).unwrap();
    let cn = CrankNicolson::new(f0.spec(), &h, 2e-4).unwrap();
    let (mut a, mut b) = (f0.clone(), f0);
    for _ in 0..1000 {
        so.step(&mut a).unwrap();
        cn.step(&mut b).unwrap();
    }
    assert!(l2(&a, &b) < 1e-4, "{:e}", l2(&a, &b));
}

fn halving_ratio(step: impl Fn(f64, usize) -> GridField) -> f64 {
    let t = 1.0;
    let runs: Vec<GridField> = [1100, 2200, 4400].into_iter().map(|n| step(t / n as f64, n)).collect();
    l2(&runs[0], &runs[1]) / l2(&runs[1], &runs[2])
}

#[test]
fn both_steppers_are_second_order_in_time() {
    let f0 = gaussian_packet(Axis::symmetric(10.0, 256).unwrap(), 1.0, 0.7, 0.0).unwrap();
    let h = harmonic();
    let so = halving_ratio(|dt, n| {
        let mut f = f0.clone();
        SplitOperator::new(f.spec(), &h, dt).unwrap().steps(&mut f, n).unwrap();
        f
    });
    let cn = halving_ratio(|dt, n| {
        let mut f = f0.clone();
        let s = CrankNicolson::new(f.spec(), &h, dt).unwrap();
        for _ in 0..n {
            s.step(&mut f).unwrap();
        }
        f
    });
    assert!((so - 4.0).abs() < 0.8, "split operator ratio {so}");
    assert!((cn - 4.0).abs() < 0.8, "Crank-Nicolson ratio {cn}");
}

fn field_from(values: &[(f64, f64)]) -> GridField {
    let spec = GridSpec::periodic(vec![Axis::symmetric(8.0, 64).unwrap()]).unwrap();
    let amps = values.iter().map(|&(re, im)| C64::new(re, im)).collect();
    GridField::new(spec, amps, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steppers_are_linear(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64),
        ca in (-2.0f64..2.0, -2.0f64..2.0),
        cb in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let (fa, fb) = (field_from(&a), field_from(&b));
        let (ca, cb) = (C64::new(ca.0, ca.1), C64::new(cb.0, cb.1));
        let h = harmonic();
        let dt = 0.5 * h.max_stable_dt(fa.spec()).unwrap();
        let so = SplitOperator::new(fa.spec(), &h, dt).unwrap();
        let cn = CrankNicolson::new(fa.spec(), &h, dt).unwrap();
        for use_cn in [false, true] {
            let step = |f: &mut GridField| if use_cn { cn.step(f) } else { so.step(f) };
            let mut mix = fa.combine(ca, &fb, cb).unwrap();
            let (mut sa, mut sb) = (fa.clone(), fb.clone());
            step(&mut mix).unwrap();
            step(&mut sa).unwrap();
            step(&mut sb).unwrap();
            let expect = sa.combine(ca, &sb, cb).unwrap();
            prop_assert!(l2(&mix, &expect) < 1e-10 * (1.0 + expect.norm_squared().sqrt()));
        }
    }

    #[test]
    fn steps_preserve_norm(a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)) {
        let f0 = field_from(&a);
        let h = harmonic();
        let dt = 0.5 * h.max_stable_dt(f0.spec()).unwrap();
        let n0 = f0.norm_squared();
        let (mut s, mut c) = (f0.clone(), f0);
        SplitOperator::new(s.spec(), &h, dt).unwrap().steps(&mut s, 20).unwrap();
        let cn = CrankNicolson::new(c.spec(), &h, dt).unwrap();
        for _ in 0..20 {
            cn.step(&mut c).unwrap();
        }
        prop_assert!((s.norm_squared() - n0).abs() < 20.0 * 1e-10 * n0.max(1.0));
        prop_assert!((c.norm_squared() - n0).abs() < 20.0 * 1e-10 * n0.max(1.0));
    }
}

use bohmlab_core::equilibrium::EnsembleSpec;
use bohmlab_core::evolution::{run_protocol, DenseEvolution, Integrator, Protocol};
use bohmlab_core::experiments::{run_double_slit, DoubleSlitParams};
use bohmlab_core::field::gaussian_packet;
use bohmlab_core::guidance::{check_no_crossing, velocity_field, Configuration, EnsembleIntegrator, TrajectoryEnsemble};
use bohmlab_core::propagator::{HamiltonianSpec, Potential, SplitOperator};
use bohmlab_core::{Axis, GridField, C64};

fn evolve_with(f0: GridField, h: HamiltonianSpec, dt: f64, end: f64, stride: usize, starts: &[f64]) -> (TrajectoryEnsemble, GridField) {
    let starts: Vec<Configuration> = starts.iter().map(|&x| Configuration::new(&[x])).collect();
    let seeds = (0..starts.len() as u64).collect();
    let mut integ = EnsembleIntegrator::new(f0.spec(), &h.masses, &starts, seeds).unwrap();
    let mut evo = DenseEvolution::new(f0, h, dt, Integrator::SplitOperator).unwrap();
    run_protocol(&mut evo, &Protocol::free(dt, end, stride), Some(&mut integ), |_| Ok(())).unwrap();
    (integ.finish(), evo.into_field())
}

fn width(sigma0: f64, t: f64) -> f64 {
    sigma0 * (1.0 + (t / (2.0 * sigma0 * sigma0)).powi(2)).sqrt()
}

fn free_dt(f: &GridField) -> f64 {
    0.5 * HamiltonianSpec::free(vec![1.0]).max_stable_dt(f.spec()).unwrap()
}

#[test]
fn spreading_gaussian_velocity_is_linear_in_x() {
    let f0 = gaussian_packet(Axis::symmetric(20.0, 512).unwrap(), 0.0, 1.0, 0.0).unwrap();
    let t = 1.5;
    let mut f = f0.clone();
    let n = 4000;
    SplitOperator::new(f.spec(), &HamiltonianSpec::free(vec![1.0]), t / n as f64)
        .unwrap()
        .steps(&mut f, n)
        .unwrap();
    // sigma'/sigma for sigma0 = 1.
    let rate = (t / 4.0) / (1.0 + (t / 2.0).powi(2));
    for x in [-3.0, -1.7, -0.6, 0.45, 1.2, 2.9] {
        let v = velocity_field(&f, &Configuration::new(&[x]), &[1.0]).unwrap()[0];
        let expected = x * rate;
        assert!(((v - expected) / expected).abs() < 1e-3, "x = {x}: {v} vs {expected}");
    }
}

#[test]
fn free_gaussian_trajectories_scale_with_width() {
    let f0 = gaussian_packet(Axis::symmetric(20.0, 512).unwrap(), 0.0, 1.0, 0.0).unwrap();
    let dt = free_dt(&f0);
    let starts = [-2.2, -1.0, -0.3, 0.5, 1.4, 2.5];
    let (ens, _) = evolve_with(f0, HamiltonianSpec::free(vec![1.0]), dt, 2.0, 10, &starts);
    let t_end = *ens.times.last().unwrap();
    for (tr, x0) in ens.trajectories.iter().zip(starts) {
        let expected = x0 * width(1.0, t_end);
        let got = tr.last().get(0);
        assert!(((got - expected) / expected).abs() < 5e-3, "{x0}: {got} vs {expected}");
    }
}

#[test]
fn coherent_state_moves_rigidly() {
    let axis = Axis::symmetric(10.0, 256).unwrap();
    let shift = 2.0;
    let f0 = gaussian_packet(axis, shift, std::f64::consts::FRAC_1_SQRT_2, 0.0).unwrap();
    let h = HamiltonianSpec::free(vec![1.0]).with_potential(Potential::Harmonic {
        omega: vec![1.0],
        center: vec![0.0],
    });
    let dt = 0.5 * h.max_stable_dt(f0.spec()).unwrap();
    let starts = [1.0, 1.6, 2.0, 2.5, 3.1];
    let (ens, _) = evolve_with(f0, h, dt, 2.5, 5, &starts);
    let t_end = *ens.times.last().unwrap();
    let moved = shift * (t_end.cos() - 1.0);
    for (tr, x0) in ens.trajectories.iter().zip(starts) {
        let got = tr.last().get(0) - x0;
        assert!((got - moved).abs() < 5e-3 * moved.abs(), "{x0}: moved {got}, expected {moved}");
    }
}

#[test]
fn reversed_field_retraces_trajectories() {
    let f0 = gaussian_packet(Axis::symmetric(20.0, 512).unwrap(), -2.0, 1.0, 1.5).unwrap();
    let dt = free_dt(&f0);
    let starts = [-3.5, -2.6, -2.0, -1.1, 0.2];
    let (fwd, f1) = evolve_with(f0, HamiltonianSpec::free(vec![1.0]), dt, 2.0, 5, &starts);
    let reversed: Vec<C64> = f1.amplitudes().iter().map(|z| z.conj()).collect();
    let back = GridField::new(f1.spec().clone(), reversed, 0.0).unwrap();
    let ends: Vec<f64> = fwd.trajectories.iter().map(|t| t.last().get(0)).collect();
    let (bwd, _) = evolve_with(back, HamiltonianSpec::free(vec![1.0]), dt, 2.0, 5, &ends);
    for (tr, x0) in bwd.trajectories.iter().zip(starts) {
        assert!((tr.last().get(0) - x0).abs() < 1e-4, "{x0} came back to {}", tr.last().get(0));
    }
}

#[test]
fn double_slit_trajectories_keep_their_side() {
    let out = run_double_slit(&DoubleSlitParams::default(), &EnsembleSpec::new(100, 11)).unwrap();
    let report = check_no_crossing(&out.ensemble, 0, 0.0);
    assert!(report.passed(), "{:?}", &report.violations[..report.violations.len().min(3)]);
    for tr in &out.ensemble.trajectories {
        assert!(tr.samples.iter().all(|x| (x.get(0) < 0.0) == (tr.initial().get(0) < 0.0)));
    }
}

#[test]
fn order_survives_passage_near_transient_nodes() {
    // Counter-propagating packets overlap exactly at t = 2, where psi has
    // isolated zeros that these starting points pass close to.
    let axis = Axis::symmetric(20.0, 512).unwrap();
    let a = gaussian_packet(axis, -6.0, 1.0, 3.0).unwrap();
    let b = gaussian_packet(axis, 6.0, 1.0, -3.0).unwrap();
    let one = C64::new(1.0, 0.0);
    let f0 = a.combine(one, &b, one).unwrap().normalized().unwrap();
    let dt = free_dt(&f0);
    let starts: Vec<f64> = (0..120).map(|i| 6.640 + 4e-5 * i as f64).collect();
    let (ens, _) = evolve_with(f0, HamiltonianSpec::free(vec![1.0]), dt, 4.0, 10, &starts);
    let report = check_no_crossing(&ens, 0, 0.0);
    assert!(report.passed(), "{} violations", report.violations.len());
}

use bohmlab_core::equilibrium::EnsembleSpec;
use bohmlab_core::guidance::{velocity_at, velocity_field, Configuration, DenseSnapshot};
use bohmlab_core::measurement::{
    conditional_wavefunction, conditional_z_velocity, repeat_measurement, run_stage1, run_stage2_camera,
    separating_packets, MeasurementScenario, PacketSpec, ReadyShape,
};
use bohmlab_core::propagator::apply_coupling_for;
use bohmlab_core::{Axis, Boundary, Error, C64};

fn scenario(c1_sq: f64, camera: bool) -> MeasurementScenario {
    MeasurementScenario {
        system: Axis::symmetric(8.0, 128).unwrap(),
        pointer: Axis::symmetric(16.0, 256).unwrap(),
        camera: camera.then(|| Axis::symmetric(16.0, 256).unwrap()),
        boundary: Boundary::Periodic,
        c1: [c1_sq.sqrt(), 0.0],
        c2: [(1.0 - c1_sq).sqrt(), 0.0],
        phi1: PacketSpec {
            center: -4.0,
            sigma: 0.5,
            momentum: 0.0,
        },
        phi2: PacketSpec {
            center: 4.0,
            sigma: 0.5,
            momentum: 0.0,
        },
        pointer_width: 0.5,
        camera_width: 0.5,
        separation: 6.0,
        min_separation: 6.0,
        ready_shape: ReadyShape::Gaussian,
        coupling_duration: 1.0,
        settle_time: 0.0,
        dt: None,
        snapshot_stride: 10,
        masses: vec![1.0; 3],
        localization_tolerance: 1e-6,
    }
}

#[test]
fn certain_outcome_is_always_read() {
    let r = run_stage1(&scenario(1.0, false), &EnsembleSpec::new(2000, 1)).unwrap().report;
    assert!((r.quadrature_left - 1.0).abs() < 1e-6);
    assert_eq!(r.empirical_left.rate, 1.0);
}

#[test]
fn even_superposition_splits_evenly() {
    let r = run_stage1(&scenario(0.5, false), &EnsembleSpec::new(2000, 2)).unwrap().report;
    assert!((r.quadrature_left - 0.5).abs() < 1e-6, "{}", r.quadrature_left);
    assert!(r.cross_term.abs() <= r.cross_term_bound + 1e-15);
    assert!(r.cross_term_bound <= 1e-6);
}

#[test]
fn short_pointer_swing_is_rejected() {
    let s = MeasurementScenario {
        separation: 3.0,
        ..scenario(0.5, false)
    };
    assert!(matches!(run_stage1(&s, &EnsembleSpec::new(10, 1)), Err(Error::DeviceNoGood(_))));
}

#[test]
fn conditioning_a_product_returns_the_factor() {
    let s = scenario(0.3, false);
    let phi = s.system_state().unwrap();
    let ready = s.pointer_ready().unwrap();
    let joint = phi.tensor_product(&ready).unwrap();
    for y in [-0.7, 0.0, 0.4] {
        let cond = conditional_wavefunction(&joint, &[(1, y)]).unwrap();
        assert!((cond.fidelity(&phi).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn after_readout_the_conditional_is_the_eigenstate() {
    let s = scenario(0.3, false);
    let out = run_stage1(&s, &EnsembleSpec::new(10, 3)).unwrap();
    let (p1, p2) = s.basis().unwrap();
    let d = s.pointer_displacement();
    let left = conditional_wavefunction(&out.field, &[(1, -d)]).unwrap();
    let right = conditional_wavefunction(&out.field, &[(1, d)]).unwrap();
    assert!(left.fidelity(&p1).unwrap() >= 1.0 - 1e-4);
    assert!(right.fidelity(&p2).unwrap() >= 1.0 - 1e-4);
}

#[test]
fn mid_coupling_conditional_is_a_mixture() {
    let s = scenario(0.5, false);
    let joint = s.system_state().unwrap().tensor_product(&s.pointer_ready().unwrap()).unwrap();
    // A tenth of the swing: the two pointer packets still overlap at y = 0.
    let mid = apply_coupling_for(&joint, &s.stage1_coupling(), 0.1 * s.coupling_duration).unwrap();
    let cond = conditional_wavefunction(&mid, &[(1, 0.0)]).unwrap();
    let (p1, p2) = s.basis().unwrap();
    let (f1, f2) = (cond.fidelity(&p1).unwrap(), cond.fidelity(&p2).unwrap());
    assert!(f1 < 0.99 && f2 < 0.99, "{f1} {f2}");
    assert!(f1 > 0.1 && f2 > 0.1, "{f1} {f2}");
}

#[test]
fn camera_follows_a_certain_pointer() {
    let r = run_stage2_camera(&scenario(1.0, true), &EnsembleSpec::new(1000, 4)).unwrap().report;
    assert!((r.cells.quadrature[0] - 1.0).abs() < 1e-5);
    assert_eq!(r.camera_agreement, 1.0);
}

#[test]
fn camera_velocity_follows_the_packet_on_either_side() {
    let s = scenario(0.5, true);
    let sep = separating_packets(&s, 2.0, 0.5).unwrap();
    let joint = sep.field.to_dense().unwrap();
    let d = s.pointer_displacement();
    for (y, lone) in [(-d, &sep.camera_left), (d, &sep.camera_right)] {
        let lone = DenseSnapshot::new(lone.clone());
        for z in [-1.6, -0.9, -0.2, 0.3, 1.1] {
            let v = conditional_z_velocity(&joint, y, z, 1.0).unwrap();
            let v0 = velocity_at(&lone, &Configuration::new(&[z]), &[1.0]).unwrap()[0];
            assert!(((v - v0) / v0).abs() < 1e-4, "y {y} z {z}: {v} vs {v0}");
        }
    }
}

#[test]
fn unseparated_pointer_gives_superposition_velocity() {
    let s = scenario(0.5, true);
    // No pointer displacement: Phi_L = Phi_R, so the conditional camera wave
    // is the equal-weight sum of the two camera packets.
    let sep = separating_packets(&s, 2.0, 0.3).unwrap();
    let ready = s.pointer_ready().unwrap();
    let sum = sep.camera_left.combine(C64::new(1.0, 0.0), &sep.camera_right, C64::new(1.0, 0.0)).unwrap();
    let joint = ready.tensor_product(&sum).unwrap();
    for (y, z) in [(0.1, -0.8), (-0.3, 0.25), (0.0, 0.9)] {
        let v = conditional_z_velocity(&joint, y, z, 1.0).unwrap();
        let v0 = velocity_field(&sum, &Configuration::new(&[z]), &[1.0]).unwrap()[0];
        assert!((v - v0).abs() < 1e-9 * (1.0 + v0.abs()), "({y}, {z}): {v} vs {v0}");
    }
}

#[test]
fn overlapping_pointers_disagree_at_the_overlap_rate() {
    let s = MeasurementScenario {
        separation: 1.0,
        min_separation: 1.0,
        localization_tolerance: 0.5,
        ..scenario(0.5, true)
    };
    let r = repeat_measurement(&s, &EnsembleSpec::new(1000, 6)).unwrap().report;
    assert!(r.agreement < 1.0);
    assert!(r.checks.iter().all(|c| c.passed), "{:?}", r.checks);
}

#[test]
fn certain_outcome_repeats() {
    let r = repeat_measurement(&scenario(1.0, true), &EnsembleSpec::new(500, 7)).unwrap().report;
    assert_eq!(r.agreement, 1.0);
}

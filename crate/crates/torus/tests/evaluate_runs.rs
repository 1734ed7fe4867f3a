mod common;

use num_complex::Complex64;
use torus::evaluate::{energies, ode_residual, real_coords, reference_integrate, synthesize, synthesize_at, uniform_times};
use torus::iterate;

#[test]
fn energy_is_constant_along_synthesized_solutions() {
    for (name, model) in common::henon_configs().into_iter().chain([("fpu mode 2", common::fpu(1.0, [0.0, 1.0, 0.0]))]) {
        let o = common::solve(&model);
        let times = uniform_times(20.0, 2001);
        let res = ode_residual(&model, &o.zhat_star, &o.omega_star, &times).max;
        let h = energies(&model, &synthesize(&o.zhat_star, &o.omega_star, &times)).unwrap();
        let drift = h.iter().map(|e| (e - h[0]).abs()).fold(0.0, f64::max) / h[0].abs();
        assert!(drift <= 10.0 * res * 20.0 + 1e-14, "{name}: drift {drift:e}, residual {res:e}");
    }
}

#[test]
fn rk4_reproduces_the_free_rotation() {
    let model = common::hh([1.0, 0.0]).with_epsilon(0.0);
    let z0 = vec![Complex64::new(0.7, -0.2), Complex64::new(0.1, 0.4)];
    let run = reference_integrate(&model, &z0, 10.0, 1e-4, 1000).unwrap();
    for (t, z) in run.trajectory.times.iter().zip(&run.trajectory.states) {
        for j in 0..2 {
            let exact = z0[j] * Complex64::from_polar(1.0, model.omega[j] * t);
            assert!((z[j] - exact).norm() < 1e-10, "t={t}");
        }
    }
}

#[test]
fn synthesis_is_time_reversible_and_starts_on_the_axis() {
    let model = common::hh([0.0, 1.0]);
    let o = common::solve(&model);
    for t in [0.0, 0.37, 5.0, 20.0] {
        let fwd = synthesize_at(&o.zhat_star, &o.omega_star, t);
        let back = synthesize_at(&o.zhat_star, &o.omega_star, -t);
        for (a, b) in fwd.iter().zip(&back) {
            assert!((a.conj() - b).norm() < 1e-13);
        }
    }
    for z in synthesize_at(&o.zhat_star, &o.omega_star, 0.0) {
        assert_eq!(real_coords(z).0, 0.0);
    }
}

#[test]
fn phase_markers_are_deterministic() {
    let model = common::hh([1.0, 0.0]);
    let a = common::solve(&model);
    let b = common::solve(&model);
    let times = [0.0, 10.0, 20.0];
    let ta = synthesize(&a.zhat_star, &a.omega_star, &times);
    let tb = synthesize(&b.zhat_star, &b.omega_star, &times);
    assert_eq!(ta.states, tb.states);
}

#[test]
fn henon_reference_conserves_energy() {
    let model = common::hh([1.0, 0.0]);
    let o = common::solve(&model);
    let z0 = synthesize_at(&o.zhat_star, &o.omega_star, 0.0);
    let run = reference_integrate(&model, &z0, 10.0, 1e-4, 100).unwrap();
    assert!(run.energy_drift < 1e-10, "{:e}", run.energy_drift);
}

#[test]
fn residual_shrinks_with_more_iterations() {
    let model = common::hh([0.0, 1.0]);
    let times = uniform_times(20.0, 401);
    let residual_after = |r_max| {
        let mut cfg = common::newton_config(&model);
        cfg.r_max = r_max;
        let o = iterate(&model, &cfg).unwrap();
        ode_residual(&model, &o.zhat_star, &o.omega_star, &times).max
    };
    let (r1, r3) = (residual_after(1), residual_after(3));
    assert!(r1 > r3, "{r1:e} <= {r3:e}");
}

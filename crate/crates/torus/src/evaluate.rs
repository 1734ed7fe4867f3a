//! Time-domain view of a Fourier solution: synthesis, real coordinates, the
//! Hamilton-equation residual and an RK4 reference integrator.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hamiltonian::{evaluate_h, ModelSpec, Polynomial};
use crate::lattice::FourierVector;

/// Relative energy drift beyond which an integration is reported unstable.
pub const MAX_ENERGY_DRIFT: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    /// `(x_j, y_j)` per mode per time, once converted.
    pub coords: Option<Vec<Vec<(f64, f64)>>>,
}

/// Nonzero terms `(mode, <k, ω'>, ẑ_j(k))` of a Fourier vector.
fn terms(zhat: &FourierVector, omega: &[f64]) -> Vec<(usize, f64, f64)> {
    let m = zhat.m();
    let coords = zhat.support.coordinates();
    let len = zhat.box_len();
    let mut out = Vec::new();
    for j in 0..zhat.n {
        for p in 0..len {
            let v = zhat.values[j * len + p];
            if v != 0.0 {
                out.push((j, crate::lattice::dot(&coords[p * m..(p + 1) * m], omega), v));
            }
        }
    }
    out
}

/// `z(t)` and `ż(t)` by direct summation.
fn state_and_rate(terms: &[(usize, f64, f64)], n: usize, t: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut dz = vec![Complex64::new(0.0, 0.0); n];
    for &(j, freq, v) in terms {
        let e = Complex64::cis(freq * t) * v;
        z[j] += e;
        dz[j] += Complex64::new(0.0, freq) * e;
    }
    (z, dz)
}

/// `z_j(t) = Σ_k ẑ_j(k) exp{i<k, ω'>t}`.
pub fn synthesize(zhat: &FourierVector, omega_t_prime: &[f64], times: &[f64]) -> Trajectory {
    let terms = terms(zhat, omega_t_prime);
    let states = times
        .par_iter()
        .map(|&t| state_and_rate(&terms, zhat.n, t).0)
        .collect();
    Trajectory { times: times.to_vec(), states, coords: None }
}

pub fn synthesize_at(zhat: &FourierVector, omega_t_prime: &[f64], t: f64) -> Vec<Complex64> {
    state_and_rate(&terms(zhat, omega_t_prime), zhat.n, t).0
}

/// `y = (z + z̄)/√2`, `x = i(z − z̄)/√2`, i.e. the inverse of `z = (y − ix)/√2`.
pub fn real_coords(z: Complex64) -> (f64, f64) {
    (-SQRT_2 * z.im, SQRT_2 * z.re)
}

pub fn complex_from_real(x: f64, y: f64) -> Complex64 {
    Complex64::new(y, -x) / SQRT_2
}

pub fn to_real_coords(traj: &Trajectory) -> Trajectory {
    let coords = traj
        .states
        .iter()
        .map(|z| z.iter().map(|c| real_coords(*c)).collect())
        .collect();
    Trajectory { coords: Some(coords), ..traj.clone() }
}

/// Right-hand side `ż = iω⊙z + iε ∂H₁/∂z̄`.
pub struct HamiltonFlow {
    omega: Vec<f64>,
    epsilon: f64,
    field: Vec<Polynomial>,
}

impl HamiltonFlow {
    pub fn new(model: &ModelSpec) -> Self {
        HamiltonFlow {
            omega: model.omega.clone(),
            epsilon: model.epsilon,
            field: (0..model.n).map(|j| model.h1.differentiate_zbar(j)).collect(),
        }
    }

    pub fn rhs(&self, z: &[Complex64]) -> Vec<Complex64> {
        let zbar: Vec<Complex64> = z.iter().map(|c| c.conj()).collect();
        let i = Complex64::new(0.0, 1.0);
        self.field
            .iter()
            .enumerate()
            .map(|(j, p)| i * (z[j] * self.omega[j] + p.eval(z, &zbar) * self.epsilon))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub max: f64,
    pub mean: f64,
}

/// `max_t ‖ż − iω⊙z − iε ∂H₁/∂z̄‖` along the synthesized solution.
pub fn ode_residual(model: &ModelSpec, zhat: &FourierVector, omega_t_prime: &[f64], times: &[f64]) -> ResidualSummary {
    let per_time = residual_curve(model, zhat, omega_t_prime, times);
    summarize(&per_time)
}

pub fn residual_curve(model: &ModelSpec, zhat: &FourierVector, omega_t_prime: &[f64], times: &[f64]) -> Vec<f64> {
    let flow = HamiltonFlow::new(model);
    let terms = terms(zhat, omega_t_prime);
    times
        .par_iter()
        .map(|&t| {
            let (z, dz) = state_and_rate(&terms, model.n, t);
            let f = flow.rhs(&z);
            dz.iter().zip(&f).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
        })
        .collect()
}

fn summarize(values: &[f64]) -> ResidualSummary {
    if values.is_empty() {
        return ResidualSummary { max: 0.0, mean: 0.0 };
    }
    ResidualSummary {
        max: values.iter().cloned().fold(0.0, f64::max),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    }
}

#[derive(Clone, Debug)]
pub struct Integration {
    pub trajectory: Trajectory,
    /// `max_t |H(z(t)) − H(z₀)| / |H(z₀)|`.
    pub energy_drift: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum IntegrationError {
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("relative energy drift {drift:e} exceeds {limit:e}; reduce dt")]
    Unstable { drift: f64, limit: f64, partial: Box<Integration> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn rk4_step(flow: &HamiltonFlow, z: &[Complex64], h: f64) -> Vec<Complex64> {
    let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + y * s).collect()
    };
    let k1 = flow.rhs(z);
    let k2 = flow.rhs(&axpy(z, h / 2.0, &k1));
    let k3 = flow.rhs(&axpy(z, h / 2.0, &k2));
    let k4 = flow.rhs(&axpy(z, h, &k3));
    (0..z.len())
        .map(|i| z[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0))
        .collect()
}

/// Fixed-step RK4 with `steps` steps of signed size `h`; records every
/// `record_every`-th state including both endpoints.
pub(crate) fn rk4_run(
    model: &ModelSpec,
    z0: &[Complex64],
    steps: usize,
    h: f64,
    record_every: usize,
) -> Result<Integration, ModelError> {
    let flow = HamiltonFlow::new(model);
    let record_every = record_every.max(1);
    let h0 = evaluate_h(model, z0)?;
    let scale = h0.abs().max(f64::MIN_POSITIVE);
    let mut z = z0.to_vec();
    let mut traj = Trajectory::default();
    traj.times.push(0.0);
    traj.states.push(z.clone());
    let mut drift = 0.0f64;
    for s in 1..=steps {
        z = rk4_step(&flow, &z, h);
        if s % record_every == 0 || s == steps {
            traj.times.push(s as f64 * h);
            traj.states.push(z.clone());
            drift = drift.max((evaluate_h(model, &z)? - h0).abs() / scale);
        }
    }
    Ok(Integration { trajectory: traj, energy_drift: drift })
}

/// Classical RK4 of the Hamilton equations from `z0` on `[0, t_end]`.
pub fn reference_integrate(
    model: &ModelSpec,
    z0: &[Complex64],
    t_end: f64,
    dt: f64,
    record_every: usize,
) -> Result<Integration, IntegrationError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(IntegrationError::BadStep(dt));
    }
    let steps = (t_end / dt).round() as usize;
    let run = rk4_run(model, z0, steps, dt, record_every)?;
    if run.energy_drift > MAX_ENERGY_DRIFT {
        return Err(IntegrationError::Unstable {
            drift: run.energy_drift,
            limit: MAX_ENERGY_DRIFT,
            partial: Box::new(run),
        });
    }
    Ok(run)
}

/// Pointwise `‖z_a(t) − z_b(t)‖` on a shared time grid.
pub fn compare_trajectory(a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    assert_eq!(a.times.len(), b.times.len(), "trajectories on different grids");
    a.states
        .iter()
        .zip(&b.states)
        .zip(a.times.iter().zip(&b.times))
        .map(|((za, zb), (ta, tb))| {
            assert!((ta - tb).abs() <= 1e-9 * ta.abs().max(1.0), "time mismatch {ta} vs {tb}");
            za.iter().zip(zb).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
        })
        .collect()
}

/// `H(z(t))` along a trajectory.
pub fn energies(model: &ModelSpec, traj: &Trajectory) -> Result<Vec<f64>, ModelError> {
    traj.states.iter().map(|z| evaluate_h(model, z)).collect()
}

/// `n` evenly spaced times on `[0, t_end]`, computed as `i·t_end/(n−1)` so
/// that round fractions of `t_end` are hit exactly.
pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 * t_end / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::henon_heiles;
    use crate::lattice::LatticeBox;
    use crate::vectorfield::with_pins;

    fn pins_only(model: &ModelSpec) -> FourierVector {
        with_pins(model, &FourierVector::zeros(model.n, LatticeBox::centered(model.m(), 1)))
    }

    #[test]
    fn synthesis_starts_on_real_axis() {
        let model = henon_heiles();
        let mut z = pins_only(&model);
        z.set(1, &[0], 0.3);
        z.set(1, &[-1], -0.2);
        let traj = to_real_coords(&synthesize(&z, &[1.1], &[0.0, 0.5]));
        let c = traj.coords.unwrap();
        assert!(c[0].iter().all(|(x, _)| *x == 0.0));
    }

    #[test]
    fn pins_only_is_harmonic() {
        let model = henon_heiles();
        let z = pins_only(&model);
        let times = [0.0, 0.7, 3.0];
        let traj = synthesize(&z, &[1.0], &times);
        for (t, s) in times.iter().zip(&traj.states) {
            assert!((s[0] - Complex64::cis(*t)).norm() < 1e-15);
            assert_eq!(s[1], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn single_coefficient_period() {
        let mut z = FourierVector::zeros(1, LatticeBox::centered(1, 2));
        z.set(0, &[2], 0.4);
        let w = 1.3;
        let period = std::f64::consts::PI / w;
        let a = synthesize_at(&z, &[w], 0.2);
        let b = synthesize_at(&z, &[w], 0.2 + period);
        assert!((a[0] - b[0]).norm() < 1e-14);
        assert!((a[0] - Complex64::cis(2.0 * w * 0.2) * 0.4).norm() < 1e-15);
    }

    #[test]
    fn coordinate_examples() {
        let (x, y) = real_coords(Complex64::new(1.0, 0.0));
        assert_eq!((x, y), (0.0, SQRT_2));
        let (x, y) = real_coords(Complex64::new(0.0, 1.0));
        assert_eq!((x, y), (-SQRT_2, 0.0));
        for z in [Complex64::new(0.3, -1.7), Complex64::new(-2.5, 0.125)] {
            let (x, y) = real_coords(z);
            assert!((complex_from_real(x, y) - z).norm() < 1e-15);
        }
    }

    #[test]
    fn unperturbed_residual() {
        let model = henon_heiles().with_epsilon(1e-300);
        let z = pins_only(&model);
        let times = uniform_times(5.0, 11);
        assert!(ode_residual(&model, &z, &[1.0], &times).max < 1e-15);
        let off = ode_residual(&model, &z, &[1.25], &times);
        assert!((off.max - 0.25).abs() < 1e-14);
    }

    #[test]
    fn rk4_unperturbed_is_harmonic() {
        let model = henon_heiles().with_epsilon(1e-300);
        let z0 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let run = reference_integrate(&model, &z0, 10.0, 1e-3, 10_000).unwrap();
        let last = run.trajectory.states.last().unwrap();
        assert!((last[0] - Complex64::cis(10.0)).norm() < 1e-10);
    }

    #[test]
    fn rk4_conserves_energy_and_reverses() {
        let model = henon_heiles();
        let z0 = [Complex64::new(0.4, 0.1), Complex64::new(-0.2, 0.3)];
        let run = reference_integrate(&model, &z0, 10.0, 1e-4, 1000).unwrap();
        assert!(run.energy_drift < 1e-8, "{}", run.energy_drift);
        let end = run.trajectory.states.last().unwrap().clone();
        let back = rk4_run(&model, &end, 100_000, -1e-4, 100_000).unwrap();
        let z1 = back.trajectory.states.last().unwrap();
        let err: f64 = z1.iter().zip(&z0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn compare_identical() {
        let model = henon_heiles();
        let z = pins_only(&model);
        let t = synthesize(&z, &[1.0], &uniform_times(1.0, 5));
        assert!(compare_trajectory(&t, &t).iter().all(|e| *e == 0.0));
    }

    #[test]
    fn uniform_grid_hits_markers() {
        let t = uniform_times(20.0, 2001);
        assert_eq!(t[1000], 10.0);
        assert_eq!(t[2000], 20.0);
    }
}

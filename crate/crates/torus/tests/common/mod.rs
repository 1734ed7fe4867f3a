#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torus::lattice::gevrey_weight;
use torus::solver::{iterate, SolverConfig, SolverOutcome};
use torus::vectorfield::{eval_x_full, with_pins};
use torus::{fpu_beta, henon_heiles, BVariant, FourierVector, LatticeBox, ModelSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hh(amplitudes: [f64; 2]) -> ModelSpec {
    henon_heiles().with_excitation(&amplitudes).unwrap()
}

pub fn fpu(epsilon: f64, amplitudes: [f64; 3]) -> ModelSpec {
    fpu_beta(3, epsilon).unwrap().with_excitation(&amplitudes).unwrap()
}

/// The Hénon-Heiles runs at ε = 0.5.
pub fn henon_configs() -> Vec<(&'static str, ModelSpec)> {
    vec![("henon a=(1,0)", hh([1.0, 0.0])), ("henon a=(0,1)", hh([0.0, 1.0]))]
}

/// Single excitations at ε = 1 and pairwise excitations at ε = 0.1.
pub fn fpu_configs() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("fpu mode 1", fpu(1.0, [1.0, 0.0, 0.0])),
        ("fpu mode 2", fpu(1.0, [0.0, 1.0, 0.0])),
        ("fpu mode 3", fpu(1.0, [0.0, 0.0, 1.0])),
        ("fpu modes 1+2", fpu(0.1, [1.0, 1.0, 0.0])),
        ("fpu modes 1+3", fpu(0.1, [1.0, 0.0, 1.0])),
        ("fpu modes 2+3", fpu(0.1, [0.0, 1.0, 1.0])),
    ]
}

pub fn newton_config(model: &ModelSpec) -> SolverConfig {
    let mut cfg = SolverConfig::for_model(model);
    cfg.schedule = torus::solver::cap_schedule(&[4, 8, 16, 32, 64], if model.m() > 1 { 16 } else { 64 });
    cfg.r_max = 8;
    cfg.b_variant = BVariant::ChainRule;
    cfg
}

pub fn solve(model: &ModelSpec) -> SolverOutcome {
    iterate(model, &newton_config(model)).expect("solver run")
}

/// Non-resonant coefficients on `Λ_radius` with `|ẑ_j(k)| ≤ scale·exp{−|k|₁^s}`,
/// pins included.
pub fn random_gevrey_state(model: &ModelSpec, radius: usize, s: f64, scale: f64, rng: &mut ChaCha8Rng) -> FourierVector {
    let bx = LatticeBox::centered(model.m(), radius);
    let mut z = FourierVector::zeros(model.n, bx.clone());
    for j in 0..model.n {
        for k in bx.points() {
            let w = (-gevrey_weight(k.l1(), s)).exp();
            z.set(j, &k.0, scale * w * rng.random_range(-1.0..1.0));
        }
    }
    with_pins(model, &z)
}

/// `X̂(k)` by trapezoidal quadrature of `∂H₁/∂z̄(z(θ), z̄(θ))` on a uniform
/// grid of the torus, complex arithmetic throughout.
pub fn quadrature_field(model: &ModelSpec, zhat: &FourierVector, out: &LatticeBox) -> Vec<Vec<Complex64>> {
    let m = zhat.m();
    let reach = zhat.support.center.linf() as usize + zhat.support.radius;
    let nodes = 2 * model.degree() as usize * reach + 3;
    let total = nodes.pow(m as u32);
    let points = zhat.support.points();
    let partials: Vec<_> = (0..model.n).map(|j| model.h1.differentiate_zbar(j)).collect();
    let out_points = out.points();
    let mut acc = vec![vec![Complex64::new(0.0, 0.0); out_points.len()]; model.n];
    let mut theta = vec![0.0; m];
    for idx in 0..total {
        let mut rest = idx;
        for t in theta.iter_mut() {
            *t = (rest % nodes) as f64 * std::f64::consts::TAU / nodes as f64;
            rest /= nodes;
        }
        let z: Vec<Complex64> = (0..model.n)
            .map(|j| {
                points
                    .iter()
                    .map(|k| {
                        let phase: f64 = k.0.iter().zip(&theta).map(|(a, b)| *a as f64 * b).sum();
                        Complex64::from_polar(zhat.get(j, &k.0), phase)
                    })
                    .sum()
            })
            .collect();
        let zbar: Vec<Complex64> = z.iter().map(|c| c.conj()).collect();
        for (j, p) in partials.iter().enumerate() {
            let x = p.eval(&z, &zbar);
            for (o, k) in out_points.iter().enumerate() {
                let phase: f64 = k.0.iter().zip(&theta).map(|(a, b)| *a as f64 * b).sum();
                acc[j][o] += x * Complex64::from_polar(1.0, -phase);
            }
        }
    }
    for row in acc.iter_mut() {
        for v in row.iter_mut() {
            *v /= total as f64;
        }
    }
    acc
}

/// Central-difference derivative of `X̂_j(k)` with respect to every listed
/// coefficient.
pub fn fd_field_jacobian(
    model: &ModelSpec,
    zhat: &FourierVector,
    rows: &[torus::SiteIndex],
    cols: &[torus::SiteIndex],
    h: f64,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; cols.len()]; rows.len()];
    for (c, col) in cols.iter().enumerate() {
        let shifted = |sign: f64| {
            let mut z = zhat.clone();
            let v = z.get_site(col);
            z.set(col.mode, &col.index.0, v + sign * h);
            eval_x_full(model, &z)
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        for (r, row) in rows.iter().enumerate() {
            out[r][c] = (plus.get_site(row) - minus.get_site(row)) / (2.0 * h);
        }
    }
    out
}

//! Fourier-space vector field `X̂ = (∂H₁/∂z̄)^`, the nonlinear residual `F`,
//! and the lattice operators `D`, `S`, `B` and `L = D + ε(S + B)`.
//!
//! Products are expanded monomial by monomial: a `z_i` factor contributes the
//! coefficients `ẑ_i(k)`, a `z̄_i` factor the reflected coefficients `ẑ_i(-k)`.

use std::collections::HashMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::hamiltonian::{ModelSpec, Polynomial};
use crate::lattice::{convolve, FourierVector, LatticeBox, MultiIndex, Series, SiteIndex};

/// Scaling of the convergence-control operator `B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BVariant {
    /// Weight `1/e` on every tangential direction.
    #[default]
    Uniform,
    /// Weights `1/a_t`, the exact derivative of the frequency update.
    ChainRule,
}

impl BVariant {
    fn weights(self, amplitudes: &[f64]) -> Vec<f64> {
        match self {
            BVariant::Uniform => vec![(-1.0f64).exp(); amplitudes.len()],
            BVariant::ChainRule => amplitudes.iter().map(|a| 1.0 / a).collect(),
        }
    }
}

/// Dense matrix indexed by lattice sites.
#[derive(Clone, Debug)]
pub struct LatticeOperator {
    pub row_box: LatticeBox,
    pub col_box: LatticeBox,
    pub n: usize,
    pub excluded: Vec<SiteIndex>,
    pub rows: Vec<SiteIndex>,
    pub cols: Vec<SiteIndex>,
    pub matrix: Mat<f64>,
}

impl LatticeOperator {
    pub fn dim(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn entry(&self, row: &SiteIndex, col: &SiteIndex) -> Option<f64> {
        let r = self.rows.iter().position(|s| s == row)?;
        let c = self.cols.iter().position(|s| s == col)?;
        Some(self.matrix[(r, c)])
    }

    /// Row/column position of every site, for repeated lookups.
    pub fn row_lookup(&self) -> HashMap<SiteIndex, usize> {
        self.rows.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect()
    }

    pub fn col_lookup(&self) -> HashMap<SiteIndex, usize> {
        self.cols.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.matrix.ncols())
            .all(|j| (0..self.matrix.nrows()).all(|i| self.matrix[(i, j)].is_finite()))
    }
}

/// Sites of `bx` for `n` modes, mode-major then lexicographic, minus `excluded`.
pub fn box_sites(n: usize, bx: &LatticeBox, excluded: &[SiteIndex]) -> Vec<SiteIndex> {
    let points = bx.points();
    let mut out = Vec::with_capacity(n * points.len());
    for j in 0..n {
        for k in &points {
            let s = SiteIndex::new(j, k.clone());
            if !excluded.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

/// Resonant sites of `model` that fall inside `bx`.
pub fn resonant_in(model: &ModelSpec, bx: &LatticeBox) -> Vec<SiteIndex> {
    model.resonant_sites().into_iter().filter(|s| bx.contains(&s.index.0)).collect()
}

/// `ẑ_p` plus the pinned values `ẑ_{j_t}(e_t) = a_t`.
pub fn with_pins(model: &ModelSpec, zp: &FourierVector) -> FourierVector {
    let support = if zp.support.radius == 0 && zp.support.center.linf() == 0 {
        LatticeBox::centered(zp.m(), 1)
    } else {
        zp.support.clone()
    };
    let mut z = zp.reboxed(&support);
    for (site, a) in model.resonant_sites().iter().zip(&model.amplitudes) {
        z.set(site.mode, &site.index.0, *a);
    }
    z
}

/// `ẑ` with the resonant sites zeroed.
pub fn strip_pins(model: &ModelSpec, zhat: &FourierVector) -> FourierVector {
    let mut z = zhat.clone();
    z.zero_sites(&model.resonant_sites());
    z
}

/// Memoised monomial products of the lattice series `z_i`, `z̄_i`.
struct Products {
    z: Vec<Series>,
    memo: HashMap<(Vec<u32>, Vec<u32>), Series>,
    m: usize,
}

impl Products {
    fn new(zhat: &FourierVector) -> Self {
        let z = (0..zhat.n).map(|j| zhat.mode_series(j)).collect();
        Products { z, memo: HashMap::new(), m: zhat.m() }
    }

    fn product(&mut self, p: &[u32], q: &[u32]) -> Series {
        let key = (p.to_vec(), q.to_vec());
        if let Some(s) = self.memo.get(&key) {
            return s.clone();
        }
        let result = if let Some(i) = p.iter().position(|&e| e > 0) {
            let mut p1 = p.to_vec();
            p1[i] -= 1;
            let prev = self.product(&p1, q);
            convolve(&prev, &self.z[i], false, false)
        } else if let Some(i) = q.iter().position(|&e| e > 0) {
            let mut q1 = q.to_vec();
            q1[i] -= 1;
            let prev = self.product(p, &q1);
            convolve(&prev, &self.z[i], false, true)
        } else {
            Series::delta(MultiIndex::zero(self.m), 1.0)
        };
        self.memo.insert(key, result.clone());
        result
    }

    /// Fourier series of `poly(z(θ), z̄(θ))`, on a centred box.
    fn polynomial(&mut self, poly: &Polynomial, reach: usize) -> Series {
        let radius = poly.degree() as usize * reach;
        let mut out = Series::zeros(LatticeBox::centered(self.m, radius));
        for t in &poly.monomials {
            let s = self.product(&t.p, &t.q);
            out.add_scaled(t.coeff, &s);
        }
        out
    }
}

/// First and second derivatives of `H₁` expanded at a given `ẑ`.
pub struct FieldExpansion {
    pub n: usize,
    pub m: usize,
    /// `X̂_j`.
    pub x: Vec<Series>,
    /// `Ĝ_{j,i}` for `∂X_j/∂z_i`, row-major `j * n + i`.
    pub g: Vec<Series>,
    /// `Ĥ_{j,i}` for `∂X_j/∂z̄_i`.
    pub h: Vec<Series>,
}

impl FieldExpansion {
    pub fn new(model: &ModelSpec, zhat: &FourierVector, second: bool) -> Self {
        let n = model.n;
        let reach = zhat.support.center.linf() as usize + zhat.support.radius;
        let mut prod = Products::new(zhat);
        let xs: Vec<Polynomial> = (0..n).map(|j| model.h1.differentiate_zbar(j)).collect();
        let x = xs.iter().map(|p| prod.polynomial(p, reach)).collect();
        let (mut g, mut h) = (Vec::new(), Vec::new());
        if second {
            for xj in &xs {
                for i in 0..n {
                    g.push(prod.polynomial(&xj.differentiate_z(i), reach));
                    h.push(prod.polynomial(&xj.differentiate_zbar(i), reach));
                }
            }
        }
        FieldExpansion { n, m: zhat.m(), x, g, h }
    }

    /// `X̂` on the smallest centred box holding every mode.
    pub fn x_vector(&self) -> FourierVector {
        let radius = self.x.iter().map(|s| s.support.radius).max().unwrap_or(0);
        let bx = LatticeBox::centered(self.m, radius);
        let modes: Vec<Series> = self.x.iter().map(|s| s.reboxed(&bx)).collect();
        FourierVector::from_modes(&modes)
    }

    /// `∂X̂_j(k)/∂ẑ_i(k') = Ĝ_{j,i}(k - k') + Ĥ_{j,i}(k + k')`.
    #[inline]
    pub fn derivative(&self, j: usize, k: &[i64], i: usize, kp: &[i64], scratch: &mut [i64]) -> f64 {
        let idx = j * self.n + i;
        for d in 0..self.m {
            scratch[d] = k[d] - kp[d];
        }
        let a = self.g[idx].get(&scratch[..self.m]);
        for d in 0..self.m {
            scratch[d] = k[d] + kp[d];
        }
        a + self.h[idx].get(&scratch[..self.m])
    }

    /// Matrix of derivatives between two site lists.
    pub fn derivative_matrix(&self, rows: &[SiteIndex], cols: &[SiteIndex]) -> Mat<f64> {
        let mut scratch = vec![0i64; self.m];
        Mat::from_fn(rows.len(), cols.len(), |r, c| {
            let (a, b) = (&rows[r], &cols[c]);
            self.derivative(a.mode, &a.index.0, b.mode, &b.index.0, &mut scratch)
        })
    }

    /// Rows `(j_t, e_t)` of the derivative, one per tangential direction.
    pub fn grad_xq_matrix(&self, model: &ModelSpec, cols: &[SiteIndex]) -> Mat<f64> {
        self.derivative_matrix(&model.resonant_sites(), cols)
    }
}

/// `X̂` cropped (or zero-extended) to `out_box`.
pub fn eval_x(model: &ModelSpec, zhat: &FourierVector, out_box: &LatticeBox) -> FourierVector {
    eval_x_full(model, zhat).reboxed(out_box)
}

/// `X̂` on its full support.
pub fn eval_x_full(model: &ModelSpec, zhat: &FourierVector) -> FourierVector {
    FieldExpansion::new(model, zhat, false).x_vector()
}

/// Resonant entries `X̂_{j_t}(e_t)` and the remaining field.
pub fn split_qp(x: &FourierVector, model: &ModelSpec) -> (Vec<f64>, FourierVector) {
    let sites = model.resonant_sites();
    let xq = sites.iter().map(|s| x.get_site(s)).collect();
    let mut xp = x.clone();
    xp.zero_sites(&sites);
    (xq, xp)
}

/// Inverse of [`split_qp`].
pub fn merge_qp(xq: &[f64], xp: &FourierVector, model: &ModelSpec) -> FourierVector {
    let sites = model.resonant_sites();
    let reach = xp.support.center.linf() as usize + xp.support.radius;
    let mut x = xp.reboxed(&LatticeBox::centered(xp.m(), reach.max(1)));
    for (s, v) in sites.iter().zip(xq) {
        x.set(s.mode, &s.index.0, *v);
    }
    x
}

/// `-<k, ω'> + ω_j` at a site.
#[inline]
pub fn diagonal(model: &ModelSpec, omega_t_prime: &[f64], site: &SiteIndex) -> f64 {
    model.omega[site.mode] - site.index.dot(omega_t_prime)
}

/// `F(j,k) = (-<k, ω'> + ω_j) ẑ_j(k) + ε X̂_j(k)` on non-resonant sites, over
/// the full support of the field.
pub fn eval_f(model: &ModelSpec, zp: &FourierVector, omega_t_prime: &[f64]) -> FourierVector {
    let zhat = with_pins(model, zp);
    let x = eval_x_full(model, &zhat);
    residual_from_parts(model, &zhat, &x, omega_t_prime)
}

pub(crate) fn residual_from_parts(
    model: &ModelSpec,
    zhat: &FourierVector,
    x: &FourierVector,
    omega_t_prime: &[f64],
) -> FourierVector {
    let hull = x.support.hull_centered(&zhat.support);
    let z = zhat.reboxed(&hull);
    let mut f = x.reboxed(&hull);
    let len = hull.len();
    let m = hull.dim();
    let coords = hull.coordinates();
    for j in 0..model.n {
        for p in 0..len {
            let kdot = crate::lattice::dot(&coords[p * m..(p + 1) * m], omega_t_prime);
            let idx = j * len + p;
            f.values[idx] = (model.omega[j] - kdot) * z.values[idx] + model.epsilon * f.values[idx];
        }
    }
    f.zero_sites(&model.resonant_sites());
    f
}

/// `S = ∂X̂_p/∂ẑ_p` on the non-resonant sites of `bx`.
pub fn jacobian_s(model: &ModelSpec, zhat: &FourierVector, bx: &LatticeBox) -> LatticeOperator {
    let field = FieldExpansion::new(model, zhat, true);
    jacobian_from(&field, model, bx)
}

pub(crate) fn jacobian_from(field: &FieldExpansion, model: &ModelSpec, bx: &LatticeBox) -> LatticeOperator {
    let excluded = resonant_in(model, bx);
    let sites = box_sites(model.n, bx, &excluded);
    let matrix = field.derivative_matrix(&sites, &sites);
    LatticeOperator {
        row_box: bx.clone(),
        col_box: bx.clone(),
        n: model.n,
        excluded,
        rows: sites.clone(),
        cols: sites,
        matrix,
    }
}

/// `∂X̂_q/∂ẑ_p`: one row per resonant site, non-resonant columns of `bx`.
pub fn grad_xq(model: &ModelSpec, zhat: &FourierVector, bx: &LatticeBox) -> LatticeOperator {
    let field = FieldExpansion::new(model, zhat, true);
    grad_xq_from(&field, model, bx)
}

pub(crate) fn grad_xq_from(field: &FieldExpansion, model: &ModelSpec, bx: &LatticeBox) -> LatticeOperator {
    let excluded = resonant_in(model, bx);
    let cols = box_sites(model.n, bx, &excluded);
    let rows = model.resonant_sites();
    let matrix = field.derivative_matrix(&rows, &cols);
    LatticeOperator {
        row_box: LatticeBox::centered(model.m(), 1),
        col_box: bx.clone(),
        n: model.n,
        excluded,
        rows,
        cols,
        matrix,
    }
}

/// `B((j,k),(j',k')) = -ẑ_j(k) Σ_t w_t k_t ∂X̂_{j_t}(e_t)/∂ẑ_{j'}(k')`.
pub fn assemble_b(model: &ModelSpec, zp: &FourierVector, bx: &LatticeBox, variant: BVariant) -> LatticeOperator {
    let zhat = with_pins(model, zp);
    let field = FieldExpansion::new(model, &zhat, true);
    b_from(&field, model, zp, bx, variant)
}

pub(crate) fn b_from(
    field: &FieldExpansion,
    model: &ModelSpec,
    zp: &FourierVector,
    bx: &LatticeBox,
    variant: BVariant,
) -> LatticeOperator {
    let excluded = resonant_in(model, bx);
    let sites = box_sites(model.n, bx, &excluded);
    let grad = field.grad_xq_matrix(model, &sites);
    let w = variant.weights(&model.amplitudes);
    // Rank-m form: B = Σ_t u_t v_tᵀ with u_t(j,k) = -w_t k_t ẑ_j(k).
    let u: Vec<Vec<f64>> = (0..model.m())
        .map(|t| {
            sites
                .iter()
                .map(|s| -w[t] * s.index.0[t] as f64 * zp.get_site(s))
                .collect()
        })
        .collect();
    let matrix = Mat::from_fn(sites.len(), sites.len(), |r, c| {
        (0..model.m()).map(|t| u[t][r] * grad[(t, c)]).sum()
    });
    LatticeOperator {
        row_box: bx.clone(),
        col_box: bx.clone(),
        n: model.n,
        excluded,
        rows: sites.clone(),
        cols: sites,
        matrix,
    }
}

/// `L = D + ε(S + B)` on the non-resonant sites of `bx`.
pub fn assemble_l(
    model: &ModelSpec,
    zp: &FourierVector,
    omega_t_prime: &[f64],
    bx: &LatticeBox,
    variant: BVariant,
) -> LatticeOperator {
    let zhat = with_pins(model, zp);
    let field = FieldExpansion::new(model, &zhat, true);
    l_from(&field, model, zp, omega_t_prime, bx, Some(variant))
}

/// `T = D + εS` on the non-resonant sites of `bx`.
pub fn assemble_t(model: &ModelSpec, zp: &FourierVector, omega_t_prime: &[f64], bx: &LatticeBox) -> LatticeOperator {
    let zhat = with_pins(model, zp);
    let field = FieldExpansion::new(model, &zhat, true);
    l_from(&field, model, zp, omega_t_prime, bx, None)
}

pub(crate) fn l_from(
    field: &FieldExpansion,
    model: &ModelSpec,
    zp: &FourierVector,
    omega_t_prime: &[f64],
    bx: &LatticeBox,
    variant: Option<BVariant>,
) -> LatticeOperator {
    let mut op = jacobian_from(field, model, bx);
    let eps = model.epsilon;
    let dim = op.rows.len();
    if let Some(v) = variant {
        let b = b_from(field, model, zp, bx, v);
        for c in 0..dim {
            for r in 0..dim {
                op.matrix[(r, c)] = eps * (op.matrix[(r, c)] + b.matrix[(r, c)]);
            }
        }
    } else {
        for c in 0..dim {
            for r in 0..dim {
                op.matrix[(r, c)] *= eps;
            }
        }
    }
    for (r, s) in op.rows.iter().enumerate() {
        op.matrix[(r, r)] += diagonal(model, omega_t_prime, s);
    }
    op
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{fpu_beta, henon_heiles};
    use std::f64::consts::SQRT_2;

    fn hh_pins_only() -> (ModelSpec, FourierVector) {
        let model = henon_heiles();
        let zp = FourierVector::zeros(2, LatticeBox::centered(1, 1));
        (model, zp)
    }

    #[test]
    fn henon_heiles_first_iterate_field() {
        let (model, zp) = hh_pins_only();
        let zhat = with_pins(&model, &zp);
        let x = eval_x_full(&model, &zhat);
        assert!(x.mode(0).iter().all(|v| *v == 0.0));
        assert!((x.get(1, &[0]) - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((x.get(1, &[2]) - 1.0 / (2.0 * SQRT_2)).abs() < 1e-15);
        assert!((x.get(1, &[-2]) - 1.0 / (2.0 * SQRT_2)).abs() < 1e-15);
        let nonzero = x.values.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn zero_input_gives_zero_field() {
        for model in [henon_heiles(), fpu_beta(3, 1.0).unwrap()] {
            let z = FourierVector::zeros(model.n, LatticeBox::centered(1, 2));
            assert_eq!(eval_x_full(&model, &z).norm_max(), 0.0);
        }
    }

    #[test]
    fn split_and_merge() {
        let (model, zp) = hh_pins_only();
        let x = eval_x_full(&model, &with_pins(&model, &zp));
        let (xq, xp) = split_qp(&x, &model);
        assert_eq!(xq, vec![0.0]);
        assert_eq!(xp, x);

        let mut delta = FourierVector::zeros(2, LatticeBox::centered(1, 1));
        delta.set(0, &[1], 1.0);
        let (xq, xp) = split_qp(&delta, &model);
        assert_eq!(xq, vec![1.0]);
        assert_eq!(xp.norm_max(), 0.0);
        assert_eq!(merge_qp(&xq, &xp, &model), delta);
    }

    #[test]
    fn henon_heiles_first_residual() {
        let (model, zp) = hh_pins_only();
        let f = eval_f(&model, &zp, &[1.0]);
        assert!((f.get(1, &[0]) - 0.5 / SQRT_2).abs() < 1e-15);
        assert!((f.get(1, &[2]) - 0.5 / (2.0 * SQRT_2)).abs() < 1e-15);
        assert_eq!(f.get(0, &[1]), 0.0);

        let tiny = model.clone().with_epsilon(1e-300);
        assert!(eval_f(&tiny, &zp, &[1.0]).norm_max() < 1e-299);
    }

    #[test]
    fn henon_heiles_first_jacobian() {
        let (model, zp) = hh_pins_only();
        let zhat = with_pins(&model, &zp);
        let bx = LatticeBox::centered(1, 4);
        let s = jacobian_s(&model, &zhat, &bx);
        let site = |j, k| SiteIndex::new(j, MultiIndex(vec![k]));
        let v = s.entry(&site(1, 2), &site(0, 3)).unwrap();
        assert!((v - 1.0 / SQRT_2).abs() < 1e-15);
        for k in -4..=4 {
            for kp in -4..=4 {
                assert_eq!(s.entry(&site(1, k), &site(1, kp)).unwrap(), 0.0);
            }
        }
        assert!(s.entry(&site(0, 1), &site(0, 1)).is_none());
        assert_eq!(s.dim(), (17, 17));
    }

    #[test]
    fn henon_heiles_first_frequency_gradient() {
        let (model, zp) = hh_pins_only();
        let zhat = with_pins(&model, &zp);
        let g = grad_xq(&model, &zhat, &LatticeBox::centered(1, 4));
        let col = |j, k| {
            g.cols.iter().position(|s| *s == SiteIndex::new(j, MultiIndex(vec![k]))).unwrap()
        };
        // Both offsets k - k' and k + k' land on ĉ₁(1) = 1 here.
        assert!((g.matrix[(0, col(1, 0))] - SQRT_2).abs() < 1e-15);
        assert!((g.matrix[(0, col(1, 2))] - 1.0 / SQRT_2).abs() < 1e-15);

        let mut silent = model.clone();
        silent.h1 = Polynomial::zero(2);
        let g0 = grad_xq(&silent, &zhat, &LatticeBox::centered(1, 4));
        assert_eq!(crate::linalg::max_abs(&g0.matrix), 0.0);
    }

    #[test]
    fn b_vanishes_without_p_part() {
        let (model, zp) = hh_pins_only();
        let bx = LatticeBox::centered(1, 3);
        for v in [BVariant::Uniform, BVariant::ChainRule] {
            let b = assemble_b(&model, &zp, &bx, v);
            assert_eq!(crate::linalg::max_abs(&b.matrix), 0.0);
        }
    }

    #[test]
    fn diagonal_of_l() {
        let (model, zp) = hh_pins_only();
        let bx = LatticeBox::centered(1, 3);
        let eps0 = model.clone().with_epsilon(1e-300);
        let l = assemble_l(&eps0, &zp, &[1.0], &bx, BVariant::Uniform);
        let site = |j, k| SiteIndex::new(j, MultiIndex(vec![k]));
        assert!((l.entry(&site(1, 0), &site(1, 0)).unwrap() - SQRT_2).abs() < 1e-15);
        assert!((l.entry(&site(1, 2), &site(1, 2)).unwrap() - (SQRT_2 - 2.0)).abs() < 1e-15);
        assert_eq!(l.entry(&site(0, 0), &site(0, 0)).unwrap(), 1.0);
        assert_eq!(l.entry(&site(0, -1), &site(0, -1)).unwrap(), 2.0);
        for r in 0..l.rows.len() {
            for c in 0..l.cols.len() {
                if r != c {
                    assert!(l.matrix[(r, c)].abs() < 1e-299);
                }
            }
        }
    }
}

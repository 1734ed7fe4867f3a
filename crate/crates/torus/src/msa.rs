//! Multi-scale diagnostics of the linearized operator at a fixed state.
//!
//! Gluing convention: write `L_N = D + ε·SB` with `SB = S + B`. For a row
//! site `x` with local site set `Q(x)`, restricting `L_N G = E` to the rows of
//! `Q` gives
//!
//! ```text
//! G(x,·) = Ψ(x,·) − ε Σ_{w∉Q} Φ(x,w) G(w,·)
//! Ψ(x,y) = L_Q⁻¹(x,y)                    (y ∈ Q)
//! Φ(x,w) = Σ_{y∈Q} L_Q⁻¹(x,y) SB(y,w)    (w ∉ Q), 0 on Q
//! ```
//!
//! so `(E + εΦ) L_N⁻¹ = Ψ` holds exactly. `Φ` carries no factor of `ε`.

use std::collections::BTreeMap;
use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MsaError;
use crate::hamiltonian::ModelSpec;
use crate::lattice::{gevrey_fit, gevrey_weight, FourierVector, LatticeBox, MultiIndex, SiteIndex};
use crate::linalg::{eigenvalues, max_abs, min_singular_value, spectral_norm, submatrix, Factored, LinearSolver};
use crate::resonance::ResonanceConfig;
use crate::solver::{log_eps_n, scan_decay, Distance, WorstPair};
use crate::vectorfield::{
    b_from, box_sites, diagonal, jacobian_from, l_from, strip_pins, with_pins, BVariant, FieldExpansion,
    LatticeOperator,
};

/// The operators `D`, `S`, `B` frozen at one state `(ẑ, ω'_T)`.
pub struct Linearization<'a> {
    pub model: &'a ModelSpec,
    pub omega_t_prime: Vec<f64>,
    pub variant: BVariant,
    zp: FourierVector,
    field: FieldExpansion,
}

impl<'a> Linearization<'a> {
    /// `zhat` may or may not carry the pinned sites.
    pub fn new(model: &'a ModelSpec, zhat: &FourierVector, omega_t_prime: &[f64], variant: BVariant) -> Self {
        let zp = strip_pins(model, zhat);
        let field = FieldExpansion::new(model, &with_pins(model, &zp), true);
        Linearization { model, omega_t_prime: omega_t_prime.to_vec(), variant, zp, field }
    }

    pub fn zp(&self) -> &FourierVector {
        &self.zp
    }

    /// Gevrey exponent fitted to the non-resonant coefficients.
    pub fn gevrey_s(&self) -> f64 {
        gevrey_fit(&self.zp)
    }

    /// `L = D + ε(S + B)` on the non-resonant sites of `bx`.
    pub fn l(&self, bx: &LatticeBox) -> LatticeOperator {
        l_from(&self.field, self.model, &self.zp, &self.omega_t_prime, bx, Some(self.variant))
    }

    /// `T = D + εS` on the non-resonant sites of `bx`.
    pub fn t(&self, bx: &LatticeBox) -> LatticeOperator {
        l_from(&self.field, self.model, &self.zp, &self.omega_t_prime, bx, None)
    }

    /// `S` on the non-resonant sites of `bx`.
    pub fn s(&self, bx: &LatticeBox) -> LatticeOperator {
        jacobian_from(&self.field, self.model, bx)
    }

    pub fn b(&self, bx: &LatticeBox) -> LatticeOperator {
        b_from(&self.field, self.model, &self.zp, bx, self.variant)
    }

    /// `S + B`, in the site order of [`Linearization::l`].
    pub fn coupling(&self, bx: &LatticeBox) -> LatticeOperator {
        let mut op = self.s(bx);
        let b = self.b(bx);
        let dim = op.rows.len();
        for c in 0..dim {
            for r in 0..dim {
                op.matrix[(r, c)] += b.matrix[(r, c)];
            }
        }
        op
    }

    /// `T = D + εS` over every site of `bx`, resonant sites included.
    pub fn t_full(&self, bx: &LatticeBox) -> LatticeOperator {
        let sites = box_sites(self.model.n, bx, &[]);
        let eps = self.model.epsilon;
        let mut matrix = self.field.derivative_matrix(&sites, &sites);
        for c in 0..sites.len() {
            for r in 0..sites.len() {
                matrix[(r, c)] *= eps;
            }
        }
        for (r, s) in sites.iter().enumerate() {
            matrix[(r, r)] += diagonal(self.model, &self.omega_t_prime, s);
        }
        LatticeOperator {
            row_box: bx.clone(),
            col_box: bx.clone(),
            n: self.model.n,
            excluded: Vec::new(),
            rows: sites.clone(),
            cols: sites,
            matrix,
        }
    }

    /// `min |−⟨k,ω'⟩ + ω_j|` over the non-resonant sites of `bx`.
    pub fn min_divisor(&self, bx: &LatticeBox) -> f64 {
        let excluded = self.model.resonant_sites();
        box_sites(self.model.n, bx, &excluded)
            .iter()
            .map(|s| diagonal(self.model, &self.omega_t_prime, s).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterRestriction {
    #[serde(skip)]
    pub op: Option<LatticeOperator>,
    pub center: MultiIndex,
    pub radius: usize,
    /// `k₀ ∈ Λ_{2N}`: the off-centre estimates do not apply.
    pub near_center: bool,
    pub excluded: usize,
    pub s: f64,
    pub b_norm: f64,
    /// `(2N+1)^m exp{−N^s}`.
    pub b_bound: f64,
    /// `None` when `near_center`.
    pub b_small: Option<bool>,
}

/// `L` restricted to `k₀ + Λ_N`, with the norm of its `B` block.
pub fn restrict_outer(lin: &Linearization, k0: &MultiIndex, n: usize) -> OuterRestriction {
    let bx = LatticeBox::new(k0.clone(), n);
    let op = lin.l(&bx);
    let b_norm = spectral_norm(&lin.b(&bx).matrix);
    let m = k0.dim() as i32;
    let s = lin.gevrey_s();
    let b_bound = (2.0 * n as f64 + 1.0).powi(m) * (-gevrey_weight(n as i64, s)).exp();
    let near_center = k0.linf() as usize <= 2 * n;
    OuterRestriction {
        center: k0.clone(),
        radius: n,
        near_center,
        excluded: op.excluded.len(),
        s,
        b_norm,
        b_bound,
        b_small: (!near_center).then_some(b_norm <= b_bound),
        op: Some(op),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueConfig {
    /// Inner radius `K`.
    pub k: usize,
    /// Central box `Λ_{center_factor·K}`.
    pub center_factor: usize,
    /// Rows in `Λ_{inner_factor·K}` use the central box.
    pub inner_factor: usize,
    pub solver: LinearSolver,
}

/// `max(2, round(N^{1/10}))`.
pub fn default_inner_radius(n: usize) -> usize {
    ((n as f64).powf(0.1).round() as usize).max(2)
}

impl GlueConfig {
    pub fn for_radius(n: usize) -> Self {
        GlueConfig { k: default_inner_radius(n), center_factor: 10, inner_factor: 9, solver: LinearSolver::DenseLu }
    }

    pub fn validate(&self, n: usize) -> Result<(), MsaError> {
        if self.k == 0 {
            return Err(MsaError::Config("K must be positive".into()));
        }
        if self.inner_factor >= self.center_factor {
            return Err(MsaError::Config("inner factor must be below the centre factor".into()));
        }
        if self.center_factor * self.k > n {
            return Err(MsaError::Config(format!(
                "central box radius {}·K = {} exceeds N = {n}",
                self.center_factor,
                self.center_factor * self.k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayScan {
    pub s: f64,
    pub ok: bool,
    pub pairs_checked: usize,
    pub worst: Option<WorstPair>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlueReport {
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    pub local_boxes: usize,
    /// `‖X·L_N − E‖_max`.
    pub residual: f64,
    /// `‖X − L_N⁻¹‖_max / ‖L_N⁻¹‖_max` against a dense inverse.
    pub relative_error: f64,
    pub dense_residual: f64,
    pub phi_diagonal_max: f64,
    pub phi_decay: DecayScan,
    /// The same scan under [`Distance::Reflected`].
    pub phi_decay_reflected: DecayScan,
    pub glue_seconds: f64,
    pub dense_seconds: f64,
}

pub struct GlueResult {
    pub sites: Vec<SiteIndex>,
    pub approx_inverse: Mat<f64>,
    pub psi: Mat<f64>,
    pub phi: Mat<f64>,
    pub report: GlueReport,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum LocalBox {
    Center,
    Translated(Vec<i64>),
}

/// `L_N⁻¹` from local inverses via `(E + εΦ) X = Ψ`.
pub fn glue_inverse(lin: &Linearization, n: usize, cfg: &GlueConfig) -> Result<GlueResult, MsaError> {
    cfg.validate(n)?;
    let m = lin.model.m();
    let eps = lin.model.epsilon;
    let bx = LatticeBox::centered(m, n);
    let op = lin.l(&bx);
    let sb = lin.coupling(&bx).matrix;
    let sites = op.rows.clone();
    let dim = sites.len();
    let inner = (cfg.inner_factor * cfg.k) as i64;
    let center = (cfg.center_factor * cfg.k) as i64;
    let k = cfg.k as i64;

    let start = Instant::now();
    let mut groups: BTreeMap<LocalBox, Vec<usize>> = BTreeMap::new();
    for (i, s) in sites.iter().enumerate() {
        let key = if s.index.linf() <= inner { LocalBox::Center } else { LocalBox::Translated(s.index.0.clone()) };
        groups.entry(key).or_default().push(i);
    }
    let groups: Vec<(LocalBox, Vec<usize>)> = groups.into_iter().collect();
    let locals: Vec<_> = groups
        .par_iter()
        .map(|(key, rows)| {
            let q: Vec<usize> = (0..dim)
                .filter(|&c| {
                    let kc = &sites[c].index.0;
                    match key {
                        LocalBox::Center => kc.iter().all(|x| x.abs() <= center),
                        LocalBox::Translated(k0) => kc.iter().zip(k0).all(|(x, y)| (x - y).abs() <= k),
                    }
                })
                .collect();
            let f = Factored::new(&submatrix(&op.matrix, &q, &q), cfg.solver);
            if f.is_singular() {
                return Err(MsaError::Singular { what: format!("local operator {key:?}"), ratio: f.pivot_ratio });
            }
            let inv = f.inverse();
            let pos: Vec<usize> = rows.iter().map(|r| q.iter().position(|c| c == r).unwrap()).collect();
            let inv_rows = submatrix(&inv, &pos, &(0..q.len()).collect::<Vec<_>>());
            let mut phi_rows = &inv_rows * submatrix(&sb, &q, &(0..dim).collect::<Vec<_>>());
            for &c in &q {
                for r in 0..rows.len() {
                    phi_rows[(r, c)] = 0.0;
                }
            }
            Ok((rows.clone(), q, inv_rows, phi_rows))
        })
        .collect::<Result<_, _>>()?;

    let mut psi = Mat::<f64>::zeros(dim, dim);
    let mut phi = Mat::<f64>::zeros(dim, dim);
    for (rows, q, inv_rows, phi_rows) in &locals {
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in q.iter().enumerate() {
                psi[(r, c)] = inv_rows[(a, b)];
            }
            for c in 0..dim {
                phi[(r, c)] = phi_rows[(a, c)];
            }
        }
    }
    let system = Mat::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 } + eps * phi[(r, c)]);
    let f = Factored::new(&system, cfg.solver);
    if f.is_singular() {
        return Err(MsaError::Singular { what: "E + εΦ".into(), ratio: f.pivot_ratio });
    }
    let x = f.solve_mat(&psi);
    let glue_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let dense_f = Factored::new(&op.matrix, cfg.solver);
    let dense = dense_f.inverse();
    let dense_seconds = start.elapsed().as_secs_f64();
    if dense_f.is_singular() {
        return Err(MsaError::Singular { what: "L_N".into(), ratio: dense_f.pivot_ratio });
    }

    let identity_gap = |a: &Mat<f64>| {
        let p = a * &op.matrix;
        max_abs(&Mat::from_fn(dim, dim, |r, c| p[(r, c)] - if r == c { 1.0 } else { 0.0 }))
    };
    let residual = identity_gap(&x);
    let dense_residual = identity_gap(&dense);
    let relative_error = max_abs(&(&x - &dense)) / max_abs(&dense);
    let phi_diagonal_max = (0..dim).map(|i| phi[(i, i)].abs()).fold(0.0, f64::max);
    let s = lin.gevrey_s();
    let window = (1.0, 100.0 * cfg.k as f64);
    let decay = |metric| {
        let (ok, pairs_checked, worst) = scan_decay(&phi, &sites, &sites, window, s, 2.0, metric);
        DecayScan { s, ok, pairs_checked, worst }
    };

    Ok(GlueResult {
        report: GlueReport {
            n,
            k: cfg.k,
            dim,
            local_boxes: locals.len(),
            residual,
            relative_error,
            dense_residual,
            phi_diagonal_max,
            phi_decay: decay(Distance::Direct),
            phi_decay_reflected: decay(Distance::Reflected),
            glue_seconds,
            dense_seconds,
        },
        sites,
        approx_inverse: x,
        psi,
        phi,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterSigma {
    pub center: MultiIndex,
    pub min_singular: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularScan {
    pub n: usize,
    pub n_prime: usize,
    /// `log(1/ε_{N'}) = (log N')^15`, the theoretical threshold.
    pub threshold_log: f64,
    /// Practical threshold on the smallest singular value.
    pub theta: f64,
    pub scanned: Vec<CenterSigma>,
    pub sites: Vec<MultiIndex>,
    /// Every pair satisfies `|k₁ − k₂|_∞ ≤ 4N'`.
    pub clustered: bool,
}

/// Centres on the stride-`N'` grid of `Λ_N` whose `T_{k,N'}` (resonant sites
/// included) has smallest singular value below `theta`, by default
/// `1e−3·min|D|` over the non-resonant sites of `Λ_N`.
pub fn singular_scan(
    lin: &Linearization,
    n: usize,
    n_prime: usize,
    theta: Option<f64>,
) -> Result<SingularScan, MsaError> {
    if n_prime == 0 || n_prime >= n {
        return Err(MsaError::Config(format!("need 0 < N' < N, got N' = {n_prime}, N = {n}")));
    }
    let m = lin.model.m();
    let theta = theta.unwrap_or_else(|| 1e-3 * lin.min_divisor(&LatticeBox::centered(m, n)));
    let steps = (n / n_prime) as i64;
    let grid = LatticeBox::centered(m, steps as usize);
    let scanned: Vec<CenterSigma> = grid
        .points()
        .into_par_iter()
        .map(|g| {
            let center = MultiIndex(g.0.iter().map(|x| x * n_prime as i64).collect());
            let op = lin.t_full(&LatticeBox::new(center.clone(), n_prime));
            CenterSigma { min_singular: min_singular_value(&op.matrix), center }
        })
        .collect();
    let sites: Vec<MultiIndex> =
        scanned.iter().filter(|c| c.min_singular < theta).map(|c| c.center.clone()).collect();
    let reach = 4 * n_prime as i64;
    let clustered = sites.iter().enumerate().all(|(i, a)| sites[i + 1..].iter().all(|b| a.sub(b).linf() <= reach));
    Ok(SingularScan {
        n,
        n_prime,
        threshold_log: -log_eps_n(n_prime.max(2)),
        theta,
        scanned,
        sites,
        clustered,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SchurReport {
    #[serde(skip)]
    pub u: Mat<f64>,
    /// `‖T_{Γ∖Π}⁻¹‖₂`.
    pub a_inv_norm: f64,
    pub u_inv_norm: f64,
    pub t_inv_norm: f64,
    /// `4‖T_{Γ∖Π}⁻¹‖₂²‖U⁻¹‖₂ + ‖T_{Γ∖Π}⁻¹‖₂`.
    pub bound: f64,
    pub holds: bool,
}

/// `U = T_Π − T_{Π,Γ∖Π} T_{Γ∖Π}⁻¹ T_{Γ∖Π,Π}` for row/column positions `pi`.
pub fn schur_complement(t: &Mat<f64>, pi: &[usize]) -> Result<SchurReport, MsaError> {
    let dim = t.nrows();
    if pi.is_empty() || pi.len() >= dim {
        return Err(MsaError::Config(format!("Π must be a nonempty proper subset, got {} of {dim}", pi.len())));
    }
    if pi.iter().any(|&p| p >= dim) {
        return Err(MsaError::Config("Π position out of range".into()));
    }
    let rest: Vec<usize> = (0..dim).filter(|i| !pi.contains(i)).collect();
    let a = submatrix(t, &rest, &rest);
    let fa = Factored::new(&a, LinearSolver::DenseLu);
    if fa.is_singular() {
        return Err(MsaError::Singular { what: "T restricted to Γ∖Π".into(), ratio: fa.pivot_ratio });
    }
    let a_inv = fa.inverse();
    let u = submatrix(t, pi, pi) - submatrix(t, pi, &rest) * &a_inv * submatrix(t, &rest, pi);
    let inv_norm = |x: &Mat<f64>| {
        let s = min_singular_value(x);
        if s > 0.0 { 1.0 / s } else { f64::INFINITY }
    };
    let a_inv_norm = spectral_norm(&a_inv);
    let u_inv_norm = inv_norm(&u);
    let t_inv_norm = inv_norm(t);
    let bound = 4.0 * a_inv_norm * a_inv_norm * u_inv_norm + a_inv_norm;
    Ok(SchurReport { u, a_inv_norm, u_inv_norm, t_inv_norm, bound, holds: t_inv_norm <= bound })
}

/// [`schur_complement`] with `Π` given as sites of `op`.
pub fn schur_reduce(op: &LatticeOperator, pi_sites: &[SiteIndex]) -> Result<SchurReport, MsaError> {
    let lookup = op.row_lookup();
    let pi = pi_sites
        .iter()
        .map(|s| lookup.get(s).copied().ok_or_else(|| MsaError::Config(format!("site {s} not in the operator"))))
        .collect::<Result<Vec<_>, _>>()?;
    schur_complement(&op.matrix, &pi)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenShift {
    pub site: SiteIndex,
    pub diagonal: f64,
    pub eigenvalue: (f64, f64),
    /// `Re λ − (−⟨k,ω'⟩ + ω_j)`.
    pub mu: f64,
    pub mu_abs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenShiftTable {
    pub center: MultiIndex,
    pub radius: usize,
    pub shifts: Vec<EigenShift>,
    /// Eigenvalues whose two nearest diagonal entries tie within `1e−12`.
    pub ambiguous: usize,
    pub max_mu: f64,
    /// `ε‖S‖₂`, the perturbation bound for `T = D + εS`.
    pub bound_s: f64,
    /// `ε‖S + B‖₂`.
    pub bound_sb: f64,
    pub within_s_bound: bool,
    pub within_sb_bound: bool,
}

const TIE: f64 = 1e-12;

fn distance(a: (f64, f64), d: f64) -> f64 {
    (a.0 - d).hypot(a.1)
}

fn shift_table(lin: &Linearization, center: &MultiIndex, radius: usize) -> EigenShiftTable {
    let bx = LatticeBox::new(center.clone(), radius);
    let t = lin.t(&bx);
    let eig = eigenvalues(&t.matrix);
    let diag: Vec<f64> = t.rows.iter().map(|s| diagonal(lin.model, &lin.omega_t_prime, s)).collect();

    let mut ambiguous = 0;
    let mut shifts = Vec::with_capacity(eig.len());
    for &e in &eig {
        let mut order: Vec<(f64, usize)> = diag.iter().enumerate().map(|(b, &x)| (distance(e, x), b)).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0));
        let Some(&(best, b)) = order.first() else { continue };
        if order.get(1).is_some_and(|&(next, _)| next - best <= TIE) {
            ambiguous += 1;
        }
        shifts.push(EigenShift {
            site: t.rows[b].clone(),
            diagonal: diag[b],
            eigenvalue: e,
            mu: e.0 - diag[b],
            mu_abs: best,
        });
    }
    let max_mu = shifts.iter().map(|s| s.mu_abs).fold(0.0, f64::max);
    let eps = lin.model.epsilon;
    let bound_s = eps * spectral_norm(&lin.s(&bx).matrix);
    let bound_sb = eps * spectral_norm(&lin.coupling(&bx).matrix);
    EigenShiftTable {
        center: center.clone(),
        radius,
        shifts,
        ambiguous,
        max_mu,
        bound_s,
        bound_sb,
        within_s_bound: max_mu <= bound_s * (1.0 + 1e-12) + 1e-14,
        within_sb_bound: max_mu <= bound_sb * (1.0 + 1e-12) + 1e-14,
    }
}

/// Eigenvalues of `T` on each box `k₀ + Λ_N`, each matched to its nearest
/// diagonal entry. A site may collect several eigenvalues or none.
pub fn eigen_shift_report(lin: &Linearization, boxes: &[(MultiIndex, usize)]) -> Vec<EigenShiftTable> {
    boxes.par_iter().map(|(c, r)| shift_table(lin, c, *r)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MelnikovPair {
    pub k: MultiIndex,
    /// Model mode indices `(j₁, j₂)`.
    pub modes: (usize, usize),
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecondMelnikovReport {
    pub checked: usize,
    pub violations: usize,
    pub ambiguous: usize,
    pub worst: Option<MelnikovPair>,
    pub ok: bool,
}

/// `|−⟨k,ω'⟩ + ω_{j₁} − ω_{j₂} + μ_{j₁,k} − μ_{j₂,0}| ≥ γ/(|k|₁+2)^τ` for
/// `k ∈ Λ_{2N} ∖ Λ_{2N'}` and distinct normal modes, with `μ_{j,k}` read off
/// `T` on `k + Λ_{N'}`.
pub fn second_melnikov_check(
    lin: &Linearization,
    n: usize,
    n_prime: usize,
    cfg: &ResonanceConfig,
) -> Result<SecondMelnikovReport, MsaError> {
    if n_prime == 0 || n_prime >= n {
        return Err(MsaError::Config(format!("need 0 < N' < N, got N' = {n_prime}, N = {n}")));
    }
    let normal = lin.model.normal_modes();
    let m = lin.model.m();
    if normal.len() < 2 {
        return Ok(SecondMelnikovReport { checked: 0, violations: 0, ambiguous: 0, worst: None, ok: true });
    }
    let mu_at = |table: &EigenShiftTable, j: usize, k: &MultiIndex| {
        table
            .shifts
            .iter()
            .filter(|s| s.site.mode == j && &s.site.index == k)
            .min_by(|a, b| a.mu_abs.total_cmp(&b.mu_abs))
            .map(|s| s.mu)
    };
    let origin = MultiIndex::zero(m);
    let central = shift_table(lin, &origin, n_prime);
    let mu0: Vec<Option<f64>> = normal.iter().map(|&j| mu_at(&central, j, &origin)).collect();
    let ks: Vec<MultiIndex> = LatticeBox::centered(m, 2 * n)
        .points()
        .into_iter()
        .filter(|k| k.linf() as usize > 2 * n_prime)
        .collect();
    let per_k: Vec<(usize, usize, usize, Option<MelnikovPair>)> = ks
        .par_iter()
        .map(|k| {
            let table = shift_table(lin, k, n_prime);
            let kw = k.dot(&lin.omega_t_prime);
            let threshold = cfg.gamma / (k.l1() as f64 + 2.0).powf(cfg.tau);
            let (mut checked, mut bad, mut amb) = (0, 0, table.ambiguous);
            let mut worst: Option<MelnikovPair> = None;
            for (a, &j1) in normal.iter().enumerate() {
                for (b, &j2) in normal.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    let (Some(mu1), Some(mu2)) = (mu_at(&table, j1, k), mu0[b]) else {
                        amb += 1;
                        continue;
                    };
                    let om = &lin.model.omega;
                    let value = (-kw + om[j1] - om[j2] + mu1 - mu2).abs();
                    checked += 1;
                    if value < threshold {
                        bad += 1;
                    }
                    if worst.as_ref().is_none_or(|w| value / threshold < w.value / w.threshold) {
                        worst = Some(MelnikovPair { k: k.clone(), modes: (j1, j2), value, threshold });
                    }
                }
            }
            (checked, bad, amb, worst)
        })
        .collect();
    let mut report = SecondMelnikovReport { checked: 0, violations: 0, ambiguous: central.ambiguous, worst: None, ok: true };
    for (c, b, a, w) in per_k {
        report.checked += c;
        report.violations += b;
        report.ambiguous += a;
        if let Some(w) = w {
            if report.worst.as_ref().is_none_or(|x| w.value / w.threshold < x.value / x.threshold) {
                report.worst = Some(w);
            }
        }
    }
    report.ok = report.violations == 0;
    Ok(report)
}

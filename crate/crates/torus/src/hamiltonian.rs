//! Polynomial perturbations `H₁(z, z̄)` with real coefficients and the two
//! built-in models.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::lattice::{MultiIndex, SiteIndex};

/// Relative cutoff applied when merging monomials.
const DROP_RELATIVE: f64 = 1e-14;

/// `coeff · Π z_i^{p_i} z̄_i^{q_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub p: Vec<u32>,
    pub q: Vec<u32>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.p.iter().chain(&self.q).sum()
    }

    pub fn eval(&self, z: &[Complex64], zbar: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(self.coeff, 0.0);
        for i in 0..self.p.len() {
            if self.p[i] > 0 {
                acc *= z[i].powu(self.p[i]);
            }
            if self.q[i] > 0 {
                acc *= zbar[i].powu(self.q[i]);
            }
        }
        acc
    }
}

/// A sum of monomials in canonical form: sorted by exponents, merged, and
/// free of negligible terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub n: usize,
    pub monomials: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Polynomial { n, monomials: Vec::new() }
    }

    pub fn from_monomials(n: usize, terms: impl IntoIterator<Item = Monomial>) -> Self {
        let mut acc: BTreeMap<(Vec<u32>, Vec<u32>), f64> = BTreeMap::new();
        for t in terms {
            assert_eq!(t.p.len(), n);
            assert_eq!(t.q.len(), n);
            *acc.entry((t.p, t.q)).or_insert(0.0) += t.coeff;
        }
        let scale = acc.values().fold(0.0f64, |a, c| a.max(c.abs()));
        let monomials = acc
            .into_iter()
            .filter(|(_, c)| *c != 0.0 && c.abs() > DROP_RELATIVE * scale)
            .map(|((p, q), coeff)| Monomial { coeff, p, q })
            .collect();
        Polynomial { n, monomials }
    }

    /// `Σ_i c_i (z_i + z̄_i)`.
    pub fn real_linear(coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        let mut terms = Vec::new();
        for (i, &c) in coeffs.iter().enumerate() {
            let mut e = vec![0; n];
            e[i] = 1;
            terms.push(Monomial { coeff: c, p: e.clone(), q: vec![0; n] });
            terms.push(Monomial { coeff: c, p: vec![0; n], q: e });
        }
        Polynomial::from_monomials(n, terms)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Polynomial::from_monomials(n, [Monomial { coeff: c, p: vec![0; n], q: vec![0; n] }])
    }

    pub fn degree(&self) -> u32 {
        self.monomials.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        Polynomial::from_monomials(
            self.n,
            self.monomials.iter().chain(&other.monomials).cloned(),
        )
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::from_monomials(
            self.n,
            self.monomials.iter().map(|t| Monomial { coeff: c * t.coeff, ..t.clone() }),
        )
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.monomials.len() * other.monomials.len());
        for a in &self.monomials {
            for b in &other.monomials {
                terms.push(Monomial {
                    coeff: a.coeff * b.coeff,
                    p: a.p.iter().zip(&b.p).map(|(x, y)| x + y).collect(),
                    q: a.q.iter().zip(&b.q).map(|(x, y)| x + y).collect(),
                });
            }
        }
        Polynomial::from_monomials(self.n, terms)
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        (0..e).fold(Polynomial::constant(self.n, 1.0), |acc, _| acc.mul(self))
    }

    fn differentiate(&self, j: usize, conj: bool) -> Polynomial {
        assert!(j < self.n, "mode {j} out of range");
        let terms = self.monomials.iter().filter_map(|t| {
            let e = if conj { t.q[j] } else { t.p[j] };
            if e == 0 {
                return None;
            }
            let mut d = t.clone();
            d.coeff *= e as f64;
            if conj {
                d.q[j] -= 1;
            } else {
                d.p[j] -= 1;
            }
            Some(d)
        });
        Polynomial::from_monomials(self.n, terms)
    }

    /// `∂/∂z̄_j`.
    pub fn differentiate_zbar(&self, j: usize) -> Polynomial {
        self.differentiate(j, true)
    }

    /// `∂/∂z_j`.
    pub fn differentiate_z(&self, j: usize) -> Polynomial {
        self.differentiate(j, false)
    }

    /// Value at independent arguments `(z, z̄)`.
    pub fn eval(&self, z: &[Complex64], zbar: &[Complex64]) -> Complex64 {
        self.monomials.iter().map(|t| t.eval(z, zbar)).sum()
    }

    /// Value on the real slice `z̄ = conj(z)`.
    pub fn eval_conj(&self, z: &[Complex64]) -> Complex64 {
        let zbar: Vec<Complex64> = z.iter().map(|c| c.conj()).collect();
        self.eval(z, &zbar)
    }

    pub fn coefficient(&self, p: &[u32], q: &[u32]) -> f64 {
        self.monomials
            .iter()
            .find(|t| t.p == p && t.q == q)
            .map_or(0.0, |t| t.coeff)
    }
}

/// A nearly integrable Hamiltonian `H = <ω⊙z, z̄> + ε H₁(z, z̄)` together with
/// the excited modes and their amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub excited: Vec<bool>,
    pub omega: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub epsilon: f64,
    pub h1: Polynomial,
}

impl ModelSpec {
    pub fn m(&self) -> usize {
        self.excited.iter().filter(|e| **e).count()
    }

    /// Indices of excited modes in increasing order.
    pub fn excited_modes(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.excited[j]).collect()
    }

    pub fn normal_modes(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| !self.excited[j]).collect()
    }

    /// Unperturbed tangential frequencies `ω_T`.
    pub fn omega_t(&self) -> Vec<f64> {
        self.excited_modes().iter().map(|&j| self.omega[j]).collect()
    }

    pub fn omega_n(&self) -> Vec<f64> {
        self.normal_modes().iter().map(|&j| self.omega[j]).collect()
    }

    /// Sites `(j_t, e_t)` pinned to `a_t`; the t-th excited mode owns the t-th
    /// tangential direction.
    pub fn resonant_sites(&self) -> Vec<SiteIndex> {
        let m = self.m();
        self.excited_modes()
            .into_iter()
            .enumerate()
            .map(|(t, j)| SiteIndex::new(j, MultiIndex::unit(m, t)))
            .collect()
    }

    /// Total degree of `H₁`.
    pub fn degree(&self) -> u32 {
        self.h1.degree()
    }

    /// Replace the excitation by the nonzero entries of a length-`n` vector.
    pub fn with_excitation(mut self, amplitudes: &[f64]) -> Result<Self, ModelError> {
        if amplitudes.len() != self.n {
            return Err(ModelError::Invalid(format!(
                "expected {} amplitudes, got {}",
                self.n,
                amplitudes.len()
            )));
        }
        self.excited = amplitudes.iter().map(|a| *a != 0.0).collect();
        self.amplitudes = amplitudes.iter().copied().filter(|a| *a != 0.0).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if self.n == 0 {
            return bad("no modes".into());
        }
        if self.excited.len() != self.n || self.omega.len() != self.n {
            return bad("excitation mask and frequencies must have length n".into());
        }
        let m = self.m();
        if m == 0 {
            return bad("no excited mode".into());
        }
        if self.amplitudes.len() != m {
            return bad(format!("{} amplitudes for {m} excited modes", self.amplitudes.len()));
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return bad(format!("amplitude {a} is not positive"));
        }
        if let Some(w) = self.omega.iter().find(|w| !w.is_finite() || **w == 0.0) {
            return bad(format!("frequency {w} must be finite and nonzero"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be nonnegative", self.epsilon));
        }
        if self.h1.n != self.n {
            return bad("perturbation has the wrong number of modes".into());
        }
        for t in &self.h1.monomials {
            if !t.coeff.is_finite() {
                return bad("non-finite coefficient".into());
            }
            if t.degree() < 2 {
                return bad("perturbation terms must have degree at least 2".into());
            }
        }
        // Real on z̄ = conj(z) iff the coefficient of z^p z̄^q equals that of z^q z̄^p.
        let scale = self.h1.monomials.iter().map(|t| t.coeff.abs()).fold(0.0, f64::max);
        for t in &self.h1.monomials {
            let mirror = self.h1.coefficient(&t.q, &t.p);
            if (t.coeff - mirror).abs() > 1e-12 * scale {
                return bad(format!(
                    "perturbation is not real: z^{:?} z̄^{:?} has coefficient {} but its conjugate term has {mirror}",
                    t.p, t.q, t.coeff
                ));
            }
        }
        Ok(())
    }
}

/// `Σ ω_j|z_j|² + ε H₁(z, z̄)`.
pub fn evaluate_h(model: &ModelSpec, z: &[Complex64]) -> Result<f64, ModelError> {
    let quad: f64 = z.iter().zip(&model.omega).map(|(c, w)| w * c.norm_sqr()).sum();
    let pert = model.h1.eval_conj(z) * model.epsilon;
    let h = quad + pert.re;
    if pert.im.abs() > 1e-9 * h.abs().max(f64::MIN_POSITIVE) {
        return Err(ModelError::NotReal { imag: pert.im, value: h });
    }
    Ok(h)
}

/// Hénon-Heiles in complex normal coordinates, `ε = 0.5`, `ω = (1, √2)`,
/// mode 1 excited with unit amplitude.
pub fn henon_heiles() -> ModelSpec {
    let u1 = Polynomial::real_linear(&[1.0, 0.0]);
    let u2 = Polynomial::real_linear(&[0.0, 1.0]);
    let h1 = u1
        .pow(2)
        .mul(&u2)
        .scale(1.0 / (2.0 * SQRT_2))
        .add(&u2.pow(3).scale(-1.0 / (6.0 * SQRT_2)));
    ModelSpec {
        name: "henon-heiles".into(),
        n: 2,
        excited: vec![true, false],
        omega: vec![1.0, SQRT_2],
        amplitudes: vec![1.0],
        epsilon: 0.5,
        h1,
    }
}

/// Linear frequencies `2 sin(kπ/(2(n+1)))`, `k = 1..n`.
pub fn fpu_frequencies(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 2.0 * (k as f64 * PI / (2.0 * (n as f64 + 1.0))).sin()).collect()
}

/// Normal-mode matrix `V_{k,j} = √(2/(n+1)) sin(jkπ/(n+1))`, 1-based in the
/// formula, returned 0-based.
pub fn fpu_modes(n: usize) -> Vec<Vec<f64>> {
    let c = (2.0 / (n as f64 + 1.0)).sqrt();
    (1..=n)
        .map(|k| {
            (1..=n)
                .map(|j| c * ((j * k) as f64 * PI / (n as f64 + 1.0)).sin())
                .collect()
        })
        .collect()
}

/// FPU-β chain with fixed ends, in complex normal-mode coordinates. Mode 1 is
/// excited with unit amplitude.
pub fn fpu_beta(n: usize, epsilon: f64) -> Result<ModelSpec, ModelError> {
    if n == 0 {
        return Err(ModelError::Invalid("FPU chain needs at least one particle".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ModelError::Invalid(format!("epsilon {epsilon} must be positive")));
    }
    let omega = fpu_frequencies(n);
    let v = fpu_modes(n);
    // Row j of V with the Dirichlet rows 0 and n+1 set to zero.
    let row = |j: usize| -> Vec<f64> {
        if j == 0 || j == n + 1 {
            vec![0.0; n]
        } else {
            v[j - 1].clone()
        }
    };
    let mut h1 = Polynomial::zero(n);
    for j in 0..=n {
        let (lo, hi) = (row(j), row(j + 1));
        let c: Vec<f64> =
            (0..n).map(|k| (hi[k] - lo[k]) / (2.0 * omega[k]).sqrt()).collect();
        h1 = h1.add(&Polynomial::real_linear(&c).pow(4));
    }
    let mut excited = vec![false; n];
    excited[0] = true;
    Ok(ModelSpec {
        name: format!("fpu-beta-{n}"),
        n,
        excited,
        omega,
        amplitudes: vec![1.0],
        epsilon,
        h1: h1.scale(0.25),
    })
}

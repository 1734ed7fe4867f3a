//! Thin wrappers over dense factorizations.

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Qr, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

/// Factorization used for the Newton systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    DenseLu,
    DenseQr,
}

pub enum Factor {
    Lu(PartialPivLu<f64>),
    Qr(Qr<f64>),
}

/// A factored square matrix plus the ratio min|u_ii| / max|u_ii| of its
/// triangular factor, a cheap singularity indicator.
pub struct Factored {
    pub factor: Factor,
    pub pivot_ratio: f64,
    pub dim: usize,
}

impl Factored {
    pub fn new(a: &Mat<f64>, kind: LinearSolver) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let dim = a.nrows();
        let (factor, diag): (Factor, Vec<f64>) = match kind {
            LinearSolver::DenseLu => {
                let lu = a.partial_piv_lu();
                let u = lu.U();
                let d = (0..dim).map(|i| u[(i, i)].abs()).collect();
                (Factor::Lu(lu), d)
            }
            LinearSolver::DenseQr => {
                let qr = a.qr();
                let r = qr.R();
                let d = (0..dim).map(|i| r[(i, i)].abs()).collect();
                (Factor::Qr(qr), d)
            }
        };
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let pivot_ratio = if dim == 0 { 1.0 } else if hi > 0.0 { lo / hi } else { 0.0 };
        Factored { factor, pivot_ratio, dim }
    }

    pub fn is_singular(&self) -> bool {
        !(self.pivot_ratio > 1e-15)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        match &self.factor {
            Factor::Lu(f) => f.solve_in_place(&mut x),
            Factor::Qr(f) => f.solve_in_place(&mut x),
        }
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        match &self.factor {
            Factor::Lu(f) => f.solve_transpose_in_place(&mut x),
            Factor::Qr(f) => f.solve_transpose_in_place(&mut x),
        }
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        match &self.factor {
            Factor::Lu(f) => f.solve(b),
            Factor::Qr(f) => f.solve(b),
        }
    }

    pub fn inverse(&self) -> Mat<f64> {
        match &self.factor {
            Factor::Lu(f) => f.inverse(),
            Factor::Qr(f) => f.inverse(),
        }
    }

    /// `‖A⁻¹‖₂` by power iteration on `A⁻ᵀA⁻¹`, using only solves.
    pub fn inverse_norm(&self, max_iter: usize, rtol: f64) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> =
            (0..self.dim).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
        normalize(&mut v);
        let mut sigma = 0.0;
        for _ in 0..max_iter {
            let x = self.solve(&v);
            let mut y = self.solve_transpose(&x);
            let lambda = norm(&y);
            if lambda == 0.0 || !lambda.is_finite() {
                return lambda.sqrt();
            }
            y.iter_mut().for_each(|c| *c /= lambda);
            let next = lambda.sqrt();
            v = y;
            if (next - sigma).abs() <= rtol * next {
                return next;
            }
            sigma = next;
        }
        sigma
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
}

/// Singular values in nonincreasing order.
pub fn singular_values(a: &Mat<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    a.singular_values().unwrap_or_default()
}

pub fn min_singular_value(a: &Mat<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(f64::INFINITY)
}

/// Eigenvalues of a symmetric matrix, nondecreasing.
pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.self_adjoint_eigenvalues(Side::Lower).unwrap_or_default()
}

/// Eigenvalues of a general square matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Mat<f64>) -> Vec<(f64, f64)> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.eigenvalues().map(|v| v.into_iter().map(|z| (z.re, z.im)).collect()).unwrap_or_default()
}

pub fn max_abs(a: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// `max |A - Aᵀ|`.
pub fn asymmetry(a: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..j {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

pub fn submatrix(a: &Mat<f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                3.0 + i as f64
            } else {
                ((i * 7 + j * 13) % 11) as f64 / 20.0 - 0.25
            }
        })
    }

    #[test]
    fn solves_agree_across_factorizations() {
        let a = sample(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let x_lu = Factored::new(&a, LinearSolver::DenseLu).solve(&b);
        let x_qr = Factored::new(&a, LinearSolver::DenseQr).solve(&b);
        for i in 0..12 {
            let r: f64 = (0..12).map(|j| a[(i, j)] * x_lu[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-13);
            assert!((x_lu[i] - x_qr[i]).abs() < 1e-13);
        }
        let y = Factored::new(&a, LinearSolver::DenseLu).solve_transpose(&b);
        for i in 0..12 {
            let r: f64 = (0..12).map(|j| a[(j, i)] * y[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-13);
        }
    }

    #[test]
    fn power_iteration_matches_svd() {
        let a = sample(20);
        let f = Factored::new(&a, LinearSolver::DenseLu);
        let est = f.inverse_norm(500, 1e-13);
        let exact = 1.0 / min_singular_value(&a);
        assert!((est - exact).abs() < 1e-8 * exact, "{est} {exact}");
        assert!((spectral_norm(&f.inverse()) - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(Factored::new(&a, LinearSolver::DenseLu).is_singular());
        assert!(!Factored::new(&sample(3), LinearSolver::DenseLu).is_singular());
    }

    #[test]
    fn diagonal_eigenvalues() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [2.0, -1.0, 5.0][i] } else { 0.0 });
        assert_eq!(symmetric_eigenvalues(&a), vec![-1.0, 2.0, 5.0]);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let a = Mat::from_fn(2, 2, |i, j| [[0.0, -1.0], [1.0, 0.0]][i][j]);
        let mut ev = eigenvalues(&a);
        ev.sort_by(|x, y| x.1.total_cmp(&y.1));
        assert!(ev[0].0.abs() < 1e-15 && (ev[0].1 + 1.0).abs() < 1e-15);
        assert!(ev[1].0.abs() < 1e-15 && (ev[1].1 - 1.0).abs() < 1e-15);
    }
}

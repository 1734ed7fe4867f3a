//! Integer lattices, boxes, Fourier coefficient containers and the sign-aware
//! convolution used to expand polynomial vector fields.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Values with magnitude below this are stored as exact zeros.
pub const FLUSH_BELOW: f64 = 1e-300;

/// Grid of exponents scanned by [`gevrey_fit`].
pub const GEVREY_GRID: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75,
    0.80, 0.85, 0.90, 0.95,
];

/// Rounding allowance on `log sup` when deciding Gevrey membership.
const GEVREY_LOG_SLACK: f64 = 1e-12;

/// A point of `Z^m`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<i64>);

impl MultiIndex {
    pub fn zero(m: usize) -> Self {
        MultiIndex(vec![0; m])
    }

    /// Unit vector `e_i` in dimension `m`.
    pub fn unit(m: usize, i: usize) -> Self {
        let mut k = vec![0; m];
        k[i] = 1;
        MultiIndex(k)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> i64 {
        l1(&self.0)
    }

    pub fn linf(&self) -> i64 {
        linf(&self.0)
    }

    pub fn neg(&self) -> Self {
        MultiIndex(self.0.iter().map(|x| -x).collect())
    }

    pub fn add(&self, other: &MultiIndex) -> Self {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &MultiIndex) -> Self {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `<k, w>`.
    pub fn dot(&self, w: &[f64]) -> f64 {
        dot(&self.0, w)
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

impl From<Vec<i64>> for MultiIndex {
    fn from(v: Vec<i64>) -> Self {
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

pub fn l1(k: &[i64]) -> i64 {
    k.iter().map(|x| x.abs()).sum()
}

pub fn linf(k: &[i64]) -> i64 {
    k.iter().map(|x| x.abs()).max().unwrap_or(0)
}

pub fn dot(k: &[i64], w: &[f64]) -> f64 {
    k.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum()
}

/// Cube `center + [-radius, radius]^m` in the sup norm.
///
/// Points are ordered lexicographically with the first coordinate most
/// significant; every matrix in the crate uses this order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    pub center: MultiIndex,
    pub radius: usize,
}

impl LatticeBox {
    pub fn new(center: MultiIndex, radius: usize) -> Self {
        LatticeBox { center, radius }
    }

    /// `Λ_N` in dimension `m`.
    pub fn centered(m: usize, radius: usize) -> Self {
        LatticeBox { center: MultiIndex::zero(m), radius }
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        let r = self.radius as i64;
        k.iter().zip(&self.center.0).all(|(a, c)| (a - c).abs() <= r)
    }

    pub fn contains_box(&self, other: &LatticeBox) -> bool {
        let r = self.radius as i64;
        let ro = other.radius as i64;
        other
            .center
            .0
            .iter()
            .zip(&self.center.0)
            .all(|(oc, c)| (oc - c).abs() + ro <= r)
    }

    /// Linear position of `k`, or `None` outside the box.
    #[inline]
    pub fn position(&self, k: &[i64]) -> Option<usize> {
        let r = self.radius as i64;
        let side = self.side() as i64;
        let mut pos = 0i64;
        for (a, c) in k.iter().zip(&self.center.0) {
            let off = a - c + r;
            if off < 0 || off >= side {
                return None;
            }
            pos = pos * side + off;
        }
        Some(pos as usize)
    }

    /// Lattice point at linear position `idx`.
    pub fn point(&self, idx: usize) -> MultiIndex {
        let mut k = vec![0; self.dim()];
        self.point_into(idx, &mut k);
        MultiIndex(k)
    }

    #[inline]
    pub fn point_into(&self, mut idx: usize, out: &mut [i64]) {
        let side = self.side();
        let r = self.radius as i64;
        for i in (0..self.dim()).rev() {
            out[i] = (idx % side) as i64 - r + self.center.0[i];
            idx /= side;
        }
    }

    pub fn points(&self) -> Vec<MultiIndex> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Flat coordinate table, `len() * dim()` entries.
    pub fn coordinates(&self) -> Vec<i64> {
        let m = self.dim();
        let mut out = vec![0; self.len() * m];
        for (i, chunk) in out.chunks_mut(m.max(1)).enumerate().take(self.len()) {
            self.point_into(i, chunk);
        }
        out
    }

    /// Smallest centred box containing both.
    pub fn hull_centered(&self, other: &LatticeBox) -> LatticeBox {
        let reach = |b: &LatticeBox| b.center.linf() + b.radius as i64;
        LatticeBox::centered(self.dim(), reach(self).max(reach(other)) as usize)
    }

    pub fn reflected(&self) -> LatticeBox {
        LatticeBox { center: self.center.neg(), radius: self.radius }
    }
}

/// All points of `b` in the global lexicographic order.
pub fn enumerate_box(b: &LatticeBox) -> Vec<MultiIndex> {
    b.points()
}

/// A pair `(j, k)` addressing coefficient `ẑ_j(k)`; modes are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteIndex {
    pub mode: usize,
    pub index: MultiIndex,
}

impl SiteIndex {
    pub fn new(mode: usize, index: MultiIndex) -> Self {
        SiteIndex { mode, index }
    }
}

impl fmt::Display for SiteIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]{}", self.mode + 1, self.index)
    }
}

/// A scalar lattice function on a box, dense.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub support: LatticeBox,
    pub values: Vec<f64>,
}

impl Series {
    pub fn zeros(support: LatticeBox) -> Self {
        let len = support.len();
        Series { support, values: vec![0.0; len] }
    }

    /// Kronecker delta at `k` with weight `value`.
    pub fn delta(k: MultiIndex, value: f64) -> Self {
        let mut s = Series::zeros(LatticeBox::new(k, 0));
        s.values[0] = value;
        s
    }

    pub fn from_fn(support: LatticeBox, f: impl Fn(&[i64]) -> f64) -> Self {
        let m = support.dim();
        let coords = support.coordinates();
        let values = (0..support.len()).map(|i| f(&coords[i * m..(i + 1) * m])).collect();
        Series { support, values }
    }

    pub fn get(&self, k: &[i64]) -> f64 {
        self.support.position(k).map_or(0.0, |p| self.values[p])
    }

    /// `k ↦ self(-k)`; lexicographic order reverses under negation.
    pub fn reflect(&self) -> Series {
        let mut values = self.values.clone();
        values.reverse();
        Series { support: self.support.reflected(), values }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other` with `other.support ⊆ self.support`.
    pub fn add_scaled(&mut self, c: f64, other: &Series) {
        if self.support == other.support {
            for (a, b) in self.values.iter_mut().zip(&other.values) {
                *a += c * b;
            }
            return;
        }
        let m = other.support.dim();
        let coords = other.support.coordinates();
        for (i, &v) in other.values.iter().enumerate() {
            if v != 0.0 {
                let p = self
                    .support
                    .position(&coords[i * m..(i + 1) * m])
                    .expect("add_scaled: support not contained");
                self.values[p] += c * v;
            }
        }
    }

    /// Restriction to (or zero-extension onto) `target`.
    pub fn reboxed(&self, target: &LatticeBox) -> Series {
        let mut out = Series::zeros(target.clone());
        let m = target.dim();
        let coords = target.coordinates();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = self.get(&coords[i * m..(i + 1) * m]);
        }
        out
    }
}

/// Per-entry linear offsets of `src` points (optionally negated) inside a box of
/// the given side length, measured from the box corner at `-(radius) + center`.
fn offsets(src: &LatticeBox, negate: bool, side: usize) -> Vec<i64> {
    let m = src.dim();
    let coords = src.coordinates();
    let sign = if negate { -1 } else { 1 };
    (0..src.len())
        .map(|i| {
            coords[i * m..(i + 1) * m]
                .iter()
                .fold(0i64, |acc, &x| acc * side as i64 + sign * x)
        })
        .collect()
}

/// `c(k) = Σ_{k'} a(σ_a k') b(σ_b (k - k'))`, where `σ` negates the index when
/// the matching flag is set.
pub fn convolve(a: &Series, b: &Series, reflect_a: bool, reflect_b: bool) -> Series {
    let ca = if reflect_a { a.support.center.neg() } else { a.support.center.clone() };
    let cb = if reflect_b { b.support.center.neg() } else { b.support.center.clone() };
    let radius = a.support.radius + b.support.radius;
    let support = LatticeBox::new(ca.add(&cb), radius);
    let side = support.side();
    let mut out = Series::zeros(support.clone());

    // Position of k inside `support` is Σ (k_i - c_i + R) side^{m-1-i}, which
    // splits into a constant plus the two operands' own linear offsets.
    let base = support
        .center
        .0
        .iter()
        .fold(0i64, |acc, &c| acc * side as i64 + (radius as i64 - c));
    let off_a = offsets(&a.support, reflect_a, side);
    let off_b = offsets(&b.support, reflect_b, side);
    let nz_b: Vec<(i64, f64)> = off_b
        .iter()
        .zip(&b.values)
        .filter(|(_, v)| **v != 0.0)
        .map(|(&o, &v)| (o, v))
        .collect();
    for (&oa, &va) in off_a.iter().zip(&a.values) {
        if va == 0.0 {
            continue;
        }
        let shift = base + oa;
        for &(ob, vb) in &nz_b {
            out.values[(shift + ob) as usize] += va * vb;
        }
    }
    out
}

/// Real coefficients `ẑ_j(k)` for `n` modes on a box, stored mode-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierVector {
    pub n: usize,
    pub support: LatticeBox,
    pub values: Vec<f64>,
}

impl FourierVector {
    pub fn zeros(n: usize, support: LatticeBox) -> Self {
        let len = n * support.len();
        FourierVector { n, support, values: vec![0.0; len] }
    }

    pub fn m(&self) -> usize {
        self.support.dim()
    }

    pub fn box_len(&self) -> usize {
        self.support.len()
    }

    pub fn mode(&self, j: usize) -> &[f64] {
        let len = self.box_len();
        &self.values[j * len..(j + 1) * len]
    }

    pub fn mode_mut(&mut self, j: usize) -> &mut [f64] {
        let len = self.box_len();
        &mut self.values[j * len..(j + 1) * len]
    }

    pub fn mode_series(&self, j: usize) -> Series {
        Series { support: self.support.clone(), values: self.mode(j).to_vec() }
    }

    pub fn from_modes(modes: &[Series]) -> Self {
        let support = modes[0].support.clone();
        let mut v = FourierVector::zeros(modes.len(), support.clone());
        for (j, s) in modes.iter().enumerate() {
            v.mode_mut(j).copy_from_slice(&s.reboxed(&support).values);
        }
        v
    }

    pub fn get(&self, j: usize, k: &[i64]) -> f64 {
        match self.support.position(k) {
            Some(p) if j < self.n => self.values[j * self.box_len() + p],
            _ => 0.0,
        }
    }

    pub fn get_site(&self, s: &SiteIndex) -> f64 {
        self.get(s.mode, &s.index.0)
    }

    /// Panics if `k` lies outside the support.
    pub fn set(&mut self, j: usize, k: &[i64], value: f64) {
        let p = self.support.position(k).expect("set: index outside support");
        let len = self.box_len();
        self.values[j * len + p] = value;
    }

    /// `(Σ_k ‖ẑ(k)‖²)^{1/2}`.
    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_max(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `‖ẑ(k)‖₂` across modes at every box position.
    pub fn site_norms(&self) -> Vec<f64> {
        let len = self.box_len();
        (0..len)
            .map(|p| (0..self.n).map(|j| self.values[j * len + p].powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    /// Same lattice function on a different box: values inside both are kept,
    /// everything else is zero.
    pub fn reboxed(&self, target: &LatticeBox) -> FourierVector {
        let mut out = FourierVector::zeros(self.n, target.clone());
        let m = target.dim();
        let coords = target.coordinates();
        let len = target.len();
        for p in 0..len {
            if let Some(q) = self.support.position(&coords[p * m..(p + 1) * m]) {
                for j in 0..self.n {
                    out.values[j * len + p] = self.values[j * self.box_len() + q];
                }
            }
        }
        out
    }

    /// `a·self + b·other` on the centred hull of both supports.
    pub fn combine(&self, a: f64, other: &FourierVector, b: f64) -> FourierVector {
        let hull = self.support.hull_centered(&other.support);
        let mut x = self.reboxed(&hull);
        let y = other.reboxed(&hull);
        for (u, v) in x.values.iter_mut().zip(&y.values) {
            *u = a * *u + b * v;
        }
        x
    }

    pub fn zero_sites(&mut self, sites: &[SiteIndex]) {
        for s in sites {
            if let Some(p) = self.support.position(&s.index.0) {
                let len = self.box_len();
                self.values[s.mode * len + p] = 0.0;
            }
        }
    }

    pub fn flush_tiny(&mut self) {
        for v in &mut self.values {
            if v.abs() < FLUSH_BELOW {
                *v = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest `|k|_∞` carrying a nonzero coefficient.
    pub fn effective_radius(&self) -> usize {
        let norms = self.site_norms();
        let m = self.m();
        let coords = self.support.coordinates();
        norms
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, _)| linf(&coords[p * m..(p + 1) * m]) as usize)
            .max()
            .unwrap_or(0)
    }
}

impl PartialEq for FourierVector {
    /// Equality as lattice functions, regardless of the storage box.
    fn eq(&self, other: &Self) -> bool {
        if self.n != other.n || self.m() != other.m() {
            return false;
        }
        let hull = self.support.hull_centered(&other.support);
        self.reboxed(&hull).values == other.reboxed(&hull).values
    }
}

/// `P_N`: keep coefficients inside `b`, zero the rest.
pub fn project(v: &FourierVector, b: &LatticeBox) -> FourierVector {
    v.reboxed(b)
}

/// `log sup_k ‖ẑ(k)‖₂ exp{|k|₁^s}`; `-inf` for the zero vector.
pub fn gevrey_log_sup(v: &FourierVector, s: f64) -> f64 {
    let m = v.m();
    let coords = v.support.coordinates();
    v.site_norms()
        .iter()
        .enumerate()
        .filter(|(_, x)| **x > 0.0)
        .map(|(p, x)| x.ln() + gevrey_weight(l1(&coords[p * m..(p + 1) * m]), s))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `|k|₁^s` with `0^s = 0`.
#[inline]
pub fn gevrey_weight(k_l1: i64, s: f64) -> f64 {
    if k_l1 == 0 {
        0.0
    } else {
        (k_l1 as f64).powf(s)
    }
}

/// `sup_k ‖ẑ(k)‖₂ exp{|k|₁^s}`. May be `+inf` when the true value exceeds the
/// floating range; use [`gevrey_log_sup`] to compare such values.
pub fn gevrey_sup(v: &FourierVector, s: f64) -> f64 {
    gevrey_log_sup(v, s).exp()
}

/// Largest grid exponent `s` with `gevrey_sup(v, s) ≤ 1`, or 0 if none.
pub fn gevrey_fit(v: &FourierVector) -> f64 {
    gevrey_fit_on(v, &GEVREY_GRID)
}

/// [`gevrey_fit`] over a caller-supplied grid of exponents.
pub fn gevrey_fit_on(v: &FourierVector, grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .rev()
        .copied()
        .find(|&s| gevrey_log_sup(v, s) <= GEVREY_LOG_SLACK)
        .unwrap_or(0.0)
}

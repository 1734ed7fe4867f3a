//! Small-divisor screens for a tangential frequency vector and Monte Carlo
//! estimates of the excluded measure.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hamiltonian::ModelSpec;
use crate::lattice::{l1, LatticeBox, MultiIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceConfig {
    pub tau: f64,
    /// Numerator of the small-divisor thresholds; `1` gives the literal sets.
    pub gamma: f64,
    /// Scans run over `Λ_{2M}`.
    pub scale_m: usize,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        ResonanceConfig { tau: 2.0, gamma: 0.05, scale_m: 10 }
    }
}

impl ResonanceConfig {
    pub fn validate(&self, m: usize) -> Result<(), String> {
        if !(self.tau > m as f64 - 1.0) {
            return Err(format!("tau = {} must exceed m − 1 = {}", self.tau, m as f64 - 1.0));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(format!("gamma = {} must be positive", self.gamma));
        }
        if self.scale_m == 0 {
            return Err("scale M must be positive".into());
        }
        Ok(())
    }

    fn scan_box(&self, m: usize) -> LatticeBox {
        LatticeBox::centered(m, 2 * self.scale_m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonantSet {
    Tangent,
    Melnikov1,
    Melnikov2,
}

impl fmt::Display for ResonantSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResonantSet::Tangent => "tangent",
            ResonantSet::Melnikov1 => "melnikov1",
            ResonantSet::Melnikov2 => "melnikov2",
        })
    }
}

/// The tightest small divisor found by a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub set: ResonantSet,
    pub k: MultiIndex,
    /// Normal-mode indices involved (positions in `ω_N`, or model modes
    /// when produced by [`admissible`]).
    pub modes: Vec<usize>,
    /// `|divisor|·weight/γ − 1`; negative inside the resonant set.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub admissible: bool,
    pub worst: Option<Offender>,
}

impl ResonanceReport {
    fn from_worst(worst: Option<Offender>) -> Self {
        ResonanceReport { admissible: worst.as_ref().is_none_or(|w| w.margin >= 0.0), worst }
    }

    fn and(self, other: ResonanceReport) -> Self {
        let worst = match (self.worst, other.worst) {
            (Some(a), Some(b)) => Some(if b.margin < a.margin { b } else { a }),
            (a, b) => a.or(b),
        };
        ResonanceReport::from_worst(worst)
    }
}

fn keep_worst(slot: &mut Option<Offender>, candidate: Offender) {
    if slot.as_ref().is_none_or(|w| candidate.margin < w.margin) {
        *slot = Some(candidate);
    }
}

fn margin(divisor: f64, weight: f64, gamma: f64) -> f64 {
    divisor.abs() * weight / gamma - 1.0
}

/// `|⟨k, ω_T⟩| < γ/|k|₁^τ` for some `k ∈ Λ_{2M} \ {0}`.
pub fn tangent_resonant(omega_t: &[f64], cfg: &ResonanceConfig) -> ResonanceReport {
    let bx = cfg.scan_box(omega_t.len());
    let mut worst = None;
    for k in bx.points() {
        let n1 = k.l1();
        if n1 == 0 {
            continue;
        }
        let m = margin(k.dot(omega_t), (n1 as f64).powf(cfg.tau), cfg.gamma);
        keep_worst(&mut worst, Offender { set: ResonantSet::Tangent, k, modes: vec![], margin: m });
    }
    ResonanceReport::from_worst(worst)
}

/// `|⟨k, ω_T⟩ − ω_j| < γ/(|k|₁+1)^τ` for some `k ∈ Λ_{2M}` and normal `j`.
pub fn melnikov1(omega_t: &[f64], omega_n: &[f64], cfg: &ResonanceConfig) -> ResonanceReport {
    let bx = cfg.scan_box(omega_t.len());
    let mut worst = None;
    for k in bx.points() {
        let kw = k.dot(omega_t);
        let weight = (k.l1() as f64 + 1.0).powf(cfg.tau);
        for (j, wj) in omega_n.iter().enumerate() {
            let m = margin(kw - wj, weight, cfg.gamma);
            keep_worst(&mut worst, Offender { set: ResonantSet::Melnikov1, k: k.clone(), modes: vec![j], margin: m });
        }
    }
    ResonanceReport::from_worst(worst)
}

/// `|⟨k, ω_T⟩ − ω_{j₁} + ω_{j₂}| < γ/(|k|₁+2)^τ` for distinct normal modes.
pub fn melnikov2(omega_t: &[f64], omega_n: &[f64], cfg: &ResonanceConfig) -> ResonanceReport {
    if omega_n.len() < 2 {
        return ResonanceReport { admissible: true, worst: None };
    }
    let bx = cfg.scan_box(omega_t.len());
    let mut worst = None;
    for k in bx.points() {
        let kw = k.dot(omega_t);
        let weight = (k.l1() as f64 + 2.0).powf(cfg.tau);
        for (j1, w1) in omega_n.iter().enumerate() {
            for (j2, w2) in omega_n.iter().enumerate() {
                if j1 == j2 {
                    continue;
                }
                let m = margin(kw - w1 + w2, weight, cfg.gamma);
                keep_worst(&mut worst, Offender { set: ResonantSet::Melnikov2, k: k.clone(), modes: vec![j1, j2], margin: m });
            }
        }
    }
    ResonanceReport::from_worst(worst)
}

/// All three screens for explicit frequency vectors.
pub fn admissible_frequencies(omega_t: &[f64], omega_n: &[f64], cfg: &ResonanceConfig) -> ResonanceReport {
    tangent_resonant(omega_t, cfg)
        .and(melnikov1(omega_t, omega_n, cfg))
        .and(melnikov2(omega_t, omega_n, cfg))
}

/// All three screens for a model's own `ω_T`, `ω_N`; offender modes are
/// reported as model mode indices.
pub fn admissible(model: &ModelSpec, cfg: &ResonanceConfig) -> ResonanceReport {
    let normal = model.normal_modes();
    let mut report = admissible_frequencies(&model.omega_t(), &model.omega_n(), cfg);
    if let Some(w) = report.worst.as_mut() {
        w.modes = w.modes.iter().map(|&i| normal[i]).collect();
    }
    report
}

/// Axis-aligned box of tangential frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(a, b)| a < b), "empty domain");
        Domain { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub fraction: f64,
    pub ci95: f64,
    pub samples: usize,
    pub failures: usize,
}

/// Sample `index` of a stream seeded by `seed`: each sample owns a ChaCha
/// stream, so results do not depend on the worker count.
pub fn sample_point(domain: &Domain, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(a, b)| a + (b - a) * rng.random::<f64>())
        .collect()
}

/// Share of uniformly sampled `ω_T` failing [`admissible_frequencies`].
pub fn measure_estimate<P>(
    domain: &Domain,
    omega_n: P,
    cfg: &ResonanceConfig,
    samples: usize,
    seed: u64,
) -> Result<MeasureEstimate, String>
where
    P: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if samples < 1000 {
        return Err(format!("need at least 1000 samples, got {samples}"));
    }
    cfg.validate(domain.dim())?;
    let failures = (0..samples as u64)
        .into_par_iter()
        .filter(|&i| {
            let w = sample_point(domain, seed, i);
            !admissible_frequencies(&w, &omega_n(&w), cfg).admissible
        })
        .count();
    let p = failures as f64 / samples as f64;
    Ok(MeasureEstimate {
        fraction: p,
        ci95: 1.96 * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        failures,
    })
}

/// Upper bound on the excluded fraction of `domain` when `ω_N` is fixed.
///
/// Each set `{ω : |⟨k, ω⟩ − c| < δ}` with `k ≠ 0` is a slab of width
/// `2δ/‖k‖₂`, whose intersection with the domain has measure at most
/// `2δ/‖k‖₂ · diam^{m−1}`. For `k = 0` the condition does not involve `ω_T`
/// and contributes the whole domain or nothing. The bound sums these over
/// `Λ_{2M}` and all three families, divided by the domain measure.
pub fn series_bound(domain: &Domain, omega_n: &[f64], cfg: &ResonanceConfig) -> f64 {
    let m = domain.dim();
    let section = domain.diameter().powi(m as i32 - 1);
    let bx = cfg.scan_box(m);
    let coords = bx.coordinates();
    let pairs: Vec<f64> = omega_n
        .iter()
        .enumerate()
        .flat_map(|(i, a)| omega_n.iter().enumerate().filter(move |(j, _)| *j != i).map(move |(_, b)| a - b))
        .collect();
    let mut total = 0.0;
    for p in 0..bx.len() {
        let k = &coords[p * m..(p + 1) * m];
        let n1 = l1(k) as f64;
        let n2 = k.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt();
        let slab = |delta: f64, offset: f64| -> f64 {
            if n2 == 0.0 {
                if offset.abs() < delta { domain.measure() } else { 0.0 }
            } else {
                2.0 * delta / n2 * section
            }
        };
        if n1 > 0.0 {
            total += slab(cfg.gamma / n1.powf(cfg.tau), 0.0);
        }
        for wj in omega_n {
            total += slab(cfg.gamma / (n1 + 1.0).powf(cfg.tau), *wj);
        }
        for d in &pairs {
            total += slab(cfg.gamma / (n1 + 2.0).powf(cfg.tau), *d);
        }
    }
    total / domain.measure()
}

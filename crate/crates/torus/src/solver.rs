//! Alternating frequency / coefficient iteration on a growing box schedule.
//!
//! Iterate `r` carries the pair `(ẑ^{(r)}, ω^{(r+1)})`, where the frequency is
//! always recomputed from the coefficients by [`q_update`]. A Newton step on
//! `Λ_{N_r}` then solves `L Δ = F(ẑ_p^{(r)}, ω^{(r+1)})` and sets
//! `ẑ_p^{(r+1)} = ẑ_p^{(r)} − Δ`.

use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::evaluate::synthesize_at;
use crate::hamiltonian::ModelSpec;
use crate::lattice::{gevrey_fit_on, FourierVector, LatticeBox, SiteIndex, GEVREY_GRID};
use crate::linalg::{spectral_norm, Factored, LinearSolver};
use crate::vectorfield::{l_from, residual_from_parts, split_qp, strip_pins, with_pins, BVariant, FieldExpansion, LatticeOperator};

/// Default box radius cap for runs with more than one tangential direction.
pub const MULTI_DIRECTION_CAP: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub r_max: usize,
    /// Box radii; iteration `r` uses `schedule[min(r, len − 1)]`.
    pub schedule: Vec<usize>,
    pub tol_f: f64,
    pub tol_step: f64,
    pub b_variant: BVariant,
    /// Exponents tried when fitting the Gevrey class of an iterate.
    pub s_report: Vec<f64>,
    pub check_conditions: bool,
    pub linear_solver: LinearSolver,
    /// Probe time for the pointwise inter-iterate difference.
    pub probe_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            r_max: 40,
            schedule: practical_schedule(4, 2, 4),
            tol_f: 1e-12,
            tol_step: 1e-13,
            b_variant: BVariant::Uniform,
            s_report: GEVREY_GRID.to_vec(),
            check_conditions: true,
            linear_solver: LinearSolver::DenseLu,
            probe_time: 10.0,
        }
    }
}

impl SolverConfig {
    /// Defaults for `model`: doubling from 4, capped at radius 16 when the
    /// torus has more than one tangential direction.
    pub fn for_model(model: &ModelSpec) -> Self {
        let mut cfg = SolverConfig::default();
        if model.m() > 1 {
            cfg.schedule = cap_schedule(&cfg.schedule, MULTI_DIRECTION_CAP);
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::Config(msg.to_string()));
        if self.r_max == 0 {
            return bad("r_max must be at least 1");
        }
        if self.schedule.is_empty() || self.schedule[0] == 0 {
            return bad("schedule must be nonempty with positive radii");
        }
        if self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("schedule must be strictly increasing");
        }
        if !(self.tol_f > 0.0 && self.tol_step > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.s_report.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return bad("Gevrey exponents must lie in (0, 1)");
        }
        if !self.probe_time.is_finite() {
            return bad("probe time must be finite");
        }
        Ok(())
    }

    fn radius(&self, r: usize) -> usize {
        self.schedule[r.min(self.schedule.len() - 1)]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverState {
    pub r: usize,
    /// Frequency attached to `zhat`, i.e. `q_update(zhat)`.
    pub omega_t: Vec<f64>,
    /// Coefficients including the pinned resonant sites.
    pub zhat: FourierVector,
    pub history: Vec<ConvergenceRecord>,
}

/// Diagnostics of Newton step `r`, which maps iterate `r` to iterate `r + 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub r: usize,
    pub radius: usize,
    /// `‖F(ẑ_p^{(r+1)}, ω^{(r+2)})‖₂` over the full support of the field.
    pub norm_f: f64,
    pub step_norm: f64,
    pub freq_step: f64,
    pub state_step_at_t: f64,
    /// Gevrey exponent fitted to `ẑ_p^{(r+1)}`.
    pub gevrey_s: f64,
    pub inverse_norm: f64,
    pub localization_ok: Option<bool>,
    pub pivot_ratio: f64,
    pub dim: usize,
    pub elapsed_s: f64,
}

/// One frequency iterate and the drift bound `ε‖X̂_q‖ max_j 1/a_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub iteration: usize,
    pub omega: Vec<f64>,
    pub drift: f64,
    pub drift_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorstPair {
    pub row: SiteIndex,
    pub col: SiteIndex,
    pub distance: i64,
    pub entry: f64,
    pub bound: f64,
    /// `log bound − log |entry|`; negative means violated.
    pub log_margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub r: usize,
    pub radius: usize,
    pub s: f64,
    pub inverse_norm: f64,
    /// `−log ε_N`, the admissible log inverse norm.
    pub log_inverse_bound: f64,
    pub inverse_norm_ok: bool,
    pub localization_ok: bool,
    pub pairs_checked: usize,
    pub worst_pair: Option<WorstPair>,
    /// The same check under [`Distance::Reflected`].
    pub localization_reflected_ok: bool,
    pub worst_pair_reflected: Option<WorstPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    Stagnated,
    MaxIterations,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub status: Status,
    pub omega_star: Vec<f64>,
    pub zhat_star: FourierVector,
    /// Residual of the initial iterate.
    pub initial_norm_f: f64,
    pub history: Vec<ConvergenceRecord>,
    pub conditions: Vec<ConditionRecord>,
    pub frequencies: Vec<FrequencyRecord>,
    pub schedule: Vec<usize>,
    pub b_variant: BVariant,
}

impl SolverOutcome {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn final_norm_f(&self) -> f64 {
        self.history.last().map_or(self.initial_norm_f, |h| h.norm_f)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TheoryScales {
    pub m: f64,
    pub m0: f64,
    pub log_eps_n: f64,
    pub n_prime: f64,
}

/// `log ε_N = −(log N)^15`.
pub fn log_eps_n(n: usize) -> f64 {
    -(n as f64).ln().powi(15)
}

pub fn theory_scales(epsilon: f64, n: usize) -> Result<TheoryScales, SolverError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SolverError::Config(format!("theory scales need 0 < ε < 1, got {epsilon}")));
    }
    if n < 2 {
        return Err(SolverError::Config(format!("theory scales need N ≥ 2, got {n}")));
    }
    let m = (1.0 / epsilon).ln().powf(0.05).exp();
    Ok(TheoryScales {
        m,
        m0: m.ln().powf(0.05).exp(),
        log_eps_n: log_eps_n(n),
        n_prime: (n as f64).ln().powf(0.1).exp(),
    })
}

/// `N₀·growth^r` for `r = 0..=r_max`.
pub fn practical_schedule(n0: usize, growth: usize, r_max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(r_max + 1);
    let mut n = n0;
    for _ in 0..=r_max {
        if out.last().is_some_and(|&l| l >= n) {
            break;
        }
        out.push(n);
        n = match n.checked_mul(growth) {
            Some(v) => v,
            None => break,
        };
    }
    out
}

/// `ceil(M^r)` for `r = 1..=r_max`, dropping radii below 2 and repeats.
pub fn theoretical_schedule(epsilon: f64, r_max: usize) -> Result<Vec<usize>, SolverError> {
    let m = theory_scales(epsilon, 2)?.m;
    let mut out: Vec<usize> = Vec::new();
    for r in 1..=r_max {
        let n = m.powi(r as i32).ceil();
        if !(n.is_finite() && n < 1e9) {
            break;
        }
        let n = n as usize;
        if n >= 2 && out.last().is_none_or(|&l| n > l) {
            out.push(n);
        }
    }
    Ok(out)
}

/// Schedule with the stated defaults: doubling from 4 unless overridden, or
/// the theoretical `ceil(M^r)`.
pub fn default_schedule(
    epsilon: f64,
    r_max: usize,
    n0: Option<usize>,
    growth: Option<usize>,
    theoretical: bool,
) -> Result<Vec<usize>, SolverError> {
    if theoretical {
        return theoretical_schedule(epsilon, r_max);
    }
    let n0 = n0.unwrap_or(4);
    let growth = growth.unwrap_or(2);
    if n0 == 0 || growth < 2 {
        return Err(SolverError::Config("schedule needs N₀ ≥ 1 and growth ≥ 2".into()));
    }
    Ok(practical_schedule(n0, growth, r_max))
}

/// Clamp every radius to `cap` and drop the resulting repeats.
pub fn cap_schedule(schedule: &[usize], cap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &n in schedule {
        let n = n.min(cap);
        if out.last().is_none_or(|&l| n > l) {
            out.push(n);
        }
    }
    out
}

fn q_from_field(model: &ModelSpec, x: &FourierVector) -> (Vec<f64>, Vec<f64>) {
    let (xq, _) = split_qp(x, model);
    let omega = model
        .omega_t()
        .iter()
        .zip(&xq)
        .zip(&model.amplitudes)
        .map(|((w, x), a)| w + model.epsilon * x / a)
        .collect();
    (omega, xq)
}

/// `ω_T + ε X̂_q(ẑ) ⊙ a⁻¹`, anchored at the model's `ω_T`.
pub fn q_update(model: &ModelSpec, zhat: &FourierVector) -> Vec<f64> {
    let field = FieldExpansion::new(model, &with_pins(model, zhat), false);
    q_from_field(model, &field.x_vector()).0
}

fn frequency_record(model: &ModelSpec, iteration: usize, omega: &[f64], xq: &[f64]) -> FrequencyRecord {
    let drift = norm(&omega.iter().zip(model.omega_t()).map(|(a, b)| a - b).collect::<Vec<_>>());
    let inv_a = model.amplitudes.iter().map(|a| 1.0 / a).fold(0.0, f64::max);
    FrequencyRecord {
        iteration,
        omega: omega.to_vec(),
        drift,
        drift_bound: model.epsilon * norm(xq) * inv_a,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct NewtonStep {
    zp: FourierVector,
    op: LatticeOperator,
    factored: Factored,
}

fn newton_step(
    model: &ModelSpec,
    field: &FieldExpansion,
    zp: &FourierVector,
    residual: &FourierVector,
    omega: &[f64],
    radius: usize,
    cfg: &SolverConfig,
    r: usize,
) -> Result<NewtonStep, SolverError> {
    let bx = LatticeBox::centered(model.m(), radius);
    let zp = zp.reboxed(&bx);
    let op = l_from(field, model, &zp, omega, &bx, Some(cfg.b_variant));
    if !op.is_finite() {
        return Err(SolverError::NonFinite { r });
    }
    let factored = Factored::new(&op.matrix, cfg.linear_solver);
    if factored.is_singular() {
        return Err(SolverError::Singular { r, ratio: factored.pivot_ratio });
    }
    let rhs: Vec<f64> = op.rows.iter().map(|s| residual.get_site(s)).collect();
    let delta = factored.solve(&rhs);
    let mut next = zp;
    for (s, d) in op.rows.iter().zip(&delta) {
        let v = next.get_site(s);
        next.set(s.mode, &s.index.0, v - d);
    }
    next.flush_tiny();
    Ok(NewtonStep { zp: next, op, factored })
}

/// One coefficient update on `Λ_{radius}` at the given frequency.
pub fn p_update(
    model: &ModelSpec,
    zp: &FourierVector,
    omega_t_prime: &[f64],
    radius: usize,
    cfg: &SolverConfig,
) -> Result<FourierVector, SolverError> {
    let zhat = with_pins(model, zp);
    let field = FieldExpansion::new(model, &zhat, true);
    let residual = residual_from_parts(model, &zhat, &field.x_vector(), omega_t_prime);
    Ok(newton_step(model, &field, zp, &residual, omega_t_prime, radius, cfg, 0)?.zp)
}

/// Run the iteration from `ẑ_p = 0`, `ω = ω_T`.
pub fn iterate(model: &ModelSpec, cfg: &SolverConfig) -> Result<SolverOutcome, SolverError> {
    iterate_observed(model, cfg, |_, _| {})
}

/// [`iterate`], calling `observe` with the state after every Newton step.
pub fn iterate_observed(
    model: &ModelSpec,
    cfg: &SolverConfig,
    mut observe: impl FnMut(&SolverState, Option<&ConditionRecord>),
) -> Result<SolverOutcome, SolverError> {
    model.validate()?;
    cfg.validate()?;

    let mut zp = FourierVector::zeros(model.n, LatticeBox::centered(model.m(), 0));
    let mut zhat = with_pins(model, &zp);
    let mut field = FieldExpansion::new(model, &zhat, true);
    let x = field.x_vector();
    let (mut omega, xq) = q_from_field(model, &x);
    let mut residual = residual_from_parts(model, &zhat, &x, &omega);
    let initial_norm_f = residual.norm_l2();

    let mut state = SolverState { r: 0, omega_t: omega.clone(), zhat: zhat.clone(), history: Vec::new() };
    let mut frequencies = vec![frequency_record(model, 1, &omega, &xq)];
    let mut conditions = Vec::new();
    let mut status = Status::MaxIterations;
    let mut probe = synthesize_at(&zhat, &omega, cfg.probe_time);
    let mut norms = vec![initial_norm_f];

    if !initial_norm_f.is_finite() {
        return Err(SolverError::NonFinite { r: 0 });
    }
    if initial_norm_f < cfg.tol_f {
        status = Status::Converged;
    }

    let mut r = 0;
    while status != Status::Converged && r < cfg.r_max {
        let started = Instant::now();
        let radius = cfg.radius(r);
        let step = newton_step(model, &field, &zp, &residual, &omega, radius, cfg, r)?;
        if !step.zp.is_finite() {
            return Err(SolverError::NonFinite { r });
        }

        let next_zhat = with_pins(model, &step.zp);
        let next_field = FieldExpansion::new(model, &next_zhat, true);
        let x = next_field.x_vector();
        let (next_omega, xq) = q_from_field(model, &x);
        let next_residual = residual_from_parts(model, &next_zhat, &x, &next_omega);
        let norm_f = next_residual.norm_l2();
        if !norm_f.is_finite() {
            return Err(SolverError::NonFinite { r });
        }

        let next_probe = synthesize_at(&next_zhat, &next_omega, cfg.probe_time);
        let state_step = norm_c(&next_probe, &probe);
        let step_norm = step.zp.combine(1.0, &zp.reboxed(&step.zp.support), -1.0).norm_l2();
        let freq_step = norm(&next_omega.iter().zip(&omega).map(|(a, b)| a - b).collect::<Vec<_>>());
        let gevrey_s = gevrey_fit_on(&step.zp, &cfg.s_report);

        let condition = if cfg.check_conditions {
            let c = check_implementation_conditions(&step.op, &step.factored, radius, gevrey_fit_on(&zp, &cfg.s_report));
            Some(ConditionRecord { r, ..c })
        } else {
            None
        };
        let inverse_norm = match &condition {
            Some(c) => c.inverse_norm,
            None => step.factored.inverse_norm(100, 1e-6),
        };

        let record = ConvergenceRecord {
            r,
            radius,
            norm_f,
            step_norm,
            freq_step,
            state_step_at_t: state_step,
            gevrey_s,
            inverse_norm,
            localization_ok: condition.as_ref().map(|c| c.localization_ok),
            pivot_ratio: step.factored.pivot_ratio,
            dim: step.op.rows.len(),
            elapsed_s: started.elapsed().as_secs_f64(),
        };

        zp = step.zp;
        zhat = next_zhat;
        field = next_field;
        omega = next_omega;
        residual = next_residual;
        probe = next_probe;
        frequencies.push(frequency_record(model, r + 2, &omega, &xq));
        norms.push(norm_f);

        state.r = r + 1;
        state.omega_t = omega.clone();
        state.zhat = zhat.clone();
        state.history.push(record);
        observe(&state, condition.as_ref());
        if let Some(c) = condition {
            conditions.push(c);
        }

        let k = norms.len();
        if k >= 3 && norms[k - 1] > 10.0 * norms[k - 2] && norms[k - 2] > 10.0 * norms[k - 3] {
            return Err(SolverError::Diverged { r, from: norms[k - 3], to: norms[k - 1] });
        }
        if norm_f < cfg.tol_f {
            status = Status::Converged;
        } else if step_norm < cfg.tol_step {
            status = Status::Stagnated;
            break;
        }
        r += 1;
    }

    Ok(SolverOutcome {
        status,
        omega_star: omega,
        zhat_star: zhat,
        initial_norm_f,
        history: state.history,
        conditions,
        frequencies,
        schedule: cfg.schedule.clone(),
        b_variant: cfg.b_variant,
    })
}

fn norm_c(a: &[num_complex::Complex64], b: &[num_complex::Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Bound tables `exp{−d^s / c}` indexed by `d`.
fn decay_table(max_d: usize, s: f64, c: f64) -> Vec<f64> {
    (0..=max_d).map(|d| -crate::lattice::gevrey_weight(d as i64, s) / c).collect()
}

/// Lattice distance used by the decay checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `|k − k'|₁`.
    Direct,
    /// `min(|k − k'|₁, |k + k'|₁)`: a `z̄` factor couples `k` to `−k'`, so in
    /// the lattice of `(z, z̄)` coefficients this pair sits at `|k + k'|₁`.
    Reflected,
}

impl Distance {
    fn between(self, a: &[i64], b: &[i64]) -> i64 {
        let direct = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        match self {
            Distance::Direct => direct,
            Distance::Reflected => direct.min(a.iter().zip(b).map(|(x, y)| (x + y).abs()).sum()),
        }
    }
}

/// Scans entries whose site distance lies in the half-open `window`.
pub(crate) fn scan_decay(
    inv: &Mat<f64>,
    rows: &[SiteIndex],
    cols: &[SiteIndex],
    window: (f64, f64),
    s: f64,
    c: f64,
    metric: Distance,
) -> (bool, usize, Option<WorstPair>) {
    let max_d = rows
        .iter()
        .chain(cols)
        .map(|x| x.index.linf() as usize)
        .max()
        .unwrap_or(0)
        * 2
        * rows.first().map_or(1, |x| x.index.dim());
    let log_bound = decay_table(max_d, s, c);
    let mut worst: Option<WorstPair> = None;
    let mut checked = 0usize;
    for (ci, col) in cols.iter().enumerate() {
        for (ri, row) in rows.iter().enumerate() {
            let d = metric.between(&row.index.0, &col.index.0);
            if (d as f64) < window.0 || (d as f64) >= window.1 {
                continue;
            }
            checked += 1;
            let e = inv[(ri, ci)].abs();
            if e == 0.0 {
                continue;
            }
            let margin = log_bound[d as usize] - e.ln();
            if worst.as_ref().is_none_or(|w| margin < w.log_margin) {
                worst = Some(WorstPair {
                    row: row.clone(),
                    col: col.clone(),
                    distance: d,
                    entry: e,
                    bound: log_bound[d as usize].exp(),
                    log_margin: margin,
                });
            }
        }
    }
    let ok = worst.as_ref().is_none_or(|w| w.log_margin >= 0.0);
    (ok, checked, worst)
}

/// Inverse-norm and off-diagonal decay check on a factored operator.
///
/// Localization: `|L⁻¹((j,k),(j',k'))| ≤ exp{−|k−k'|₁^s / 2}` whenever
/// `|k−k'|₁ ≥ N^{1/2}`.
pub fn check_implementation_conditions(
    op: &LatticeOperator,
    factored: &Factored,
    radius: usize,
    s: f64,
) -> ConditionRecord {
    let inverse = factored.inverse();
    let inverse_norm = factored.inverse_norm(200, 1e-10);
    let log_inverse_bound = -log_eps_n(radius.max(2));
    let cut = (radius as f64).sqrt();
    let (localization_ok, pairs_checked, worst_pair) =
        scan_decay(&inverse, &op.rows, &op.cols, (cut, f64::INFINITY), s, 2.0, Distance::Direct);
    let (localization_reflected_ok, _, worst_pair_reflected) =
        scan_decay(&inverse, &op.rows, &op.cols, (cut, f64::INFINITY), s, 2.0, Distance::Reflected);
    ConditionRecord {
        r: 0,
        radius,
        s,
        inverse_norm,
        log_inverse_bound,
        inverse_norm_ok: inverse_norm.is_finite() && inverse_norm.ln() <= log_inverse_bound,
        localization_ok,
        pairs_checked,
        worst_pair,
        localization_reflected_ok,
        worst_pair_reflected,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseDerivativeReport {
    /// `max_t ‖∂_{ω_t} L⁻¹‖₂`.
    pub norm: f64,
    /// `log(4√m·N / ε_N²)`.
    pub log_norm_bound: f64,
    pub norm_ok: bool,
    pub localization_ok: bool,
    pub worst_pair: Option<WorstPair>,
    /// Full derivative for each tangential direction.
    #[serde(skip)]
    pub derivatives: Vec<Mat<f64>>,
    #[serde(skip)]
    pub sites: Vec<SiteIndex>,
}

/// `∂L⁻¹ = −L⁻¹(∂L)L⁻¹` with `∂L` from central differences in `ω_T`; entries
/// with `|k−k'|₁ ≥ N^{3/4}` are tested against `exp{−|k−k'|₁^s / 4}`.
#[allow(clippy::too_many_arguments)]
pub fn inverse_derivative_check(
    model: &ModelSpec,
    zp: &FourierVector,
    omega_t_prime: &[f64],
    radius: usize,
    h: f64,
    s: f64,
    variant: BVariant,
    solver: LinearSolver,
    metric: Distance,
) -> Result<InverseDerivativeReport, SolverError> {
    let zp = strip_pins(model, zp);
    let bx = LatticeBox::centered(model.m(), radius);
    let field = FieldExpansion::new(model, &with_pins(model, &zp), true);
    let zp = zp.reboxed(&bx);
    let op = l_from(&field, model, &zp, omega_t_prime, &bx, Some(variant));
    let factored = Factored::new(&op.matrix, solver);
    if factored.is_singular() {
        return Err(SolverError::Singular { r: 0, ratio: factored.pivot_ratio });
    }
    let inv = factored.inverse();
    let mut derivatives = Vec::with_capacity(model.m());
    let mut norm_max = 0.0f64;
    let mut localization_ok = true;
    let mut worst: Option<WorstPair> = None;
    for t in 0..model.m() {
        let shifted = |sign: f64| {
            let mut w = omega_t_prime.to_vec();
            w[t] += sign * h;
            l_from(&field, model, &zp, &w, &bx, Some(variant)).matrix
        };
        let dl = (shifted(1.0) - shifted(-1.0)) * faer::Scale(1.0 / (2.0 * h));
        let d = -(&inv * &dl * &inv);
        norm_max = norm_max.max(spectral_norm(&d));
        let (ok, _, w) = scan_decay(&d, &op.rows, &op.cols, ((radius as f64).powf(0.75), f64::INFINITY), s, 4.0, metric);
        localization_ok &= ok;
        if let Some(w) = w {
            if worst.as_ref().is_none_or(|x| w.log_margin < x.log_margin) {
                worst = Some(w);
            }
        }
        derivatives.push(d);
    }
    let m = model.m() as f64;
    let log_norm_bound = (4.0 * m.sqrt() * radius as f64).ln() - 2.0 * log_eps_n(radius.max(2));
    Ok(InverseDerivativeReport {
        norm: norm_max,
        log_norm_bound,
        norm_ok: norm_max.is_finite() && norm_max.ln() <= log_norm_bound,
        localization_ok,
        worst_pair: worst,
        derivatives,
        sites: op.rows,
    })
}

/// One row of the per-iteration metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub r: usize,
    pub coefficient_step: f64,
    pub frequency_step: f64,
    pub state_step_at_t: f64,
    pub norm_f: f64,
}

pub fn convergence_metrics(history: &[ConvergenceRecord]) -> Vec<MetricRow> {
    history
        .iter()
        .map(|h| MetricRow {
            r: h.r,
            coefficient_step: h.step_norm,
            frequency_step: h.freq_step,
            state_step_at_t: h.state_step_at_t,
            norm_f: h.norm_f,
        })
        .collect()
}

/// `max F_{r+1} / F_r^{3/2}` over the steps that start below `1e−2`.
pub fn newton_contraction(initial_norm_f: f64, history: &[ConvergenceRecord]) -> Option<f64> {
    let norms: Vec<f64> = std::iter::once(initial_norm_f).chain(history.iter().map(|h| h.norm_f)).collect();
    norms
        .windows(2)
        .filter(|w| w[0] < 1e-2 && w[0] > 0.0)
        .map(|w| w[1] / w[0].powf(1.5))
        .reduce(f64::max)
}

/// `max ‖ẑ(k)‖` over each shell `Λ_{N_i} \ Λ_{N_{i−1}}` (the first shell is `Λ_{N_0}`).
pub fn shell_maxima(zhat: &FourierVector, radii: &[usize]) -> Vec<f64> {
    let m = zhat.m();
    let coords = zhat.support.coordinates();
    let norms = zhat.site_norms();
    let mut out = vec![0.0f64; radii.len()];
    for (p, v) in norms.iter().enumerate() {
        let r = crate::lattice::linf(&coords[p * m..(p + 1) * m]) as usize;
        if let Some(i) = radii.iter().position(|&n| r <= n) {
            out[i] = out[i].max(*v);
        }
    }
    out
}

/// `|(ω_T − ω)⊙a + εX̂_q(ẑ)|`, the resonant-site residual.
pub fn q_residual(model: &ModelSpec, zhat: &FourierVector, omega_t_prime: &[f64]) -> f64 {
    let field = FieldExpansion::new(model, &with_pins(model, zhat), false);
    let (xq, _) = split_qp(&field.x_vector(), model);
    let v: Vec<f64> = model
        .omega_t()
        .iter()
        .zip(omega_t_prime)
        .zip(model.amplitudes.iter().zip(&xq))
        .map(|((w0, w), (a, x))| (w0 - w) * a + model.epsilon * x)
        .collect();
    norm(&v)
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use torus::evaluate::{
    compare_trajectory, ode_residual, reference_integrate, residual_curve, synthesize, synthesize_at, to_real_coords,
    uniform_times, IntegrationError, ResidualSummary,
};
use torus::io::{
    fmt_f64, read_json, read_model, write_conditions_csv, write_convergence_csv, Header, ModelFile, SolutionFile,
};
use torus::msa::{default_inner_radius, glue_inverse, GlueConfig, GlueReport, Linearization};
use torus::resonance::{admissible, admissible_frequencies, sample_point, series_bound, Domain, ResonanceConfig, ResonanceReport};
use torus::{fpu_beta, henon_heiles, FourierVector, ModelSpec, MsaError, SolverConfig, SolverError};

use crate::{
    Failure, GlueArgs, ModelArgs, ModelKind, ResonanceArgs, ResonanceParams, SolveArgs, TrajectoryArgs, VerifyArgs,
};

const FPU_DEFAULT_N: usize = 3;
const FPU_DEFAULT_EPSILON: f64 = 1.0;
const RK4_DT: f64 = 1e-4;

/// Model source and the resolved model as it enters the solver.
#[derive(Serialize)]
struct ModelConfig {
    source: String,
    #[serde(flatten)]
    model: ModelFile,
}

/// Everything that determines a `solve` run.
#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'static str,
    model: ModelConfig,
    solver: &'a SolverConfig,
    resonance: ResonanceConfig,
    out: &'a Path,
}

fn build_model(args: &ModelArgs) -> anyhow::Result<(ModelSpec, String)> {
    let (mut model, source) = match &args.model_file {
        Some(path) => {
            if args.n.is_some() {
                bail!("--n applies to the built-in FPU chain only");
            }
            let model = read_model(path).with_context(|| format!("reading model file {}", path.display()))?;
            (model, path.display().to_string())
        }
        None => match args.model {
            ModelKind::Henon => {
                if args.n.is_some() {
                    bail!("--n applies to the FPU chain only; Hénon-Heiles has two modes");
                }
                (henon_heiles(), "henon".to_string())
            }
            ModelKind::Fpu => {
                let eps = args.epsilon.unwrap_or(FPU_DEFAULT_EPSILON);
                (fpu_beta(args.n.unwrap_or(FPU_DEFAULT_N), eps)?, "fpu".to_string())
            }
        },
    };
    if let Some(eps) = args.epsilon {
        model = model.with_epsilon(eps);
        model.validate()?;
    }
    if let Some(amps) = &args.amplitudes {
        model = model.with_excitation(amps)?;
    }
    Ok((model, source))
}

fn resonance_config(p: &ResonanceParams, m: usize) -> anyhow::Result<ResonanceConfig> {
    let cfg = ResonanceConfig { tau: p.tau, gamma: p.gamma, scale_m: p.scale_m };
    cfg.validate(m).map_err(|e| anyhow!(e))?;
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn load_solution(path: &Path) -> anyhow::Result<(SolutionFile, ModelSpec, FourierVector)> {
    let sol: SolutionFile = read_json(path).with_context(|| format!("reading solution {}", path.display()))?;
    let model = sol.model()?;
    let zhat = sol.zhat()?;
    if zhat.n != model.n || zhat.m() != model.m() {
        bail!("coefficients do not match the model ({} modes, m = {})", model.n, model.m());
    }
    if sol.omega_star.len() != model.m() {
        bail!("omega_star has {} entries, expected {}", sol.omega_star.len(), model.m());
    }
    Ok((sol, model, zhat))
}

pub fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let (model, source) = build_model(&args.model)?;
    let rcfg = resonance_config(&args.resonance, model.m())?;
    let mut cfg = SolverConfig::for_model(&model);
    if let Some(schedule) = &args.schedule {
        cfg.schedule = schedule.clone();
    }
    cfg.r_max = args.rmax;
    cfg.tol_f = args.tol;
    cfg.tol_step = args.tol_step;
    cfg.b_variant = args.b_variant.into();
    cfg.check_conditions = !args.no_conditions;
    cfg.validate().map_err(|e| anyhow!(e))?;

    let report = admissible(&model, &rcfg);
    if !report.admissible {
        if let Some(w) = &report.worst {
            eprintln!(
                "warning: frequencies fail the {} condition at k = {:?} (margin {:e}); continuing",
                w.set, w.k.0, w.margin
            );
        }
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let run = RunConfig {
        command: "solve",
        model: ModelConfig { source, model: (&model).into() },
        solver: &cfg,
        resonance: rcfg,
        out: &args.out,
    };
    let header = Header::new(&run)?;

    let outcome = match torus::iterate(&model, &cfg) {
        Ok(o) => o,
        Err(e @ (SolverError::Config(_) | SolverError::Model(_))) => return Err(Failure::Config(e.into())),
        Err(e) => return Err(Failure::NotConverged(e.to_string())),
    };

    let solution = SolutionFile::new(header.clone(), &model, &outcome);
    torus::io::write_json(&args.out.join("solution.json"), &solution)?;
    let mut w = create(&args.out.join("convergence.csv"))?;
    write_convergence_csv(&mut w, &outcome.history, &header)?;
    w.flush()?;
    let mut w = create(&args.out.join("conditions.csv"))?;
    write_conditions_csv(&mut w, &outcome.conditions, &header)?;
    w.flush()?;

    println!(
        "{}: {} iterations, ‖F‖ = {:e}, omega* = {:?}",
        serde_json::to_value(outcome.status)?.as_str().unwrap_or_default(),
        outcome.history.len(),
        outcome.final_norm_f(),
        outcome.omega_star
    );
    if outcome.converged() {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "no convergence to ‖F‖ < {:e} (final {:e}); results written to {}",
            cfg.tol_f,
            outcome.final_norm_f(),
            args.out.display()
        )))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum TimeGrid {
    Uniform { t_end: f64, points: usize },
    Custom { times: Vec<f64> },
}

#[derive(Serialize)]
struct TrajectoryConfig<'a> {
    command: &'static str,
    solution: &'a Path,
    solution_config: &'a serde_json::Value,
    grid: TimeGrid,
}

fn write_trajectory_csv(
    path: &Path,
    header: &Header,
    model: &ModelSpec,
    zhat: &FourierVector,
    omega: &[f64],
    times: &[f64],
) -> anyhow::Result<()> {
    let traj = to_real_coords(&synthesize(zhat, omega, times));
    let residual = residual_curve(model, zhat, omega, times);
    let coords = traj.coords.as_deref().unwrap_or_default();
    let mut w = create(path)?;
    header.write_comment(&mut w)?;
    let mut cols = vec!["t".to_string()];
    for j in 1..=model.n {
        cols.push(format!("x_{j}"));
        cols.push(format!("y_{j}"));
    }
    cols.push("residual".into());
    writeln!(w, "{}", cols.join(","))?;
    for ((t, xy), r) in times.iter().zip(coords).zip(&residual) {
        let mut row = vec![fmt_f64(*t)];
        for (x, y) in xy {
            row.push(fmt_f64(*x));
            row.push(fmt_f64(*y));
        }
        row.push(fmt_f64(*r));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn check_times(times: &[f64], what: &str) -> anyhow::Result<()> {
    if times.is_empty() {
        bail!("{what}: no sample times");
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        bail!("{what}: non-finite time {t}");
    }
    Ok(())
}

pub fn trajectory(args: &TrajectoryArgs) -> Result<(), Failure> {
    let (sol, model, zhat) = load_solution(&args.solution)?;
    let grid = match &args.times {
        Some(times) => TimeGrid::Custom { times: times.clone() },
        None => {
            if !(args.t_end.is_finite() && args.points >= 1) {
                return Err(anyhow!("need a finite --t-end and at least one point").into());
            }
            TimeGrid::Uniform { t_end: args.t_end, points: args.points }
        }
    };
    let times = match &grid {
        TimeGrid::Uniform { t_end, points } => uniform_times(*t_end, *points),
        TimeGrid::Custom { times } => times.clone(),
    };
    check_times(&times, "--times")?;
    let header = Header::new(&TrajectoryConfig {
        command: "trajectory",
        solution: &args.solution,
        solution_config: &sol.header.config,
        grid,
    })?;
    write_trajectory_csv(&args.out, &header, &model, &zhat, &sol.omega_star, &times)?;

    if let Some(path) = &args.markers {
        check_times(&args.marker_times, "--marker-times")?;
        let header = Header::new(&TrajectoryConfig {
            command: "trajectory",
            solution: &args.solution,
            solution_config: &sol.header.config,
            grid: TimeGrid::Custom { times: args.marker_times.clone() },
        })?;
        write_trajectory_csv(path, &header, &model, &zhat, &sol.omega_star, &args.marker_times)?;
    }
    Ok(())
}

#[derive(Clone, Serialize)]
#[serde(rename_all = "snake_case")]
enum Scan {
    Grid { points_per_direction: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Serialize)]
struct ResonanceRunConfig {
    command: &'static str,
    resonance: ResonanceConfig,
    model: Option<ModelConfig>,
    domain: Option<Domain>,
    omega_n: Option<Vec<f64>>,
    scan: Option<Scan>,
}

#[derive(Serialize)]
struct ScanSummary {
    points: usize,
    failures: usize,
    fraction: f64,
    /// Half-width of the normal-approximation 95% interval; Monte Carlo only.
    ci95: Option<f64>,
    /// Analytic upper bound on the excluded fraction.
    series_bound: f64,
}

#[derive(Serialize)]
struct ResonanceOutput {
    header: Header,
    model: Option<ResonanceReport>,
    scan: Option<ScanSummary>,
}

fn parse_domain(specs: &[String]) -> anyhow::Result<Domain> {
    let mut lower = Vec::with_capacity(specs.len());
    let mut upper = Vec::with_capacity(specs.len());
    for s in specs {
        let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("domain interval {s:?} is not of the form lo:hi"))?;
        let a: f64 = a.trim().parse().with_context(|| format!("domain bound {a:?}"))?;
        let b: f64 = b.trim().parse().with_context(|| format!("domain bound {b:?}"))?;
        if !(a.is_finite() && b.is_finite() && a < b) {
            bail!("domain interval {s:?} is empty or not finite");
        }
        lower.push(a);
        upper.push(b);
    }
    if lower.is_empty() {
        bail!("empty domain");
    }
    Ok(Domain::new(lower, upper))
}

/// Grid points in row-major order, endpoints included.
fn grid_points(domain: &Domain, per_dim: usize) -> Vec<Vec<f64>> {
    let m = domain.dim();
    let total = per_dim.pow(m as u32);
    let coord = |d: usize, i: usize| {
        if per_dim == 1 {
            domain.lower[d]
        } else {
            domain.lower[d] + (domain.upper[d] - domain.lower[d]) * i as f64 / (per_dim - 1) as f64
        }
    };
    (0..total)
        .map(|idx| {
            let mut rest = idx;
            let mut w = vec![0.0; m];
            for d in (0..m).rev() {
                w[d] = coord(d, rest % per_dim);
                rest /= per_dim;
            }
            w
        })
        .collect()
}

pub fn resonance(args: &ResonanceArgs) -> Result<(), Failure> {
    let model = if args.model.is_some() || args.model_file.is_some() {
        let margs = ModelArgs {
            model: args.model.unwrap_or(ModelKind::Henon),
            model_file: args.model_file.clone(),
            n: args.n,
            epsilon: args.epsilon,
            amplitudes: args.amplitudes.clone(),
        };
        Some(build_model(&margs)?)
    } else {
        if args.n.is_some() || args.epsilon.is_some() || args.amplitudes.is_some() {
            return Err(anyhow!("--n, --epsilon and --amplitudes need --model or --model-file").into());
        }
        None
    };
    let domain = args.domain.as_deref().map(parse_domain).transpose()?;
    if model.is_none() && domain.is_none() {
        return Err(anyhow!("nothing to do: give a model, a --domain, or both").into());
    }
    let m = match (&model, &domain) {
        (Some((model, _)), Some(d)) if model.m() != d.dim() => {
            return Err(anyhow!("domain has {} directions but the model has m = {}", d.dim(), model.m()).into())
        }
        (Some((model, _)), _) => model.m(),
        (None, Some(d)) => d.dim(),
        (None, None) => unreachable!(),
    };
    let cfg = resonance_config(&args.params, m)?;

    let omega_n = match (&domain, &args.omega_n, &model) {
        (None, _, _) => None,
        (Some(_), Some(w), _) => Some(w.clone()),
        (Some(_), None, Some((model, _))) => Some(model.omega_n()),
        (Some(_), None, None) => return Err(anyhow!("a scan needs --omega-n or a model").into()),
    };
    let scan = domain.as_ref().map(|_| match args.grid {
        Some(g) => Scan::Grid { points_per_direction: g },
        None => Scan::MonteCarlo { samples: args.samples, seed: args.seed },
    });
    match scan {
        Some(Scan::Grid { points_per_direction: 0 }) => return Err(anyhow!("--grid must be positive").into()),
        Some(Scan::MonteCarlo { samples: 0, .. }) => return Err(anyhow!("--samples must be positive").into()),
        _ => {}
    }

    let header = Header::new(&ResonanceRunConfig {
        command: "resonance",
        resonance: cfg,
        model: model.as_ref().map(|(m, s)| ModelConfig { source: s.clone(), model: m.into() }),
        domain: domain.clone(),
        omega_n: omega_n.clone(),
        scan: scan.clone(),
    })?;

    let model_report = model.as_ref().map(|(m, _)| admissible(m, &cfg));
    let summary = match (&domain, &omega_n, &scan) {
        (Some(domain), Some(omega_n), Some(scan)) => {
            let points = match scan {
                Scan::Grid { points_per_direction } => grid_points(domain, *points_per_direction),
                Scan::MonteCarlo { samples, seed } => {
                    (0..*samples as u64).into_par_iter().map(|i| sample_point(domain, *seed, i)).collect()
                }
            };
            let reports: Vec<ResonanceReport> =
                points.par_iter().map(|w| admissible_frequencies(w, omega_n, &cfg)).collect();
            if let Some(path) = &args.out {
                write_scan_csv(path, &header, m, &points, &reports)?;
            }
            let failures = reports.iter().filter(|r| !r.admissible).count();
            let p = failures as f64 / points.len() as f64;
            Some(ScanSummary {
                points: points.len(),
                failures,
                fraction: p,
                ci95: matches!(scan, Scan::MonteCarlo { .. })
                    .then(|| 1.96 * (p * (1.0 - p) / points.len() as f64).sqrt()),
                series_bound: series_bound(domain, omega_n, &cfg),
            })
        }
        _ => None,
    };
    print_json(&ResonanceOutput { header, model: model_report, scan: summary }, None)?;
    Ok(())
}

fn write_scan_csv(
    path: &Path,
    header: &Header,
    m: usize,
    points: &[Vec<f64>],
    reports: &[ResonanceReport],
) -> anyhow::Result<()> {
    let mut w = create(path)?;
    header.write_comment(&mut w)?;
    let mut cols: Vec<String> = (1..=m).map(|i| format!("omega_{i}")).collect();
    cols.extend(["admissible", "worst_set", "worst_margin"].map(String::from));
    writeln!(w, "{}", cols.join(","))?;
    for (p, r) in points.iter().zip(reports) {
        let mut row: Vec<String> = p.iter().map(|x| fmt_f64(*x)).collect();
        row.push(r.admissible.to_string());
        match &r.worst {
            Some(o) => {
                row.push(o.set.to_string());
                row.push(fmt_f64(o.margin));
            }
            None => row.extend([String::new(), String::new()]),
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GlueRunConfig<'a> {
    command: &'static str,
    model_state: &'a Path,
    glue: GlueConfig,
}

#[derive(Serialize)]
struct GlueOutput {
    header: Header,
    report: GlueReport,
}

pub fn glue_check(args: &GlueArgs) -> Result<(), Failure> {
    let (sol, model, zhat) = load_solution(&args.solution)?;
    let cfg = GlueConfig { k: args.k.unwrap_or_else(|| default_inner_radius(args.n)), ..GlueConfig::for_radius(args.n) };
    let header = Header::new(&GlueRunConfig { command: "glue-check", model_state: &args.solution, glue: cfg })?;
    let lin = Linearization::new(&model, &zhat, &sol.omega_star, sol.b_variant);
    let result = match glue_inverse(&lin, args.n, &cfg) {
        Ok(r) => r,
        Err(e @ MsaError::Config(_)) => return Err(Failure::Config(e.into())),
        Err(e) => return Err(Failure::NotConverged(e.to_string())),
    };
    print_json(&GlueOutput { header, report: result.report }, args.out.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyRunConfig<'a> {
    command: &'static str,
    solution: &'a Path,
    t_end: f64,
    points: usize,
    rk4_end: Option<f64>,
    rk4_dt: f64,
}

#[derive(Serialize)]
struct Rk4Comparison {
    t_end: f64,
    max_deviation: f64,
    energy_drift: f64,
}

#[derive(Serialize)]
struct VerifyOutput {
    header: Header,
    residual: ResidualSummary,
    rk4: Option<Rk4Comparison>,
}

pub fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let (sol, model, zhat) = load_solution(&args.solution)?;
    if !(args.t_end.is_finite() && args.points >= 1) {
        return Err(anyhow!("need a finite --t-end and at least one point").into());
    }
    let header = Header::new(&VerifyRunConfig {
        command: "verify",
        solution: &args.solution,
        t_end: args.t_end,
        points: args.points,
        rk4_end: args.rk4_end,
        rk4_dt: RK4_DT,
    })?;
    let omega = &sol.omega_star;
    let residual = ode_residual(&model, &zhat, omega, &uniform_times(args.t_end, args.points));

    let rk4 = match args.rk4_end {
        None => None,
        Some(t_end) => {
            if !(t_end.is_finite() && t_end > 0.0) {
                return Err(anyhow!("--rk4-end must be positive").into());
            }
            let z0 = synthesize_at(&zhat, omega, 0.0);
            let run = match reference_integrate(&model, &z0, t_end, RK4_DT, 100) {
                Ok(run) => run,
                Err(e @ IntegrationError::Unstable { .. }) => return Err(Failure::NotConverged(e.to_string())),
                Err(e) => return Err(Failure::Config(e.into())),
            };
            let fourier = synthesize(&zhat, omega, &run.trajectory.times);
            let max_deviation = compare_trajectory(&fourier, &run.trajectory).into_iter().fold(0.0, f64::max);
            Some(Rk4Comparison { t_end, max_deviation, energy_drift: run.energy_drift })
        }
    };
    eprintln!("max ODE residual on [0, {}]: {:e}", args.t_end, residual.max);
    print_json(&VerifyOutput { header, residual, rk4 }, args.out.as_deref())?;
    Ok(())
}

pub fn models() -> Result<(), Failure> {
    let hh = henon_heiles();
    let fpu = fpu_beta(FPU_DEFAULT_N, FPU_DEFAULT_EPSILON)?;
    let list = |w: &[f64]| w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    println!("henon  Hénon-Heiles, n = 2, degree {}, epsilon {}, omega {}", hh.degree(), hh.epsilon, list(&hh.omega));
    println!(
        "fpu    FPU-β chain with fixed ends, n = {} (--n), degree {}, epsilon {}, omega {}",
        fpu.n,
        fpu.degree(),
        fpu.epsilon,
        list(&fpu.omega)
    );
    Ok(())
}

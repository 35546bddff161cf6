use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use ma_sharp::dirichlet::{DirichletProblem, SolverOptions};
use ma_sharp::entire::{
    entire_approximate, extremal_sandwich, measure_allowance, sharpness_experiment, strict_convexity_audit,
    Calibration, EntireOptions, ExpansionSchedule, SandwichConfig, SharpnessConfig,
};
use ma_sharp::measure::{EllipsoidDomain, MeasureData, QuadraticAsymptote};
use ma_sharp::obstacle::ObstacleProblem;
use ma_sharp::quadrature::integrate;
use ma_sharp::radial::{eval_w, eval_w_star, excess};
use ma_sharp::verify::{run_criterion, CriterionReport, Measured, Profile, Provenance, Table};
use ma_sharp::{dn0, omega, Dimension};

const EXIT_SCHEMA: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ma-sharp", version, about = "Monge-Ampere sharp-estimate experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// JSON configuration of the experiment.
    #[arg(long, global = true, env = "MA_SHARP_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory for report.json, tables/ and summary.txt.
    #[arg(long, global = true, env = "MA_SHARP_OUT", default_value = "ma-sharp-out")]
    out: PathBuf,
    #[arg(long, global = true, env = "MA_SHARP_SEED")]
    seed: Option<u64>,
    /// Worker threads for the solvers and independent sub-experiments.
    #[arg(long, global = true, env = "MA_SHARP_JOBS", default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, env = "MA_SHARP_PROFILE", value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Node cap for every lattice.
    #[arg(long, global = true, env = "MA_SHARP_MAX_NODES")]
    max_nodes: Option<usize>,
    /// Newton step cap.
    #[arg(long, global = true, env = "MA_SHARP_MAX_NEWTON")]
    max_newton: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Smoke,
    Desk,
    Deep,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Smoke => Profile::Smoke,
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Deep => Profile::Deep,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RadialKind {
    Dirac,
    Obstacle,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// d_{n,0}, ω_n and the deviation constant.
    Constants {
        #[arg(long, default_value_t = 3)]
        n: usize,
    },
    /// Tabulates W_a or W_a* and the gap to the asymptote.
    Radial {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 200.0)]
        r_max: f64,
        #[arg(long, value_enum, default_value_t = RadialKind::Dirac)]
        kind: RadialKind,
        #[arg(long, default_value_t = 201)]
        rows: usize,
    },
    /// Dirichlet problem from --config.
    Solve,
    /// Plane obstacle problem from --config.
    Obstacle,
    /// Entire-solution approximation from --config.
    Entire,
    /// Extremal sandwich from --config.
    Sandwich,
    /// Sharpness experiment (--config optional).
    Sharpness,
    /// Strict-convexity audit from --config.
    Audit,
    /// Acceptance criteria.
    VerifyAll {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
    },
}

/// Result of one command: payload, checked invariants and CSV tables.
struct Outcome {
    results: Value,
    checks: Vec<Check>,
    tables: Vec<Table>,
    summary: Vec<String>,
    solver_failure: bool,
}

struct Check {
    measured: Measured,
    passed: bool,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Self { results, checks: Vec::new(), tables: Vec::new(), summary: Vec::new(), solver_failure: false }
    }

    fn check(&mut self, name: &str, value: f64, tolerance: f64, provenance: Provenance, passed: bool) {
        self.summary.push(format!("{} {name}: {value:.6e} (tol {tolerance:.1e})", if passed { "ok  " } else { "FAIL" }));
        self.checks.push(Check { measured: Measured { name: name.into(), value, tolerance, provenance }, passed });
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.global.jobs > 0 && std::env::var_os("RAYON_NUM_THREADS").is_none() {
        std::env::set_var("RAYON_NUM_THREADS", cli.global.jobs.to_string());
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(me) = cause.downcast_ref::<ma_sharp::Error>() {
            return match me {
                ma_sharp::Error::NonConvergence { .. } => EXIT_SOLVER,
                ma_sharp::Error::Io(_) => 1,
                _ => EXIT_SCHEMA,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_SCHEMA;
        }
    }
    1
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let g = &cli.global;
    let (name, outcome) = match &cli.command {
        Command::Constants { n } => ("constants", constants(*n)?),
        Command::Radial { n, a, r_max, kind, rows } => ("radial", radial(*n, *a, *r_max, *kind, *rows)?),
        Command::Solve => ("solve", solve(g)?),
        Command::Obstacle => ("obstacle", obstacle(g)?),
        Command::Entire => ("entire", entire(g)?),
        Command::Sandwich => ("sandwich", sandwich(g)?),
        Command::Sharpness => ("sharpness", sharpness(g)?),
        Command::Audit => ("audit", audit(g)?),
        Command::VerifyAll { criteria } => ("verify-all", verify_all(g, criteria)?),
    };
    write_outputs(g, name, &outcome)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    Ok(if outcome.passed() {
        0
    } else if outcome.solver_failure {
        EXIT_SOLVER
    } else {
        EXIT_INVARIANT
    })
}

fn read_config<T: for<'de> Deserialize<'de>>(g: &Global) -> anyhow::Result<T> {
    let Some(path) = g.config.as_ref() else {
        bail!(ma_sharp::Error::Schema("this command needs --config PATH".into()));
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => bail!(ma_sharp::Error::Schema(format!("reading {}: {e}", path.display()))),
    };
    let cfg = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn apply_caps(g: &Global, o: &mut SolverOptions) {
    if let Some(m) = g.max_nodes {
        o.max_nodes = m;
    }
    if let Some(m) = g.max_newton {
        o.max_newton = m;
    }
}

/// Drops wall-clock fields so equal inputs give equal reports.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.starts_with("wall_time"));
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn write_outputs(g: &Global, command: &str, o: &Outcome) -> anyhow::Result<()> {
    let tables = g.out.join("tables");
    fs::create_dir_all(&tables).with_context(|| format!("creating {}", tables.display()))?;
    let checks: Vec<Value> = o
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.measured.name,
                "value": c.measured.value,
                "tolerance": c.measured.tolerance,
                "provenance": c.measured.provenance,
                "passed": c.passed,
            })
        })
        .collect();
    let mut report = json!({
        "command": command,
        "seed": g.seed,
        "profile": Profile::from(g.profile),
        "passed": o.passed(),
        "checks": checks,
        "results": o.results,
    });
    strip_timing(&mut report);
    fs::write(g.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    for t in &o.tables {
        write_table(&tables.join(format!("{}.csv", t.name)), t)?;
    }
    let mut summary = format!("{command}: {}\n", if o.passed() { "all checks passed" } else { "checks failed" });
    for line in &o.summary {
        summary.push_str(line);
        summary.push('\n');
    }
    fs::write(g.out.join("summary.txt"), summary)?;
    Ok(())
}

fn write_table(path: &Path, t: &Table) -> anyhow::Result<()> {
    let mut s = t.header.join(",");
    s.push('\n');
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn constants(n: usize) -> anyhow::Result<Outcome> {
    let d = dn0(n)?;
    let w = omega(n);
    let bound = 2f64.powf(-2.0 / n as f64) * d;
    let head = integrate(|s| excess(n, 1.0, s), 0.0, 1e3, 1e-15, 1e-15).value;
    let integral = head + 1e3f64.powi(2 - n as i32) / (n as f64 * (n as f64 - 2.0));
    let mut o = Outcome::new(json!({ "n": n, "d_n0": d, "omega_n": w, "deviation_constant": bound }));
    o.summary.push(format!("n = {n}: d_n0 = {d:.10}, omega_n = {w:.10}, 2^(-2/n) d_n0 = {bound:.10}"));
    let err = (integral - d).abs() / d;
    o.check("d_n0 against the improper integral (rel)", err, 1e-8, Provenance::Oracle, err <= 1e-8);
    Ok(o)
}

fn radial(n: usize, a: f64, r_max: f64, kind: RadialKind, rows: usize) -> anyhow::Result<Outcome> {
    let dim = Dimension::new(n)?;
    if !(a >= 0.0 && r_max > 0.0) || rows < 2 {
        bail!(ma_sharp::Error::InvalidInput("radial needs a >= 0, r_max > 0 and at least two rows".into()));
    }
    let d = dn0(n)?;
    let (name, f, c): (&str, Box<dyn Fn(f64) -> f64>, f64) = match kind {
        RadialKind::Dirac => ("w", Box::new(move |r| eval_w(dim, a, r)), d * a * a),
        RadialKind::Obstacle => ("w_star", Box::new(move |r| eval_w_star(dim, a, r)), -d * a * a),
    };
    let mut t = Table { name: format!("radial_{name}"), header: vec!["r".into(), name.into(), "gap".into()], rows: Vec::new() };
    for k in 0..rows {
        let r = r_max * k as f64 / (rows - 1) as f64;
        let v = f(r);
        t.rows.push(vec![r, v, (v - 0.5 * r * r - c).abs()]);
    }
    let gap = (f(r_max) - 0.5 * r_max * r_max - c).abs();
    // leading tail a^n r^{2−n} / (n(n−2))
    let tail = a.powi(n as i32) * r_max.powi(2 - n as i32) / (n as f64 * (n as f64 - 2.0));
    let mut o = Outcome::new(json!({ "n": n, "a": a, "r_max": r_max, "kind": name, "asymptote": c, "gap_at_r_max": gap }));
    o.summary.push(format!("gap({r_max}) = {gap:.4e}"));
    if a > 0.0 && r_max >= 10.0 * a {
        let rel = (gap - tail).abs() / tail;
        o.check("gap against the leading tail term (rel)", rel, 0.05, Provenance::Oracle, rel <= 0.05);
    }
    o.tables.push(t);
    Ok(o)
}

#[derive(Deserialize)]
struct SolveConfig {
    domain: EllipsoidDomain,
    spacing: f64,
    boundary: QuadraticAsymptote,
    #[serde(default)]
    target: Option<MeasureData>,
    #[serde(default)]
    options: SolverOptions,
}

fn nodes_table(name: &str, u: &ma_sharp::lattice::ConvexNodalFunction, masses: &[f64], volumes: &[f64]) -> Table {
    let n = u.n();
    let l = u.lattice().expect("lattice");
    let mut header: Vec<String> = ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect();
    header.extend(["u", "target", "volume"].map(String::from));
    let rows = (0..l.n_interior())
        .map(|i| {
            let mut r = l.position(i).to_vec();
            r.extend([u.values[i], masses[i], volumes[i]]);
            r
        })
        .collect();
    Table { name: name.into(), header, rows }
}

fn solve(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: SolveConfig = read_config(g)?;
    apply_caps(g, &mut cfg.options);
    let n = cfg.domain.dim();
    let p = DirichletProblem {
        domain: cfg.domain,
        spacing: cfg.spacing,
        boundary: cfg.boundary,
        target: cfg.target.unwrap_or_else(|| MeasureData::lebesgue(n)),
        options: cfg.options,
    };
    let s = p.solve()?;
    let r = &s.report;
    let mut o = Outcome::new(json!({ "report": r }));
    o.solver_failure = !r.converged;
    o.check("max mass residual", r.max_mass_residual, r.tol_mass, Provenance::Oracle, r.converged);
    let rel = (r.total_mass - r.total_target).abs() / r.total_target.max(f64::MIN_POSITIVE);
    o.check("total mass conservation (rel)", rel, 1e-6, Provenance::Oracle, rel <= 1e-6);
    o.tables.push(nodes_table("nodes", &s.u, &s.masses, &s.volumes));
    Ok(o)
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum PlaneSpec {
    Plane { p: Vec<f64>, h: f64 },
    MassMatched { p: Vec<f64>, a: f64 },
}

#[derive(Deserialize)]
struct ObstacleConfig {
    domain: EllipsoidDomain,
    spacing: f64,
    boundary: QuadraticAsymptote,
    #[serde(default)]
    target: Option<MeasureData>,
    #[serde(default)]
    options: SolverOptions,
    obstacle: PlaneSpec,
}

fn obstacle(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: ObstacleConfig = read_config(g)?;
    apply_caps(g, &mut cfg.options);
    let n = cfg.domain.dim();
    let slope = match &cfg.obstacle {
        PlaneSpec::Plane { p, .. } | PlaneSpec::MassMatched { p, .. } => p.clone(),
    };
    let prob = ObstacleProblem {
        domain: cfg.domain,
        spacing: cfg.spacing,
        boundary: cfg.boundary,
        slope,
        target: cfg.target.unwrap_or_else(|| MeasureData::lebesgue(n)),
        options: cfg.options,
    };
    let (s, want) = match cfg.obstacle {
        PlaneSpec::Plane { h, .. } => (prob.solve_fixed_height(h)?, None),
        PlaneSpec::MassMatched { a, .. } => {
            let m = omega(n) * a.powi(n as i32);
            (prob.solve_mass_matched(m)?, Some(m))
        }
    };
    let r = &s.solution.report;
    let mut o = Outcome::new(json!({
        "report": r,
        "coincidence": s.coincidence,
        "height": s.height,
        "plane_at_origin": s.plane_at_origin,
        "deficit": s.deficit,
        "endpoint_capped": s.endpoint_capped,
        "outer_steps": s.outer_steps,
    }));
    o.solver_failure = !r.converged;
    o.check("max mass residual", r.max_mass_residual, r.tol_mass, Provenance::Oracle, r.converged);
    if let Some(m) = want {
        let tol = r.tol_mass * s.solution.lattice().n_interior() as f64;
        let err = (s.deficit - m).abs();
        o.check("matched mass |deficit − ω aⁿ|", err, tol, Provenance::PaperFormula, err <= tol || s.endpoint_capped);
    }
    o.tables.push(nodes_table("nodes", s.u(), &s.solution.masses, &s.solution.volumes));
    Ok(o)
}

#[derive(Deserialize)]
struct EntireConfig {
    measure: MeasureData,
    #[serde(default)]
    q: Option<QuadraticAsymptote>,
    schedule: ExpansionSchedule,
    #[serde(default)]
    probes: Vec<Vec<f64>>,
    #[serde(default)]
    options: EntireOptions,
}

fn entire(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: EntireConfig = read_config(g)?;
    apply_caps(g, &mut cfg.options.solver);
    let n = cfg.measure.n;
    let q = cfg.q.unwrap_or_else(|| QuadraticAsymptote::standard(n));
    let out = entire_approximate(&cfg.measure, &q, &cfg.schedule, &cfg.probes, &cfg.options)?;
    let mut o = Outcome::new(serde_json::to_value(&out)?);
    let mut levels = Table {
        name: "levels".into(),
        header: ["radius", "spacing", "nodes", "sup_plus", "sup_minus", "deviation", "ratio"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for l in &out.levels {
        levels.rows.push(vec![l.radius, l.spacing, l.nodes as f64, l.deviation.sup_plus, l.deviation.sup_minus, l.deviation.deviation, l.deviation.ratio]);
        o.solver_failure |= !l.converged;
        o.check(&format!("level R={} converged", l.radius), l.deviation.ratio, 1.0, Provenance::PaperFormula, l.converged);
    }
    let mut probes = Table { name: "probes".into(), header: vec!["probe".into()], rows: Vec::new() };
    for l in &out.levels {
        probes.header.push(format!("R={}", l.radius));
    }
    probes.header.push("extrapolated".into());
    for k in 0..out.probes.len() {
        let mut row = vec![k as f64];
        row.extend(out.levels.iter().map(|l| l.probe_values[k]));
        row.push(out.extrapolated[k]);
        probes.rows.push(row);
    }
    if let Some(dev) = out.entire_deviation {
        o.check("entire deviation ratio", dev.ratio, 1.0, Provenance::PaperFormula, dev.ratio <= 1.0 + 1e-9);
    }
    o.tables.push(levels);
    o.tables.push(probes);
    Ok(o)
}

fn sandwich(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: SandwichConfig = read_config(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    apply_caps(g, &mut cfg.options);
    let r = extremal_sandwich(&cfg)?;
    let mut o = Outcome::new(serde_json::to_value(&r)?);
    let outside = r.samples.iter().filter(|s| !s.within).count();
    o.check("samples outside the sandwich", outside as f64, 0.0, Provenance::PaperFormula, r.all_within);
    let mut t = Table { name: "sandwich".into(), header: ["sample", "total_variation"].map(String::from).to_vec(), rows: Vec::new() };
    for k in 0..r.probes.len() {
        t.header.push(format!("value_{k}"));
    }
    for s in &r.samples {
        let mut row = vec![s.index as f64, s.total_variation];
        row.extend(&s.values);
        t.rows.push(row);
    }
    o.tables.push(t);
    Ok(o)
}

fn sharpness(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: SharpnessConfig = if g.config.is_some() {
        read_config(g)?
    } else {
        SharpnessConfig { n: 3, a: 0.5, rhos: vec![1.0, 1.5, 2.0], spacing: 0.25, margin: 3.0, options: SolverOptions::default() }
    };
    apply_caps(g, &mut cfg.options);
    let c_hat = Calibration::frozen()?.c_hat(cfg.n)?;
    let eps = measure_allowance(cfg.n, cfg.a, cfg.spacing, cfg.margin, &cfg.options)?;
    let r = sharpness_experiment(&cfg, c_hat, eps.epsilon)?;
    let mut o = Outcome::new(json!({ "experiment": r, "allowance": eps, "c_hat": c_hat }));
    o.check("ratio column increasing", r.rows.len() as f64, 0.0, Provenance::PaperFormula, r.increasing);
    let worst = r.rows.iter().map(|x| x.deviation.ratio).fold(0.0, f64::max);
    o.check("max ratio", worst, 1.0 + eps.epsilon, Provenance::PaperFormula, r.within_allowance);
    for row in &r.rows {
        o.solver_failure |= !row.converged;
        o.check(&format!("anchors at rho={}", row.rho), row.origin_value, row.lower_anchor, Provenance::Calibrated, row.anchors_hold);
    }
    let mut t = Table {
        name: "sharpness".into(),
        header: ["rho", "nodes", "height", "deviation", "ratio", "u0", "lower_anchor", "plane_value", "upper_anchor"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for x in &r.rows {
        t.rows.push(vec![x.rho, x.nodes as f64, x.height, x.deviation.deviation, x.deviation.ratio, x.origin_value, x.lower_anchor, x.plane_value, x.upper_anchor]);
    }
    o.tables.push(t);
    Ok(o)
}

#[derive(Deserialize)]
struct AuditConfig {
    measure: MeasureData,
    #[serde(default)]
    q: Option<QuadraticAsymptote>,
    schedule: ExpansionSchedule,
    #[serde(default)]
    options: EntireOptions,
    /// Second-difference tolerance; defaults to h²/100.
    #[serde(default)]
    flat_tol: Option<f64>,
    #[serde(default = "default_min_nodes")]
    min_nodes: usize,
}

fn default_min_nodes() -> usize {
    3
}

fn audit(g: &Global) -> anyhow::Result<Outcome> {
    let mut cfg: AuditConfig = read_config(g)?;
    apply_caps(g, &mut cfg.options.solver);
    let n = cfg.measure.n;
    let q = cfg.q.unwrap_or_else(|| QuadraticAsymptote::standard(n));
    let h = cfg.schedule.spacing(cfg.schedule.radii.len() - 1);
    let tol = cfg.flat_tol.unwrap_or(1e-2 * h * h);
    let r = strict_convexity_audit(&cfg.measure, &q, &cfg.schedule, &cfg.options, tol, cfg.min_nodes)?;
    let mut o = Outcome::new(serde_json::to_value(&r)?);
    o.solver_failure = !r.converged;
    let contradiction = r.verdict == ma_sharp::entire::AuditVerdict::Contradiction;
    o.check("flat segments under a satisfied criterion", r.flats.len() as f64, 0.0, Provenance::PaperFormula, !contradiction && r.converged);
    o.summary.push(format!("verdict: {:?}", r.verdict));
    Ok(o)
}

fn verify_all(g: &Global, criteria: &[usize]) -> anyhow::Result<Outcome> {
    let ids: Vec<usize> = if criteria.is_empty() { (1..=11).collect() } else { criteria.to_vec() };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=11).contains(&i)) {
        bail!(ma_sharp::Error::InvalidInput(format!("no criterion {bad}")));
    }
    let profile = Profile::from(g.profile);
    let seed = g.seed.unwrap_or(20240917);
    let slots: Vec<Mutex<Option<CriterionReport>>> = ids.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..g.jobs.clamp(1, ids.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= ids.len() {
                    break;
                }
                let rep = run_criterion(ids[k], profile, seed);
                eprintln!("{}", rep.line());
                *slots[k].lock().expect("unpoisoned") = Some(rep);
            });
        }
    });
    let reports: Vec<CriterionReport> = slots.into_iter().map(|m| m.into_inner().expect("unpoisoned").expect("ran")).collect();
    let mut o = Outcome::new(serde_json::to_value(&reports)?);
    for r in &reports {
        o.summary.push(r.line());
        o.solver_failure |= r.solver_failure;
        for m in &r.values {
            o.checks.push(Check { measured: Measured { name: format!("[{}] {}", r.id, m.name), ..m.clone() }, passed: r.passed });
        }
        if r.values.is_empty() {
            o.checks.push(Check {
                measured: Measured { name: format!("[{}] {}", r.id, r.title), value: f64::NAN, tolerance: 0.0, provenance: Provenance::Oracle },
                passed: r.passed,
            });
        }
        for t in &r.tables {
            o.tables.push(Table { name: format!("c{:02}_{}", r.id, t.name), ..t.clone() });
        }
    }
    Ok(o)
}

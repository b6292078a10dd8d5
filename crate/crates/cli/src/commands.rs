//! Subcommand bodies. Each reads the effective config, writes its artifacts
//! through [`Artifacts`] and prints a short table.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use minsemi::config::{Config, McObservable};
use minsemi::elliptic::Orientation;
use minsemi::grid::{Grid, GridFunction, ValueKind};
use minsemi::mc::{coarsen_masses, l1_masses, simulate, Observable, Start, TrajectoryEnsemble};
use minsemi::model::{validate_model, DiffusionModel};
use minsemi::resolvent::resolvent;
use minsemi::semigroup::{default_steps, EvolutionMethod, Semigroup};
use minsemi::stationary::{
    check_invariance, decay_branch, stationary_density, stationary_density_with, Checkpoint, FoguelBranch,
    StationaryDensity, StationaryMethod,
};
use minsemi::thermo::{
    classify_reversibility, curl_residual, entropy_balance_check, entropy_production_rate, heat_dissipation_rate,
    helmholtz_decompose, thermo_report, ClassifyOptions,
};
use minsemi::Error;
use serde::Serialize;
use serde_json::Value;

use crate::artifacts::{axis_columns, num, print_table, sha256_hex, Artifacts, VERSION};
use crate::manifest::{Params, RunManifest};
use crate::{plot, CliError, CliResult};

pub const SUBCOMMANDS: [&str; 11] = [
    "validate",
    "resolvent",
    "evolve",
    "kernel",
    "stationary",
    "thermo",
    "classify",
    "simulate",
    "crossval",
    "sweep",
    "plot",
];

/// Sample points for the assumption checks run before every subcommand.
pub const VALIDATION_SAMPLES: usize = 256;
/// Step used for the mass function `e(t, x)`.
pub const MASS_DT: f64 = 1e-3;
/// Steps for the kernel row compared against simulation.
pub const CROSSVAL_KERNEL_STEPS: usize = 200;
pub const KERNEL_L1_TOL: f64 = 0.05;
/// Survival gaps are judged in units of the Monte-Carlo standard error.
pub const SURVIVAL_SE: f64 = 2.0;
pub const HEAT_REL_TOL: f64 = 0.1;
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

/// Run one subcommand end to end and write its manifest.
///
/// Never panics on bad input: failures are reported on stderr and folded into
/// the manifest's exit code. A run whose config cannot be read has no hash and
/// writes no manifest.
pub fn execute(sub: &str, config: Option<&str>, params: &Params, out: &Path) -> RunManifest {
    let start = Instant::now();
    let mut manifest = RunManifest {
        version: VERSION.to_string(),
        subcommand: sub.to_string(),
        config_hash: String::new(),
        exit_code: 0,
        wall_clock_seconds: 0.0,
        config: String::new(),
        params: params.clone(),
        seeds: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let fail = |m: &mut RunManifest, e: &CliError| {
        eprintln!("error: {e}");
        m.exit_code = e.exit_code();
    };
    let (cfg, hash) = match prepare(sub, config, params) {
        Ok(v) => v,
        Err(e) => {
            fail(&mut manifest, &e);
            return manifest;
        }
    };
    manifest.config_hash = hash.clone();
    manifest.config = cfg.as_ref().map(Config::to_toml).unwrap_or_default();
    let mut art = match Artifacts::new(out, sub, &hash) {
        Ok(a) => a,
        Err(e) => {
            fail(&mut manifest, &e);
            return manifest;
        }
    };
    let result = match &cfg {
        Some(c) => dispatch(sub, c, params, &mut art, &mut manifest.seeds),
        None => plot::run(params, &mut art),
    };
    if let Err(e) = &result {
        fail(&mut manifest, e);
        if manifest.exit_code == 2 {
            match write_diagnostic(&mut art, e) {
                Ok(()) => eprintln!("diagnostic written to {}", out.join("diagnostic.toml").display()),
                Err(w) => eprintln!("could not write diagnostic: {w}"),
            }
        }
    }
    manifest.outputs = art.outputs().to_vec();
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = manifest.write(out) {
        eprintln!("error: writing manifest: {e}");
        if manifest.exit_code == 0 {
            manifest.exit_code = 1;
        }
    }
    manifest
}

fn prepare(sub: &str, config: Option<&str>, params: &Params) -> CliResult<(Option<Config>, String)> {
    if !SUBCOMMANDS.contains(&sub) {
        return Err(CliError::Usage(format!("unknown subcommand `{sub}`")));
    }
    match config {
        Some(text) => {
            let mut c = Config::parse(text)?;
            if let Some(s) = params.seed {
                c.experiment.mc.seed = s;
            }
            if let Some(t) = params.tol {
                c.experiment.tol = t;
            }
            if let Some(n) = params.max_index {
                c.domain.max_index = n;
            }
            // re-validate with the overrides applied
            let c = Config::parse(&c.to_toml())?;
            let hash = sha256_hex(c.to_toml().as_bytes());
            Ok((Some(c), hash))
        }
        None if sub == "plot" => Ok((None, plot::source_hash(params)?)),
        None => Err(CliError::Usage(format!("`{sub}` needs --config"))),
    }
}

#[derive(Serialize)]
struct Diagnostic {
    error: String,
    kind: String,
    exit_code: u8,
    trace: Option<Vec<f64>>,
}

fn write_diagnostic(art: &mut Artifacts, e: &CliError) -> CliResult<()> {
    let d = Diagnostic {
        error: e.to_string(),
        kind: e.kind(),
        exit_code: e.exit_code(),
        trace: e.trace(),
    };
    art.toml("diagnostic.toml", "numerical failure", &d)
}

fn dispatch(
    sub: &str,
    cfg: &Config,
    params: &Params,
    art: &mut Artifacts,
    seeds: &mut BTreeMap<String, u64>,
) -> CliResult<()> {
    let seed = cfg.experiment.mc.seed;
    seeds.insert("validation".into(), seed);
    let model = checked_model(cfg, seed, art, sub == "validate")?;
    match sub {
        "validate" => Ok(()),
        "resolvent" => run_resolvent(cfg, &model, art),
        "evolve" => run_evolve(cfg, &model, art),
        "kernel" => run_kernel(cfg, &model, art),
        "stationary" => run_stationary(cfg, &model, params, art),
        "thermo" => run_thermo(cfg, &model, art),
        "classify" => {
            seeds.insert("probes".into(), seed);
            run_classify(cfg, &model, art)
        }
        "simulate" => {
            seeds.insert("mc".into(), seed);
            seeds.insert("bootstrap".into(), seed);
            run_simulate(cfg, &model, art)
        }
        "crossval" => {
            seeds.insert("mc".into(), seed);
            seeds.insert("bootstrap".into(), seed);
            run_crossval(cfg, &model, art)
        }
        "sweep" => run_sweep(cfg, art),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Build the model and check the standing assumptions; `write` keeps the report.
fn checked_model(cfg: &Config, seed: u64, art: &mut Artifacts, write: bool) -> CliResult<DiffusionModel> {
    let model = cfg.model()?;
    let report = validate_model(&model, &cfg.domain()?, VALIDATION_SAMPLES, seed)?;
    if write {
        art.toml("validation.toml", "assumption checks on sampled points", &report)?;
        print_table(
            "model validation",
            &[
                ("min ellipticity", report.min_ellipticity),
                ("min divergence", report.min_divergence_exact),
                ("passed", report.passed() as u8 as f64),
            ],
        );
    }
    if !report.passed() {
        let mut failed = Vec::new();
        if !report.smoothness_ok {
            failed.push("smoothness".to_string());
        }
        if !report.divergence_ok {
            failed.push(format!(
                "divergence bound (min {:.3e} at {:?}, mu0 {})",
                report.min_divergence_exact, report.worst_divergence_at, cfg.mu0
            ));
        }
        if !report.ellipticity_ok {
            failed.push(format!(
                "ellipticity (min {:.3e} at {:?})",
                report.min_ellipticity, report.worst_ellipticity_at
            ));
        }
        return Err(Error::Validation(failed.join("; ")).into());
    }
    Ok(model)
}

fn grid_columns(lead: &[&str], dim: usize, last: &str) -> Vec<String> {
    let mut c: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    c.extend(axis_columns(dim));
    c.push(last.to_string());
    c
}

fn grid_rows(f: &GridFunction, lead: &[String], rows: &mut Vec<Vec<String>>) {
    for i in 0..f.grid.len() {
        let mut r = lead.to_vec();
        r.extend(f.grid.coords(i).into_iter().map(num));
        r.push(num(f.values[i]));
        rows.push(r);
    }
}

fn rhs_on(cfg: &Config, grid: &Grid) -> CliResult<GridFunction> {
    let rhs = cfg.experiment.rhs;
    let v = (0..grid.len()).map(|i| rhs.eval(&grid.coords(i))).collect();
    Ok(GridFunction::from_values(grid, v, ValueKind::Function)?)
}

fn run_resolvent(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let ex = cfg.exhaustion();
    let lambda = cfg.experiment.lambda;
    let f = rhs_on(cfg, &ex.largest_grid(model.dim)?)?;
    let r = resolvent(model, &ex, lambda, &f)?;
    let rows: Vec<Vec<String>> = r
        .trace
        .iter()
        .map(|t| {
            vec![
                t.index.to_string(),
                num(t.radius),
                num(t.sup_change),
                num(t.interior_value_at_origin),
            ]
        })
        .collect();
    let cols = ["index", "radius", "sup_change", "value_at_origin"].map(String::from);
    art.csv("resolvent_trace.csv", "exhaustion trace", &cols, &rows)?;
    let mut rows = Vec::new();
    grid_rows(&r.limit, &[], &mut rows);
    art.csv(
        "resolvent.csv",
        &format!("R(lambda) f at lambda = {lambda}"),
        &grid_columns(&[], model.dim, "u"),
        &rows,
    )?;
    #[derive(Serialize)]
    struct Summary {
        lambda: f64,
        converged_index: usize,
        last_sup_change: f64,
        sup_norm: f64,
        rhs_sup_norm: f64,
        min: f64,
        contraction_holds: bool,
    }
    let s = Summary {
        lambda,
        converged_index: r.converged_index,
        last_sup_change: r.last_sup_change,
        sup_norm: r.limit.sup_norm(),
        rhs_sup_norm: f.sup_norm(),
        min: r.limit.min(),
        contraction_holds: lambda * r.limit.sup_norm() <= f.sup_norm() * (1.0 + 1e-10),
    };
    art.toml("resolvent.toml", "global resolvent summary", &s)?;
    print_table(
        "global resolvent",
        &[
            ("lambda", lambda),
            ("converged at index", s.converged_index as f64),
            ("last sup change", s.last_sup_change),
            ("lambda |u|_sup", lambda * s.sup_norm),
        ],
    );
    Ok(())
}

fn run_evolve(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let d = cfg.domain()?;
    let sg = Semigroup::new(model, &d, cfg.scheme)?;
    let grid = d.grid();
    let f = rhs_on(cfg, &grid)?;
    let x0 = cfg.x0();
    let steps = cfg.experiment.steps;
    let times = &cfg.experiment.t_list;
    let (mut back, mut fwd) = (Vec::new(), Vec::new());
    let mut masses = Vec::new();
    for &t in times {
        let lead = [num(t)];
        let u = sg.evolve(t, &f, steps, EvolutionMethod::ImplicitEulerPower)?;
        grid_rows(&u.result, &lead, &mut back);
        let row = sg.kernel_row(&x0, t, steps.unwrap_or_else(|| default_steps(t, d.spacing)))?;
        masses.push(row.mass());
        grid_rows(&row, &lead, &mut fwd);
    }
    art.csv(
        "evolve_backward.csv",
        "T(t) f on the grid",
        &grid_columns(&["t"], model.dim, "value"),
        &back,
    )?;
    art.csv(
        "evolve_forward.csv",
        &format!("transition density p(t, x0, .) from x0 = {x0:?}"),
        &grid_columns(&["t"], model.dim, "density"),
        &fwd,
    )?;
    let e = sg.mass_function(times, &x0, MASS_DT)?;
    let rows: Vec<Vec<String>> = times.iter().zip(&e).map(|(t, v)| vec![num(*t), num(*v)]).collect();
    art.csv(
        "mass.csv",
        &format!("mass function e(t, x0) from x0 = {x0:?}"),
        &["t".into(), "mass".into()],
        &rows,
    )?;
    let table: Vec<(String, f64)> = times.iter().zip(&e).map(|(t, v)| (format!("e({t}, x0)"), *v)).collect();
    let table: Vec<(&str, f64)> = table.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    print_table("semigroup evolution", &table);
    Ok(())
}

fn run_kernel(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let d = cfg.kernel_domain()?;
    let sg = Semigroup::new(model, &d, cfg.scheme)?;
    let t = cfg.experiment.t;
    let steps = cfg.experiment.steps.unwrap_or_else(|| default_steps(t, d.spacing));
    let k = sg.transition_kernel(t, steps, Orientation::Backward, cfg.experiment.kernel_cap)?;
    let meta = serde_json::to_string(&k.meta()).expect("kernel metadata serializes");
    let body = format!("# meta {meta}\n{}", k.matrix.to_triplet_text());
    art.text("kernel.txt", "transition kernel, row-major triplets", &body)?;
    let grid = &sg.backward.grid;
    let rows: Vec<Vec<String>> = k
        .nodes
        .iter()
        .zip(&k.row_sums)
        .map(|(&n, &s)| {
            let mut r: Vec<String> = grid.coords(n).into_iter().map(num).collect();
            r.push(num(s));
            r
        })
        .collect();
    art.csv(
        "kernel_rows.csv",
        "row sums of the kernel (surviving mass)",
        &grid_columns(&[], model.dim, "row_sum"),
        &rows,
    )?;
    let (lo, hi) = k
        .row_sums
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    print_table(
        "transition kernel",
        &[
            ("t", t),
            ("nodes", k.nodes.len() as f64),
            ("nonzeros", k.matrix.nnz() as f64),
            ("min row sum", lo),
            ("max row sum", hi),
        ],
    );
    Ok(())
}

fn stationary_method(params: &Params) -> CliResult<StationaryMethod> {
    match params.method.as_deref() {
        None | Some("nullspace") => Ok(StationaryMethod::Nullspace),
        Some("time-average") => Ok(StationaryMethod::time_average()),
        Some(m) => Err(CliError::Usage(format!(
            "unknown stationary method `{m}`; expected nullspace or time-average"
        ))),
    }
}

fn variance(theta: &GridFunction, axis: usize) -> f64 {
    let g = &theta.grid;
    (0..g.len()).map(|i| g.coords(i)[axis].powi(2) * theta.values[i]).sum::<f64>() * g.cell_volume()
}

fn run_stationary(cfg: &Config, model: &DiffusionModel, params: &Params, art: &mut Artifacts) -> CliResult<()> {
    let d = cfg.domain()?;
    let method = stationary_method(params)?;
    let resume = match &params.resume {
        Some(p) => Some(Checkpoint::from_text(&fs::read_to_string(p)?)?),
        None => None,
    };
    let every = params.checkpoint_every.unwrap_or(0);
    let path = art.dir().join(CHECKPOINT_FILE);
    let head = art.header("time-average checkpoint");
    let mut wrote = false;
    let mut save = |c: &Checkpoint| -> minsemi::Result<()> {
        if every > 0 && c.step.is_multiple_of(every) {
            fs::write(&path, format!("{head}{}", c.to_text()))?;
            wrote = true;
        }
        Ok(())
    };
    let run = stationary_density_with(model, &d, cfg.scheme, method, resume.as_ref(), &mut save);
    if wrote {
        art.register(CHECKPOINT_FILE)?;
    }
    let sg = Semigroup::new(model, &d, cfg.scheme)?;
    let s = match run {
        Err(Error::Ambiguous(why)) => {
            #[derive(Serialize)]
            struct NoDensity {
                reason: String,
                foguel: FoguelBranch,
            }
            let foguel = decay_branch(&sg, &cfg.x0(), &cfg.experiment.t_list, cfg.experiment.steps)?;
            art.toml("stationary.toml", "no invariant density", &NoDensity { reason: why.clone(), foguel })?;
            return Err(CliError::Core(Error::Ambiguous(why)));
        }
        r => r?,
    };
    write_theta(art, &s)?;
    let inv = check_invariance(&sg, &s.theta, cfg.experiment.t, cfg.experiment.steps)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        method: &'a StationaryMethod,
        residual: f64,
        shell_mass: f64,
        steps: usize,
        min: f64,
        variance: Vec<f64>,
        invariance: minsemi::stationary::InvarianceReport,
        foguel: FoguelBranch,
    }
    let var: Vec<f64> = (0..model.dim).map(|k| variance(&s.theta, k)).collect();
    let sum = Summary {
        method: &s.method,
        residual: s.residual,
        shell_mass: s.shell_mass,
        steps: s.trace.len(),
        min: s.theta.min(),
        variance: var.clone(),
        invariance: inv.clone(),
        foguel: FoguelBranch::Density,
    };
    art.toml("stationary.toml", "invariant density summary", &sum)?;
    let mut table = vec![
        ("residual", s.residual),
        ("shell mass", s.shell_mass),
        ("invariance L1", inv.l1_residual),
        ("leak budget", inv.leak_budget),
    ];
    let names: Vec<String> = (1..=model.dim).map(|k| format!("variance x{k}")).collect();
    table.extend(names.iter().map(String::as_str).zip(var));
    print_table("invariant density", &table);
    Ok(())
}

fn write_theta(art: &mut Artifacts, s: &StationaryDensity) -> CliResult<()> {
    let mut rows = Vec::new();
    grid_rows(&s.theta, &[], &mut rows);
    art.csv(
        "stationary.csv",
        "invariant density theta",
        &grid_columns(&[], s.theta.grid.dim, "theta"),
        &rows,
    )
}

fn nullspace_theta(cfg: &Config, model: &DiffusionModel) -> CliResult<StationaryDensity> {
    Ok(stationary_density(model, &cfg.domain()?, cfg.scheme, StationaryMethod::Nullspace)?)
}

fn run_thermo(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let s = nullspace_theta(cfg, model)?;
    let theta = &s.theta;
    let report = thermo_report(model, theta)?;
    let h = helmholtz_decompose(model, theta)?;
    let sg = Semigroup::new(model, &cfg.domain()?, cfg.scheme)?;
    let at_theta = entropy_balance_check(model, &sg, theta, MASS_DT)?;
    // a standard Gaussian is not stationary in general, so ė is informative
    let g = &theta.grid;
    let mut p = GridFunction::from_values(
        g,
        (0..g.len())
            .map(|i| (-0.5 * g.coords(i).iter().map(|x| x * x).sum::<f64>()).exp())
            .collect(),
        ValueKind::Density,
    )?
    .masked();
    let m = p.mass();
    p.values.iter_mut().for_each(|v| *v /= m);
    let at_gaussian = entropy_balance_check(model, &sg, &p, MASS_DT)?;
    #[derive(Serialize)]
    struct Out {
        report: minsemi::thermo::ThermoReport,
        curl_residual: f64,
        helmholtz_gamma_sup: f64,
        helmholtz_gamma_weighted: f64,
        balance_at_theta: minsemi::thermo::BalanceCheck,
        balance_at_standard_gaussian: minsemi::thermo::BalanceCheck,
    }
    let out = Out {
        curl_residual: curl_residual(model, g)?,
        helmholtz_gamma_sup: h.gamma_sup,
        helmholtz_gamma_weighted: h.gamma_weighted,
        balance_at_theta: at_theta,
        balance_at_standard_gaussian: at_gaussian,
        report,
    };
    art.toml("thermo.toml", "thermodynamic quantities at theta", &out)?;
    if let Some(w) = &out.report.warning {
        eprintln!("warning: {w}");
    }
    print_table(
        "thermodynamics at theta",
        &[
            ("entropy", out.report.entropy),
            ("epr", out.report.epr),
            ("hdr", out.report.hdr),
            ("epr + hdr", out.report.entropy_rate),
            ("free energy", out.report.free_energy.value().unwrap_or(f64::NAN)),
            ("balance residual (gaussian)", out.balance_at_standard_gaussian.residual),
        ],
    );
    Ok(())
}

fn run_classify(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let opts = ClassifyOptions {
        t: cfg.experiment.t,
        steps: cfg.experiment.steps.unwrap_or(ClassifyOptions::default().steps),
        pairs: cfg.experiment.pairs,
        seed: cfg.experiment.mc.seed,
        ..ClassifyOptions::default()
    };
    let v = match classify_reversibility(model, &cfg.domain()?, cfg.scheme, &opts) {
        Ok(v) => v,
        Err(Error::Consistency(detail)) => {
            art.text("verdict.toml", "inconsistent reversibility legs (JSON)", &format!("{detail}\n"))?;
            return Err(Error::Consistency(detail).into());
        }
        Err(e) => return Err(e.into()),
    };
    #[derive(Serialize)]
    struct Out<'a> {
        verdict: &'static str,
        #[serde(flatten)]
        legs: &'a minsemi::thermo::ReversibilityVerdict,
    }
    let word = if v.reversible { "reversible" } else { "irreversible" };
    art.toml("verdict.toml", "reversibility classification", &Out { verdict: word, legs: &v })?;
    println!("verdict: {word}");
    print_table(
        "legs (residual)",
        &[
            ("kernel symmetry", v.kernel_symmetry.residual),
            ("weighted symmetry", v.weighted_symmetry.residual),
            ("entropy production", v.epr.residual),
        ],
    );
    Ok(())
}

fn log_theta_lookup(theta: GridFunction) -> impl Fn(&[f64]) -> f64 + Sync {
    move |x: &[f64]| theta.at(x).map_or(f64::MIN_POSITIVE, |v| v.max(f64::MIN_POSITIVE)).ln()
}

fn run_simulate(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let mc = &cfg.experiment.mc;
    let e = simulate(model, &cfg.mc_params())?;
    let rows: Vec<Vec<String>> = e
        .record_times
        .iter()
        .enumerate()
        .map(|(rec, &t)| {
            let s = e.survival_probability(t);
            let alive: Vec<usize> = (0..e.paths()).filter(|&p| e.alive_at(p, t)).collect();
            let heat = alive.iter().map(|&p| e.heat_at(p, rec)).sum::<f64>() / alive.len().max(1) as f64;
            vec![num(t), num(s.value), num(s.std_err), alive.len().to_string(), num(heat)]
        })
        .collect();
    let cols = ["t", "survival", "survival_se", "alive", "mean_heat"].map(String::from);
    art.csv("mc_summary.csv", "ensemble statistics at recorded times", &cols, &rows)?;
    if !e.thinned.is_empty() {
        let mut rows = Vec::new();
        for p in &e.thinned {
            for (t, x, w) in &p.points {
                let mut r = vec![p.path.to_string(), num(*t)];
                r.extend(x.iter().copied().map(num));
                r.push(num(*w));
                rows.push(r);
            }
        }
        let mut cols = vec!["path".to_string(), "t".to_string()];
        cols.extend(axis_columns(e.dim));
        cols.push("heat".into());
        art.csv("paths.csv", "thinned sample paths", &cols, &rows)?;
    }
    let heat = e.heat_rate(mc.burn_in, mc.seed)?;
    let t = cfg.gf_time();
    let log_theta;
    let obs = match mc.observable {
        McObservable::Heat => Observable::Heat,
        McObservable::EntropyProduction => {
            log_theta = log_theta_lookup(nullspace_theta(cfg, model)?.theta);
            Observable::EntropyProduction(&log_theta)
        }
    };
    let summary = |gf: Option<&minsemi::mc::GeneratingFunctionEstimate>| McSummary {
        paths: e.paths(),
        horizon: mc.horizon,
        heat_rate: heat.value,
        heat_rate_std_err: heat.std_err,
        heat_rate_ci: [heat.ci.0, heat.ci.1],
        gf_time: t,
        gf_convexity_violation: gf.map(|g| g.convexity_violation()),
        gf_symmetry_worst_gap: gf.and_then(|g| {
            g.symmetry_pairs().iter().map(|p| p.1).reduce(f64::max)
        }),
    };
    let gf = match e.log_generating_function(&obs, t, &mc.lambdas, mc.seed) {
        Ok(g) => g,
        Err(err) => {
            art.toml("mc.toml", "simulation summary", &summary(None))?;
            return Err(err.into());
        }
    };
    let rows: Vec<Vec<String>> = (0..gf.lambdas.len())
        .map(|i| {
            let mut r = vec![num(gf.lambdas[i]), num(gf.estimates[i]), num(gf.ci[i]), num(gf.ess[i])];
            r.push(gf.drift.as_ref().map_or(String::new(), |d| num(d[i])));
            r
        })
        .collect();
    let cols = ["lambda", "estimate", "ci", "ess", "drift"].map(String::from);
    art.csv(
        "gf.csv",
        &format!("log generating function of {:?} at t = {t}", mc.observable),
        &cols,
        &rows,
    )?;
    let s = summary(Some(&gf));
    art.toml("mc.toml", "simulation summary", &s)?;
    print_table(
        "simulation",
        &[
            ("paths", e.paths() as f64),
            ("survival at horizon", e.survival_probability(mc.horizon).value),
            ("heat rate", heat.value),
            ("heat rate ci half-width", heat.half_width()),
            ("gf convexity violation", gf.convexity_violation()),
        ],
    );
    Ok(())
}

#[derive(Serialize)]
struct McSummary {
    paths: usize,
    horizon: f64,
    heat_rate: f64,
    heat_rate_std_err: f64,
    heat_rate_ci: [f64; 2],
    gf_time: f64,
    gf_convexity_violation: Option<f64>,
    gf_symmetry_worst_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Pair {
    pub quantity: String,
    pub pde: f64,
    pub mc: f64,
    /// Discrepancy in units of its tolerance; a pair fails above 1.
    pub severity: f64,
    pub passed: bool,
    pub note: String,
}

impl Pair {
    fn new(quantity: &str, pde: f64, mc: f64, severity: f64, note: String) -> Self {
        Self {
            quantity: quantity.into(),
            pde,
            mc,
            severity,
            passed: severity <= 1.0,
            note,
        }
    }

    fn broken(quantity: &str, why: String) -> Self {
        Self {
            quantity: quantity.into(),
            pde: f64::NAN,
            mc: f64::NAN,
            severity: f64::INFINITY,
            passed: false,
            note: why,
        }
    }
}

fn kernel_pairs(cfg: &Config, model: &DiffusionModel) -> CliResult<Vec<Pair>> {
    let d = cfg.domain()?;
    let sg = Semigroup::new(model, &d, cfg.scheme)?;
    let (x0, t) = (cfg.x0(), cfg.experiment.t);
    let row = sg.kernel_row(&x0, t, cfg.experiment.steps.unwrap_or(CROSSVAL_KERNEL_STEPS))?;
    let mut p = cfg.mc_params();
    // the kernel row is started from a point even if the config spreads starts
    p.start = Start::Point(x0.clone());
    p.horizon = t;
    p.record_times = vec![t];
    p.keep_paths = 0;
    let e: TrajectoryEnsemble = simulate(model, &p)?;
    let (hist, _) = e.empirical_kernel(t, &row.grid)?;
    let bins = cfg.experiment.mc.bins;
    let l1 = l1_masses(&coarsen_masses(&row, bins), &coarsen_masses(&hist, bins));
    let kernel = Pair::new(
        "kernel_l1",
        0.0,
        l1,
        l1 / KERNEL_L1_TOL,
        format!("L1 distance of p({t}, x0, .) over {bins}-node bins, tolerance {KERNEL_L1_TOL}"),
    );
    let pde = sg.mass_function(&[t], &x0, MASS_DT)?[0];
    let s = e.survival_probability(t);
    let survival = Pair::new(
        "survival",
        pde,
        s.value,
        (pde - s.value).abs() / (SURVIVAL_SE * s.std_err),
        format!("e({t}, x0) against surviving fraction, tolerance {SURVIVAL_SE} standard errors"),
    );
    Ok(vec![kernel, survival])
}

/// Isotropic Gaussian with the mean and average variance of `θ`, so the
/// heat rate is measured near stationarity rather than in a transient.
fn moment_matched_start(theta: &GridFunction) -> Start {
    let g = &theta.grid;
    let w = g.cell_volume();
    let mean: Vec<f64> = (0..g.dim)
        .map(|k| (0..g.len()).map(|i| g.coords(i)[k] * theta.values[i]).sum::<f64>() * w)
        .collect();
    let var = (0..g.len())
        .map(|i| {
            let c = g.coords(i);
            c.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>() * theta.values[i]
        })
        .sum::<f64>()
        * w
        / g.dim as f64;
    Start::Gaussian { mean, std: var.sqrt() }
}

fn heat_pair(cfg: &Config, model: &DiffusionModel) -> Option<Pair> {
    let theta = match nullspace_theta(cfg, model) {
        Ok(s) => s.theta,
        // no invariant density on this truncation: nothing to compare
        Err(CliError::Core(Error::Ambiguous(why))) => {
            eprintln!("note: skipping the entropy-production pair: {why}");
            return None;
        }
        Err(e) => return Some(Pair::broken("epr_vs_heat", e.to_string())),
    };
    let mc = &cfg.experiment.mc;
    let epr = match entropy_production_rate(model, &theta) {
        Ok(v) => v.value,
        Err(e) => return Some(Pair::broken("epr_vs_heat", e.to_string())),
    };
    let mut params = cfg.mc_params();
    if mc.start_std.is_none() {
        params.start = moment_matched_start(&theta);
    }
    params.keep_paths = 0;
    let heat = match simulate(model, &params).and_then(|e| e.heat_rate(mc.burn_in, mc.seed)) {
        Ok(h) => h,
        Err(e) => return Some(Pair::broken("epr_vs_heat", format!("simulation: {e}"))),
    };
    let diff = (heat.value - epr).abs();
    // a vanishing rate has no meaningful relative error; the interval decides
    let severity = (diff / (HEAT_REL_TOL * epr.abs())).min(diff / heat.half_width().max(f64::MIN_POSITIVE));
    Some(Pair::new(
        "epr_vs_heat",
        epr,
        heat.value,
        severity,
        format!(
            "stationary epr against mean heat rate over [{}, {}]: relative error below {HEAT_REL_TOL} or within the 95% interval",
            mc.burn_in, mc.horizon
        ),
    ))
}

fn run_crossval(cfg: &Config, model: &DiffusionModel, art: &mut Artifacts) -> CliResult<()> {
    let mut pairs = match kernel_pairs(cfg, model) {
        Ok(p) => p,
        Err(CliError::Core(e @ Error::PathBlowup { .. })) => vec![Pair::broken("kernel_l1", e.to_string())],
        Err(e) => return Err(e),
    };
    pairs.extend(heat_pair(cfg, model));
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            vec![
                p.quantity.clone(),
                num(p.pde),
                num(p.mc),
                num(p.severity),
                p.passed.to_string(),
            ]
        })
        .collect();
    let cols = ["quantity", "pde", "mc", "severity", "passed"].map(String::from);
    art.csv("crossval.csv", "PDE against Monte-Carlo pairs", &cols, &rows)?;
    #[derive(Serialize)]
    struct Out<'a> {
        pairs: &'a [Pair],
    }
    art.toml("crossval.toml", "PDE against Monte-Carlo pairs", &Out { pairs: &pairs })?;
    for p in &pairs {
        println!(
            "  {:<12} pde {:>14} mc {:>14} severity {:>10}  {}",
            p.quantity,
            crate::artifacts::human(p.pde),
            crate::artifacts::human(p.mc),
            crate::artifacts::human(p.severity),
            if p.passed { "ok" } else { "FAILED" }
        );
    }
    let worst = pairs
        .iter()
        .filter(|p| !p.passed)
        .max_by(|a, b| a.severity.total_cmp(&b.severity));
    match worst {
        None => Ok(()),
        Some(w) => Err(CliError::Numerical(format!(
            "cross-validation failed; worst offender `{}` (pde {}, mc {}, severity {}): {}",
            w.quantity, w.pde, w.mc, w.severity, w.note
        ))),
    }
}

fn run_sweep(cfg: &Config, art: &mut Artifacts) -> CliResult<()> {
    let omegas = &cfg.experiment.omega_sweep;
    if omegas.is_empty() {
        return Err(CliError::Usage("experiment.omega_sweep is empty".into()));
    }
    if !cfg.drift.params.contains_key("omega") {
        return Err(CliError::Usage(format!(
            "drift `{}` has no `omega` parameter to sweep",
            cfg.drift.kind
        )));
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &w in omegas {
        let mut c = cfg.clone();
        c.drift.params.insert("omega".into(), Value::from(w));
        let m = c.model()?;
        let theta = nullspace_theta(&c, &m)?.theta;
        let epr = entropy_production_rate(&m, &theta)?.value;
        let hdr = heat_dissipation_rate(&m, &theta)?;
        rows.push(vec![num(w), num(epr), num(hdr)]);
        table.push((format!("epr at omega {w}"), epr));
    }
    let cols = ["omega", "epr", "hdr"].map(String::from);
    art.csv("sweep.csv", "entropy production against rotation strength", &cols, &rows)?;
    let table: Vec<(&str, f64)> = table.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    print_table("omega sweep", &table);
    Ok(())
}

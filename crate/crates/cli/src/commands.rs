//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use pooledloss::config::{Model, RunConfig};
use pooledloss::finite_system::{factor_path, simulate_pool_on_path, write_trajectories};
use pooledloss::fluctuation::write_fluctuation_csv;
use pooledloss::loss::{exceedance_fraction, GaussianMixtureLoss, Payoff};
use pooledloss::pipeline::{
    approximate, compare_at_budget, finite_distribution, loss_skeletons, scheme1_pilot,
    PathSampler, PathSolution, Scheme, Settings,
};
use pooledloss::table::{fmt_f64, write_csv};
use pooledloss::Error;
use serde_json::{json, Value};

use crate::output::{plot_script, sha256_hex, OutDir, RunManifest};
use crate::{Cli, Command, Sizes};

const LATTICE_POINTS: usize = 1001;
const DEFAULT_PATHS: usize = 1000;
const DEFAULT_SIM_PATHS: usize = 10_000;
const DEFAULT_TRUNC: usize = 6;
const DEFAULT_SAMPLES: usize = 20;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Io(io::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) if e.is_numerical() => write!(f, "numerical failure: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Context {
    config: RunConfig,
    model: Model,
    config_path: String,
    config_sha256: String,
    seed: u64,
    threads: usize,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli
            .global
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--config is required".into()))?;
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Usage("config is not UTF-8".into()))?;
        let config = RunConfig::from_json(&text)?;
        let model = config.model()?;
        let seed = cli.global.seed.or(config.seed).unwrap_or(0);
        Ok(Self {
            config,
            model,
            config_path: path.display().to_string(),
            config_sha256: sha256_hex(&bytes),
            seed,
            threads: rayon::current_num_threads(),
        })
    }

    fn settings(&self, sizes: &Sizes) -> Settings {
        let a = &self.config.approx;
        Settings {
            paths: sizes.paths.or(a.paths).unwrap_or(DEFAULT_PATHS),
            samples: sizes.samples.or(a.samples).unwrap_or(DEFAULT_SAMPLES),
            trunc: sizes.trunc.or(a.trunc).unwrap_or(DEFAULT_TRUNC),
            lln_trunc: a.lln_trunc,
            substeps: a.substeps.unwrap_or(1),
            seed: self.seed,
        }
    }

    fn horizon(&self, sizes: &Sizes) -> Result<f64> {
        let t = sizes.horizon.unwrap_or(self.model.grid.horizon());
        self.model.grid.index_of(t)?;
        Ok(t)
    }

    fn manifest(&self, command: &str, scheme: Option<Scheme>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: self.config_path.clone(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            scheme: scheme.map(|s| s.label().to_string()),
            threads: self.threads,
            parameters: BTreeMap::new(),
            timings: BTreeMap::new(),
            files: Vec::new(),
        }
    }
}

fn settings_json(s: &Settings, t: f64) -> Vec<(&'static str, Value)> {
    vec![
        ("paths", json!(s.paths)),
        ("samples", json!(s.samples)),
        ("trunc", json!(s.trunc)),
        ("lln_trunc", json!(s.lln_trunc())),
        ("substeps", json!(s.substeps)),
        ("horizon", json!(t)),
    ]
}

fn set_params(m: &mut RunManifest, kv: Vec<(&'static str, Value)>) {
    m.parameters
        .extend(kv.into_iter().map(|(k, v)| (k.to_string(), v)));
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let ctx = Context::load(cli)?;
    let out = &cli.global.out;
    match &cli.command {
        Command::Simulate {
            sizes,
            trajectories,
        } => simulate(&ctx, out, sizes, *trajectories),
        Command::Approx {
            scheme,
            sizes,
            auto_budget,
            finite_paths,
            dump_path,
        } => approx(
            &ctx,
            out,
            (*scheme).into(),
            sizes,
            *auto_budget,
            *finite_paths,
            *dump_path,
        ),
        Command::Var {
            scheme,
            sizes,
            finite_paths,
            levels,
        } => var(&ctx, out, (*scheme).into(), sizes, *finite_paths, levels),
        Command::Skeleton {
            sizes,
            times,
            direct,
            levels,
        } => skeleton(&ctx, out, sizes, times, *direct, levels),
        Command::Compare {
            sizes,
            budget,
            strike,
        } => compare(&ctx, out, sizes, *budget, *strike),
        Command::Allocate {
            sizes,
            budget,
            strike,
            pilot_paths,
            pilot_samples,
        } => allocate(
            &ctx,
            out,
            sizes,
            *budget,
            *strike,
            *pilot_paths,
            *pilot_samples,
        ),
    }
}

fn simulate(
    ctx: &Context,
    out: &std::path::Path,
    sizes: &Sizes,
    trajectories: usize,
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let paths = sizes
        .paths
        .or(ctx.config.simulate.paths)
        .unwrap_or(DEFAULT_SIM_PATHS);
    let start = Instant::now();
    let dist = finite_distribution(&ctx.model, paths, ctx.seed, t)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut dir = OutDir::create(out)?;
    dir.write("loss_distribution.csv", |w| dist.write_csv(w))?;
    if trajectories > 0 {
        let last = ctx.model.grid.steps();
        let pools = (0..trajectories.min(paths) as u64)
            .map(|m| {
                let path = factor_path(&ctx.model.risk, ctx.model.grid, ctx.seed, m)?;
                Ok(simulate_pool_on_path(
                    &ctx.model.portfolio,
                    &path,
                    ctx.seed,
                    m,
                    last,
                ))
            })
            .collect::<std::result::Result<Vec<_>, Error>>()?;
        dir.write("trajectories.csv", |w| write_trajectories(w, &pools))?;
    }
    dir.write("plot.py", |w| {
        w.write_all(plot_script("simulate").as_bytes())
    })?;

    let mut m = ctx.manifest("simulate", None);
    set_params(
        &mut m,
        vec![
            ("paths", json!(paths)),
            ("horizon", json!(t)),
            ("names", json!(ctx.model.portfolio.names())),
        ],
    );
    m.timings.insert("finite_system".into(), elapsed);
    eprintln!(
        "mean loss {:.6} (se {:.2e}) over {paths} paths",
        dist.mean(),
        dist.std_error()
    );
    dir.finish(m)?;
    Ok(())
}

fn write_lattice<W: Write>(w: &mut W, mix: &GaussianMixtureLoss) -> io::Result<()> {
    let rows = mix.lattice(LATTICE_POINTS).map_err(io::Error::other)?;
    write_csv(
        w,
        &["loss", "cdf", "pdf"],
        rows.into_iter()
            .map(|(x, c, p)| vec![fmt_f64(x), fmt_f64(c), fmt_f64(p)]),
    )
}

fn write_components<W: Write>(w: &mut W, mix: &GaussianMixtureLoss) -> io::Result<()> {
    let rows = mix.components.iter().enumerate().map(|(i, c)| {
        vec![
            i.to_string(),
            fmt_f64(c.weight),
            fmt_f64(c.mean),
            fmt_f64(c.variance),
        ]
    });
    write_csv(w, &["component", "weight", "mean", "variance"], rows)
}

struct VarRow {
    level: f64,
    first: f64,
    second: f64,
    finite: Option<f64>,
}

fn write_var<W: Write>(w: &mut W, rows: &[VarRow]) -> io::Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            fmt_f64(r.level),
            fmt_f64(r.first),
            fmt_f64(r.second),
            r.finite.map(fmt_f64).unwrap_or_default(),
        ]
    });
    write_csv(
        w,
        &[
            "level",
            "var_first_order",
            "var_second_order",
            "var_finite_system",
        ],
        body,
    )
}

/// Approximation plus optional pool simulation; returns VaR rows and timings.
fn var_table(
    ctx: &Context,
    scheme: Scheme,
    settings: &Settings,
    t: f64,
    finite_paths: Option<usize>,
    levels: &[f64],
    manifest: &mut RunManifest,
) -> Result<(Vec<VarRow>, GaussianMixtureLoss)> {
    let run = approximate(&ctx.model, scheme, settings, t)?;
    manifest
        .timings
        .insert(scheme.label().into(), run.wall_time);
    let first = run.first_order()?;
    let finite = match finite_paths {
        Some(n) => {
            let start = Instant::now();
            let d = finite_distribution(&ctx.model, n, ctx.seed, t)?;
            manifest
                .timings
                .insert("finite_system".into(), start.elapsed().as_secs_f64());
            Some(d)
        }
        None => None,
    };
    let rows = levels
        .iter()
        .map(|&level| {
            Ok(VarRow {
                level,
                first: first.quantile(level)?,
                second: run.mixture.quantile(level)?,
                finite: finite.as_ref().map(|d| d.quantile(level)).transpose()?,
            })
        })
        .collect::<std::result::Result<Vec<_>, Error>>()?;
    manifest.parameters.insert(
        "mass_outside_unit_interval".into(),
        json!(run.mixture.mass_outside_unit_interval()),
    );
    Ok((rows, run.mixture))
}

const APPROX_LEVELS: [f64; 5] = [0.9, 0.95, 0.99, 0.995, 0.999];

#[allow(clippy::too_many_arguments)]
fn approx(
    ctx: &Context,
    out: &std::path::Path,
    scheme: Scheme,
    sizes: &Sizes,
    auto_budget: Option<f64>,
    finite_paths: Option<usize>,
    dump_path: Option<u64>,
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let mut settings = ctx.settings(sizes);
    let mut m = ctx.manifest("approx", Some(scheme));
    if let Some(budget) = auto_budget {
        if scheme != Scheme::Scheme1 {
            return Err(CliError::Usage(
                "--auto-budget applies to --scheme scheme1 only".into(),
            ));
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(CliError::Usage("--auto-budget must be positive".into()));
        }
        let start = Instant::now();
        let pilot = scheme1_pilot(&ctx.model, &settings, Payoff::Identity, t, 50, 20)?;
        let alloc = pilot.allocation(budget)?;
        m.timings
            .insert("pilot".into(), start.elapsed().as_secs_f64());
        set_params(
            &mut m,
            vec![
                ("auto_budget", json!(budget)),
                ("pilot_sigma1_sq", json!(pilot.sigma1_sq)),
                ("pilot_sigma2_sq", json!(pilot.sigma2_sq)),
                ("pilot_tau1", json!(pilot.tau1)),
                ("pilot_tau2", json!(pilot.tau2)),
            ],
        );
        settings.paths = alloc.m;
        settings.samples = alloc.j;
    }
    set_params(&mut m, settings_json(&settings, t));
    let (rows, mix) = var_table(
        ctx,
        scheme,
        &settings,
        t,
        finite_paths,
        &APPROX_LEVELS,
        &mut m,
    )?;

    let mut dir = OutDir::create(out)?;
    dir.write("lattice.csv", |w| write_lattice(w, &mix))?;
    dir.write("components.csv", |w| write_components(w, &mix))?;
    dir.write("var.csv", |w| write_var(w, &rows))?;
    if let Some(p) = dump_path {
        dump_factor_path(ctx, &settings, scheme, p, &mut dir)?;
    }
    dir.write("plot.py", |w| w.write_all(plot_script("approx").as_bytes()))?;
    eprintln!(
        "{}: mean {:.6}, sd {:.6}",
        scheme.label(),
        mix.mean(),
        mix.variance().sqrt()
    );
    dir.finish(m)?;
    Ok(())
}

fn dump_factor_path(
    ctx: &Context,
    settings: &Settings,
    scheme: Scheme,
    m: u64,
    dir: &mut OutDir,
) -> Result<()> {
    let sol = PathSolution::solve(&ctx.model, settings, m)?;
    let cfg = settings.fluctuation();
    let grid = ctx.model.grid;
    match &sol {
        PathSolution::Homogeneous(t) => dir.write("moments.csv", |w| t.write_csv(w))?,
        PathSolution::Typed(f) => dir.write("moments.csv", |w| f.write_csv(w))?,
    }
    if scheme == Scheme::FirstOrder {
        return Ok(());
    }
    match sol.sampler(&cfg, settings.seed, m)? {
        PathSampler::Homogeneous(s) => {
            let v = s.sample(0)?;
            dir.write("fluctuation.csv", |w| write_fluctuation_csv(w, grid, &v))?;
        }
        PathSampler::Typed(s) => {
            let v = s.sample(0)?;
            let k = cfg.k;
            let types = ctx.model.portfolio.types().len();
            let mut header = vec!["t".to_string(), "type_id".to_string()];
            header.extend((0..=k).map(|j| format!("v{j}")));
            let rows = (0..grid.len()).flat_map(|i| {
                let v = &v;
                (0..types).map(move |p| {
                    let mut row = vec![fmt_f64(grid.time(i)), p.to_string()];
                    row.extend(v.type_moments(i, p).iter().map(|&x| fmt_f64(x)));
                    row
                })
            });
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            dir.write("fluctuation.csv", |w| write_csv(w, &header, rows))?;
        }
    }
    let law = if scheme == Scheme::Gaussian {
        sol.gaussian_law(&cfg)?
    } else {
        sol.scheme2_law(&cfg)?
    };
    dir.write("covariance.csv", |w| law.write_covariance_csv(w))?;
    Ok(())
}

fn var(
    ctx: &Context,
    out: &std::path::Path,
    scheme: Scheme,
    sizes: &Sizes,
    finite_paths: Option<usize>,
    levels: &[f64],
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let settings = ctx.settings(sizes);
    let finite = finite_paths
        .or(ctx.config.simulate.paths)
        .unwrap_or(DEFAULT_SIM_PATHS);
    let mut m = ctx.manifest("var", Some(scheme));
    set_params(&mut m, settings_json(&settings, t));
    m.parameters.insert("finite_paths".into(), json!(finite));
    let (rows, mix) = var_table(ctx, scheme, &settings, t, Some(finite), levels, &mut m)?;

    let mut dir = OutDir::create(out)?;
    dir.write("var.csv", |w| write_var(w, &rows))?;
    dir.write("lattice.csv", |w| write_lattice(w, &mix))?;
    dir.write("plot.py", |w| w.write_all(plot_script("var").as_bytes()))?;
    for r in &rows {
        eprintln!(
            "VaR {:.3}: first order {:.5}, second order {:.5}, finite {:.5}",
            r.level,
            r.first,
            r.second,
            r.finite.unwrap_or(f64::NAN)
        );
    }
    dir.finish(m)?;
    Ok(())
}

fn default_times(ctx: &Context, t: f64) -> Result<Vec<f64>> {
    let grid = ctx.model.grid;
    let last = grid.index_of(t)?;
    let n = last.min(10);
    let mut idx: Vec<usize> = (1..=n).map(|k| (k * last + n / 2) / n).collect();
    idx.dedup();
    Ok(idx.into_iter().map(|i| grid.time(i)).collect())
}

fn skeleton(
    ctx: &Context,
    out: &std::path::Path,
    sizes: &Sizes,
    times: &[f64],
    direct: bool,
    levels: &[f64],
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let settings = Settings {
        paths: sizes.paths.or(ctx.config.approx.paths).unwrap_or(100),
        ..ctx.settings(sizes)
    };
    let times = if times.is_empty() {
        default_times(ctx, t)?
    } else {
        times.to_vec()
    };
    if times.is_empty() {
        return Err(CliError::Usage("no skeleton times".into()));
    }
    let per_path = settings.samples;
    let start = Instant::now();
    let paths = loss_skeletons(&ctx.model, &settings, &times, per_path, !direct)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut m = ctx.manifest(
        "skeleton",
        Some(if direct {
            Scheme::Scheme1
        } else {
            Scheme::Scheme2
        }),
    );
    set_params(&mut m, settings_json(&settings, t));
    m.parameters.insert("times".into(), json!(times));
    m.parameters.insert(
        "sampling".into(),
        json!(if direct { "direct" } else { "bridge" }),
    );
    m.timings.insert("skeleton".into(), elapsed);

    let mut dir = OutDir::create(out)?;
    let rows = paths.iter().enumerate().flat_map(|(s, p)| {
        times
            .iter()
            .zip(p)
            .map(move |(&tt, &l)| vec![s.to_string(), fmt_f64(tt), fmt_f64(l)])
    });
    dir.write("skeleton.csv", |w| {
        write_csv(w, &["sample_id", "t", "loss"], rows)
    })?;
    if !levels.is_empty() {
        let rows = levels
            .iter()
            .map(|&l| vec![fmt_f64(l), fmt_f64(exceedance_fraction(&paths, l))]);
        dir.write("exceedance.csv", |w| {
            write_csv(w, &["level", "fraction_exceeding"], rows)
        })?;
    }
    dir.write("plot.py", |w| {
        w.write_all(plot_script("skeleton").as_bytes())
    })?;
    dir.finish(m)?;
    Ok(())
}

fn budget_and_strike(
    ctx: &Context,
    budget: Option<f64>,
    strike: Option<f64>,
) -> Result<(f64, f64)> {
    let cfg = ctx.config.compare.as_ref();
    let budget = budget.or(cfg.map(|c| c.budget_seconds)).ok_or_else(|| {
        CliError::Usage("no budget: pass --budget or set compare.budget_seconds".into())
    })?;
    let strike = strike
        .or(cfg.map(|c| c.strike))
        .ok_or_else(|| CliError::Usage("no strike: pass --strike or set compare.strike".into()))?;
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(CliError::Usage(format!(
            "budget must be positive, got {budget}"
        )));
    }
    if !strike.is_finite() {
        return Err(CliError::Usage("strike must be finite".into()));
    }
    Ok((budget, strike))
}

fn compare(
    ctx: &Context,
    out: &std::path::Path,
    sizes: &Sizes,
    budget: Option<f64>,
    strike: Option<f64>,
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let (budget, strike) = budget_and_strike(ctx, budget, strike)?;
    let settings = ctx.settings(sizes);
    let reports = compare_at_budget(
        &ctx.model,
        &settings,
        Payoff::Call(strike),
        t,
        Duration::from_secs_f64(budget),
    )?;
    let finite_se = reports[0].std_error;

    let mut m = ctx.manifest("compare", None);
    set_params(
        &mut m,
        vec![
            ("budget_seconds", json!(budget)),
            ("strike", json!(strike)),
            ("trunc", json!(settings.trunc)),
            ("horizon", json!(t)),
        ],
    );
    for r in &reports {
        m.timings.insert(r.scheme.label().into(), r.wall_time);
    }
    let mut dir = OutDir::create(out)?;
    let rows = reports.iter().map(|r| {
        vec![
            r.scheme.label().to_string(),
            fmt_f64(r.estimate),
            fmt_f64(r.std_error),
            fmt_f64(r.wall_time),
            fmt_f64(finite_se / r.std_error),
        ]
    });
    dir.write("compare.csv", |w| {
        write_csv(
            w,
            &[
                "scheme",
                "estimate",
                "std_error",
                "wall_time",
                "ratio_std_error_finite",
            ],
            rows,
        )
    })?;
    for r in &reports {
        eprintln!(
            "{:>14}: {:.6e} (se {:.3e}, {:.2}s)",
            r.scheme.label(),
            r.estimate,
            r.std_error,
            r.wall_time
        );
    }
    dir.finish(m)?;
    Ok(())
}

fn allocate(
    ctx: &Context,
    out: &std::path::Path,
    sizes: &Sizes,
    budget: Option<f64>,
    strike: Option<f64>,
    pilot_paths: usize,
    pilot_samples: usize,
) -> Result<()> {
    let t = ctx.horizon(sizes)?;
    let (budget, strike) = budget_and_strike(ctx, budget, strike)?;
    if pilot_paths < 2 || pilot_samples < 2 {
        return Err(CliError::Usage(
            "pilot needs at least 2 paths and 2 samples".into(),
        ));
    }
    let settings = ctx.settings(sizes);
    let start = Instant::now();
    let pilot = scheme1_pilot(
        &ctx.model,
        &settings,
        Payoff::Call(strike),
        t,
        pilot_paths,
        pilot_samples,
    )?;
    let alloc = pilot.allocation(budget)?;

    let mut m = ctx.manifest("allocate", Some(Scheme::Scheme1));
    set_params(
        &mut m,
        vec![
            ("budget_seconds", json!(budget)),
            ("strike", json!(strike)),
            ("pilot_paths", json!(pilot_paths)),
            ("pilot_samples", json!(pilot_samples)),
        ],
    );
    m.timings
        .insert("pilot".into(), start.elapsed().as_secs_f64());
    let mut dir = OutDir::create(out)?;
    let row = vec![
        fmt_f64(budget),
        alloc.m.to_string(),
        alloc.j.to_string(),
        fmt_f64(alloc.m_real),
        fmt_f64(alloc.j_real),
        fmt_f64(pilot.sigma1_sq),
        fmt_f64(pilot.sigma2_sq),
        fmt_f64(pilot.tau1),
        fmt_f64(pilot.tau2),
    ];
    dir.write("allocation.csv", |w| {
        write_csv(
            w,
            &[
                "budget",
                "paths",
                "samples",
                "paths_real",
                "samples_real",
                "sigma1_sq",
                "sigma2_sq",
                "tau1",
                "tau2",
            ],
            [row],
        )
    })?;
    eprintln!("M = {}, J = {}", alloc.m, alloc.j);
    dir.finish(m)?;
    Ok(())
}

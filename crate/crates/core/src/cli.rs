//! Command-line front end.
//!
//! Exit codes: 0 success, 1 user or input error, 2 numerical non-convergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, read_csv, rmse, Dataset};
use crate::error::{Error, Result};
use crate::experiments::{
    gaussian_width_heuristic, run_benchmark, write_outputs, BenchConfig, SyntheticDesign, TauGrid, DESIGN_NAMES,
};
use crate::kernel::Kernel;
use crate::model::{geometric_grid, FittedModel};
use crate::operators::DerivativeSystem;
use crate::selection::{select, SelectionReport, DEFAULT_DELTA};
use crate::solver::{fit_path, FitState, Solver, SolverConfig, StepRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_NONCONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "denovas", version, about = "Sparse nonparametric regression with derivative penalties")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model on a training CSV
    Fit(FitArgs),
    /// Predict with a saved model
    Predict(PredictArgs),
    /// Recompute the selection report of a saved model
    Select(SelectArgs),
    /// Fit a warm-started path over a grid of tau
    Path(PathArgs),
    /// Run a synthetic benchmark
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Poly,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Settings shared by the fitting commands. Every field may also come from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of these options
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// Gaussian width, or `auto` for the mean 20th-nearest-neighbour distance
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// `lo:hi:count`, geometric
    #[arg(long)]
    pub tau_grid: Option<String>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub ext_tol: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// Relative slack of the selection threshold
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Response column name (default: last column)
    #[arg(long)]
    pub target: Option<String>,
    /// Permit nu = 0
    #[arg(long)]
    pub allow_nonstrict: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV with a header row
    pub train: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model JSON written by `fit`
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's input columns, optionally plus the response
    pub input: PathBuf,
    #[arg(long)]
    pub target: Option<String>,
    /// Output CSV (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    pub train: PathBuf,
    /// Optional validation CSV; adds a validation RMSE column
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// One of additive2, twoway2, threeway6, radial, pairwise, degenerate
    pub design: String,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated training sizes (validation size follows)
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Comma-separated smoothness weights
    #[arg(long = "nu-list", value_delimiter = ',')]
    pub nu_list: Vec<f64>,
    /// Skip the all-variables RLS baseline
    #[arg(long)]
    pub no_baseline: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kernel: Option<KernelFamily>,
    pub gamma: Option<toml::Value>,
    pub degree: Option<u32>,
    pub offset: Option<f64>,
    pub tau: Option<f64>,
    pub tau_grid: Option<String>,
    pub nu: Option<f64>,
    pub ext_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub target: Option<String>,
    pub allow_nonstrict: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Command-line flags merged over the config file.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub kernel: Option<KernelFamily>,
    pub gamma: Option<String>,
    pub degree: Option<u32>,
    pub offset: Option<f64>,
    pub tau: Option<f64>,
    pub tau_grid: Option<String>,
    pub nu: Option<f64>,
    pub ext_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub target: Option<String>,
    pub allow_nonstrict: bool,
}

impl Settings {
    pub fn resolve(args: &CommonArgs, reps: Option<usize>) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let gamma_file = match file.gamma {
            None => None,
            Some(toml::Value::String(s)) => Some(s),
            Some(toml::Value::Float(v)) => Some(v.to_string()),
            Some(toml::Value::Integer(v)) => Some(v.to_string()),
            Some(other) => return Err(Error::InvalidConfig(format!("gamma: unsupported value {other}"))),
        };
        Ok(Settings {
            kernel: args.kernel.or(file.kernel),
            gamma: args.gamma.clone().or(gamma_file),
            degree: args.degree.or(file.degree),
            offset: args.offset.or(file.offset),
            tau: args.tau.or(file.tau),
            tau_grid: args.tau_grid.clone().or(file.tau_grid),
            nu: args.nu.or(file.nu),
            ext_tol: args.ext_tol.or(file.ext_tol),
            max_outer: args.max_outer.or(file.max_outer),
            max_inner: args.max_inner.or(file.max_inner),
            delta: args.delta.or(file.delta),
            seed: args.seed.or(file.seed),
            reps: reps.or(file.reps),
            out: args.out.clone().or(file.out),
            format: args.format.or(file.format),
            target: args.target.clone().or(file.target),
            allow_nonstrict: args.allow_nonstrict || file.allow_nonstrict.unwrap_or(false),
        })
    }

    /// Kernel from the flags; `default` fills in when no family is given.
    pub fn kernel(&self, x: Option<&Dataset>, default: Kernel) -> Result<Kernel> {
        let family = match self.kernel {
            Some(f) => f,
            None if self.gamma.is_none() && self.degree.is_none() && self.offset.is_none() => return Ok(default),
            None => return Err(Error::InvalidConfig("--gamma/--degree/--offset need --kernel".into())),
        };
        let kernel = match family {
            KernelFamily::Gaussian => {
                let gamma = match self.gamma.as_deref() {
                    None => 1.0,
                    Some("auto") => {
                        let data = x.ok_or_else(|| Error::InvalidConfig("--gamma auto needs training data".into()))?;
                        let g = gaussian_width_heuristic(data.x.view(), 20)?;
                        log::info!("gamma auto = {g}");
                        g
                    }
                    Some(s) => s
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("--gamma must be a number or 'auto', got '{s}'")))?,
                };
                Kernel::gaussian(gamma)?
            }
            KernelFamily::Poly => Kernel::polynomial(self.degree.unwrap_or(2), self.offset.unwrap_or(1.0))?,
            KernelFamily::Linear => Kernel::Linear,
        };
        Ok(kernel)
    }

    pub fn solver(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            tau: self.tau.unwrap_or(d.tau),
            nu: self.nu.unwrap_or(d.nu),
            ext_tol: self.ext_tol.unwrap_or(d.ext_tol),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
            allow_nonstrict: self.allow_nonstrict,
            ..d
        }
    }

    pub fn tau_grid(&self) -> Result<Option<Vec<f64>>> {
        self.tau_grid.as_deref().map(parse_tau_grid).transpose()
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(Format::Json)
    }
}

/// `lo:hi:count` to a descending geometric grid.
pub fn parse_tau_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidConfig(format!("--tau-grid expects lo:hi:count, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 || (count > 1 && hi == lo) {
        return Err(Error::InvalidConfig(format!(
            "--tau-grid needs 0 < lo < hi and count ≥ 1, got '{spec}'"
        )));
    }
    let mut g = geometric_grid(lo, hi, count);
    g.reverse();
    Ok(g)
}

fn load_train(path: &Path, target: Option<&str>) -> Result<Dataset> {
    read_csv(path)?.into_dataset(target)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    w.write_record(["t", "inner_iters", "gap", "gap_tol", "objective", "step_norm"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            r.inner_iters.to_string(),
            fmt_f64(r.gap),
            fmt_f64(r.gap_tol),
            fmt_f64(r.objective),
            fmt_f64(r.step_norm),
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn names_of(data_names: &Option<Vec<String>>, d: usize) -> Vec<String> {
    data_names
        .clone()
        .unwrap_or_else(|| (0..d).map(|a| format!("x{}", a + 1)).collect())
}

fn write_selection(dir: &Path, report: &SelectionReport, names: &[String], format: Format) -> Result<PathBuf> {
    match format {
        Format::Json => {
            let path = dir.join("selection.json");
            #[derive(Serialize)]
            struct Doc<'a> {
                threshold: f64,
                tau: f64,
                sigma: f64,
                delta: f64,
                empty: bool,
                selected: Vec<&'a str>,
                variables: Vec<crate::selection::SelectionRow>,
                diagnostics: &'a crate::selection::SlackDiagnostics,
            }
            let doc = Doc {
                threshold: report.threshold,
                tau: report.tau,
                sigma: report.sigma,
                delta: report.delta,
                empty: report.empty,
                selected: report.selected.iter().map(|&a| names[a].as_str()).collect(),
                variables: report.rows(names),
                diagnostics: &report.diagnostics,
            };
            write_text(&path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
            Ok(path)
        }
        Format::Csv => {
            let path = dir.join("selection.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv(e.to_string()))?;
            w.write_record(["name", "dual_norm", "deriv_norm", "margin", "selected"])
                .map_err(|e| Error::Csv(e.to_string()))?;
            for row in report.rows(names) {
                w.write_record([
                    row.name,
                    fmt_f64(row.dual_norm),
                    fmt_f64(row.deriv_norm),
                    fmt_f64(row.margin),
                    row.selected.to_string(),
                ])
                .map_err(|e| Error::Csv(e.to_string()))?;
            }
            w.flush()?;
            Ok(path)
        }
    }
}

fn default_kernel() -> Kernel {
    Kernel::Gaussian { gamma: 1.0 }
}

fn cmd_fit(args: &FitArgs) -> Result<i32> {
    let s = Settings::resolve(&args.common, None)?;
    let data = load_train(&args.train, s.target.as_deref())?;
    let kernel = s.kernel(Some(&data), default_kernel())?;
    let cfg = s.solver();
    let delta = s.delta.unwrap_or(DEFAULT_DELTA);
    let sys = DerivativeSystem::assemble(&kernel, data.x.view())?;
    let st = Solver::new(&sys, data.y.view(), &cfg)?.fit()?;
    let report = select(&sys, &st, delta)?;
    let dir = s.out_dir();
    std::fs::create_dir_all(&dir)?;
    let model = FittedModel::from_fit(&kernel, &data, &st, Some(report.selected.clone()))?;
    write_text(&dir.join("model.json"), &(model.to_json()? + "\n"))?;
    let names = names_of(&data.names, data.d());
    write_selection(&dir, &report, &names, s.format())?;
    write_trace(&dir.join("convergence.csv"), &st.trace)?;
    let fitted = model.predict_many(data.x.view())?;
    println!(
        "outer_iters {} inner_iters {} objective {} converged {} train_rmse {}",
        st.outer_iters,
        st.inner_iters_total,
        fmt_f64(st.objective),
        st.converged,
        fmt_f64(rmse(fitted.view(), data.y.view()))
    );
    println!(
        "selected: {}",
        report.selected.iter().map(|&a| names[a].as_str()).collect::<Vec<_>>().join(" ")
    );
    Ok(if st.converged { EXIT_OK } else { EXIT_NONCONVERGED })
}

fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    let model = FittedModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    let table = read_csv(&args.input)?;
    let d = model.d();
    let width = table.header.len();
    let (x, y) = if width == d && args.target.is_none() {
        (table.rows, None)
    } else if width == d + 1 || args.target.is_some() {
        let data = table.into_dataset(args.target.as_deref())?;
        if data.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.d(),
            });
        }
        (data.x, Some(data.y))
    } else {
        return Err(Error::InvalidDataset(format!(
            "model expects {d} input columns (optionally plus a response), file has {width}"
        )));
    };
    let pred = model.predict_many(x.view())?;
    let mut out = String::from(if y.is_some() { "prediction,response,residual\n" } else { "prediction\n" });
    for i in 0..pred.len() {
        match &y {
            Some(y) => out += &format!("{},{},{}\n", fmt_f64(pred[i]), fmt_f64(y[i]), fmt_f64(y[i] - pred[i])),
            None => out += &format!("{}\n", fmt_f64(pred[i])),
        }
    }
    match &args.out {
        Some(p) => write_text(p, &out)?,
        None => print!("{out}"),
    }
    if let Some(y) = &y {
        eprintln!("rmse {}", fmt_f64(rmse(pred.view(), y.view())));
    }
    Ok(EXIT_OK)
}

fn cmd_select(args: &SelectArgs) -> Result<i32> {
    let model = FittedModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    let info = model
        .fit_info
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("model carries no fit information".into()))?;
    let sys = DerivativeSystem::assemble(&model.kernel, model.anchors.view())?;
    let mut st = FitState::zeros(model.n(), model.d());
    st.alpha = model.alpha.clone();
    st.beta = model.beta.clone();
    st.vbar = info.vbar.clone();
    st.tau = info.tau;
    st.nu = info.nu;
    st.sigma = info.sigma;
    let report = select(&sys, &st, args.delta.unwrap_or(DEFAULT_DELTA))?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let names = names_of(&model.names, model.d());
    let path = write_selection(&dir, &report, &names, args.format.unwrap_or(Format::Json))?;
    println!(
        "selected: {} ({})",
        report.selected.iter().map(|&a| names[a].as_str()).collect::<Vec<_>>().join(" "),
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_path(args: &PathArgs) -> Result<i32> {
    let s = Settings::resolve(&args.common, None)?;
    let data = load_train(&args.train, s.target.as_deref())?;
    let val = match &args.val {
        Some(p) => Some(load_train(p, s.target.as_deref())?),
        None => None,
    };
    let kernel = s.kernel(Some(&data), default_kernel())?;
    let taus = match (s.tau_grid()?, s.tau) {
        (Some(g), _) => g,
        (None, Some(t)) => vec![t],
        (None, None) => return Err(Error::InvalidConfig("path needs --tau-grid or --tau".into())),
    };
    let cfg = s.solver();
    let delta = s.delta.unwrap_or(DEFAULT_DELTA);
    let sys = DerivativeSystem::assemble(&kernel, data.x.view())?;
    let mut path = fit_path(&sys, data.y.view(), &taus, &cfg, delta)?;
    let names = names_of(&data.names, data.d());
    let mut all_converged = true;
    for e in path.entries.iter_mut() {
        if let (Some(st), Some(v)) = (&e.state, &val) {
            let m = FittedModel::from_fit(&kernel, &data, st, None)?;
            e.validation_rmse = Some(rmse(m.predict_many(v.x.view())?.view(), v.y.view()));
        }
        all_converged &= e.state.as_ref().is_some_and(|s| s.converged);
    }
    let dir = s.out_dir();
    std::fs::create_dir_all(&dir)?;
    match s.format() {
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                tau: f64,
                selected: Vec<&'a str>,
                objective: Option<f64>,
                outer_iters: Option<usize>,
                converged: Option<bool>,
                validation_rmse: Option<f64>,
                error: Option<&'a str>,
            }
            let rows: Vec<Row> = path
                .entries
                .iter()
                .map(|e| Row {
                    tau: e.tau,
                    selected: e
                        .selection
                        .as_ref()
                        .map(|r| r.selected.iter().map(|&a| names[a].as_str()).collect())
                        .unwrap_or_default(),
                    objective: e.state.as_ref().map(|s| s.objective),
                    outer_iters: e.state.as_ref().map(|s| s.outer_iters),
                    converged: e.state.as_ref().map(|s| s.converged),
                    validation_rmse: e.validation_rmse,
                    error: e.error.as_deref(),
                })
                .collect();
            write_text(&dir.join("path.json"), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(dir.join("path.csv")).map_err(|e| Error::Csv(e.to_string()))?;
            w.write_record(["tau", "selected", "objective", "outer_iters", "converged", "validation_rmse", "error"])
                .map_err(|e| Error::Csv(e.to_string()))?;
            for e in &path.entries {
                let sel = e
                    .selection
                    .as_ref()
                    .map(|r| r.selected.iter().map(|&a| names[a].as_str()).collect::<Vec<_>>().join(" "))
                    .unwrap_or_default();
                w.write_record([
                    fmt_f64(e.tau),
                    sel,
                    e.state.as_ref().map(|s| fmt_f64(s.objective)).unwrap_or_default(),
                    e.state.as_ref().map(|s| s.outer_iters.to_string()).unwrap_or_default(),
                    e.state.as_ref().map(|s| s.converged.to_string()).unwrap_or_default(),
                    e.validation_rmse.map(fmt_f64).unwrap_or_default(),
                    e.error.clone().unwrap_or_default(),
                ])
                .map_err(|e| Error::Csv(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    for e in &path.entries {
        let sel = e
            .selection
            .as_ref()
            .map(|r| r.selected.iter().map(|&a| names[a].as_str()).collect::<Vec<_>>().join(" "))
            .unwrap_or_else(|| format!("error: {}", e.error.as_deref().unwrap_or("")));
        println!("tau {} selected: {sel}", fmt_f64(e.tau));
    }
    Ok(if all_converged { EXIT_OK } else { EXIT_NONCONVERGED })
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let s = Settings::resolve(&args.common, args.reps)?;
    let seed = s.seed.unwrap_or(0);
    let base = SyntheticDesign::by_name(&args.design, seed)?;
    let ns = if args.n.is_empty() { vec![base.n_train] } else { args.n.clone() };
    let nus = if args.nu_list.is_empty() {
        vec![s.nu.unwrap_or_else(|| base.default_nu())]
    } else {
        args.nu_list.clone()
    };
    let kernel = s.kernel(None, base.default_kernel())?;
    let taus = match (s.tau_grid()?, s.tau) {
        (Some(g), _) => TauGrid::Explicit(g),
        (None, Some(t)) => TauGrid::Explicit(vec![t]),
        (None, None) => TauGrid::default(),
    };
    let mut summaries = Vec::new();
    let mut unconverged = false;
    for &n in &ns {
        for &nu in &nus {
            let design = base.clone().with_n(n);
            let cfg = BenchConfig {
                kernel,
                nu,
                taus: taus.clone(),
                reps: s.reps.unwrap_or(1),
                baseline_rls: !args.no_baseline,
                solver: s.solver(),
                delta: s.delta.unwrap_or(DEFAULT_DELTA),
                ..BenchConfig::for_design(&design)
            };
            let summary = run_benchmark(&design, &cfg)?;
            let fmt_stat = |st: Option<crate::experiments::Stat>| {
                st.map(|v| format!("{:.4} ± {:.4}", v.mean, v.std)).unwrap_or_else(|| "n/a".into())
            };
            println!(
                "{} n={} nu={} kernel={}: selection_error {} normalized_rmse {} baseline {}{}",
                design.kind,
                n,
                nu,
                kernel,
                fmt_stat(summary.selection_error),
                fmt_stat(summary.normalized_rmse),
                fmt_stat(summary.baseline_normalized_rmse),
                if summary.partial { " (partial)" } else { "" }
            );
            unconverged |= summary.records.iter().any(|r| r.unconverged_taus > 0);
            summaries.push(summary);
        }
    }
    let dir = s.out_dir();
    write_outputs(&dir, &summaries)?;
    println!("wrote {}", dir.display());
    if unconverged {
        log::warn!("some path fits hit the outer iteration cap");
    }
    Ok(EXIT_OK)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InnerNotCertified { .. } => EXIT_NONCONVERGED,
        _ => EXIT_USER,
    }
}

/// Run a parsed command and map errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Select(a) => cmd_select(a),
        Command::Path(a) => cmd_path(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::NonStrict) {
                eprintln!("hint: pass --allow-nonstrict to run with nu = 0");
            }
            if let Error::InvalidConfig(msg) = &e {
                if msg.starts_with("unknown design") {
                    eprintln!("valid designs: {}", DESIGN_NAMES.join(", "));
                }
            }
            exit_code_for(&e)
        }
    }
}

/// Parse `argv` and run; usage errors exit with 1, help and version with 0.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_grid_parsing() {
        let g = parse_tau_grid("0.001:1:4").unwrap();
        assert_eq!(g.len(), 4);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[3] - 0.001).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        for bad in ["1:0.1:3", "0:1:3", "a:b:c", "1:2", "0.1:1:0"] {
            assert!(parse_tau_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "tau = 0.5\nnu = 3.0\nkernel = \"poly\"\ndegree = 3\n").unwrap();
        let args = CommonArgs {
            config: Some(p),
            nu: Some(2.0),
            ..Default::default()
        };
        let s = Settings::resolve(&args, None).unwrap();
        let cfg = s.solver();
        assert_eq!((cfg.tau, cfg.nu), (0.5, 2.0));
        assert_eq!(s.kernel(None, default_kernel()).unwrap(), Kernel::Polynomial { degree: 3, offset: 1.0 });
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "taus = 0.5\n").unwrap();
        let args = CommonArgs {
            config: Some(p),
            ..Default::default()
        };
        assert!(Settings::resolve(&args, None).is_err());
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use sramyield::analytics::{
    estimate_delta_params, estimate_write_params, qq_points, relative_error, Tail, FOUR_SIGMA_PF,
};
use sramyield::characterize::{
    characterize_access, characterize_write, default_access_grid, DEFAULT_ACCESS_SAMPLES, DEFAULT_GRID_POINTS,
    DEFAULT_WRITE_SAMPLES,
};
use sramyield::device::{ids_proposed, DeviceLibrary, OperatingPoint};
use sramyield::fit::{default_init, fit_device, saturation_mask, FitOptions, IvDataset};
use sramyield::mc::{
    access_samples, export_samples, run_access_mc, run_write_mc, wilson_ci, write_samples, McResult, SampleRecord,
};
use sramyield::{
    apply_assist, AssistConfig, AssistMode, Cell, CellConfig, Characterization, DeviceParams, Metric,
    OffsetVoltageDist, OracleMode, VariationSpec,
};

use crate::exit::{fail, ExitKind};
use crate::manifest::Run;

#[derive(Args, Debug)]
pub struct Global {
    /// Overrides the seed of the variation spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// One JSON object per log line on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,
}

/// Runs `f` inside a dedicated rayon pool of `threads` workers.
pub fn with_pool<T>(threads: usize, f: impl FnOnce(usize) -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;
    let n = pool.current_num_threads();
    pool.install(|| f(n))
}

#[derive(Args, Debug)]
pub struct Setup {
    /// Cell configuration JSON; the bundled desk cell when omitted.
    #[arg(long)]
    pub cell: Option<PathBuf>,
    /// Variation spec JSON; the bundled spec when omitted.
    #[arg(long)]
    pub variation: Option<PathBuf>,
    #[arg(long, default_value_t = OracleMode::Closed)]
    pub oracle: OracleMode,
}

fn read_input(run: &mut Run, path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| fail(ExitKind::Input, e))?;
    run.record_input(path.display().to_string(), &bytes);
    Ok(bytes)
}

fn utf8(bytes: Vec<u8>, path: &Path) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| fail(ExitKind::Input, anyhow!("{} is not UTF-8", path.display())))
}

struct Loaded {
    cell: CellConfig,
    var: VariationSpec,
}

impl Setup {
    fn load(&self, run: &mut Run, global: &Global) -> Result<Loaded> {
        let cell = match &self.cell {
            Some(p) => {
                let text = utf8(read_input(run, p)?, p)?;
                CellConfig::from_json(&text).with_context(|| format!("loading {}", p.display()))?
            }
            None => {
                let c = CellConfig::bundled_default();
                run.record_input("bundled:default_cell", &serde_json::to_vec(&c)?);
                c
            }
        };
        let var = match &self.variation {
            Some(p) => {
                let text = utf8(read_input(run, p)?, p)?;
                VariationSpec::from_json(&text).with_context(|| format!("loading {}", p.display()))?
            }
            None => {
                let v = VariationSpec::bundled_default();
                run.record_input("bundled:default_variation", &serde_json::to_vec(&v)?);
                v
            }
        };
        let var = global.seed.map_or(var, |s| var.with_seed(s));
        run.set_seed(var.seed);
        Ok(Loaded { cell, var })
    }
}

fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || hi <= lo {
        return vec![lo];
    }
    let step = (hi / lo).ln() / (points - 1) as f64;
    (0..points).map(|k| lo * (step * k as f64).exp()).collect()
}

/// Shortest round-trip scientific notation.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

// ---------------------------------------------------------------- fit

#[derive(Args, Debug)]
pub struct FitArgs {
    /// I-V data with header `vgs,vds,ids,temp_c` (magnitudes for PMOS).
    pub iv: PathBuf,
    /// Starting parameters (device JSON); a guess built from --device otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Bundled device row supplying polarity, nominal vth and swing factor.
    #[arg(long, default_value = "nch_svt")]
    pub device: String,
    /// Also fit the swing factor n.
    #[arg(long)]
    pub fit_n: bool,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Also write model-vs-data curves to fit_iv.csv.
    #[arg(long)]
    pub emit_iv: bool,
}

pub fn fit(global: &Global, threads: usize, args: &FitArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "fit", global.seed, threads)?;
    let bytes = read_input(&mut run, &args.iv)?;
    let data = IvDataset::from_csv_reader(bytes.as_slice(), args.iv.display().to_string())
        .with_context(|| format!("parsing {}", args.iv.display()))?;
    let template = DeviceLibrary::bundled()
        .get(&args.device)
        .map_err(|e| fail(ExitKind::Input, e))?;
    let init = match &args.init {
        Some(p) => {
            let text = utf8(read_input(&mut run, p)?, p)?;
            let params: DeviceParams =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            params.validate().map_err(|e| fail(ExitKind::Input, e))?;
            params
        }
        None => default_init(&data, &template),
    };
    let options = FitOptions {
        fit_n: args.fit_n,
        max_iterations: args.max_iterations,
        ..FitOptions::default()
    };
    let report = fit_device(&data, &init, &options)?;
    run.write_json("fit.json", &report)?;
    if args.emit_iv {
        let saturated = saturation_mask(&data, &report.params)?;
        run.write_csv(
            "fit_iv.csv",
            &["vgs", "vds", "temp_c", "ids_data", "ids_model", "saturated"],
            |w| {
                for p in &data.points {
                    let op = OperatingPoint::new(p.vgs, p.vds, p.temperature)?;
                    let sat = saturated.iter().any(|s| std::ptr::eq(*s, p));
                    w.write_record([
                        p.vgs.to_string(),
                        p.vds.to_string(),
                        p.temperature.to_string(),
                        num(p.ids),
                        num(ids_proposed(&report.params, &op)),
                        sat.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?;
    }
    run.finish()?;
    let p = &report.params;
    println!("device        i0          k1       k2        lambda    max err  avg err");
    println!(
        "{:<12}  {:<10.4e}  {:<7.4}  {:<8.4}  {:<8.4}  {:>6.2}%  {:>6.2}%",
        args.device,
        p.i0,
        p.k1,
        p.k2,
        p.lambda,
        100.0 * report.max_rel_error_sat,
        100.0 * report.avg_rel_error_sat
    );
    println!(
        "iterations {}  converged {}  saturated points {}",
        report.iterations, report.converged, report.points_used
    );
    if !report.converged {
        return Err(fail(
            ExitKind::Fit,
            anyhow!(
                "fit did not converge in {} iterations (report written)",
                report.iterations
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- characterize

#[derive(Args, Debug)]
pub struct CharacterizeArgs {
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub setup: Setup,
    /// Samples per run (200 for access, 1600 for write).
    #[arg(short = 'n', long)]
    pub samples: Option<u64>,
    /// Read deadlines (s); a log grid over the nominal 2-60% swing otherwise.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Write-time reference t0 (s).
    #[arg(long)]
    pub t0: Option<f64>,
    /// Write censoring horizon (s).
    #[arg(long)]
    pub t_max: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_characterization(
    cell: &Cell,
    var: &VariationSpec,
    metric: Metric,
    mode: OracleMode,
    samples: Option<u64>,
    grid: &[f64],
    grid_points: usize,
    t0: Option<f64>,
    t_max: Option<f64>,
) -> Result<Characterization> {
    Ok(match metric {
        Metric::Access => {
            let n = samples.unwrap_or(DEFAULT_ACCESS_SAMPLES);
            let grid = if grid.is_empty() {
                default_access_grid(cell, grid_points)?
            } else {
                grid.to_vec()
            };
            characterize_access(cell, var, n, &grid, mode)?
        }
        Metric::Write => {
            let n = samples.unwrap_or(DEFAULT_WRITE_SAMPLES);
            characterize_write(cell, var, n, mode, t0, t_max)?
        }
    })
}

pub fn characterize(global: &Global, threads: usize, args: &CharacterizeArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "characterize", global.seed, threads)?;
    let Loaded { cell, var } = args.setup.load(&mut run, global)?;
    let cell = Cell::new(cell)?;
    let ch = run_characterization(
        &cell,
        &var,
        args.metric,
        args.setup.oracle,
        args.samples,
        &args.grid,
        args.grid_points,
        args.t0,
        args.t_max,
    )?;
    run.write_json("characterization.json", &ch)?;
    run.finish()?;
    match &ch {
        Characterization::Access { table, .. } => {
            println!("t_read          mu_delta      sigma_delta");
            for r in table.rows() {
                println!("{:<14.6e}  {:<12.6}  {:.6}", r.t_read, r.mu_delta, r.sigma_delta);
            }
        }
        Characterization::Write {
            distribution: d, t_max, ..
        } => {
            println!(
                "mu_w {:.6}  sigma_w {:.6}  t0 {:.6e} s  median {:.6e} s  t_max {:.6e} s",
                d.mu_w,
                d.sigma_w,
                d.t0,
                d.median(),
                t_max
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- yield

#[derive(Args, Debug)]
pub struct YieldArgs {
    /// Characterization JSON from `characterize`.
    pub characterization: PathBuf,
    /// Offset distribution JSON (`mu_vos`, `sigma_vos`) replacing the characterized one.
    #[arg(long)]
    pub offset: Option<PathBuf>,
    /// Constraints (s) at which to evaluate the failure probability.
    #[arg(long, value_delimiter = ',', conflicts_with = "target")]
    pub constraint: Vec<f64>,
    /// Target failure probabilities to invert, e.g. 3.17e-5 for 4 sigma.
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<f64>,
    /// Curve points when neither constraints nor targets are given.
    #[arg(long, default_value_t = 24)]
    pub points: usize,
}

fn load_characterization(run: &mut Run, path: &Path) -> Result<Characterization> {
    let bytes = read_input(run, path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing characterization {}", path.display()))
}

fn default_constraints(ch: &Characterization, points: usize) -> Vec<f64> {
    match ch {
        Characterization::Access { table, .. } => {
            let (lo, hi) = table.range();
            log_spaced(lo, hi, points)
        }
        Characterization::Write {
            distribution, t_max, ..
        } => {
            let lo = distribution.median().min(*t_max);
            let hi = ch.invert(1e-9, None).unwrap_or(*t_max).min(*t_max);
            log_spaced(lo, hi, points)
        }
    }
}

pub fn yield_curve(global: &Global, threads: usize, args: &YieldArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "yield", global.seed, threads)?;
    let ch = load_characterization(&mut run, &args.characterization)?;
    let offset = match &args.offset {
        Some(p) => {
            let text = utf8(read_input(&mut run, p)?, p)?;
            let o: OffsetVoltageDist =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            let o = OffsetVoltageDist::new(o.mu_vos, o.sigma_vos).map_err(|e| fail(ExitKind::Input, e))?;
            if ch.metric() == Metric::Write {
                log::warn!("--offset has no effect on write characterizations");
            }
            Some(o)
        }
        None => None,
    };
    let rows: Vec<(f64, f64)> = if !args.target.is_empty() {
        args.target
            .iter()
            .map(|&pf| {
                let (lo, hi) = ch.constraint_range();
                ch.invert(pf, offset.as_ref())
                    .map(|t| (t, pf))
                    .with_context(|| format!("target pf {pf:e}: achievable constraints span [{lo:e}, {hi:e}] s"))
            })
            .collect::<Result<_>>()?
    } else {
        let constraints = if args.constraint.is_empty() {
            default_constraints(&ch, args.points)
        } else {
            args.constraint.clone()
        };
        constraints
            .iter()
            .map(|&t| Ok((t, ch.failure_probability(t, offset.as_ref())?)))
            .collect::<Result<_>>()?
    };
    run.write_csv("yield.csv", &["constraint", "pf"], |w| {
        for (t, pf) in &rows {
            w.write_record([num(*t), num(*pf)])?;
        }
        Ok(())
    })?;
    run.finish()?;
    println!("constraint_s    pf");
    for (t, pf) in &rows {
        println!("{t:<14.6e}  {pf:.6e}");
    }
    Ok(())
}

// ---------------------------------------------------------------- compare

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub setup: Setup,
    /// Constraints (s); when omitted they come from inverting --target.
    #[arg(long, value_delimiter = ',')]
    pub constraint: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-3, 1e-4])]
    pub target: Vec<f64>,
    /// Monte Carlo samples per constraint.
    #[arg(short = 'n', long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Characterization samples (200 access / 1600 write).
    #[arg(long)]
    pub char_samples: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    constraint: f64,
    pf_analytical: f64,
    pf_mc: f64,
    mc_lo: f64,
    mc_hi: f64,
    rel_error: Option<f64>,
}

pub fn compare(global: &Global, threads: usize, args: &CompareArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "compare", global.seed, threads)?;
    let Loaded { cell, var } = args.setup.load(&mut run, global)?;
    let cell = Cell::new(cell)?;
    let mode = args.setup.oracle;
    let ch = run_characterization(
        &cell,
        &var,
        args.metric,
        mode,
        args.char_samples,
        &[],
        DEFAULT_GRID_POINTS,
        None,
        None,
    )?;
    // validation draws must not reuse the characterization samples
    let mc_var = var.with_seed(var.seed.wrapping_add(1));
    let constraints: Vec<f64> = if args.constraint.is_empty() {
        args.target
            .iter()
            .map(|&pf| {
                ch.invert(pf, None)
                    .with_context(|| format!("inverting target pf {pf:e}"))
            })
            .collect::<Result<_>>()?
    } else {
        args.constraint.clone()
    };
    let mut rows = Vec::with_capacity(constraints.len());
    for &t in &constraints {
        let pf_analytical = ch.failure_probability(t, None)?;
        let r = match args.metric {
            Metric::Access => run_access_mc(&cell, &mc_var, args.samples, t, mode)?,
            Metric::Write => run_write_mc(&cell, &mc_var, args.samples, t, mode, Some(ch.constraint_range().1))?,
        };
        let rel_error = if r.failures == 0 {
            log::warn!("constraint {t:e} s: no Monte Carlo failures, relative error omitted");
            None
        } else {
            Some(relative_error(r.pf, pf_analytical)?)
        };
        rows.push(CompareRow {
            constraint: t,
            pf_analytical,
            pf_mc: r.pf,
            mc_lo: r.ci95.0,
            mc_hi: r.ci95.1,
            rel_error,
        });
    }
    run.write_csv(
        "compare.csv",
        &[
            "constraint",
            "pf_analytical",
            "pf_mc",
            "mc_lo",
            "mc_hi",
            "rel_error",
            "oracle",
            "flag",
        ],
        |w| {
            for r in &rows {
                w.write_record([
                    num(r.constraint),
                    num(r.pf_analytical),
                    num(r.pf_mc),
                    num(r.mc_lo),
                    num(r.mc_hi),
                    fmt_opt(r.rel_error),
                    mode.to_string(),
                    if r.rel_error.is_none() {
                        "zero_failures".into()
                    } else {
                        String::new()
                    },
                ])?;
            }
            Ok(())
        },
    )?;
    run.finish()?;
    println!("constraint_s    analytical    mc            ci95                         rel_err");
    for r in &rows {
        println!(
            "{:<14.6e}  {:<12.4e}  {:<12.4e}  [{:.4e}, {:.4e}]  {}",
            r.constraint,
            r.pf_analytical,
            r.pf_mc,
            r.mc_lo,
            r.mc_hi,
            r.rel_error
                .map(|e| format!("{:.2}%", 100.0 * e))
                .unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Vdd,
    Vwl,
    Temperature,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Axis values (V or degC); the first one is the normalization reference.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub setup: Setup,
    #[arg(long, default_value_t = FOUR_SIGMA_PF)]
    pub target: f64,
    /// Characterization samples per axis value.
    #[arg(short = 'n', long)]
    pub samples: Option<u64>,
}

/// Cell at one sweep point. A `vwl` value below vdd is a read underdrive,
/// above vdd a write boost.
fn sweep_point(base: &CellConfig, axis: Axis, value: f64, metric: Metric) -> Result<CellConfig> {
    let cfg = match axis {
        Axis::Vdd => base.with_supply(value),
        Axis::Temperature => CellConfig {
            temperature: value,
            ..*base
        },
        Axis::Vwl => {
            let delta = value - base.vdd;
            let wrong_way = match metric {
                Metric::Access => delta > 0.0,
                Metric::Write => delta < 0.0,
            };
            if wrong_way {
                let want = if metric == Metric::Access {
                    "at or below"
                } else {
                    "at or above"
                };
                return Err(fail(
                    ExitKind::Range,
                    anyhow!("{metric:?} assist needs vwl {want} vdd = {}, got {value}", base.vdd),
                ));
            }
            let (assist, mode) = match metric {
                Metric::Access => (
                    AssistConfig {
                        wl_underdrive: -delta,
                        ..Default::default()
                    },
                    AssistMode::Read,
                ),
                Metric::Write => (
                    AssistConfig {
                        wl_boost: delta,
                        ..Default::default()
                    },
                    AssistMode::Write,
                ),
            };
            apply_assist(base, &assist, mode).map_err(|e| fail(ExitKind::Range, e))?
        }
    };
    cfg.validate().map_err(|e| fail(ExitKind::Range, e))?;
    Ok(cfg)
}

pub fn sweep(global: &Global, threads: usize, args: &SweepArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "sweep", global.seed, threads)?;
    let Loaded { cell: base, var } = args.setup.load(&mut run, global)?;
    if args.axis == Axis::Temperature {
        log::warn!(
            "temperature sweep re-evaluates the thermal voltage only; fitted constants are kept although real devices drift"
        );
    }
    let mut constraints = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let name = format!("{:?}", args.axis).to_lowercase();
        let point = || -> Result<f64> {
            let cfg = sweep_point(&base, args.axis, value, args.metric)?;
            let cell = Cell::new(cfg)?;
            let ch = run_characterization(
                &cell,
                &var,
                args.metric,
                args.setup.oracle,
                args.samples,
                &[],
                DEFAULT_GRID_POINTS,
                None,
                None,
            )?;
            Ok(ch.invert(args.target, None)?)
        };
        let t = point().with_context(|| format!("sweep point {name} = {value}"))?;
        log::info!("{name} = {value}: constraint {t:e} s");
        constraints.push(t);
    }
    let reference = constraints[0];
    run.write_csv("sweep.csv", &["axis_value", "constraint", "normalized"], |w| {
        for (v, t) in args.values.iter().zip(&constraints) {
            w.write_record([v.to_string(), num(*t), num(t / reference)])?;
        }
        Ok(())
    })?;
    run.finish()?;
    println!("axis_value  constraint_s    normalized");
    for (v, t) in args.values.iter().zip(&constraints) {
        println!("{v:<10}  {t:<14.6e}  {:.4}", t / reference);
    }
    Ok(())
}

// ---------------------------------------------------------------- qq

#[derive(Args, Debug)]
pub struct QqArgs {
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub setup: Setup,
    #[arg(short = 'n', long, default_value_t = 10_000)]
    pub samples: u64,
    /// Read deadline (s); the middle of the default grid otherwise.
    #[arg(long)]
    pub t_read: Option<f64>,
    /// Write-time reference t0 (s).
    #[arg(long)]
    pub t0: Option<f64>,
    /// Fraction of points in the reported tail correlation.
    #[arg(long, default_value_t = 0.01)]
    pub tail_fraction: f64,
    /// Rows written to qq.csv; quantiles are thinned evenly, extremes kept.
    #[arg(long, default_value_t = 2000)]
    pub max_rows: usize,
}

#[derive(Debug, Serialize)]
struct QqSummary {
    metric: Metric,
    oracle: OracleMode,
    samples: u64,
    seed: u64,
    constraint: Option<f64>,
    mu: f64,
    sigma: f64,
    t0: Option<f64>,
    correlation: f64,
    tail: Tail,
    tail_fraction: f64,
    tail_correlation: f64,
}

fn thin<T: Copy>(points: &[T], max_rows: usize) -> Vec<T> {
    if max_rows < 2 || points.len() <= max_rows {
        return points.to_vec();
    }
    let last = points.len() - 1;
    (0..max_rows).map(|k| points[k * last / (max_rows - 1)]).collect()
}

pub fn qq(global: &Global, threads: usize, args: &QqArgs) -> Result<()> {
    if !(args.tail_fraction > 0.0 && args.tail_fraction <= 1.0) {
        return Err(fail(ExitKind::Range, anyhow!("tail fraction must lie in (0, 1]")));
    }
    let mut run = Run::start(&global.out_dir, "qq", global.seed, threads)?;
    let Loaded { cell, var } = args.setup.load(&mut run, global)?;
    let cell = Cell::new(cell)?;
    let mode = args.setup.oracle;
    let (plot, summary) = match args.metric {
        Metric::Access => {
            let t = match args.t_read {
                Some(t) => t,
                None => default_access_grid(&cell, 3)?[1],
            };
            let dv: Vec<f64> = access_samples(&cell, &var, args.samples, t, mode)?
                .iter()
                .map(|r| r.metric)
                .collect();
            let dist = estimate_delta_params(&dv)?;
            let plot = qq_points(&dv, &dist)?;
            let tail = plot.tail_correlation(args.tail_fraction, Tail::Lower)?;
            let summary = QqSummary {
                metric: Metric::Access,
                oracle: mode,
                samples: args.samples,
                seed: var.seed,
                constraint: Some(t),
                mu: dist.mu_delta,
                sigma: dist.sigma_delta,
                t0: None,
                correlation: plot.correlation,
                tail: Tail::Lower,
                tail_fraction: args.tail_fraction,
                tail_correlation: tail,
            };
            (plot, summary)
        }
        Metric::Write => {
            let t_max = cell.default_t_max()?;
            let records = write_samples(&cell, &var, args.samples, t_max, mode, Some(t_max))?;
            let times: Vec<f64> = records.iter().map(|r| r.metric).collect();
            let censored = times.iter().filter(|t| !t.is_finite()).count();
            if censored > 0 {
                return Err(fail(
                    ExitKind::Degenerate,
                    anyhow!("{censored} write samples were censored at t_max = {t_max:e} s"),
                ));
            }
            let t0 = args.t0.unwrap_or_else(|| cell.natural_t0());
            let dist = estimate_write_params(&times, t0)?;
            let plot = qq_points(&times, &dist)?;
            let tail = plot.tail_correlation(args.tail_fraction, Tail::Upper)?;
            let summary = QqSummary {
                metric: Metric::Write,
                oracle: mode,
                samples: args.samples,
                seed: var.seed,
                constraint: None,
                mu: dist.mu_w,
                sigma: dist.sigma_w,
                t0: Some(t0),
                correlation: plot.correlation,
                tail: Tail::Upper,
                tail_fraction: args.tail_fraction,
                tail_correlation: tail,
            };
            (plot, summary)
        }
    };
    run.write_csv("qq.csv", &["theoretical", "empirical"], |w| {
        for (x, y) in thin(&plot.points, args.max_rows) {
            w.write_record([num(x), num(y)])?;
        }
        Ok(())
    })?;
    run.write_json("qq.json", &summary)?;
    run.finish()?;
    println!(
        "correlation {:.6}  {:?} {:.1}% tail correlation {:.6}",
        summary.correlation,
        summary.tail,
        100.0 * summary.tail_fraction,
        summary.tail_correlation
    );
    Ok(())
}

// ---------------------------------------------------------------- mc

#[derive(Args, Debug)]
pub struct McArgs {
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub setup: Setup,
    #[arg(short = 'n', long, default_value_t = 100_000)]
    pub samples: u64,
    /// Read deadline or write constraint (s).
    #[arg(long)]
    pub constraint: f64,
    /// Write censoring horizon (s).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Also write every sample to samples.csv.
    #[arg(long)]
    pub export_samples: bool,
}

fn result_from_records(records: &[SampleRecord], censored: Option<u64>) -> McResult {
    let n = records.len() as u64;
    let failures = records.iter().filter(|r| r.fail).count() as u64;
    McResult {
        n,
        failures,
        pf: failures as f64 / n as f64,
        ci95: wilson_ci(failures, n, 0.95),
        censored,
        samples_path: None,
        wall_time: 0.0,
    }
}

pub fn mc(global: &Global, threads: usize, args: &McArgs) -> Result<()> {
    let mut run = Run::start(&global.out_dir, "mc", global.seed, threads)?;
    let Loaded { cell, var } = args.setup.load(&mut run, global)?;
    let cell = Cell::new(cell)?;
    let mode = args.setup.oracle;
    let started = std::time::Instant::now();
    let result = if args.export_samples {
        let (records, censored) = match args.metric {
            Metric::Access => (access_samples(&cell, &var, args.samples, args.constraint, mode)?, None),
            Metric::Write => {
                let r = write_samples(&cell, &var, args.samples, args.constraint, mode, args.t_max)?;
                let c = r.iter().filter(|s| !s.metric.is_finite()).count() as u64;
                (r, Some(c))
            }
        };
        let mut body = Vec::new();
        export_samples(&records, &mut body)?;
        run.write_csv_body("samples.csv", body)?;
        McResult {
            samples_path: Some("samples.csv".into()),
            ..result_from_records(&records, censored)
        }
    } else {
        match args.metric {
            Metric::Access => run_access_mc(&cell, &var, args.samples, args.constraint, mode)?,
            Metric::Write => run_write_mc(&cell, &var, args.samples, args.constraint, mode, args.t_max)?,
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    run.write_json("mc.json", &result)?;
    run.finish()?;
    log::info!("{} samples in {elapsed:.3} s", result.n);
    println!(
        "n {}  failures {}  pf {:.6e}  ci95 [{:.6e}, {:.6e}]{}",
        result.n,
        result.failures,
        result.pf,
        result.ci95.0,
        result.ci95.1,
        result.censored.map(|c| format!("  censored {c}")).unwrap_or_default()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thinning_keeps_the_extremes() {
        let pts: Vec<usize> = (0..10_001).collect();
        let t = thin(&pts, 100);
        assert_eq!(t.len(), 100);
        assert_eq!((t[0], t[99]), (0, 10_000));
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(thin(&pts[..5], 100).len(), 5);
    }

    #[test]
    fn vwl_axis_rejects_the_wrong_assist_direction() {
        let base = CellConfig::bundled_default();
        assert!(sweep_point(&base, Axis::Vwl, base.vdd - 0.05, Metric::Access).is_ok());
        let err = sweep_point(&base, Axis::Vwl, base.vdd + 0.05, Metric::Access).unwrap_err();
        assert_eq!(crate::exit::classify(&err), ExitKind::Range);
        let err = sweep_point(&base, Axis::Vwl, base.vdd - 0.05, Metric::Write).unwrap_err();
        assert_eq!(crate::exit::classify(&err), ExitKind::Range);
    }

    #[test]
    fn log_spacing() {
        let g = log_spaced(1.0, 100.0, 3);
        assert!((g[1] - 10.0).abs() < 1e-12 && (g[2] - 100.0).abs() < 1e-12);
        assert_eq!(log_spaced(2.0, 3.0, 1), vec![2.0]);
    }
}

//! Seeded Monte Carlo over threshold-voltage variation.
//!
//! Every sample owns a ChaCha8 stream selected by its index, so the draws do
//! not depend on how the index range is split across threads. Failure counts
//! are integers and are summed, which keeps results bit-identical for any
//! thread count.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::OffsetVoltageDist;
use crate::numeric::norm_ppf;
use crate::oracle::{Cell, OracleError, WriteOutcome, SCHEMA_VERSION};

const BUNDLED_VARIATION: &str = include_str!("../data/default_variation.json");

#[derive(Debug, Error)]
pub enum McError {
    #[error("variation spec: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("writing samples to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn one() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    #[serde(default = "one")]
    pub schema: u32,
    pub vth_n_mean: f64,
    pub vth_n_sigma: f64,
    pub vth_p_mean: f64,
    pub vth_p_sigma: f64,
    pub offset: OffsetVoltageDist,
    pub seed: u64,
}

impl VariationSpec {
    pub fn bundled_default() -> Self {
        Self::from_json(BUNDLED_VARIATION).expect("bundled variation spec is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, McError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| McError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.schema != SCHEMA_VERSION {
            return Err(McError::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        let sigmas = [self.vth_n_sigma, self.vth_p_sigma, self.offset.sigma_vos];
        if sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(McError::Config(format!("all sigmas must be positive, got {sigmas:?}")));
        }
        let means = [self.vth_n_mean, self.vth_p_mean, self.offset.mu_vos];
        if means.iter().any(|m| !m.is_finite()) {
            return Err(McError::Config(format!("means must be finite, got {means:?}")));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Which oracle evaluates each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    #[default]
    Closed,
    Ode,
}

impl std::fmt::Display for OracleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Closed => "closed",
            Self::Ode => "ode",
        })
    }
}

impl std::str::FromStr for OracleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "closed" => Ok(Self::Closed),
            "ode" => Ok(Self::Ode),
            other => Err(format!("unknown oracle mode '{other}', expected closed or ode")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub n: u64,
    pub failures: u64,
    pub pf: f64,
    pub ci95: (f64, f64),
    /// Write runs only: samples that never crossed the trip point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censored: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_path: Option<String>,
    /// Not serialized, so result files stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl McResult {
    fn new(n: u64, failures: u64, censored: Option<u64>, started: Instant) -> Self {
        Self {
            n,
            failures,
            pf: failures as f64 / n as f64,
            ci95: wilson_ci(failures, n, 0.95),
            censored,
            samples_path: None,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// Wilson score interval for `failures` out of `n` trials.
pub fn wilson_ci(failures: u64, n: u64, confidence: f64) -> (f64, f64) {
    assert!(n >= 1 && failures <= n, "wilson_ci needs 1 <= n and failures <= n");
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must lie in (0, 1)");
    let z = norm_ppf(0.5 + 0.5 * confidence);
    let nf = n as f64;
    let k = failures as f64;
    let z2 = z * z;
    let denom = nf + z2;
    let center = (k + 0.5 * z2) / denom;
    let half = z / denom * (k * (nf - k) / nf + 0.25 * z2).sqrt();
    let lo = if failures == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if failures == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Variation draws for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub vth_n: f64,
    pub vth_p: f64,
    pub v_os: f64,
}

/// Stateless draw for sample `index`: the seed selects the key and the
/// index selects the stream.
pub fn draw(var: &VariationSpec, index: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(var.seed);
    rng.set_stream(index);
    draw_from(var, &mut rng)
}

#[inline]
fn draw_from(var: &VariationSpec, rng: &mut ChaCha8Rng) -> Draw {
    let zn: f64 = rng.sample(StandardNormal);
    let zp: f64 = rng.sample(StandardNormal);
    let zo: f64 = rng.sample(StandardNormal);
    Draw {
        vth_n: var.vth_n_mean + var.vth_n_sigma * zn,
        vth_p: var.vth_p_mean + var.vth_p_sigma * zp,
        v_os: var.offset.mu_vos + var.offset.sigma_vos * zo,
    }
}

/// Parallel map over sample indices with one generator per index.
fn map_samples<T, F>(var: &VariationSpec, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Draw) -> T + Sync,
{
    let base = ChaCha8Rng::seed_from_u64(var.seed);
    (0..n)
        .into_par_iter()
        .map_init(
            || base.clone(),
            |rng, i| {
                rng.set_stream(i);
                rng.set_word_pos(0);
                f(i, draw_from(var, rng))
            },
        )
        .collect()
}

fn count_failures<F>(var: &VariationSpec, n: u64, f: F) -> Result<(u64, u64), OracleError>
where
    F: Fn(Draw) -> Result<(bool, bool), OracleError> + Sync,
{
    let base = ChaCha8Rng::seed_from_u64(var.seed);
    (0..n)
        .into_par_iter()
        .map_init(
            || base.clone(),
            |rng, i| {
                rng.set_stream(i);
                rng.set_word_pos(0);
                f(draw_from(var, rng)).map(|(fail, censored)| (fail as u64, censored as u64))
            },
        )
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))
}

fn check_n(n: u64) -> Result<(), McError> {
    if n == 0 {
        return Err(McError::Domain("sample count must be >= 1".into()));
    }
    Ok(())
}

fn read_metric(cell: &Cell, vth_n: f64, t_read: f64, mode: OracleMode) -> Result<f64, OracleError> {
    match mode {
        OracleMode::Closed => cell.delta_v_closed(vth_n, t_read),
        OracleMode::Ode => cell.delta_v_ode(vth_n, t_read),
    }
}

fn write_metric(cell: &Cell, d: &Draw, t_max: f64, mode: OracleMode) -> Result<WriteOutcome, OracleError> {
    match mode {
        OracleMode::Closed => cell.write_time_closed(d.vth_n).map(WriteOutcome::Crossed),
        OracleMode::Ode => cell.write_time_ode(d.vth_n, d.vth_p, t_max),
    }
}

#[inline]
fn access_fails(dv: f64, v_os: f64) -> bool {
    v_os > 0.0 && dv < v_os
}

/// Read failure rate at deadline `t_read`; the offset is drawn per sample.
pub fn run_access_mc(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    t_read: f64,
    mode: OracleMode,
) -> Result<McResult, McError> {
    var.validate()?;
    check_n(n)?;
    let started = Instant::now();
    let (failures, _) = count_failures(var, n, |d| {
        let dv = read_metric(cell, d.vth_n, t_read, mode)?;
        Ok((access_fails(dv, d.v_os), false))
    })?;
    Ok(McResult::new(n, failures, None, started))
}

fn check_write_constraint(t_write: f64, t_max: f64) -> Result<(), McError> {
    if !(t_write > 0.0) {
        return Err(McError::Domain(format!("t_write must be positive, got {t_write}")));
    }
    if t_write > t_max {
        return Err(McError::Domain(format!(
            "t_write = {t_write:e} s exceeds the censoring horizon t_max = {t_max:e} s"
        )));
    }
    Ok(())
}

/// Write failure rate at constraint `t_write`. Censored samples fail.
/// `t_max` defaults to [`Cell::default_t_max`].
pub fn run_write_mc(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    t_write: f64,
    mode: OracleMode,
    t_max: Option<f64>,
) -> Result<McResult, McError> {
    var.validate()?;
    check_n(n)?;
    let t_max = match t_max {
        Some(t) => t,
        None => cell.default_t_max()?,
    };
    check_write_constraint(t_write, t_max)?;
    let started = Instant::now();
    let (failures, censored) = count_failures(var, n, |d| {
        Ok(match write_metric(cell, &d, t_max, mode)? {
            WriteOutcome::Crossed(t) => (t > t_write, false),
            WriteOutcome::Censored => (true, true),
        })
    })?;
    Ok(McResult::new(n, failures, Some(censored), started))
}

/// One exported sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub i: u64,
    pub vth_n: f64,
    pub vth_p: f64,
    pub v_os: f64,
    /// dV (V) for reads, write time (s) for writes; infinite when censored.
    pub metric: f64,
    pub fail: bool,
}

/// Per-sample read outcomes, in index order.
pub fn access_samples(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    t_read: f64,
    mode: OracleMode,
) -> Result<Vec<SampleRecord>, McError> {
    var.validate()?;
    check_n(n)?;
    map_samples(var, n, |i, d| {
        read_metric(cell, d.vth_n, t_read, mode).map(|dv| SampleRecord {
            i,
            vth_n: d.vth_n,
            vth_p: d.vth_p,
            v_os: d.v_os,
            metric: dv,
            fail: access_fails(dv, d.v_os),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(McError::from)
}

/// Read margins of `n` samples at each deadline, reusing the same draws.
pub fn access_sample_grid(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    deadlines: &[f64],
    mode: OracleMode,
) -> Result<Vec<Vec<f64>>, McError> {
    var.validate()?;
    check_n(n)?;
    let rows = map_samples(var, n, |_, d| {
        deadlines
            .iter()
            .map(|&t| read_metric(cell, d.vth_n, t, mode))
            .collect::<Result<Vec<f64>, _>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok((0..deadlines.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect())
}

/// Per-sample write outcomes, in index order.
pub fn write_samples(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    t_write: f64,
    mode: OracleMode,
    t_max: Option<f64>,
) -> Result<Vec<SampleRecord>, McError> {
    var.validate()?;
    check_n(n)?;
    let t_max = match t_max {
        Some(t) => t,
        None => cell.default_t_max()?,
    };
    check_write_constraint(t_write, t_max)?;
    map_samples(var, n, |i, d| {
        write_metric(cell, &d, t_max, mode).map(|out| {
            let metric = out.time().unwrap_or(f64::INFINITY);
            SampleRecord {
                i,
                vth_n: d.vth_n,
                vth_p: d.vth_p,
                v_os: d.v_os,
                metric,
                fail: metric > t_write,
            }
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(McError::from)
}

/// Writes samples as CSV with header `i,vth_n,vth_p,v_os,metric,fail`.
pub fn export_samples<W: Write>(records: &[SampleRecord], writer: W) -> Result<(), McError> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(["i", "vth_n", "vth_p", "v_os", "metric", "fail"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_samples_to_path(records: &[SampleRecord], path: &Path) -> Result<(), McError> {
    let io_err = |source| McError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = std::io::BufWriter::new(file);
    export_samples(records, &mut buf)?;
    buf.flush().map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::CellConfig;
    use approx::assert_relative_eq;

    fn cell() -> Cell {
        Cell::new(CellConfig::bundled_default()).unwrap()
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_ci(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, 0.036_994, max_relative = 1e-4);
        assert_eq!(wilson_ci(50, 50, 0.95).1, 1.0);
        for k in [0u64, 3, 17, 50] {
            let (a, b) = wilson_ci(k, 100, 0.95);
            let (c, d) = wilson_ci(100 - k, 100, 0.95);
            assert_relative_eq!(a, 1.0 - d, epsilon = 1e-14);
            assert_relative_eq!(b, 1.0 - c, epsilon = 1e-14);
        }
    }

    #[test]
    fn bundled_variation() {
        let v = VariationSpec::bundled_default();
        assert_eq!(v.seed, 1);
        let bad = VariationSpec { vth_n_sigma: 0.0, ..v };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn draws_are_stateless() {
        let v = VariationSpec::bundled_default();
        let a = draw(&v, 12345);
        assert_eq!(a, draw(&v, 12345));
        assert_ne!(a, draw(&v, 12346));
        assert_ne!(a, draw(&v.with_seed(2), 12345));
        let recs = access_samples(&cell(), &v, 20, 5e-10, OracleMode::Closed).unwrap();
        assert_eq!(recs[13].vth_n, draw(&v, 13).vth_n);
    }

    #[test]
    fn negative_offset_never_fails() {
        let v = VariationSpec {
            offset: OffsetVoltageDist {
                mu_vos: -1.0,
                sigma_vos: 1e-9,
            },
            ..VariationSpec::bundled_default()
        };
        let r = run_access_mc(&cell(), &v, 10_000, 1e-10, OracleMode::Closed).unwrap();
        assert_eq!(r.failures, 0);
        assert_eq!(r.pf, 0.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let v = VariationSpec::bundled_default();
        let c = cell();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let a = run_access_mc(&c, &v, 50_000, 2.5e-10, OracleMode::Closed).unwrap();
                    let w = run_write_mc(
                        &c,
                        &v,
                        2_000,
                        c.nominal_write_time().unwrap() * 1.5,
                        OracleMode::Ode,
                        None,
                    )
                    .unwrap();
                    (serde_json::to_string(&a).unwrap(), serde_json::to_string(&w).unwrap())
                })
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    #[test]
    fn write_horizon_rules() {
        let c = cell();
        let v = VariationSpec::bundled_default();
        let t_max = c.default_t_max().unwrap();
        assert!(run_write_mc(&c, &v, 10, t_max * 1.01, OracleMode::Ode, None).is_err());
        let r = run_write_mc(&c, &v, 500, t_max, OracleMode::Closed, None).unwrap();
        assert_eq!(r.censored, Some(0));
        assert_eq!(r.failures, 0);
        // at the horizon only censored samples can fail
        let r = run_write_mc(&c, &v, 500, t_max, OracleMode::Ode, None).unwrap();
        assert_eq!(Some(r.failures), r.censored);
    }

    #[test]
    fn export_shape_and_determinism() {
        let c = cell();
        let v = VariationSpec::bundled_default();
        let recs = access_samples(&c, &v, 3, 5e-10, OracleMode::Closed).unwrap();
        let mut a = Vec::new();
        export_samples(&recs, &mut a).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,vth_n,vth_p,v_os,metric,fail");
        assert_eq!(lines.len(), 4);
        let mut b = Vec::new();
        export_samples(&access_samples(&c, &v, 3, 5e-10, OracleMode::Closed).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn export_reports_path_on_io_error() {
        let err = export_samples_to_path(&[], Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }

    #[test]
    fn json_omits_wall_time() {
        let r = run_access_mc(
            &cell(),
            &VariationSpec::bundled_default(),
            100,
            2.5e-10,
            OracleMode::Closed,
        )
        .unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_time"));
        assert!(r.ci95.0 <= r.pf && r.pf <= r.ci95.1);
    }
}

//! Extraction of compact-model constants from I-V sweeps.
//!
//! Residuals are taken in log-current space, `ln(I_model) - ln(I_data)`, and
//! minimised with a damped Gauss-Newton (Levenberg-Marquardt) iteration using a
//! forward-difference Jacobian. The current scale is fitted as `ln(i0)`, which
//! makes the fit exactly covariant under a global rescaling of the data.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{ids_proposed_at, thermal_voltage, DeviceError, DeviceParams, OperatingPoint, DEFAULT_VGS_MAX};

/// Minimum number of distinct biases in a sweep.
pub const MIN_SWEEP_POINTS: usize = 20;
const BIAS_MAX: f64 = 1.0;
const SWEEP_KEY_SCALE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("I-V data: {0}")]
    Data(String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("initial parameters give a non-finite residual (check i0 and the bias range)")]
    Initialization,
    #[error("empty saturation mask: no point with vds > max(vgs - vth, 3 vt); widen the vds sweep")]
    EmptyMask,
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// One measured bias point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvPoint {
    pub vgs: f64,
    pub vds: f64,
    pub ids: f64,
    #[serde(rename = "temp_c")]
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IvDataset {
    pub points: Vec<IvPoint>,
    pub description: String,
}

impl IvDataset {
    pub fn new(points: Vec<IvPoint>, description: impl Into<String>) -> Result<Self, FitError> {
        let ds = Self {
            points,
            description: description.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Reads a CSV with header `vgs,vds,ids,temp_c`.
    pub fn from_csv_reader<R: Read>(reader: R, description: impl Into<String>) -> Result<Self, FitError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["vgs", "vds", "ids", "temp_c"];
        if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(FitError::Data(format!(
                "expected header 'vgs,vds,ids,temp_c', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let points = rdr.deserialize::<IvPoint>().collect::<Result<Vec<_>, _>>()?;
        Self::new(points, description)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<(), FitError> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Checks value ranges and that at least one Vgs sweep and one Vds sweep
    /// of [`MIN_SWEEP_POINTS`] distinct values are present.
    pub fn validate(&self) -> Result<(), FitError> {
        if self.points.is_empty() {
            return Err(FitError::Data("dataset is empty".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.ids >= 0.0) || !p.ids.is_finite() {
                return Err(FitError::Data(format!("row {i}: ids must be >= 0, got {}", p.ids)));
            }
            for (name, v) in [("vgs", p.vgs), ("vds", p.vds)] {
                if !(0.0..=BIAS_MAX).contains(&v) {
                    return Err(FitError::Data(format!(
                        "row {i}: {name} = {v} outside [0, {BIAS_MAX}] V"
                    )));
                }
            }
            thermal_voltage(p.temperature)?;
        }
        if self.longest_sweep(|p| p.vds, |p| p.vgs) < MIN_SWEEP_POINTS {
            return Err(FitError::Data(format!(
                "no Vgs sweep with at least {MIN_SWEEP_POINTS} points at fixed vds"
            )));
        }
        if self.longest_sweep(|p| p.vgs, |p| p.vds) < MIN_SWEEP_POINTS {
            return Err(FitError::Data(format!(
                "no Vds sweep with at least {MIN_SWEEP_POINTS} points at fixed vgs"
            )));
        }
        Ok(())
    }

    fn longest_sweep(&self, fixed: impl Fn(&IvPoint) -> f64, swept: impl Fn(&IvPoint) -> f64) -> usize {
        use std::collections::{BTreeMap, BTreeSet};
        let key = |v: f64| (v * SWEEP_KEY_SCALE).round() as i64;
        let mut groups: BTreeMap<(i64, i64), BTreeSet<i64>> = BTreeMap::new();
        for p in &self.points {
            groups
                .entry((key(fixed(p)), key(p.temperature)))
                .or_default()
                .insert(key(swept(p)));
        }
        groups.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Synthetic dataset on the characterization grid: a Vgs sweep at
    /// Vds = 0.7 V and Vds sweeps at Vgs = 0.4, 0.5, 0.6 V, both from 0 to
    /// 0.7 V in 10 mV steps.
    pub fn paper_grid(
        temperature: f64,
        mut current: impl FnMut(f64, f64) -> f64,
        description: impl Into<String>,
    ) -> Result<Self, FitError> {
        let grid: Vec<f64> = (0..=70).map(|k| k as f64 * 0.01).collect();
        let mut points = Vec::with_capacity(grid.len() * 4);
        for &vgs in &grid {
            points.push(IvPoint {
                vgs,
                vds: 0.7,
                ids: current(vgs, 0.7),
                temperature,
            });
        }
        for vgs in [0.4, 0.5, 0.6] {
            for &vds in &grid {
                points.push(IvPoint {
                    vgs,
                    vds,
                    ids: current(vgs, vds),
                    temperature,
                });
            }
        }
        Self::new(points, description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Also fit the swing factor `n`.
    pub fit_n: bool,
    pub max_iterations: usize,
    /// Points with ids below this floor (A) are dropped before taking logs.
    pub ids_floor: f64,
    pub residual_rel_tol: f64,
    pub step_tol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fit_n: false,
            max_iterations: 500,
            ids_floor: 1e-15,
            residual_rel_tol: 1e-9,
            step_tol: 1e-10,
            fd_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: DeviceParams,
    pub max_rel_error_sat: f64,
    pub avg_rel_error_sat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the log-space residual vector.
    pub residual_norm: f64,
    /// Sum of squared residuals after each accepted step (first entry: init).
    pub accepted_residuals: Vec<f64>,
    pub points_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub max_rel: f64,
    pub avg_rel: f64,
    pub points: usize,
    /// Masked points skipped because the measured current is zero.
    pub excluded_zero: usize,
}

/// Points in the saturated region `vds > max(vgs - vth, 3*vt)`.
pub fn saturation_mask<'a>(data: &'a IvDataset, params: &DeviceParams) -> Result<Vec<&'a IvPoint>, FitError> {
    params.validate_range(DEFAULT_VGS_MAX, crate::device::REFERENCE_TEMPERATURE)?;
    let mut out = Vec::new();
    for p in &data.points {
        let vt = thermal_voltage(p.temperature)?;
        if p.vds > (p.vgs - params.vth_nominal).max(3.0 * vt) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(FitError::EmptyMask);
    }
    Ok(out)
}

/// Max and mean of `|I_model - I_data| / I_data` over the saturation mask.
pub fn error_stats(data: &IvDataset, params: &DeviceParams) -> Result<ErrorStats, FitError> {
    let masked = saturation_mask(data, params)?;
    let mut max_rel = 0.0f64;
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for p in masked {
        if p.ids == 0.0 {
            excluded += 1;
            continue;
        }
        let op = OperatingPoint::new(p.vgs, p.vds, p.temperature)?;
        let model = crate::device::ids_proposed(params, &op);
        let rel = (model - p.ids).abs() / p.ids;
        max_rel = max_rel.max(rel);
        sum += rel;
        used += 1;
    }
    if excluded > 0 {
        log::warn!("{excluded} saturated points with zero current were excluded from the error statistics");
    }
    if used == 0 {
        return Err(FitError::EmptyMask);
    }
    Ok(ErrorStats {
        max_rel,
        avg_rel: sum / used as f64,
        points: used,
        excluded_zero: excluded,
    })
}

/// Starting point centred in the cloud of published constants.
pub fn default_init(data: &IvDataset, template: &DeviceParams) -> DeviceParams {
    let vgs_max = data.points.iter().map(|p| p.vgs).fold(f64::MIN, f64::max);
    let vds_max = data.points.iter().map(|p| p.vds).fold(f64::MIN, f64::max);
    let mut top: Vec<f64> = data
        .points
        .iter()
        .filter(|p| p.vgs >= 0.9 * vgs_max && p.vds >= 0.9 * vds_max && p.ids > 0.0)
        .map(|p| p.ids)
        .collect();
    top.sort_by(f64::total_cmp);
    let i0 = top.get(top.len() / 2).copied().unwrap_or(template.i0);
    DeviceParams {
        i0,
        k1: 0.3,
        k2: -0.01,
        lambda: 0.02,
        ..*template
    }
}

struct Problem<'a> {
    points: Vec<(&'a IvPoint, f64, f64)>, // point, vt, ln(ids)
    template: DeviceParams,
    fit_n: bool,
    /// Largest `(vgs - vth)/vt` the fitted polynomial must stay monotone up to.
    overdrive_span: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        if self.fit_n {
            5
        } else {
            4
        }
    }

    fn pack(&self, p: &DeviceParams) -> DVector<f64> {
        let mut v = vec![p.i0.ln(), p.k1, p.k2, p.lambda];
        if self.fit_n {
            v.push(p.n);
        }
        DVector::from_vec(v)
    }

    fn unpack(&self, v: &DVector<f64>) -> DeviceParams {
        DeviceParams {
            i0: v[0].exp(),
            k1: v[1],
            k2: v[2],
            lambda: v[3],
            n: if self.fit_n { v[4] } else { self.template.n },
            ..self.template
        }
    }

    fn project(&self, v: &mut DVector<f64>) {
        v[1] = v[1].clamp(1e-9, 2.0);
        v[2] = v[2].clamp(-0.2, 0.0);
        v[3] = v[3].clamp(-0.1, 0.2);
        if self.fit_n {
            v[4] = v[4].clamp(1.0, 3.0);
        }
        let n = if self.fit_n { v[4] } else { self.template.n };
        let x_max = self.overdrive_span / n;
        if x_max > 0.0 {
            // keep k1 + 2*k2*x > 0 over the whole bias range
            v[2] = v[2].max(-v[1] / (2.0 * x_max) * (1.0 - 1e-9));
        }
    }

    fn residuals(&self, v: &DVector<f64>) -> DVector<f64> {
        let params = self.unpack(v);
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .map(|(p, vt, ln_data)| ids_proposed_at(&params, p.vgs, p.vds, params.vth_nominal, *vt).ln() - ln_data),
        )
    }

    fn jacobian(&self, v: &DVector<f64>, r0: &DVector<f64>, rel_step: f64) -> DMatrix<f64> {
        let m = self.points.len();
        let mut jac = DMatrix::zeros(m, self.dim());
        for k in 0..self.dim() {
            let h = rel_step * v[k].abs().max(1e-2);
            let mut vp = v.clone();
            vp[k] += h;
            let rp = self.residuals(&vp);
            jac.set_column(k, &((rp - r0) / h));
        }
        jac
    }
}

/// Fits `i0, k1, k2, lambda` (and optionally `n`) to `data`, starting from
/// `init`. `vth_nominal` and polarity are taken from `init` and held fixed.
///
/// Hitting the iteration limit is not an error: the report comes back with
/// `converged = false`.
pub fn fit_device(data: &IvDataset, init: &DeviceParams, options: &FitOptions) -> Result<FitReport, FitError> {
    data.validate()?;
    init.validate()?;
    let mut points = Vec::with_capacity(data.points.len());
    for p in &data.points {
        if p.ids >= options.ids_floor && p.ids > 0.0 {
            points.push((p, thermal_voltage(p.temperature)?, p.ids.ln()));
        }
    }
    if points.len() < init_dim(options) {
        return Err(FitError::Data(format!(
            "only {} points above the {:e} A floor",
            points.len(),
            options.ids_floor
        )));
    }
    let reference_span = (DEFAULT_VGS_MAX - init.vth_nominal) / thermal_voltage(crate::device::REFERENCE_TEMPERATURE)?;
    let overdrive_span = points
        .iter()
        .map(|(p, vt, _)| (p.vgs - init.vth_nominal) / vt)
        .fold(reference_span, f64::max);
    let problem = Problem {
        points,
        template: *init,
        fit_n: options.fit_n,
        overdrive_span,
    };

    let mut theta = problem.pack(init);
    problem.project(&mut theta);
    let mut r = problem.residuals(&theta);
    let mut ssr = r.norm_squared();
    if !ssr.is_finite() {
        return Err(FitError::Initialization);
    }
    let mut history = vec![ssr];
    let mut damping = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if ssr == 0.0 {
            converged = true;
            break;
        }
        let jac = problem.jacobian(&theta, &r, options.fd_step);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut lhs = jtj.clone();
        for k in 0..lhs.nrows() {
            lhs[(k, k)] += damping * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
            damping *= 10.0;
            continue;
        };
        let mut candidate = &theta + &step;
        problem.project(&mut candidate);
        let actual_step = (&candidate - &theta).norm();
        let r_new = problem.residuals(&candidate);
        let ssr_new = r_new.norm_squared();
        if ssr_new.is_finite() && ssr_new <= ssr {
            let rel_change = (ssr - ssr_new) / ssr;
            theta = candidate;
            r = r_new;
            ssr = ssr_new;
            history.push(ssr);
            damping = (damping / 10.0).max(1e-15);
            if rel_change < options.residual_rel_tol || actual_step < options.step_tol {
                converged = true;
                break;
            }
        } else {
            damping *= 10.0;
            if actual_step < options.step_tol || damping > 1e16 {
                converged = true;
                break;
            }
        }
    }

    let params = problem.unpack(&theta);
    let stats = error_stats(data, &params)?;
    Ok(FitReport {
        params,
        max_rel_error_sat: stats.max_rel,
        avg_rel_error_sat: stats.avg_rel,
        iterations,
        converged,
        residual_norm: ssr.sqrt(),
        accepted_residuals: history,
        points_used: problem.points.len(),
    })
}

fn init_dim(options: &FitOptions) -> usize {
    if options.fit_n {
        5
    } else {
        4
    }
}

//! Per-sample circuit outcomes for a 6T cell: the read bitline differential
//! and the minimum write time, each by a closed form and by fixed-step RK4.
//!
//! The opposite storage node (QB) is pinned at 0 V in both read and write
//! evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{gate_polynomial_vth, ids_proposed_at, thermal_voltage, DeviceError, DeviceParams, EXP_ARG_LIMIT};
use crate::numeric::{adaptive_simpson, NumericError};

pub const SCHEMA_VERSION: u32 = 1;
/// Maximum wordline boost above the supply.
pub const BOOST_HEADROOM: f64 = 0.2;
/// Allowed band of `v_trip / vddc`.
pub const TRIP_RATIO_BAND: (f64, f64) = (0.40, 0.62);
pub const READ_STEPS: usize = 4096;
pub const WRITE_STEPS: usize = 8192;
/// Default censoring horizon as a multiple of the nominal write time.
pub const T_MAX_FACTOR: f64 = 100.0;
/// Reference time used when the pull-down polynomial has no maximum.
pub const FALLBACK_T0: f64 = 1e-12;
const WRITE_WEIGHT_TOL: f64 = 1e-10;
const DENOMINATOR_GRID: usize = 512;

const BUNDLED_CELL: &str = include_str!("../data/default_cell.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("cell config: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("write-time closed form not applicable: {0}")]
    ModelInapplicable(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

fn one() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    #[serde(default = "one")]
    pub schema: u32,
    pub vdd: f64,
    /// Effective wordline voltage after assists.
    pub vwl: f64,
    /// Cell supply after assists.
    pub vddc: f64,
    /// Bitline capacitance (F).
    pub c_blb: f64,
    /// Storage node capacitance (F).
    pub c_q: f64,
    pub v_trip: f64,
    pub nmos: DeviceParams,
    pub pmos: DeviceParams,
    /// degC
    pub temperature: f64,
}

impl CellConfig {
    /// Desk-scale defaults shipped with the crate.
    pub fn bundled_default() -> Self {
        Self::from_json(BUNDLED_CELL).expect("bundled cell config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| OracleError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema));
        }
        for (name, v) in [
            ("vdd", self.vdd),
            ("vwl", self.vwl),
            ("vddc", self.vddc),
            ("c_blb", self.c_blb),
            ("c_q", self.c_q),
            ("v_trip", self.v_trip),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        if self.vdd <= 0.0 {
            return bad(format!("vdd must be positive, got {}", self.vdd));
        }
        if self.c_blb <= 0.0 || self.c_q <= 0.0 {
            return bad("capacitances must be positive".into());
        }
        if self.vwl < 0.0 {
            return bad(format!("vwl must be >= 0, got {}", self.vwl));
        }
        if self.vwl > self.vdd + BOOST_HEADROOM + 1e-12 {
            return bad(format!(
                "vwl = {} exceeds vdd + {BOOST_HEADROOM} V boost headroom",
                self.vwl
            ));
        }
        if !(self.v_trip > 0.0 && self.v_trip < self.vddc) {
            return bad(format!(
                "need 0 < v_trip < vddc, got v_trip = {}, vddc = {}",
                self.v_trip, self.vddc
            ));
        }
        let ratio = self.v_trip / self.vddc;
        if ratio < TRIP_RATIO_BAND.0 - 1e-12 || ratio > TRIP_RATIO_BAND.1 + 1e-12 {
            return bad(format!(
                "v_trip/vddc = {ratio:.3} outside [{}, {}]",
                TRIP_RATIO_BAND.0, TRIP_RATIO_BAND.1
            ));
        }
        thermal_voltage(self.temperature)?;
        let vgs_max = self.vwl.max(self.vddc).max(self.vdd);
        for (role, dev) in [("nmos", &self.nmos), ("pmos", &self.pmos)] {
            dev.validate_range(vgs_max, self.temperature)
                .map_err(|e| OracleError::Config(format!("{role}: {e}")))?;
        }
        Ok(())
    }

    /// Same cell at another supply: wordline and cell-supply offsets and the
    /// trip ratio are kept.
    pub fn with_supply(&self, vdd: f64) -> Self {
        Self {
            vdd,
            vwl: vdd + (self.vwl - self.vdd),
            vddc: vdd + (self.vddc - self.vdd),
            v_trip: self.v_trip * (vdd + (self.vddc - self.vdd)) / self.vddc,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssistConfig {
    /// Subtracted from vdd to form the read wordline.
    #[serde(default)]
    pub wl_underdrive: f64,
    /// Added to vdd to form the write wordline.
    #[serde(default)]
    pub wl_boost: f64,
    /// Cell supply shift: positive values boost reads, negative values
    /// collapse the cell during writes.
    #[serde(default)]
    pub cell_vdd_delta: f64,
}

impl AssistConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.wl_underdrive >= 0.0) || !(self.wl_boost >= 0.0) || !self.cell_vdd_delta.is_finite() {
            return Err(OracleError::Config(format!(
                "assist: underdrive and boost must be >= 0 and delta finite, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssistMode {
    Read,
    Write,
}

/// Applies assist shifts to `base`. The trip voltage is left unchanged.
pub fn apply_assist(base: &CellConfig, assist: &AssistConfig, mode: AssistMode) -> Result<CellConfig, OracleError> {
    base.validate()?;
    assist.validate()?;
    let mut cfg = *base;
    match mode {
        AssistMode::Read => {
            cfg.vwl = base.vdd - assist.wl_underdrive;
            cfg.vddc = base.vdd + assist.cell_vdd_delta.max(0.0);
        }
        AssistMode::Write => {
            cfg.vwl = base.vdd + assist.wl_boost;
            cfg.vddc = base.vdd + assist.cell_vdd_delta.min(0.0);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of a write transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WriteOutcome {
    Crossed(f64),
    /// No trip-point crossing before the horizon.
    Censored,
}

impl WriteOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            Self::Crossed(t) => Some(*t),
            Self::Censored => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WriteWeight {
    Ready(f64),
    Inapplicable { voltage: f64 },
}

/// A validated cell with the write-integral cache filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    config: CellConfig,
    vt: f64,
    beta0: f64,
    write_weight: WriteWeight,
}

impl Cell {
    pub fn new(config: CellConfig) -> Result<Self, OracleError> {
        config.validate()?;
        let vt = thermal_voltage(config.temperature)?;
        let nmos = &config.nmos;
        let pmos = &config.pmos;
        let beta0 = (gate_polynomial_vth(pmos, config.vddc, pmos.vth_nominal, vt)
            - gate_polynomial_vth(nmos, config.vwl, nmos.vth_nominal, vt))
        .exp();
        let denom = |v: f64| {
            nmos.i0 * (nmos.lambda * v / (nmos.n * vt)).exp()
                - beta0 * pmos.i0 * (pmos.lambda * (config.vddc - v).max(0.0) / (pmos.n * vt)).exp()
        };
        let (lo, hi) = (config.v_trip, config.vdd);
        let mut write_weight = None;
        for k in 0..=DENOMINATOR_GRID {
            let v = lo + (hi - lo) * k as f64 / DENOMINATOR_GRID as f64;
            if !(denom(v) > 0.0) {
                write_weight = Some(WriteWeight::Inapplicable { voltage: v });
                break;
            }
        }
        let write_weight = match write_weight {
            Some(w) => w,
            None => WriteWeight::Ready(adaptive_simpson(|v| 1.0 / denom(v), lo, hi, WRITE_WEIGHT_TOL, 50)?),
        };
        Ok(Self {
            config,
            vt,
            beta0,
            write_weight,
        })
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn thermal_voltage(&self) -> f64 {
        self.vt
    }

    /// Mean pull-up/pull-down strength ratio used by the write closed form.
    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    /// Cached write integral `w` (V/A).
    pub fn write_weight(&self) -> Result<f64, OracleError> {
        match self.write_weight {
            WriteWeight::Ready(w) => Ok(w),
            WriteWeight::Inapplicable { voltage } => Err(OracleError::ModelInapplicable(format!(
                "pull-up overpowers pull-down at V_Q = {voltage:.4} V (beta0 = {:.4e})",
                self.beta0
            ))),
        }
    }

    fn read_polynomial(&self, vth_n: f64) -> f64 {
        gate_polynomial_vth(&self.config.nmos, self.config.vwl, vth_n, self.vt)
    }

    /// Read current of the access path at full bitline voltage (A).
    pub fn read_current(&self, vth_n: f64) -> f64 {
        let c = &self.config;
        ids_proposed_at(&c.nmos, c.vwl, c.vdd, vth_n, self.vt)
    }

    fn check_time(t: f64, name: &str) -> Result<(), OracleError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(OracleError::Domain(format!("{name} must be finite and >= 0, got {t}")));
        }
        Ok(())
    }

    /// Bitline differential after `t_read` from the integrated discharge
    /// equation, dropping the transregional factor. Saturates at `vdd`.
    pub fn delta_v_closed(&self, vth_n: f64, t_read: f64) -> Result<f64, OracleError> {
        Self::check_time(t_read, "t_read")?;
        if t_read == 0.0 {
            return Ok(0.0);
        }
        let c = &self.config;
        let dev = &c.nmos;
        let nvt = dev.n * self.vt;
        let p = self.read_polynomial(vth_n).clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT);
        // charge delivered at the initial (full-vdd) current
        let charge = dev.i0 * (p + dev.lambda * c.vdd / nvt).exp() * t_read / c.c_blb;
        let dv = if dev.lambda == 0.0 {
            charge
        } else {
            let z = dev.lambda * charge / nvt;
            if z <= -1.0 {
                return Ok(c.vdd);
            }
            nvt / dev.lambda * z.ln_1p()
        };
        if !dv.is_finite() || dv >= c.vdd {
            return Ok(c.vdd);
        }
        Ok(dv.max(0.0))
    }

    /// Inverse of [`Cell::delta_v_closed`]: the read time that develops `dv`.
    pub fn read_time_for(&self, vth_n: f64, dv: f64) -> Result<f64, OracleError> {
        let c = &self.config;
        if !(dv >= 0.0 && dv < c.vdd) {
            return Err(OracleError::Domain(format!("dV must lie in [0, vdd), got {dv}")));
        }
        let dev = &c.nmos;
        let nvt = dev.n * self.vt;
        let p = self.read_polynomial(vth_n).clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT);
        let charge = if dev.lambda == 0.0 {
            dv
        } else {
            nvt / dev.lambda * (dev.lambda * dv / nvt).exp_m1()
        };
        Ok(charge * c.c_blb / (dev.i0 * (p + dev.lambda * c.vdd / nvt).exp()))
    }

    /// Same discharge with the second gate-polynomial frozen at its nominal
    /// value: affine in the sampled polynomial. Needs a nonzero DIBL slope.
    pub fn delta_v_linearized(&self, vth_n: f64, t_read: f64) -> Result<f64, OracleError> {
        Self::check_time(t_read, "t_read")?;
        let c = &self.config;
        let dev = &c.nmos;
        if dev.lambda == 0.0 {
            return Err(OracleError::Domain("linearized discharge needs lambda != 0".into()));
        }
        let nvt = dev.n * self.vt;
        let p0 = self.read_polynomial(dev.vth_nominal);
        let alpha = dev.lambda * dev.i0 / (nvt * c.c_blb);
        let arg = alpha * t_read + (-dev.lambda * c.vdd / nvt - p0).exp();
        if !(arg > 0.0) {
            return Err(OracleError::Domain(format!(
                "t_read = {t_read:e} beyond full discharge"
            )));
        }
        let offset = nvt / dev.lambda * arg.ln() + c.vdd;
        Ok(nvt / dev.lambda * self.read_polynomial(vth_n) + offset)
    }

    /// Bitline discharge integrated with RK4 at `READ_STEPS` fixed steps,
    /// keeping the transregional factor.
    pub fn delta_v_ode(&self, vth_n: f64, t_read: f64) -> Result<f64, OracleError> {
        self.delta_v_ode_steps(vth_n, t_read, READ_STEPS)
    }

    pub fn delta_v_ode_steps(&self, vth_n: f64, t_read: f64, steps: usize) -> Result<f64, OracleError> {
        Self::check_time(t_read, "t_read")?;
        if t_read == 0.0 {
            return Ok(0.0);
        }
        let c = &self.config;
        let rate = |dv: f64| ids_proposed_at(&c.nmos, c.vwl, (c.vdd - dv).max(0.0), vth_n, self.vt) / c.c_blb;
        let h = t_read / steps as f64;
        let mut dv = 0.0f64;
        for _ in 0..steps {
            dv = rk4_step(&rate, dv, h);
            if dv >= c.vdd {
                return Ok(c.vdd);
            }
        }
        Ok(dv.max(0.0))
    }

    /// Minimum write time with the pull-up ratio fixed at `beta0` and the
    /// pull-down transregional factor dropped.
    pub fn write_time_closed(&self, vth_n: f64) -> Result<f64, OracleError> {
        let w = self.write_weight()?;
        let p = gate_polynomial_vth(&self.config.nmos, self.config.vwl, vth_n, self.vt);
        Ok(self.config.c_q * (-p).exp() * w)
    }

    /// Write time at nominal thresholds.
    pub fn nominal_write_time(&self) -> Result<f64, OracleError> {
        self.write_time_closed(self.config.nmos.vth_nominal)
    }

    /// Default censoring horizon, `T_MAX_FACTOR` times the nominal write time.
    pub fn default_t_max(&self) -> Result<f64, OracleError> {
        Ok(T_MAX_FACTOR * self.nominal_write_time()?)
    }

    /// Reference time for the write-time distribution. With a concave gate
    /// polynomial, `ln(t/t0)` of the closed form is a perfect square in the
    /// threshold, so `sqrt(ln(t/t0))` is exactly affine in it.
    pub fn natural_t0(&self) -> f64 {
        let dev = &self.config.nmos;
        match self.write_weight {
            WriteWeight::Ready(w) if dev.k2 < 0.0 => self.config.c_q * w * (dev.k1 * dev.k1 / (4.0 * dev.k2)).exp(),
            _ => FALLBACK_T0,
        }
    }

    /// Storage-node discharge integrated with RK4 at `WRITE_STEPS` fixed
    /// steps over `[0, t_max]`, with linear interpolation inside the step
    /// that crosses `v_trip`.
    pub fn write_time_ode(&self, vth_n: f64, vth_p: f64, t_max: f64) -> Result<WriteOutcome, OracleError> {
        self.write_time_ode_steps(vth_n, vth_p, t_max, WRITE_STEPS)
    }

    pub fn write_time_ode_steps(
        &self,
        vth_n: f64,
        vth_p: f64,
        t_max: f64,
        steps: usize,
    ) -> Result<WriteOutcome, OracleError> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(OracleError::Domain(format!("t_max must be positive, got {t_max}")));
        }
        let c = &self.config;
        let vt = self.vt;
        let rate = |vq: f64| {
            let pull_down = ids_proposed_at(&c.nmos, c.vwl, vq.max(0.0), vth_n, vt);
            let pull_up = ids_proposed_at(&c.pmos, c.vddc, (c.vddc - vq).max(0.0), vth_p, vt);
            (pull_up - pull_down) / c.c_q
        };
        if rate(c.vdd) >= 0.0 {
            return Ok(WriteOutcome::Censored);
        }
        let h = t_max / steps as f64;
        let mut vq = c.vdd;
        for k in 0..steps {
            let next = rk4_step(&rate, vq, h);
            if next <= c.v_trip {
                let frac = (vq - c.v_trip) / (vq - next);
                return Ok(WriteOutcome::Crossed((k as f64 + frac) * h));
            }
            vq = next;
        }
        Ok(WriteOutcome::Censored)
    }
}

#[inline]
fn rk4_step(f: &impl Fn(f64) -> f64, y: f64, h: f64) -> f64 {
    let k1 = f(y);
    let k2 = f(y + 0.5 * h * k1);
    let k3 = f(y + 0.5 * h * k2);
    let k4 = f(y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// One-shot helpers for callers that do not keep a [`Cell`].
pub fn delta_v_closed(cell: &CellConfig, vth_n: f64, t_read: f64) -> Result<f64, OracleError> {
    Cell::new(*cell)?.delta_v_closed(vth_n, t_read)
}

pub fn delta_v_ode(cell: &CellConfig, vth_n: f64, t_read: f64) -> Result<f64, OracleError> {
    Cell::new(*cell)?.delta_v_ode(vth_n, t_read)
}

pub fn write_time_closed(cell: &CellConfig, vth_n: f64) -> Result<f64, OracleError> {
    Cell::new(*cell)?.write_time_closed(vth_n)
}

pub fn write_time_ode(cell: &CellConfig, vth_n: f64, vth_p: f64, t_max: f64) -> Result<WriteOutcome, OracleError> {
    Cell::new(*cell)?.write_time_ode(vth_n, vth_p, t_max)
}

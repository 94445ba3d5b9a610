//! Compact drain-current models for near/sub-threshold operation.
//!
//! The proposed model combines the quadratic gate polynomial
//! `p = K1*x + K2*x^2`, `x = (Vgs - Vth)/(n*vt)`, with an exponential DIBL term
//! `exp(lambda*Vds/(n*vt))` and the transregional factor
//! `1 - exp(-K1*Vds/vt)`. Two baselines are provided for comparison: the
//! classic exponential subthreshold model and the transregional model without
//! the DIBL term.
//!
//! PMOS devices are evaluated with source-referenced magnitudes (|Vgs|, |Vds|),
//! so every function here is polarity-agnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// 0 degC in kelvin.
pub const ZERO_CELSIUS: f64 = 273.15;

/// Upper end of the gate-bias range the fitted constants are declared for.
pub const DEFAULT_VGS_MAX: f64 = 0.7;
/// Temperature at which the bundled constants were fitted.
pub const REFERENCE_TEMPERATURE: f64 = 25.0;

pub(crate) const EXP_ARG_LIMIT: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("non-physical temperature {0} degC (must exceed -273.15)")]
    Temperature(f64),
    #[error("invalid device parameter: {0}")]
    InvalidParams(String),
    #[error("invalid operating point: {0}")]
    InvalidBias(String),
    #[error("unknown device '{0}' in library")]
    UnknownDevice(String),
    #[error("device library JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "NMOS", alias = "nmos")]
    Nmos,
    #[serde(rename = "PMOS", alias = "pmos")]
    Pmos,
}

/// Fitted constants of one transistor flavour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Current scale (A).
    pub i0: f64,
    pub k1: f64,
    pub k2: f64,
    /// DIBL coefficient; may be negative.
    pub lambda: f64,
    /// Subthreshold swing factor.
    #[serde(default = "default_swing")]
    pub n: f64,
    /// Nominal threshold voltage magnitude (V).
    pub vth_nominal: f64,
    pub polarity: Polarity,
}

fn default_swing() -> f64 {
    1.5
}

impl DeviceParams {
    /// Builds and validates a parameter set for the default bias range
    /// (0..0.7 V at 25 degC).
    pub fn new(
        i0: f64,
        k1: f64,
        k2: f64,
        lambda: f64,
        n: f64,
        vth_nominal: f64,
        polarity: Polarity,
    ) -> Result<Self, DeviceError> {
        let p = Self {
            i0,
            k1,
            k2,
            lambda,
            n,
            vth_nominal,
            polarity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.validate_range(DEFAULT_VGS_MAX, REFERENCE_TEMPERATURE)
    }

    /// Checks the parameter invariants, including monotonicity of the gate
    /// polynomial (`k1 + 2*k2*x > 0`) up to `vgs_max` at `temperature`.
    pub fn validate_range(&self, vgs_max: f64, temperature: f64) -> Result<(), DeviceError> {
        let bad = |m: String| Err(DeviceError::InvalidParams(m));
        let fields = [
            ("i0", self.i0),
            ("k1", self.k1),
            ("k2", self.k2),
            ("lambda", self.lambda),
            ("n", self.n),
            ("vth_nominal", self.vth_nominal),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{name} is not finite"));
        }
        if self.i0 <= 0.0 {
            return bad(format!("i0 must be positive, got {}", self.i0));
        }
        if self.n < 1.0 {
            return bad(format!("n must be >= 1, got {}", self.n));
        }
        if self.k1 <= 0.0 {
            return bad(format!("k1 must be positive, got {}", self.k1));
        }
        if self.k2.abs() >= self.k1 {
            return bad(format!("|k2| = {} must be below k1 = {}", self.k2.abs(), self.k1));
        }
        let vt = thermal_voltage(temperature)?;
        let x_max = (vgs_max - self.vth_nominal) / (self.n * vt);
        let slope = self.k1 + 2.0 * self.k2 * x_max;
        if x_max > 0.0 && slope <= 0.0 {
            return bad(format!(
                "gate polynomial is not monotone up to Vgs = {vgs_max} V \
                 (k1 + 2*k2*x = {slope:.4} at x = {x_max:.3}); raise vth_nominal or n"
            ));
        }
        Ok(())
    }

    /// Copy of these parameters with a different (e.g. sampled) threshold.
    pub fn with_vth(&self, vth: f64) -> Self {
        Self {
            vth_nominal: vth,
            ..*self
        }
    }
}

/// Bias point with source-referenced magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub vgs: f64,
    pub vds: f64,
    /// degC
    pub temperature: f64,
}

impl OperatingPoint {
    pub fn new(vgs: f64, vds: f64, temperature: f64) -> Result<Self, DeviceError> {
        if !(vgs >= 0.0) || !(vds >= 0.0) {
            return Err(DeviceError::InvalidBias(format!(
                "vgs and vds must be non-negative magnitudes, got vgs = {vgs}, vds = {vds}"
            )));
        }
        thermal_voltage(temperature)?;
        Ok(Self { vgs, vds, temperature })
    }
}

/// Thermal voltage `k_B*T/q` (V) for a temperature in degC.
pub fn thermal_voltage(temperature: f64) -> Result<f64, DeviceError> {
    let kelvin = temperature + ZERO_CELSIUS;
    if !(kelvin > 0.0) || !kelvin.is_finite() {
        return Err(DeviceError::Temperature(temperature));
    }
    Ok(BOLTZMANN * kelvin / ELEMENTARY_CHARGE)
}

fn clamp_exp(arg: f64) -> f64 {
    arg.clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT).exp()
}

/// `K1*x + K2*x^2` with `x = (vgs - vth_nominal)/(n*vt)`.
pub fn gate_polynomial(params: &DeviceParams, vgs: f64, vt: f64) -> f64 {
    gate_polynomial_vth(params, vgs, params.vth_nominal, vt)
}

#[inline]
pub(crate) fn gate_polynomial_vth(params: &DeviceParams, vgs: f64, vth: f64, vt: f64) -> f64 {
    let x = (vgs - vth) / (params.n * vt);
    params.k1 * x + params.k2 * x * x
}

/// Transregional factor `1 - exp(-k*vds/vt)`, exactly zero at `vds = 0`.
#[inline]
fn transregional(k: f64, vds: f64, vt: f64) -> f64 {
    if vds == 0.0 {
        0.0
    } else {
        -(-k * vds / vt).exp_m1()
    }
}

/// Proposed model evaluated at an explicit threshold and thermal voltage.
#[inline]
pub(crate) fn ids_proposed_at(params: &DeviceParams, vgs: f64, vds: f64, vth: f64, vt: f64) -> f64 {
    ids_transregional_at(params, vgs, vds, vth, vt) * (params.lambda * vds / (params.n * vt)).exp()
}

#[inline]
pub(crate) fn ids_transregional_at(params: &DeviceParams, vgs: f64, vds: f64, vth: f64, vt: f64) -> f64 {
    let p = gate_polynomial_vth(params, vgs, vth, vt);
    params.i0 * clamp_exp(p) * transregional(params.k1, vds, vt)
}

/// Proposed DIBL-aware drain current (A).
pub fn ids_proposed(params: &DeviceParams, op: &OperatingPoint) -> f64 {
    let vt = thermal_voltage(op.temperature).expect("OperatingPoint temperature is validated");
    ids_proposed_at(params, op.vgs, op.vds, params.vth_nominal, vt)
}

/// Classic exponential subthreshold current (A).
pub fn ids_classic(params: &DeviceParams, op: &OperatingPoint) -> f64 {
    let vt = thermal_voltage(op.temperature).expect("OperatingPoint temperature is validated");
    let nvt = params.n * vt;
    params.i0
        * clamp_exp((op.vgs - params.vth_nominal) / nvt)
        * (params.lambda * op.vds / nvt).exp()
        * transregional(1.0, op.vds, vt)
}

/// Transregional (quadratic gate polynomial) current without the DIBL term (A).
pub fn ids_transregional(params: &DeviceParams, op: &OperatingPoint) -> f64 {
    let vt = thermal_voltage(op.temperature).expect("OperatingPoint temperature is validated");
    ids_transregional_at(params, op.vgs, op.vds, params.vth_nominal, vt)
}

/// Named parameter sets; the bundled library carries the six fitted
/// 28 nm rows (hvt/svt/lvt, nch/pch) at TTG 25 degC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLibrary {
    pub devices: BTreeMap<String, DeviceParams>,
}

const BUNDLED_DEVICES: &str = include_str!("../data/devices.json");

impl DeviceLibrary {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_DEVICES).expect("bundled device library is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, DeviceError> {
        let lib: Self = serde_json::from_str(text).map_err(|e| DeviceError::Json(e.to_string()))?;
        for (name, p) in &lib.devices {
            p.validate()
                .map_err(|e| DeviceError::InvalidParams(format!("{name}: {e}")))?;
        }
        Ok(lib)
    }

    pub fn get(&self, name: &str) -> Result<DeviceParams, DeviceError> {
        self.devices
            .get(name)
            .copied()
            .ok_or_else(|| DeviceError::UnknownDevice(name.to_string()))
    }
}

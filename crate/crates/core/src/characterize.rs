//! Small-sample characterization: estimate the analytical distributions from
//! a few hundred oracle samples, then answer yield queries from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    estimate_delta_params, estimate_write_params, invert_write, write_fail_prob, AccessRow, AccessTable,
    AnalyticsError, OffsetVoltageDist, WriteTimeDistribution,
};
use crate::mc::{access_sample_grid, write_samples, McError, OracleMode, VariationSpec};
use crate::oracle::{Cell, OracleError, SCHEMA_VERSION};

/// Characterization sample counts used by default.
pub const DEFAULT_ACCESS_SAMPLES: u64 = 200;
pub const DEFAULT_WRITE_SAMPLES: u64 = 1600;
/// Default read grid: nominal dV from 2% to 60% of the supply, log-spaced.
pub const DEFAULT_GRID_POINTS: usize = 16;
const GRID_DV_FRACTIONS: (f64, f64) = (0.02, 0.60);

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Access,
    Write,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "access" | "read" => Ok(Self::Access),
            "write" => Ok(Self::Write),
            other => Err(format!("unknown metric '{other}', expected access or write")),
        }
    }
}

fn one() -> u32 {
    SCHEMA_VERSION
}

/// Characterization artifact consumed by the yield queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum Characterization {
    Access {
        #[serde(default = "one")]
        schema: u32,
        oracle: OracleMode,
        samples_per_point: u64,
        seed: u64,
        offset: OffsetVoltageDist,
        table: AccessTable,
    },
    Write {
        #[serde(default = "one")]
        schema: u32,
        oracle: OracleMode,
        samples: u64,
        seed: u64,
        /// Censoring horizon of the sampling run; constraints above it are rejected.
        t_max: f64,
        distribution: WriteTimeDistribution,
    },
}

impl Characterization {
    pub fn metric(&self) -> Metric {
        match self {
            Self::Access { .. } => Metric::Access,
            Self::Write { .. } => Metric::Write,
        }
    }

    /// Range of constraints the artifact can answer for.
    pub fn constraint_range(&self) -> (f64, f64) {
        match self {
            Self::Access { table, .. } => table.range(),
            Self::Write {
                distribution, t_max, ..
            } => (distribution.t0, *t_max),
        }
    }

    fn check_constraint(&self, constraint: f64) -> Result<(), CharacterizeError> {
        let (lo, hi) = self.constraint_range();
        let tol = 1e-12 * hi;
        if !(constraint >= lo - tol && constraint <= hi + tol) {
            return Err(CharacterizeError::Domain(format!(
                "constraint {constraint:e} s outside the characterized range [{lo:e}, {hi:e}] s"
            )));
        }
        Ok(())
    }

    /// Analytical failure probability at `constraint`. `offset` overrides
    /// the characterized offset distribution for read queries.
    pub fn failure_probability(
        &self,
        constraint: f64,
        offset: Option<&OffsetVoltageDist>,
    ) -> Result<f64, CharacterizeError> {
        self.check_constraint(constraint)?;
        Ok(match self {
            Self::Access { table, offset: own, .. } => table.ber_at(constraint, offset.unwrap_or(own))?,
            Self::Write { distribution, .. } => write_fail_prob(distribution, constraint),
        })
    }

    /// Constraint at which the failure probability equals `target_pf`.
    pub fn invert(&self, target_pf: f64, offset: Option<&OffsetVoltageDist>) -> Result<f64, CharacterizeError> {
        match self {
            Self::Access { table, offset: own, .. } => Ok(table.invert(target_pf, offset.unwrap_or(own))?),
            Self::Write {
                distribution, t_max, ..
            } => {
                let t = invert_write(distribution, target_pf)?;
                if t > *t_max {
                    return Err(AnalyticsError::OutOfRange {
                        target: target_pf,
                        lo: write_fail_prob(distribution, *t_max),
                        hi: 1.0,
                        t_lo: distribution.t0,
                        t_hi: *t_max,
                    }
                    .into());
                }
                Ok(t)
            }
        }
    }
}

/// Log-spaced read deadlines at which the nominal cell develops 2% to 60%
/// of the supply on the bitline.
pub fn default_access_grid(cell: &Cell, points: usize) -> Result<Vec<f64>, CharacterizeError> {
    if points == 0 {
        return Err(CharacterizeError::Domain("grid needs at least one point".into()));
    }
    let vdd = cell.config().vdd;
    let vth = cell.config().nmos.vth_nominal;
    let lo = cell.read_time_for(vth, GRID_DV_FRACTIONS.0 * vdd)?;
    let hi = cell.read_time_for(vth, GRID_DV_FRACTIONS.1 * vdd)?;
    if points == 1 {
        return Ok(vec![(lo * hi).sqrt()]);
    }
    let step = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points).map(|k| lo * (step * k as f64).exp()).collect())
}

/// Estimates read-margin moments at each deadline from `n` shared samples.
pub fn characterize_access(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    grid: &[f64],
    mode: OracleMode,
) -> Result<Characterization, CharacterizeError> {
    if grid.is_empty() {
        return Err(CharacterizeError::Domain("empty constraint grid".into()));
    }
    let columns = access_sample_grid(cell, var, n, grid, mode)?;
    let rows = grid
        .iter()
        .zip(columns)
        .map(|(&t, samples)| {
            let d = estimate_delta_params(&samples)?;
            Ok(AccessRow {
                t_read: t,
                mu_delta: d.mu_delta,
                sigma_delta: d.sigma_delta,
            })
        })
        .collect::<Result<Vec<_>, AnalyticsError>>()?;
    Ok(Characterization::Access {
        schema: SCHEMA_VERSION,
        oracle: mode,
        samples_per_point: n,
        seed: var.seed,
        offset: var.offset,
        table: AccessTable::new(rows)?,
    })
}

/// Estimates the write-time distribution from `n` samples. `t0` defaults to
/// [`Cell::natural_t0`], `t_max` to [`Cell::default_t_max`].
pub fn characterize_write(
    cell: &Cell,
    var: &VariationSpec,
    n: u64,
    mode: OracleMode,
    t0: Option<f64>,
    t_max: Option<f64>,
) -> Result<Characterization, CharacterizeError> {
    let t_max = match t_max {
        Some(t) => t,
        None => cell.default_t_max()?,
    };
    let records = write_samples(cell, var, n, t_max, mode, Some(t_max))?;
    let censored = records.iter().filter(|r| !r.metric.is_finite()).count();
    if censored > 0 {
        return Err(AnalyticsError::Degenerate(format!(
            "{censored} of {n} write samples were censored at t_max = {t_max:e} s"
        ))
        .into());
    }
    let times: Vec<f64> = records.iter().map(|r| r.metric).collect();
    let t0 = t0.unwrap_or_else(|| cell.natural_t0());
    Ok(Characterization::Write {
        schema: SCHEMA_VERSION,
        oracle: mode,
        samples: n,
        seed: var.seed,
        t_max,
        distribution: estimate_write_params(&times, t0)?,
    })
}

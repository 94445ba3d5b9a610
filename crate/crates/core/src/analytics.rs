//! Analytical timing-yield distributions.
//!
//! Read margin: `sqrt(dV) ~ N(mu, sigma)`. Write time: `sqrt(ln(t/t0)) ~ N(mu, sigma)`.
//! Both densities are the single-branch forms, so the mass `Phi(-mu/sigma)`
//! that the Gaussian puts below zero is not represented by the density. The
//! CDFs below place it at the lower end of the support (`dV = 0`, `t = t0`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{integrate_pieces, norm_cdf, norm_pdf, norm_ppf, norm_sf, NumericError, Pchip};

/// Minimum sample count for moment estimation.
pub const MIN_SAMPLES: usize = 30;
/// Minimum sample count for a Q-Q comparison.
pub const MIN_QQ_SAMPLES: usize = 100;
/// Below this mu/sigma the single-branch density loses noticeable mass.
pub const SINGLE_BRANCH_RATIO: f64 = 4.0;
/// Failure probability of a one-sided 4-sigma event.
pub const FOUR_SIGMA_PF: f64 = 3.17e-5;
/// Half-width of the offset integration window in offset sigmas.
pub const OFFSET_WINDOW_SIGMAS: f64 = 8.0;
pub const BER_REL_TOL: f64 = 1e-10;
/// Characterization tables shorter than this still work but interpolate coarsely.
pub const RECOMMENDED_TABLE_ROWS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("{0}")]
    Domain(String),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("target {target:e} outside the achievable range [{lo:e}, {hi:e}] of the characterized grid (constraints {t_lo:e} .. {t_hi:e} s)")]
    OutOfRange {
        target: f64,
        lo: f64,
        hi: f64,
        t_lo: f64,
        t_hi: f64,
    },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaVDistribution {
    /// Mean of sqrt(dV), V^0.5.
    pub mu_delta: f64,
    pub sigma_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WriteTimeDistribution {
    /// Mean of sqrt(ln(t/t0)).
    pub mu_w: f64,
    pub sigma_w: f64,
    /// Reference time (s).
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetVoltageDist {
    pub mu_vos: f64,
    pub sigma_vos: f64,
}

fn check_moments(mu: f64, sigma: f64, what: &str) -> Result<(), AnalyticsError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(AnalyticsError::Degenerate(format!(
            "{what}: sigma must be positive, got {sigma}"
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(AnalyticsError::Domain(format!("{what}: mu must be positive, got {mu}")));
    }
    if mu / sigma < SINGLE_BRANCH_RATIO {
        log::warn!(
            "{what}: mu/sigma = {:.2} < {SINGLE_BRANCH_RATIO}; single-branch density misses {:.2e} of the mass",
            mu / sigma,
            norm_cdf(-mu / sigma)
        );
    }
    Ok(())
}

impl DeltaVDistribution {
    pub fn new(mu_delta: f64, sigma_delta: f64) -> Result<Self, AnalyticsError> {
        check_moments(mu_delta, sigma_delta, "dV distribution")?;
        Ok(Self { mu_delta, sigma_delta })
    }

    /// Mass the Gaussian puts below `sqrt(dV) = 0`; the CDF carries it as an atom at 0.
    pub fn zero_atom(&self) -> f64 {
        norm_cdf(-self.mu_delta / self.sigma_delta)
    }

    pub fn pdf(&self, dv: f64) -> f64 {
        pdf_delta(self, dv)
    }

    pub fn cdf(&self, dv: f64) -> f64 {
        access_fail_prob_fixed(self, dv)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let s = self.mu_delta + self.sigma_delta * norm_ppf(p);
        s.max(0.0).powi(2)
    }
}

impl WriteTimeDistribution {
    pub fn new(mu_w: f64, sigma_w: f64, t0: f64) -> Result<Self, AnalyticsError> {
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(AnalyticsError::Domain(format!("t0 must be positive, got {t0}")));
        }
        check_moments(mu_w, sigma_w, "write-time distribution")?;
        Ok(Self { mu_w, sigma_w, t0 })
    }

    /// Mass carried at `t = t0` by the CDF.
    pub fn floor_atom(&self) -> f64 {
        norm_cdf(-self.mu_w / self.sigma_w)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        pdf_write(self, t)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < self.t0 {
            0.0
        } else {
            norm_cdf(((t / self.t0).ln().sqrt() - self.mu_w) / self.sigma_w)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let s = (self.mu_w + self.sigma_w * norm_ppf(p)).max(0.0);
        self.t0 * (s * s).exp()
    }

    /// Median write time `t0 * exp(mu^2)`.
    pub fn median(&self) -> f64 {
        self.t0 * (self.mu_w * self.mu_w).exp()
    }
}

impl OffsetVoltageDist {
    pub fn new(mu_vos: f64, sigma_vos: f64) -> Result<Self, AnalyticsError> {
        if !(sigma_vos > 0.0) || !sigma_vos.is_finite() || !mu_vos.is_finite() {
            return Err(AnalyticsError::Domain(format!(
                "offset needs finite mu and sigma > 0, got ({mu_vos}, {sigma_vos})"
            )));
        }
        Ok(Self { mu_vos, sigma_vos })
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_spread(mean: f64, sd: f64, what: &str) -> Result<(), AnalyticsError> {
    if !(sd > 4.0 * f64::EPSILON * mean.abs()) {
        return Err(AnalyticsError::Degenerate(format!(
            "{what} samples have zero variance (mean {mean})"
        )));
    }
    Ok(())
}

/// Sample mean and standard deviation of `sqrt(dV)`.
pub fn estimate_delta_params(samples: &[f64]) -> Result<DeltaVDistribution, AnalyticsError> {
    if samples.len() < MIN_SAMPLES {
        return Err(AnalyticsError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some((i, v)) = samples.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(AnalyticsError::Domain(format!("sample {i} is not a positive dV: {v}")));
    }
    let roots: Vec<f64> = samples.iter().map(|v| v.sqrt()).collect();
    let (mu, sd) = mean_std(&roots);
    check_spread(mu, sd, "dV")?;
    DeltaVDistribution::new(mu, sd)
}

/// Sample mean and standard deviation of `sqrt(ln(t/t0))`.
pub fn estimate_write_params(samples: &[f64], t0: f64) -> Result<WriteTimeDistribution, AnalyticsError> {
    if samples.len() < MIN_SAMPLES {
        return Err(AnalyticsError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some((i, t)) = samples.iter().enumerate().find(|(_, t)| !(**t > t0) || !t.is_finite()) {
        return Err(AnalyticsError::Domain(format!(
            "sample {i} = {t:e} s is not above t0 = {t0:e} s; use a smaller t0"
        )));
    }
    let roots: Vec<f64> = samples.iter().map(|t| (t / t0).ln().sqrt()).collect();
    let (mu, sd) = mean_std(&roots);
    check_spread(mu, sd, "write-time")?;
    WriteTimeDistribution::new(mu, sd, t0)
}

/// Single-branch density of dV (1/V); zero outside `dv > 0`.
pub fn pdf_delta(dist: &DeltaVDistribution, dv: f64) -> f64 {
    if !(dv > 0.0) {
        return 0.0;
    }
    let r = dv.sqrt();
    norm_pdf((r - dist.mu_delta) / dist.sigma_delta) / (2.0 * dist.sigma_delta * r)
}

/// Probability that dV falls below a fixed sense-amp offset.
pub fn access_fail_prob_fixed(dist: &DeltaVDistribution, v_os: f64) -> f64 {
    if !(v_os > 0.0) {
        return 0.0;
    }
    norm_cdf((v_os.sqrt() - dist.mu_delta) / dist.sigma_delta)
}

/// Bit error rate: fixed-offset failure averaged over the offset density.
pub fn access_fail_prob_ber(dist: &DeltaVDistribution, offset: &OffsetVoltageDist) -> Result<f64, AnalyticsError> {
    let lo = offset.mu_vos - OFFSET_WINDOW_SIGMAS * offset.sigma_vos;
    let hi = offset.mu_vos + OFFSET_WINDOW_SIGMAS * offset.sigma_vos;
    if hi <= 0.0 {
        return Ok(0.0);
    }
    let lo = lo.max(0.0);
    let integrand =
        |v: f64| norm_pdf((v - offset.mu_vos) / offset.sigma_vos) / offset.sigma_vos * access_fail_prob_fixed(dist, v);
    // the fixed-offset law has a sqrt kink at dV = mu^2
    let median = dist.mu_delta * dist.mu_delta;
    let mut breaks = vec![lo];
    if median > lo && median < hi {
        breaks.push(median);
    }
    breaks.push(hi);
    Ok(integrate_pieces(integrand, &breaks, BER_REL_TOL, 0.0)?.value)
}

/// Single-branch density of the write time (1/s); zero for `t <= t0`.
pub fn pdf_write(dist: &WriteTimeDistribution, t: f64) -> f64 {
    if !(t > dist.t0) {
        return 0.0;
    }
    let ratio = t / dist.t0;
    let r = ratio.ln().sqrt();
    norm_pdf((r - dist.mu_w) / dist.sigma_w) / (2.0 * dist.sigma_w * ratio * r * dist.t0)
}

/// Probability that the write time exceeds `t_write`.
pub fn write_fail_prob(dist: &WriteTimeDistribution, t_write: f64) -> f64 {
    if t_write <= dist.t0 {
        return 1.0;
    }
    norm_sf(((t_write / dist.t0).ln().sqrt() - dist.mu_w) / dist.sigma_w)
}

fn check_target(target_pf: f64) -> Result<(), AnalyticsError> {
    if !(target_pf > 0.0 && target_pf < 1.0) {
        return Err(AnalyticsError::Domain(format!(
            "target pf must lie in (0, 1), got {target_pf}"
        )));
    }
    Ok(())
}

/// Write constraint whose failure probability equals `target_pf`.
pub fn invert_write(dist: &WriteTimeDistribution, target_pf: f64) -> Result<f64, AnalyticsError> {
    check_target(target_pf)?;
    let s = dist.mu_w - dist.sigma_w * norm_ppf(target_pf);
    if s <= 0.0 {
        return Err(AnalyticsError::OutOfRange {
            target: target_pf,
            lo: 0.0,
            hi: norm_sf(-dist.mu_w / dist.sigma_w),
            t_lo: dist.t0,
            t_hi: f64::INFINITY,
        });
    }
    Ok(dist.t0 * (s * s).exp())
}

/// Fixed offset at which the read failure probability equals `target_pf`.
pub fn invert_delta(dist: &DeltaVDistribution, target_pf: f64) -> Result<f64, AnalyticsError> {
    check_target(target_pf)?;
    Ok(dist.quantile(target_pf))
}

/// `|ref - hat| / ref`.
pub fn relative_error(pf_ref: f64, pf_hat: f64) -> Result<f64, AnalyticsError> {
    if !(pf_ref > 0.0) {
        return Err(AnalyticsError::Domain(format!(
            "reference probability must be > 0, got {pf_ref}"
        )));
    }
    Ok((pf_ref - pf_hat).abs() / pf_ref)
}

/// One characterized read deadline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessRow {
    pub t_read: f64,
    pub mu_delta: f64,
    pub sigma_delta: f64,
}

/// Read-margin moments over a grid of deadlines, interpolated monotonically
/// in `ln(t_read)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessTable {
    rows: Vec<AccessRow>,
    mu: Option<Pchip>,
    sigma: Option<Pchip>,
}

impl AccessTable {
    pub fn new(mut rows: Vec<AccessRow>) -> Result<Self, AnalyticsError> {
        if rows.is_empty() {
            return Err(AnalyticsError::Domain("characterization table is empty".into()));
        }
        rows.sort_by(|a, b| a.t_read.total_cmp(&b.t_read));
        for r in &rows {
            if !(r.t_read > 0.0) {
                return Err(AnalyticsError::Domain(format!(
                    "t_read must be positive, got {}",
                    r.t_read
                )));
            }
            DeltaVDistribution::new(r.mu_delta, r.sigma_delta)?;
        }
        if rows.windows(2).any(|w| w[0].t_read == w[1].t_read) {
            return Err(AnalyticsError::Domain(
                "duplicate t_read in characterization table".into(),
            ));
        }
        if rows.len() < RECOMMENDED_TABLE_ROWS {
            log::warn!(
                "characterization table has {} rows; {RECOMMENDED_TABLE_ROWS}+ recommended for interpolation",
                rows.len()
            );
        }
        let (mu, sigma) = if rows.len() >= 2 {
            let x: Vec<f64> = rows.iter().map(|r| r.t_read.ln()).collect();
            (
                Some(Pchip::new(x.clone(), rows.iter().map(|r| r.mu_delta).collect())?),
                Some(Pchip::new(x, rows.iter().map(|r| r.sigma_delta).collect())?),
            )
        } else {
            (None, None)
        };
        Ok(Self { rows, mu, sigma })
    }

    pub fn rows(&self) -> &[AccessRow] {
        &self.rows
    }

    pub fn range(&self) -> (f64, f64) {
        (self.rows[0].t_read, self.rows[self.rows.len() - 1].t_read)
    }

    /// Distribution at `t_read`, which must lie inside the characterized grid.
    pub fn dist_at(&self, t_read: f64) -> Result<DeltaVDistribution, AnalyticsError> {
        let (lo, hi) = self.range();
        let tol = 1e-12 * hi;
        if !(t_read >= lo - tol && t_read <= hi + tol) {
            return Err(AnalyticsError::Domain(format!(
                "t_read = {t_read:e} s outside the characterized range [{lo:e}, {hi:e}] s"
            )));
        }
        match (&self.mu, &self.sigma) {
            (Some(mu), Some(sigma)) => {
                let x = t_read.ln();
                DeltaVDistribution::new(mu.eval(x), sigma.eval(x))
            }
            _ => DeltaVDistribution::new(self.rows[0].mu_delta, self.rows[0].sigma_delta),
        }
    }

    pub fn ber_at(&self, t_read: f64, offset: &OffsetVoltageDist) -> Result<f64, AnalyticsError> {
        access_fail_prob_ber(&self.dist_at(t_read)?, offset)
    }

    /// Read deadline whose bit error rate equals `target_pf`.
    pub fn invert(&self, target_pf: f64, offset: &OffsetVoltageDist) -> Result<f64, AnalyticsError> {
        check_target(target_pf)?;
        let (t_lo, t_hi) = self.range();
        let pf_slow = self.ber_at(t_lo, offset)?;
        let pf_fast = self.ber_at(t_hi, offset)?;
        let out_of_range = || AnalyticsError::OutOfRange {
            target: target_pf,
            lo: pf_fast,
            hi: pf_slow,
            t_lo,
            t_hi,
        };
        if self.rows.len() < 2 || target_pf > pf_slow || target_pf < pf_fast || pf_fast <= 0.0 {
            if self.rows.len() == 1 && target_pf == pf_slow {
                return Ok(t_lo);
            }
            return Err(out_of_range());
        }
        let target_ln = target_pf.ln();
        let f = |x: f64| match self.ber_at(x.exp(), offset) {
            Ok(pf) if pf > 0.0 => pf.ln() - target_ln,
            _ => f64::NAN,
        };
        let x = crate::numeric::brent(f, t_lo.ln(), t_hi.ln(), 1e-14)?;
        Ok(x.exp())
    }
}

impl Serialize for AccessTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AccessTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<AccessRow>::deserialize(d)?;
        AccessTable::new(rows).map_err(serde::de::Error::custom)
    }
}

/// Distributions that can produce model quantiles.
pub trait Quantile {
    fn quantile(&self, p: f64) -> f64;
}

impl Quantile for DeltaVDistribution {
    fn quantile(&self, p: f64) -> f64 {
        DeltaVDistribution::quantile(self, p)
    }
}

impl Quantile for WriteTimeDistribution {
    fn quantile(&self, p: f64) -> f64 {
        WriteTimeDistribution::quantile(self, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqPlot {
    /// (theoretical, empirical) pairs in increasing order.
    pub points: Vec<(f64, f64)>,
    pub correlation: f64,
}

impl QqPlot {
    /// Correlation over the lowest or highest `fraction` of the points.
    pub fn tail_correlation(&self, fraction: f64, tail: Tail) -> Result<f64, AnalyticsError> {
        let k = ((self.points.len() as f64 * fraction).round() as usize).max(3);
        let k = k.min(self.points.len());
        let slice = match tail {
            Tail::Lower => &self.points[..k],
            Tail::Upper => &self.points[self.points.len() - k..],
        };
        pearson(slice)
    }
}

pub fn pearson(points: &[(f64, f64)]) -> Result<f64, AnalyticsError> {
    let constant = |f: fn(&(f64, f64)) -> f64| points.iter().all(|p| f(p) == f(&points[0]));
    if points.len() < 2 || constant(|p| p.0) || constant(|p| p.1) {
        return Err(AnalyticsError::Degenerate(
            "correlation undefined for constant data".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(AnalyticsError::Degenerate(
            "correlation undefined for constant data".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Empirical order statistics against model quantiles at `(i - 0.5)/n`.
pub fn qq_points(samples: &[f64], dist: &impl Quantile) -> Result<QqPlot, AnalyticsError> {
    if samples.len() < MIN_QQ_SAMPLES {
        return Err(AnalyticsError::TooFewSamples {
            needed: MIN_QQ_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AnalyticsError::Domain("non-finite sample in Q-Q input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let points: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &y)| (dist.quantile((i as f64 + 0.5) / n), y))
        .collect();
    let correlation = pearson(&points)?;
    Ok(QqPlot { points, correlation })
}

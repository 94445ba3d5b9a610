//! Mapping from failures to the stable process exit codes.

use std::fmt;

use sramyield::{AnalyticsError, CharacterizeError, DeviceError, FitError, McError, NumericError, OracleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Unreadable or malformed input.
    Input = 2,
    /// Fit did not converge or could not start.
    Fit = 3,
    /// Degenerate statistics (zero variance, too few or censored samples).
    Degenerate = 4,
    /// Argument outside the supported or characterized range.
    Range = 5,
    /// Anything else, e.g. an output write failure.
    Other = 1,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// An error tagged with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Failure {}

pub fn fail(kind: ExitKind, error: impl Into<anyhow::Error>) -> anyhow::Error {
    Failure {
        kind,
        error: error.into(),
    }
    .into()
}

fn numeric(_: &NumericError) -> ExitKind {
    ExitKind::Other
}

fn device(_: &DeviceError) -> ExitKind {
    ExitKind::Input
}

fn oracle(e: &OracleError) -> ExitKind {
    match e {
        OracleError::Config(_) => ExitKind::Input,
        OracleError::Domain(_) | OracleError::ModelInapplicable(_) => ExitKind::Range,
        OracleError::Device(d) => device(d),
        OracleError::Numeric(n) => numeric(n),
    }
}

fn analytics(e: &AnalyticsError) -> ExitKind {
    match e {
        AnalyticsError::Degenerate(_) | AnalyticsError::TooFewSamples { .. } => ExitKind::Degenerate,
        AnalyticsError::Domain(_) | AnalyticsError::OutOfRange { .. } => ExitKind::Range,
        AnalyticsError::Numeric(n) => numeric(n),
    }
}

fn mc(e: &McError) -> ExitKind {
    match e {
        McError::Config(_) => ExitKind::Input,
        McError::Domain(_) => ExitKind::Range,
        McError::Oracle(o) => oracle(o),
        McError::Io { .. } | McError::Csv(_) => ExitKind::Other,
    }
}

fn characterize(e: &CharacterizeError) -> ExitKind {
    match e {
        CharacterizeError::Analytics(a) => analytics(a),
        CharacterizeError::Mc(m) => mc(m),
        CharacterizeError::Oracle(o) => oracle(o),
        CharacterizeError::Domain(_) => ExitKind::Range,
    }
}

fn fit(e: &FitError) -> ExitKind {
    match e {
        FitError::Data(_) | FitError::Csv(_) | FitError::Device(_) => ExitKind::Input,
        FitError::Initialization | FitError::EmptyMask => ExitKind::Fit,
    }
}

/// Exit code for an error chain; the first recognized cause wins.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<sramyield::Error>() {
            return match e {
                sramyield::Error::Device(d) => device(d),
                sramyield::Error::Fit(f) => fit(f),
                sramyield::Error::Oracle(o) => oracle(o),
                sramyield::Error::Analytics(a) => analytics(a),
                sramyield::Error::Mc(m) => mc(m),
                sramyield::Error::Characterize(c) => characterize(c),
                sramyield::Error::Numeric(n) => numeric(n),
            };
        }
        if let Some(e) = cause.downcast_ref::<CharacterizeError>() {
            return characterize(e);
        }
        if let Some(e) = cause.downcast_ref::<AnalyticsError>() {
            return analytics(e);
        }
        if let Some(e) = cause.downcast_ref::<McError>() {
            return mc(e);
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return oracle(e);
        }
        if let Some(e) = cause.downcast_ref::<FitError>() {
            return fit(e);
        }
        if let Some(e) = cause.downcast_ref::<DeviceError>() {
            return device(e);
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return ExitKind::Input;
        }
    }
    ExitKind::Other
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_causes_are_classified() {
        let e: anyhow::Error = CharacterizeError::Analytics(AnalyticsError::Degenerate("x".into())).into();
        assert_eq!(classify(&e), ExitKind::Degenerate);
        let e = anyhow::Error::from(McError::Config("bad".into())).context("loading variation");
        assert_eq!(classify(&e), ExitKind::Input);
        assert_eq!(classify(&fail(ExitKind::Fit, anyhow::anyhow!("no"))), ExitKind::Fit);
        assert_eq!(classify(&anyhow::anyhow!("plain")), ExitKind::Other);
    }

    #[test]
    fn out_of_range_is_a_range_error() {
        let e: anyhow::Error = AnalyticsError::OutOfRange {
            target: 1e-9,
            lo: 1e-6,
            hi: 0.5,
            t_lo: 1e-10,
            t_hi: 1e-9,
        }
        .into();
        assert_eq!(classify(&e), ExitKind::Range);
    }
}

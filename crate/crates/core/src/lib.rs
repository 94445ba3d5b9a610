//! DIBL-aware compact drain-current model and analytical SRAM timing-yield
//! models for sub/near-threshold supply voltages.
//!
//! The pipeline: fit device constants ([`fit`]), evaluate per-sample read and
//! write outcomes ([`oracle`]), estimate the analytical distributions from a
//! small sample set ([`characterize`], [`analytics`]) and check them against
//! brute-force Monte Carlo ([`mc`]).

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod characterize;
pub mod device;
pub mod fit;
pub mod mc;
pub mod numeric;
pub mod oracle;

pub use analytics::{AnalyticsError, DeltaVDistribution, OffsetVoltageDist, WriteTimeDistribution};
pub use characterize::{Characterization, CharacterizeError, Metric};
pub use device::{DeviceError, DeviceLibrary, DeviceParams, OperatingPoint, Polarity};
pub use fit::{FitError, FitOptions, FitReport, IvDataset, IvPoint};
pub use mc::{McError, McResult, OracleMode, VariationSpec};
pub use numeric::NumericError;
pub use oracle::{apply_assist, AssistConfig, AssistMode, Cell, CellConfig, OracleError, WriteOutcome};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Characterize(#[from] CharacterizeError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

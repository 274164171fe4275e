//! Galton–Watson model of bacterial growth under antibiotic exposure, observed
//! through qPCR cycle-threshold (Ct) values.
//!
//! The offspring mean depends on the concentration `c` as
//! `m(c) = 2 / (1 + alpha * c^beta)`; the minimal inhibitory concentration is
//! `alpha^(-1/beta)`. The crate covers
//!
//! * [`branching`]: the alive/dead two-type process, its means and bounds,
//! * [`measurement`]: Ct synthesis and the CSV dataset format,
//! * [`estimators`]: `m`-hat per lane, the log-log least-squares fit of
//!   `(alpha, beta)`, the MIC estimate and its asymptotic covariance,
//! * [`harness`]: Monte Carlo studies, design tables and the dataset pipeline.

pub mod branching;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod measurement;
pub mod rng;
mod stats;

pub use branching::{GrowthParams, OffspringDistribution, PopulationState};
pub use error::{Error, ParseErrorKind, Result};
pub use estimators::{AsymptoticCovariance, FitResult, MeanEstimate, RegressionFilter};
pub use measurement::{CtDataset, CtObservation, MeasurementConfig};

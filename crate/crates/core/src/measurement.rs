//! qPCR observation model and the Ct dataset format.
//!
//! At 100% amplification efficiency a sample holding `Z` genomes crosses the
//! threshold at `a - log2(Z)` cycles; observations add i.i.d. Gaussian noise
//! with standard deviation `sigma_eps`.
//!
//! Datasets are exchanged as UTF-8 CSV with the header
//! `concentration,replicate,ct`, one row per observation. Lines starting with
//! `#` are comments.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::branching::{simulate_final, GrowthParams, OffspringDistribution};
use crate::error::{Error, ParseErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// qPCR calibration constant, in cycles.
    pub a: f64,
    pub sigma_eps: f64,
    pub x0: u64,
    pub n_generations: u32,
    /// Replicates per concentration.
    pub replicates: u32,
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() {
            return Err(Error::param("a must be finite"));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::param(format!(
                "sigma_eps must be >= 0, got {}",
                self.sigma_eps
            )));
        }
        if self.x0 == 0 {
            return Err(Error::param("x0 must be at least 1"));
        }
        if self.n_generations == 0 {
            return Err(Error::param("number of generations must be at least 1"));
        }
        if self.replicates == 0 {
            return Err(Error::param("replicates must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtObservation {
    pub concentration: f64,
    /// 1-based replicate index within its concentration.
    pub replicate: u32,
    pub ct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CtDataset {
    observations: Vec<CtObservation>,
    /// Known for synthetic data only.
    config: Option<MeasurementConfig>,
}

impl CtDataset {
    pub fn new(observations: Vec<CtObservation>) -> Result<Self> {
        let mut seen = HashSet::new();
        for obs in &observations {
            check_observation(obs).map_err(Error::input)?;
            if !seen.insert((obs.concentration.to_bits(), obs.replicate)) {
                return Err(Error::input(format!(
                    "duplicate observation for concentration {}, replicate {}",
                    obs.concentration, obs.replicate
                )));
            }
        }
        Ok(Self {
            observations,
            config: None,
        })
    }

    pub fn with_config(mut self, config: MeasurementConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn observations(&self) -> &[CtObservation] {
        &self.observations
    }

    pub fn config(&self) -> Option<&MeasurementConfig> {
        self.config.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct concentrations, ascending.
    pub fn concentrations(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = self.observations.iter().map(|o| o.concentration).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Ct values at exactly `concentration`, in input order.
    pub fn cts_at(&self, concentration: f64) -> Vec<f64> {
        self.observations
            .iter()
            .filter(|o| o.concentration == concentration)
            .map(|o| o.ct)
            .collect()
    }

    /// `(concentration, cts)` lanes in ascending concentration order.
    pub fn lanes(&self) -> Vec<(f64, Vec<f64>)> {
        self.concentrations()
            .into_iter()
            .map(|c| (c, self.cts_at(c)))
            .collect()
    }
}

fn check_observation(obs: &CtObservation) -> std::result::Result<(), String> {
    if !(obs.concentration >= 0.0 && obs.concentration.is_finite()) {
        return Err(format!("concentration must be finite and >= 0, got {}", obs.concentration));
    }
    if obs.replicate == 0 {
        return Err("replicate index must be positive".into());
    }
    if !obs.ct.is_finite() {
        return Err(format!("ct must be finite, got {}", obs.ct));
    }
    Ok(())
}

/// One Ct value `a - log2(z) + eps`, `eps ~ N(0, sigma_eps^2)`.
///
/// Always consumes one normal draw, so streams stay aligned when
/// `sigma_eps = 0`.
pub fn synthesize_ct<R: Rng + ?Sized>(z: u64, config: &MeasurementConfig, rng: &mut R) -> Result<f64> {
    if z == 0 {
        return Err(Error::input("cannot synthesize a Ct value for an empty sample"));
    }
    let noise: f64 = rng.sample(StandardNormal);
    Ok(config.a - (z as f64).log2() + config.sigma_eps * noise)
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("concentration grid is empty"));
    }
    if grid.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::param("concentrations must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("concentration grid must be strictly increasing"));
    }
    Ok(())
}

/// Simulates a full plate: `replicates` independent populations per
/// concentration, each grown for `n_generations` from `x0` cells under the
/// death-or-divide law with mean `m(c)`, and read out as one Ct value.
///
/// Observations come out grouped by concentration in grid order, replicates
/// numbered from 1.
pub fn simulate_experiment<R: Rng + ?Sized>(
    params: &GrowthParams,
    concentrations: &[f64],
    config: &MeasurementConfig,
    rng: &mut R,
) -> Result<CtDataset> {
    check_grid(concentrations)?;
    config.validate()?;
    let mut observations = Vec::with_capacity(concentrations.len() * config.replicates as usize);
    for &c in concentrations {
        let dist = OffspringDistribution::from_mean(params.mean_at(c)?)?;
        for replicate in 1..=config.replicates {
            let z = simulate_final(config.x0, &dist, config.n_generations, rng)?.total();
            observations.push(CtObservation {
                concentration: c,
                replicate,
                ct: synthesize_ct(z, config, rng)?,
            });
        }
    }
    Ok(CtDataset {
        observations,
        config: Some(*config),
    })
}

const HEADER: [&str; 3] = ["concentration", "replicate", "ct"];

fn parse_err(line: u64, kind: ParseErrorKind) -> Error {
    Error::Parse { line, kind }
}

/// Reads the CSV dataset format. Rows keep their input order.
pub fn read_dataset<R: Read>(source: R) -> Result<CtDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut records = reader.records();
    let header = match records.next() {
        None => return Ok(CtDataset::default()),
        Some(record) => record.map_err(csv_error)?,
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let names: Vec<&str> = header.iter().collect();
    if names != HEADER {
        return Err(parse_err(header_line, ParseErrorKind::BadHeader(names.join(","))));
    }

    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| {
            record
                .get(idx)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| parse_err(line, ParseErrorKind::MissingColumn(HEADER[idx])))
        };
        let malformed = |idx: usize, value: &str| {
            parse_err(
                line,
                ParseErrorKind::MalformedNumber {
                    column: HEADER[idx],
                    value: value.to_string(),
                },
            )
        };

        let raw = field(0)?;
        let concentration: f64 = raw.parse().map_err(|_| malformed(0, raw))?;
        let raw = field(1)?;
        let replicate: u32 = raw.parse().map_err(|_| malformed(1, raw))?;
        let raw = field(2)?;
        let ct: f64 = raw.parse().map_err(|_| malformed(2, raw))?;
        if record.len() > HEADER.len() {
            return Err(parse_err(
                line,
                ParseErrorKind::Csv(format!("expected 3 fields, found {}", record.len())),
            ));
        }

        let obs = CtObservation {
            concentration,
            replicate,
            ct,
        };
        if let Err(reason) = check_observation(&obs) {
            let column = if !(concentration >= 0.0 && concentration.is_finite()) {
                "concentration"
            } else if replicate == 0 {
                "replicate"
            } else {
                "ct"
            };
            return Err(parse_err(line, ParseErrorKind::OutOfRange { column, reason }));
        }
        if !seen.insert((concentration.to_bits(), replicate)) {
            return Err(parse_err(
                line,
                ParseErrorKind::DuplicateKey {
                    concentration,
                    replicate,
                },
            ));
        }
        observations.push(obs);
    }
    Ok(CtDataset {
        observations,
        config: None,
    })
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(line, ParseErrorKind::Csv(format!("{other:?}"))),
    }
}

/// Writes the CSV dataset format. Floats use the shortest decimal string that
/// parses back to the same value, never exponent notation.
pub fn write_dataset<W: Write>(dataset: &CtDataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(HEADER).map_err(csv_error)?;
    for obs in &dataset.observations {
        writer
            .write_record([
                format_decimal(obs.concentration),
                obs.replicate.to_string(),
                format_decimal(obs.ct),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub(crate) fn format_decimal(x: f64) -> String {
    // `Display` for f64 is shortest round-trip and positional.
    format!("{x}")
}

//! Studies built on top of the estimators: Monte Carlo validation of the
//! `(alpha, beta, mic)` estimators, design comparison by asymptotic variance,
//! and the end-to-end fit of a Ct dataset.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{mean_total_p1_zero, GrowthParams};
use crate::error::{Error, Result};
use crate::estimators::{
    asymptotic_covariance, estimate_a, estimate_m, estimate_n, estimate_sigma_eps, fit_alpha_beta,
    round_generations, same_concentration, AsymptoticCovariance, FitResult, MeanEstimate,
    RegressionFilter,
};
use crate::measurement::{check_grid, format_decimal, simulate_experiment, CtDataset, MeasurementConfig};
use crate::rng::stream;
use crate::stats;

pub const DEFAULT_CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStudyConfig {
    /// True parameters the experiments are simulated from.
    pub params: GrowthParams,
    pub grid: Vec<f64>,
    pub measurement: MeasurementConfig,
    /// Number of simulated experiments.
    pub n_measurements: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStudyReport {
    pub seed: u64,
    pub replicates: u32,
    pub n_measurements: usize,
    pub successes: usize,
    /// Experiments whose fit failed; excluded from every moment below.
    pub failures: usize,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    pub mean_theta: f64,
    /// Empirical (co)variances of `sqrt(N) * (estimate - truth)`.
    pub emp_var_alpha: f64,
    pub emp_cov_alphabeta: f64,
    pub emp_var_beta: f64,
    pub emp_var_theta: f64,
    pub theoretical: AsymptoticCovariance,
}

/// Repeats the simulated experiment `n_measurements` times and summarises the
/// fitted parameters. Experiment `r` draws from stream `r` of `seed`, so the
/// report does not depend on thread count or scheduling.
///
/// Every grid concentration must give an interior `m`-hat; experiments where
/// one does not, or where the fit degenerates, count as failures.
pub fn run_mc_study(config: &McStudyConfig) -> Result<McStudyReport> {
    if config.n_measurements < 2 {
        return Err(Error::param("a Monte Carlo study needs at least 2 measurements"));
    }
    check_grid(&config.grid)?;
    config.measurement.validate()?;
    let m = &config.measurement;
    let theoretical = asymptotic_covariance(&config.grid, &config.params, m.n_generations, m.sigma_eps)?;

    let fits: Vec<Option<[f64; 3]>> = (0..config.n_measurements as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, r);
            one_measurement(config, &mut rng).ok()
        })
        .collect();

    let ok: Vec<[f64; 3]> = fits.iter().flatten().copied().collect();
    let scale = (m.replicates as f64).sqrt();
    let truth = [config.params.alpha(), config.params.beta(), config.params.mic()];
    let column = |j: usize| ok.iter().map(|f| f[j]).collect::<Vec<_>>();
    let scaled = |j: usize| ok.iter().map(|f| scale * (f[j] - truth[j])).collect::<Vec<_>>();
    let (alphas, betas, thetas) = (column(0), column(1), column(2));
    let (ea, eb, et) = (scaled(0), scaled(1), scaled(2));
    let mean_or_nan = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { stats::mean(xs) };

    Ok(McStudyReport {
        seed: config.seed,
        replicates: m.replicates,
        n_measurements: config.n_measurements,
        successes: ok.len(),
        failures: fits.len() - ok.len(),
        mean_alpha: mean_or_nan(&alphas),
        mean_beta: mean_or_nan(&betas),
        mean_theta: mean_or_nan(&thetas),
        emp_var_alpha: stats::variance(&ea),
        emp_cov_alphabeta: stats::covariance(&ea, &eb),
        emp_var_beta: stats::variance(&eb),
        emp_var_theta: stats::variance(&et),
        theoretical,
    })
}

fn one_measurement(config: &McStudyConfig, rng: &mut crate::rng::SimRng) -> Result<[f64; 3]> {
    let m = &config.measurement;
    let data = simulate_experiment(&config.params, &config.grid, m, rng)?;
    let estimates = data
        .lanes()
        .iter()
        .map(|(c, cts)| estimate_m(*c, cts, m.a, m.x0, m.n_generations))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_alpha_beta(&estimates, &RegressionFilter::All)?;
    Ok([fit.alpha_hat, fit.beta_hat, fit.mic_hat])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub concentrations: Vec<f64>,
    pub covariance: Option<AsymptoticCovariance>,
    /// Why the covariance could not be computed, e.g. a singular design.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignTable {
    pub rows: Vec<DesignRow>,
    /// Row with the smallest MIC variance.
    pub best: Option<usize>,
}

/// Asymptotic covariance of every candidate design. Designs that cannot be
/// evaluated get an error marker instead of failing the table.
pub fn evaluate_designs(
    designs: &[Vec<f64>],
    params: &GrowthParams,
    n: u32,
    sigma_eps: f64,
) -> DesignTable {
    let rows: Vec<DesignRow> = designs
        .iter()
        .map(|grid| match asymptotic_covariance(grid, params, n, sigma_eps) {
            Ok(cov) => DesignRow {
                concentrations: grid.clone(),
                covariance: Some(cov),
                error: None,
            },
            Err(e) => DesignRow {
                concentrations: grid.clone(),
                covariance: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.covariance.as_ref().map(|c| (i, c.sigma2_theta)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    DesignTable { rows, best }
}

/// `2^k` for exact powers of two, the decimal value otherwise.
pub fn concentration_label(c: f64) -> String {
    if c > 0.0 {
        let k = c.log2().round();
        if (-1074.0..=1023.0).contains(&k) && 2f64.powi(k as i32) == c {
            return format!("2^{k}");
        }
    }
    format_decimal(c)
}

fn design_label(grid: &[f64]) -> String {
    grid.iter().map(|&c| concentration_label(c)).collect::<Vec<_>>().join(",")
}

/// Rounds to three significant figures for display.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = 2 - x.abs().log10().floor() as i32;
    if decimals >= 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let unit = 10f64.powi(-decimals);
        format!("{}", (x / unit).round() * unit)
    }
}

fn csv_io(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::input(format!("{other:?}")),
    }
}

impl DesignTable {
    /// One CSV row per design with full-precision values, or three
    /// significant figures when `rounded`.
    pub fn write_csv<W: Write>(&self, sink: W, rounded: bool) -> Result<()> {
        let fmt = |x: f64| if rounded { sig3(x) } else { format_decimal(x) };
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "design",
            "sigma2_alpha",
            "sigma_alphabeta",
            "sigma2_beta",
            "sigma2_theta",
            "best",
            "error",
        ])
        .map_err(csv_io)?;
        for (i, row) in self.rows.iter().enumerate() {
            let best = if self.best == Some(i) { "true" } else { "false" };
            let record = match &row.covariance {
                Some(c) => [
                    design_label(&row.concentrations),
                    fmt(c.sigma2_alpha),
                    fmt(c.sigma_alphabeta),
                    fmt(c.sigma2_beta),
                    fmt(c.sigma2_theta),
                    best.to_string(),
                    String::new(),
                ],
                None => [
                    design_label(&row.concentrations),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    best.to_string(),
                    row.error.clone().unwrap_or_default(),
                ],
            };
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Lanes at or above this concentration are treated as fully suppressed
    /// (`Z ~ x0`) and calibrate `a` and `sigma_eps`.
    pub high_c_threshold: f64,
    /// Lane treated as freely growing (`Z ~ 2^n x0`); calibrates `n`.
    pub low_c: f64,
    pub fit: RegressionFilter,
    pub x0: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub concentration: f64,
    pub replicate: u32,
    pub observed: f64,
    pub predicted: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineFit {
    pub fit: FitResult,
    pub a_hat: f64,
    /// `None` when no calibration lane has two or more replicates.
    pub sigma_eps_hat: Option<f64>,
    pub sigma_eps_method: &'static str,
    /// Unrounded generation estimate.
    pub n_hat: f64,
    pub n_generations: u32,
    /// Smallest number of replicates among the fitted lanes.
    pub replicates: usize,
    pub estimates: Vec<MeanEstimate>,
    /// Plug-in asymptotic covariance at the fitted parameters and
    /// `sigma_eps_hat`, over the fitted lanes.
    pub plugin_covariance: Option<AsymptoticCovariance>,
    pub residuals: Vec<Residual>,
}

/// Calibrates `a`, `sigma_eps` and `n` from the reference lanes, estimates
/// `m` per lane and fits `(alpha, beta)`.
pub fn fit_dataset(dataset: &CtDataset, pipeline: &PipelineConfig) -> Result<PipelineFit> {
    if pipeline.x0 == 0 {
        return Err(Error::param("x0 must be at least 1"));
    }
    let lanes = dataset.lanes();
    if lanes.is_empty() {
        return Err(Error::InsufficientData("dataset is empty".into()));
    }
    let x0 = pipeline.x0;

    let high: Vec<&(f64, Vec<f64>)> = lanes
        .iter()
        .filter(|(c, _)| *c >= pipeline.high_c_threshold || same_concentration(*c, pipeline.high_c_threshold))
        .collect();
    if high.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no lanes at or above the high-concentration threshold {}",
            pipeline.high_c_threshold
        )));
    }
    let high_cts: Vec<f64> = high.iter().flat_map(|(_, cts)| cts.iter().copied()).collect();
    let a_hat = estimate_a(&high_cts, x0)?;
    let groups: Vec<&[f64]> = high.iter().map(|(_, cts)| cts.as_slice()).collect();
    let sigma_eps_hat = estimate_sigma_eps(&groups).ok();

    let (_, low_cts) = lanes
        .iter()
        .find(|(c, _)| same_concentration(*c, pipeline.low_c))
        .ok_or_else(|| {
            Error::InsufficientData(format!("no lane at the low concentration {}", pipeline.low_c))
        })?;
    if pipeline.low_c >= pipeline.high_c_threshold {
        return Err(Error::param(
            "the low-concentration lane must lie below the high-concentration threshold",
        ));
    }
    let n_hat = estimate_n(low_cts, a_hat, x0)?;
    let n = round_generations(n_hat)?;

    let estimates = lanes
        .iter()
        .map(|(c, cts)| estimate_m(*c, cts, a_hat, x0, n))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_alpha_beta(&estimates, &pipeline.fit)?;
    let params = fit.params()?;

    let replicates = estimates
        .iter()
        .filter(|e| fit.used_concentrations.contains(&e.concentration))
        .map(|e| e.replicates)
        .min()
        .unwrap_or(0);
    let plugin_covariance = sigma_eps_hat
        .and_then(|s| asymptotic_covariance(&fit.used_concentrations, &params, n, s).ok());

    let log2_x0 = (x0 as f64).log2();
    let mut residuals = Vec::with_capacity(dataset.observations().len());
    for obs in dataset.observations() {
        let m = params.mean_at(obs.concentration)?;
        let predicted = a_hat - log2_x0 - mean_total_p1_zero(m, n).log2();
        residuals.push(Residual {
            concentration: obs.concentration,
            replicate: obs.replicate,
            observed: obs.ct,
            predicted,
            residual: obs.ct - predicted,
        });
    }

    Ok(PipelineFit {
        fit,
        a_hat,
        sigma_eps_hat,
        sigma_eps_method: "pooled-within-lane",
        n_hat,
        n_generations: n,
        replicates,
        estimates,
        plugin_covariance,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub concentration: f64,
    pub m: f64,
}

/// `m(c)` tabulated over `grid`.
pub fn emit_curve(params: &GrowthParams, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&c| {
            Ok(CurvePoint {
                concentration: c,
                m: params.mean_at(c)?,
            })
        })
        .collect()
}

/// `points` concentrations evenly spaced in log scale from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::param(format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(Error::param("a curve needs at least 2 points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| match i {
            0 => lo,
            i if i == points - 1 => hi,
            i => (a + step * i as f64).exp(),
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["concentration", "m"]).map_err(csv_io)?;
    for p in curve {
        w.write_record([format_decimal(p.concentration), format_decimal(p.m)])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

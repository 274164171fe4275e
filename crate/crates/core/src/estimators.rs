//! From Ct lanes to `(alpha, beta)` and the MIC.
//!
//! Per concentration the mean Ct gives `log2 mu_n`-hat; inverting
//! `mu_n(m)` of the death-or-divide family gives `m`-hat. Across
//! concentrations, `log(2/m - 1) = log(alpha) + beta log(c)` is fitted by
//! ordinary least squares in natural-log space. Ct arithmetic is base 2
//! throughout.
//!
//! [`asymptotic_covariance`] evaluates the limiting covariance of
//! `sqrt(N) (alpha-hat - alpha, beta-hat - beta)` and the variance of
//! `sqrt(N) (mic-hat - mic)` for a design, given the true parameters.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::branching::{mean_total_derivative, mean_total_p1_zero, GrowthParams};
use crate::error::{Error, Result};
use crate::stats;

/// Bisection stops once the bracket on `m` is this narrow.
const PSI_TOLERANCE: f64 = 1e-12;
const PSI_MAX_ITER: usize = 200;

/// `log2 mu`-hat within this distance of the domain edge snaps to the edge
/// without being flagged; it absorbs rounding in noiseless data.
const EDGE_SNAP: f64 = 1e-9;

/// Relative tolerance when matching user-supplied concentrations to a grid.
pub const CONCENTRATION_MATCH: f64 = 1e-9;

pub(crate) fn same_concentration(a: f64, b: f64) -> bool {
    (a - b).abs() <= CONCENTRATION_MATCH * a.abs().max(b.abs())
}

fn nonempty(cts: &[f64], what: &str) -> Result<()> {
    if cts.is_empty() {
        return Err(Error::input(format!("{what}: no Ct values")));
    }
    Ok(())
}

/// `a - log2(x0) - mean(cts)`.
pub fn estimate_log_mu(cts: &[f64], a: f64, x0: u64) -> Result<f64> {
    nonempty(cts, "log mu estimate")?;
    Ok(a - (x0 as f64).log2() - stats::mean(cts))
}

/// Inverse of [`mean_total_p1_zero`] on `[1, 2^n]`, by bisection.
pub fn psi_inverse(mu: f64, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("mu_0 is constant; psi_0 is undefined".into()));
    }
    let top = 2f64.powi(n as i32);
    if !(1.0..=top).contains(&mu) {
        return Err(Error::Domain(format!("mu = {mu} outside [1, {top}]")));
    }
    if mu == 1.0 {
        return Ok(0.0);
    }
    if mu == top {
        return Ok(2.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 2.0_f64);
    for _ in 0..PSI_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let value = mean_total_p1_zero(mid, n);
        if value == mu {
            return Ok(mid);
        }
        if value < mu {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= PSI_TOLERANCE {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub concentration: f64,
    /// `mu_n`-hat after clamping into `[1, 2^n]`.
    pub mu_hat: f64,
    pub m_hat: f64,
    /// Set when the raw `mu_n`-hat fell outside `[1, 2^n]`.
    pub clamped: bool,
    pub replicates: usize,
}

/// `m`-hat for one lane of Ct values taken after `n` generations.
pub fn estimate_m(concentration: f64, cts: &[f64], a: f64, x0: u64, n: u32) -> Result<MeanEstimate> {
    if n == 0 {
        return Err(Error::param("number of generations must be at least 1"));
    }
    let log_mu = estimate_log_mu(cts, a, x0)?;
    let top = n as f64;
    let (log_mu, clamped) = if log_mu.abs() <= EDGE_SNAP {
        (0.0, false)
    } else if (log_mu - top).abs() <= EDGE_SNAP {
        (top, false)
    } else if log_mu < 0.0 {
        (0.0, true)
    } else if log_mu > top {
        (top, true)
    } else {
        (log_mu, false)
    };
    let mu_hat = log_mu.exp2();
    Ok(MeanEstimate {
        concentration,
        mu_hat,
        m_hat: psi_inverse(mu_hat, n)?,
        clamped,
        replicates: cts.len(),
    })
}

/// Which lanes enter the regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFilter {
    /// Keep lanes whose `m`-hat lies in `[lower, upper]`.
    Auto { lower: f64, upper: f64 },
    /// Keep exactly these concentrations (when their `m`-hat is interior).
    Subset(Vec<f64>),
    /// Every lane must be usable; any exclusion is an error.
    All,
}

impl Default for RegressionFilter {
    fn default() -> Self {
        RegressionFilter::Auto {
            lower: 0.05,
            upper: 1.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// `mu_n`-hat was clamped to the edge of `[1, 2^n]`.
    Clamped,
    /// `m`-hat is 0 or 2, where `log(2/m - 1)` is undefined.
    Boundary,
    OutsideBand,
    NotSelected,
    NonPositiveConcentration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub concentration: f64,
    pub m_hat: f64,
    pub reason: ExclusionReason,
}

/// Log-log regression data: `(log c_i, log(2/m_i - 1))` with the sums the
/// closed-form solution needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInputs {
    points: Vec<(f64, f64)>,
    l1: f64,
    l2: f64,
}

impl RegressionInputs {
    /// `points` are `(l_i, f_i)` pairs with strictly increasing `l_i`.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 concentrations, have {}",
                points.len()
            )));
        }
        if points.iter().any(|(l, f)| !l.is_finite() || !f.is_finite()) {
            return Err(Error::input("regression points must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::input("log concentrations must be strictly increasing"));
        }
        let (l1, l2) = log_sums(points.iter().map(|p| p.0));
        let inputs = Self { points, l1, l2 };
        inputs.denominator()?;
        Ok(inputs)
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn denominator(&self) -> Result<f64> {
        design_denominator(self.k(), self.l1, self.l2)
    }

    /// Least-squares `(alpha, beta)`.
    pub fn solve(&self) -> Result<(f64, f64)> {
        let k = self.k() as f64;
        let sum_f = stats::sum(self.points.iter().map(|p| p.1));
        let sum_fl = stats::sum(self.points.iter().map(|p| p.0 * p.1));
        let beta = (k * sum_fl - sum_f * self.l1) / self.denominator()?;
        let alpha = ((sum_f - beta * self.l1) / k).exp();
        Ok((alpha, beta))
    }
}

fn log_sums(ells: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    (stats::sum(ells.clone()), stats::sum(ells.map(|l| l * l)))
}

fn design_denominator(k: usize, l1: f64, l2: f64) -> Result<f64> {
    let det = k as f64 * l2 - l1 * l1;
    if !(det > 1e-12 * (k as f64 * l2).max(1.0)) {
        return Err(Error::SingularDesign(
            "concentrations do not spread in log scale".into(),
        ));
    }
    Ok(det)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    /// `alpha_hat^(-1 / beta_hat)`.
    pub mic_hat: f64,
    pub used_concentrations: Vec<f64>,
    pub excluded: Vec<Exclusion>,
}

impl FitResult {
    pub fn params(&self) -> Result<GrowthParams> {
        GrowthParams::new(self.alpha_hat, self.beta_hat)
    }
}

/// Least-squares fit of `(alpha, beta)` to per-lane `m`-hats.
pub fn fit_alpha_beta(estimates: &[MeanEstimate], filter: &RegressionFilter) -> Result<FitResult> {
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.concentration.total_cmp(&b.concentration));

    if let RegressionFilter::Subset(wanted) = filter {
        for &c in wanted {
            if !sorted.iter().any(|e| same_concentration(e.concentration, c)) {
                return Err(Error::input(format!(
                    "requested concentration {c} has no estimate"
                )));
            }
        }
    }

    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for e in &sorted {
        let reason = if !(e.concentration > 0.0) {
            Some(ExclusionReason::NonPositiveConcentration)
        } else if matches!(filter, RegressionFilter::Subset(w) if !w.iter().any(|&c| same_concentration(c, e.concentration)))
        {
            Some(ExclusionReason::NotSelected)
        } else if e.clamped {
            Some(ExclusionReason::Clamped)
        } else if !(e.m_hat > 0.0 && e.m_hat < 2.0) {
            Some(ExclusionReason::Boundary)
        } else if matches!(filter, RegressionFilter::Auto { lower, upper } if !(*lower..=*upper).contains(&e.m_hat))
        {
            Some(ExclusionReason::OutsideBand)
        } else {
            None
        };
        match reason {
            None => used.push(*e),
            Some(reason) => excluded.push(Exclusion {
                concentration: e.concentration,
                m_hat: e.m_hat,
                reason,
            }),
        }
    }

    let describe = |excluded: &[Exclusion]| {
        excluded
            .iter()
            .map(|x| format!("{} ({:?}, m_hat = {})", x.concentration, x.reason, x.m_hat))
            .collect::<Vec<_>>()
            .join(", ")
    };
    if matches!(filter, RegressionFilter::All) && !excluded.is_empty() {
        return Err(Error::InsufficientData(format!(
            "unusable concentrations: {}",
            describe(&excluded)
        )));
    }
    if used.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable concentration(s); excluded: {}",
            used.len(),
            describe(&excluded)
        )));
    }

    let points = used
        .iter()
        .map(|e| (e.concentration.ln(), (2.0 / e.m_hat - 1.0).ln()))
        .collect();
    let (alpha_hat, beta_hat) = RegressionInputs::new(points)?.solve()?;
    if !(alpha_hat > 0.0 && alpha_hat.is_finite() && beta_hat > 0.0 && beta_hat.is_finite()) {
        return Err(Error::Domain(format!(
            "degenerate fit: alpha = {alpha_hat}, beta = {beta_hat}"
        )));
    }
    Ok(FitResult {
        alpha_hat,
        beta_hat,
        mic_hat: alpha_hat.powf(-1.0 / beta_hat),
        used_concentrations: used.iter().map(|e| e.concentration).collect(),
        excluded,
    })
}

/// Noise loading of lane `c` on `f = log(2/m-hat - 1)`:
/// `-2 / (m (2 - m)) * sigma_eps mu_n(m) ln 2 / mu_n'(m)` at `m = m(c)`.
pub fn k_factor(c: f64, params: &GrowthParams, n: u32, sigma_eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("number of generations must be at least 1"));
    }
    let m = params.mean_at(c)?;
    if !(m > 0.0 && m < 2.0) {
        return Err(Error::SingularDesign(format!(
            "m({c}) = {m} is not strictly inside (0, 2)"
        )));
    }
    // m (2 - m) = 4x / (1 + x)^2 with x = alpha c^beta; forming 2 - m directly
    // cancels badly when m is close to 2
    let x = params.alpha() * c.powf(params.beta());
    Ok(-(1.0 + x) * (1.0 + x) / (2.0 * x) * sigma_eps * mean_total_p1_zero(m, n) * LN_2
        / mean_total_derivative(m, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCovariance {
    pub sigma2_alpha: f64,
    pub sigma_alphabeta: f64,
    pub sigma2_beta: f64,
    pub sigma2_theta: f64,
    pub k_factors: Vec<f64>,
}

impl AsymptoticCovariance {
    /// Standard deviations of `(alpha-hat, beta-hat, mic-hat)` with
    /// `replicates` observations per lane.
    pub fn standard_errors(&self, replicates: usize) -> [f64; 3] {
        let n = replicates as f64;
        [
            (self.sigma2_alpha / n).sqrt(),
            (self.sigma2_beta / n).sqrt(),
            (self.sigma2_theta / n).sqrt(),
        ]
    }
}

/// Limiting covariance of the `(alpha, beta)` estimator and variance of the
/// MIC estimator, both for `sqrt(N)`-scaled errors.
pub fn asymptotic_covariance(
    grid: &[f64],
    params: &GrowthParams,
    n: u32,
    sigma_eps: f64,
) -> Result<AsymptoticCovariance> {
    if grid.len() < 2 {
        return Err(Error::InsufficientData("a design needs at least 2 concentrations".into()));
    }
    if grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::param("design concentrations must be positive"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("design concentrations must be strictly increasing"));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::param(format!("sigma_eps must be >= 0, got {sigma_eps}")));
    }
    let k_factors = grid
        .iter()
        .map(|&c| k_factor(c, params, n, sigma_eps))
        .collect::<Result<Vec<_>>>()?;
    let ells: Vec<f64> = grid.iter().map(|c| c.ln()).collect();
    let k = grid.len();
    let (l1, l2) = log_sums(ells.iter().copied());
    let det = design_denominator(k, l1, l2)?;
    let det2 = det * det;
    let kf = k as f64;
    let (alpha, beta) = (params.alpha(), params.beta());
    let log_alpha = alpha.ln();
    let theta = params.mic();

    // per-lane weights of the beta and log-alpha expansions
    let terms: Vec<(f64, f64, f64)> = ells
        .iter()
        .zip(&k_factors)
        .map(|(&l, &ki)| (ki * ki, kf * l - l1, l2 - l1 * l))
        .collect();

    let sigma2_alpha = alpha * alpha / det2 * stats::sum(terms.iter().map(|(k2, _, a)| k2 * a * a));
    let sigma_alphabeta = alpha / det2 * stats::sum(terms.iter().map(|(k2, b, a)| k2 * b * a));
    let sigma2_beta = stats::sum(terms.iter().map(|(k2, b, _)| k2 * b * b)) / det2;
    // (log alpha)^2 * ((L2 - L1 l)/log alpha - (K l - L1)/beta)^2, with the
    // log alpha factor multiplied through so alpha = 1 is not singular
    let sigma2_theta = theta * theta / (beta * beta * det2)
        * stats::sum(terms.iter().map(|(k2, b, a)| {
            let w = a - log_alpha * b / beta;
            k2 * w * w
        }));

    Ok(AsymptoticCovariance {
        sigma2_alpha,
        sigma_alphabeta,
        sigma2_beta,
        sigma2_theta,
        k_factors,
    })
}

/// `a`-hat from lanes where growth is fully suppressed (`Z ~ x0`):
/// `mean(cts) + log2(x0)`.
pub fn estimate_a(high_c_cts: &[f64], x0: u64) -> Result<f64> {
    nonempty(high_c_cts, "a estimate")?;
    Ok(stats::mean(high_c_cts) + (x0 as f64).log2())
}

/// `n`-hat from a freely growing lane (`Z ~ 2^n x0`):
/// `a_hat - log2(x0) - mean(cts)`.
pub fn estimate_n(low_c_cts: &[f64], a_hat: f64, x0: u64) -> Result<f64> {
    nonempty(low_c_cts, "generation estimate")?;
    Ok(a_hat - (x0 as f64).log2() - stats::mean(low_c_cts))
}

/// Nearest whole generation count, halves rounded up. Errors below 1.
pub fn round_generations(n_hat: f64) -> Result<u32> {
    let n = (n_hat + 0.5).floor();
    if !(1.0..=1023.0).contains(&n) {
        return Err(Error::Domain(format!(
            "estimated generation count {n_hat} does not round to a usable value"
        )));
    }
    Ok(n as u32)
}

/// Pooled within-group standard deviation,
/// `sqrt(sum_g sum_i (x_gi - mean_g)^2 / sum_g (n_g - 1))`.
pub fn estimate_sigma_eps<G: AsRef<[f64]>>(groups: &[G]) -> Result<f64> {
    let mut ss = Vec::new();
    let mut dof = 0usize;
    for g in groups {
        let g = g.as_ref();
        if g.len() < 2 {
            continue;
        }
        let m = stats::mean(g);
        ss.extend(g.iter().map(|x| (x - m) * (x - m)));
        dof += g.len() - 1;
    }
    if dof == 0 {
        return Err(Error::InsufficientData(
            "sigma_eps needs a lane with at least 2 replicates".into(),
        ));
    }
    Ok((stats::sum(ss) / dof as f64).sqrt())
}

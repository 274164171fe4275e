//! Two-type (alive, dead) Galton–Watson process.
//!
//! Each alive cell independently dies (probability `p0`), survives as one cell
//! (`p1`) or divides into two (`p2`). Dead cells stay in the population, so the
//! total `Z_n = X_n + Y_n` never decreases; this total is what qPCR sees.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOLERANCE: f64 = 1e-12;

/// Largest supported count (63-bit).
pub const MAX_COUNT: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffspringDistribution {
    p0: f64,
    p1: f64,
    p2: f64,
}

impl OffspringDistribution {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1), ("p2", p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("{name} = {p} is not a probability")));
            }
        }
        let total = p0 + p1 + p2;
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::param(format!(
                "offspring probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { p0, p1, p2 })
    }

    /// The death-or-divide distribution `(1 - m/2, 0, m/2)` with offspring mean `m`.
    pub fn from_mean(m: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&m) {
            return Err(Error::param(format!("offspring mean {m} outside [0, 2]")));
        }
        Ok(Self {
            p0: 1.0 - m / 2.0,
            p1: 0.0,
            p2: m / 2.0,
        })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    /// Offspring mean `p1 + 2 p2`.
    pub fn mean(&self) -> f64 {
        self.p1 + 2.0 * self.p2
    }

    /// Expected total population after `n` generations from a single cell:
    /// `m^n + p0 (1 + m + ... + m^(n-1))`.
    pub fn mean_total(&self, n: u32) -> f64 {
        let m = self.mean();
        m.powi(n as i32) + self.p0 * geometric_sum(m, n)
    }

    /// Probability that the alive lineage dies out: 1 unless supercritical,
    /// in which case it is the smaller fixed point `p0 / p2` of the
    /// generating function.
    pub fn extinction_probability(&self) -> f64 {
        if self.mean() <= 1.0 {
            1.0
        } else {
            self.p0 / self.p2
        }
    }
}

/// `1 + m + ... + m^(n-1)` by Horner's rule; 0 for `n = 0`.
fn geometric_sum(m: f64, n: u32) -> f64 {
    (0..n).fold(0.0, |acc, _| acc * m + 1.0)
}

/// Dose-response parameters of `m(c) = 2 / (1 + alpha c^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    alpha: f64,
    beta: f64,
}

impl GrowthParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Offspring mean at concentration `c >= 0`.
    pub fn mean_at(&self, c: f64) -> Result<f64> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::param(format!("concentration must be >= 0, got {c}")));
        }
        Ok(2.0 / (1.0 + self.alpha * c.powf(self.beta)))
    }

    /// Minimal inhibitory concentration `alpha^(-1/beta)`, where `m(c) = 1`.
    pub fn mic(&self) -> f64 {
        self.alpha.powf(-1.0 / self.beta)
    }
}

/// `mu_n(m)` for the death-or-divide family (`p1 = 0`):
/// `(m/2)(m^(n-1) + ... + 1) + 1`. Increasing and convex on `[0, 2]`, from 1 to `2^n`.
pub fn mean_total_p1_zero(m: f64, n: u32) -> f64 {
    0.5 * m * geometric_sum(m, n) + 1.0
}

/// Derivative of [`mean_total_p1_zero`] in `m`: `(1/2) sum_{j=1..n} j m^(j-1)`.
pub fn mean_total_derivative(m: f64, n: u32) -> f64 {
    0.5 * (1..=n).rev().fold(0.0, |acc, j| acc * m + j as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Sharp bounds on `mu_n` over all offspring distributions with mean `m`.
///
/// The upper bound is attained by `(1 - m/2, 0, m/2)`; the lower one by
/// `(0, 2 - m, m - 1)` when `m >= 1` and by `(1 - m, m, 0)` when `m <= 1`.
pub fn mu_bounds(m: f64, n: u32) -> MuBounds {
    let lower = if m >= 1.0 { m.powi(n as i32) } else { 1.0 };
    MuBounds {
        lower,
        upper: mean_total_p1_zero(m, n),
    }
}

/// Alive and dead counts in one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PopulationState {
    pub alive: u64,
    pub dead: u64,
    pub generation: u32,
}

impl PopulationState {
    pub fn initial(x0: u64) -> Self {
        Self {
            alive: x0,
            dead: 0,
            generation: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.alive + self.dead
    }
}

/// How the alive cells of one generation split between the three fates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fates {
    pub died: u64,
    pub survived: u64,
    pub divided: u64,
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("p checked to lie in (0, 1)")
        .sample(rng)
}

/// One multinomial draw `(D0, D1, D2) ~ Multinomial(alive; p0, p1, p2)`, as two
/// conditional binomials.
pub fn draw_fates<R: Rng + ?Sized>(
    alive: u64,
    dist: &OffspringDistribution,
    rng: &mut R,
) -> Fates {
    let divided = binomial(alive, dist.p2, rng);
    let rest = alive - divided;
    let not_divided = dist.p0 + dist.p1;
    let survived = if not_divided > 0.0 {
        binomial(rest, dist.p1 / not_divided, rng)
    } else {
        rest
    };
    Fates {
        died: rest - survived,
        survived,
        divided,
    }
}

/// Advances the process by one generation.
pub fn step<R: Rng + ?Sized>(
    state: &PopulationState,
    dist: &OffspringDistribution,
    rng: &mut R,
) -> Result<PopulationState> {
    let generation = state.generation + 1;
    let fates = draw_fates(state.alive, dist, rng);
    let overflow = Error::Overflow { generation };
    let alive = fates
        .divided
        .checked_mul(2)
        .and_then(|x| x.checked_add(fates.survived))
        .filter(|&x| x <= MAX_COUNT)
        .ok_or(overflow)?;
    let dead = state
        .dead
        .checked_add(fates.died)
        .filter(|&x| x <= MAX_COUNT)
        .ok_or(Error::Overflow { generation })?;
    Ok(PopulationState {
        alive,
        dead,
        generation,
    })
}

fn check_start(x0: u64) -> Result<()> {
    if x0 == 0 {
        return Err(Error::param("initial population must be at least 1"));
    }
    if x0 > MAX_COUNT {
        return Err(Error::param("initial population exceeds 63-bit range"));
    }
    Ok(())
}

/// Trajectory `(X_k, Y_k)` for `k = 0..=n`, starting from `(x0, 0)`.
pub fn simulate<R: Rng + ?Sized>(
    x0: u64,
    dist: &OffspringDistribution,
    n: u32,
    rng: &mut R,
) -> Result<Vec<PopulationState>> {
    check_start(x0)?;
    let mut path = Vec::with_capacity(n as usize + 1);
    let mut state = PopulationState::initial(x0);
    path.push(state);
    for _ in 0..n {
        state = step(&state, dist, rng)?;
        path.push(state);
    }
    Ok(path)
}

/// Final state after `n` generations, without keeping the trajectory.
/// Consumes the stream exactly as [`simulate`] does.
pub fn simulate_final<R: Rng + ?Sized>(
    x0: u64,
    dist: &OffspringDistribution,
    n: u32,
    rng: &mut R,
) -> Result<PopulationState> {
    check_start(x0)?;
    let mut state = PopulationState::initial(x0);
    for _ in 0..n {
        if state.alive == 0 {
            state.generation = n;
            break;
        }
        state = step(&state, dist, rng)?;
    }
    Ok(state)
}

/// Exact law of one generation's fates from `alive` cells (multinomial pmf),
/// sorted by fates. Limited to `alive <= 64`.
pub fn step_distribution(alive: u64, dist: &OffspringDistribution) -> Result<Vec<(Fates, f64)>> {
    if alive > 64 {
        return Err(Error::input("exact step distribution limited to 64 cells"));
    }
    let mut out = Vec::new();
    for divided in 0..=alive {
        for survived in 0..=alive - divided {
            let died = alive - divided - survived;
            let coeff = binomial_coefficient(alive, divided) * binomial_coefficient(alive - divided, survived);
            let prob = coeff as f64
                * dist.p0.powi(died as i32)
                * dist.p1.powi(survived as i32)
                * dist.p2.powi(divided as i32);
            out.push((
                Fates {
                    died,
                    survived,
                    divided,
                },
                prob,
            ));
        }
    }
    out.sort_by_key(|entry| entry.0);
    Ok(out)
}

fn binomial_coefficient(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

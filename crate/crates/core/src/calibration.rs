//! Coverage-based ECE and post-hoc recalibration of predicted uncertainty.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::SIGMA_HAT_FLOOR;
use crate::error::{Error, Result};
use crate::optim::{brent_bounded, nelder_mead, NelderMeadConfig};
use crate::rng::stream_rng;
use crate::special::norm_ppf;
use crate::Scalar;

pub const DEFAULT_BINS: usize = 10;
pub const TAU_RANGE: (f64, f64) = (0.05, 20.0);
pub const TAU_GRID_POINTS: usize = 400;
pub const TAU_XTOL: f64 = 1e-4;

/// Nominal coverage levels `c_b = (2b − 1) / (2B)` for `b = 1..=B`.
pub fn nominal_levels<T: Scalar>(bins: usize) -> Vec<T> {
    (1..=bins)
        .map(|b| T::from_usize_lossy(2 * b - 1) / T::from_usize_lossy(2 * bins))
        .collect()
}

/// Nominal levels with their two-sided normal half-widths `Φ⁻¹((1 + c)/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid<T> {
    levels: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> CoverageGrid<T> {
    pub fn new(levels: Vec<T>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("coverage grid needs at least one level"));
        }
        if levels.iter().any(|c| !(*c > T::zero() && *c < T::one())) {
            return Err(Error::invalid("coverage levels must lie strictly inside (0, 1)"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("coverage levels must be strictly increasing"));
        }
        let z = levels
            .iter()
            .map(|&c| norm_ppf((T::one() + c) / T::lit(2.0)))
            .collect();
        Ok(Self { levels, z })
    }

    pub fn with_bins(bins: usize) -> Result<Self> {
        Self::new(nominal_levels(bins))
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    /// ECE from standardized absolute residuals `t = |r| / σ′` sorted ascending.
    fn ece_sorted(&self, sorted_t: &[T], scale: T) -> T {
        let n = T::from_usize_lossy(sorted_t.len());
        let mut total = T::zero();
        for (&c, &z) in self.levels.iter().zip(&self.z) {
            let bound = z * scale;
            let covered = sorted_t.partition_point(|&t| t <= bound);
            total = total + (T::from_usize_lossy(covered) / n - c).abs();
        }
        total / T::from_usize_lossy(self.levels.len())
    }

    /// ECE from unsorted standardized residuals, counting per level.
    fn ece_unsorted(&self, t: impl Iterator<Item = T>) -> T {
        let mut hits = vec![0usize; self.z.len()];
        let mut n = 0usize;
        for ti in t {
            n += 1;
            // z is increasing, so the covered levels form a suffix
            let first = self.z.partition_point(|&z| z < ti);
            if first < hits.len() {
                hits[first] += 1;
            }
        }
        let nn = T::from_usize_lossy(n);
        let mut cum = 0usize;
        let mut total = T::zero();
        for (k, &c) in self.levels.iter().enumerate() {
            cum += hits[k];
            total = total + (T::from_usize_lossy(cum) / nn - c).abs();
        }
        total / T::from_usize_lossy(self.levels.len())
    }
}

impl<T: Scalar> Default for CoverageGrid<T> {
    fn default() -> Self {
        Self::with_bins(DEFAULT_BINS).expect("default grid is valid")
    }
}

fn check_aligned<T: Scalar>(residuals: &[T], sigmas: &[T]) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::invalid("calibration needs at least one record"));
    }
    if residuals.len() != sigmas.len() {
        return Err(Error::invalid(format!(
            "{} residuals vs {} sigmas",
            residuals.len(),
            sigmas.len()
        )));
    }
    if residuals.iter().chain(sigmas).any(|v| v.is_nan()) || sigmas.iter().any(|&s| s < T::zero()) {
        return Err(Error::invalid("residuals must be numbers and sigmas non-negative"));
    }
    Ok(())
}

fn floored<T: Scalar>(s: T) -> T {
    s.max(T::lit(SIGMA_HAT_FLOOR))
}

fn standardized<T: Scalar>(residuals: &[T], sigmas: &[T]) -> Vec<T> {
    let mut t: Vec<T> = residuals
        .iter()
        .zip(sigmas)
        .map(|(&r, &s)| r.abs() / floored(s))
        .collect();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    t
}

/// Mean absolute gap between empirical and nominal coverage of the central
/// normal intervals `±Φ⁻¹((1 + c)/2)·σ′`, with `σ′` floored at 1e-6.
pub fn coverage_ece<T: Scalar>(residuals: &[T], sigmas: &[T], grid: &CoverageGrid<T>) -> Result<T> {
    check_aligned(residuals, sigmas)?;
    Ok(grid.ece_unsorted(residuals.iter().zip(sigmas).map(|(&r, &s)| r.abs() / floored(s))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauFit<T> {
    pub tau: T,
    pub ece: T,
}

/// Single-factor rescaling `σ′ = τ·σ̂` minimizing calibration-set ECE.
///
/// A 400-point log grid over `[0.05, 20]` locates the basin, Brent refines
/// between its neighbouring grid points, and `τ = 1` is kept whenever nothing
/// beats it.
pub fn fit_tau_star<T: Scalar>(residuals: &[T], sigmas: &[T], grid: &CoverageGrid<T>) -> Result<TauFit<T>> {
    check_aligned(residuals, sigmas)?;
    let sorted_t = standardized(residuals, sigmas);
    // t/τ ≤ z  ⇔  t ≤ τ·z
    let ece = |tau: T| grid.ece_sorted(&sorted_t, tau);

    let (lo, hi) = (TAU_RANGE.0.ln(), TAU_RANGE.1.ln());
    let taus: Vec<T> = (0..TAU_GRID_POINTS)
        .map(|k| T::lit((lo + (hi - lo) * k as f64 / (TAU_GRID_POINTS - 1) as f64).exp()))
        .collect();
    let values: Vec<T> = taus.iter().map(|&t| ece(t)).collect();
    let mut k_best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[k_best] {
            k_best = k;
        }
    }
    let mut best = TauFit {
        tau: taus[k_best],
        ece: values[k_best],
    };
    let left = taus[k_best.saturating_sub(1)];
    let right = taus[(k_best + 1).min(TAU_GRID_POINTS - 1)];
    if let Ok(m) = brent_bounded(ece, left, right, T::lit(TAU_XTOL), 200) {
        if m.fx < best.ece {
            best = TauFit { tau: m.x, ece: m.fx };
        }
    } else {
        log::debug!("tau* refinement failed; keeping the grid minimum");
    }
    let at_one = ece(T::one());
    if at_one <= best.ece {
        best = TauFit {
            tau: T::one(),
            ece: at_one,
        };
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit<T> {
    pub a: T,
    pub b: T,
    pub ece: T,
    pub iterations: usize,
    pub converged: bool,
}

/// `σ′ = (a + b·σ̂)·σ̂`, floored at 1e-6.
pub fn smooth_sigma<T: Scalar>(a: T, b: T, sigma: T) -> T {
    floored((a + b * sigma) * sigma)
}

/// Two-parameter recalibration `σ′ = (a + bσ̂)σ̂` fitted by Nelder–Mead from
/// `(τ*, 0)` with a 500-iteration cap and simplex tolerance 1e-6.
pub fn fit_smooth<T: Scalar>(residuals: &[T], sigmas: &[T], grid: &CoverageGrid<T>) -> Result<SmoothFit<T>> {
    let tau = fit_tau_star(residuals, sigmas, grid)?;
    fit_smooth_from(residuals, sigmas, grid, tau.tau)
}

/// [`fit_smooth`] with a caller-supplied starting slope-free scale.
pub fn fit_smooth_from<T: Scalar>(residuals: &[T], sigmas: &[T], grid: &CoverageGrid<T>, a0: T) -> Result<SmoothFit<T>> {
    check_aligned(residuals, sigmas)?;
    let floor = T::lit(SIGMA_HAT_FLOOR);
    let objective = |v: &[T]| {
        grid.ece_unsorted(
            residuals
                .iter()
                .zip(sigmas)
                .map(|(&r, &s)| r.abs() / smooth_sigma(v[0], v[1], s)),
        )
    };
    let mean_sigma = sigmas.iter().map(|&s| floored(s)).sum::<T>() / T::from_usize_lossy(sigmas.len());
    let step_a = T::lit(0.1) * a0.abs().max(T::lit(1e-3));
    let step_b = step_a / mean_sigma;
    let m = nelder_mead(objective, &[a0, T::zero()], &[step_a, step_b], &NelderMeadConfig::default())?;
    let (a, b) = (m.x[0], m.x[1]);
    if sigmas.iter().all(|&s| (a + b * s) * s <= floor) {
        return Err(Error::Numerical(format!(
            "smooth recalibration (a = {a}, b = {b}) collapses every interval"
        )));
    }
    Ok(SmoothFit {
        a,
        b,
        ece: m.fx,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// One scored image for calibration: ground truth, predicted mean and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord<T> {
    pub group_id: String,
    pub y: T,
    pub mu_hat: T,
    pub sigma_hat: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub n_splits: usize,
    pub cal_fraction: f64,
    pub seed: u64,
    pub bins: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_splits: 50,
            cal_fraction: 0.5,
            seed: 42,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport<T> {
    /// Test-split ECE of the unscaled σ̂ on the single τ* split.
    pub ece_raw: T,
    pub ece_tau: T,
    pub tau_star: T,
    pub ece_smooth_mean: T,
    pub a_star_mean: T,
    /// Signed mean of the fitted slope over splits.
    pub b_star_mean: T,
    /// Mean of `|b*|` over splits.
    pub b_star_abs_mean: T,
    pub n_splits: usize,
    pub nominal_levels: Vec<T>,
}

/// Seeded group-disjoint calibration/test partition; `true` marks calibration.
pub fn cal_test_split(groups: &[&str], cal_fraction: f64, seed: u64, split: u64) -> Result<Vec<bool>> {
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::out_of_range("cal_fraction", cal_fraction, 0.0, 1.0));
    }
    let mut unique: Vec<&str> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::invalid("need at least two groups for a group-disjoint split"));
    }
    unique.shuffle(&mut stream_rng(seed, split));
    let n_cal = ((unique.len() as f64 * cal_fraction).round() as usize).clamp(1, unique.len() - 1);
    let cal: BTreeSet<&str> = unique[..n_cal].iter().copied().collect();
    Ok(groups.iter().map(|g| cal.contains(g)).collect())
}

fn residuals_of<T: Scalar>(records: &[&CalibrationRecord<T>]) -> (Vec<T>, Vec<T>) {
    records.iter().map(|r| (r.y - r.mu_hat, r.sigma_hat)).unzip()
}

/// τ* from one split plus smooth-fit averages over `n_splits` group-disjoint
/// splits. Split `k` shuffles groups with stream `k` of the seed; split 0
/// also provides the τ* numbers.
pub fn monte_carlo_calibration<T: Scalar>(
    records: &[CalibrationRecord<T>],
    cfg: &MonteCarloConfig,
) -> Result<CalibrationReport<T>> {
    if cfg.n_splits == 0 {
        return Err(Error::invalid("n_splits must be >= 1"));
    }
    let grid = CoverageGrid::<T>::with_bins(cfg.bins)?;
    let groups: Vec<&str> = records.iter().map(|r| r.group_id.as_str()).collect();
    let mut a_sum = T::zero();
    let mut b_sum = T::zero();
    let mut b_abs_sum = T::zero();
    let mut ece_sum = T::zero();
    let mut single = None;
    for k in 0..cfg.n_splits {
        let is_cal = cal_test_split(&groups, cfg.cal_fraction, cfg.seed, k as u64)?;
        let (mut cal, mut test) = (Vec::new(), Vec::new());
        for (r, &c) in records.iter().zip(&is_cal) {
            if c {
                cal.push(r);
            } else {
                test.push(r);
            }
        }
        let (cal_r, cal_s) = residuals_of(&cal);
        let (test_r, test_s) = residuals_of(&test);
        let tau = fit_tau_star(&cal_r, &cal_s, &grid)?;
        if k == 0 {
            let scaled: Vec<T> = test_s.iter().map(|&s| tau.tau * s).collect();
            single = Some((
                coverage_ece(&test_r, &test_s, &grid)?,
                coverage_ece(&test_r, &scaled, &grid)?,
                tau.tau,
            ));
        }
        let smooth = fit_smooth_from(&cal_r, &cal_s, &grid, tau.tau)?;
        let recal: Vec<T> = test_s.iter().map(|&s| smooth_sigma(smooth.a, smooth.b, s)).collect();
        ece_sum = ece_sum + coverage_ece(&test_r, &recal, &grid)?;
        a_sum = a_sum + smooth.a;
        b_sum = b_sum + smooth.b;
        b_abs_sum = b_abs_sum + smooth.b.abs();
    }
    let (ece_raw, ece_tau, tau_star) = single.expect("at least one split ran");
    let n = T::from_usize_lossy(cfg.n_splits);
    Ok(CalibrationReport {
        ece_raw,
        ece_tau,
        tau_star,
        ece_smooth_mean: ece_sum / n,
        a_star_mean: a_sum / n,
        b_star_mean: b_sum / n,
        b_star_abs_mean: b_abs_sum / n,
        n_splits: cfg.n_splits,
        nominal_levels: grid.levels().to_vec(),
    })
}

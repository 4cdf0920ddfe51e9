//! Consensus-aware soft labels.
//!
//! The overall score fixes the label centre. Disagreement among the four
//! sub-dimension scores (their population standard deviation) widens the
//! label, which is a Gaussian discretized onto the five levels and then
//! nudged so that its mean equals the overall score exactly.

use serde::{Deserialize, Serialize};

use crate::datamodel::{level, AnnotatedImage, Hyperparams, LevelDistribution, MAX_SCORE, MIN_SCORE, N_LEVELS, N_SUBSCORES};
use crate::error::{Error, Result};
use crate::Scalar;

/// A built soft label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel<T> {
    pub dist: LevelDistribution<T>,
    /// Label centre, equal to the overall score.
    pub mu: T,
    /// Label width.
    pub sigma: T,
    /// Sub-dimension disagreement.
    pub delta: T,
}

/// Population standard deviation of the four sub-scores.
pub fn dimensional_conflict<T: Scalar>(sub_scores: [T; N_SUBSCORES]) -> T {
    let n = T::from_usize_lossy(N_SUBSCORES);
    let mean = sub_scores.iter().copied().sum::<T>() / n;
    let ss: T = sub_scores.iter().map(|&s| (s - mean) * (s - mean)).sum();
    (ss / n).sqrt()
}

/// `clamp(sigma0 + lambda_c·delta, sigma_min, sigma_max)`.
pub fn label_width<T: Scalar>(delta: T, hp: &Hyperparams<T>) -> T {
    (hp.sigma0 + hp.lambda_c * delta).max(hp.sigma_min).min(hp.sigma_max)
}

/// Gaussian density centred at `mu` evaluated on the levels and normalized.
pub fn gaussian_bin<T: Scalar>(mu: T, sigma: T) -> Result<LevelDistribution<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::invalid(format!("label width must be positive, got {sigma}")));
    }
    if !mu.is_finite() {
        return Err(Error::invalid("label centre must be finite"));
    }
    let two_var = T::lit(2.0) * sigma * sigma;
    let mut log_w = [T::zero(); N_LEVELS];
    for (i, w) in log_w.iter_mut().enumerate() {
        let d = level::<T>(i) - mu;
        *w = -(d * d) / two_var;
    }
    let max = log_w.iter().copied().fold(T::neg_infinity(), T::max);
    LevelDistribution::from_weights(log_w.map(|w| (w - max).exp()))
}

/// The two levels between which mass is shifted to move the mean to `mu`.
fn adjacent_levels<T: Scalar>(mu: T) -> (usize, usize) {
    let lo = mu.floor().as_f64() as usize;
    let hi = mu.ceil().as_f64() as usize;
    let (lo, hi) = if lo == hi {
        if hi < N_LEVELS {
            (lo, lo + 1)
        } else {
            (lo - 1, lo)
        }
    } else {
        (lo, hi)
    };
    (lo - 1, hi - 1)
}

/// Returns a distribution with mean exactly `mu`.
///
/// Mass `mu − E[dist]` is moved between the two levels bracketing `mu`.
/// When the donor level holds too little mass, the input is first mixed
/// with the two-point distribution on those levels that has mean `mu`,
/// using the smallest weight that makes the shift feasible.
pub fn enforce_first_moment<T: Scalar>(dist: &LevelDistribution<T>, mu: T) -> Result<LevelDistribution<T>> {
    if !(mu >= T::lit(MIN_SCORE) && mu <= T::lit(MAX_SCORE)) {
        return Err(Error::out_of_range("mu", mu.as_f64(), MIN_SCORE, MAX_SCORE));
    }
    let eps = mu - dist.expectation();
    if eps.abs() <= T::epsilon() * T::lit(8.0) {
        return Ok(*dist);
    }
    let (lo, hi) = adjacent_levels(mu);
    // Two-point distribution on {lo, hi} with mean mu.
    let (t_lo, t_hi) = if level::<T>(lo) == mu {
        (T::one(), T::zero())
    } else if level::<T>(hi) == mu {
        (T::zero(), T::one())
    } else {
        (level::<T>(hi) - mu, mu - level::<T>(lo))
    };
    let mut p = *dist.probs();
    let (donor, t_donor) = if eps > T::zero() { (lo, t_lo) } else { (hi, t_hi) };
    let need = eps.abs();
    let shift = if p[donor] >= need {
        need
    } else {
        let deficit = need - p[donor];
        let alpha = deficit / (t_donor + deficit);
        for (k, pk) in p.iter_mut().enumerate() {
            let t = if k == lo {
                t_lo
            } else if k == hi {
                t_hi
            } else {
                T::zero()
            };
            *pk = (T::one() - alpha) * *pk + alpha * t;
        }
        (T::one() - alpha) * need
    };
    let (from, to) = if eps > T::zero() { (lo, hi) } else { (hi, lo) };
    p[from] = (p[from] - shift).max(T::zero());
    p[to] = p[to] + shift;
    Ok(LevelDistribution::from_raw(p))
}

/// Label from raw scores.
pub fn soft_label<T: Scalar>(
    sub_scores: [T; N_SUBSCORES],
    overall: T,
    hp: &Hyperparams<T>,
) -> Result<SoftLabel<T>> {
    let delta = dimensional_conflict(sub_scores);
    let sigma = label_width(delta, hp);
    let dist = enforce_first_moment(&gaussian_bin(overall, sigma)?, overall)?;
    Ok(SoftLabel {
        dist,
        mu: overall,
        sigma,
        delta,
    })
}

pub fn build_soft_label(img: &AnnotatedImage, hp: &Hyperparams<f64>) -> Result<SoftLabel<f64>> {
    img.validate()?;
    soft_label(img.sub_scores, img.overall, hp)
}

/// Serialized per-image label as emitted by `labels build`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub image_id: String,
    pub delta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub probs: [f64; N_LEVELS],
}

impl LabelRecord {
    pub fn new(image_id: impl Into<String>, label: &SoftLabel<f64>) -> Self {
        Self {
            image_id: image_id.into(),
            delta: label.delta,
            sigma: label.sigma,
            mu: label.mu,
            probs: *label.dist.probs(),
        }
    }

    pub fn to_label(&self) -> Result<SoftLabel<f64>> {
        Ok(SoftLabel {
            dist: LevelDistribution::new(self.probs)?,
            mu: self.mu,
            sigma: self.sigma,
            delta: self.delta,
        })
    }
}

//! Post-hoc analyses: variance decomposition by group, conflict strata,
//! counterfactual SRCC ceiling and σ̂–δ correlation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{align_by_id, AnnotatedImage, PredictionRecord};
use crate::error::{Error, Result};
use crate::labels::dimensional_conflict;
use crate::metrics::{mid_ranks, plcc, srcc};
use crate::rng::stream_rng;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition<T> {
    /// Size-weighted mean of within-group population variances.
    pub within: T,
    /// Size-weighted population variance of group means.
    pub cross: T,
    /// Population variance of all scores.
    pub total: T,
    pub n_groups: usize,
    pub n_images: usize,
}

/// Splits the population variance of `y` into within-group and between-group
/// parts. Groups are keyed by the first tuple element.
pub fn variance_decomposition<T: Scalar>(items: &[(&str, T)]) -> Result<VarianceDecomposition<T>> {
    if items.is_empty() {
        return Err(Error::invalid("variance decomposition of an empty set"));
    }
    let mut groups: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for &(g, y) in items {
        groups.entry(g).or_default().push(y);
    }
    let n = T::from_usize_lossy(items.len());
    let grand = items.iter().map(|&(_, y)| y).sum::<T>() / n;
    let total = items.iter().map(|&(_, y)| (y - grand) * (y - grand)).sum::<T>() / n;
    let (mut within, mut cross) = (T::zero(), T::zero());
    for ys in groups.values() {
        let ng = T::from_usize_lossy(ys.len());
        let mean = ys.iter().copied().sum::<T>() / ng;
        let ss = ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>();
        within = within + ss / n;
        cross = cross + ng * (mean - grand) * (mean - grand) / n;
    }
    Ok(VarianceDecomposition {
        within,
        cross,
        total,
        n_groups: groups.len(),
        n_images: items.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Low,
    Mid,
    High,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Low, Stratum::Mid, Stratum::High];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TertileBoundaries {
    pub low_max: f64,
    pub mid_max: f64,
}

impl Default for TertileBoundaries {
    fn default() -> Self {
        Self {
            low_max: 0.45,
            mid_max: 0.71,
        }
    }
}

impl TertileBoundaries {
    pub fn new(low_max: f64, mid_max: f64) -> Result<Self> {
        if !(low_max.is_finite() && mid_max.is_finite() && low_max < mid_max) {
            return Err(Error::invalid(format!(
                "boundaries must satisfy low_max < mid_max, got ({low_max}, {mid_max})"
            )));
        }
        Ok(Self { low_max, mid_max })
    }

    /// Boundary values belong to the lower stratum.
    pub fn assign(&self, delta: f64) -> Stratum {
        if delta <= self.low_max {
            Stratum::Low
        } else if delta <= self.mid_max {
            Stratum::Mid
        } else {
            Stratum::High
        }
    }
}

impl std::str::FromStr for TertileBoundaries {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad boundary `{p}`: {e}")))
        };
        match parts.as_slice() {
            [a, b] => Self::new(parse(a)?, parse(b)?),
            _ => Err(Error::invalid(format!("expected `low_max,mid_max`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertileSplit {
    pub boundaries: TertileBoundaries,
    pub membership: BTreeMap<String, Stratum>,
    /// Low, mid, high.
    pub counts: [usize; 3],
}

pub fn tertile_split(images: &[AnnotatedImage], boundaries: TertileBoundaries) -> TertileSplit {
    let mut counts = [0; 3];
    let membership = images
        .iter()
        .map(|img| {
            let s = boundaries.assign(dimensional_conflict(img.sub_scores));
            counts[s as usize] += 1;
            (img.image_id.clone(), s)
        })
        .collect();
    TertileSplit {
        boundaries,
        membership,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: Stratum,
    pub n: usize,
    pub srcc: Option<f64>,
    /// Why `srcc` is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srcc_undefined: Option<String>,
    /// Population standard deviation of GT inside the stratum.
    pub gt_std: Option<f64>,
    pub gt_min: Option<f64>,
    pub gt_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub boundaries: TertileBoundaries,
    pub strata: Vec<StratumReport>,
    pub overall_srcc: f64,
    pub n_images: usize,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn stratum_indices(images: &[AnnotatedImage], b: TertileBoundaries) -> [Vec<usize>; 3] {
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, img) in images.iter().enumerate() {
        out[b.assign(dimensional_conflict(img.sub_scores)) as usize].push(i);
    }
    out
}

/// Per-stratum SRCC of predicted means against GT, plus GT spread.
pub fn stratify_by_delta(
    images: &[AnnotatedImage],
    preds: &[PredictionRecord],
    boundaries: TertileBoundaries,
) -> Result<StratifiedReport> {
    let aligned = align_by_id(images.iter().map(|i| i.image_id.as_str()), preds, |p| p.image_id.as_str())?;
    let gt: Vec<f64> = images.iter().map(|i| i.overall).collect();
    let pred: Vec<f64> = aligned.iter().map(|p| p.mu_hat).collect();
    let strata = stratum_indices(images, boundaries)
        .iter()
        .zip(Stratum::ALL)
        .map(|(idx, stratum)| {
            let g: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let (srcc_v, reason) = match idx.len() {
                0 => (None, Some("empty stratum".to_string())),
                1 => (None, Some("single image".to_string())),
                _ => match srcc(&p, &g) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                },
            };
            let nonempty = !g.is_empty();
            StratumReport {
                stratum,
                n: idx.len(),
                srcc: srcc_v,
                srcc_undefined: reason,
                gt_std: nonempty.then(|| population_std(&g)),
                gt_min: nonempty.then(|| g.iter().copied().fold(f64::INFINITY, f64::min)),
                gt_max: nonempty.then(|| g.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            }
        })
        .collect();
    Ok(StratifiedReport {
        boundaries,
        strata,
        overall_srcc: srcc(&pred, &gt)?,
        n_images: images.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPerturbation {
    pub shift: f64,
    /// Images changing stratum when `low_max` moves down by `shift`.
    pub migrating_down: usize,
    /// Images changing stratum when `low_max` moves up by `shift`.
    pub migrating_up: usize,
}

/// Counts images that change stratum when the low boundary moves by ±`shift`.
pub fn boundary_perturbation(
    images: &[AnnotatedImage],
    boundaries: TertileBoundaries,
    shift: f64,
) -> Result<BoundaryPerturbation> {
    let down = TertileBoundaries::new(boundaries.low_max - shift, boundaries.mid_max)?;
    let up = TertileBoundaries::new(boundaries.low_max + shift, boundaries.mid_max)?;
    let moved = |other: TertileBoundaries| {
        images
            .iter()
            .filter(|img| {
                let d = dimensional_conflict(img.sub_scores);
                boundaries.assign(d) != other.assign(d)
            })
            .count()
    };
    Ok(BoundaryPerturbation {
        shift,
        migrating_down: moved(down),
        migrating_up: moved(up),
    })
}

/// Width of the acceptance band around the requested high-stratum SRCC.
pub const CEILING_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub floor_srcc: f64,
    /// Pooled SRCC of the counterfactual scores.
    pub ceiling: f64,
    /// Pooled SRCC of the actual predicted means, absent when they are constant.
    pub actual_srcc: Option<f64>,
    /// Within-stratum SRCC reached by the synthesized high-stratum scores.
    pub high_srcc: Option<f64>,
    pub transpositions: usize,
    pub counts: [usize; 3],
    /// Describes the rank re-pooling construction, which is an implementation choice.
    pub repooling: String,
}

/// Maps within-stratum rank values affinely onto `[lo, hi]`.
fn ranks_onto_range(ranks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let rmin = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = ranks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if rmax <= rmin {
        return vec![lo; ranks.len()];
    }
    ranks.iter().map(|r| lo + (r - rmin) / (rmax - rmin) * (hi - lo)).collect()
}

/// Pearson of two vectors sharing fixed multisets, updated per transposition.
struct TranspositionWalk {
    r: Vec<f64>,
    g: Vec<f64>,
    cross: f64,
    offset: f64,
    scale: f64,
}

impl TranspositionWalk {
    fn new(r: Vec<f64>, g: Vec<f64>) -> Self {
        let n = r.len() as f64;
        let (mr, mg) = (r.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
        let sr = r.iter().map(|x| (x - mr) * (x - mr)).sum::<f64>().sqrt();
        let sg = g.iter().map(|x| (x - mg) * (x - mg)).sum::<f64>().sqrt();
        let cross = r.iter().zip(&g).map(|(a, b)| a * b).sum();
        Self {
            r,
            g,
            cross,
            offset: n * mr * mg,
            scale: sr * sg,
        }
    }

    fn corr_with(&self, cross: f64) -> f64 {
        (cross - self.offset) / self.scale
    }

    fn swapped_cross(&self, i: usize, j: usize) -> f64 {
        self.cross + (self.r[j] - self.r[i]) * (self.g[i] - self.g[j])
    }
}

/// SRCC ceiling with low and mid strata replaced by GT-ordered scores and the
/// high stratum held near `floor_srcc`.
///
/// The high stratum starts from its GT mid-ranks, which are then corrupted by
/// seeded random transpositions. A transposition is kept only when it lowers
/// the within-stratum SRCC without going below `floor − 0.02`, and the walk
/// stops once SRCC ≤ `floor + 0.02`. Every stratum's ranks are then mapped
/// affinely onto its own GT range and the pooled SRCC is returned.
pub fn counterfactual_ceiling(
    images: &[AnnotatedImage],
    preds: &[PredictionRecord],
    boundaries: TertileBoundaries,
    floor_srcc: f64,
    seed: u64,
) -> Result<CeilingReport> {
    if !(-1.0..=1.0).contains(&floor_srcc) {
        return Err(Error::out_of_range("floor_srcc", floor_srcc, -1.0, 1.0));
    }
    let aligned = align_by_id(images.iter().map(|i| i.image_id.as_str()), preds, |p| p.image_id.as_str())?;
    let gt: Vec<f64> = images.iter().map(|i| i.overall).collect();
    let actual: Vec<f64> = aligned.iter().map(|p| p.mu_hat).collect();
    let strata = stratum_indices(images, boundaries);

    let mut synthetic = vec![0.0; images.len()];
    let mut high_srcc = None;
    let mut transpositions = 0;
    for (idx, stratum) in strata.iter().zip(Stratum::ALL) {
        if idx.is_empty() {
            continue;
        }
        let g: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let g_ranks = mid_ranks(&g);
        let ranks = if stratum == Stratum::High {
            if idx.len() < 2 || g.iter().all(|&v| v == g[0]) {
                return Err(Error::Undefined(
                    "high stratum needs two or more images with distinct GT to hold an SRCC floor".into(),
                ));
            }
            let (ranks, steps, achieved) = hold_at_floor(g_ranks, floor_srcc, seed)?;
            high_srcc = Some(achieved);
            transpositions = steps;
            ranks
        } else {
            g_ranks
        };
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (&i, s) in idx.iter().zip(ranks_onto_range(&ranks, lo, hi)) {
            synthetic[i] = s;
        }
    }
    let counts = [strata[0].len(), strata[1].len(), strata[2].len()];
    Ok(CeilingReport {
        floor_srcc,
        ceiling: srcc(&synthetic, &gt)?,
        actual_srcc: srcc(&actual, &gt).ok(),
        high_srcc,
        transpositions,
        counts,
        repooling: "within-stratum ranks mapped affinely onto each stratum's GT range".into(),
    })
}

fn hold_at_floor(g_ranks: Vec<f64>, floor: f64, seed: u64) -> Result<(Vec<f64>, usize, f64)> {
    let n = g_ranks.len();
    let mut walk = TranspositionWalk::new(g_ranks.clone(), g_ranks);
    let mut current = walk.corr_with(walk.cross);
    let mut rng = stream_rng(seed, 0);
    let mut accepted = 0;
    let max_tries = 2000 * n + 100_000;
    let mut tries = 0;
    while current > floor + CEILING_BAND {
        if tries == max_tries {
            return Err(Error::Numerical(format!(
                "could not bring high-stratum SRCC from {current:.4} to {floor} ± {CEILING_BAND}"
            )));
        }
        tries += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if walk.r[i] == walk.r[j] {
            continue;
        }
        let cross = walk.swapped_cross(i, j);
        let next = walk.corr_with(cross);
        if next < current && next >= floor - CEILING_BAND {
            walk.r.swap(i, j);
            walk.cross = cross;
            current = next;
            accepted += 1;
        }
    }
    let achieved = srcc(&walk.r, &walk.g)?;
    Ok((walk.r, accepted, achieved))
}

/// Pearson correlation between predicted σ̂ and annotation conflict δ.
pub fn sigma_delta_correlation(preds: &[PredictionRecord], images: &[AnnotatedImage]) -> Result<f64> {
    let aligned = align_by_id(images.iter().map(|i| i.image_id.as_str()), preds, |p| p.image_id.as_str())?;
    let sigma: Vec<f64> = aligned.iter().map(|p| p.sigma_hat).collect();
    let delta: Vec<f64> = images.iter().map(|i| dimensional_conflict(i.sub_scores)).collect();
    plcc(&sigma, &delta)
}

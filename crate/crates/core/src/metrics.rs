//! Rank and correlation metrics, reverse-direction KL, and paired bootstrap.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{align_by_id, AnnotatedImage, Hyperparams, PredictionRecord};
use crate::error::{Error, Result};
use crate::labels::{build_soft_label, LabelRecord, SoftLabel};
use crate::losses::{kl_divergence, kl_floor};
use crate::rng::stream_rng;
use crate::Scalar;

fn check_pair<T: Scalar>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::invalid("need at least two observations"));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    Ok(())
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(&x[a], &x[b]));
    let mut ranks = vec![T::zero(); x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = T::from_usize_lossy(start + end + 1) / T::lit(2.0);
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one()))
}

/// Pearson linear correlation.
pub fn plcc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    check_pair(pred, gt)?;
    pearson_unchecked(pred, gt)
}

/// Spearman correlation: Pearson on mid-ranks.
pub fn srcc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    check_pair(pred, gt)?;
    pearson_unchecked(&mid_ranks(pred), &mid_ranks(gt))
}

fn tie_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

/// Sum of `t(t−1)/2` over runs of equal values in an already sorted key sequence.
fn count_tie_pairs<I: Iterator<Item = bool>>(same_as_prev: I) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for same in same_as_prev {
        if same {
            run += 1;
        } else {
            total += tie_pairs(run);
            run = 1;
        }
    }
    total + tie_pairs(run)
}

/// Merge sort of `v` by key, returning the number of inversions.
fn sort_count_swaps<T: Scalar>(v: &mut [T], buf: &mut Vec<T>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], buf) + sort_count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall τ-b in `O(n log n)` (Knight's algorithm).
pub fn krcc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    check_pair(pred, gt)?;
    kendall_tau_b(pred, gt)
}

fn kendall_tau_b<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp(&x[a], &x[b]).then(cmp(&y[a], &y[b])));
    let n0 = tie_pairs(n as u64);
    let n1 = count_tie_pairs(idx.windows(2).map(|w| x[w[0]] == x[w[1]]));
    let n3 = count_tie_pairs(idx.windows(2).map(|w| x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]]));
    let mut ys: Vec<T> = idx.iter().map(|&i| y[i]).collect();
    let swaps = sort_count_swaps(&mut ys, &mut Vec::with_capacity(n));
    let n2 = count_tie_pairs(ys.windows(2).map(|w| w[0] == w[1]));
    if n1 == n0 || n2 == n0 {
        return Err(Error::Undefined("Kendall tau of a constant vector".into()));
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(T::lit((num / den).clamp(-1.0, 1.0)))
}

/// An image's group, ground-truth score and predicted score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedScore<'a, T> {
    pub group: &'a str,
    pub gt: T,
    pub pred: T,
}

fn by_group<'a, 'b, T: Scalar>(items: &'b [GroupedScore<'a, T>]) -> BTreeMap<&'a str, Vec<&'b GroupedScore<'a, T>>> {
    let mut groups: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for it in items {
        groups.entry(it.group).or_default().push(it);
    }
    groups
}

/// Fraction of same-group pairs with distinct GT that the prediction orders
/// correctly; prediction ties earn half credit.
pub fn pair_accuracy<T: Scalar>(items: &[GroupedScore<'_, T>]) -> Result<T> {
    let mut credit = 0.0f64;
    let mut pairs = 0u64;
    for members in by_group(items).values() {
        for (k, a) in members.iter().enumerate() {
            for b in &members[k + 1..] {
                if a.gt == b.gt {
                    continue;
                }
                pairs += 1;
                let want = cmp(&a.gt, &b.gt);
                match cmp(&a.pred, &b.pred) {
                    Ordering::Equal => credit += 0.5,
                    got if got == want => credit += 1.0,
                    _ => {}
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Undefined("no same-group pairs with distinct ground truth".into()));
    }
    Ok(T::lit(credit / pairs as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerGroupTau<T> {
    pub mean: T,
    pub n_groups: usize,
    /// Groups left out because they had one image or constant GT.
    pub n_skipped: usize,
}

/// Unweighted mean of within-group Kendall τ-b.
///
/// Groups with fewer than two images or constant GT are skipped. A group
/// whose predictions are all equal contributes τ = 0.
pub fn per_group_tau<T: Scalar>(items: &[GroupedScore<'_, T>]) -> Result<PerGroupTau<T>> {
    let mut taus = Vec::new();
    let mut skipped = 0;
    for members in by_group(items).values() {
        let gt: Vec<T> = members.iter().map(|m| m.gt).collect();
        let pred: Vec<T> = members.iter().map(|m| m.pred).collect();
        if gt.len() < 2 || gt.iter().all(|&g| g == gt[0]) {
            skipped += 1;
            continue;
        }
        let tau = if pred.iter().all(|&p| p == pred[0]) {
            T::zero()
        } else {
            krcc(&pred, &gt)?
        };
        taus.push(tau);
    }
    if taus.is_empty() {
        return Err(Error::Undefined("no group with at least two distinct GT scores".into()));
    }
    let mean = taus.iter().copied().sum::<T>() / T::from_usize_lossy(taus.len());
    Ok(PerGroupTau {
        mean,
        n_groups: taus.len(),
        n_skipped: skipped,
    })
}

/// Mean `KL(q_pred ‖ p_label)` over position-aligned predictions and labels.
///
/// Label probabilities are floored like the training-side prediction so that
/// levels a label rules out exactly give a large finite penalty.
pub fn eval_kl(preds: &[&PredictionRecord], labels: &[SoftLabel<f64>]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::invalid("eval_kl needs equally many (>0) predictions and labels"));
    }
    let mut total = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        let q = p.distribution()?;
        let floored = crate::datamodel::LevelDistribution::from_raw(l.dist.probs().map(|v| v.max(kl_floor())));
        total += kl_divergence(&q, &floored).map_err(|e| Error::Numerical(format!("{}: {e}", p.image_id)))?;
    }
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub pair_acc: f64,
    pub per_group_tau: f64,
    pub per_group_tau_skipped: usize,
    pub eval_kl: f64,
    pub n_images: usize,
    pub n_groups: usize,
}

/// Evaluates predictions against annotations.
///
/// Every annotated image needs a prediction. Labels default to ones built
/// from the annotations with `hp`.
pub fn evaluate(
    images: &[AnnotatedImage],
    preds: &[PredictionRecord],
    labels: Option<&[LabelRecord]>,
    hp: &Hyperparams<f64>,
) -> Result<EvalReport> {
    let aligned = align_by_id(images.iter().map(|i| i.image_id.as_str()), preds, |p| p.image_id.as_str())?;
    let soft: Vec<SoftLabel<f64>> = match labels {
        Some(recs) => align_by_id(images.iter().map(|i| i.image_id.as_str()), recs, |r| r.image_id.as_str())?
            .into_iter()
            .map(|r| r.to_label())
            .collect::<Result<_>>()?,
        None => images.iter().map(|i| build_soft_label(i, hp)).collect::<Result<_>>()?,
    };
    let gt: Vec<f64> = images.iter().map(|i| i.overall).collect();
    let pred: Vec<f64> = aligned.iter().map(|p| p.mu_hat).collect();
    let grouped: Vec<GroupedScore<'_, f64>> = images
        .iter()
        .zip(&pred)
        .map(|(i, &p)| GroupedScore {
            group: &i.group_id,
            gt: i.overall,
            pred: p,
        })
        .collect();
    let tau = per_group_tau(&grouped)?;
    Ok(EvalReport {
        srcc: srcc(&pred, &gt)?,
        plcc: plcc(&pred, &gt)?,
        krcc: krcc(&pred, &gt)?,
        pair_acc: pair_accuracy(&grouped)?,
        per_group_tau: tau.mean,
        per_group_tau_skipped: tau.n_skipped,
        eval_kl: eval_kl(&aligned, &soft)?,
        n_images: images.len(),
        n_groups: by_group(&grouped).len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMetric {
    Srcc,
    Plcc,
    Krcc,
}

impl BootstrapMetric {
    pub fn eval<T: Scalar>(self, pred: &[T], gt: &[T]) -> Result<T> {
        match self {
            BootstrapMetric::Srcc => srcc(pred, gt),
            BootstrapMetric::Plcc => plcc(pred, gt),
            BootstrapMetric::Krcc => krcc(pred, gt),
        }
    }
}

impl std::str::FromStr for BootstrapMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srcc" => Ok(Self::Srcc),
            "plcc" => Ok(Self::Plcc),
            "krcc" => Ok(Self::Krcc),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult<T> {
    /// `metric(a) − metric(b)` on the full set.
    pub delta: T,
    /// Two-sided: `2·min(frac(Δ* ≤ 0), frac(Δ* ≥ 0))`, clipped to 1.
    pub p_value: T,
    pub n_boot: usize,
    /// Resamples on which either metric was undefined.
    pub n_skipped: usize,
}

/// Paired bootstrap over image indices. Resample `k` draws from its own
/// stream of the master seed.
pub fn paired_bootstrap<T: Scalar>(
    pred_a: &[T],
    pred_b: &[T],
    gt: &[T],
    metric: BootstrapMetric,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapResult<T>> {
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be >= 1"));
    }
    check_pair(pred_a, gt)?;
    check_pair(pred_b, gt)?;
    let delta = metric.eval(pred_a, gt)? - metric.eval(pred_b, gt)?;
    let n = gt.len();
    let (mut le, mut ge, mut valid, mut skipped) = (0usize, 0usize, 0usize, 0usize);
    let (mut ra, mut rb, mut rg) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    for k in 0..n_boot {
        let mut rng = stream_rng(seed, k as u64);
        for slot in 0..n {
            let i = rng.random_range(0..n);
            ra[slot] = pred_a[i];
            rb[slot] = pred_b[i];
            rg[slot] = gt[i];
        }
        match (metric.eval(&ra, &rg), metric.eval(&rb, &rg)) {
            (Ok(a), Ok(b)) => {
                let d = a - b;
                valid += 1;
                if d <= T::zero() {
                    le += 1;
                }
                if d >= T::zero() {
                    ge += 1;
                }
            }
            (Err(Error::Undefined(_)), _) | (_, Err(Error::Undefined(_))) => skipped += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if valid == 0 {
        return Err(Error::Undefined("every bootstrap resample was degenerate".into()));
    }
    let frac = |c: usize| c as f64 / valid as f64;
    let p = (2.0 * frac(le).min(frac(ge))).min(1.0);
    Ok(BootstrapResult {
        delta,
        p_value: T::lit(p),
        n_boot,
        n_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n²) τ-b by pair enumeration.
    fn tau_b_brute(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let sx = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
                let sy = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
                if sx == 0.0 && sy == 0.0 {
                    continue;
                } else if sx == 0.0 {
                    tx += 1.0;
                } else if sy == 0.0 {
                    ty += 1.0;
                } else if sx == sy {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
    }

    /// Rank by counting: 1 + #smaller + (#equal others)/2.
    fn rank_brute(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&a| {
                let less = x.iter().filter(|&&b| b < a).count() as f64;
                let eq = x.iter().filter(|&&b| b == a).count() as f64 - 1.0;
                1.0 + less + eq / 2.0
            })
            .collect()
    }

    fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn identity_and_reversal() {
        let gt = [1.0, 2.5, 3.0, 4.25, 5.0];
        let rev: Vec<f64> = gt.iter().rev().copied().collect();
        assert!((srcc(&gt, &gt).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&rev, &gt).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(krcc(&gt, &gt).unwrap(), 1.0);
        assert_eq!(krcc(&rev, &gt).unwrap(), -1.0);
    }

    #[test]
    fn six_points_one_tie() {
        let pred = [0.3, 1.2, 0.9, 2.2, 1.2, -0.4];
        let gt = [2.0, 3.25, 3.0, 4.0, 2.5, 1.75];
        let want = pearson_brute(&rank_brute(&pred), &rank_brute(&gt));
        assert!((srcc(&pred, &gt).unwrap() - want).abs() < 1e-14);
        assert_eq!(mid_ranks(&pred), vec![2.0, 4.5, 3.0, 6.0, 4.5, 1.0]);
    }

    #[test]
    fn five_points_with_ties() {
        let pred = [1.0, 1.0, 2.0, 3.0, 3.0];
        let gt = [2.0, 1.0, 2.0, 2.0, 5.0];
        let want = tau_b_brute(&pred, &gt);
        assert!((krcc(&pred, &gt).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn affine_plcc() {
        let gt = [1.0, 2.5, 3.0, 4.25, 5.0, 2.0];
        let up: Vec<f64> = gt.iter().map(|g| 0.3 * g - 7.0).collect();
        let down: Vec<f64> = gt.iter().map(|g| -2.0 * g + 1.0).collect();
        assert!((plcc(&up, &gt).unwrap() - 1.0).abs() < 1e-14);
        assert!((plcc(&down, &gt).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(matches!(krcc(&[1.0, 2.0], &[4.0, 4.0]), Err(Error::Undefined(_))));
        assert!(plcc(&[1.0], &[1.0]).is_err());
        assert!(plcc(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn grouped<'a>(groups: &'a [&'a str], gt: &[f64], pred: &[f64]) -> Vec<GroupedScore<'a, f64>> {
        groups
            .iter()
            .zip(gt.iter().zip(pred))
            .map(|(g, (&gt, &pred))| GroupedScore { group: g, gt, pred })
            .collect()
    }

    #[test]
    fn pair_accuracy_cases() {
        let groups = ["a", "a", "a", "b", "b", "b"];
        let gt = [3.0, 2.0, 4.0, 1.5, 2.5, 2.5];
        assert_eq!(pair_accuracy(&grouped(&groups, &gt, &gt)).unwrap(), 1.0);
        assert_eq!(pair_accuracy(&grouped(&groups, &gt, &[1.0; 6])).unwrap(), 0.5);
        // a: (0,1) right, (0,2) and (1,2) wrong; b: (3,4) prediction tie, (3,5) right, (4,5) GT tie
        let pred = [2.0, 1.0, 0.5, 0.1, 0.1, 0.7];
        assert!((pair_accuracy(&grouped(&groups, &gt, &pred)).unwrap() - 2.5 / 5.0).abs() < 1e-15);
        assert!(pair_accuracy(&grouped(&["a", "b"], &[1.0, 2.0], &[1.0, 2.0])).is_err());
    }

    #[test]
    fn per_group_tau_cases() {
        let groups = ["a", "a", "a", "b", "b", "b", "c", "c"];
        let gt = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 2.0, 2.0];
        let pred = [1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 0.0, 1.0];
        let r = per_group_tau(&grouped(&groups, &gt, &pred)).unwrap();
        assert_eq!((r.mean, r.n_groups, r.n_skipped), (0.0, 2, 1));
        let r = per_group_tau(&grouped(&groups, &gt, &gt)).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!(per_group_tau(&grouped(&["a", "a"], &[2.0, 2.0], &[1.0, 2.0])).is_err());
    }

    #[test]
    fn eval_kl_cases() {
        let hp = Hyperparams::default();
        let label = crate::labels::soft_label([3.0f64, 3.0, 3.0, 4.0], 3.25, &hp).unwrap();
        let logits = label.dist.probs().map(|p: f64| p.ln());
        let same = PredictionRecord::from_logits("x", logits).unwrap();
        assert!(eval_kl(&[&same], &[label]).unwrap().abs() < 1e-12);

        let sharp = crate::labels::soft_label([3.0; 4], 3.0, &hp).unwrap();
        let uniform = PredictionRecord::from_logits("u", [0.0; 5]).unwrap();
        let want: f64 = sharp.dist.probs().iter().map(|&p| 0.2 * (0.2 / p).ln()).sum();
        assert!((eval_kl(&[&uniform], &[sharp]).unwrap() - want).abs() < 1e-12);
        assert!(want > 5.0);

        // a record carrying binned-Gaussian logits gives the same KL through both paths
        let binned = crate::labels::gaussian_bin(2.6, 0.55).unwrap();
        let with_logits = PredictionRecord::from_logits("b", binned.probs().map(|p: f64| p.ln())).unwrap();
        let target = crate::labels::soft_label([2.0, 3.0, 3.0, 3.0], 2.75, &hp).unwrap();
        let a = eval_kl(&[&with_logits], &[target]).unwrap();
        let moments = PredictionRecord::from_summary("b", 2.6, 0.55);
        let b = eval_kl(&[&moments], &[target]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_cases() {
        let gt: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 / 40.0).collect();
        let r = paired_bootstrap(&gt, &gt, &gt, BootstrapMetric::Srcc, 200, 1).unwrap();
        assert_eq!((r.delta, r.p_value), (0.0, 1.0));

        let noise: Vec<f64> = (0..200).map(|i| ((i * 7919 + 13) % 211) as f64).collect();
        let r = paired_bootstrap(&gt, &noise, &gt, BootstrapMetric::Srcc, 500, 42).unwrap();
        assert!(r.delta > 0.5 && r.p_value < 0.05, "{r:?}");
        let again = paired_bootstrap(&gt, &noise, &gt, BootstrapMetric::Srcc, 500, 42).unwrap();
        assert_eq!(r, again);
        assert!(paired_bootstrap(&gt, &gt, &gt, BootstrapMetric::Krcc, 0, 1).is_err());
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        // quarter steps produce plenty of ties
        proptest::collection::vec((0i32..17).prop_map(|k| 1.0 + 0.25 * k as f64), n)
    }

    proptest! {
        #[test]
        fn matches_brute_force((x, y) in (2usize..30).prop_flat_map(|n| (arb_vec(n), arb_vec(n)))) {
            let const_x = x.iter().all(|&v| v == x[0]);
            let const_y = y.iter().all(|&v| v == y[0]);
            prop_assume!(!const_x && !const_y);
            prop_assert!((srcc(&x, &y).unwrap() - pearson_brute(&rank_brute(&x), &rank_brute(&y))).abs() < 1e-12);
            prop_assert!((krcc(&x, &y).unwrap() - tau_b_brute(&x, &y)).abs() < 1e-12);
            prop_assert!((plcc(&x, &y).unwrap() - pearson_brute(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn rank_metrics_invariant_to_monotone_maps(x in proptest::collection::vec(-2.0f64..2.0, 5..25), seed in 0u64..1000) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((i as u64 * 31 + seed) % 7) as f64 * 0.3).collect();
            let base_s = srcc(&x, &y).unwrap();
            let base_k = krcc(&x, &y).unwrap();
            for f in [|v: f64| v.exp(), |v: f64| v * v * v, |v: f64| 3.0 * v + 1.0] {
                let fx: Vec<f64> = x.iter().map(|&v| f(v)).collect();
                prop_assert!((srcc(&fx, &y).unwrap() - base_s).abs() < 1e-12);
                prop_assert!((krcc(&fx, &y).unwrap() - base_k).abs() < 1e-12);
            }
            let affine: Vec<f64> = x.iter().map(|v| -4.0 * v + 2.0).collect();
            prop_assert!((plcc(&affine, &y).unwrap().abs() - plcc(&x, &y).unwrap().abs()).abs() < 1e-12);
        }

        #[test]
        fn negation_flips_pair_accuracy(pred in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let groups = ["a", "a", "a", "a", "b", "b", "b", "b"];
            let gt = [1.0, 2.0, 3.0, 4.0, 2.0, 2.5, 3.0, 3.5];
            let neg: Vec<f64> = pred.iter().map(|p| -p).collect();
            let a = pair_accuracy(&grouped(&groups, &gt, &pred)).unwrap();
            let b = pair_accuracy(&grouped(&groups, &gt, &neg)).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-15);
        }
    }
}

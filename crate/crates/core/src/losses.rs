//! Tripartite objective over the five level logits of each image.
//!
//! ```text
//! total = KL + λ_fid·fid + λ_xfid·xfid (+ λ_pl·pl)
//! ```
//!
//! `KL` is the batch mean of `KL(label ‖ softmax(logits))`. `fid` and `xfid`
//! average a bounded fidelity between Thurstone preference probabilities of
//! the ground truth and of the expectation readout, over unordered same-group
//! and cross-group pairs respectively. Each pair uses the margin
//! `sqrt(σ_i² + σ_j²)` built from the two label widths.

use serde::{Deserialize, Serialize};

use crate::datamodel::{level, Hyperparams, LevelDistribution, PlVariant, N_LEVELS};
use crate::error::{Error, Result};
use crate::labels::SoftLabel;
use crate::special::{norm_cdf, norm_pdf, norm_sf};
use crate::Scalar;

/// One batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem<T> {
    pub image_id: String,
    pub group_id: String,
    pub logits: [T; N_LEVELS],
    pub label: SoftLabel<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub kl: T,
    pub fid: T,
    pub xfid: T,
    pub pl: T,
    pub total: T,
    pub n_within_pairs: usize,
    pub n_cross_pairs: usize,
}

/// Which way round the KL divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(label ‖ prediction)`, the training direction.
    LabelToPrediction,
    /// `KL(prediction ‖ label)`, the evaluation direction.
    PredictionToLabel,
}

/// Smallest denominator used inside the KL logarithm.
pub fn kl_floor<T: Scalar>() -> T {
    T::lit(1e-300).max(T::min_positive_value())
}

/// Max-subtracted softmax over the level logits.
pub fn softmax_levels<T: Scalar>(logits: [T; N_LEVELS]) -> Result<LevelDistribution<T>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    LevelDistribution::from_weights(logits.map(|z| (z - max).exp()))
}

/// `Σ l·p_l`.
pub fn expectation_readout<T: Scalar>(dist: &LevelDistribution<T>) -> T {
    dist.expectation()
}

/// `Σ p_l ln(p_l / q_l)` with `0·ln 0 = 0`.
///
/// Positive `q_l` below [`kl_floor`] are raised to it; an exact zero where
/// `p_l > 0` is a support violation.
pub fn kl_divergence<T: Scalar>(p: &LevelDistribution<T>, q: &LevelDistribution<T>) -> Result<T> {
    let mut acc = T::zero();
    for (i, (&pl, &ql)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pl <= T::zero() {
            continue;
        }
        if ql <= T::zero() {
            return Err(Error::Numerical(format!(
                "level {} has p = {pl} but q = 0",
                i + 1
            )));
        }
        acc = acc + pl * (pl.ln() - ql.max(kl_floor()).ln());
    }
    Ok(acc.max(T::zero()))
}

pub fn kl_loss<T: Scalar>(
    label: &LevelDistribution<T>,
    pred: &LevelDistribution<T>,
    direction: KlDirection,
) -> Result<T> {
    match direction {
        KlDirection::LabelToPrediction => kl_divergence(label, pred),
        KlDirection::PredictionToLabel => kl_divergence(pred, label),
    }
}

/// `sqrt(σ_i² + σ_j²)`.
pub fn pair_margin<T: Scalar>(sigma_i: T, sigma_j: T) -> T {
    sigma_i.hypot(sigma_j)
}

/// `Φ((mu_i − mu_j)/sigma_ij)`.
pub fn thurstone_prob<T: Scalar>(mu_i: T, mu_j: T, sigma_ij: T) -> T {
    norm_cdf((mu_i - mu_j) / sigma_ij)
}

/// `(Φ(z), 1 − Φ(z))`, both tails evaluated directly.
fn thurstone_parts<T: Scalar>(z: T) -> (T, T) {
    (norm_cdf(z), norm_sf(z))
}

/// Fidelity between two Bernoulli preferences,
/// `1 − √(P_gt·P_pred) − √((1−P_gt)(1−P_pred))`.
pub fn fidelity_pair<T: Scalar>(p_gt: T, p_pred: T) -> T {
    fidelity_parts(p_gt, T::one() - p_gt, p_pred, T::one() - p_pred)
}

/// Same quantity written as half a squared Hellinger-type distance, which is
/// non-negative and exactly zero on the diagonal in floating point.
fn fidelity_parts<T: Scalar>(p_gt: T, q_gt: T, p_pred: T, q_pred: T) -> T {
    let a = p_gt.sqrt() - p_pred.sqrt();
    let b = q_gt.sqrt() - q_pred.sqrt();
    (T::lit(0.5) * (a * a + b * b)).min(T::one())
}

/// `φ(z)/√Φ(z)`, finite in the far left tail.
fn pdf_over_sqrt_cdf<T: Scalar>(z: T) -> T {
    let phi = norm_pdf(z);
    let cdf: T = norm_cdf(z);
    if cdf > T::zero() {
        phi / cdf.sqrt()
    } else {
        // Mills ratio: Φ(z) ≈ φ(z)/|z|
        (phi * z.abs()).sqrt()
    }
}

/// d fidelity / dz where `P_pred = Φ(z)`.
fn fidelity_dz<T: Scalar>(p_gt: T, q_gt: T, z: T) -> T {
    T::lit(0.5) * (q_gt.sqrt() * pdf_over_sqrt_cdf(-z) - p_gt.sqrt() * pdf_over_sqrt_cdf(z))
}

/// One list entry for the Plackett–Luce term.
#[derive(Debug, Clone, Copy)]
pub struct PlItem<'a, T> {
    pub id: &'a str,
    /// Ground-truth score defining the target order.
    pub mu: T,
    /// Utility under the model.
    pub score: T,
}

/// Target order: GT descending, ties by id ascending.
fn pl_order<T: Scalar>(items: &[PlItem<'_, T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .mu
            .partial_cmp(&items[a].mu)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| items[a].id.cmp(items[b].id))
    });
    order
}

/// Negative log-likelihood of `ordered` utilities and its gradient.
fn pl_nll_ordered<T: Scalar>(u: &[T]) -> (T, Vec<T>) {
    let n = u.len();
    // suffix log-sum-exp
    let mut lse = vec![T::zero(); n];
    let mut acc = T::neg_infinity();
    for k in (0..n).rev() {
        let m = acc.max(u[k]);
        acc = m + ((acc - m).exp() + (u[k] - m).exp()).ln();
        lse[k] = acc;
    }
    let nll = (0..n).map(|k| lse[k] - u[k]).sum::<T>().max(T::zero());
    // d/du_j = Σ_{k≤j} exp(u_j − lse_k) − 1, with a running log-sum of −lse_k
    let mut grad = vec![T::zero(); n];
    let mut c = T::neg_infinity();
    for j in 0..n {
        let m = c.max(-lse[j]);
        c = m + ((c - m).exp() + (-lse[j] - m).exp()).ln();
        grad[j] = (u[j] + c).exp() - T::one();
    }
    (nll, grad)
}

/// Plackett–Luce negative log-likelihood of the GT-descending order of
/// `items` under their scores. Ties in GT are broken by id.
pub fn pl_listwise_scalar<T: Scalar>(items: &[PlItem<'_, T>]) -> Result<T> {
    Ok(pl_listwise_with_grad(items)?.0)
}

fn pl_listwise_with_grad<T: Scalar>(items: &[PlItem<'_, T>]) -> Result<(T, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::invalid("listwise term needs at least two items"));
    }
    let order = pl_order(items);
    let u: Vec<T> = order.iter().map(|&i| items[i].score).collect();
    let (nll, g_ordered) = pl_nll_ordered(&u);
    let mut grad = vec![T::zero(); items.len()];
    for (pos, &i) in order.iter().enumerate() {
        grad[i] = g_ordered[pos];
    }
    Ok((nll, grad))
}

/// Listwise term over one image's five levels: the label's level order
/// (probability descending, ties by level) under utilities `ln q_l`.
/// Returns the value and its gradient w.r.t. the logits.
fn pl_levels_with_grad<T: Scalar>(label: &LevelDistribution<T>, q: &LevelDistribution<T>) -> (T, [T; N_LEVELS]) {
    let p = label.probs();
    let mut order: Vec<usize> = (0..N_LEVELS).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let u: Vec<T> = order.iter().map(|&l| q.probs()[l].max(kl_floor()).ln()).collect();
    let (nll, g_ordered) = pl_nll_ordered(&u);
    let mut g_u = [T::zero(); N_LEVELS];
    for (pos, &l) in order.iter().enumerate() {
        g_u[l] = g_ordered[pos];
    }
    // u_l = z_l − lse(z)  ⇒  dz_m = g_m − q_m Σ_l g_l
    let g_sum: T = g_u.iter().copied().sum();
    let mut g_z = [T::zero(); N_LEVELS];
    for m in 0..N_LEVELS {
        g_z[m] = g_u[m] - q.probs()[m] * g_sum;
    }
    (nll, g_z)
}

/// `∂ŷ/∂z_l = q_l (l − ŷ)`.
fn readout_jacobian<T: Scalar>(q: &LevelDistribution<T>, y_hat: T) -> [T; N_LEVELS] {
    let mut j = [T::zero(); N_LEVELS];
    for (l, jl) in j.iter_mut().enumerate() {
        *jl = q.probs()[l] * (level::<T>(l) - y_hat);
    }
    j
}

/// Loss and its gradient w.r.t. every item's logits in one pass.
pub fn tripartite_loss_and_grad<T: Scalar>(
    batch: &[BatchItem<T>],
    hp: &Hyperparams<T>,
) -> Result<(LossBreakdown<T>, Vec<[T; N_LEVELS]>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    hp.validate()?;
    let b = batch.len();
    let bt = T::from_usize_lossy(b);

    let mut q = Vec::with_capacity(b);
    let mut y_hat = Vec::with_capacity(b);
    for item in batch {
        let qi = softmax_levels(item.logits)?;
        y_hat.push(qi.expectation());
        q.push(qi);
    }

    let mut grad = vec![[T::zero(); N_LEVELS]; b];
    // dL/dŷ accumulated from the pairwise and scalar listwise terms
    let mut d_yhat = vec![T::zero(); b];

    let mut kl = T::zero();
    for (i, item) in batch.iter().enumerate() {
        kl = kl + kl_divergence(&item.label.dist, &q[i])?;
        for l in 0..N_LEVELS {
            grad[i][l] = (q[i].probs()[l] - item.label.dist.probs()[l]) / bt;
        }
    }
    kl = kl / bt;

    let (mut fid_sum, mut xfid_sum) = (T::zero(), T::zero());
    let (mut n_within, mut n_cross) = (0usize, 0usize);
    // per-pair dz contributions, scaled once the pair counts are known
    let mut pair_terms: Vec<(usize, usize, bool, T)> = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let (li, lj) = (&batch[i].label, &batch[j].label);
            let sigma_ij = pair_margin(li.sigma, lj.sigma);
            let (pg, qg) = thurstone_parts((li.mu - lj.mu) / sigma_ij);
            let z = (y_hat[i] - y_hat[j]) / sigma_ij;
            let (pp, qp) = thurstone_parts(z);
            let f = fidelity_parts(pg, qg, pp, qp);
            let within = batch[i].group_id == batch[j].group_id;
            if within {
                fid_sum = fid_sum + f;
                n_within += 1;
            } else {
                xfid_sum = xfid_sum + f;
                n_cross += 1;
            }
            pair_terms.push((i, j, within, fidelity_dz(pg, qg, z) / sigma_ij));
        }
    }
    let fid = if n_within > 0 { fid_sum / T::from_usize_lossy(n_within) } else { T::zero() };
    let xfid = if n_cross > 0 { xfid_sum / T::from_usize_lossy(n_cross) } else { T::zero() };
    let w_within = if n_within > 0 { hp.lambda_fid / T::from_usize_lossy(n_within) } else { T::zero() };
    let w_cross = if n_cross > 0 { hp.lambda_xfid / T::from_usize_lossy(n_cross) } else { T::zero() };
    for (i, j, within, dz) in pair_terms {
        let w = if within { w_within } else { w_cross };
        d_yhat[i] = d_yhat[i] + w * dz;
        d_yhat[j] = d_yhat[j] - w * dz;
    }

    let mut pl = T::zero();
    if hp.lambda_pl > T::zero() {
        match hp.pl_variant {
            PlVariant::ScalarReadout => {
                let items: Vec<PlItem<'_, T>> = batch
                    .iter()
                    .zip(&y_hat)
                    .map(|(it, &s)| PlItem {
                        id: &it.image_id,
                        mu: it.label.mu,
                        score: s,
                    })
                    .collect();
                let (v, g) = pl_listwise_with_grad(&items)?;
                pl = v;
                for (d, gi) in d_yhat.iter_mut().zip(g) {
                    *d = *d + hp.lambda_pl * gi;
                }
            }
            PlVariant::LevelDistribution => {
                for (i, item) in batch.iter().enumerate() {
                    let (v, g) = pl_levels_with_grad(&item.label.dist, &q[i]);
                    pl = pl + v / bt;
                    for l in 0..N_LEVELS {
                        grad[i][l] = grad[i][l] + hp.lambda_pl * g[l] / bt;
                    }
                }
            }
        }
    }

    for i in 0..b {
        let jac = readout_jacobian(&q[i], y_hat[i]);
        for l in 0..N_LEVELS {
            grad[i][l] = grad[i][l] + d_yhat[i] * jac[l];
        }
    }

    let total = kl + hp.lambda_fid * fid + hp.lambda_xfid * xfid + hp.lambda_pl * pl;
    if !total.is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }
    Ok((
        LossBreakdown {
            kl,
            fid,
            xfid,
            pl,
            total,
            n_within_pairs: n_within,
            n_cross_pairs: n_cross,
        },
        grad,
    ))
}

pub fn tripartite_loss<T: Scalar>(batch: &[BatchItem<T>], hp: &Hyperparams<T>) -> Result<LossBreakdown<T>> {
    Ok(tripartite_loss_and_grad(batch, hp)?.0)
}

/// Gradient of [`LossBreakdown::total`] w.r.t. each item's logits.
pub fn tripartite_grad<T: Scalar>(batch: &[BatchItem<T>], hp: &Hyperparams<T>) -> Result<Vec<[T; N_LEVELS]>> {
    Ok(tripartite_loss_and_grad(batch, hp)?.1)
}

//! Array-first entry points for host training frameworks.
//!
//! Everything here takes and returns flat row-major buffers (`B×5` logits and
//! probabilities, `B×4` sub-scores) so a caller holding raw tensors can hand
//! them over without building per-image records. Results are computed by the
//! same code paths as the record-based API and are bit-identical to it.

use crate::datamodel::{Hyperparams, LevelDistribution, MAX_SCORE, MIN_SCORE, N_LEVELS, N_SUBSCORES};
use crate::error::{Error, Result};
use crate::labels::{soft_label, SoftLabel};
use crate::losses::{tripartite_loss_and_grad, BatchItem, LossBreakdown};
use crate::Scalar;

/// Borrowed batch in array form. `logits` and `label_probs` are `B×5`
/// row-major; `mu`, `sigma` and `group` have length `B`. Group indices must be
/// dense in `[0, G)`.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a, T> {
    pub logits: &'a [T],
    pub label_probs: &'a [T],
    pub mu: &'a [T],
    pub sigma: &'a [T],
    pub group: &'a [usize],
}

impl<'a, T: Scalar> BatchView<'a, T> {
    pub fn new(
        logits: &'a [T],
        label_probs: &'a [T],
        mu: &'a [T],
        sigma: &'a [T],
        group: &'a [usize],
    ) -> Result<Self> {
        let view = Self {
            logits,
            label_probs,
            mu,
            sigma,
            group,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group.iter().max().map_or(0, |&g| g + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.mu.len();
        for (name, len, want) in [
            ("logits", self.logits.len(), b * N_LEVELS),
            ("label_probs", self.label_probs.len(), b * N_LEVELS),
            ("sigma", self.sigma.len(), b),
            ("group", self.group.len(), b),
        ] {
            if len != want {
                return Err(Error::invalid(format!("{name} has length {len}, expected {want} for B = {b}")));
            }
        }
        let g = self.n_groups();
        let mut seen = vec![false; g];
        for &k in self.group {
            seen[k] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "group indices are not dense in [0, {g}): {missing} is unused"
            )));
        }
        Ok(())
    }

    /// Per-image records for the core loss. Group ids are the decimal indices.
    pub fn to_items(&self) -> Result<Vec<BatchItem<T>>> {
        self.validate()?;
        (0..self.len())
            .map(|i| {
                let dist = LevelDistribution::new(row(self.label_probs, i))
                    .map_err(|e| Error::invalid(format!("row {i}: label_probs: {e}")))?;
                Ok(BatchItem {
                    image_id: i.to_string(),
                    group_id: self.group[i].to_string(),
                    logits: row(self.logits, i),
                    label: SoftLabel {
                        dist,
                        mu: self.mu[i],
                        sigma: self.sigma[i],
                        delta: T::nan(),
                    },
                })
            })
            .collect()
    }
}

fn row<T: Scalar>(flat: &[T], i: usize) -> [T; N_LEVELS] {
    std::array::from_fn(|l| flat[i * N_LEVELS + l])
}

/// Output of [`build_labels_batch`]: `probs` is `B×5` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelsBatch<T> {
    pub probs: Vec<T>,
    pub sigma: Vec<T>,
    pub delta: Vec<T>,
}

/// Builds soft labels for `B` images from `B×4` sub-scores and `B` overall
/// scores. Errors name the offending row and field.
pub fn build_labels_batch<T: Scalar>(sub_scores: &[T], overall: &[T], hp: &Hyperparams<T>) -> Result<LabelsBatch<T>> {
    let b = overall.len();
    if sub_scores.len() != b * N_SUBSCORES {
        return Err(Error::invalid(format!(
            "sub_scores has length {}, expected {} for B = {b}",
            sub_scores.len(),
            b * N_SUBSCORES
        )));
    }
    let (lo, hi) = (T::lit(MIN_SCORE), T::lit(MAX_SCORE));
    let check = |field: String, v: T| -> Result<()> {
        if v.is_finite() && v >= lo && v <= hi {
            Ok(())
        } else {
            Err(Error::out_of_range(field, v.to_f64().unwrap_or(f64::NAN), MIN_SCORE, MAX_SCORE))
        }
    };
    let mut out = LabelsBatch {
        probs: Vec::with_capacity(b * N_LEVELS),
        sigma: Vec::with_capacity(b),
        delta: Vec::with_capacity(b),
    };
    for i in 0..b {
        let subs: [T; N_SUBSCORES] = std::array::from_fn(|k| sub_scores[i * N_SUBSCORES + k]);
        for (k, &s) in subs.iter().enumerate() {
            check(format!("row {i} sub_scores[{k}]"), s)?;
        }
        check(format!("row {i} overall"), overall[i])?;
        let label = soft_label(subs, overall[i], hp).map_err(|e| Error::invalid(format!("row {i}: {e}")))?;
        out.probs.extend_from_slice(label.dist.probs());
        out.sigma.push(label.sigma);
        out.delta.push(label.delta);
    }
    Ok(out)
}

/// Tripartite loss and its `B×5` row-major gradient w.r.t. the logits.
pub fn loss_and_grad<T: Scalar>(view: &BatchView<'_, T>, hp: &Hyperparams<T>) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let items = view.to_items()?;
    let (breakdown, grad) = tripartite_loss_and_grad(&items, hp)?;
    Ok((breakdown, grad.into_iter().flatten().collect()))
}

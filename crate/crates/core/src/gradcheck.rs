//! Finite-difference check of the analytic tripartite gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Hyperparams, PlVariant, N_LEVELS};
use crate::error::Result;
use crate::labels::soft_label;
use crate::losses::{tripartite_grad, tripartite_loss, BatchItem};
use crate::rng::stream_rng;

/// Magnitude below which gradient coordinates are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub tol: f64,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            tol: 1e-5,
            step: 1e-5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_trial: usize,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Random batch and hyperparameters for trial `trial`.
pub fn random_case(seed: u64, trial: u64) -> (Vec<BatchItem<f64>>, Hyperparams<f64>) {
    let mut rng = stream_rng(seed, trial);
    let size = rng.random_range(2..=10usize);
    let n_groups = rng.random_range(1..=3usize);
    let logit = Normal::new(0.0, 1.5).unwrap();
    let mut hp = Hyperparams::<f64>::default();
    match rng.random_range(0..3u8) {
        0 => {}
        1 => hp.lambda_pl = 0.3,
        _ => {
            hp.lambda_pl = 0.3;
            hp.pl_variant = PlVariant::LevelDistribution;
        }
    }
    let batch = (0..size)
        .map(|k| {
            let subs: [f64; 4] = std::array::from_fn(|_| rng.random_range(1..=5u8) as f64);
            let overall = subs.iter().sum::<f64>() / 4.0;
            let logits: [f64; N_LEVELS] = std::array::from_fn(|_| logit.sample(&mut rng));
            BatchItem {
                image_id: format!("img{k:02}"),
                group_id: format!("g{}", rng.random_range(0..n_groups)),
                logits,
                label: soft_label(subs, overall, &hp).expect("valid random label"),
            }
        })
        .collect();
    (batch, hp)
}

/// Central differences of the total loss w.r.t. every logit.
pub fn numeric_grad(batch: &[BatchItem<f64>], hp: &Hyperparams<f64>, step: f64) -> Result<Vec<[f64; N_LEVELS]>> {
    let mut work = batch.to_vec();
    let mut out = vec![[0.0; N_LEVELS]; batch.len()];
    for i in 0..batch.len() {
        for l in 0..N_LEVELS {
            let z = batch[i].logits[l];
            work[i].logits[l] = z + step;
            let up = tripartite_loss(&work, hp)?.total;
            work[i].logits[l] = z - step;
            let down = tripartite_loss(&work, hp)?.total;
            work[i].logits[l] = z;
            out[i][l] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut max_err = 0.0f64;
    let mut worst = 0;
    let mut coords = 0;
    for t in 0..cfg.trials {
        let (batch, hp) = random_case(cfg.seed, t as u64);
        let analytic = tripartite_grad(&batch, &hp)?;
        let numeric = numeric_grad(&batch, &hp, cfg.step)?;
        for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
            coords += 1;
            let e = relative_error(*a, *n);
            if e > max_err {
                max_err = e;
                worst = t;
            }
        }
    }
    Ok(GradcheckReport {
        trials: cfg.trials,
        coordinates: coords,
        max_rel_error: max_err,
        worst_trial: worst,
        passed: max_err < cfg.tol,
    })
}

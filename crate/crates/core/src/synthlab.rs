//! Simulated multi-rater annotation corpora with known latent quality, and a
//! linear scorer trained on them with the tripartite objective.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    load_annotations, read_jsonl, save_annotations, write_jsonl, AnnotatedImage, AnnotationFormat, Bucket,
    Hyperparams, PredictionRecord, SplitAssignment, MAX_SCORE, MIN_SCORE, N_LEVELS, N_SUBSCORES,
};
use crate::error::{Error, Result};
use crate::labels::{build_soft_label, SoftLabel};
use crate::losses::{tripartite_loss_and_grad, BatchItem, LossBreakdown};
use crate::rng::stream_rng;
use crate::sampler::{BatchStream, SamplerConfig};
use crate::special::norm_ppf;

/// Planted-conflict bands; one is picked uniformly per image, then δ is
/// uniform inside it.
pub const CONFLICT_BANDS: [(f64, f64); 3] = [(0.0, 0.45), (0.45, 0.71), (0.71, 1.1)];

const RATING_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub n_methods: usize,
    pub n_raters: usize,
    /// Standard deviation of per-group latent offsets.
    pub scene_spread: f64,
    /// Standard deviation of per-image latent offsets inside a group.
    pub method_spread: f64,
    pub rater_noise: f64,
    /// Rater noise std is `rater_noise·(1 + consensus_coupling·δ)`.
    pub consensus_coupling: f64,
    /// Shrinks high-band latent quality toward `base_quality` by this fraction.
    pub conflict_compression: f64,
    pub base_quality: f64,
    pub feature_dim: usize,
    /// Std of the isotropic noise added to the feature embedding.
    pub feature_noise: f64,
    /// Scale of the planted conflict δ embedded along a second feature direction.
    pub conflict_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_groups: 60,
            n_methods: 11,
            n_raters: 5,
            scene_spread: 0.5,
            method_spread: 0.35,
            rater_noise: 0.3,
            consensus_coupling: 1.0,
            conflict_compression: 0.0,
            base_quality: 3.0,
            feature_dim: 8,
            feature_noise: 0.3,
            conflict_signal: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_groups", self.n_groups),
            ("n_methods", self.n_methods),
            ("n_raters", self.n_raters),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("scene_spread", self.scene_spread),
            ("method_spread", self.method_spread),
            ("rater_noise", self.rater_noise),
            ("feature_noise", self.feature_noise),
            ("conflict_signal", self.conflict_signal),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::out_of_range(name, v, 0.0, f64::INFINITY));
            }
        }
        for (name, v) in [
            ("consensus_coupling", self.consensus_coupling),
            ("conflict_compression", self.conflict_compression),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::out_of_range(name, v, 0.0, 1.0));
            }
        }
        if !(MIN_SCORE..=MAX_SCORE).contains(&self.base_quality) {
            return Err(Error::out_of_range("base_quality", self.base_quality, MIN_SCORE, MAX_SCORE));
        }
        Ok(())
    }

    /// Expected (within, cross) components of the overall scores, ignoring
    /// clamping and compression. Rater noise and quarter-step rounding
    /// average over raters; the averaged noise then splits `(M−1)/M` within
    /// and `1/M` across groups.
    pub fn expected_components(&self) -> (f64, f64) {
        let (e1, e2) = conflict_moments();
        let c = self.consensus_coupling;
        let noise_sq = self.rater_noise.powi(2) * (1.0 + 2.0 * c * e1 + c * c * e2);
        let rounding = RATING_STEP * RATING_STEP / 12.0;
        let r = self.n_raters as f64;
        let per_image = if self.rater_noise > 0.0 { (noise_sq + rounding) / r } else { rounding };
        let m = self.n_methods as f64;
        (
            self.method_spread.powi(2) + per_image * (m - 1.0) / m,
            self.scene_spread.powi(2) + per_image / m,
        )
    }
}

/// First and second moments of the planted-δ mixture.
fn conflict_moments() -> (f64, f64) {
    let k = CONFLICT_BANDS.len() as f64;
    let e1 = CONFLICT_BANDS.iter().map(|(a, b)| (a + b) / 2.0).sum::<f64>() / k;
    let e2 = CONFLICT_BANDS
        .iter()
        .map(|(a, b)| (a * a + a * b + b * b) / 3.0)
        .sum::<f64>()
        / k;
    (e1, e2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub annotations: Vec<AnnotatedImage>,
    /// Latent quality per image, aligned with `annotations`.
    pub latent: Vec<f64>,
    /// δ drawn before any shrinking needed to keep sub-scores in range.
    pub planted_delta: Vec<f64>,
    /// Per-rater overall ratings; their mean is the annotation's overall.
    pub ratings: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

/// `k` stratified normal quantiles in random order, standardized to mean 0
/// and population std `spread`.
fn stratified_effects(k: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if k < 2 || spread == 0.0 {
        return vec![0.0; k];
    }
    let mut v: Vec<f64> = (0..k).map(|i| norm_ppf((i as f64 + 0.5) / k as f64)).collect();
    v.shuffle(rng);
    let mean = v.iter().sum::<f64>() / k as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    v.iter().map(|x| (x - mean) / std * spread).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Zero-mean direction with unit population std.
fn conflict_direction(rng: &mut ChaCha8Rng) -> [f64; N_SUBSCORES] {
    loop {
        let raw: [f64; N_SUBSCORES] = std::array::from_fn(|_| normal(rng));
        let mean = raw.iter().sum::<f64>() / N_SUBSCORES as f64;
        let centered = raw.map(|x| x - mean);
        let std = (centered.iter().map(|x| x * x).sum::<f64>() / N_SUBSCORES as f64).sqrt();
        if std > 1e-3 {
            return centered.map(|x| x / std);
        }
    }
}

/// Largest conflict `≤ delta` keeping `overall + δ·v` inside the score range.
fn feasible_conflict(delta: f64, overall: f64, v: &[f64; N_SUBSCORES]) -> f64 {
    v.iter().fold(delta, |d, &vk| {
        if vk > 0.0 {
            d.min((MAX_SCORE - overall) / vk)
        } else if vk < 0.0 {
            d.min((overall - MIN_SCORE) / -vk)
        } else {
            d
        }
    })
}

fn quarter_round(x: f64) -> f64 {
    ((x / RATING_STEP).round() * RATING_STEP).clamp(MIN_SCORE, MAX_SCORE)
}

/// Draws a corpus. Scene, method, per-image and feature randomness come from
/// separate streams of the seed, so feature settings do not change scores.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut scene_rng = stream_rng(cfg.seed, 1);
    let mut method_rng = stream_rng(cfg.seed, 2);
    let mut image_rng = stream_rng(cfg.seed, 3);
    let mut feature_rng = stream_rng(cfg.seed, 4);

    let scenes = stratified_effects(cfg.n_groups, cfg.scene_spread, &mut scene_rng);
    let mut unit_direction = || -> Vec<f64> {
        let raw: Vec<f64> = (0..cfg.feature_dim).map(|_| normal(&mut feature_rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        raw.iter().map(|x| x / norm).collect()
    };
    let loading = unit_direction();
    let conflict_loading = unit_direction();
    let high_band = CONFLICT_BANDS[2].0;

    let n_images = cfg.n_groups * cfg.n_methods;
    let mut corpus = SynthCorpus {
        config: *cfg,
        annotations: Vec::with_capacity(n_images),
        latent: Vec::with_capacity(n_images),
        planted_delta: Vec::with_capacity(n_images),
        ratings: Vec::with_capacity(n_images),
        features: Vec::with_capacity(n_images),
    };
    for (g, &scene) in scenes.iter().enumerate() {
        let methods = stratified_effects(cfg.n_methods, cfg.method_spread, &mut method_rng);
        for (k, &method) in methods.iter().enumerate() {
            let (lo, hi) = CONFLICT_BANDS[image_rng.random_range(0..CONFLICT_BANDS.len())];
            let delta = image_rng.random_range(lo..hi);
            let mut latent = cfg.base_quality + scene + method;
            if delta > high_band {
                latent = cfg.base_quality + (1.0 - cfg.conflict_compression) * (latent - cfg.base_quality);
            }
            let noise_std = cfg.rater_noise * (1.0 + cfg.consensus_coupling * delta);
            let ratings: Vec<f64> = (0..cfg.n_raters)
                .map(|_| quarter_round(latent + noise_std * normal(&mut image_rng)))
                .collect();
            let overall = ratings.iter().sum::<f64>() / cfg.n_raters as f64;
            let v = conflict_direction(&mut image_rng);
            let d = feasible_conflict(delta, overall, &v);
            let sub_scores = v.map(|vk| (overall + d * vk).clamp(MIN_SCORE, MAX_SCORE));
            let features = loading
                .iter()
                .zip(&conflict_loading)
                .map(|(w, u)| {
                    (latent - cfg.base_quality) * w
                        + cfg.conflict_signal * delta * u
                        + cfg.feature_noise * normal(&mut feature_rng)
                })
                .collect();
            corpus.annotations.push(AnnotatedImage {
                image_id: format!("s{g:03}_m{k:02}"),
                group_id: format!("s{g:03}"),
                method_id: format!("m{k:02}"),
                sub_scores,
                overall,
            });
            corpus.latent.push(latent);
            corpus.planted_delta.push(delta);
            corpus.ratings.push(ratings);
            corpus.features.push(features);
        }
    }
    Ok(corpus)
}

impl SynthCorpus {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.annotations
            .iter()
            .enumerate()
            .map(|(i, a)| (a.image_id.as_str(), i))
            .collect()
    }

    /// Population std of each image's rater ratings.
    pub fn rater_std(&self) -> Vec<f64> {
        self.ratings
            .iter()
            .map(|r| {
                let m = r.iter().sum::<f64>() / r.len() as f64;
                (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
            })
            .collect()
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.annotations.iter().map(|a| a.group_id.clone()).collect()
    }

    /// Writes `annotations.csv`, `raters.jsonl`, `features.csv` and `latent.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_annotations(&dir.join("annotations.csv"), AnnotationFormat::Csv, &self.annotations)?;
        let raters: Vec<RaterRecord> = self
            .annotations
            .iter()
            .zip(&self.ratings)
            .map(|(a, r)| RaterRecord {
                image_id: a.image_id.clone(),
                ratings: r.clone(),
            })
            .collect();
        write_jsonl(BufWriter::new(File::create(dir.join("raters.jsonl"))?), &raters)?;

        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("features.csv"))?));
        let mut header = vec!["image_id".to_string()];
        header.extend((0..self.config.feature_dim).map(|k| format!("f{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (a, f) in self.annotations.iter().zip(&self.features) {
            let mut row = vec![a.image_id.clone()];
            row.extend(f.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("latent.csv"))?));
        w.write_record(["image_id", "latent", "planted_delta"]).map_err(csv_err)?;
        for ((a, l), d) in self.annotations.iter().zip(&self.latent).zip(&self.planted_delta) {
            w.write_record([a.image_id.clone(), l.to_string(), d.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a directory written by [`SynthCorpus::save`]. The returned
    /// config only carries `feature_dim` and the observed counts.
    pub fn load(dir: &Path) -> Result<Self> {
        let annotations = load_annotations(&dir.join("annotations.csv"), AnnotationFormat::Csv)?;
        let ids: HashMap<&str, usize> = annotations
            .iter()
            .enumerate()
            .map(|(i, a)| (a.image_id.as_str(), i))
            .collect();
        let n = annotations.len();

        let raters: Vec<RaterRecord> = read_jsonl(BufReader::new(File::open(dir.join("raters.jsonl"))?))?;
        let mut ratings = vec![Vec::new(); n];
        for r in raters {
            ratings[lookup(&ids, &r.image_id)?] = r.ratings;
        }

        let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(dir.join("features.csv"))?));
        let dim = rdr.headers().map_err(csv_err)?.len().saturating_sub(1);
        let mut features = vec![Vec::new(); n];
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            let i = lookup(&ids, &row[0])?;
            features[i] = row.iter().skip(1).map(parse_f64).collect::<Result<_>>()?;
        }
        if let Some(i) = features.iter().position(|f| f.len() != dim) {
            return Err(Error::invalid(format!("features missing for `{}`", annotations[i].image_id)));
        }

        let mut latent = vec![f64::NAN; n];
        let mut planted_delta = vec![f64::NAN; n];
        let latent_path = dir.join("latent.csv");
        if latent_path.exists() {
            let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(latent_path)?));
            for row in rdr.records() {
                let row = row.map_err(csv_err)?;
                let i = lookup(&ids, &row[0])?;
                latent[i] = parse_f64(&row[1])?;
                planted_delta[i] = parse_f64(&row[2])?;
            }
        }

        let groups: std::collections::BTreeSet<&str> = annotations.iter().map(|a| a.group_id.as_str()).collect();
        let config = SynthConfig {
            n_groups: groups.len(),
            n_raters: ratings.first().map_or(0, Vec::len),
            feature_dim: dim,
            ..Default::default()
        };
        Ok(Self {
            config,
            annotations,
            latent,
            planted_delta,
            ratings,
            features,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
}

fn lookup(ids: &HashMap<&str, usize>, id: &str) -> Result<usize> {
    ids.get(id).copied().ok_or_else(|| Error::MissingId(id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterRecord {
    pub image_id: String,
    pub ratings: Vec<f64>,
}

/// Linear map from features to the five level logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScorer {
    /// One row of level weights per feature.
    pub weights: Vec<[f64; N_LEVELS]>,
    pub bias: [f64; N_LEVELS],
}

impl ToyScorer {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            weights: vec![[0.0; N_LEVELS]; feature_dim],
            bias: [0.0; N_LEVELS],
        }
    }

    pub fn logits(&self, x: &[f64]) -> [f64; N_LEVELS] {
        let mut z = self.bias;
        for (xf, row) in x.iter().zip(&self.weights) {
            for l in 0..N_LEVELS {
                z[l] += xf * row[l];
            }
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.bias.iter().chain(self.weights.iter().flatten()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer steps; each consumes `sampler.accumulation` micro-batches.
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.05,
            momentum: 0.9,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub scorer: ToyScorer,
    /// Per step: mean breakdown over that step's micro-batches, pair counts summed.
    pub curve: Vec<LossBreakdown<f64>>,
}

/// Gradient descent with momentum on the tripartite loss over sampler
/// micro-batches drawn from the train-bucket groups. Starts from zero
/// parameters.
pub fn train_toy(corpus: &SynthCorpus, split: &SplitAssignment, hp: &Hyperparams<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    hp.validate()?;
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::out_of_range("lr", cfg.lr, 0.0, f64::INFINITY));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::out_of_range("momentum", cfg.momentum, 0.0, 1.0));
    }
    let dim = corpus.features.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::invalid("corpus has no features"));
    }
    let train: Vec<AnnotatedImage> = corpus
        .annotations
        .iter()
        .filter(|a| split.bucket(&a.group_id) == Some(Bucket::Train))
        .cloned()
        .collect();
    let index = corpus.index_of();
    let labels: HashMap<&str, SoftLabel<f64>> = train
        .iter()
        .map(|a| Ok((index_key(&index, &a.image_id)?, build_soft_label(a, hp)?)))
        .collect::<Result<_>>()?;

    let mut scorer = ToyScorer::zeros(dim);
    let mut vel = ToyScorer::zeros(dim);
    let mut stream = BatchStream::new(&train, cfg.sampler)?;
    let acc = cfg.sampler.accumulation;
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grad = ToyScorer::zeros(dim);
        let mut mean = LossBreakdown::<f64>::default();
        for _ in 0..acc {
            let mb = stream.next().ok_or_else(|| Error::invalid("sampler produced no batch"))?;
            let batch: Vec<BatchItem<f64>> = mb
                .image_ids
                .iter()
                .map(|id| {
                    let i = index[id.as_str()];
                    BatchItem {
                        image_id: id.clone(),
                        group_id: corpus.annotations[i].group_id.clone(),
                        logits: scorer.logits(&corpus.features[i]),
                        label: labels[id.as_str()],
                    }
                })
                .collect();
            let (br, dz) = match tripartite_loss_and_grad(&batch, hp) {
                Ok(v) => v,
                Err(Error::Numerical(_)) => return Err(Error::Diverged { step }),
                Err(e) => return Err(e),
            };
            let w = 1.0 / acc as f64;
            mean.kl += br.kl * w;
            mean.fid += br.fid * w;
            mean.xfid += br.xfid * w;
            mean.pl += br.pl * w;
            mean.total += br.total * w;
            mean.n_within_pairs += br.n_within_pairs;
            mean.n_cross_pairs += br.n_cross_pairs;
            for (id, g) in mb.image_ids.iter().zip(&dz) {
                let x = &corpus.features[index[id.as_str()]];
                for l in 0..N_LEVELS {
                    grad.bias[l] += g[l] * w;
                }
                for (row, xf) in grad.weights.iter_mut().zip(x) {
                    for l in 0..N_LEVELS {
                        row[l] += xf * g[l] * w;
                    }
                }
            }
        }
        if !mean.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        curve.push(mean);
        for l in 0..N_LEVELS {
            vel.bias[l] = cfg.momentum * vel.bias[l] + grad.bias[l];
            scorer.bias[l] -= cfg.lr * vel.bias[l];
        }
        for ((vrow, grow), srow) in vel.weights.iter_mut().zip(&grad.weights).zip(scorer.weights.iter_mut()) {
            for l in 0..N_LEVELS {
                vrow[l] = cfg.momentum * vrow[l] + grow[l];
                srow[l] -= cfg.lr * vrow[l];
            }
        }
        if !scorer.is_finite() {
            return Err(Error::Diverged { step });
        }
    }
    Ok(TrainOutcome { scorer, curve })
}

fn index_key<'a>(index: &HashMap<&'a str, usize>, id: &str) -> Result<&'a str> {
    index
        .get_key_value(id)
        .map(|(k, _)| *k)
        .ok_or_else(|| Error::MissingId(id.to_string()))
}

/// Predictions for `ids` (all images when `None`), in that order.
pub fn predict(scorer: &ToyScorer, corpus: &SynthCorpus, ids: Option<&[String]>) -> Result<Vec<PredictionRecord>> {
    let index = corpus.index_of();
    let chosen: Vec<usize> = match ids {
        Some(ids) => ids.iter().map(|id| lookup(&index, id)).collect::<Result<_>>()?,
        None => (0..corpus.len()).collect(),
    };
    chosen
        .into_iter()
        .map(|i| PredictionRecord::from_logits(corpus.annotations[i].image_id.clone(), scorer.logits(&corpus.features[i])))
        .collect()
}

//! Domain types, file formats and group-disjoint splitting.
//!
//! Annotations travel as CSV with the fixed header
//! `image_id,group_id,method_id,s1,s2,s3,s4,overall` (JSON-Lines with the
//! same field names is accepted too). Predictions are JSON-Lines with
//! `image_id`, optional `logits`, `mu_hat` and `sigma_hat`. Split files are
//! CSV `group_id,bucket`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::gaussian_bin;
use crate::losses::softmax_levels;
use crate::rng::stream_rng;
use crate::Scalar;

/// Number of discrete quality levels.
pub const N_LEVELS: usize = 5;
/// Number of sub-dimension scores per image.
pub const N_SUBSCORES: usize = 4;
pub const MIN_SCORE: f64 = 1.0;
pub const MAX_SCORE: f64 = 5.0;

/// A discrete quality level in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QualityLevel(u8);

impl QualityLevel {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=N_LEVELS as u8).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::out_of_range("quality level", value as f64, 1.0, 5.0))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based index into a level probability vector.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all() -> impl Iterator<Item = QualityLevel> {
        (1..=N_LEVELS as u8).map(QualityLevel)
    }
}

impl TryFrom<u8> for QualityLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QualityLevel> for u8 {
    fn from(l: QualityLevel) -> u8 {
        l.0
    }
}

/// Level value (1..=5) for zero-based index `i`.
#[inline]
pub(crate) fn level<T: Scalar>(i: usize) -> T {
    T::from_usize_lossy(i + 1)
}

/// Probability vector over the five quality levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelDistribution<T> {
    probs: [T; N_LEVELS],
}

impl<T: Scalar> LevelDistribution<T> {
    /// Validates non-negativity and unit mass.
    pub fn new(probs: [T; N_LEVELS]) -> Result<Self> {
        let mut sum = T::zero();
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < T::zero() {
                return Err(Error::invalid(format!(
                    "level {} probability {} is negative or non-finite",
                    i + 1,
                    p
                )));
            }
            sum = sum + p;
        }
        if (sum - T::one()).abs() > T::prob_tolerance() {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: [T; N_LEVELS]) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::invalid("weights must have positive finite mass"));
        }
        let mut probs = weights;
        for p in probs.iter_mut() {
            if *p < T::zero() {
                return Err(Error::invalid("weights must be non-negative"));
            }
            *p = *p / total;
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_raw(probs: [T; N_LEVELS]) -> Self {
        Self { probs }
    }

    pub fn uniform() -> Self {
        Self {
            probs: [T::one() / T::from_usize_lossy(N_LEVELS); N_LEVELS],
        }
    }

    pub fn one_hot(level: QualityLevel) -> Self {
        let mut probs = [T::zero(); N_LEVELS];
        probs[level.index()] = T::one();
        Self { probs }
    }

    pub fn probs(&self) -> &[T; N_LEVELS] {
        &self.probs
    }

    pub fn prob(&self, level: QualityLevel) -> T {
        self.probs[level.index()]
    }

    /// `Σ l·p_l`.
    pub fn expectation(&self) -> T {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| level::<T>(i) * p)
            .sum()
    }

    pub fn variance(&self) -> T {
        let mean = self.expectation();
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let d = level::<T>(i) - mean;
                d * d * p
            })
            .sum::<T>()
            .max(T::zero())
    }

    pub fn std_dev(&self) -> T {
        self.variance().sqrt()
    }

    /// Shannon entropy in nats, `0·ln 0 = 0`.
    pub fn entropy(&self) -> T {
        -self
            .probs
            .iter()
            .filter(|&&p| p > T::zero())
            .map(|&p| p * p.ln())
            .sum::<T>()
    }
}

/// Soft-label and loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams<T> {
    /// Label-width floor when all sub-scores agree.
    pub sigma0: T,
    /// Width gained per unit of sub-score disagreement.
    pub lambda_c: T,
    pub sigma_min: T,
    pub sigma_max: T,
    /// Weight of the within-group fidelity term.
    pub lambda_fid: T,
    /// Weight of the cross-group fidelity term.
    pub lambda_xfid: T,
    /// Weight of the diagnostic Plackett–Luce term (off at 0).
    pub lambda_pl: T,
    pub pl_variant: PlVariant,
}

/// Utilities fed to the diagnostic Plackett–Luce term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlVariant {
    /// Listwise over the batch with the expectation readout as utility.
    #[default]
    ScalarReadout,
    /// Listwise over each image's five levels with `ln q_l` as utilities.
    /// Known to fight the KL term; diagnostic only.
    LevelDistribution,
}

impl<T: Scalar> Default for Hyperparams<T> {
    fn default() -> Self {
        Self {
            sigma0: T::lit(0.3),
            lambda_c: T::lit(0.45),
            sigma_min: T::lit(0.15),
            sigma_max: T::lit(1.2),
            lambda_fid: T::lit(1.0),
            lambda_xfid: T::lit(0.5),
            lambda_pl: T::zero(),
            pl_variant: PlVariant::ScalarReadout,
        }
    }
}

impl<T: Scalar> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("sigma0", self.sigma0),
            ("lambda_c", self.lambda_c),
            ("sigma_min", self.sigma_min),
            ("sigma_max", self.sigma_max),
            ("lambda_fid", self.lambda_fid),
            ("lambda_xfid", self.lambda_xfid),
            ("lambda_pl", self.lambda_pl),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.sigma_min > T::zero() && self.sigma_min <= self.sigma_max) {
            return Err(Error::invalid(format!(
                "need 0 < sigma_min <= sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    /// Copy with all pairwise and listwise weights zeroed (KL-only objective).
    pub fn kl_only(&self) -> Self {
        Self {
            lambda_fid: T::zero(),
            lambda_xfid: T::zero(),
            lambda_pl: T::zero(),
            ..*self
        }
    }
}

/// One fused image with its sub-dimension and overall scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    /// Source-pair (scene) the image was fused from.
    pub group_id: String,
    pub method_id: String,
    /// Thermal retention, texture, artifacts, sharpness.
    pub sub_scores: [f64; N_SUBSCORES],
    pub overall: f64,
}

fn check_score(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && (MIN_SCORE..=MAX_SCORE).contains(&v) {
        Ok(())
    } else {
        Err(Error::out_of_range(field, v, MIN_SCORE, MAX_SCORE))
    }
}

impl AnnotatedImage {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::invalid("empty image_id"));
        }
        for (k, &s) in self.sub_scores.iter().enumerate() {
            check_score(&format!("s{}", k + 1), s)?;
        }
        check_score("overall", self.overall)
    }
}

/// A scorer's output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<[f64; N_LEVELS]>,
    pub mu_hat: f64,
    pub sigma_hat: f64,
}

impl PredictionRecord {
    /// Builds a record whose summary is read off the softmaxed logits.
    pub fn from_logits(image_id: impl Into<String>, logits: [f64; N_LEVELS]) -> Result<Self> {
        let q = softmax_levels(logits)?;
        Ok(Self {
            image_id: image_id.into(),
            logits: Some(logits),
            mu_hat: q.expectation(),
            sigma_hat: q.std_dev(),
        })
    }

    pub fn from_summary(image_id: impl Into<String>, mu_hat: f64, sigma_hat: f64) -> Self {
        Self {
            image_id: image_id.into(),
            logits: None,
            mu_hat,
            sigma_hat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_hat.is_finite() {
            return Err(Error::invalid(format!("{}: mu_hat not finite", self.image_id)));
        }
        if !(self.sigma_hat.is_finite() && self.sigma_hat >= 0.0) {
            return Err(Error::invalid(format!(
                "{}: sigma_hat must be finite and >= 0",
                self.image_id
            )));
        }
        if let Some(logits) = self.logits {
            let q = softmax_levels(logits)?;
            let (mu, sd) = (q.expectation(), q.std_dev());
            if (mu - self.mu_hat).abs() > 1e-9 || (sd - self.sigma_hat).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "{}: stored (mu_hat, sigma_hat) = ({}, {}) disagree with logits ({mu}, {sd})",
                    self.image_id, self.mu_hat, self.sigma_hat
                )));
            }
        }
        Ok(())
    }

    /// Predicted level distribution: softmaxed logits when present, otherwise
    /// the Gaussian-binned `(mu_hat, sigma_hat)` summary.
    pub fn distribution(&self) -> Result<LevelDistribution<f64>> {
        match self.logits {
            Some(l) => softmax_levels(l),
            None => gaussian_bin(
                self.mu_hat.clamp(MIN_SCORE, MAX_SCORE),
                self.sigma_hat.max(SIGMA_HAT_FLOOR),
            ),
        }
    }
}

/// Floor applied to predicted widths before they are used as Gaussian scales.
pub const SIGMA_HAT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Train,
    Val,
    Test,
    Cal,
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bucket::Train => "train",
            Bucket::Val => "val",
            Bucket::Test => "test",
            Bucket::Cal => "cal",
        })
    }
}

/// Assignment of every group to exactly one bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment {
    buckets: BTreeMap<String, Bucket>,
}

impl SplitAssignment {
    pub fn from_map(buckets: BTreeMap<String, Bucket>) -> Self {
        Self { buckets }
    }

    pub fn bucket(&self, group: &str) -> Option<Bucket> {
        self.buckets.get(group).copied()
    }

    pub fn groups_in(&self, bucket: Bucket) -> impl Iterator<Item = &str> {
        self.buckets
            .iter()
            .filter(move |(_, &b)| b == bucket)
            .map(|(g, _)| g.as_str())
    }

    pub fn count(&self, bucket: Bucket) -> usize {
        self.groups_in(bucket).count()
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Bucket)> {
        self.buckets.iter().map(|(g, &b)| (g.as_str(), b))
    }
}

/// Sizes that sum to `total` and are closest to `fractions · total`
/// (largest-remainder apportionment; ties go to the earlier bucket).
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

/// Seeded group-disjoint train/val/test split.
pub fn group_disjoint_split(
    groups: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (ftr, fva, fte) = fractions;
    if [ftr, fva, fte].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::invalid("split fractions must be positive"));
    }
    if (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split fractions must sum to 1"));
    }
    let mut unique: Vec<String> = groups
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if unique.is_empty() {
        return Err(Error::invalid("no groups to split"));
    }
    unique.shuffle(&mut stream_rng(seed, 0));
    let sizes = largest_remainder(unique.len(), &[ftr, fva, fte]);
    let buckets = unique
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let b = if i < sizes[0] {
                Bucket::Train
            } else if i < sizes[0] + sizes[1] {
                Bucket::Val
            } else {
                Bucket::Test
            };
            (g, b)
        })
        .collect();
    Ok(SplitAssignment { buckets })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Csv,
    Jsonl,
}

impl AnnotationFormat {
    /// Guesses from the file extension (`.jsonl`/`.json` vs anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => AnnotationFormat::Jsonl,
            _ => AnnotationFormat::Csv,
        }
    }
}

pub const ANNOTATION_HEADER: [&str; 8] = [
    "image_id", "group_id", "method_id", "s1", "s2", "s3", "s4", "overall",
];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRow {
    image_id: String,
    group_id: String,
    method_id: String,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    overall: f64,
}

impl From<AnnotationRow> for AnnotatedImage {
    fn from(r: AnnotationRow) -> Self {
        AnnotatedImage {
            image_id: r.image_id,
            group_id: r.group_id,
            method_id: r.method_id,
            sub_scores: [r.s1, r.s2, r.s3, r.s4],
            overall: r.overall,
        }
    }
}

impl From<&AnnotatedImage> for AnnotationRow {
    fn from(a: &AnnotatedImage) -> Self {
        AnnotationRow {
            image_id: a.image_id.clone(),
            group_id: a.group_id.clone(),
            method_id: a.method_id.clone(),
            s1: a.sub_scores[0],
            s2: a.sub_scores[1],
            s3: a.sub_scores[2],
            s4: a.sub_scores[3],
            overall: a.overall,
        }
    }
}

fn parse_err(line: u64, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(line, format!("{other:?}")),
    }
}

fn finish_annotations(rows: Vec<(u64, AnnotatedImage)>) -> Result<Vec<AnnotatedImage>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, img) in rows {
        img.validate().map_err(|e| parse_err(line, e))?;
        if !seen.insert(img.image_id.clone()) {
            return Err(Error::DuplicateId(img.image_id));
        }
        out.push(img);
    }
    Ok(out)
}

pub fn read_annotations_csv<R: Read>(reader: R) -> Result<Vec<AnnotatedImage>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(ANNOTATION_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                ANNOTATION_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: AnnotationRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e))?;
        rows.push((line, row.into()));
    }
    finish_annotations(rows)
}

pub fn read_annotations_jsonl<R: Read>(reader: R) -> Result<Vec<AnnotatedImage>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: AnnotationRow =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        rows.push((lineno, row.into()));
    }
    finish_annotations(rows)
}

/// Loads and validates an annotation file.
pub fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<Vec<AnnotatedImage>> {
    let f = File::open(path)?;
    match format {
        AnnotationFormat::Csv => read_annotations_csv(f),
        AnnotationFormat::Jsonl => read_annotations_jsonl(f),
    }
}

pub fn write_annotations_csv<W: Write>(writer: W, images: &[AnnotatedImage]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(ANNOTATION_HEADER).map_err(csv_err)?;
    for img in images {
        w.serialize(AnnotationRow::from(img)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_annotations(path: &Path, format: AnnotationFormat, images: &[AnnotatedImage]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    match format {
        AnnotationFormat::Csv => write_annotations_csv(f, images),
        AnnotationFormat::Jsonl => {
            let rows: Vec<AnnotationRow> = images.iter().map(AnnotationRow::from).collect();
            write_jsonl(f, &rows)
        }
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, S: Serialize>(mut writer: W, items: &[S]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|e| Error::invalid(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<R: Read, S: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<S>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(i as u64 + 1, e))?);
    }
    Ok(out)
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let recs: Vec<PredictionRecord> = read_jsonl(reader)?;
    let mut seen = HashSet::new();
    for (i, r) in recs.iter().enumerate() {
        r.validate().map_err(|e| parse_err(i as u64 + 1, e))?;
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::DuplicateId(r.image_id.clone()));
        }
    }
    Ok(recs)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_predictions(File::open(path)?)
}

pub fn save_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), preds)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    group_id: String,
    bucket: Bucket,
}

pub fn save_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (g, b) in split.iter() {
        w.serialize(SplitRow {
            group_id: g.to_string(),
            bucket: b,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<SplitAssignment> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut buckets = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: SplitRow = row.map_err(csv_err)?;
        if buckets.insert(row.group_id.clone(), row.bucket).is_some() {
            return Err(Error::invalid(format!("group `{}` assigned twice", row.group_id)));
        }
    }
    Ok(SplitAssignment { buckets })
}

/// Index of records by image id, rejecting ids absent from `ids`.
pub fn align_by_id<'a, R>(
    ids: impl IntoIterator<Item = &'a str>,
    records: &'a [R],
    id_of: impl Fn(&R) -> &str,
) -> Result<Vec<&'a R>> {
    let index: BTreeMap<&str, &R> = records.iter().map(|r| (id_of(r), r)).collect();
    ids.into_iter()
        .map(|id| index.get(id).copied().ok_or_else(|| Error::MissingId(id.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ONE_ROW: &str = "image_id,group_id,method_id,s1,s2,s3,s4,overall\na,sp1,M1,3,3,3,4,3.25\n";

    #[test]
    fn loads_single_row() {
        let imgs = read_annotations_csv(ONE_ROW.as_bytes()).unwrap();
        assert_eq!(
            imgs,
            vec![AnnotatedImage {
                image_id: "a".into(),
                group_id: "sp1".into(),
                method_id: "M1".into(),
                sub_scores: [3.0, 3.0, 3.0, 4.0],
                overall: 3.25,
            }]
        );
    }

    #[test]
    fn overall_out_of_range_names_field() {
        let src = "image_id,group_id,method_id,s1,s2,s3,s4,overall\na,sp1,M1,3,3,3,4,6.0\n";
        let err = read_annotations_csv(src.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overall"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let src = format!("{ONE_ROW}a,sp2,M2,1,1,1,1,1\n");
        assert!(matches!(
            read_annotations_csv(src.as_bytes()),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn bad_header_and_bad_number() {
        let src = "id,group_id,method_id,s1,s2,s3,s4,overall\n";
        assert!(matches!(read_annotations_csv(src.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let src = "image_id,group_id,method_id,s1,s2,s3,s4,overall\na,g,m,3,x,3,3,3\n";
        assert!(matches!(read_annotations_csv(src.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn jsonl_annotations() {
        let src = r#"{"image_id":"a","group_id":"g","method_id":"m","s1":1,"s2":2,"s3":3,"s4":4,"overall":2.5}

{"image_id":"b","group_id":"g","method_id":"m","s1":1,"s2":2,"s3":3,"s4":0.5,"overall":2.5}"#;
        let err = read_annotations_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn split_sizes() {
        let groups: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
        let s = group_disjoint_split(&groups, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!((s.count(Bucket::Train), s.count(Bucket::Val), s.count(Bucket::Test)), (8, 1, 1));
        assert_eq!(s, group_disjoint_split(&groups, (0.8, 0.1, 0.1), 42).unwrap());

        let groups: Vec<String> = (0..850).map(|i| format!("sp{i:03}")).collect();
        let s = group_disjoint_split(&groups, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(
            (s.count(Bucket::Train), s.count(Bucket::Val), s.count(Bucket::Test)),
            (680, 85, 85)
        );
        assert!(group_disjoint_split(&[], (0.8, 0.1, 0.1), 1).is_err());
        assert!(group_disjoint_split(&groups, (0.8, 0.1, 0.2), 1).is_err());
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(7, &[0.5, 0.25, 0.25]), vec![3, 2, 2]);
        assert_eq!(largest_remainder(9, &[0.5, 0.3, 0.2]), vec![4, 3, 2]);
        assert_eq!(largest_remainder(3, &[1.0 / 3.0; 3]), vec![1, 1, 1]);
    }

    #[test]
    fn prediction_consistency_checked() {
        let mut r = PredictionRecord::from_logits("x", [0.1, -0.3, 1.2, 0.4, 0.0]).unwrap();
        r.validate().unwrap();
        r.mu_hat += 1e-6;
        assert!(r.validate().is_err());
    }

    #[test]
    fn uniform_logits_summary() {
        let r = PredictionRecord::from_logits("x", [0.0; 5]).unwrap();
        assert!((r.mu_hat - 3.0).abs() < 1e-15);
        assert!((r.sigma_hat - 2f64.sqrt()).abs() < 1e-15);
    }

    fn arb_image() -> impl Strategy<Value = AnnotatedImage> {
        (
            "[a-z0-9_]{1,8}",
            "[a-z0-9]{1,4}",
            proptest::array::uniform4(1.0f64..=5.0),
            1.0f64..=5.0,
        )
            .prop_map(|(id, g, subs, overall)| AnnotatedImage {
                image_id: id,
                group_id: g,
                method_id: "m".into(),
                sub_scores: subs,
                overall,
            })
    }

    proptest! {
        #[test]
        fn annotation_csv_round_trip(imgs in proptest::collection::vec(arb_image(), 0..20)) {
            let mut seen = HashSet::new();
            let imgs: Vec<_> = imgs.into_iter().filter(|i| seen.insert(i.image_id.clone())).collect();
            let mut buf = Vec::new();
            write_annotations_csv(&mut buf, &imgs).unwrap();
            let back = read_annotations_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, imgs);
        }

        #[test]
        fn prediction_jsonl_round_trip(logits in proptest::array::uniform5(-8.0f64..8.0)) {
            let recs = vec![
                PredictionRecord::from_logits("a", logits).unwrap(),
                PredictionRecord::from_summary("b", 2.75, 0.4),
            ];
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &recs).unwrap();
            prop_assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
        }

        #[test]
        fn splits_partition_groups(n in 1usize..200, seed in any::<u64>()) {
            let groups: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
            let s = group_disjoint_split(&groups, (0.8, 0.1, 0.1), seed).unwrap();
            prop_assert_eq!(s.len(), n);
            let total = s.count(Bucket::Train) + s.count(Bucket::Val) + s.count(Bucket::Test);
            prop_assert_eq!(total, n);
        }
    }
}

//! `qualkit`: soft labels, tripartite loss, evaluation, calibration and
//! analysis on annotation and prediction files.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qualkit::analysis::{
    boundary_perturbation, counterfactual_ceiling, stratify_by_delta, variance_decomposition, TertileBoundaries,
};
use qualkit::calibration::{monte_carlo_calibration, CalibrationRecord};
use qualkit::datamodel::{
    align_by_id, group_disjoint_split, load_annotations, load_predictions, load_split, read_jsonl, save_predictions,
    write_jsonl, AnnotatedImage, AnnotationFormat, Bucket, Hyperparams, LevelDistribution, N_LEVELS, N_SUBSCORES,
};
use qualkit::gradcheck::run_gradcheck;
use qualkit::labels::{build_soft_label, soft_label, LabelRecord, SoftLabel};
use qualkit::losses::{tripartite_loss_and_grad, BatchItem};
use qualkit::metrics::{evaluate, paired_bootstrap, plcc, srcc, BootstrapMetric};
use qualkit::sampler::{make_epoch, BatchStream, SamplerConfig};
use qualkit::synthlab::{generate, predict, train_toy, SynthCorpus, TrainConfig};

use config::{read_toml, RunConfig};
use report::{error_json, Report};

#[derive(Parser)]
#[command(name = "qualkit", version, about = "Consensus-aware soft labels, rank-fidelity losses and evaluation for quality scorers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; overrides every seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run config with optional tables [hyperparams], [sampler],
    /// [synth], [train], [calibration], [gradcheck], [analysis], [bootstrap].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Print a human-readable table to stdout.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Soft-label construction.
    #[command(subcommand)]
    Labels(LabelsCmd),
    /// Tripartite loss evaluation and gradient checks.
    #[command(subcommand)]
    Loss(LossCmd),
    /// Same as `loss gradcheck`.
    Gradcheck(GradcheckArgs),
    /// Pooled and per-group rank metrics plus prediction-vs-label KL.
    Eval(EvalArgs),
    /// Coverage-based calibration: single temperature and affine width fit
    /// over Monte-Carlo group-disjoint splits.
    Calibrate(CalibrateArgs),
    /// Per-conflict-stratum SRCC and GT spread.
    Stratify(StratifyArgs),
    /// Counterfactual pooled SRCC when the high-conflict stratum is held at a
    /// floor.
    Ceiling(CeilingArgs),
    /// Within-group / cross-group split of GT variance.
    Vardecomp(VardecompArgs),
    /// Paired bootstrap test between two prediction files.
    Bootstrap(BootstrapArgs),
    /// Group-balanced micro-batch plan.
    Sample(SampleArgs),
    /// Generate a synthetic multi-rater corpus.
    Synth(SynthArgs),
    /// Train the linear toy scorer on a synthetic corpus.
    TrainToy(TrainToyArgs),
}

#[derive(Subcommand)]
enum LabelsCmd {
    /// Build one soft label per annotated image.
    Build(LabelsBuildArgs),
}

#[derive(Subcommand)]
enum LossCmd {
    /// Loss breakdown and logit gradient for one batch.
    Eval(LossEvalArgs),
    /// Analytic gradient vs central finite differences on random batches.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct HpArg {
    /// TOML file with hyperparameter fields (sigma0, lambda_c, sigma_min,
    /// sigma_max, lambda_fid, lambda_xfid, lambda_pl, pl_variant). Overrides
    /// the [hyperparams] table of --config.
    #[arg(long)]
    hp: Option<PathBuf>,
}

#[derive(Args)]
struct LabelsBuildArgs {
    /// Annotation file (.csv or .jsonl).
    #[arg(long)]
    annotations: PathBuf,
    /// Output JSONL of {image_id, delta, sigma, mu, probs}.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hp: HpArg,
}

#[derive(Args)]
struct LossEvalArgs {
    /// JSONL batch: each line has image_id, group_id, logits[5] and either
    /// (probs[5], mu, sigma) or (sub_scores[4], overall).
    #[arg(long)]
    batch: PathBuf,
    #[command(flatten)]
    hp: HpArg,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random batches.
    #[arg(long)]
    trials: Option<usize>,
    /// Largest tolerated relative error.
    #[arg(long)]
    tol: Option<f64>,
    /// Central-difference step.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct AnnPred {
    /// Annotation file (.csv or .jsonl).
    #[arg(long)]
    annotations: PathBuf,
    /// Prediction JSONL with image_id, mu_hat, sigma_hat and optional logits.
    #[arg(long)]
    predictions: PathBuf,
    /// Split CSV (group_id,bucket); restricts annotations to --bucket.
    #[arg(long, requires = "bucket")]
    split: Option<PathBuf>,
    /// Bucket kept when --split is given.
    #[arg(long, value_parser = parse_bucket)]
    bucket: Option<Bucket>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    io: AnnPred,
    /// Labels JSONL from `labels build`; rebuilt from the annotations if absent.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    hp: HpArg,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    io: AnnPred,
    /// Monte-Carlo calibration/test splits.
    #[arg(long)]
    splits: Option<usize>,
    /// Fraction of groups in the calibration half.
    #[arg(long)]
    cal_fraction: Option<f64>,
    /// Equal-width coverage bins.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
struct StratifyArgs {
    #[command(flatten)]
    io: AnnPred,
    /// Conflict boundaries `low_max,mid_max`; values on a boundary go to the lower stratum.
    #[arg(long, value_parser = parse_boundaries)]
    boundaries: Option<TertileBoundaries>,
    /// Shift of the low boundary for the migration count.
    #[arg(long)]
    shift: Option<f64>,
}

#[derive(Args)]
struct CeilingArgs {
    #[command(flatten)]
    io: AnnPred,
    /// SRCC the high-conflict stratum is degraded to.
    #[arg(long)]
    floor: Option<f64>,
    /// Conflict boundaries `low_max,mid_max`.
    #[arg(long, value_parser = parse_boundaries)]
    boundaries: Option<TertileBoundaries>,
}

#[derive(Args)]
struct VardecompArgs {
    /// Annotation file (.csv or .jsonl).
    #[arg(long)]
    annotations: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Predictions of system A (JSONL).
    #[arg(long)]
    a: PathBuf,
    /// Predictions of system B (JSONL).
    #[arg(long)]
    b: PathBuf,
    /// Annotations providing the ground truth both systems are scored against.
    #[arg(long)]
    annotations: PathBuf,
    /// srcc, plcc or krcc.
    #[arg(long)]
    metric: Option<BootstrapMetric>,
    /// Number of resamples.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Annotation file (.csv or .jsonl).
    #[arg(long)]
    annotations: PathBuf,
    /// Groups per micro-batch.
    #[arg(long)]
    m: Option<usize>,
    /// Images per group.
    #[arg(long)]
    n: Option<usize>,
    /// Micro-batches per optimizer step.
    #[arg(long)]
    accumulation: Option<usize>,
    /// Number of epochs to plan.
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Output JSONL, one micro-batch per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (annotations.csv, raters.jsonl, features.csv, latent.csv).
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of groups (scenes); overrides [synth].n_groups.
    #[arg(long)]
    n_groups: Option<usize>,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Corpus directory written by `synth`.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    hp: HpArg,
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Momentum coefficient in [0, 1).
    #[arg(long)]
    momentum: Option<f64>,
    /// Train all pairwise weights to zero (KL-only objective).
    #[arg(long)]
    kl_only: bool,
    /// Output scorer JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL of predictions for every image.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Optional split CSV output.
    #[arg(long)]
    split_out: Option<PathBuf>,
}

fn parse_bucket(s: &str) -> Result<Bucket, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown bucket `{s}` (train, val, test, cal)"))
}

fn parse_boundaries(s: &str) -> Result<TertileBoundaries, String> {
    s.parse().map_err(|e: qualkit::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    global: Global,
}

impl Ctx {
    fn hp(&self, arg: &HpArg) -> Result<Hyperparams<f64>> {
        let hp = match &arg.hp {
            Some(p) => read_toml(p)?,
            None => self.cfg.hyperparams,
        };
        hp.validate()?;
        Ok(hp)
    }

    fn emit(&self, report: Report) -> Result<()> {
        report.emit(self.global.report.as_deref(), self.global.pretty)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    cfg.apply_seed(cli.global.seed);
    let ctx = Ctx { cfg, global: cli.global };
    match cli.command {
        Command::Labels(LabelsCmd::Build(a)) => labels_build(&ctx, a),
        Command::Loss(LossCmd::Eval(a)) => loss_eval(&ctx, a),
        Command::Loss(LossCmd::Gradcheck(a)) | Command::Gradcheck(a) => gradcheck(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Stratify(a) => stratify(&ctx, a),
        Command::Ceiling(a) => ceiling(&ctx, a),
        Command::Vardecomp(a) => vardecomp(&ctx, a),
        Command::Bootstrap(a) => bootstrap(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::TrainToy(a) => train(&ctx, a),
    }
}

fn annotations(path: &Path) -> Result<Vec<AnnotatedImage>> {
    load_annotations(path, AnnotationFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn predictions(path: &Path) -> Result<Vec<qualkit::datamodel::PredictionRecord>> {
    let preds = load_predictions(path).with_context(|| format!("loading {}", path.display()))?;
    for p in &preds {
        p.validate()?;
    }
    Ok(preds)
}

/// Annotations restricted to the requested bucket, plus predictions.
fn load_pair(io: &AnnPred) -> Result<(Vec<AnnotatedImage>, Vec<qualkit::datamodel::PredictionRecord>)> {
    let mut images = annotations(&io.annotations)?;
    if let (Some(split), Some(bucket)) = (&io.split, io.bucket) {
        let split = load_split(split).with_context(|| format!("loading {}", split.display()))?;
        images.retain(|i| split.bucket(&i.group_id) == Some(bucket));
        if images.is_empty() {
            bail!("no annotated image falls in bucket `{bucket}`");
        }
    }
    Ok((images, predictions(&io.predictions)?))
}

fn io_config(io: &AnnPred) -> serde_json::Value {
    json!({
        "annotations": io.annotations,
        "predictions": io.predictions,
        "split": io.split,
        "bucket": io.bucket,
    })
}

fn labels_build(ctx: &Ctx, a: LabelsBuildArgs) -> Result<ExitCode> {
    let hp = ctx.hp(&a.hp)?;
    let images = annotations(&a.annotations)?;
    let records: Vec<LabelRecord> = images
        .iter()
        .map(|i| Ok(LabelRecord::new(i.image_id.clone(), &build_soft_label(i, &hp)?)))
        .collect::<Result<_>>()?;
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_jsonl(std::io::BufWriter::new(file), &records)?;
    let n = records.len().max(1) as f64;
    let result = json!({
        "n_images": records.len(),
        "mean_delta": records.iter().map(|r| r.delta).sum::<f64>() / n,
        "mean_sigma": records.iter().map(|r| r.sigma).sum::<f64>() / n,
        "out": a.out,
    });
    let config = json!({ "annotations": a.annotations, "hyperparams": hp });
    ctx.emit(Report::new("labels build", None, config, result)?)?;
    Ok(ExitCode::SUCCESS)
}

/// One line of a `loss eval` batch file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchLine {
    pub image_id: String,
    pub group_id: String,
    pub logits: [f64; N_LEVELS],
    #[serde(default)]
    pub probs: Option<[f64; N_LEVELS]>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub sub_scores: Option<[f64; N_SUBSCORES]>,
    #[serde(default)]
    pub overall: Option<f64>,
}

impl BatchLine {
    fn to_item(&self, hp: &Hyperparams<f64>) -> Result<BatchItem<f64>> {
        let label = match (self.probs, self.mu, self.sigma, self.sub_scores, self.overall) {
            (Some(p), Some(mu), Some(sigma), _, _) => SoftLabel {
                dist: LevelDistribution::new(p)?,
                mu,
                sigma,
                delta: self.delta.unwrap_or(f64::NAN),
            },
            (None, _, _, Some(subs), Some(overall)) => soft_label(subs, overall, hp)?,
            _ => bail!(
                "batch line `{}` needs either probs+mu+sigma or sub_scores+overall",
                self.image_id
            ),
        };
        Ok(BatchItem {
            image_id: self.image_id.clone(),
            group_id: self.group_id.clone(),
            logits: self.logits,
            label,
        })
    }
}

fn loss_eval(ctx: &Ctx, a: LossEvalArgs) -> Result<ExitCode> {
    let hp = ctx.hp(&a.hp)?;
    let file = std::fs::File::open(&a.batch).with_context(|| format!("opening {}", a.batch.display()))?;
    let lines: Vec<BatchLine> = read_jsonl(std::io::BufReader::new(file))?;
    let batch: Vec<BatchItem<f64>> = lines.iter().map(|l| l.to_item(&hp)).collect::<Result<_>>()?;
    let (breakdown, grad) = tripartite_loss_and_grad(&batch, &hp)?;
    let grad: BTreeMap<&str, [f64; N_LEVELS]> = batch.iter().map(|b| b.image_id.as_str()).zip(grad).collect();
    let result = json!({ "breakdown": breakdown, "grad": grad });
    let config = json!({ "batch": a.batch, "hyperparams": hp });
    ctx.emit(Report::new("loss eval", None, config, result)?)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(ctx: &Ctx, a: GradcheckArgs) -> Result<ExitCode> {
    let mut cfg = ctx.cfg.gradcheck;
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.tol = a.tol.unwrap_or(cfg.tol);
    cfg.step = a.step.unwrap_or(cfg.step);
    let rep = run_gradcheck(&cfg)?;
    let passed = rep.passed;
    ctx.emit(Report::new("gradcheck", Some(cfg.seed), cfg, rep)?)?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<ExitCode> {
    let hp = ctx.hp(&a.hp)?;
    let (images, preds) = load_pair(&a.io)?;
    let labels: Option<Vec<LabelRecord>> = match &a.labels {
        Some(p) => {
            let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(read_jsonl(std::io::BufReader::new(file))?)
        }
        None => None,
    };
    let rep = evaluate(&images, &preds, labels.as_deref(), &hp)?;
    let mut config = io_config(&a.io);
    config["labels"] = json!(a.labels);
    config["hyperparams"] = json!(hp);
    ctx.emit(Report::new("eval", None, config, rep)?)?;
    Ok(ExitCode::SUCCESS)
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<ExitCode> {
    let mut mc = ctx.cfg.calibration;
    mc.n_splits = a.splits.unwrap_or(mc.n_splits);
    mc.cal_fraction = a.cal_fraction.unwrap_or(mc.cal_fraction);
    mc.bins = a.bins.unwrap_or(mc.bins);
    let (images, preds) = load_pair(&a.io)?;
    let aligned = align_by_id(images.iter().map(|i| i.image_id.as_str()), &preds, |p| p.image_id.as_str())?;
    let records: Vec<CalibrationRecord<f64>> = images
        .iter()
        .zip(aligned)
        .map(|(i, p)| CalibrationRecord {
            group_id: i.group_id.clone(),
            y: i.overall,
            mu_hat: p.mu_hat,
            sigma_hat: p.sigma_hat,
        })
        .collect();
    let rep = monte_carlo_calibration(&records, &mc)?;
    let mut config = io_config(&a.io);
    config["calibration"] = json!(mc);
    ctx.emit(Report::new("calibrate", Some(mc.seed), config, rep)?)?;
    Ok(ExitCode::SUCCESS)
}

fn boundaries(ctx: &Ctx, flag: Option<TertileBoundaries>) -> Result<TertileBoundaries> {
    let b = flag.unwrap_or(ctx.cfg.analysis.boundaries);
    Ok(TertileBoundaries::new(b.low_max, b.mid_max)?)
}

fn stratify(ctx: &Ctx, a: StratifyArgs) -> Result<ExitCode> {
    let b = boundaries(ctx, a.boundaries)?;
    let shift = a.shift.unwrap_or(ctx.cfg.analysis.shift);
    let (images, preds) = load_pair(&a.io)?;
    let rep = stratify_by_delta(&images, &preds, b)?;
    let migration = boundary_perturbation(&images, b, shift)?;
    let mut config = io_config(&a.io);
    config["boundaries"] = json!(b);
    config["shift"] = json!(shift);
    let result = json!({ "stratified": rep, "boundary_perturbation": migration });
    ctx.emit(Report::new("stratify", None, config, result)?)?;
    Ok(ExitCode::SUCCESS)
}

fn ceiling(ctx: &Ctx, a: CeilingArgs) -> Result<ExitCode> {
    let b = boundaries(ctx, a.boundaries)?;
    let floor = a.floor.unwrap_or(ctx.cfg.analysis.floor);
    let seed = ctx.cfg.analysis.seed;
    let (images, preds) = load_pair(&a.io)?;
    let rep = counterfactual_ceiling(&images, &preds, b, floor, seed)?;
    let mut config = io_config(&a.io);
    config["boundaries"] = json!(b);
    config["floor"] = json!(floor);
    ctx.emit(Report::new("ceiling", Some(seed), config, rep)?)?;
    Ok(ExitCode::SUCCESS)
}

fn vardecomp(ctx: &Ctx, a: VardecompArgs) -> Result<ExitCode> {
    let images = annotations(&a.annotations)?;
    let items: Vec<(&str, f64)> = images.iter().map(|i| (i.group_id.as_str(), i.overall)).collect();
    let rep = variance_decomposition(&items)?;
    let result = json!({
        "decomposition": rep,
        "cross_fraction": if rep.total > 0.0 { Some(rep.cross / rep.total) } else { None },
    });
    ctx.emit(Report::new("vardecomp", None, json!({ "annotations": a.annotations }), result)?)?;
    Ok(ExitCode::SUCCESS)
}

fn bootstrap(ctx: &Ctx, a: BootstrapArgs) -> Result<ExitCode> {
    let mut bs = ctx.cfg.bootstrap;
    bs.metric = a.metric.unwrap_or(bs.metric);
    bs.n = a.n.unwrap_or(bs.n);
    let images = annotations(&a.annotations)?;
    let ids = || images.iter().map(|i| i.image_id.as_str());
    let (pa, pb) = (predictions(&a.a)?, predictions(&a.b)?);
    let mu = |recs: Vec<&qualkit::datamodel::PredictionRecord>| -> Vec<f64> { recs.iter().map(|p| p.mu_hat).collect() };
    let ya = mu(align_by_id(ids(), &pa, |p| p.image_id.as_str()).context("system A")?);
    let yb = mu(align_by_id(ids(), &pb, |p| p.image_id.as_str()).context("system B")?);
    let gt: Vec<f64> = images.iter().map(|i| i.overall).collect();
    let rep = paired_bootstrap(&ya, &yb, &gt, bs.metric, bs.n, bs.seed)?;
    let config = json!({ "a": a.a, "b": a.b, "annotations": a.annotations, "bootstrap": bs });
    ctx.emit(Report::new("bootstrap", Some(bs.seed), config, rep)?)?;
    Ok(ExitCode::SUCCESS)
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<ExitCode> {
    let mut sc: SamplerConfig = ctx.cfg.sampler;
    sc.m = a.m.unwrap_or(sc.m);
    sc.n = a.n.unwrap_or(sc.n);
    sc.accumulation = a.accumulation.unwrap_or(sc.accumulation);
    sc.validate()?;
    if a.epochs == 0 {
        bail!("--epochs must be >= 1");
    }
    let images = annotations(&a.annotations)?;
    let first = make_epoch(&images, &sc)?;
    let per_epoch = first.batches.len();
    let batches: Vec<_> = BatchStream::new(&images, sc)?.take(per_epoch * a.epochs).collect();
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_jsonl(std::io::BufWriter::new(file), &batches)?;
    let result = json!({
        "n_batches": batches.len(),
        "batches_per_epoch": per_epoch,
        "batch_size": sc.batch_size(),
        "within_pairs_per_batch": sc.within_pairs(),
        "cross_pairs_per_batch": sc.cross_pairs(),
        "skipped_groups": first.skipped_groups,
        "out": a.out,
    });
    let config = json!({ "annotations": a.annotations, "sampler": sc, "epochs": a.epochs });
    ctx.emit(Report::new("sample", Some(sc.seed), config, result)?)?;
    Ok(ExitCode::SUCCESS)
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<ExitCode> {
    let mut sc = ctx.cfg.synth;
    sc.n_groups = a.n_groups.unwrap_or(sc.n_groups);
    let corpus = generate(&sc)?;
    corpus.save(&a.out_dir)?;
    let items: Vec<(&str, f64)> = corpus.annotations.iter().map(|i| (i.group_id.as_str(), i.overall)).collect();
    let (exp_within, exp_cross) = sc.expected_components();
    let rater_std = corpus.rater_std();
    let result = json!({
        "n_images": corpus.len(),
        "variance": variance_decomposition(&items)?,
        "expected_within": exp_within,
        "expected_cross": exp_cross,
        "pearson_delta_rater_std": plcc(&corpus.planted_delta, &rater_std).ok(),
        "out_dir": a.out_dir,
    });
    ctx.emit(Report::new("synth", Some(sc.seed), json!({ "synth": sc }), result)?)?;
    Ok(ExitCode::SUCCESS)
}

fn train(ctx: &Ctx, a: TrainToyArgs) -> Result<ExitCode> {
    let mut hp = ctx.hp(&a.hp)?;
    if a.kl_only {
        hp = hp.kl_only();
    }
    let ts = ctx.cfg.train;
    let tc = TrainConfig {
        steps: a.steps.unwrap_or(ts.steps),
        lr: a.lr.unwrap_or(ts.lr),
        momentum: a.momentum.unwrap_or(ts.momentum),
        sampler: ctx.cfg.sampler,
    };
    let corpus = SynthCorpus::load(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    let [ftr, fva, fte] = ts.split;
    let split = group_disjoint_split(&corpus.group_ids(), (ftr, fva, fte), tc.sampler.seed)?;
    let out = train_toy(&corpus, &split, &hp, &tc)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&out.scorer)? + "\n")
        .with_context(|| format!("writing {}", a.out.display()))?;

    let all = predict(&out.scorer, &corpus, None)?;
    if let Some(p) = &a.predictions {
        save_predictions(p, &all)?;
    }
    if let Some(p) = &a.split_out {
        qualkit::datamodel::save_split(p, &split)?;
    }
    let mut per_bucket = BTreeMap::new();
    for bucket in [Bucket::Train, Bucket::Val, Bucket::Test] {
        let (gt, mu): (Vec<f64>, Vec<f64>) = corpus
            .annotations
            .iter()
            .zip(&all)
            .filter(|(img, _)| split.bucket(&img.group_id) == Some(bucket))
            .map(|(img, p)| (img.overall, p.mu_hat))
            .unzip();
        per_bucket.insert(bucket.to_string(), json!({ "n": gt.len(), "srcc": srcc(&mu, &gt).ok() }));
    }
    let result = json!({
        "initial": out.curve.first(),
        "final": out.curve.last(),
        "total_curve": out.curve.iter().map(|b| b.total).collect::<Vec<_>>(),
        "srcc": per_bucket,
        "out": a.out,
    });
    let config = json!({
        "corpus": a.corpus,
        "hyperparams": hp,
        "train": tc,
        "split_fractions": ts.split,
    });
    ctx.emit(Report::new("train-toy", Some(tc.sampler.seed), config, result)?)?;
    Ok(ExitCode::SUCCESS)
}

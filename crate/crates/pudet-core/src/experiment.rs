//! End-to-end experiment orchestration: dataset generation with
//! train/val/test splits and annotation degradation, multi-run training
//! for every method arm, prior sweeps, and evaluation with paired
//! statistics. The `pudet` binary is a thin wrapper over these
//! functions.
//!
//! Every command is deterministic given its config and seeds: rerunning
//! one overwrites its outputs with identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{
    detect, detect_tiled, load_checkpoint, save_checkpoint, DetectOptions, DetectionResult,
    DetectorModel,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, benjamini_hochberg, match_detections, metrics, paired_t_test, MatchReport,
    MatchRule, MetricSummary,
};
use crate::losses::LossKind;
use crate::parallel::par_map;
use crate::priors::PriorGrid;
use crate::synth::{
    degrade_by_agreement, degrade_random, derive_seed, generate, load_dataset, save_dataset,
    AnnotatedImage, DatasetManifest, GeneratorConfig,
};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationStrategy {
    /// Uniformly random keep-N per class.
    Random,
    /// Keep the N highest-agreement annotations per class.
    Agreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub strategy: DegradationStrategy,
    pub keep_n: usize,
}

/// Train/val/test ratios; only the proportions matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 4.0,
            val: 1.0,
            test: 1.0,
        }
    }
}

impl SplitSpec {
    /// Largest-remainder apportionment of `n` images; every split gets
    /// at least its rounded share, the counts sum to `n` exactly.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.val + self.test;
        if !(self.train > 0.0 && self.val > 0.0 && self.test > 0.0) || !total.is_finite() {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        let shares = [self.train / total, self.val / total, self.test / total];
        let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut leftover = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            (raw[b] - raw[b].floor())
                .partial_cmp(&(raw[a] - raw[a].floor()))
                .expect("finite")
                .then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(leftover.min(3) * 10) {
            if leftover == 0 {
                break;
            }
            counts[i] += 1;
            leftover -= 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config(format!(
                "{n} images cannot fill all three splits at ratios {self:?}"
            )));
        }
        Ok((counts[0], counts[1], counts[2]))
    }
}

/// Evaluation-time detection and matching settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    pub match_rule: MatchRule,
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Tile size for patch-based inference; absent means whole-image.
    pub patch: Option<u32>,
    pub overlap: u32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            iou_threshold: 0.5,
            match_rule: MatchRule::Iou,
            score_threshold: 0.5,
            nms_threshold: 0.3,
            patch: None,
            overlap: 0,
        }
    }
}

impl EvalSettings {
    fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            score_threshold: self.score_threshold,
            nms_threshold: self.nms_threshold,
        }
    }
}

/// Declarative experiment description, stored as one JSON document.
/// Unknown keys are rejected so protocol drift fails loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub image_count: usize,
    pub degradation: DegradationSpec,
    #[serde(default)]
    pub split: SplitSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub prior_grid: Option<PriorGrid>,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_runs() -> usize {
    5
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.image_count == 0 {
            return Err(Error::Config("image_count must be positive".into()));
        }
        if self.degradation.keep_n == 0 {
            return Err(Error::Config("degradation keep_n must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.train.model.num_classes != self.generator.num_classes() {
            return Err(Error::Config(format!(
                "model has {} classes but the generator produces {}",
                self.train.model.num_classes,
                self.generator.num_classes()
            )));
        }
        if let Some(grid) = &self.prior_grid {
            grid.validate()?;
        }
        self.split.counts(self.image_count.max(3)).map(|_| ())
    }
}

/// Experimental method arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Unlabeled treated as negative, standard cross entropy.
    Baseline,
    /// Binary PU loss with the combined all-sample approximation.
    Pu,
    /// Binary PU loss with the naive (unlabeled-only) approximation.
    PuNaive,
    /// Multi-class PU loss with dynamic priors.
    PuMulti,
    /// Weighted-CE baseline (positive term scaled by 1/π).
    Wce,
    /// Focal-loss baseline.
    Focal,
    /// Complete annotations, standard training: the performance ceiling.
    Upper,
}

impl Method {
    pub fn parse(name: &str) -> Result<Method> {
        Ok(match name {
            "baseline" => Method::Baseline,
            "pu" => Method::Pu,
            "pu-naive" => Method::PuNaive,
            "pu-multi" => Method::PuMulti,
            "wce" => Method::Wce,
            "focal" => Method::Focal,
            "upper" => Method::Upper,
            other => {
                return Err(Error::Usage(format!(
                    "unknown method `{other}` (expected baseline|pu|pu-naive|pu-multi|wce|focal|upper)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Pu => "pu",
            Method::PuNaive => "pu-naive",
            Method::PuMulti => "pu-multi",
            Method::Wce => "wce",
            Method::Focal => "focal",
            Method::Upper => "upper",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Method::Baseline | Method::Upper => LossKind::PnBaseline,
            Method::Pu => LossKind::PuBinary,
            Method::PuNaive => LossKind::PuNaive,
            Method::PuMulti => LossKind::PuMulticlass,
            Method::Wce => LossKind::WceBaseline,
            Method::Focal => LossKind::FocalBaseline,
        }
    }

    /// The upper bound trains on the undegraded annotations.
    pub fn uses_complete_annotations(self) -> bool {
        self == Method::Upper
    }
}

pub const TRAIN_DIR: &str = "train";
pub const VAL_DIR: &str = "val";
pub const TEST_DIR: &str = "test";
pub const TRAIN_COMPLETE_DIR: &str = "train_complete";
pub const VAL_COMPLETE_DIR: &str = "val_complete";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateOutcome {
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
}

/// Generates the dataset and splits it ~4:1:1. Training and validation
/// annotations are degraded per the config; the test split (and the
/// `*_complete` copies consumed by the upper-bound arm) stay intact.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<GenerateOutcome> {
    config.validate()?;
    let images = generate(&config.generator, config.image_count)?;
    let (n_train, n_val, n_test) = config.split.counts(images.len())?;

    let train_images = &images[..n_train];
    let val_images = &images[n_train..n_train + n_val];
    let test_images = &images[n_train + n_val..];

    let degrade = |subset: &[AnnotatedImage], offset: usize| -> Result<Vec<AnnotatedImage>> {
        subset
            .iter()
            .enumerate()
            .map(|(i, img)| match config.degradation.strategy {
                DegradationStrategy::Random => degrade_random(
                    img,
                    config.degradation.keep_n,
                    derive_seed(config.generator.seed, 0x20, (offset + i) as u64),
                ),
                DegradationStrategy::Agreement => {
                    degrade_by_agreement(img, config.degradation.keep_n)
                }
            })
            .collect()
    };

    let degraded_train = degrade(train_images, 0)?;
    let degraded_val = degrade(val_images, n_train)?;

    save_dataset(&degraded_train, &config.generator, &out.join(TRAIN_DIR))?;
    save_dataset(&degraded_val, &config.generator, &out.join(VAL_DIR))?;
    save_dataset(test_images, &config.generator, &out.join(TEST_DIR))?;
    save_dataset(train_images, &config.generator, &out.join(TRAIN_COMPLETE_DIR))?;
    save_dataset(val_images, &config.generator, &out.join(VAL_COMPLETE_DIR))?;

    Ok(GenerateOutcome {
        train_count: n_train,
        val_count: n_val,
        test_count: n_test,
    })
}

fn load_split(dataset: &Path, split: &str) -> Result<(Vec<AnnotatedImage>, DatasetManifest)> {
    load_dataset(&dataset.join(split))
}

fn check_class_count(config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<()> {
    if config.train.model.num_classes != manifest.num_classes {
        return Err(Error::Config(format!(
            "model has {} classes but the dataset manifest declares {}",
            config.train.model.num_classes, manifest.num_classes
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainArgs<'a> {
    pub config: &'a ExperimentConfig,
    pub dataset: &'a Path,
    pub method: Method,
    pub runs: usize,
    /// Overrides the config prior (and skips any grid search).
    pub prior: Option<f64>,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    pub out: &'a Path,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub logs: Vec<PathBuf>,
    /// The prior the runs trained with, when the method needs one.
    pub prior: Option<f64>,
}

/// Trains `runs` independent seeded models for one method arm and
/// writes `run_<i>/checkpoint.json` + `run_<i>/train_log.csv` under
/// `out/<method>/`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    args.config.validate()?;
    if args.runs == 0 {
        return Err(Error::Usage("--runs must be at least 1".into()));
    }
    let split = if args.method.uses_complete_annotations() {
        TRAIN_COMPLETE_DIR
    } else {
        TRAIN_DIR
    };
    let (train_images, manifest) = load_split(args.dataset, split)?;
    check_class_count(args.config, &manifest)?;

    let kind = args.method.loss_kind();
    let base_seed = args.seed.unwrap_or(args.config.train.seed);
    let needs_prior = kind.is_pu() || kind == LossKind::WceBaseline;
    let prior = if needs_prior {
        Some(resolve_prior(args, &train_images, kind, base_seed)?)
    } else {
        None
    };

    let method_dir = args.out.join(args.method.name());
    let run_configs: Vec<(usize, TrainConfig)> = (0..args.runs)
        .map(|r| {
            let mut cfg = args.config.train.clone();
            cfg.loss_kind = kind;
            cfg.seed = base_seed + r as u64;
            cfg.prior = prior;
            (r, cfg)
        })
        .collect();

    // independent runs; trained in parallel, written in order
    let trained = par_map(run_configs, |(r, cfg)| {
        train(&train_images, &cfg).map(|out| (r, out))
    });

    let mut outcome = TrainOutcome {
        checkpoints: Vec::new(),
        logs: Vec::new(),
        prior,
    };
    for result in trained {
        let (r, (model, log)) = result?;
        let run_dir = method_dir.join(format!("run_{r}"));
        fs::create_dir_all(&run_dir)?;
        let ckpt = run_dir.join("checkpoint.json");
        save_checkpoint(&model, &ckpt)?;
        let log_path = run_dir.join("train_log.csv");
        fs::write(&log_path, log.to_csv())?;
        outcome.checkpoints.push(ckpt);
        outcome.logs.push(log_path);
    }
    Ok(outcome)
}

/// Prior resolution for PU/weighted arms: explicit override, then the
/// config value, then a validation-recall grid search.
fn resolve_prior(
    args: &TrainArgs,
    train_images: &[AnnotatedImage],
    kind: LossKind,
    base_seed: u64,
) -> Result<f64> {
    if let Some(pi) = args.prior {
        return Ok(pi);
    }
    if let Some(pi) = args.config.train.prior {
        return Ok(pi);
    }
    let grid = args.config.prior_grid.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "method `{}` needs a class prior: pass --prior or configure `train.prior` or `prior_grid`",
            args.method.name()
        ))
    })?;
    let (val_images, _) = load_split(args.dataset, VAL_DIR)?;
    let (selected, _) = crate::priors::select_prior(
        |pi| {
            let mut cfg = args.config.train.clone();
            cfg.loss_kind = kind;
            cfg.seed = base_seed;
            cfg.prior = Some(pi);
            Ok(train(train_images, &cfg)?.0)
        },
        |model| Ok(validation_recall(model, &val_images, &args.config.eval)?),
        grid,
    )?;
    Ok(selected)
}

/// Recall of a model against (incomplete) validation annotations.
fn validation_recall(
    model: &DetectorModel,
    images: &[AnnotatedImage],
    eval: &EvalSettings,
) -> Result<f64> {
    let (summary, _) = evaluate_model(model, images, eval)?;
    Ok(summary.macro_avg.recall)
}

/// Runs detection over a set of annotated images and scores it.
/// Per-image work is independent and parallelizes.
pub fn evaluate_model(
    model: &DetectorModel,
    images: &[AnnotatedImage],
    eval: &EvalSettings,
) -> Result<(MetricSummary, Vec<DetectionResult>)> {
    let opts = eval.detect_options();
    let per_image = par_map(images.iter().collect::<Vec<_>>(), |img| -> Result<_> {
        let detections = match eval.patch {
            Some(patch) if patch <= img.width.min(img.height) => {
                detect_tiled(model, img, patch, eval.overlap, &opts)?
            }
            _ => detect(model, img, &opts)?,
        };
        let report = match_detections(
            &detections.boxes,
            &img.boxes,
            eval.match_rule,
            eval.iou_threshold,
        )?;
        Ok((report, detections))
    });
    let mut combined = MatchReport::default();
    let mut all_detections = Vec::with_capacity(images.len());
    for item in per_image {
        let (report, detections) = item?;
        combined.absorb(&report);
        all_detections.push(detections);
    }
    Ok((metrics(&combined), all_detections))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub pi: f64,
    pub val_recall: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub selected: f64,
    pub rows: Vec<SweepRow>,
}

/// Trains one model per candidate prior, reporting validation recall
/// (the selection metric) and test F1 (the sensitivity table), and
/// writes `sweep.csv` + `selection.json`.
pub fn cmd_sweep_prior(
    config: &ExperimentConfig,
    dataset: &Path,
    out: &Path,
) -> Result<SweepOutcome> {
    config.validate()?;
    let grid = config
        .prior_grid
        .as_ref()
        .ok_or_else(|| Error::Usage("sweep-prior needs `prior_grid` in the config".into()))?;
    let candidates = crate::priors::candidates(grid)?;
    let (train_images, manifest) = load_split(dataset, TRAIN_DIR)?;
    check_class_count(config, &manifest)?;
    let (val_images, _) = load_split(dataset, VAL_DIR)?;
    let (test_images, _) = load_split(dataset, TEST_DIR)?;

    let kind = if config.train.loss_kind.is_pu() {
        config.train.loss_kind
    } else {
        LossKind::PuBinary
    };
    let rows: Vec<SweepRow> = par_map(candidates, |pi| -> Result<SweepRow> {
        let mut cfg = config.train.clone();
        cfg.loss_kind = kind;
        cfg.prior = Some(pi);
        let (model, _) = train(&train_images, &cfg)?;
        let val_recall = validation_recall(&model, &val_images, &config.eval)?;
        let (test_summary, _) = evaluate_model(&model, &test_images, &config.eval)?;
        Ok(SweepRow {
            pi,
            val_recall,
            test_f1: test_summary.macro_avg.f1,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut selected = rows[0].pi;
    let mut best_recall = rows[0].val_recall;
    for row in &rows[1..] {
        if row.val_recall > best_recall {
            best_recall = row.val_recall;
            selected = row.pi;
        }
    }

    fs::create_dir_all(out)?;
    let best_f1 = rows.iter().map(|r| r.test_f1).fold(f64::NEG_INFINITY, f64::max);
    let mut csv = String::from("pi,val_recall,test_f1,delta_f1_from_best\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.pi,
            r.val_recall,
            r.test_f1,
            best_f1 - r.test_f1
        )
        .expect("string write");
    }
    fs::write(out.join("sweep.csv"), csv)?;
    fs::write(
        out.join("selection.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "selected_pi": selected,
            "val_recall": best_recall,
        }))?,
    )?;
    Ok(SweepOutcome { selected, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEval {
    pub name: String,
    pub runs: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub t: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateOutcome {
    pub methods: Vec<MethodEval>,
    pub comparisons: Vec<Comparison>,
}

/// Evaluates checkpoints on the test split. Each argument is either a
/// method directory (holding `run_*/checkpoint.json`) or a single
/// checkpoint file. Writes per-run metrics JSON and detection dumps, a
/// `summary.csv`, per-method aggregates, and (with `compare`) paired
/// t-tests over per-run macro F1 with Benjamini–Hochberg adjustment.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    dataset: &Path,
    checkpoints: &[PathBuf],
    compare: bool,
    out: &Path,
) -> Result<EvaluateOutcome> {
    if checkpoints.is_empty() {
        return Err(Error::Usage("evaluate needs at least one checkpoint".into()));
    }
    let (test_images, manifest) = load_split(dataset, TEST_DIR)?;
    let mut methods: Vec<MethodEval> = Vec::new();
    fs::create_dir_all(out)?;
    let mut summary_csv = String::from("method,fold,recall,precision,f1\n");

    for arg in checkpoints {
        let (name, run_paths) = collect_runs(arg)?;
        let mut runs = Vec::with_capacity(run_paths.len());
        for (run_index, ckpt_path) in run_paths.iter().enumerate() {
            let model = load_checkpoint(ckpt_path)?;
            if model.config.num_classes != manifest.num_classes {
                return Err(Error::Config(format!(
                    "{}: model has {} classes but the dataset declares {}",
                    ckpt_path.display(),
                    model.config.num_classes,
                    manifest.num_classes
                )));
            }
            let (summary, detections) = evaluate_model(&model, &test_images, &config.eval)?;
            let run_dir = out.join(&name).join(format!("run_{run_index}"));
            fs::create_dir_all(&run_dir)?;
            fs::write(
                run_dir.join("metrics.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            write_detection_dumps(&run_dir.join("detections"), &manifest, &detections)?;
            writeln!(
                summary_csv,
                "{},{},{},{},{}",
                name,
                run_index,
                summary.macro_avg.recall,
                summary.macro_avg.precision,
                summary.macro_avg.f1
            )
            .expect("string write");
            runs.push(summary);
        }
        let agg = aggregate(&runs)?;
        fs::write(
            out.join(&name).join("aggregate.json"),
            serde_json::to_string_pretty(&agg)?,
        )?;
        methods.push(MethodEval { name, runs });
    }
    fs::write(out.join("summary.csv"), summary_csv)?;

    let mut comparisons = Vec::new();
    if compare {
        let mut raw = Vec::new();
        for i in 0..methods.len() {
            for j in i + 1..methods.len() {
                let f1s = |m: &MethodEval| -> Vec<f64> {
                    m.runs.iter().map(|r| r.macro_avg.f1).collect()
                };
                let (t, p) = paired_t_test(&f1s(&methods[i]), &f1s(&methods[j]))?;
                raw.push((i, j, t, p));
            }
        }
        let adjusted = benjamini_hochberg(&raw.iter().map(|r| r.3).collect::<Vec<_>>())?;
        for ((i, j, t, p), p_adj) in raw.into_iter().zip(adjusted) {
            comparisons.push(Comparison {
                method_a: methods[i].name.clone(),
                method_b: methods[j].name.clone(),
                t,
                p_raw: p,
                p_adjusted: p_adj,
            });
        }
        fs::write(
            out.join("compare.json"),
            serde_json::to_string_pretty(&comparisons)?,
        )?;
    }
    Ok(EvaluateOutcome {
        methods,
        comparisons,
    })
}

/// A method directory yields its sorted `run_*/checkpoint.json` files;
/// a plain file is a single-run method named by its stem.
fn collect_runs(arg: &Path) -> Result<(String, Vec<PathBuf>)> {
    let name = |p: &Path| -> String {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    };
    if arg.is_dir() {
        let mut runs: Vec<PathBuf> = fs::read_dir(arg)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .map_or(false, |n| n.to_string_lossy().starts_with("run_"))
            })
            .map(|p| p.join("checkpoint.json"))
            .filter(|p| p.is_file())
            .collect();
        runs.sort();
        if runs.is_empty() {
            return Err(Error::Data(format!(
                "{}: no run_*/checkpoint.json found",
                arg.display()
            )));
        }
        Ok((name(arg), runs))
    } else {
        Ok((name(arg), vec![arg.to_path_buf()]))
    }
}

fn write_detection_dumps(
    dir: &Path,
    manifest: &DatasetManifest,
    detections: &[DetectionResult],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (entry, result) in manifest.images.iter().zip(detections) {
        let mut csv = String::from("x,y,w,h,class_id,score\n");
        for b in &result.boxes {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                b.rect.x, b.rect.y, b.rect.w, b.rect.h, b.class_id, b.score
            )
            .expect("string write");
        }
        fs::write(dir.join(format!("{}.csv", entry.name)), csv)?;
    }
    Ok(())
}

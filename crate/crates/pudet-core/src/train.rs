//! Deterministic training loop: normalization, horizontal-flip
//! augmentation, cyclic seeded batching, Adam, and per-iteration
//! logging. With `loss_kind = pu_multiclass` the non-leading class
//! priors are re-estimated from the detector's own batch detections
//! before each gradient step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::detector::{
    assign_samples, encode_box, extract_features, forward, DetectorModel, ModelConfig, Rect,
    SampleAssignment,
};
use crate::error::{Error, Result};
use crate::losses::{total_loss, ClassPriors, LossInputs, LossKind};
use crate::priors::{initial_multiclass_priors, update_multiclass_priors};
use crate::synth::{derive_seed, AnnotatedImage, GroundTruthBox};

/// Maps one intensity from [0, 255] to [−1, 1].
pub fn normalize(p: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&p) {
        return Err(Error::Data(format!("pixel value {p} outside [0, 255]")));
    }
    Ok(2.0 * p / 255.0 - 1.0)
}

/// Bulk normalization of a raster (u8 input cannot be out of range).
pub fn normalize_pixels(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| 2.0 * p as f64 / 255.0 - 1.0).collect()
}

/// Mirrors the raster and its boxes around the vertical axis.
pub fn flip_horizontal(img: &AnnotatedImage) -> AnnotatedImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        let row = &img.pixels[(y * img.width) as usize..((y + 1) * img.width) as usize];
        pixels.extend(row.iter().rev());
    }
    let boxes = img
        .boxes
        .iter()
        .map(|b| GroundTruthBox {
            x: img.width as i32 - b.x - b.w as i32,
            ..b.clone()
        })
        .collect();
    AnnotatedImage {
        pixels,
        boxes,
        ..img.clone()
    }
}

/// Adam accumulators, one pair of moment buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update:
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − lr·m̂/(√v̂ + ε)
/// with bias-corrected m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step got {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match parameter length {}",
                g.len(),
                params[i].len()
            )));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {bad} in parameter tensor {i}"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, &gj) in g.iter().enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            params[i][j] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    8
}
fn default_iterations() -> usize {
    2580
}
fn default_true() -> bool {
    true
}
fn default_assign_lo() -> f64 {
    0.3
}
fn default_assign_hi() -> f64 {
    0.7
}
fn default_score_threshold() -> f64 {
    0.5
}
fn default_nms_threshold() -> f64 {
    0.3
}
fn default_loc_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub seed: u64,
    pub model: ModelConfig,
    /// Class prior π (π₁ for the multi-class loss, the positive-class
    /// weight source for `wce_baseline`). Required by those kinds.
    #[serde(default)]
    pub prior: Option<f64>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub augment_hflip: bool,
    #[serde(default = "default_assign_lo")]
    pub assign_lo: f64,
    #[serde(default = "default_assign_hi")]
    pub assign_hi: f64,
    /// Detection threshold used for the dynamic prior counts.
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f64,
    #[serde(default = "default_nms_threshold")]
    pub nms_threshold: f64,
    #[serde(default = "default_loc_weight")]
    pub loc_weight: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.model.validate()?;
        if let Some(pi) = self.prior {
            if !(0.0 < pi && pi < 1.0) {
                return Err(Error::Config(format!("prior {pi} outside (0, 1)")));
            }
        }
        Ok(())
    }

    fn needs_prior(&self) -> bool {
        self.loss_kind.is_pu() || self.loss_kind == LossKind::WceBaseline
    }
}

/// One logged training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    pub clamp_active: bool,
    /// Prior snapshot (π₁..π_{M−1}); empty for kinds without priors.
    pub priors: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    /// Batches that contained no positive anchors (positive-dependent
    /// loss terms were dropped there).
    pub batches_without_positives: usize,
}

impl TrainingLog {
    /// CSV with header `iter,total,cls,loc,clamp,pi_1..pi_{M-1}`.
    pub fn to_csv(&self) -> String {
        let num_priors = self.records.first().map_or(0, |r| r.priors.len());
        let mut out = String::from("iter,total,cls,loc,clamp");
        for i in 1..=num_priors {
            write!(out, ",pi_{i}").expect("string write");
        }
        out.push('\n');
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.total, r.cls, r.loc, r.clamp_active as u8
            )
            .expect("string write");
            for p in &r.priors {
                write!(out, ",{p}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// Seeded shuffle with wrap-around epochs: a batch crossing the epoch
/// boundary continues into a freshly reshuffled order. With
/// `batch_size == len` every batch is the whole dataset.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(len: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut sampler = BatchSampler {
            order: (0..len).collect(),
            pos: 0,
        };
        sampler.reshuffle(rng);
        sampler
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        for i in (1..self.order.len()).rev() {
            let j = rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if self.pos == self.order.len() {
                self.reshuffle(rng);
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Per-image tensors ready for stacking, cached per flip variant.
struct PreparedImage {
    features: Tensor,
    assignments: Vec<SampleAssignment>,
    loc_targets: Vec<[f64; 4]>,
    anchor_count: usize,
}

fn prepare_image(
    img: &AnnotatedImage,
    anchors: &[Rect],
    config: &TrainConfig,
) -> Result<PreparedImage> {
    let pixels = normalize_pixels(&img.pixels);
    let features = extract_features(
        &pixels,
        img.width,
        img.height,
        anchors,
        config.model.feature_size,
    );
    let assignments = assign_samples(anchors, &img.boxes, config.assign_lo, config.assign_hi)?;
    let mut loc_targets = vec![[0.0; 4]; anchors.len()];
    for a in &assignments {
        if let crate::detector::AssignState::Positive { box_index, .. } = a.state {
            loc_targets[a.anchor_index] =
                encode_box(&Rect::from(&img.boxes[box_index]), &anchors[a.anchor_index]);
        }
    }
    Ok(PreparedImage {
        features,
        assignments,
        loc_targets,
        anchor_count: anchors.len(),
    })
}

/// Trains a detector on the given images. Deterministic: the same
/// (images, config) pair reproduces the model and log bit for bit.
pub fn train(images: &[AnnotatedImage], config: &TrainConfig) -> Result<(DetectorModel, TrainingLog)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let m = config.model.num_classes;
    for img in images {
        if let Some(b) = img.boxes.iter().find(|b| b.class_id == 0 || b.class_id >= m) {
            return Err(Error::Data(format!(
                "box class id {} outside 1..{} configured classes",
                b.class_id,
                m - 1
            )));
        }
    }
    if config.needs_prior() && config.prior.is_none() {
        return Err(Error::Config(format!(
            "loss kind {:?} requires a class prior",
            config.loss_kind
        )));
    }

    let mut model = DetectorModel::init(config.model.clone(), derive_seed(config.seed, 0x10, 0))?;
    let mut adam = AdamState::new(&model.params().iter().map(|p| p.len()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x11, 0));
    let mut sampler = BatchSampler::new(images.len(), &mut rng);

    // anchor grids per image size, feature/assignment cache per flip variant
    let mut anchor_cache: BTreeMap<(u32, u32), Vec<Rect>> = BTreeMap::new();
    let mut prepared: BTreeMap<(usize, bool), PreparedImage> = BTreeMap::new();

    let mut current_priors: Option<ClassPriors> = match (config.loss_kind, config.prior) {
        (LossKind::PuMulticlass, Some(pi1)) => {
            Some(initial_multiclass_priors(pi1, m - 1)?)
        }
        (_, Some(pi)) if config.needs_prior() => Some(ClassPriors::binary(pi)?),
        _ => None,
    };

    let mut log = TrainingLog::default();
    for iteration in 1..=config.iterations {
        let batch = sampler.next_batch(config.batch_size, &mut rng);
        let flips: Vec<bool> = batch
            .iter()
            .map(|_| config.augment_hflip && rng.gen_bool(0.5))
            .collect();

        // assemble the batch from cached per-image tensors
        let mut feature_data = Vec::new();
        let mut assignments: Vec<SampleAssignment> = Vec::new();
        let mut loc_targets: Vec<[f64; 4]> = Vec::new();
        let mut offset = 0usize;
        for (&img_idx, &flip) in batch.iter().zip(&flips) {
            if !prepared.contains_key(&(img_idx, flip)) {
                let source = &images[img_idx];
                let variant = if flip {
                    flip_horizontal(source)
                } else {
                    source.clone()
                };
                let anchors = anchor_cache
                    .entry((variant.width, variant.height))
                    .or_insert_with(|| model.anchors_for(variant.width, variant.height))
                    .clone();
                prepared.insert((img_idx, flip), prepare_image(&variant, &anchors, config)?);
            }
            let p = &prepared[&(img_idx, flip)];
            feature_data.extend_from_slice(&p.features.data);
            for a in &p.assignments {
                assignments.push(SampleAssignment {
                    anchor_index: a.anchor_index + offset,
                    state: a.state,
                    max_iou: a.max_iou,
                });
            }
            loc_targets.extend_from_slice(&p.loc_targets);
            offset += p.anchor_count;
        }
        let features = Tensor::new(vec![offset, config.model.input_dim()], feature_data)
            .expect("stacked feature shape");

        let pass = forward(&model, &features, true)?;

        // dynamic prior update: count this batch's detections with the
        // current weights, then compute the gradient under the new priors
        if config.loss_kind == LossKind::PuMulticlass {
            let pi1 = config.prior.expect("checked above");
            let probs = pass.probs.value();
            let mut counts = vec![0u64; m - 1];
            for row in 0..offset {
                let r = &probs[row * m..(row + 1) * m];
                let (mut best_c, mut best_p) = (1usize, r[1]);
                for (c, &p) in r.iter().enumerate().skip(2) {
                    if p > best_p {
                        best_c = c;
                        best_p = p;
                    }
                }
                if best_p >= config.score_threshold {
                    counts[best_c - 1] += 1;
                }
            }
            let prev = current_priors.as_ref().expect("multiclass priors initialized");
            current_priors = Some(update_multiclass_priors(pi1, &counts, prev)?);
        }

        let has_positive = assignments
            .iter()
            .any(|a| matches!(a.state, crate::detector::AssignState::Positive { .. }));
        if !has_positive {
            log.batches_without_positives += 1;
        }

        let placeholder;
        let priors_ref = match &current_priors {
            Some(p) => p,
            None => {
                // baseline kinds never read the prior values
                placeholder = ClassPriors::new(vec![0.5 / (m - 1) as f64; m - 1])?;
                &placeholder
            }
        };
        let inputs = LossInputs {
            assignments: &assignments,
            probs: &pass.probs,
            deltas: &pass.deltas,
            loc_targets: &loc_targets,
            priors: priors_ref,
            loc_weight: config.loc_weight,
        };
        let (loss, breakdown) = total_loss(&inputs, config.loss_kind)
            .map_err(|e| Error::Training(format!("iteration {iteration}: {e}")))?;
        if !breakdown.total.is_finite() {
            return Err(Error::Training(format!(
                "iteration {iteration}: non-finite loss {}",
                breakdown.total
            )));
        }
        loss.backward()?;
        // parameters off the gradient path (e.g. the regression head in
        // a batch with no positive anchors) get a zero gradient
        let grads: Vec<Vec<f64>> = pass
            .params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        adam_step(&mut model.params_mut(), &grads, &mut adam, config.learning_rate)
            .map_err(|e| Error::Training(format!("iteration {iteration}: {e}")))?;

        log.records.push(IterationRecord {
            iteration,
            total: breakdown.total,
            cls: breakdown.cls,
            loc: breakdown.loc,
            clamp_active: breakdown.clamp_active,
            priors: current_priors
                .as_ref()
                .map(|p| p.values().to_vec())
                .unwrap_or_default(),
        });
    }
    Ok((model, log))
}

//! Anchor-grid detector: candidate generation, IoU sample assignment,
//! a small trainable patch-MLP model, NMS, and tiled inference.
//!
//! The model maps each anchor's pixel window (resampled to a fixed
//! `feature_size` grid) through a two-layer trunk into a class head
//! (softmax over M classes, background first) and a regression head
//! (four anchor-relative deltas).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::synth::{tile, AnnotatedImage, GroundTruthBox};
use crate::train::normalize_pixels;

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<&GroundTruthBox> for Rect {
    fn from(b: &GroundTruthBox) -> Self {
        Rect::new(b.x as f64, b.y as f64, b.w as f64, b.h as f64)
    }
}

/// Candidate box on the regular stride grid.
pub type Anchor = Rect;

/// Intersection over union of two boxes with positive extents.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Default assignment thresholds: anchors above `hi` are positive,
/// below `lo` unlabeled, in between ignored.
pub const ASSIGN_LO: f64 = 0.3;
pub const ASSIGN_HI: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignState {
    Positive {
        class_id: usize,
        box_index: usize,
    },
    Unlabeled,
    Ignored,
}

/// Per-anchor label state after IoU matching.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAssignment {
    pub anchor_index: usize,
    pub state: AssignState,
    pub max_iou: f64,
}

/// Matches every anchor against its max-IoU annotation and buckets it
/// into positive / unlabeled / ignored. An empty box list makes every
/// anchor unlabeled with `max_iou` 0.
pub fn assign_samples(
    anchors: &[Anchor],
    boxes: &[GroundTruthBox],
    lo: f64,
    hi: f64,
) -> Result<Vec<SampleAssignment>> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::Config(format!(
            "assignment thresholds need 0 <= lo < hi <= 1, got lo {lo}, hi {hi}"
        )));
    }
    let rects: Vec<Rect> = boxes.iter().map(Rect::from).collect();
    Ok(anchors
        .iter()
        .enumerate()
        .map(|(anchor_index, anchor)| {
            let mut max_iou = 0.0;
            let mut best = None;
            for (bi, rect) in rects.iter().enumerate() {
                let v = iou(anchor, rect);
                if v > max_iou {
                    max_iou = v;
                    best = Some(bi);
                }
            }
            let state = if max_iou > hi {
                let bi = best.expect("positive implies a matched box");
                AssignState::Positive {
                    class_id: boxes[bi].class_id,
                    box_index: bi,
                }
            } else if max_iou < lo {
                AssignState::Unlabeled
            } else {
                AssignState::Ignored
            };
            SampleAssignment {
                anchor_index,
                state,
                max_iou,
            }
        })
        .collect())
}

/// One anchor per grid point per size, centered at `(i+0.5)*stride`,
/// clipped (shrunk, never dropped) to the image bounds.
pub fn anchor_grid(width: u32, height: u32, stride: u32, sizes: &[(f64, f64)]) -> Vec<Anchor> {
    assert!(stride > 0, "stride must be positive");
    assert!(!sizes.is_empty(), "at least one anchor size required");
    let cells = |extent: u32| (extent + stride - 1) / stride;
    let mut anchors = Vec::with_capacity((cells(width) * cells(height)) as usize * sizes.len());
    for gy in 0..cells(height) {
        for gx in 0..cells(width) {
            let cx = (gx as f64 + 0.5) * stride as f64;
            let cy = (gy as f64 + 0.5) * stride as f64;
            for &(w, h) in sizes {
                let x0 = (cx - w / 2.0).max(0.0);
                let y0 = (cy - h / 2.0).max(0.0);
                let x1 = (cx + w / 2.0).min(width as f64);
                let y1 = (cy + h / 2.0).min(height as f64);
                anchors.push(Rect::new(x0, y0, x1 - x0, y1 - y0));
            }
        }
    }
    anchors
}

/// Anchor-relative box encoding: `dx = (b.x - a.x) / a.w`,
/// `dw = ln(b.w / a.w)`, and likewise for y/h.
pub fn encode_box(b: &Rect, anchor: &Rect) -> [f64; 4] {
    [
        (b.x - anchor.x) / anchor.w,
        (b.y - anchor.y) / anchor.h,
        (b.w / anchor.w).ln(),
        (b.h / anchor.h).ln(),
    ]
}

pub fn decode_box(deltas: &[f64], anchor: &Rect) -> Rect {
    Rect::new(
        anchor.x + deltas[0] * anchor.w,
        anchor.y + deltas[1] * anchor.h,
        anchor.w * deltas[2].exp(),
        anchor.h * deltas[3].exp(),
    )
}

/// Model hyperparameters; stored inside checkpoints so inference can
/// rebuild the anchor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Total class count M, background included.
    pub num_classes: usize,
    /// Anchor window is resampled to `feature_size`² inputs.
    pub feature_size: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub anchor_stride: u32,
    pub anchor_sizes: Vec<(f64, f64)>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(
                "num_classes must be at least 2 (background + one positive class)".into(),
            ));
        }
        if self.feature_size == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Config("model layer sizes must be positive".into()));
        }
        if self.anchor_stride == 0 || self.anchor_sizes.is_empty() {
            return Err(Error::Config("anchor grid needs a stride and sizes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature_size * self.feature_size
    }
}

/// Trainable parameters: shared two-layer trunk plus classification and
/// regression heads, all stored as flat row-major buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub config: ModelConfig,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wc: Vec<f64>,
    pub bc: Vec<f64>,
    pub wr: Vec<f64>,
    pub br: Vec<f64>,
}

fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl DetectorModel {
    /// Seeded random initialization. Trunk biases start slightly
    /// positive so the relu units are alive on mostly-background input.
    /// Both heads start at zero: probabilities open uniform and box
    /// deltas decode to the anchor itself, so head weight directions the
    /// loss never visits stay neutral instead of random.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.input_dim();
        let (h1, h2, m) = (config.hidden1, config.hidden2, config.num_classes);
        Ok(DetectorModel {
            w1: uniform_init(&mut rng, d, d * h1),
            b1: vec![0.05; h1],
            w2: uniform_init(&mut rng, h1, h1 * h2),
            b2: vec![0.05; h2],
            wc: vec![0.0; h2 * m],
            bc: vec![0.0; m],
            wr: vec![0.0; h2 * 4],
            br: vec![0.0; 4],
            config,
        })
    }

    /// Parameter buffers in a fixed order shared with the optimizer.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        vec![
            &self.w1, &self.b1, &self.w2, &self.b2, &self.wc, &self.bc, &self.wr, &self.br,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc,
            &mut self.bc,
            &mut self.wr,
            &mut self.br,
        ]
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let d = self.config.input_dim();
        let (h1, h2, m) = (self.config.hidden1, self.config.hidden2, self.config.num_classes);
        vec![
            vec![d, h1],
            vec![h1],
            vec![h1, h2],
            vec![h2],
            vec![h2, m],
            vec![m],
            vec![h2, 4],
            vec![4],
        ]
    }

    fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        for (buf, shape) in self.params().iter().zip(self.param_shapes()) {
            let expect: usize = shape.iter().product();
            if buf.len() != expect {
                return Err(Error::Data(format!(
                    "checkpoint parameter length {} does not match shape {:?}",
                    buf.len(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// Grid of candidate anchors for an image of the given size.
    pub fn anchors_for(&self, width: u32, height: u32) -> Vec<Anchor> {
        anchor_grid(width, height, self.config.anchor_stride, &self.config.anchor_sizes)
    }
}

/// Forward-pass handle: output vars plus the parameter leaves in
/// [`DetectorModel::params`] order (for gradient extraction).
pub struct ForwardPass {
    pub graph: Graph,
    /// Per-anchor class probabilities, `[N, M]`, rows sum to 1.
    pub probs: Var,
    /// Per-anchor box deltas `(dx, dy, dw, dh)`, `[N, 4]`.
    pub deltas: Var,
    pub params: Vec<Var>,
}

/// Resamples each anchor window of a normalized image to a fixed
/// `s`×`s` grid (nearest neighbor); samples outside the image are 0.
pub fn extract_features(
    pixels: &[f64],
    width: u32,
    height: u32,
    anchors: &[Anchor],
    s: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(anchors.len() * s * s);
    for a in anchors {
        for sy in 0..s {
            let py = (a.y + (sy as f64 + 0.5) * a.h / s as f64).floor();
            for sx in 0..s {
                let px = (a.x + (sx as f64 + 0.5) * a.w / s as f64).floor();
                let v = if px >= 0.0 && py >= 0.0 && (px as u32) < width && (py as u32) < height {
                    pixels[(py as u32 * width + px as u32) as usize]
                } else {
                    0.0
                };
                data.push(v);
            }
        }
    }
    Tensor::new(vec![anchors.len(), s * s], data).expect("feature shape")
}

/// Runs the model on pre-extracted features. With `track_grad` the
/// parameter leaves require gradients so a loss can backpropagate.
pub fn forward(model: &DetectorModel, features: &Tensor, track_grad: bool) -> Result<ForwardPass> {
    let n = features.shape[0];
    if features.shape != vec![n, model.config.input_dim()] {
        return Err(Error::Shape(format!(
            "features {:?} do not match model input dim {}",
            features.shape,
            model.config.input_dim()
        )));
    }
    let graph = Graph::new();
    let x = graph.leaf(features.clone());
    let params: Vec<Var> = model
        .params()
        .iter()
        .zip(model.param_shapes())
        .map(|(buf, shape)| {
            let mut t = Tensor::new(shape, (*buf).clone()).expect("model shapes are consistent");
            t.requires_grad = track_grad;
            graph.leaf(t)
        })
        .collect();
    let (w1, b1, w2, b2, wc, bc, wr, br) = (
        &params[0], &params[1], &params[2], &params[3], &params[4], &params[5], &params[6],
        &params[7],
    );
    let h1 = x.matmul(w1)?.add(&b1.repeat_rows(n)?)?.relu();
    let h2 = h1.matmul(w2)?.add(&b2.repeat_rows(n)?)?.relu();
    let logits = h2.matmul(wc)?.add(&bc.repeat_rows(n)?)?;
    let probs = logits.softmax_rows()?;
    let deltas = h2.matmul(wr)?.add(&br.repeat_rows(n)?)?;
    Ok(ForwardPass {
        graph,
        probs,
        deltas,
        params,
    })
}

/// A scored, classed detection box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredBox {
    pub rect: Rect,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResult {
    pub boxes: Vec<ScoredBox>,
}

/// Greedy per-class non-maximum suppression. Candidates are visited in
/// canonical order (score descending, then coordinates), which makes
/// the result independent of input order.
pub fn nms(mut boxes: Vec<ScoredBox>, threshold: f64) -> Result<DetectionResult> {
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::Config(format!(
            "nms threshold must lie in (0, 1), got {threshold}"
        )));
    }
    boxes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.rect.x.partial_cmp(&b.rect.x).expect("finite"))
            .then(a.rect.y.partial_cmp(&b.rect.y).expect("finite"))
            .then(a.rect.w.partial_cmp(&b.rect.w).expect("finite"))
            .then(a.rect.h.partial_cmp(&b.rect.h).expect("finite"))
            .then(a.class_id.cmp(&b.class_id))
    });
    let mut kept: Vec<ScoredBox> = Vec::new();
    for candidate in boxes {
        let suppressed = kept
            .iter()
            .filter(|k| k.class_id == candidate.class_id)
            .any(|k| iou(&k.rect, &candidate.rect) >= threshold);
        if !suppressed {
            kept.push(candidate);
        }
    }
    Ok(DetectionResult { boxes: kept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            score_threshold: 0.5,
            nms_threshold: 0.3,
        }
    }
}

/// Per-anchor raw detections (decode + score filter, no suppression).
fn raw_detections(
    model: &DetectorModel,
    img: &AnnotatedImage,
    score_threshold: f64,
) -> Result<Vec<ScoredBox>> {
    let anchors = model.anchors_for(img.width, img.height);
    let pixels = normalize_pixels(&img.pixels);
    let features = extract_features(
        &pixels,
        img.width,
        img.height,
        &anchors,
        model.config.feature_size,
    );
    let pass = forward(model, &features, false)?;
    let probs = pass.probs.value();
    let deltas = pass.deltas.value();
    let m = model.config.num_classes;
    let mut out = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        let row = &probs[i * m..(i + 1) * m];
        let (mut best_class, mut best_score) = (1, row[1]);
        for (c, &p) in row.iter().enumerate().skip(2) {
            if p > best_score {
                best_class = c;
                best_score = p;
            }
        }
        if best_score >= score_threshold {
            out.push(ScoredBox {
                rect: decode_box(&deltas[i * 4..(i + 1) * 4], anchor),
                class_id: best_class,
                score: best_score,
            });
        }
    }
    Ok(out)
}

/// Whole-image detection: forward, decode, score filter, NMS.
pub fn detect(
    model: &DetectorModel,
    img: &AnnotatedImage,
    opts: &DetectOptions,
) -> Result<DetectionResult> {
    nms(
        raw_detections(model, img, opts.score_threshold)?,
        opts.nms_threshold,
    )
}

/// Tiled detection: per-patch forward/decode/filter (patches evaluated
/// independently, in parallel under the `parallel` feature), detections
/// mapped back to image coordinates, one global NMS.
pub fn detect_tiled(
    model: &DetectorModel,
    img: &AnnotatedImage,
    patch: u32,
    overlap: u32,
    opts: &DetectOptions,
) -> Result<DetectionResult> {
    let patches = tile(img, patch, overlap)?;
    let per_patch = par_map(patches, |(patch_img, (ox, oy))| {
        raw_detections(model, &patch_img, opts.score_threshold).map(|dets| {
            dets.into_iter()
                .map(|mut d| {
                    d.rect.x += ox as f64;
                    d.rect.y += oy as f64;
                    d
                })
                .collect::<Vec<_>>()
        })
    });
    let mut all = Vec::new();
    for result in per_patch {
        all.extend(result?);
    }
    nms(all, opts.nms_threshold)
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: DetectorModel,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model checkpoint; reloading reproduces outputs
/// bit-exactly (f64 values survive the JSON round trip unchanged).
pub fn save_checkpoint(model: &DetectorModel, path: &std::path::Path) -> Result<()> {
    let blob = serde_json::to_string(&Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
    })?;
    std::fs::write(path, blob)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<DetectorModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {}",
            ckpt.format_version
        )));
    }
    ckpt.model.validate_shapes()?;
    Ok(ckpt.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_err, numeric_gradient};
    use proptest::prelude::*;

    fn gt(x: i32, y: i32, w: u32, h: u32, class_id: usize) -> GroundTruthBox {
        GroundTruthBox {
            x,
            y,
            w,
            h,
            class_id,
            agreement: 1.0,
        }
    }

    fn test_config() -> ModelConfig {
        ModelConfig {
            num_classes: 2,
            feature_size: 4,
            hidden1: 8,
            hidden2: 6,
            anchor_stride: 8,
            anchor_sizes: vec![(8.0, 8.0)],
        }
    }

    #[test]
    fn iou_identity_disjoint_and_partial() {
        let b = Rect::new(3.0, 4.0, 5.0, 6.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&b, &Rect::new(100.0, 100.0, 2.0, 2.0)), 0.0);
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        let c = Rect::new(1.0, 1.0, 2.0, 2.0);
        assert!((iou(&a, &c) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &c), iou(&c, &a));
    }

    #[test]
    fn assignment_tri_state() {
        // max IoU 0.75 -> positive, 0.5 -> ignored, 0.25 -> unlabeled
        let anchors = vec![
            Rect::new(0.0, 0.0, 4.0, 3.0),
            Rect::new(100.0, 0.0, 2.0, 2.0),
            Rect::new(200.0, 0.0, 2.0, 1.0),
        ];
        let boxes = vec![
            gt(0, 0, 4, 4, 1),
            gt(100, 0, 2, 1, 2),
            gt(200, 0, 2, 4, 1),
        ];
        let a = assign_samples(&anchors, &boxes, ASSIGN_LO, ASSIGN_HI).unwrap();
        assert!((a[0].max_iou - 0.75).abs() < 1e-12);
        assert_eq!(
            a[0].state,
            AssignState::Positive {
                class_id: 1,
                box_index: 0
            }
        );
        assert!((a[1].max_iou - 0.5).abs() < 1e-12);
        assert_eq!(a[1].state, AssignState::Ignored);
        assert!((a[2].max_iou - 0.25).abs() < 1e-12);
        assert_eq!(a[2].state, AssignState::Unlabeled);
    }

    #[test]
    fn assignment_empty_boxes_all_unlabeled() {
        let anchors = anchor_grid(16, 16, 8, &[(8.0, 8.0)]);
        let a = assign_samples(&anchors, &[], ASSIGN_LO, ASSIGN_HI).unwrap();
        assert!(a
            .iter()
            .all(|s| s.state == AssignState::Unlabeled && s.max_iou == 0.0));
    }

    #[test]
    fn anchor_grid_counts() {
        assert_eq!(anchor_grid(32, 32, 8, &[(8.0, 8.0)]).len(), 16);
        assert_eq!(anchor_grid(16, 16, 16, &[(8.0, 8.0)]).len(), 1);
        assert_eq!(
            anchor_grid(32, 32, 8, &[(8.0, 8.0), (12.0, 12.0)]).len(),
            32
        );
    }

    #[test]
    fn zeroed_heads_give_uniform_probs_and_anchor_decode() {
        // init() starts both heads at zero
        let model = DetectorModel::init(test_config(), 5).unwrap();
        let features = Tensor::new(vec![3, 16], vec![0.25; 48]).unwrap();
        let pass = forward(&model, &features, false).unwrap();
        for p in pass.probs.value() {
            assert!((p - 0.5).abs() < 1e-15);
        }
        let anchor = Rect::new(4.0, 4.0, 8.0, 8.0);
        let deltas = pass.deltas.value();
        assert!(deltas.iter().all(|&d| d == 0.0));
        assert_eq!(decode_box(&deltas[0..4], &anchor), anchor);
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let model = DetectorModel::init(test_config(), 11).unwrap();
        let features = Tensor::new(vec![5, 16], (0..80).map(|i| i as f64 * 0.01 - 0.4).collect())
            .unwrap();
        let pass = forward(&model, &features, false).unwrap();
        let probs = pass.probs.value();
        for r in 0..5 {
            let sum: f64 = probs[r * 2..(r + 1) * 2].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_gradient_matches_finite_differences() {
        let config = test_config();
        let features =
            Tensor::new(vec![4, 16], (0..64).map(|i| (i as f64 * 0.13).sin()).collect()).unwrap();
        let mut base = DetectorModel::init(config, 3).unwrap();
        // nonzero heads so the probe objective reaches the trunk
        for (i, v) in base.wc.iter_mut().enumerate() {
            *v = ((i as f64) * 0.71).sin() * 0.4;
        }
        for (i, v) in base.wr.iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).cos() * 0.3;
        }

        // mean positive-class probability as scalar objective, probed
        // through the first-layer weights
        let score = |model: &DetectorModel| {
            let pass = forward(model, &features, false).unwrap();
            let n = features.shape[0];
            let coords: Vec<(usize, usize)> = (0..n).map(|r| (r, 1)).collect();
            pass.probs.pick(&coords).unwrap().mean().unwrap().scalar_value()
        };
        let numeric = numeric_gradient(
            |w| {
                let mut m = base.clone();
                m.w1.copy_from_slice(w);
                score(&m)
            },
            &base.w1,
            1e-6,
        );

        let pass = forward(&base, &features, true).unwrap();
        let coords: Vec<(usize, usize)> = (0..4).map(|r| (r, 1)).collect();
        pass.probs
            .pick(&coords)
            .unwrap()
            .mean()
            .unwrap()
            .backward()
            .unwrap();
        let analytic = pass.params[0].grad().unwrap();
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn nms_greedy_example() {
        // IoU(A, B) = 0.6 with threshold 0.5 keeps only the higher score
        let a = ScoredBox {
            rect: Rect::new(0.0, 0.0, 10.0, 3.0),
            class_id: 1,
            score: 0.9,
        };
        let b = ScoredBox {
            rect: Rect::new(0.0, 1.0, 10.0, 3.0),
            class_id: 1,
            score: 0.8,
        };
        assert!((iou(&a.rect, &b.rect) - 0.5).abs() < 1e-12);
        let kept = nms(vec![b.clone(), a.clone()], 0.5).unwrap();
        assert_eq!(kept.boxes, vec![a.clone()]);

        let c = ScoredBox {
            rect: Rect::new(50.0, 50.0, 4.0, 4.0),
            class_id: 1,
            score: 0.7,
        };
        let kept = nms(vec![a.clone(), c.clone()], 0.5).unwrap();
        assert_eq!(kept.boxes.len(), 2, "disjoint boxes all kept");

        let mut b2 = a.clone();
        b2.class_id = 2;
        let kept = nms(vec![a.clone(), b2.clone()], 0.5).unwrap();
        assert_eq!(kept.boxes.len(), 2, "suppression is per class");
    }

    #[test]
    fn encode_decode_round_trip() {
        let anchor = Rect::new(10.0, 20.0, 8.0, 6.0);
        let b = Rect::new(11.5, 18.0, 10.0, 7.5);
        let decoded = decode_box(&encode_box(&b, &anchor), &anchor);
        assert!((decoded.x - b.x).abs() < 1e-9);
        assert!((decoded.y - b.y).abs() < 1e-9);
        assert!((decoded.w - b.w).abs() < 1e-9);
        assert!((decoded.h - b.h).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip_prop(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            aw in 0.5..40.0f64, ah in 0.5..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            bw in 0.5..40.0f64, bh in 0.5..40.0f64,
        ) {
            let anchor = Rect::new(ax, ay, aw, ah);
            let b = Rect::new(bx, by, bw, bh);
            let d = decode_box(&encode_box(&b, &anchor), &anchor);
            prop_assert!((d.x - b.x).abs() < 1e-9);
            prop_assert!((d.y - b.y).abs() < 1e-9);
            prop_assert!((d.w - b.w).abs() < 1e-9);
            prop_assert!((d.h - b.h).abs() < 1e-9);
        }

        #[test]
        fn assignment_partitions_anchors(seed in 0u64..500) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anchors = anchor_grid(40, 40, 5, &[(6.0, 6.0)]);
            let boxes: Vec<GroundTruthBox> = (0..rng.gen_range(0..6))
                .map(|_| gt(rng.gen_range(0..30), rng.gen_range(0..30), rng.gen_range(3..10), rng.gen_range(3..10), 1))
                .collect();
            let assignments = assign_samples(&anchors, &boxes, ASSIGN_LO, ASSIGN_HI).unwrap();
            prop_assert_eq!(assignments.len(), anchors.len());
            for a in &assignments {
                match a.state {
                    AssignState::Positive { .. } => prop_assert!(a.max_iou > ASSIGN_HI),
                    AssignState::Unlabeled => prop_assert!(a.max_iou < ASSIGN_LO),
                    AssignState::Ignored => prop_assert!(a.max_iou >= ASSIGN_LO && a.max_iou <= ASSIGN_HI),
                }
            }
        }

        #[test]
        fn nms_invariant_to_input_order(seed in 0u64..200) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut boxes: Vec<ScoredBox> = (0..12)
                .map(|i| ScoredBox {
                    rect: Rect::new((i % 4) as f64 * 3.0, (i / 4) as f64 * 3.0, 5.0, 5.0),
                    class_id: 1 + (i % 2),
                    score: 0.3 + 0.05 * (i as f64),
                })
                .collect();
            let reference = nms(boxes.clone(), 0.4).unwrap();
            boxes.shuffle(&mut rng);
            let shuffled = nms(boxes, 0.4).unwrap();
            prop_assert_eq!(reference, shuffled);
        }
    }

    fn tiny_image(width: u32, height: u32) -> AnnotatedImage {
        let mut img = AnnotatedImage {
            width,
            height,
            pixels: vec![0; (width * height) as usize],
            boxes: vec![],
            complete: true,
        };
        // bright square near the center so some anchor fires
        for y in height / 2 - 3..height / 2 + 3 {
            for x in width / 2 - 3..width / 2 + 3 {
                img.pixels[(y * width + x) as usize] = 220;
            }
        }
        img
    }

    #[test]
    fn single_patch_tiling_equals_plain_detection() {
        let model = DetectorModel::init(test_config(), 42).unwrap();
        let img = tiny_image(32, 32);
        let opts = DetectOptions {
            score_threshold: 0.1,
            nms_threshold: 0.3,
        };
        let plain = detect(&model, &img, &opts).unwrap();
        let tiled = detect_tiled(&model, &img, 32, 0, &opts).unwrap();
        assert_eq!(plain, tiled);
        let total_anchors = model.anchors_for(32, 32).len();
        assert!(plain.boxes.len() <= total_anchors);
    }

    #[test]
    fn overlapping_patches_merge_duplicates() {
        let model = DetectorModel::init(test_config(), 42).unwrap();
        let img = tiny_image(48, 32);
        let opts = DetectOptions {
            score_threshold: 0.05,
            nms_threshold: 0.3,
        };
        // overlap 16 makes the central square visible in both windows
        let tiled = detect_tiled(&model, &img, 32, 16, &opts).unwrap();
        for (i, a) in tiled.boxes.iter().enumerate() {
            for b in tiled.boxes.iter().skip(i + 1) {
                if a.class_id == b.class_id {
                    assert!(iou(&a.rect, &b.rect) < 0.3);
                }
            }
        }
        let anchors_per_patch = model.anchors_for(32, 32).len();
        assert!(tiled.boxes.len() <= anchors_per_patch * 2);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let model = DetectorModel::init(test_config(), 9).unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        let img = tiny_image(32, 32);
        let opts = DetectOptions::default();
        assert_eq!(
            detect(&model, &img, &opts).unwrap(),
            detect(&loaded, &img, &opts).unwrap()
        );
    }
}

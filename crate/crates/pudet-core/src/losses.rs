//! Classification and localization losses.
//!
//! The risk estimators come in two layers. The H-space functions
//! ([`pn_risk`], [`pu_risk_binary`], [`pu_risk_multiclass`]) combine
//! per-sample loss values H(c, z) that the caller already computed, so
//! they work for any sample-level loss. The c-space wrappers
//! ([`cls_loss_pn`], [`cls_loss_pu_binary`], ...) plug in cross entropy,
//! which is what network training uses.
//!
//! The PU estimators approximate the negative-class risk from unlabeled
//! and positively labeled samples. The combined variant estimates the
//! all-sample mean over unlabeled ∪ positives; the naive variant uses
//! unlabeled samples only, which is biased whenever labeled positives
//! were drawn from the same images. Both clamp the estimated negative
//! risk at zero per batch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::detector::{AssignState, SampleAssignment};
use crate::error::{Error, Result};

/// Probabilities are clipped into `[ε, 1-ε]` before any log.
pub const PROB_EPSILON: f64 = 1e-12;

fn clip01(c: &Var) -> Var {
    c.max_scalar(PROB_EPSILON).min_scalar(1.0 - PROB_EPSILON)
}

/// Elementwise H(c, 0) = −log(1 − c).
pub fn h_neg(c: &Var) -> Result<Var> {
    Ok(clip01(c).neg().add_scalar(1.0).log()?.neg())
}

/// Elementwise H(c, 1) = −log(c).
pub fn h_pos(c: &Var) -> Result<Var> {
    Ok(clip01(c).log()?.neg())
}

/// Binary cross entropy, elementwise: −z·log c − (1−z)·log(1−c).
pub fn ce(c: &Var, z: u8) -> Result<Var> {
    match z {
        0 => h_neg(c),
        1 => h_pos(c),
        _ => Err(Error::Usage(format!("binary label must be 0 or 1, got {z}"))),
    }
}

/// Categorical cross entropy −log c[z] for a probability vector.
pub fn categorical_ce(c: &Var, z: usize) -> Result<Var> {
    let shape = c.shape();
    let m = match shape.as_slice() {
        [m] => *m,
        _ => {
            return Err(Error::Shape(format!(
                "categorical_ce expects a probability vector, got {shape:?}"
            )))
        }
    };
    if z >= m {
        return Err(Error::Usage(format!(
            "class index {z} out of range for {m} classes"
        )));
    }
    Ok(h_pos(&c.gather_rows(&[z])?)?.sum())
}

/// Positive class priors π₁..π_{M−1}; each in (0, 1), summing below 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassPriors {
    values: Vec<f64>,
}

impl ClassPriors {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("priors need at least one class".into()));
        }
        for &v in &values {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::Config(format!("prior {v} outside (0, 1)")));
            }
        }
        let sum: f64 = values.iter().sum();
        if sum >= 1.0 {
            return Err(Error::Config(format!("priors sum to {sum}, must stay below 1")));
        }
        Ok(ClassPriors { values })
    }

    pub fn binary(pi: f64) -> Result<Self> {
        ClassPriors::new(vec![pi])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Prior for a 1-based positive class id.
    pub fn get(&self, class_id: usize) -> f64 {
        self.values[class_id - 1]
    }

    pub fn num_positive_classes(&self) -> usize {
        self.values.len()
    }
}

impl TryFrom<Vec<f64>> for ClassPriors {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        ClassPriors::new(values)
    }
}

impl From<ClassPriors> for Vec<f64> {
    fn from(p: ClassPriors) -> Vec<f64> {
        p.values
    }
}

/// Supervised classification risk from per-sample H values:
/// (Σ H(c_n, 0) + Σ H(c_p, 1)) / (N_n + N_p).
pub fn pn_risk(h_n0: &Var, h_p1: &Var) -> Result<Var> {
    let n = h_n0.numel() + h_p1.numel();
    if n == 0 {
        return Err(Error::Usage(
            "classification loss undefined: no samples in batch".into(),
        ));
    }
    Ok(h_n0.sum().add(&h_p1.sum())?.div_scalar(n as f64))
}

/// All-sample mean estimated from unlabeled ∪ positive samples.
pub fn combined_mean(h_u0: &Var, h_p0: &Var) -> Result<Var> {
    let n = h_u0.numel() + h_p0.numel();
    if n == 0 {
        return Err(Error::Usage(
            "combined mean undefined: no unlabeled or positive samples".into(),
        ));
    }
    Ok(h_u0.sum().add(&h_p0.sum())?.div_scalar(n as f64))
}

/// All-sample mean estimated from unlabeled samples only.
pub fn naive_mean(h_u0: &Var) -> Result<Var> {
    if h_u0.numel() == 0 {
        return Err(Error::Usage(
            "naive mean undefined: no unlabeled samples".into(),
        ));
    }
    h_u0.mean()
}

/// Which approximation of the all-sample mean the PU loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuMode {
    Combined,
    Naive,
}

/// Diagnostics of one PU risk evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuFlags {
    /// Estimated negative-class risk before the max{0, ·} clamp.
    pub unclamped_negative_term: f64,
    pub clamp_active: bool,
}

impl PuFlags {
    fn from_unclamped(v: f64) -> Self {
        PuFlags {
            unclamped_negative_term: v,
            clamp_active: v < 0.0,
        }
    }
}

/// Binary PU classification risk from per-sample H values:
///
/// max{0, R̂ₓ − (π/N_p)·Σ H(c_p, 0)} + (π/N_p)·Σ H(c_p, 1)
///
/// where R̂ₓ is the combined or naive all-sample mean. A batch without
/// positives degrades to the clamped all-sample term alone.
pub fn pu_risk_binary(
    h_u0: &Var,
    h_p0: &Var,
    h_p1: &Var,
    pi: f64,
    mode: PuMode,
) -> Result<(Var, PuFlags)> {
    if !(0.0 < pi && pi < 1.0) {
        return Err(Error::Config(format!("class prior {pi} outside (0, 1)")));
    }
    if h_p0.numel() != h_p1.numel() {
        return Err(Error::Usage(
            "positive H(·,0) and H(·,1) sample counts differ".into(),
        ));
    }
    let np = h_p0.numel();
    let rx = match mode {
        PuMode::Combined => combined_mean(h_u0, h_p0)?,
        PuMode::Naive => naive_mean(h_u0)?,
    };
    if np == 0 {
        let unclamped = rx.scalar_value();
        return Ok((rx.clamp_min_zero(), PuFlags::from_unclamped(unclamped)));
    }
    let scale = pi / np as f64;
    let unclamped = rx.sub(&h_p0.sum().mul_scalar(scale))?;
    let flags = PuFlags::from_unclamped(unclamped.scalar_value());
    let loss = unclamped
        .clamp_min_zero()
        .add(&h_p1.sum().mul_scalar(scale))?;
    Ok((loss, flags))
}

/// Per-class positive H values for the multi-class PU risk. `h_0` holds
/// H(c, 0) and `h_m` holds H(c, m) for the samples of one class.
pub struct ClassTerms {
    pub h_0: Var,
    pub h_m: Var,
}

/// Multi-class PU classification risk:
///
/// max{0, R̂ₓ − Σ_m (π_m/N_p^m)·Σ H(c_p^m, 0)} + Σ_m (π_m/N_p^m)·Σ H(c_p^m, m)
///
/// R̂ₓ is the combined mean over unlabeled ∪ all positives. Classes with
/// no positives in the batch contribute no terms.
pub fn pu_risk_multiclass(
    h_u0: &Var,
    per_class: &[ClassTerms],
    priors: &ClassPriors,
) -> Result<(Var, PuFlags)> {
    if per_class.len() != priors.num_positive_classes() {
        return Err(Error::Config(format!(
            "{} classes supplied but {} priors configured",
            per_class.len(),
            priors.num_positive_classes()
        )));
    }
    let np_total: usize = per_class.iter().map(|c| c.h_0.numel()).sum();
    let denom = h_u0.numel() + np_total;
    if denom == 0 {
        return Err(Error::Usage(
            "combined mean undefined: no unlabeled or positive samples".into(),
        ));
    }
    for c in per_class {
        if c.h_0.numel() != c.h_m.numel() {
            return Err(Error::Usage(
                "per-class H(·,0) and H(·,m) sample counts differ".into(),
            ));
        }
    }

    let mut sum = h_u0.sum();
    for c in per_class {
        sum = sum.add(&c.h_0.sum())?;
    }
    let rx = sum.div_scalar(denom as f64);

    let mut unclamped = rx;
    let mut pos_term: Option<Var> = None;
    for (i, c) in per_class.iter().enumerate() {
        let np = c.h_0.numel();
        if np == 0 {
            continue;
        }
        let scale = priors.values()[i] / np as f64;
        unclamped = unclamped.sub(&c.h_0.sum().mul_scalar(scale))?;
        let term = c.h_m.sum().mul_scalar(scale);
        pos_term = Some(match pos_term {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let flags = PuFlags::from_unclamped(unclamped.scalar_value());
    let clamped = unclamped.clamp_min_zero();
    let loss = match pos_term {
        Some(p) => clamped.add(&p)?,
        None => clamped,
    };
    Ok((loss, flags))
}

/// Eq.-1-style supervised loss over predicted probabilities of
/// negatives and positives.
pub fn cls_loss_pn(c_neg: &Var, c_pos: &Var) -> Result<Var> {
    pn_risk(&h_neg(c_neg)?, &h_pos(c_pos)?)
}

/// Combined all-sample mean of H(·, 0) over unlabeled ∪ positives.
pub fn approx_mean_risk_combined(c_unlabeled: &Var, c_pos: &Var) -> Result<Var> {
    combined_mean(&h_neg(c_unlabeled)?, &h_neg(c_pos)?)
}

/// Naive all-sample mean of H(·, 0) over unlabeled samples only.
pub fn approx_mean_risk_naive(c_unlabeled: &Var) -> Result<Var> {
    naive_mean(&h_neg(c_unlabeled)?)
}

/// Binary non-negative PU classification loss over probabilities.
pub fn cls_loss_pu_binary(
    c_unlabeled: &Var,
    c_pos: &Var,
    pi: f64,
    mode: PuMode,
) -> Result<(Var, PuFlags)> {
    pu_risk_binary(&h_neg(c_unlabeled)?, &h_neg(c_pos)?, &h_pos(c_pos)?, pi, mode)
}

/// Multi-class non-negative PU classification loss. `c_unlabeled` holds
/// probability rows `[N_u, M]`; `c_pos_by_class` maps a 1-based class id
/// to the probability rows of its positive samples.
pub fn cls_loss_pu_multiclass(
    c_unlabeled: &Var,
    c_pos_by_class: &BTreeMap<usize, Var>,
    priors: &ClassPriors,
) -> Result<(Var, PuFlags)> {
    let m = priors.num_positive_classes() + 1;
    let h_u0 = background_ce(c_unlabeled, m)?;
    let mut per_class = Vec::with_capacity(priors.num_positive_classes());
    for class_id in 1..m {
        let terms = match c_pos_by_class.get(&class_id) {
            Some(rows) => ClassTerms {
                h_0: background_ce(rows, m)?,
                h_m: class_ce(rows, m, class_id)?,
            },
            None => {
                let graph = c_unlabeled.graph();
                ClassTerms {
                    h_0: graph.leaf(Tensor::vector(vec![])),
                    h_m: graph.leaf(Tensor::vector(vec![])),
                }
            }
        };
        per_class.push(terms);
    }
    pu_risk_multiclass(&h_u0, &per_class, priors)
}

/// H(c, 0) = −log c[0] for every row of an `[n, M]` probability matrix.
fn background_ce(rows: &Var, m: usize) -> Result<Var> {
    class_ce(rows, m, 0)
}

fn class_ce(rows: &Var, m: usize, class: usize) -> Result<Var> {
    let shape = rows.shape();
    match shape.as_slice() {
        [_, cols] if *cols == m => {}
        _ => {
            return Err(Error::Shape(format!(
                "probability rows {shape:?} do not match {m} classes"
            )))
        }
    }
    let coords: Vec<(usize, usize)> = (0..shape[0]).map(|r| (r, class)).collect();
    h_pos(&rows.pick(&coords)?)
}

/// Smooth L1 over matching tensors: Σ_d f(v_d − b_d) with
/// f(t) = 0.5t² for |t| < 1, |t| − 0.5 otherwise, averaged over rows
/// (a 1-d input counts as one sample).
pub fn smooth_l1(v: &Var, b: &Var) -> Result<Var> {
    let shape = v.shape();
    if shape != b.shape() {
        return Err(Error::Shape(format!(
            "smooth_l1 operands differ: {:?} vs {:?}",
            shape,
            b.shape()
        )));
    }
    if v.numel() == 0 {
        return Ok(v.graph().scalar(0.0));
    }
    let rows = match shape.as_slice() {
        [r, _] => *r,
        _ => 1,
    };
    let a = v.sub(b)?.abs();
    let m = a.min_scalar(1.0);
    // 0.5·min(|t|,1)² + (|t| − min(|t|,1)) equals the two-branch form
    let f = m.mul(&m)?.mul_scalar(0.5).add(&a.sub(&m)?)?;
    Ok(f.sum().div_scalar(rows as f64))
}

/// Weighted binary cross entropy (positive term scaled by `w`),
/// elementwise.
pub fn weighted_ce(c: &Var, z: u8, w: f64) -> Result<Var> {
    if w <= 0.0 {
        return Err(Error::Config(format!("positive-class weight {w} must be > 0")));
    }
    match z {
        0 => h_neg(c),
        1 => Ok(h_pos(c)?.mul_scalar(w)),
        _ => Err(Error::Usage(format!("binary label must be 0 or 1, got {z}"))),
    }
}

/// Focal loss, elementwise:
/// −α·z·(1−c)^γ·log c − (1−α)·(1−z)·c^γ·log(1−c).
pub fn focal(c: &Var, z: u8, alpha: f64, gamma: f64) -> Result<Var> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("focal alpha {alpha} outside (0, 1)")));
    }
    if gamma < 0.0 {
        return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
    }
    let clipped = clip01(c);
    match z {
        1 => {
            let modulator = pow_scalar(&clipped.neg().add_scalar(1.0), gamma)?;
            Ok(modulator.mul(&h_pos(c)?)?.mul_scalar(alpha))
        }
        0 => {
            let modulator = pow_scalar(&clipped, gamma)?;
            Ok(modulator.mul(&h_neg(c)?)?.mul_scalar(1.0 - alpha))
        }
        _ => Err(Error::Usage(format!("binary label must be 0 or 1, got {z}"))),
    }
}

/// x^γ for strictly positive x, as exp(γ·ln x).
fn pow_scalar(x: &Var, gamma: f64) -> Result<Var> {
    Ok(x.log()?.mul_scalar(gamma).exp())
}

/// Which classification term [`total_loss`] uses. Baseline kinds treat
/// unlabeled anchors as negatives; PU kinds treat them as unlabeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PnBaseline,
    PuBinary,
    PuNaive,
    PuMulticlass,
    WceBaseline,
    FocalBaseline,
}

impl LossKind {
    pub fn is_pu(self) -> bool {
        matches!(self, LossKind::PuBinary | LossKind::PuNaive | LossKind::PuMulticlass)
    }
}

/// Scalar summary of one batch loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    /// True when the PU negative-risk estimate was clamped; always
    /// false for baseline kinds (which report a 0 pre-clamp term).
    pub clamp_active: bool,
    pub unclamped_negative_term: f64,
}

/// Everything the batch loss needs besides the loss kind.
pub struct LossInputs<'a> {
    pub assignments: &'a [SampleAssignment],
    /// `[N, M]` class probabilities, rows aligned with assignments.
    pub probs: &'a Var,
    /// `[N, 4]` predicted deltas, rows aligned with assignments.
    pub deltas: &'a Var,
    /// Encoded regression targets, aligned with assignments; only rows
    /// of positive anchors are read.
    pub loc_targets: &'a [[f64; 4]],
    pub priors: &'a ClassPriors,
    pub loc_weight: f64,
}

/// Total training loss: classification term chosen by `kind` plus
/// smooth-L1 localization over positive anchors. Ignored anchors are
/// excluded everywhere.
pub fn total_loss(inputs: &LossInputs, kind: LossKind) -> Result<(Var, LossBreakdown)> {
    let n = inputs.assignments.len();
    let probs_shape = inputs.probs.shape();
    let m = match probs_shape.as_slice() {
        [rows, m] if *rows == n => *m,
        _ => {
            return Err(Error::Shape(format!(
                "probs {probs_shape:?} do not match {n} assignments"
            )))
        }
    };
    if inputs.deltas.shape() != vec![n, 4] {
        return Err(Error::Shape(format!(
            "deltas {:?} do not match {n} assignments",
            inputs.deltas.shape()
        )));
    }
    if inputs.loc_targets.len() != n {
        return Err(Error::Shape(format!(
            "{} loc targets for {n} assignments",
            inputs.loc_targets.len()
        )));
    }
    if inputs.priors.num_positive_classes() + 1 != m {
        return Err(Error::Config(format!(
            "{} priors configured for {m} model classes",
            inputs.priors.num_positive_classes()
        )));
    }
    let binary_only = matches!(
        kind,
        LossKind::PuBinary | LossKind::PuNaive | LossKind::WceBaseline | LossKind::FocalBaseline
    );
    if binary_only && m != 2 {
        return Err(Error::Config(format!(
            "loss kind {kind:?} requires a binary model (M = 2), got M = {m}"
        )));
    }

    let mut unlabeled_rows: Vec<usize> = Vec::new();
    let mut positive_rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in inputs.assignments {
        match a.state {
            AssignState::Unlabeled => unlabeled_rows.push(a.anchor_index),
            AssignState::Positive { class_id, .. } => {
                positive_rows.entry(class_id).or_default().push(a.anchor_index)
            }
            AssignState::Ignored => {}
        }
    }
    let all_positive_rows: Vec<usize> = positive_rows.values().flatten().copied().collect();

    let (cls, flags) = match kind {
        LossKind::PnBaseline => {
            let total = unlabeled_rows.len() + all_positive_rows.len();
            if total == 0 {
                return Err(Error::Usage(
                    "classification loss undefined: every anchor is ignored".into(),
                ));
            }
            let mut sum = background_ce(&inputs.probs.gather_rows(&unlabeled_rows)?, m)?.sum();
            for (&class_id, rows) in &positive_rows {
                let h = class_ce(&inputs.probs.gather_rows(rows)?, m, class_id)?;
                sum = sum.add(&h.sum())?;
            }
            (sum.div_scalar(total as f64), None)
        }
        LossKind::WceBaseline | LossKind::FocalBaseline => {
            let total = unlabeled_rows.len() + all_positive_rows.len();
            if total == 0 {
                return Err(Error::Usage(
                    "classification loss undefined: every anchor is ignored".into(),
                ));
            }
            let c_neg = positive_column(inputs.probs, &unlabeled_rows)?;
            let c_pos = positive_column(inputs.probs, &all_positive_rows)?;
            let (neg, pos) = match kind {
                LossKind::WceBaseline => {
                    let w = 1.0 / inputs.priors.get(1);
                    (weighted_ce(&c_neg, 0, w)?, weighted_ce(&c_pos, 1, w)?)
                }
                _ => (
                    focal(&c_neg, 0, FOCAL_ALPHA, FOCAL_GAMMA)?,
                    focal(&c_pos, 1, FOCAL_ALPHA, FOCAL_GAMMA)?,
                ),
            };
            (neg.sum().add(&pos.sum())?.div_scalar(total as f64), None)
        }
        LossKind::PuBinary | LossKind::PuNaive => {
            let mode = if kind == LossKind::PuBinary {
                PuMode::Combined
            } else {
                PuMode::Naive
            };
            let c_unl = positive_column(inputs.probs, &unlabeled_rows)?;
            let c_pos = positive_column(inputs.probs, &all_positive_rows)?;
            let (loss, flags) =
                cls_loss_pu_binary(&c_unl, &c_pos, inputs.priors.get(1), mode)?;
            (loss, Some(flags))
        }
        LossKind::PuMulticlass => {
            let c_unl = inputs.probs.gather_rows(&unlabeled_rows)?;
            let mut by_class = BTreeMap::new();
            for (&class_id, rows) in &positive_rows {
                by_class.insert(class_id, inputs.probs.gather_rows(rows)?);
            }
            let (loss, flags) = cls_loss_pu_multiclass(&c_unl, &by_class, inputs.priors)?;
            (loss, Some(flags))
        }
    };

    let loc = if all_positive_rows.is_empty() {
        inputs.probs.graph().scalar(0.0)
    } else {
        let pred = inputs.deltas.gather_rows(&all_positive_rows)?;
        let mut target_data = Vec::with_capacity(all_positive_rows.len() * 4);
        for &row in &all_positive_rows {
            target_data.extend_from_slice(&inputs.loc_targets[row]);
        }
        let target = inputs.probs.graph().leaf(
            Tensor::new(vec![all_positive_rows.len(), 4], target_data).expect("target shape"),
        );
        smooth_l1(&pred, &target)?.mul_scalar(inputs.loc_weight)
    };

    let total = cls.add(&loc)?;
    let flags = flags.unwrap_or(PuFlags {
        unclamped_negative_term: 0.0,
        clamp_active: false,
    });
    let breakdown = LossBreakdown {
        total: total.scalar_value(),
        cls: cls.scalar_value(),
        loc: loc.scalar_value(),
        clamp_active: flags.clamp_active,
        unclamped_negative_term: flags.unclamped_negative_term,
    };
    Ok((total, breakdown))
}

/// Positive-class probability column c = P(class 1) of selected rows.
fn positive_column(probs: &Var, rows: &[usize]) -> Result<Var> {
    let coords: Vec<(usize, usize)> = rows.iter().map(|&r| (r, 1)).collect();
    probs.pick(&coords)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

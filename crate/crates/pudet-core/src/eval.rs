//! Detection scoring: greedy one-to-one matching, per-class
//! precision/recall/F1 with macro averages, multi-run aggregation, and
//! the paired statistics used by the comparison reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detector::{iou, Rect, ScoredBox};
use crate::error::{Error, Result};
use crate::synth::GroundTruthBox;

/// How a detection may claim a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// IoU at or above the threshold (the standard detection criterion).
    #[default]
    Iou,
    /// The detection's center lies inside the ground-truth box
    /// (point-annotation parity; the threshold is ignored).
    CenterInBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Outcome of matching one image's detections against its annotations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub per_class: BTreeMap<usize, ClassCounts>,
    /// One (detection index, ground-truth index) entry per true positive.
    pub pairs: Vec<(usize, usize)>,
}

impl MatchReport {
    /// Folds another image's report into this one.
    pub fn absorb(&mut self, other: &MatchReport) {
        for (&class, counts) in &other.per_class {
            let c = self.per_class.entry(class).or_default();
            c.tp += counts.tp;
            c.fp += counts.fp;
            c.fn_ += counts.fn_;
        }
    }
}

/// Greedy one-to-one matching, detections visited by descending score
/// (ties by lower index). Each detection claims the best eligible
/// unmatched ground-truth box of its class; each box is claimed once.
pub fn match_detections(
    detections: &[ScoredBox],
    ground_truth: &[GroundTruthBox],
    rule: MatchRule,
    iou_threshold: f64,
) -> Result<MatchReport> {
    if !(0.0 < iou_threshold && iou_threshold < 1.0) {
        return Err(Error::Config(format!(
            "match threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; ground_truth.len()];
    let mut report = MatchReport::default();
    let classes: BTreeSet<usize> = detections
        .iter()
        .map(|d| d.class_id)
        .chain(ground_truth.iter().map(|g| g.class_id))
        .collect();
    for class in classes {
        report.per_class.insert(class, ClassCounts::default());
    }

    for di in order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != det.class_id {
                continue;
            }
            let gt_rect = Rect::from(gt);
            // higher is better; ties resolved by the lower index via
            // the strict comparison below
            let quality = match rule {
                MatchRule::Iou => {
                    let v = iou(&det.rect, &gt_rect);
                    if v < iou_threshold {
                        continue;
                    }
                    v
                }
                MatchRule::CenterInBox => {
                    let (cx, cy) = (det.rect.x + det.rect.w / 2.0, det.rect.y + det.rect.h / 2.0);
                    let inside = cx >= gt_rect.x
                        && cx < gt_rect.x + gt_rect.w
                        && cy >= gt_rect.y
                        && cy < gt_rect.y + gt_rect.h;
                    if !inside {
                        continue;
                    }
                    let (gx, gy) = (gt_rect.x + gt_rect.w / 2.0, gt_rect.y + gt_rect.h / 2.0);
                    -((cx - gx).powi(2) + (cy - gy).powi(2))
                }
            };
            if best.map_or(true, |(_, q)| quality > q) {
                best = Some((gi, quality));
            }
        }
        let counts = report.per_class.entry(det.class_id).or_default();
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                counts.tp += 1;
                report.pairs.push((di, gi));
            }
            None => counts.fp += 1,
        }
    }

    for (gi, gt) in ground_truth.iter().enumerate() {
        if !gt_taken[gi] {
            report.per_class.entry(gt.class_id).or_default().fn_ += 1;
        }
    }
    Ok(report)
}

/// Precision, recall, and F1 for one class (or a macro average).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(c: &ClassCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Prf {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Per-class metrics plus their macro average.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_class: BTreeMap<usize, Prf>,
    pub macro_avg: Prf,
}

pub fn metrics(report: &MatchReport) -> MetricSummary {
    let per_class: BTreeMap<usize, Prf> = report
        .per_class
        .iter()
        .map(|(&class, counts)| (class, Prf::from_counts(counts)))
        .collect();
    let n = per_class.len();
    let macro_avg = if n == 0 {
        Prf::default()
    } else {
        let sum = |f: fn(&Prf) -> f64| per_class.values().map(f).sum::<f64>() / n as f64;
        Prf {
            precision: sum(|p| p.precision),
            recall: sum(|p| p.recall),
            f1: sum(|p| p.f1),
        }
    };
    MetricSummary {
        per_class,
        macro_avg,
    }
}

/// Mean and sample standard deviation of each metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSummary {
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

/// Arithmetic mean and sample std (n−1 denominator; 0 for a single
/// run) across runs or folds.
pub fn aggregate(runs: &[MetricSummary]) -> Result<AggregateSummary> {
    if runs.is_empty() {
        return Err(Error::Usage("aggregate requires at least one run".into()));
    }
    let classes: BTreeSet<usize> = runs
        .iter()
        .flat_map(|r| r.per_class.keys().copied())
        .collect();
    let collect = |get: &dyn Fn(&MetricSummary) -> Prf| -> (Prf, Prf) {
        let ps: Vec<Prf> = runs.iter().map(|r| get(r)).collect();
        (
            Prf {
                precision: mean(ps.iter().map(|p| p.precision)),
                recall: mean(ps.iter().map(|p| p.recall)),
                f1: mean(ps.iter().map(|p| p.f1)),
            },
            Prf {
                precision: sample_std(ps.iter().map(|p| p.precision)),
                recall: sample_std(ps.iter().map(|p| p.recall)),
                f1: sample_std(ps.iter().map(|p| p.f1)),
            },
        )
    };
    let mut mean_summary = MetricSummary::default();
    let mut std_summary = MetricSummary::default();
    for class in classes {
        let get = move |r: &MetricSummary| r.per_class.get(&class).copied().unwrap_or_default();
        let (m, s) = collect(&get);
        mean_summary.per_class.insert(class, m);
        std_summary.per_class.insert(class, s);
    }
    let (m, s) = collect(&|r: &MetricSummary| r.macro_avg);
    mean_summary.macro_avg = m;
    std_summary.macro_avg = s;
    Ok(AggregateSummary {
        mean: mean_summary,
        std: std_summary,
    })
}

pub fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

pub fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values.clone());
    (values.map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Two-sided paired Student's t-test. Returns (t, p). All-zero
/// differences give p = 1; zero-variance nonzero differences give p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Usage("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
    let n = d.len() as f64;
    let md = mean(d.iter().copied());
    let sd = sample_std(d.iter().copied());
    if sd == 0.0 {
        return Ok(if md == 0.0 {
            (0.0, 1.0)
        } else {
            (md.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = md / (sd / n.sqrt());
    let df = n - 1.0;
    Ok((t, student_t_two_sided_p(t, df)))
}

/// Two-sided p-value from the t distribution:
/// p = I_{ν/(ν+t²)}(ν/2, 1/2) via the regularized incomplete beta.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Regularized incomplete beta I_x(a, b), continued-fraction form.
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Lentz's continued fraction for the incomplete beta.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Benjamini–Hochberg step-up adjustment. Input order is preserved;
/// adjusted values are capped at 1.
pub fn benjamini_hochberg(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p_values.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Usage(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).expect("finite p"));
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        // grouping the factor keeps the m/m rank exactly 1
        let scaled = (p_values[idx] * (m as f64 / (rank + 1) as f64)).min(1.0);
        running_min = running_min.min(scaled);
        adjusted[idx] = running_min;
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, w: f64, h: f64, class_id: usize, score: f64) -> ScoredBox {
        ScoredBox {
            rect: Rect::new(x, y, w, h),
            class_id,
            score,
        }
    }

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

    #[test]
    fn perfect_detector_matches_everything() {
        let truths = vec![gt(0, 0, 10, 10, 1), gt(30, 0, 8, 8, 2)];
        let dets: Vec<ScoredBox> = truths
            .iter()
            .map(|g| det(g.x as f64, g.y as f64, g.w as f64, g.h as f64, g.class_id, 0.9))
            .collect();
        let report = match_detections(&dets, &truths, MatchRule::Iou, 0.5).unwrap();
        for counts in report.per_class.values() {
            assert_eq!(counts.fp, 0);
            assert_eq!(counts.fn_, 0);
        }
        let summary = metrics(&report);
        assert_eq!(summary.macro_avg.f1, 1.0);
        assert_eq!(summary.macro_avg.precision, 1.0);
        assert_eq!(summary.macro_avg.recall, 1.0);
    }

    #[test]
    fn no_detections_all_false_negatives() {
        let truths = vec![gt(0, 0, 10, 10, 1), gt(30, 0, 8, 8, 1)];
        let report = match_detections(&[], &truths, MatchRule::Iou, 0.5).unwrap();
        let c = report.per_class[&1];
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 2));
    }

    #[test]
    fn double_detection_counts_one_fp() {
        let truths = vec![gt(0, 0, 10, 10, 1)];
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 1, 0.8),
            det(1.0, 0.0, 10.0, 10.0, 1, 0.9),
        ];
        let report = match_detections(&dets, &truths, MatchRule::Iou, 0.5).unwrap();
        let c = report.per_class[&1];
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        // the higher-score detection (index 1) claims the box
        assert_eq!(report.pairs, vec![(1, 0)]);
    }

    #[test]
    fn center_rule_matches_containing_box() {
        let truths = vec![gt(0, 0, 10, 10, 1)];
        // poor IoU but center (5, 5) inside the box
        let dets = vec![det(3.0, 3.0, 4.0, 4.0, 1, 0.9)];
        let miss = match_detections(&dets, &truths, MatchRule::Iou, 0.5).unwrap();
        assert_eq!(miss.per_class[&1].tp, 0);
        let hit = match_detections(&dets, &truths, MatchRule::CenterInBox, 0.5).unwrap();
        assert_eq!(hit.per_class[&1].tp, 1);
    }

    #[test]
    fn metrics_examples() {
        let mut report = MatchReport::default();
        report.per_class.insert(
            1,
            ClassCounts {
                tp: 1,
                fp: 1,
                fn_: 1,
            },
        );
        let s = metrics(&report);
        assert_eq!(s.per_class[&1].precision, 0.5);
        assert_eq!(s.per_class[&1].recall, 0.5);
        assert_eq!(s.per_class[&1].f1, 0.5);

        let mut zero = MatchReport::default();
        zero.per_class.insert(
            1,
            ClassCounts {
                tp: 0,
                fp: 3,
                fn_: 2,
            },
        );
        assert_eq!(metrics(&zero).per_class[&1].f1, 0.0);

        // harmonic mean check
        assert!((f1_score(0.439, 0.608) - 0.50985).abs() < 1e-4);
    }

    #[test]
    fn aggregate_examples() {
        let summary = |f1: f64| MetricSummary {
            per_class: BTreeMap::from([(
                1,
                Prf {
                    precision: f1,
                    recall: f1,
                    f1,
                },
            )]),
            macro_avg: Prf {
                precision: f1,
                recall: f1,
                f1,
            },
        };
        let same = aggregate(&[summary(0.5), summary(0.5)]).unwrap();
        assert_eq!(same.std.macro_avg.f1, 0.0);

        let two = aggregate(&[summary(0.4), summary(0.6)]).unwrap();
        assert!((two.mean.macro_avg.f1 - 0.5).abs() < 1e-12);
        assert!((two.std.macro_avg.f1 - 0.141421).abs() < 1e-6);

        let one = aggregate(&[summary(0.7)]).unwrap();
        assert_eq!(one.mean.macro_avg.f1, 0.7);
        assert_eq!(one.std.macro_avg.f1, 0.0);

        assert!(matches!(aggregate(&[]), Err(Error::Usage(_))));
    }

    /// Numeric-integration oracle for the two-sided t-test p-value:
    /// Simpson's rule over the t density, independent of the
    /// incomplete-beta implementation.
    fn t_p_value_oracle(t: f64, df: f64) -> f64 {
        let pdf = |x: f64| {
            let c = (ln_gamma((df + 1.0) / 2.0)
                - ln_gamma(df / 2.0)
                - 0.5 * (df * std::f64::consts::PI).ln())
            .exp();
            c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
        };
        // p = 1 − 2·∫_0^{|t|} pdf, avoiding the heavy infinite tail
        let hi = t.abs();
        let n = 200_000;
        let hstep = hi / n as f64;
        let mut acc = pdf(0.0) + pdf(hi);
        for i in 1..n {
            let x = i as f64 * hstep;
            acc += pdf(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * acc * hstep / 3.0
    }

    #[test]
    fn paired_t_test_example() {
        let (t, p) = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((t - 3.4641).abs() < 1e-4);
        assert!((p - 0.0742).abs() < 1e-3);
        let oracle = t_p_value_oracle(t, 2.0);
        assert!((p - oracle).abs() < 1e-3, "p {p} vs oracle {oracle}");
    }

    #[test]
    fn paired_t_test_degenerate_and_symmetry() {
        let a = [0.5, 0.6, 0.7];
        let (t, p) = paired_t_test(&a, &a).unwrap();
        assert_eq!((t, p), (0.0, 1.0));

        let b = [0.1, 0.65, 0.4];
        let (t1, p1) = paired_t_test(&a, &b).unwrap();
        let (t2, p2) = paired_t_test(&b, &a).unwrap();
        assert!((t1 + t2).abs() < 1e-12, "sign flip negates t");
        assert!((p1 - p2).abs() < 1e-12, "p is symmetric");
    }

    #[test]
    fn t_test_matches_oracle_across_dfs() {
        for (t, df) in [(0.5, 4.0), (1.7, 9.0), (2.9, 4.0), (4.2, 2.0)] {
            let p = student_t_two_sided_p(t, df);
            let oracle = t_p_value_oracle(t, df);
            assert!((p - oracle).abs() < 1e-6, "t={t}, df={df}: {p} vs {oracle}");
        }
    }

    #[test]
    fn benjamini_hochberg_examples() {
        let adjusted = benjamini_hochberg(&[0.01, 0.04, 0.03]).unwrap();
        assert_eq!(adjusted, vec![0.03, 0.04, 0.04]);

        assert_eq!(benjamini_hochberg(&[0.2]).unwrap(), vec![0.2]);
        assert_eq!(
            benjamini_hochberg(&[0.05, 0.05, 0.05]).unwrap(),
            vec![0.05, 0.05, 0.05]
        );
        assert!(matches!(
            benjamini_hochberg(&[0.5, 1.2]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn match_report_count_identities() {
        let truths = vec![gt(0, 0, 10, 10, 1), gt(20, 0, 10, 10, 1), gt(40, 0, 8, 8, 2)];
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 1, 0.9),
            det(100.0, 100.0, 5.0, 5.0, 1, 0.8),
            det(40.0, 0.0, 8.0, 8.0, 2, 0.7),
            det(41.0, 0.0, 8.0, 8.0, 2, 0.6),
        ];
        let report = match_detections(&dets, &truths, MatchRule::Iou, 0.5).unwrap();
        for (&class, c) in &report.per_class {
            let gt_count = truths.iter().filter(|g| g.class_id == class).count();
            let det_count = dets.iter().filter(|d| d.class_id == class).count();
            assert_eq!(c.tp + c.fn_, gt_count);
            assert_eq!(c.tp + c.fp, det_count);
        }
    }

    #[test]
    fn monotonicity_of_precision_and_recall() {
        let truths = vec![gt(0, 0, 10, 10, 1), gt(20, 0, 10, 10, 1)];
        let base = vec![det(0.0, 0.0, 10.0, 10.0, 1, 0.9)];
        let s0 = metrics(&match_detections(&base, &truths, MatchRule::Iou, 0.5).unwrap());

        let mut with_spurious = base.clone();
        with_spurious.push(det(200.0, 200.0, 5.0, 5.0, 1, 0.5));
        let s1 = metrics(&match_detections(&with_spurious, &truths, MatchRule::Iou, 0.5).unwrap());
        assert!(s1.per_class[&1].precision <= s0.per_class[&1].precision);

        let mut with_correct = base;
        with_correct.push(det(20.0, 0.0, 10.0, 10.0, 1, 0.5));
        let s2 = metrics(&match_detections(&with_correct, &truths, MatchRule::Iou, 0.5).unwrap());
        assert!(s2.per_class[&1].recall >= s0.per_class[&1].recall);
    }

    proptest! {
        #[test]
        fn bh_reordered_by_raw_p_is_monotone(
            ps in proptest::collection::vec(0.0..=1.0f64, 1..12)
        ) {
            let adjusted = benjamini_hochberg(&ps).unwrap();
            let mut order: Vec<usize> = (0..ps.len()).collect();
            order.sort_by(|&a, &b| ps[a].partial_cmp(&ps[b]).unwrap());
            for w in order.windows(2) {
                prop_assert!(adjusted[w[0]] <= adjusted[w[1]] + 1e-15);
            }
            prop_assert!(adjusted.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

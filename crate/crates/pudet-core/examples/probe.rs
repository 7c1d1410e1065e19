// Temporary tuning probe for the benchmark config (not shipped).
use std::path::PathBuf;

use pudet_core::detector::{assign_samples, AssignState, ModelConfig};
use pudet_core::experiment::*;
use pudet_core::losses::LossKind;
use pudet_core::priors::PriorGrid;
use pudet_core::synth::{generate, ClassAppearance, GeneratorConfig};
use pudet_core::train::TrainConfig;

fn benchmark_config() -> ExperimentConfig {
    ExperimentConfig {
        generator: GeneratorConfig {
            seed: 7340,
            width: 80,
            height: 80,
            classes: vec![ClassAppearance {
                radius: (5.0, 5.6),
                intensity: (170, 230),
                eccentricity: 0.0,
                count: (5, 6),
            }],
            background_noise: 12,
            distractors: (2, 3),
            distractor_radius: (2.0, 3.0),
            distractor_intensity: (70, 120),
        },
        image_count: 48,
        degradation: DegradationSpec {
            strategy: DegradationStrategy::Random,
            keep_n: 1,
        },
        split: SplitSpec::default(),
        train: TrainConfig {
            loss_kind: LossKind::PuBinary,
            seed: 1234,
            model: ModelConfig {
                num_classes: 2,
                feature_size: 4,
                hidden1: 16,
                hidden2: 8,
                anchor_stride: 3,
                anchor_sizes: vec![(12.0, 12.0)],
            },
            prior: Some(0.012),
            learning_rate: 1e-3,
            batch_size: 8,
            iterations: 2580,
            augment_hflip: true,
            assign_lo: 0.3,
            assign_hi: 0.7,
            score_threshold: 0.5,
            nms_threshold: 0.3,
            loc_weight: 1.0,
        },
        prior_grid: Some(PriorGrid {
            start: 0.01,
            stop: 0.05,
            step: 0.01,
        }),
        eval: EvalSettings::default(),
        runs: 5,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() {
    let t0 = std::time::Instant::now();
    let config = benchmark_config();
    let dir = std::env::temp_dir().join("pudet_probe");
    let _ = std::fs::remove_dir_all(&dir);
    cmd_generate(&config, &dir).unwrap();

    // measure the true positive-anchor fraction on complete annotations
    let (complete, _) = pudet_core::synth::load_dataset(&dir.join(TRAIN_COMPLETE_DIR)).unwrap();
    let mut pos = 0usize;
    let mut total = 0usize;
    for img in &complete {
        let anchors = pudet_core::detector::anchor_grid(img.width, img.height, 3, &[(12.0, 12.0)]);
        let a = assign_samples(&anchors, &img.boxes, 0.3, 0.7).unwrap();
        pos += a
            .iter()
            .filter(|s| matches!(s.state, AssignState::Positive { .. }))
            .count();
        total += a.len();
        let blobs = img.boxes.len();
        if total == a.len() {
            eprintln!(
                "first image: {} blobs, {} positive anchors",
                blobs,
                pos
            );
        }
    }
    eprintln!(
        "true positive-anchor fraction: {:.4} ({} / {})",
        pos as f64 / total as f64,
        pos,
        total
    );

    let models = dir.join("models");
    for method in [Method::Baseline, Method::Pu, Method::PuNaive, Method::Upper] {
        let t = std::time::Instant::now();
        cmd_train(&TrainArgs {
            config: &config,
            dataset: &dir,
            method,
            runs: 5,
            prior: None,
            seed: None,
            out: &models,
        })
        .unwrap();
        eprintln!("{}: trained 5 runs in {:.1?}", method.name(), t.elapsed());
    }

    let args: Vec<PathBuf> = ["baseline", "pu", "pu-naive", "upper"]
        .iter()
        .map(|m| models.join(m))
        .collect();
    let outcome = cmd_evaluate(&config, &dir, &args, true, &dir.join("eval")).unwrap();
    for m in &outcome.methods {
        let f1s: Vec<f64> = m.runs.iter().map(|r| r.macro_avg.f1).collect();
        let rs: Vec<f64> = m.runs.iter().map(|r| r.macro_avg.recall).collect();
        let ps: Vec<f64> = m.runs.iter().map(|r| r.macro_avg.precision).collect();
        eprintln!(
            "{:10} median F1 {:.4}  f1s {:?}  recalls {:?}  precisions {:?}",
            m.name,
            median(f1s.clone()),
            f1s.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            rs.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ps.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        );
    }
    // FP anatomy: where do the upper-bound false positives sit?
    let (test_images, _) = pudet_core::synth::load_dataset(&dir.join(TEST_DIR)).unwrap();
    for method in ["upper", "pu"] {
        let model = pudet_core::detector::load_checkpoint(
            &models.join(method).join("run_3/checkpoint.json"),
        )
        .unwrap();
        let mut fp_ious: Vec<(f64, f64)> = Vec::new();
        for img in &test_images {
            let opts = pudet_core::detector::DetectOptions {
                score_threshold: config.eval.score_threshold,
                nms_threshold: config.eval.nms_threshold,
            };
            let dets = pudet_core::detector::detect(&model, img, &opts).unwrap();
            for d in dets.boxes {
                let best = img
                    .boxes
                    .iter()
                    .map(|b| {
                        pudet_core::detector::iou(&d.rect, &pudet_core::detector::Rect::from(b))
                    })
                    .fold(0.0f64, f64::max);
                if best < 0.5 {
                    fp_ious.push((best, d.score));
                }
            }
        }
        eprintln!("{method} run_3 FPs (max-IoU-to-GT, score): {fp_ious:.2?}");
    }
    eprintln!("total {:.1?}", t0.elapsed());
}

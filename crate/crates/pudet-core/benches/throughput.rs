//! Throughput benches for the data-parallel stages, named by execution
//! mode so `cargo bench` (rayon) and
//! `cargo bench --no-default-features` (sequential) can be compared
//! from the same criterion baseline directory.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, Criterion};

use pudet_core::autodiff::{Graph, Tensor};
use pudet_core::detector::{detect_tiled, DetectOptions, DetectorModel, ModelConfig};
use pudet_core::losses::{cls_loss_pu_multiclass, ClassPriors};
use pudet_core::synth::{generate, ClassAppearance, GeneratorConfig};
use pudet_core::train::{train, TrainConfig};

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn generator_config(width: u32, height: u32) -> GeneratorConfig {
    GeneratorConfig {
        seed: 99,
        width,
        height,
        classes: vec![ClassAppearance {
            radius: (5.0, 5.6),
            intensity: (170, 230),
            eccentricity: 0.0,
            count: (5, 7),
        }],
        background_noise: 12,
        distractors: (2, 3),
        distractor_radius: (2.0, 3.0),
        distractor_intensity: (70, 120),
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        num_classes: 2,
        feature_size: 4,
        hidden1: 12,
        hidden2: 8,
        anchor_stride: 3,
        anchor_sizes: vec![(12.0, 12.0)],
    }
}

fn bench_generate(c: &mut Criterion) {
    let cfg = generator_config(96, 96);
    c.bench_function(&format!("generate_12_images/{}", mode()), |b| {
        b.iter(|| generate(&cfg, 12).unwrap())
    });
}

fn bench_detect_tiled(c: &mut Criterion) {
    let cfg = generator_config(288, 192);
    let img = generate(&cfg, 1).unwrap().remove(0);
    let model = DetectorModel::init(model_config(), 5).unwrap();
    let opts = DetectOptions {
        score_threshold: 0.2,
        nms_threshold: 0.3,
    };
    c.bench_function(&format!("detect_tiled_288x192/{}", mode()), |b| {
        b.iter(|| detect_tiled(&model, &img, 96, 24, &opts).unwrap())
    });
}

fn bench_train_iterations(c: &mut Criterion) {
    let images = generate(&generator_config(96, 96), 6).unwrap();
    let cfg = TrainConfig {
        loss_kind: pudet_core::losses::LossKind::PuBinary,
        seed: 3,
        model: model_config(),
        prior: Some(0.015),
        learning_rate: 1e-3,
        batch_size: 4,
        iterations: 10,
        augment_hflip: true,
        assign_lo: 0.3,
        assign_hi: 0.7,
        score_threshold: 0.5,
        nms_threshold: 0.3,
        loc_weight: 1.0,
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function(&format!("pu_10_iterations/{}", mode()), |b| {
        b.iter(|| train(&images, &cfg).unwrap())
    });
    group.finish();
}

fn bench_pu_multiclass_loss(c: &mut Criterion) {
    let m = 3usize;
    let rows = |n: usize, seed: u64| -> Vec<f64> {
        let mut data = Vec::with_capacity(n * m);
        let mut x = seed;
        for _ in 0..n * m {
            // cheap LCG noise, normalized per row below
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            data.push(((x >> 33) as f64 / 2.0_f64.powi(31)).abs() + 0.05);
        }
        for r in 0..n {
            let s: f64 = data[r * m..(r + 1) * m].iter().sum();
            for v in &mut data[r * m..(r + 1) * m] {
                *v /= s;
            }
        }
        data
    };
    let priors = ClassPriors::new(vec![0.05, 0.03]).unwrap();
    c.bench_function(&format!("pu_multiclass_loss_4k_anchors/{}", mode()), |b| {
        b.iter(|| {
            let g = Graph::new();
            let unl = g.leaf(
                Tensor::new(vec![4000, m], rows(4000, 11)).unwrap().with_grad(),
            );
            let mut by_class = BTreeMap::new();
            by_class.insert(1usize, g.leaf(Tensor::new(vec![20, m], rows(20, 7)).unwrap()));
            by_class.insert(2usize, g.leaf(Tensor::new(vec![10, m], rows(10, 5)).unwrap()));
            let (loss, _) = cls_loss_pu_multiclass(&unl, &by_class, &priors).unwrap();
            loss.backward().unwrap();
            loss.scalar_value()
        })
    });
}

criterion_group!(
    benches,
    bench_generate,
    bench_detect_tiled,
    bench_train_iterations,
    bench_pu_multiclass_loss
);
criterion_main!(benches);

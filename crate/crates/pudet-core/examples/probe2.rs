// Temporary FP-anatomy probe over the checkpoints probe.rs left in /tmp.
use pudet_core::detector::{detect, iou, load_checkpoint, DetectOptions, Rect};
use pudet_core::synth::load_dataset;

fn main() {
    let dir = std::env::temp_dir().join("pudet_probe");
    let (test_images, _) = load_dataset(&dir.join("test")).unwrap();
    let opts = DetectOptions {
        score_threshold: 0.5,
        nms_threshold: 0.3,
    };
    for method in ["upper", "pu", "pu-naive"] {
        for run in 0..5 {
            let path = dir.join(format!("models/{method}/run_{run}/checkpoint.json"));
            let model = load_checkpoint(&path).unwrap();
            let mut fps: Vec<(f64, f64, f64)> = Vec::new(); // (max IoU to GT, score, box w)
            let mut dets_total = 0;
            for img in &test_images {
                let dets = detect(&model, img, &opts).unwrap();
                dets_total += dets.boxes.len();
                for d in dets.boxes {
                    let best = img
                        .boxes
                        .iter()
                        .map(|b| iou(&d.rect, &Rect::from(b)))
                        .fold(0.0f64, f64::max);
                    if best < 0.5 {
                        fps.push((best, d.score, d.rect.w));
                    }
                }
            }
            eprintln!(
                "{method} run_{run}: {} detections, {} FPs: {:.2?}",
                dets_total,
                fps.len(),
                fps.iter().take(12).collect::<Vec<_>>()
            );
        }
    }
}

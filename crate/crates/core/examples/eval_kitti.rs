//! Average precision on hand-written KITTI labels and detections.

use mdcn::kitti::{
    ap_table, iou_sweep, nms, parse_detections, parse_kitti_labels, sweep_thresholds, ApMethod, Difficulty,
};

const LABELS: &str = "\
Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Car 0.00 0 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57
Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01
Cyclist 0.00 1 -1.10 300.00 150.00 340.00 230.00 1.70 0.60 1.80 -5.00 1.60 20.00 -1.30
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
";

const DETECTIONS: &str = "\
Car 0.910000 585.00 172.00 615.00 201.00
Car 0.880000 584.00 171.00 616.00 203.00
Car 0.400000 390.00 182.00 425.00 202.00
Pedestrian 0.800000 715.00 150.00 805.00 300.00
Cyclist 0.700000 310.00 160.00 350.00 240.00
Car 0.300000 100.00 100.00 150.00 150.00
";

fn main() -> mdcn::Result<()> {
    let gts = parse_kitti_labels(LABELS)?;
    for g in &gts {
        println!("{:<10} {:>8}  h={:.1}", g.label, g.difficulty, g.bbox.height());
    }
    let dets = nms(&parse_detections(DETECTIONS)?, 0.45);
    println!("{} detections after suppression", dets.len());

    let (dets, gts) = (vec![dets], vec![gts]);
    println!("{}", ap_table(&dets, &gts, 0.5, ApMethod::ElevenPoint)?.to_text());
    print!(
        "{}",
        iou_sweep(
            &dets,
            &gts,
            Difficulty::Moderate,
            &sweep_thresholds(),
            ApMethod::ElevenPoint
        )?
        .to_text()
    );
    Ok(())
}

//! KITTI-format labels, suppression and average-precision evaluation.

mod ap;
mod detections;
mod eval;
mod image;
mod labels;
mod model;
mod nms;

pub use ap::{average_precision, average_precision_with, interpolated_ap, ApMethod, ApResult};
pub use detections::{format_detections, parse_detections, DetectionRecord};
pub use eval::{
    ap_table, evaluate_model, iou_sweep, load_detection_dir, load_kitti_dir, run_detector, sweep_thresholds, ApTable,
    Detector, EchoDetector, EvalSample, SweepTable,
};
pub use image::{decode_ppm, encode_ppm, load_image, resize_bilinear, save_ppm};
pub use labels::{parse_kitti_labels, Difficulty, EvalClass, GroundTruth, PixelBox};
pub use model::NetworkDetector;
pub use nms::{nms, nms_indices};

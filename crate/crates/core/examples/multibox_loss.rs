//! Hard-negative-mined detection loss for random predictions on one image.

use mdcn::multibox::{anchors_for_graph, match_anchors, multibox_loss, AnchorConfig, BBox, LabeledBox, LossConfig};
use mdcn::netbuilder::{assemble, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mdcn::Result<()> {
    let graph = assemble(&ModelConfig::toy(Variant::MdcnI2, 150))?;
    let anchors = anchors_for_graph(&graph, &AnchorConfig::default())?;
    let classes = graph.num_classes();

    let gts = vec![
        LabeledBox {
            bbox: BBox::from_corners(0.1, 0.5, 0.5, 0.8)?,
            class: 0,
        },
        LabeledBox {
            bbox: BBox::from_corners(0.6, 0.1, 0.75, 0.6)?,
            class: 1,
        },
    ];
    let boxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let m = match_anchors(&boxes, &anchors.boxes, 0.5)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let conf: Vec<f64> = (0..anchors.len() * classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loc: Vec<f64> = (0..anchors.len() * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let (report, grads) = multibox_loss(&conf, &loc, classes, &m, &gts, &anchors, &LossConfig::default())?;

    println!("anchors {}  matched {}", anchors.len(), report.num_matched);
    println!(
        "L = {:.4}  (conf {:.4}, loc {:.4})",
        report.total, report.conf, report.loc
    );
    let touched = grads
        .conf
        .chunks(classes)
        .filter(|r| r.iter().any(|g| *g != 0.0))
        .count();
    println!("anchors with a confidence gradient: {touched} (positives plus mined negatives)");
    Ok(())
}

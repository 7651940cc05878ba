//! Default boxes for the full model, jaccard matching and offset encoding.

use mdcn::multibox::{anchors_for_graph, decode, encode, match_anchors, AnchorConfig, BBox, Variances};
use mdcn::netbuilder::{assemble_model, Variant};

fn main() -> mdcn::Result<()> {
    let graph = assemble_model(Variant::MdcnI2)?;
    let anchors = anchors_for_graph(&graph, &AnchorConfig::default())?;
    println!("{} anchors over taps {:?}", anchors.len(), graph.tap_sizes());

    let gts = [
        BBox::from_corners(0.10, 0.40, 0.45, 0.70)?,
        BBox::from_corners(0.60, 0.20, 0.70, 0.55)?,
    ];
    let m = match_anchors(&gts, &anchors.boxes, 0.5)?;
    println!("{} positive anchors", m.num_positive);

    let v = Variances::default();
    for (a, g) in m.positives().take(4) {
        let t = encode(&gts[g], &anchors.boxes[a], v)?;
        let back = decode(&t, &anchors.boxes[a], v)?;
        println!(
            "anchor {a:>5} -> gt {g}  offsets {t:.3?}  iou after decode {:.6}",
            back.iou(&gts[g])
        );
    }
    Ok(())
}

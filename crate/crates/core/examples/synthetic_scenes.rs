//! Writes a few synthetic shape scenes as a KITTI-style directory.

use std::fs;

use mdcn::kitti::{save_ppm, Difficulty};
use mdcn::trainer::{difficulty_share, make_synthetic_dataset};

fn main() -> mdcn::Result<()> {
    let dir = std::env::temp_dir().join("mdcn-synthetic");
    fs::create_dir_all(dir.join("image_2"))?;
    fs::create_dir_all(dir.join("label_2"))?;

    let scenes = make_synthetic_dataset(42, 8, 150)?;
    for (i, s) in scenes.iter().enumerate() {
        save_ppm(&s.image, dir.join("image_2").join(format!("{i:06}.ppm")))?;
        let labels: String = s.ground_truth().iter().map(|g| g.to_kitti_line() + "\n").collect();
        fs::write(dir.join("label_2").join(format!("{i:06}.txt")), &labels)?;
        if i == 0 {
            print!("{labels}");
        }
    }
    for level in Difficulty::LEVELS {
        println!("{level:<9} share {:.2}", difficulty_share(&scenes, level));
    }
    println!("wrote {}", dir.display());
    Ok(())
}

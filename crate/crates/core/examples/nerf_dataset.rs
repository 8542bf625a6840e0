//! Round-trips a generated scene through the NeRF-synthetic directory layout
//! (`transforms.json` + `train/r_XXX.png`) and trains on what was loaded.
//! Pass an existing dataset directory to train on that instead.
//!
//!     cargo run --release --example nerf_dataset -- [dataset_dir] [iterations]

use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{gen_scene, load_dataset, save_dataset, train, SceneSpec, TrainConfig};

fn main() -> splatcost::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next();
    let iterations = args.next().map_or(1000, |s| s.parse().expect("iterations"));

    let tmp;
    let path = match &dir {
        Some(d) => std::path::PathBuf::from(d),
        None => {
            tmp = std::env::temp_dir().join(format!("splatcost-nerf-{}", std::process::id()));
            save_dataset(&gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?, &tmp)?;
            tmp.clone()
        }
    };
    let dataset = load_dataset(&path)?;
    let pose = &dataset.views[0].pose;
    println!(
        "{}: {} views at {}x{}, fx = {:.2}, scene extent {:.3}",
        path.display(),
        dataset.len(),
        pose.width,
        pose.height,
        pose.fx,
        dataset.scene_extent
    );

    let densify_until = iterations / 2;
    let config = TrainConfig {
        iterations,
        densify_from: (densify_until / 3).min(500),
        ..TrainConfig::default()
    };
    let (model, record) = train(&dataset, &config)?;
    println!("{} gaussians, final loss {:.4}", model.len(), record.rows.last().map_or(f64::NAN, |r| r.loss));
    if dir.is_none() {
        std::fs::remove_dir_all(&path)?;
    }
    Ok(())
}

//! Sharper textures (higher total variation) make the trainer grow more Gaussians.
//!
//!     cargo run --release --example texture_sharpness -- [iterations]

use splatcost::{correlate, gen_scene, train, SceneSpec, TrainConfig};

fn main() -> splatcost::Result<()> {
    let iterations = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("iterations"));
    let config = TrainConfig { iterations, ..TrainConfig::default() };
    let (mut tvs, mut counts) = (Vec::new(), Vec::new());
    for f in [0.0, 2.5, 5.0, 10.0, 20.0] {
        let scene = gen_scene(&SceneSpec::standard(f))?;
        let (model, _) = train(&scene, &config)?;
        println!("frequency {f:5.1}: mean TV {:7.1}  gaussians {:6}", scene.mean_tv(), model.len());
        tvs.push(scene.mean_tv());
        counts.push(model.len() as f64);
    }
    let (_, rho) = correlate(&tvs, &counts)?;
    println!("spearman(TV, gaussians) = {rho:.2}");
    Ok(())
}

//! Pushes one view's total variation up inside an L∞ ball and writes the
//! clean and perturbed images side by side.
//!
//!     cargo run --release --example tv_ascent -- [epsilon_in_255ths] [out_dir]

use std::path::PathBuf;

use splatcost::scene::{write_png, STANDARD_TEXTURE_FREQUENCY};
use splatcost::{gen_scene, naive_tv_attack, tv_score, AttackConfig, SceneSpec};

fn main() -> splatcost::Result<()> {
    let mut args = std::env::args().skip(1);
    let eps = args.next().map_or(16.0, |s| s.parse().expect("epsilon in 255ths")) / 255.0;
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;

    let scene = gen_scene(&SceneSpec { n_views: 1, ..SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY) })?;
    let config = AttackConfig { epsilon: Some(eps), outer_iterations: 50, ..AttackConfig::default() };
    let poisoned = naive_tv_attack(&scene, &config)?;

    let (clean, dirty) = (&scene.views[0].image, &poisoned.dataset.views[0].image);
    write_png(&out.join("clean.png"), clean)?;
    write_png(&out.join("poisoned.png"), dirty)?;
    println!("TV {:.1} -> {:.1} with eps = {:.4}", tv_score(clean), tv_score(dirty), eps);
    Ok(())
}

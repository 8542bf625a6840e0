//! Caps the victim's Gaussian count at the clean run's size and shows what it
//! costs in reconstruction quality on poisoned data.
//!
//!     cargo run --release --example gaussian_cap_defense

use splatcost::profile::summarize;
use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{gen_scene, poison_dataset, train, AttackConfig, Dataset, SceneSpec, TrainConfig};

fn run(name: &str, data: &Dataset, config: &TrainConfig) -> splatcost::Result<splatcost::CostMetrics> {
    let (model, record) = train(data, config)?;
    let m = summarize(&record, &model, data, config)?;
    println!(
        "{name:>18}: {:6} gaussians  {:6.2} MB peak  {:5.2} dB",
        m.final_gaussians,
        m.peak_mem_bytes as f64 / 1e6,
        m.final_psnr_db
    );
    Ok(m)
}

fn main() -> splatcost::Result<()> {
    let scene = gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?;
    let (poisoned, _) = poison_dataset(&scene, &AttackConfig::default())?;

    let config = TrainConfig::default();
    let clean = run("clean", &scene, &config)?;
    run("poisoned", &poisoned.dataset, &config)?;
    let capped = TrainConfig { max_gaussians: Some(clean.final_gaussians), ..config };
    run("poisoned, capped", &poisoned.dataset, &capped)?;
    Ok(())
}

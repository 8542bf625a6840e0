//! Poisons a generated scene and compares the victim's cost against a clean run.
//!
//!     cargo run --release --example poison_attack -- [epsilon_in_255ths|inf] [outer_iterations]

use splatcost::profile::summarize;
use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{gen_scene, poison_dataset, train, AttackConfig, Dataset, SceneSpec, TrainConfig};

fn victim(name: &str, data: &Dataset, config: &TrainConfig) -> splatcost::Result<splatcost::CostMetrics> {
    let (model, record) = train(data, config)?;
    let m = summarize(&record, &model, data, config)?;
    println!(
        "{name:>8}: {:6} gaussians  {:8.2} MB peak  {:5.2} min  {:5.1} fps  {:5.2} dB",
        m.final_gaussians,
        m.peak_mem_bytes as f64 / 1e6,
        m.total_minutes,
        m.render_fps,
        m.final_psnr_db
    );
    Ok(m)
}

fn main() -> splatcost::Result<()> {
    let mut args = std::env::args().skip(1);
    let epsilon = match args.next().as_deref() {
        None => Some(16.0 / 255.0),
        Some("inf") => None,
        Some(s) => Some(s.parse::<f64>().expect("epsilon in 255ths") / 255.0),
    };
    let outer = args.next().map_or(Ok(3000), |s| s.parse()).expect("outer iterations");

    let scene = gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?;
    let config = TrainConfig::default();
    let attack = AttackConfig { epsilon, outer_iterations: outer, proxy: config.clone(), ..AttackConfig::default() };
    let (poisoned, log) = poison_dataset(&scene, &attack)?;
    let last = log.rows.last().expect("at least one outer iteration");
    println!(
        "proxy grew {} -> {} gaussians; mean TV {:.1} -> {:.1}",
        log.initial_proxy_gaussians,
        last.proxy_gaussians,
        scene.mean_tv(),
        poisoned.dataset.mean_tv()
    );

    let clean = victim("clean", &scene, &config)?;
    let dirty = victim("poisoned", &poisoned.dataset, &config)?;
    println!(
        "ratios: gaussians {:.2}x  memory {:.2}x  time {:.2}x",
        dirty.final_gaussians as f64 / clean.final_gaussians as f64,
        dirty.peak_mem_bytes as f64 / clean.peak_mem_bytes as f64,
        dirty.total_minutes / clean.total_minutes
    );
    Ok(())
}

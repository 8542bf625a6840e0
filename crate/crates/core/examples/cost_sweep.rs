//! Memory and iteration time as a function of the number of Gaussians.
//!
//!     cargo run --release --example cost_sweep -- [counts, e.g. 500,1000,2000]

use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{correlate, gen_scene, sweep_gaussians_vs_cost, SceneSpec, TrainConfig};

fn main() -> splatcost::Result<()> {
    let counts: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "500,1000,2000,4000,8000".into())
        .split(',')
        .map(|s| s.trim().parse().expect("comma-separated counts"))
        .collect();
    let scene = gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?;
    let rows = sweep_gaussians_vs_cost(&scene, &counts, &TrainConfig::default())?;

    println!("{:>8} {:>12} {:>10} {:>8}", "count", "mem_bytes", "ms/iter", "fps");
    for r in &rows {
        println!("{:>8} {:>12} {:>10.2} {:>8.1}", r.count, r.mem_bytes, r.ms_per_iter, r.fps);
    }
    if rows.len() >= 3 {
        let xs: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
        let (r_mem, _) = correlate(&xs, &rows.iter().map(|r| r.mem_bytes as f64).collect::<Vec<_>>())?;
        let (r_ms, _) = correlate(&xs, &rows.iter().map(|r| r.ms_per_iter).collect::<Vec<_>>())?;
        println!("pearson r: memory {r_mem:.4}, time {r_ms:.4}");
    }
    Ok(())
}

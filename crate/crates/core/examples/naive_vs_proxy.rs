//! Compares the proxy-guided attack with per-image TV maximization under the
//! same budget and ascent step count.
//!
//!     cargo run --release --example naive_vs_proxy -- [epsilon_in_255ths]

use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{gen_scene, naive_tv_attack, poison_dataset, train, AttackConfig, SceneSpec, TrainConfig};

fn main() -> splatcost::Result<()> {
    let eps = std::env::args().nth(1).map_or(16.0, |s| s.parse().expect("epsilon in 255ths")) / 255.0;
    let scene = gen_scene(&SceneSpec::standard(STANDARD_TEXTURE_FREQUENCY))?;
    let config = AttackConfig { epsilon: Some(eps), ..AttackConfig::default() };

    let (proxy, _) = poison_dataset(&scene, &config)?;
    let naive = naive_tv_attack(&scene, &config)?;

    let victim = TrainConfig::default();
    for (name, data) in [("clean", &scene), ("naive", &naive.dataset), ("proxy", &proxy.dataset)] {
        let (model, _) = train(data, &victim)?;
        println!("{name:>6}: mean TV {:8.1}  victim gaussians {:6}", data.mean_tv(), model.len());
    }
    Ok(())
}

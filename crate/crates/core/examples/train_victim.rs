//! Trains a victim model on a generated scene and prints its cost metrics.
//!
//!     cargo run --release --example train_victim -- [iterations] [texture_frequency]

use splatcost::profile::summarize;
use splatcost::scene::STANDARD_TEXTURE_FREQUENCY;
use splatcost::{gen_scene, train, SceneSpec, TrainConfig};

fn main() -> splatcost::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(Ok(3000), |s| s.parse()).expect("iterations");
    let freq = args.next().map_or(Ok(STANDARD_TEXTURE_FREQUENCY), |s| s.parse()).expect("texture frequency");

    let scene = gen_scene(&SceneSpec::standard(freq))?;
    let config = TrainConfig { iterations, ..TrainConfig::default() };
    let (model, record) = train(&scene, &config)?;
    for row in record.rows.iter().step_by((iterations / 10).max(1)) {
        println!("iter {:5}  loss {:.4}  gaussians {:6}", row.iter, row.loss, row.n_gaussians);
    }
    let m = summarize(&record, &model, &scene, &config)?;
    println!("{m:#?}");
    Ok(())
}

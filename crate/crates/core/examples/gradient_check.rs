//! Compares the analytic rasterizer gradients with central finite differences
//! on a small random scene.
//!
//!     cargo run --release --example gradient_check -- [seed]

use nalgebra::Vector3;
use rand::Rng;
use splatcost::gaussian::PARAMS_PER_GAUSSIAN;
use splatcost::rng::stream;
use splatcost::{render, render_backward, CameraPose, Gaussian, Image};

fn loss(gaussians: &[Gaussian], pose: &CameraPose, target: &Image) -> f64 {
    let img = render(gaussians, pose, [0.0; 3]);
    0.5 * img.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

fn main() -> splatcost::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut rng = stream(seed, "example/gradient_check");
    let pose = CameraPose::look_at(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 24.0, 16, 16);
    let gaussians: Vec<Gaussian> = (0..5)
        .map(|_| {
            let mu = Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
            let color = std::array::from_fn(|_| rng.random_range(0.1..0.9));
            Gaussian::isotropic(mu, rng.random_range(-2.0..-1.2), rng.random_range(0.3..0.9), color)
        })
        .collect();
    let target = Image::from_data(16, 16, (0..16 * 16 * 3).map(|_| rng.random()).collect())?;

    let rendered = render(&gaussians, &pose, [0.0; 3]);
    let mut d_image = rendered.clone();
    for (d, t) in d_image.data.iter_mut().zip(&target.data) {
        *d -= t;
    }
    let grads = render_backward(&gaussians, &pose, [0.0; 3], &d_image)?;

    let names = ["mu.x", "mu.y", "mu.z", "s.x", "s.y", "s.z", "alpha", "q.w", "q.x", "q.y", "q.z", "r", "g", "b"];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, g) in gaussians.iter().enumerate() {
        let analytic = grads.params[i].to_params();
        for k in 0..PARAMS_PER_GAUSSIAN {
            let at = |delta: f64| {
                let mut gs = gaussians.clone();
                let mut p = g.to_params();
                p[k] += delta;
                gs[i] = Gaussian::from_params(&p);
                loss(&gs, &pose, &target)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
            worst = worst.max(rel);
            println!("gaussian {i} {:>6}: analytic {:+.6e}  fd {:+.6e}  rel {rel:.1e}", names[k], analytic[k], fd);
        }
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}

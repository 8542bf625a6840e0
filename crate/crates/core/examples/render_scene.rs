//! Renders a handful of hand-placed Gaussians and writes the image as a PNG.
//!
//!     cargo run --release --example render_scene -- [out.png]

use nalgebra::Vector3;
use splatcost::scene::write_png;
use splatcost::{render, CameraPose, Gaussian};

fn main() -> splatcost::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "render_scene.png".into());
    let pose = CameraPose::look_at(
        Vector3::new(0.0, -0.5, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        160.0,
        256,
        192,
    );

    let mut gaussians = vec![
        Gaussian::isotropic(Vector3::new(-0.8, 0.0, 0.0), (0.35f64).ln(), 0.9, [0.9, 0.2, 0.2]),
        Gaussian::isotropic(Vector3::new(0.0, 0.0, 0.5), (0.45f64).ln(), 0.8, [0.2, 0.8, 0.3]),
        Gaussian::isotropic(Vector3::new(0.8, 0.0, 1.0), (0.35f64).ln(), 0.9, [0.2, 0.3, 0.9]),
    ];
    // a flat, tilted disc in front of the others
    let mut disc = Gaussian::isotropic(Vector3::new(0.0, 0.6, -0.8), 0.0, 0.6, [0.9, 0.9, 0.3]);
    disc.log_scale = Vector3::new((0.6f64).ln(), (0.05f64).ln(), (0.3f64).ln());
    let half = std::f64::consts::FRAC_PI_8;
    disc.rotation = [half.cos(), 0.0, 0.0, half.sin()];
    gaussians.push(disc);

    let img = render(&gaussians, &pose, [0.05, 0.05, 0.08]);
    write_png(std::path::Path::new(&out), &img)?;
    println!("wrote {out} ({}x{})", img.width, img.height);
    Ok(())
}

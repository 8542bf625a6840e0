//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatcost::gaussian::{project_gaussian, CameraPose, Gaussian, PARAMS_PER_GAUSSIAN};
use splatcost::raster::{render, render_backward, Image};

/// Per-pixel renderer over every Gaussian, no tiling or bounding boxes.
pub fn brute_force_render(gaussians: &[Gaussian], pose: &CameraPose, background: [f64; 3]) -> Image {
    let mut splats: Vec<_> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            project_gaussian(g, pose).map(|mut s| {
                s.source_index = i;
                s
            })
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    let mut img = Image::new(pose.width, pose.height);
    for y in 0..pose.height {
        for x in 0..pose.width {
            let mut c = [0.0; 3];
            let mut t = 1.0;
            for s in &splats {
                let dx = x as f64 - s.mu2d.x;
                let dy = y as f64 - s.mu2d.y;
                let inv = s.cov2d.try_inverse().unwrap();
                let m = dx * (inv[(0, 0)] * dx + inv[(0, 1)] * dy) + dy * (inv[(1, 0)] * dx + inv[(1, 1)] * dy);
                let alpha = s.opacity * (-0.5 * m).exp();
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += s.color[ch] * alpha * t;
                }
                t *= 1.0 - alpha;
                if t < 1e-4 {
                    break;
                }
            }
            for ch in 0..3 {
                img.set(x, y, ch, (c[ch] + background[ch] * t).clamp(0.0, 1.0));
            }
        }
    }
    img
}

pub fn identity_pose(w: usize, h: usize, focal: f64) -> CameraPose {
    CameraPose {
        world_to_camera: Matrix4::identity(),
        fx: focal,
        fy: focal,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        width: w,
        height: h,
    }
}

/// Random Gaussians in front of an identity camera.
pub fn random_scene(seed: u64, n: usize, w: usize, h: usize) -> (Vec<Gaussian>, CameraPose, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = identity_pose(w, h, 1.6 * w as f64);
    let gaussians = (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            let spread = 0.4 * z / 1.6;
            let mut q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if q.iter().map(|v| v * v).sum::<f64>() < 0.05 {
                q = [1.0, 0.0, 0.0, 0.0];
            }
            Gaussian {
                mu: Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), z),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-2.8..-1.6)),
                alpha_raw: rng.random_range(-1.5..2.5),
                rotation: q,
                color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
            }
        })
        .collect();
    let target = Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap();
    (gaussians, pose, target)
}

pub fn half_squared_error(gaussians: &[Gaussian], pose: &CameraPose, target: &Image, bg: [f64; 3]) -> f64 {
    let img = render(gaussians, pose, bg);
    0.5 * img.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose FD stencil straddled a jump of the piecewise loss
    /// (alpha cutoff or early stop) and were checked one-sided.
    pub one_sided: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn merge(&mut self, o: GradCheck) {
        self.checked += o.checked;
        self.one_sided += o.one_sided;
        self.failures += o.failures;
        self.worst_rel = self.worst_rel.max(o.worst_rel);
    }
}

pub fn close(fd: f64, an: f64, rel: f64, abs: f64) -> bool {
    (fd - an).abs() <= (rel * fd.abs().max(an.abs())).max(abs)
}

/// Compares `render_backward` against central differences of ½‖render − target‖².
pub fn check_render_gradients(seed: u64, n: usize, w: usize, h: usize) -> GradCheck {
    const H: f64 = 1e-4;
    const REL: f64 = 1e-3;
    const ABS: f64 = 1e-6;
    let bg = [0.1, 0.2, 0.3];
    let (gaussians, pose, target) = random_scene(seed, n, w, h);
    let rendered = render(&gaussians, &pose, bg);
    let mut d_image = rendered.clone();
    for (d, t) in d_image.data.iter_mut().zip(&target.data) {
        *d -= t;
    }
    let grads = render_backward(&gaussians, &pose, bg, &d_image).unwrap();
    let mut out = GradCheck::default();
    for i in 0..gaussians.len() {
        let analytic = grads.params[i].to_params();
        for k in 0..PARAMS_PER_GAUSSIAN {
            let eval = |delta: f64| {
                let mut gs = gaussians.clone();
                let mut p = gs[i].to_params();
                p[k] += delta;
                gs[i] = Gaussian::from_params(&p);
                half_squared_error(&gs, &pose, &target, bg)
            };
            let (fp, fm) = (eval(H), eval(-H));
            let fd = (fp - fm) / (2.0 * H);
            let an = analytic[k];
            out.checked += 1;
            let scale = fd.abs().max(an.abs());
            if close(fd, an, REL, ABS) {
                out.worst_rel = out.worst_rel.max(if scale > 0.0 { (fd - an).abs() / scale } else { 0.0 });
                continue;
            }
            // A jump inside the stencil shows up as disagreement between the
            // full and half step on that side; use the smooth side instead.
            let f0 = eval(0.0);
            let side = |sign: f64, full: f64| {
                let half = eval(sign * H / 2.0);
                let d_full = sign * (full - f0) / H;
                let d_half = sign * (half - f0) / (H / 2.0);
                let smooth = close(d_full, d_half, 1e-2, 1e-5);
                (smooth, 2.0 * d_half - d_full)
            };
            let (fwd_ok, fwd) = side(1.0, fp);
            let (bwd_ok, bwd) = side(-1.0, fm);
            let resolved = match (fwd_ok, bwd_ok) {
                (true, false) => Some(fwd),
                (false, true) => Some(bwd),
                _ => None,
            };
            match resolved {
                Some(est) if close(est, an, REL, ABS) => out.one_sided += 1,
                _ => {
                    out.failures += 1;
                    eprintln!("seed {seed} gaussian {i} param {k}: fd {fd:e} analytic {an:e}");
                }
            }
        }
    }
    out
}

use splatcost::scene::{Primitive, PrimitiveKind, SceneSpec};
use splatcost::train::TrainConfig;

/// Four small views of the standard primitives; cheap enough for unit-scale runs.
pub fn tiny_spec(views: usize, resolution: usize) -> SceneSpec {
    SceneSpec { n_views: views, resolution, ..SceneSpec::standard(10.0) }
}

/// A single flat-colored quad (a thin box) facing the camera ring.
pub fn quad_spec() -> SceneSpec {
    SceneSpec {
        primitives: vec![Primitive {
            kind: PrimitiveKind::Box,
            center: [0.0, 0.0, 0.0],
            size: [0.6, 0.6, 0.02],
            color: [0.8, 0.4, 0.2],
            texture_frequency: 0.0,
        }],
        n_views: 4,
        resolution: 32,
        ..SceneSpec::standard(0.0)
    }
}

/// Short schedule that still densifies a few times.
pub fn tiny_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        init_count: 300,
        densify_from: 10,
        densify_interval: 10,
        densify_until: Some(iterations * 2 / 3),
        ..TrainConfig::default()
    }
}

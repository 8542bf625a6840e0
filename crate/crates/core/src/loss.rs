//! Photometric reconstruction loss: `(1 − λ)·L1 + λ·(1 − SSIM)/2`.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) applied as two separable
//! zero-padded passes, so the window sums shrink at the image border.

use crate::error::Result;
use crate::raster::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Single-channel plane used by the SSIM filter passes.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        let v = img.data.iter().skip(c).step_by(3).copied().collect();
        Plane { w: img.width, h: img.height, v }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        let v = self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect();
        Plane { w: self.w, h: self.h, v }
    }

    /// Same-size correlation with the separable window; zero padding. The
    /// window is symmetric so this operator is its own adjoint.
    fn blur(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let r = (SSIM_WINDOW / 2) as isize;
        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = x + i as isize - r;
                    if xx >= 0 && xx < w {
                        s += kv * self.v[(y * w + xx) as usize];
                    }
                }
                tmp[(y * w + x) as usize] = s;
            }
        }
        let mut out = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = y + i as isize - r;
                    if yy >= 0 && yy < h {
                        s += kv * tmp[(yy * w + x) as usize];
                    }
                }
                out[(y * w + x) as usize] = s;
            }
        }
        Plane { w: self.w, h: self.h, v: out }
    }
}

/// Mean SSIM of one channel and its gradient with respect to `x`.
fn ssim_channel(x: &Plane, y: &Plane, k: &[f64; SSIM_WINDOW], want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let mu_x = x.blur(k);
    let mu_y = y.blur(k);
    let xx = x.map2(x, |a, _| a * a).blur(k);
    let yy = y.map2(y, |a, _| a * a).blur(k);
    let xy = x.map2(y, |a, b| a * b).blur(k);
    let n = x.v.len();
    let mut total = 0.0;
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let mut gc = vec![0.0; n];
    for i in 0..n {
        let (mx, my) = (mu_x.v[i], mu_y.v[i]);
        let sx = xx.v[i] - mx * mx;
        let sy = yy.v[i] - my * my;
        let sxy = xy.v[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = sx + sy + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let d_mx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            let d_sx = -s / b2;
            let d_sxy = 2.0 * a1 / (b1 * b2);
            ga[i] = (d_mx - 2.0 * mx * d_sx - my * d_sxy) / n as f64;
            gb[i] = d_sx / n as f64;
            gc[i] = d_sxy / n as f64;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    let fa = Plane { w: x.w, h: x.h, v: ga }.blur(k);
    let fb = Plane { w: x.w, h: x.h, v: gb }.blur(k);
    let fc = Plane { w: x.w, h: x.h, v: gc }.blur(k);
    let grad = (0..n).map(|i| fa.v[i] + 2.0 * x.v[i] * fb.v[i] + y.v[i] * fc.v[i]).collect();
    (mean, Some(grad))
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let k = window();
    let total: f64 = (0..3)
        .map(|c| ssim_channel(&Plane::channel(a, c), &Plane::channel(b, c), &k, false).0)
        .sum();
    Ok(total / 3.0)
}

/// Mean absolute error.
pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Loss value and its gradient with respect to `rendered`.
pub fn reconstruction_loss(rendered: &Image, target: &Image, lambda: f64) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut abs_sum = 0.0;
    for ((g, &r), &t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        abs_sum += d.abs();
        *g = (1.0 - lambda) * sign(d) / n;
    }
    let mut loss = (1.0 - lambda) * abs_sum / n;
    if lambda > 0.0 {
        let k = window();
        let mut ssim_sum = 0.0;
        for c in 0..3 {
            let x = Plane::channel(rendered, c);
            let y = Plane::channel(target, c);
            let (s, g) = ssim_channel(&x, &y, &k, true);
            ssim_sum += s;
            // d/dx of λ·(1 − mean_c s_c)/2
            let scale = -lambda / 6.0;
            for (i, gv) in g.expect("gradient requested").into_iter().enumerate() {
                grad.data[i * 3 + c] += scale * gv;
            }
        }
        loss += lambda * (1.0 - ssim_sum / 3.0) / 2.0;
    }
    Ok((loss, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

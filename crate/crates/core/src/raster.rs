//! Tile-based forward rendering by depth-sorted alpha blending and its
//! analytic backward pass.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{project_backward, project_indexed, CameraPose, Gaussian, GaussianGrad, Splat2D, SplatGrad};

pub const TILE_SIZE: usize = 16;
/// Contributions with per-pixel alpha below this are skipped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// A pixel stops accumulating once its transmittance drops below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dims(width * height * 3, data.len()));
        }
        Ok(Image { width, height, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.index(x, y, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.data.len() != other.data.len() {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Maximum absolute per-element difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Snaps every value to the nearest multiple of 1/255 (half away from zero).
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.data {
            *v = f64::from(to_byte(*v)) / 255.0;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }
}

/// Quantizes a `[0, 1]` value to a byte, rounding half away from zero.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-tile lists of splat indices, each sorted by `(depth, source_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    /// Total number of (tile, splat) entries.
    pub fn entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Mahalanobis radius beyond which a splat cannot reach the alpha cutoff,
/// never smaller than 3σ.
fn support_radius(opacity: f64) -> f64 {
    let reach = 255.0 * opacity;
    if reach > 1.0 {
        (2.0 * reach.ln()).sqrt().max(3.0)
    } else {
        3.0
    }
}

/// Inclusive pixel bounds `(x0, x1, y0, y1)` of the splat's support, or `None`
/// when it misses the image or can never reach the alpha cutoff.
fn pixel_bounds(s: &Splat2D, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    if s.opacity < ALPHA_CUTOFF {
        return None;
    }
    let k = support_radius(s.opacity);
    let hx = k * s.cov2d[(0, 0)].sqrt();
    let hy = k * s.cov2d[(1, 1)].sqrt();
    let x0 = (s.mu2d.x - hx).ceil().max(0.0);
    let x1 = (s.mu2d.x + hx).floor().min(width as f64 - 1.0);
    let y0 = (s.mu2d.y - hy).ceil().max(0.0);
    let y1 = (s.mu2d.y + hy).floor().min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

fn depth_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].source_index.cmp(&splats[b].source_index))
    });
    order
}

/// Assigns each splat to every tile its support box touches.
pub fn tile_bin(splats: &[Splat2D], tile_size: usize, width: usize, height: usize) -> TileBins {
    let bounds: Vec<_> = splats.iter().map(|s| pixel_bounds(s, width, height)).collect();
    bin_bounded(splats, &bounds, tile_size, width, height)
}

type Bounds = Option<(usize, usize, usize, usize)>;

fn bin_bounded(splats: &[Splat2D], bounds: &[Bounds], tile_size: usize, width: usize, height: usize) -> TileBins {
    let tile_size = tile_size.max(1);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for i in depth_order(splats) {
        let Some((x0, x1, y0, y1)) = bounds[i] else {
            continue;
        };
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins { tile_size, tiles_x, tiles_y, lists }
}

/// Projected, sorted and binned splats for one view.
#[derive(Debug, Clone)]
pub struct Frame {
    pub splats: Vec<Splat2D>,
    /// Inclusive pixel box per splat outside which its alpha is below the cutoff.
    pub bounds: Vec<Option<(usize, usize, usize, usize)>>,
    pub bins: TileBins,
    pub width: usize,
    pub height: usize,
}

impl Frame {
    pub fn new(gaussians: &[Gaussian], pose: &CameraPose) -> Self {
        let splats: Vec<Splat2D> = gaussians
            .par_iter()
            .enumerate()
            .filter_map(|(i, g)| project_indexed(g, i, pose))
            .collect();
        let bounds: Vec<Bounds> = splats.iter().map(|s| pixel_bounds(s, pose.width, pose.height)).collect();
        let bins = bin_bounded(&splats, &bounds, TILE_SIZE, pose.width, pose.height);
        Frame { splats, bounds, bins, width: pose.width, height: pose.height }
    }

    fn tile_rect(&self, tile: usize) -> (usize, usize, usize, usize) {
        let ts = self.bins.tile_size;
        let tx = tile % self.bins.tiles_x;
        let ty = tile / self.bins.tiles_x;
        let x0 = tx * ts;
        let y0 = ty * ts;
        (x0, (x0 + ts).min(self.width), y0, (y0 + ts).min(self.height))
    }
}

/// `(slot, x0, x1)` for the splats of `tile` whose box covers row `y`, in depth order.
/// Skipping the rest is exact: outside its box a splat is below the alpha cutoff.
fn row_candidates(frame: &Frame, tile: usize, y: usize, out: &mut Vec<(usize, usize, usize)>) {
    out.clear();
    for (slot, &si) in frame.bins.lists[tile].iter().enumerate() {
        if let Some((x0, x1, y0, y1)) = frame.bounds[si as usize] {
            if y0 <= y && y <= y1 {
                out.push((slot, x0, x1));
            }
        }
    }
}

#[inline]
fn splat_alpha(s: &Splat2D, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let dx = px - s.mu2d.x;
    let dy = py - s.mu2d.y;
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let gauss = power.min(0.0).exp();
    (s.opacity * gauss, gauss, dx, dy)
}

fn render_tile(frame: &Frame, tile: usize, background: [f64; 3]) -> Vec<f64> {
    let (x0, x1, y0, y1) = frame.tile_rect(tile);
    let list = &frame.bins.lists[tile];
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
    let mut row = Vec::new();
    for y in y0..y1 {
        row_candidates(frame, tile, y, &mut row);
        for x in x0..x1 {
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            for &(slot, bx0, bx1) in &row {
                if x < bx0 || x > bx1 {
                    continue;
                }
                let s = &frame.splats[list[slot] as usize];
                let (alpha, ..) = splat_alpha(s, x as f64, y as f64);
                if alpha < ALPHA_CUTOFF {
                    continue;
                }
                let w = alpha * trans;
                for ch in 0..3 {
                    color[ch] += s.color[ch] * w;
                }
                trans *= 1.0 - alpha;
                if trans < TRANSMITTANCE_STOP {
                    break;
                }
            }
            for ch in 0..3 {
                out.push((color[ch] + background[ch] * trans).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Renders a prepared frame.
pub fn render_frame(frame: &Frame, background: [f64; 3]) -> Image {
    let n_tiles = frame.bins.lists.len();
    let tiles: Vec<Vec<f64>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| render_tile(frame, t, background))
        .collect();
    let mut img = Image::new(frame.width, frame.height);
    for (t, buf) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = frame.tile_rect(t);
        let row = (x1 - x0) * 3;
        for y in y0..y1 {
            let src = &buf[(y - y0) * row..(y - y0 + 1) * row];
            let start = img.index(x0, y, 0);
            img.data[start..start + row].copy_from_slice(src);
        }
    }
    img
}

/// Renders `gaussians` from `pose` over a constant background.
pub fn render(gaussians: &[Gaussian], pose: &CameraPose, background: [f64; 3]) -> Image {
    render_frame(&Frame::new(gaussians, pose), background)
}

/// Gradients of a scalar image loss with respect to every Gaussian.
#[derive(Debug, Clone, Default)]
pub struct RenderGrads {
    pub params: Vec<GaussianGrad>,
    /// Gradient with respect to the projected mean, in pixels.
    pub d_mu2d: Vec<Vector2<f64>>,
    pub d_mu2d_norm: Vec<f64>,
    /// Whether the Gaussian reached the alpha cutoff at one or more pixels.
    pub participated: Vec<bool>,
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mu2d: Vector2<f64>,
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
    hit: bool,
}

struct Contribution {
    slot: usize,
    alpha: f64,
    gauss: f64,
    trans: f64,
    dx: f64,
    dy: f64,
}

fn backward_tile(frame: &Frame, tile: usize, background: [f64; 3], d_image: &Image) -> Vec<ScreenGrad> {
    let (x0, x1, y0, y1) = frame.tile_rect(tile);
    let list = &frame.bins.lists[tile];
    let mut acc = vec![ScreenGrad::default(); list.len()];
    let mut contribs: Vec<Contribution> = Vec::new();
    let mut row = Vec::new();
    for y in y0..y1 {
        row_candidates(frame, tile, y, &mut row);
        for x in x0..x1 {
            contribs.clear();
            let mut trans = 1.0;
            for &(slot, bx0, bx1) in &row {
                if x < bx0 || x > bx1 {
                    continue;
                }
                let s = &frame.splats[list[slot] as usize];
                let (alpha, gauss, dx, dy) = splat_alpha(s, x as f64, y as f64);
                if alpha < ALPHA_CUTOFF {
                    continue;
                }
                contribs.push(Contribution { slot, alpha, gauss, trans, dx, dy });
                trans *= 1.0 - alpha;
                if trans < TRANSMITTANCE_STOP {
                    break;
                }
            }
            let gi = d_image.index(x, y, 0);
            let g = [d_image.data[gi], d_image.data[gi + 1], d_image.data[gi + 2]];
            // color seen behind the current contribution, normalized by its transmittance
            let mut behind = background;
            for c in contribs.iter().rev() {
                let s = &frame.splats[list[c.slot] as usize];
                let a = &mut acc[c.slot];
                a.hit = true;
                let w = c.alpha * c.trans;
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    a.color[ch] += g[ch] * w;
                    d_alpha += g[ch] * (s.color[ch] - behind[ch]);
                }
                d_alpha *= c.trans;
                for ch in 0..3 {
                    behind[ch] = s.color[ch] * c.alpha + (1.0 - c.alpha) * behind[ch];
                }
                a.opacity += d_alpha * c.gauss;
                let d_power = d_alpha * c.alpha;
                let [ca, cb, cc] = s.conic;
                a.mu2d.x += d_power * (ca * c.dx + cb * c.dy);
                a.mu2d.y += d_power * (cb * c.dx + cc * c.dy);
                a.conic[0] -= 0.5 * d_power * c.dx * c.dx;
                a.conic[1] -= d_power * c.dx * c.dy;
                a.conic[2] -= 0.5 * d_power * c.dy * c.dy;
            }
        }
    }
    acc
}

/// Backward pass for a prepared frame.
pub fn render_backward_frame(
    gaussians: &[Gaussian],
    pose: &CameraPose,
    frame: &Frame,
    background: [f64; 3],
    d_image: &Image,
) -> Result<RenderGrads> {
    if d_image.width != pose.width || d_image.height != pose.height || d_image.data.len() != pose.width * pose.height * 3 {
        return Err(Error::InvalidArgument(format!(
            "gradient image is {}x{}, camera is {}x{}",
            d_image.width, d_image.height, pose.width, pose.height
        )));
    }
    let n_tiles = frame.bins.lists.len();
    let per_tile: Vec<Vec<ScreenGrad>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| backward_tile(frame, t, background, d_image))
        .collect();

    let mut screen = vec![ScreenGrad::default(); frame.splats.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (slot, a) in acc.iter().enumerate() {
            let s = &mut screen[frame.bins.lists[t][slot] as usize];
            s.mu2d += a.mu2d;
            for k in 0..3 {
                s.conic[k] += a.conic[k];
                s.color[k] += a.color[k];
            }
            s.opacity += a.opacity;
            s.hit |= a.hit;
        }
    }

    let n = gaussians.len();
    let mut grads = RenderGrads {
        params: vec![GaussianGrad::default(); n],
        d_mu2d: vec![Vector2::zeros(); n],
        d_mu2d_norm: vec![0.0; n],
        participated: vec![false; n],
    };
    let mapped: Vec<(usize, GaussianGrad)> = frame
        .splats
        .par_iter()
        .zip(screen.par_iter())
        .filter(|(_, sg)| sg.hit)
        .map(|(s, sg)| {
            let [a, b, c] = s.conic;
            let k = Matrix2::new(a, b, b, c);
            let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
            let up = SplatGrad {
                mu2d: sg.mu2d,
                cov2d: -(k * g_conic * k),
                color: sg.color,
                opacity: sg.opacity,
            };
            (s.source_index, project_backward(&gaussians[s.source_index], pose, &up))
        })
        .collect();
    for ((idx, g), (s, sg)) in mapped.into_iter().zip(frame.splats.iter().zip(&screen).filter(|(_, sg)| sg.hit)) {
        debug_assert_eq!(idx, s.source_index);
        grads.params[idx] = g;
        grads.d_mu2d[idx] = sg.mu2d;
        grads.d_mu2d_norm[idx] = sg.mu2d.norm();
        grads.participated[idx] = true;
    }
    Ok(grads)
}

/// Gradients of a loss with upstream image gradient `d_image` with respect to all Gaussians.
pub fn render_backward(
    gaussians: &[Gaussian],
    pose: &CameraPose,
    background: [f64; 3],
    d_image: &Image,
) -> Result<RenderGrads> {
    let frame = Frame::new(gaussians, pose);
    render_backward_frame(gaussians, pose, &frame, background, d_image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Vector3};

    fn pose(w: usize, h: usize) -> CameraPose {
        CameraPose {
            world_to_camera: Matrix4::identity(),
            fx: 40.0,
            fy: 40.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        }
    }

    fn splat(x: f64, y: f64, var: f64, depth: f64, idx: usize) -> Splat2D {
        Splat2D {
            mu2d: Vector2::new(x, y),
            cov2d: Matrix2::new(var, 0.0, 0.0, var),
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            color: [1.0; 3],
            opacity: 0.3,
            source_index: idx,
        }
    }

    #[test]
    fn empty_cloud_renders_background() {
        let img = render(&[], &pose(20, 12), [0.0; 3]);
        assert!(img.data.iter().all(|&v| v == 0.0));
        let img = render(&[], &pose(20, 12), [0.2, 0.4, 0.6]);
        assert_eq!(img.pixel(19, 11), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn small_splat_lands_in_one_tile() {
        let bins = tile_bin(&[splat(8.0, 8.0, 1.0, 1.0, 0)], 16, 64, 64);
        let tiles: Vec<usize> = (0..bins.lists.len()).filter(|&t| !bins.lists[t].is_empty()).collect();
        assert_eq!(tiles, vec![0]);
    }

    #[test]
    fn splat_on_tile_corner_spans_four_tiles() {
        // 3σ = 3 px around (16, 16): pixels 13..=19 in both axes cover tiles (0,0),(1,0),(0,1),(1,1)
        let bins = tile_bin(&[splat(16.0, 16.0, 1.0, 1.0, 0)], 16, 64, 64);
        let tiles: Vec<usize> = (0..bins.lists.len()).filter(|&t| !bins.lists[t].is_empty()).collect();
        assert_eq!(tiles, vec![0, 1, 4, 5]);
    }

    #[test]
    fn equal_depth_ordered_by_source_index() {
        let splats = [splat(8.0, 8.0, 1.0, 2.0, 7), splat(8.0, 8.0, 1.0, 2.0, 3), splat(8.0, 8.0, 1.0, 1.0, 9)];
        let bins = tile_bin(&splats, 16, 32, 32);
        assert_eq!(bins.lists[0], vec![2, 1, 0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), -2.0, 0.6, [0.3, 0.5, 0.7]);
        let p = pose(16, 16);
        let grads = render_backward(&[g], &p, [0.0; 3], &Image::new(16, 16)).unwrap();
        assert!(grads.params[0].is_zero());
        assert!(grads.participated[0]);
        assert_eq!(grads.d_mu2d_norm[0], 0.0);
    }

    #[test]
    fn culled_gaussian_has_no_gradient() {
        let front = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), -2.0, 0.6, [0.3, 0.5, 0.7]);
        let behind = Gaussian::isotropic(Vector3::new(0.0, 0.0, -2.0), -2.0, 0.6, [0.3, 0.5, 0.7]);
        let p = pose(16, 16);
        let d = Image::filled(16, 16, [1.0; 3]);
        let grads = render_backward(&[front, behind], &p, [0.0; 3], &d).unwrap();
        assert!(grads.participated[0]);
        assert!(!grads.participated[1]);
        assert!(grads.params[1].is_zero());
        assert_eq!(grads.d_mu2d_norm[1], 0.0);
    }

    #[test]
    fn backward_rejects_wrong_shape() {
        let err = render_backward(&[], &pose(16, 16), [0.0; 3], &Image::new(8, 8)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn opaque_front_splat_hides_back() {
        let front = Gaussian::isotropic(Vector3::new(0.0, 0.0, 1.0), -1.0, 0.999_999, [0.9, 0.1, 0.2]);
        let back = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), -1.0, 0.8, [0.0, 0.8, 0.9]);
        let img = render(&[back, front], &pose(16, 16), [0.0; 3]);
        let px = img.pixel(8, 8);
        for (a, b) in px.iter().zip([0.9, 0.1, 0.2]) {
            assert!((a - b).abs() <= 1.0 / 255.0, "{px:?}");
        }
    }

    #[test]
    fn quantize_rounds_half_away() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
    }
}

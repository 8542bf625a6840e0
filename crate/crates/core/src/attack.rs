//! Computation-cost poisoning: maximize the total variation of the training
//! images, optionally inside an L∞ ball, while a proxy 3DGS model keeps the
//! perturbations consistent across views.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng;
use crate::scene::{AttackSidecar, Dataset};
use crate::train::{train, TrainConfig, Trainer};

/// Smoothing inside the square root of the TV score.
pub const TV_EPS: f64 = 1e-12;
/// Step size used when the budget is unbounded and no step is configured.
pub const UNBOUNDED_ETA: f64 = 4.0 / 255.0;

/// Sum over channels and pixels (excluding the last row and column) of the
/// forward-difference gradient magnitude.
pub fn tv_score(img: &Image) -> f64 {
    let (w, h) = (img.width, img.height);
    let mut total = 0.0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            for c in 0..3 {
                let v = img.get(x, y, c);
                let down = img.get(x, y + 1, c) - v;
                let right = img.get(x + 1, y, c) - v;
                total += (down * down + right * right + TV_EPS).sqrt();
            }
        }
    }
    total
}

/// Exact gradient of [`tv_score`].
pub fn tv_grad(img: &Image) -> Image {
    let (w, h) = (img.width, img.height);
    let mut g = Image::new(w, h);
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            for c in 0..3 {
                let v = img.get(x, y, c);
                let down = img.get(x, y + 1, c) - v;
                let right = img.get(x + 1, y, c) - v;
                let norm = (down * down + right * right + TV_EPS).sqrt();
                let i = img.index(x, y, c);
                g.data[i] -= (down + right) / norm;
                g.data[img.index(x, y + 1, c)] += down / norm;
                g.data[img.index(x + 1, y, c)] += right / norm;
            }
        }
    }
    g
}

/// L∞ perturbation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Bounded(f64),
    Unbounded,
}

impl Budget {
    pub fn as_option(self) -> Option<f64> {
        match self {
            Budget::Bounded(e) => Some(e),
            Budget::Unbounded => None,
        }
    }

    pub fn from_option(e: Option<f64>) -> Self {
        e.map_or(Budget::Unbounded, Budget::Bounded)
    }
}

/// Clamps `poisoned` into the ε-ball around `clean`, then into `[0, 1]`.
pub fn project_epsilon(poisoned: &Image, clean: &Image, budget: Budget) -> Result<Image> {
    poisoned.same_shape(clean)?;
    let mut out = poisoned.clone();
    project_in_place(&mut out, clean, budget);
    Ok(out)
}

fn project_in_place(img: &mut Image, clean: &Image, budget: Budget) {
    for (v, &c) in img.data.iter_mut().zip(&clean.data) {
        if let Budget::Bounded(eps) = budget {
            *v = v.clamp(c - eps, c + eps);
        }
        *v = v.clamp(0.0, 1.0);
    }
}

/// Sign-ascent on the TV score from `start`, projected after every step.
/// Returns the highest-TV iterate among the projected start and all steps.
fn tv_ascent(start: &Image, clean: &Image, budget: Budget, eta: f64, steps: usize) -> (Image, f64) {
    let mut cur = start.clone();
    project_in_place(&mut cur, clean, budget);
    let mut best_tv = tv_score(&cur);
    let mut best = cur.clone();
    for _ in 0..steps {
        let g = tv_grad(&cur);
        for (v, gv) in cur.data.iter_mut().zip(&g.data) {
            if *gv > 0.0 {
                *v += eta;
            } else if *gv < 0.0 {
                *v -= eta;
            }
        }
        project_in_place(&mut cur, clean, budget);
        let tv = tv_score(&cur);
        if tv > best_tv {
            best_tv = tv;
            best.data.copy_from_slice(&cur.data);
        }
    }
    (best, best_tv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// `None` is unbounded.
    pub epsilon: Option<f64>,
    /// `None` picks ε/10 (bounded, ε > 0), 1/255 (ε = 0) or 4/255 (unbounded).
    pub eta: Option<f64>,
    /// Outer iterations (views visited).
    pub outer_iterations: usize,
    /// Sign-ascent steps per visit.
    pub inner_steps: usize,
    pub proxy: TrainConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: Some(16.0 / 255.0),
            eta: None,
            outer_iterations: 3000,
            inner_steps: 10,
            proxy: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn budget(&self) -> Budget {
        Budget::from_option(self.epsilon)
    }

    pub fn step_size(&self) -> f64 {
        self.eta.unwrap_or(match self.epsilon {
            None => UNBOUNDED_ETA,
            Some(e) if e > 0.0 => e / 10.0,
            Some(_) => 1.0 / 255.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.step_size();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidConfig("eta must be in (0, 1]".into()));
        }
        if self.outer_iterations == 0 || self.inner_steps == 0 {
            return Err(Error::InvalidConfig("outer_iterations and inner_steps must be at least 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::InvalidConfig("epsilon must be non-negative".into()));
            }
        }
        self.proxy.validate()
    }

    pub fn sidecar(&self) -> AttackSidecar {
        AttackSidecar {
            epsilon: self.epsilon,
            eta: self.step_size(),
            outer_iterations: self.outer_iterations,
            inner_steps: self.inner_steps,
            seed: self.seed,
        }
    }
}

/// Poisoned views plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonedDataset {
    pub dataset: Dataset,
    pub clean_name: String,
    pub config: AttackSidecar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackLogRow {
    pub t: usize,
    pub view: usize,
    pub proxy_gaussians: usize,
    pub tv_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackLog {
    /// Proxy size before the first outer iteration.
    pub initial_proxy_gaussians: usize,
    pub rows: Vec<AttackLogRow>,
}

impl AttackLog {
    /// CSV with header `t,view,proxy_gaussians,tv_score`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(["t", "view", "proxy_gaussians", "tv_score"])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn finish(clean: &Dataset, mut views: Vec<Image>, config: &AttackConfig) -> Result<PoisonedDataset> {
    let mut out = clean.clone();
    for (view, img) in out.views.iter_mut().zip(views.iter_mut()) {
        // the carrier is 8-bit; the clean images already sit on that grid
        img.quantize_8bit();
        view.image = std::mem::replace(img, Image::new(0, 0));
    }
    out.name = format!("{}-poisoned", clean.name);
    Ok(PoisonedDataset { dataset: out, clean_name: clean.name.clone(), config: config.sidecar() })
}

/// Proxy-guided attack: train a proxy on the clean views, then repeatedly
/// render a random view, push the render's TV up inside the budget, fit the
/// proxy one step towards the result and store it as that view's poisoned image.
pub fn poison_dataset(dataset: &Dataset, config: &AttackConfig) -> Result<(PoisonedDataset, AttackLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let budget = config.budget();
    let eta = config.step_size();
    let (proxy, _) = train(dataset, &config.proxy)?;

    let mut schedule = config.proxy.clone();
    schedule.iterations = config.outer_iterations;
    if schedule.densify_until() > schedule.iterations || schedule.densify_from >= schedule.densify_until() {
        schedule.densify_until = Some(0);
    }
    let mut proxy = Trainer::from_cloud(proxy, schedule, dataset.scene_extent, "attack/proxy");
    let mut log = AttackLog { initial_proxy_gaussians: proxy.cloud.len(), rows: Vec::new() };
    let mut views: Vec<Image> = dataset.views.iter().map(|v| v.image.clone()).collect();
    let mut rng = rng::stream(config.seed, "attack/views");

    for t in 1..=config.outer_iterations {
        let k = rng.random_range(0..dataset.len());
        let view = &dataset.views[k];
        let rendered = proxy.render(&view.pose);
        let (target, tv) = tv_ascent(&rendered, &view.image, budget, eta, config.inner_steps);
        proxy.step(&view.pose, &target)?;
        views[k] = target;
        log.rows.push(AttackLogRow { t, view: k, proxy_gaussians: proxy.cloud.len(), tv_score: tv });
    }
    Ok((finish(dataset, views, config)?, log))
}

/// Baseline without a proxy: each view is TV-maximized on its own for
/// `outer_iterations · inner_steps / N` steps.
pub fn naive_tv_attack(dataset: &Dataset, config: &AttackConfig) -> Result<PoisonedDataset> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let steps = (config.outer_iterations * config.inner_steps / dataset.len()).max(1);
    let budget = config.budget();
    let eta = config.step_size();
    let views = dataset
        .views
        .iter()
        .map(|v| tv_ascent(&v.image, &v.image, budget, eta, steps).0)
        .collect();
    finish(dataset, views, config)
}

/// Largest per-pixel deviation of `poisoned` from `clean` over all views.
pub fn max_perturbation(clean: &Dataset, poisoned: &Dataset) -> Result<f64> {
    if clean.len() != poisoned.len() {
        return Err(Error::dims(clean.len(), poisoned.len()));
    }
    let mut worst: f64 = 0.0;
    for (a, b) in clean.views.iter().zip(&poisoned.views) {
        a.image.same_shape(&b.image)?;
        worst = worst.max(a.image.max_abs_diff(&b.image));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn constant_image_has_floor_tv() {
        let img = Image::filled(8, 6, [0.3, 0.3, 0.3]);
        assert!(tv_score(&img) <= 8.0 * 6.0 * 3.0 * 1e-6);
        assert!(tv_grad(&img).data.iter().all(|g| g.abs() <= 1e-5));
    }

    #[test]
    fn two_by_two_example() {
        let mut img = Image::new(2, 2);
        img.set(1, 0, 0, 1.0);
        img.set(1, 1, 0, 1.0);
        // one red term of 1.0 plus two flat channels of sqrt(eps)
        assert!((tv_score(&img) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn contrast_increases_tv() {
        let img = random_image(4, 8, 8);
        let mut scaled = img.clone();
        for v in &mut scaled.data {
            *v = 0.5 + 1.5 * (*v - 0.5);
        }
        assert!(tv_score(&scaled) > tv_score(&img));
    }

    #[test]
    fn tv_grad_matches_finite_differences() {
        let img = random_image(5, 8, 8);
        let g = tv_grad(&img);
        let h = 1e-6;
        for i in 0..img.data.len() {
            let mut p = img.clone();
            p.data[i] += h;
            let mut m = img.clone();
            m.data[i] -= h;
            let fd = (tv_score(&p) - tv_score(&m)) / (2.0 * h);
            let err = (fd - g.data[i]).abs() / fd.abs().max(g.data[i].abs()).max(1e-6);
            assert!(err < 1e-4, "{i}: fd {fd} analytic {}", g.data[i]);
        }
    }

    #[test]
    fn interior_stencil() {
        // center pixel (1,1) of a 3x3 red channel touches terms at (1,1), (0,1) and (1,0)
        let mut img = Image::new(3, 3);
        let vals = [[0.1, 0.7, 0.2], [0.4, 0.5, 0.9], [0.3, 0.8, 0.6]];
        for (y, row) in vals.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                img.set(x, y, 0, *v);
            }
        }
        let term = |d: f64, r: f64| (d * d + r * r + TV_EPS).sqrt();
        let v = |x: usize, y: usize| vals[y][x];
        // own term: down = v(1,2) - v(1,1), right = v(2,1) - v(1,1)
        let (d0, r0) = (v(1, 2) - v(1, 1), v(2, 1) - v(1, 1));
        // term at (1,0) has (1,1) as its lower neighbor
        let (d1, r1) = (v(1, 1) - v(1, 0), v(2, 0) - v(1, 0));
        // term at (0,1) has (1,1) as its right neighbor
        let (d2, r2) = (v(0, 2) - v(0, 1), v(1, 1) - v(0, 1));
        let expected = -(d0 + r0) / term(d0, r0) + d1 / term(d1, r1) + r2 / term(d2, r2);
        assert!((tv_grad(&img).get(1, 1, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let clean = Image::filled(1, 1, [0.5, 0.5, 0.95]);
        let poisoned = Image::filled(1, 1, [0.8, 0.55, 1.2]);
        let p = project_epsilon(&poisoned, &clean, Budget::Bounded(0.1)).unwrap();
        assert!((p.data[0] - 0.6).abs() < 1e-12);
        assert_eq!(p.data[1], 0.55);
        assert_eq!(p.data[2], 1.0);
        let p = project_epsilon(&poisoned, &clean, Budget::Bounded(16.0 / 255.0)).unwrap();
        assert_eq!(p.data[2], 1.0);
        let p = project_epsilon(&poisoned, &clean, Budget::Unbounded).unwrap();
        assert_eq!(p.data, vec![0.8, 0.55, 1.0]);
        assert!(project_epsilon(&poisoned, &Image::new(2, 1), Budget::Unbounded).is_err());
    }

    #[test]
    fn ascent_keeps_best_feasible_iterate() {
        let clean = random_image(6, 12, 12);
        let (best, tv) = tv_ascent(&clean, &clean, Budget::Bounded(8.0 / 255.0), 0.8 / 255.0, 15);
        assert!(best.max_abs_diff(&clean) <= 8.0 / 255.0 + 1e-12);
        assert!(tv >= tv_score(&clean));
        assert!((tv - tv_score(&best)).abs() < 1e-9);
    }

    #[test]
    fn default_step_sizes() {
        let c = AttackConfig { epsilon: Some(0.1), ..Default::default() };
        assert!((c.step_size() - 0.01).abs() < 1e-15);
        let c = AttackConfig { epsilon: None, ..Default::default() };
        assert_eq!(c.step_size(), 4.0 / 255.0);
        let c = AttackConfig { epsilon: Some(0.0), ..Default::default() };
        assert!(c.validate().is_ok());
    }
}

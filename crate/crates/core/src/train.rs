//! 3DGS training: photometric loss, per-group Adam and adaptive density control.

use std::io::Write;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::gaussian::{logit, quat_to_rotation, CameraPose, Gaussian, PARAMS_PER_GAUSSIAN};
use crate::loss::reconstruction_loss;
use crate::raster::{render_backward_frame, render_frame, Frame, Image};
use crate::rng::{self, SplatRng};
use crate::scene::Dataset;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;
/// Children of a split shrink their scale by this factor.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const INIT_OPACITY: f64 = 0.1;
pub const RESET_OPACITY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent; decays to half by the last iteration.
    pub mu: f64,
    pub log_scale: f64,
    pub alpha_raw: f64,
    pub rotation: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { mu: 1.6e-4, log_scale: 5e-3, alpha_raw: 5e-2, rotation: 1e-3, color: 2.5e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Weight of the D-SSIM term.
    pub lambda: f64,
    pub learning_rates: LearningRates,
    /// Densification threshold on the mean view-space positional gradient.
    pub tau_g: f64,
    /// Gaussians below this opacity are pruned.
    pub tau_alpha: f64,
    /// Split/clone scale threshold as a fraction of the scene extent.
    pub tau_s: f64,
    pub densify_interval: usize,
    pub densify_from: usize,
    /// Last iteration (exclusive) with densification; `None` is `iterations / 2`, 0 disables.
    pub densify_until: Option<usize>,
    /// 0 disables opacity resets.
    pub opacity_reset_interval: usize,
    pub max_gaussians: Option<usize>,
    pub init_count: usize,
    pub seed: u64,
    pub background: [f64; 3],
    /// Accepted for memory accounting; rendering uses the degree-0 term only.
    pub sh_degree: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            lambda: 0.2,
            learning_rates: LearningRates::default(),
            tau_g: 0.0002,
            tau_alpha: 0.005,
            tau_s: 0.01,
            densify_interval: 100,
            densify_from: 500,
            densify_until: None,
            opacity_reset_interval: 3000,
            max_gaussians: None,
            init_count: 2000,
            seed: 0,
            background: [0.0; 3],
            sh_degree: 0,
        }
    }
}

impl TrainConfig {
    pub fn densify_until(&self) -> usize {
        self.densify_until.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.tau_g > 0.0) {
            return bad("tau_g must be positive");
        }
        let lr = &self.learning_rates;
        if [lr.mu, lr.log_scale, lr.alpha_raw, lr.rotation, lr.color].iter().any(|v| !(*v > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(self.tau_alpha >= 0.0 && self.tau_alpha < 1.0) || !(self.tau_s > 0.0) {
            return bad("tau_alpha must be in [0, 1) and tau_s positive");
        }
        if self.densify_interval == 0 {
            return bad("densify_interval must be at least 1");
        }
        let until = self.densify_until();
        if until != 0 && !(self.densify_from < until && until <= self.iterations) {
            return bad("need densify_from < densify_until <= iterations (or densify_until = 0)");
        }
        if self.sh_degree > 3 {
            return bad("sh_degree must be at most 3");
        }
        if self.max_gaussians == Some(0) {
            return bad("max_gaussians must be at least 1");
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must be in [0, 1]");
        }
        Ok(())
    }

    /// Variant with densification switched off.
    pub fn without_densification(mut self) -> Self {
        self.densify_until = Some(0);
        self
    }
}

/// Analytic memory footprint in bytes: parameters plus two Adam moments per
/// Gaussian, two float image buffers, and the tile index lists.
pub fn memory_bytes(n_gaussians: usize, sh_degree: u8, width: usize, height: usize, bin_entries: usize) -> u64 {
    let floats_per_gaussian = 3 + 3 + 1 + 4 + 3 * (usize::from(sh_degree) + 1).pow(2);
    let params = n_gaussians * floats_per_gaussian * 4 * 3;
    let buffers = width * height * 3 * 4 * 2;
    let bins = bin_entries * 4;
    (params + buffers + bins) as u64
}

pub fn memory_model(cloud: &GaussianCloud, config: &TrainConfig, width: usize, height: usize) -> u64 {
    memory_bytes(cloud.len(), config.sh_degree, width, height, cloud.last_bin_entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iter: usize,
    pub loss: f64,
    pub n_gaussians: usize,
    pub ms: f64,
    pub mem_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainRecord {
    pub rows: Vec<TrainRow>,
}

impl TrainRecord {
    pub fn total_minutes(&self) -> f64 {
        self.rows.iter().map(|r| r.ms).sum::<f64>() / 60_000.0
    }

    pub fn peak_mem_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.mem_bytes).max().unwrap_or(0)
    }

    pub fn final_gaussians(&self) -> Option<usize> {
        self.rows.last().map(|r| r.n_gaussians)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// CSV with header `iter,loss,n_gaussians,ms,mem_bytes`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(["iter", "loss", "n_gaussians", "ms", "mem_bytes"])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyReport {
    pub n_cloned: usize,
    pub n_split: usize,
    pub n_pruned: usize,
}

/// Clones or splits Gaussians whose mean view-space gradient exceeds `tau_g`,
/// then prunes low-opacity ones. Resets the densification statistics.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    config: &TrainConfig,
    scene_extent: f64,
    rng: &mut SplatRng,
) -> DensifyReport {
    let mut report = DensifyReport::default();
    let n = cloud.len();
    let opacity_ok: Vec<bool> = cloud.gaussians().iter().map(|g| g.opacity() >= config.tau_alpha).collect();

    let mut candidates: Vec<(usize, f64)> = cloud
        .stats()
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.mean()))
        .filter(|&(_, m)| m > config.tau_g)
        .collect();
    if let Some(cap) = config.max_gaussians {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut projected = opacity_ok.iter().filter(|&&k| k).count();
        candidates.retain(|&(i, _)| {
            if !opacity_ok[i] {
                true
            } else if projected < cap {
                projected += 1;
                true
            } else {
                false
            }
        });
        candidates.sort_by_key(|&(i, _)| i);
    }

    let split_threshold = config.tau_s * scene_extent;
    let mut keep = vec![true; n];
    let mut added = Vec::new();
    for &(i, _) in &candidates {
        let g = cloud.gaussians()[i];
        let max_scale = g.log_scale.max().exp();
        if max_scale > split_threshold {
            let rot = quat_to_rotation(&g.rotation).unwrap_or_else(|_| Matrix3::identity());
            let scales = g.scales();
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut child = g;
                child.mu = g.mu + rot * scales.component_mul(&z);
                child.log_scale = g.log_scale.add_scalar(-SPLIT_SCALE_DIVISOR.ln());
                added.push(child);
            }
            keep[i] = false;
            report.n_split += 1;
        } else {
            added.push(g);
            report.n_cloned += 1;
        }
    }
    cloud.retain_mask(&keep);
    for g in added {
        cloud.push(g);
    }

    let keep: Vec<bool> = cloud.gaussians().iter().map(|g| g.opacity() >= config.tau_alpha).collect();
    report.n_pruned = keep.iter().filter(|&&k| !k).count();
    cloud.retain_mask(&keep);
    cloud.reset_stats();
    report
}

/// Random initialization inside the dataset's init bounds.
pub fn initialize(dataset: &Dataset, config: &TrainConfig) -> GaussianCloud {
    let count = config.max_gaussians.map_or(config.init_count, |cap| config.init_count.min(cap));
    let mut rng = rng::stream(config.seed, "trainer/init");
    let (lo, hi) = dataset.init_bounds();
    let positions: Vec<Vector3<f64>> = (0..count)
        .map(|_| Vector3::from_fn(|i, _| rng.random_range(lo[i]..hi[i])))
        .collect();
    let nn = mean_nearest_neighbor(&positions).max(1e-7);
    let gaussians = positions
        .into_iter()
        .map(|mu| Gaussian::isotropic(mu, nn.ln(), INIT_OPACITY, std::array::from_fn(|_| rng.random::<f64>())))
        .collect();
    GaussianCloud::new(gaussians)
}

/// Mean nearest-neighbor distance, estimated from up to 1024 query points.
fn mean_nearest_neighbor(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 1e-2;
    }
    let step = points.len().div_ceil(1024);
    let queries: Vec<usize> = (0..points.len()).step_by(step).collect();
    // collect before summing: a parallel float sum depends on the split
    let nearest: Vec<f64> = queries
        .par_iter()
        .map(|&i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| (p - points[i]).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nearest.iter().sum::<f64>() / queries.len() as f64
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub rendered_bins: usize,
    pub densify: Option<DensifyReport>,
}

/// Owns a cloud and advances it one view at a time on its own schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub cloud: GaussianCloud,
    pub scene_extent: f64,
    /// Number of steps taken on the current schedule.
    pub iteration: usize,
    densify_rng: SplatRng,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let cloud = initialize(dataset, &config);
        Ok(Self::from_cloud(cloud, config, dataset.scene_extent, "trainer"))
    }

    /// Continues optimizing an existing cloud with a fresh schedule.
    pub fn from_cloud(cloud: GaussianCloud, config: TrainConfig, scene_extent: f64, stream: &str) -> Self {
        let densify_rng = rng::stream(config.seed, &format!("{stream}/densify"));
        Trainer { config, cloud, scene_extent, iteration: 0, densify_rng }
    }

    pub fn render(&self, pose: &CameraPose) -> Image {
        crate::raster::render(self.cloud.gaussians(), pose, self.config.background)
    }

    fn learning_rates(&self, it: usize) -> [f64; PARAMS_PER_GAUSSIAN] {
        let lr = &self.config.learning_rates;
        let progress = if self.config.iterations > 0 {
            (it as f64 / self.config.iterations as f64).min(1.0)
        } else {
            1.0
        };
        let mu = lr.mu * self.scene_extent * 0.5f64.powf(progress);
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        out[0..3].fill(mu);
        out[3..6].fill(lr.log_scale);
        out[6] = lr.alpha_raw;
        out[7..11].fill(lr.rotation);
        out[11..14].fill(lr.color);
        out
    }

    /// One render/backward/Adam step towards `target` from `pose`, followed by
    /// densification or opacity reset when the schedule says so.
    pub fn step(&mut self, pose: &CameraPose, target: &Image) -> Result<StepReport> {
        let it = self.iteration + 1;
        let bg = self.config.background;
        let frame = Frame::new(self.cloud.gaussians(), pose);
        let rendered = render_frame(&frame, bg);
        let (loss, d_image) = reconstruction_loss(&rendered, target, self.config.lambda)?;
        let grads = render_backward_frame(self.cloud.gaussians(), pose, &frame, bg, &d_image)?;
        let rendered_bins = frame.bins.entries();
        self.cloud.last_bin_entries = rendered_bins;

        let until = self.config.densify_until();
        if it < until {
            // view-space statistic in normalized device units, as in the reference 3DGS
            let (sx, sy) = (0.5 * pose.width as f64, 0.5 * pose.height as f64);
            for (i, d) in grads.d_mu2d.iter().enumerate() {
                if grads.participated[i] {
                    self.cloud.record_view_gradient(i, (d.x * sx).hypot(d.y * sy));
                }
            }
        }

        self.cloud.adam_step += 1;
        let t = self.cloud.adam_step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let lrs = self.learning_rates(it);
        let (gaussians, moments) = self.cloud.parts_mut();
        gaussians
            .par_iter_mut()
            .zip(moments.par_iter_mut())
            .zip(grads.params.par_iter())
            .for_each(|((g, m), grad)| {
                let mut p = g.to_params();
                let gp = grad.to_params();
                for k in 0..PARAMS_PER_GAUSSIAN {
                    m.m[k] = ADAM_BETA1 * m.m[k] + (1.0 - ADAM_BETA1) * gp[k];
                    m.v[k] = ADAM_BETA2 * m.v[k] + (1.0 - ADAM_BETA2) * gp[k] * gp[k];
                    let m_hat = m.m[k] / bc1;
                    let v_hat = m.v[k] / bc2;
                    p[k] -= lrs[k] * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                *g = Gaussian::from_params(&p);
            });

        let mut densify = None;
        if it < until {
            if it > self.config.densify_from && it.is_multiple_of(self.config.densify_interval) {
                densify = Some(densify_and_prune(&mut self.cloud, &self.config, self.scene_extent, &mut self.densify_rng));
            }
            let reset = self.config.opacity_reset_interval;
            if reset > 0 && it.is_multiple_of(reset) {
                self.reset_opacity();
            }
        }
        self.iteration = it;
        Ok(StepReport { loss, rendered_bins, densify })
    }

    fn reset_opacity(&mut self) {
        let raw = logit(RESET_OPACITY);
        let (gaussians, moments) = self.cloud.parts_mut();
        for (g, m) in gaussians.iter_mut().zip(moments.iter_mut()) {
            g.alpha_raw = raw;
            m.m[6] = 0.0;
            m.v[6] = 0.0;
        }
    }

    pub fn memory_bytes(&self, pose: &CameraPose) -> u64 {
        memory_model(&self.cloud, &self.config, pose.width, pose.height)
    }
}

/// Trains a fresh model on `dataset`, sampling one view per iteration.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(GaussianCloud, TrainRecord)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(dataset, config.clone())?;
    let mut view_rng = rng::stream(config.seed, "trainer/views");
    let mut record = TrainRecord::default();
    for _ in 0..config.iterations {
        let start = Instant::now();
        let k = view_rng.random_range(0..dataset.len());
        let view = &dataset.views[k];
        let report = trainer.step(&view.pose, &view.image)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        record.rows.push(TrainRow {
            iter: trainer.iteration,
            loss: report.loss,
            n_gaussians: trainer.cloud.len(),
            ms,
            mem_bytes: trainer.memory_bytes(&view.pose),
        });
    }
    Ok((trainer.cloud, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(opacity: f64, log_scale: f64) -> GaussianCloud {
        GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), log_scale, opacity, [0.5; 3])])
    }

    #[test]
    fn clone_above_threshold() {
        let mut cloud = one(0.5, (0.001f64).ln());
        cloud.record_view_gradient(0, 0.0003);
        let r = densify_and_prune(&mut cloud, &TrainConfig::default(), 1.0, &mut rng::stream(0, "t"));
        assert_eq!(r, DensifyReport { n_cloned: 1, n_split: 0, n_pruned: 0 });
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.gaussians()[0], cloud.gaussians()[1]);
        assert!(cloud.stats().iter().all(|s| s.views == 0));
    }

    #[test]
    fn split_large_gaussian() {
        let mut cloud = one(0.5, (0.5f64).ln());
        cloud.record_view_gradient(0, 0.001);
        let r = densify_and_prune(&mut cloud, &TrainConfig::default(), 1.0, &mut rng::stream(0, "t"));
        assert_eq!(r.n_split, 1);
        assert_eq!(cloud.len(), 2);
        for g in cloud.gaussians() {
            assert!((g.log_scale.x - (0.5f64 / 1.6).ln()).abs() < 1e-12);
        }
        assert_ne!(cloud.gaussians()[0].mu, cloud.gaussians()[1].mu);
    }

    #[test]
    fn below_threshold_untouched() {
        let mut cloud = one(0.5, (0.001f64).ln());
        cloud.record_view_gradient(0, 0.0001);
        let before = cloud.gaussians().to_vec();
        let r = densify_and_prune(&mut cloud, &TrainConfig::default(), 1.0, &mut rng::stream(0, "t"));
        assert_eq!(r, DensifyReport::default());
        assert_eq!(cloud.gaussians(), &before[..]);
    }

    #[test]
    fn low_opacity_pruned() {
        let mut cloud = one(0.001, 0.0);
        let r = densify_and_prune(&mut cloud, &TrainConfig::default(), 1.0, &mut rng::stream(0, "t"));
        assert_eq!(r.n_pruned, 1);
        assert!(cloud.is_empty());
    }

    #[test]
    fn cap_keeps_highest_gradients() {
        let g = |x: f64| Gaussian::isotropic(Vector3::new(x, 0.0, 0.0), (0.001f64).ln(), 0.5, [0.5; 3]);
        let mut cloud = GaussianCloud::new(vec![g(0.0), g(1.0), g(2.0)]);
        for (i, v) in [0.001, 0.003, 0.002].into_iter().enumerate() {
            cloud.record_view_gradient(i, v);
        }
        let config = TrainConfig { max_gaussians: Some(4), ..TrainConfig::default() };
        let r = densify_and_prune(&mut cloud, &config, 1.0, &mut rng::stream(0, "t"));
        assert_eq!(r.n_cloned, 1);
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.gaussians()[3].mu.x, 1.0);
    }

    #[test]
    fn memory_examples() {
        assert_eq!(memory_bytes(0, 0, 64, 64, 0), 98_304);
        assert_eq!(memory_bytes(1000, 0, 64, 64, 0) - 98_304, 168_000);
        let a = memory_bytes(500, 0, 64, 64, 0) - 98_304;
        let b = memory_bytes(1000, 0, 64, 64, 0) - 98_304;
        assert_eq!(2 * a, b);
        assert!(memory_bytes(1001, 0, 64, 64, 0) > memory_bytes(1000, 0, 64, 64, 0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { tau_g: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { iterations: 600, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { iterations: 0, ..Default::default() }.validate().is_ok());
        assert!(TrainConfig::default().without_densification().validate().is_ok());
    }

    #[test]
    fn mean_nn_of_grid() {
        let pts: Vec<Vector3<f64>> = (0..4).flat_map(|i| (0..4).map(move |j| Vector3::new(i as f64, j as f64, 0.0))).collect();
        assert!((mean_nearest_neighbor(&pts) - 1.0).abs() < 1e-12);
    }
}

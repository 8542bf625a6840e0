//! Cost measurements: memory model, wall time, render throughput, quality,
//! and correlation between Gaussian count and cost.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::gaussian::CameraPose;
use crate::raster::{render, Image};
use crate::scene::Dataset;
use crate::train::{initialize, memory_model, TrainConfig, TrainRecord, Trainer};

/// PSNR reported for identical images.
pub const PSNR_CEILING_DB: f64 = 99.0;
pub const DEFAULT_FPS_REPEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMetrics {
    pub peak_mem_bytes: u64,
    pub total_minutes: f64,
    pub final_gaussians: usize,
    pub render_fps: f64,
    pub final_psnr_db: f64,
    pub final_loss: f64,
}

impl CostMetrics {
    /// One header line and one data row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.serialize(self)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        match rdr.deserialize().next() {
            Some(row) => Ok(row?),
            None => Err(Error::EmptyRecord),
        }
    }
}

/// Peak signal-to-noise ratio with MAX = 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CEILING_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CEILING_DB))
}

/// Mean PSNR of the model's renders against the dataset images.
pub fn mean_psnr(model: &GaussianCloud, dataset: &Dataset, background: [f64; 3]) -> Result<f64> {
    let mut total = 0.0;
    for v in &dataset.views {
        total += psnr(&render(model.gaussians(), &v.pose, background), &v.image)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Median over `repeats` of poses rendered per second.
pub fn fps_benchmark(model: &GaussianCloud, poses: &[CameraPose], repeats: usize, background: [f64; 3]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("no poses to render".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut rates: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            for p in poses {
                std::hint::black_box(render(model.gaussians(), p, background));
            }
            poses.len() as f64 / start.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    Ok(median(&rates))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn summarize(record: &TrainRecord, model: &GaussianCloud, dataset: &Dataset, config: &TrainConfig) -> Result<CostMetrics> {
    let last = record.rows.last().ok_or(Error::EmptyRecord)?;
    Ok(CostMetrics {
        peak_mem_bytes: record.peak_mem_bytes(),
        total_minutes: record.total_minutes(),
        final_gaussians: model.len(),
        render_fps: fps_benchmark(model, &dataset.poses(), DEFAULT_FPS_REPEATS, config.background)?,
        final_psnr_db: mean_psnr(model, dataset, config.background)?,
        final_loss: last.loss,
    })
}

fn check_series(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::UndefinedCorrelation("need at least 3 points".into()));
    }
    Ok(())
}

fn pearson_unchecked(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    pearson_unchecked(xs, ys)
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    pearson_unchecked(&ranks(xs), &ranks(ys))
}

/// `(pearson_r, spearman_rho)`.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    Ok((pearson(xs, ys)?, spearman(xs, ys)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub count: usize,
    pub mem_bytes: u64,
    pub ms_per_iter: f64,
    pub fps: f64,
}

pub const SWEEP_ITERATIONS: usize = 50;

/// For each Gaussian count, times training iterations without densification
/// and records the memory model and render throughput.
pub fn sweep_gaussians_vs_cost(scene: &Dataset, counts: &[usize], base: &TrainConfig) -> Result<Vec<SweepRow>> {
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("counts must be ascending".into()));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let config = TrainConfig { init_count: count, iterations: SWEEP_ITERATIONS, max_gaussians: None, ..base.clone() }
            .without_densification();
        config.validate()?;
        let cloud = initialize(scene, &config);
        let mut trainer = Trainer::from_cloud(cloud, config.clone(), scene.scene_extent, "sweep");
        let mut rng = crate::rng::stream(config.seed, "sweep/views");
        let mut mem = 0;
        let start = Instant::now();
        for _ in 0..SWEEP_ITERATIONS {
            let view = &scene.views[rng.random_range(0..scene.len())];
            trainer.step(&view.pose, &view.image)?;
            mem = mem.max(memory_model(&trainer.cloud, &config, view.pose.width, view.pose.height));
        }
        let ms_per_iter = start.elapsed().as_secs_f64() * 1e3 / SWEEP_ITERATIONS as f64;
        let fps = fps_benchmark(&trainer.cloud, &scene.poses(), DEFAULT_FPS_REPEATS, config.background)?;
        rows.push(SweepRow { count, mem_bytes: mem, ms_per_iter, fps });
    }
    Ok(rows)
}

/// CSV with header `count,mem_bytes,ms_per_iter,fps`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::gaussian::{Gaussian, PARAMS_PER_GAUSSIAN};

/// Adam first/second moments for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdamMoments {
    pub m: [f64; PARAMS_PER_GAUSSIAN],
    pub v: [f64; PARAMS_PER_GAUSSIAN],
}

/// Running sum of view-space positional gradient norms and the number of
/// views the Gaussian participated in since the last densification.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensifyStat {
    pub grad_sum: f64,
    pub views: u32,
}

impl DensifyStat {
    pub fn mean(&self) -> f64 {
        if self.views == 0 {
            0.0
        } else {
            self.grad_sum / f64::from(self.views)
        }
    }
}

/// The learnable Gaussian set plus per-Gaussian optimizer and densification
/// state. The three vectors always have the same length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian>,
    moments: Vec<AdamMoments>,
    stats: Vec<DensifyStat>,
    /// Adam step counter shared by all parameters.
    pub adam_step: u64,
    /// Tile-list entries produced by the most recent training render.
    pub last_bin_entries: usize,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        let n = gaussians.len();
        GaussianCloud {
            gaussians,
            moments: vec![AdamMoments::default(); n],
            stats: vec![DensifyStat::default(); n],
            adam_step: 0,
            last_bin_entries: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn moments(&self) -> &[AdamMoments] {
        &self.moments
    }

    pub fn stats(&self) -> &[DensifyStat] {
        &self.stats
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Gaussian], &mut [AdamMoments]) {
        (&mut self.gaussians, &mut self.moments)
    }

    /// Adds one view's gradient norm to Gaussian `i`'s densification statistic.
    pub fn record_view_gradient(&mut self, i: usize, norm: f64) {
        let s = &mut self.stats[i];
        s.grad_sum += norm;
        s.views += 1;
    }

    pub fn reset_stats(&mut self) {
        self.stats.fill(DensifyStat::default());
    }

    /// Appends a Gaussian with zeroed optimizer moments and statistics.
    pub fn push(&mut self, g: Gaussian) {
        self.gaussians.push(g);
        self.moments.push(AdamMoments::default());
        self.stats.push(DensifyStat::default());
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let mut i = 0;
        self.gaussians.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        self.moments.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        self.stats.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { gaussians: self.gaussians.clone(), adam_step: self.adam_step }
    }
}

/// Serializable snapshot of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub gaussians: Vec<Gaussian>,
    pub adam_step: u64,
}

impl From<Checkpoint> for GaussianCloud {
    fn from(c: Checkpoint) -> Self {
        let mut cloud = GaussianCloud::new(c.gaussians);
        cloud.adam_step = c.adam_step;
        cloud
    }
}

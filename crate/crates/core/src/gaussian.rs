//! Gaussian parameters, activations, 3D covariance and camera projection.
//!
//! Camera space follows the usual computer-vision convention: the camera looks
//! down `+z`, `x` points right and `y` points down. Pixel `(x, y)` is sampled at
//! the integer coordinate `(x, y)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splats closer to the camera than this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass term added to the diagonal of every screen-space covariance (px²).
pub const COV2D_REGULARIZATION: f64 = 0.3;
/// Number of scalar parameters per Gaussian at SH degree 0.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: Vector3<f64>,
    /// Per-axis log standard deviation.
    pub log_scale: Vector3<f64>,
    /// Opacity before the sigmoid.
    pub alpha_raw: f64,
    /// Unnormalized rotation quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    /// Degree-0 color coefficients; clamped to `[0, 1]` on use.
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn isotropic(mu: Vector3<f64>, log_scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian {
            mu,
            log_scale: Vector3::repeat(log_scale),
            alpha_raw: logit(opacity),
            rotation: [1.0, 0.0, 0.0, 0.0],
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.alpha_raw)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn activated_color(&self) -> [f64; 3] {
        self.color.map(|c| c.clamp(0.0, 1.0))
    }

    /// Flattened parameters in `mu, log_scale, alpha_raw, rotation, color` order.
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.mu.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6] = self.alpha_raw;
        p[7..11].copy_from_slice(&self.rotation);
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Gaussian {
            mu: Vector3::new(p[0], p[1], p[2]),
            log_scale: Vector3::new(p[3], p[4], p[5]),
            alpha_raw: p[6],
            rotation: [p[7], p[8], p[9], p[10]],
            color: [p[11], p[12], p[13]],
        }
    }
}

/// Activated view of a Gaussian: `(opacity, scales, color)`.
pub fn activate(g: &Gaussian) -> (f64, Vector3<f64>, [f64; 3]) {
    (g.opacity(), g.scales(), g.activated_color())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub alpha_raw: f64,
    pub rotation: [f64; 4],
    pub color: [f64; 3],
}

impl GaussianGrad {
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.mu.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6] = self.alpha_raw;
        p[7..11].copy_from_slice(&self.rotation);
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.to_params().iter().all(|&v| v == 0.0)
    }
}

/// Pinhole camera. `world_to_camera` is a rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Camera at `eye` looking at `target`; `up` is the approximate world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        // image y points down
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        CameraPose {
            world_to_camera: w2c,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Viewing direction (+z of the camera) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation().row(2).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        let dev = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(dev < 1e-5) {
            return Err(Error::InvalidParameter(format!(
                "camera rotation is not orthonormal (deviation {dev:e})"
            )));
        }
        let last = self.world_to_camera.row(3);
        if (last - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max() > 1e-9 {
            return Err(Error::InvalidParameter(
                "world_to_camera last row must be (0, 0, 0, 1)".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be at least 1x1".into()));
        }
        Ok(())
    }
}

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mu2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_rotation(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter("zero-norm quaternion".into()));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok(rotation_from_unit(w, x, y, z))
}

fn rotation_from_unit(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R · diag(exp(s))² · Rᵀ`.
pub fn build_covariance(log_scale: &Vector3<f64>, q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(q)?;
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    Ok(m * m.transpose())
}

struct Projected {
    splat: Splat2D,
    t: Vector3<f64>,
    jac: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
    rot: Matrix3<f64>,
}

fn project_inner(g: &Gaussian, index: usize, pose: &CameraPose) -> Option<Projected> {
    let w = pose.rotation();
    let t = w * g.mu + pose.translation();
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let rot = quat_to_rotation(&g.rotation).ok()?;
    let m = rot * Matrix3::from_diagonal(&g.scales());
    let sigma = m * m.transpose();
    let cov_cam = w * sigma * w.transpose();
    let z = t.z;
    let jac = Matrix2x3::new(
        pose.fx / z,
        0.0,
        -pose.fx * t.x / (z * z),
        0.0,
        pose.fy / z,
        -pose.fy * t.y / (z * z),
    );
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += COV2D_REGULARIZATION;
    cov2d[(1, 1)] += COV2D_REGULARIZATION;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mu2d = Vector2::new(pose.fx * t.x / z + pose.cx, pose.fy * t.y / z + pose.cy);
    Some(Projected {
        splat: Splat2D {
            mu2d,
            cov2d,
            conic,
            depth: z,
            color: g.activated_color(),
            opacity: g.opacity(),
            source_index: index,
        },
        t,
        jac,
        cov_cam,
        rot,
    })
}

/// Projects `g` into `pose`. Returns `None` when the mean is at or behind the near plane.
pub fn project_gaussian(g: &Gaussian, pose: &CameraPose) -> Option<Splat2D> {
    project_indexed(g, 0, pose)
}

pub(crate) fn project_indexed(g: &Gaussian, index: usize, pose: &CameraPose) -> Option<Splat2D> {
    project_inner(g, index, pose).map(|p| p.splat)
}

/// Upstream gradient arriving at one splat.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SplatGrad {
    pub mu2d: Vector2<f64>,
    /// Full symmetric gradient with respect to `cov2d`.
    pub cov2d: Matrix2<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Chain rule from screen-space splat gradients back to Gaussian parameters.
pub(crate) fn project_backward(g: &Gaussian, pose: &CameraPose, up: &SplatGrad) -> GaussianGrad {
    let Some(p) = project_inner(g, 0, pose) else {
        return GaussianGrad::default();
    };
    let w = pose.rotation();
    let (fx, fy) = (pose.fx, pose.fy);
    let t = p.t;
    let z = t.z;

    // cov2d = J Σc Jᵀ, Σc = W Σ Wᵀ, Σ = M Mᵀ, M = R S
    let g2 = up.cov2d;
    let d_cov_cam = p.jac.transpose() * g2 * p.jac;
    let d_jac = 2.0 * g2 * p.jac * p.cov_cam;
    let d_sigma = w.transpose() * d_cov_cam * w;
    let scales = g.scales();
    let m = p.rot * Matrix3::from_diagonal(&scales);
    let d_m = 2.0 * d_sigma * m;
    let rt_dm = p.rot.transpose() * d_m;
    let d_log_scale = Vector3::new(
        rt_dm[(0, 0)] * scales.x,
        rt_dm[(1, 1)] * scales.y,
        rt_dm[(2, 2)] * scales.z,
    );
    let d_rot = d_m * Matrix3::from_diagonal(&scales);
    let d_rotation = quat_backward(&g.rotation, &d_rot);

    // mean: u = fx tx/z + cx, v = fy ty/z + cy, plus J's dependence on t
    let mut d_t = Vector3::zeros();
    d_t.x += up.mu2d.x * fx / z;
    d_t.z -= up.mu2d.x * fx * t.x / (z * z);
    d_t.y += up.mu2d.y * fy / z;
    d_t.z -= up.mu2d.y * fy * t.y / (z * z);
    let z2 = z * z;
    let z3 = z2 * z;
    d_t.z += d_jac[(0, 0)] * (-fx / z2);
    d_t.x += d_jac[(0, 2)] * (-fx / z2);
    d_t.z += d_jac[(0, 2)] * (2.0 * fx * t.x / z3);
    d_t.z += d_jac[(1, 1)] * (-fy / z2);
    d_t.y += d_jac[(1, 2)] * (-fy / z2);
    d_t.z += d_jac[(1, 2)] * (2.0 * fy * t.y / z3);
    let d_mu = w.transpose() * d_t;

    let o = p.splat.opacity;
    let mut d_color = [0.0; 3];
    for (c, (dc, raw)) in d_color.iter_mut().zip(up.color.iter().zip(g.color.iter())) {
        if *raw > 0.0 && *raw < 1.0 {
            *c = *dc;
        }
    }
    GaussianGrad {
        mu: d_mu,
        log_scale: d_log_scale,
        alpha_raw: up.opacity * o * (1.0 - o),
        rotation: d_rotation,
        color: d_color,
    }
}

/// Gradient of `R(q / |q|)` with respect to the raw quaternion.
fn quat_backward(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dn = [dw, dx, dy, dz];
    let unit = [w, x, y, z];
    let dot: f64 = dn.iter().zip(unit.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (dn[i] - unit[i] * dot) / n;
    }
    out
}

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::scene::{Camera, SplatGaussian, IDENTITY_DIM};

/// Splats closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of the screen covariance (pixel^2).
pub const COV2D_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Extra half-width (pixels) added to every footprint to absorb rounding.
const FOOTPRINT_MARGIN: f64 = 1e-3;

/// A Gaussian after projection into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 screen covariance as `[xx, xy, yy]`, dilation included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f32; 3],
    pub opacity: f64,
    pub identity: [f32; IDENTITY_DIM],
    pub source_index: usize,
    /// Half-widths of the box outside which alpha is always below
    /// [`ALPHA_MIN`].
    pub extent: [f64; 2],
}

impl ProjectedSplat {
    /// Unclamped-to-threshold alpha at pixel center `(x, y)`, after the
    /// [`ALPHA_MAX`] clamp.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        (self.opacity * power.exp()).min(ALPHA_MAX)
    }

    /// Inclusive pixel range `(x0, y0, x1, y1)` covered by the footprint,
    /// clipped to the image; `None` when it misses the image entirely.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = (self.mean2d[0] - self.extent[0]).ceil().max(0.0);
        let y0 = (self.mean2d[1] - self.extent[1]).ceil().max(0.0);
        let x1 = (self.mean2d[0] + self.extent[0]).floor().min(f64::from(width) - 1.0);
        let y1 = (self.mean2d[1] + self.extent[1]).floor().min(f64::from(height) - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }
}

/// World-space covariance `R diag(scale^2) R^T`.
pub fn covariance_3d(g: &SplatGaussian) -> Matrix3<f64> {
    let [w, x, y, z] = g.rotation.map(f64::from);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix();
    let s = Vector3::from(g.scale.map(f64::from));
    let scale_sq = Matrix3::from_diagonal(&s.component_mul(&s));
    rot.matrix() * scale_sq * rot.matrix().transpose()
}

/// EWA projection of one Gaussian: `cov2d = J W Sigma W^T J^T + 0.3 I`,
/// with `J` the perspective Jacobian at the camera-space mean.
///
/// Returns `None` (culled) when the mean is not in front of the near plane,
/// when the opacity is too low to ever pass the alpha threshold, or when
/// the footprint misses the image.
pub fn project_gaussian(g: &SplatGaussian, source_index: usize, cam: &Camera) -> Option<ProjectedSplat> {
    let p = cam.to_camera(g.position.map(f64::from));
    let [x, y, z] = p;
    if z <= NEAR_PLANE {
        return None;
    }
    let opacity = f64::from(g.opacity);
    if opacity < ALPHA_MIN {
        return None;
    }

    let view = Matrix3::from_fn(|i, j| cam.rotation[i][j]);
    let cov_cam = view * covariance_3d(g) * view.transpose();
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let cov = jac * cov_cam * jac.transpose();
    let a = cov[(0, 0)] + COV2D_DILATION;
    let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let c = cov[(1, 1)] + COV2D_DILATION;
    let det = a * c - b * b;
    if det.is_nan() || det <= 0.0 {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    // alpha >= ALPHA_MIN requires Mahalanobis^2 <= 2 ln(opacity / ALPHA_MIN);
    // the axis-aligned box of that ellipse has half-widths r * sqrt(diag).
    let r2 = 2.0 * (opacity / ALPHA_MIN).ln();
    let extent = [(r2 * a).sqrt() + FOOTPRINT_MARGIN, (r2 * c).sqrt() + FOOTPRINT_MARGIN];

    let splat = ProjectedSplat {
        mean2d: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        cov2d: [a, b, c],
        conic,
        depth: z,
        color: g.color,
        opacity,
        identity: g.identity,
        source_index,
        extent,
    };
    splat.pixel_rect(cam.width, cam.height)?;
    Some(splat)
}

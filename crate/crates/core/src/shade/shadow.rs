//! Screen-space soft shadows: from each surface point, march along the
//! light direction in view space, project every sample back into the
//! image, and query the depth buffer for occluders.

use super::Camera;
use crate::error::{Error, Result};
use crate::math::{vec3, Vec3};
use crate::raster::ImagePlane;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub enabled: bool,
    /// March steps per ray.
    pub steps: usize,
    /// Total march distance in meters.
    pub max_dist: f64,
    /// Depth bias excluding self-occlusion, meters.
    pub bias: f64,
    /// Maximum depth gap still treated as an occluder, meters.
    pub thickness: f64,
    /// Occlusion counts are divided by this before clamping to [0,1].
    pub norm_count: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            enabled: true,
            steps: 32,
            max_dist: 0.5,
            bias: 0.01,
            thickness: 0.2,
            norm_count: 32,
        }
    }
}

impl ShadowConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.steps < 1 {
            problems.push("shadow steps must be >= 1".to_string());
        }
        if !(self.max_dist > 0.0) {
            problems.push("shadow max_dist must be > 0".to_string());
        }
        if self.norm_count < 1 {
            problems.push("shadow norm_count must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Back-projects a depth map into view-space positions:
/// p(x,y) = z(x,y) * ((x - cx)/fx, (y - cy)/fy, 1).
pub fn unproject(depth: &ImagePlane, cam: &Camera) -> Result<ImagePlane> {
    if depth.channels() != 1 {
        return Err(Error::InvalidParam("depth must be single-channel".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut out = ImagePlane::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let z = depth.get(x, y, 0);
            out.set(x, y, 0, z * (x as f64 - cam.cx) / cam.fx);
            out.set(x, y, 1, z * (y as f64 - cam.cy) / cam.fy);
            out.set(x, y, 2, z);
        }
    }
    Ok(out)
}

/// Projects a view-space point to continuous pixel coordinates. The caller
/// must ensure p.z > 0.
#[inline]
pub fn project(p: Vec3, cam: &Camera) -> (f64, f64) {
    (cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy)
}

/// Occlusion fraction for a single surface point along one view-space light
/// direction. Returns the shadow factor in [0,1] (1 = fully lit).
#[allow(clippy::too_many_arguments)]
pub(crate) fn shadow_at(
    position: Vec3,
    light_dir_view: Vec3,
    depth: &ImagePlane,
    alpha: &ImagePlane,
    cam: &Camera,
    cfg: &ShadowConfig,
) -> f64 {
    let (w, h) = (depth.width(), depth.height());
    let mut occluded = 0usize;
    for k in 1..=cfg.steps {
        let q = position + light_dir_view * (k as f64 / cfg.steps as f64 * cfg.max_dist);
        if q.z <= 1e-9 {
            continue; // behind the camera: counts unoccluded
        }
        let (sx, sy) = project(q, cam);
        let px = sx.round();
        let py = sy.round();
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            continue; // off-screen: counts unoccluded
        }
        let (px, py) = (px as usize, py as usize);
        if alpha.get(px, py, 0) <= 0.5 {
            continue; // background pixels hold no occluder
        }
        let z_b = depth.get(px, py, 0);
        if z_b < q.z - cfg.bias && q.z - z_b < cfg.thickness {
            occluded += 1;
        }
    }
    1.0 - (occluded as f64 / cfg.norm_count as f64).min(1.0)
}

/// Soft shadow map for one light direction (view space). Background pixels
/// (alpha <= 0.5) are returned fully lit.
pub fn shadow_raymarch(
    positions: &ImagePlane,
    depth: &ImagePlane,
    alpha: &ImagePlane,
    cam: &Camera,
    light_dir_view: Vec3,
    cfg: &ShadowConfig,
) -> Result<ImagePlane> {
    cfg.validate()?;
    if positions.channels() != 3 {
        return Err(Error::InvalidParam("positions must be 3-channel".into()));
    }
    if !positions.same_size(depth) || !positions.same_size(alpha) {
        return Err(Error::size_mismatch(
            "shadow_raymarch inputs",
            format!("{}x{}", positions.width(), positions.height()),
            format!(
                "depth {}x{}, alpha {}x{}",
                depth.width(),
                depth.height(),
                alpha.width(),
                alpha.height()
            ),
        ));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut out = ImagePlane::constant(w, h, 1, 1.0);
    for y in 0..h {
        for x in 0..w {
            if alpha.get(x, y, 0) <= 0.5 {
                continue;
            }
            let t = positions.texel(x, y);
            let value = shadow_at(vec3(t[0], t[1], t[2]), light_dir_view, depth, alpha, cam, cfg);
            out.set(x, y, 0, value);
        }
    }
    Ok(out)
}

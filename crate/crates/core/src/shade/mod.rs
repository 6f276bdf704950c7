//! Physically-based environment relighting of a G-buffer with screen-space
//! soft shadows, tonemapping, and alpha compositing.
//!
//! View convention: the camera sits at the origin looking down +z with y
//! pointing down (image convention). Environment directions live in world
//! space; the camera-to-world rotation bridges the two.

mod brdf;
mod envmap;
mod relight;
mod shadow;

pub use brdf::brdf_eval;
pub use envmap::{env_sample_set, EnvironmentMap, LightSample, LightSampleSet};
pub use relight::relight;
pub use shadow::{project, shadow_raymarch, unproject, ShadowConfig};

use crate::error::{Error, Result};
use crate::math::Mat3;
use crate::raster::ImagePlane;
use serde::{Deserialize, Serialize};

/// Pinhole camera: intrinsics in pixels plus the camera-to-world rotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let err = self.rotation.orthonormality_error();
        if err < 1e-4 {
            Ok(())
        } else {
            Err(Error::Validation(vec![format!(
                "camera rotation not orthonormal (error {err:.3e})"
            )]))
        }
    }
}

/// Per-frame shading inputs: albedo, depth, normals, roughness, metallic,
/// alpha.
#[derive(Debug, Clone)]
pub struct GBuffer {
    /// Linear RGB in [0,1].
    pub albedo: ImagePlane,
    /// View-space z in meters, positive where alpha > 0.
    pub depth: ImagePlane,
    /// Unit camera-space normals.
    pub normal: ImagePlane,
    /// Roughness in [0,1].
    pub roughness: ImagePlane,
    /// Metallic in [0,1].
    pub metallic: ImagePlane,
    /// Coverage in [0,1].
    pub alpha: ImagePlane,
}

impl GBuffer {
    pub fn width(&self) -> usize {
        self.albedo.width()
    }

    pub fn height(&self) -> usize {
        self.albedo.height()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (w, h) = (self.width(), self.height());
        let check_shape = |name: &str, img: &ImagePlane, c: usize, problems: &mut Vec<String>| {
            if img.width() != w || img.height() != h || img.channels() != c {
                problems.push(format!(
                    "{name} must be {w}x{h}x{c}, got {}x{}x{}",
                    img.width(),
                    img.height(),
                    img.channels()
                ));
            }
        };
        check_shape("albedo", &self.albedo, 3, &mut problems);
        check_shape("depth", &self.depth, 1, &mut problems);
        check_shape("normal", &self.normal, 3, &mut problems);
        check_shape("roughness", &self.roughness, 1, &mut problems);
        check_shape("metallic", &self.metallic, 1, &mut problems);
        check_shape("alpha", &self.alpha, 1, &mut problems);
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        let in_unit = |img: &ImagePlane| img.data().iter().all(|&v| (0.0..=1.0).contains(&v));
        if !in_unit(&self.albedo) {
            problems.push("albedo values outside [0,1]".to_string());
        }
        if !in_unit(&self.roughness) {
            problems.push("roughness values outside [0,1]".to_string());
        }
        if !in_unit(&self.metallic) {
            problems.push("metallic values outside [0,1]".to_string());
        }
        if !in_unit(&self.alpha) {
            problems.push("alpha values outside [0,1]".to_string());
        }
        let mut bad_normals = 0usize;
        let mut bad_depth = 0usize;
        for y in 0..h {
            for x in 0..w {
                if self.alpha.get(x, y, 0) > 0.5 {
                    let t = self.normal.texel(x, y);
                    let len = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                    if (len - 1.0).abs() > 1e-3 {
                        bad_normals += 1;
                    }
                    if !(self.depth.get(x, y, 0) > 0.0) {
                        bad_depth += 1;
                    }
                }
            }
        }
        if bad_normals > 0 {
            problems.push(format!(
                "{bad_normals} foreground normals deviate from unit length by more than 1e-3"
            ));
        }
        if bad_depth > 0 {
            problems.push(format!("{bad_depth} foreground pixels have non-positive depth"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Exposure-scaled gamma tonemap: clamp(exposure * hdr, 0, 1)^(1/gamma).
pub fn tonemap_gamma(hdr: &ImagePlane, exposure: f64, gamma: f64) -> Result<ImagePlane> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParam("gamma must be > 0".into()));
    }
    Ok(hdr.map(|v| (exposure * v).clamp(0.0, 1.0).powf(1.0 / gamma)))
}

/// Alpha-composite a gamma-space foreground over a background:
/// out = alpha * fg + (1 - alpha) * bg, the single-channel alpha broadcast
/// over color channels.
pub fn composite(fg: &ImagePlane, alpha: &ImagePlane, bg: &ImagePlane) -> Result<ImagePlane> {
    if !fg.same_shape(bg) || alpha.width() != fg.width() || alpha.height() != fg.height() {
        return Err(Error::size_mismatch(
            "composite inputs",
            format!("{}x{}x{}", fg.width(), fg.height(), fg.channels()),
            format!(
                "bg {}x{}x{}, alpha {}x{}",
                bg.width(),
                bg.height(),
                bg.channels(),
                alpha.width(),
                alpha.height()
            ),
        ));
    }
    if alpha.channels() != 1 {
        return Err(Error::InvalidParam("alpha must be single-channel".into()));
    }
    let mut out = ImagePlane::new(fg.width(), fg.height(), fg.channels());
    let c = fg.channels();
    for y in 0..fg.height() {
        for x in 0..fg.width() {
            let a = alpha.get(x, y, 0);
            let tf = fg.texel(x, y);
            let tb = bg.texel(x, y);
            for ch in 0..c {
                out.set(x, y, ch, a * tf[ch] + (1.0 - a) * tb[ch]);
            }
        }
    }
    Ok(out)
}

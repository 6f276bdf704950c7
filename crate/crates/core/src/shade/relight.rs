//! Deferred relighting: accumulate the shadow-modulated BRDF contribution
//! of every environment sample at every foreground pixel.

use super::brdf::brdf_eval;
use super::envmap::LightSampleSet;
use super::shadow::{shadow_at, unproject, ShadowConfig};
use super::{Camera, GBuffer};
use crate::error::Result;
use crate::math::{vec3, Vec3};
use crate::raster::ImagePlane;
use rayon::prelude::*;

/// Relights a G-buffer under a discrete environment sample set:
///
/// ```text
/// L_o(p) = sum_j f(n, v, l_j) (n.l_j)+ shadow_j(p) L_j dw_j
/// ```
///
/// with l_j rotated into view space and v pointing from the surface to the
/// camera. Background pixels (alpha <= 0.5) output zero. Accumulation runs
/// per pixel in fixed light order, so results do not depend on the thread
/// count.
pub fn relight(
    g: &GBuffer,
    cam: &Camera,
    lights: &LightSampleSet,
    shadow_cfg: &ShadowConfig,
) -> Result<ImagePlane> {
    g.validate()?;
    cam.validate()?;
    lights.validate()?;
    shadow_cfg.validate()?;

    let (w, h) = (g.width(), g.height());
    let positions = unproject(&g.depth, cam)?;
    // pre-rotate light directions into view space once
    let view_lights: Vec<(Vec3, [f64; 3], f64)> = lights
        .samples
        .iter()
        .map(|s| {
            (
                cam.rotation.transpose_mul_vec(s.direction),
                s.radiance,
                s.solid_angle,
            )
        })
        .collect();

    let mut out = ImagePlane::new(w, h, 3);
    out.data_mut()
        .par_chunks_mut(3)
        .enumerate()
        .for_each(|(pixel, texel)| {
            let (x, y) = (pixel % w, pixel / w);
            if g.alpha.get(x, y, 0) <= 0.5 {
                return;
            }
            let pt = positions.texel(x, y);
            let position = vec3(pt[0], pt[1], pt[2]);
            let nt = g.normal.texel(x, y);
            let normal = vec3(nt[0], nt[1], nt[2]);
            let view = (-position).normalized();
            let at = g.albedo.texel(x, y);
            let albedo = [at[0], at[1], at[2]];
            let roughness = g.roughness.get(x, y, 0);
            let metallic = g.metallic.get(x, y, 0);

            let mut acc = [0.0f64; 3];
            for &(l_view, radiance, solid_angle) in &view_lights {
                let n_dot_l = normal.dot(l_view);
                if n_dot_l <= 0.0 {
                    continue;
                }
                if radiance[0] <= 0.0 && radiance[1] <= 0.0 && radiance[2] <= 0.0 {
                    continue;
                }
                let shadow = if shadow_cfg.enabled {
                    shadow_at(position, l_view, &g.depth, &g.alpha, cam, shadow_cfg)
                } else {
                    1.0
                };
                if shadow <= 0.0 {
                    continue;
                }
                let f = brdf_eval(normal, view, l_view, albedo, roughness, metallic);
                let scale = n_dot_l * shadow * solid_angle;
                for c in 0..3 {
                    acc[c] += f[c] * radiance[c] * scale;
                }
            }
            texel.copy_from_slice(&acc);
        });
    Ok(out)
}

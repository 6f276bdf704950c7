//! Analytic test scenes: sphere/plane rasterization into G-buffers, a
//! brute-force Monte Carlo reference renderer with true 3D occlusion, and
//! flicker-sequence fixtures with exact flows.
//!
//! The Monte Carlo path shares the BRDF and environment lookup with the
//! deferred shader but integrates with stochastic directions and analytic
//! ray-primitive visibility, so agreement between the two validates the
//! environment quadrature and the screen-space shadows independently.

use crate::error::{Error, Result};
use crate::mapio::{write_flo, write_pfm, write_png, CameraSpec, FrameRecord, PngBitDepth, SequenceManifest};
use crate::math::{vec3, Mat3, Vec3};
use crate::raster::{FlowField, ImagePlane};
use crate::shade::{brdf_eval, Camera, EnvironmentMap, GBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Plane { point: [f64; 3], normal: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(flatten)]
    pub shape: Primitive,
    pub albedo: [f64; 3],
    pub roughness: f64,
    pub metallic: f64,
}

/// Environment description; every variant materializes into an
/// equirectangular radiance map so all consumers sample the same texels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Constant {
        radiance: [f64; 3],
        width: usize,
        height: usize,
    },
    /// Ambient floor plus one smooth directional lobe:
    /// L(d) = ambient + strength * max(0, d . direction)^exponent.
    Lobe {
        ambient: f64,
        strength: f64,
        direction: [f64; 3],
        exponent: f64,
        width: usize,
        height: usize,
    },
    File {
        path: PathBuf,
    },
}

/// Analytic scene: objects in view space (camera at origin, +z forward,
/// y down), plus fixture parameters for sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation, row-major.
    pub rotation: [f64; 9],
    pub objects: Vec<SceneObject>,
    pub environment: EnvSpec,
    /// Rigid image-space translation in pixels per frame.
    pub translation: [f64; 2],
    /// Frame count for sequence fixtures.
    pub frames: usize,
    /// Per-sample material noise sigma.
    pub noise: f64,
    /// Stochastic samples per frame per material map (K).
    pub samples: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 {
            problems.push("image size must be positive".to_string());
        }
        if self.frames < 1 {
            problems.push("frames must be >= 1".to_string());
        }
        if self.samples < 1 {
            problems.push("samples must be >= 1".to_string());
        }
        if self.noise < 0.0 {
            problems.push("noise must be >= 0".to_string());
        }
        for (i, o) in self.objects.iter().enumerate() {
            match &o.shape {
                Primitive::Sphere { radius, .. } => {
                    if !(*radius > 0.0) {
                        problems.push(format!("object {i}: sphere radius must be > 0"));
                    }
                }
                Primitive::Plane { normal, .. } => {
                    let n = vec3(normal[0], normal[1], normal[2]);
                    if (n.norm() - 1.0).abs() > 1e-6 {
                        problems.push(format!("object {i}: plane normal must be unit length"));
                    }
                }
            }
            if !(0.0..=1.0).contains(&o.roughness) || !(0.0..=1.0).contains(&o.metallic) {
                problems.push(format!("object {i}: roughness/metallic outside [0,1]"));
            }
        }
        if Mat3(self.rotation).orthonormality_error() > 1e-4 {
            problems.push("rotation not orthonormal".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Camera for frame t: the rigid translation shifts the principal
    /// point, so scene content moves by exactly t * translation pixels.
    pub fn camera_for_frame(&self, t: usize) -> Camera {
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx + t as f64 * self.translation[0],
            cy: self.cy + t as f64 * self.translation[1],
            rotation: Mat3(self.rotation),
        }
    }

    pub fn load_environment(&self) -> Result<EnvironmentMap> {
        let plane = match &self.environment {
            EnvSpec::Constant { radiance, width, height } => {
                let mut img = ImagePlane::new(*width, *height, 3);
                for y in 0..*height {
                    for x in 0..*width {
                        for c in 0..3 {
                            img.set(x, y, c, radiance[c]);
                        }
                    }
                }
                img
            }
            EnvSpec::Lobe { ambient, strength, direction, exponent, width, height } => {
                let dir = vec3(direction[0], direction[1], direction[2]).normalized();
                let mut img = ImagePlane::new(*width, *height, 3);
                for y in 0..*height {
                    let theta = (y as f64 + 0.5) * std::f64::consts::PI / *height as f64;
                    for x in 0..*width {
                        let phi =
                            (x as f64 + 0.5) * 2.0 * std::f64::consts::PI / *width as f64;
                        let d = EnvironmentMap::direction_for(theta, phi);
                        let v = ambient + strength * d.dot(dir).max(0.0).powf(*exponent);
                        for c in 0..3 {
                            img.set(x, y, c, v);
                        }
                    }
                }
                img
            }
            EnvSpec::File { path } => crate::mapio::read_env_map(path)?,
        };
        EnvironmentMap::new(plane)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub position: Vec3,
    pub normal: Vec3,
    pub object: usize,
}

fn intersect_primitive(shape: &Primitive, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
    match shape {
        Primitive::Sphere { center, radius } => {
            let c = vec3(center[0], center[1], center[2]);
            let oc = origin - c;
            let b = oc.dot(dir);
            let disc = b * b - (oc.dot(oc) - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > 1e-9 {
                -b - sq
            } else if -b + sq > 1e-9 {
                -b + sq
            } else {
                return None;
            };
            let p = origin + dir * t;
            Some((t, (p - c) / *radius))
        }
        Primitive::Plane { point, normal } => {
            let n = vec3(normal[0], normal[1], normal[2]);
            let denom = dir.dot(n);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (vec3(point[0], point[1], point[2]) - origin).dot(n) / denom;
            if t > 1e-9 {
                Some((t, n))
            } else {
                None
            }
        }
    }
}

/// Nearest hit along a ray, normal flipped toward the ray origin.
pub fn intersect_scene(spec: &SceneSpec, origin: Vec3, dir: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, obj) in spec.objects.iter().enumerate() {
        if let Some((t, normal)) = intersect_primitive(&obj.shape, origin, dir) {
            if best.map_or(true, |b| t < b.t) {
                let normal = if normal.dot(dir) > 0.0 { -normal } else { normal };
                best = Some(Hit { t, position: origin + dir * t, normal, object: i });
            }
        }
    }
    best
}

/// Occlusion test for a shadow ray; ignores hits closer than the epsilon.
pub fn occluded(spec: &SceneSpec, origin: Vec3, dir: Vec3) -> bool {
    spec.objects
        .iter()
        .any(|o| intersect_primitive(&o.shape, origin + dir * 1e-6, dir).is_some())
}

/// Rasterizes the scene into a G-buffer by per-pixel analytic ray casting.
/// Rays pass through integer pixel coordinates, matching `unproject`.
pub fn rasterize_gbuffer(spec: &SceneSpec, frame: usize) -> Result<(GBuffer, Camera)> {
    spec.validate()?;
    let cam = spec.camera_for_frame(frame);
    let (w, h) = (spec.width, spec.height);
    let mut albedo = ImagePlane::new(w, h, 3);
    let mut depth = ImagePlane::new(w, h, 1);
    let mut normal = ImagePlane::new(w, h, 3);
    let mut roughness = ImagePlane::new(w, h, 1);
    let mut metallic = ImagePlane::new(w, h, 1);
    let mut alpha = ImagePlane::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let dir = vec3(
                (x as f64 - cam.cx) / cam.fx,
                (y as f64 - cam.cy) / cam.fy,
                1.0,
            )
            .normalized();
            if let Some(hit) = intersect_scene(spec, Vec3::ZERO, dir) {
                let obj = &spec.objects[hit.object];
                for c in 0..3 {
                    albedo.set(x, y, c, obj.albedo[c]);
                }
                depth.set(x, y, 0, hit.position.z);
                normal.set(x, y, 0, hit.normal.x);
                normal.set(x, y, 1, hit.normal.y);
                normal.set(x, y, 2, hit.normal.z);
                roughness.set(x, y, 0, obj.roughness);
                metallic.set(x, y, 0, obj.metallic);
                alpha.set(x, y, 0, 1.0);
            }
        }
    }
    Ok((GBuffer { albedo, depth, normal, roughness, metallic, alpha }, cam))
}

/// Per-pixel RNG stream: mixes the seed, frame and pixel index so results
/// do not depend on the parallel schedule.
fn pixel_rng(seed: u64, frame: usize, pixel: usize) -> ChaCha8Rng {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add((frame as u64).wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add((pixel as u64).wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        vec3(1.0, 0.0, 0.0)
    } else {
        vec3(0.0, 1.0, 0.0)
    };
    let tangent = n.cross(helper).normalized();
    let bitangent = n.cross(tangent);
    (tangent, bitangent)
}

/// Brute-force Monte Carlo reference of the same direct-lighting integrand
/// as the deferred shader, with analytic 3D occlusion. A 50/50 mixture of
/// cosine-hemisphere and uniform-sphere sampling keeps the estimator
/// unbiased for any BRDF.
pub fn mc_reference(
    spec: &SceneSpec,
    frame: usize,
    samples_per_pixel: usize,
    seed: u64,
) -> Result<ImagePlane> {
    spec.validate()?;
    if samples_per_pixel < 1 {
        return Err(Error::InvalidParam("spp must be >= 1".into()));
    }
    let cam = spec.camera_for_frame(frame);
    let env = spec.load_environment()?;
    let rotation = cam.rotation;
    let (w, h) = (spec.width, spec.height);
    let mut out = ImagePlane::new(w, h, 3);
    out.data_mut()
        .par_chunks_mut(3)
        .enumerate()
        .for_each(|(pixel, texel)| {
            let (x, y) = (pixel % w, pixel / w);
            let dir = vec3(
                (x as f64 - cam.cx) / cam.fx,
                (y as f64 - cam.cy) / cam.fy,
                1.0,
            )
            .normalized();
            let Some(hit) = intersect_scene(spec, Vec3::ZERO, dir) else {
                return;
            };
            let obj = &spec.objects[hit.object];
            let n = hit.normal;
            let v = (-hit.position).normalized();
            let (tangent, bitangent) = orthonormal_basis(n);
            let mut rng = pixel_rng(seed, frame, pixel);
            let mut acc = [0.0f64; 3];
            for _ in 0..samples_per_pixel {
                let u1: f64 = rng.gen();
                let u2: f64 = rng.gen();
                let pick: f64 = rng.gen();
                let l = if pick < 0.5 {
                    // cosine hemisphere around n
                    let r = u1.sqrt();
                    let phi = 2.0 * std::f64::consts::PI * u2;
                    let local = vec3(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt());
                    (tangent * local.x + bitangent * local.y + n * local.z).normalized()
                } else {
                    // uniform sphere
                    let z = 1.0 - 2.0 * u1;
                    let rad = (1.0 - z * z).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * u2;
                    vec3(rad * phi.cos(), rad * phi.sin(), z)
                };
                let n_dot_l = n.dot(l);
                if n_dot_l <= 0.0 {
                    continue;
                }
                let pdf = 0.5 * n_dot_l / std::f64::consts::PI
                    + 0.5 / (4.0 * std::f64::consts::PI);
                if occluded(spec, hit.position, l) {
                    continue;
                }
                let radiance = env.sample(rotation.mul_vec(l));
                let f = brdf_eval(n, v, l, obj.albedo, obj.roughness, obj.metallic);
                for c in 0..3 {
                    acc[c] += f[c] * radiance[c] * n_dot_l / pdf;
                }
            }
            for c in 0..3 {
                texel[c] = acc[c] / samples_per_pixel as f64;
            }
        });
    Ok(out)
}

/// Analytic shadow oracle: binary visibility of one view-space light
/// direction from every foreground surface point, by exact ray-primitive
/// occlusion. Background pixels are fully visible.
pub fn analytic_visibility(spec: &SceneSpec, frame: usize, light_dir_view: Vec3) -> Result<ImagePlane> {
    spec.validate()?;
    let cam = spec.camera_for_frame(frame);
    let (w, h) = (spec.width, spec.height);
    let mut out = ImagePlane::constant(w, h, 1, 1.0);
    for y in 0..h {
        for x in 0..w {
            let dir = vec3(
                (x as f64 - cam.cx) / cam.fx,
                (y as f64 - cam.cy) / cam.fy,
                1.0,
            )
            .normalized();
            if let Some(hit) = intersect_scene(spec, Vec3::ZERO, dir) {
                if occluded(spec, hit.position, light_dir_view) {
                    out.set(x, y, 0, 0.0);
                }
            }
        }
    }
    Ok(out)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Writes a complete sequence fixture under `out_dir`: per-frame G-buffers,
/// ground-truth material maps, K noisy samples per material map, exact
/// forward/backward flows from the rigid translation, a simple background
/// plate, and a validated manifest. Returns the manifest path.
pub fn make_flicker_sequence(spec: &SceneSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let t_count = spec.frames;
    let k = spec.samples;
    let (w, h) = (spec.width, spec.height);

    let env = spec.load_environment()?;
    write_pfm(env.plane(), out_dir.join("env.pfm"))?;

    // background plate for compositing: a vertical gradient
    let mut bg = ImagePlane::new(w, h, 3);
    for y in 0..h {
        let v = 0.2 + 0.5 * y as f64 / h.max(1) as f64;
        for x in 0..w {
            for c in 0..3 {
                bg.set(x, y, c, v * (1.0 - 0.15 * c as f64));
            }
        }
    }
    write_png(&bg, out_dir.join("background.png"), PngBitDepth::Eight)?;

    let truth_dir = out_dir.join("truth");
    std::fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;

    let mut frames = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let (g, _) = rasterize_gbuffer(spec, t)?;
        let frame_dir = out_dir.join(format!("frame_{t:03}"));
        std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        let rel = |name: &str| PathBuf::from(format!("frame_{t:03}/{name}"));
        write_pfm(&g.albedo, out_dir.join(rel("albedo.pfm")))?;
        write_pfm(&g.depth, out_dir.join(rel("depth.pfm")))?;
        write_pfm(&g.normal, out_dir.join(rel("normal.pfm")))?;
        write_pfm(&g.alpha, out_dir.join(rel("alpha.pfm")))?;
        write_pfm(&g.roughness, truth_dir.join(format!("roughness_{t:03}.pfm")))?;
        write_pfm(&g.metallic, truth_dir.join(format!("metallic_{t:03}.pfm")))?;

        let mut roughness_samples = Vec::with_capacity(k);
        let mut metallic_samples = Vec::with_capacity(k);
        for ki in 0..k {
            for (map_id, (truth, list)) in [
                (&g.roughness, &mut roughness_samples),
                (&g.metallic, &mut metallic_samples),
            ]
            .into_iter()
            .enumerate()
            {
                let mut rng = pixel_rng(
                    spec.seed,
                    t,
                    (ki << 1) | map_id, // distinct stream per sample and map
                );
                let noisy = truth.map(|v| (v + spec.noise * gaussian(&mut rng)).clamp(0.0, 1.0));
                let name = if map_id == 0 {
                    rel(&format!("roughness_s{ki}.pfm"))
                } else {
                    rel(&format!("metallic_s{ki}.pfm"))
                };
                write_pfm(&noisy, out_dir.join(&name))?;
                list.push(name);
            }
        }
        frames.push(FrameRecord {
            albedo: rel("albedo.pfm"),
            depth: rel("depth.pfm"),
            normal: rel("normal.pfm"),
            alpha: rel("alpha.pfm"),
            roughness_samples,
            metallic_samples,
        });
    }

    let mut flows_forward = Vec::new();
    let mut flows_backward = Vec::new();
    let [dx, dy] = spec.translation;
    for t in 0..t_count.saturating_sub(1) {
        let fwd = FlowField::constant(w, h, dx, dy);
        let bwd = FlowField::constant(w, h, -dx, -dy);
        let fwd_name = PathBuf::from(format!("flow_fwd_{t:03}.flo"));
        let bwd_name = PathBuf::from(format!("flow_bwd_{t:03}.flo"));
        write_flo(&fwd, out_dir.join(&fwd_name))?;
        write_flo(&bwd, out_dir.join(&bwd_name))?;
        flows_forward.push(fwd_name);
        flows_backward.push(bwd_name);
    }

    let manifest = SequenceManifest {
        frame_count: t_count,
        sample_count: k,
        camera: CameraSpec {
            fx: spec.fx,
            fy: spec.fy,
            cx: spec.cx,
            cy: spec.cy,
            rotation: spec.rotation,
        },
        environment: "env.pfm".into(),
        frames,
        flows_forward,
        flows_backward,
        base_dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

/// Sphere-over-plane scene used across tests: a matte sphere hovering over
/// a ground plane, lit by an ambient plus directional-lobe environment.
pub fn sphere_on_plane_spec(width: usize, height: usize) -> SceneSpec {
    SceneSpec {
        width,
        height,
        fx: width as f64 * 1.2,
        fy: width as f64 * 1.2,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        objects: vec![
            SceneObject {
                shape: Primitive::Sphere { center: [0.0, -0.05, 2.2], radius: 0.35 },
                albedo: [0.8, 0.4, 0.3],
                roughness: 0.5,
                metallic: 0.1,
            },
            SceneObject {
                // ground plane below the sphere; y points down, so "below"
                // is +y and the surface normal faces -y
                shape: Primitive::Plane { point: [0.0, 0.55, 0.0], normal: [0.0, -1.0, 0.0] },
                albedo: [0.6, 0.6, 0.65],
                roughness: 0.7,
                metallic: 0.0,
            },
        ],
        environment: EnvSpec::Lobe {
            ambient: 0.25,
            strength: 1.8,
            direction: [0.35, -0.75, -0.4],
            exponent: 6.0,
            width: 128,
            height: 64,
        },
        translation: [0.0, 0.0],
        frames: 1,
        noise: 0.0,
        samples: 1,
        seed: 7,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapio::load_manifest;
    use crate::raster::fb_consistency_mask;
    use crate::raster::BinaryMask;
    use tempfile::tempdir;

    fn single_sphere_spec() -> SceneSpec {
        SceneSpec {
            width: 32,
            height: 32,
            fx: 40.0,
            fy: 40.0,
            cx: 15.5,
            cy: 15.5,
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            objects: vec![SceneObject {
                shape: Primitive::Sphere { center: [0.0, 0.0, 2.0], radius: 0.5 },
                albedo: [0.7, 0.7, 0.7],
                roughness: 0.4,
                metallic: 0.0,
            }],
            environment: EnvSpec::Constant { radiance: [1.0; 3], width: 8, height: 4 },
            translation: [1.0, 0.0],
            frames: 3,
            noise: 0.1,
            samples: 3,
            seed: 11,
        }
    }

    #[test]
    fn sphere_depth_minimal_at_center_with_facing_normal() {
        let spec = single_sphere_spec();
        let (g, _) = rasterize_gbuffer(&spec, 0).unwrap();
        // the principal point falls between pixels 15 and 16; both rays
        // graze the sphere center almost head-on
        let center_depth = g.depth.get(15, 15, 0);
        assert!(center_depth > 0.0);
        for y in 0..32 {
            for x in 0..32 {
                if g.alpha.get(x, y, 0) > 0.5 {
                    assert!(g.depth.get(x, y, 0) >= center_depth - 1e-6);
                }
            }
        }
        let n = g.normal.texel(15, 15);
        assert!(n[2] < -0.99, "normal {n:?} should face the camera");
    }

    #[test]
    fn empty_scene_is_all_background() {
        let mut spec = single_sphere_spec();
        spec.objects.clear();
        let (g, _) = rasterize_gbuffer(&spec, 0).unwrap();
        assert!(g.alpha.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn facing_plane_has_constant_depth() {
        let mut spec = single_sphere_spec();
        spec.objects = vec![SceneObject {
            shape: Primitive::Plane { point: [0.0, 0.0, 3.0], normal: [0.0, 0.0, -1.0] },
            albedo: [0.5; 3],
            roughness: 0.5,
            metallic: 0.0,
        }];
        let (g, _) = rasterize_gbuffer(&spec, 0).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(g.alpha.get(x, y, 0), 1.0);
                assert!((g.depth.get(x, y, 0) - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rasterized_normals_are_unit_on_foreground() {
        let spec = sphere_on_plane_spec(48, 48);
        let (g, _) = rasterize_gbuffer(&spec, 0).unwrap();
        g.validate().unwrap();
    }

    #[test]
    fn mc_black_environment_is_zero() {
        let mut spec = single_sphere_spec();
        spec.environment = EnvSpec::Constant { radiance: [0.0; 3], width: 8, height: 4 };
        let img = mc_reference(&spec, 0, 8, 1).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mc_lambertian_plane_matches_albedo() {
        let mut spec = single_sphere_spec();
        spec.objects = vec![SceneObject {
            shape: Primitive::Plane { point: [0.0, 0.0, 3.0], normal: [0.0, 0.0, -1.0] },
            albedo: [1.0, 0.9, 0.8],
            roughness: 0.4,
            metallic: 0.0,
        }];
        let img = mc_reference(&spec, 0, 4096, 3).unwrap();
        let t = img.texel(15, 15);
        for c in 0..3 {
            let expected = spec.objects[0].albedo[c];
            let rel = (t[c] - expected).abs() / expected;
            assert!(rel < 0.02, "channel {c}: {} vs {expected}", t[c]);
        }
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let spec = single_sphere_spec();
        let a = mc_reference(&spec, 0, 16, 5).unwrap();
        let b = mc_reference(&spec, 0, 16, 5).unwrap();
        assert_eq!(a, b);
        let c = mc_reference(&spec, 0, 16, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mc_error_scales_with_inverse_sqrt_spp() {
        // quadrupling spp should halve the std error, measured over seeds
        let spec = single_sphere_spec();
        let pixels = [(15usize, 15usize), (12, 18), (18, 12)];
        let spread = |spp: usize| -> f64 {
            let renders: Vec<ImagePlane> =
                (0..8).map(|s| mc_reference(&spec, 0, spp, 100 + s).unwrap()).collect();
            let mut total = 0.0;
            for &(x, y) in &pixels {
                let vals: Vec<f64> = renders.iter().map(|r| r.get(x, y, 0)).collect();
                let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                total += var.sqrt();
            }
            total / pixels.len() as f64
        };
        let e1 = spread(64);
        let e4 = spread(256);
        let ratio = e1 / e4;
        assert!(
            (1.4..=2.6).contains(&ratio),
            "std error ratio {ratio} outside [1.4, 2.6]"
        );
    }

    #[test]
    fn mirror_sphere_highlight_sits_at_reflected_direction() {
        // near-mirror sphere under a single bright texel: the brightest MC
        // pixel must be the pixel whose analytic reflection direction is
        // closest to that texel's direction.
        let (w, h) = (48, 48);
        let mut env_img = ImagePlane::constant(64, 32, 3, 0.0);
        let (bx, by) = (12usize, 9usize);
        for c in 0..3 {
            env_img.set(bx, by, c, 200.0);
        }
        let dir_bright = {
            let theta = (by as f64 + 0.5) * std::f64::consts::PI / 32.0;
            let phi = (bx as f64 + 0.5) * 2.0 * std::f64::consts::PI / 64.0;
            EnvironmentMap::direction_for(theta, phi)
        };
        let dir = tempdir().unwrap();
        let env_path = dir.path().join("env.pfm");
        write_pfm(&env_img, &env_path).unwrap();
        let spec = SceneSpec {
            width: w,
            height: h,
            fx: 60.0,
            fy: 60.0,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            objects: vec![SceneObject {
                shape: Primitive::Sphere { center: [0.0, 0.0, 2.0], radius: 0.6 },
                albedo: [1.0; 3],
                roughness: 0.05,
                metallic: 1.0,
            }],
            environment: EnvSpec::File { path: env_path },
            translation: [0.0, 0.0],
            frames: 1,
            noise: 0.0,
            samples: 1,
            seed: 0,
        };
        let img = mc_reference(&spec, 0, 2048, 9).unwrap();

        // brightest rendered pixel
        let mut best_px = (0, 0);
        let mut best_v = -1.0;
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y, 0);
                if v > best_v {
                    best_v = v;
                    best_px = (x, y);
                }
            }
        }
        // analytic prediction: minimize angle between the per-pixel
        // reflection direction and the bright texel direction
        let cam = spec.camera_for_frame(0);
        let mut predicted = (0, 0);
        let mut best_dot = -2.0;
        for y in 0..h {
            for x in 0..w {
                let d = vec3(
                    (x as f64 - cam.cx) / cam.fx,
                    (y as f64 - cam.cy) / cam.fy,
                    1.0,
                )
                .normalized();
                if let Some(hit) = intersect_scene(&spec, Vec3::ZERO, d) {
                    let r = d.reflect(hit.normal);
                    let dot = r.dot(dir_bright);
                    if dot > best_dot {
                        best_dot = dot;
                        predicted = (x, y);
                    }
                }
            }
        }
        let dx = best_px.0 as i64 - predicted.0 as i64;
        let dy = best_px.1 as i64 - predicted.1 as i64;
        assert!(
            dx.abs() <= 2 && dy.abs() <= 2,
            "highlight at {best_px:?}, predicted {predicted:?}"
        );
    }

    #[test]
    fn flicker_fixture_is_valid_and_noise_free_when_asked() {
        let dir = tempdir().unwrap();
        let mut spec = single_sphere_spec();
        spec.noise = 0.0;
        spec.frames = 2;
        spec.samples = 3;
        let manifest_path = make_flicker_sequence(&spec, dir.path()).unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.frame_count, 2);
        // zero noise: all samples of a frame are identical
        let s0 = crate::mapio::read_pfm(manifest.resolve(&manifest.frames[0].roughness_samples[0]))
            .unwrap();
        let s1 = crate::mapio::read_pfm(manifest.resolve(&manifest.frames[0].roughness_samples[1]))
            .unwrap();
        assert_eq!(s0, s1);
    }

    #[test]
    fn flicker_fixture_flows_are_exactly_consistent() {
        let dir = tempdir().unwrap();
        let mut spec = single_sphere_spec();
        spec.frames = 3;
        spec.samples = 1;
        let manifest_path = make_flicker_sequence(&spec, dir.path()).unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        let fwd = crate::mapio::read_flo(manifest.resolve(&manifest.flows_forward[0])).unwrap();
        let bwd = crate::mapio::read_flo(manifest.resolve(&manifest.flows_backward[0])).unwrap();
        assert_eq!(fwd.at(3, 3), (1.0, 0.0));
        let alpha1 =
            crate::mapio::read_pfm(manifest.resolve(&manifest.frames[1].alpha)).unwrap();
        let fg1 = BinaryMask::from_threshold(&alpha1).unwrap();
        let mask = fb_consistency_mask(&fwd, &bwd, &fg1, 1.5, 0.05).unwrap();
        // on pixels whose correspondence stays on the sphere, the mask
        // must be all ones
        let alpha0 =
            crate::mapio::read_pfm(manifest.resolve(&manifest.frames[0].alpha)).unwrap();
        let mut persistent = 0usize;
        for y in 0..32 {
            for x in 0..31 {
                if alpha0.get(x, y, 0) > 0.5 && alpha1.get(x + 1, y, 0) > 0.5 {
                    assert!(mask.get(x, y), "pixel ({x},{y}) should be valid");
                    persistent += 1;
                }
            }
        }
        assert!(persistent > 50, "foreground too small: {persistent}");
    }
}

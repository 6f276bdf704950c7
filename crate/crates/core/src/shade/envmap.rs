//! Equirectangular environment maps and their deterministic quadrature
//! into discrete light sample sets.
//!
//! Convention: u = phi / 2pi, v = theta / pi, with the world direction
//! d = (sin(theta) cos(phi), cos(theta), sin(theta) sin(phi)); theta is
//! measured from +y.

use crate::error::{Error, Result};
use crate::math::{vec3, Vec3};
use crate::raster::{bilinear_sample, ImagePlane};

/// Equirectangular HDR radiance map.
#[derive(Debug, Clone)]
pub struct EnvironmentMap {
    radiance: ImagePlane,
}

impl EnvironmentMap {
    pub fn new(radiance: ImagePlane) -> Result<Self> {
        if radiance.channels() != 3 {
            return Err(Error::InvalidParam(format!(
                "environment map needs 3 channels, got {}",
                radiance.channels()
            )));
        }
        if radiance.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Validation(vec![
                "environment radiance must be finite and non-negative".to_string(),
            ]));
        }
        Ok(EnvironmentMap { radiance })
    }

    pub fn plane(&self) -> &ImagePlane {
        &self.radiance
    }

    pub fn direction_for(theta: f64, phi: f64) -> Vec3 {
        vec3(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin())
    }

    /// Spherical angles of a unit world direction: (theta from +y, phi in
    /// [0, 2pi)).
    pub fn angles_for(dir: Vec3) -> (f64, f64) {
        let theta = dir.y.clamp(-1.0, 1.0).acos();
        let mut phi = dir.z.atan2(dir.x);
        if phi < 0.0 {
            phi += 2.0 * std::f64::consts::PI;
        }
        (theta, phi)
    }

    /// Bilinearly sampled radiance along a unit world direction.
    pub fn sample(&self, dir: Vec3) -> [f64; 3] {
        let (theta, phi) = Self::angles_for(dir);
        let u = phi / (2.0 * std::f64::consts::PI);
        let v = theta / std::f64::consts::PI;
        let x = u * self.radiance.width() as f64 - 0.5;
        let y = v * self.radiance.height() as f64 - 0.5;
        let mut out = [0.0; 3];
        bilinear_sample(&self.radiance, x, y, &mut out);
        out
    }
}

/// One discrete light: direction toward the light (world space, unit),
/// radiance, and the solid angle its cell subtends.
#[derive(Debug, Clone, Copy)]
pub struct LightSample {
    pub direction: Vec3,
    pub radiance: [f64; 3],
    pub solid_angle: f64,
}

#[derive(Debug, Clone)]
pub struct LightSampleSet {
    pub samples: Vec<LightSample>,
}

impl LightSampleSet {
    pub fn total_solid_angle(&self) -> f64 {
        self.samples.iter().map(|s| s.solid_angle).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.total_solid_angle();
        let sphere = 4.0 * std::f64::consts::PI;
        let mut problems = Vec::new();
        if (total - sphere).abs() > 0.01 * sphere {
            problems.push(format!(
                "solid angles sum to {total:.6}, expected {sphere:.6} within 1%"
            ));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if (s.direction.norm() - 1.0).abs() > 1e-6 {
                problems.push(format!("sample {i} direction not unit length"));
                break;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Deterministic cell-center quadrature of the environment: one sample per
/// (theta, phi) cell with solid angle dphi * dtheta * sin(theta).
pub fn env_sample_set(env: &EnvironmentMap, n_theta: usize, n_phi: usize) -> Result<LightSampleSet> {
    if n_theta < 1 || n_phi < 1 {
        return Err(Error::InvalidParam(
            "environment quadrature needs n_theta, n_phi >= 1".into(),
        ));
    }
    let d_theta = std::f64::consts::PI / n_theta as f64;
    let d_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut samples = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * d_theta;
        let solid_angle = d_phi * d_theta * theta.sin();
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * d_phi;
            let direction = EnvironmentMap::direction_for(theta, phi);
            samples.push(LightSample {
                direction,
                radiance: env.sample(direction),
                solid_angle,
            });
        }
    }
    Ok(LightSampleSet { samples })
}

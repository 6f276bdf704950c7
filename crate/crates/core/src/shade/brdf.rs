//! Cook-Torrance microfacet BRDF with a GGX normal distribution, exact
//! separable Smith geometry term, and Schlick Fresnel, in the standard
//! metalness parameterization. The cosine factor is not included.

use crate::math::Vec3;

const DENOM_FLOOR: f64 = 1e-7;

/// GGX normal distribution D(h); alpha is the squared Disney roughness.
#[inline]
pub(crate) fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (std::f64::consts::PI * t * t).max(DENOM_FLOOR)
}

/// Exact Smith monodirectional shadowing for GGX.
#[inline]
pub(crate) fn smith_g1(n_dot_s: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * n_dot_s / (n_dot_s + (a2 + (1.0 - a2) * n_dot_s * n_dot_s).sqrt()).max(DENOM_FLOOR)
}

#[inline]
fn schlick(f0: f64, h_dot_v: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - h_dot_v).max(0.0).powi(5)
}

/// Evaluates the BRDF for unit vectors n, v, l (per steradian, cosine NOT
/// included). Returns zero when v or l fall below the horizon.
///
/// Roughness follows the Disney convention alpha = r^2; F0 blends from
/// 0.04 to the albedo with metallic, which also suppresses the diffuse
/// lobe.
pub fn brdf_eval(n: Vec3, v: Vec3, l: Vec3, albedo: [f64; 3], roughness: f64, metallic: f64) -> [f64; 3] {
    let n_dot_v = n.dot(v);
    let n_dot_l = n.dot(l);
    if n_dot_v <= 0.0 || n_dot_l <= 0.0 {
        return [0.0; 3];
    }
    let alpha = roughness * roughness;
    let h = (v + l).normalized();
    let n_dot_h = n.dot(h).clamp(0.0, 1.0);
    let h_dot_v = h.dot(v).clamp(0.0, 1.0);

    let d = ggx_d(n_dot_h, alpha);
    let g = smith_g1(n_dot_v, alpha) * smith_g1(n_dot_l, alpha);
    let spec_denom = (4.0 * n_dot_v * n_dot_l).max(DENOM_FLOOR);

    let mut out = [0.0; 3];
    for c in 0..3 {
        let f0 = 0.04 + (albedo[c] - 0.04) * metallic;
        let f = schlick(f0, h_dot_v);
        let specular = d * g * f / spec_denom;
        let diffuse = (1.0 - metallic) * (1.0 - f) * albedo[c] / std::f64::consts::PI;
        out[c] = diffuse + specular;
    }
    out
}

//! Image and temporal-stability quality metrics.

use crate::error::{Error, Result};
use crate::raster::{backward_warp, BinaryMask, FlowField, ImagePlane};

/// Peak signal-to-noise ratio in dB over all pixels and channels.
/// Identical inputs return `f64::INFINITY`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::size_mismatch(
            "psnr operands",
            format!("{}x{}x{}", a.width(), a.height(), a.channels()),
            format!("{}x{}x{}", b.width(), b.height(), b.channels()),
        ));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParam("psnr peak must be > 0".into()));
    }
    let mut mse = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        mse += d * d;
    }
    mse /= a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR restricted to masked pixels (all channels of each masked pixel).
/// Returns None when the mask is empty.
pub fn psnr_masked(
    a: &ImagePlane,
    b: &ImagePlane,
    mask: &BinaryMask,
    peak: f64,
) -> Result<Option<f64>> {
    if !a.same_shape(b) || a.width() != mask.width() || a.height() != mask.height() {
        return Err(Error::size_mismatch(
            "psnr_masked operands",
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{} / mask {}x{}", b.width(), b.height(), mask.width(), mask.height()),
        ));
    }
    let c = a.channels();
    let mut mse = 0.0;
    let mut count = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(x, y) {
                let ta = a.texel(x, y);
                let tb = b.texel(x, y);
                for ch in 0..c {
                    let d = ta[ch] - tb[ch];
                    mse += d * d;
                }
                count += c;
            }
        }
    }
    if count == 0 {
        return Ok(None);
    }
    mse /= count as f64;
    if mse == 0.0 {
        return Ok(Some(f64::INFINITY));
    }
    Ok(Some(10.0 * (peak * peak / mse).log10()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter with valid-mode output (no padding): the
/// result is (W-10) x (H-10) for the 11-tap kernel.
fn gaussian_filter_valid(channel: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let out_w = w - 2 * r;
    let out_h = h - 2 * r;
    // horizontal pass (valid in x, full in y)
    let mut tmp = vec![0.0f64; out_w * h];
    for y in 0..h {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                acc += kv * channel[y * w + ox + ki];
            }
            tmp[y * out_w + ox] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0f64; out_w * out_h];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(oy + ki) * out_w + ox];
            }
            out[oy * out_w + ox] = acc;
        }
    }
    out
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1), averaged over valid
/// window positions and channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::size_mismatch(
            "ssim operands",
            format!("{}x{}x{}", a.width(), a.height(), a.channels()),
            format!("{}x{}x{}", b.width(), b.height(), b.channels()),
        ));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let channels = a.channels();
    let mut channel_mean = 0.0;
    for ch in 0..channels {
        let xa: Vec<f64> = (0..w * h)
            .map(|i| a.data()[i * channels + ch])
            .collect();
        let xb: Vec<f64> = (0..w * h)
            .map(|i| b.data()[i * channels + ch])
            .collect();
        let xaxa: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let xbxb: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let xaxb: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();

        let mu_a = gaussian_filter_valid(&xa, w, h, &kernel);
        let mu_b = gaussian_filter_valid(&xb, w, h, &kernel);
        let raw_aa = gaussian_filter_valid(&xaxa, w, h, &kernel);
        let raw_bb = gaussian_filter_valid(&xbxb, w, h, &kernel);
        let raw_ab = gaussian_filter_valid(&xaxb, w, h, &kernel);

        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let ma = mu_a[i];
            let mb = mu_b[i];
            let var_a = raw_aa[i] - ma * ma;
            let var_b = raw_bb[i] - mb * mb;
            let cov = raw_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        channel_mean += sum / mu_a.len() as f64;
    }
    Ok(channel_mean / channels as f64)
}

/// Flow-compensated temporal PSNR: for each step t, PSNR between frame t
/// and frame t+1 backward-warped onto it, restricted to valid pixels; the
/// mean over steps is returned. Steps with empty masks are skipped;
/// all-skipped is an error.
pub fn tpsnr(
    frames: &[ImagePlane],
    warp_flows: &[FlowField],
    validity: &[BinaryMask],
) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidParam("tpsnr needs at least two frames".into()));
    }
    if warp_flows.len() + 1 != frames.len() || validity.len() + 1 != frames.len() {
        return Err(Error::size_mismatch(
            "tpsnr flows/masks",
            frames.len() - 1,
            format!("{} flows, {} masks", warp_flows.len(), validity.len()),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..frames.len() - 1 {
        let warped = backward_warp(&frames[t + 1], &warp_flows[t])?;
        match psnr_masked(&frames[t], &warped, &validity[t], 1.0)? {
            Some(db) => {
                sum += db;
                count += 1;
            }
            None => continue,
        }
    }
    if count == 0 {
        return Err(Error::InvalidParam(
            "tpsnr: every step had an empty validity mask".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// SSIM-based perceptual path length proxy: the mean over consecutive
/// frame pairs of (1 - ssim) / 2. Zero for a static sequence.
pub fn ppl_proxy(frames: &[ImagePlane]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidParam(
            "ppl_proxy needs at least two frames".into(),
        ));
    }
    let mut sum = 0.0;
    for t in 0..frames.len() - 1 {
        sum += (1.0 - ssim(&frames[t], &frames[t + 1])?) / 2.0;
    }
    Ok(sum / (frames.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, c: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.gen::<f64>()).collect();
        ImagePlane::from_vec(w, h, c, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_plane(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_known_mse() {
        // uniform difference 0.1 -> MSE 0.01 -> 20 dB at peak 1
        let a = ImagePlane::constant(4, 4, 1, 0.5);
        let b = ImagePlane::constant(4, 4, 1, 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        let a = random_plane(9, 7, 3, 2);
        let b = random_plane(9, 7, 3, 3);
        let got = psnr(&a, &b, 1.0).unwrap();
        let mut mse = 0.0;
        for i in 0..a.data().len() {
            mse += (a.data()[i] - b.data()[i]).powi(2);
        }
        mse /= a.data().len() as f64;
        assert!((got - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_symmetry() {
        let a = random_plane(6, 6, 1, 4);
        let b = random_plane(6, 6, 1, 5);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_size_mismatch_errors() {
        let a = random_plane(4, 4, 1, 6);
        let b = random_plane(5, 4, 1, 7);
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random_plane(16, 16, 3, 8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_pair_is_one() {
        let a = ImagePlane::constant(12, 12, 1, 0.37);
        let b = ImagePlane::constant(12, 12, 1, 0.37);
        assert!((ssim(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_decorrelated_noise_is_near_zero() {
        // a random-noise image against a far-shifted copy of itself
        let big = random_plane(64, 32, 1, 9);
        let mut a = ImagePlane::new(32, 32, 1);
        let mut b = ImagePlane::new(32, 32, 1);
        for y in 0..32 {
            for x in 0..32 {
                a.set(x, y, 0, big.get(x, y, 0));
                b.set(x, y, 0, big.get(x + 32, y, 0));
            }
        }
        let value = ssim(&a, &b).unwrap();
        assert!(value.abs() < 0.2, "ssim {value}");
    }

    #[test]
    fn ssim_symmetry() {
        let a = random_plane(14, 14, 1, 10);
        let b = random_plane(14, 14, 1, 11);
        let d = (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs();
        assert!(d < 1e-12);
    }

    #[test]
    fn ssim_too_small_errors() {
        let a = ImagePlane::new(8, 8, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn tpsnr_static_sequence_is_infinite() {
        let frame = random_plane(8, 8, 1, 12);
        let frames = vec![frame.clone(), frame.clone(), frame];
        let flows = vec![FlowField::zero(8, 8); 2];
        let masks = vec![BinaryMask::filled(8, 8, true); 2];
        assert_eq!(tpsnr(&frames, &flows, &masks).unwrap(), f64::INFINITY);
    }

    #[test]
    fn tpsnr_matches_noise_variance_prediction() {
        // static content + iid noise of std sigma_n: the warped difference
        // has variance 2 sigma_n^2, so tPSNR ~ 10 log10(1/(2 sigma_n^2))
        let (w, h) = (48, 48);
        let sigma_n = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let truth = ImagePlane::constant(w, h, 1, 0.5);
        let frames: Vec<ImagePlane> = (0..12)
            .map(|_| {
                truth.map(|v| {
                    // Box-Muller for Gaussian noise
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    let g = (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos();
                    v + sigma_n * g
                })
            })
            .collect();
        let flows = vec![FlowField::zero(w, h); 11];
        let masks = vec![BinaryMask::filled(w, h, true); 11];
        let got = tpsnr(&frames, &flows, &masks).unwrap();
        let expected = 10.0 * (1.0 / (2.0 * sigma_n * sigma_n)).log10();
        assert!(
            (got - expected).abs() < 0.5,
            "tpsnr {got} vs predicted {expected}"
        );
    }

    #[test]
    fn tpsnr_skips_empty_masks_and_errors_when_all_empty() {
        let frames = vec![random_plane(8, 8, 1, 14), random_plane(8, 8, 1, 15)];
        let flows = vec![FlowField::zero(8, 8)];
        let empty = vec![BinaryMask::filled(8, 8, false)];
        assert!(tpsnr(&frames, &flows, &empty).is_err());
    }

    #[test]
    fn ppl_static_sequence_is_zero() {
        let frame = random_plane(16, 16, 1, 16);
        let frames = vec![frame.clone(), frame.clone(), frame];
        assert_eq!(ppl_proxy(&frames).unwrap(), 0.0);
    }

    #[test]
    fn ppl_alternating_black_white() {
        // SSIM of two constants a=0, b=1 collapses to C1/(1+C1);
        // ppl = (1 - that) / 2
        let black = ImagePlane::constant(12, 12, 1, 0.0);
        let white = ImagePlane::constant(12, 12, 1, 1.0);
        let frames = vec![black.clone(), white, black];
        let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
        let ssim_bw = c1 / (1.0 + c1);
        let expected = (1.0 - ssim_bw) / 2.0;
        assert!((ppl_proxy(&frames).unwrap() - expected).abs() < 1e-12);
    }
}

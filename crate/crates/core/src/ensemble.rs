//! Aggregation of K stochastic material-map samples into per-pixel mean and
//! normalized-uncertainty maps, plus the overlapping-tile machinery used to
//! assemble patchwise predictions into full-resolution planes.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImagePlane};

/// One tile rectangle, in pixels. `x + width <= frame width` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Overlapping-tile cover of a frame at fixed patch size.
#[derive(Debug, Clone)]
pub struct TilePlan {
    pub frame_width: usize,
    pub frame_height: usize,
    pub patch: usize,
    pub overlap: usize,
    pub rects: Vec<TileRect>,
}

/// Per-pixel mean and normalized standard deviation over K samples.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: ImagePlane,
    /// Normalized std: min(1, s / s_ref), in [0,1].
    pub sigma_norm: ImagePlane,
}

fn axis_positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch >= extent {
        return vec![0];
    }
    let mut xs = Vec::new();
    let mut x = 0usize;
    loop {
        xs.push(x);
        if x + patch >= extent {
            break;
        }
        x = (x + stride).min(extent - patch);
    }
    xs
}

/// Covers a width x height frame with patches of the given size, adjacent
/// patches overlapping by `overlap` pixels; the final row/column is shifted
/// inward so no rectangle exceeds the frame.
pub fn plan_tiles(width: usize, height: usize, patch: usize, overlap: usize) -> Result<TilePlan> {
    if width == 0 || height == 0 || patch == 0 {
        return Err(Error::InvalidParam(
            "tile plan needs positive dimensions and patch size".into(),
        ));
    }
    if overlap >= patch {
        return Err(Error::InvalidParam(format!(
            "overlap {overlap} must be smaller than patch {patch}"
        )));
    }
    if patch < 2 * overlap {
        return Err(Error::InvalidParam(format!(
            "patch {patch} must be at least twice the overlap {overlap}"
        )));
    }
    if patch > width.max(height) {
        return Err(Error::InvalidParam(format!(
            "patch {patch} exceeds both frame dimensions {width}x{height}"
        )));
    }
    let stride = patch - overlap;
    let mut rects = Vec::new();
    for &y in &axis_positions(height, patch, stride) {
        for &x in &axis_positions(width, patch, stride) {
            rects.push(TileRect {
                x,
                y,
                width: patch.min(width),
                height: patch.min(height),
            });
        }
    }
    Ok(TilePlan { frame_width: width, frame_height: height, patch, overlap, rects })
}

/// Separable raised-cosine (Hann) blending weight across one patch axis,
/// floored so patch borders keep nonzero weight.
fn hann_weight(i: usize, extent: usize) -> f64 {
    const FLOOR: f64 = 1e-3;
    if extent <= 1 {
        return 1.0;
    }
    let phase = (i as f64 + 0.5) / extent as f64;
    let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos());
    w.max(FLOOR)
}

/// Blends per-tile predictions into one full-resolution plane with
/// normalized Hann weights. Pixels covered by exactly one patch reproduce
/// that patch bit-exactly.
pub fn blend_patches(patches: &[(TileRect, ImagePlane)], plan: &TilePlan) -> Result<ImagePlane> {
    if patches.len() != plan.rects.len() {
        return Err(Error::size_mismatch(
            "patch count vs plan",
            plan.rects.len(),
            patches.len(),
        ));
    }
    let channels = patches
        .first()
        .map(|(_, img)| img.channels())
        .ok_or_else(|| Error::InvalidParam("no patches to blend".into()))?;
    for (i, ((rect, img), planned)) in patches.iter().zip(&plan.rects).enumerate() {
        if rect != planned {
            return Err(Error::InvalidParam(format!(
                "patch {i} rectangle disagrees with the plan"
            )));
        }
        if img.width() != rect.width || img.height() != rect.height || img.channels() != channels {
            return Err(Error::size_mismatch(
                format!("patch {i} image"),
                format!("{}x{}x{}", rect.width, rect.height, channels),
                format!("{}x{}x{}", img.width(), img.height(), img.channels()),
            ));
        }
    }

    let mut out = ImagePlane::new(plan.frame_width, plan.frame_height, channels);
    for y in 0..plan.frame_height {
        for x in 0..plan.frame_width {
            // gather contributions in fixed patch order
            let mut total_weight = 0.0;
            let mut acc = [0.0f64; 4];
            let mut hits = 0usize;
            let mut last: Option<(usize, usize, usize)> = None;
            for (pi, (rect, _)) in patches.iter().enumerate() {
                if x >= rect.x && x < rect.x + rect.width && y >= rect.y && y < rect.y + rect.height
                {
                    let lx = x - rect.x;
                    let ly = y - rect.y;
                    let w = hann_weight(lx, rect.width) * hann_weight(ly, rect.height);
                    let texel = patches[pi].1.texel(lx, ly);
                    for c in 0..channels {
                        acc[c] += w * texel[c];
                    }
                    total_weight += w;
                    hits += 1;
                    last = Some((pi, lx, ly));
                }
            }
            match hits {
                0 => {
                    return Err(Error::InvalidParam(format!(
                        "plan leaves pixel ({x},{y}) uncovered"
                    )))
                }
                1 => {
                    // single cover: copy, so weights cancel bit-exactly
                    let (pi, lx, ly) = last.unwrap();
                    let texel = patches[pi].1.texel(lx, ly);
                    for c in 0..channels {
                        out.set(x, y, c, texel[c]);
                    }
                }
                _ => {
                    for c in 0..channels {
                        out.set(x, y, c, acc[c] / total_weight);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Rank used for the sigma normalizer: one past the 95th-percentile rank,
/// so that at least 95% of the population falls strictly below the
/// normalizer and maps to sigma_norm < 1.
fn percentile_rank(n: usize) -> usize {
    (((n as f64) * 0.95).ceil() as usize + 1).min(n)
}

/// Per-pixel arithmetic mean and population standard deviation over K
/// samples, with the std normalized by its 95th percentile over foreground
/// pixels (all pixels if no mask is given) and clamped to [0,1].
pub fn ensemble_stats(
    samples: &[ImagePlane],
    foreground: Option<&BinaryMask>,
) -> Result<EnsembleStats> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParam("ensemble needs at least one sample".into()))?;
    for (k, s) in samples.iter().enumerate() {
        if !s.same_shape(first) {
            return Err(Error::size_mismatch(
                format!("sample {k}"),
                format!("{}x{}x{}", first.width(), first.height(), first.channels()),
                format!("{}x{}x{}", s.width(), s.height(), s.channels()),
            ));
        }
    }
    if let Some(mask) = foreground {
        if mask.width() != first.width() || mask.height() != first.height() {
            return Err(Error::size_mismatch(
                "foreground mask",
                format!("{}x{}", first.width(), first.height()),
                format!("{}x{}", mask.width(), mask.height()),
            ));
        }
    }

    let k = samples.len() as f64;
    let len = first.data().len();
    let mut mean = ImagePlane::new(first.width(), first.height(), first.channels());
    let mut std = vec![0.0f64; len];
    for i in 0..len {
        let mut sum = 0.0;
        for s in samples {
            sum += s.data()[i];
        }
        mean.data_mut()[i] = sum / k;
    }
    for i in 0..len {
        let m = mean.data()[i];
        let mut var = 0.0;
        for s in samples {
            let d = s.data()[i] - m;
            var += d * d;
        }
        std[i] = (var / k).sqrt();
    }

    // normalizer over foreground pixels (any channel position counts)
    let channels = first.channels();
    let mut pool: Vec<f64> = Vec::with_capacity(len);
    for y in 0..first.height() {
        for x in 0..first.width() {
            if foreground.map_or(true, |m| m.get(x, y)) {
                let base = (y * first.width() + x) * channels;
                pool.extend_from_slice(&std[base..base + channels]);
            }
        }
    }
    let s_ref = if pool.is_empty() {
        1e-6
    } else {
        pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = pool[percentile_rank(pool.len()) - 1];
        if r > 0.0 {
            r
        } else {
            1e-6
        }
    };

    let sigma_norm = ImagePlane::from_vec(
        first.width(),
        first.height(),
        channels,
        std.iter().map(|&s| (s / s_ref).min(1.0)).collect(),
    )?;
    Ok(EnsembleStats { mean, sigma_norm })
}

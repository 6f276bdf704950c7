//! Core raster types plus the sampling, warping, and discrete differential
//! operators shared by every stage.
//!
//! All operations here are pure: inputs are borrowed immutably and outputs
//! are freshly allocated, so they are safe to call from parallel contexts.

use crate::error::{Error, Result};

/// H×W×C floating-point raster, row-major and channel-interleaved.
///
/// The universal map carrier: RGB images, depth, normals, roughness and
/// metallic maps, alpha mattes. Channel count is 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(
            (1..=4).contains(&channels),
            "channel count must be 1..=4, got {channels}"
        );
        ImagePlane {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=4).contains(&channels) {
            return Err(Error::InvalidParam(format!(
                "channel count must be 1..=4, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::size_mismatch(
                "image data length",
                width * height * channels,
                data.len(),
            ));
        }
        Ok(ImagePlane { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let mut img = Self::new(width, height, channels);
        img.data.fill(value);
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_size(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.same_size(other) && self.channels == other.channels
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y) + c;
        self.data[i] = v;
    }

    /// All channels at one texel.
    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImagePlane {
        ImagePlane {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImagePlane, f: impl Fn(f64, f64) -> f64) -> Result<ImagePlane> {
        if !self.same_shape(other) {
            return Err(Error::size_mismatch(
                "zip_map operands",
                format!("{}x{}x{}", self.width, self.height, self.channels),
                format!("{}x{}x{}", other.width, other.height, other.channels),
            ));
        }
        Ok(ImagePlane {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-pixel 2D displacement between consecutive frames, stored as a
/// 2-channel plane (u = channel 0, v = channel 1), in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(ImagePlane);

impl FlowField {
    pub fn new(plane: ImagePlane) -> Result<Self> {
        if plane.channels() != 2 {
            return Err(Error::InvalidParam(format!(
                "flow field needs 2 channels, got {}",
                plane.channels()
            )));
        }
        Ok(FlowField(plane))
    }

    pub fn zero(width: usize, height: usize) -> Self {
        FlowField(ImagePlane::new(width, height, 2))
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let mut p = ImagePlane::new(width, height, 2);
        for y in 0..height {
            for x in 0..width {
                p.set(x, y, 0, u);
                p.set(x, y, 1, v);
            }
        }
        FlowField(p)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        (self.0.get(x, y, 0), self.0.get(x, y, 1))
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        self.0.set(x, y, 0, u);
        self.0.set(x, y, 1, v);
    }

    pub fn plane(&self) -> &ImagePlane {
        &self.0
    }

    pub fn into_plane(self) -> ImagePlane {
        self.0
    }
}

/// Single-channel raster whose values are exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(ImagePlane);

impl BinaryMask {
    pub fn new(plane: ImagePlane) -> Result<Self> {
        if plane.channels() != 1 {
            return Err(Error::InvalidParam(format!(
                "mask needs 1 channel, got {}",
                plane.channels()
            )));
        }
        if plane.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidParam(
                "mask values must be exactly 0.0 or 1.0".into(),
            ));
        }
        Ok(BinaryMask(plane))
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask(ImagePlane::constant(
            width,
            height,
            1,
            if value { 1.0 } else { 0.0 },
        ))
    }

    /// Threshold any single-channel plane at > 0.5.
    pub fn from_threshold(plane: &ImagePlane) -> Result<Self> {
        if plane.channels() != 1 {
            return Err(Error::InvalidParam(format!(
                "mask threshold needs 1 channel, got {}",
                plane.channels()
            )));
        }
        Ok(BinaryMask(plane.map(|v| if v > 0.5 { 1.0 } else { 0.0 })))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y, 0) != 0.0
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.0.set(x, y, 0, if value { 1.0 } else { 0.0 });
    }

    pub fn count_set(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn plane(&self) -> &ImagePlane {
        &self.0
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear interpolation of the 4 surrounding texels. Coordinates outside
/// [0, W-1] x [0, H-1] clamp to the border.
///
/// The nested-lerp form makes integer coordinates and constant images exact.
pub fn bilinear_sample(img: &ImagePlane, x: f64, y: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), img.channels());
    let w = img.width();
    let h = img.height();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let t00 = img.texel(x0, y0);
    let t10 = img.texel(x1, y0);
    let t01 = img.texel(x0, y1);
    let t11 = img.texel(x1, y1);
    for c in 0..img.channels() {
        let top = lerp(t00[c], t10[c], fx);
        let bot = lerp(t01[c], t11[c], fx);
        out[c] = lerp(top, bot, fy);
    }
}

/// Texel footprint of one bilinear sample: ((x0,y0,x1,y1), (fx,fy)).
/// Shared between `backward_warp` and its adjoint so scatter weights match
/// the sampling weights exactly.
pub(crate) fn bilinear_footprint(
    img_w: usize,
    img_h: usize,
    x: f64,
    y: f64,
) -> (usize, usize, usize, usize, f64, f64) {
    let x = x.clamp(0.0, (img_w - 1) as f64);
    let y = y.clamp(0.0, (img_h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img_w - 1);
    let y1 = (y0 + 1).min(img_h - 1);
    (x0, y0, x1, y1, x - x0 as f64, y - y0 as f64)
}

/// Resample `src` at positions displaced by `flow`: out(p) = src(p + flow(p)).
///
/// With the flow from frame t to t+1 this aligns frame t+1 content onto
/// frame t's pixel grid.
pub fn backward_warp(src: &ImagePlane, flow: &FlowField) -> Result<ImagePlane> {
    if src.width() != flow.width() || src.height() != flow.height() {
        return Err(Error::size_mismatch(
            "backward_warp src vs flow",
            format!("{}x{}", src.width(), src.height()),
            format!("{}x{}", flow.width(), flow.height()),
        ));
    }
    let mut out = ImagePlane::new(src.width(), src.height(), src.channels());
    let c = src.channels();
    let w = src.width();
    for y in 0..src.height() {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            let i = (y * w + x) * c;
            // Split borrow: the sample buffer lives in `out`.
            let mut buf = [0.0; 4];
            bilinear_sample(src, x as f64 + u, y as f64 + v, &mut buf[..c]);
            out.data_mut()[i..i + c].copy_from_slice(&buf[..c]);
        }
    }
    Ok(out)
}

/// Forward/backward flow consistency mask.
///
/// A pixel is valid iff the fwd->bwd round trip error stays under
/// max(abs_thresh, rel_thresh * |flow_fwd|) and the forward flow lands on
/// next-frame foreground.
pub fn fb_consistency_mask(
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    fg_next: &BinaryMask,
    abs_thresh: f64,
    rel_thresh: f64,
) -> Result<BinaryMask> {
    let (w, h) = (flow_fwd.width(), flow_fwd.height());
    if flow_bwd.width() != w
        || flow_bwd.height() != h
        || fg_next.width() != w
        || fg_next.height() != h
    {
        return Err(Error::size_mismatch(
            "fb_consistency_mask inputs",
            format!("{w}x{h}"),
            format!(
                "bwd {}x{}, fg {}x{}",
                flow_bwd.width(),
                flow_bwd.height(),
                fg_next.width(),
                fg_next.height()
            ),
        ));
    }
    let warped_fg = backward_warp(fg_next.plane(), flow_fwd)?;
    let mut mask = BinaryMask::filled(w, h, false);
    let mut buf = [0.0; 2];
    for y in 0..h {
        for x in 0..w {
            let (fu, fv) = flow_fwd.at(x, y);
            bilinear_sample(flow_bwd.plane(), x as f64 + fu, y as f64 + fv, &mut buf);
            let rx = fu + buf[0];
            let ry = fv + buf[1];
            let err = (rx * rx + ry * ry).sqrt();
            let mag = (fu * fu + fv * fv).sqrt();
            let ok = err <= abs_thresh.max(rel_thresh * mag) && warped_fg.get(x, y, 0) > 0.5;
            mask.set(x, y, ok);
        }
    }
    Ok(mask)
}

/// Forward differences per channel: gx(x,y) = img(x+1,y) - img(x,y),
/// gy(x,y) = img(x,y+1) - img(x,y). The last column of gx and last row of
/// gy are zero (replicate boundary).
pub fn spatial_gradients(img: &ImagePlane) -> (ImagePlane, ImagePlane) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut gx = ImagePlane::new(w, h, c);
    let mut gy = ImagePlane::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(x, y, ch);
                if x + 1 < w {
                    gx.set(x, y, ch, img.get(x + 1, y, ch) - v);
                }
                if y + 1 < h {
                    gy.set(x, y, ch, img.get(x, y + 1, ch) - v);
                }
            }
        }
    }
    (gx, gy)
}

/// Adjoint of the forward x-difference (a backward-difference divergence):
/// out(x,y) = u(x-1,y) - u(x,y), dropping terms the forward operator never
/// produced (u at the last column is unused; u(-1) is zero).
pub fn gradient_x_adjoint(u: &ImagePlane) -> ImagePlane {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let mut out = ImagePlane::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut v = 0.0;
                if x >= 1 {
                    v += u.get(x - 1, y, ch);
                }
                if x + 1 < w {
                    v -= u.get(x, y, ch);
                }
                out.set(x, y, ch, v);
            }
        }
    }
    out
}

/// Adjoint of the forward y-difference; see [`gradient_x_adjoint`].
pub fn gradient_y_adjoint(u: &ImagePlane) -> ImagePlane {
    let (w, h, c) = (u.width(), u.height(), u.channels());
    let mut out = ImagePlane::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut v = 0.0;
                if y >= 1 {
                    v += u.get(x, y - 1, ch);
                }
                if y + 1 < h {
                    v -= u.get(x, y, ch);
                }
                out.set(x, y, ch, v);
            }
        }
    }
    out
}

/// 4-neighbor Laplacian with the neighbor set truncated at borders:
/// out(p) = sum_{q in N4(p)} f(q) - |N4(p)| * f(p).
///
/// The truncated stencil is symmetric, so the operator is self-adjoint.
pub fn laplacian(img: &ImagePlane) -> ImagePlane {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = ImagePlane::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                let mut degree = 0.0;
                if x >= 1 {
                    acc += img.get(x - 1, y, ch);
                    degree += 1.0;
                }
                if x + 1 < w {
                    acc += img.get(x + 1, y, ch);
                    degree += 1.0;
                }
                if y >= 1 {
                    acc += img.get(x, y - 1, ch);
                    degree += 1.0;
                }
                if y + 1 < h {
                    acc += img.get(x, y + 1, ch);
                    degree += 1.0;
                }
                out.set(x, y, ch, acc - degree * img.get(x, y, ch));
            }
        }
    }
    out
}

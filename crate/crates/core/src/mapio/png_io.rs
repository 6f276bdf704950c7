//! PNG input/output for LDR images and masks, backed by the `png` crate.
//! Values are normalized to [0,1] on read; writes clamp to [0,1] and
//! quantize with round-to-nearest.

use crate::error::{Error, Result};
use crate::raster::ImagePlane;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngBitDepth {
    Eight,
    Sixteen,
}

fn color_type_for(channels: usize) -> png::ColorType {
    match channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        _ => png::ColorType::Rgba,
    }
}

pub fn read_png(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(path, 0, format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, 0, format!("png: {e}")))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::InvalidParam(format!(
                "unsupported png color type {other:?} in {}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let count = w * h * channels;
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..count].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..count * 2]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::InvalidParam(format!(
                "unsupported png bit depth {other:?} in {}",
                path.display()
            )))
        }
    };
    ImagePlane::from_vec(w, h, channels, data)
}

pub fn write_png(img: &ImagePlane, path: impl AsRef<Path>, bitdepth: PngBitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(color_type_for(img.channels()));
    encoder.set_depth(match bitdepth {
        PngBitDepth::Eight => png::BitDepth::Eight,
        PngBitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::parse(path, 0, format!("png: {e}")))?;
    let bytes: Vec<u8> = match bitdepth {
        PngBitDepth::Eight => img
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
        PngBitDepth::Sixteen => img
            .data()
            .iter()
            .flat_map(|&v| {
                let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                q.to_be_bytes()
            })
            .collect(),
    };
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::parse(path, 0, format!("png: {e}")))
}

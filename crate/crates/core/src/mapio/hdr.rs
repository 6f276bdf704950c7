//! Radiance HDR (RGBE) decoder supporting both the old run-length scheme
//! and the adaptive "new" RLE used for scanline widths 8..=32767.
//!
//! Decoded values are linear radiance: (r,g,b) * 2^(e-136), with an
//! exponent byte of zero meaning black.

use crate::error::{Error, Result};
use crate::raster::ImagePlane;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.path, self.pos as u64, "unexpected end of file"))?;
        self.pos += 1;
        Ok(b)
    }

    fn rgbe(&mut self) -> Result<[u8; 4]> {
        Ok([self.byte()?, self.byte()?, self.byte()?, self.byte()?])
    }

    fn line(&mut self) -> Result<String> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::parse(
                self.path,
                start as u64,
                "unterminated header line",
            ));
        }
        let line = String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned();
        self.pos += 1; // consume '\n'
        Ok(line)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.pos as u64, message)
    }
}

#[inline]
fn rgbe_to_linear(rgbe: [u8; 4], out: &mut [f64]) {
    let [r, g, b, e] = rgbe;
    if e == 0 {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 0.0;
    } else {
        let scale = (2.0f64).powi(e as i32 - 136);
        out[0] = r as f64 * scale;
        out[1] = g as f64 * scale;
        out[2] = b as f64 * scale;
    }
}

/// Decodes one new-RLE scanline (the leading (2,2,hi,lo) marker has already
/// been consumed) into `width` RGBE pixels.
fn decode_new_rle(cur: &mut Cursor, width: usize, row: &mut [[u8; 4]]) -> Result<()> {
    for channel in 0..4 {
        let mut filled = 0usize;
        while filled < width {
            let count = cur.byte()?;
            if count > 128 {
                let run = (count - 128) as usize;
                if filled + run > width {
                    return Err(cur.err(format!(
                        "RLE run overflows scanline ({} + {run} > {width})",
                        filled
                    )));
                }
                let value = cur.byte()?;
                for px in row.iter_mut().skip(filled).take(run) {
                    px[channel] = value;
                }
                filled += run;
            } else {
                if count == 0 {
                    return Err(cur.err("zero-length RLE literal run"));
                }
                let run = count as usize;
                if filled + run > width {
                    return Err(cur.err(format!(
                        "RLE literal overflows scanline ({} + {run} > {width})",
                        filled
                    )));
                }
                for px in row.iter_mut().skip(filled).take(run) {
                    px[channel] = cur.byte()?;
                }
                filled += run;
            }
        }
    }
    Ok(())
}

/// Decodes one scanline in the old format: raw RGBE pixels with
/// (1,1,1,count) repeat markers; consecutive markers shift the count.
fn decode_old_rle(
    cur: &mut Cursor,
    width: usize,
    first: [u8; 4],
    row: &mut [[u8; 4]],
) -> Result<()> {
    let mut filled = 0usize;
    let mut pending = Some(first);
    let mut rle_shift = 0u32;
    while filled < width {
        let px = match pending.take() {
            Some(p) => p,
            None => cur.rgbe()?,
        };
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            if filled == 0 {
                return Err(cur.err("repeat marker with no previous pixel"));
            }
            let run = (px[3] as usize) << rle_shift;
            if filled + run > width {
                return Err(cur.err(format!(
                    "old-RLE repeat overflows scanline ({filled} + {run} > {width})"
                )));
            }
            let prev = row[filled - 1];
            for slot in row.iter_mut().skip(filled).take(run) {
                *slot = prev;
            }
            filled += run;
            rle_shift += 8;
        } else {
            row[filled] = px;
            filled += 1;
            rle_shift = 0;
        }
    }
    Ok(())
}

pub fn read_radiance_hdr(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    let signature = cur.line()?;
    if !signature.starts_with("#?RADIANCE") && !signature.starts_with("#?RGBE") {
        return Err(Error::parse(path, 0, format!("bad signature {signature:?}")));
    }

    let mut format: Option<String> = None;
    loop {
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.strip_prefix("FORMAT=") {
            format = Some(value.trim().to_string());
        }
        // other header variables (EXPOSURE, comments) are ignored
    }
    match format.as_deref() {
        Some("32-bit_rle_rgbe") => {}
        Some(other) => {
            return Err(cur.err(format!("unsupported FORMAT {other:?}")));
        }
        None => return Err(cur.err("missing FORMAT line")),
    }

    let resolution = cur.line()?;
    let parts: Vec<&str> = resolution.split_whitespace().collect();
    let (height, width) = match parts.as_slice() {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>()
                .map_err(|_| cur.err("invalid height in resolution line"))?,
            w.parse::<usize>()
                .map_err(|_| cur.err("invalid width in resolution line"))?,
        ),
        _ => {
            return Err(cur.err(format!(
                "unsupported resolution line {resolution:?} (expected \"-Y H +X W\")"
            )))
        }
    };
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }

    let mut img = ImagePlane::new(width, height, 3);
    let mut row = vec![[0u8; 4]; width];
    for y in 0..height {
        let first = cur.rgbe()?;
        let new_rle = first[0] == 2 && first[1] == 2 && first[2] & 0x80 == 0;
        if new_rle {
            let declared = ((first[2] as usize) << 8) | first[3] as usize;
            if declared != width {
                return Err(cur.err(format!(
                    "scanline width {declared} != image width {width}"
                )));
            }
            decode_new_rle(&mut cur, width, &mut row)?;
        } else {
            decode_old_rle(&mut cur, width, first, &mut row)?;
        }
        for (x, px) in row.iter().enumerate() {
            let i = (y * width + x) * 3;
            rgbe_to_linear(*px, &mut img.data_mut()[i..i + 3]);
        }
    }
    Ok(img)
}

//! Portable Float Map reader/writer.
//!
//! Header: magic "PF" (3-channel) or "Pf" (1-channel), ASCII width and
//! height, then a scale line whose sign encodes endianness (negative =
//! little-endian). Pixel rows are stored bottom-to-top as 32-bit floats.

use crate::error::{Error, Result};
use crate::raster::ImagePlane;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Reads one whitespace-delimited header token, tracking the byte offset.
fn read_token(r: &mut impl Read, offset: &mut u64, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte) {
            Ok(0) => {
                if token.is_empty() {
                    return Err(Error::parse(path, *offset, "unexpected end of header"));
                }
                break;
            }
            Ok(_) => {
                *offset += 1;
                if byte[0].is_ascii_whitespace() {
                    if token.is_empty() {
                        continue;
                    }
                    break;
                }
                token.push(byte[0]);
            }
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    String::from_utf8(token).map_err(|_| Error::parse(path, *offset, "non-ASCII header token"))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset: u64 = 0;

    let magic = read_token(&mut r, &mut offset, path)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(path, 0, format!("bad magic {magic:?}"))),
    };
    let dim_offset = offset;
    let width: usize = read_token(&mut r, &mut offset, path)?
        .parse()
        .map_err(|_| Error::parse(path, dim_offset, "invalid width"))?;
    let height: usize = read_token(&mut r, &mut offset, path)?
        .parse()
        .map_err(|_| Error::parse(path, dim_offset, "invalid height"))?;
    if width == 0 || height == 0 {
        return Err(Error::parse(path, dim_offset, "zero image dimension"));
    }
    let scale_offset = offset;
    let scale: f32 = read_token(&mut r, &mut offset, path)?
        .parse()
        .map_err(|_| Error::parse(path, scale_offset, "invalid scale"))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::parse(path, scale_offset, "non-finite or zero scale"));
    }
    let little_endian = scale < 0.0;

    let count = width * height * channels;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::parse(path, offset, "truncated pixel payload")
        } else {
            Error::io(path, e)
        }
    })?;

    // Rows are stored bottom-to-top.
    let mut data = vec![0.0f64; count];
    let row_len = width * channels;
    for file_row in 0..height {
        let img_row = height - 1 - file_row;
        for i in 0..row_len {
            let at = (file_row * row_len + i) * 4;
            let bytes: [u8; 4] = payload[at..at + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            data[img_row * row_len + i] = v as f64;
        }
    }
    ImagePlane::from_vec(width, height, channels, data)
}

/// Writes `img` as little-endian PFM (scale -1.0). Only 1- and 3-channel
/// planes have a PFM representation.
pub fn write_pfm(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::InvalidParam(format!(
                "PFM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(format!("{magic}\n{} {}\n-1.0\n", img.width(), img.height()).as_bytes())?;
    let row_len = img.width() * img.channels();
    for img_row in (0..img.height()).rev() {
        for i in 0..row_len {
            let v = img.data()[img_row * row_len + i] as f32;
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn reads_minimal_single_channel_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.pfm");
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!(
            (img.width(), img.height(), img.channels()),
            (1, 1, 1)
        );
        assert_eq!(img.data(), &[0.5]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"PG\n1 1\n-1.0\n\0\0\0\0").unwrap();
        match read_pfm(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.pfm");
        let mut bytes = b"PF\n2 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0u8; 12]); // 3 floats of the 12 expected
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn big_endian_scale_is_honored() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.75f32.to_be_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_pfm(&path).unwrap().data(), &[2.75]);
    }

    #[test]
    fn round_trip_random_rgb_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.pfm");
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<f64> = (0..16 * 16 * 3)
            .map(|_| rng.gen::<f32>() as f64 * 100.0 - 50.0)
            .map(|v| v as f32 as f64) // keep values f32-representable
            .collect();
        let img = ImagePlane::from_vec(16, 16, 3, data).unwrap();
        write_pfm(&img, &path).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), img);
    }

    #[test]
    fn rejects_two_channel_planes() {
        let dir = tempdir().unwrap();
        let img = ImagePlane::new(2, 2, 2);
        assert!(write_pfm(&img, dir.path().join("x.pfm")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_arbitrary_sizes(
            w in 1usize..20,
            h in 1usize..20,
            gray in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let c = if gray { 1 } else { 3 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..w * h * c).map(|_| rng.gen::<f32>() as f64).collect();
            let img = ImagePlane::from_vec(w, h, c, data).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.pfm");
            write_pfm(&img, &path).unwrap();
            prop_assert_eq!(read_pfm(&path).unwrap(), img);
        }
    }
}

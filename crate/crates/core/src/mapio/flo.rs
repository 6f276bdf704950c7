//! Middlebury `.flo` optical flow format: the float 202021.25 as a sanity
//! magic, int32 width and height, then row-major interleaved (u,v) float32
//! pairs, all little-endian.

use crate::error::{Error, Result};
use crate::raster::{FlowField, ImagePlane};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const FLO_MAGIC: f32 = 202021.25;

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::parse(path, 0, "file shorter than the 12-byte header")
        } else {
            Error::io(path, e)
        }
    })?;
    let magic = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::parse(
            path,
            0,
            format!("magic {magic} != {FLO_MAGIC}"),
        ));
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::parse(
            path,
            4,
            format!("non-positive dimensions {width}x{height}"),
        ));
    }
    let (width, height) = (width as usize, height as usize);

    let count = width * height * 2;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::parse(path, 12, "payload shorter than declared size")
        } else {
            Error::io(path, e)
        }
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::parse(
            path,
            12 + payload.len() as u64,
            "trailing bytes after declared payload",
        ));
    }

    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FlowField::new(ImagePlane::from_vec(width, height, 2, data)?)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(&FLO_MAGIC.to_le_bytes())?;
    emit(&(flow.width() as i32).to_le_bytes())?;
    emit(&(flow.height() as i32).to_le_bytes())?;
    for &v in flow.plane().data() {
        emit(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

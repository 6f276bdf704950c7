//! Bit-exact readers/writers for the on-disk formats and the sequence
//! manifest.
//!
//! Float maps travel as PFM, flows as Middlebury `.flo`, environment maps
//! as Radiance HDR (read-only) or PFM, LDR output and masks as PNG.

mod flo;
mod hdr;
mod manifest;
mod pfm;
mod png_io;

pub use flo::{read_flo, write_flo};
pub use hdr::read_radiance_hdr;
pub use manifest::{load_manifest, CameraSpec, FrameRecord, SequenceManifest};
pub use pfm::{read_pfm, write_pfm};
pub use png_io::{read_png, write_png, PngBitDepth};

use crate::error::{Error, Result};
use crate::raster::ImagePlane;
use std::path::Path;

/// Read an environment radiance map, dispatching on the file extension:
/// `.hdr`/`.pic` decode as Radiance RGBE, everything else as PFM.
pub fn read_env_map(path: &Path) -> Result<ImagePlane> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("pic") => read_radiance_hdr(path),
        _ => {
            let img = read_pfm(path)?;
            if img.channels() != 3 {
                return Err(Error::InvalidParam(format!(
                    "environment map {} must have 3 channels, got {}",
                    path.display(),
                    img.channels()
                )));
            }
            Ok(img)
        }
    }
}

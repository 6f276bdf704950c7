//! Sequence manifest: a JSON file binding per-frame map paths, sample
//! stacks, flow files, camera parameters and the environment map together.
//! See docs/manifest.md for the schema and a complete example.

use crate::error::{Error, Result};
use crate::math::Mat3;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation, row-major.
    pub rotation: [f64; 9],
}

impl CameraSpec {
    pub fn rotation_matrix(&self) -> Mat3 {
        Mat3(self.rotation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub albedo: PathBuf,
    pub depth: PathBuf,
    pub normal: PathBuf,
    pub alpha: PathBuf,
    pub roughness_samples: Vec<PathBuf>,
    pub metallic_samples: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frame_count: usize,
    pub sample_count: usize,
    pub camera: CameraSpec,
    pub environment: PathBuf,
    pub frames: Vec<FrameRecord>,
    /// Flow from frame t to t+1, sampled on frame t's grid; T-1 entries.
    pub flows_forward: Vec<PathBuf>,
    /// Flow from frame t+1 to t, sampled on frame t+1's grid; T-1 entries.
    pub flows_backward: Vec<PathBuf>,
    /// Directory all relative paths resolve against (the manifest's parent).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SequenceManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.frame_count < 1 {
            problems.push("frame_count must be >= 1".to_string());
        }
        if self.sample_count < 1 {
            problems.push("sample_count must be >= 1".to_string());
        }
        if self.frames.len() != self.frame_count {
            problems.push(format!(
                "frame_count is {} but {} frame records are listed",
                self.frame_count,
                self.frames.len()
            ));
        }
        let expected_flows = self.frame_count.saturating_sub(1);
        if self.flows_forward.len() != expected_flows {
            problems.push(format!(
                "expected {} forward flows, found {}",
                expected_flows,
                self.flows_forward.len()
            ));
        }
        if self.flows_backward.len() != expected_flows {
            problems.push(format!(
                "expected {} backward flows, found {}",
                expected_flows,
                self.flows_backward.len()
            ));
        }
        let err = self.camera.rotation_matrix().orthonormality_error();
        if !(err < 1e-4) {
            problems.push(format!(
                "camera rotation is not orthonormal (max |R R^T - I| = {err:.3e}, limit 1e-4)"
            ));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.roughness_samples.len() != self.sample_count {
                problems.push(format!(
                    "frame {t}: expected {} roughness samples, found {}",
                    self.sample_count,
                    frame.roughness_samples.len()
                ));
            }
            if frame.metallic_samples.len() != self.sample_count {
                problems.push(format!(
                    "frame {t}: expected {} metallic samples, found {}",
                    self.sample_count,
                    frame.metallic_samples.len()
                ));
            }
        }
        let mut check_exists = |p: &Path, what: &str| {
            let full = self.resolve(p);
            if !full.is_file() {
                problems.push(format!("{what}: missing file {}", full.display()));
            }
        };
        check_exists(&self.environment, "environment");
        for (t, frame) in self.frames.iter().enumerate() {
            check_exists(&frame.albedo, &format!("frame {t} albedo"));
            check_exists(&frame.depth, &format!("frame {t} depth"));
            check_exists(&frame.normal, &format!("frame {t} normal"));
            check_exists(&frame.alpha, &format!("frame {t} alpha"));
            for (k, p) in frame.roughness_samples.iter().enumerate() {
                check_exists(p, &format!("frame {t} roughness sample {k}"));
            }
            for (k, p) in frame.metallic_samples.iter().enumerate() {
                check_exists(p, &format!("frame {t} metallic sample {k}"));
            }
        }
        for (t, p) in self.flows_forward.iter().enumerate() {
            check_exists(p, &format!("forward flow {t}"));
        }
        for (t, p) in self.flows_backward.iter().enumerate() {
            check_exists(p, &format!("backward flow {t}"));
        }
        problems
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidParam(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Loads and fully validates a manifest; every violation found is reported
/// in one error.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SequenceManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: SequenceManifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, e.column() as u64, format!("manifest json: {e}"))
    })?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let problems = manifest.validate();
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Validation(problems))
    }
}

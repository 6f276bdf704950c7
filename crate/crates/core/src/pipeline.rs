//! Stage drivers chaining the library over an on-disk sequence manifest.
//! Every stage materializes its outputs so runs can be resumed and
//! inspected; `run_pipeline` chains all stages into one output tree.

use crate::config::PipelineConfig;
use crate::ensemble::ensemble_stats;
use crate::error::{Error, Result};
use crate::mapio::{
    read_env_map, read_flo, read_pfm, write_pfm, write_png, PngBitDepth, SequenceManifest,
};
use crate::metrics::{ppl_proxy, psnr, ssim, tpsnr};
use crate::raster::{fb_consistency_mask, BinaryMask, FlowField, ImagePlane};
use crate::shade::{
    composite, env_sample_set, relight, shadow_raymarch, tonemap_gamma, unproject, Camera,
    EnvironmentMap, GBuffer,
};
use crate::stabilize::{solve, SequenceState, SolveResult};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MATERIAL_MAPS: [&str; 2] = ["roughness", "metallic"];

/// Canonical per-frame file name for a map kind inside a stage directory.
pub fn map_path(dir: &Path, prefix: &str, frame: usize) -> PathBuf {
    dir.join(format!("{prefix}_{frame:03}.pfm"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the G-buffer planes of one frame (without material maps).
pub fn load_frame_geometry(
    manifest: &SequenceManifest,
    frame: usize,
) -> Result<(ImagePlane, ImagePlane, ImagePlane, ImagePlane)> {
    let record = &manifest.frames[frame];
    Ok((
        read_pfm(manifest.resolve(&record.albedo))?,
        read_pfm(manifest.resolve(&record.depth))?,
        read_pfm(manifest.resolve(&record.normal))?,
        read_pfm(manifest.resolve(&record.alpha))?,
    ))
}

pub fn camera_from_manifest(manifest: &SequenceManifest) -> Camera {
    Camera {
        fx: manifest.camera.fx,
        fy: manifest.camera.fy,
        cx: manifest.camera.cx,
        cy: manifest.camera.cy,
        rotation: manifest.camera.rotation_matrix(),
    }
}

/// Stage 1: ensemble statistics per frame per material map. Writes
/// mean_<map>_<t>.pfm and sigma_<map>_<t>.pfm into `out_dir`.
pub fn aggregate_stage(
    manifest: &SequenceManifest,
    _cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    for t in 0..manifest.frame_count {
        let record = &manifest.frames[t];
        let alpha = read_pfm(manifest.resolve(&record.alpha))?;
        let foreground = BinaryMask::from_threshold(&alpha)?;
        for (map, paths) in [
            ("roughness", &record.roughness_samples),
            ("metallic", &record.metallic_samples),
        ] {
            let samples: Vec<ImagePlane> = paths
                .iter()
                .map(|p| read_pfm(manifest.resolve(p)))
                .collect::<Result<_>>()?;
            let stats = ensemble_stats(&samples, Some(&foreground))?;
            write_pfm(&stats.mean, map_path(out_dir, &format!("mean_{map}"), t))?;
            write_pfm(&stats.sigma_norm, map_path(out_dir, &format!("sigma_{map}"), t))?;
        }
    }
    Ok(())
}

fn load_sequence(
    dir: &Path,
    prefix: &str,
    frames: usize,
) -> Result<Vec<ImagePlane>> {
    (0..frames).map(|t| read_pfm(map_path(dir, prefix, t))).collect()
}

/// Validity masks for every temporal step, from the manifest's flow pairs
/// and next-frame foreground.
pub fn validity_masks(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
) -> Result<(Vec<FlowField>, Vec<BinaryMask>)> {
    let mut flows = Vec::new();
    let mut masks = Vec::new();
    for t in 0..manifest.frame_count.saturating_sub(1) {
        let fwd = read_flo(manifest.resolve(&manifest.flows_forward[t]))?;
        let bwd = read_flo(manifest.resolve(&manifest.flows_backward[t]))?;
        let alpha_next = read_pfm(manifest.resolve(&manifest.frames[t + 1].alpha))?;
        let fg_next = BinaryMask::from_threshold(&alpha_next)?;
        let mask = fb_consistency_mask(
            &fwd,
            &bwd,
            &fg_next,
            cfg.consistency.abs_thresh,
            cfg.consistency.rel_thresh,
        )?;
        flows.push(fwd);
        masks.push(mask);
    }
    Ok((flows, masks))
}

/// Stage 2: temporal stabilization of both material maps. Reads the
/// aggregate outputs, writes stab_<map>_<t>.pfm plus a per-map
/// optimization trace CSV.
pub fn stabilize_stage(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
    agg_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let frames = manifest.frame_count;
    let (flows, masks) = validity_masks(manifest, cfg)?;
    for map in MATERIAL_MAPS {
        let means = load_sequence(agg_dir, &format!("mean_{map}"), frames)?;
        let sigmas = load_sequence(agg_dir, &format!("sigma_{map}"), frames)?;
        let weights: Vec<ImagePlane> =
            sigmas.iter().map(|s| s.map(|v| 1.0 - v)).collect();
        let state =
            SequenceState::from_observations(means, weights, masks.clone(), flows.clone())?;
        let SolveResult { frames: solved, trace } = solve(&state, &cfg.stabilize, 0)?;
        for (t, frame) in solved.iter().enumerate() {
            write_pfm(frame, map_path(out_dir, &format!("stab_{map}"), t))?;
        }
        let mut csv = String::from("window,iteration,objective\n");
        for p in &trace {
            writeln!(csv, "{},{},{}", p.window, p.iteration, p.objective).unwrap();
        }
        write_text(&out_dir.join(format!("trace_{map}.csv")), &csv)?;
    }
    Ok(())
}

/// Stage 3: relight every frame from the stabilized (or any) material maps.
/// Writes relit_hdr_<t>.pfm and relit_ldr_<t>.png; optionally dumps one
/// shadow map per light direction for the first frame.
pub fn relight_stage(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
    maps_dir: &Path,
    maps_prefix: &str,
    out_dir: &Path,
    dump_shadows: bool,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let env = EnvironmentMap::new(read_env_map(&manifest.resolve(&manifest.environment))?)?;
    let lights = env_sample_set(&env, cfg.shading.n_theta, cfg.shading.n_phi)?;
    let cam = camera_from_manifest(manifest);
    for t in 0..manifest.frame_count {
        let (albedo, depth, normal, alpha) = load_frame_geometry(manifest, t)?;
        let roughness = read_pfm(map_path(maps_dir, &format!("{maps_prefix}roughness"), t))?;
        let metallic = read_pfm(map_path(maps_dir, &format!("{maps_prefix}metallic"), t))?;
        // stabilization can nudge values a hair outside the unit range
        let g = GBuffer {
            albedo,
            depth,
            normal,
            roughness: roughness.map(|v| v.clamp(0.0, 1.0)),
            metallic: metallic.map(|v| v.clamp(0.0, 1.0)),
            alpha,
        };
        let hdr = relight(&g, &cam, &lights, &cfg.shadow)?;
        write_pfm(&hdr, map_path(out_dir, "relit_hdr", t))?;
        let ldr = tonemap_gamma(&hdr, cfg.shading.exposure, cfg.shading.gamma)?;
        write_png(&ldr, out_dir.join(format!("relit_ldr_{t:03}.png")), PngBitDepth::Eight)?;

        if dump_shadows && t == 0 && cfg.shadow.enabled {
            let shadow_dir = out_dir.join("shadow_maps");
            ensure_dir(&shadow_dir)?;
            let positions = unproject(&g.depth, &cam)?;
            for (j, light) in lights.samples.iter().enumerate() {
                let l_view = cam.rotation.transpose_mul_vec(light.direction);
                let map = shadow_raymarch(&positions, &g.depth, &g.alpha, &cam, l_view, &cfg.shadow)?;
                write_pfm(&map, shadow_dir.join(format!("shadow_{j:04}.pfm")))?;
            }
        }
    }
    Ok(())
}

/// Stage 4: composite the tonemapped foreground over a background plate
/// (black if none is given), in gamma space, using the manifest alpha.
pub fn composite_stage(
    manifest: &SequenceManifest,
    relit_dir: &Path,
    background: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    for t in 0..manifest.frame_count {
        let fg = crate::mapio::read_png(&relit_dir.join(format!("relit_ldr_{t:03}.png")))?;
        let alpha = read_pfm(manifest.resolve(&manifest.frames[t].alpha))?;
        let bg = match background {
            Some(path) => {
                let img = crate::mapio::read_png(path)?;
                if !img.same_shape(&fg) {
                    return Err(Error::size_mismatch(
                        "background vs foreground",
                        format!("{}x{}x{}", fg.width(), fg.height(), fg.channels()),
                        format!("{}x{}x{}", img.width(), img.height(), img.channels()),
                    ));
                }
                img
            }
            None => ImagePlane::new(fg.width(), fg.height(), fg.channels()),
        };
        let out = composite(&fg, &alpha, &bg)?;
        write_png(&out, out_dir.join(format!("composite_{t:03}.png")), PngBitDepth::Eight)?;
    }
    Ok(())
}

/// Stage 5: temporal metrics of the aggregated and stabilized material
/// sequences plus, when a reference directory is given, per-frame PSNR and
/// SSIM of the relit LDR frames against it. Returns the CSV text
/// ("frame,metric,value"; sequence-level rows use frame = -1).
pub fn metrics_stage(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
    agg_dir: Option<&Path>,
    stab_dir: Option<&Path>,
    compare: Option<(&Path, &Path)>,
    out_csv: &Path,
) -> Result<String> {
    let frames = manifest.frame_count;
    let mut csv = String::from("frame,metric,value\n");
    let fmt = |v: f64| {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{v}")
        }
    };
    if frames >= 2 {
        let (flows, masks) = validity_masks(manifest, cfg)?;
        for (label, dir, prefix) in [
            ("aggregated", agg_dir, "mean_"),
            ("stabilized", stab_dir, "stab_"),
        ] {
            let Some(dir) = dir else { continue };
            for map in MATERIAL_MAPS {
                let seq = load_sequence(dir, &format!("{prefix}{map}"), frames)?;
                let t = tpsnr(&seq, &flows, &masks)?;
                writeln!(csv, "-1,{label}_{map}_tpsnr,{}", fmt(t)).unwrap();
                if seq[0].width() >= 11 && seq[0].height() >= 11 {
                    let p = ppl_proxy(&seq)?;
                    writeln!(csv, "-1,{label}_{map}_ppl,{}", fmt(p)).unwrap();
                }
            }
        }
    }
    if let Some((dir_a, dir_b)) = compare {
        for t in 0..frames {
            let a = read_pfm(map_path(dir_a, "relit_hdr", t))?;
            let b = read_pfm(map_path(dir_b, "relit_hdr", t))?;
            writeln!(csv, "{t},psnr,{}", fmt(psnr(&a, &b, 1.0)?)).unwrap();
            if a.width() >= 11 && a.height() >= 11 {
                writeln!(csv, "{t},ssim,{}", fmt(ssim(&a, &b)?)).unwrap();
            }
        }
    }
    write_text(out_csv, &csv)?;
    Ok(csv)
}

/// All stages in order: aggregate, stabilize, relight, composite, metrics.
/// Stage outputs land in subdirectories of `out_dir`.
pub fn run_pipeline(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
    background: Option<&Path>,
    dump_shadows: bool,
) -> Result<()> {
    let agg = out_dir.join("aggregate");
    let stab = out_dir.join("stabilize");
    let relit = out_dir.join("relight");
    let comp = out_dir.join("composite");
    aggregate_stage(manifest, cfg, &agg)?;
    stabilize_stage(manifest, cfg, &agg, &stab)?;
    relight_stage(manifest, cfg, &stab, "stab_", &relit, dump_shadows)?;
    composite_stage(manifest, &relit, background, &comp)?;
    metrics_stage(
        manifest,
        cfg,
        Some(&agg),
        Some(&stab),
        None,
        &out_dir.join("metrics.csv"),
    )?;
    Ok(())
}

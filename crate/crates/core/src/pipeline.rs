//! Stage drivers shared by the CLI subcommands and the end-to-end `pipeline` run.
//!
//! Output layout under an output directory:
//!
//! | path | content |
//! |------|---------|
//! | `warp/<t>.{rgb.png,depth.pfm,flags.png}` | merged hierarchical warp per target |
//! | `suppressed/<t>.{rgb.png,depth.pfm,flags.png}` | warp after occlusion suppression |
//! | `cond/<t>.png`, `cond/<t>.mask.png` | conditioning image and its validity mask |
//! | `fused.ply`, `counts/<view>.pfm` | fused cloud and per-view consistency counts |
//! | `global/<t>.{png,mask.png,depth.pfm}` | fused cloud projected into each target |
//! | `confidence/<view>.pfm`, `confidence/image_weights.txt` | supervision weights |
//!
//! Flags rasters are 16-bit: bit 0 valid, bit 1 reliable origin, bit 2 low-res fill,
//! bit 3 suppressed, high byte = source view + 1 (0 = none). Every file round trips
//! exactly, so running the stages one by one gives the same bytes as `run_pipeline`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::fusion::{fuse_with_counts, pixel_confidence, project_cloud, FusedCloud, FusedPoint, FusionError, FusionThresholds};
use crate::geometry::Camera;
use crate::metrics::{
    closeup_camera, image_confidence, psnr, ssim, weighted_loss, CloseupLimits, CloseupMode,
    ConfidenceWeights, MetricsError,
};
use crate::occlusion::suppress;
use crate::raster::{Image, Mask, Raster};
use crate::scene_io::{
    decode_png_mask, decode_png_rgb, decode_png_u16, encode_png_mask, encode_png_rgb,
    encode_png_u16, load_dataset, read_cameras, read_file, read_pfm, read_ply, write_atomic,
    write_cameras, write_dataset, write_pfm, write_ply, CameraList, PointCloud, SceneIoError,
    ViewRecord,
};
use crate::synth::{render_scene, SceneSpec, SynthError};
use crate::warp::{hierarchical_warp, merge_views, HierarchicalParams, WarpError, WarpResult};

const FLAG_VALID: u16 = 1;
const FLAG_RELIABLE: u16 = 1 << 1;
const FLAG_FILLED: u16 = 1 << 2;
const FLAG_SUPPRESSED: u16 = 1 << 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    SceneIo(#[from] SceneIoError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    /// 2 for bad inputs or parameters, 1 for I/O and other internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::SceneIo(e) if !e.is_input_error() => 1,
            PipelineError::Synth(SynthError::Camera(e)) if !e.is_input_error() => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn input(msg: impl Into<String>) -> PipelineError {
    PipelineError::Input(msg.into())
}

fn parse_err(path: &Path, msg: String) -> PipelineError {
    SceneIoError::Parse {
        path: path.to_path_buf(),
        msg,
    }
    .into()
}

/// Indices of the reference views: the named ids, or the first two views.
pub fn select_refs(views: &[ViewRecord], ids: Option<&[String]>) -> Result<Vec<usize>> {
    match ids {
        Some(ids) if !ids.is_empty() => ids
            .iter()
            .map(|id| {
                views
                    .iter()
                    .position(|v| &v.id == id)
                    .ok_or_else(|| input(format!("unknown reference view '{id}'")))
            })
            .collect(),
        _ if views.is_empty() => Err(input("dataset has no views")),
        _ => Ok((0..views.len().min(2)).collect()),
    }
}

/// Hierarchical warp of every reference into `target`, merged by camera proximity.
pub fn warp_target(
    views: &[ViewRecord],
    refs: &[usize],
    target: &Camera,
    params: &HierarchicalParams,
) -> Result<WarpResult> {
    let results = refs
        .iter()
        .map(|&r| hierarchical_warp(&views[r], target, params))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cams: Vec<Camera> = refs.iter().map(|&r| views[r].camera).collect();
    Ok(merge_views(&results, &cams, target)?)
}

fn warp_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{id}.rgb.png")),
        dir.join(format!("{id}.depth.pfm")),
        dir.join(format!("{id}.flags.png")),
    ]
}

pub fn encode_flags(warp: &WarpResult) -> Result<Raster<u16>> {
    let mut data = Vec::with_capacity(warp.valid.len());
    for i in 0..warp.valid.len() {
        let mut f = 0u16;
        if warp.valid.as_slice()[i] {
            f |= FLAG_VALID;
        }
        if warp.reliable_origin.as_slice()[i] {
            f |= FLAG_RELIABLE;
        }
        if warp.filled.as_slice()[i] {
            f |= FLAG_FILLED;
        }
        if warp.suppressed.as_slice()[i] {
            f |= FLAG_SUPPRESSED;
        }
        if let Some(s) = warp.source_view.as_slice()[i] {
            if s >= 255 {
                return Err(input(format!("source view index {s} does not fit the flags raster")));
            }
            f |= ((s + 1) as u16) << 8;
        }
        data.push(f);
    }
    Ok(Raster::from_vec(warp.width(), warp.height(), data).unwrap())
}

pub fn write_warp(dir: &Path, id: &str, warp: &WarpResult) -> Result<()> {
    let [rgb, depth, flags] = warp_paths(dir, id);
    write_atomic(&rgb, &encode_png_rgb(&warp.rgb))?;
    write_pfm(&depth, &warp.depth)?;
    write_atomic(&flags, &encode_png_u16(&encode_flags(warp)?))?;
    Ok(())
}

pub fn read_warp(dir: &Path, id: &str) -> Result<WarpResult> {
    let [rgb_p, depth_p, flags_p] = warp_paths(dir, id);
    let rgb = decode_png_rgb(&read_file(&rgb_p)?).map_err(|m| parse_err(&rgb_p, m))?;
    let depth = read_pfm(&depth_p)?;
    let flags = decode_png_u16(&read_file(&flags_p)?).map_err(|m| parse_err(&flags_p, m))?;
    if rgb.dims() != depth.dims() || rgb.dims() != flags.dims() {
        return Err(input(format!("warp '{id}': rgb, depth and flags sizes differ")));
    }
    let bit = |b: u16| flags.map(|f| f & b != 0);
    let source_view = flags.map(|f| match f >> 8 {
        0 => None,
        s => Some(s as u32 - 1),
    });
    Ok(WarpResult {
        rgb,
        depth,
        valid: bit(FLAG_VALID),
        source_view,
        reliable_origin: bit(FLAG_RELIABLE),
        filled: bit(FLAG_FILLED),
        suppressed: bit(FLAG_SUPPRESSED),
    })
}

/// Conditioning image and validity mask of a target.
pub fn write_conditioning(out: &Path, id: &str, warp: &WarpResult) -> Result<()> {
    let dir = out.join("cond");
    write_atomic(&dir.join(format!("{id}.png")), &encode_png_rgb(&warp.rgb))?;
    write_atomic(&dir.join(format!("{id}.mask.png")), &encode_png_mask(&warp.valid))?;
    Ok(())
}

/// Stage summary printed by the CLI.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary(pub String);

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Renders an analytic scene and writes it as a dataset.
pub fn stage_synth(scene_path: &Path, out: &Path) -> Result<Summary> {
    let text = String::from_utf8(read_file(scene_path)?)
        .map_err(|_| parse_err(scene_path, "scene file is not UTF-8".into()))?;
    let scene = SceneSpec::from_toml(&text)?;
    let renders = render_scene(&scene)?;
    if renders.is_empty() {
        return Err(input("scene defines no cameras"));
    }
    let views: Vec<ViewRecord> = renders.into_iter().map(|r| r.view).collect();
    let manifest = write_dataset(out, &views)?;
    Ok(Summary(format!(
        "synth: {} views written, manifest {}",
        views.len(),
        manifest.display()
    )))
}

pub struct WarpStage<'a> {
    pub views: &'a [ViewRecord],
    pub refs: &'a [usize],
    pub targets: &'a [(String, Camera)],
    pub params: HierarchicalParams,
}

impl WarpStage<'_> {
    /// Warps every target and writes `warp/<t>.*` under `out`.
    pub fn run(&self, out: &Path) -> Result<(Vec<WarpResult>, Summary)> {
        let mut results = Vec::with_capacity(self.targets.len());
        for (id, cam) in self.targets {
            let w = warp_target(self.views, self.refs, cam, &self.params)?;
            write_warp(&out.join("warp"), id, &w)?;
            results.push(w);
        }
        let densities: Vec<f64> = results.iter().map(WarpResult::density).collect();
        Ok((
            results,
            Summary(format!(
                "warp: {} targets from {} references, mean density {:.4}",
                self.targets.len(),
                self.refs.len(),
                mean(&densities)
            )),
        ))
    }
}

/// Suppresses every target warp, writing `suppressed/<t>.*` and the conditioning pair.
pub fn stage_suppress(
    warps: &[WarpResult],
    ids: &[String],
    tau_d: f64,
    out: &Path,
) -> Result<(Vec<WarpResult>, Summary)> {
    if !(tau_d.is_finite() && tau_d >= 0.0) {
        return Err(input(format!("tau-d must be a nonnegative number, got {tau_d}")));
    }
    let mut total = 0usize;
    let mut results = Vec::with_capacity(warps.len());
    for (w, id) in warps.iter().zip(ids) {
        let (s, mask) = suppress(w, tau_d);
        total += mask.suppressed_count();
        write_warp(&out.join("suppressed"), id, &s)?;
        write_conditioning(out, id, &s)?;
        results.push(s);
    }
    Ok((
        results,
        Summary(format!(
            "suppress: {} targets, {} pixels suppressed (tau_d {})",
            ids.len(),
            total,
            tau_d
        )),
    ))
}

/// Fuses all views, writing `fused.ply` and `counts/<view>.pfm`.
pub fn stage_fuse(
    views: &[ViewRecord],
    thresholds: &FusionThresholds,
    dedup: Option<f64>,
    out: &Path,
) -> Result<Summary> {
    let (maps, mut cloud) = fuse_with_counts(views, thresholds)?;
    if let Some(edge) = dedup {
        if !(edge.is_finite() && edge > 0.0) {
            return Err(input(format!("dedup voxel edge must be positive, got {edge}")));
        }
        cloud = cloud.dedup_voxels(edge);
    }
    write_ply(&out.join("fused.ply"), &cloud.to_point_cloud())?;
    for (v, m) in views.iter().zip(&maps) {
        write_pfm(&out.join("counts").join(format!("{}.pfm", v.id)), &m.map(|&c| c as f32))?;
    }
    Ok(Summary(format!(
        "fuse: {} points from {} views",
        cloud.len(),
        views.len()
    )))
}

fn cloud_from_points(pc: &PointCloud) -> FusedCloud {
    let points = pc
        .positions
        .iter()
        .zip(&pc.colors)
        .enumerate()
        .map(|(k, (p, c))| FusedPoint {
            position: Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64),
            color: c.map(|v| v as f64),
            support: pc.counts.as_ref().map_or(0, |n| n[k]),
            view: 0,
            pixel: (0, 0),
        })
        .collect();
    FusedCloud { points }
}

/// Projects a point cloud file into every target, writing `global/<t>.*`.
pub fn stage_project(cloud_path: &Path, targets: &[(String, Camera)], out: &Path) -> Result<Summary> {
    let cloud = cloud_from_points(&read_ply(cloud_path)?);
    let dir = out.join("global");
    let mut densities = Vec::new();
    for (id, cam) in targets {
        let g = project_cloud(&cloud, cam);
        write_atomic(&dir.join(format!("{id}.png")), &encode_png_rgb(&g.rgb))?;
        write_atomic(&dir.join(format!("{id}.mask.png")), &encode_png_mask(&g.valid))?;
        write_pfm(&dir.join(format!("{id}.depth.pfm")), &g.depth)?;
        densities.push(g.density());
    }
    Ok(Summary(format!(
        "project: {} points into {} targets, mean density {:.4}",
        cloud.len(),
        targets.len(),
        mean(&densities)
    )))
}

/// Reads `counts/<view>.pfm` maps written by the fuse stage.
pub fn read_counts(dir: &Path, views: &[ViewRecord]) -> Result<Vec<Raster<u32>>> {
    views
        .iter()
        .map(|v| {
            let path = dir.join(format!("{}.pfm", v.id));
            let m = read_pfm(&path)?;
            if m.dims() != v.depth.dims() {
                return Err(input(format!("count map {} does not match view size", path.display())));
            }
            if m.as_slice().iter().any(|&c| !(c >= 0.0 && c.fract() == 0.0)) {
                return Err(parse_err(&path, "counts must be nonnegative integers".into()));
            }
            Ok(m.map(|&c| c as u32))
        })
        .collect()
}

/// Writes `confidence/<view>.pfm` pixel weights and per-target image weights.
pub fn stage_confidence(
    views: &[ViewRecord],
    counts: &[Raster<u32>],
    refs: &[usize],
    targets: &[(String, Camera)],
    tau_num: u32,
    out: &Path,
) -> Result<Summary> {
    if tau_num == 0 {
        return Err(input("tau-num must be at least 1"));
    }
    let dir = out.join("confidence");
    for (v, m) in views.iter().zip(counts) {
        let w = pixel_confidence(m, tau_num);
        write_pfm(&dir.join(format!("{}.pfm", v.id)), &w.map(|&x| x as f32))?;
    }
    let ref_poses: Vec<_> = refs.iter().map(|&r| views[r].camera.pose).collect();
    let mut text = String::from("# target w_image\n");
    for (id, cam) in targets {
        let w = image_confidence(&cam.pose, &ref_poses).ok_or_else(|| input("no reference views"))?;
        writeln!(text, "{id} {w}").unwrap();
    }
    write_atomic(&dir.join("image_weights.txt"), text.as_bytes())?;
    Ok(Summary(format!(
        "confidence: {} pixel weight maps, {} image weights (tau_num {})",
        views.len(),
        targets.len(),
        tau_num
    )))
}

/// Builds close-up cameras from the named views (all views when `ids` is empty).
pub fn closeup_targets(
    views: &[ViewRecord],
    ids: &[String],
    mode: CloseupMode,
    factor: f64,
    limits: &CloseupLimits,
) -> Result<Vec<(String, Camera)>> {
    let chosen: Vec<&ViewRecord> = if ids.is_empty() {
        views.iter().collect()
    } else {
        ids.iter()
            .map(|id| {
                views
                    .iter()
                    .find(|v| &v.id == id)
                    .ok_or_else(|| input(format!("unknown view '{id}'")))
            })
            .collect::<Result<_>>()?
    };
    let tag = match mode {
        CloseupMode::Zoom => "zoom",
        CloseupMode::Dolly => "dolly",
    };
    chosen
        .into_iter()
        .map(|v| {
            let depth_max = v.depth.max_valid().unwrap_or(0.0) as f64;
            let cam = closeup_camera(&v.camera, mode, factor, depth_max, limits)?;
            Ok((format!("{}_{tag}{factor}", v.id), cam))
        })
        .collect()
}

pub fn stage_closeup_cams(
    manifest: &Path,
    ids: &[String],
    mode: CloseupMode,
    factor: f64,
    limits: &CloseupLimits,
    out_file: &Path,
) -> Result<Summary> {
    let views = load_dataset(manifest)?;
    let cams = closeup_targets(&views, ids, mode, factor, limits)?;
    write_cameras(
        out_file,
        &CameraList::from_cameras(cams.iter().map(|(id, c)| (id.as_str(), c))),
    )?;
    Ok(Summary(format!(
        "closeup-cams: {} cameras written to {}",
        cams.len(),
        out_file.display()
    )))
}

/// Inputs of the metrics report.
pub struct MetricsInputs<'a> {
    pub render: &'a Path,
    pub reference: &'a Path,
    pub mask: Option<&'a Path>,
    pub pixel_weights: Option<&'a Path>,
    pub w_image: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub weighted_loss: f64,
    pub valid_pixels: usize,
}

impl MetricsReport {
    pub fn table(&self) -> String {
        format!(
            "metric         value\n\
             psnr_db        {:.6}\n\
             ssim           {:.6}\n\
             weighted_loss  {:.6}\n\
             valid_pixels   {}\n",
            self.psnr, self.ssim, self.weighted_loss, self.valid_pixels
        )
    }

    pub fn key_values(&self) -> String {
        format!(
            "psnr_db = {:?}\nssim = {:?}\nweighted_loss = {:?}\nvalid_pixels = {}\n",
            self.psnr, self.ssim, self.weighted_loss, self.valid_pixels
        )
    }
}

fn read_png_rgb(path: &Path) -> Result<Image> {
    decode_png_rgb(&read_file(path)?).map_err(|m| parse_err(path, m))
}

pub fn compute_metrics(inp: &MetricsInputs) -> Result<MetricsReport> {
    let render = read_png_rgb(inp.render)?;
    let target = read_png_rgb(inp.reference)?;
    let dims = render.dims();
    let valid: Mask = match inp.mask {
        Some(p) => decode_png_mask(&read_file(p)?).map_err(|m| parse_err(p, m))?,
        None => Raster::filled(dims.0, dims.1, true),
    };
    let w_pixel = match inp.pixel_weights {
        Some(p) => read_pfm(p)?.map(|&w| w as f64),
        None => Raster::filled(dims.0, dims.1, 1.0),
    };
    if !(inp.w_image.is_finite() && inp.w_image >= 0.0) {
        return Err(input(format!("w-image must be nonnegative, got {}", inp.w_image)));
    }
    let weights = ConfidenceWeights {
        w_image: inp.w_image,
        w_pixel,
        lambda: inp.lambda,
    };
    Ok(MetricsReport {
        psnr: psnr(&render, &target)?,
        ssim: ssim(&render, &target)?,
        weighted_loss: weighted_loss(&render, &target, &weights, &valid)?,
        valid_pixels: valid.count(),
    })
}

pub fn stage_metrics(inp: &MetricsInputs, out: &Path) -> Result<Summary> {
    let r = compute_metrics(inp)?;
    write_atomic(&out.join("metrics.txt"), r.table().as_bytes())?;
    write_atomic(&out.join("metrics.toml"), r.key_values().as_bytes())?;
    Ok(Summary(format!(
        "metrics: psnr {:.4} dB, ssim {:.4}, weighted loss {:.6}",
        r.psnr, r.ssim, r.weighted_loss
    )))
}

/// Parameters of the end-to-end run.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub refs: Option<Vec<String>>,
    pub warp: HierarchicalParams,
    pub suppress: bool,
    pub tau_d: f64,
    pub fusion: FusionThresholds,
    pub dedup: Option<f64>,
}

/// warp → suppress → fuse → project → confidence.
pub fn run_pipeline(
    manifest: &Path,
    targets_path: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<Summary>> {
    let views = load_dataset(manifest)?;
    let targets = read_cameras(targets_path)?;
    let refs = select_refs(&views, config.refs.as_deref())?;
    let ids: Vec<String> = targets.iter().map(|(id, _)| id.clone()).collect();

    let mut log = Vec::new();
    let (warps, s) = WarpStage {
        views: &views,
        refs: &refs,
        targets: &targets,
        params: config.warp,
    }
    .run(out)?;
    log.push(s);
    if config.suppress {
        log.push(stage_suppress(&warps, &ids, config.tau_d, out)?.1);
    } else {
        for (w, id) in warps.iter().zip(&ids) {
            write_conditioning(out, id, w)?;
        }
        log.push(Summary(format!("suppress: skipped for {} targets", ids.len())));
    }
    log.push(stage_fuse(&views, &config.fusion, config.dedup, out)?);
    log.push(stage_project(&out.join("fused.ply"), &targets, out)?);
    let counts = read_counts(&out.join("counts"), &views)?;
    log.push(stage_confidence(
        &views,
        &counts,
        &refs,
        &targets,
        config.fusion.tau_num,
        out,
    )?);
    Ok(log)
}

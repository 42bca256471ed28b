//! Forward warping of reference views into target cameras.
//!
//! Source pixels are back-projected with their depth, projected into the target, rounded
//! to the nearest target pixel and z-buffered by minimum depth. Depths closer than
//! [`DEPTH_TIE_EPS`] tie, and ties go to the smaller row-major source index, so results do
//! not depend on how work is scheduled across threads.
//!
//! [`hierarchical_warp`] runs the two-resolution scheme on the reliable and the
//! unreliable part of a view separately and overlays them with reliable pixels first;
//! [`merge_views`] resolves conflicts between references by camera distance.

use nalgebra::Matrix3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Camera;
use crate::raster::{is_valid_depth, DepthMap, Image, Mask, Raster};
use crate::scene_io::ViewRecord;

pub const DEPTH_TIE_EPS: f64 = 1e-12;

pub const DEFAULT_CONFIDENCE_QUANTILE: f64 = 0.9;
pub const DEFAULT_GRAD_REL_THRESHOLD: f64 = 0.05;

/// Candidate low-resolution scales, tried in order.
pub const LOW_RES_SCALES: [usize; 3] = [2, 4, 8];
/// Minimum valid fraction for a low-resolution warp to be accepted.
pub const LOW_RES_MIN_DENSITY: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WarpError {
    #[error("view '{0}' has no valid depth pixels")]
    NoValidDepth(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("no warp results to merge")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A warped image on a target grid.
///
/// Invalid pixels hold zero rgb and depth, no source view and all flags false.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub rgb: Image,
    pub depth: DepthMap,
    pub valid: Mask,
    pub source_view: Raster<Option<u32>>,
    /// The winning source pixel belonged to the reliable region.
    pub reliable_origin: Mask,
    /// The pixel was filled from the upsampled low-resolution level.
    pub filled: Mask,
    /// The pixel was removed by occlusion suppression (it is invalid now).
    pub suppressed: Mask,
}

impl WarpResult {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            rgb: Raster::filled(width, height, [0.0; 3]),
            depth: Raster::filled(width, height, 0.0),
            valid: Raster::filled(width, height, false),
            source_view: Raster::filled(width, height, None),
            reliable_origin: Raster::filled(width, height, false),
            filled: Raster::filled(width, height, false),
            suppressed: Raster::filled(width, height, false),
        }
    }

    pub fn width(&self) -> usize {
        self.valid.width()
    }

    pub fn height(&self) -> usize {
        self.valid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.valid.dims()
    }

    /// Fraction of valid pixels.
    pub fn density(&self) -> f64 {
        let n = self.valid.len();
        if n == 0 {
            0.0
        } else {
            self.valid.count() as f64 / n as f64
        }
    }

    /// Copies pixel `src` of `other` into pixel `dst` of `self`.
    fn copy_pixel(&mut self, dst: usize, other: &WarpResult, src: usize) {
        self.rgb.as_mut_slice()[dst] = other.rgb.as_slice()[src];
        self.depth.as_mut_slice()[dst] = other.depth.as_slice()[src];
        self.valid.as_mut_slice()[dst] = other.valid.as_slice()[src];
        self.source_view.as_mut_slice()[dst] = other.source_view.as_slice()[src];
        self.reliable_origin.as_mut_slice()[dst] = other.reliable_origin.as_slice()[src];
        self.filled.as_mut_slice()[dst] = other.filled.as_slice()[src];
        self.suppressed.as_mut_slice()[dst] = other.suppressed.as_slice()[src];
    }

    pub(crate) fn clear_pixel(&mut self, i: usize) {
        self.rgb.as_mut_slice()[i] = [0.0; 3];
        self.depth.as_mut_slice()[i] = 0.0;
        self.valid.as_mut_slice()[i] = false;
        self.source_view.as_mut_slice()[i] = None;
        self.reliable_origin.as_mut_slice()[i] = false;
        self.filled.as_mut_slice()[i] = false;
    }

    /// Relabels every valid pixel as coming from view `index`.
    pub fn with_source_view(mut self, index: u32) -> Self {
        for (s, &v) in self
            .source_view
            .as_mut_slice()
            .iter_mut()
            .zip(self.valid.as_slice())
        {
            *s = v.then_some(index);
        }
        self
    }
}

/// Partition of a view's valid-depth pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityMasks {
    pub reliable: Mask,
    pub unreliable: Mask,
}

/// Which source pixels a warp uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    All,
    Reliable,
    Unreliable,
}

/// Per-pixel depth-edge flags from a 3×3 Sobel operator on depth.
///
/// The gradient is normalized to depth units per pixel (kernel sum 8) and a pixel is an
/// edge when its magnitude exceeds `grad_rel_threshold × depth`. Samples outside the image
/// clamp to the border; invalid neighbors take the center depth.
pub fn depth_edges(depth: &DepthMap, grad_rel_threshold: f64) -> Mask {
    let (w, h) = depth.dims();
    let rows: Vec<Vec<bool>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let c = *depth.get(x, y);
                    if !is_valid_depth(c) {
                        return false;
                    }
                    let c = c as f64;
                    let at = |dx: isize, dy: isize| -> f64 {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let d = *depth.get(xx, yy);
                        if is_valid_depth(d) {
                            d as f64
                        } else {
                            c
                        }
                    };
                    let gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1))
                        - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
                    let gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1))
                        - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
                    let mag = (gx * gx + gy * gy).sqrt() / 8.0;
                    mag > grad_rel_threshold * c
                })
                .collect()
        })
        .collect();
    Raster::from_vec(w, h, rows.into_iter().flatten().collect()).unwrap()
}

/// Confidence threshold such that the top `quantile` fraction of `values` lies at or
/// above it.
fn lower_quantile(mut values: Vec<f32>, quantile: f64) -> f32 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    // the epsilon absorbs representation error in (1 - q) * n, e.g. 0.1 * 100
    let k = (((1.0 - quantile) * n as f64) + 1e-9).floor() as usize;
    values[k.min(n - 1)]
}

/// Splits valid-depth pixels into reliable and unreliable sets.
///
/// Reliable pixels have confidence at or above the `(1 - confidence_quantile)` lower
/// quantile of valid-pixel confidences and are not depth edges.
pub fn split_reliability(
    view: &ViewRecord,
    confidence_quantile: f64,
    grad_rel_threshold: f64,
) -> Result<ReliabilityMasks, WarpError> {
    if !(confidence_quantile > 0.0 && confidence_quantile < 1.0) {
        return Err(WarpError::InvalidParameter(format!(
            "confidence quantile must lie in (0, 1), got {confidence_quantile}"
        )));
    }
    if !(grad_rel_threshold > 0.0) {
        return Err(WarpError::InvalidParameter(format!(
            "gradient threshold must be positive, got {grad_rel_threshold}"
        )));
    }
    let valid = view.depth.valid_mask();
    let confidences: Vec<f32> = view
        .confidence
        .as_slice()
        .iter()
        .zip(valid.as_slice())
        .filter_map(|(&c, &v)| v.then_some(c))
        .collect();
    if confidences.is_empty() {
        return Err(WarpError::NoValidDepth(view.id.clone()));
    }
    let threshold = lower_quantile(confidences, confidence_quantile);
    let edges = depth_edges(&view.depth, grad_rel_threshold);
    let (w, h) = valid.dims();
    let mut reliable = Raster::filled(w, h, false);
    let mut unreliable = Raster::filled(w, h, false);
    for i in 0..valid.len() {
        if !valid.as_slice()[i] {
            continue;
        }
        let ok = view.confidence.as_slice()[i] >= threshold && !edges.as_slice()[i];
        reliable.as_mut_slice()[i] = ok;
        unreliable.as_mut_slice()[i] = !ok;
    }
    Ok(ReliabilityMasks {
        reliable,
        unreliable,
    })
}

/// One point landing on a target pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub pixel: u32,
    pub depth: f64,
    pub source: u32,
}

/// Z-buffers splats in iteration order, returning the winner per pixel.
///
/// A splat replaces the current winner only when it is nearer by more than
/// [`DEPTH_TIE_EPS`]; feed splats in ascending source order for the tie rule.
pub(crate) fn resolve_splats(
    pixel_count: usize,
    splats: impl IntoIterator<Item = Splat>,
) -> Vec<Option<(f64, u32)>> {
    let mut best: Vec<Option<(f64, u32)>> = vec![None; pixel_count];
    for s in splats {
        let slot = &mut best[s.pixel as usize];
        match slot {
            Some((d, _)) if !(s.depth < *d - DEPTH_TIE_EPS) => {}
            _ => *slot = Some((s.depth, s.source)),
        }
    }
    best
}

/// Warps the selected pixels of `view` into `target` on a grid downsampled by `scale`.
pub fn forward_warp(
    view: &ViewRecord,
    masks: &ReliabilityMasks,
    region: Region,
    target: &Camera,
    scale: usize,
) -> WarpResult {
    assert!(scale >= 1, "scale must be positive");
    let grid = if scale == 1 {
        *target
    } else {
        target.downsampled(scale)
    };
    let (tw, th) = (grid.width(), grid.height());
    let src = &view.camera;
    let (sw, sh) = (src.width(), src.height());

    // source camera frame -> target camera frame
    let rs = src.pose.rotation();
    let rt = grid.pose.rotation();
    let rel: Matrix3<f64> = rt * rs.transpose();
    let offset = grid.pose.translation() - rel * src.pose.translation();

    let selected = |i: usize| match region {
        Region::All => masks.reliable.as_slice()[i] || masks.unreliable.as_slice()[i],
        Region::Reliable => masks.reliable.as_slice()[i],
        Region::Unreliable => masks.unreliable.as_slice()[i],
    };
    let depth = view.depth.as_slice();

    let rows: Vec<Vec<Splat>> = (0..sh)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..sw {
                let i = y * sw + x;
                let d = depth[i];
                if !is_valid_depth(d) || !selected(i) {
                    continue;
                }
                let pc = src.unproject_camera_frame(x as f64, y as f64, d as f64);
                let pt = rel * pc + offset;
                let Ok(p) = grid.project_camera_frame(&pt) else {
                    continue;
                };
                if !((p.depth as f32) > 0.0) {
                    continue;
                }
                if let Some((tx, ty)) = grid.nearest_pixel(p.u, p.v) {
                    out.push(Splat {
                        pixel: (ty * tw + tx) as u32,
                        depth: p.depth,
                        source: i as u32,
                    });
                }
            }
            out
        })
        .collect();

    let winners = resolve_splats(tw * th, rows.into_iter().flatten());
    let mut out = WarpResult::empty(tw, th);
    for (t, w) in winners.into_iter().enumerate() {
        if let Some((d, s)) = w {
            let s = s as usize;
            out.rgb.as_mut_slice()[t] = view.image.as_slice()[s];
            out.depth.as_mut_slice()[t] = d as f32;
            out.valid.as_mut_slice()[t] = true;
            out.source_view.as_mut_slice()[t] = Some(0);
            out.reliable_origin.as_mut_slice()[t] = masks.reliable.as_slice()[s];
        }
    }
    out
}

/// Fills invalid pixels of `high` from the nearest-neighbor upsample of `low`.
///
/// Pixels valid in `high` are copied unchanged; filled pixels are flagged in `filled`.
pub fn combine_levels(
    high: &WarpResult,
    low: &WarpResult,
    scale: usize,
) -> Result<WarpResult, WarpError> {
    if scale == 0 {
        return Err(WarpError::InvalidParameter("scale must be positive".into()));
    }
    let (w, h) = high.dims();
    let expect = (w.div_ceil(scale), h.div_ceil(scale));
    if low.dims() != expect {
        return Err(WarpError::GridMismatch(format!(
            "low level is {}x{}, expected {}x{} for a {w}x{h} grid at scale {scale}",
            low.width(),
            low.height(),
            expect.0,
            expect.1
        )));
    }
    let mut out = high.clone();
    let lw = low.width();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if high.valid.as_slice()[i] {
                continue;
            }
            let j = (y / scale) * lw + x / scale;
            if low.valid.as_slice()[j] {
                out.copy_pixel(i, low, j);
                out.filled.as_mut_slice()[i] = true;
            }
        }
    }
    Ok(out)
}

/// `primary` where valid, otherwise `secondary`.
pub fn overlay(primary: &WarpResult, secondary: &WarpResult) -> Result<WarpResult, WarpError> {
    if primary.dims() != secondary.dims() {
        return Err(WarpError::GridMismatch(format!(
            "{:?} vs {:?}",
            primary.dims(),
            secondary.dims()
        )));
    }
    let mut out = primary.clone();
    for i in 0..out.valid.len() {
        if !primary.valid.as_slice()[i] && secondary.valid.as_slice()[i] {
            out.copy_pixel(i, secondary, i);
        }
    }
    Ok(out)
}

/// How the low-resolution scale is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowResScale {
    /// Smallest of [`LOW_RES_SCALES`] whose reliable warp reaches
    /// [`LOW_RES_MIN_DENSITY`], else the largest.
    Adaptive,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HierarchicalParams {
    pub confidence_quantile: f64,
    pub grad_rel_threshold: f64,
    pub scale: LowResScale,
}

impl Default for HierarchicalParams {
    fn default() -> Self {
        Self {
            confidence_quantile: DEFAULT_CONFIDENCE_QUANTILE,
            grad_rel_threshold: DEFAULT_GRAD_REL_THRESHOLD,
            scale: LowResScale::Adaptive,
        }
    }
}

/// Intermediate levels of one hierarchical warp.
#[derive(Clone, Debug)]
pub struct HierarchicalWarp {
    pub result: WarpResult,
    pub masks: ReliabilityMasks,
    pub scale: usize,
    pub reliable_high: WarpResult,
    pub reliable: WarpResult,
    pub unreliable: WarpResult,
}

/// Two-resolution warp of one reference view, reliable region first.
pub fn hierarchical_warp_detailed(
    view: &ViewRecord,
    target: &Camera,
    params: &HierarchicalParams,
) -> Result<HierarchicalWarp, WarpError> {
    let masks = split_reliability(view, params.confidence_quantile, params.grad_rel_threshold)?;
    let reliable_high = forward_warp(view, &masks, Region::Reliable, target, 1);

    let (scale, reliable_low) = match params.scale {
        LowResScale::Fixed(s) if s >= 1 => (s, forward_warp(view, &masks, Region::Reliable, target, s)),
        LowResScale::Fixed(s) => {
            return Err(WarpError::InvalidParameter(format!("low-res scale {s}")))
        }
        LowResScale::Adaptive => {
            let mut chosen = None;
            for &s in &LOW_RES_SCALES {
                let low = forward_warp(view, &masks, Region::Reliable, target, s);
                let done = low.density() >= LOW_RES_MIN_DENSITY;
                chosen = Some((s, low));
                if done {
                    break;
                }
            }
            chosen.expect("at least one candidate scale")
        }
    };
    let reliable = combine_levels(&reliable_high, &reliable_low, scale)?;

    let unrel_high = forward_warp(view, &masks, Region::Unreliable, target, 1);
    let unrel_low = forward_warp(view, &masks, Region::Unreliable, target, scale);
    let unreliable = combine_levels(&unrel_high, &unrel_low, scale)?;

    let result = overlay(&reliable, &unreliable)?;
    Ok(HierarchicalWarp {
        result,
        masks,
        scale,
        reliable_high,
        reliable,
        unreliable,
    })
}

pub fn hierarchical_warp(
    view: &ViewRecord,
    target: &Camera,
    params: &HierarchicalParams,
) -> Result<WarpResult, WarpError> {
    hierarchical_warp_detailed(view, target, params).map(|h| h.result)
}

/// Per pixel, takes the valid result whose reference camera center is nearest the target
/// camera center (ties to the lower index). `source_view` records the winning index.
pub fn merge_views(
    results: &[WarpResult],
    ref_cameras: &[Camera],
    target: &Camera,
) -> Result<WarpResult, WarpError> {
    let first = results.first().ok_or(WarpError::EmptyInput)?;
    if results.len() != ref_cameras.len() {
        return Err(WarpError::GridMismatch(format!(
            "{} results but {} reference cameras",
            results.len(),
            ref_cameras.len()
        )));
    }
    if let Some(r) = results.iter().find(|r| r.dims() != first.dims()) {
        return Err(WarpError::GridMismatch(format!(
            "results on {:?} and {:?} grids",
            first.dims(),
            r.dims()
        )));
    }
    let tc = target.center();
    let mut order: Vec<(f64, usize)> = ref_cameras
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.center() - tc).norm(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let (w, h) = first.dims();
    let mut out = WarpResult::empty(w, h);
    for i in 0..w * h {
        if let Some(&(_, r)) = order.iter().find(|(_, r)| results[*r].valid.as_slice()[i]) {
            out.copy_pixel(i, &results[r], i);
            out.source_view.as_mut_slice()[i] = Some(r as u32);
        } else if order.iter().any(|(_, r)| results[*r].suppressed.as_slice()[i]) {
            out.suppressed.as_mut_slice()[i] = true;
        }
    }
    Ok(out)
}

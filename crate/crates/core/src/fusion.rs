//! Global point fusion by cross-view consistency.
//!
//! Every valid pixel of view `i` is back-projected, projected into each other view `j`,
//! and paired with the nearest pixel there. A pair is consistent when both the 3D points
//! and the colors agree within `tau_g` and `tau_c`. The number of consistent partners is
//! the pixel's count; pixels with at least `tau_num` partners become fused points at the
//! mean of the agreeing samples.

use std::collections::HashSet;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Camera;
use crate::raster::{is_valid_depth, Raster};
use crate::scene_io::{PointCloud, ViewRecord};
use crate::warp::{resolve_splats, Splat, WarpResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("fusion needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionThresholds {
    /// Maximum 3D distance, scene units (strict).
    pub tau_g: f64,
    /// Maximum RGB Euclidean distance on `[0, 1]` channels (strict).
    pub tau_c: f64,
    /// Minimum consistent partners for a pixel to be fused (inclusive).
    pub tau_num: u32,
}

impl Default for FusionThresholds {
    fn default() -> Self {
        Self {
            tau_g: 0.01,
            tau_c: 0.1,
            tau_num: 10,
        }
    }
}

impl FusionThresholds {
    pub fn new(tau_g: f64, tau_c: f64, tau_num: u32) -> Result<Self, FusionError> {
        let t = Self {
            tau_g,
            tau_c,
            tau_num,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.tau_g > 0.0 && self.tau_g.is_finite()) {
            return Err(FusionError::InvalidThresholds(format!("tau_g = {}", self.tau_g)));
        }
        if !(self.tau_c > 0.0 && self.tau_c.is_finite()) {
            return Err(FusionError::InvalidThresholds(format!("tau_c = {}", self.tau_c)));
        }
        if self.tau_num == 0 {
            return Err(FusionError::InvalidThresholds("tau_num = 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel number of consistent partner views.
pub type CountMap = Raster<u32>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p_i: Vector3<f64>,
    pub p_j: Vector3<f64>,
    pub c_i: [f64; 3],
    pub c_j: [f64; 3],
}

#[inline]
fn color_f64(c: [f32; 3]) -> [f64; 3] {
    c.map(|v| v as f64)
}

/// Matches pixel `(x, y)` of view `i` with its nearest pixel in view `j`.
///
/// Returns `None` when the pixel has no valid depth, the point lands behind or outside
/// view `j`, or the matched pixel has no valid depth.
pub fn correspondence(
    views: &[ViewRecord],
    i: usize,
    pixel: (usize, usize),
    j: usize,
) -> Option<Correspondence> {
    let (vi, vj) = (&views[i], &views[j]);
    let (x, y) = pixel;
    let d = *vi.depth.get(x, y);
    if !is_valid_depth(d) {
        return None;
    }
    let p_i = vi.camera.back_project(x as f64, y as f64, d as f64).ok()?;
    let proj = vj.camera.project(&p_i).ok()?;
    let (qx, qy) = vj.camera.nearest_pixel(proj.u, proj.v)?;
    let dq = *vj.depth.get(qx, qy);
    if !is_valid_depth(dq) {
        return None;
    }
    let p_j = vj.camera.back_project(qx as f64, qy as f64, dq as f64).ok()?;
    Some(Correspondence {
        p_i,
        p_j,
        c_i: color_f64(*vi.image.get(x, y)),
        c_j: color_f64(*vj.image.get(qx, qy)),
    })
}

/// `‖p_i − p_j‖ < tau_g` and `‖c_i − c_j‖ < tau_c`.
pub fn pair_consistent(
    p_i: &Vector3<f64>,
    p_j: &Vector3<f64>,
    c_i: &[f64; 3],
    c_j: &[f64; 3],
    thresholds: &FusionThresholds,
) -> bool {
    let dc = Vector3::new(c_i[0] - c_j[0], c_i[1] - c_j[1], c_i[2] - c_j[2]);
    (p_i - p_j).norm() < thresholds.tau_g && dc.norm() < thresholds.tau_c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusedPoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
    /// Consistent partner count of the originating pixel.
    pub support: u32,
    pub view: u32,
    pub pixel: (u32, u32),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusedCloud {
    pub points: Vec<FusedPoint>,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// 32-bit export with per-point support counts.
    pub fn to_point_cloud(&self) -> PointCloud {
        PointCloud {
            positions: self
                .points
                .iter()
                .map(|p| [p.position.x as f32, p.position.y as f32, p.position.z as f32])
                .collect(),
            colors: self
                .points
                .iter()
                .map(|p| p.color.map(|c| c.clamp(0.0, 1.0) as f32))
                .collect(),
            counts: Some(self.points.iter().map(|p| p.support).collect()),
        }
    }

    /// Keeps the first point (in view, then pixel order) of each voxel of edge `edge`.
    pub fn dedup_voxels(&self, edge: f64) -> FusedCloud {
        assert!(edge > 0.0, "voxel edge must be positive");
        let mut seen = HashSet::new();
        let points = self
            .points
            .iter()
            .filter(|p| {
                let key = [
                    (p.position.x / edge).floor() as i64,
                    (p.position.y / edge).floor() as i64,
                    (p.position.z / edge).floor() as i64,
                ];
                seen.insert(key)
            })
            .copied()
            .collect();
        FusedCloud { points }
    }
}

/// Back-projected points and colors of one view, precomputed for the pairwise checks.
struct ViewSamples<'a> {
    camera: &'a Camera,
    points: Vec<Option<Vector3<f64>>>,
    colors: Vec<[f64; 3]>,
}

impl<'a> ViewSamples<'a> {
    fn new(view: &'a ViewRecord) -> Self {
        let cam = &view.camera;
        let w = cam.width();
        let points = view
            .depth
            .as_slice()
            .par_iter()
            .enumerate()
            .map(|(i, &d)| {
                if is_valid_depth(d) {
                    cam.back_project((i % w) as f64, (i / w) as f64, d as f64).ok()
                } else {
                    None
                }
            })
            .collect();
        let colors = view.image.as_slice().iter().map(|&c| color_f64(c)).collect();
        Self {
            camera: cam,
            points,
            colors,
        }
    }

    #[inline]
    fn lookup(&self, p: &Vector3<f64>) -> Option<usize> {
        let proj = self.camera.project(p).ok()?;
        let (x, y) = self.camera.nearest_pixel(proj.u, proj.v)?;
        let q = y * self.camera.width() + x;
        self.points[q].is_some().then_some(q)
    }
}

/// Count maps for every view plus the fused cloud, in one pass.
pub fn fuse_with_counts(
    views: &[ViewRecord],
    thresholds: &FusionThresholds,
) -> Result<(Vec<CountMap>, FusedCloud), FusionError> {
    if views.len() < 2 {
        return Err(FusionError::TooFewViews(views.len()));
    }
    thresholds.validate()?;
    let samples: Vec<ViewSamples> = views.iter().map(ViewSamples::new).collect();

    let mut maps = Vec::with_capacity(views.len());
    let mut points = Vec::new();
    for (i, si) in samples.iter().enumerate() {
        let (w, h) = (si.camera.width(), si.camera.height());
        let rows: Vec<(Vec<u32>, Vec<FusedPoint>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut counts = vec![0u32; w];
                let mut fused = Vec::new();
                for x in 0..w {
                    let idx = y * w + x;
                    let Some(p_i) = si.points[idx] else {
                        continue;
                    };
                    let c_i = si.colors[idx];
                    let mut m = 0u32;
                    let mut sum_p = p_i;
                    let mut sum_c = c_i;
                    for (j, sj) in samples.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        let Some(q) = sj.lookup(&p_i) else {
                            continue;
                        };
                        let p_j = sj.points[q].expect("lookup returns valid pixels");
                        let c_j = sj.colors[q];
                        if pair_consistent(&p_i, &p_j, &c_i, &c_j, thresholds) {
                            m += 1;
                            sum_p += p_j;
                            for k in 0..3 {
                                sum_c[k] += c_j[k];
                            }
                        }
                    }
                    counts[x] = m;
                    if m >= thresholds.tau_num {
                        let n = (m + 1) as f64;
                        fused.push(FusedPoint {
                            position: sum_p / n,
                            color: sum_c.map(|c| c / n),
                            support: m,
                            view: i as u32,
                            pixel: (x as u32, y as u32),
                        });
                    }
                }
                (counts, fused)
            })
            .collect();
        let mut flat = Vec::with_capacity(w * h);
        for (c, f) in rows {
            flat.extend(c);
            points.extend(f);
        }
        maps.push(Raster::from_vec(w, h, flat).unwrap());
    }
    Ok((maps, FusedCloud { points }))
}

/// Per-view maps of how many other views agree with each pixel.
pub fn build_count_map(
    views: &[ViewRecord],
    thresholds: &FusionThresholds,
) -> Result<Vec<CountMap>, FusionError> {
    fuse_with_counts(views, thresholds).map(|(m, _)| m)
}

/// Union over views of consistency-averaged points with support `≥ tau_num`.
pub fn fuse_points(
    views: &[ViewRecord],
    thresholds: &FusionThresholds,
) -> Result<FusedCloud, FusionError> {
    fuse_with_counts(views, thresholds).map(|(_, c)| c)
}

/// Per-pixel supervision weight `min(M / tau_num, 1)`.
pub fn pixel_confidence(count_map: &CountMap, tau_num: u32) -> Raster<f64> {
    assert!(tau_num >= 1, "tau_num must be at least 1");
    count_map.map(|&m| (m as f64 / tau_num as f64).min(1.0))
}

/// Z-buffered nearest-pixel splat of the fused cloud into `camera`.
///
/// Uses the same tie rule as forward warping, with the point index as source order.
pub fn project_cloud(cloud: &FusedCloud, camera: &Camera) -> WarpResult {
    let (w, h) = (camera.width(), camera.height());
    let splats: Vec<Option<Splat>> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let proj = camera.project(&p.position).ok()?;
            if !((proj.depth as f32) > 0.0) {
                return None;
            }
            let (x, y) = camera.nearest_pixel(proj.u, proj.v)?;
            Some(Splat {
                pixel: (y * w + x) as u32,
                depth: proj.depth,
                source: k as u32,
            })
        })
        .collect();
    let winners = resolve_splats(w * h, splats.into_iter().flatten());
    let mut out = WarpResult::empty(w, h);
    for (t, win) in winners.into_iter().enumerate() {
        if let Some((d, k)) = win {
            let p = &cloud.points[k as usize];
            out.rgb.as_mut_slice()[t] = p.color.map(|c| c.clamp(0.0, 1.0) as f32);
            out.depth.as_mut_slice()[t] = d as f32;
            out.valid.as_mut_slice()[t] = true;
            out.source_view.as_mut_slice()[t] = Some(p.view);
            out.reliable_origin.as_mut_slice()[t] = true;
        }
    }
    out
}

//! Analytic scenes of textured planes and spheres, ray traced per pixel.
//!
//! Renders give exact depth, the hit primitive per pixel, and 8-bit-quantized colors, so
//! a rendered dataset written to disk and loaded back is bit-identical to the render.
//! Depth noise and corruptions are seeded and touch depth/confidence only.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, Intrinsics, Pose};
use crate::raster::{from_u8, is_valid_depth, to_u8, DepthMap, Raster};
use crate::scene_io::{CameraEntry, SceneIoError, ViewRecord};
use crate::warp::WarpResult;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Camera(#[from] SceneIoError),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Texture {
    /// Checker cell edge, scene units.
    pub period: f64,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    /// Relative per-cell brightness jitter in `[0, 1)`, seeded by the scene seed.
    #[serde(default)]
    pub jitter: f64,
}

fn unbounded() -> [f64; 2] {
    [f64::INFINITY; 2]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Rectangle through `center` spanned by `u_axis` and `normal × u_axis`.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        u_axis: [f64; 3],
        #[serde(default = "unbounded")]
        half_extent: [f64; 2],
        texture: Texture,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
}

impl Primitive {
    fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. } | Primitive::Sphere { texture, .. } => texture,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DepthOffset {
    pub view: usize,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Band of pixels with degraded confidence, as fractions of the image extent rounded to
/// whole pixels.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConfidenceBand {
    pub axis: Axis,
    pub start: f64,
    pub end: f64,
    pub value: f32,
    /// Views the band applies to; all views when absent.
    #[serde(default)]
    pub views: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation of additive gaussian depth noise, scene units.
    #[serde(default)]
    pub depth_sigma: f64,
    #[serde(default)]
    pub depth_offsets: Vec<DepthOffset>,
    #[serde(default)]
    pub low_confidence_band: Option<ConfidenceBand>,
}

/// Cameras on a regular grid in the image plane of a base orientation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RigSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub center: [f64; 3],
    pub spacing: f64,
    /// Row-major world-to-camera rotation; identity when absent.
    #[serde(default)]
    pub rotation: Option<[f64; 9]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "primitive")]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub rig: Option<RigSpec>,
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraEntry>,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: SceneSpec =
            toml::from_str(text).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.primitives.is_empty() {
            return bad("at least one primitive is required".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let t = p.texture();
            if !(t.period > 0.0 && t.period.is_finite()) {
                return bad(format!("primitive {i}: checker period must be positive"));
            }
            if !(0.0..1.0).contains(&t.jitter) {
                return bad(format!("primitive {i}: jitter must lie in [0, 1)"));
            }
            match p {
                Primitive::Plane {
                    normal,
                    u_axis,
                    half_extent,
                    ..
                } => {
                    let n = Vector3::from(*normal);
                    let u = Vector3::from(*u_axis);
                    if n.norm() < 1e-12 || (u - n * (u.dot(&n) / n.norm_squared())).norm() < 1e-12 {
                        return bad(format!("primitive {i}: degenerate plane axes"));
                    }
                    if !(half_extent[0] > 0.0 && half_extent[1] > 0.0) {
                        return bad(format!("primitive {i}: half extents must be positive"));
                    }
                }
                Primitive::Sphere { radius, .. } => {
                    if !(*radius > 0.0) {
                        return bad(format!("primitive {i}: radius must be positive"));
                    }
                }
            }
        }
        if self.noise.depth_sigma < 0.0 {
            return bad("depth_sigma must be nonnegative".into());
        }
        Ok(())
    }

    /// Explicit cameras followed by the rig cameras, with ids.
    pub fn camera_list(&self) -> Result<Vec<(String, Camera)>, SynthError> {
        let mut out = Vec::new();
        for e in &self.cameras {
            out.push((e.id.clone(), e.camera()?));
        }
        if let Some(rig) = &self.rig {
            let rot = match rig.rotation {
                Some(r) => Matrix3::from_row_slice(&r),
                None => Matrix3::identity(),
            };
            let k = Intrinsics::new(rig.fx, rig.fy, rig.cx, rig.cy, rig.width, rig.height)
                .map_err(|e| SynthError::InvalidScene(format!("rig: {e}")))?;
            let cols = (rig.count as f64).sqrt().ceil().max(1.0) as usize;
            let rows = rig.count.div_ceil(cols);
            let base = out.len();
            for i in 0..rig.count {
                let (c, r) = ((i % cols) as f64, (i / cols) as f64);
                let local = Vector3::new(
                    rig.spacing * (c - (cols as f64 - 1.0) / 2.0),
                    rig.spacing * (r - (rows as f64 - 1.0) / 2.0),
                    0.0,
                );
                let center = Vector3::from(rig.center) + rot.transpose() * local;
                let pose = Pose::from_center(rot, center)
                    .map_err(|e| SynthError::InvalidScene(format!("rig: {e}")))?;
                out.push((format!("view_{}", base + i), Camera { intrinsics: k, pose }));
            }
        }
        Ok(out)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cell_hash(seed: u64, prim: usize, cell: [i64; 3]) -> f64 {
    let mut h = splitmix64(seed ^ (prim as u64).wrapping_mul(0x1000_0000_01B3));
    for c in cell {
        h = splitmix64(h ^ c as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A ray hit: camera-frame depth, primitive index and texture cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub primitive: usize,
    cell: [i64; 3],
}

fn intersect(prim: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [i64; 3])> {
    match prim {
        Primitive::Plane {
            center,
            normal,
            u_axis,
            half_extent,
            texture,
        } => {
            let n = Vector3::from(*normal).normalize();
            let c = Vector3::from(*center);
            let denom = n.dot(dir);
            if denom.abs() < 1e-15 {
                return None;
            }
            let t = n.dot(&(c - origin)) / denom;
            if !(t > HIT_EPS) {
                return None;
            }
            let u = Vector3::from(*u_axis);
            let u = (u - n * u.dot(&n)).normalize();
            let v = n.cross(&u);
            let rel = origin + dir * t - c;
            let (a, b) = (rel.dot(&u), rel.dot(&v));
            if a.abs() > half_extent[0] || b.abs() > half_extent[1] {
                return None;
            }
            let p = texture.period;
            Some((t, [(a / p).floor() as i64, (b / p).floor() as i64, 0]))
        }
        Primitive::Sphere {
            center,
            radius,
            texture,
        } => {
            let oc = origin - Vector3::from(*center);
            let a = dir.norm_squared();
            let b = oc.dot(dir);
            let cc = oc.norm_squared() - radius * radius;
            let disc = b * b - a * cc;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let mut t = (-b - s) / a;
            if !(t > HIT_EPS) {
                t = (-b + s) / a;
            }
            if !(t > HIT_EPS) {
                return None;
            }
            let x = origin + dir * t;
            let p = texture.period;
            Some((
                t,
                [
                    (x.x / p).floor() as i64,
                    (x.y / p).floor() as i64,
                    (x.z / p).floor() as i64,
                ],
            ))
        }
    }
}

impl SceneSpec {
    /// Nearest hit along `dir` from `origin`; `dir` must have camera-frame z = 1 so the
    /// ray parameter equals camera-frame depth. Equal depths go to the lower index.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, cell)) = intersect(p, origin, dir) {
                if best.is_none_or(|b| t < b.depth) {
                    best = Some(Hit {
                        depth: t,
                        primitive: i,
                        cell,
                    });
                }
            }
        }
        best
    }

    /// Quantized texture color of a hit.
    pub fn shade(&self, hit: &Hit) -> [f32; 3] {
        let t = self.primitives[hit.primitive].texture();
        let parity = hit.cell.iter().sum::<i64>().rem_euclid(2);
        let base = if parity == 0 { t.color_a } else { t.color_b };
        let gain = if t.jitter > 0.0 {
            1.0 + t.jitter * (2.0 * cell_hash(self.seed, hit.primitive, hit.cell) - 1.0)
        } else {
            1.0
        };
        base.map(|c| from_u8(to_u8((c * gain) as f32)))
    }
}

/// Render of one camera plus per-pixel ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticRender {
    pub view: ViewRecord,
    /// Hit primitive per pixel.
    pub hits: Raster<Option<u16>>,
    /// Noise-free depth (0 where the ray misses).
    pub clean_depth: DepthMap,
}

/// Ray traces `scene` from `camera`; `view_index` selects the noise stream and
/// per-view corruptions.
pub fn render_analytic(scene: &SceneSpec, camera: &Camera, view_index: usize) -> AnalyticRender {
    let (w, h) = (camera.width(), camera.height());
    let origin = camera.center();
    let rows: Vec<Vec<(f32, Option<u16>, [f32; 3])>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir = camera.ray_direction(x as f64, y as f64);
                    match scene.trace(&origin, &dir) {
                        Some(hit) if (hit.depth as f32) > 0.0 && (hit.depth as f32).is_finite() => {
                            (hit.depth as f32, Some(hit.primitive as u16), scene.shade(&hit))
                        }
                        _ => (0.0, None, [0.0; 3]),
                    }
                })
                .collect()
        })
        .collect();
    let flat: Vec<_> = rows.into_iter().flatten().collect();
    let clean_depth = Raster::from_vec(w, h, flat.iter().map(|p| p.0).collect()).unwrap();
    let hits = Raster::from_vec(w, h, flat.iter().map(|p| p.1).collect()).unwrap();
    let image = Raster::from_vec(w, h, flat.iter().map(|p| p.2).collect()).unwrap();

    let mut depth = clean_depth.clone();
    let noise = &scene.noise;
    if noise.depth_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(scene.seed ^ splitmix64(view_index as u64)));
        let normal = Normal::new(0.0, noise.depth_sigma).expect("sigma checked");
        for d in depth.as_mut_slice() {
            let n: f64 = normal.sample(&mut rng);
            if is_valid_depth(*d) {
                let v = (*d as f64 + n) as f32;
                *d = if v > 0.0 { v } else { f32::MIN_POSITIVE };
            }
        }
    }
    for off in noise.depth_offsets.iter().filter(|o| o.view == view_index) {
        for d in depth.as_mut_slice() {
            if is_valid_depth(*d) {
                let v = (*d as f64 + off.offset) as f32;
                *d = if v > 0.0 { v } else { 0.0 };
            }
        }
    }

    let mut confidence = Raster::filled(w, h, 1.0f32);
    if let Some(band) = &noise.low_confidence_band {
        let applies = band.views.as_ref().is_none_or(|v| v.contains(&view_index));
        if applies {
            let extent = match band.axis {
                Axis::X => w,
                Axis::Y => h,
            } as f64;
            let lo = (band.start * extent).round().max(0.0) as usize;
            let hi = (band.end * extent).round().max(0.0) as usize;
            for y in 0..h {
                for x in 0..w {
                    let c = match band.axis {
                        Axis::X => x,
                        Axis::Y => y,
                    };
                    if c >= lo && c < hi {
                        *confidence.get_mut(x, y) = band.value;
                    }
                }
            }
        }
    }

    AnalyticRender {
        view: ViewRecord {
            id: format!("view_{view_index}"),
            image,
            depth,
            confidence,
            camera: *camera,
        },
        hits,
        clean_depth,
    }
}

/// Renders every camera of the scene.
pub fn render_scene(scene: &SceneSpec) -> Result<Vec<AnalyticRender>, SynthError> {
    scene.validate()?;
    let cams = scene.camera_list()?;
    Ok(cams
        .iter()
        .enumerate()
        .map(|(i, (id, cam))| {
            let mut r = render_analytic(scene, cam, i);
            r.view.id = id.clone();
            r
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeakLabel {
    /// Warped depth lies more than epsilon behind the true surface.
    Leak,
    Visible,
    /// No warped value.
    Hole,
}

pub const DEFAULT_LEAK_EPSILON: f64 = 0.1;

/// Labels warped pixels against the analytic render of the target.
pub fn label_leaks(
    warp: &WarpResult,
    gt: &AnalyticRender,
    epsilon: f64,
) -> Result<Raster<LeakLabel>, SynthError> {
    if warp.dims() != gt.clean_depth.dims() {
        return Err(SynthError::GridMismatch(format!(
            "warp {:?} vs target {:?}",
            warp.dims(),
            gt.clean_depth.dims()
        )));
    }
    let labels = (0..warp.valid.len())
        .map(|i| {
            if !warp.valid.as_slice()[i] {
                return LeakLabel::Hole;
            }
            let truth = gt.clean_depth.as_slice()[i];
            if gt.hits.as_slice()[i].is_some()
                && warp.depth.as_slice()[i] as f64 - truth as f64 > epsilon
            {
                LeakLabel::Leak
            } else {
                LeakLabel::Visible
            }
        })
        .collect();
    Ok(Raster::from_vec(warp.width(), warp.height(), labels).unwrap())
}

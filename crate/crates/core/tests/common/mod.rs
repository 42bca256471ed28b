#![allow(dead_code)]

use closeup::fusion::FusionThresholds;
use closeup::geometry::{Camera, Intrinsics, Pose};
use closeup::raster::Raster;
use closeup::synth::{Primitive, RigSpec, SceneSpec, Texture, NoiseSpec};
use closeup::ViewRecord;
use nalgebra::{Matrix3, Vector3};

pub fn texture(period: f64, a: [f64; 3], b: [f64; 3]) -> Texture {
    Texture {
        period,
        color_a: a,
        color_b: b,
        jitter: 0.0,
    }
}

/// Plane `z = depth` facing the camera rig, optionally bounded.
pub fn fronto_plane(center: [f64; 3], half_extent: [f64; 2], texture: Texture) -> Primitive {
    Primitive::Plane {
        center,
        normal: [0.0, 0.0, -1.0],
        u_axis: [1.0, 0.0, 0.0],
        half_extent,
        texture,
    }
}

pub fn scene(seed: u64, primitives: Vec<Primitive>) -> SceneSpec {
    SceneSpec {
        seed,
        primitives,
        noise: NoiseSpec::default(),
        rig: None,
        cameras: vec![],
    }
}

pub fn rig(count: usize, w: usize, h: usize, f: f64, spacing: f64) -> RigSpec {
    RigSpec {
        count,
        width: w,
        height: h,
        fx: f,
        fy: f,
        cx: (w / 2) as f64,
        cy: (h / 2) as f64,
        center: [0.0, 0.0, 0.0],
        spacing,
        rotation: None,
    }
}

pub fn camera_at(w: usize, h: usize, f: f64, center: Vector3<f64>) -> Camera {
    Camera::new(
        Intrinsics::new(f, f, (w / 2) as f64, (h / 2) as f64, w, h).unwrap(),
        Pose::from_center(Matrix3::identity(), center).unwrap(),
    )
    .unwrap()
}

/// Straightforward per-pixel reimplementation of the multi-view consistency count and
/// point averaging, sharing only back-projection and projection with the library.
pub struct OracleFusion {
    pub counts: Vec<Raster<u32>>,
    /// (view, x, y, position, color, support) in view then row-major pixel order.
    pub points: Vec<(usize, usize, usize, [f64; 3], [f64; 3], u32)>,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn world_point(v: &ViewRecord, x: usize, y: usize) -> Option<[f64; 3]> {
    let d = *v.depth.get(x, y);
    if !(d.is_finite() && d > 0.0) {
        return None;
    }
    let p = v.camera.back_project(x as f64, y as f64, d as f64).ok()?;
    Some([p.x, p.y, p.z])
}

pub fn brute_force_fusion(views: &[ViewRecord], th: &FusionThresholds) -> OracleFusion {
    let mut counts = Vec::new();
    let mut points = Vec::new();
    for (i, vi) in views.iter().enumerate() {
        let (w, h) = (vi.camera.width(), vi.camera.height());
        let mut map = Raster::filled(w, h, 0u32);
        for y in 0..h {
            for x in 0..w {
                let Some(pi) = world_point(vi, x, y) else { continue };
                let ci = vi.image.get(x, y).map(|c| c as f64);
                let mut m = 0u32;
                let mut sp = pi;
                let mut sc = ci;
                for (j, vj) in views.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let Ok(proj) = vj.camera.project(&Vector3::from(pi)) else { continue };
                    let (qx, qy) = ((proj.u + 0.5).floor(), (proj.v + 0.5).floor());
                    if qx < 0.0 || qy < 0.0 || qx >= vj.camera.width() as f64 || qy >= vj.camera.height() as f64 {
                        continue;
                    }
                    let (qx, qy) = (qx as usize, qy as usize);
                    let Some(pj) = world_point(vj, qx, qy) else { continue };
                    let cj = vj.image.get(qx, qy).map(|c| c as f64);
                    if dist(pi, pj) < th.tau_g && dist(ci, cj) < th.tau_c {
                        m += 1;
                        for k in 0..3 {
                            sp[k] += pj[k];
                            sc[k] += cj[k];
                        }
                    }
                }
                *map.get_mut(x, y) = m;
                if m >= th.tau_num {
                    let n = (m + 1) as f64;
                    points.push((i, x, y, sp.map(|s| s / n), sc.map(|s| s / n), m));
                }
            }
        }
        counts.push(map);
    }
    OracleFusion { counts, points }
}

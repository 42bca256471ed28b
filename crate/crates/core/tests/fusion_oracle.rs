mod common;

use closeup::fusion::{
    build_count_map, correspondence, fuse_points, fuse_with_counts, project_cloud, FusedCloud,
    FusedPoint, FusionThresholds,
};
use closeup::geometry::{Camera, Intrinsics, Pose};
use closeup::synth::{render_scene, DepthOffset, Primitive, SceneSpec};
use closeup::ViewRecord;
use common::*;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn views_of(s: &SceneSpec) -> Vec<ViewRecord> {
    render_scene(s).unwrap().into_iter().map(|r| r.view).collect()
}

fn plane_and_ball(seed: u64) -> SceneSpec {
    scene(
        seed,
        vec![
            fronto_plane([0.0, 0.0, 3.0], [f64::INFINITY; 2], texture(0.3, [0.8, 0.6, 0.4], [0.3, 0.4, 0.7])),
            Primitive::Sphere {
                center: [-0.1, 0.05, 2.2],
                radius: 0.35,
                texture: texture(0.1, [0.2, 0.8, 0.3], [0.8, 0.8, 0.8]),
            },
        ],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fusion_equals_brute_force(
        seed in 0u64..10_000,
        count in 2usize..5,
        size in 8usize..33,
        spacing in 0.01f64..0.1,
        sigma in 0.0f64..0.01,
        tau_g in 0.005f64..0.05,
        tau_c in 0.02f64..0.5,
        tau_num in 1u32..4,
        offset in prop::option::of(0.0f64..0.1),
    ) {
        let mut s = plane_and_ball(seed);
        s.noise.depth_sigma = sigma;
        if let Some(o) = offset {
            s.noise.depth_offsets.push(DepthOffset { view: 0, offset: o });
        }
        s.rig = Some(rig(count, size, size, size as f64, spacing));
        let views = views_of(&s);
        let th = FusionThresholds::new(tau_g, tau_c, tau_num).unwrap();
        let (maps, cloud) = fuse_with_counts(&views, &th).unwrap();
        let oracle = brute_force_fusion(&views, &th);
        prop_assert_eq!(&maps, &oracle.counts);
        for (m, v) in maps.iter().zip(&views) {
            for (c, d) in m.as_slice().iter().zip(v.depth.as_slice()) {
                prop_assert!(*c as usize <= count - 1);
                if *d <= 0.0 {
                    prop_assert_eq!(*c, 0);
                }
            }
        }
        prop_assert_eq!(cloud.len(), oracle.points.len());
        for (p, o) in cloud.points.iter().zip(&oracle.points) {
            prop_assert_eq!((p.view as usize, p.pixel.0 as usize, p.pixel.1 as usize), (o.0, o.1, o.2));
            prop_assert_eq!([p.position.x, p.position.y, p.position.z], o.3);
            prop_assert_eq!(p.color, o.4);
            prop_assert_eq!(p.support, o.5);
            prop_assert!(p.support >= tau_num);
        }
    }
}

#[test]
fn colocated_views_agree_everywhere() {
    let mut s = plane_and_ball(1);
    s.rig = Some(rig(4, 24, 20, 20.0, 0.0));
    let views = views_of(&s);
    let maps = build_count_map(&views, &FusionThresholds::default()).unwrap();
    for m in &maps {
        assert!(m.as_slice().iter().all(|&c| c == 3));
    }
}

#[test]
fn plane_correspondence_hits_analytic_surface() {
    let s = scene(
        2,
        vec![fronto_plane([0.0, 0.0, 2.5], [f64::INFINITY; 2], texture(0.2, [0.9, 0.1, 0.1], [0.1, 0.9, 0.1]))],
    );
    let a = camera_at(48, 40, 50.0, Vector3::zeros());
    let rot = Rotation3::from_euler_angles(0.02, -0.05, 0.01).into_inner();
    let b = Camera::new(
        Intrinsics::new(60.0, 55.0, 23.5, 19.0, 48, 40).unwrap(),
        Pose::from_center(rot, Vector3::new(0.15, -0.05, 0.1)).unwrap(),
    )
    .unwrap();
    let views: Vec<_> = [a, b]
        .iter()
        .enumerate()
        .map(|(i, c)| closeup::synth::render_analytic(&s, c, i).view)
        .collect();
    let mut matched = 0;
    for y in 4..36 {
        for x in 4..44 {
            let Some(c) = correspondence(&views, 0, (x, y), 1) else { continue };
            matched += 1;
            // both samples lie on z = 2.5 up to f32 depth storage
            assert!((c.p_i.z - 2.5).abs() < 1e-6, "{:?}", c.p_i);
            assert!((c.p_j.z - 2.5).abs() < 1e-6, "{:?}", c.p_j);
        }
    }
    assert!(matched > 1000);
}

#[test]
fn offset_view_neither_counts_nor_is_counted() {
    let mut s = scene(
        3,
        vec![fronto_plane([0.005, 0.005, 2.0], [f64::INFINITY; 2], texture(0.25, [0.8, 0.5, 0.3], [0.3, 0.5, 0.8]))],
    );
    s.rig = Some(rig(6, 40, 32, 100.0, 0.02));
    s.noise.depth_offsets.push(DepthOffset { view: 2, offset: 0.1 });
    let views = views_of(&s);
    let th = FusionThresholds::new(0.01, 0.1, 1).unwrap();
    let (maps, cloud) = fuse_with_counts(&views, &th).unwrap();
    assert!(maps[2].as_slice().iter().all(|&c| c == 0));
    for (v, m) in maps.iter().enumerate() {
        if v != 2 {
            assert!(m.as_slice().iter().all(|&c| c <= 4));
            assert!(m.as_slice().iter().any(|&c| c == 4));
        }
    }
    assert!(cloud.points.iter().all(|p| p.view != 2));
}

#[test]
fn averaging_reduces_depth_noise() {
    let th = FusionThresholds::default();
    let mut s = scene(
        4,
        vec![fronto_plane([0.005, 0.005, 2.0], [f64::INFINITY; 2], texture(0.25, [0.8, 0.5, 0.3], [0.3, 0.5, 0.8]))],
    );
    s.rig = Some(rig(25, 64, 48, 200.0, 0.02));
    s.noise.depth_sigma = th.tau_g / 5.0;
    let views = views_of(&s);
    let mut sq = 0.0;
    let mut n = 0usize;
    for v in &views {
        for y in 0..48 {
            for x in 0..64 {
                let p = v.camera.back_project(x as f64, y as f64, *v.depth.get(x, y) as f64).unwrap();
                sq += (p.z - 2.0).powi(2);
                n += 1;
            }
        }
    }
    let per_view = (sq / n as f64).sqrt();
    let cloud = fuse_points(&views, &th).unwrap();
    assert!(cloud.len() > 1000);
    let fused = (cloud.points.iter().map(|p| (p.position.z - 2.0).powi(2)).sum::<f64>() / cloud.len() as f64).sqrt();
    assert!(fused < per_view, "fused {fused} vs per view {per_view}");
}

#[test]
fn fused_position_ignores_partner_order() {
    let mut s = plane_and_ball(5);
    s.noise.depth_sigma = 0.003;
    s.rig = Some(rig(4, 24, 24, 24.0, 0.03));
    let views = views_of(&s);
    // a pixel spans about 0.1 scene units here
    let th = FusionThresholds::new(0.1, 0.2, 1).unwrap();
    let forward = fuse_points(&views, &th).unwrap();
    // same reference view first, partners reversed
    let reordered = vec![views[0].clone(), views[3].clone(), views[2].clone(), views[1].clone()];
    let backward = fuse_points(&reordered, &th).unwrap();
    let a: Vec<_> = forward.points.iter().filter(|p| p.view == 0).collect();
    let b: Vec<_> = backward.points.iter().filter(|p| p.view == 0).collect();
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.pixel, q.pixel);
        assert_eq!(p.support, q.support);
        assert!((p.position - q.position).norm() < 1e-12);
    }
}

fn point(position: Vector3<f64>, color: [f64; 3]) -> FusedPoint {
    FusedPoint {
        position,
        color,
        support: 10,
        view: 0,
        pixel: (0, 0),
    }
}

#[test]
fn back_projected_view_reprojects_to_itself() {
    let mut s = plane_and_ball(6);
    s.rig = Some(rig(1, 40, 30, 35.0, 0.0));
    let v = &views_of(&s)[0];
    let mut cloud = FusedCloud::default();
    for y in 0..30 {
        for x in 0..40 {
            let d = *v.depth.get(x, y) as f64;
            let p = v.camera.back_project(x as f64, y as f64, d).unwrap();
            cloud.points.push(point(p, v.image.get(x, y).map(|c| c as f64)));
        }
    }
    let out = project_cloud(&cloud, &v.camera);
    assert!(out.valid.as_slice().iter().all(|&b| b));
    assert_eq!(out.rgb, v.image);
}

#[test]
fn nearer_point_on_a_ray_wins() {
    let cam = camera_at(11, 11, 10.0, Vector3::zeros());
    let dir = Vector3::new(0.2, -0.1, 1.0);
    for order in [[2.0, 1.0], [1.0, 2.0]] {
        let cloud = FusedCloud {
            points: order.iter().map(|&t| point(dir * t, [t / 2.0; 3])).collect(),
        };
        let out = project_cloud(&cloud, &cam);
        assert_eq!(out.valid.count(), 1);
        let i = out.valid.as_slice().iter().position(|&b| b).unwrap();
        assert_eq!(out.depth.as_slice()[i], 1.0);
        assert_eq!(out.rgb.as_slice()[i], [0.5; 3]);
    }
}

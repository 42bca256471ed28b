mod common;

use closeup::geometry::{Camera, Intrinsics, Pose};
use closeup::synth::{render_analytic, Primitive, SceneSpec};
use common::*;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn clutter(seed: u64) -> SceneSpec {
    scene(
        seed,
        vec![
            fronto_plane([0.0, 0.0, 4.0], [f64::INFINITY; 2], texture(0.25, [0.8, 0.7, 0.5], [0.3, 0.4, 0.6])),
            fronto_plane([-0.3, 0.1, 2.0], [0.3, 0.2], texture(0.1, [0.9, 0.3, 0.2], [0.9, 0.8, 0.3])),
            Primitive::Sphere {
                center: [0.4, -0.1, 2.8],
                radius: 0.4,
                texture: texture(0.08, [0.2, 0.7, 0.3], [0.1, 0.3, 0.15]),
            },
        ],
    )
}

fn arb_camera() -> impl Strategy<Value = Camera> {
    (prop::array::uniform3(-0.15f64..0.15), prop::array::uniform3(-0.3f64..0.3)).prop_map(|(rot, c)| {
        Camera::new(
            Intrinsics::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap(),
            Pose::from_center(Rotation3::from_scaled_axis(Vector3::from(rot)).into_inner(), Vector3::from(c)).unwrap(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn correspondences_land_on_the_same_surface_point(a in arb_camera(), b in arb_camera(), seed in 0u64..100) {
        let s = clutter(seed);
        let ra = render_analytic(&s, &a, 0);
        let mut visible = 0;
        for y in (0..48).step_by(3) {
            for x in (0..64).step_by(3) {
                let Some(prim) = *ra.hits.get(x, y) else { continue };
                let p = a.back_project(x as f64, y as f64, *ra.clean_depth.get(x, y) as f64).unwrap();
                let Ok(q) = b.project(&p) else { continue };
                if !(0.0..64.0).contains(&q.u) || !(0.0..48.0).contains(&q.v) {
                    continue;
                }
                let hit = s.trace(&b.center(), &b.ray_direction(q.u, q.v)).unwrap();
                // nothing lies behind a surface point on the ray that sees it
                prop_assert!(hit.depth <= q.depth + 1e-5);
                if hit.depth > q.depth - 1e-5 {
                    visible += 1;
                    prop_assert_eq!(hit.primitive, prim as usize);
                    let seen = b.back_project(q.u, q.v, hit.depth).unwrap();
                    prop_assert!((seen - p).norm() < 1e-6, "{} apart", (seen - p).norm());
                }
            }
        }
        prop_assert!(visible > 0);
    }

    #[test]
    fn renders_reproduce_from_scene_and_seed(cam in arb_camera(), seed in 0u64..1000, sigma in 0.0f64..0.05) {
        let mut s = clutter(seed);
        s.noise.depth_sigma = sigma;
        let text = toml::to_string(&s).unwrap();
        let again = SceneSpec::from_toml(&text).unwrap();
        let r1 = render_analytic(&s, &cam, 3);
        let r2 = render_analytic(&again, &cam, 3);
        prop_assert_eq!(&r1.view, &r2.view);
        for (d1, d2) in r1.view.depth.as_slice().iter().zip(r2.view.depth.as_slice()) {
            prop_assert_eq!(d1.to_bits(), d2.to_bits());
        }
    }
}

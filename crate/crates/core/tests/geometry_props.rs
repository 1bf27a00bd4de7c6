use nearview::geometry::{
    euler_from_rotation, pixel_to_ray, point_from_depth, project_point, rotation_from_euler, EulerAngles, Intrinsics,
    Pose, Vec3,
};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn arb_euler() -> impl Strategy<Value = EulerAngles> {
    (-PI..PI, -FRAC_PI_2 + 1e-3..FRAC_PI_2 - 1e-3, -PI..PI).prop_map(|(x, y, z)| EulerAngles::new(x, y, z))
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    (arb_euler(), prop::array::uniform3(-10.0f64..10.0))
        .prop_map(|(e, t)| Pose::new(rotation_from_euler(&e), Vec3::from(t)).unwrap())
}

fn arb_intrinsics() -> impl Strategy<Value = Intrinsics> {
    (8u32..400, 8u32..300, 0.3f64..2.5).prop_map(|(w, h, fov)| Intrinsics::from_horizontal_fov(w, h, fov).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn euler_round_trip(e in arb_euler()) {
        let r = rotation_from_euler(&e);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        let back = euler_from_rotation(&r);
        prop_assert!(!back.gimbal_lock);
        prop_assert!((rotation_from_euler(&back.angles) - r).norm() < 1e-9);
        let a = back.angles;
        prop_assert!((a.theta_x - e.theta_x).abs() < 1e-9 && (a.theta_y - e.theta_y).abs() < 1e-9 && (a.theta_z - e.theta_z).abs() < 1e-9);
    }

    #[test]
    fn lift_then_project_returns_the_pixel_center(
        pose in arb_pose(),
        k in arb_intrinsics(),
        fu in 0.0f64..1.0,
        fv in 0.0f64..1.0,
        depth in 0.01f64..100.0,
    ) {
        let (u, v) = ((fu * k.width as f64).floor(), (fv * k.height as f64).floor());
        let x = point_from_depth(&pose, &k, u, v, depth).unwrap();
        let p = project_point(&pose, &k, &x).unwrap();
        prop_assert!((p.u - (u + 0.5)).abs() < 1e-6 && (p.v - (v + 0.5)).abs() < 1e-6);
        // Depth is distance along the ray, not camera z.
        prop_assert!(((x - pose.center()).norm() - depth).abs() < 1e-9 * depth.max(1.0));
        prop_assert!(p.z <= depth * (1.0 + 1e-12));
    }

    #[test]
    fn pixel_rays_are_unit_and_start_at_the_camera(pose in arb_pose(), k in arb_intrinsics(), fu in 0.0f64..1.0, fv in 0.0f64..1.0) {
        let ray = pixel_to_ray(&pose, &k, fu * k.width as f64, fv * k.height as f64);
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
        prop_assert!((ray.origin - pose.center()).norm() < 1e-12);
        prop_assert!(ray.direction.dot(&pose.forward()) > 0.0);
    }
}

#[test]
fn grid_round_trip_64() {
    let k = Intrinsics::from_horizontal_fov(64, 64, 1.0).unwrap();
    let pose = Pose::new(rotation_from_euler(&EulerAngles::new(0.4, -1.1, 2.9)), Vec3::new(-3.0, 0.5, 7.0)).unwrap();
    for v in 0..64 {
        for u in 0..64 {
            for depth in [0.05, 1.0, 37.0] {
                let x = point_from_depth(&pose, &k, u as f64, v as f64, depth).unwrap();
                let p = project_point(&pose, &k, &x).unwrap();
                assert!((p.u - (u as f64 + 0.5)).abs() < 1e-9 && (p.v - (v as f64 + 0.5)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn look_at_points_the_optical_axis_at_the_target() {
    let eye = Vec3::new(1.0, -2.0, 3.0);
    let target = Vec3::new(-4.0, 0.5, 8.0);
    let pose = Pose::look_at(eye, target, Vec3::y()).unwrap();
    assert!((pose.forward() - (target - eye).normalize()).norm() < 1e-12);
    let k = Intrinsics::from_horizontal_fov(32, 24, 1.0).unwrap();
    let p = project_point(&pose, &k, &target).unwrap();
    assert!((p.u - k.cx).abs() < 1e-9 && (p.v - k.cy).abs() < 1e-9);
}

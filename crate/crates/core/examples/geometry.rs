//! Camera conventions: look-at poses, pixel/ray round trips and Euler angles.

use nearview::geometry::{
    euler_from_rotation, pixel_to_ray, point_from_depth, project_point, rotation_from_euler, EulerAngles, Intrinsics,
    Pose, Vec3,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = Intrinsics::from_horizontal_fov(192, 108, 50f64.to_radians())?;
    let pose = Pose::look_at(Vec3::new(6.0, 2.2, 0.0), Vec3::new(0.0, 0.4, 0.0), Vec3::y())?;
    println!("fx {:.3}  principal point ({}, {})", k.fx, k.cx, k.cy);
    println!("camera center {:?}", pose.center().as_slice());

    let (u, v, depth) = (37.0, 80.0, 5.25);
    let x = point_from_depth(&pose, &k, u, v, depth)?;
    let p = project_point(&pose, &k, &x)?;
    let ray = pixel_to_ray(&pose, &k, u, v);
    println!("pixel ({u}, {v}) at depth {depth} -> {:?}", x.as_slice());
    println!("projects back to ({:.6}, {:.6}), ray distance {:.6}", p.u, p.v, (x - ray.origin).norm());

    let e = EulerAngles::new(0.3, -0.7, 1.1);
    let back = euler_from_rotation(&rotation_from_euler(&e));
    println!("euler {:?} -> {:?} (gimbal lock: {})", e, back.angles, back.gimbal_lock);
    Ok(())
}

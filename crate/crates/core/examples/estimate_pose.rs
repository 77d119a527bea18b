//! Recover a camera from a silhouette: render a cylinder at a hidden pose,
//! then search for the pose that explains its mask.

use std::time::Instant;

use geoedit::camera::EulerCamera;
use geoedit::mesh::{PrimitiveKind, PrimitiveSpec};
use geoedit::pose::{estimate_camera, EstimatorConfig};
use geoedit::raster::render_hard;

fn main() -> geoedit::Result<()> {
    let spec = PrimitiveSpec::new(PrimitiveKind::Cylinder, &[0.4, 1.1], 1);
    let mesh = spec.build()?;
    let hidden = EulerCamera::new(1.1, 0.45, 3.2, 0.08, -0.04)?;
    let target = render_hard(&mesh, &hidden, 128, 128)?;

    let t0 = Instant::now();
    let est = estimate_camera(&mesh, &target, &EstimatorConfig::default())?;
    let yaw_err = spec.yaw_symmetry().yaw_error(est.cam.yaw(), hidden.yaw());

    println!("hidden    {:?}", hidden.to_array());
    println!("recovered {:?}", est.cam.to_array());
    println!(
        "iou {:.3}  yaw error {:.2} deg  converged {}  ({} iterations, {:.1?})",
        est.iou,
        yaw_err.to_degrees(),
        est.converged,
        est.iterations,
        t0.elapsed()
    );
    Ok(())
}

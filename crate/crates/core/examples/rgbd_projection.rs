//! Back-project a rendered depth/label frame and check that every point
//! lands back on its pixel.

use gpsm::pointcloud::project_point;
use gpsm::synthetic::render_room;

fn main() -> gpsm::Result<()> {
    let scene = render_room(64, 48, 52.0, 0.0, 0)?;
    let cloud = scene.cloud()?;
    let intr = &scene.intrinsics;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    for v in 0..intr.height {
        for u in 0..intr.width {
            if *scene.depth.get(u, v) <= 0.0 {
                continue;
            }
            let (pu, pv) =
                project_point(intr, cloud.point(k)).expect("points lie in front of the camera");
            worst = worst.max((pu - u as f64).abs()).max((pv - v as f64).abs());
            k += 1;
        }
    }
    println!(
        "{} points from a {}x{} frame, worst reprojection error {worst:.2e} px",
        cloud.len(),
        intr.width,
        intr.height
    );
    let c = cloud.point(cloud.len() / 2);
    println!(
        "center point ({:.3}, {:.3}, {:.3}) label {:?}",
        c[0],
        c[1],
        c[2],
        cloud.labels()[cloud.len() / 2]
    );
    Ok(())
}

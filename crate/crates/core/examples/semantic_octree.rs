//! Fuse a rendered room frame into a semantic octree and inspect voxels.

use gpsm::octree::{OctreeConfig, SemanticOctree, VoxelQuery};
use gpsm::synthetic::{room_class_set, room_scene};

fn main() -> gpsm::Result<()> {
    let cloud = room_scene(0)?.cloud()?;
    let classes = room_class_set();
    let mut tree = SemanticOctree::new(OctreeConfig::default(), classes.clone())?;
    let summary = tree.insert_scan([0.0; 3], &cloud)?;
    println!(
        "{} points: {} hits, {} misses, {} labeled updates",
        summary.points, summary.hit_updates, summary.miss_updates, summary.labeled_updates
    );
    let occupied = tree.occupied_leaves(0.5);
    println!("{} leaves, {} occupied", tree.num_leaves(), occupied.len());

    for i in (0..cloud.len()).step_by(7919).take(5) {
        let p = cloud.point(i);
        if let VoxelQuery::Known {
            occupancy,
            belief: Some(b),
            hard_label,
            ..
        } = tree.query_voxel(p)
        {
            let truth = cloud.labels()[i]
                .and_then(|l| classes.index_of(l))
                .map(|j| classes.get(j).unwrap().name.clone());
            println!(
                "({:.2}, {:.2}, {:.2}) occ {occupancy:.3} belief {b:.2?} label {hard_label:?} truth {truth:?}",
                p[0], p[1], p[2]
            );
        }
    }
    // Free space between the camera and the back wall.
    println!(
        "query at (0, 0, 1): {:?}",
        tree.query_voxel([0.0, 0.0, 1.0])
    );
    Ok(())
}

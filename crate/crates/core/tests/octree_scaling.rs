//! Kept in its own test binary so no other test competes for the CPU while
//! insertion throughput is measured.

use std::time::Instant;

use gpsm::octree::{OctreeConfig, SemanticOctree};
use gpsm::pointcloud::LabeledPointCloud;
use gpsm::ClassSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn workload(n: usize, seed: u64) -> LabeledPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            [
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(0.05..0.3),
            ]
        })
        .collect();
    let labels = (0..n).map(|_| Some(rng.random_range(1..=3))).collect();
    LabeledPointCloud::with_labels(points, labels).unwrap()
}

/// Best observed seconds per point over `repeats` fresh trees.
fn per_point(cloud: &LabeledPointCloud, repeats: usize) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let mut t =
            SemanticOctree::new(OctreeConfig::default(), ClassSet::numbered(3).unwrap()).unwrap();
        let start = Instant::now();
        t.insert_scan([0.0; 3], cloud).unwrap();
        best = best.min(start.elapsed().as_secs_f64());
    }
    best / cloud.len() as f64
}

#[test]
fn insertion_throughput_is_flat_in_workload_size() {
    let small = workload(1_000, 1);
    let large = workload(1_000_000, 2);
    per_point(&small, 3);
    let t_small = per_point(&small, 50);
    let t_large = per_point(&large, 2);
    let ratio = t_small.max(t_large) / t_small.min(t_large);
    eprintln!(
        "per-point insertion: {:.1} ns (1e3), {:.1} ns (1e6)",
        t_small * 1e9,
        t_large * 1e9
    );
    assert!(
        ratio < 3.0,
        "per-point time {:.1} ns at 1e3 vs {:.1} ns at 1e6 (ratio {ratio:.2})",
        t_small * 1e9,
        t_large * 1e9
    );
}

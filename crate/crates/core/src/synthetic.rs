//! Synthetic scenes for benchmarks, examples and tests: a rendered RGBD
//! frame of a small room and 2D Gaussian clusters.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classes::{ClassInfo, ClassSet};
use crate::error::{GpsmError, Result};
use crate::pointcloud::{rgbd_to_pointcloud, CameraIntrinsics, Image, LabeledPointCloud};

pub const FLOOR: u16 = 1;
pub const WALL: u16 = 2;
pub const FURNITURE: u16 = 3;

pub fn room_class_set() -> ClassSet {
    ClassSet::new(vec![
        ClassInfo {
            id: FLOOR,
            name: "floor".into(),
            color: [150, 110, 60],
        },
        ClassInfo {
            id: WALL,
            name: "wall".into(),
            color: [200, 200, 210],
        },
        ClassInfo {
            id: FURNITURE,
            name: "furniture".into(),
            color: [40, 120, 200],
        },
    ])
    .expect("room classes are valid")
}

/// One rendered frame. Depth is in millimeters (`depth_scale` 0.001).
#[derive(Debug, Clone)]
pub struct RoomScene {
    pub intrinsics: CameraIntrinsics,
    pub depth: Image<f32>,
    pub labels: Image<u16>,
    pub colors: Image<[u8; 3]>,
}

impl RoomScene {
    pub fn cloud(&self) -> Result<LabeledPointCloud> {
        rgbd_to_pointcloud(
            &self.depth,
            Some(&self.labels),
            Some(&self.colors),
            &self.intrinsics,
        )
    }
}

/// Camera frame: x right, y down, z forward.
struct Room {
    floor_y: f64,
    ceiling_y: f64,
    side_x: f64,
    back_z: f64,
    boxes: Vec<([f64; 3], [f64; 3])>,
}

impl Room {
    fn standard() -> Self {
        Room {
            floor_y: 1.0,
            ceiling_y: -1.4,
            side_x: 1.9,
            back_z: 4.0,
            boxes: vec![
                // Cabinet against the left wall and a low table in the middle.
                ([-1.9, 0.1, 2.4], [-1.3, 1.0, 3.4]),
                ([-0.2, 0.55, 1.9], [0.8, 1.0, 2.7]),
            ],
        }
    }

    /// Nearest surface along `o + t·d` as `(t, class)`.
    fn cast(&self, d: [f64; 3]) -> Option<(f64, u16)> {
        let mut best: Option<(f64, u16)> = None;
        let mut take = |t: f64, class: u16| {
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, class));
            }
        };
        let plane = |axis: usize, at: f64| if d[axis] != 0.0 { at / d[axis] } else { -1.0 };
        take(plane(1, self.floor_y), FLOOR);
        take(plane(1, self.ceiling_y), WALL);
        take(plane(0, self.side_x), WALL);
        take(plane(0, -self.side_x), WALL);
        take(plane(2, self.back_z), WALL);
        for (lo, hi) in &self.boxes {
            // Slab intersection from the origin.
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for a in 0..3 {
                if d[a] == 0.0 {
                    if lo[a] > 0.0 || hi[a] < 0.0 {
                        t0 = f64::INFINITY;
                    }
                    continue;
                }
                let (ta, tb) = (lo[a] / d[a], hi[a] / d[a]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            if t0 <= t1 {
                take(t0, FURNITURE);
            }
        }
        best
    }
}

/// Render the room at `width × height` with focal length `focal`, adding
/// Gaussian depth noise of `noise_mm` millimeters.
pub fn render_room(
    width: u32,
    height: u32,
    focal: f64,
    noise_mm: f64,
    seed: u64,
) -> Result<RoomScene> {
    let intrinsics = CameraIntrinsics {
        fx: focal,
        fy: focal,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
        depth_scale: 0.001,
    };
    intrinsics.validate()?;
    let room = Room::standard();
    let classes = room_class_set();
    let noise = Normal::new(0.0, noise_mm.max(0.0)).map_err(|e| GpsmError::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depth = Image::filled(width, height, 0.0f32);
    let mut labels = Image::filled(width, height, 0u16);
    let mut colors = Image::filled(width, height, [0u8; 3]);
    for v in 0..height {
        for u in 0..width {
            let d = [
                (u as f64 - intrinsics.cx) / intrinsics.fx,
                (v as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            ];
            let Some((t, class)) = room.cast(d) else {
                continue;
            };
            // With d_z = 1 the ray parameter is the depth along the optical axis.
            let z_mm = t * 1000.0 + noise.sample(&mut rng);
            let i = (v * width + u) as usize;
            depth.data[i] = z_mm as f32;
            labels.data[i] = class;
            let base = classes.get(classes.index_of(class).unwrap()).unwrap().color;
            let shade = (1.0 - 0.12 * t).clamp(0.3, 1.0);
            colors.data[i] = base.map(|c| (c as f64 * shade) as u8);
        }
    }
    Ok(RoomScene {
        intrinsics,
        depth,
        labels,
        colors,
    })
}

/// The benchmark frame: 200×150 pixels (30,000 points), focal 164 px,
/// 2 mm depth noise.
pub fn room_scene(seed: u64) -> Result<RoomScene> {
    render_room(200, 150, 164.0, 2.0, seed)
}

/// Replace the labels of `round(fraction · labeled)` randomly chosen labeled
/// points with a different class drawn uniformly.
pub fn flip_labels(
    cloud: &LabeledPointCloud,
    fraction: f64,
    class_set: &ClassSet,
    seed: u64,
) -> Result<LabeledPointCloud> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GpsmError::input("flip fraction must be in [0, 1]"));
    }
    let labeled: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.labels()[i].is_some())
        .collect();
    let count = (fraction * labeled.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = class_set.ids();
    let mut labels = cloud.labels().to_vec();
    for k in rand::seq::index::sample(&mut rng, labeled.len(), count) {
        let i = labeled[k];
        let current = labels[i].unwrap();
        let others: Vec<u16> = ids.iter().copied().filter(|&c| c != current).collect();
        labels[i] = Some(others[rng.random_range(0..others.len())]);
    }
    let mut out = cloud.clone();
    out.set_labels(labels)?;
    Ok(out)
}

/// Isotropic Gaussian clusters in `d` dimensions: `per_cluster` points around
/// each center with standard deviation `spread`; labels are `1, 2, …` by
/// center.
pub fn gaussian_clusters(
    centers: &[Vec<f64>],
    per_cluster: usize,
    spread: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<u16>)> {
    let d = centers.first().map_or(0, Vec::len);
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(GpsmError::input(
            "cluster centers must share a positive dimension",
        ));
    }
    let normal = Normal::new(0.0, spread).map_err(|e| GpsmError::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = centers.len() * per_cluster;
    let mut x = DMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..per_cluster {
            let j = c * per_cluster + k;
            for r in 0..d {
                x[(r, j)] = center[r] + normal.sample(&mut rng);
            }
            labels.push(c as u16 + 1);
        }
    }
    Ok((x, labels))
}

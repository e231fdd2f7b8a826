//! Labeled point clouds: storage, PLY I/O, RGBD back-projection and
//! downsampling.

mod ply;
mod rgbd;

pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use rgbd::{
    load_color_png, load_depth_png, load_label_png, project_point, rgbd_to_pointcloud,
    save_gray16_png, CameraIntrinsics, Image,
};

use nalgebra::DMatrix;

use crate::error::{GpsmError, Result};

/// Label value written to files for points without a label.
pub const UNLABELED: u16 = u16::MAX;

/// 3D points (meters) with optional per-point class labels, colors and soft
/// label vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    points: Vec<[f32; 3]>,
    labels: Vec<Option<u16>>,
    colors: Option<Vec<[u8; 3]>>,
    label_probs: Option<Vec<Vec<f64>>>,
}

impl LabeledPointCloud {
    /// Unlabeled cloud.
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        let n = points.len();
        Self::with_labels(points, vec![None; n])
    }

    pub fn with_labels(points: Vec<[f32; 3]>, labels: Vec<Option<u16>>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(GpsmError::input(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GpsmError::input(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if labels.contains(&Some(UNLABELED)) {
            return Err(GpsmError::input(format!(
                "label {UNLABELED} is reserved; use None for unlabeled points"
            )));
        }
        Ok(LabeledPointCloud {
            points,
            labels,
            colors: None,
            label_probs: None,
        })
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.len() != self.points.len() {
            return Err(GpsmError::input("color count differs from point count"));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    /// Attach per-point soft label vectors (indexed by class-set position).
    pub fn with_label_probs(mut self, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != self.points.len() {
            return Err(GpsmError::input(
                "soft label count differs from point count",
            ));
        }
        self.label_probs = Some(probs);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn labels(&self) -> &[Option<u16>] {
        &self.labels
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn label_probs(&self) -> Option<&[Vec<f64>]> {
        self.label_probs.as_deref()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let p = self.points[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Replace every label; used to inject label noise or strip labels.
    pub fn set_labels(&mut self, labels: Vec<Option<u16>>) -> Result<()> {
        if labels.len() != self.points.len() {
            return Err(GpsmError::input("label count differs from point count"));
        }
        self.labels = labels;
        Ok(())
    }

    /// Points as a `3 × n` column matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(
            3,
            self.points.len(),
            self.points.iter().flat_map(|p| p.iter().map(|v| *v as f64)),
        )
    }

    /// Sub-cloud with the given point indices, carrying all attributes.
    pub fn select(&self, indices: &[usize]) -> LabeledPointCloud {
        LabeledPointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            label_probs: self
                .label_probs
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i].clone()).collect()),
        }
    }
}

/// Keep points `0, k, 2k, …` with their attributes.
pub fn uniform_downsample(
    cloud: &LabeledPointCloud,
    keep_one_in: usize,
) -> Result<LabeledPointCloud> {
    if keep_one_in == 0 {
        return Err(GpsmError::input("downsample factor must be at least 1"));
    }
    let idx: Vec<usize> = (0..cloud.len()).step_by(keep_one_in).collect();
    Ok(cloud.select(&idx))
}

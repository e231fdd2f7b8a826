//! Pinhole back-projection of depth frames into labeled point clouds.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::LabeledPointCloud;
use crate::error::{GpsmError, Result};

/// Pinhole camera model. `depth_scale` converts raw depth units to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    /// Commonly quoted Kinect v1 calibration at 640×480 with millimeter
    /// depth. Example values only; real data needs its own calibration.
    pub fn kinect_v1() -> Self {
        CameraIntrinsics {
            fx: 518.857901,
            fy: 519.469611,
            cx: 325.582449,
            cy: 253.736166,
            width: 640,
            height: 480,
            depth_scale: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.depth_scale > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(GpsmError::input(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }
}

/// Row-major image, `data[v * width + u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Image {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, u: u32, v: u32) -> &T {
        &self.data[v as usize * self.width as usize + u as usize]
    }

    fn check(&self, intr: &CameraIntrinsics, what: &str) -> Result<()> {
        if self.width != intr.width
            || self.height != intr.height
            || self.data.len() != self.width as usize * self.height as usize
        {
            return Err(GpsmError::input(format!(
                "{what} image is {}x{} but the camera is {}x{}",
                self.width, self.height, intr.width, intr.height
            )));
        }
        Ok(())
    }
}

/// Back-project every pixel with positive finite depth. With
/// `z = raw · depth_scale`, the point is `((u−cx)z/fx, (v−cy)z/fy, z)`.
/// Label value 0 marks an unlabeled pixel.
pub fn rgbd_to_pointcloud(
    depth: &Image<f32>,
    labels: Option<&Image<u16>>,
    colors: Option<&Image<[u8; 3]>>,
    intr: &CameraIntrinsics,
) -> Result<LabeledPointCloud> {
    intr.validate()?;
    depth.check(intr, "depth")?;
    if let Some(l) = labels {
        l.check(intr, "label")?;
    }
    if let Some(c) = colors {
        c.check(intr, "color")?;
    }
    let mut points = Vec::new();
    let mut out_labels = Vec::new();
    let mut out_colors = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let raw = *depth.get(u, v) as f64;
            if !(raw.is_finite() && raw > 0.0) {
                continue;
            }
            let z = raw * intr.depth_scale;
            let x = (u as f64 - intr.cx) * z / intr.fx;
            let y = (v as f64 - intr.cy) * z / intr.fy;
            points.push([x as f32, y as f32, z as f32]);
            out_labels.push(labels.and_then(|l| match *l.get(u, v) {
                0 => None,
                id => Some(id),
            }));
            if let Some(c) = colors {
                out_colors.push(*c.get(u, v));
            }
        }
    }
    let cloud = LabeledPointCloud::with_labels(points, out_labels)?;
    match colors {
        Some(_) => cloud.with_colors(out_colors),
        None => Ok(cloud),
    }
}

/// Pixel coordinates `(u, v)` of a camera-frame point, or `None` behind the
/// camera.
pub fn project_point(intr: &CameraIntrinsics, p: [f64; 3]) -> Option<(f64, f64)> {
    if p[2] <= 0.0 {
        return None;
    }
    Some((
        intr.fx * p[0] / p[2] + intr.cx,
        intr.fy * p[1] / p[2] + intr.cy,
    ))
}

/// Raw single-channel values of an 8- or 16-bit grayscale PNG.
fn load_gray(path: &Path) -> Result<Image<u16>> {
    let img = image::open(path)?;
    let (width, height) = (img.width(), img.height());
    let data: Vec<u16> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        other => {
            return Err(GpsmError::input(format!(
                "{} is {:?}, expected single-channel grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(Image {
        width,
        height,
        data,
    })
}

/// Depth PNG in raw sensor units (scaled by the intrinsics' `depth_scale`).
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<Image<f32>> {
    let g = load_gray(path.as_ref())?;
    Ok(Image {
        width: g.width,
        height: g.height,
        data: g.data.into_iter().map(f32::from).collect(),
    })
}

pub fn load_label_png(path: impl AsRef<Path>) -> Result<Image<u16>> {
    load_gray(path.as_ref())
}

pub fn load_color_png(path: impl AsRef<Path>) -> Result<Image<[u8; 3]>> {
    let img = image::open(path)?.into_rgb8();
    let (width, height) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Ok(Image {
        width,
        height,
        data,
    })
}

/// Write a 16-bit grayscale PNG.
pub fn save_gray16_png(img: &Image<u16>, path: impl AsRef<Path>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width, img.height, img.data.clone())
            .ok_or_else(|| GpsmError::input("image buffer size does not match its dimensions"))?;
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_camera() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 2.0,
            fy: 3.0,
            cx: 1.5,
            cy: 1.0,
            width: 4,
            height: 4,
            depth_scale: 0.5,
        }
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let intr = CameraIntrinsics {
            cx: 2.0,
            ..small_camera()
        };
        let depth = Image::from_fn(4, 4, |u, v| if (u, v) == (2, 1) { 6.0 } else { 0.0 });
        let c = rgbd_to_pointcloud(&depth, None, None, &intr).unwrap();
        assert_eq!(c.points(), &[[0.0, 0.0, 3.0]]);
    }

    #[test]
    fn four_by_four_matches_hand_computation() {
        let intr = small_camera();
        let depth = Image::from_fn(4, 4, |u, v| (1 + u + 4 * v) as f32);
        let labels = Image::from_fn(4, 4, |u, _| u as u16);
        let c = rgbd_to_pointcloud(&depth, Some(&labels), None, &intr).unwrap();
        assert_eq!(c.len(), 16);
        // Pixel (u=3, v=2): raw 12, z = 6, x = 1.5·6/2, y = 1·6/3.
        let p = c.points()[11];
        assert_eq!(p, [4.5, 2.0, 6.0]);
        assert_eq!(c.labels()[11], Some(3));
        assert_eq!(c.labels()[8], None);
    }

    #[test]
    fn zero_depth_gives_empty_cloud_and_mismatch_errors() {
        let intr = small_camera();
        let c = rgbd_to_pointcloud(&Image::filled(4, 4, 0.0), None, None, &intr).unwrap();
        assert!(c.is_empty());
        assert!(rgbd_to_pointcloud(&Image::filled(3, 4, 1.0), None, None, &intr).is_err());
        let labels = Image::filled(4, 5, 1u16);
        assert!(rgbd_to_pointcloud(&Image::filled(4, 4, 1.0), Some(&labels), None, &intr).is_err());
    }

    #[test]
    fn reprojection_recovers_pixels() {
        let intr = CameraIntrinsics::kinect_v1();
        let depth = Image::from_fn(640, 480, |u, v| 500.0 + ((u * 7 + v * 13) % 4000) as f32);
        let c = rgbd_to_pointcloud(&depth, None, None, &intr).unwrap();
        for (i, p) in c.points().iter().enumerate().step_by(37) {
            let (u, v) = project_point(&intr, [p[0] as f64, p[1] as f64, p[2] as f64]).unwrap();
            let (u0, v0) = ((i % 640) as f64, (i / 640) as f64);
            assert!((u - u0).abs() < 0.5 && (v - v0).abs() < 0.5);
        }
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img = Image::from_fn(5, 3, |u, v| (u * 1000 + v) as u16);
        save_gray16_png(&img, &path).unwrap();
        assert_eq!(load_label_png(&path).unwrap(), img);
        assert_eq!(load_depth_png(&path).unwrap().data[7], 2001.0);
    }
}

//! Simulated sensor readings from map geometry: depth and RGB images for a
//! pinhole camera, and range vectors for a planar laser.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::transform::RigidTransform;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("cloud has no colors")]
    NoColor,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid laser configuration: {0}")]
    InvalidLaser(&'static str),
    #[error("depth buffer has {got} values, expected {expected}")]
    SizeMismatch { got: usize, expected: usize },
}

/// Ideal pinhole camera with a depth range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Default for PinholeIntrinsics {
    /// Conventional 640x480 RGB-D values.
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            near: 0.1,
            far: 10.0,
        }
    }
}

impl PinholeIntrinsics {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(ProjectionError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(ProjectionError::InvalidIntrinsics("need 0 < near < far"));
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(ProjectionError::InvalidIntrinsics(
                "principal point outside the image",
            ));
        }
        Ok(())
    }

    /// Pixel `(u, v)` hit by camera-frame point `p`, if in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at pixel `(u, v)` with depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Ray direction (z = 1) through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.back_project(u, v, 1.0)
    }
}

/// Row-major depth in meters, 0 meaning no return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, depth: Vec<f64>) -> Result<Self, ProjectionError> {
        let expected = width as usize * height as usize;
        if depth.len() != expected {
            return Err(ProjectionError::SizeMismatch {
                got: depth.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.depth[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, z: f64) {
        let w = self.width as usize;
        self.depth[v as usize * w + u as usize] = z;
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&z| z > 0.0).count()
    }
}

/// Z-buffer pass shared by the depth and RGB renderers; returns the depth
/// image and, per pixel, the index of the winning point.
fn rasterize(
    cloud: &PointCloud,
    pose: &RigidTransform,
    k: &PinholeIntrinsics,
    splat_px: u32,
) -> (DepthImage, Vec<Option<usize>>) {
    let mut img = DepthImage::zeros(k.width, k.height);
    let mut winner = vec![None; img.depth.len()];
    let to_cam = pose.inverse();
    let r = splat_px.max(1) as i64 - 1;
    let (w, h) = (k.width as i64, k.height as i64);
    for (idx, p) in cloud.points.iter().enumerate() {
        let pc = to_cam.apply_point(p);
        if !(pc.z >= k.near && pc.z <= k.far) {
            continue;
        }
        let Some((u, v)) = k.project(&pc) else {
            continue;
        };
        let (ui, vi) = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
        for dv in -r..=r {
            for du in -r..=r {
                let (x, y) = (ui + du, vi + dv);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let cell = (y * w + x) as usize;
                let cur = img.depth[cell];
                if cur == 0.0 || pc.z < cur {
                    img.depth[cell] = pc.z;
                    winner[cell] = Some(idx);
                }
            }
        }
    }
    (img, winner)
}

/// Depth image seen from `pose` (camera-to-map transform); `splat_px = 1`
/// writes only the hit pixel, larger values a `(2 splat_px - 1)`-wide square.
pub fn render_depth(
    cloud: &PointCloud,
    pose: &RigidTransform,
    k: &PinholeIntrinsics,
    splat_px: u32,
) -> DepthImage {
    rasterize(cloud, pose, k, splat_px).0
}

/// Color of the z-buffer winner per pixel; black background.
pub fn render_rgb(
    cloud: &PointCloud,
    pose: &RigidTransform,
    k: &PinholeIntrinsics,
    splat_px: u32,
) -> Result<RgbImage, ProjectionError> {
    let colors = cloud.colors.as_ref().ok_or(ProjectionError::NoColor)?;
    let (_, winner) = rasterize(cloud, pose, k, splat_px);
    let mut img = RgbImage::new(k.width, k.height);
    for (cell, win) in winner.iter().enumerate() {
        if let Some(i) = win {
            let x = (cell % k.width as usize) as u32;
            let y = (cell / k.width as usize) as u32;
            img.put_pixel(x, y, Rgb(colors[*i]));
        }
    }
    Ok(img)
}

/// Nonzero pixels back-projected and moved into the map frame by `pose`.
pub fn unproject(img: &DepthImage, k: &PinholeIntrinsics, pose: &RigidTransform) -> PointCloud {
    let mut pts = Vec::with_capacity(img.valid_count());
    for v in 0..img.height {
        for u in 0..img.width {
            let z = img.get(u, v);
            if z > 0.0 {
                pts.push(pose.apply_point(&k.back_project(u as f64, v as f64, z)));
            }
        }
    }
    PointCloud::new(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    pub angle_min: f64,
    pub angle_max: f64,
    pub n_beams: usize,
    pub max_range: f64,
    pub slab_half_height: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            angle_min: -std::f64::consts::PI,
            angle_max: std::f64::consts::PI,
            n_beams: 360,
            max_range: 10.0,
            slab_half_height: 0.05,
        }
    }
}

impl LaserConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.angle_min < self.angle_max) {
            return Err(ProjectionError::InvalidLaser(
                "angle_min must be below angle_max",
            ));
        }
        if self.n_beams < 2 {
            return Err(ProjectionError::InvalidLaser("at least two beams"));
        }
        if !(self.max_range > 0.0) || !(self.slab_half_height >= 0.0) {
            return Err(ProjectionError::InvalidLaser("ranges must be positive"));
        }
        Ok(())
    }

    /// Angular spacing between consecutive beams.
    pub fn increment(&self) -> f64 {
        (self.angle_max - self.angle_min) / (self.n_beams - 1) as f64
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.increment()
    }

    /// Sensor-frame 2D points of the finite returns of `ranges`.
    pub fn scan_points(&self, ranges: &[f64]) -> Vec<[f64; 2]> {
        ranges
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0 && r < self.max_range)
            .map(|(i, &r)| {
                let a = self.beam_angle(i);
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }
}

/// Range per beam: points inside the horizontal slab around the sensor
/// plane are binned by bearing; each beam keeps its closest planar range.
pub fn render_scan(
    cloud: &PointCloud,
    pose: &RigidTransform,
    cfg: &LaserConfig,
) -> Result<Vec<f64>, ProjectionError> {
    cfg.validate()?;
    let mut ranges = vec![cfg.max_range; cfg.n_beams];
    let to_sensor = pose.inverse();
    let inc = cfg.increment();
    for p in &cloud.points {
        let q = to_sensor.apply_point(p);
        if q.z.abs() > cfg.slab_half_height {
            continue;
        }
        let r = q.x.hypot(q.y);
        if r <= 1e-9 || r > cfg.max_range {
            continue;
        }
        let bearing = q.y.atan2(q.x);
        let mut bin = ((bearing - cfg.angle_min) / inc).round();
        // A full-circle scan wraps its last bin onto the first.
        if bin < 0.0 || bin >= cfg.n_beams as f64 {
            let turn = std::f64::consts::TAU / inc;
            if bin < 0.0 {
                bin += turn.round();
            } else {
                bin -= turn.round();
            }
        }
        if bin < 0.0 || bin >= cfg.n_beams as f64 {
            continue;
        }
        let b = bin as usize;
        if r < ranges[b] {
            ranges[b] = r;
        }
    }
    Ok(ranges)
}

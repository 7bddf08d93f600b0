//! Mosaic coordinates, detection projection, cross-pass deduplication and the
//! detection-density heatmap.
//!
//! Mosaic coordinates are the pixel grid of the first frame, extended over
//! the plane. Each frame maps into it through a rough translation followed
//! by a homography refinement; both are kept per frame so every detection can
//! be carried into the mosaic.

mod dedupe;
mod io;
mod kde;
mod project;
mod register;

pub use dedupe::{dedupe_cross_pass, Cluster, ClusterInput};
pub use io::{
    load_correspondences, read_heatmap, read_pgm, transforms_to_string, write_heatmap,
    write_transforms, HeatmapMode,
};
pub use kde::{render_kde, HeatmapRaster, RasterSpec};
pub use project::{project_detection, ProjectedDetection};
pub use register::{
    estimate_homography, estimate_shift, pose_transforms, refine_pass, rough_pass_images,
    rough_pass_poses, Correspondence, GrayImage, NccConfig, Registration, RoughTranslation,
};

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Denominators below this put a point at infinity.
pub const W_EPS: f64 = 1e-12;

/// Frame pixels -> mosaic pixels as `homography * translate(translation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTransform {
    pub frame_id: u64,
    pub translation: (f64, f64),
    /// Row-major with `h33 = 1`.
    pub homography: Matrix3<f64>,
}

impl FrameTransform {
    pub fn identity(frame_id: u64) -> Self {
        Self::translation(frame_id, (0.0, 0.0))
    }

    pub fn translation(frame_id: u64, translation: (f64, f64)) -> Self {
        Self {
            frame_id,
            translation,
            homography: Matrix3::identity(),
        }
    }

    /// The composed 3x3 map.
    pub fn matrix(&self) -> Matrix3<f64> {
        let t = Matrix3::new(
            1.0,
            0.0,
            self.translation.0,
            0.0,
            1.0,
            self.translation.1,
            0.0,
            0.0,
            1.0,
        );
        self.homography * t
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        apply_homography(&self.homography, x + self.translation.0, y + self.translation.1)
    }

    pub fn is_invertible(&self) -> bool {
        self.homography.determinant().abs() > 1e-12
    }
}

pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Result<(f64, f64)> {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    if w.abs() < W_EPS {
        return Err(Error::PointAtInfinity);
    }
    let u = h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)];
    let v = h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)];
    Ok((u / w, v / w))
}

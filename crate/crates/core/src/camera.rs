//! Nadir pinhole geometry: frame pixels <-> field meters.
//!
//! Image axis `+x` points along heading `(cos yaw, sin yaw)` and `+y` along
//! `(-sin yaw, cos yaw)`; the image centre sits under the camera.

use crate::error::{Error, Result};
use crate::ingest::{FrameMeta, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadirView {
    pub pose: Pose,
    pub gsd_m: f64,
    pub width_px: f64,
    pub height_px: f64,
}

impl NadirView {
    pub fn of(frame: &FrameMeta) -> Result<Self> {
        let pose = frame.pose.ok_or(Error::MissingPose(frame.frame_id))?;
        let gsd_m = frame.gsd_m.ok_or_else(|| {
            Error::Invalid(format!("frame {} has a pose but no GSD", frame.frame_id))
        })?;
        Ok(Self {
            pose,
            gsd_m,
            width_px: f64::from(frame.width_px),
            height_px: f64::from(frame.height_px),
        })
    }

    pub fn pixel_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.pose.yaw_rad.sin_cos();
        let u = (px - self.width_px / 2.0) * self.gsd_m;
        let v = (py - self.height_px / 2.0) * self.gsd_m;
        (self.pose.x_m + u * c - v * s, self.pose.y_m + u * s + v * c)
    }

    pub fn world_to_pixel(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.pose.yaw_rad.sin_cos();
        let dx = wx - self.pose.x_m;
        let dy = wy - self.pose.y_m;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (
            self.width_px / 2.0 + u / self.gsd_m,
            self.height_px / 2.0 + v / self.gsd_m,
        )
    }

    /// Whether a world point falls inside the image, `[0, W) x [0, H)`.
    pub fn sees(&self, wx: f64, wy: f64) -> bool {
        let (px, py) = self.world_to_pixel(wx, wy);
        px >= 0.0 && px < self.width_px && py >= 0.0 && py < self.height_px
    }

    /// Ground footprint corners, clockwise from the image's top-left.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (w, h) = (self.width_px, self.height_px);
        [
            self.pixel_to_world(0.0, 0.0),
            self.pixel_to_world(w, 0.0),
            self.pixel_to_world(w, h),
            self.pixel_to_world(0.0, h),
        ]
    }
}

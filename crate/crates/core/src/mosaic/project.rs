use super::FrameTransform;
use crate::error::{Error, Result};
use crate::types::{Detection, ScoreVector};

/// A detection carried into mosaic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDetection {
    pub detection_id: u64,
    pub frame_id: u64,
    /// Box centroid mapped through the frame transform.
    pub centroid: (f64, f64),
    /// Axis-aligned bounds of the four mapped corners: `(min_x, min_y, max_x, max_y)`.
    pub bounds: (f64, f64, f64, f64),
    pub scores: ScoreVector,
}

impl ProjectedDetection {
    pub fn width(&self) -> f64 {
        self.bounds.2 - self.bounds.0
    }

    pub fn height(&self) -> f64 {
        self.bounds.3 - self.bounds.1
    }

    pub fn confidence(&self) -> f64 {
        self.scores.confidence()
    }
}

pub fn project_detection(det: &Detection, transform: &FrameTransform) -> Result<ProjectedDetection> {
    if det.frame_id != transform.frame_id {
        return Err(Error::Invalid(format!(
            "detection {} is in frame {}, transform is for frame {}",
            det.detection_id, det.frame_id, transform.frame_id
        )));
    }
    let (cx, cy) = det.bbox.centroid();
    let centroid = transform.apply(cx, cy)?;
    let mut bounds = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in det.bbox.corners() {
        let (u, v) = transform.apply(x, y)?;
        bounds.0 = bounds.0.min(u);
        bounds.1 = bounds.1.min(v);
        bounds.2 = bounds.2.max(u);
        bounds.3 = bounds.3.max(v);
    }
    Ok(ProjectedDetection {
        detection_id: det.detection_id,
        frame_id: det.frame_id,
        centroid,
        bounds,
        scores: det.scores.clone(),
    })
}

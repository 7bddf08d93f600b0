//! Domain types and box geometry shared by every stage.
//!
//! Pixel coordinates are continuous, origin top-left, y increasing downward.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Ordered class labels plus the target-set membership of each class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    is_target: Vec<bool>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>, is_target: Vec<bool>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Invalid("vocabulary is empty".into()));
        }
        if names.len() != is_target.len() {
            return Err(Error::Invalid(format!(
                "{} class names but {} target flags",
                names.len(),
                is_target.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::Invalid("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Invalid(format!("duplicate class name `{n}`")));
            }
        }
        Ok(Self { names, is_target })
    }

    /// Every class is a target.
    pub fn all_targets<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let flags = vec![true; names.len()];
        Self::new(names, flags)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn is_target(&self, class: usize) -> bool {
        self.is_target.get(class).copied().unwrap_or(false)
    }

    pub fn target_flags(&self) -> &[bool] {
        &self.is_target
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Axis-aligned box: top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Invalid("non-finite box coordinate".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Invalid(format!(
                "box dimensions must be positive, got w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Box of the given extent centred on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in clockwise order starting at the top-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x, self.y),
            (self.x + self.w, self.y),
            (self.x + self.w, self.y + self.h),
            (self.x, self.y + self.h),
        ]
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centroids.
pub fn centroid_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.centroid();
    let (bx, by) = b.centroid();
    (ax - bx).hypot(ay - by)
}

/// Per-class confidences, in vocabulary order. Entries lie in `[0, 1]` and
/// need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Invalid("empty score vector".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Invalid(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self(scores))
    }

    pub fn one_hot(len: usize, class: usize) -> Self {
        let mut v = vec![0.0; len];
        v[class] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Maximum entry.
    pub fn confidence(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the maximum entry; ties go to the lowest index.
    pub fn class(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.0.iter().enumerate().skip(1) {
            if s > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn dot(&self, other: &ScoreVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ScoreLength {
                expected: self.len(),
                found: other.len(),
                line: None,
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Entrywise arithmetic mean. All vectors must share one length.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a ScoreVector>) -> Result<ScoreVector> {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Invalid("mean of no score vectors".into()))?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for v in iter {
            if v.len() != acc.len() {
                return Err(Error::ScoreLength {
                    expected: acc.len(),
                    found: v.len(),
                    line: None,
                });
            }
            for (a, s) in acc.iter_mut().zip(&v.0) {
                *a += s;
            }
            n += 1;
        }
        let n = n as f64;
        for a in &mut acc {
            *a = (*a / n).clamp(0.0, 1.0);
        }
        Ok(ScoreVector(acc))
    }
}

/// One box in one frame with its full per-class score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u64,
    pub detection_id: u64,
    pub bbox: BBox,
    pub scores: ScoreVector,
}

/// Detections matched across frames, with the mean score vector of its members.
///
/// Members keep their raw scores; the re-scored view is exposed through
/// [`Tubelet::effective_detections`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tubelet {
    id: u64,
    detections: Vec<Detection>,
    aggregate: ScoreVector,
}

impl Tubelet {
    pub fn new(id: u64, detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::Invalid("tubelet without detections".into()));
        }
        if detections
            .windows(2)
            .any(|w| w[1].frame_id <= w[0].frame_id)
        {
            return Err(Error::Invalid(format!(
                "tubelet {id}: frame ids must strictly increase"
            )));
        }
        let aggregate = ScoreVector::mean(detections.iter().map(|d| &d.scores))?;
        Ok(Self {
            id,
            detections,
            aggregate,
        })
    }

    pub fn singleton(id: u64, detection: Detection) -> Self {
        let aggregate = detection.scores.clone();
        Self {
            id,
            detections: vec![detection],
            aggregate,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    pub fn aggregate(&self) -> &ScoreVector {
        &self.aggregate
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn head(&self) -> &Detection {
        &self.detections[0]
    }

    pub fn tail(&self) -> &Detection {
        &self.detections[self.detections.len() - 1]
    }

    pub fn first_frame(&self) -> u64 {
        self.head().frame_id
    }

    pub fn last_frame(&self) -> u64 {
        self.tail().frame_id
    }

    /// Confidence of the aggregate score vector.
    pub fn confidence(&self) -> f64 {
        self.aggregate.confidence()
    }

    pub fn class(&self) -> usize {
        self.aggregate.class()
    }

    /// Members with their score vectors replaced by the aggregate.
    pub fn effective_detections(&self) -> impl Iterator<Item = Detection> + '_ {
        self.detections.iter().map(|d| Detection {
            scores: self.aggregate.clone(),
            ..d.clone()
        })
    }

    /// Recompute the aggregate from the raw member scores.
    pub fn rescore(&self) -> Tubelet {
        let aggregate = ScoreVector::mean(self.detections.iter().map(|d| &d.scores))
            .expect("tubelet members share one score length");
        Tubelet {
            id: self.id,
            detections: self.detections.clone(),
            aggregate,
        }
    }
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub object_id: u64,
    pub class: usize,
    /// Field coordinates in meters.
    pub world: (f64, f64),
    /// Optional per-frame pixel annotations `(frame_id, px, py)`.
    pub pixels: Vec<(u64, f64, f64)>,
}

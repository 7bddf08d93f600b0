//! Detection, false-alarm and classification metrics.
//!
//! * `P_d  = N_true / N_T` counts detected target objects, class-agnostic
//!   within the target set.
//! * `D_FA = N_false / A` counts target-class tubelets that claim no object.
//! * `P_c  = N_correct / N_true` counts detected objects with the right class.
//!
//! Counting is per object: each ground-truth object is claimed by at most one
//! tubelet, and extra tubelets on an already-claimed object are false alarms.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::NadirView;
use crate::error::{Error, Result};
use crate::ingest::{FrameMeta, RunDataset};
use crate::tubelet::{process, PipelineConfig};
use crate::types::{ClassVocabulary, GroundTruthObject, Tubelet};

pub const NOT_DETECTED: &str = "Not Detected";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    /// Ground-plane association radius.
    pub match_radius_m: f64,
    /// Radius used with per-frame pixel annotations; derived from
    /// `match_radius_m` and the frame GSD when absent.
    pub match_radius_px: Option<f64>,
    pub threshold_grid: Vec<f64>,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            match_radius_m: 1.0,
            match_radius_px: None,
            threshold_grid: default_threshold_grid(),
        }
    }
}

/// 0.00, 0.05, ..., 0.95
pub fn default_threshold_grid() -> Vec<f64> {
    (0..20).map(|i| f64::from(i * 5) / 100.0).collect()
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius_m.is_finite() && self.match_radius_m > 0.0) {
            return Err(Error::Invalid("match_radius_m must be > 0".into()));
        }
        if matches!(self.match_radius_px, Some(r) if !(r.is_finite() && r > 0.0)) {
            return Err(Error::Invalid("match_radius_px must be > 0".into()));
        }
        if self.threshold_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Invalid("thresholds must lie in [0, 1]".into()));
        }
        if self.threshold_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("threshold grid must be ascending".into()));
        }
        Ok(())
    }
}

/// Fate of one tubelet after association.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive { object: usize },
    FalseAlarm,
    /// Argmax class is outside the target set.
    NonTarget,
    /// Below the confidence threshold.
    Rejected,
}

/// Result of matching candidates (tubelets or clusters) to target objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub outcomes: Vec<Outcome>,
    /// Predicted class per candidate.
    pub predicted: Vec<usize>,
    /// True class of every target object.
    pub object_classes: Vec<usize>,
    pub object_ids: Vec<u64>,
    /// Claiming candidate per target object.
    pub claimed_by: Vec<Option<usize>>,
}

impl Assignment {
    pub fn n_true(&self) -> u64 {
        self.claimed_by.iter().filter(|c| c.is_some()).count() as u64
    }

    pub fn n_false(&self) -> u64 {
        self.outcomes
            .iter()
            .filter(|o| **o == Outcome::FalseAlarm)
            .count() as u64
    }

    pub fn false_alarms(&self) -> impl Iterator<Item = usize> + '_ {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Outcome::FalseAlarm)
            .map(|(i, _)| i)
    }
}

/// Precomputed candidate-object distances; assigning at a threshold is then a
/// greedy pass over the pre-sorted edge list.
#[derive(Debug, Clone)]
pub struct Associator {
    classes: Vec<usize>,
    confidences: Vec<f64>,
    targets: Vec<bool>,
    object_ids: Vec<u64>,
    object_classes: Vec<usize>,
    /// (distance, candidate, object), ascending
    edges: Vec<(f64, usize, usize)>,
}

fn target_objects<'a>(
    gt: &'a [GroundTruthObject],
    vocab: &ClassVocabulary,
) -> Vec<&'a GroundTruthObject> {
    gt.iter().filter(|o| vocab.is_target(o.class)).collect()
}

impl Associator {
    /// Tubelets localized through camera poses when every member frame has
    /// one, else through per-frame pixel annotations.
    pub fn for_tubelets(
        tubelets: &[Tubelet],
        ground_truth: &[GroundTruthObject],
        frames: &[FrameMeta],
        vocab: &ClassVocabulary,
        cfg: &AssociationConfig,
    ) -> Result<Self> {
        let objects = target_objects(ground_truth, vocab);
        let classes: Vec<usize> = tubelets.iter().map(Tubelet::class).collect();
        let confidences: Vec<f64> = tubelets.iter().map(Tubelet::confidence).collect();
        let targets: Vec<bool> = classes.iter().map(|c| vocab.is_target(*c)).collect();
        let mut assoc = Self {
            classes,
            confidences,
            targets,
            object_ids: objects.iter().map(|o| o.object_id).collect(),
            object_classes: objects.iter().map(|o| o.class).collect(),
            edges: Vec::new(),
        };
        if objects.is_empty() || tubelets.is_empty() {
            return Ok(assoc);
        }

        let by_id: HashMap<u64, &FrameMeta> = frames.iter().map(|f| (f.frame_id, f)).collect();
        let views: Option<HashMap<u64, NadirView>> = tubelets
            .iter()
            .flat_map(|t| t.detections())
            .map(|d| {
                let f = by_id.get(&d.frame_id)?;
                NadirView::of(f).ok().map(|v| (d.frame_id, v))
            })
            .collect();

        let mut edges = Vec::new();
        if let Some(views) = views {
            let radius = cfg.match_radius_m;
            for (ti, t) in tubelets.iter().enumerate() {
                if !assoc.targets[ti] {
                    continue;
                }
                let pos = world_position(t, &views);
                for (oi, o) in objects.iter().enumerate() {
                    let d = (pos.0 - o.world.0).hypot(pos.1 - o.world.1);
                    if d <= radius {
                        edges.push((d, ti, oi));
                    }
                }
            }
        } else if objects.iter().any(|o| !o.pixels.is_empty()) {
            let radius = match cfg.match_radius_px {
                Some(r) => r,
                None => {
                    let gsd = frames
                        .iter()
                        .find_map(|f| f.gsd_m)
                        .ok_or(Error::NoLocalization)?;
                    cfg.match_radius_m / gsd
                }
            };
            for (ti, t) in tubelets.iter().enumerate() {
                if !assoc.targets[ti] {
                    continue;
                }
                for (oi, o) in objects.iter().enumerate() {
                    if let Some(d) = pixel_distance(t, o) {
                        if d <= radius {
                            edges.push((d, ti, oi));
                        }
                    }
                }
            }
        } else {
            return Err(Error::NoLocalization);
        }
        sort_edges(&mut edges);
        assoc.edges = edges;
        Ok(assoc)
    }

    /// Candidates already placed on the ground plane, e.g. cross-pass clusters.
    pub fn for_points(
        positions: &[(f64, f64)],
        classes: &[usize],
        confidences: &[f64],
        ground_truth: &[GroundTruthObject],
        vocab: &ClassVocabulary,
        radius_m: f64,
    ) -> Self {
        let objects = target_objects(ground_truth, vocab);
        let targets: Vec<bool> = classes.iter().map(|c| vocab.is_target(*c)).collect();
        let mut edges = Vec::new();
        for (ti, p) in positions.iter().enumerate() {
            if !targets[ti] {
                continue;
            }
            for (oi, o) in objects.iter().enumerate() {
                let d = (p.0 - o.world.0).hypot(p.1 - o.world.1);
                if d <= radius_m {
                    edges.push((d, ti, oi));
                }
            }
        }
        sort_edges(&mut edges);
        Self {
            classes: classes.to_vec(),
            confidences: confidences.to_vec(),
            targets,
            object_ids: objects.iter().map(|o| o.object_id).collect(),
            object_classes: objects.iter().map(|o| o.class).collect(),
            edges,
        }
    }

    /// Greedy nearest-first assignment among candidates with
    /// `confidence >= threshold`.
    pub fn assign(&self, threshold: f64) -> Assignment {
        let kept: Vec<bool> = self.confidences.iter().map(|c| *c >= threshold).collect();
        let mut outcomes: Vec<Outcome> = (0..self.classes.len())
            .map(|i| match (kept[i], self.targets[i]) {
                (false, _) => Outcome::Rejected,
                (true, false) => Outcome::NonTarget,
                (true, true) => Outcome::FalseAlarm,
            })
            .collect();
        let mut claimed_by = vec![None; self.object_ids.len()];
        for &(_, ti, oi) in &self.edges {
            if kept[ti] && outcomes[ti] == Outcome::FalseAlarm && claimed_by[oi].is_none() {
                outcomes[ti] = Outcome::TruePositive { object: oi };
                claimed_by[oi] = Some(ti);
            }
        }
        Assignment {
            outcomes,
            predicted: self.classes.clone(),
            object_classes: self.object_classes.clone(),
            object_ids: self.object_ids.clone(),
            claimed_by,
        }
    }
}

fn sort_edges(edges: &mut [(f64, usize, usize)]) {
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
}

/// Mean of the members' centroids projected onto the ground plane.
fn world_position(t: &Tubelet, views: &HashMap<u64, NadirView>) -> (f64, f64) {
    let (mut sx, mut sy) = (0.0, 0.0);
    for d in t.detections() {
        let (cx, cy) = d.bbox.centroid();
        let (wx, wy) = views[&d.frame_id].pixel_to_world(cx, cy);
        sx += wx;
        sy += wy;
    }
    let n = t.len() as f64;
    (sx / n, sy / n)
}

/// Mean pixel distance over frames where both the tubelet and an annotation
/// of the object exist.
fn pixel_distance(t: &Tubelet, o: &GroundTruthObject) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in t.detections() {
        if let Ok(k) = o.pixels.binary_search_by_key(&d.frame_id, |p| p.0) {
            let (_, px, py) = o.pixels[k];
            let (cx, cy) = d.bbox.centroid();
            sum += (cx - px).hypot(cy - py);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn associate(
    tubelets: &[Tubelet],
    ground_truth: &[GroundTruthObject],
    frames: &[FrameMeta],
    vocab: &ClassVocabulary,
    cfg: &AssociationConfig,
) -> Result<Assignment> {
    Ok(Associator::for_tubelets(tubelets, ground_truth, frames, vocab, cfg)?.assign(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Class names followed by [`NOT_DETECTED`].
    pub labels: Vec<String>,
    /// Rows are true labels, columns predicted labels.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = labels.len();
        if n < 2 || labels[n - 1] != NOT_DETECTED {
            return Err(Error::Invalid(format!(
                "confusion labels must end with `{NOT_DETECTED}`"
            )));
        }
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid(format!("confusion matrix must be {n}x{n}")));
        }
        Ok(Self { labels, counts })
    }

    /// Number of real classes, excluding the Not Detected label.
    pub fn n_classes(&self) -> usize {
        self.labels.len() - 1
    }

    fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n_true_detections: u64,
    pub n_targets: u64,
    pub n_false_detections: u64,
    pub n_correct_classifications: u64,
    pub area_m2: f64,
    pub p_d: Option<f64>,
    pub d_fa: f64,
    pub p_c: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassRow>,
    pub accuracy: Option<f64>,
    pub macro_avg: AverageRow,
    pub weighted_avg: AverageRow,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    /// Build a report straight from a confusion matrix whose rows cover the
    /// target objects (true class x predicted class, or Not Detected).
    ///
    /// Per-class precision is diagonal over column sum and recall diagonal
    /// over row sum, 0 when undefined. The macro average runs over every
    /// label occurring in the matrix, Not Detected included; the weighted
    /// average uses supports as weights.
    pub fn from_confusion(
        confusion: ConfusionMatrix,
        n_false_detections: u64,
        area_m2: f64,
        threshold: f64,
    ) -> Result<Self> {
        if !(area_m2.is_finite() && area_m2 > 0.0) {
            return Err(Error::Invalid(format!("area must be positive, got {area_m2}")));
        }
        let k = confusion.n_classes();
        let nd = k;
        let n_targets: u64 = (0..k).map(|r| confusion.row_sum(r)).sum();
        let not_detected: u64 = (0..k).map(|r| confusion.counts[r][nd]).sum();
        let n_true = n_targets - not_detected;
        let n_correct: u64 = (0..k).map(|i| confusion.counts[i][i]).sum();

        let rows: Vec<ClassRow> = (0..=k)
            .map(|i| {
                let tp = confusion.counts[i][i];
                let support = confusion.row_sum(i);
                let precision = ratio(tp, confusion.col_sum(i));
                let recall = ratio(tp, support);
                ClassRow {
                    label: confusion.labels[i].clone(),
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();

        let present: Vec<&ClassRow> = rows
            .iter()
            .enumerate()
            .filter(|(i, r)| r.support > 0 || confusion.col_sum(*i) > 0)
            .map(|(_, r)| r)
            .collect();
        let m = present.len().max(1) as f64;
        let total_support: u64 = rows.iter().map(|r| r.support).sum();
        let macro_avg = AverageRow {
            precision: present.iter().map(|r| r.precision).sum::<f64>() / m,
            recall: present.iter().map(|r| r.recall).sum::<f64>() / m,
            f1: present.iter().map(|r| r.f1).sum::<f64>() / m,
            support: total_support,
        };
        let w = |f: fn(&ClassRow) -> f64| {
            if total_support == 0 {
                0.0
            } else {
                rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total_support as f64
            }
        };
        let weighted_avg = AverageRow {
            precision: w(|r| r.precision),
            recall: w(|r| r.recall),
            f1: w(|r| r.f1),
            support: total_support,
        };

        Ok(Self {
            threshold,
            n_true_detections: n_true,
            n_targets,
            n_false_detections,
            n_correct_classifications: n_correct,
            area_m2,
            p_d: (n_targets > 0).then(|| n_true as f64 / n_targets as f64),
            d_fa: n_false_detections as f64 / area_m2,
            p_c: (n_true > 0).then(|| n_correct as f64 / n_true as f64),
            accuracy: (total_support > 0).then(|| n_correct as f64 / total_support as f64),
            per_class: rows.into_iter().take(k).collect(),
            confusion,
            macro_avg,
            weighted_avg,
        })
    }
}

/// Confusion matrix over the vocabulary classes for an assignment.
pub fn confusion_from_assignment(a: &Assignment, vocab: &ClassVocabulary) -> ConfusionMatrix {
    let k = vocab.len();
    let mut counts = vec![vec![0u64; k + 1]; k + 1];
    for (oi, &true_class) in a.object_classes.iter().enumerate() {
        let col = match a.claimed_by[oi] {
            Some(ti) => a.predicted[ti],
            None => k,
        };
        counts[true_class][col] += 1;
    }
    let mut labels = vocab.names().to_vec();
    labels.push(NOT_DETECTED.to_string());
    ConfusionMatrix { labels, counts }
}

pub fn compute_metrics(
    assignment: &Assignment,
    vocab: &ClassVocabulary,
    area_m2: f64,
    threshold: f64,
) -> Result<MetricsReport> {
    MetricsReport::from_confusion(
        confusion_from_assignment(assignment, vocab),
        assignment.n_false(),
        area_m2,
        threshold,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub p_d: Option<f64>,
    pub d_fa: f64,
    pub p_c: Option<f64>,
}

impl From<&MetricsReport> for RocPoint {
    fn from(r: &MetricsReport) -> Self {
        Self {
            threshold: r.threshold,
            p_d: r.p_d,
            d_fa: r.d_fa,
            p_c: r.p_c,
        }
    }
}

/// Full report at every grid threshold, ascending. Thresholds apply to the
/// re-scored tubelet confidence.
pub fn roc_reports(
    dataset: &RunDataset,
    pipeline: &PipelineConfig,
    cfg: &AssociationConfig,
) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let tubelets = process(&dataset.detections, pipeline)?;
    reports_for_tubelets(&tubelets, dataset, cfg)
}

pub fn reports_for_tubelets(
    tubelets: &[Tubelet],
    dataset: &RunDataset,
    cfg: &AssociationConfig,
) -> Result<Vec<MetricsReport>> {
    let empty = Vec::new();
    let gt = dataset.ground_truth.as_ref().unwrap_or(&empty);
    let assoc =
        Associator::for_tubelets(tubelets, gt, &dataset.frames, &dataset.vocabulary, cfg)?;
    let mut grid = cfg.threshold_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.par_iter()
        .map(|&t| compute_metrics(&assoc.assign(t), &dataset.vocabulary, dataset.area_m2, t))
        .collect()
}

pub fn roc_sweep(
    dataset: &RunDataset,
    pipeline: &PipelineConfig,
    cfg: &AssociationConfig,
) -> Result<Vec<RocPoint>> {
    Ok(roc_reports(dataset, pipeline, cfg)?
        .iter()
        .map(RocPoint::from)
        .collect())
}

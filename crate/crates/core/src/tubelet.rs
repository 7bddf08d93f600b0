//! Sequential bounding-box matching, re-scoring, linking and length filtering.
//!
//! Boxes in adjacent frames are paired by a match quality that multiplies a
//! geometric affinity (IoU, or the reciprocal centroid distance) with the dot
//! product of the two score vectors. Pairs are accepted greedily in
//! descending quality. Chains of accepted pairs form tubelets whose members
//! are re-scored with the tubelet's mean score vector.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{centroid_distance, iou, Detection, Tubelet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// `q = IoU * (s_a . s_b)`
    Iou,
    /// `q = (s_a . s_b) / max(d, epsilon_px)`, d the centroid distance
    ReciprocalDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub mode: MatchMode,
    /// Pairs below this quality are never matched.
    pub q_min: f64,
    /// Distance clamp for the reciprocal-distance mode, in pixels.
    pub epsilon_px: f64,
    /// Linking joins tubelets separated by at most `kappa - 1` empty frames.
    pub kappa: u32,
    /// Tubelets shorter than this are dropped; 1 disables filtering.
    pub min_tubelet_length: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::reciprocal_distance()
    }
}

impl MatchConfig {
    pub fn reciprocal_distance() -> Self {
        Self {
            mode: MatchMode::ReciprocalDistance,
            q_min: 1e-3,
            epsilon_px: 1.0,
            kappa: 1,
            min_tubelet_length: 1,
        }
    }

    pub fn iou() -> Self {
        Self {
            mode: MatchMode::Iou,
            q_min: 1e-6,
            ..Self::reciprocal_distance()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_min.is_finite() && self.q_min >= 0.0) {
            return Err(Error::Invalid(format!("q_min must be >= 0, got {}", self.q_min)));
        }
        if !(self.epsilon_px.is_finite() && self.epsilon_px > 0.0) {
            return Err(Error::Invalid(format!(
                "epsilon_px must be > 0, got {}",
                self.epsilon_px
            )));
        }
        if self.kappa < 1 {
            return Err(Error::Invalid("kappa must be >= 1".into()));
        }
        if self.min_tubelet_length < 1 {
            return Err(Error::Invalid("min_tubelet_length must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn match_quality(a: &Detection, b: &Detection, cfg: &MatchConfig) -> Result<f64> {
    let semantic = a.scores.dot(&b.scores)?;
    let geometric = match cfg.mode {
        MatchMode::Iou => iou(&a.bbox, &b.bbox),
        MatchMode::ReciprocalDistance => {
            1.0 / centroid_distance(&a.bbox, &b.bbox).max(cfg.epsilon_px)
        }
    };
    Ok(geometric * semantic)
}

/// One-to-one greedy matching between the detections of two adjacent frames.
///
/// Candidate pairs with `q >= q_min` are taken in descending `q`; ties go to
/// the lexicographically smaller `(index_a, index_b)`. Pairs are returned in
/// acceptance order.
pub fn match_frame_pair(
    frame_a: &[Detection],
    frame_b: &[Detection],
    cfg: &MatchConfig,
) -> Vec<(usize, usize)> {
    let mut candidates = Vec::with_capacity(frame_a.len() * frame_b.len());
    for (ia, a) in frame_a.iter().enumerate() {
        for (ib, b) in frame_b.iter().enumerate() {
            if let Ok(q) = match_quality(a, b, cfg) {
                if q.is_finite() && q >= cfg.q_min {
                    candidates.push((q, ia, ib));
                }
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; frame_a.len()];
    let mut used_b = vec![false; frame_b.len()];
    let mut pairs = Vec::new();
    for (_, ia, ib) in candidates {
        if !used_a[ia] && !used_b[ib] {
            used_a[ia] = true;
            used_b[ib] = true;
            pairs.push((ia, ib));
        }
    }
    pairs
}

/// Group detections by frame, each frame sorted by detection id so the result
/// does not depend on the input order within a frame.
fn canonical_frames(detections: &[Detection]) -> Vec<(u64, Vec<Detection>)> {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame_id).or_default().push(d.clone());
    }
    by_frame
        .into_iter()
        .map(|(f, mut v)| {
            v.sort_by_key(|d| d.detection_id);
            (f, v)
        })
        .collect()
}

/// Chain adjacent-frame matches into tubelets.
///
/// Every detection ends up in exactly one tubelet; unmatched detections
/// become singletons. Members of one tubelet are exactly one frame apart.
/// Tubelet ids are assigned in order of (first frame, detection id).
pub fn build_tubelets(detections: &[Detection], cfg: &MatchConfig) -> Vec<Tubelet> {
    let frames = canonical_frames(detections);

    // successor[g][i] = index in frame g+1 matched to detection i of frame g
    let successor: Vec<Vec<Option<usize>>> = (0..frames.len())
        .into_par_iter()
        .map(|g| {
            let mut next = vec![None; frames[g].1.len()];
            if let Some((fb, b)) = frames.get(g + 1) {
                if *fb == frames[g].0 + 1 {
                    for (ia, ib) in match_frame_pair(&frames[g].1, b, cfg) {
                        next[ia] = Some(ib);
                    }
                }
            }
            next
        })
        .collect();

    let mut has_pred: Vec<Vec<bool>> = frames.iter().map(|(_, v)| vec![false; v.len()]).collect();
    for (g, next) in successor.iter().enumerate() {
        for j in next.iter().flatten() {
            has_pred[g + 1][*j] = true;
        }
    }

    let mut out = Vec::new();
    for (g, (_, dets)) in frames.iter().enumerate() {
        for (i, det) in dets.iter().enumerate() {
            if has_pred[g][i] {
                continue;
            }
            let mut members = vec![det.clone()];
            let (mut gg, mut ii) = (g, i);
            while let Some(j) = successor[gg][ii] {
                gg += 1;
                ii = j;
                members.push(frames[gg].1[ii].clone());
            }
            let id = out.len() as u64;
            out.push(if members.len() == 1 {
                Tubelet::singleton(id, members.pop().expect("one member"))
            } else {
                Tubelet::new(id, members).expect("chained members are frame-ordered")
            });
        }
    }
    out
}

/// Replace the tubelet's aggregate with the mean of its members' raw scores.
pub fn rescore(tubelet: &Tubelet) -> Tubelet {
    tubelet.rescore()
}

/// Join tubelets separated by a gap of `1..=kappa-1` frames.
///
/// Candidate pairs `(earlier, later)` are scored with [`match_quality`] on the
/// re-scored tail of the earlier and head of the later tubelet, and accepted
/// greedily in descending quality, each tubelet gaining at most one
/// predecessor and one successor. A single sweep is made. Merged tubelets
/// keep the id of their first part and are re-scored; untouched tubelets are
/// returned unchanged, so `kappa = 1` is the identity.
pub fn link_tubelets(tubelets: &[Tubelet], cfg: &MatchConfig) -> Vec<Tubelet> {
    if cfg.kappa <= 1 || tubelets.len() < 2 {
        return tubelets.to_vec();
    }
    let kappa = u64::from(cfg.kappa);

    let mut by_first: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (j, t) in tubelets.iter().enumerate() {
        by_first.entry(t.first_frame()).or_default().push(j);
    }

    let mut candidates = Vec::new();
    for (i, ti) in tubelets.iter().enumerate() {
        let tail = effective(ti.tail(), ti);
        let lo = ti.last_frame() + 2;
        let hi = ti.last_frame() + kappa;
        for (_, js) in by_first.range(lo..=hi) {
            for &j in js {
                let tj = &tubelets[j];
                let head = effective(tj.head(), tj);
                if let Ok(q) = match_quality(&tail, &head, cfg) {
                    if q.is_finite() && q >= cfg.q_min {
                        candidates.push((q, i, j));
                    }
                }
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut next = vec![None; tubelets.len()];
    let mut has_pred = vec![false; tubelets.len()];
    for (_, i, j) in candidates {
        if next[i].is_none() && !has_pred[j] {
            next[i] = Some(j);
            has_pred[j] = true;
        }
    }

    let mut out = Vec::with_capacity(tubelets.len());
    for i in 0..tubelets.len() {
        if has_pred[i] {
            continue;
        }
        if next[i].is_none() {
            out.push(tubelets[i].clone());
            continue;
        }
        let mut members: Vec<Detection> = tubelets[i].detections().to_vec();
        let mut k = i;
        while let Some(j) = next[k] {
            members.extend_from_slice(tubelets[j].detections());
            k = j;
        }
        out.push(Tubelet::new(tubelets[i].id(), members).expect("linked parts are frame-ordered"));
    }
    out
}

fn effective(d: &Detection, t: &Tubelet) -> Detection {
    Detection {
        scores: t.aggregate().clone(),
        ..d.clone()
    }
}

/// Keep tubelets with at least `min_tubelet_length` members.
pub fn filter_short(tubelets: &[Tubelet], cfg: &MatchConfig) -> Vec<Tubelet> {
    tubelets
        .iter()
        .filter(|t| t.len() >= cfg.min_tubelet_length)
        .cloned()
        .collect()
}

/// What turns a detection stream into scored tubelets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When false every detection stays its own tubelet: no matching, no
    /// re-scoring, no linking, no filtering.
    pub sequential_matching: bool,
    pub matching: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sequential_matching: true,
            matching: MatchConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Per-frame detections without any temporal processing.
    pub fn baseline() -> Self {
        Self {
            sequential_matching: false,
            ..Self::default()
        }
    }
}

/// build -> link -> filter, the last step running after linking so that
/// tracks broken by a missed frame can be repaired first.
pub fn process(detections: &[Detection], cfg: &PipelineConfig) -> Result<Vec<Tubelet>> {
    cfg.matching.validate()?;
    if !cfg.sequential_matching {
        let mut dets = detections.to_vec();
        dets.sort_by_key(|d| (d.frame_id, d.detection_id));
        return Ok(dets
            .into_iter()
            .enumerate()
            .map(|(i, d)| Tubelet::singleton(i as u64, d))
            .collect());
    }
    let built = build_tubelets(detections, &cfg.matching);
    let linked = link_tubelets(&built, &cfg.matching);
    Ok(filter_short(&linked, &cfg.matching))
}

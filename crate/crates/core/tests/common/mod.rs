//! Reference implementations used as test oracles. They are written for
//! clarity over speed and share no code with the library beyond data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use seqtube::ingest::{FrameMeta, Pose};
use seqtube::simgen::SurveyRng;
use seqtube::{BBox, Detection, MatchConfig, MatchMode, ScoreVector, Tubelet};

/// Compensated (Neumaier) sum divided by the count.
pub fn neumaier_mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        n += 1;
    }
    (sum + comp) / n as f64
}

pub fn mean_vector(vectors: &[&ScoreVector]) -> Vec<f64> {
    let k = vectors[0].len();
    (0..k)
        .map(|j| neumaier_mean(vectors.iter().map(|v| v.as_slice()[j])))
        .collect()
}

/// Match quality recomputed from its definition.
pub fn quality(a: &Detection, b: &Detection, cfg: &MatchConfig) -> f64 {
    let dot: f64 = a
        .scores
        .as_slice()
        .iter()
        .zip(b.scores.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    let (ab, bb) = (&a.bbox, &b.bbox);
    let geo = match cfg.mode {
        MatchMode::Iou => {
            let w = (ab.x + ab.w).min(bb.x + bb.w) - ab.x.max(bb.x);
            let h = (ab.y + ab.h).min(bb.y + bb.h) - ab.y.max(bb.y);
            if w <= 0.0 || h <= 0.0 {
                0.0
            } else {
                let inter = w * h;
                inter / (ab.w * ab.h + bb.w * bb.h - inter)
            }
        }
        MatchMode::ReciprocalDistance => {
            let dx = (ab.x + ab.w / 2.0) - (bb.x + bb.w / 2.0);
            let dy = (ab.y + ab.h / 2.0) - (bb.y + bb.h / 2.0);
            1.0 / dx.hypot(dy).max(cfg.epsilon_px)
        }
    };
    geo * dot
}

type Edge = (f64, usize, usize);

/// `x` ranks before `y`: higher quality, then smaller index pair.
fn edge_before(x: &Edge, y: &Edge) -> bool {
    x.0 > y.0 || (x.0 == y.0 && (x.1, x.2) < (y.1, y.2))
}

/// `a` beats `b` when its edge list, best first, is lexicographically larger.
fn better(a: &[Edge], b: &[Edge]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if edge_before(x, y) {
            return true;
        }
        if edge_before(y, x) {
            return false;
        }
    }
    a.len() > b.len()
}

/// Lexicographically best one-to-one matching, found by enumerating every
/// matching of admissible pairs. Returned sorted by index pair.
pub fn exhaustive_matching(a: &[Detection], b: &[Detection], cfg: &MatchConfig) -> Vec<(usize, usize)> {
    let q: Vec<Vec<Option<f64>>> = a
        .iter()
        .map(|da| {
            b.iter()
                .map(|db| {
                    let v = quality(da, db, cfg);
                    (v.is_finite() && v >= cfg.q_min).then_some(v)
                })
                .collect()
        })
        .collect();

    fn walk(
        ia: usize,
        q: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        current: &mut Vec<Edge>,
        best: &mut Vec<Edge>,
    ) {
        if ia == q.len() {
            let mut cand = current.clone();
            cand.sort_by(|x, y| {
                if edge_before(x, y) {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Greater
                }
            });
            if better(&cand, best) {
                *best = cand;
            }
            return;
        }
        walk(ia + 1, q, used, current, best);
        for ib in 0..used.len() {
            if let (false, Some(v)) = (used[ib], q[ia][ib]) {
                used[ib] = true;
                current.push((v, ia, ib));
                walk(ia + 1, q, used, current, best);
                current.pop();
                used[ib] = false;
            }
        }
    }

    let mut best = Vec::new();
    walk(0, &q, &mut vec![false; b.len()], &mut Vec::new(), &mut best);
    let mut pairs: Vec<(usize, usize)> = best.iter().map(|e| (e.1, e.2)).collect();
    pairs.sort();
    pairs
}

/// Tubelets as `(id, member detection ids)`, built from exhaustive matchings.
pub fn oracle_tubelets(detections: &[Detection], cfg: &MatchConfig) -> Vec<(u64, Vec<u64>)> {
    let mut frames: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        frames.entry(d.frame_id).or_default().push(d.clone());
    }
    for v in frames.values_mut() {
        v.sort_by_key(|d| d.detection_id);
    }
    // successor by detection id
    let mut next: BTreeMap<u64, u64> = BTreeMap::new();
    for (f, dets) in &frames {
        if let Some(later) = frames.get(&(f + 1)) {
            for (ia, ib) in exhaustive_matching(dets, later, cfg) {
                next.insert(dets[ia].detection_id, later[ib].detection_id);
            }
        }
    }
    let matched: std::collections::BTreeSet<u64> = next.values().copied().collect();
    let mut heads: Vec<(u64, u64)> = frames
        .iter()
        .flat_map(|(f, v)| v.iter().map(move |d| (*f, d.detection_id)))
        .filter(|(_, id)| !matched.contains(id))
        .collect();
    heads.sort();
    heads
        .into_iter()
        .enumerate()
        .map(|(i, (_, head))| {
            let mut chain = vec![head];
            while let Some(n) = next.get(chain.last().unwrap()) {
                chain.push(*n);
            }
            (i as u64, chain)
        })
        .collect()
}

pub fn describe(tubelets: &[Tubelet]) -> Vec<(u64, Vec<u64>)> {
    tubelets
        .iter()
        .map(|t| (t.id(), t.detections().iter().map(|d| d.detection_id).collect()))
        .collect()
}

fn shuffle<T>(rng: &mut SurveyRng, v: &mut [T]) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
}

/// Small instance on an integer grid with coarse scores, so exact ties are
/// common. Detection ids and input order are shuffled.
pub fn random_instance(rng: &mut SurveyRng, max_frames: usize, max_boxes: usize, k: usize) -> Vec<Detection> {
    let n_frames = 1 + rng.below(max_frames);
    let mut frame_ids = Vec::new();
    let mut f = rng.below(3) as u64;
    for _ in 0..n_frames {
        frame_ids.push(f);
        f += if rng.bernoulli(0.15) { 2 } else { 1 };
    }
    let mut dets = Vec::new();
    for &fid in &frame_ids {
        for _ in 0..rng.below(max_boxes + 1) {
            let x = rng.below(16) as f64;
            let y = rng.below(16) as f64;
            let w = 1.0 + rng.below(7) as f64;
            let h = 1.0 + rng.below(7) as f64;
            let scores = (0..k).map(|_| rng.below(5) as f64 / 4.0).collect();
            dets.push(Detection {
                frame_id: fid,
                detection_id: 0,
                bbox: BBox::new(x, y, w, h).unwrap(),
                scores: ScoreVector::new(scores).unwrap(),
            });
        }
    }
    let mut ids: Vec<u64> = (0..dets.len() as u64).map(|i| i * 3 + 1).collect();
    shuffle(rng, &mut ids);
    for (d, id) in dets.iter_mut().zip(ids) {
        d.detection_id = id;
    }
    shuffle(rng, &mut dets);
    dets
}

pub fn random_config(rng: &mut SurveyRng) -> MatchConfig {
    let mut cfg = if rng.bernoulli(0.5) {
        MatchConfig::iou()
    } else {
        MatchConfig::reciprocal_distance()
    };
    cfg.q_min = [1e-6, 0.01, 0.05, 0.2][rng.below(4)];
    cfg.epsilon_px = [0.5, 1.0, 3.0][rng.below(3)];
    cfg
}

/// Disjoint tubelets with random continuous scores and gaps between them.
pub fn random_tubelets(rng: &mut SurveyRng, n: usize, k: usize) -> Vec<Tubelet> {
    let mut out = Vec::new();
    let mut next_id = 0u64;
    for t in 0..n {
        let start = rng.below(30) as u64;
        let len = 1 + rng.below(8);
        let mut dets = Vec::new();
        let (mut x, mut y) = (rng.range(0.0, 500.0), rng.range(0.0, 500.0));
        for i in 0..len {
            x += rng.range(-10.0, 10.0);
            y += rng.range(-10.0, 10.0);
            dets.push(Detection {
                frame_id: start + i as u64,
                detection_id: next_id,
                bbox: BBox::new(x, y, rng.range(5.0, 40.0), rng.range(5.0, 40.0)).unwrap(),
                scores: ScoreVector::new((0..k).map(|_| rng.uniform()).collect()).unwrap(),
            });
            next_id += 1;
        }
        out.push(Tubelet::new(t as u64, dets).unwrap());
    }
    out
}

/// Pose-carrying frame of a nadir camera at `(x, y)` heading `yaw`.
pub fn posed_frame(id: u64, x: f64, y: f64, yaw: f64, w: u32, h: u32, gsd: f64) -> FrameMeta {
    FrameMeta {
        frame_id: id,
        timestamp_s: id as f64 * 0.2,
        pose: Some(Pose {
            x_m: x,
            y_m: y,
            altitude_m: 9.0,
            yaw_rad: yaw,
        }),
        width_px: w,
        height_px: h,
        gsd_m: Some(gsd),
    }
}

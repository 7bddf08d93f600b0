//! Seeded synthetic surveys with a hidden truth channel.
//!
//! A nadir camera flies a lawnmower pattern over a rectangular field. Flight
//! lines run along world `+y` and `-y` alternately; the image `+x` axis
//! points along the heading, so `width_px * gsd` is the along-track footprint.
//! Frame ids are consecutive within a line and skip `turn_gap_frames` ids
//! between lines.
//!
//! Random draws happen in a fixed order: object placement; then per frame,
//! per visible object (miss, jitter, class, amplitude, mix vector) and per
//! visible clutter spot (fire, jitter, amplitude, mix vector); then per frame
//! the uniform false alarms (count, then position, class, amplitude, mix
//! vector for each).

mod rng;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};

pub use rng::SurveyRng;
pub use scenario::{
    Camera, ClutterSpot, Field, Flight, Noise, ObjectSpec, RandomObjects, SurveyScenario,
    VocabularySpec, UXO_CLASSES,
};

use crate::camera::NadirView;
use crate::error::{Error, Result};
use crate::ingest::{FrameMeta, Pose, RunDataset};
use crate::types::{BBox, ClassVocabulary, Detection, GroundTruthObject, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TruthKind {
    True { object_id: u64 },
    /// `spot_id` is set for clutter-spot firings, absent for uniform false alarms.
    False { spot_id: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthTag {
    pub detection_id: u64,
    pub kind: TruthKind,
    /// Argmax equals the viewed object's class. Always false for false alarms.
    pub correct_class: bool,
}

impl TruthTag {
    pub fn is_true(&self) -> bool {
        matches!(self.kind, TruthKind::True { .. })
    }
}

/// What the generator injected, counted as it went.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectionLog {
    /// Frames in which each object was inside the footprint.
    pub views: BTreeMap<u64, u64>,
    pub true_detections: u64,
    pub missed_views: u64,
    pub misclassified: u64,
    pub uniform_false_alarms: u64,
    /// Uniform false alarms dropped for lack of a clear position.
    pub dropped_false_alarms: u64,
    pub clutter_detections: u64,
    /// Clutter spots that fired at least once.
    pub clutter_spots_fired: BTreeSet<u64>,
    pub warnings: Vec<String>,
}

impl InjectionLog {
    pub fn false_detections(&self) -> u64 {
        self.uniform_false_alarms + self.clutter_detections
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedRun {
    pub dataset: RunDataset,
    pub log: InjectionLog,
}

pub fn generate(scenario: &SurveyScenario) -> Result<RunDataset> {
    Ok(generate_with_log(scenario)?.dataset)
}

/// Truth tags of a generated dataset, keyed by detection id.
pub fn oracle_labels(dataset: &RunDataset) -> Result<&BTreeMap<u64, TruthTag>> {
    dataset.truth.as_ref().ok_or(Error::NotGenerated)
}

struct Pending {
    det_box: BBox,
    scores: ScoreVector,
    kind: TruthKind,
    correct: bool,
}

pub fn generate_with_log(scenario: &SurveyScenario) -> Result<GeneratedRun> {
    scenario.validate()?;
    let vocab = scenario.vocabulary()?;
    let k = vocab.len();
    let mut rng = SurveyRng::new(scenario.seed);
    let mut log = InjectionLog {
        warnings: scenario.warnings(),
        ..Default::default()
    };

    let objects = place_objects(scenario, &vocab, &mut rng)?;
    for o in &objects {
        log.views.insert(o.object_id, 0);
    }
    let frames = flight_frames(scenario);
    let views: Vec<NadirView> = frames
        .iter()
        .map(NadirView::of)
        .collect::<Result<_>>()?;

    let noise = &scenario.noise;
    let size_px = scenario.object_size_m / scenario.camera.gsd_m;
    let clutter: Vec<(usize, (f64, f64))> = noise
        .clutter
        .iter()
        .map(|c| (vocab.index_of(&c.class).expect("validated"), (c.x_m, c.y_m)))
        .collect();

    let score = |rng: &mut SurveyRng, class: usize, amp: [f64; 2]| -> Result<ScoreVector> {
        let a = rng.range(amp[0], amp[1]);
        let w = noise.score_mix;
        let v = (0..k)
            .map(|j| {
                let e = if j == class { 1.0 } else { 0.0 };
                (a * ((1.0 - w) * e + w * rng.uniform())).clamp(0.0, 1.0)
            })
            .collect();
        ScoreVector::new(v)
    };
    let jittered = |rng: &mut SurveyRng, (px, py): (f64, f64)| -> Result<BBox> {
        let dx = noise.bbox_jitter_px * rng.normal();
        let dy = noise.bbox_jitter_px * rng.normal();
        BBox::from_center(px + dx, py + dy, size_px, size_px)
    };

    let mut per_frame: Vec<Vec<Pending>> = Vec::with_capacity(frames.len());
    for view in &views {
        let mut out = Vec::new();
        for o in &objects {
            if !view.sees(o.world.0, o.world.1) {
                continue;
            }
            *log.views.get_mut(&o.object_id).expect("known object") += 1;
            if rng.bernoulli(noise.miss_prob) {
                log.missed_views += 1;
                continue;
            }
            let det_box = jittered(&mut rng, view.world_to_pixel(o.world.0, o.world.1))?;
            let observed = match &noise.confusion {
                Some(m) => rng.weighted(&m[o.class]),
                None => o.class,
            };
            let scores = score(&mut rng, observed, noise.true_amplitude)?;
            let correct = scores.class() == o.class;
            log.true_detections += 1;
            if !correct {
                log.misclassified += 1;
            }
            out.push(Pending {
                det_box,
                scores,
                kind: TruthKind::True {
                    object_id: o.object_id,
                },
                correct,
            });
        }
        for (spot, &(class, (x, y))) in clutter.iter().enumerate() {
            if !view.sees(x, y) || !rng.bernoulli(noise.clutter_prob) {
                continue;
            }
            let det_box = jittered(&mut rng, view.world_to_pixel(x, y))?;
            let scores = score(&mut rng, class, noise.false_amplitude)?;
            log.clutter_detections += 1;
            log.clutter_spots_fired.insert(spot as u64);
            out.push(Pending {
                det_box,
                scores,
                kind: TruthKind::False {
                    spot_id: Some(spot as u64),
                },
                correct: false,
            });
        }
        per_frame.push(out);
    }

    inject_uniform_false_alarms(scenario, &vocab, &frames, &mut per_frame, &mut rng, &mut log)?;

    let mut detections = Vec::new();
    let mut truth = BTreeMap::new();
    let mut next_id = 0u64;
    for (frame, pending) in frames.iter().zip(per_frame) {
        for p in pending {
            detections.push(Detection {
                frame_id: frame.frame_id,
                detection_id: next_id,
                bbox: p.det_box,
                scores: p.scores,
            });
            truth.insert(
                next_id,
                TruthTag {
                    detection_id: next_id,
                    kind: p.kind,
                    correct_class: p.correct,
                },
            );
            next_id += 1;
        }
    }

    let area = scenario.field.width_m * scenario.field.length_m;
    let mut dataset = RunDataset::new(vocab, frames, detections, Some(objects), area)?;
    dataset.truth = Some(truth);
    Ok(GeneratedRun { dataset, log })
}

fn place_objects(
    scenario: &SurveyScenario,
    vocab: &ClassVocabulary,
    rng: &mut SurveyRng,
) -> Result<Vec<GroundTruthObject>> {
    let mut objects: Vec<GroundTruthObject> = scenario
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| GroundTruthObject {
            object_id: i as u64,
            class: vocab.index_of(&o.class).expect("validated"),
            world: (o.x_m, o.y_m),
            pixels: Vec::new(),
        })
        .collect();
    let Some(r) = &scenario.random_objects else {
        return Ok(objects);
    };
    let pool: Vec<usize> = match &r.classes {
        Some(c) if !c.is_empty() => c
            .iter()
            .map(|n| vocab.index_of(n).expect("validated"))
            .collect(),
        _ => (0..vocab.len()).filter(|&c| vocab.is_target(c)).collect(),
    };
    let (w, l) = (scenario.field.width_m, scenario.field.length_m);
    const MAX_TRIES: usize = 100_000;
    for _ in 0..r.count {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let p = (rng.range(0.0, w), rng.range(0.0, l));
            let clear = objects
                .iter()
                .all(|o| (o.world.0 - p.0).hypot(o.world.1 - p.1) >= r.min_separation_m);
            if clear {
                let class = pool[rng.below(pool.len())];
                objects.push(GroundTruthObject {
                    object_id: objects.len() as u64,
                    class,
                    world: p,
                    pixels: Vec::new(),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Scenario(format!(
                "could not place {} objects {} m apart in the field",
                r.count, r.min_separation_m
            )));
        }
    }
    Ok(objects)
}

fn flight_frames(scenario: &SurveyScenario) -> Vec<FrameMeta> {
    let f = &scenario.flight;
    let step = scenario.ground_step_m();
    let per_pass = scenario.frames_per_pass();
    let mut frames = Vec::new();
    let mut id = 0u64;
    for pass in 0..scenario.pass_count() {
        let x = scenario.first_pass_x() + pass as f64 * f.swath_spacing_m;
        let forward = pass % 2 == 0;
        let yaw = if forward {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        for i in 0..per_pass {
            let along = i as f64 * step;
            let y = if forward {
                along
            } else {
                scenario.field.length_m - along
            };
            frames.push(FrameMeta {
                frame_id: id,
                timestamp_s: id as f64 / f.frame_rate_hz,
                pose: Some(Pose {
                    x_m: x,
                    y_m: y,
                    altitude_m: f.altitude_m,
                    yaw_rad: yaw,
                }),
                width_px: scenario.camera.width_px,
                height_px: scenario.camera.height_px,
                gsd_m: Some(scenario.camera.gsd_m),
            });
            id += 1;
        }
        id += f.turn_gap_frames;
    }
    frames
}

fn inject_uniform_false_alarms(
    scenario: &SurveyScenario,
    vocab: &ClassVocabulary,
    frames: &[FrameMeta],
    per_frame: &mut [Vec<Pending>],
    rng: &mut SurveyRng,
    log: &mut InjectionLog,
) -> Result<()> {
    let noise = &scenario.noise;
    if noise.false_alarm_rate <= 0.0 {
        return Ok(());
    }
    let k = vocab.len();
    let pool: Vec<usize> = {
        let t: Vec<usize> = (0..k).filter(|&c| vocab.is_target(c)).collect();
        if t.is_empty() {
            (0..k).collect()
        } else {
            t
        }
    };
    let (w, h) = (
        f64::from(scenario.camera.width_px),
        f64::from(scenario.camera.height_px),
    );
    let size_px = scenario.object_size_m / scenario.camera.gsd_m;
    let clearance = noise.false_alarm_clearance_px;
    const MAX_TRIES: usize = 100;

    for fi in 0..frames.len() {
        let n = rng.poisson(noise.false_alarm_rate);
        let neighbours: Vec<usize> = [fi.checked_sub(1), Some(fi), Some(fi + 1)]
            .into_iter()
            .flatten()
            .filter(|&j| {
                j < frames.len() && frames[j].frame_id.abs_diff(frames[fi].frame_id) <= 1
            })
            .collect();
        for _ in 0..n {
            let mut spot = None;
            for _ in 0..MAX_TRIES {
                let p = (rng.range(0.0, w), rng.range(0.0, h));
                let clear = clearance <= 0.0
                    || neighbours.iter().all(|&j| {
                        per_frame[j].iter().all(|d| {
                            let c = d.det_box.centroid();
                            (c.0 - p.0).hypot(c.1 - p.1) >= clearance
                        })
                    });
                if clear {
                    spot = Some(p);
                    break;
                }
            }
            let class = pool[rng.below(pool.len())];
            let a = rng.range(noise.false_amplitude[0], noise.false_amplitude[1]);
            let mix = noise.score_mix;
            let v: Vec<f64> = (0..k)
                .map(|j| {
                    let e = if j == class { 1.0 } else { 0.0 };
                    (a * ((1.0 - mix) * e + mix * rng.uniform())).clamp(0.0, 1.0)
                })
                .collect();
            let Some(p) = spot else {
                log.dropped_false_alarms += 1;
                continue;
            };
            per_frame[fi].push(Pending {
                det_box: BBox::from_center(p.0, p.1, size_px, size_px)?,
                scores: ScoreVector::new(v)?,
                kind: TruthKind::False { spot_id: None },
                correct: false,
            });
            log.uniform_false_alarms += 1;
        }
    }
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ClassVocabulary;

/// Everything needed to synthesize one survey. Loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyScenario {
    pub seed: u64,
    pub field: Field,
    pub vocabulary: VocabularySpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub random_objects: Option<RandomObjects>,
    /// Physical object extent; detections are squares of this size.
    #[serde(default = "default_object_size")]
    pub object_size_m: f64,
    pub flight: Flight,
    pub camera: Camera,
    #[serde(default)]
    pub noise: Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Field {
    /// Extent along world x, across the flight lines.
    pub width_m: f64,
    /// Extent along world y, the flight-line direction.
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySpec {
    pub classes: Vec<String>,
    /// Target subset; every class when absent.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: String,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomObjects {
    pub count: usize,
    #[serde(default)]
    pub min_separation_m: f64,
    /// Classes to draw from uniformly; the target classes when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flight {
    pub altitude_m: f64,
    pub speed_m_s: f64,
    pub frame_rate_hz: f64,
    /// Distance between adjacent flight lines.
    pub swath_spacing_m: f64,
    /// Number of flight lines; enough to cover the field width when absent.
    #[serde(default)]
    pub passes: Option<usize>,
    /// x of the first flight line; half the cross-track footprint when absent.
    #[serde(default)]
    pub first_pass_x_m: Option<f64>,
    /// Frame ids skipped during each turn between lines.
    #[serde(default = "default_turn_gap")]
    pub turn_gap_frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub width_px: u32,
    pub height_px: u32,
    pub gsd_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Probability that a visible object goes undetected in one frame.
    pub miss_prob: f64,
    /// Mean number of uniformly placed false alarms per frame.
    pub false_alarm_rate: f64,
    /// Uniform false alarms keep at least this pixel distance from every
    /// other detection in the same and neighbouring frames.
    pub false_alarm_clearance_px: f64,
    pub bbox_jitter_px: f64,
    /// Weight `w` of the random component in `amp * ((1 - w) e_c + w u)`.
    pub score_mix: f64,
    pub true_amplitude: [f64; 2],
    pub false_amplitude: [f64; 2],
    /// Row-stochastic class confusion applied to true detections.
    pub confusion: Option<Vec<Vec<f64>>>,
    /// Fixed locations that fire false alarms whenever they are in view.
    pub clutter: Vec<ClutterSpot>,
    /// Per-frame firing probability of a visible clutter spot.
    pub clutter_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSpot {
    pub class: String,
    pub x_m: f64,
    pub y_m: f64,
}

fn default_object_size() -> f64 {
    0.3
}

fn default_turn_gap() -> u64 {
    5
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            miss_prob: 0.0,
            false_alarm_rate: 0.0,
            false_alarm_clearance_px: 0.0,
            bbox_jitter_px: 0.0,
            score_mix: 0.0,
            true_amplitude: [1.0, 1.0],
            false_amplitude: [0.5, 0.5],
            confusion: None,
            clutter: Vec::new(),
            clutter_prob: 1.0,
        }
    }
}

pub const UXO_CLASSES: [&str; 6] = ["155MM", "BLU26", "BLU63", "BLU97", "PTAB2.5KO", "ROCKEYE"];

impl SurveyScenario {
    /// Runway segment of 35 m x 122 m with 19 randomly placed objects, flown
    /// at 9 m. A 1920 x 1080 frame at 5 mm/px covers 9.6 m along track; at
    /// 4.8 m/s and 5 Hz each object stays in view for 10 frames. Flight lines
    /// are one footprint width apart, so every object is seen on exactly one
    /// pass. No noise.
    pub fn survey_preset(seed: u64) -> Self {
        Self {
            seed,
            field: Field {
                width_m: 35.0,
                length_m: 122.0,
            },
            vocabulary: VocabularySpec {
                classes: UXO_CLASSES.iter().map(|s| s.to_string()).collect(),
                targets: None,
            },
            objects: Vec::new(),
            random_objects: Some(RandomObjects {
                count: 19,
                min_separation_m: 2.5,
                classes: None,
            }),
            object_size_m: 0.3,
            flight: Flight {
                altitude_m: 9.0,
                speed_m_s: 4.8,
                frame_rate_hz: 5.0,
                swath_spacing_m: 5.4,
                passes: None,
                first_pass_x_m: None,
                turn_gap_frames: 5,
            },
            camera: Camera {
                width_px: 1920,
                height_px: 1080,
                gsd_m: 0.005,
            },
            noise: Noise::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn vocabulary(&self) -> Result<ClassVocabulary> {
        let names = self.vocabulary.classes.clone();
        let flags = match &self.vocabulary.targets {
            None => vec![true; names.len()],
            Some(t) => {
                for name in t {
                    if !names.contains(name) {
                        return Err(Error::Scenario(format!(
                            "vocabulary.targets: unknown class `{name}`"
                        )));
                    }
                }
                names.iter().map(|n| t.contains(n)).collect()
            }
        };
        ClassVocabulary::new(names, flags)
    }

    /// Along-track and cross-track footprint extents in meters.
    pub fn footprint_m(&self) -> (f64, f64) {
        let g = self.camera.gsd_m;
        (
            f64::from(self.camera.width_px) * g,
            f64::from(self.camera.height_px) * g,
        )
    }

    pub fn ground_step_m(&self) -> f64 {
        self.flight.speed_m_s / self.flight.frame_rate_hz
    }

    pub fn pass_count(&self) -> usize {
        self.flight.passes.unwrap_or_else(|| {
            let cross = self.footprint_m().1;
            let first = self.first_pass_x();
            let reach = (self.field.width_m - first - cross / 2.0).max(0.0);
            1 + (reach / self.flight.swath_spacing_m - 1e-9).ceil().max(0.0) as usize
        })
    }

    pub fn first_pass_x(&self) -> f64 {
        self.flight
            .first_pass_x_m
            .unwrap_or(self.footprint_m().1 / 2.0)
    }

    pub fn frames_per_pass(&self) -> usize {
        (self.field.length_m / self.ground_step_m() + 1e-9).floor() as usize + 1
    }

    /// Non-fatal oddities worth reporting.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let (along, cross) = self.footprint_m();
        if along > self.field.length_m || cross > self.field.width_m {
            w.push(format!(
                "camera footprint {along:.2} m x {cross:.2} m exceeds the {:.2} m x {:.2} m field",
                self.field.length_m, self.field.width_m
            ));
        }
        if self.pass_count() == 0 {
            w.push("flight has no passes; the dataset has no frames".into());
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !pos(self.field.width_m) || !pos(self.field.length_m) {
            return bad("field dimensions must be positive".into());
        }
        let vocab = self.vocabulary()?;
        let f = &self.flight;
        if !(f.altitude_m > 0.0 && f.altitude_m <= 1000.0) {
            return bad(format!("flight.altitude_m must be in (0, 1000], got {}", f.altitude_m));
        }
        if !pos(f.speed_m_s) {
            return bad("flight.speed_m_s must be positive".into());
        }
        if !pos(f.frame_rate_hz) {
            return bad("flight.frame_rate_hz must be positive".into());
        }
        if !pos(f.swath_spacing_m) {
            return bad("flight.swath_spacing_m must be positive".into());
        }
        if matches!(f.first_pass_x_m, Some(x) if !x.is_finite()) {
            return bad("flight.first_pass_x_m must be finite".into());
        }
        if self.camera.width_px == 0 || self.camera.height_px == 0 {
            return bad("camera image size must be positive".into());
        }
        if !pos(self.camera.gsd_m) {
            return bad("camera.gsd_m must be positive".into());
        }
        if !pos(self.object_size_m) {
            return bad("object_size_m must be positive".into());
        }
        let inside = |x: f64, y: f64| {
            (0.0..=self.field.width_m).contains(&x) && (0.0..=self.field.length_m).contains(&y)
        };
        for (i, o) in self.objects.iter().enumerate() {
            if vocab.index_of(&o.class).is_none() {
                return bad(format!("objects[{i}]: unknown class `{}`", o.class));
            }
            if !inside(o.x_m, o.y_m) {
                return bad(format!(
                    "objects[{i}] at ({}, {}) lies outside the field",
                    o.x_m, o.y_m
                ));
            }
        }
        if let Some(r) = &self.random_objects {
            if !(r.min_separation_m >= 0.0 && r.min_separation_m.is_finite()) {
                return bad("random_objects.min_separation_m must be >= 0".into());
            }
            for c in r.classes.iter().flatten() {
                if vocab.index_of(c).is_none() {
                    return bad(format!("random_objects.classes: unknown class `{c}`"));
                }
            }
            if r.count > 0
                && r.classes.as_ref().is_none_or(|c| c.is_empty())
                && !vocab.target_flags().iter().any(|t| *t)
            {
                return bad("random_objects needs classes when no class is a target".into());
            }
        }
        let n = &self.noise;
        for (name, v) in [
            ("miss_prob", n.miss_prob),
            ("score_mix", n.score_mix),
            ("clutter_prob", n.clutter_prob),
        ] {
            if !prob(v) {
                return bad(format!("noise.{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..=50.0).contains(&n.false_alarm_rate) {
            return bad("noise.false_alarm_rate must lie in [0, 50]".into());
        }
        if !(n.false_alarm_clearance_px >= 0.0 && n.false_alarm_clearance_px.is_finite()) {
            return bad("noise.false_alarm_clearance_px must be >= 0".into());
        }
        if !(n.bbox_jitter_px >= 0.0 && n.bbox_jitter_px.is_finite()) {
            return bad("noise.bbox_jitter_px must be >= 0".into());
        }
        for (name, [lo, hi]) in [
            ("true_amplitude", n.true_amplitude),
            ("false_amplitude", n.false_amplitude),
        ] {
            if !(prob(lo) && prob(hi) && lo <= hi) {
                return bad(format!("noise.{name} must be [lo, hi] within [0, 1]"));
            }
        }
        if let Some(m) = &n.confusion {
            let k = vocab.len();
            if m.len() != k || m.iter().any(|r| r.len() != k) {
                return bad(format!("noise.confusion must be {k} x {k}"));
            }
            for (i, row) in m.iter().enumerate() {
                if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad(format!("noise.confusion row {i} has a negative entry"));
                }
                if row.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("noise.confusion row {i} sums to zero"));
                }
            }
        }
        for (i, c) in n.clutter.iter().enumerate() {
            if vocab.index_of(&c.class).is_none() {
                return bad(format!("noise.clutter[{i}]: unknown class `{}`", c.class));
            }
            if !inside(c.x_m, c.y_m) {
                return bad(format!("noise.clutter[{i}] lies outside the field"));
            }
        }
        Ok(())
    }
}

//! File formats: parsing, validation and deterministic serialization.
//!
//! | file | format |
//! |------|--------|
//! | vocabulary | CSV `name,target` |
//! | frames | CSV `frame_id,timestamp_s,width_px,height_px,x_m,y_m,altitude_m,yaw_rad,gsd_m` (pose and GSD columns may be empty) |
//! | detections | JSON lines `{"frame_id","detection_id","bbox":[x,y,w,h],"scores":[..]}` |
//! | ground truth | CSV `object_id,class,world_x_m,world_y_m` |
//! | pixel annotations | CSV `object_id,frame_id,px,py` |
//! | truth labels | CSV `detection_id,kind,object_id,spot_id,correct_class` |
//! | run manifest | TOML, see [`RunManifest`] |
//! | metrics report | pretty JSON of [`MetricsReport`] |
//! | ROC table | CSV `threshold,p_d,d_fa,p_c`, absent values as empty fields |
//!
//! Every writer goes through [`write_atomic`], so a failed run never leaves a
//! partially-written file behind.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport, RocPoint};
use crate::simgen::{TruthKind, TruthTag};
use crate::types::{BBox, ClassVocabulary, Detection, GroundTruthObject, ScoreVector, Tubelet};

/// Nadir camera pose in field coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x_m: f64,
    pub y_m: f64,
    pub altitude_m: f64,
    pub yaw_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub pose: Option<Pose>,
    pub width_px: u32,
    pub height_px: u32,
    pub gsd_m: Option<f64>,
}

/// Everything one survey run provides to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDataset {
    pub vocabulary: ClassVocabulary,
    pub frames: Vec<FrameMeta>,
    /// Sorted by frame, file order preserved within a frame.
    pub detections: Vec<Detection>,
    pub ground_truth: Option<Vec<GroundTruthObject>>,
    pub area_m2: f64,
    /// Hidden truth channel, present only for generated runs.
    pub truth: Option<BTreeMap<u64, TruthTag>>,
}

impl RunDataset {
    pub fn new(
        vocabulary: ClassVocabulary,
        frames: Vec<FrameMeta>,
        mut detections: Vec<Detection>,
        ground_truth: Option<Vec<GroundTruthObject>>,
        area_m2: f64,
    ) -> Result<Self> {
        if !(area_m2.is_finite() && area_m2 > 0.0) {
            return Err(Error::Invalid(format!("area must be positive, got {area_m2}")));
        }
        for w in frames.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(Error::Invalid(format!(
                    "frame ids must strictly increase ({} then {})",
                    w[0].frame_id, w[1].frame_id
                )));
            }
            if w[1].timestamp_s <= w[0].timestamp_s {
                return Err(Error::Invalid(format!(
                    "timestamps must increase with frame id (frame {})",
                    w[1].frame_id
                )));
            }
        }
        for f in &frames {
            if let Some(p) = f.pose {
                if p.altitude_m <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "frame {}: altitude must be positive",
                        f.frame_id
                    )));
                }
            }
            if matches!(f.gsd_m, Some(g) if g <= 0.0) {
                return Err(Error::Invalid(format!("frame {}: GSD must be positive", f.frame_id)));
            }
        }
        let known: HashSet<u64> = frames.iter().map(|f| f.frame_id).collect();
        let mut ids = HashSet::new();
        for d in &detections {
            if !known.contains(&d.frame_id) {
                return Err(Error::Invalid(format!(
                    "detection {} references unknown frame {}",
                    d.detection_id, d.frame_id
                )));
            }
            if d.scores.len() != vocabulary.len() {
                return Err(Error::ScoreLength {
                    expected: vocabulary.len(),
                    found: d.scores.len(),
                    line: None,
                });
            }
            if !ids.insert(d.detection_id) {
                return Err(Error::DuplicateId(d.detection_id));
            }
        }
        if let Some(gt) = &ground_truth {
            validate_ground_truth(gt, &vocabulary)?;
        }
        detections.sort_by_key(|d| d.frame_id);
        Ok(Self {
            vocabulary,
            frames,
            detections,
            ground_truth,
            area_m2,
            truth: None,
        })
    }

    pub fn frame(&self, frame_id: u64) -> Option<&FrameMeta> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Detections grouped per frame, in frame order; frames without
    /// detections are omitted.
    pub fn detections_by_frame(&self) -> Vec<(u64, &[Detection])> {
        self.detections
            .chunk_by(|a, b| a.frame_id == b.frame_id)
            .map(|c| (c[0].frame_id, c))
            .collect()
    }
}

fn validate_ground_truth(gt: &[GroundTruthObject], vocab: &ClassVocabulary) -> Result<()> {
    let mut ids = HashSet::new();
    for o in gt {
        if !ids.insert(o.object_id) {
            return Err(Error::DuplicateId(o.object_id));
        }
        if o.class >= vocab.len() {
            return Err(Error::UnknownClass(o.class.to_string()));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(path, line, e.to_string())
}

/// Write through a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

// ---------------------------------------------------------------- vocabulary

#[derive(Serialize, Deserialize)]
struct VocabRow {
    name: String,
    target: String,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "target" => Some(true),
        "false" | "0" | "no" | "other" => Some(false),
        _ => None,
    }
}

pub fn load_vocabulary(path: &Path) -> Result<ClassVocabulary> {
    let text = read_text(path)?;
    let mut names = Vec::new();
    let mut flags = Vec::new();
    let mut rdr = csv_reader(&text);
    for rec in rdr.deserialize::<VocabRow>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        let flag = parse_flag(&row.target).ok_or_else(|| {
            Error::parse(path, names.len() + 2, format!("bad target flag `{}`", row.target))
        })?;
        names.push(row.name);
        flags.push(flag);
    }
    ClassVocabulary::new(names, flags)
}

pub fn vocabulary_to_string(vocab: &ClassVocabulary) -> String {
    let mut out = String::from("name,target\n");
    for (i, n) in vocab.names().iter().enumerate() {
        out.push_str(&format!("{},{}\n", n, vocab.is_target(i)));
    }
    out
}

// -------------------------------------------------------------------- frames

#[derive(Serialize, Deserialize)]
struct FrameRow {
    frame_id: u64,
    timestamp_s: f64,
    width_px: u32,
    height_px: u32,
    x_m: Option<f64>,
    y_m: Option<f64>,
    altitude_m: Option<f64>,
    yaw_rad: Option<f64>,
    gsd_m: Option<f64>,
}

pub fn load_frames(path: &Path) -> Result<Vec<FrameMeta>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let mut frames = Vec::new();
    for (i, rec) in rdr.deserialize::<FrameRow>().enumerate() {
        let r = rec.map_err(|e| csv_err(path, e))?;
        let pose = match (r.x_m, r.y_m, r.altitude_m) {
            (Some(x_m), Some(y_m), Some(altitude_m)) => Some(Pose {
                x_m,
                y_m,
                altitude_m,
                yaw_rad: r.yaw_rad.unwrap_or(0.0),
            }),
            (None, None, None) => None,
            _ => {
                return Err(Error::parse(
                    path,
                    i + 2,
                    "pose needs x_m, y_m and altitude_m together",
                ))
            }
        };
        frames.push(FrameMeta {
            frame_id: r.frame_id,
            timestamp_s: r.timestamp_s,
            pose,
            width_px: r.width_px,
            height_px: r.height_px,
            gsd_m: r.gsd_m,
        });
    }
    Ok(frames)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn frames_to_string(frames: &[FrameMeta]) -> String {
    let mut out =
        String::from("frame_id,timestamp_s,width_px,height_px,x_m,y_m,altitude_m,yaw_rad,gsd_m\n");
    for f in frames {
        let p = f.pose;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            f.frame_id,
            f.timestamp_s,
            f.width_px,
            f.height_px,
            opt(p.map(|p| p.x_m)),
            opt(p.map(|p| p.y_m)),
            opt(p.map(|p| p.altitude_m)),
            opt(p.map(|p| p.yaw_rad)),
            opt(f.gsd_m),
        ));
    }
    out
}

// ---------------------------------------------------------------- detections

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    frame_id: u64,
    detection_id: u64,
    bbox: [f64; 4],
    scores: Vec<f64>,
}

/// Parse detection line records. Output is sorted by frame; file order is
/// kept within each frame.
pub fn parse_detections(text: &str, path: &Path, vocab: &ClassVocabulary) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if rec.scores.len() != vocab.len() {
            return Err(Error::ScoreLength {
                expected: vocab.len(),
                found: rec.scores.len(),
                line: Some(lineno),
            });
        }
        let [x, y, w, h] = rec.bbox;
        let bbox = BBox::new(x, y, w, h).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let scores =
            ScoreVector::new(rec.scores).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(Detection {
            frame_id: rec.frame_id,
            detection_id: rec.detection_id,
            bbox,
            scores,
        });
    }
    out.sort_by_key(|d| d.frame_id);
    Ok(out)
}

pub fn load_detections(path: &Path, vocab: &ClassVocabulary) -> Result<Vec<Detection>> {
    let text = read_text(path)?;
    parse_detections(&text, path, vocab)
}

pub fn detections_to_string(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let rec = DetectionRecord {
            frame_id: d.frame_id,
            detection_id: d.detection_id,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            scores: d.scores.as_slice().to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

// -------------------------------------------------------------- ground truth

#[derive(Serialize, Deserialize)]
struct GroundTruthRow {
    object_id: u64,
    class: String,
    world_x_m: f64,
    world_y_m: f64,
}

#[derive(Serialize, Deserialize)]
struct PixelRow {
    object_id: u64,
    frame_id: u64,
    px: f64,
    py: f64,
}

pub fn load_ground_truth(path: &Path, vocab: &ClassVocabulary) -> Result<Vec<GroundTruthObject>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for rec in rdr.deserialize::<GroundTruthRow>() {
        let r = rec.map_err(|e| csv_err(path, e))?;
        let class = vocab
            .index_of(&r.class)
            .ok_or_else(|| Error::UnknownClass(r.class.clone()))?;
        if !ids.insert(r.object_id) {
            return Err(Error::DuplicateId(r.object_id));
        }
        out.push(GroundTruthObject {
            object_id: r.object_id,
            class,
            world: (r.world_x_m, r.world_y_m),
            pixels: Vec::new(),
        });
    }
    Ok(out)
}

/// Attach per-frame pixel annotations to already-loaded objects.
pub fn load_pixel_annotations(path: &Path, objects: &mut [GroundTruthObject]) -> Result<()> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    for rec in rdr.deserialize::<PixelRow>() {
        let r = rec.map_err(|e| csv_err(path, e))?;
        let obj = objects
            .iter_mut()
            .find(|o| o.object_id == r.object_id)
            .ok_or_else(|| Error::Invalid(format!("annotation for unknown object {}", r.object_id)))?;
        obj.pixels.push((r.frame_id, r.px, r.py));
    }
    for o in objects.iter_mut() {
        o.pixels.sort_by_key(|p| p.0);
    }
    Ok(())
}

pub fn ground_truth_to_string(gt: &[GroundTruthObject], vocab: &ClassVocabulary) -> String {
    let mut out = String::from("object_id,class,world_x_m,world_y_m\n");
    for o in gt {
        out.push_str(&format!(
            "{},{},{},{}\n",
            o.object_id,
            vocab.name(o.class),
            o.world.0,
            o.world.1
        ));
    }
    out
}

// -------------------------------------------------------------- truth labels

#[derive(Serialize, Deserialize)]
struct TruthRow {
    detection_id: u64,
    kind: String,
    object_id: Option<u64>,
    spot_id: Option<u64>,
    correct_class: bool,
}

pub fn truth_to_string(truth: &BTreeMap<u64, TruthTag>) -> String {
    let mut out = String::from("detection_id,kind,object_id,spot_id,correct_class\n");
    for (id, t) in truth {
        let (kind, obj, spot) = match t.kind {
            TruthKind::True { object_id } => ("true", Some(object_id), None),
            TruthKind::False { spot_id } => ("false", None, spot_id),
        };
        let o = obj.map(|v| v.to_string()).unwrap_or_default();
        let s = spot.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{id},{kind},{o},{s},{}\n", t.correct_class));
    }
    out
}

pub fn load_truth(path: &Path) -> Result<BTreeMap<u64, TruthTag>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<TruthRow>().enumerate() {
        let r = rec.map_err(|e| csv_err(path, e))?;
        let kind = match (r.kind.as_str(), r.object_id) {
            ("true", Some(object_id)) => TruthKind::True { object_id },
            ("false", _) => TruthKind::False { spot_id: r.spot_id },
            _ => return Err(Error::parse(path, i + 2, "bad truth kind")),
        };
        out.insert(
            r.detection_id,
            TruthTag {
                detection_id: r.detection_id,
                kind,
                correct_class: r.correct_class,
            },
        );
    }
    Ok(out)
}

// ------------------------------------------------------------------ manifest

/// Describes the files of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub area_m2: f64,
    #[serde(default = "default_vocab")]
    pub vocabulary: String,
    #[serde(default = "default_frames")]
    pub frames: String,
    #[serde(default = "default_detections")]
    pub detections: String,
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub pixel_annotations: Option<String>,
    #[serde(default)]
    pub truth: Option<String>,
}

fn default_vocab() -> String {
    "vocabulary.csv".into()
}
fn default_frames() -> String {
    "frames.csv".into()
}
fn default_detections() -> String {
    "detections.jsonl".into()
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "run.toml";
}

/// Load a run directory described by its `run.toml`.
pub fn load_run_dir(dir: &Path) -> Result<RunDataset> {
    let mpath = dir.join(RunManifest::FILE_NAME);
    let manifest: RunManifest = toml::from_str(&read_text(&mpath)?)
        .map_err(|e| Error::parse(&mpath, 0, e.to_string()))?;
    let vocab = load_vocabulary(&dir.join(&manifest.vocabulary))?;
    let frames = load_frames(&dir.join(&manifest.frames))?;
    let dets = load_detections(&dir.join(&manifest.detections), &vocab)?;
    let gt = match &manifest.ground_truth {
        Some(p) => {
            let mut gt = load_ground_truth(&dir.join(p), &vocab)?;
            if let Some(px) = &manifest.pixel_annotations {
                load_pixel_annotations(&dir.join(px), &mut gt)?;
            }
            Some(gt)
        }
        None => None,
    };
    let mut ds = RunDataset::new(vocab, frames, dets, gt, manifest.area_m2)?;
    if let Some(t) = &manifest.truth {
        ds.truth = Some(load_truth(&dir.join(t))?);
    }
    Ok(ds)
}

/// Write a dataset as a run directory readable by [`load_run_dir`].
pub fn write_run_dir(ds: &RunDataset, dir: &Path) -> Result<()> {
    let manifest = RunManifest {
        area_m2: ds.area_m2,
        vocabulary: default_vocab(),
        frames: default_frames(),
        detections: default_detections(),
        ground_truth: ds.ground_truth.as_ref().map(|_| "ground_truth.csv".to_string()),
        pixel_annotations: None,
        truth: ds.truth.as_ref().map(|_| "truth.csv".to_string()),
    };
    write_atomic(&dir.join(&manifest.vocabulary), vocabulary_to_string(&ds.vocabulary).as_bytes())?;
    write_atomic(&dir.join(&manifest.frames), frames_to_string(&ds.frames).as_bytes())?;
    write_atomic(&dir.join(&manifest.detections), detections_to_string(&ds.detections).as_bytes())?;
    if let (Some(gt), Some(p)) = (&ds.ground_truth, &manifest.ground_truth) {
        write_atomic(&dir.join(p), ground_truth_to_string(gt, &ds.vocabulary).as_bytes())?;
    }
    if let (Some(t), Some(p)) = (&ds.truth, &manifest.truth) {
        write_atomic(&dir.join(p), truth_to_string(t).as_bytes())?;
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    write_atomic(&dir.join(RunManifest::FILE_NAME), text.as_bytes())
}

// ---------------------------------------------------------------- confusion

/// Header `true,<label>...`, then one row per label with the label first.
/// Rows must follow the column order.
pub fn parse_confusion(text: &str, path: &Path) -> Result<ConfusionMatrix> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::parse(path, 1, "expected `true` followed by predicted labels"));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::with_capacity(labels.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let want = labels.get(i).map(String::as_str).unwrap_or("");
        if rec.get(0) != Some(want) {
            return Err(Error::parse(
                path,
                line,
                format!("row label `{}` does not match column `{want}`", rec.get(0).unwrap_or("")),
            ));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::parse(path, line, format!("bad count `{v}`")))
            })
            .collect::<Result<Vec<u64>>>()?;
        counts.push(row);
    }
    ConfusionMatrix::new(labels, counts).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn load_confusion(path: &Path) -> Result<ConfusionMatrix> {
    parse_confusion(&read_text(path)?, path)
}

pub fn confusion_to_string(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true");
    for l in &cm.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in cm.labels.iter().zip(&cm.counts) {
        out.push_str(l);
        for c in row {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}

// ----------------------------------------------------------- report and ROC

pub fn report_to_string(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_atomic(path, report_to_string(report).as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn roc_to_string(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,p_d,d_fa,p_c\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.threshold, opt(p.p_d), p.d_fa, opt(p.p_c)));
    }
    out
}

pub fn write_roc(points: &[RocPoint], path: &Path) -> Result<()> {
    write_atomic(path, roc_to_string(points).as_bytes())
}

#[derive(Deserialize)]
struct RocRow {
    threshold: f64,
    p_d: Option<f64>,
    d_fa: f64,
    p_c: Option<f64>,
}

pub fn read_roc(path: &Path) -> Result<Vec<RocPoint>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    rdr.deserialize::<RocRow>()
        .map(|r| {
            r.map(|r| RocPoint {
                threshold: r.threshold,
                p_d: r.p_d,
                d_fa: r.d_fa,
                p_c: r.p_c,
            })
            .map_err(|e| csv_err(path, e))
        })
        .collect()
}

#[derive(Serialize)]
struct TubeletRecord<'a> {
    tubelet_id: u64,
    frames: Vec<u64>,
    detection_ids: Vec<u64>,
    class: &'a str,
    confidence: f64,
    aggregate: &'a [f64],
}

pub fn tubelets_to_string(tubelets: &[Tubelet], vocab: &ClassVocabulary) -> String {
    let mut out = String::new();
    for t in tubelets {
        let rec = TubeletRecord {
            tubelet_id: t.id(),
            frames: t.detections().iter().map(|d| d.frame_id).collect(),
            detection_ids: t.detections().iter().map(|d| d.detection_id).collect(),
            class: vocab.name(t.class()),
            confidence: t.confidence(),
            aggregate: t.aggregate().as_slice(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

//! End-to-end stages: detections -> tubelets -> reports, and tubelets ->
//! mosaic products.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::camera::NadirView;
use crate::error::{Error, Result};
use crate::ingest::RunDataset;
use crate::metrics::{reports_for_tubelets, AssociationConfig, Associator, MetricsReport, RocPoint};
use crate::mosaic::{
    dedupe_cross_pass, pose_transforms, project_detection, refine_pass, render_kde,
    rough_pass_poses, ClusterInput, Correspondence, FrameTransform, HeatmapRaster,
    ProjectedDetection, RasterSpec, Registration, RoughTranslation,
};
use crate::tubelet::{process, PipelineConfig};
use crate::types::Tubelet;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub association: AssociationConfig,
    pub mosaic: MosaicConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.matching.validate()?;
        self.association.validate()?;
        self.mosaic.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosaicConfig {
    /// Kernel sigma as a fraction of the projected box extent.
    pub alpha: f64,
    /// Mosaic pixels per heatmap pixel.
    pub raster_scale: f64,
    /// Cross-pass merge distance in mosaic pixels; the association radius
    /// at the first frame's GSD when absent.
    pub dedupe_radius_px: Option<f64>,
    /// Tubelets below this confidence are left out of the heatmap and the
    /// false-alarm comparison.
    pub threshold: f64,
    /// Largest tolerated share of unregistered frames.
    pub max_unregistered_fraction: f64,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            raster_scale: 10.0,
            dedupe_radius_px: None,
            threshold: 0.0,
            max_unregistered_fraction: 0.5,
        }
    }
}

impl MosaicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Invalid("mosaic.alpha must be > 0".into()));
        }
        if !(self.raster_scale.is_finite() && self.raster_scale > 0.0) {
            return Err(Error::Invalid("mosaic.raster_scale must be > 0".into()));
        }
        if matches!(self.dedupe_radius_px, Some(r) if !(r.is_finite() && r > 0.0)) {
            return Err(Error::Invalid("mosaic.dedupe_radius_px must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Invalid("mosaic.threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.max_unregistered_fraction) {
            return Err(Error::Invalid(
                "mosaic.max_unregistered_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tubelets: Vec<Tubelet>,
    /// One report per grid threshold, ascending.
    pub reports: Vec<MetricsReport>,
}

impl RunOutput {
    pub fn roc(&self) -> Vec<RocPoint> {
        self.reports.iter().map(RocPoint::from).collect()
    }
}

/// Tubelets plus a report at every grid threshold. Needs ground truth.
pub fn run(dataset: &RunDataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if dataset.ground_truth.is_none() {
        return Err(Error::Invalid("metrics need ground truth".into()));
    }
    let tubelets = process(&dataset.detections, &cfg.pipeline)?;
    let reports = reports_for_tubelets(&tubelets, dataset, &cfg.association)?;
    Ok(RunOutput { tubelets, reports })
}

/// Registers every frame: from poses when all frames carry one, refined by
/// correspondences where given; from correspondences alone otherwise, with
/// the first frame as reference.
pub fn register(
    dataset: &RunDataset,
    correspondences: Option<&HashMap<u64, Vec<Correspondence>>>,
) -> Result<Registration> {
    let frames = &dataset.frames;
    let posed = frames.iter().all(|f| f.pose.is_some() && f.gsd_m.is_some());
    match (posed, correspondences) {
        (true, None) => Ok(Registration {
            transforms: pose_transforms(frames)?,
            unregistered: Vec::new(),
        }),
        (true, Some(c)) => Ok(refine_pass(&rough_pass_poses(frames)?, c)),
        (false, Some(c)) => {
            let rough: Vec<RoughTranslation> = frames
                .iter()
                .enumerate()
                .map(|(i, f)| RoughTranslation {
                    frame_id: f.frame_id,
                    translation: (0.0, 0.0),
                    flag: (i > 0 && !c.contains_key(&f.frame_id))
                        .then(|| "no pose and no correspondences".to_string()),
                })
                .collect();
            Ok(refine_pass(&rough, c))
        }
        (false, None) if frames.len() <= 1 => Ok(Registration {
            transforms: frames
                .iter()
                .map(|f| FrameTransform::identity(f.frame_id))
                .collect(),
            unregistered: Vec::new(),
        }),
        (false, None) => Err(Error::Invalid(
            "frames lack camera poses and no correspondences were given; \
             add pose columns to the frames table or pass a correspondences file"
                .into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalseAlarmComparison {
    pub threshold: f64,
    pub area_m2: f64,
    /// Target-class tubelets matched to no object.
    pub naive_count: u64,
    pub naive_d_fa: f64,
    /// Cross-pass clusters matched to no object.
    pub corrected_count: u64,
    pub corrected_d_fa: f64,
    pub clusters: u64,
    pub dedupe_radius_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicOutput {
    pub registration: Registration,
    /// Re-scored tubelet members in registered frames.
    pub projected: Vec<ProjectedDetection>,
    pub heatmap: HeatmapRaster,
    /// Present when poses and ground truth allow localization.
    pub false_alarms: Option<FalseAlarmComparison>,
}

impl MosaicOutput {
    pub fn unregistered_fraction(&self, n_frames: usize) -> f64 {
        if n_frames == 0 {
            0.0
        } else {
            self.registration.unregistered.len() as f64 / n_frames as f64
        }
    }
}

pub fn mosaic(
    dataset: &RunDataset,
    tubelets: &[Tubelet],
    correspondences: Option<&HashMap<u64, Vec<Correspondence>>>,
    cfg: &RunConfig,
) -> Result<MosaicOutput> {
    cfg.validate()?;
    let mc = &cfg.mosaic;
    let registration = register(dataset, correspondences)?;
    let bad: HashSet<u64> = registration.unregistered.iter().map(|u| u.0).collect();
    let by_frame: HashMap<u64, &FrameTransform> = registration
        .transforms
        .iter()
        .map(|t| (t.frame_id, t))
        .collect();

    let kept: Vec<&Tubelet> = tubelets
        .iter()
        .filter(|t| t.confidence() >= mc.threshold)
        .collect();
    let mut projected = Vec::new();
    // (tubelet index, mosaic position) for tubelets with any registered member
    let mut placed: Vec<(usize, (f64, f64))> = Vec::new();
    for (ti, t) in kept.iter().enumerate() {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for d in t.effective_detections() {
            if bad.contains(&d.frame_id) {
                continue;
            }
            let Some(tf) = by_frame.get(&d.frame_id) else {
                continue;
            };
            let p = project_detection(&d, tf)?;
            sx += p.centroid.0;
            sy += p.centroid.1;
            n += 1;
            projected.push(p);
        }
        if n > 0 {
            placed.push((ti, (sx / n as f64, sy / n as f64)));
        }
    }

    let heatmap = render_kde(&projected, &raster_spec(dataset, &registration, mc)?)?;
    let false_alarms = compare_false_alarms(dataset, tubelets, &kept, &placed, cfg)?;
    Ok(MosaicOutput {
        registration,
        projected,
        heatmap,
        false_alarms,
    })
}

/// Raster covering every registered frame's projected outline.
fn raster_spec(
    dataset: &RunDataset,
    registration: &Registration,
    mc: &MosaicConfig,
) -> Result<RasterSpec> {
    let bad: HashSet<u64> = registration.unregistered.iter().map(|u| u.0).collect();
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (f, t) in dataset.frames.iter().zip(&registration.transforms) {
        if bad.contains(&f.frame_id) {
            continue;
        }
        let (w, h) = (f64::from(f.width_px), f64::from(f.height_px));
        for (x, y) in [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)] {
            let (u, v) = t.apply(x, y)?;
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (0.0, 0.0);
    }
    let s = mc.raster_scale;
    let origin = ((lo.0 / s).floor() * s, (lo.1 / s).floor() * s);
    let cells = |a: f64, b: f64| ((b - a) / s).ceil() as usize + 1;
    Ok(RasterSpec {
        width: cells(origin.0, hi.0),
        height: cells(origin.1, hi.1),
        origin,
        scale: s,
        alpha: mc.alpha,
    })
}

fn compare_false_alarms(
    dataset: &RunDataset,
    tubelets: &[Tubelet],
    kept: &[&Tubelet],
    placed: &[(usize, (f64, f64))],
    cfg: &RunConfig,
) -> Result<Option<FalseAlarmComparison>> {
    let Some(gt) = &dataset.ground_truth else {
        return Ok(None);
    };
    let Some(first) = dataset.frames.first() else {
        return Ok(None);
    };
    let Ok(base) = NadirView::of(first) else {
        return Ok(None);
    };
    let vocab = &dataset.vocabulary;
    let threshold = cfg.mosaic.threshold;
    let naive = Associator::for_tubelets(tubelets, gt, &dataset.frames, vocab, &cfg.association)?
        .assign(threshold)
        .n_false();

    let radius = cfg
        .mosaic
        .dedupe_radius_px
        .unwrap_or(cfg.association.match_radius_m / base.gsd_m);
    let inputs: Vec<ClusterInput> = placed
        .iter()
        .filter(|(ti, _)| vocab.is_target(kept[*ti].class()))
        .map(|&(ti, position)| ClusterInput {
            position,
            scores: kept[ti].aggregate().clone(),
        })
        .collect();
    let clusters = dedupe_cross_pass(&inputs, radius);
    let positions: Vec<(f64, f64)> = clusters
        .iter()
        .map(|c| base.pixel_to_world(c.position.0, c.position.1))
        .collect();
    let classes: Vec<usize> = clusters.iter().map(|c| c.scores.class()).collect();
    let confidences: Vec<f64> = clusters.iter().map(|c| c.scores.confidence()).collect();
    let corrected = Associator::for_points(
        &positions,
        &classes,
        &confidences,
        gt,
        vocab,
        cfg.association.match_radius_m,
    )
    .assign(0.0)
    .n_false();

    let area = dataset.area_m2;
    Ok(Some(FalseAlarmComparison {
        threshold,
        area_m2: area,
        naive_count: naive,
        naive_d_fa: naive as f64 / area,
        corrected_count: corrected,
        corrected_d_fa: corrected as f64 / area,
        clusters: clusters.len() as u64,
        dedupe_radius_px: radius,
    }))
}

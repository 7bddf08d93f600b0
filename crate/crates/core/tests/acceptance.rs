//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::Matrix3;

use seqtube::camera::NadirView;
use seqtube::ingest::{report_to_string, roc_to_string, tubelets_to_string, RunDataset};
use seqtube::metrics::NOT_DETECTED;
use seqtube::mosaic::{
    apply_homography, estimate_homography, pose_transforms, project_detection, render_kde,
    Correspondence, ProjectedDetection, RasterSpec,
};
use seqtube::pipeline::{self, RunConfig};
use seqtube::simgen::{
    generate_with_log, oracle_labels, ClutterSpot, ObjectSpec, SurveyRng, SurveyScenario,
    TruthKind,
};
use seqtube::tubelet::{build_tubelets, link_tubelets, process, rescore};
use seqtube::{
    BBox, ClassVocabulary, ConfusionMatrix, Detection, GroundTruthObject, MatchConfig,
    MetricsReport, PipelineConfig, ScoreVector, Tubelet,
};

// Tolerances
const TABLE_ROUNDING: f64 = 0.005;
const TABLE_RUNTIME: Duration = Duration::from_secs(1);
const MATCHING_INSTANCES: usize = 2000;
const MEAN_TOL: f64 = 1e-12;
const SPREAD_PX: f64 = 2.0;
const TRUTH_PX: f64 = 0.5;
const HOMOGRAPHY_TOL: f64 = 1e-6;
const KDE_PEAK_TOL: f64 = 1e-9;
const KDE_ADDITIVE_TOL: f64 = 1e-6;
const KDE_SCALE_TOL: f64 = 1e-9;
const PERF_BUDGET: Duration = Duration::from_secs(10);
const PERF_FRAMES: u64 = 1000;
const PERF_PER_FRAME: usize = 20;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("published confusion matrix reproduces the per-class table", table_reproduction),
        ("zero-noise closure and injected false-alarm density", oracle_closure),
        ("frame matching equals the exhaustive greedy oracle", matching_oracle),
        ("re-scoring is an exact mean and idempotent", rescoring),
        ("kappa = 1 is the identity, kappa = 2 bridges a one-frame gap", linking),
        ("pose-mode projection accuracy and homography recovery", projection),
        ("heatmap peak, additivity and scale equivariance", kde_contract),
        ("cross-pass deduplication corrects false-alarm density", corrected_false_alarms),
        ("ROC monotonicity and re-scoring classification gain", roc_behaviour),
        ("1000 x 20 run under budget and thread-count independent", performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown".into())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ------------------------------------------------------------------------ 1

const UXO: [&str; 6] = ["155MM", "BLU26", "BLU63", "BLU97", "PTAB2.5KO", "ROCKEYE"];

fn published_confusion() -> ConfusionMatrix {
    let rows: [[u64; 7]; 7] = [
        [10, 0, 0, 4, 15, 7, 0],
        [0, 78, 0, 9, 1, 0, 12],
        [0, 0, 18, 0, 0, 0, 1],
        [0, 2, 2, 35, 8, 11, 1],
        [0, 0, 0, 13, 68, 12, 2],
        [0, 3, 0, 22, 6, 68, 2],
        [0, 0, 0, 0, 0, 0, 0],
    ];
    let mut labels: Vec<String> = UXO.iter().map(|s| s.to_string()).collect();
    labels.push(NOT_DETECTED.into());
    ConfusionMatrix::new(labels, rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn table_reproduction() -> Outcome {
    // label, precision, recall, f1, support
    let table: [(&str, f64, f64, f64, u64); 6] = [
        ("155MM", 1.00, 0.28, 0.43, 36),
        ("BLU26", 0.94, 0.78, 0.85, 100),
        ("BLU63", 0.90, 0.95, 0.92, 19),
        ("BLU97", 0.42, 0.59, 0.49, 59),
        ("PTAB2.5KO", 0.69, 0.72, 0.70, 95),
        ("ROCKEYE", 0.69, 0.67, 0.68, 101),
    ];
    let start = Instant::now();
    let r = MetricsReport::from_confusion(published_confusion(), 0, 4270.0, 0.1)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(elapsed < TABLE_RUNTIME, "took {elapsed:?}");
    ensure!(r.per_class.len() == 6, "expected 6 class rows");
    for (row, (label, p, rc, f, s)) in r.per_class.iter().zip(table) {
        ensure!(row.label == label, "row order: {} vs {label}", row.label);
        ensure!(
            close(row.precision, p, TABLE_ROUNDING)
                && close(row.recall, rc, TABLE_ROUNDING)
                && close(row.f1, f, TABLE_ROUNDING)
                && row.support == s,
            "{label}: got {:.4}/{:.4}/{:.4}/{} want {p}/{rc}/{f}/{s}",
            row.precision,
            row.recall,
            row.f1,
            row.support
        );
    }
    let acc = r.accuracy.ok_or("no accuracy")?;
    ensure!(close(acc, 0.68, TABLE_ROUNDING), "accuracy {acc}");
    let w = r.weighted_avg;
    ensure!(
        close(w.precision, 0.75, TABLE_ROUNDING)
            && close(w.recall, 0.68, TABLE_ROUNDING)
            && close(w.f1, 0.69, TABLE_ROUNDING)
            && w.support == 410,
        "weighted {:.4}/{:.4}/{:.4}/{}",
        w.precision,
        w.recall,
        w.f1,
        w.support
    );
    let m = r.macro_avg;
    ensure!(
        close(m.precision, 0.66, TABLE_ROUNDING)
            && close(m.recall, 0.57, TABLE_ROUNDING)
            && close(m.f1, 0.58, TABLE_ROUNDING),
        "macro {:.4}/{:.4}/{:.4}",
        m.precision,
        m.recall,
        m.f1
    );
    Ok(format!(
        "weighted {:.4}/{:.4}/{:.4}, accuracy {acc:.4}, macro {:.4}/{:.4}/{:.4}, {elapsed:?}",
        w.precision, w.recall, w.f1, m.precision, m.recall, m.f1
    ))
}

// ------------------------------------------------------------------------ 2

fn oracle_closure() -> Outcome {
    let cfg = RunConfig::default();

    let clean = generate_with_log(&SurveyScenario::survey_preset(2024)).map_err(|e| e.to_string())?;
    ensure!(clean.dataset.area_m2 == 4270.0, "area {}", clean.dataset.area_m2);
    let out = pipeline::run(&clean.dataset, &cfg).map_err(|e| e.to_string())?;
    for r in &out.reports {
        ensure!(
            r.p_d == Some(1.0) && r.d_fa == 0.0 && r.p_c == Some(1.0),
            "t={}: P_d {:?} D_FA {} P_c {:?}",
            r.threshold,
            r.p_d,
            r.d_fa,
            r.p_c
        );
    }

    let mut noisy = SurveyScenario::survey_preset(2024);
    noisy.noise.false_alarm_rate = 0.05;
    noisy.noise.false_alarm_clearance_px = 600.0;
    let run = generate_with_log(&noisy).map_err(|e| e.to_string())?;
    let k = run.log.uniform_false_alarms;
    ensure!(k > 0, "no false alarms injected");
    let labels = oracle_labels(&run.dataset).map_err(|e| e.to_string())?;
    let tagged = labels.values().filter(|t| !t.is_true()).count() as u64;
    ensure!(tagged == k, "labels {tagged} vs log {k}");
    let out = pipeline::run(&run.dataset, &cfg).map_err(|e| e.to_string())?;
    let r0 = &out.reports[0];
    ensure!(r0.threshold == 0.0, "first threshold {}", r0.threshold);
    ensure!(
        r0.d_fa == k as f64 / 4270.0 && r0.n_false_detections == k,
        "D_FA {} vs K/A {}",
        r0.d_fa,
        k as f64 / 4270.0
    );
    ensure!(r0.p_d == Some(1.0) && r0.p_c == Some(1.0), "P_d {:?} P_c {:?}", r0.p_d, r0.p_c);
    Ok(format!(
        "{} objects, {} detections closed exactly; K = {k} gives D_FA = {:.6e}",
        clean.dataset.ground_truth.as_ref().map_or(0, |g| g.len()),
        clean.dataset.detections.len(),
        r0.d_fa
    ))
}

// ------------------------------------------------------------------------ 3

fn matching_oracle() -> Outcome {
    let mut rng = SurveyRng::new(0x5eed);
    let mut matched_pairs = 0usize;
    for case in 0..MATCHING_INSTANCES {
        let k = 2 + rng.below(2);
        let dets = common::random_instance(&mut rng, 5, 4, k);
        let cfg = common::random_config(&mut rng);
        let got = common::describe(&build_tubelets(&dets, &cfg));
        let want = common::oracle_tubelets(&dets, &cfg);
        ensure!(
            got == want,
            "instance {case} ({:?}, q_min {}): {got:?} vs oracle {want:?}",
            cfg.mode,
            cfg.q_min
        );
        matched_pairs += want.iter().map(|(_, m)| m.len() - 1).sum::<usize>();
    }
    Ok(format!("{MATCHING_INSTANCES} instances identical, {matched_pairs} matched pairs"))
}

// ------------------------------------------------------------------------ 4

fn rescoring() -> Outcome {
    let mut rng = SurveyRng::new(41);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut check = |t: &Tubelet| -> Result<(), String> {
        let raw: Vec<&ScoreVector> = t.detections().iter().map(|d| &d.scores).collect();
        let want = common::mean_vector(&raw);
        for (a, b) in t.aggregate().as_slice().iter().zip(&want) {
            worst = worst.max((a - b).abs());
            ensure!((a - b).abs() <= MEAN_TOL, "tubelet {}: {a} vs {b}", t.id());
        }
        let once = rescore(t);
        let twice = rescore(&once);
        ensure!(once == *t && twice == once, "rescore changed tubelet {}", t.id());
        ensure!(
            t.effective_detections().all(|d| &d.scores == t.aggregate()),
            "effective scores differ from aggregate"
        );
        checked += 1;
        Ok(())
    };
    for _ in 0..300 {
        let k = 2 + rng.below(6);
        for t in common::random_tubelets(&mut rng, 10, k) {
            check(&t)?;
        }
    }
    for _ in 0..300 {
        let dets = common::random_instance(&mut rng, 5, 4, 3);
        for t in build_tubelets(&dets, &MatchConfig::reciprocal_distance()) {
            check(&t)?;
        }
    }
    Ok(format!("{checked} tubelets, worst deviation {worst:.1e}"))
}

// ------------------------------------------------------------------------ 5

fn det(frame: u64, id: u64, x: f64, scores: [f64; 2]) -> Detection {
    Detection {
        frame_id: frame,
        detection_id: id,
        bbox: BBox::new(x, 50.0, 20.0, 20.0).unwrap(),
        scores: ScoreVector::new(scores.to_vec()).unwrap(),
    }
}

fn linking() -> Outcome {
    let mut rng = SurveyRng::new(77);
    let mut identity = MatchConfig::reciprocal_distance();
    identity.kappa = 1;
    for case in 0..500 {
        let n = 1 + rng.below(12);
        let ts = common::random_tubelets(&mut rng, n, 3);
        let linked = link_tubelets(&ts, &identity);
        ensure!(
            format!("{linked:?}") == format!("{ts:?}"),
            "set {case} changed under kappa = 1"
        );
        let dets: Vec<Detection> = ts.iter().flat_map(|t| t.detections().to_vec()).collect();
        let built = build_tubelets(&dets, &identity);
        let piped = process(
            &dets,
            &PipelineConfig {
                sequential_matching: true,
                matching: identity.clone(),
            },
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            format!("{piped:?}") == format!("{built:?}"),
            "set {case}: pipeline with kappa = 1 differs from plain matching"
        );
    }

    // frames 2-4 and 6-8 of one object, frame 5 missed
    let a: Vec<Detection> = (2..=4)
        .map(|f| det(f, f, 100.0 + 10.0 * f as f64, [0.7, 0.2]))
        .collect();
    let b: Vec<Detection> = (6..=8)
        .map(|f| det(f, f, 100.0 + 10.0 * f as f64, [0.3, 0.6]))
        .collect();
    let far: Vec<Detection> = (3..=5)
        .map(|f| det(f, 100 + f, 900.0, [0.5, 0.5]))
        .collect();
    let ta = Tubelet::new(0, a.clone()).unwrap();
    let tb = Tubelet::new(1, b.clone()).unwrap();
    let tf = Tubelet::new(2, far).unwrap();
    let mut k2 = MatchConfig::reciprocal_distance();
    k2.kappa = 2;
    let linked = link_tubelets(&[ta.clone(), tb.clone(), tf.clone()], &k2);
    ensure!(linked.len() == 2, "expected 2 tubelets, got {}", linked.len());
    let merged = &linked[0];
    let frames: Vec<u64> = merged.detections().iter().map(|d| d.frame_id).collect();
    ensure!(merged.id() == 0, "merged id {}", merged.id());
    ensure!(frames == vec![2, 3, 4, 6, 7, 8], "merged frames {frames:?}");
    let all: Vec<&ScoreVector> = a.iter().chain(&b).map(|d| &d.scores).collect();
    let want = common::mean_vector(&all);
    for (x, y) in merged.aggregate().as_slice().iter().zip(&want) {
        ensure!(close(*x, *y, MEAN_TOL), "merged aggregate {x} vs {y}");
    }
    ensure!(linked[1] == tf, "unrelated tubelet modified");

    let k1 = link_tubelets(&[ta.clone(), tb.clone()], &identity);
    ensure!(k1 == vec![ta.clone(), tb.clone()], "kappa = 1 linked across a gap");
    let shifted: Vec<Detection> = b.iter().map(|d| Detection { frame_id: d.frame_id + 1, ..d.clone() }).collect();
    let gap2 = link_tubelets(&[ta, Tubelet::new(1, shifted).unwrap()], &k2);
    ensure!(gap2.len() == 2, "kappa = 2 bridged a two-frame gap");
    Ok("500 random sets unchanged; frames 2-4 + 6-8 merged with mean re-scoring".into())
}

// ------------------------------------------------------------------------ 6

/// Two overlapping flight lines over a short field.
fn two_pass_scenario(seed: u64) -> SurveyScenario {
    let mut s = SurveyScenario::survey_preset(seed);
    s.field.width_m = 8.4;
    s.field.length_m = 40.0;
    s.random_objects = None;
    s.flight.passes = Some(2);
    s.flight.swath_spacing_m = 3.0;
    s.objects = [
        ("BLU26", 4.0, 10.0),
        ("155MM", 1.0, 20.0),
        ("ROCKEYE", 7.5, 25.0),
        ("PTAB2.5KO", 4.5, 30.0),
    ]
    .iter()
    .map(|&(c, x, y)| ObjectSpec {
        class: c.into(),
        x_m: x,
        y_m: y,
    })
    .collect();
    s
}

fn projection() -> Outcome {
    let run = generate_with_log(&two_pass_scenario(6)).map_err(|e| e.to_string())?;
    let ds = &run.dataset;
    let transforms = pose_transforms(&ds.frames).map_err(|e| e.to_string())?;
    let by_frame: HashMap<u64, _> = transforms.iter().map(|t| (t.frame_id, t)).collect();
    let base = NadirView::of(&ds.frames[0]).map_err(|e| e.to_string())?;
    let labels = oracle_labels(ds).map_err(|e| e.to_string())?;
    let gt = ds.ground_truth.as_ref().ok_or("no ground truth")?;

    let mut per_object: BTreeMap<u64, Vec<((f64, f64), u64)>> = BTreeMap::new();
    for d in &ds.detections {
        if let TruthKind::True { object_id } = labels[&d.detection_id].kind {
            let p = project_detection(d, by_frame[&d.frame_id]).map_err(|e| e.to_string())?;
            per_object.entry(object_id).or_default().push((p.centroid, d.frame_id));
        }
    }
    ensure!(per_object.len() == gt.len(), "some object never projected");
    let (mut spread, mut err) = (0.0f64, 0.0f64);
    let mut multi_pass = 0;
    for (oid, pts) in &per_object {
        let o = gt.iter().find(|o| o.object_id == *oid).unwrap();
        let truth = base.world_to_pixel(o.world.0, o.world.1);
        for (p, _) in pts {
            err = err.max((p.0 - truth.0).hypot(p.1 - truth.1));
            for (q, _) in pts {
                spread = spread.max((p.0 - q.0).hypot(p.1 - q.1));
            }
        }
        let first = pts.iter().map(|p| p.1).min().unwrap();
        let last = pts.iter().map(|p| p.1).max().unwrap();
        if last - first > pts.len() as u64 {
            multi_pass += 1;
        }
    }
    ensure!(multi_pass >= 2, "only {multi_pass} objects seen on both passes");
    ensure!(spread < SPREAD_PX, "spread {spread} px");
    ensure!(err < TRUTH_PX, "distance to truth {err} px");

    let mut rng = SurveyRng::new(99);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let h = Matrix3::new(
            rng.range(0.8, 1.2),
            rng.range(-0.2, 0.2),
            rng.range(-200.0, 200.0),
            rng.range(-0.2, 0.2),
            rng.range(0.8, 1.2),
            rng.range(-200.0, 200.0),
            rng.range(-2e-4, 2e-4),
            rng.range(-2e-4, 2e-4),
            1.0,
        );
        let src = [
            (rng.range(0.0, 300.0), rng.range(0.0, 300.0)),
            (rng.range(700.0, 1000.0), rng.range(0.0, 300.0)),
            (rng.range(700.0, 1000.0), rng.range(700.0, 1000.0)),
            (rng.range(0.0, 300.0), rng.range(700.0, 1000.0)),
        ];
        let pairs: Vec<Correspondence> = src
            .iter()
            .map(|&s| Correspondence {
                src: s,
                dst: apply_homography(&h, s.0, s.1).unwrap(),
            })
            .collect();
        let got = estimate_homography(&pairs).map_err(|e| e.to_string())?;
        worst = worst.max((got - h).abs().max());
    }
    ensure!(worst < HOMOGRAPHY_TOL, "homography deviation {worst:e}");
    Ok(format!(
        "spread {spread:.2e} px, truth error {err:.2e} px over {} objects; homography deviation {worst:.1e}",
        per_object.len()
    ))
}

// ------------------------------------------------------------------------ 7

fn projected(cx: f64, cy: f64, w: f64, h: f64, conf: f64) -> ProjectedDetection {
    ProjectedDetection {
        detection_id: 0,
        frame_id: 0,
        centroid: (cx, cy),
        bounds: (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
        scores: ScoreVector::new(vec![conf, conf / 2.0]).unwrap(),
    }
}

fn kde_contract() -> Outcome {
    let spec = RasterSpec {
        width: 120,
        height: 90,
        origin: (-10.0, 5.0),
        scale: 2.0,
        alpha: 0.5,
    };
    let render = |d: &[ProjectedDetection]| render_kde(d, &spec).unwrap();

    let lone = render(&[projected(50.0, 45.0, 30.0, 12.0, 0.9)]);
    let peak = lone.at(30, 20);
    ensure!(close(peak, 0.9, KDE_PEAK_TOL), "peak {peak}");
    ensure!(close(lone.max(), 0.9, KDE_PEAK_TOL), "max {}", lone.max());

    let both = render(&[
        projected(50.0, 45.0, 30.0, 12.0, 0.4),
        projected(50.0, 45.0, 30.0, 12.0, 0.5),
    ]);
    ensure!(close(both.at(30, 20), 0.9, KDE_ADDITIVE_TOL), "coincident {}", both.at(30, 20));

    let mut rng = SurveyRng::new(7);
    let random_set = |rng: &mut SurveyRng, n: usize| -> Vec<ProjectedDetection> {
        (0..n)
            .map(|_| {
                projected(
                    rng.range(-30.0, 250.0),
                    rng.range(-10.0, 200.0),
                    rng.range(2.0, 40.0),
                    rng.range(2.0, 40.0),
                    rng.range(0.01, 0.5),
                )
            })
            .collect()
    };
    let (mut add_err, mut scale_err) = (0.0f64, 0.0f64);
    for _ in 0..40 {
        let (na, nb) = (1 + rng.below(25), 1 + rng.below(25));
        let a = random_set(&mut rng, na);
        let b = random_set(&mut rng, nb);
        let ab: Vec<_> = a.iter().chain(&b).cloned().collect();
        let (ra, rb, rab) = (render(&a), render(&b), render(&ab));
        for i in 0..rab.values.len() {
            add_err = add_err.max((rab.values[i] - ra.values[i] - rb.values[i]).abs());
        }
        let lambda = rng.range(0.05, 2.0);
        let scaled: Vec<_> = ab
            .iter()
            .map(|d| ProjectedDetection {
                scores: ScoreVector::new(d.scores.as_slice().iter().map(|s| s * lambda).collect())
                    .unwrap(),
                ..d.clone()
            })
            .collect();
        let rs = render(&scaled);
        for i in 0..rab.values.len() {
            scale_err = scale_err.max((rs.values[i] - lambda * rab.values[i]).abs());
        }
    }
    ensure!(add_err <= KDE_ADDITIVE_TOL, "additivity error {add_err:e}");
    ensure!(scale_err <= KDE_SCALE_TOL, "scaling error {scale_err:e}");
    Ok(format!(
        "peak {peak:.12}, additivity {add_err:.1e}, scaling {scale_err:.1e}"
    ))
}

// ------------------------------------------------------------------------ 8

fn corrected_false_alarms() -> Outcome {
    let mut s = two_pass_scenario(8);
    s.noise.false_amplitude = [0.8, 0.8];
    s.noise.clutter = [(3.5, 15.0), (4.2, 22.0), (5.0, 35.0), (1.5, 5.0)]
        .iter()
        .map(|&(x, y)| ClutterSpot {
            class: "BLU97".into(),
            x_m: x,
            y_m: y,
        })
        .collect();
    let run = generate_with_log(&s).map_err(|e| e.to_string())?;
    let ds = &run.dataset;
    let cfg = RunConfig::default();
    let tubelets = process(&ds.detections, &cfg.pipeline).map_err(|e| e.to_string())?;
    let out = pipeline::mosaic(ds, &tubelets, None, &cfg).map_err(|e| e.to_string())?;
    let fa = out.false_alarms.ok_or("no false-alarm comparison")?;

    // expected counts from the truth channel
    let labels = oracle_labels(ds).map_err(|e| e.to_string())?;
    let mut per_source: BTreeMap<TruthKind, usize> = BTreeMap::new();
    for t in &tubelets {
        let kinds: BTreeSet<TruthKind> = t
            .detections()
            .iter()
            .map(|d| labels[&d.detection_id].kind)
            .collect();
        ensure!(kinds.len() == 1, "tubelet {} mixes sources {kinds:?}", t.id());
        *per_source.entry(*kinds.iter().next().unwrap()).or_default() += 1;
    }
    let expected_naive: usize = per_source
        .iter()
        .map(|(k, n)| match k {
            TruthKind::True { .. } => n - 1,
            TruthKind::False { .. } => *n,
        })
        .sum();
    let unique = run.log.clutter_spots_fired.len() as u64;
    let area = ds.area_m2;

    ensure!(
        fa.naive_count == expected_naive as u64,
        "naive {} vs labels {expected_naive}",
        fa.naive_count
    );
    ensure!(fa.corrected_count == unique, "corrected {} vs {unique} spots", fa.corrected_count);
    ensure!(fa.corrected_d_fa < fa.naive_d_fa, "corrected not smaller");
    ensure!(
        fa.corrected_d_fa == unique as f64 / area && fa.naive_d_fa == expected_naive as f64 / area,
        "density mismatch"
    );
    Ok(format!(
        "naive {} ({:.4e}/m^2) -> corrected {} ({:.4e}/m^2), {unique} unique spots",
        fa.naive_count, fa.naive_d_fa, fa.corrected_count, fa.corrected_d_fa
    ))
}

// ------------------------------------------------------------------------ 9

fn noisy_scenario(seed: u64) -> SurveyScenario {
    let mut s = SurveyScenario::survey_preset(seed);
    let n = &mut s.noise;
    n.miss_prob = 0.15;
    n.false_alarm_rate = 0.3;
    n.bbox_jitter_px = 4.0;
    n.score_mix = 0.3;
    n.true_amplitude = [0.3, 1.0];
    n.false_amplitude = [0.05, 0.7];
    n.confusion = Some(vec![
        vec![0.50, 0.00, 0.00, 0.10, 0.25, 0.15],
        vec![0.00, 0.85, 0.00, 0.10, 0.05, 0.00],
        vec![0.00, 0.00, 0.95, 0.00, 0.00, 0.05],
        vec![0.00, 0.05, 0.05, 0.60, 0.10, 0.20],
        vec![0.00, 0.00, 0.00, 0.15, 0.70, 0.15],
        vec![0.00, 0.03, 0.00, 0.20, 0.07, 0.70],
    ]);
    s
}

fn roc_behaviour() -> Outcome {
    let run = generate_with_log(&noisy_scenario(909)).map_err(|e| e.to_string())?;
    let ds = &run.dataset;
    let tubes = pipeline::run(ds, &RunConfig::default()).map_err(|e| e.to_string())?;
    let base_cfg = RunConfig {
        pipeline: PipelineConfig::baseline(),
        ..RunConfig::default()
    };
    let base = pipeline::run(ds, &base_cfg).map_err(|e| e.to_string())?;

    for (name, out) in [("tubelets", &tubes), ("baseline", &base)] {
        let roc = out.roc();
        ensure!(roc.len() == 20, "{name}: {} grid points", roc.len());
        for w in roc.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            ensure!(
                b.p_d.unwrap_or(0.0) <= a.p_d.unwrap_or(0.0) && b.d_fa <= a.d_fa,
                "{name}: rises between t={} and t={}",
                a.threshold,
                b.threshold
            );
        }
    }
    let at = |out: &pipeline::RunOutput| {
        out.reports
            .iter()
            .find(|r| close(r.threshold, 0.1, 1e-12))
            .and_then(|r| r.p_c)
    };
    let (pt, pb) = (at(&tubes).ok_or("no P_c")?, at(&base).ok_or("no P_c")?);
    ensure!(pt >= pb, "re-scored P_c {pt:.4} < baseline {pb:.4}");
    Ok(format!(
        "20-point grids monotone; P_c at 0.1: re-scored {pt:.4} vs baseline {pb:.4}"
    ))
}

// ----------------------------------------------------------------------- 10

/// Camera moving along +y over two lines of objects spaced one frame step
/// apart, so every frame sees exactly ten objects per line.
fn performance_dataset() -> RunDataset {
    let vocab = ClassVocabulary::all_targets(UXO).unwrap();
    let k = vocab.len();
    let step = 0.96;
    let mut rng = SurveyRng::new(1010);
    let frames: Vec<_> = (0..PERF_FRAMES)
        .map(|f| {
            common::posed_frame(
                f,
                2.7,
                4.8 + step * f as f64,
                std::f64::consts::FRAC_PI_2,
                1920,
                1080,
                0.005,
            )
        })
        .collect();
    let mut objects = Vec::new();
    for i in 0..(PERF_FRAMES as usize + 10) {
        for (j, x) in [1.5, 3.9].into_iter().enumerate() {
            objects.push(GroundTruthObject {
                object_id: (2 * i + j) as u64,
                class: rng.below(k),
                world: (x, 0.48 + step * i as f64),
                pixels: Vec::new(),
            });
        }
    }
    let mut detections = Vec::new();
    for f in &frames {
        let view = NadirView::of(f).unwrap();
        let first = f.frame_id as usize;
        for o in &objects[2 * first..2 * (first + 10)] {
            let (px, py) = view.world_to_pixel(o.world.0, o.world.1);
            let observed = if rng.bernoulli(0.7) { o.class } else { rng.below(k) };
            let amp = rng.range(0.2, 1.0);
            let scores = (0..k)
                .map(|c| amp * (0.7 * f64::from(u8::from(c == observed)) + 0.3 * rng.uniform()))
                .collect();
            detections.push(Detection {
                frame_id: f.frame_id,
                detection_id: detections.len() as u64,
                bbox: BBox::from_center(px + 3.0 * rng.normal(), py + 3.0 * rng.normal(), 60.0, 60.0)
                    .unwrap(),
                scores: ScoreVector::new(scores).unwrap(),
            });
        }
    }
    RunDataset::new(vocab, frames, detections, Some(objects), 5.4 * 960.0).unwrap()
}

struct Snapshot {
    reports: Vec<String>,
    roc: String,
    tubelets: String,
    heatmap: Vec<u64>,
    false_alarms: String,
}

fn full_run(ds: &RunDataset, threads: usize) -> Result<(Snapshot, Duration), String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let cfg = RunConfig::default();
        let out = pipeline::run(ds, &cfg).map_err(|e| e.to_string())?;
        let mosaic = pipeline::mosaic(ds, &out.tubelets, None, &cfg).map_err(|e| e.to_string())?;
        let snap = Snapshot {
            reports: out.reports.iter().map(report_to_string).collect(),
            roc: roc_to_string(&out.roc()),
            tubelets: tubelets_to_string(&out.tubelets, &ds.vocabulary),
            heatmap: mosaic.heatmap.values.iter().map(|v| v.to_bits()).collect(),
            false_alarms: format!("{:?}", mosaic.false_alarms),
        };
        Ok((snap, start.elapsed()))
    })
}

fn performance() -> Outcome {
    let ds = performance_dataset();
    let per_frame = ds.detections_by_frame();
    ensure!(
        per_frame.len() == PERF_FRAMES as usize
            && per_frame.iter().all(|(_, d)| d.len() == PERF_PER_FRAME),
        "dataset is not {PERF_FRAMES} x {PERF_PER_FRAME}"
    );
    let (one, t1) = full_run(&ds, 1)?;
    ensure!(t1 < PERF_BUDGET, "single-threaded run took {t1:?}");
    for threads in [2, 4, 8] {
        let (many, _) = full_run(&ds, threads)?;
        ensure!(many.reports == one.reports, "{threads} threads: reports differ");
        ensure!(many.roc == one.roc, "{threads} threads: ROC differs");
        ensure!(many.tubelets == one.tubelets, "{threads} threads: tubelets differ");
        ensure!(many.heatmap == one.heatmap, "{threads} threads: heatmap differs");
        ensure!(many.false_alarms == one.false_alarms, "{threads} threads: FA report differs");
    }
    Ok(format!(
        "{} detections in {t1:?} on 1 thread; identical on 2, 4, 8 threads",
        ds.detections.len()
    ))
}

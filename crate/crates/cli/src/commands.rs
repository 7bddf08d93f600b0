use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use seqtube::ingest::{
    load_confusion, load_detections, load_frames, load_ground_truth, load_run_dir,
    load_vocabulary, write_atomic, write_report, write_roc, write_run_dir, RunDataset,
    tubelets_to_string,
};
use seqtube::mosaic::{load_correspondences, write_heatmap, write_transforms, HeatmapMode};
use seqtube::pipeline::{self, RunConfig};
use seqtube::simgen::{generate_with_log, SurveyScenario};
use seqtube::tubelet::process;
use seqtube::{MatchConfig, MetricsReport};

use crate::report::{classification_table, summary_line};
use crate::{Cli, Command, DataArgs, Failure, ModeArg, Tuning};

/// `print!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        write!(std::io::stdout().lock(), $($arg)*).map_err(anyhow::Error::from)?;
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout().lock(), $($arg)*).map_err(anyhow::Error::from)?;
    }};
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| anyhow!("cannot start {} worker threads: {e}", cli.threads))?;
    }
    match &cli.command {
        Command::Run {
            data,
            tuning,
            dump_tubelets,
        } => {
            let cfg = run_config(cli, tuning, |_| {})?;
            if cli.show_config {
                return show(&cfg);
            }
            cmd_run(&load_data(data)?, &cfg, &cli.out, *dump_tubelets)
        }
        Command::Mosaic {
            data,
            tuning,
            correspondences,
            heatmap_factor,
            threshold,
            alpha,
            raster_scale,
        } => {
            let cfg = run_config(cli, tuning, |c| {
                if let Some(t) = threshold {
                    c.mosaic.threshold = *t;
                }
                if let Some(a) = alpha {
                    c.mosaic.alpha = *a;
                }
                if let Some(s) = raster_scale {
                    c.mosaic.raster_scale = *s;
                }
            })?;
            if cli.show_config {
                return show(&cfg);
            }
            let mode = match heatmap_factor {
                Some(factor) => HeatmapMode::Grayscale { factor: *factor },
                None => HeatmapMode::Normalized,
            };
            cmd_mosaic(&load_data(data)?, correspondences.as_deref(), &cfg, mode, &cli.out)
        }
        Command::Generate { scenario } => {
            let mut s = match scenario {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .with_context(|| format!("cannot read scenario {}", p.display()))?;
                    SurveyScenario::from_toml(&text)
                        .with_context(|| format!("scenario {}", p.display()))?
                }
                None => SurveyScenario::survey_preset(0),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if cli.show_config {
                out!("{}", s.to_toml());
                return Ok(());
            }
            cmd_generate(&s, &cli.out)
        }
        Command::EvalOnly {
            confusion,
            false_detections,
            area,
            threshold,
        } => {
            if cli.show_config {
                return show(&run_config(cli, &Tuning::default(), |_| {})?);
            }
            cmd_eval(confusion, *false_detections, *area, *threshold, &cli.out)
        }
    }
}

fn show(cfg: &RunConfig) -> Result<(), Failure> {
    out!("{}", toml::to_string(cfg).map_err(|e| anyhow!(e))?);
    Ok(())
}

fn run_config(
    cli: &Cli,
    tuning: &Tuning,
    extra: impl FnOnce(&mut RunConfig),
) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str::<RunConfig>(&text)
                .with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    let m = &mut cfg.pipeline.matching;
    if let Some(mode) = tuning.mode {
        let fresh = match mode {
            ModeArg::Iou => MatchConfig::iou(),
            ModeArg::Distance => MatchConfig::reciprocal_distance(),
        };
        if m.mode != fresh.mode {
            m.mode = fresh.mode;
            m.q_min = fresh.q_min;
        }
    }
    if let Some(k) = tuning.kappa {
        m.kappa = k;
    }
    if let Some(n) = tuning.min_length {
        m.min_tubelet_length = n;
    }
    if let Some(q) = tuning.q_min {
        m.q_min = q;
    }
    if tuning.baseline {
        cfg.pipeline.sequential_matching = false;
    }
    if let Some(r) = tuning.match_radius {
        cfg.association.match_radius_m = r;
    }
    extra(&mut cfg);
    cfg.validate().context("configuration")?;
    Ok(cfg)
}

fn load_data(a: &DataArgs) -> anyhow::Result<RunDataset> {
    let files = [&a.vocab, &a.frames, &a.detections, &a.ground_truth];
    if let Some(dir) = &a.run_dir {
        if files.iter().any(|f| f.is_some()) {
            bail!("give either a run directory or individual input files, not both");
        }
        let mut ds = load_run_dir(dir)?;
        if let Some(area) = a.area {
            ds.area_m2 = area;
        }
        return Ok(ds);
    }
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| anyhow!("missing input: pass a run directory or --{flag}"))
    };
    let vocab = load_vocabulary(&need(&a.vocab, "vocab")?)?;
    let frames = load_frames(&need(&a.frames, "frames")?)?;
    let dets = load_detections(&need(&a.detections, "detections")?, &vocab)?;
    let gt = a
        .ground_truth
        .as_ref()
        .map(|p| load_ground_truth(p, &vocab))
        .transpose()?;
    let area = a.area.ok_or_else(|| anyhow!("missing --area"))?;
    Ok(RunDataset::new(vocab, frames, dets, gt, area)?)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn check_monotone(reports: &[MetricsReport]) -> Result<(), Failure> {
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.threshold <= a.threshold
            || b.n_true_detections > a.n_true_detections
            || b.n_false_detections > a.n_false_detections
        {
            return Err(Failure::Invariant(format!(
                "detection counts rise between thresholds {} and {}",
                a.threshold, b.threshold
            )));
        }
    }
    Ok(())
}

fn cmd_run(ds: &RunDataset, cfg: &RunConfig, out: &Path, dump: bool) -> Result<(), Failure> {
    if ds.ground_truth.is_none() {
        return Err(anyhow!("scoring needs ground truth; add ground_truth to run.toml or pass --ground-truth").into());
    }
    let result = pipeline::run(ds, cfg)?;
    check_monotone(&result.reports)?;
    let reports = out.join("reports");
    create_dir(&reports)?;
    for r in &result.reports {
        write_report(r, &reports.join(format!("report_t{:.2}.json", r.threshold)))?;
        outln!("{}", summary_line(r));
    }
    write_roc(&result.roc(), &out.join("roc.csv"))?;
    if dump {
        let text = tubelets_to_string(&result.tubelets, &ds.vocabulary);
        write_atomic(&out.join("tubelets.jsonl"), text.as_bytes())?;
    }
    outln!(
        "{} detections -> {} tubelets; outputs in {}",
        ds.detections.len(),
        result.tubelets.len(),
        out.display()
    );
    Ok(())
}

fn cmd_mosaic(
    ds: &RunDataset,
    correspondences: Option<&Path>,
    cfg: &RunConfig,
    mode: HeatmapMode,
    out: &Path,
) -> Result<(), Failure> {
    let pairs = correspondences.map(load_correspondences).transpose()?;
    let tubelets = process(&ds.detections, &cfg.pipeline)?;
    let m = pipeline::mosaic(ds, &tubelets, pairs.as_ref(), cfg)?;
    for (frame, reason) in &m.registration.unregistered {
        eprintln!("unregistered frame {frame}: {reason}");
    }
    let frac = m.unregistered_fraction(ds.frames.len());
    if frac > cfg.mosaic.max_unregistered_fraction {
        return Err(anyhow!(
            "{} of {} frames failed registration ({:.0}%, limit {:.0}%)",
            m.registration.unregistered.len(),
            ds.frames.len(),
            100.0 * frac,
            100.0 * cfg.mosaic.max_unregistered_fraction
        )
        .into());
    }
    create_dir(out)?;
    write_transforms(&m.registration.transforms, &out.join("transforms.csv"))?;
    let factor = write_heatmap(&m.heatmap, &out.join("heatmap.pgm"), mode)?;
    outln!(
        "heatmap {}x{} px at {} mosaic px per cell, scale factor {factor}",
        m.heatmap.width, m.heatmap.height, m.heatmap.scale
    );
    if let Some(fa) = &m.false_alarms {
        let mut text = serde_json::to_string_pretty(fa).map_err(|e| anyhow!(e))?;
        text.push('\n');
        write_atomic(&out.join("false_alarms.json"), text.as_bytes())?;
        outln!(
            "false alarms: naive {} ({:.6} /m^2), after deduplication {} ({:.6} /m^2)",
            fa.naive_count, fa.naive_d_fa, fa.corrected_count, fa.corrected_d_fa
        );
    }
    Ok(())
}

fn cmd_generate(s: &SurveyScenario, out: &Path) -> Result<(), Failure> {
    let run = generate_with_log(s)?;
    create_dir(out)?;
    write_run_dir(&run.dataset, out)?;
    for w in &run.log.warnings {
        eprintln!("warning: {w}");
    }
    let ds = &run.dataset;
    let log = &run.log;
    outln!("frames:            {}", ds.frames.len());
    outln!("objects:           {}", ds.ground_truth.as_ref().map_or(0, |g| g.len()));
    outln!("detections:        {}", ds.detections.len());
    outln!("true detections:   {}", log.true_detections);
    outln!("missed views:      {}", log.missed_views);
    outln!("false alarms:      {}", log.uniform_false_alarms);
    outln!("clutter hits:      {}", log.clutter_detections);
    outln!("area m^2:          {}", ds.area_m2);
    outln!("written to {}", out.display());
    Ok(())
}

fn cmd_eval(path: &Path, n_false: u64, area: f64, threshold: f64, out: &Path) -> Result<(), Failure> {
    let cm = load_confusion(path)?;
    let report = MetricsReport::from_confusion(cm, n_false, area, threshold)?;
    out!("{}", classification_table(&report));
    create_dir(out)?;
    write_report(&report, &out.join("eval_report.json"))?;
    Ok(())
}

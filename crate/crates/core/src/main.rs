use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use roicount::analytics::{
    change_report, count_by_class, evaluate_indicators, idw_heatmap, write_counts_csv, AnalyticsError, ChangeReport,
    CountRecord, IndicatorOutcome, TimeSeries,
};
use roicount::detector::image_key;
use roicount::evaluation::{evaluate, AnnotationRecord};
use roicount::geo::{GeoBox, GeoPoint};
use roicount::osm::{filter_strategic, parse_osm_xml, sample_locations, RoiDescriptor};
use roicount::pipeline::{
    build_backends, collect_records, crop_roi, detect_manifest, detection_records, read_annotations, read_detections,
    read_jsonl_file, sanitize, write_jsonl_file, BackendConfig, DetectOptions, ImageEntry, PipelineConfig,
    PipelineError, Result, SceneEntry,
};
use roicount::raster::{read_raster, write_png, write_raster};
use roicount::synth::{generate_series, SceneSpec};

#[derive(Parser)]
#[command(name = "roicount", version, about = "Object counts and activity indicators from satellite ROIs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, env = "ROICOUNT_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Raise every detector threshold to at least this value.
    #[arg(long, global = true)]
    threshold_override: Option<f64>,
    /// IoU threshold for weighted NMS.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Seed for synthetic scenes and noisy mock backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Strategic locations from an OSM extract, one ROI per line.
    Sample {
        #[arg(long)]
        osm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Crop ROI images out of a georeferenced scene.
    Extract {
        /// Scene description: raster, timestamp, origin and GSD.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        rois: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the ensemble and fuse its output for every image in a manifest.
    Detect {
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also save raw per-tile backend output for later replay.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Counts, change reports, indicator statuses and a heatmap.
    Report {
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Image manifest; images without detections count as zero.
        #[arg(long)]
        images: Option<PathBuf>,
        /// ROI descriptors; needed for indicators and the heatmap.
        #[arg(long)]
        rois: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Detection and count metrics against annotations.
    Evaluate {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic data set: images, annotations, ROIs and a config.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Scene spec (JSON); a small-car scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of ROIs.
        #[arg(long, default_value_t = 3)]
        rois: usize,
    },
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| PipelineError::Config(format!("no {what} path given (flag, config or environment)")))
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| PipelineError::input(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    io(dir, fs::create_dir_all(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::input(path, e))?;
    text.push('\n');
    io(path, fs::write(path, text))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_sample(cfg: &PipelineConfig, osm: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let osm = require(osm.or_else(|| cfg.paths.osm.clone()), "osm")?;
    let out = require(out.or_else(|| cfg.paths.rois.clone()), "rois output")?;
    let bytes = io(&osm, fs::read(&osm))?;
    let extract = parse_osm_xml(&bytes).map_err(|e| PipelineError::input(&osm, e))?;
    if extract.unresolved_refs > 0 {
        warn!("{} way node references could not be resolved", extract.unresolved_refs);
    }
    let strategic = filter_strategic(&extract.features, &cfg.tag_filter)?;
    let aoi = match cfg.aoi {
        Some(a) => a,
        None => GeoBox::new(-90.0, -180.0, 90.0, 180.0)?,
    };
    let outcome = sample_locations(&aoi, &strategic, &cfg.tag_filter, cfg.expand_m)?;
    info!(
        "{} ROIs; skipped {} without contour, {} outside the area of interest",
        outcome.rois.len(),
        outcome.skipped_no_contour,
        outcome.skipped_outside
    );
    write_jsonl_file(&out, &outcome.rois)
}

fn cmd_extract(cfg: &PipelineConfig, scene: &Path, rois: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<()> {
    let rois_path = require(rois.or_else(|| cfg.paths.rois.clone()), "rois")?;
    let out_dir = require(out_dir.or_else(|| cfg.paths.out_dir.clone()), "output directory")?;
    let text = io(scene, fs::read_to_string(scene))?;
    let entry: SceneEntry = serde_json::from_str(&text).map_err(|e| PipelineError::input(scene, e))?;
    let raster = read_raster(&base_dir(scene).join(&entry.raster))?;
    let transform = roicount::geo::GeoTransform::new(GeoPoint::new(entry.origin_lat, entry.origin_lon)?, entry.gsd_x, entry.gsd_y)?;
    let rois: Vec<RoiDescriptor> = read_jsonl_file(&rois_path)?;
    create_dir(&out_dir.join("images"))?;
    let mut manifest = Vec::new();
    for roi in &rois {
        let Some((crop, t)) = crop_roi(&raster, &transform, roi)? else {
            warn!("{} does not overlap the scene", roi.roi_id);
            continue;
        };
        let name = PathBuf::from("images").join(format!("{}_{}.png", sanitize(&roi.roi_id), sanitize(&entry.timestamp)));
        write_png(&out_dir.join(&name), &crop)?;
        manifest.push(ImageEntry {
            roi_id: roi.roi_id.clone(),
            timestamp: entry.timestamp.clone(),
            raster: name,
            origin_lat: t.origin.lat,
            origin_lon: t.origin.lon,
            gsd_x: t.gsd_x,
            gsd_y: t.gsd_y,
        });
    }
    write_jsonl_file(&out_dir.join("images.jsonl"), &manifest)
}

fn cmd_detect(cfg: &PipelineConfig, g: &Global, images: Option<PathBuf>, out: Option<PathBuf>, record: Option<PathBuf>) -> Result<()> {
    let images = require(images.or_else(|| cfg.paths.images.clone()), "images manifest")?;
    let out = require(out.or_else(|| cfg.paths.detections.clone()), "detections output")?;
    let registry = cfg.registry()?;
    let ens = cfg.ensemble(&registry)?;
    let entries: Vec<ImageEntry> = read_jsonl_file(&images)?;
    let (backends, recorders) = build_backends(cfg, &registry, rayon::current_num_threads(), record.is_some())?;
    let mut opts = DetectOptions::from_config(cfg);
    opts.threshold_override = g.threshold_override;
    let sets = detect_manifest(&entries, &base_dir(&images), &ens, &backends, &opts)?;
    info!("{} images, {} fused regions", sets.len(), sets.iter().map(|s| s.regions.len()).sum::<usize>());
    write_jsonl_file(&out, &detection_records(&sets, &registry))?;
    if let Some(path) = record {
        write_jsonl_file(&path, &collect_records(&recorders))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ChangeLine<'a> {
    class: &'a str,
    #[serde(flatten)]
    report: &'a ChangeReport,
}

#[derive(Serialize)]
struct IndicatorLine<'a> {
    class: &'a str,
    #[serde(flatten)]
    outcome: &'a IndicatorOutcome,
}

fn cmd_report(
    cfg: &PipelineConfig,
    detections: Option<PathBuf>,
    images: Option<PathBuf>,
    rois: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<()> {
    let det_path = require(detections.or_else(|| cfg.paths.detections.clone()), "detections")?;
    let out_dir = require(out_dir.or_else(|| cfg.paths.out_dir.clone()), "output directory")?;
    let registry = cfg.registry()?;
    let sets = read_detections(&det_path, &registry)?;

    let mut timestamps: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in &sets {
        timestamps.entry(s.roi_id.clone()).or_default().insert(s.timestamp.clone());
    }
    if let Some(path) = images.or_else(|| cfg.paths.images.clone()) {
        for e in read_jsonl_file::<ImageEntry>(&path)? {
            timestamps.entry(e.roi_id).or_default().insert(e.timestamp);
        }
    }
    let mut counts: Vec<CountRecord> = sets.iter().flat_map(count_by_class).collect();
    counts.sort_by(|a, b| (&a.roi_id, &a.timestamp, a.class_id).cmp(&(&b.roi_id, &b.timestamp, b.class_id)));

    let series = TimeSeries::from_records(&counts, &timestamps)?;
    let mut reports = Vec::new();
    for s in &series {
        match change_report(s, &cfg.variation) {
            Ok(r) => reports.push(r),
            Err(AnalyticsError::InsufficientHistory { roi_id, have }) => {
                warn!("{roi_id}: only {have} sample(s), no change report")
            }
            Err(e) => return Err(e.into()),
        }
    }
    if reports.is_empty() {
        return Err(PipelineError::InsufficientData(
            "no ROI has two or more timestamps; change reports need a history".into(),
        ));
    }

    create_dir(&out_dir)?;
    let csv_path = out_dir.join("counts.csv");
    let file = io(&csv_path, File::create(&csv_path))?;
    write_counts_csv(BufWriter::new(file), &counts, &registry)?;
    let name = |r: &ChangeReport| registry.name(r.class_id).unwrap_or("?");
    let lines: Vec<ChangeLine> = reports.iter().map(|r| ChangeLine { class: name(r), report: r }).collect();
    write_jsonl_file(&out_dir.join("changes.jsonl"), &lines)?;

    let roi_list: Vec<RoiDescriptor> = match rois.or_else(|| cfg.paths.rois.clone()) {
        Some(p) => read_jsonl_file(&p)?,
        None => Vec::new(),
    };
    let outcomes = evaluate_indicators(&reports, &roi_list, &cfg.indicator_rules);
    let lines: Vec<IndicatorLine> = outcomes
        .iter()
        .map(|o| IndicatorLine {
            class: registry.name(o.class_id).unwrap_or("?"),
            outcome: o,
        })
        .collect();
    write_jsonl_file(&out_dir.join("indicators.jsonl"), &lines)?;

    let count_id = registry.id(&cfg.count_class)?;
    let by_roi: BTreeMap<&str, &RoiDescriptor> = roi_list.iter().map(|r| (r.roi_id.as_str(), r)).collect();
    let located: Vec<(&RoiDescriptor, f64)> = reports
        .iter()
        .filter(|r| r.class_id == count_id)
        .filter_map(|r| by_roi.get(r.roi_id.as_str()).map(|d| (*d, r.delta as f64)))
        .collect();
    if located.is_empty() {
        warn!("no located {} change reports; heatmap skipped", cfg.count_class);
        return Ok(());
    }
    let geo = cfg.aoi.unwrap_or_else(|| located.iter().skip(1).fold(located[0].0.geo, |acc, (d, _)| acc.union(&d.geo)));
    let samples: Vec<(GeoPoint, f64)> = located.iter().map(|(d, v)| (d.geo.center(), *v)).collect();
    let grid = idw_heatmap(&samples, &geo, cfg.heatmap.rows, cfg.heatmap.cols, cfg.heatmap.power)?;
    write_json(&out_dir.join("heatmap.json"), &grid)?;
    write_png(&out_dir.join("heatmap.png"), &grid.to_raster())?;
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, detections: Option<PathBuf>, annotations: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let det_path = require(detections.or_else(|| cfg.paths.detections.clone()), "detections")?;
    let ann_path = require(annotations.or_else(|| cfg.paths.annotations.clone()), "annotations")?;
    let registry = cfg.registry()?;
    let dets: BTreeMap<String, Vec<_>> = read_detections(&det_path, &registry)?
        .into_iter()
        .map(|s| (image_key(&s.roi_id, &s.timestamp), s.regions))
        .collect();
    let anns = read_annotations(&ann_path, &registry)?;
    let report = evaluate(&dets, &anns, &registry, &cfg.evaluation)?;
    match out {
        Some(p) => write_json(&p, &report),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &report).map_err(|e| PipelineError::Config(e.to_string()))?;
            writeln!(lock).map_err(|e| PipelineError::Config(e.to_string()))
        }
    }
}

/// Small-car scenes with more than a hundred cars over three dates.
fn default_scene_spec() -> SceneSpec {
    let car = roicount::classes::SMALL_CAR.to_string();
    SceneSpec {
        width: 640,
        height: 640,
        objects_per_class: BTreeMap::from([(car.clone(), (101, 140))]),
        object_size: BTreeMap::from([(car, ((8, 14), (6, 10)))]),
        min_separation: 4.0,
        timestamps: vec!["2020-01-01".into(), "2020-02-01".into(), "2020-03-01".into()],
    }
}

const SYNTH_GSD: f64 = 0.3;

fn cmd_synth(cfg: &PipelineConfig, g: &Global, out_dir: &Path, spec: Option<PathBuf>, n_rois: usize) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = io(&p, fs::read_to_string(&p))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::input(&p, e))?
        }
        None => default_scene_spec(),
    };
    let registry = cfg.registry()?;
    let seed = g.seed.unwrap_or(0);
    let groups: Vec<&str> = {
        let mut v: Vec<&str> = cfg.indicator_rules.iter().map(|r| r.tag_group.as_str()).collect();
        if v.is_empty() {
            v.push("shop=supermarket");
        }
        v
    };
    create_dir(&out_dir.join("images"))?;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut rois = Vec::new();
    for i in 0..n_rois {
        let group = groups[i % groups.len()];
        let roi_id = format!("{group}/{}", i + 1);
        let origin = GeoPoint::new(0.01 * i as f64, 0.01 * i as f64)?;
        let transform = roicount::geo::GeoTransform::new(origin, SYNTH_GSD, SYNTH_GSD)?;
        let far = transform.pixel_to_geo(spec.width as f64, spec.height as f64);
        rois.push(RoiDescriptor {
            roi_id: roi_id.clone(),
            source_feature: i as i64 + 1,
            tag_group: group.to_string(),
            geo: GeoBox::new(far.lat, origin.lon, origin.lat, far.lon)?,
        });
        for (ts, scene) in generate_series(seed, &roi_id, &spec, &registry)? {
            let name = PathBuf::from("images").join(format!("{}_{}.png", sanitize(&roi_id), sanitize(&ts)));
            write_raster(&out_dir.join(&name), &scene.raster)?;
            let key = image_key(&roi_id, &ts);
            annotations.extend(scene.annotations.iter().map(|a| AnnotationRecord::new(&key, a, &registry)));
            images.push(ImageEntry {
                roi_id: roi_id.clone(),
                timestamp: ts,
                raster: name,
                origin_lat: origin.lat,
                origin_lon: origin.lon,
                gsd_x: SYNTH_GSD,
                gsd_y: SYNTH_GSD,
            });
        }
    }
    write_jsonl_file(&out_dir.join("images.jsonl"), &images)?;
    write_jsonl_file(&out_dir.join("annotations.jsonl"), &annotations)?;
    write_jsonl_file(&out_dir.join("rois.jsonl"), &rois)?;

    let mut synth_cfg = cfg.clone();
    let mock = BackendConfig::Mock {
        annotations: "annotations.jsonl".into(),
        noise: None,
        seed,
        min_visible: 1.0,
    };
    synth_cfg.backends = BTreeMap::from([
        (cfg.ensemble.vanilla.clone(), mock.clone()),
        (cfg.ensemble.multires.clone(), mock),
    ]);
    synth_cfg.paths = roicount::pipeline::Paths {
        rois: Some("rois.jsonl".into()),
        images: Some("images.jsonl".into()),
        detections: Some("detections.jsonl".into()),
        annotations: Some("annotations.jsonl".into()),
        out_dir: Some("report".into()),
        osm: None,
    };
    write_json(&out_dir.join("config.json"), &synth_cfg)?;
    info!("{} images over {} ROIs in {}", images.len(), n_rois, out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::from_env(),
    };
    if let Some(s) = g.sigma {
        cfg.merge.sigma = s;
        cfg.merge.validate()?;
    }
    if let Some(t) = g.threshold_override {
        if !(0.0..=1.0).contains(&t) {
            return Err(PipelineError::Config(format!("threshold override {t} outside [0, 1]")));
        }
    }
    if let Some(seed) = g.seed {
        for b in cfg.backends.values_mut() {
            if let BackendConfig::Mock { seed: s, .. } = b {
                *s = seed;
            }
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(PipelineError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Sample { osm, out } => cmd_sample(&cfg, osm, out),
        Command::Extract { scene, rois, out_dir } => cmd_extract(&cfg, &scene, rois, out_dir),
        Command::Detect { images, out, record } => cmd_detect(&cfg, g, images, out, record),
        Command::Report {
            detections,
            images,
            rois,
            out_dir,
        } => cmd_report(&cfg, detections, images, rois, out_dir),
        Command::Evaluate {
            detections,
            annotations,
            out,
        } => cmd_evaluate(&cfg, detections, annotations, out),
        Command::Synth { out_dir, spec, rois } => cmd_synth(&cfg, g, &out_dir, spec, rois),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

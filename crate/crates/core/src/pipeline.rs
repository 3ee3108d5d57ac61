//! Stage wiring shared by the command-line tool: configuration, manifests,
//! backend construction, ROI extraction and per-image detection with fusion.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{AnalyticsError, IndicatorRule, VariationThresholds, DEFAULT_IDW_POWER};
use crate::classes::{ClassError, ClassRegistry, SizeGroup};
use crate::detector::wire::{self, DetectionRecord, TileRecord};
use crate::detector::{
    image_key, run_ensemble_all, Backends, DetectError, DetectionSet, DetectorBackend, DetectorConfig, EnsembleConfig,
    ExternalBackend, MockBackend, RecordingBackend, Region, ReplayBackend, RunOptions,
};
use crate::evaluation::{Annotation, AnnotationRecord, EvalConfig, EvalError};
use crate::geo::{GeoBox, GeoError, GeoPoint, GeoTransform};
use crate::merge::{rank, weighted_nms, MergeConfig, MergeError};
use crate::osm::{OsmError, RoiDescriptor, TagFilter, DEFAULT_EXPANSION_M};
use crate::raster::{read_raster, Raster, RasterError, RoiImage, UpsamplePolicy};
use crate::synth::{NoiseModel, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Osm(#[from] OsmError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    pub fn input(path: &Path, message: impl ToString) -> Self {
        Self::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// 2 for bad input, 3 for too little data, 4 when a backend fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::InsufficientData(_) | PipelineError::Analytics(AnalyticsError::InsufficientHistory { .. }) => 3,
            PipelineError::Detect(DetectError::BackendFailure { .. }) => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Answers from an annotation file keyed by image (`roi@timestamp`).
    Mock {
        annotations: PathBuf,
        #[serde(default)]
        noise: Option<NoiseModel>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        min_visible: f64,
    },
    /// Replays a tile record file written by `detect --record`.
    Replay { path: PathBuf },
    /// Child processes speaking the line protocol.
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        /// Defaults to the worker count.
        #[serde(default)]
        instances: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    /// `table1` unless explicit detectors are given.
    pub preset: String,
    pub vanilla: String,
    pub multires: String,
    pub detectors: Vec<DetectorConfig>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            preset: "table1".into(),
            vanilla: "vanilla".into(),
            multires: "multires".into(),
            detectors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub group: SizeGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    pub rows: usize,
    pub cols: usize,
    pub power: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            power: DEFAULT_IDW_POWER,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub osm: Option<PathBuf>,
    pub rois: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Paths {
    const ENV: [(&'static str, fn(&mut Paths) -> &mut Option<PathBuf>); 6] = [
        ("ROICOUNT_OSM", |p| &mut p.osm),
        ("ROICOUNT_ROIS", |p| &mut p.rois),
        ("ROICOUNT_IMAGES", |p| &mut p.images),
        ("ROICOUNT_DETECTIONS", |p| &mut p.detections),
        ("ROICOUNT_ANNOTATIONS", |p| &mut p.annotations),
        ("ROICOUNT_OUT_DIR", |p| &mut p.out_dir),
    ];

    fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, field) in Self::ENV {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                *field(self) = Some(PathBuf::from(v));
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        for (_, field) in Self::ENV {
            if let Some(p) = field(self).as_mut() {
                *p = resolve_path(base, p);
            }
        }
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub aoi: Option<GeoBox>,
    pub tag_filter: TagFilter,
    pub expand_m: f64,
    /// Class list with size groups; the xView registry when absent.
    pub classes: Option<Vec<ClassEntry>>,
    pub backends: BTreeMap<String, BackendConfig>,
    pub ensemble: EnsembleSection,
    pub merge: MergeConfig,
    pub variation: VariationThresholds,
    pub indicator_rules: Vec<IndicatorRule>,
    pub heatmap: HeatmapConfig,
    /// GSD normalization before detection; `null` disables it.
    pub upsample: Option<UpsamplePolicy>,
    pub count_class: String,
    pub evaluation: EvalConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            aoi: None,
            tag_filter: TagFilter::strategic_default(),
            expand_m: DEFAULT_EXPANSION_M,
            classes: None,
            backends: BTreeMap::new(),
            ensemble: EnsembleSection::default(),
            merge: MergeConfig::default(),
            variation: VariationThresholds::default(),
            indicator_rules: IndicatorRule::defaults(),
            heatmap: HeatmapConfig::default(),
            upsample: Some(UpsamplePolicy::default()),
            count_class: crate::classes::SMALL_CAR.into(),
            evaluation: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a config file. Relative paths resolve against the file's
    /// directory; `ROICOUNT_*` variables override the `paths` section.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| PipelineError::input(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        for b in cfg.backends.values_mut() {
            match b {
                BackendConfig::Mock { annotations, .. } => *annotations = resolve_path(base, annotations),
                BackendConfig::Replay { path } => *path = resolve_path(base, path),
                BackendConfig::External { .. } => {}
            }
        }
        cfg.paths.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults with `ROICOUNT_*` path overrides.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        cfg.paths.apply_env(|k| std::env::var(k).ok());
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(aoi) = &self.aoi {
            aoi.validate()?;
        }
        if !(self.expand_m >= 0.0 && self.expand_m.is_finite()) {
            return Err(PipelineError::Config(format!("expand_m {}", self.expand_m)));
        }
        self.merge.validate()?;
        self.variation.validate()?;
        for r in &self.indicator_rules {
            r.validate()?;
        }
        if self.heatmap.rows == 0 || self.heatmap.cols == 0 || !(self.heatmap.power > 0.0) {
            return Err(PipelineError::Config("heatmap needs rows, cols and power > 0".into()));
        }
        let reg = self.registry()?;
        reg.id(&self.count_class)?;
        self.ensemble(&reg)?;
        Ok(())
    }

    pub fn registry(&self) -> Result<ClassRegistry> {
        match &self.classes {
            None => Ok(ClassRegistry::xview()),
            Some(list) => Ok(ClassRegistry::new(list.iter().map(|c| (c.name.clone(), c.group)))?),
        }
    }

    pub fn ensemble(&self, registry: &ClassRegistry) -> Result<EnsembleConfig> {
        let e = &self.ensemble;
        let detectors = if !e.detectors.is_empty() {
            e.detectors.clone()
        } else if e.preset == "table1" {
            crate::detector::table_one_detectors(&e.vanilla, &e.multires)
        } else {
            return Err(PipelineError::Config(format!("unknown ensemble preset {:?}", e.preset)));
        };
        Ok(EnsembleConfig::new(detectors, registry.clone())?)
    }
}

/// One line of an image manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub roi_id: String,
    pub timestamp: String,
    /// Raster path, relative to the manifest's directory.
    pub raster: PathBuf,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub gsd_x: f64,
    pub gsd_y: f64,
}

impl ImageEntry {
    pub fn transform(&self) -> Result<GeoTransform> {
        Ok(GeoTransform::new(GeoPoint::new(self.origin_lat, self.origin_lon)?, self.gsd_x, self.gsd_y)?)
    }

    pub fn key(&self) -> String {
        image_key(&self.roi_id, &self.timestamp)
    }

    pub fn load(&self, base: &Path) -> Result<RoiImage> {
        Ok(RoiImage {
            roi_id: self.roi_id.clone(),
            raster: read_raster(&resolve_path(base, &self.raster))?,
            transform: self.transform()?,
            timestamp: self.timestamp.clone(),
        })
    }
}

pub fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| PipelineError::input(path, e))?;
    wire::read_jsonl(BufReader::new(f)).map_err(|e| PipelineError::input(path, e))
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| PipelineError::input(path, e))?;
    let mut w = BufWriter::new(f);
    wire::write_jsonl(&mut w, items).map_err(|e| PipelineError::input(path, e))?;
    w.flush().map_err(|e| PipelineError::input(path, e))
}

/// Annotations keyed by image id.
pub fn read_annotations(path: &Path, registry: &ClassRegistry) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let mut out: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for rec in read_jsonl_file::<AnnotationRecord>(path)? {
        let a = rec.to_annotation(registry).map_err(|e| PipelineError::input(path, e))?;
        out.entry(rec.image_id).or_default().push(a);
    }
    Ok(out)
}

/// Fused detections keyed by image (`roi@timestamp`), file order kept.
pub fn read_detections(path: &Path, registry: &ClassRegistry) -> Result<Vec<DetectionSet>> {
    let records: Vec<DetectionRecord> = read_jsonl_file(path)?;
    let mut sets: Vec<DetectionSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in records {
        let region = rec.detection().to_region(registry).map_err(|e| PipelineError::input(path, e))?;
        let key = image_key(&rec.roi_id, &rec.timestamp);
        let i = *index.entry(key).or_insert_with(|| {
            sets.push(DetectionSet {
                roi_id: rec.roi_id.clone(),
                timestamp: rec.timestamp.clone(),
                regions: Vec::new(),
            });
            sets.len() - 1
        });
        sets[i].regions.push(region);
    }
    Ok(sets)
}

pub fn detection_records(sets: &[DetectionSet], registry: &ClassRegistry) -> Vec<DetectionRecord> {
    sets.iter()
        .flat_map(|s| s.regions.iter().map(|r| DetectionRecord::new(&s.roi_id, &s.timestamp, r, registry)))
        .collect()
}

/// Construct the configured backends. `instances` is the default process
/// count for external backends. With `record`, every backend is wrapped so
/// its raw tile output can be saved.
pub fn build_backends(
    cfg: &PipelineConfig,
    registry: &ClassRegistry,
    instances: usize,
    record: bool,
) -> Result<(Backends, Vec<Arc<RecordingBackend>>)> {
    let mut backends: Backends = HashMap::new();
    let mut recorders = Vec::new();
    for (name, b) in &cfg.backends {
        let backend: Arc<dyn DetectorBackend> = match b {
            BackendConfig::Mock {
                annotations,
                noise,
                seed,
                min_visible,
            } => {
                let truth: HashMap<String, Vec<Annotation>> = read_annotations(annotations, registry)?.into_iter().collect();
                let mut mock = MockBackend::new(truth).with_min_visible(*min_visible);
                if let Some(n) = noise {
                    n.validate()?;
                    mock = mock.with_noise(*n, *seed);
                }
                Arc::new(mock)
            }
            BackendConfig::Replay { path } => Arc::new(ReplayBackend::open(path, registry)?),
            BackendConfig::External { program, args, instances: n } => {
                Arc::new(ExternalBackend::spawn(program, args, n.unwrap_or(instances), registry.clone())?)
            }
        };
        let backend = if record {
            let rec = Arc::new(RecordingBackend::new(backend, registry.clone()));
            recorders.push(Arc::clone(&rec));
            rec as Arc<dyn DetectorBackend>
        } else {
            backend
        };
        backends.insert(name.clone(), backend);
    }
    Ok((backends, recorders))
}

pub fn collect_records(recorders: &[Arc<RecordingBackend>]) -> Vec<TileRecord> {
    let mut all: Vec<TileRecord> = recorders.iter().flat_map(|r| r.records()).collect();
    all.sort_by(|a, b| {
        (&a.roi_id, &a.timestamp, &a.detector, a.tile_y, a.tile_x).cmp(&(&b.roi_id, &b.timestamp, &b.detector, b.tile_y, b.tile_x))
    });
    all
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub merge: MergeConfig,
    pub upsample: Option<UpsamplePolicy>,
    pub threshold_override: Option<f64>,
}

impl DetectOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            merge: cfg.merge,
            upsample: cfg.upsample,
            threshold_override: None,
        }
    }
}

/// Detect, then fuse each size group's candidates; the union of the fused
/// groups is ordered by descending score.
pub fn detect_roi(img: &RoiImage, ens: &EnsembleConfig, backends: &Backends, opts: &DetectOptions) -> Result<DetectionSet> {
    let pre_scale = match &opts.upsample {
        Some(p) => p.scale_for(&img.transform)?,
        None => 1.0,
    };
    let run = RunOptions {
        pre_scale,
        threshold_override: opts.threshold_override,
    };
    let mut fused: Vec<Region> = Vec::new();
    for (_, candidates) in run_ensemble_all(img, ens, backends, &run)? {
        fused.extend(weighted_nms(&candidates, &opts.merge)?);
    }
    fused.sort_by(rank);
    Ok(DetectionSet {
        roi_id: img.roi_id.clone(),
        timestamp: img.timestamp.clone(),
        regions: fused,
    })
}

/// Load and detect every manifest entry in parallel; results keep manifest
/// order.
pub fn detect_manifest(
    entries: &[ImageEntry],
    base: &Path,
    ens: &EnsembleConfig,
    backends: &Backends,
    opts: &DetectOptions,
) -> Result<Vec<DetectionSet>> {
    entries
        .par_iter()
        .map(|e| {
            let img = e.load(base)?;
            detect_roi(&img, ens, backends, opts)
        })
        .collect()
}

/// Georeferenced source scene for ROI extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub raster: PathBuf,
    pub timestamp: String,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub gsd_x: f64,
    pub gsd_y: f64,
}

/// Cut the pixel window covering `roi.geo` out of a scene. `None` when the
/// ROI does not overlap the scene.
pub fn crop_roi(scene: &Raster, transform: &GeoTransform, roi: &RoiDescriptor) -> Result<Option<(Raster, GeoTransform)>> {
    let g = &roi.geo;
    let (x1, y1) = transform.geo_to_pixel(&GeoPoint::new(g.max_lat, g.min_lon)?);
    let (x2, y2) = transform.geo_to_pixel(&GeoPoint::new(g.min_lat, g.max_lon)?);
    // round-trip noise must not grow the window by a whole pixel
    const EPS: f64 = 1e-6;
    let (cx1, cy1) = (((x1 + EPS).floor() as i64).max(0), ((y1 + EPS).floor() as i64).max(0));
    let (cx2, cy2) = (
        ((x2 - EPS).ceil() as i64).min(scene.width() as i64),
        ((y2 - EPS).ceil() as i64).min(scene.height() as i64),
    );
    if cx2 <= cx1 || cy2 <= cy1 {
        return Ok(None);
    }
    let raster = scene.crop(cx1, cy1, cx2, cy2)?;
    let origin = transform.pixel_to_geo(cx1 as f64, cy1 as f64);
    Ok(Some((raster, GeoTransform::new(origin, transform.gsd_x, transform.gsd_y)?)))
}

/// File-name-safe form of an ROI id.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

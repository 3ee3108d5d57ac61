//! Detection backends and the tiled, multi-configuration detection passes
//! that feed the fusion step.
//!
//! A [`DetectorConfig`] describes one pass: resize the ROI by `scale`, cut it
//! into `block`-sized tiles with `overlap`, run a backend on every tile, drop
//! everything scoring below `threshold` and map the survivors back to ROI
//! pixels. An [`EnsembleConfig`] routes passes to object size groups.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassError, ClassId, ClassRegistry, SizeGroup};
use crate::geo::PixelBox;
use crate::raster::{Raster, RasterError, RoiImage};
use crate::tiler::{self, Tile, TileSpec, DEFAULT_BLOCK};

pub mod external;
pub mod mock;
pub mod replay;
pub mod wire;

pub use external::ExternalBackend;
pub use mock::MockBackend;
pub use replay::{RecordingBackend, ReplayBackend};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector {detector} failed on tile {tile}: {message}")]
    BackendFailure {
        detector: String,
        tile: String,
        message: String,
    },
    #[error("no backend named {0:?}")]
    UnknownBackend(String),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}")]
    Io(String),
}

/// One detection: class, box and confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub class_id: ClassId,
    pub bbox: PixelBox,
    pub score: f64,
}

impl Region {
    pub fn new(class_id: ClassId, bbox: PixelBox, score: f64) -> Result<Self, DetectError> {
        if !bbox.is_valid() {
            return Err(DetectError::InvalidRegion(format!("bad box {:?}", bbox.coords())));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectError::InvalidRegion(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { class_id, bbox, score })
    }
}

/// Detections for one ROI image, in ROI pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub roi_id: String,
    pub timestamp: String,
    pub regions: Vec<Region>,
}

/// Key that identifies one ROI acquisition across files.
pub fn image_key(roi_id: &str, timestamp: &str) -> String {
    format!("{roi_id}@{timestamp}")
}

fn default_block() -> usize {
    DEFAULT_BLOCK
}

/// One detection pass of the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub name: String,
    pub scale: f64,
    pub overlap: usize,
    pub threshold: f64,
    pub backend: String,
    pub size_groups: Vec<SizeGroup>,
    #[serde(default = "default_block")]
    pub block: usize,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidConfig(format!("{}: {m}", self.name)));
        if TileSpec::new(self.block, self.overlap, self.scale).is_none() {
            return bad(format!(
                "block {} / overlap {} / scale {} are inconsistent",
                self.block, self.overlap, self.scale
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.size_groups.is_empty() {
            return bad("no size group".into());
        }
        Ok(())
    }

    pub fn serves(&self, group: SizeGroup) -> bool {
        self.size_groups.contains(&group)
    }
}

/// The five-pass ensemble: two single-scale and one 1.3x upscaled pass of
/// the `vanilla` model, three `multires` passes at decreasing scale.
pub fn table_one_detectors(vanilla: &str, multires: &str) -> Vec<DetectorConfig> {
    use SizeGroup::*;
    let det = |name: &str, scale, overlap, threshold, backend: &str, groups: &[SizeGroup]| DetectorConfig {
        name: name.into(),
        scale,
        overlap,
        threshold,
        backend: backend.into(),
        size_groups: groups.to_vec(),
        block: DEFAULT_BLOCK,
    };
    vec![
        det("det1", 1.0, 0, 0.15, vanilla, &[Small, Medium]),
        det("det2", 1.3, 0, 0.06, vanilla, &[Small, Medium]),
        det("det3", 1.0, 100, 0.06, multires, &[Small, Medium, Large]),
        det("det4", 0.7, 100, 0.5, multires, &[Medium, Large]),
        det("det5", 0.6, 0, 0.06, multires, &[Large]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub detectors: Vec<DetectorConfig>,
    pub registry: ClassRegistry,
}

impl EnsembleConfig {
    pub fn new(detectors: Vec<DetectorConfig>, registry: ClassRegistry) -> Result<Self, DetectError> {
        if detectors.is_empty() {
            return Err(DetectError::InvalidConfig("ensemble has no detectors".into()));
        }
        for d in &detectors {
            d.validate()?;
        }
        Ok(Self { detectors, registry })
    }

    pub fn table_one(vanilla: &str, multires: &str) -> Self {
        Self::new(table_one_detectors(vanilla, multires), ClassRegistry::xview()).expect("preset is valid")
    }

    pub fn active(&self, group: SizeGroup) -> impl Iterator<Item = &DetectorConfig> {
        self.detectors.iter().filter(move |d| d.serves(group))
    }
}

/// Where a tile sits, handed to backends alongside the pixels.
#[derive(Debug, Clone, Copy)]
pub struct TileContext<'a> {
    pub detector: &'a str,
    pub roi_id: &'a str,
    pub timestamp: &'a str,
    pub tile: Tile,
    pub block: usize,
    /// Total factor between ROI pixels and the tiled image.
    pub scale: f64,
    /// Size of the resized (unpadded) image being tiled.
    pub scaled_width: usize,
    pub scaled_height: usize,
}

impl TileContext<'_> {
    pub fn tile_id(&self) -> String {
        format!(
            "{}#{}:{},{}",
            image_key(self.roi_id, self.timestamp),
            self.detector,
            self.tile.x,
            self.tile.y
        )
    }

    pub fn failure(&self, message: impl Into<String>) -> DetectError {
        DetectError::BackendFailure {
            detector: self.detector.to_string(),
            tile: self.tile_id(),
            message: message.into(),
        }
    }
}

/// A detector runtime. Returns regions in tile pixel coordinates.
pub trait DetectorBackend: Send + Sync {
    fn detect_tile(&self, tile: &Raster, ctx: &TileContext<'_>) -> Result<Vec<Region>, DetectError>;
}

pub type Backends = HashMap<String, Arc<dyn DetectorBackend>>;

/// Per-run adjustments on top of the configured passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Extra resize applied before each pass's own scale (GSD normalization).
    pub pre_scale: f64,
    /// Raises every pass threshold to at least this value.
    pub threshold_override: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pre_scale: 1.0,
            threshold_override: None,
        }
    }
}

impl RunOptions {
    pub fn threshold_for(&self, cfg: &DetectorConfig) -> f64 {
        match self.threshold_override {
            Some(t) => cfg.threshold.max(t),
            None => cfg.threshold,
        }
    }
}

fn canonical_order(a: &(Tile, Region), b: &(Tile, Region)) -> std::cmp::Ordering {
    let (ta, ra) = a;
    let (tb, rb) = b;
    (ta.y, ta.x, ra.class_id)
        .cmp(&(tb.y, tb.x, rb.class_id))
        .then_with(|| {
            ra.bbox
                .coords()
                .iter()
                .zip(rb.bbox.coords())
                .map(|(p, q)| p.total_cmp(&q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| ra.score.total_cmp(&rb.score))
}

/// Run one pass over an ROI image. Regions come back in ROI coordinates,
/// clipped to the image, sorted by tile then class then box.
pub fn run_detector(
    img: &RoiImage,
    cfg: &DetectorConfig,
    backend: &dyn DetectorBackend,
    opts: &RunOptions,
) -> Result<Vec<Region>, DetectError> {
    cfg.validate()?;
    let scale = cfg.scale * opts.pre_scale;
    let scaled: Cow<'_, Raster> = if scale == 1.0 {
        Cow::Borrowed(&img.raster)
    } else {
        Cow::Owned(img.raster.resize(scale)?)
    };
    let spec = TileSpec {
        block: cfg.block,
        overlap: cfg.overlap,
        scale,
    };
    let plan = tiler::plan_tiles(scaled.width(), scaled.height(), &spec);
    let threshold = opts.threshold_for(cfg);
    let (roi_w, roi_h) = (img.raster.width() as f64, img.raster.height() as f64);
    let block_f = cfg.block as f64;

    let per_tile: Vec<Vec<(Tile, Region)>> = plan
        .tiles
        .par_iter()
        .map(|tile| {
            let pixels = scaled.block(tile.x, tile.y, cfg.block)?;
            let ctx = TileContext {
                detector: &cfg.name,
                roi_id: &img.roi_id,
                timestamp: &img.timestamp,
                tile: *tile,
                block: cfg.block,
                scale,
                scaled_width: scaled.width(),
                scaled_height: scaled.height(),
            };
            let found = backend.detect_tile(&pixels, &ctx)?;
            let mut kept = Vec::with_capacity(found.len());
            for r in found {
                if !(0.0..=1.0).contains(&r.score) || !r.bbox.is_valid() {
                    return Err(ctx.failure(format!("invalid region {r:?}")));
                }
                if r.score < threshold {
                    continue;
                }
                let in_tile = r.bbox.clip_to(block_f, block_f);
                let bbox = tiler::map_to_roi(&in_tile, (tile.x, tile.y), scale).clip_to(roi_w, roi_h);
                if bbox.area() > 0.0 {
                    kept.push((*tile, Region { bbox, ..r }));
                }
            }
            Ok(kept)
        })
        .collect::<Result<_, DetectError>>()?;

    let mut all: Vec<(Tile, Region)> = per_tile.into_iter().flatten().collect();
    all.sort_by(canonical_order);
    Ok(all.into_iter().map(|(_, r)| r).collect())
}

fn backend_for<'a>(backends: &'a Backends, cfg: &DetectorConfig) -> Result<&'a dyn DetectorBackend, DetectError> {
    backends
        .get(&cfg.backend)
        .map(|b| b.as_ref())
        .ok_or_else(|| DetectError::UnknownBackend(cfg.backend.clone()))
}

/// Candidate set for one size group: the outputs of every pass serving
/// `group`, restricted to classes of that group.
pub fn run_ensemble(
    img: &RoiImage,
    ens: &EnsembleConfig,
    backends: &Backends,
    group: SizeGroup,
    opts: &RunOptions,
) -> Result<Vec<Region>, DetectError> {
    let mut out = Vec::new();
    for cfg in ens.active(group) {
        let regions = run_detector(img, cfg, backend_for(backends, cfg)?, opts)?;
        out.extend(
            regions
                .into_iter()
                .filter(|r| ens.registry.group(r.class_id) == Some(group)),
        );
    }
    Ok(out)
}

/// Candidate sets for all groups at once. Each pass runs a single time and
/// its regions are routed to the groups it serves; the result per group is
/// identical to [`run_ensemble`].
pub fn run_ensemble_all(
    img: &RoiImage,
    ens: &EnsembleConfig,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<Vec<(SizeGroup, Vec<Region>)>, DetectError> {
    let mut groups: Vec<(SizeGroup, Vec<Region>)> = SizeGroup::ALL.iter().map(|g| (*g, Vec::new())).collect();
    for cfg in &ens.detectors {
        let regions = run_detector(img, cfg, backend_for(backends, cfg)?, opts)?;
        for (group, bucket) in groups.iter_mut() {
            if cfg.serves(*group) {
                bucket.extend(
                    regions
                        .iter()
                        .filter(|r| ens.registry.group(r.class_id) == Some(*group))
                        .copied(),
                );
            }
        }
    }
    Ok(groups)
}

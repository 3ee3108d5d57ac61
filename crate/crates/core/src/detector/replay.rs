use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::wire::{self, TileRecord, WireDetection};
use super::{DetectError, DetectorBackend, Region, TileContext};
use crate::classes::ClassRegistry;
use crate::raster::Raster;

type TileKey = (String, String, String, usize, usize);

fn key_of(ctx: &TileContext<'_>) -> TileKey {
    (
        ctx.roi_id.to_string(),
        ctx.timestamp.to_string(),
        ctx.detector.to_string(),
        ctx.tile.x,
        ctx.tile.y,
    )
}

/// Answers tiles from previously recorded backend output. Tiles without a
/// record yield no detections.
pub struct ReplayBackend {
    tiles: HashMap<TileKey, Vec<Region>>,
}

impl ReplayBackend {
    pub fn from_records(records: &[TileRecord], registry: &ClassRegistry) -> Result<Self, DetectError> {
        let mut tiles: HashMap<TileKey, Vec<Region>> = HashMap::new();
        for rec in records {
            let key = (
                rec.roi_id.clone(),
                rec.timestamp.clone(),
                rec.detector.clone(),
                rec.tile_x,
                rec.tile_y,
            );
            tiles.entry(key).or_default().push(rec.detection().to_region(registry)?);
        }
        Ok(Self { tiles })
    }

    pub fn open(path: &Path, registry: &ClassRegistry) -> Result<Self, DetectError> {
        let file = File::open(path).map_err(|e| DetectError::Io(format!("{}: {e}", path.display())))?;
        let records: Vec<TileRecord> =
            wire::read_jsonl(BufReader::new(file)).map_err(|e| DetectError::Io(format!("{}: {e}", path.display())))?;
        Self::from_records(&records, registry)
    }
}

impl DetectorBackend for ReplayBackend {
    fn detect_tile(&self, _tile: &Raster, ctx: &TileContext<'_>) -> Result<Vec<Region>, DetectError> {
        Ok(self.tiles.get(&key_of(ctx)).cloned().unwrap_or_default())
    }
}

/// Wraps a backend and keeps a copy of everything it returns.
pub struct RecordingBackend {
    inner: Arc<dyn DetectorBackend>,
    registry: ClassRegistry,
    records: Mutex<Vec<TileRecord>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn DetectorBackend>, registry: ClassRegistry) -> Self {
        Self {
            inner,
            registry,
            records: Mutex::new(Vec::new()),
        }
    }

    /// Recorded tiles in a stable order, independent of scheduling.
    pub fn records(&self) -> Vec<TileRecord> {
        let mut out = self.records.lock().expect("recorder poisoned").clone();
        out.sort_by(|a, b| {
            (&a.roi_id, &a.timestamp, &a.detector, a.tile_y, a.tile_x).cmp(&(
                &b.roi_id,
                &b.timestamp,
                &b.detector,
                b.tile_y,
                b.tile_x,
            ))
        });
        out
    }
}

impl DetectorBackend for RecordingBackend {
    fn detect_tile(&self, tile: &Raster, ctx: &TileContext<'_>) -> Result<Vec<Region>, DetectError> {
        let regions = self.inner.detect_tile(tile, ctx)?;
        let recs = regions.iter().map(|r| {
            let w = WireDetection::from_region(r, &self.registry);
            TileRecord {
                roi_id: ctx.roi_id.to_string(),
                timestamp: ctx.timestamp.to_string(),
                detector: ctx.detector.to_string(),
                tile_x: ctx.tile.x,
                tile_y: ctx.tile.y,
                class: w.class,
                x1: w.x1,
                y1: w.y1,
                x2: w.x2,
                y2: w.y2,
                score: w.score,
            }
        });
        self.records.lock().expect("recorder poisoned").extend(recs);
        Ok(regions)
    }
}

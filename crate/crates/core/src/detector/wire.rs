//! JSON-lines records exchanged with detector processes and written to disk.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DetectError, Region};
use crate::classes::ClassRegistry;
use crate::geo::PixelBox;

/// A detection as it appears on the wire: class by registry name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub class: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl WireDetection {
    pub fn from_region(r: &Region, registry: &ClassRegistry) -> Self {
        Self {
            class: registry.name(r.class_id).unwrap_or("?").to_string(),
            x1: r.bbox.x1,
            y1: r.bbox.y1,
            x2: r.bbox.x2,
            y2: r.bbox.y2,
            score: r.score,
        }
    }

    /// Resolve the class name; unknown names are an error.
    pub fn to_region(&self, registry: &ClassRegistry) -> Result<Region, DetectError> {
        let class_id = registry.id(&self.class)?;
        let bbox = PixelBox::new(self.x1, self.y1, self.x2, self.y2)
            .map_err(|e| DetectError::InvalidRegion(e.to_string()))?;
        Region::new(class_id, bbox, self.score)
    }
}

/// Request line sent to an external detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRequest {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels_b64: String,
}

/// Response line read back from an external detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileResponse {
    pub id: String,
    pub detections: Vec<WireDetection>,
}

/// One fused detection of one ROI acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub roi_id: String,
    pub timestamp: String,
    pub class: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(roi_id: &str, timestamp: &str, r: &Region, registry: &ClassRegistry) -> Self {
        let w = WireDetection::from_region(r, registry);
        Self {
            roi_id: roi_id.to_string(),
            timestamp: timestamp.to_string(),
            class: w.class,
            x1: w.x1,
            y1: w.y1,
            x2: w.x2,
            y2: w.y2,
            score: w.score,
        }
    }

    pub fn detection(&self) -> WireDetection {
        WireDetection {
            class: self.class.clone(),
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            score: self.score,
        }
    }
}

/// Raw backend output for one tile, in tile coordinates. Used to record and
/// replay model runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub roi_id: String,
    pub timestamp: String,
    pub detector: String,
    pub tile_x: usize,
    pub tile_y: usize,
    pub class: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl TileRecord {
    pub fn detection(&self) -> WireDetection {
        WireDetection {
            class: self.class.clone(),
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            score: self.score,
        }
    }
}

/// Read one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

//! Object counts and activity indicators from satellite image regions.
//!
//! The pipeline samples strategic locations from OpenStreetMap, crops and
//! upsamples region images, runs an ensemble of tiled detector passes,
//! fuses their output with confidence-weighted NMS and turns the fused
//! regions into counts, change reports and heatmaps. Detection itself is
//! delegated to pluggable backends.

pub mod analytics;
pub mod classes;
pub mod detector;
pub mod evaluation;
pub mod geo;
pub mod merge;
pub mod osm;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tiler;

pub use classes::{ClassId, ClassRegistry, SizeGroup};
pub use detector::{DetectionSet, DetectorBackend, Region};
pub use geo::{GeoBox, GeoPoint, GeoTransform, PixelBox};
pub use merge::{weighted_nms, MergeConfig};
pub use raster::{Raster, RoiImage};

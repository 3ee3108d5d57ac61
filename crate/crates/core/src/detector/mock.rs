use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{image_key, DetectError, DetectorBackend, Region, TileContext};
use crate::evaluation::Annotation;
use crate::geo::PixelBox;
use crate::raster::Raster;
use crate::synth::{self, NoiseModel};

/// Oracle backend that answers from ground-truth annotations instead of
/// pixels, optionally passed through a noisy detector channel.
///
/// The noisy realization is drawn once per image (seeded by the image key)
/// and shared by every pass, so passes disagree only through tiling and
/// thresholds. An object is reported by a tile when at least `min_visible`
/// of its area lies inside the tile (default: the whole object).
pub struct MockBackend {
    truth: HashMap<String, Vec<Annotation>>,
    noise: Option<NoiseModel>,
    seed: u64,
    min_visible: f64,
    realized: Mutex<HashMap<String, Arc<Vec<Region>>>>,
}

impl MockBackend {
    /// `truth` is keyed by [`image_key`].
    pub fn new(truth: HashMap<String, Vec<Annotation>>) -> Self {
        Self {
            truth,
            noise: None,
            seed: 0,
            min_visible: 1.0,
            realized: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel, seed: u64) -> Self {
        self.noise = Some(noise);
        self.seed = seed;
        self
    }

    pub fn with_min_visible(mut self, fraction: f64) -> Self {
        self.min_visible = fraction.clamp(f64::MIN_POSITIVE, 1.0);
        self
    }

    fn regions_for(&self, key: &str, width: f64, height: f64) -> Arc<Vec<Region>> {
        let mut cache = self.realized.lock().expect("mock cache poisoned");
        if let Some(r) = cache.get(key) {
            return Arc::clone(r);
        }
        let truth = self.truth.get(key).map(Vec::as_slice).unwrap_or(&[]);
        let regions = match &self.noise {
            Some(noise) => {
                let seed = self.seed ^ synth::fnv1a(key.as_bytes());
                synth::simulate_detector(truth, noise, seed, width, height)
            }
            None => truth
                .iter()
                .map(|a| Region {
                    class_id: a.class_id,
                    bbox: a.bbox,
                    score: 1.0,
                })
                .collect(),
        };
        let regions = Arc::new(regions);
        cache.insert(key.to_string(), Arc::clone(&regions));
        regions
    }
}

impl DetectorBackend for MockBackend {
    fn detect_tile(&self, _tile: &Raster, ctx: &TileContext<'_>) -> Result<Vec<Region>, DetectError> {
        let key = image_key(ctx.roi_id, ctx.timestamp);
        let width = (ctx.scaled_width as f64 / ctx.scale).round();
        let height = (ctx.scaled_height as f64 / ctx.scale).round();
        let regions = self.regions_for(&key, width, height);

        let (ox, oy) = (ctx.tile.x as f64, ctx.tile.y as f64);
        let window = PixelBox {
            x1: ox,
            y1: oy,
            x2: (ox + ctx.block as f64).min(ctx.scaled_width as f64),
            y2: (oy + ctx.block as f64).min(ctx.scaled_height as f64),
        };
        let mut out = Vec::new();
        for r in regions.iter() {
            let s = ctx.scale;
            let scaled = PixelBox {
                x1: r.bbox.x1 * s,
                y1: r.bbox.y1 * s,
                x2: r.bbox.x2 * s,
                y2: r.bbox.y2 * s,
            };
            let area = scaled.area();
            if area <= 0.0 {
                continue;
            }
            let visible = if window.contains(&scaled) {
                scaled
            } else {
                match scaled.intersection(&window) {
                    Some(v) if self.min_visible < 1.0 && v.area() / area >= self.min_visible => v,
                    _ => continue,
                }
            };
            out.push(Region {
                class_id: r.class_id,
                bbox: PixelBox {
                    x1: visible.x1 - ox,
                    y1: visible.y1 - oy,
                    x2: visible.x2 - ox,
                    y2: visible.y2 - oy,
                },
                score: r.score,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::ClassId;
    use crate::detector::{run_detector, DetectorConfig, RunOptions};
    use crate::classes::SizeGroup;
    use crate::geo::{GeoPoint, GeoTransform};
    use crate::raster::RoiImage;
    use crate::tiler::Tile;

    fn ann(x1: f64, y1: f64, x2: f64, y2: f64) -> Annotation {
        Annotation {
            class_id: ClassId(5),
            bbox: PixelBox::new(x1, y1, x2, y2).unwrap(),
        }
    }

    fn ctx<'a>(tile: Tile, scale: f64, w: usize, h: usize) -> TileContext<'a> {
        TileContext {
            detector: "d",
            roi_id: "r",
            timestamp: "t",
            tile,
            block: 300,
            scale,
            scaled_width: w,
            scaled_height: h,
        }
    }

    #[test]
    fn empty_truth_gives_nothing() {
        let mock = MockBackend::new(HashMap::new());
        let tile = Raster::filled(300, 300, 3, 0).unwrap();
        let out = mock
            .detect_tile(&tile, &ctx(Tile { x: 0, y: 0, padded: false }, 1.0, 300, 300))
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn whole_objects_only_by_default() {
        let truth = HashMap::from([("r@t".to_string(), vec![ann(10.0, 10.0, 20.0, 20.0), ann(295.0, 10.0, 305.0, 20.0)])]);
        let tile = Raster::filled(300, 300, 3, 0).unwrap();
        let c = ctx(Tile { x: 0, y: 0, padded: false }, 1.0, 600, 300);
        let mock = MockBackend::new(truth.clone());
        assert_eq!(mock.detect_tile(&tile, &c).unwrap().len(), 1);
        let partial = MockBackend::new(truth).with_min_visible(0.5);
        let out = partial.detect_tile(&tile, &c).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].bbox.x2, 300.0);
    }

    #[test]
    fn noise_free_pass_reproduces_truth() {
        let truth = vec![ann(10.0, 10.0, 22.0, 18.0), ann(400.0, 120.0, 415.0, 130.0), ann(100.0, 500.0, 112.0, 507.0)];
        let mock = MockBackend::new(HashMap::from([("r@t".to_string(), truth.clone())]));
        let img = RoiImage {
            roi_id: "r".into(),
            raster: Raster::filled(640, 640, 1, 0).unwrap(),
            transform: GeoTransform::new(GeoPoint::new(0.0, 0.0).unwrap(), 0.3, 0.3).unwrap(),
            timestamp: "t".into(),
        };
        for (scale, overlap) in [(1.0, 0), (1.3, 0), (1.0, 100), (0.6, 0)] {
            let cfg = DetectorConfig {
                name: "d".into(),
                scale,
                overlap,
                threshold: 0.5,
                backend: "mock".into(),
                size_groups: vec![SizeGroup::Small],
                block: 300,
            };
            let out = run_detector(&img, &cfg, &mock, &RunOptions::default()).unwrap();
            for a in &truth {
                assert!(out
                    .iter()
                    .any(|r| r.bbox.coords().iter().zip(a.bbox.coords()).all(|(p, q)| (p - q).abs() < 1e-9)));
            }
        }
    }
}

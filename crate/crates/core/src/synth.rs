//! Synthetic scenes with exact ground truth and a noisy detector channel.
//!
//! All randomness comes from [`Prng`]: xorshift64* (shifts 12, 25, 27 and
//! multiplier `0x2545F4914F6CDD1D`) whose state is the first output of
//! splitmix64 applied to the seed. Uniform floats take the top 53 bits.
//! Normals use Box-Muller (cosine branch only, two uniforms per draw) and
//! Poisson counts use Knuth's product method on chunks of mean at most 30.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassError, ClassId, ClassRegistry};
use crate::detector::{image_key, Region};
use crate::evaluation::Annotation;
use crate::geo::PixelBox;
use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place {class} object {index} of {total} after {attempts} attempts")]
    PackingFailed {
        class: String,
        index: usize,
        total: usize,
        attempts: usize,
    },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// FNV-1a, 64 bit. Used to derive per-image seeds from names.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self {
            state: if s == 0 { 0x9e37_79b9_7f4a_7c15 } else { s },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        if hi <= lo {
            return lo;
        }
        lo + self.next_u64() % (hi - lo + 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if !(mean > 0.0) {
            return 0;
        }
        let chunks = (mean / 30.0).ceil().max(1.0);
        let part = mean / chunks;
        let limit = (-part).exp();
        let mut total = 0;
        for _ in 0..chunks as u64 {
            let mut p = self.next_f64();
            while p > limit {
                total += 1;
                p *= self.next_f64();
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive count range per class name.
    pub objects_per_class: BTreeMap<String, (u32, u32)>,
    /// Inclusive `((w_min, w_max), (h_min, h_max))` in pixels per class name.
    pub object_size: BTreeMap<String, ((u32, u32), (u32, u32))>,
    /// Minimum gap in pixels between any two objects along at least one axis.
    #[serde(default)]
    pub min_separation: f64,
    #[serde(default)]
    pub timestamps: Vec<String>,
}

impl SceneSpec {
    pub fn validate(&self, registry: &ClassRegistry) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("scene must have positive size".into()));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("bad min_separation {}", self.min_separation)));
        }
        for (class, &(lo, hi)) in &self.objects_per_class {
            registry.id(class)?;
            if lo > hi {
                return Err(SynthError::InvalidSpec(format!("{class}: count range {lo}..{hi}")));
            }
            if hi == 0 {
                continue;
            }
            let ((wl, wh), (hl, hh)) = *self
                .object_size
                .get(class)
                .ok_or_else(|| SynthError::InvalidSpec(format!("{class}: no object size")))?;
            if wl == 0 || hl == 0 || wl > wh || hl > hh {
                return Err(SynthError::InvalidSpec(format!("{class}: bad size range")));
            }
            if wh as usize > self.width || hh as usize > self.height {
                return Err(SynthError::InvalidSpec(format!("{class}: objects larger than the scene")));
            }
        }
        Ok(())
    }
}

/// Largest per-axis gap between two boxes; 0 when they overlap.
pub fn separation(a: &PixelBox, b: &PixelBox) -> f64 {
    let gx = (a.x1 - b.x2).max(b.x1 - a.x2);
    let gy = (a.y1 - b.y2).max(b.y1 - a.y2);
    gx.max(gy).max(0.0)
}

pub const BACKGROUND: [u8; 3] = [96, 96, 96];

pub fn class_color(id: ClassId) -> [u8; 3] {
    let h = fnv1a(&id.0.to_le_bytes());
    [(h & 0x7f) as u8 + 128, ((h >> 8) & 0x7f) as u8 + 128, ((h >> 16) & 0x3f) as u8]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub annotations: Vec<Annotation>,
    pub raster: Raster,
}

/// Place axis-aligned integer rectangles by rejection sampling. Classes are
/// processed in name order; each object gets up to `10 * n` attempts, where
/// `n` is the total object count of the scene.
pub fn generate_scene(seed: u64, spec: &SceneSpec, registry: &ClassRegistry) -> Result<Scene, SynthError> {
    spec.validate(registry)?;
    let mut rng = Prng::new(seed);
    let counts: Vec<(&String, u64)> = spec
        .objects_per_class
        .iter()
        .map(|(c, &(lo, hi))| (c, rng.range_inclusive(lo as u64, hi as u64)))
        .collect();
    let total: u64 = counts.iter().map(|(_, n)| n).sum();
    let attempts = 10 * total as usize;

    let mut raster = Raster::new(
        spec.width,
        spec.height,
        3,
        BACKGROUND.repeat(spec.width * spec.height),
    )?;
    let mut placed: Vec<Annotation> = Vec::with_capacity(total as usize);
    for (class, n) in counts {
        let class_id = registry.id(class)?;
        let ((wl, wh), (hl, hh)) = spec.object_size.get(class).copied().unwrap_or(((1, 1), (1, 1)));
        for index in 0..n as usize {
            let mut found = None;
            for _ in 0..attempts {
                let w = rng.range_inclusive(wl as u64, wh as u64);
                let h = rng.range_inclusive(hl as u64, hh as u64);
                let x = rng.range_inclusive(0, (spec.width as u64).saturating_sub(w));
                let y = rng.range_inclusive(0, (spec.height as u64).saturating_sub(h));
                let b = PixelBox {
                    x1: x as f64,
                    y1: y as f64,
                    x2: (x + w) as f64,
                    y2: (y + h) as f64,
                };
                let clear = placed.iter().all(|p| {
                    let gap = separation(&p.bbox, &b);
                    gap >= spec.min_separation && (gap > 0.0 || p.bbox.intersection(&b).is_none())
                });
                if clear {
                    found = Some(b);
                    break;
                }
            }
            let bbox = found.ok_or_else(|| SynthError::PackingFailed {
                class: class.clone(),
                index,
                total: total as usize,
                attempts,
            })?;
            raster.fill_rect(bbox.x1 as usize, bbox.y1 as usize, bbox.x2 as usize, bbox.y2 as usize, &class_color(class_id));
            placed.push(Annotation { class_id, bbox });
        }
    }
    Ok(Scene {
        annotations: placed,
        raster,
    })
}

/// One scene per timestamp, seeded by `seed ^ fnv1a(image_key(roi, ts))`.
pub fn generate_series(
    seed: u64,
    roi_id: &str,
    spec: &SceneSpec,
    registry: &ClassRegistry,
) -> Result<Vec<(String, Scene)>, SynthError> {
    spec.timestamps
        .par_iter()
        .map(|ts| {
            let s = seed ^ fnv1a(image_key(roi_id, ts).as_bytes());
            generate_scene(s, spec, registry).map(|scene| (ts.clone(), scene))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub miss_rate: f64,
    pub fp_per_megapixel: f64,
    pub jitter_sigma: f64,
    pub score_tp: (f64, f64),
    pub score_fp: (f64, f64),
    /// `((w_min, w_max), (h_min, h_max))` of false-positive boxes.
    pub fp_size: ((f64, f64), (f64, f64)),
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            fp_per_megapixel: 0.0,
            jitter_sigma: 0.0,
            score_tp: (1.0, 1.0),
            score_fp: (0.05, 0.3),
            fp_size: ((6.0, 20.0), (6.0, 20.0)),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidNoise(m));
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return bad(format!("miss_rate {}", self.miss_rate));
        }
        if !(self.fp_per_megapixel >= 0.0 && self.fp_per_megapixel.is_finite()) {
            return bad(format!("fp_per_megapixel {}", self.fp_per_megapixel));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return bad(format!("jitter_sigma {}", self.jitter_sigma));
        }
        for (name, (lo, hi)) in [("score_tp", self.score_tp), ("score_fp", self.score_fp)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} range ({lo}, {hi})"));
            }
        }
        let ((wl, wh), (hl, hh)) = self.fp_size;
        if !(wl > 0.0 && wl <= wh && hl > 0.0 && hl <= hh) {
            return bad("fp_size".into());
        }
        Ok(())
    }
}

/// Pass annotations through the noise model for a `width x height` image.
///
/// Every annotation consumes the same number of draws whether it survives
/// or not (miss test, four corner normals, score), so changing one noise
/// level leaves the other draws untouched. False positives take their class
/// from the classes present in `annotations`.
pub fn simulate_detector(annotations: &[Annotation], noise: &NoiseModel, seed: u64, width: f64, height: f64) -> Vec<Region> {
    let mut rng = Prng::new(seed);
    let mut out = Vec::with_capacity(annotations.len());
    for a in annotations {
        let miss = rng.next_f64() < noise.miss_rate;
        let n: [f64; 4] = std::array::from_fn(|_| rng.normal());
        let score = rng.uniform(noise.score_tp.0, noise.score_tp.1);
        if miss {
            continue;
        }
        let bbox = if noise.jitter_sigma > 0.0 {
            let s = noise.jitter_sigma;
            let [x1, y1, x2, y2] = a.bbox.coords();
            let (xa, xb) = (x1 + s * n[0], x2 + s * n[2]);
            let (ya, yb) = (y1 + s * n[1], y2 + s * n[3]);
            PixelBox {
                x1: xa.min(xb).clamp(0.0, width),
                y1: ya.min(yb).clamp(0.0, height),
                x2: xa.max(xb).clamp(0.0, width),
                y2: ya.max(yb).clamp(0.0, height),
            }
        } else {
            a.bbox
        };
        if bbox.area() > 0.0 {
            out.push(Region {
                class_id: a.class_id,
                bbox,
                score,
            });
        }
    }

    let classes: Vec<ClassId> = annotations.iter().map(|a| a.class_id).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() || width <= 0.0 || height <= 0.0 {
        return out;
    }
    let n_fp = rng.poisson(noise.fp_per_megapixel * width * height / 1e6);
    let ((wl, wh), (hl, hh)) = noise.fp_size;
    for _ in 0..n_fp {
        let class_id = classes[rng.range_inclusive(0, classes.len() as u64 - 1) as usize];
        let w = rng.uniform(wl, wh).min(width);
        let h = rng.uniform(hl, hh).min(height);
        let x = rng.uniform(0.0, width - w);
        let y = rng.uniform(0.0, height - h);
        let score = rng.uniform(noise.score_fp.0, noise.score_fp.1);
        out.push(Region {
            class_id,
            bbox: PixelBox {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
            },
            score,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::SMALL_CAR;
    use proptest::prelude::*;

    fn cars(n: u32, sep: f64) -> SceneSpec {
        SceneSpec {
            width: 640,
            height: 480,
            objects_per_class: BTreeMap::from([(SMALL_CAR.to_string(), (n, n))]),
            object_size: BTreeMap::from([(SMALL_CAR.to_string(), ((8, 16), (6, 10)))]),
            min_separation: sep,
            timestamps: vec!["2020-01".into(), "2020-02".into()],
        }
    }

    #[test]
    fn prng_reference_values() {
        // splitmix64(0) is the published first output for seed 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        let mut a = Prng::new(7);
        let mut b = Prng::new(7);
        let xs: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        assert_eq!(xs, (0..5).map(|_| b.next_u64()).collect::<Vec<_>>());
        assert_ne!(Prng::new(8).next_u64(), xs[0]);
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn prng_moments() {
        let mut r = Prng::new(42);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s += z;
            s2 += z * z;
        }
        assert!((s / n as f64).abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
        let m: f64 = (0..20_000).map(|_| r.poisson(75.0) as f64).sum::<f64>() / 20_000.0;
        assert!((m - 75.0).abs() < 0.3, "{m}");
    }

    #[test]
    fn empty_scene_is_blank() {
        let reg = ClassRegistry::xview();
        let scene = generate_scene(1, &cars(0, 0.0), &reg).unwrap();
        assert!(scene.annotations.is_empty());
        assert!(scene.raster.pixels().chunks(3).all(|p| p == BACKGROUND));
    }

    #[test]
    fn deterministic_and_separated() {
        let reg = ClassRegistry::xview();
        let spec = cars(25, 4.0);
        let a = generate_scene(99, &spec, &reg).unwrap();
        assert_eq!(a, generate_scene(99, &spec, &reg).unwrap());
        assert_eq!(a.annotations.len(), 25);
        for (i, p) in a.annotations.iter().enumerate() {
            for q in &a.annotations[i + 1..] {
                // grow one box by the gap on every side: they must not overlap
                let grown = PixelBox {
                    x1: p.bbox.x1 - spec.min_separation,
                    y1: p.bbox.y1 - spec.min_separation,
                    x2: p.bbox.x2 + spec.min_separation,
                    y2: p.bbox.y2 + spec.min_separation,
                };
                let ox = grown.x2.min(q.bbox.x2) - grown.x1.max(q.bbox.x1);
                let oy = grown.y2.min(q.bbox.y2) - grown.y1.max(q.bbox.y1);
                assert!(ox <= 0.0 || oy <= 0.0);
            }
        }
        let ann = a.annotations[0];
        let color = class_color(ann.class_id);
        assert_eq!(a.raster.pixel(ann.bbox.x1 as usize, ann.bbox.y1 as usize), color);
        assert_eq!(a.raster.pixel(ann.bbox.x2 as usize - 1, ann.bbox.y2 as usize - 1), color);
    }

    #[test]
    fn infeasible_packing_fails() {
        let reg = ClassRegistry::xview();
        let mut spec = cars(50, 0.0);
        spec.width = 20;
        spec.height = 20;
        spec.object_size.insert(SMALL_CAR.into(), ((10, 10), (10, 10)));
        assert!(matches!(generate_scene(3, &spec, &reg), Err(SynthError::PackingFailed { .. })));
        spec.object_size.insert(SMALL_CAR.into(), ((30, 30), (10, 10)));
        assert!(matches!(generate_scene(3, &spec, &reg), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn series_uses_distinct_seeds() {
        let reg = ClassRegistry::xview();
        let series = generate_series(5, "roi", &cars(10, 2.0), &reg).unwrap();
        assert_eq!(series.len(), 2);
        assert_ne!(series[0].1.annotations, series[1].1.annotations);
        assert_eq!(series, generate_series(5, "roi", &cars(10, 2.0), &reg).unwrap());
    }

    fn truth(n: usize) -> Vec<Annotation> {
        (0..n)
            .map(|i| Annotation {
                class_id: ClassId(3),
                bbox: PixelBox::new((i % 40) as f64 * 25.0, (i / 40) as f64 * 25.0, (i % 40) as f64 * 25.0 + 12.0, (i / 40) as f64 * 25.0 + 8.0)
                    .unwrap(),
            })
            .collect()
    }

    #[test]
    fn identity_channel() {
        let t = truth(50);
        let out = simulate_detector(&t, &NoiseModel::default(), 11, 1000.0, 1000.0);
        assert_eq!(out.len(), t.len());
        for (r, a) in out.iter().zip(&t) {
            assert_eq!((r.class_id, r.bbox, r.score), (a.class_id, a.bbox, 1.0));
        }
    }

    #[test]
    fn full_miss_leaves_only_false_positives() {
        let t = truth(50);
        let noise = NoiseModel {
            miss_rate: 1.0,
            fp_per_megapixel: 20.0,
            ..Default::default()
        };
        let out = simulate_detector(&t, &noise, 4, 1000.0, 1000.0);
        assert!(!out.is_empty());
        assert!(out.iter().all(|r| r.score <= 0.3));
    }

    #[test]
    fn binomial_survival() {
        let t = truth(1000);
        let noise = NoiseModel {
            miss_rate: 0.2,
            ..Default::default()
        };
        let total: usize = (0..100).map(|s| simulate_detector(&t, &noise, s, 1000.0, 1000.0).len()).sum();
        let mean = total as f64 / 100.0;
        // sd of the mean: sqrt(1000 * 0.2 * 0.8 / 100)
        let sd = (1000.0f64 * 0.2 * 0.8 / 100.0).sqrt();
        assert!((mean - 800.0).abs() <= 3.0 * sd, "{mean}");
    }

    proptest! {
        #[test]
        fn noisy_regions_are_valid(seed in any::<u64>(), jitter in 0.0..5.0f64, fp in 0.0..50.0f64) {
            let noise = NoiseModel { jitter_sigma: jitter, fp_per_megapixel: fp, miss_rate: 0.1, score_tp: (0.5, 1.0), ..Default::default() };
            prop_assert!(noise.validate().is_ok());
            for r in simulate_detector(&truth(80), &noise, seed, 1000.0, 120.0) {
                prop_assert!(r.bbox.is_valid() && r.bbox.area() > 0.0);
                prop_assert!(r.bbox.x1 >= 0.0 && r.bbox.x2 <= 1000.0 && r.bbox.y2 <= 120.0);
                prop_assert!(r.score > 0.0 && r.score <= 1.0);
            }
        }
    }
}

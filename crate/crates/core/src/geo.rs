//! Geographic and pixel geometry primitives.
//!
//! Distances use a local equirectangular approximation with a spherical
//! constant of 111 320 m per degree of latitude. That is accurate enough for
//! city-block sized regions and keeps every formula checkable by hand.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters spanned by one degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Mid-latitudes at or beyond this magnitude are refused by [`expand_geobox`].
pub const POLAR_LIMIT_DEG: f64 = 89.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("invalid geographic box ({min_lat}, {min_lon}, {max_lat}, {max_lon})")]
    InvalidBox {
        min_lat: f64,
        min_lon: f64,
        max_lat: f64,
        max_lon: f64,
    },
    #[error("invalid pixel box ({x1}, {y1}, {x2}, {y2})")]
    InvalidPixelBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("boundary has no points")]
    EmptyBoundary,
    #[error("boundary spans {span} degrees of longitude; antimeridian crossings are unsupported")]
    AntimeridianCrossing { span: f64 },
    #[error("expansion distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("mid-latitude {0} is too close to a pole")]
    PolarUnsupported(f64),
    #[error("ground sample distance must be finite and positive (gsd_x={gsd_x}, gsd_y={gsd_y})")]
    InvalidGsd { gsd_x: f64, gsd_y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidPoint { lat, lon })
        }
    }
}

/// Axis-aligned latitude/longitude extent. Boxes crossing the antimeridian
/// cannot be represented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl GeoBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, GeoError> {
        let b = Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let corners_ok = GeoPoint::new(self.min_lat, self.min_lon).is_ok()
            && GeoPoint::new(self.max_lat, self.max_lon).is_ok();
        if corners_ok && self.min_lat <= self.max_lat && self.min_lon <= self.max_lon {
            Ok(())
        } else {
            Err(GeoError::InvalidBox {
                min_lat: self.min_lat,
                min_lon: self.min_lon,
                max_lat: self.max_lat,
                max_lon: self.max_lon,
            })
        }
    }

    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.min_lat + self.max_lat)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: self.mid_lat(),
            lon: 0.5 * (self.min_lon + self.max_lon),
        }
    }

    /// Closed-interval intersection test (touching edges count).
    pub fn intersects(&self, other: &GeoBox) -> bool {
        self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
            && self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
    }

    pub fn contains_box(&self, other: &GeoBox) -> bool {
        self.min_lat <= other.min_lat
            && self.min_lon <= other.min_lon
            && self.max_lat >= other.max_lat
            && self.max_lon >= other.max_lon
    }

    pub fn contains_point(&self, p: &GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &GeoBox) -> GeoBox {
        GeoBox {
            min_lat: self.min_lat.min(other.min_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lat: self.max_lat.max(other.max_lat),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }
}

/// Axis-aligned box in continuous pixel coordinates, `(x1, y1)` upper left
/// and `(x2, y2)` bottom right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeoError> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeoError::InvalidPixelBox { x1, y1, x2, y2 })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|c| c.is_finite())
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Overlap box, or `None` when the boxes do not share positive area.
    pub fn intersection(&self, other: &PixelBox) -> Option<PixelBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x2 > x1 && y2 > y1).then_some(PixelBox { x1, y1, x2, y2 })
    }

    pub fn contains(&self, other: &PixelBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Clip to `[0, width] x [0, height]`.
    pub fn clip_to(&self, width: f64, height: f64) -> PixelBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        PixelBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union. Zero when the boxes are disjoint or the union
/// has no area.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Componentwise min/max of the boundary points.
pub fn enclosing_geobox(points: &[GeoPoint]) -> Result<GeoBox, GeoError> {
    let first = points.first().ok_or(GeoError::EmptyBoundary)?;
    let init = GeoBox {
        min_lat: first.lat,
        min_lon: first.lon,
        max_lat: first.lat,
        max_lon: first.lon,
    };
    let b = points.iter().fold(init, |acc, p| GeoBox {
        min_lat: acc.min_lat.min(p.lat),
        min_lon: acc.min_lon.min(p.lon),
        max_lat: acc.max_lat.max(p.lat),
        max_lon: acc.max_lon.max(p.lon),
    });
    // a footprint wider than half the globe is an antimeridian wrap
    let span = b.max_lon - b.min_lon;
    if span > 180.0 {
        return Err(GeoError::AntimeridianCrossing { span });
    }
    Ok(b)
}

/// Grow a box by `meters` on every side, clamped to valid coordinates.
pub fn expand_geobox(b: &GeoBox, meters: f64) -> Result<GeoBox, GeoError> {
    if !meters.is_finite() || meters < 0.0 {
        return Err(GeoError::NegativeDistance(meters));
    }
    let mid = b.mid_lat();
    if mid.abs() >= POLAR_LIMIT_DEG {
        return Err(GeoError::PolarUnsupported(mid));
    }
    let dlat = meters / METERS_PER_DEGREE;
    let dlon = meters / (METERS_PER_DEGREE * mid.to_radians().cos());
    Ok(GeoBox {
        min_lat: (b.min_lat - dlat).max(-90.0),
        min_lon: (b.min_lon - dlon).max(-180.0),
        max_lat: (b.max_lat + dlat).min(90.0),
        max_lon: (b.max_lon + dlon).min(180.0),
    })
}

/// Mapping between geographic coordinates and image pixels. `origin` is the
/// center of the top-left pixel; `gsd_x`/`gsd_y` are meters per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin: GeoPoint,
    pub gsd_x: f64,
    pub gsd_y: f64,
}

impl GeoTransform {
    pub fn new(origin: GeoPoint, gsd_x: f64, gsd_y: f64) -> Result<Self, GeoError> {
        let t = Self { origin, gsd_x, gsd_y };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = |g: f64| g.is_finite() && g > 0.0;
        if ok(self.gsd_x) && ok(self.gsd_y) {
            Ok(())
        } else {
            Err(GeoError::InvalidGsd {
                gsd_x: self.gsd_x,
                gsd_y: self.gsd_y,
            })
        }
    }

    fn meters_per_lon_degree(&self) -> f64 {
        METERS_PER_DEGREE * self.origin.lat.to_radians().cos()
    }

    pub fn geo_to_pixel(&self, p: &GeoPoint) -> (f64, f64) {
        let x = (p.lon - self.origin.lon) * self.meters_per_lon_degree() / self.gsd_x;
        let y = (self.origin.lat - p.lat) * METERS_PER_DEGREE / self.gsd_y;
        (x, y)
    }

    /// Inverse of [`GeoTransform::geo_to_pixel`]. The result is not range
    /// checked.
    pub fn pixel_to_geo(&self, x: f64, y: f64) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat - y * self.gsd_y / METERS_PER_DEGREE,
            lon: self.origin.lon + x * self.gsd_x / self.meters_per_lon_degree(),
        }
    }
}

/// Equirectangular distance in meters, evaluated at the pair's mean latitude.
pub fn equirect_distance_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let mean_lat = (0.5 * (a.lat + b.lat)).to_radians();
    let dx = (b.lon - a.lon) * METERS_PER_DEGREE * mean_lat.cos();
    let dy = (b.lat - a.lat) * METERS_PER_DEGREE;
    dx.hypot(dy)
}

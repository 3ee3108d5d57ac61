//! Counts, temporal change, indicator rules and IDW heatmaps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassId, ClassRegistry};
use crate::detector::DetectionSet;
use crate::geo::{equirect_distance_m, GeoBox, GeoPoint};
use crate::osm::RoiDescriptor;
use crate::raster::Raster;

pub const DEFAULT_IDW_POWER: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{roi_id}: need at least 2 samples for a change report, have {have}")]
    InsufficientHistory { roi_id: String, have: usize },
    #[error("{roi_id}: timestamps not strictly increasing at {timestamp:?}")]
    UnorderedTimestamps { roi_id: String, timestamp: String },
    #[error("invalid indicator rule for {tag_group:?}: expected trend is also an alert trend")]
    InvalidRule { tag_group: String },
    #[error("invalid variation thresholds: small_max {small_max} > medium_max {medium_max}")]
    InvalidThresholds { small_max: u64, medium_max: u64 },
    #[error("heatmap needs at least one sample")]
    NoSamples,
    #[error("invalid heatmap parameters: {0}")]
    InvalidHeatmap(String),
    #[error("counts csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("counts csv: unknown class {0:?}")]
    UnknownClass(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub roi_id: String,
    pub timestamp: String,
    pub class_id: ClassId,
    pub count: u64,
}

/// Tally fused regions per class, ascending class id, zero counts omitted.
pub fn count_by_class(ds: &DetectionSet) -> Vec<CountRecord> {
    let mut tally: BTreeMap<ClassId, u64> = BTreeMap::new();
    for r in &ds.regions {
        *tally.entry(r.class_id).or_default() += 1;
    }
    tally
        .into_iter()
        .map(|(class_id, count)| CountRecord {
            roi_id: ds.roi_id.clone(),
            timestamp: ds.timestamp.clone(),
            class_id,
            count,
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    roi_id: String,
    timestamp: String,
    class: String,
    count: u64,
}

/// Write `roi_id,timestamp,class,count` rows with class names.
pub fn write_counts_csv(w: impl Write, records: &[CountRecord], registry: &ClassRegistry) -> Result<(), AnalyticsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(CsvRow {
            roi_id: r.roi_id.clone(),
            timestamp: r.timestamp.clone(),
            class: registry.name(r.class_id).unwrap_or("?").to_string(),
            count: r.count,
        })?;
    }
    if records.is_empty() {
        out.write_record(["roi_id", "timestamp", "class", "count"])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_counts_csv(r: impl Read, registry: &ClassRegistry) -> Result<Vec<CountRecord>, AnalyticsError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            let class_id = registry.id(&row.class).map_err(|_| AnalyticsError::UnknownClass(row.class.clone()))?;
            Ok(CountRecord {
                roi_id: row.roi_id,
                timestamp: row.timestamp,
                class_id,
                count: row.count,
            })
        })
        .collect()
}

/// Stable ascending sort by count.
pub fn sort_samples<L: Clone>(series: &[(L, u64)]) -> Vec<(L, u64)> {
    let mut out = series.to_vec();
    out.sort_by_key(|(_, c)| *c);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub roi_id: String,
    pub class_id: ClassId,
    points: Vec<(String, u64)>,
}

impl TimeSeries {
    /// Timestamps compare as strings and must be strictly increasing.
    pub fn new(roi_id: &str, class_id: ClassId, points: Vec<(String, u64)>) -> Result<Self, AnalyticsError> {
        if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(AnalyticsError::UnorderedTimestamps {
                roi_id: roi_id.to_string(),
                timestamp: w[1].0.clone(),
            });
        }
        Ok(Self {
            roi_id: roi_id.to_string(),
            class_id,
            points,
        })
    }

    pub fn points(&self) -> &[(String, u64)] {
        &self.points
    }

    /// One series per (roi, class) present in `records`. Timestamps listed
    /// in `timestamps` but missing for a class count as zero.
    pub fn from_records(records: &[CountRecord], timestamps: &BTreeMap<String, BTreeSet<String>>) -> Result<Vec<TimeSeries>, AnalyticsError> {
        let mut grouped: BTreeMap<(String, ClassId), BTreeMap<String, u64>> = BTreeMap::new();
        for r in records {
            *grouped
                .entry((r.roi_id.clone(), r.class_id))
                .or_default()
                .entry(r.timestamp.clone())
                .or_default() += r.count;
        }
        grouped
            .into_iter()
            .map(|((roi, class), mut pts)| {
                if let Some(all) = timestamps.get(&roi) {
                    for ts in all {
                        pts.entry(ts.clone()).or_insert(0);
                    }
                }
                TimeSeries::new(&roi, class, pts.into_iter().collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Increase,
    Decrease,
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationClass {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationThresholds {
    pub small_max: u64,
    pub medium_max: u64,
}

impl Default for VariationThresholds {
    fn default() -> Self {
        Self {
            small_max: 30,
            medium_max: 150,
        }
    }
}

impl VariationThresholds {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.small_max > self.medium_max {
            return Err(AnalyticsError::InvalidThresholds {
                small_max: self.small_max,
                medium_max: self.medium_max,
            });
        }
        Ok(())
    }

    pub fn classify(&self, delta: u64) -> VariationClass {
        if delta <= self.small_max {
            VariationClass::Small
        } else if delta <= self.medium_max {
            VariationClass::Medium
        } else {
            VariationClass::Large
        }
    }

    /// Sign of `last - first`, stable within `small_max`.
    pub fn trend(&self, first: u64, last: u64) -> Trend {
        if first.abs_diff(last) <= self.small_max {
            Trend::Stable
        } else if last > first {
            Trend::Increase
        } else {
            Trend::Decrease
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub roi_id: String,
    pub class_id: ClassId,
    pub samples: usize,
    pub min_count: u64,
    pub max_count: u64,
    pub delta: u64,
    pub variation_class: VariationClass,
    pub trend: Trend,
}

pub fn change_report(ts: &TimeSeries, thresholds: &VariationThresholds) -> Result<ChangeReport, AnalyticsError> {
    let counts: Vec<u64> = ts.points.iter().map(|(_, c)| *c).collect();
    if counts.len() < 2 {
        return Err(AnalyticsError::InsufficientHistory {
            roi_id: ts.roi_id.clone(),
            have: counts.len(),
        });
    }
    let min_count = *counts.iter().min().expect("non-empty");
    let max_count = *counts.iter().max().expect("non-empty");
    let delta = max_count - min_count;
    Ok(ChangeReport {
        roi_id: ts.roi_id.clone(),
        class_id: ts.class_id,
        samples: counts.len(),
        min_count,
        max_count,
        delta,
        variation_class: thresholds.classify(delta),
        trend: thresholds.trend(counts[0], counts[counts.len() - 1]),
    })
}

/// Change reports for many series in parallel, input order kept.
pub fn change_reports(series: &[TimeSeries], thresholds: &VariationThresholds) -> Vec<Result<ChangeReport, AnalyticsError>> {
    series.par_iter().map(|s| change_report(s, thresholds)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorRule {
    /// Matches [`RoiDescriptor::tag_group`], e.g. `shop=supermarket`.
    pub tag_group: String,
    pub expected_trend: Trend,
    pub alert_on: BTreeSet<Trend>,
}

impl IndicatorRule {
    pub fn new(tag_group: &str, expected_trend: Trend, alert_on: impl IntoIterator<Item = Trend>) -> Result<Self, AnalyticsError> {
        let rule = Self {
            tag_group: tag_group.to_string(),
            expected_trend,
            alert_on: alert_on.into_iter().collect(),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.alert_on.contains(&self.expected_trend) {
            return Err(AnalyticsError::InvalidRule {
                tag_group: self.tag_group.clone(),
            });
        }
        Ok(())
    }

    /// Supermarkets steady, schools emptying, car rentals filling up.
    pub fn defaults() -> Vec<IndicatorRule> {
        vec![
            Self::new("shop=supermarket", Trend::Stable, [Trend::Increase, Trend::Decrease]).expect("valid"),
            Self::new("amenity=school", Trend::Decrease, [Trend::Increase]).expect("valid"),
            Self::new("amenity=car_rental", Trend::Increase, [Trend::Decrease]).expect("valid"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorStatus {
    Ok,
    Alert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorOutcome {
    pub roi_id: String,
    pub class_id: ClassId,
    pub observed: Trend,
    pub status: IndicatorStatus,
    /// Tag group of the rule applied, if any.
    pub rule: Option<String>,
}

/// One outcome per report. A report alerts when its ROI's rule lists the
/// observed trend; ROIs without a descriptor or rule are ok.
pub fn evaluate_indicators(reports: &[ChangeReport], rois: &[RoiDescriptor], rules: &[IndicatorRule]) -> Vec<IndicatorOutcome> {
    let group_of: BTreeMap<&str, &str> = rois.iter().map(|r| (r.roi_id.as_str(), r.tag_group.as_str())).collect();
    reports
        .iter()
        .map(|rep| {
            let rule = group_of
                .get(rep.roi_id.as_str())
                .and_then(|g| rules.iter().find(|r| r.tag_group == *g));
            let alert = rule.is_some_and(|r| r.alert_on.contains(&rep.trend));
            IndicatorOutcome {
                roi_id: rep.roi_id.clone(),
                class_id: rep.class_id,
                observed: rep.trend,
                status: if alert { IndicatorStatus::Alert } else { IndicatorStatus::Ok },
                rule: rule.map(|r| r.tag_group.clone()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub geo: GeoBox,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 at the northern edge.
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        cell_center(&self.geo, self.rows, self.cols, row, col)
    }

    /// Linear min-max stretch to 8-bit grayscale; a constant grid is black.
    pub fn to_raster(&self) -> Raster {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels = self
            .values
            .iter()
            .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        Raster::new(self.cols, self.rows, 1, pixels).expect("grid shape")
    }
}

fn cell_center(geo: &GeoBox, rows: usize, cols: usize, row: usize, col: usize) -> GeoPoint {
    let dlat = (geo.max_lat - geo.min_lat) / rows as f64;
    let dlon = (geo.max_lon - geo.min_lon) / cols as f64;
    GeoPoint {
        lat: geo.max_lat - (row as f64 + 0.5) * dlat,
        lon: geo.min_lon + (col as f64 + 0.5) * dlon,
    }
}

/// Inverse-distance-weighted interpolation evaluated at cell centers.
/// A cell within 1e-9 m of a sample takes that sample's value.
pub fn idw_heatmap(samples: &[(GeoPoint, f64)], geo: &GeoBox, rows: usize, cols: usize, power: f64) -> Result<HeatmapGrid, AnalyticsError> {
    if samples.is_empty() {
        return Err(AnalyticsError::NoSamples);
    }
    if rows == 0 || cols == 0 {
        return Err(AnalyticsError::InvalidHeatmap(format!("grid {rows}x{cols}")));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(AnalyticsError::InvalidHeatmap(format!("power {power}")));
    }
    if samples.iter().any(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(AnalyticsError::InvalidHeatmap("sample values must be finite and non-negative".into()));
    }
    geo.validate().map_err(|e| AnalyticsError::InvalidHeatmap(e.to_string()))?;
    let values = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let c = cell_center(geo, rows, cols, i / cols, i % cols);
            let (mut num, mut den) = (0.0, 0.0);
            for (p, v) in samples {
                let d = equirect_distance_m(&c, p);
                if d < 1e-9 {
                    return *v;
                }
                let w = d.powf(-power);
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect();
    Ok(HeatmapGrid {
        geo: *geo,
        rows,
        cols,
        values,
    })
}

//! OpenStreetMap XML ingestion and strategic-location sampling.
//!
//! Only the `node`/`way`/`tag`/`nd` subset of OSM XML v0.6 is read.
//! Relations and any other element are skipped.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoBox, GeoError, GeoPoint};

/// Expansion margin used when a configuration does not set one.
pub const DEFAULT_EXPANSION_M: f64 = 100.0;

/// Minimum number of boundary points for a feature to delimit an area.
pub const MIN_CONTOUR_POINTS: usize = 3;

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("malformed OSM XML at byte {offset}: {message}")]
    ParseFailure { offset: u64, message: String },
    #[error("tag filter is empty")]
    EmptyFilter,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Node,
    Way,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmFeature {
    pub id: i64,
    pub kind: FeatureKind,
    pub tags: Vec<(String, String)>,
    pub boundary: Vec<GeoPoint>,
}

impl OsmFeature {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Result of parsing one extract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmExtract {
    pub features: Vec<OsmFeature>,
    /// `<nd ref>` entries that named a node absent from the extract.
    pub unresolved_refs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagFilter {
    pub entries: Vec<(String, String)>,
}

impl TagFilter {
    pub fn new<K: Into<String>, V: Into<String>>(entries: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            entries: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    /// Places with a high circulation of people.
    pub fn strategic_default() -> Self {
        Self::new([
            ("shop", "supermarket"),
            ("aeroway", "aerodrome"),
            ("amenity", "hospital"),
            ("amenity", "university"),
            ("amenity", "school"),
            ("shop", "mall"),
            ("amenity", "place_of_worship"),
        ])
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First tag of `feature` (in the feature's tag order) that the filter
    /// accepts.
    pub fn matched<'a>(&self, feature: &'a OsmFeature) -> Option<&'a (String, String)> {
        feature
            .tags
            .iter()
            .find(|(k, v)| self.entries.iter().any(|(fk, fv)| fk == k && fv == v))
    }
}

impl Default for TagFilter {
    fn default() -> Self {
        Self::strategic_default()
    }
}

/// Expanded bounding box around one strategic location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiDescriptor {
    pub roi_id: String,
    #[serde(rename = "feature")]
    pub source_feature: i64,
    pub tag_group: String,
    #[serde(flatten)]
    pub geo: GeoBox,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub rois: Vec<RoiDescriptor>,
    pub skipped_no_contour: usize,
    pub skipped_outside: usize,
}

struct PendingWay {
    id: i64,
    refs: Vec<i64>,
    tags: Vec<(String, String)>,
}

enum Current {
    None,
    Node(usize),
    Way(PendingWay),
}

enum Item {
    Node(usize),
    Way(PendingWay),
}

fn parse_failure(offset: u64, message: impl Into<String>) -> OsmError {
    OsmError::ParseFailure {
        offset,
        message: message.into(),
    }
}

fn attrs(e: &BytesStart<'_>, offset: u64) -> Result<HashMap<String, String>, OsmError> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| parse_failure(offset, err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a
            .unescape_value()
            .map_err(|err| parse_failure(offset, err.to_string()))?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str, elem: &str, offset: u64) -> Result<T, OsmError> {
    let raw = map
        .get(key)
        .ok_or_else(|| parse_failure(offset, format!("<{elem}> without '{key}'")))?;
    raw.parse()
        .map_err(|_| parse_failure(offset, format!("<{elem}> has bad '{key}' value {raw:?}")))
}

/// Parse an OSM XML extract into features.
///
/// Every way becomes a feature whose boundary follows its `<nd ref>` list in
/// document order; tagged nodes become single-point features. Way references
/// are resolved after the whole document is read, so node order does not
/// matter.
pub fn parse_osm_xml(bytes: &[u8]) -> Result<OsmExtract, OsmError> {
    let mut reader = Reader::from_reader(bytes);
    let mut buf = Vec::new();

    let mut nodes: HashMap<i64, GeoPoint> = HashMap::new();
    let mut node_tags: Vec<(i64, GeoPoint, Vec<(String, String)>)> = Vec::new();
    let mut items: Vec<Item> = Vec::new();
    let mut current = Current::None;
    let mut depth = 0usize;

    loop {
        let offset = reader.buffer_position();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| parse_failure(reader.error_position(), e.to_string()))?;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                if !is_empty {
                    depth += 1;
                }
                match e.name().as_ref() {
                    b"node" => {
                        let a = attrs(e, offset)?;
                        let id: i64 = required(&a, "id", "node", offset)?;
                        let lat: f64 = required(&a, "lat", "node", offset)?;
                        let lon: f64 = required(&a, "lon", "node", offset)?;
                        let p = GeoPoint::new(lat, lon).map_err(|err| parse_failure(offset, err.to_string()))?;
                        nodes.insert(id, p);
                        node_tags.push((id, p, Vec::new()));
                        let idx = node_tags.len() - 1;
                        items.push(Item::Node(idx));
                        if !is_empty {
                            current = Current::Node(idx);
                        }
                    }
                    b"way" => {
                        let a = attrs(e, offset)?;
                        let id: i64 = required(&a, "id", "way", offset)?;
                        let way = PendingWay {
                            id,
                            refs: Vec::new(),
                            tags: Vec::new(),
                        };
                        if is_empty {
                            items.push(Item::Way(way));
                        } else {
                            current = Current::Way(way);
                        }
                    }
                    b"tag" => {
                        let a = attrs(e, offset)?;
                        let k: String = required(&a, "k", "tag", offset)?;
                        let v: String = required(&a, "v", "tag", offset)?;
                        match &mut current {
                            Current::Node(idx) => node_tags[*idx].2.push((k, v)),
                            Current::Way(w) => w.tags.push((k, v)),
                            Current::None => {}
                        }
                    }
                    b"nd" => {
                        if let Current::Way(w) = &mut current {
                            let a = attrs(e, offset)?;
                            w.refs.push(required(&a, "ref", "nd", offset)?);
                        }
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => {
                depth = depth.saturating_sub(1);
                match e.name().as_ref() {
                    b"node" => current = Current::None,
                    b"way" => {
                        if let Current::Way(w) = std::mem::replace(&mut current, Current::None) {
                            items.push(Item::Way(w));
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        buf.clear();
    }
    if depth != 0 {
        return Err(parse_failure(reader.buffer_position(), "unexpected end of document"));
    }

    let mut unresolved_refs = 0;
    let mut features = Vec::new();
    for item in items {
        match item {
            Item::Node(idx) => {
                let (id, p, tags) = &node_tags[idx];
                if !tags.is_empty() {
                    features.push(OsmFeature {
                        id: *id,
                        kind: FeatureKind::Node,
                        tags: tags.clone(),
                        boundary: vec![*p],
                    });
                }
            }
            Item::Way(w) => {
                let mut boundary = Vec::with_capacity(w.refs.len());
                for r in &w.refs {
                    match nodes.get(r) {
                        Some(p) => boundary.push(*p),
                        None => unresolved_refs += 1,
                    }
                }
                features.push(OsmFeature {
                    id: w.id,
                    kind: FeatureKind::Way,
                    tags: w.tags,
                    boundary,
                });
            }
        }
    }
    if unresolved_refs > 0 {
        log::warn!("{unresolved_refs} way node references could not be resolved");
    }
    Ok(OsmExtract {
        features,
        unresolved_refs,
    })
}

/// Keep the features carrying at least one tag listed in `filter`.
pub fn filter_strategic(features: &[OsmFeature], filter: &TagFilter) -> Result<Vec<OsmFeature>, OsmError> {
    if filter.is_empty() {
        return Err(OsmError::EmptyFilter);
    }
    Ok(features
        .iter()
        .filter(|f| filter.matched(f).is_some())
        .cloned()
        .collect())
}

/// Turn strategic features inside `aoi` into ROI descriptors.
///
/// Features need a boundary contour of at least [`MIN_CONTOUR_POINTS`]
/// points. Overlapping locations are all emitted.
pub fn sample_locations(
    aoi: &GeoBox,
    features: &[OsmFeature],
    filter: &TagFilter,
    expansion_m: f64,
) -> Result<SampleOutcome, OsmError> {
    if filter.is_empty() {
        return Err(OsmError::EmptyFilter);
    }
    if !expansion_m.is_finite() || expansion_m < 0.0 {
        return Err(GeoError::NegativeDistance(expansion_m).into());
    }
    let mut out = SampleOutcome::default();
    for f in features {
        let Some((k, v)) = filter.matched(f) else {
            continue;
        };
        if f.boundary.len() < MIN_CONTOUR_POINTS {
            out.skipped_no_contour += 1;
            continue;
        }
        let raw = geo::enclosing_geobox(&f.boundary)?;
        if !raw.intersects(aoi) {
            out.skipped_outside += 1;
            continue;
        }
        let tag_group = format!("{k}={v}");
        out.rois.push(RoiDescriptor {
            roi_id: format!("{tag_group}/{}", f.id),
            source_feature: f.id,
            tag_group,
            geo: geo::expand_geobox(&raw, expansion_m)?,
        });
    }
    Ok(out)
}

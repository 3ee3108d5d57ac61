//! Python bindings: geometry, tiling, fusion, metrics, analytics and OSM
//! sampling over plain tuples and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use roicount::analytics::{self, TimeSeries, VariationThresholds};
use roicount::classes::ClassId;
use roicount::evaluation::{self, Annotation};
use roicount::geo::{self, GeoBox, GeoPoint, PixelBox};
use roicount::merge::{self, MergeConfig};
use roicount::osm::{self, TagFilter};
use roicount::tiler::{self, TileSpec};

type Box4 = (f64, f64, f64, f64);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pixel_box(b: Box4) -> PyResult<PixelBox> {
    PixelBox::new(b.0, b.1, b.2, b.3).map_err(value_err)
}

fn geo_box(b: Box4) -> PyResult<GeoBox> {
    GeoBox::new(b.0, b.1, b.2, b.3).map_err(value_err)
}

fn geo_tuple(g: &GeoBox) -> Box4 {
    (g.min_lat, g.min_lon, g.max_lat, g.max_lon)
}

/// A scored, classified pixel box.
#[pyclass(name = "Region", module = "roicount_py", from_py_object)]
#[derive(Clone)]
struct PyRegion {
    inner: roicount::Region,
}

#[pymethods]
impl PyRegion {
    #[new]
    fn new(class_id: u32, x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> PyResult<Self> {
        let inner = roicount::Region::new(ClassId(class_id), pixel_box((x1, y1, x2, y2))?, score).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn class_id(&self) -> u32 {
        self.inner.class_id.0
    }

    #[getter]
    fn bbox(&self) -> Box4 {
        let b = self.inner.bbox;
        (b.x1, b.y1, b.x2, b.y2)
    }

    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }

    fn __repr__(&self) -> String {
        let (x1, y1, x2, y2) = self.bbox();
        format!("Region(class_id={}, x1={x1}, y1={y1}, x2={x2}, y2={y2}, score={})", self.class_id(), self.score())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn iou(a: Box4, b: Box4) -> PyResult<f64> {
    Ok(geo::iou(&pixel_box(a)?, &pixel_box(b)?))
}

/// Bounding box `(min_lat, min_lon, max_lat, max_lon)` of `(lat, lon)` points.
#[pyfunction]
fn enclosing_geobox(points: Vec<(f64, f64)>) -> PyResult<Box4> {
    let pts = points
        .into_iter()
        .map(|(lat, lon)| GeoPoint::new(lat, lon))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    Ok(geo_tuple(&geo::enclosing_geobox(&pts).map_err(value_err)?))
}

#[pyfunction]
fn expand_geobox(b: Box4, meters: f64) -> PyResult<Box4> {
    Ok(geo_tuple(&geo::expand_geobox(&geo_box(b)?, meters).map_err(value_err)?))
}

#[pyfunction]
fn plan_axis(dim: usize, block: usize, overlap: usize) -> PyResult<Vec<usize>> {
    if block == 0 || overlap >= block {
        return Err(PyValueError::new_err("need block > overlap >= 0"));
    }
    Ok(tiler::plan_axis(dim, block, overlap))
}

/// Tile origins `(x, y)` in row-major order.
#[pyfunction]
#[pyo3(signature = (width, height, block=300, overlap=0, scale=1.0))]
fn plan_tiles(width: usize, height: usize, block: usize, overlap: usize, scale: f64) -> PyResult<Vec<(usize, usize)>> {
    let spec = TileSpec::new(block, overlap, scale).ok_or_else(|| PyValueError::new_err("invalid tile spec"))?;
    Ok(tiler::plan_tiles(width, height, &spec).tiles.iter().map(|t| (t.x, t.y)).collect())
}

#[pyfunction]
fn map_to_roi(b: Box4, offset: (usize, usize), scale: f64) -> PyResult<Box4> {
    if !(scale > 0.0) {
        return Err(PyValueError::new_err("scale must be positive"));
    }
    let m = tiler::map_to_roi(&pixel_box(b)?, offset, scale);
    Ok((m.x1, m.y1, m.x2, m.y2))
}

#[pyfunction]
#[pyo3(signature = (regions, sigma=merge::DEFAULT_SIGMA, class_aware=true))]
fn weighted_nms(regions: Vec<PyRegion>, sigma: f64, class_aware: bool) -> PyResult<Vec<PyRegion>> {
    let cfg = MergeConfig::new(sigma, class_aware).map_err(value_err)?;
    let input: Vec<roicount::Region> = regions.into_iter().map(|r| r.inner).collect();
    let out = merge::weighted_nms(&input, &cfg).map_err(value_err)?;
    Ok(out.into_iter().map(|inner| PyRegion { inner }).collect())
}

/// AP of one class pooled over images. Each image is a pair of
/// (detections, ground-truth boxes); `None` without ground truth.
#[pyfunction]
#[pyo3(signature = (images, iou_threshold=evaluation::DEFAULT_MATCH_IOU))]
fn average_precision(images: Vec<(Vec<PyRegion>, Vec<Box4>)>, iou_threshold: f64) -> PyResult<Option<f64>> {
    let mut sets = Vec::with_capacity(images.len());
    for (dets, gts) in images {
        let d: Vec<roicount::Region> = dets
            .into_iter()
            .map(|r| roicount::Region {
                class_id: ClassId(0),
                ..r.inner
            })
            .collect();
        let g = gts
            .into_iter()
            .map(|b| {
                Ok(Annotation {
                    class_id: ClassId(0),
                    bbox: pixel_box(b)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        sets.push(evaluation::match_detections(&d, &g, iou_threshold));
    }
    Ok(evaluation::average_precision(&sets))
}

/// MAPE in percent over `(ground_truth, detected)` count pairs.
#[pyfunction]
#[pyo3(signature = (pairs, min_annotations=evaluation::DEFAULT_MIN_ANNOTATIONS))]
fn mape(pairs: Vec<(u64, u64)>, min_annotations: u64) -> PyResult<f64> {
    evaluation::mape(&pairs, min_annotations).map_err(value_err)
}

/// Change summary of a chronological count series.
#[pyfunction]
#[pyo3(signature = (counts, small_max=30, medium_max=150))]
fn change_report<'py>(py: Python<'py>, counts: Vec<u64>, small_max: u64, medium_max: u64) -> PyResult<Bound<'py, PyDict>> {
    let t = VariationThresholds { small_max, medium_max };
    t.validate().map_err(value_err)?;
    let pts = counts.iter().enumerate().map(|(i, c)| (format!("{i:012}"), *c)).collect();
    let series = TimeSeries::new("series", ClassId(0), pts).map_err(value_err)?;
    let r = analytics::change_report(&series, &t).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("min_count", r.min_count)?;
    d.set_item("max_count", r.max_count)?;
    d.set_item("delta", r.delta)?;
    d.set_item("variation_class", format!("{:?}", r.variation_class).to_lowercase())?;
    d.set_item("trend", format!("{:?}", r.trend).to_lowercase())?;
    Ok(d)
}

#[pyfunction]
fn sort_samples(samples: Vec<(String, u64)>) -> Vec<(String, u64)> {
    analytics::sort_samples(&samples)
}

/// IDW grid (rows of values, north first) from `(lat, lon, value)` samples.
#[pyfunction]
#[pyo3(signature = (samples, geo, rows, cols, power=analytics::DEFAULT_IDW_POWER))]
fn idw_heatmap(samples: Vec<(f64, f64, f64)>, geo: Box4, rows: usize, cols: usize, power: f64) -> PyResult<Vec<Vec<f64>>> {
    let pts = samples
        .into_iter()
        .map(|(lat, lon, v)| GeoPoint::new(lat, lon).map(|p| (p, v)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let grid = analytics::idw_heatmap(&pts, &geo_box(geo)?, rows, cols, power).map_err(value_err)?;
    Ok(grid.values.chunks(grid.cols).map(<[f64]>::to_vec).collect())
}

/// ROIs around strategic features of an OSM XML document, using the
/// default tag list. Each ROI is a dict with id, feature, tag group and box.
#[pyfunction]
#[pyo3(signature = (xml, aoi, expand_m=osm::DEFAULT_EXPANSION_M))]
fn sample_locations<'py>(py: Python<'py>, xml: &[u8], aoi: Box4, expand_m: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let extract = osm::parse_osm_xml(xml).map_err(value_err)?;
    let filter = TagFilter::strategic_default();
    let strategic = osm::filter_strategic(&extract.features, &filter).map_err(value_err)?;
    let outcome = osm::sample_locations(&geo_box(aoi)?, &strategic, &filter, expand_m).map_err(value_err)?;
    outcome
        .rois
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("roi_id", &r.roi_id)?;
            d.set_item("feature", r.source_feature)?;
            d.set_item("tag_group", &r.tag_group)?;
            d.set_item("geo", geo_tuple(&r.geo))?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn roicount_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegion>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(enclosing_geobox, m)?)?;
    m.add_function(wrap_pyfunction!(expand_geobox, m)?)?;
    m.add_function(wrap_pyfunction!(plan_axis, m)?)?;
    m.add_function(wrap_pyfunction!(plan_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(map_to_roi, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_nms, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(change_report, m)?)?;
    m.add_function(wrap_pyfunction!(sort_samples, m)?)?;
    m.add_function(wrap_pyfunction!(idw_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(sample_locations, m)?)?;
    Ok(())
}

use std::collections::BTreeSet;

use proptest::prelude::*;

use roicount::geo::enclosing_geobox;
use roicount::osm::{filter_strategic, parse_osm_xml, sample_locations, FeatureKind, OsmFeature, TagFilter};
use roicount::{GeoBox, GeoPoint};

const TAGS: [(&str, &str); 5] = [
    ("shop", "supermarket"),
    ("amenity", "school"),
    ("amenity", "hospital"),
    ("shop", "bakery"),
    ("highway", "residential"),
];

fn feature() -> impl Strategy<Value = OsmFeature> {
    (
        prop::collection::vec(0usize..TAGS.len(), 0..3),
        -1.0f64..1.0,
        -1.0f64..1.0,
        prop::collection::vec((0.0f64..0.01, 0.0f64..0.01), 1..6),
    )
        .prop_map(|(tags, lat, lon, offsets)| OsmFeature {
            id: 0,
            kind: if offsets.len() == 1 { FeatureKind::Node } else { FeatureKind::Way },
            tags: tags.into_iter().map(|i| (TAGS[i].0.to_string(), TAGS[i].1.to_string())).collect(),
            boundary: offsets
                .into_iter()
                .map(|(a, b)| GeoPoint::new(lat + a, lon + b).unwrap())
                .collect(),
        })
}

fn features() -> impl Strategy<Value = Vec<OsmFeature>> {
    prop::collection::vec(feature(), 0..30).prop_map(|mut v| {
        for (i, f) in v.iter_mut().enumerate() {
            f.id = i as i64 + 1;
        }
        v
    })
}

fn aoi() -> GeoBox {
    GeoBox::new(-0.5, -0.5, 0.5, 0.5).unwrap()
}

fn sampled_ids(features: &[OsmFeature], filter: &TagFilter) -> BTreeSet<i64> {
    sample_locations(&aoi(), features, filter, 100.0)
        .unwrap()
        .rois
        .iter()
        .map(|r| r.source_feature)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rois_contain_their_contour_and_match_the_filter(features in features(), expand in 0.0f64..500.0) {
        let filter = TagFilter::new(TAGS[..3].iter().copied());
        let out = sample_locations(&aoi(), &features, &filter, expand).unwrap();
        prop_assert!(out.rois.len() + out.skipped_no_contour + out.skipped_outside <= features.len());
        for roi in &out.rois {
            let f = features.iter().find(|f| f.id == roi.source_feature).unwrap();
            prop_assert!(roi.geo.contains_box(&enclosing_geobox(&f.boundary).unwrap()));
            prop_assert!(roi.geo.intersects(&aoi()));
            let (k, v) = roi.tag_group.split_once('=').unwrap();
            prop_assert!(filter.entries.iter().any(|(fk, fv)| fk == k && fv == v));
            prop_assert!(f.tags.iter().any(|(fk, fv)| fk == k && fv == v));
        }
    }

    #[test]
    fn filters_combine_by_union(features in features()) {
        let f1 = TagFilter::new([TAGS[0]]);
        let f2 = TagFilter::new([TAGS[1], TAGS[2]]);
        let both = TagFilter::new(TAGS[..3].iter().copied());
        let mut union = sampled_ids(&features, &f1);
        union.extend(sampled_ids(&features, &f2));
        prop_assert_eq!(sampled_ids(&features, &both), union);
    }

    #[test]
    fn filtering_keeps_only_tagged_features(features in features()) {
        let filter = TagFilter::new([TAGS[3]]);
        let bakery = |f: &OsmFeature| f.tags.iter().any(|(k, v)| k == "shop" && v == "bakery");
        let kept = filter_strategic(&features, &filter).unwrap();
        prop_assert!(kept.len() <= features.len());
        prop_assert!(kept.iter().all(bakery));
        prop_assert_eq!(kept.len(), features.iter().filter(|f| bakery(f)).count());
    }
}

#[test]
fn parsed_way_becomes_an_expanded_roi() {
    let doc = r#"<osm>
      <node id="1" lat="0.0" lon="0.0"/><node id="2" lat="0.0" lon="0.001"/>
      <node id="3" lat="0.001" lon="0.001"/><node id="4" lat="0.001" lon="0.0"/>
      <node id="9" lat="0.2" lon="0.2"><tag k="shop" v="supermarket"/></node>
      <way id="5"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="amenity" v="school"/></way>
    </osm>"#;
    let ex = parse_osm_xml(doc.as_bytes()).unwrap();
    let filter = TagFilter::strategic_default();
    let strategic = filter_strategic(&ex.features, &filter).unwrap();
    let out = sample_locations(&aoi(), &strategic, &filter, 111.32).unwrap();
    // the tagged node has no contour
    assert_eq!(out.skipped_no_contour, 1);
    assert_eq!(out.rois.len(), 1);
    let roi = &out.rois[0];
    assert_eq!(roi.roi_id, "amenity=school/5");
    // 111.32 m is a thousandth of a degree at the equator
    assert!((roi.geo.min_lat + 0.001).abs() < 1e-9);
    assert!((roi.geo.max_lon - 0.002).abs() < 1e-9);
}

#[test]
fn empty_filter_is_rejected() {
    let filter = TagFilter::new(Vec::<(String, String)>::new());
    assert!(sample_locations(&aoi(), &[], &filter, 100.0).is_err());
}

use std::collections::HashMap;

use proptest::prelude::*;

use roicount::classes::{ClassRegistry, SMALL_CAR};
use roicount::detector::{image_key, run_detector, table_one_detectors, DetectorConfig, MockBackend, RunOptions};
use roicount::evaluation::Annotation;
use roicount::synth::{generate_scene, NoiseModel, SceneSpec};
use roicount::{GeoPoint, GeoTransform, Region, RoiImage};

fn scene(seed: u64, width: usize, height: usize) -> (RoiImage, Vec<Annotation>) {
    let car = SMALL_CAR.to_string();
    let spec = SceneSpec {
        width,
        height,
        objects_per_class: [(car.clone(), (20, 40))].into(),
        object_size: [(car, ((8, 14), (6, 10)))].into(),
        min_separation: 2.0,
        timestamps: Vec::new(),
    };
    let s = generate_scene(seed, &spec, &ClassRegistry::xview()).unwrap();
    let img = RoiImage {
        roi_id: "roi".into(),
        raster: s.raster,
        transform: GeoTransform::new(GeoPoint::new(10.0, 10.0).unwrap(), 0.3, 0.3).unwrap(),
        timestamp: "t".into(),
    };
    (img, s.annotations)
}

fn noisy_mock(truth: Vec<Annotation>, seed: u64) -> MockBackend {
    let noise = NoiseModel {
        miss_rate: 0.1,
        fp_per_megapixel: 40.0,
        jitter_sigma: 1.0,
        score_tp: (0.2, 1.0),
        ..NoiseModel::default()
    };
    MockBackend::new(HashMap::from([(image_key("roi", "t"), truth)]))
        .with_noise(noise, seed)
        .with_min_visible(0.3)
}

fn passes() -> Vec<DetectorConfig> {
    table_one_detectors("m", "m")
}

fn run_in_pool(threads: usize, img: &RoiImage, cfg: &DetectorConfig, mock: &MockBackend, opts: &RunOptions) -> Vec<Region> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_detector(img, cfg, mock, opts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_does_not_depend_on_worker_count(seed in any::<u64>(), w in 200usize..700, h in 200usize..700) {
        let (img, truth) = scene(seed, w, h);
        let mock = noisy_mock(truth, seed);
        for cfg in passes() {
            let one = run_in_pool(1, &img, &cfg, &mock, &RunOptions::default());
            let four = run_in_pool(4, &img, &cfg, &mock, &RunOptions::default());
            prop_assert_eq!(one, four);
        }
    }

    #[test]
    fn regions_lie_inside_the_roi(seed in any::<u64>(), w in 200usize..700, h in 200usize..700) {
        let (img, truth) = scene(seed, w, h);
        let mock = noisy_mock(truth, seed);
        for cfg in passes() {
            for r in run_detector(&img, &cfg, &mock, &RunOptions::default()).unwrap() {
                prop_assert!(r.bbox.is_valid() && r.bbox.area() > 0.0);
                prop_assert!(r.bbox.x1 >= 0.0 && r.bbox.y1 >= 0.0);
                prop_assert!(r.bbox.x2 <= w as f64 && r.bbox.y2 <= h as f64);
                prop_assert!(r.score >= cfg.threshold);
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_removes_regions(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let (img, truth) = scene(seed, 500, 400);
        let mock = noisy_mock(truth, seed);
        for cfg in passes() {
            let base = run_detector(&img, &cfg, &mock, &RunOptions::default()).unwrap();
            let opts = RunOptions { threshold_override: Some(t), ..RunOptions::default() };
            let raised = run_detector(&img, &cfg, &mock, &opts).unwrap();
            let want: Vec<Region> = base.iter().filter(|r| r.score >= t).copied().collect();
            prop_assert_eq!(raised, want);
        }
    }
}

#[test]
fn override_never_lowers_a_pass_threshold() {
    let cfg = &passes()[0];
    let opts = RunOptions {
        threshold_override: Some(0.01),
        ..RunOptions::default()
    };
    assert_eq!(opts.threshold_for(cfg), cfg.threshold);
    let opts = RunOptions {
        threshold_override: Some(0.9),
        ..RunOptions::default()
    };
    assert_eq!(opts.threshold_for(cfg), 0.9);
}

//! Ground truth handling and detection/count metrics: greedy matching,
//! all-point interpolated average precision pooled across images, per size
//! group means and the mean absolute percentage error of object counts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassError, ClassId, ClassRegistry, SizeGroup, SMALL_CAR};
use crate::detector::Region;
use crate::geo::{iou, PixelBox};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
/// Only images with more ground-truth objects than this enter the MAPE.
pub const DEFAULT_MIN_ANNOTATIONS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no image has more than {0} annotations")]
    NoEligibleImages(u64),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error(transparent)]
    Class(#[from] ClassError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: ClassId,
    pub bbox: PixelBox,
}

/// Annotation file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub class: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl AnnotationRecord {
    pub fn new(image_id: &str, a: &Annotation, registry: &ClassRegistry) -> Self {
        Self {
            image_id: image_id.to_string(),
            class: registry.name(a.class_id).unwrap_or("?").to_string(),
            x1: a.bbox.x1,
            y1: a.bbox.y1,
            x2: a.bbox.x2,
            y2: a.bbox.y2,
        }
    }

    pub fn to_annotation(&self, registry: &ClassRegistry) -> Result<Annotation, EvalError> {
        let bbox = PixelBox::new(self.x1, self.y1, self.x2, self.y2)
            .map_err(|e| EvalError::InvalidAnnotation(format!("{}: {e}", self.image_id)))?;
        Ok(Annotation {
            class_id: registry.id(&self.class)?,
            bbox,
        })
    }
}

/// Outcome of matching one class in one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    /// `(detection index, score)`
    pub true_positives: Vec<(usize, f64)>,
    pub false_positives: Vec<(usize, f64)>,
    pub false_negatives: usize,
}

impl MatchSet {
    pub fn ground_truth_count(&self) -> usize {
        self.true_positives.len() + self.false_negatives
    }
}

/// Greedy matching in descending score order (ties by input index). A
/// detection is a true positive when the unmatched ground truth it overlaps
/// most has IoU above `iou_threshold`; that ground truth is then consumed.
pub fn match_detections(dets: &[Region], gts: &[Annotation], iou_threshold: f64) -> MatchSet {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut out = MatchSet::default();
    for i in order {
        let d = &dets[i];
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !used[*g])
            .map(|(g, gt)| (g, iou(&d.bbox, &gt.bbox)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v > iou_threshold => {
                used[g] = true;
                out.true_positives.push((i, d.score));
            }
            _ => out.false_positives.push((i, d.score)),
        }
    }
    out.false_negatives = used.iter().filter(|u| !**u).count();
    out
}

/// Precision/recall after each distinct score level, highest score first.
pub fn pr_curve(sets: &[MatchSet]) -> Vec<(f64, f64)> {
    let n_gt: usize = sets.iter().map(MatchSet::ground_truth_count).sum();
    let mut scored: Vec<(f64, bool)> = sets
        .iter()
        .flat_map(|s| {
            s.true_positives
                .iter()
                .map(|&(_, sc)| (sc, true))
                .chain(s.false_positives.iter().map(|&(_, sc)| (sc, false)))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let level = scored[i].0;
        while i < scored.len() && scored[i].0 == level {
            tp += scored[i].1 as usize;
            seen += 1;
            i += 1;
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        curve.push((recall, tp as f64 / seen as f64));
    }
    curve
}

/// All-point interpolated AP over the pooled matches of one class.
/// `None` when the class has no ground truth.
pub fn average_precision(sets: &[MatchSet]) -> Option<f64> {
    let n_gt: usize = sets.iter().map(MatchSet::ground_truth_count).sum();
    if n_gt == 0 {
        return None;
    }
    let curve = pr_curve(sets);
    let mut best_after = vec![0.0f64; curve.len() + 1];
    for k in (0..curve.len()).rev() {
        best_after[k] = best_after[k + 1].max(curve[k].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(recall, _)) in curve.iter().enumerate() {
        ap += (recall - prev_recall) * best_after[k];
        prev_recall = recall;
    }
    Some(ap.clamp(0.0, 1.0))
}

/// Mean AP per size group plus the overall mean, laid out like a
/// leaderboard row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupScores {
    #[serde(rename = "Small")]
    pub small: Option<f64>,
    #[serde(rename = "Medium")]
    pub medium: Option<f64>,
    #[serde(rename = "Large")]
    pub large: Option<f64>,
    #[serde(rename = "Score")]
    pub overall: Option<f64>,
}

impl GroupScores {
    pub fn get(&self, group: SizeGroup) -> Option<f64> {
        match group {
            SizeGroup::Small => self.small,
            SizeGroup::Medium => self.medium,
            SizeGroup::Large => self.large,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Unweighted means of per-class AP within each group and overall.
pub fn map_by_group(per_class: &BTreeMap<ClassId, f64>, registry: &ClassRegistry) -> GroupScores {
    let pick = |g: SizeGroup| -> Vec<f64> {
        per_class
            .iter()
            .filter(|(c, _)| registry.group(**c) == Some(g))
            .map(|(_, ap)| *ap)
            .collect()
    };
    GroupScores {
        small: mean(&pick(SizeGroup::Small)),
        medium: mean(&pick(SizeGroup::Medium)),
        large: mean(&pick(SizeGroup::Large)),
        overall: mean(&per_class.values().copied().collect::<Vec<_>>()),
    }
}

/// Mean absolute percentage error (in percent) over `(ground truth,
/// detected)` count pairs whose ground truth exceeds `min_annotations`.
pub fn mape(pairs: &[(u64, u64)], min_annotations: u64) -> Result<f64, EvalError> {
    let kept: Vec<f64> = pairs
        .iter()
        .filter(|(gt, _)| *gt > min_annotations)
        .map(|&(gt, det)| (det as f64 - gt as f64).abs() / gt as f64)
        .collect();
    mean(&kept)
        .map(|m| 100.0 * m)
        .ok_or(EvalError::NoEligibleImages(min_annotations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub min_annotations: u64,
    /// Class whose per-image counts enter the MAPE.
    pub count_class: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_MATCH_IOU,
            min_annotations: DEFAULT_MIN_ANNOTATIONS,
            count_class: SMALL_CAR.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub images: usize,
    pub iou_threshold: f64,
    /// AP per class name, for classes with ground truth.
    pub per_class_ap: BTreeMap<String, f64>,
    pub groups: GroupScores,
    pub count_class: String,
    /// Percent; `None` when no image passes the annotation filter.
    pub mape: Option<f64>,
    pub mape_images: usize,
}

/// Evaluate detections against annotations, both keyed by image id.
pub fn evaluate(
    detections: &BTreeMap<String, Vec<Region>>,
    annotations: &BTreeMap<String, Vec<Annotation>>,
    registry: &ClassRegistry,
    cfg: &EvalConfig,
) -> Result<EvaluationReport, EvalError> {
    let images: BTreeSet<&String> = detections.keys().chain(annotations.keys()).collect();
    let classes: BTreeSet<ClassId> = annotations.values().flatten().map(|a| a.class_id).collect();
    let empty_d: Vec<Region> = Vec::new();
    let empty_a: Vec<Annotation> = Vec::new();

    let mut per_class: BTreeMap<ClassId, f64> = BTreeMap::new();
    for &class in &classes {
        let sets: Vec<MatchSet> = images
            .iter()
            .map(|img| {
                let d: Vec<Region> = detections
                    .get(*img)
                    .unwrap_or(&empty_d)
                    .iter()
                    .filter(|r| r.class_id == class)
                    .copied()
                    .collect();
                let g: Vec<Annotation> = annotations
                    .get(*img)
                    .unwrap_or(&empty_a)
                    .iter()
                    .filter(|a| a.class_id == class)
                    .copied()
                    .collect();
                match_detections(&d, &g, cfg.iou_threshold)
            })
            .collect();
        if let Some(ap) = average_precision(&sets) {
            per_class.insert(class, ap);
        }
    }

    let count_id = registry.id(&cfg.count_class)?;
    let pairs: Vec<(u64, u64)> = images
        .iter()
        .map(|img| {
            let gt = annotations.get(*img).unwrap_or(&empty_a).iter().filter(|a| a.class_id == count_id).count();
            let det = detections.get(*img).unwrap_or(&empty_d).iter().filter(|r| r.class_id == count_id).count();
            (gt as u64, det as u64)
        })
        .collect();
    let mape_images = pairs.iter().filter(|(gt, _)| *gt > cfg.min_annotations).count();
    let mape_value = match mape(&pairs, cfg.min_annotations) {
        Ok(v) => Some(v),
        Err(EvalError::NoEligibleImages(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(EvaluationReport {
        images: images.len(),
        iou_threshold: cfg.iou_threshold,
        per_class_ap: per_class
            .iter()
            .map(|(c, ap)| (registry.name(*c).unwrap_or("?").to_string(), *ap))
            .collect(),
        groups: map_by_group(&per_class, registry),
        count_class: cfg.count_class.clone(),
        mape: mape_value,
        mape_images,
    })
}

//! Confidence-weighted non-maximum suppression.
//!
//! Repeatedly take the highest-scoring remaining region as a seed, gather
//! every remaining region whose IoU with the seed exceeds `sigma`, and
//! replace the group by the score-weighted average of its boxes. The seed
//! alone is tested against each candidate; the running average is not.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::ClassId;
use crate::detector::Region;
use crate::geo::{iou, PixelBox};

pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("IoU threshold must lie in (0, 1), got {0}")]
    InvalidSigma(f64),
    #[error("candidate {index} has non-positive score {score}")]
    NonPositiveScore { index: usize, score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub sigma: f64,
    /// Only regions of the same class are grouped.
    pub class_aware: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            class_aware: true,
        }
    }
}

impl MergeConfig {
    pub fn new(sigma: f64, class_aware: bool) -> Result<Self, MergeError> {
        let cfg = Self { sigma, class_aware };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MergeError> {
        if self.sigma > 0.0 && self.sigma < 1.0 {
            Ok(())
        } else {
            Err(MergeError::InvalidSigma(self.sigma))
        }
    }
}

/// Ascending `(class, x1, y1, x2, y2)`; breaks score ties.
pub fn tie_break(a: &Region, b: &Region) -> Ordering {
    a.class_id.cmp(&b.class_id).then_with(|| {
        a.bbox
            .coords()
            .iter()
            .zip(b.bbox.coords())
            .map(|(p, q)| p.total_cmp(&q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Descending score, then [`tie_break`].
pub fn rank(a: &Region, b: &Region) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| tie_break(a, b))
}

fn fuse_ranked(ranked: &[&Region], sigma: f64, class_aware: bool, out: &mut Vec<Region>) {
    let mut taken = vec![false; ranked.len()];
    for i in 0..ranked.len() {
        if taken[i] {
            continue;
        }
        taken[i] = true;
        let seed = ranked[i];
        let mut weight = seed.score;
        let mut acc = seed.bbox.coords().map(|c| c * seed.score);
        let mut lo = seed.bbox.coords();
        let mut hi = lo;
        for j in i + 1..ranked.len() {
            let cand = ranked[j];
            if taken[j] || (class_aware && cand.class_id != seed.class_id) {
                continue;
            }
            if iou(&seed.bbox, &cand.bbox) > sigma {
                taken[j] = true;
                weight += cand.score;
                for (k, c) in cand.bbox.coords().iter().enumerate() {
                    acc[k] += c * cand.score;
                    lo[k] = lo[k].min(*c);
                    hi[k] = hi[k].max(*c);
                }
            }
        }
        // clamp guards the hull invariant against rounding
        let avg: Vec<f64> = (0..4).map(|k| (acc[k] / weight).clamp(lo[k], hi[k])).collect();
        out.push(Region {
            class_id: seed.class_id,
            bbox: PixelBox {
                x1: avg[0],
                y1: avg[1],
                x2: avg[2],
                y2: avg[3],
            },
            score: seed.score,
        });
    }
}

/// Fuse a candidate set. The fused region keeps the seed's class and the
/// group's maximum score (the seed's). Output is ordered by [`rank`].
pub fn weighted_nms(candidates: &[Region], cfg: &MergeConfig) -> Result<Vec<Region>, MergeError> {
    cfg.validate()?;
    if let Some((index, r)) = candidates
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.score > 0.0 && r.score.is_finite()))
    {
        return Err(MergeError::NonPositiveScore { index, score: r.score });
    }
    let mut out = Vec::with_capacity(candidates.len());
    if cfg.class_aware {
        let mut by_class: BTreeMap<ClassId, Vec<&Region>> = BTreeMap::new();
        for r in candidates {
            by_class.entry(r.class_id).or_default().push(r);
        }
        for (_, mut part) in by_class {
            part.sort_by(|a, b| rank(a, b));
            fuse_ranked(&part, cfg.sigma, true, &mut out);
        }
    } else {
        let mut ranked: Vec<&Region> = candidates.iter().collect();
        ranked.sort_by(|a, b| rank(a, b));
        fuse_ranked(&ranked, cfg.sigma, false, &mut out);
    }
    out.sort_by(rank);
    Ok(out)
}

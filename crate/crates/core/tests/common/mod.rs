//! Independent reference implementations used as test oracles. None of them
//! call into the library routine they check.

#![allow(dead_code)]

use roicount::classes::ClassId;
use roicount::geo::PixelBox;
use roicount::Region;

/// Plain IoU on coordinate arrays.
pub fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn coords(r: &Region) -> [f64; 4] {
    [r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2]
}

/// `true` when `a` should be picked before `b` as a seed.
fn seed_before(a: &Region, b: &Region) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.class_id != b.class_id {
        return a.class_id < b.class_id;
    }
    let (ca, cb) = (coords(a), coords(b));
    for k in 0..4 {
        if ca[k] != cb[k] {
            return ca[k] < cb[k];
        }
    }
    false
}

/// Naive re-scan weighted NMS: every round scans the whole remaining pool
/// for the seed, then scans it again for the seed's group.
pub fn oracle_nms(candidates: &[Region], sigma: f64, class_aware: bool) -> Vec<Region> {
    let mut pool: Vec<Region> = candidates.to_vec();
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut s = 0;
        for i in 1..pool.len() {
            if seed_before(&pool[i], &pool[s]) {
                s = i;
            }
        }
        let seed = pool[s];
        let mut members = vec![s];
        for (i, r) in pool.iter().enumerate() {
            if i == s || (class_aware && r.class_id != seed.class_id) {
                continue;
            }
            if ref_iou(coords(&seed), coords(r)) > sigma {
                members.push(i);
            }
        }
        let wsum: f64 = members.iter().map(|&i| pool[i].score).sum();
        let mut b = [0.0; 4];
        for k in 0..4 {
            let num: f64 = members.iter().map(|&i| pool[i].score * coords(&pool[i])[k]).sum();
            let lo = members.iter().map(|&i| coords(&pool[i])[k]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|&i| coords(&pool[i])[k]).fold(f64::NEG_INFINITY, f64::max);
            b[k] = (num / wsum).clamp(lo, hi);
        }
        out.push(Region {
            class_id: seed.class_id,
            bbox: PixelBox {
                x1: b[0],
                y1: b[1],
                x2: b[2],
                y2: b[3],
            },
            score: seed.score,
        });
        members.sort_unstable_by(|a, b| b.cmp(a));
        for i in members {
            pool.remove(i);
        }
    }
    out
}

/// Multiset comparison: same cardinality, and a one-to-one pairing with
/// equal class and score and boxes within `tol`.
pub fn same_regions(a: &[Region], b: &[Region], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    'outer: for x in a {
        for (j, y) in b.iter().enumerate() {
            if !used[j]
                && x.class_id == y.class_id
                && x.score == y.score
                && coords(x).iter().zip(coords(y)).all(|(p, q)| (p - q).abs() <= tol)
            {
                used[j] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// AP by sweeping every distinct score threshold: at each threshold the
/// kept detections are matched from scratch, giving one (recall, precision)
/// operating point. AP integrates, over recall, the best precision reached
/// at that recall or beyond.
pub fn oracle_ap(dets: &[([f64; 4], f64)], gts: &[[f64; 4]], iou_thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.1).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points: Vec<(f64, f64)> = Vec::new();
    for &t in &thresholds {
        let mut kept: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].1 >= t).collect();
        kept.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        let mut tp = 0usize;
        for &i in &kept {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = ref_iou(dets[i].0, *gt);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, v)) = best {
                if v > iou_thr {
                    taken[g] = true;
                    tp += 1;
                }
            }
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / kept.len() as f64));
    }
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).filter(|r| *r > 0.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    Some(ap)
}

/// Number of tiles covering each position of an axis.
pub fn axis_cover(dim: usize, block: usize, offsets: &[usize]) -> Vec<u32> {
    let mut cover = vec![0u32; dim];
    for &o in offsets {
        for c in cover.iter_mut().take((o + block).min(dim)).skip(o) {
            *c += 1;
        }
    }
    cover
}

pub fn region(class: u32, b: [f64; 4], score: f64) -> Region {
    Region {
        class_id: ClassId(class),
        bbox: PixelBox {
            x1: b[0],
            y1: b[1],
            x2: b[2],
            y2: b[3],
        },
        score,
    }
}

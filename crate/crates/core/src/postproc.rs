//! Classical post-processing baselines: NMS, Gaussian Soft-NMS, weighted boxes fusion,
//! coverage-based soft merging, and top-k selection.
//!
//! Every function works per class and orders its output by descending score with ties
//! broken by input position.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::geometry::{box_iou, mask_coverage, BinaryMask, BoundingBox};
use crate::{Error, Result, Scalar};

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_SOFT_NMS_SIGMA: f64 = 0.5;
pub const DEFAULT_WBF_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection<S> {
    pub bbox: BoundingBox<S>,
    pub class_id: u32,
    pub score: S,
    pub mask: Option<BinaryMask>,
}

fn desc<S: Scalar>(a: S, b: S) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Indices sorted by descending score, stable on ties.
pub(crate) fn rank_by_score<S: Scalar>(scores: impl Iterator<Item = S>) -> Vec<usize> {
    let scores: Vec<S> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| desc(scores[a], scores[b]));
    idx
}

fn per_class<S>(dets: &[ScoredDetection<S>]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        m.entry(d.class_id).or_default().push(i);
    }
    m
}

/// Reassembles `(input index, detection)` pairs into descending score order.
fn finish<S: Scalar>(mut kept: Vec<(usize, ScoredDetection<S>)>) -> Vec<ScoredDetection<S>> {
    kept.sort_by(|a, b| desc(a.1.score, b.1.score).then(a.0.cmp(&b.0)));
    kept.into_iter().map(|(_, d)| d).collect()
}

/// Greedy per-class NMS: drop any box whose IoU with an already kept box exceeds `iou_thr`.
pub fn nms<S: Scalar>(dets: &[ScoredDetection<S>], iou_thr: S) -> Vec<ScoredDetection<S>> {
    let mut kept = Vec::new();
    for members in per_class(dets).into_values() {
        let order = rank_by_score(members.iter().map(|&i| dets[i].score));
        let mut survivors: Vec<usize> = Vec::new();
        for k in order {
            let i = members[k];
            if survivors
                .iter()
                .all(|&s| box_iou(&dets[s].bbox, &dets[i].bbox) <= iou_thr)
            {
                survivors.push(i);
            }
        }
        kept.extend(survivors.into_iter().map(|i| (i, dets[i].clone())));
    }
    finish(kept)
}

/// Gaussian Soft-NMS: after each selection every remaining score in the class is multiplied
/// by `exp(-iou^2 / sigma)`. Nothing is removed.
pub fn soft_nms<S: Scalar>(dets: &[ScoredDetection<S>], sigma: S) -> Vec<ScoredDetection<S>> {
    let mut out = Vec::with_capacity(dets.len());
    for members in per_class(dets).into_values() {
        let mut remaining: Vec<(usize, S)> = members.iter().map(|&i| (i, dets[i].score)).collect();
        while !remaining.is_empty() {
            let best = remaining
                .iter()
                .enumerate()
                .fold(0, |b, (k, r)| if r.1 > remaining[b].1 { k } else { b });
            let (i, score) = remaining.remove(best);
            for r in remaining.iter_mut() {
                let iou = box_iou(&dets[i].bbox, &dets[r.0].bbox);
                r.1 = r.1 * (-(iou * iou) / sigma).exp();
            }
            let mut d = dets[i].clone();
            d.score = score;
            out.push((i, d));
        }
    }
    finish(out)
}

/// Weighted boxes fusion for a single model. Boxes are visited in descending score order and
/// join the first cluster whose fused box overlaps them with IoU above `iou_thr`. Each cluster
/// emits the score-weighted mean box with the plain mean score.
pub fn wbf<S: Scalar>(dets: &[ScoredDetection<S>], iou_thr: S) -> Vec<ScoredDetection<S>> {
    struct Cluster<S> {
        first: usize,
        members: Vec<usize>,
        fused: BoundingBox<S>,
    }
    let fuse = |members: &[usize]| -> BoundingBox<S> {
        let wsum = S::total(members.iter().map(|&i| dets[i].score));
        let coord = |f: fn(&BoundingBox<S>) -> S| -> S {
            if wsum > S::zero() {
                S::total(members.iter().map(|&i| f(&dets[i].bbox) * dets[i].score)) / wsum
            } else {
                S::total(members.iter().map(|&i| f(&dets[i].bbox))) / S::of(members.len() as f64)
            }
        };
        BoundingBox {
            x1: coord(|b| b.x1),
            y1: coord(|b| b.y1),
            x2: coord(|b| b.x2),
            y2: coord(|b| b.y2),
        }
    };
    let mut out = Vec::new();
    for members in per_class(dets).into_values() {
        let order = rank_by_score(members.iter().map(|&i| dets[i].score));
        let mut clusters: Vec<Cluster<S>> = Vec::new();
        for k in order {
            let i = members[k];
            match clusters
                .iter_mut()
                .find(|c| box_iou(&c.fused, &dets[i].bbox) > iou_thr)
            {
                Some(c) => {
                    c.members.push(i);
                    c.fused = fuse(&c.members);
                }
                None => clusters.push(Cluster {
                    first: i,
                    members: vec![i],
                    fused: dets[i].bbox,
                }),
            }
        }
        for c in clusters {
            let n = S::of(c.members.len() as f64);
            let score = S::total(c.members.iter().map(|&i| dets[i].score)) / n;
            out.push((
                c.first,
                ScoredDetection {
                    bbox: c.fused,
                    class_id: dets[c.first].class_id,
                    score,
                    mask: dets[c.first].mask.clone(),
                },
            ));
        }
    }
    finish(out)
}

/// Coverage-based soft merging: in one pass over descending original scores, each detection's
/// score is multiplied by `1 - max_j coverage(mask_i, mask_j)` over the detections of its class
/// ranked before it.
///
/// This approximates the cited soft-merging method, which is not specified in closed form.
pub fn soft_merge<S: Scalar>(dets: &[ScoredDetection<S>]) -> Result<Vec<ScoredDetection<S>>> {
    let masks: Vec<&BinaryMask> = dets
        .iter()
        .map(|d| d.mask.as_ref())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::MissingMasks("softmerge".into()))?;
    let mut out = Vec::with_capacity(dets.len());
    for members in per_class(dets).into_values() {
        let order = rank_by_score(members.iter().map(|&i| dets[i].score));
        for (rank, &k) in order.iter().enumerate() {
            let i = members[k];
            let mut cover = S::zero();
            for &h in &order[..rank] {
                let c: S = mask_coverage(masks[i], masks[members[h]])?;
                cover = cover.max(c);
            }
            let mut d = dets[i].clone();
            d.score = d.score * (S::one() - cover);
            out.push((i, d));
        }
    }
    Ok(finish(out))
}

/// The `k` highest-scored detections across classes; ties keep the earlier input.
pub fn topk_by_score<S: Scalar>(dets: &[ScoredDetection<S>], k: usize) -> Vec<ScoredDetection<S>> {
    rank_by_score(dets.iter().map(|d| d.score))
        .into_iter()
        .take(k)
        .map(|i| dets[i].clone())
        .collect()
}

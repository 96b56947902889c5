//! COCO-style average precision: 101-point interpolated AP at IoU 0.50:0.05:0.95, averaged
//! per class and then across classes that have at least one ground-truth box.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{box_iou, BoundingBox};
use crate::postproc::rank_by_score;
use crate::Scalar;

pub const DEFAULT_MAX_DETS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<S> {
    pub image_id: String,
    pub class_id: u32,
    pub score: S,
    pub bbox: BoundingBox<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox<S> {
    pub image_id: String,
    pub bbox: BoundingBox<S>,
    pub class_id: u32,
}

/// The ten IoU thresholds `0.50, 0.55, ..., 0.95`, each the nearest double to its decimal.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Recall grid `0.00, 0.01, ..., 1.00`.
pub fn recall_grid() -> [f64; 101] {
    std::array::from_fn(|i| i as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "nAP")]
    pub n_ap: f64,
    #[serde(rename = "nAP50")]
    pub n_ap50: f64,
    #[serde(rename = "nAP75")]
    pub n_ap75: f64,
    /// AP at each of the ten IoU thresholds, for classes with ground truth.
    pub per_class_ap: BTreeMap<u32, Vec<f64>>,
    pub det_count: usize,
    pub gt_count: usize,
}

impl EvalReport {
    /// Flat `key=value` rendering, one line per metric and per class.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nAP={}", self.n_ap);
        let _ = writeln!(s, "nAP50={}", self.n_ap50);
        let _ = writeln!(s, "nAP75={}", self.n_ap75);
        let _ = writeln!(s, "det_count={}", self.det_count);
        let _ = writeln!(s, "gt_count={}", self.gt_count);
        for (c, aps) in &self.per_class_ap {
            let joined: Vec<String> = aps.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(s, "class.{c}={}", joined.join(","));
        }
        s
    }
}

/// Greedy matching for one image and class. `dets` must already be in descending score
/// order. Each detection takes the unmatched ground truth with the highest IoU not below
/// `iou_thr` (lowest index on ties).
pub fn match_detections<S: Scalar>(
    dets: &[&BoundingBox<S>],
    gts: &[&BoundingBox<S>],
    iou_thr: S,
) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, S)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = box_iou(d, gt);
                if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP of a score-ordered TP/FP sequence. Zero when `total_gt == 0`.
pub fn ap_101(tp: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let (mut ntp, mut nfp) = (0usize, 0usize);
    for &t in tp {
        if t {
            ntp += 1;
        } else {
            nfp += 1;
        }
        recall.push(ntp as f64 / total_gt as f64);
        precision.push(ntp as f64 / (ntp + nfp) as f64);
    }
    for k in (1..precision.len()).rev() {
        if precision[k] > precision[k - 1] {
            precision[k - 1] = precision[k];
        }
    }
    let mut sum = 0.0;
    for r in recall_grid() {
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// Evaluates detections against ground truth, keeping the `max_dets` best detections of
/// each image.
pub fn evaluate<S: Scalar>(
    dets: &[Detection<S>],
    gts: &[GroundTruthBox<S>],
    max_dets: usize,
) -> EvalReport {
    let mut per_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        per_image.entry(&d.image_id).or_default().push(i);
    }
    let mut kept: Vec<usize> = Vec::new();
    for idx in per_image.values() {
        let order = rank_by_score(idx.iter().map(|&i| dets[i].score));
        kept.extend(order.into_iter().take(max_dets).map(|k| idx[k]));
    }
    kept.sort_unstable();

    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let thresholds = iou_thresholds();
    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let class_dets: Vec<usize> = kept.iter().copied().filter(|&i| dets[i].class_id == c).collect();
        let global = rank_by_score(class_dets.iter().map(|&i| dets[i].score));
        let n_gt = gts.iter().filter(|g| g.class_id == c).count();

        let mut images: BTreeMap<&str, (Vec<usize>, Vec<&BoundingBox<S>>)> = BTreeMap::new();
        for &k in &global {
            let d = &dets[class_dets[k]];
            images.entry(&d.image_id).or_default().0.push(k);
        }
        for g in gts.iter().filter(|g| g.class_id == c) {
            images.entry(&g.image_id).or_default().1.push(&g.bbox);
        }

        let aps: Vec<f64> = thresholds
            .iter()
            .map(|&t| {
                let mut flags = vec![false; class_dets.len()];
                for (ranks, gt_boxes) in images.values() {
                    let boxes: Vec<&BoundingBox<S>> = ranks.iter().map(|&k| &dets[class_dets[k]].bbox).collect();
                    for (&k, m) in ranks.iter().zip(match_detections(&boxes, gt_boxes, S::of(t))) {
                        flags[k] = m;
                    }
                }
                let seq: Vec<bool> = global.iter().map(|&k| flags[k]).collect();
                ap_101(&seq, n_gt)
            })
            .collect();
        per_class_ap.insert(c, aps);
    }

    let k = per_class_ap.len();
    let (n_ap, n_ap50, n_ap75) = if k == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let total: f64 = per_class_ap.values().map(|a| a.iter().sum::<f64>()).sum();
        let at = |t: usize| per_class_ap.values().map(|a| a[t]).sum::<f64>() / k as f64;
        (total / (10 * k) as f64, at(0), at(5))
    };
    EvalReport {
        n_ap,
        n_ap50,
        n_ap75,
        per_class_ap,
        det_count: kept.len(),
        gt_count: gts.len(),
    }
}

//! PASCAL-style detection evaluation.
//!
//! Detections are matched greedily to ground truth in descending score
//! order, per image and category. Ground truth flagged `difficult` neither
//! counts towards recall nor penalizes detections that land on it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image: String,
    pub category: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image: String,
    pub category: String,
    pub bbox: BoundingBox,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    ElevenPoint,
    AllPoints,
}

impl Default for ApMode {
    fn default() -> Self {
        ApMode::ElevenPoint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    TruePositive,
    FalsePositive,
    /// Best overlap is with a difficult ground truth; left out of the PR curve.
    Ignored,
}

/// Descending score, then lexicographic box, then image and category.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
        .then_with(|| a.image.cmp(&b.image))
        .then_with(|| a.category.cmp(&b.category))
}

/// Matches detections to ground truth. Returns `(index into dets, kind)`
/// in ranked order.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Vec<(usize, MatchKind)> {
    let mut by_key: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (k, g) in gts.iter().enumerate() {
        by_key.entry((g.image.as_str(), g.category.as_str())).or_default().push(k);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank(&dets[a], &dets[b]));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for &gi in by_key.get(&(d.image.as_str(), d.category.as_str())).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[gi] && !gts[gi].difficult {
                    continue;
                }
                let o = iou(&d.bbox, &gts[gi].bbox);
                if best.map_or(true, |(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            let kind = match best {
                Some((gi, o)) if o > iou_threshold => {
                    if gts[gi].difficult {
                        MatchKind::Ignored
                    } else {
                        taken[gi] = true;
                        MatchKind::TruePositive
                    }
                }
                _ => MatchKind::FalsePositive,
            };
            (di, kind)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall after each ranked detection (ignored ones skipped).
pub fn pr_curve(ranked: &[(f64, MatchKind)], n_gt: usize) -> Vec<PrPoint> {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::with_capacity(ranked.len());
    for &(score, kind) in ranked {
        match kind {
            MatchKind::TruePositive => tp += 1,
            MatchKind::FalsePositive => fp += 1,
            MatchKind::Ignored => continue,
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        out.push(PrPoint { score, precision: tp as f64 / (tp + fp) as f64, recall });
    }
    out
}

/// AP from ranked match flags. With no ground truth, AP is 1 if there are
/// no detections and 0 otherwise.
pub fn average_precision(ranked: &[(f64, MatchKind)], n_gt: usize, mode: ApMode) -> f64 {
    let curve = pr_curve(ranked, n_gt);
    if n_gt == 0 {
        return if curve.is_empty() { 1.0 } else { 0.0 };
    }
    match mode {
        ApMode::ElevenPoint => {
            let sum: f64 = (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|p| p.recall >= t - 1e-12)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum();
            sum / 11.0
        }
        ApMode::AllPoints => {
            // monotone envelope of precision, integrated over recall steps
            let mut prec: Vec<f64> = curve.iter().map(|p| p.precision).collect();
            for i in (0..prec.len().saturating_sub(1)).rev() {
                prec[i] = prec[i].max(prec[i + 1]);
            }
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (p, env) in curve.iter().zip(&prec) {
                area += (p.recall - prev_recall) * env;
                prev_recall = p.recall;
            }
            area
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub ap: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub pr: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtLocalization {
    pub image: String,
    pub category: String,
    pub best_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iou_threshold: f64,
    pub mode: ApMode,
    pub per_category: BTreeMap<String, CategoryEval>,
    pub map: f64,
    pub localization: Vec<GtLocalization>,
}

/// Evaluates every category that has ground truth.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64, mode: ApMode) -> EvalResult {
    let categories: BTreeSet<String> = gts.iter().map(|g| g.category.clone()).collect();
    evaluate_categories(dets, gts, &categories, iou_threshold, mode)
}

pub fn evaluate_categories(
    dets: &[Detection],
    gts: &[GroundTruth],
    categories: &BTreeSet<String>,
    iou_threshold: f64,
    mode: ApMode,
) -> EvalResult {
    let matches = match_detections(dets, gts, iou_threshold);
    let mut per_category = BTreeMap::new();
    for cat in categories {
        let ranked: Vec<(f64, MatchKind)> = matches
            .iter()
            .filter(|(i, _)| &dets[*i].category == cat)
            .map(|&(i, k)| (dets[i].score, k))
            .collect();
        let n_gt = gts.iter().filter(|g| &g.category == cat && !g.difficult).count();
        per_category.insert(
            cat.clone(),
            CategoryEval {
                ap: average_precision(&ranked, n_gt, mode),
                n_gt,
                n_detections: ranked.len(),
                pr: pr_curve(&ranked, n_gt),
            },
        );
    }
    let map = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().map(|c| c.ap).sum::<f64>() / per_category.len() as f64
    };
    EvalResult { iou_threshold, mode, per_category, map, localization: best_ious(dets, gts) }
}

/// Best IoU of each non-difficult ground truth over same-image,
/// same-category detections (0 if there are none).
pub fn best_ious(dets: &[Detection], gts: &[GroundTruth]) -> Vec<GtLocalization> {
    let mut by_key: HashMap<(&str, &str), Vec<&BoundingBox>> = HashMap::new();
    for d in dets {
        by_key.entry((d.image.as_str(), d.category.as_str())).or_default().push(&d.bbox);
    }
    gts.iter()
        .filter(|g| !g.difficult)
        .map(|g| GtLocalization {
            image: g.image.clone(),
            category: g.category.clone(),
            best_iou: by_key
                .get(&(g.image.as_str(), g.category.as_str()))
                .map_or(0.0, |bs| bs.iter().map(|b| iou(b, &g.bbox)).fold(0.0, f64::max)),
        })
        .collect()
}

/// Per-category histogram of best IoU per ground truth; bin `k` covers
/// `[k/10, (k+1)/10)`, with IoU 1 in the last bin.
pub fn localization_distribution(dets: &[Detection], gts: &[GroundTruth]) -> BTreeMap<String, [usize; 10]> {
    let mut out: BTreeMap<String, [usize; 10]> = BTreeMap::new();
    for loc in best_ious(dets, gts) {
        let bin = ((loc.best_iou * 10.0).floor() as usize).min(9);
        out.entry(loc.category).or_insert([0; 10])[bin] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(u1: f64, v1: f64, u2: f64, v2: f64) -> BoundingBox {
        BoundingBox::new(u1, v1, u2, v2).unwrap()
    }

    fn det(b: BoundingBox, score: f64) -> Detection {
        Detection { image: "i".into(), category: "c".into(), bbox: b, score }
    }

    fn gt(b: BoundingBox) -> GroundTruth {
        GroundTruth { image: "i".into(), category: "c".into(), bbox: b, difficult: false }
    }

    use MatchKind::*;

    #[test]
    fn exact_detection_is_tp() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let m = match_detections(&[det(g, 0.5)], &[gt(g)], 0.5);
        assert_eq!(m, vec![(0, TruePositive)]);
    }

    #[test]
    fn duplicate_is_fp() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let m = match_detections(&[det(g, 0.8), det(g, 0.9)], &[gt(g)], 0.5);
        assert_eq!(m, vec![(1, TruePositive), (0, FalsePositive)]);
    }

    #[test]
    fn threshold_boundary() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        // intersection 75, union 125
        let d = bb(2.5, 0.0, 12.5, 10.0);
        assert!((iou(&d, &g) - 0.6).abs() < 1e-12);
        assert_eq!(match_detections(&[det(d, 1.0)], &[gt(g)], 0.7)[0].1, FalsePositive);
        assert_eq!(match_detections(&[det(d, 1.0)], &[gt(g)], 0.5)[0].1, TruePositive);
    }

    #[test]
    fn difficult_ground_truth_is_ignored() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let hard = GroundTruth { difficult: true, ..gt(g) };
        let m = match_detections(&[det(g, 0.9), det(g, 0.8)], &[hard.clone()], 0.5);
        assert_eq!(m, vec![(0, Ignored), (1, Ignored)]);
        let r = evaluate(&[det(g, 0.9)], &[hard], 0.5, ApMode::ElevenPoint);
        assert_eq!(r.per_category["c"].n_gt, 0);
        assert_eq!(r.per_category["c"].ap, 1.0);
    }

    #[test]
    fn ap_examples() {
        let perfect = [(0.9, TruePositive), (0.8, TruePositive)];
        assert_eq!(average_precision(&perfect, 2, ApMode::ElevenPoint), 1.0);
        assert_eq!(average_precision(&perfect, 2, ApMode::AllPoints), 1.0);
        assert_eq!(average_precision(&[], 3, ApMode::ElevenPoint), 0.0);
        assert_eq!(average_precision(&[], 0, ApMode::ElevenPoint), 1.0);
        assert_eq!(average_precision(&[(0.3, FalsePositive)], 0, ApMode::ElevenPoint), 0.0);
        let mixed = [(0.9, TruePositive), (0.8, FalsePositive), (0.7, TruePositive)];
        let expected = (6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0;
        assert_eq!(average_precision(&mixed, 2, ApMode::ElevenPoint), expected);
        let all = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
        assert!((average_precision(&mixed, 2, ApMode::AllPoints) - all).abs() < 1e-15);
    }

    #[test]
    fn map_is_mean_of_categories() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let gts = vec![gt(g), GroundTruth { category: "d".into(), ..gt(g) }];
        let r = evaluate(&[det(g, 1.0)], &gts, 0.5, ApMode::ElevenPoint);
        assert_eq!(r.per_category["c"].ap, 1.0);
        assert_eq!(r.per_category["d"].ap, 0.0);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn localization_examples() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let exact = localization_distribution(&[det(g, 1.0)], &[gt(g)]);
        assert_eq!(exact["c"][9], 1);
        let none = localization_distribution(&[], &[gt(g), gt(bb(20.0, 20.0, 30.0, 30.0))]);
        assert_eq!(none["c"][0], 2);
        let third = localization_distribution(&[det(bb(0.0, 5.0, 10.0, 15.0), 1.0)], &[gt(g)]);
        assert_eq!(third["c"][3], 1);
    }

    #[test]
    fn equal_scores_tie_break_by_box() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let a = det(bb(0.0, 0.0, 10.0, 9.0), 0.5);
        let b = det(bb(0.5, 0.0, 10.0, 10.0), 0.5);
        let m1 = match_detections(&[a.clone(), b.clone()], &[gt(g)], 0.5);
        let m2 = match_detections(&[b, a], &[gt(g)], 0.5);
        assert_eq!(m1[0], (0, TruePositive));
        assert_eq!(m2[0], (1, TruePositive));
    }
}

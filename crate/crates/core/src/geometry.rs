//! Axis-aligned bounding boxes, overlap, the scale-normalized coordinate
//! transform used by the GP kernel, and greedy non-maximum suppression.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Axis-aligned box `(u1, v1, u2, v2)` in continuous pixel coordinates,
/// top-left to bottom-right. Width and height are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    u1: f64,
    v1: f64,
    u2: f64,
    v2: f64,
}

impl BoundingBox {
    pub fn new(u1: f64, v1: f64, u2: f64, v2: f64) -> Result<Self, GeometryError> {
        if !(u1.is_finite() && v1.is_finite() && u2.is_finite() && v2.is_finite()) {
            return Err(GeometryError::NonFinite([u1, v1, u2, v2]));
        }
        if u2 <= u1 || v2 <= v1 {
            return Err(GeometryError::Degenerate([u1, v1, u2, v2]));
        }
        Ok(Self { u1, v1, u2, v2 })
    }

    /// Builds a box from center and size.
    pub fn from_center_size(cu: f64, cv: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cu - 0.5 * w, cv - 0.5 * h, cu + 0.5 * w, cv + 0.5 * h)
    }

    pub fn u1(&self) -> f64 {
        self.u1
    }
    pub fn v1(&self) -> f64 {
        self.v1
    }
    pub fn u2(&self) -> f64 {
        self.u2
    }
    pub fn v2(&self) -> f64 {
        self.v2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.u1, self.v1, self.u2, self.v2]
    }

    pub fn width(&self) -> f64 {
        self.u2 - self.u1
    }

    pub fn height(&self) -> f64 {
        self.v2 - self.v1
    }

    pub fn center_u(&self) -> f64 {
        0.5 * (self.u1 + self.u2)
    }

    pub fn center_v(&self) -> f64 {
        0.5 * (self.v1 + self.v2)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Multiplies every coordinate by `s` (image rescaling about the origin).
    pub fn scaled(&self, s: f64) -> Result<Self, GeometryError> {
        Self::new(self.u1 * s, self.v1 * s, self.u2 * s, self.v2 * s)
    }

    /// Area of the intersection; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = (self.u2.min(other.u2) - self.u1.max(other.u1)).max(0.0);
        let h = (self.v2.min(other.v2) - self.v1.max(other.v1)).max(0.0);
        w * h
    }

    /// Clips to `frame`. Returns `None` if nothing of positive area remains.
    pub fn clip_to(&self, frame: &Self) -> Option<Self> {
        Self::new(
            self.u1.max(frame.u1),
            self.v1.max(frame.v1),
            self.u2.min(frame.u2),
            self.v2.min(frame.v2),
        )
        .ok()
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.u1 <= other.u1 && self.v1 <= other.v1 && self.u2 >= other.u2 && self.v2 >= other.v2
    }

    /// True if every coordinate differs by at most `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.coords()
            .iter()
            .zip(other.coords().iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Lexicographic order on `(u1, v1, u2, v2)`; total because coordinates are finite.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.coords().iter().zip(other.coords().iter()) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.u1, self.v1, self.u2, self.v2)
    }
}

/// Box coordinates after the latent-scale transform:
/// `[ū / e^z, v̄ / e^z, ln w, ln h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedBox(pub [f64; 4]);

impl TransformedBox {
    pub fn diff(&self, other: &Self) -> [f64; 4] {
        let mut d = [0.0; 4];
        for (k, slot) in d.iter_mut().enumerate() {
            *slot = self.0[k] - other.0[k];
        }
        d
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn psi_transform(y: &BoundingBox, z: f64) -> TransformedBox {
    let inv = (-z).exp();
    TransformedBox([
        y.center_u() * inv,
        y.center_v() * inv,
        y.width().ln(),
        y.height().ln(),
    ])
}

/// Orders by descending score, then lexicographically by box.
pub(crate) fn score_then_lex(a: (&BoundingBox, f64), b: (&BoundingBox, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.lex_cmp(b.0))
}

/// Greedy NMS: repeatedly keeps the best remaining box and drops every box
/// whose IoU with it exceeds `overlap_threshold`. Output is in descending
/// score order; ties go to the lexicographically smaller box.
pub fn greedy_nms(dets: &[(BoundingBox, f64)], overlap_threshold: f64) -> Vec<(BoundingBox, f64)> {
    nms_indices(dets, overlap_threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Indices (into `dets`) of the boxes kept by [`greedy_nms`], in output order.
pub fn nms_indices(dets: &[(BoundingBox, f64)], overlap_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| score_then_lex((&dets[i].0, dets[i].1), (&dets[j].0, dets[j].1)));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        keep.push(i);
        for (q, &j) in order.iter().enumerate().skip(pos + 1) {
            if !suppressed[q] && iou(&dets[i].0, &dets[j].0) > overlap_threshold {
                suppressed[q] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(u1: f64, v1: f64, u2: f64, v2: f64) -> BoundingBox {
        BoundingBox::new(u1, v1, u2, v2).unwrap()
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 3.0, 4.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0,0,-1,2]").is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &bb(0.0, 5.0, 10.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        // edge contact only
        assert_eq!(iou(&a, &bb(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn psi_examples() {
        let y = bb(0.0, 0.0, 10.0, 20.0);
        let t = psi_transform(&y, 0.0).0;
        assert_eq!(t, [5.0, 10.0, 10f64.ln(), 20f64.ln()]);
        let t = psi_transform(&y, 2f64.ln()).0;
        assert!((t[0] - 2.5).abs() < 1e-15 && (t[1] - 5.0).abs() < 1e-15);
        assert_eq!(t[2], 10f64.ln());
        assert_eq!(t[3], 20f64.ln());
    }

    #[test]
    fn nms_examples() {
        let b = bb(1.0, 2.0, 3.0, 4.0);
        assert_eq!(greedy_nms(&[(b, 0.9)], 0.3), vec![(b, 0.9)]);
        assert_eq!(greedy_nms(&[(b, 0.5), (b, 0.9)], 0.3), vec![(b, 0.9)]);
        let dets = [
            (bb(0.0, 0.0, 10.0, 10.0), 0.9),
            (bb(0.0, 5.0, 10.0, 15.0), 0.8),
            (bb(0.0, 40.0, 10.0, 50.0), 0.7),
        ];
        let kept = greedy_nms(&dets, 0.3);
        assert_eq!(kept, vec![dets[0], dets[2]]);
        assert!(greedy_nms(&[], 0.3).is_empty());
    }

    #[test]
    fn nms_tie_break_is_lexicographic() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(1.0, 0.0, 11.0, 10.0);
        assert_eq!(greedy_nms(&[(b, 0.5), (a, 0.5)], 0.3), vec![(a, 0.5)]);
        assert_eq!(greedy_nms(&[(a, 0.5), (b, 0.5)], 0.3), vec![(a, 0.5)]);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..200.0f64, 0.0..200.0f64, 0.5..120.0f64, 0.5..120.0f64)
            .prop_map(|(u, v, w, h)| BoundingBox::new(u, v, u + w, v + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn psi_differences_are_scale_invariant(
            a in arb_box(), b in arb_box(), s in 0.05..20.0f64, z in -3.0..3.0f64
        ) {
            let d0 = psi_transform(&a, z).diff(&psi_transform(&b, z));
            let sa = a.scaled(s).unwrap();
            let sb = b.scaled(s).unwrap();
            let d1 = psi_transform(&sa, z + s.ln()).diff(&psi_transform(&sb, z + s.ln()));
            for k in 0..4 {
                prop_assert!((d0[k] - d1[k]).abs() <= 1e-12 * (1.0 + d0[k].abs()));
            }
            let shift = psi_transform(&sa, z + s.ln()).diff(&psi_transform(&a, z));
            prop_assert!(shift[0].abs() < 1e-9 && shift[1].abs() < 1e-9);
            prop_assert!((shift[2] - s.ln()).abs() < 1e-12 && (shift[3] - s.ln()).abs() < 1e-12);
        }

        #[test]
        fn nms_output_is_sparse_subset(
            boxes in proptest::collection::vec((arb_box(), 0.0..1.0f64), 0..25),
            thr in 0.0..1.0f64,
        ) {
            let kept = greedy_nms(&boxes, thr);
            for k in &kept {
                prop_assert!(boxes.contains(k));
            }
            for i in 0..kept.len() {
                for j in (i + 1)..kept.len() {
                    prop_assert!(iou(&kept[i].0, &kept[j].0) <= thr);
                    prop_assert!(kept[i].1 >= kept[j].1);
                }
            }
        }
    }
}

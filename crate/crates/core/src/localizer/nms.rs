use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Objectness probability in `[0, 1]`.
    pub confidence: f64,
}

/// Confidence descending; ties broken by smaller `x_min`, then smaller `y_min`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Greedy non-maximum suppression. Survivors are returned in
/// [`detection_order`]; a box is dropped when its IoU with an already kept
/// box exceeds `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut suppressed = vec![false; sorted.len()];
    let mut keep = Vec::new();
    for i in 0..sorted.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(sorted[i]);
        for j in i + 1..sorted.len() {
            if !suppressed[j] && iou(&sorted[i].bbox, &sorted[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, c: f64) -> Detection {
        Detection { bbox: BBox::new(x0, y0, x1, y1), confidence: c }
    }

    #[test]
    fn single_and_duplicate() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        assert_eq!(nms(&[a], 0.5), vec![a]);
        let b = det(0.0, 0.0, 10.0, 10.0, 0.8);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn three_box_fixture() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(1.0, 1.0, 11.0, 11.0, 0.8);
        let c = det(20.0, 20.0, 30.0, 30.0, 0.7);
        assert_eq!(nms(&[c, b, a], 0.5), vec![a, c]);
    }

    #[test]
    fn tie_break_prefers_left_then_top() {
        let a = det(5.0, 0.0, 15.0, 10.0, 0.5);
        let b = det(0.0, 3.0, 10.0, 13.0, 0.5);
        let c = det(0.0, 1.0, 10.0, 11.0, 0.5);
        let out = nms(&[a, b, c], 0.99);
        assert_eq!(out, vec![c, b, a]);
    }
}

//! Detection post-processing: box decode, IoU, greedy NMS and the YOLO
//! loss terms.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Axis-aligned box by corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl CornerBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f32 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn well_formed(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }
}

/// Decoded detection: center, size, objectness and per-class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub bw: f32,
    pub bh: f32,
    pub objectness: f32,
    pub class_scores: Vec<f32>,
}

impl BBox {
    pub fn new(cx: f32, cy: f32, bw: f32, bh: f32, objectness: f32) -> Self {
        Self {
            cx,
            cy,
            bw,
            bh,
            objectness,
            class_scores: Vec::new(),
        }
    }

    pub fn corners(&self) -> CornerBox {
        CornerBox {
            x1: self.cx - self.bw / 2.0,
            y1: self.cy - self.bh / 2.0,
            x2: self.cx + self.bw / 2.0,
            y2: self.cy + self.bh / 2.0,
        }
    }
}

/// Raw network outputs for one anchor in one grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPrediction {
    pub tx: f32,
    pub ty: f32,
    pub tw: f32,
    pub th: f32,
    pub to: f32,
    pub cell: (usize, usize),
    pub prior: (f32, f32),
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Intersection over union; 0 for disjoint boxes or a zero-area union.
pub fn iou(a: &CornerBox, b: &CornerBox) -> Result<f32> {
    if !a.well_formed() || !b.well_formed() {
        return Err(Error::domain("box corners are inverted"));
    }
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &CornerBox, b: &CornerBox) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Sigmoid/exp decode of one prediction on an `grid x grid` map.
pub fn decode_box(p: &RawPrediction, grid: usize) -> Result<BBox> {
    if grid == 0 || p.cell.0 >= grid || p.cell.1 >= grid {
        return Err(Error::domain(format!(
            "cell {:?} outside a {grid}x{grid} grid",
            p.cell
        )));
    }
    let s = grid as f32;
    Ok(BBox::new(
        (sigmoid(p.tx) + p.cell.0 as f32) / s,
        (sigmoid(p.ty) + p.cell.1 as f32) / s,
        p.prior.0 * p.tw.exp(),
        p.prior.1 * p.th.exp(),
        sigmoid(p.to),
    ))
}

/// Drop boxes whose objectness is below `min_objectness`.
pub fn score_filter(boxes: &[BBox], min_objectness: f32) -> Vec<BBox> {
    boxes
        .iter()
        .filter(|b| b.objectness >= min_objectness)
        .cloned()
        .collect()
}

/// Greedy NMS returning indices into `boxes`, in selection order.
///
/// Candidates are visited by descending objectness, ties by ascending index.
/// A candidate is suppressed when its IoU with an already kept box is strictly
/// greater than `iou_threshold`.
pub fn nms_indices(boxes: &[BBox], iou_threshold: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .objectness
            .partial_cmp(&boxes[a].objectness)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let corners: Vec<CornerBox> = boxes.iter().map(BBox::corners).collect();

    let mut keep: Vec<usize> = Vec::new();
    let mut suppressed = vec![false; boxes.len()];
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou_unchecked(&corners[i], &corners[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(boxes: &[BBox], iou_threshold: f32) -> Vec<BBox> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i].clone())
        .collect()
}

/// Loss weights, grid geometry, and the responsibility mask.
///
/// `obj_mask[i * boxes + j]` marks box `j` of cell `i` as responsible for an
/// object; every other slot counts toward the no-object term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParams {
    pub lambda_coord: f32,
    pub lambda_noobj: f32,
    pub grid: usize,
    pub boxes: usize,
    pub obj_mask: Vec<bool>,
}

impl LossParams {
    /// Conventional default weights (`5.0`, `0.5`) with an all-empty mask.
    pub fn new(grid: usize, boxes: usize) -> Self {
        Self {
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
            grid,
            boxes,
            obj_mask: vec![false; grid * grid * boxes],
        }
    }

    pub fn slots(&self) -> usize {
        self.grid * self.grid * self.boxes
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub coord: f32,
    pub class: f32,
    pub noobj: f32,
    pub total: f32,
}

/// Coordinate, classification and no-object loss over `grid^2 * boxes` slots.
///
/// The confidence `C` of each slot is its `objectness`.
pub fn yolo_loss(preds: &[BBox], truths: &[BBox], params: &LossParams) -> Result<LossTerms> {
    if params.lambda_coord < 0.0 || params.lambda_noobj < 0.0 {
        return Err(Error::domain("loss coefficients must be non-negative"));
    }
    let slots = params.slots();
    if preds.len() != slots || truths.len() != slots || params.obj_mask.len() != slots {
        return Err(Error::shape(format!(
            "expected {slots} slots, got preds={} truths={} mask={}",
            preds.len(),
            truths.len(),
            params.obj_mask.len()
        )));
    }
    if preds.iter().chain(truths).any(|b| b.bw < 0.0 || b.bh < 0.0) {
        return Err(Error::domain("negative box width or height"));
    }

    let mut center = 0.0f32;
    let mut size = 0.0f32;
    let mut class = 0.0f32;
    let mut noobj = 0.0f32;
    for ((p, t), &obj) in preds.iter().zip(truths).zip(&params.obj_mask) {
        let dc = p.objectness - t.objectness;
        if obj {
            center += (p.cx - t.cx).powi(2) + (p.cy - t.cy).powi(2);
            size += (p.bw.sqrt() - t.bw.sqrt()).powi(2) + (p.bh.sqrt() - t.bh.sqrt()).powi(2);
            class += dc * dc;
        } else {
            noobj += dc * dc;
        }
    }
    let coord = params.lambda_coord * center + params.lambda_coord * size;
    let noobj = params.lambda_noobj * noobj;
    Ok(LossTerms {
        coord,
        class,
        noobj,
        total: coord + class + noobj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(x1: f32, y1: f32, x2: f32, y2: f32) -> CornerBox {
        CornerBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_examples() {
        let a = cb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &cb(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let v = iou(&a, &cb(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-7);
        let dot = cb(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&dot, &dot).unwrap(), 0.0);
        assert!(matches!(iou(&cb(2.0, 0.0, 1.0, 1.0), &a), Err(Error::Domain(_))));
    }

    #[test]
    fn decode_examples() {
        let p = RawPrediction {
            tx: 0.0,
            ty: 0.0,
            tw: 0.0,
            th: 0.0,
            to: 0.0,
            cell: (0, 0),
            prior: (1.0, 1.0),
        };
        let b = decode_box(&p, 1).unwrap();
        assert_eq!((b.cx, b.cy, b.bw, b.bh, b.objectness), (0.5, 0.5, 1.0, 1.0, 0.5));

        let shrunk = decode_box(&RawPrediction { tw: -10.0, prior: (2.0, 1.0), ..p }, 1).unwrap();
        assert_eq!(shrunk.bw, 2.0 * (-10.0f32).exp());
        let less = decode_box(&RawPrediction { tw: -9.0, prior: (2.0, 1.0), ..p }, 1).unwrap();
        assert!(shrunk.bw < less.bw);

        let cell = decode_box(&RawPrediction { cell: (2, 1), ..p }, 4).unwrap();
        assert_eq!((cell.cx, cell.cy), (2.5 / 4.0, 1.5 / 4.0));
        assert!(decode_box(&RawPrediction { cell: (4, 0), ..p }, 4).is_err());
    }

    #[test]
    fn objectness_stays_open_unit() {
        for k in -150..=150 {
            let s = sigmoid(k as f32 / 10.0);
            assert!(s > 0.0 && s < 1.0, "{k}: {s}");
        }
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.5).is_empty());

        // A and B overlap with IoU 0.6; C is far from both.
        let a = BBox::new(0.5, 0.5, 1.0, 1.0, 0.9);
        let b = BBox::new(0.75, 0.5, 1.0, 1.0, 0.8);
        let c = BBox::new(5.0, 5.0, 1.0, 1.0, 0.7);
        let ab = iou(&a.corners(), &b.corners()).unwrap();
        assert!((ab - 0.6).abs() < 1e-6, "{ab}");
        let kept = nms(&[b.clone(), c.clone(), a.clone()], 0.5);
        assert_eq!(kept, vec![a.clone(), c.clone()]);

        assert_eq!(nms_indices(&[a, b, c], 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn nms_ties_follow_input_order() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0, 0.5);
        let b = BBox::new(0.5, 0.5, 1.0, 1.0, 0.5);
        assert_eq!(nms_indices(&[a, b], 0.5), vec![0]);
    }

    #[test]
    fn score_filter_drops_low() {
        let boxes = vec![BBox::new(0., 0., 1., 1., 0.2), BBox::new(0., 0., 1., 1., 0.6)];
        assert_eq!(score_filter(&boxes, 0.5).len(), 1);
    }

    #[test]
    fn loss_examples() {
        let mut params = LossParams::new(1, 1);
        let t = BBox::new(0.5, 0.5, 0.25, 0.36, 1.0);
        params.obj_mask[0] = true;
        let zero = yolo_loss(std::slice::from_ref(&t), std::slice::from_ref(&t), &params).unwrap();
        assert_eq!(zero, LossTerms::default());

        let p = BBox { cx: 0.7, ..t.clone() };
        let l = yolo_loss(&[p], std::slice::from_ref(&t), &params).unwrap();
        assert!((l.coord - 0.2).abs() < 1e-6, "{l:?}");
        assert_eq!((l.class, l.noobj), (0.0, 0.0));

        params.obj_mask[0] = false;
        let p = BBox { objectness: 0.0, ..t.clone() };
        let l = yolo_loss(&[p], std::slice::from_ref(&t), &params).unwrap();
        assert_eq!((l.coord, l.class, l.noobj, l.total), (0.0, 0.0, 0.5, 0.5));
    }

    #[test]
    fn loss_errors() {
        let params = LossParams::new(1, 1);
        let neg = BBox::new(0.0, 0.0, -1.0, 1.0, 0.5);
        let ok = BBox::new(0.0, 0.0, 1.0, 1.0, 0.5);
        assert!(matches!(
            yolo_loss(&[neg], std::slice::from_ref(&ok), &params),
            Err(Error::Domain(_))
        ));
        assert!(matches!(yolo_loss(&[], &[ok], &params), Err(Error::Shape(_))));
    }
}

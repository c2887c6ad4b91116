use serde::{Deserialize, Serialize};

/// Axis-aligned box in absolute pixel coordinates, `x1 < x2`, `y1 < y2`.
/// The y axis grows downward (image convention), so "above" means a
/// smaller y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2
            && self.y1 < self.y2
            && [self.x1, self.y1, self.x2, self.y2]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Strict containment of `self` inside `other`.
    pub fn inside(&self, other: &BoundingBox) -> bool {
        self.x1 > other.x1 && self.y1 > other.y1 && self.x2 < other.x2 && self.y2 < other.y2
    }

    /// Normalized position features: (x1, y1, x2, y2, w, h, cx, cy), each
    /// divided by the image width or height as appropriate.
    pub fn pos_features(&self, image_w: f64, image_h: f64) -> [f64; 8] {
        let (cx, cy) = self.center();
        [
            self.x1 / image_w,
            self.y1 / image_h,
            self.x2 / image_w,
            self.y2 / image_h,
            self.width() / image_w,
            self.height() / image_h,
            cx / image_w,
            cy / image_h,
        ]
    }
}

/// Pairwise geometry of two boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeometry {
    /// Coordinate-wise min/max hull.
    pub union_box: BoundingBox,
    /// Overlap rectangle, absent when the boxes are disjoint.
    pub intersection_box: Option<BoundingBox>,
    pub iou: f64,
}

pub fn box_geometry(a: &BoundingBox, b: &BoundingBox) -> BoxGeometry {
    let union_box = BoundingBox::new(
        a.x1.min(b.x1),
        a.y1.min(b.y1),
        a.x2.max(b.x2),
        a.y2.max(b.y2),
    );
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    let (intersection_box, overlap) = if ix1 < ix2 && iy1 < iy2 {
        let ib = BoundingBox::new(ix1, iy1, ix2, iy2);
        let area = ib.area();
        (Some(ib), area)
    } else {
        (None, 0.0)
    };
    let iou = overlap / (a.area() + b.area() - overlap);
    BoxGeometry {
        union_box,
        intersection_box,
        iou,
    }
}

/// Width of the per-pair geometric feature vector fed to the pair heads:
/// union pos features (8) + intersection pos features or zeros (8) +
/// no-overlap flag (1) + iou (1).
pub const PAIR_GEOMETRY_DIM: usize = 18;

/// Geometry-derived stand-in for the union/intersection region features:
/// the model sees where the pair hull and overlap sit in the image rather
/// than pooled pixels.
pub fn pair_geometry_features(
    a: &BoundingBox,
    b: &BoundingBox,
    image_w: f64,
    image_h: f64,
) -> [f64; PAIR_GEOMETRY_DIM] {
    let geo = box_geometry(a, b);
    let mut out = [0.0; PAIR_GEOMETRY_DIM];
    out[..8].copy_from_slice(&geo.union_box.pos_features(image_w, image_h));
    match geo.intersection_box {
        Some(ib) => {
            out[8..16].copy_from_slice(&ib.pos_features(image_w, image_h));
            out[16] = 0.0;
        }
        None => out[16] = 1.0,
    }
    out[17] = geo.iou;
    out
}

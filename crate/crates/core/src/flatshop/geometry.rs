//! Geometry table for the FlatShop rasterizer.
//!
//! Body coordinates are measured in units of the canvas height, with the
//! portrait canvas spanning `[0, 0.75] × [0, 1]` and the body centred on
//! `X = BODY_CENTER`. Garment coordinates live in the unit square of the
//! flat catalog image; each slot owns an axis-aligned map from garment
//! space into body space (`SlotFrame`).

use super::GarmentClass;

pub const PORTRAIT_ASPECT_NUM: usize = 3;
pub const PORTRAIT_ASPECT_DEN: usize = 4;
pub const BODY_CENTER: f64 = 0.375;

pub type Point = (f64, f64);

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let (x, y) = p;
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn in_circle(p: Point, c: Point, r: f64) -> bool {
    let dx = p.0 - c.0;
    let dy = p.1 - c.1;
    dx * dx + dy * dy <= r * r
}

const C: f64 = BODY_CENTER;

const TORSO: [Point; 4] = [
    (C - 0.12, 0.21),
    (C + 0.12, 0.21),
    (C + 0.10, 0.50),
    (C - 0.10, 0.50),
];
const LEFT_ARM: [Point; 5] = [
    (C - 0.12, 0.21),
    (C - 0.165, 0.225),
    (C - 0.205, 0.53),
    (C - 0.16, 0.535),
    (C - 0.125, 0.31),
];
const LEFT_LEG: [Point; 4] = [
    (C - 0.10, 0.48),
    (C - 0.005, 0.48),
    (C - 0.02, 0.945),
    (C - 0.075, 0.945),
];
const HEAD: (Point, f64) = ((C, 0.11), 0.06);
const LEFT_HAND: (Point, f64) = ((C - 0.183, 0.555), 0.026);

fn mirror(p: Point) -> Point {
    (2.0 * C - p.0, p.1)
}

/// Whether a body-space point lies on the skin silhouette.
pub fn in_silhouette(p: Point) -> bool {
    let m = mirror(p);
    in_circle(p, HEAD.0, HEAD.1)
        || (libm::fabs(p.0 - C) <= 0.025 && p.1 >= 0.15 && p.1 <= 0.22)
        || point_in_polygon(p, &TORSO)
        || point_in_polygon(p, &LEFT_ARM)
        || point_in_polygon(m, &LEFT_ARM)
        || point_in_polygon(p, &LEFT_LEG)
        || point_in_polygon(m, &LEFT_LEG)
        || in_circle(p, LEFT_HAND.0, LEFT_HAND.1)
        || in_circle(m, LEFT_HAND.0, LEFT_HAND.1)
}

/// Axis-aligned placement of a slot's garment square in body space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotFrame {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl SlotFrame {
    pub fn for_class(class: GarmentClass) -> Self {
        match class {
            GarmentClass::UpperBody => Self {
                x0: C - 0.21,
                y0: 0.20,
                width: 0.42,
                height: 0.32,
            },
            GarmentClass::LowerBody => Self {
                x0: C - 0.12,
                y0: 0.47,
                width: 0.24,
                height: 0.48,
            },
            GarmentClass::Dresses => Self {
                x0: C - 0.21,
                y0: 0.20,
                width: 0.42,
                height: 0.64,
            },
        }
    }

    /// Body → garment-square coordinates.
    pub fn to_garment(&self, p: Point) -> Point {
        ((p.0 - self.x0) / self.width, (p.1 - self.y0) / self.height)
    }

    pub fn to_body(&self, q: Point) -> Point {
        (self.x0 + q.0 * self.width, self.y0 + q.1 * self.height)
    }
}

/// Shape knob of a garment: sleeve length, leg length or skirt flare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cut {
    Shirt { long_sleeves: bool },
    Trousers { long_legs: bool },
    Dress { flare: f64 },
}

impl Cut {
    pub fn class(&self) -> GarmentClass {
        match self {
            Cut::Shirt { .. } => GarmentClass::UpperBody,
            Cut::Trousers { .. } => GarmentClass::LowerBody,
            Cut::Dress { .. } => GarmentClass::Dresses,
        }
    }

    /// Outline in garment-square coordinates.
    pub fn outline(&self) -> alloc::vec::Vec<Point> {
        match *self {
            Cut::Shirt { long_sleeves } => {
                let (outer, inner) = if long_sleeves {
                    ((0.01, 0.93), (0.10, 0.96))
                } else {
                    ((0.10, 0.40), (0.19, 0.43))
                };
                alloc::vec![
                    (0.40, 0.02),
                    (0.50, 0.12),
                    (0.60, 0.02),
                    (0.80, 0.02),
                    (1.0 - outer.0, outer.1),
                    (1.0 - inner.0, inner.1),
                    (0.77, 0.30),
                    (0.75, 0.98),
                    (0.25, 0.98),
                    (0.23, 0.30),
                    inner,
                    outer,
                    (0.20, 0.02),
                ]
            }
            Cut::Trousers { long_legs } => {
                let hem = if long_legs { 0.97 } else { 0.42 };
                alloc::vec![
                    (0.06, 0.02),
                    (0.94, 0.02),
                    (0.97, hem),
                    (0.56, hem),
                    (0.50, 0.22),
                    (0.44, hem),
                    (0.03, hem),
                ]
            }
            Cut::Dress { flare } => alloc::vec![
                (0.36, 0.02),
                (0.64, 0.02),
                (0.72, 0.14),
                (0.70, 0.45),
                (0.5 + flare, 0.98),
                (0.5 - flare, 0.98),
                (0.30, 0.45),
                (0.28, 0.14),
            ],
        }
    }

    /// Chest logo anchor (top-left, garment coordinates) when the cut has one.
    pub fn logo_anchor(&self) -> Option<Point> {
        match self {
            Cut::Shirt { .. } => Some((0.40, 0.30)),
            Cut::Dress { .. } => Some((0.40, 0.20)),
            Cut::Trousers { .. } => None,
        }
    }
}

/// Per-person placement of the canonical body on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
    };

    /// Canvas (height units) → canonical body coordinates.
    pub fn to_body(&self, p: Point) -> Point {
        (
            C + (p.0 - C - self.dx) / self.scale,
            (p.1 - self.dy) / self.scale,
        )
    }

    pub fn to_canvas(&self, p: Point) -> Point {
        (
            C + self.scale * (p.0 - C) + self.dx,
            self.scale * p.1 + self.dy,
        )
    }
}

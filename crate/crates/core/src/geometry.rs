//! Axis-aligned box arithmetic.
//!
//! Boxes use continuous, half-open pixel coordinates `[x1, x2) x [y1, y2)`.
//! There is no `+1` pixel convention: width is simply `x2 - x1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound applied to `dw`/`dh` before exponentiation in [`decode`].
pub const DEFAULT_LOG_SIZE_CLAMP: f64 = 4.0;

/// Axis-aligned rectangle in image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// Builds a box from the `x y w h` corner-plus-size form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn center_x(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }

    #[inline]
    pub fn center_y(&self) -> f64 {
        0.5 * (self.y1 + self.y2)
    }

    /// Area, or 0 for inverted boxes.
    #[inline]
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Square root of the area: the "size" of a box used for anchor strides
    /// and scale-range filtering.
    #[inline]
    pub fn side_scale(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }

    /// Finite with non-negative extent.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x2 >= self.x1 && self.y2 >= self.y1
    }

    /// True when both sides are at least `min_side` pixels.
    pub fn has_min_side(&self, min_side: f64) -> bool {
        self.width() >= min_side && self.height() >= min_side
    }

    /// Intersection area with `other`.
    #[inline]
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Regression offsets of a target relative to a reference box.
///
/// `dx`, `dy` are center shifts in units of the reference width/height;
/// `dw`, `dh` are natural-log size ratios.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Delta {
    pub const ZERO: Delta = Delta { dx: 0.0, dy: 0.0, dw: 0.0, dh: 0.0 };

    pub const fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dw.is_finite() && self.dh.is_finite()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

/// Intersection over union. Zero when the union is empty.
#[inline]
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Clamps every coordinate into `[0, width] x [0, height]`.
///
/// Boxes lying fully outside collapse onto the border and come back
/// degenerate; callers drop those.
pub fn clip(b: &BBox, width: f64, height: f64) -> BBox {
    BBox::new(b.x1.clamp(0.0, width), b.y1.clamp(0.0, height), b.x2.clamp(0.0, width), b.y2.clamp(0.0, height))
}

fn check_anchor(anchor: &BBox) -> Result<()> {
    if !anchor.is_finite() || !(anchor.width() >= 1.0 && anchor.height() >= 1.0) {
        return Err(Error::DegenerateAnchor);
    }
    Ok(())
}

/// Offsets that move `anchor` onto `target`.
pub fn encode(anchor: &BBox, target: &BBox) -> Result<Delta> {
    check_anchor(anchor)?;
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(Delta {
        dx: (target.center_x() - anchor.center_x()) / aw,
        dy: (target.center_y() - anchor.center_y()) / ah,
        dw: (target.width() / aw).ln(),
        dh: (target.height() / ah).ln(),
    })
}

/// Applies `delta` to `anchor`, clamping `dw`/`dh` to
/// [`DEFAULT_LOG_SIZE_CLAMP`].
pub fn decode(anchor: &BBox, delta: &Delta) -> Result<BBox> {
    decode_clamped(anchor, delta, DEFAULT_LOG_SIZE_CLAMP)
}

/// [`decode`] with an explicit log-size clamp.
///
/// Edges are moved relative to the anchor's own edges so a zero delta
/// returns the anchor bit-for-bit.
pub fn decode_clamped(anchor: &BBox, delta: &Delta, log_clamp: f64) -> Result<BBox> {
    check_anchor(anchor)?;
    let (aw, ah) = (anchor.width(), anchor.height());
    let dw = delta.dw.clamp(-log_clamp, log_clamp);
    let dh = delta.dh.clamp(-log_clamp, log_clamp);
    // growth of each half-side, relative to the anchor size
    let gx = 0.5 * dw.exp_m1();
    let gy = 0.5 * dh.exp_m1();
    Ok(BBox::new(
        anchor.x1 + aw * (delta.dx - gx),
        anchor.y1 + ah * (delta.dy - gy),
        anchor.x2 + aw * (delta.dx + gx),
        anchor.y2 + ah * (delta.dy + gy),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Counts sample points of a fine grid covering both boxes.
    fn pixel_count_iou(a: &BBox, b: &BBox, cells: usize) -> f64 {
        let x0 = a.x1.min(b.x1);
        let y0 = a.y1.min(b.y1);
        let x1 = a.x2.max(b.x2);
        let y1 = a.y2.max(b.y2);
        let sx = (x1 - x0) / cells as f64;
        let sy = (y1 - y0) / cells as f64;
        let inside = |bb: &BBox, x: f64, y: f64| x >= bb.x1 && x < bb.x2 && y >= bb.y1 && y < bb.y2;
        let (mut inter, mut uni) = (0usize, 0usize);
        for i in 0..cells {
            let y = y0 + (i as f64 + 0.5) * sy;
            for j in 0..cells {
                let x = x0 + (j as f64 + 0.5) * sx;
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    uni += 1;
                }
            }
        }
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BBox {
        let x = rng.random_range(0.0..100.0);
        let y = rng.random_range(0.0..100.0);
        let w = rng.random_range(1.0..60.0);
        let h = rng.random_range(1.0..60.0);
        BBox::from_xywh(x, y, w, h)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        // frozen from the pixel-counting oracle at 3000 cells: 0.333333
        assert!((pixel_count_iou(&a, &b, 3000) - 1.0 / 3.0).abs() < 1e-3);
        assert!((iou(&a, &b) - 0.333_333).abs() < 1e-6);
    }

    #[test]
    fn degenerate_iou_is_zero() {
        let p = BBox::new(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = BBox::new(0.0, 0.0, 5.0, 0.0);
        assert_eq!(iou(&line, &BBox::new(0.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn iou_matches_pixel_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let oracle = pixel_count_iou(&a, &b, 400);
            // midpoint counting misplaces each edge by at most half a cell
            assert!((iou(&a, &b) - oracle).abs() < 1e-2, "{a:?} {b:?}");
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&BBox::new(-10.0, -10.0, 20.0, 20.0), 100.0, 100.0), BBox::new(0.0, 0.0, 20.0, 20.0));
        let inner = BBox::new(10.0, 10.0, 20.0, 20.0);
        assert_eq!(clip(&inner, 100.0, 100.0), inner);
        let out = clip(&BBox::new(150.0, 150.0, 200.0, 200.0), 100.0, 100.0);
        assert_eq!(out, BBox::new(100.0, 100.0, 100.0, 100.0));
        assert_eq!(out.area(), 0.0);
    }

    #[test]
    fn encode_decode_identity() {
        let a = BBox::new(3.5, 7.25, 40.0, 31.0);
        assert_eq!(encode(&a, &a).unwrap(), Delta::ZERO);
        assert_eq!(decode(&a, &Delta::ZERO).unwrap(), a);
    }

    #[test]
    fn degenerate_anchor_rejected() {
        let a = BBox::new(0.0, 0.0, 0.5, 10.0);
        let t = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(matches!(encode(&a, &t), Err(Error::DegenerateAnchor)));
        assert!(matches!(decode(&a, &Delta::ZERO), Err(Error::DegenerateAnchor)));
    }

    #[test]
    fn decode_clamps_log_size() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let big = decode(&a, &Delta::new(0.0, 0.0, 50.0, -50.0)).unwrap();
        assert!((big.width() - 10.0 * 4f64.exp()).abs() < 1e-9);
        assert!((big.height() - 10.0 * (-4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let t = random_box(&mut rng);
            let back = decode(&a, &encode(&a, &t).unwrap()).unwrap();
            for (x, y) in back.to_array().iter().zip(t.to_array()) {
                worst = worst.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        assert!(worst < 1e-9, "worst relative error {worst}");
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..150.0f64, -50.0..150.0f64, 0.0..80.0f64, 0.0..80.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assume!(a.area() > 0.0);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn clip_idempotent(a in arb_box(), w in 1.0..200.0f64, h in 1.0..200.0f64) {
            let once = clip(&a, w, h);
            prop_assert_eq!(clip(&once, w, h), once);
        }
    }
}

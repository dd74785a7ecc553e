//! Axis-aligned integer bounding boxes and intersection-over-union.

use serde::{Deserialize, Serialize};

/// Axis-aligned box with integer pixel coordinates. `(x0, y0)` is the
/// top-left corner (inclusive); `w` and `h` are always at least 1.
///
/// Coordinates are signed so that interpolation and window arithmetic can
/// momentarily step outside the sensor before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i32,
    pub y0: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x0: i32, y0: i32, w: u32, h: u32) -> Self {
        debug_assert!(w >= 1 && h >= 1, "degenerate box {w}x{h}");
        BoundingBox { x0, y0, w, h }
    }

    /// One past the rightmost column.
    pub fn x1(&self) -> i64 {
        self.x0 as i64 + self.w as i64
    }

    /// One past the bottom row.
    pub fn y1(&self) -> i64 {
        self.y0 as i64 + self.h as i64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Integer center, rounded down for even dimensions.
    pub fn center(&self) -> (i32, i32) {
        (
            self.x0 + (self.w / 2) as i32,
            self.y0 + (self.h / 2) as i32,
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let ix0 = self.x0.max(other.x0) as i64;
        let iy0 = self.y0.max(other.y0) as i64;
        let ix1 = self.x1().min(other.x1());
        let iy1 = self.y1().min(other.y1());
        if ix1 <= ix0 || iy1 <= iy0 {
            return 0;
        }
        (ix1 - ix0) as u64 * (iy1 - iy0) as u64
    }

    /// Intersection-over-union in `[0, 1]`. Disjoint boxes give exactly 0;
    /// identical boxes give exactly 1.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Clips the box to `[0, width) x [0, height)`. Returns `None` when
    /// nothing remains.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x0 = self.x0.max(0) as i64;
        let y0 = self.y0.max(0) as i64;
        let x1 = self.x1().min(width as i64);
        let y1 = self.y1().min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BoundingBox::new(
            x0 as i32,
            y0 as i32,
            (x1 - x0) as u32,
            (y1 - y0) as u32,
        ))
    }
}

/// Free-function alias; reads better at call sites that treat IoU as a metric.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes_have_iou_one() {
        let b = BoundingBox::new(3, 4, 10, 20);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn disjoint_boxes_have_iou_zero() {
        let a = BoundingBox::new(0, 0, 10, 10);
        let b = BoundingBox::new(100, 100, 10, 10);
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn half_overlap_case() {
        // Overlap 5x10 = 50, union 200 - 50 = 150.
        let a = BoundingBox::new(0, 0, 10, 10);
        let b = BoundingBox::new(5, 0, 10, 10);
        let expected = 50.0 / 150.0;
        assert!((a.iou(&b) - expected).abs() < 1e-12);
    }

    #[test]
    fn clip_drops_offscreen_boxes() {
        let b = BoundingBox::new(-10, -10, 5, 5);
        assert_eq!(b.clip_to(240, 180), None);
        let c = BoundingBox::new(-10, 0, 20, 20).clip_to(240, 180).unwrap();
        assert_eq!(c, BoundingBox::new(0, 0, 10, 20));
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -50i32..250, ay in -50i32..200, aw in 1u32..120, ah in 1u32..120,
            bx in -50i32..250, by in -50i32..200, bw in 1u32..120, bh in 1u32..120,
        ) {
            let a = BoundingBox::new(ax, ay, aw, ah);
            let b = BoundingBox::new(bx, by, bw, bh);
            let ab = a.iou(&b);
            let ba = b.iou(&a);
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn intersection_never_exceeds_either_area(
            ax in -50i32..250, ay in -50i32..200, aw in 1u32..120, ah in 1u32..120,
            bx in -50i32..250, by in -50i32..200, bw in 1u32..120, bh in 1u32..120,
        ) {
            let a = BoundingBox::new(ax, ay, aw, ah);
            let b = BoundingBox::new(bx, by, bw, bh);
            let inter = a.intersection_area(&b);
            prop_assert!(inter <= a.area());
            prop_assert!(inter <= b.area());
        }
    }
}

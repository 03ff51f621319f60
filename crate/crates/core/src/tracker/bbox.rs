use crate::scalar::Scalar;

/// Axis-aligned box: top-left corner plus extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T: Scalar = f64> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    /// `None` unless both extents are positive and all fields finite.
    pub fn new(x: T, y: T, w: T, h: T) -> Option<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        (finite && w > T::zero() && h > T::zero()).then_some(Self { x, y, w, h })
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (self.x + half * self.w, self.y + half * self.h)
    }

    /// Measurement vector `(cx, cy, aspect = w/h, h)`.
    pub fn to_xyah(&self) -> [T; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w / self.h, self.h]
    }

    pub fn from_xyah(m: [T; 4]) -> Self {
        let w = m[2] * m[3];
        let half = T::lit(0.5);
        Self {
            x: m[0] - half * w,
            y: m[1] - half * m[3],
            w,
            h: m[3],
        }
    }
}

/// Intersection over union; zero for disjoint or degenerate boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let x1 = a.x.max(b.x);
    let y1 = a.y.max(b.y);
    let x2 = (a.x + a.w).min(b.x + b.w);
    let y2 = (a.y + a.h).min(b.y + b.h);
    let inter = (x2 - x1).max(T::zero()) * (y2 - y1).max(T::zero());
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(1., 2., 3., 4.), &b(1., 2., 3., 4.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 1., 1.)), 0.0);
        // overlap 5x5 = 25, union 100 + 100 - 25 = 175
        let v = iou(&b(0., 0., 10., 10.), &b(5., 5., 10., 10.));
        assert!((v - 25.0 / 175.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_extent() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_none());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_none());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn xyah_round_trip() {
        let bb = b(10., 20., 30., 60.);
        let back = BBox::from_xyah(bb.to_xyah());
        assert!((back.x - bb.x).abs() < 1e-12 && (back.w - bb.w).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = b(ax, ay, aw, ah);
            let c = b(bx, by, bw, bh);
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }
}

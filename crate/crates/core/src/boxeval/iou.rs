//! Overlap of oriented boxes: exact footprint intersection by convex
//! polygon clipping, extruded along the vertical for 3D IoU.

use super::label::Box3D;

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area, signed (positive for counter-clockwise).
pub fn signed_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

fn ccw(mut poly: Vec<Pt>) -> Vec<Pt> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland–Hodgman clip of `subject` against the convex polygon `clip`.
/// Both must be counter-clockwise.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

/// Intersection of segment `p q` with the infinite line `a b`.
fn intersect(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let (cp, cq) = (cross(a, b, p), cross(a, b, q));
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of the two ground footprints.
pub fn footprint_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let pa = ccw(a.footprint().to_vec());
    let pb = ccw(b.footprint().to_vec());
    signed_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// IoU of the rotated ground footprints (bird's-eye view).
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = footprint_intersection(a, b);
    let union = a.width() * a.length() + b.width() * b.length() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times the overlap of the
/// `[y - h, y]` vertical intervals.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a_lo, a_hi) = a.y_interval();
    let (b_lo, b_hi) = b.y_interval();
    let dy = a_hi.min(b_hi) - a_lo.max(b_lo);
    if dy <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection(a, b) * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection of two image boxes `[l, t, r, b]` over the area of `a`.
pub fn overlap_of_first(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    let area = (a[2] - a[0]) * (a[3] - a[1]);
    if w <= 0.0 || h <= 0.0 || area <= 0.0 {
        return 0.0;
    }
    w * h / area
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_4;

    fn bx(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, ry: f64) -> Box3D {
        Box3D::new(Vector3::new(x, y, z), [h, w, l], ry).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a = bx(1.0, 1.5, 20.0, 1.5, 1.6, 3.9, 0.4);
        assert_eq!(bev_iou(&a, &a), 1.0);
        assert_eq!(iou_3d(&a, &a), 1.0);
        // same box written differently: footprint clipping must still give 1
        let b = bx(1.0, 1.5, 20.0, 1.5, 1.6, 3.9, 0.4 - std::f64::consts::PI);
        assert!((bev_iou(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_unit_square() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, FRAC_PI_4);
        let octagon = 2.0 * (2f64.sqrt() - 1.0);
        let expected = octagon / (2.0 - octagon);
        assert!((bev_iou(&a, &b) - expected).abs() < 1e-12);
        assert!((expected - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn disjoint_boxes() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(10.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3);
        assert_eq!(bev_iou(&a, &b), 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn half_vertical_overlap() {
        let a = bx(0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 1.5, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &b), 1.0);
        let c = bx(0.0, 3.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(iou_3d(&a, &c), 0.0);
    }

    #[test]
    fn half_shifted_square() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&a, &b) - 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn image_overlap() {
        assert_eq!(overlap_of_first(&[0.0, 0.0, 2.0, 2.0], &[1.0, 0.0, 5.0, 5.0]), 0.5);
        assert_eq!(overlap_of_first(&[0.0, 0.0, 2.0, 2.0], &[3.0, 3.0, 5.0, 5.0]), 0.0);
    }
}

//! Convex polygon utilities used by the ellipse IoU estimator.

use nalgebra::Vector2;

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

#[inline]
fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clipping of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    let mut input = Vec::with_capacity(subject.len() * 2);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        std::mem::swap(&mut input, &mut output);
        output.clear();
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            if dp >= 0.0 {
                output.push(p);
                if dq < 0.0 {
                    output.push(p + (q - p) * (dp / (dp - dq)));
                }
            } else if dq >= 0.0 {
                output.push(p + (q - p) * (dp / (dp - dq)));
            }
        }
    }
    output
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn intersection_area(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    signed_area(&clip_convex(a, b)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(x0, y0),
            Vector2::new(x0 + s, y0),
            Vector2::new(x0 + s, y0 + s),
            Vector2::new(x0, y0 + s),
        ]
    }

    #[test]
    fn overlapping_squares() {
        let a = square(0.0, 0.0, 2.0);
        let b = square(1.0, 1.0, 2.0);
        assert!((intersection_area(&a, &b) - 1.0).abs() < 1e-12);
        assert!((signed_area(&a) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_squares() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(3.0, 3.0, 1.0);
        assert_eq!(intersection_area(&a, &b), 0.0);
    }

    #[test]
    fn contained_square() {
        let a = square(0.0, 0.0, 4.0);
        let b = square(1.0, 1.0, 1.0);
        assert!((intersection_area(&a, &b) - 1.0).abs() < 1e-12);
        assert!((intersection_area(&b, &a) - 1.0).abs() < 1e-12);
    }
}

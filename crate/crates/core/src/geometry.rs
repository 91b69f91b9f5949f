//! Small 2D helpers shared by perception, the simulator and the planners.

use nalgebra::Vector2;

pub type Point = Vector2<f64>;

/// Distance from `p` to the closed segment `a`–`b`.
pub fn distance_to_segment(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn cross(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Ray parameter `t ≥ 0` where `origin + t·dir` meets segment `a`–`b`.
pub fn ray_segment_intersection(origin: &Point, dir: &Point, a: &Point, b: &Point) -> Option<f64> {
    let e = b - a;
    let denom = cross(dir, &e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = a - origin;
    let t = cross(&w, &e) / denom;
    let s = cross(&w, dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// True when closed segments `p1`–`p2` and `q1`–`q2` share a point.
pub fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let d1 = cross(&(q2 - q1), &(p1 - q1));
    let d2 = cross(&(q2 - q1), &(p2 - q1));
    let d3 = cross(&(p2 - p1), &(q1 - p1));
    let d4 = cross(&(p2 - p1), &(q2 - p1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: &Point, b: &Point, p: &Point, d: f64| {
        d == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Oriented rectangle given by center, heading and full length/breadth.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBox {
    pub center: Point,
    pub heading: f64,
    pub length: f64,
    pub breadth: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.heading.sin_cos();
        let ax = Point::new(c, s) * (self.length / 2.0);
        let ay = Point::new(-s, c) * (self.breadth / 2.0);
        [
            self.center + ax + ay,
            self.center - ax + ay,
            self.center - ax - ay,
            self.center + ax - ay,
        ]
    }

    pub fn contains(&self, p: &Point) -> bool {
        let (s, c) = self.heading.sin_cos();
        let d = p - self.center;
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        lx.abs() <= self.length / 2.0 && ly.abs() <= self.breadth / 2.0
    }

    pub fn intersects_segment(&self, a: &Point, b: &Point) -> bool {
        if self.contains(a) || self.contains(b) {
            return true;
        }
        let k = self.corners();
        (0..4).any(|i| segments_intersect(&k[i], &k[(i + 1) % 4], a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_perpendicular_wall() {
        let t = ray_segment_intersection(
            &Point::new(0.0, 0.0),
            &Point::new(0.0, 1.0),
            &Point::new(-5.0, 7.5),
            &Point::new(5.0, 7.5),
        );
        assert!((t.unwrap() - 7.5).abs() < 1e-12);
        let miss = ray_segment_intersection(
            &Point::new(0.0, 0.0),
            &Point::new(0.0, -1.0),
            &Point::new(-5.0, 7.5),
            &Point::new(5.0, 7.5),
        );
        assert!(miss.is_none());
    }

    #[test]
    fn box_segment_contact() {
        let hull = OrientedBox {
            center: Point::new(0.0, 0.0),
            heading: 0.0,
            length: 7.9,
            breadth: 2.6,
        };
        assert!(hull.intersects_segment(&Point::new(-10.0, 1.2), &Point::new(10.0, 1.2)));
        assert!(!hull.intersects_segment(&Point::new(-10.0, 1.4), &Point::new(10.0, 1.4)));
        assert!(hull.intersects_segment(&Point::new(0.0, 0.0), &Point::new(0.5, 0.5)));
    }

    #[test]
    fn segment_distance_endpoint() {
        let d = distance_to_segment(&Point::new(8.0, 4.0), &Point::new(-5.0, 0.0), &Point::new(5.0, 0.0));
        assert!((d - 5.0).abs() < 1e-12);
    }
}

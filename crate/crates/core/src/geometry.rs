//! Planar geometry shared by the renderer, prompt builder and feature encoder.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scenario::AgentState;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Rigid transform from the scenario frame into the ego frame, where the ego
/// sits at the origin facing +y ("north").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFrame {
    origin: Vec2,
    heading: f64,
    rotation: f64,
}

impl EgoFrame {
    pub fn new(ego: &AgentState) -> Self {
        EgoFrame {
            origin: ego.position(),
            heading: ego.heading,
            rotation: FRAC_PI_2 - ego.heading,
        }
    }

    pub fn point(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(self.rotation)
    }

    pub fn vector(&self, v: Vec2) -> Vec2 {
        v.rotate(self.rotation)
    }

    pub fn heading(&self, h: f64) -> f64 {
        wrap_angle(h - self.heading + FRAC_PI_2)
    }

    pub fn inverse_point(&self, p: Vec2) -> Vec2 {
        p.rotate(-self.rotation) + self.origin
    }
}

/// Maps a point and heading into the ego frame of `ego_pose`.
pub fn ego_north_transform(p: Vec2, heading: f64, ego_pose: &AgentState) -> (Vec2, f64) {
    let frame = EgoFrame::new(ego_pose);
    (frame.point(p), frame.heading(heading))
}

/// Axis-aligned square `[-half, half]^2`, boundary included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteredSquare {
    pub half: f64,
}

impl CenteredSquare {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x.abs() <= self.half && p.y.abs() <= self.half
    }

    /// Liang-Barsky clip of segment `a`-`b`; `None` when fully outside.
    pub fn clip_segment(&self, a: Vec2, b: Vec2) -> Option<(Vec2, Vec2)> {
        let d = b - a;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let checks = [
            (-d.x, a.x + self.half),
            (d.x, self.half - a.x),
            (-d.y, a.y + self.half),
            (d.y, self.half - a.y),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return None;
                }
            }
        }
        let mut start = if t0 > 0.0 { a + d * t0 } else { a };
        let mut end = if t1 < 1.0 { a + d * t1 } else { b };
        // snap entry/exit points onto the boundary exactly
        if t0 > 0.0 {
            start = self.snap(start);
        }
        if t1 < 1.0 {
            end = self.snap(end);
        }
        Some((start, end))
    }

    fn snap(&self, p: Vec2) -> Vec2 {
        let snap1 = |v: f64| {
            if (v.abs() - self.half).abs() <= 1e-9 * self.half.max(1.0) {
                self.half.copysign(v)
            } else {
                v.clamp(-self.half, self.half)
            }
        };
        Vec2::new(snap1(p.x), snap1(p.y))
    }

    /// Clips an open polyline, returning the pieces that lie inside.
    pub fn clip_polyline(&self, pts: &[Vec2]) -> Vec<Vec<Vec2>> {
        let mut pieces: Vec<Vec<Vec2>> = Vec::new();
        let mut current: Vec<Vec2> = Vec::new();
        for w in pts.windows(2) {
            match self.clip_segment(w[0], w[1]) {
                Some((s, e)) => {
                    if current.last() != Some(&s) {
                        if current.len() >= 2 {
                            pieces.push(std::mem::take(&mut current));
                        }
                        current.clear();
                        current.push(s);
                    }
                    current.push(e);
                }
                None => {
                    if current.len() >= 2 {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.clear();
                }
            }
        }
        if current.len() >= 2 {
            pieces.push(current);
        }
        pieces
    }

    /// Sutherland-Hodgman clip of a closed polygon against the square.
    pub fn clip_polygon(&self, poly: &[Vec2]) -> Vec<Vec2> {
        let h = self.half;
        // each edge: inside test and intersection along one axis
        type Inside = fn(Vec2, f64) -> bool;
        let edges: [(Inside, usize, f64); 4] = [
            (|p, h| p.x >= -h, 0, -h),
            (|p, h| p.x <= h, 0, h),
            (|p, h| p.y >= -h, 1, -h),
            (|p, h| p.y <= h, 1, h),
        ];
        let mut out: Vec<Vec2> = poly.to_vec();
        if out.len() >= 2 && out.first() == out.last() {
            out.pop();
        }
        for (inside, axis, bound) in edges {
            if out.is_empty() {
                break;
            }
            let input = std::mem::take(&mut out);
            for i in 0..input.len() {
                let cur = input[i];
                let prev = input[(i + input.len() - 1) % input.len()];
                let cur_in = inside(cur, h);
                let prev_in = inside(prev, h);
                if cur_in != prev_in {
                    let (pa, ca) = if axis == 0 { (prev.x, cur.x) } else { (prev.y, cur.y) };
                    let t = (bound - pa) / (ca - pa);
                    let mut p = prev + (cur - prev) * t;
                    if axis == 0 {
                        p.x = bound;
                    } else {
                        p.y = bound;
                    }
                    out.push(p);
                }
                if cur_in {
                    out.push(cur);
                }
            }
        }
        out
    }
}

/// Distance from `p` to segment `a`-`b` and the segment parameter of the foot point.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let d = b - a;
    let len2 = d.dot(d);
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(d) / len2).clamp(0.0, 1.0) };
    ((a + d * t - p).norm(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_keeps_pi_and_maps_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ego_position_maps_to_origin() {
        let ego = AgentState::new(12.5, -3.0, 0.7, 0.0, 0.0);
        let (p, h) = ego_north_transform(ego.position(), ego.heading, &ego);
        assert!(p.norm() < 1e-12);
        assert!((h - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn ahead_of_east_facing_ego_is_up() {
        let ego = AgentState::new(5.0, 5.0, 0.0, 0.0, 0.0);
        let (p, _) = ego_north_transform(Vec2::new(15.0, 5.0), 0.0, &ego);
        assert!((p.x - 0.0).abs() < 1e-12 && (p.y - 10.0).abs() < 1e-12, "{p:?}");
    }

    proptest! {
        #[test]
        fn transform_is_rigid(
            ex in -500.0..500.0f64, ey in -500.0..500.0f64, eh in -3.14..3.14f64,
            px in -500.0..500.0f64, py in -500.0..500.0f64,
            qx in -500.0..500.0f64, qy in -500.0..500.0f64,
        ) {
            let ego = AgentState::new(ex, ey, eh, 0.0, 0.0);
            let (p, q) = (Vec2::new(px, py), Vec2::new(qx, qy));
            let (tp, _) = ego_north_transform(p, 0.0, &ego);
            let (tq, _) = ego_north_transform(q, 0.0, &ego);
            prop_assert!(((tp - tq).norm() - (p - q).norm()).abs() < 1e-9);
        }

        /// Clipped endpoints are on the boundary or were already inside, and
        /// the clipped piece lies on the original segment.
        #[test]
        fn clipped_segment_endpoints(
            ax in -100.0..100.0f64, ay in -100.0..100.0f64,
            bx in -100.0..100.0f64, by in -100.0..100.0f64,
        ) {
            let sq = CenteredSquare { half: 60.0 };
            let (a, b) = (Vec2::new(ax, ay), Vec2::new(bx, by));
            if let Some((s, e)) = sq.clip_segment(a, b) {
                for (orig, clipped) in [(a, s), (b, e)] {
                    prop_assert!(sq.contains(clipped));
                    if !sq.contains(orig) {
                        let on_edge = (clipped.x.abs() - 60.0).abs() < 1e-9
                            || (clipped.y.abs() - 60.0).abs() < 1e-9;
                        prop_assert!(on_edge, "{clipped:?}");
                    }
                    // collinear with the source segment
                    let off = (clipped - a).cross(b - a).abs() / (b - a).norm().max(1e-12);
                    prop_assert!(off < 1e-7);
                }
            } else {
                // oracle: dense sampling never lands strictly inside
                for i in 0..=200 {
                    let p = a + (b - a) * (i as f64 / 200.0);
                    prop_assert!(!(p.x.abs() < 59.999 && p.y.abs() < 59.999));
                }
            }
        }
    }

    #[test]
    fn crossing_segment_clips_to_boundary() {
        let sq = CenteredSquare { half: 60.0 };
        let (s, e) = sq.clip_segment(Vec2::new(-100.0, 10.0), Vec2::new(100.0, 10.0)).unwrap();
        assert_eq!(s, Vec2::new(-60.0, 10.0));
        assert_eq!(e, Vec2::new(60.0, 10.0));
    }

    #[test]
    fn polygon_clip_stays_inside() {
        let sq = CenteredSquare { half: 10.0 };
        let poly = [
            Vec2::new(5.0, 5.0),
            Vec2::new(15.0, 5.0),
            Vec2::new(15.0, 8.0),
            Vec2::new(5.0, 8.0),
        ];
        let out = sq.clip_polygon(&poly);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|p| sq.contains(*p)));
        assert!(out.contains(&Vec2::new(10.0, 5.0)));
    }
}

//! Small planar geometry helpers used by trajectories and the tile grid.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Rotated a quarter turn counter-clockwise.
    pub fn left(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rotated a quarter turn clockwise.
    pub fn right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
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

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Rectangle spanned by a centre segment `a -> b` and a half width on each
/// side of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Unit vector along the segment.
    pub axis: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn from_segment(a: Vec2, b: Vec2, half_width: f64, fallback_axis: Vec2) -> Self {
        let d = b - a;
        let len = d.norm();
        let axis = if len > 1e-12 {
            d * (1.0 / len)
        } else {
            fallback_axis.normalized()
        };
        OrientedRect {
            center: (a + b) * 0.5,
            axis,
            half_length: len * 0.5,
            half_width,
        }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.axis * self.half_length;
        let n = self.axis.left() * self.half_width;
        [
            self.center + u + n,
            self.center + u - n,
            self.center - u - n,
            self.center - u + n,
        ]
    }

    pub fn bounds(&self) -> Aabb {
        let c = self.corners();
        let mut min = c[0];
        let mut max = c[0];
        for p in &c[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    /// Separating-axis test against an axis-aligned box. Touching counts as
    /// overlap.
    pub fn intersects(&self, b: &Aabb) -> bool {
        let own = self.bounds();
        if own.max.x < b.min.x || own.min.x > b.max.x || own.max.y < b.min.y || own.min.y > b.max.y
        {
            return false;
        }
        let bc = (b.min + b.max) * 0.5;
        let bh = (b.max - b.min) * 0.5;
        let d = bc - self.center;
        for axis in [self.axis, self.axis.left()] {
            let own_r = if axis == self.axis {
                self.half_length
            } else {
                self.half_width
            };
            let box_r = bh.x * axis.x.abs() + bh.y * axis.y.abs();
            if d.dot(axis).abs() > own_r + box_r {
                return false;
            }
        }
        true
    }
}

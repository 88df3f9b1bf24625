//! Points, squares and rectangles in the plane.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Axis-parallel rectangle `center ± half`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Point,
    pub half: [f64; 2],
}

impl Rect {
    pub fn new(center: Point, half: [f64; 2]) -> Self {
        Rect { center, half }
    }

    /// The square `Q(center, r)` of side `2r`.
    pub fn square(center: Point, r: f64) -> Self {
        Rect { center, half: [r, r] }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half[0] * self.half[1]
    }

    pub fn lo(&self) -> Point {
        sub(self.center, self.half)
    }

    pub fn hi(&self) -> Point {
        add(self.center, self.half)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.half[0].hypot(self.half[1])
    }

    pub fn contains(&self, p: Point) -> bool {
        (p[0] - self.center[0]).abs() <= self.half[0] && (p[1] - self.center[1]).abs() <= self.half[1]
    }

    /// Map `u` in `[0,1)^2` to a point of the rectangle.
    #[inline]
    pub fn at_unit(&self, u: [f64; 2]) -> Point {
        [
            self.center[0] + self.half[0] * (2.0 * u[0] - 1.0),
            self.center[1] + self.half[1] * (2.0 * u[1] - 1.0),
        ]
    }
}

/// A square query `Q(center, half_side)`.
pub type SquareQuery = Rect;

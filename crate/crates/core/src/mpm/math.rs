//! Minimal 2×2 linear algebra for the simulator.

use std::ops::{Add, Mul, Sub};

pub type Vec2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };
    pub const ZERO: Mat2 = Mat2 { m: [[0.0; 2]; 2] };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn scale(&self, s: f64) -> Self {
        Mat2::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn outer(a: Vec2, b: Vec2) -> Self {
        Mat2::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Polar decomposition `F = R·S` with `R` a rotation.
    pub fn polar(&self) -> (Mat2, Mat2) {
        let x = self.m[0][0] + self.m[1][1];
        let y = self.m[1][0] - self.m[0][1];
        let norm = (x * x + y * y).sqrt();
        let (c, s) = if norm > 0.0 { (x / norm, y / norm) } else { (1.0, 0.0) };
        let r = Mat2::new(c, -s, s, c);
        (r, r.transpose() * *self)
    }

    /// `F = U·diag(σ)·Vᵀ` with `U`, `V` rotations; a singular value is negative
    /// when `det F < 0`.
    pub fn svd(&self) -> (Mat2, Vec2, Mat2) {
        let (r, s) = self.polar();
        let (a, b, d) = (s.m[0][0], 0.5 * (s.m[0][1] + s.m[1][0]), s.m[1][1]);
        let (c, sn) = if b == 0.0 {
            (1.0, 0.0)
        } else {
            let tau = 0.5 * (a - d);
            let w = (tau * tau + b * b).sqrt();
            let t = if tau > 0.0 { b / (tau + w) } else { b / (tau - w) };
            let c = 1.0 / (t * t + 1.0).sqrt();
            (c, t * c)
        };
        let v = Mat2::new(c, -sn, sn, c);
        let sym = Mat2::new(a, b, b, d);
        let diag = v.transpose() * sym * v;
        (r * v, [diag.m[0][0], diag.m[1][1]], v)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

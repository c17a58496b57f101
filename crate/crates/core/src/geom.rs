//! Small fixed-size linear algebra: 3-vectors and orthonormal frames.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A point or direction in world space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 3]", into = "[T; 3]")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Vector3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 3]> for Vector3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T> From<Vector3<T>> for [T; 3] {
    fn from(v: Vector3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Real> Vector3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    #[inline]
    pub fn unit_y() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    #[inline]
    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` when the norm is below `eps`.
    pub fn try_normalize(&self, eps: T) -> Option<Self> {
        let n = self.norm();
        if n < eps || !n.is_finite() {
            None
        } else {
            Some(*self / n)
        }
    }

    #[inline]
    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    /// `(1 - w) * self + w * o`
    #[inline]
    pub fn lerp(&self, o: &Self, w: T) -> Self {
        *self * (T::one() - w) + *o * w
    }

    #[inline]
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(&self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    /// Rodrigues rotation of `self` about the unit `axis` by `angle` radians.
    pub fn rotated_about(&self, axis: &Self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        *self * c + axis.cross(self) * s + *axis * (axis.dot(self) * (T::one() - c))
    }

    pub fn cast<U: Real>(&self) -> Vector3<U> {
        Vector3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Real> Index<usize> for Vector3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vector3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vector3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vector3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vector3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vector3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vector3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vector3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T: Real> Neg for Vector3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Orthonormal frame stored as rows `(u, v, n)`: `u`/`v` span the cross-section, `n` is the
/// axial direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[Vector3<T>; 3]", into = "[Vector3<T>; 3]")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Frame<T> {
    pub u: Vector3<T>,
    pub v: Vector3<T>,
    pub n: Vector3<T>,
}

impl<T> From<[Vector3<T>; 3]> for Frame<T> {
    fn from([u, v, n]: [Vector3<T>; 3]) -> Self {
        Self { u, v, n }
    }
}

impl<T> From<Frame<T>> for [Vector3<T>; 3] {
    fn from(f: Frame<T>) -> Self {
        [f.u, f.v, f.n]
    }
}

impl<T: Real> Frame<T> {
    pub fn new(u: Vector3<T>, v: Vector3<T>, n: Vector3<T>) -> Self {
        Self { u, v, n }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::unit_x(), Vector3::unit_y(), Vector3::unit_z())
    }

    /// Determinant of the row matrix, `(u x v) . n`.
    pub fn det(&self) -> T {
        self.u.cross(&self.v).dot(&self.n)
    }

    /// `max |(R R^T - I)_ij|`; for a square matrix this equals the `R^T R - I` deviation
    /// up to rounding once either is small.
    pub fn orthonormality_error(&self) -> T {
        let rows = [self.u, self.v, self.n];
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((rows[i].dot(&rows[j]) - target).abs());
            }
        }
        worst
    }

    pub fn is_rotation(&self, tol: T) -> bool {
        self.orthonormality_error() <= tol && (self.det() - T::one()).abs() <= tol
    }

    /// Applies the rotation about `axis` by `angle` to all three rows.
    pub fn rotated_about(&self, axis: &Vector3<T>, angle: T) -> Self {
        Self::new(
            self.u.rotated_about(axis, angle),
            self.v.rotated_about(axis, angle),
            self.n.rotated_about(axis, angle),
        )
    }

    /// Rotates `u` and `v` about `n` by `angle` (counter-clockwise seen from `+n`).
    pub fn twisted(&self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(self.u * c + self.v * s, self.v * c - self.u * s, self.n)
    }

    /// Gram-Schmidt keeping `n` fixed, then `u`, and rebuilding `v = n x u`.
    pub fn reorthonormalized(&self) -> Option<Self> {
        let eps = T::lit(1e-12);
        let n = self.n.try_normalize(eps)?;
        let u = (self.u - n * self.u.dot(&n)).try_normalize(eps)?;
        let v = n.cross(&u);
        Some(Self::new(u, v, n))
    }

    /// World-space vector from local cross-section coordinates `(x, y)`.
    #[inline]
    pub fn in_plane(&self, x: T, y: T) -> Vector3<T> {
        self.u * x + self.v * y
    }

    /// Expresses `d` in this frame's coordinates `(d.u, d.v, d.n)`.
    #[inline]
    pub fn to_local(&self, d: &Vector3<T>) -> Vector3<T> {
        Vector3::new(d.dot(&self.u), d.dot(&self.v), d.dot(&self.n))
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (self.u - o.u)
            .max_abs()
            .max((self.v - o.v).max_abs())
            .max((self.n - o.n).max_abs())
    }

    pub fn cast<U: Real>(&self) -> Frame<U> {
        Frame::new(self.u.cast(), self.v.cast(), self.n.cast())
    }
}

/// Spherical interpolation between unit vectors `a` and `b`.
///
/// Returns `None` for (near) antipodal inputs, where the great circle is undefined.
pub fn slerp<T: Real>(a: &Vector3<T>, b: &Vector3<T>, w: T) -> Option<Vector3<T>> {
    let cos = a.dot(b).max(-T::one()).min(T::one());
    if cos < -T::one() + T::lit(1e-12) {
        return None;
    }
    let theta = cos.acos();
    if theta < T::lit(1e-9) {
        return a.lerp(b, w).try_normalize(T::lit(1e-12));
    }
    let s = theta.sin();
    let wa = ((T::one() - w) * theta).sin() / s;
    let wb = (w * theta).sin() / s;
    Some(*a * wa + *b * wb)
}

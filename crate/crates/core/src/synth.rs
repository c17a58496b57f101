//! Analytic sine-bent cylinders for ground truth, and the scores used to compare volumes.

use std::f64::consts::PI;

use crate::deform::{bend, straight_origin};
use crate::error::{Error, Result};
use crate::geom::{Frame, Vector3};
use crate::rig::{DeformationRig, Keyframe};
use crate::scalar::Real;
use crate::volume::{ScalarVolume, VolumeGrid};

/// Voxels kept free around the bent shape.
const MARGIN: f64 = 2.0;
/// Cage padding beyond the cylinder radius, in voxels.
const CAGE_PADDING: f64 = 2.0;

/// Cylinder whose axis follows `x = A sin(2 pi periods (z - z0) / length)` in the bent grid.
/// All lengths are in voxels of a unit-spacing grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderSpec {
    pub radius: f64,
    /// Extent of the sinusoid along the grid z axis.
    pub length: f64,
    pub amplitude: f64,
    pub periods: f64,
    pub dims: [usize; 3],
    /// Samples of the analytic axis used as the ground-truth rig.
    pub keyframes: usize,
}

impl CylinderSpec {
    /// 128^3 grid, radius 8, amplitude 20, 1.5 periods.
    pub fn standard() -> Self {
        Self::fitted([128, 128, 128], 8.0, 20.0, 1.5).expect("standard cylinder fits")
    }

    /// Picks the longest even integer `length` for which the bent shape fits `dims`.
    pub fn fitted(dims: [usize; 3], radius: f64, amplitude: f64, periods: f64) -> Result<Self> {
        let mut length = (dims[2] as f64 - 1.0).floor();
        if length % 2.0 != 0.0 {
            length -= 1.0;
        }
        while length >= 2.0 {
            let spec = Self {
                radius,
                length,
                amplitude,
                periods,
                dims,
                keyframes: 64,
            };
            if spec.check_fit().is_ok() {
                return Ok(spec);
            }
            length -= 2.0;
        }
        Err(Error::DoesNotFit(format!(
            "no sinusoid length fits radius {radius}, amplitude {amplitude} in {dims:?}"
        )))
    }

    fn center(&self) -> (f64, f64, f64) {
        let [nx, ny, nz] = self.dims;
        let z0 = (nz as f64 - 1.0) / 2.0 - self.length / 2.0;
        ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0, z0)
    }

    fn omega(&self) -> f64 {
        2.0 * PI * self.periods / self.length
    }

    /// Point of the analytic axis at grid height `z`.
    pub fn axis_point(&self, z: f64) -> Vector3<f64> {
        let (cx, cy, z0) = self.center();
        Vector3::new(cx + self.amplitude * (self.omega() * (z - z0)).sin(), cy, z)
    }

    /// Unit tangent of the analytic axis at grid height `z`.
    pub fn axis_tangent(&self, z: f64) -> Vector3<f64> {
        let (_, _, z0) = self.center();
        let dx = self.amplitude * self.omega() * (self.omega() * (z - z0)).cos();
        Vector3::new(dx, 0.0, 1.0) / (1.0 + dx * dx).sqrt()
    }

    pub fn z_range(&self) -> (f64, f64) {
        let (_, _, z0) = self.center();
        (z0, z0 + self.length)
    }

    pub fn check_fit(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.amplitude >= 0.0 && self.periods > 0.0 && self.length > 0.0) {
            return Err(Error::DoesNotFit("radius, length and periods must be positive, amplitude >= 0".into()));
        }
        if self.keyframes < 2 {
            return Err(Error::DoesNotFit("need at least two keyframes".into()));
        }
        let [nx, ny, nz] = self.dims;
        let (cx, cy, z0) = self.center();
        let reach = self.radius + 1.0;
        let lo = MARGIN;
        let fits = |c: f64, half: f64, n: usize| c - half >= lo && c + half <= n as f64 - 1.0 - lo;
        if !fits(cx, self.amplitude + reach, nx) || !fits(cy, reach, ny) {
            return Err(Error::DoesNotFit(format!("cross-section exceeds {dims:?}", dims = self.dims)));
        }
        // the end caps tilt with the axis tangent
        let (za, zb) = self.z_range();
        let cap_a = reach * self.axis_tangent(za).x.abs() + 0.5;
        let cap_b = reach * self.axis_tangent(zb).x.abs() + 0.5;
        if za - cap_a < lo || zb + cap_b > nz as f64 - 1.0 - lo || z0 < 0.0 {
            return Err(Error::DoesNotFit(format!("length {} exceeds depth {}", self.length, nz)));
        }
        Ok(())
    }

    /// Rig sampled at `keyframes` equally spaced heights along the analytic axis, with
    /// `v` fixed to the grid y axis and `n` the analytic tangent.
    pub fn true_rig<T: Real>(&self) -> Result<DeformationRig<T>> {
        let (za, _) = self.z_range();
        let m = self.keyframes;
        let ext = T::lit(self.radius + CAGE_PADDING);
        let kfs = (0..m)
            .map(|i| {
                let z = za + self.length * i as f64 / (m - 1) as f64;
                let n = self.axis_tangent(z);
                let v = Vector3::unit_y();
                let frame = Frame::new(v.cross(&n), v, n);
                Keyframe::new(self.axis_point(z).cast(), frame.cast(), [ext, ext])
            })
            .collect();
        DeformationRig::new(kfs)
    }

    /// Grid of the bent volume: unit spacing, origin at zero.
    pub fn bent_grid<T: Real>(&self) -> VolumeGrid<T> {
        VolumeGrid {
            dims: self.dims,
            spacing: Vector3::new(T::one(), T::one(), T::one()),
            origin: Vector3::zeros(),
        }
    }

    /// Straight-volume dims for an axis of arclength `axial_length`; cross-section parity
    /// follows the bent grid so that a zero-amplitude bend hits voxel centers exactly.
    pub fn straight_dims(&self, axial_length: f64) -> [usize; 3] {
        let half = (self.radius + CAGE_PADDING).ceil() as usize;
        let across = |n: usize| if n % 2 == 0 { 2 * half } else { 2 * half + 1 };
        [
            across(self.dims[0]),
            across(self.dims[1]),
            axial_length.round().max(1.0) as usize,
        ]
    }
}

/// Value of the analytic cylinder at rig-local `(x, y, z)`: 1 inside, 0 outside, with a
/// one-voxel linear ramp centered on the surface and the caps.
pub fn cylinder_value(radius: f64, axial_length: f64, x: f64, y: f64, z: f64) -> f64 {
    let radial = (radius + 0.5 - (x * x + y * y).sqrt()).clamp(0.0, 1.0);
    let axial = (z.min(axial_length - z) + 0.5).clamp(0.0, 1.0);
    radial * axial
}

/// Voxelized straight cylinder on a rig-local grid of the given dims. Cross-section spacing is
/// one voxel; the `dims[2]` slabs tile `[0, axial_length]` exactly.
pub fn straight_cylinder<T: Real>(radius: f64, axial_length: f64, dims: [usize; 3]) -> ScalarVolume<T> {
    let sz = axial_length / dims[2] as f64;
    let spacing = Vector3::new(T::one(), T::one(), T::lit(sz));
    let origin = straight_origin(dims, spacing);
    let o = origin.cast::<f64>();
    ScalarVolume::from_fn(dims, spacing, origin, |i, j, k| {
        T::lit(cylinder_value(radius, axial_length, o.x + i as f64, o.y + j as f64, o.z + k as f64 * sz))
    })
}

/// Ground truth for one synthetic case.
#[derive(Debug, Clone)]
pub struct BentCylinder<T> {
    pub bent: ScalarVolume<T>,
    pub straight: ScalarVolume<T>,
    pub true_rig: DeformationRig<T>,
}

/// Straight voxelization, its sine-bent counterpart via [`bend`], and the rig relating them.
pub fn make_bent_cylinder<T: Real>(spec: &CylinderSpec) -> Result<BentCylinder<T>> {
    spec.check_fit()?;
    let true_rig = spec.true_rig::<T>()?;
    let axial_length = true_rig.total_length().as_f64();
    let straight = straight_cylinder::<T>(spec.radius, axial_length, spec.straight_dims(axial_length));
    let bent = bend(&true_rig, &straight, &spec.bent_grid());
    Ok(BentCylinder {
        bent,
        straight,
        true_rig,
    })
}

fn check_dims<T: Real>(a: &ScalarVolume<T>, b: &ScalarVolume<T>) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::DimsMismatch { a: a.dims, b: b.dims });
    }
    Ok(())
}

/// `||a - b||_2 / L`, with `L` the axial (z) length of the ground truth `b` in world units.
pub fn normalized_l2<T: Real>(a: &ScalarVolume<T>, b: &ScalarVolume<T>) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    let length = b.dims[2] as f64 * b.spacing.z.as_f64();
    Ok(sum.sqrt() / length)
}

/// Pearson correlation over voxels where either volume is non-zero.
pub fn occupied_correlation<T: Real>(a: &ScalarVolume<T>, b: &ScalarVolume<T>) -> Result<f64> {
    check_dims(a, b)?;
    let pairs: Vec<(f64, f64)> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.as_f64(), y.as_f64()))
        .filter(|(x, y)| *x > 0.0 || *y > 0.0)
        .collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return Ok(0.0);
    }
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x, sb + y));
    let (ma, mb) = (ma / n, mb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    Ok(cov / (va * vb).sqrt())
}

//! The cylindrical warp `f(x, y, z) = c(z) + x u(z) + y v(z)` and the resampling built on it.
//!
//! Straight volumes live in rig-local coordinates: `x`/`y` across the cross-section, `z` the
//! arclength along the rig. Their voxel `(i, j, k)` sits at
//! `((i - (nx - 1) / 2) sx, (j - (ny - 1) / 2) sy, (k + 1/2) sz)`.

use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::geom::Vector3;
use crate::rig::{DeformationRig, SegmentGeometry};
use crate::scalar::Real;
use crate::volume::{write_volume_f32, ScalarVolume, VolumeGrid};

/// World point of rig-local coordinates `(x, y, z)`.
pub fn eval_deformation<T: Real>(rig: &DeformationRig<T>, x: T, y: T, z: T) -> Result<Vector3<T>> {
    let s = rig.eval(z)?;
    Ok(s.position + s.frame.in_plane(x, y))
}

/// Grid of a straightened output volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraightVolumeSpec<T> {
    pub out_dims: [usize; 3],
    pub out_spacing: Vector3<T>,
}

impl<T: Real> StraightVolumeSpec<T> {
    /// Depth covers the rig arclength; width and height cover the largest keyframe extents.
    pub fn from_rig(rig: &DeformationRig<T>, out_spacing: Vector3<T>) -> Self {
        let [rx, ry] = rig.max_extent();
        let across = |r: T, s: T| 2 * ((r / s).as_f64() - 1e-9).ceil().max(0.0) as usize + 1;
        let depth = (rig.total_length() / out_spacing.z).as_f64().round().max(1.0) as usize;
        Self {
            out_dims: [across(rx, out_spacing.x), across(ry, out_spacing.y), depth],
            out_spacing,
        }
    }

    /// Matches the grid of an existing straight volume.
    pub fn like(vol: &ScalarVolume<T>) -> Self {
        Self {
            out_dims: vol.dims,
            out_spacing: vol.spacing,
        }
    }

    pub fn origin(&self) -> Vector3<T> {
        straight_origin(self.out_dims, self.out_spacing)
    }

    pub fn grid(&self) -> VolumeGrid<T> {
        VolumeGrid {
            dims: self.out_dims,
            spacing: self.out_spacing,
            origin: self.origin(),
        }
    }
}

/// Origin that puts the rig axis through the middle of the cross-section and voxel
/// centers at `z = (k + 1/2) sz`.
pub fn straight_origin<T: Real>(dims: [usize; 3], spacing: Vector3<T>) -> Vector3<T> {
    let half = T::lit(0.5);
    Vector3::new(
        -T::from_count(dims[0] - 1) * half * spacing.x,
        -T::from_count(dims[1] - 1) * half * spacing.y,
        half * spacing.z,
    )
}

#[inline]
fn inside_extent<T: Real>(x: T, y: T, extent: [T; 2]) -> bool {
    let slack = T::one() + T::lit(1e-9);
    x.abs() <= extent[0] * slack && y.abs() <= extent[1] * slack
}

/// Resamples `vol` into the straight pose. Samples outside the rig's cage or outside the
/// source volume are zero.
pub fn straighten<T: Real>(rig: &DeformationRig<T>, vol: &ScalarVolume<T>, spec: &StraightVolumeSpec<T>) -> ScalarVolume<T> {
    let [nx, ny, nz] = spec.out_dims;
    let origin = spec.origin();
    let sp = spec.out_spacing;
    let mut data = vec![T::zero(); nx * ny * nz];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        let z = origin.z + T::from_count(k) * sp.z;
        let Ok(s) = rig.eval(z) else {
            return;
        };
        for j in 0..ny {
            let y = origin.y + T::from_count(j) * sp.y;
            for i in 0..nx {
                let x = origin.x + T::from_count(i) * sp.x;
                if !inside_extent(x, y, s.extent) {
                    continue;
                }
                let p = s.position + s.frame.in_plane(x, y);
                slice[i + nx * j] = vol.trilinear_sample(&p).max(T::zero()).min(T::one());
            }
        }
    });
    ScalarVolume {
        dims: spec.out_dims,
        spacing: sp,
        origin,
        data,
    }
}

/// Row-major 2D image; row `j` holds `y(j)`, increasing with `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image2D<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i + self.width * j]
    }

    /// 8-bit quantization of values in `[0, 1]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        sum / self.data.len() as f64
    }
}

/// Evenly spaced coordinates over `[-r, r]`; a single sample sits at 0.
fn span<T: Real>(n: usize, r: T, i: usize) -> T {
    if n <= 1 {
        T::zero()
    } else {
        -r + r * T::lit(2.0) * T::from_count(i) / T::from_count(n - 1)
    }
}

/// Cross-section of `vol` in the plane of `R(t)` through `c(t)`, covering the interpolated
/// extent rectangle.
pub fn cross_section<T: Real>(
    rig: &DeformationRig<T>,
    vol: &ScalarVolume<T>,
    t: T,
    resolution: [usize; 2],
) -> Result<Image2D<T>> {
    let [w, h] = resolution;
    let s = rig.eval(t)?;
    let mut data = vec![T::zero(); w * h];
    data.par_chunks_mut(w.max(1)).enumerate().for_each(|(j, row)| {
        let y = span(h, s.extent[1], j);
        for (i, px) in row.iter_mut().enumerate() {
            let x = span(w, s.extent[0], i);
            *px = vol.trilinear_sample(&(s.position + s.frame.in_plane(x, y)));
        }
    });
    Ok(Image2D {
        width: w,
        height: h,
        data,
    })
}

/// Forward warp: places a straight volume (in rig-local coordinates) onto `target`.
///
/// Each target voxel is projected onto the rig polyline (closest point, ties to the smaller
/// `t`); the parameter is then refined to the nearby cross-section plane through the voxel and
/// the in-plane map is inverted. Voxels outside every cross-section cage stay zero.
pub fn bend<T: Real>(rig: &DeformationRig<T>, straight: &ScalarVolume<T>, target: &VolumeGrid<T>) -> ScalarVolume<T> {
    let slack = straight.spacing.z + target.spacing.max_abs();
    bend_with(rig, target, slack, |x, y, t| straight.cubic_sample(&Vector3::new(x, y, t)))
}

/// [`bend`] with the straight volume replaced by a function of rig-local `(x, y, t)`.
/// `slack` widens the search around the cage and the curve ends, in world units.
pub fn bend_with<T: Real>(
    rig: &DeformationRig<T>,
    target: &VolumeGrid<T>,
    slack: T,
    local_value: impl Fn(T, T, T) -> T + Sync,
) -> ScalarVolume<T> {
    let [rx, ry] = rig.max_extent();
    let reach = (rx * rx + ry * ry).sqrt() + slack;
    let segments: Vec<SegmentGeometry<T>> = (0..rig.len() - 1).map(|k| rig.segment(k)).collect();
    let positions = rig.positions();
    let cum = rig.cum_arclength();
    ScalarVolume::from_fn(target.dims, target.spacing, target.origin, |i, j, k| {
        let p = target.voxel_center(i, j, k);
        match inverse_point(&positions, cum, &segments, &p, reach, slack) {
            Some((t, x, y, extent)) if inside_extent(x, y, extent) => local_value(x, y, t),
            _ => T::zero(),
        }
    })
}

/// Rig-local `(t, x, y, extent)` of world point `p`, or `None` when `p` is beyond `reach`
/// of the curve. Off the ends the axial offset is folded into `t`.
fn inverse_point<T: Real>(
    positions: &[Vector3<T>],
    cum: &[T],
    segments: &[SegmentGeometry<T>],
    p: &Vector3<T>,
    reach: T,
    axial_step: T,
) -> Option<(T, T, T, [T; 2])> {
    let mut best: Option<(T, usize, T)> = None;
    for k in 0..positions.len() - 1 {
        let (a, b) = (positions[k], positions[k + 1]);
        let d = b - a;
        let lambda = ((*p - a).dot(&d) / d.norm_squared()).max(T::zero()).min(T::one());
        let dist = (a + d * lambda).distance(p);
        if best.is_none_or(|(bd, _, _)| dist < bd) {
            best = Some((dist, k, lambda));
        }
    }
    let (dist, k0, lambda0) = best?;
    if dist > reach {
        return None;
    }
    let t0 = cum[k0] + (cum[k0 + 1] - cum[k0]) * lambda0;

    // exact cross-section plane through p in the neighbourhood of the projection
    let mut refined: Option<(T, usize, T)> = None;
    let lo = k0.saturating_sub(1);
    let hi = (k0 + 1).min(segments.len() - 1);
    for (k, seg) in segments.iter().enumerate().take(hi + 1).skip(lo) {
        for l in seg.plane_roots(p, 4) {
            let t = cum[k] + (cum[k + 1] - cum[k]) * l;
            let gap = (t - t0).abs();
            if refined.is_none_or(|(g, _, _)| gap < g) {
                refined = Some((gap, k, l));
            }
        }
    }
    let (k, l, axial) = match refined {
        Some((gap, k, l)) if gap <= reach + axial_step => (k, l, T::zero()),
        _ => {
            let seg = &segments[k0];
            let w = (*p - seg.point(lambda0)).dot(&seg.frame(lambda0).n);
            (k0, lambda0, w)
        }
    };
    let seg = &segments[k];
    let local = seg.frame(l).to_local(&(*p - seg.point(l)));
    let t = cum[k] + (cum[k + 1] - cum[k]) * l + axial;
    Some((t, local.x, local.y, seg.extent(l)))
}

/// Writes a volume as f32 raw data plus sidecar; [`crate::volume::load_volume`] reads it back exactly.
pub fn export_volume<T: Real>(vol: &ScalarVolume<T>, data_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    write_volume_f32(vol, data_path, meta_path)
}

/// Maximum-intensity projections of a volume along x, y and z (in that order).
pub fn max_intensity_projections<T: Real>(vol: &ScalarVolume<T>) -> [Image2D<T>; 3] {
    let [nx, ny, nz] = vol.dims;
    let mut along_x = vec![T::zero(); ny * nz];
    let mut along_y = vec![T::zero(); nx * nz];
    let mut along_z = vec![T::zero(); nx * ny];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = vol.get(i, j, k);
                along_x[j + ny * k] = along_x[j + ny * k].max(v);
                along_y[i + nx * k] = along_y[i + nx * k].max(v);
                along_z[i + nx * j] = along_z[i + nx * j].max(v);
            }
        }
    }
    [
        Image2D {
            width: ny,
            height: nz,
            data: along_x,
        },
        Image2D {
            width: nx,
            height: nz,
            data: along_y,
        },
        Image2D {
            width: nx,
            height: ny,
            data: along_z,
        },
    ]
}

/// Straightening spec scaled so the output has at most `voxel_budget` voxels.
pub fn budgeted_spec<T: Real>(spec: &StraightVolumeSpec<T>, voxel_budget: usize) -> StraightVolumeSpec<T> {
    let n: usize = spec.out_dims.iter().product();
    if n <= voxel_budget {
        return *spec;
    }
    let scale = (n as f64 / voxel_budget as f64).cbrt();
    let mut out = *spec;
    for a in 0..3 {
        let extent = spec.out_dims[a] as f64;
        out.out_dims[a] = ((extent / scale).floor() as usize).max(1);
    }
    let s = |a: usize, sp: T| sp * T::lit(spec.out_dims[a] as f64 / out.out_dims[a] as f64);
    out.out_spacing = Vector3::new(s(0, spec.out_spacing.x), s(1, spec.out_spacing.y), s(2, spec.out_spacing.z));
    out
}

#![allow(dead_code)]

use rand::Rng;
use unbend_core::synth::cylinder_value;
use unbend_core::*;

pub fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

pub fn unit() -> Vec3 {
    v(1.0, 1.0, 1.0)
}

/// Cylinder of `radius` along the grid z axis through the cross-section center, spanning
/// world z in `[z0, z1]`, with the generator's one-voxel ramp.
pub fn z_cylinder(dims: [usize; 3], radius: f64, z0: f64, z1: f64) -> Volume {
    let cx = (dims[0] as f64 - 1.0) / 2.0;
    let cy = (dims[1] as f64 - 1.0) / 2.0;
    Volume::from_fn(dims, unit(), Vec3::zeros(), |i, j, k| {
        cylinder_value(radius, z1 - z0, i as f64 - cx, j as f64 - cy, k as f64 - z0)
    })
}

/// Random 6-connected voxel set of exactly `n` voxels grown from the grid center.
pub fn random_connected_voxels(rng: &mut impl Rng, dims: [usize; 3], n: usize) -> Vec<[usize; 3]> {
    let start = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let mut set = vec![start];
    while set.len() < n {
        let base = set[rng.gen_range(0..set.len())];
        let axis = rng.gen_range(0..3);
        let step: isize = if rng.gen_bool(0.5) { 1 } else { -1 };
        let c = base[axis] as isize + step;
        if c < 0 || c >= dims[axis] as isize {
            continue;
        }
        let mut next = base;
        next[axis] = c as usize;
        if !set.contains(&next) {
            set.push(next);
        }
    }
    set
}

/// Rig through `points` with frames from [`compute_frames`] and a uniform extent.
pub fn rig_through(points: &[Vec3], extent: f64) -> Rig {
    let framed = compute_frames(&Polyline::new(points.to_vec())).unwrap();
    Rig::new(
        framed
            .vertices
            .iter()
            .zip(&framed.frames)
            .map(|(p, f)| Keyframe::new(*p, *f, [extent, extent]))
            .collect(),
    )
    .unwrap()
}

/// Two keyframes on the world z axis offset by `origin`, identity frames.
pub fn z_rig(origin: Vec3, length: f64, extent: f64) -> Rig {
    Rig::new(vec![
        Keyframe::new(origin, Frame::identity(), [extent, extent]),
        Keyframe::new(origin + v(0.0, 0.0, length), Frame::identity(), [extent, extent]),
    ])
    .unwrap()
}

/// Dense polyline of the generator's analytic axis.
pub fn analytic_axis(spec: &CylinderSpec, samples: usize) -> Polyline<f64> {
    let (za, zb) = spec.z_range();
    Polyline::new(
        (0..=samples)
            .map(|i| spec.axis_point(za + (zb - za) * i as f64 / samples as f64))
            .collect(),
    )
}

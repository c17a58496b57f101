//! End-to-end automatic stage: threshold, mesh, harmonic field, skeleton, keyframe reduction.

use crate::error::{Error, Result};
use crate::geom::Vector3;
use crate::rig::{reduce_keyframes, DeformationRig};
use crate::scalar::Real;
use crate::skeleton::{extract_component_skeleton, merge_component_skeletons, EndpointSelection, FramedPolyline, SkeletonParams};
use crate::volume::{OccupancyMask, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    /// Occupancy threshold.
    pub tau: f64,
    pub skeleton: SkeletonParams,
    /// Prism radius for keyframe reduction, in voxel widths of the input volume.
    pub prism_radius_voxels: f64,
    /// Upper bound on tetrahedral mesh vertices; the volume is pooled until it fits.
    pub vertex_budget: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            tau: crate::DEFAULT_TAU,
            skeleton: SkeletonParams::default(),
            prism_radius_voxels: crate::DEFAULT_PRISM_RADIUS_VOXELS,
            vertex_budget: crate::DEFAULT_VERTEX_BUDGET,
        }
    }
}

/// Skeleton plus bookkeeping about how the volume was prepared.
#[derive(Debug, Clone)]
pub struct SkeletonRun<T> {
    pub skeleton: FramedPolyline<T>,
    /// Mean-pooling factor applied before meshing.
    pub pooling_factor: usize,
    /// Dilation steps needed to connect the mask (single-component selections only).
    pub dilation_steps: usize,
}

/// Pooling factor and thresholded mask whose mesh stays within the vertex budget.
fn budgeted_mask<T: Real>(vol: &ScalarVolume<T>, tau: f64, vertex_budget: usize) -> Result<(ScalarVolume<T>, OccupancyMask, usize)> {
    let mut factor = 1;
    loop {
        let pooled = vol.downsample_by(factor);
        let mask = pooled.threshold_occupancy(T::lit(tau))?;
        let done = pooled.dims.iter().all(|&d| d == 1);
        if mask.corner_count() <= vertex_budget || done {
            return Ok((pooled, mask, factor));
        }
        factor += 1;
    }
}

/// Skeleton of the specimen selected by `endpoints`.
///
/// One endpoint pair dilates the mask until it is connected and extracts a single curve.
/// Several pairs extract one curve per component (the component nearest to each head) and
/// join them in selection order.
pub fn extract_skeleton<T: Real>(
    vol: &ScalarVolume<T>,
    endpoints: &EndpointSelection<T>,
    params: &PipelineParams,
) -> Result<SkeletonRun<T>> {
    let (pooled, mask, pooling_factor) = budgeted_mask(vol, params.tau, params.vertex_budget)?;
    if endpoints.component_count() == 1 {
        let (mask, dilation_steps) = mask.dilate_until_connected()?;
        let (head, tail) = endpoints.pairs().next().expect("one pair");
        let part = extract_component_skeleton(&pooled, &mask, &head, &tail, params.skeleton)?;
        return Ok(SkeletonRun {
            skeleton: part.skeleton,
            pooling_factor,
            dilation_steps,
        });
    }
    let (labels, _) = mask.labels();
    let parts = endpoints
        .pairs()
        .map(|(head, tail)| {
            let g = pooled.to_grid(&head);
            let seed = mask
                .nearest_occupied([g.x.as_f64(), g.y.as_f64(), g.z.as_f64()])
                .ok_or(Error::EmptyMask)?;
            let label = labels[mask.index(seed[0], seed[1], seed[2])];
            let component = mask.component(&labels, label);
            extract_component_skeleton(&pooled, &component, &head, &tail, params.skeleton).map(|c| c.skeleton)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SkeletonRun {
        skeleton: merge_component_skeletons(&parts)?,
        pooling_factor,
        dilation_steps: 0,
    })
}

/// Prism radius in world units: `voxels` widths of the finest input axis.
pub fn prism_radius<T: Real>(vol: &ScalarVolume<T>, voxels: f64) -> T {
    vol.min_spacing() * T::lit(voxels)
}

/// Full automatic stage: skeleton, then the minimal keyframe rig.
pub fn build_rig<T: Real>(
    vol: &ScalarVolume<T>,
    endpoints: &EndpointSelection<T>,
    params: &PipelineParams,
) -> Result<(DeformationRig<T>, SkeletonRun<T>)> {
    let run = extract_skeleton(vol, endpoints, params)?;
    let rig = reduce_keyframes(&run.skeleton, prism_radius(vol, params.prism_radius_voxels))?;
    Ok((rig, run))
}

/// Head and tail world points at the centers of a rig's end caps.
pub fn rig_endpoints<T: Real>(rig: &DeformationRig<T>) -> Result<EndpointSelection<T>> {
    let kfs = rig.keyframes();
    let ends: Vec<Vector3<T>> = vec![kfs[0].position, kfs[kfs.len() - 1].position];
    EndpointSelection::new(ends)
}

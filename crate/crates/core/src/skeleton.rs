//! Skeleton curves: level-set centroids of the harmonic field, smoothing, uniform
//! resampling and per-vertex frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Frame, Vector3};
use crate::harmonic::{solve_harmonic, HarmonicField};
use crate::mesh::{tetrahedralize, TetMesh};
use crate::scalar::Real;
use crate::volume::{OccupancyMask, ScalarVolume};

const MIN_SEGMENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Polyline<T> {
    pub vertices: Vec<Vector3<T>>,
}

impl<T: Real> Polyline<T> {
    pub fn new(vertices: Vec<Vector3<T>>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn segment_lengths(&self) -> Vec<T> {
        self.vertices.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }

    pub fn arclength(&self) -> T {
        self.segment_lengths().into_iter().sum()
    }

    /// Cumulative arclength at each vertex, starting at zero.
    pub fn cumulative_lengths(&self) -> Vec<T> {
        cumulative(&self.vertices)
    }

    /// Distance from `p` to the closest point of the polyline.
    pub fn distance_to(&self, p: &Vector3<T>) -> T {
        match self.vertices.len() {
            0 => T::infinity(),
            1 => self.vertices[0].distance(p),
            _ => self
                .vertices
                .windows(2)
                .map(|w| point_segment_distance(p, &w[0], &w[1]))
                .fold(T::infinity(), T::min),
        }
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.vertices.iter().rev().copied().collect())
    }

    pub(crate) fn validate(&self, needed: usize) -> Result<()> {
        if self.vertices.len() < needed {
            return Err(Error::TooFewVertices {
                needed,
                got: self.vertices.len(),
            });
        }
        for (i, w) in self.vertices.windows(2).enumerate() {
            if w[0].distance(&w[1]) <= T::lit(MIN_SEGMENT) {
                return Err(Error::DegenerateTangent(i));
            }
        }
        Ok(())
    }
}

pub(crate) fn cumulative<T: Real>(points: &[Vector3<T>]) -> Vec<T> {
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(points.len());
    out.push(T::zero());
    for w in points.windows(2) {
        acc += w[0].distance(&w[1]);
        out.push(acc);
    }
    out
}

pub(crate) fn point_segment_distance<T: Real>(p: &Vector3<T>, a: &Vector3<T>, b: &Vector3<T>) -> T {
    let d = *b - *a;
    let len2 = d.norm_squared();
    let w = if len2 > T::zero() {
        ((*p - *a).dot(&d) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    (*a + d * w).distance(p)
}

/// Skeleton vertices with one orthonormal frame each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FramedPolyline<T> {
    pub vertices: Vec<Vector3<T>>,
    pub frames: Vec<Frame<T>>,
}

impl<T: Real> FramedPolyline<T> {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn polyline(&self) -> Polyline<T> {
        Polyline::new(self.vertices.clone())
    }

    pub fn arclength(&self) -> T {
        self.polyline().arclength()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("skeleton serializes")
    }
}

/// Ordered world-space click points, two per connected component (head then tail).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EndpointSelection<T> {
    pub points: Vec<Vector3<T>>,
}

impl<T: Real> EndpointSelection<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Result<Self> {
        if points.len() < 2 || points.len() % 2 != 0 {
            return Err(Error::BadEndpoints(points.len()));
        }
        Ok(Self { points })
    }

    /// `(head, tail)` pairs in head-to-tail order along the specimen.
    pub fn pairs(&self) -> impl Iterator<Item = (Vector3<T>, Vector3<T>)> + '_ {
        self.points.chunks_exact(2).map(|c| (c[0], c[1]))
    }

    pub fn component_count(&self) -> usize {
        self.points.len() / 2
    }
}

/// Isovalues at the centers of `k` equal bins of `[-1, 1]`, from the head side down.
pub fn isovalues(k: usize) -> Vec<f64> {
    (0..k).map(|j| 1.0 - (2 * j + 1) as f64 / k as f64).collect()
}

/// Centroids of the edge crossings of `k` isovalues, ordered head to tail, paired with
/// their isovalue. Isovalues without crossings are skipped.
pub fn level_set_centroids_with_values<T: Real>(
    mesh: &TetMesh<T>,
    field: &HarmonicField<T>,
    k: usize,
) -> Vec<(f64, Vector3<T>)> {
    let isos = isovalues(k);
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    let kf = k as f64;
    for (a, b) in mesh.edges() {
        let ua = field.values[a as usize].as_f64();
        let ub = field.values[b as usize].as_f64();
        if ua == ub {
            continue;
        }
        let (lo, hi) = (ua.min(ub), ua.max(ub));
        // iso_j = 1 - (2j + 1)/k lies in (lo, hi] for j in [j_min, j_max]
        let j_min = (((1.0 - hi) * kf - 1.0) / 2.0).ceil().max(0.0) as usize;
        let j_max = ((((1.0 - lo) * kf - 1.0) / 2.0).floor()).min(kf - 1.0);
        if j_max < 0.0 {
            continue;
        }
        let pa = mesh.vertices[a as usize].cast::<f64>();
        let pb = mesh.vertices[b as usize].cast::<f64>();
        for j in j_min..=(j_max as usize) {
            let iso = isos[j];
            if (ua >= iso) == (ub >= iso) {
                continue;
            }
            let w = (iso - ua) / (ub - ua);
            let p = pa.lerp(&pb, w);
            sums[j][0] += p.x;
            sums[j][1] += p.y;
            sums[j][2] += p.z;
            counts[j] += 1;
        }
    }
    let mut out: Vec<(f64, Vector3<T>)> = Vec::new();
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let c = counts[j] as f64;
        let p = Vector3::new(T::lit(sums[j][0] / c), T::lit(sums[j][1] / c), T::lit(sums[j][2] / c));
        if let Some((_, last)) = out.last() {
            if last.distance(&p) <= T::lit(MIN_SEGMENT) {
                continue;
            }
        }
        out.push((isos[j], p));
    }
    out
}

pub fn level_set_centroids<T: Real>(mesh: &TetMesh<T>, field: &HarmonicField<T>, k: usize) -> Result<Polyline<T>> {
    let pts: Vec<Vector3<T>> = level_set_centroids_with_values(mesh, field, k.max(1))
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateField);
    }
    Ok(Polyline::new(pts))
}

/// `s` Jacobi sweeps of `c_i <- (c_{i-1} + c_{i+1}) / 2` with both endpoints held fixed.
pub fn smooth<T: Real>(line: &Polyline<T>, s: usize) -> Polyline<T> {
    let mut cur = line.vertices.clone();
    if cur.len() < 3 {
        return line.clone();
    }
    let half = T::lit(0.5);
    let mut next = cur.clone();
    for _ in 0..s {
        for i in 1..cur.len() - 1 {
            next[i] = (cur[i - 1] + cur[i + 1]) * half;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Polyline::new(cur)
}

/// Equal-arclength resampling with spacing at most `max(min_segment / 2, 1e-3 * length)`.
pub fn resample_uniform<T: Real>(line: &Polyline<T>) -> Result<Polyline<T>> {
    line.validate(2)?;
    let seg = line.segment_lengths();
    let total: T = seg.iter().copied().sum();
    let min_seg = seg.iter().copied().fold(T::infinity(), T::min);
    let h = (min_seg * T::lit(0.5)).max(total * T::lit(1e-3));
    let count = ((total / h).as_f64() - 1e-9).ceil().max(1.0) as usize;
    let step = total / T::from_count(count);
    let cum = line.cumulative_lengths();
    let mut out = Vec::with_capacity(count + 1);
    out.push(line.vertices[0]);
    let mut s = 0usize;
    for i in 1..count {
        let t = step * T::from_count(i);
        while s + 1 < seg.len() && cum[s + 1] <= t {
            s += 1;
        }
        let w = ((t - cum[s]) / seg[s]).max(T::zero()).min(T::one());
        out.push(line.vertices[s].lerp(&line.vertices[s + 1], w));
    }
    out.push(*line.vertices.last().expect("validated non-empty"));
    Ok(Polyline::new(out))
}

/// Frame at a vertex with tangent `n`: project a pair of global axes onto the plane
/// orthogonal to `n`, trying (x, y), then (x, z), then (y, z).
pub fn axis_projection_frame<T: Real>(n: &Vector3<T>) -> Frame<T> {
    let eps = T::lit(1e-6);
    let axes = [Vector3::unit_x(), Vector3::unit_y(), Vector3::unit_z()];
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let pu = axes[a] - *n * axes[a].dot(n);
        let pv = axes[b] - *n * axes[b].dot(n);
        let (Some(u), Some(_)) = (pu.try_normalize(eps), pv.try_normalize(eps)) else {
            continue;
        };
        let Some(mut v) = (pv - u * pv.dot(&u)).try_normalize(eps) else {
            continue;
        };
        if u.cross(&v).dot(n) < T::zero() {
            v = -v;
        }
        return Frame::new(u, v, *n);
    }
    unreachable!("a unit normal cannot be parallel to all three coordinate planes")
}

/// Central-difference tangents (one-sided at the ends) and axis-projection frames.
pub fn compute_frames<T: Real>(line: &Polyline<T>) -> Result<FramedPolyline<T>> {
    line.validate(2)?;
    let c = &line.vertices;
    let last = c.len() - 1;
    let mut frames = Vec::with_capacity(c.len());
    for i in 0..=last {
        let d = if i == 0 {
            c[1] - c[0]
        } else if i == last {
            c[last] - c[last - 1]
        } else {
            c[i + 1] - c[i - 1]
        };
        let n = d.try_normalize(T::lit(1e-12)).ok_or(Error::DegenerateTangent(i))?;
        frames.push(axis_projection_frame(&n));
    }
    Ok(FramedPolyline {
        vertices: c.clone(),
        frames,
    })
}

/// Parameters of the automatic skeleton stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonParams {
    /// Number of level sets sampled on `[-1, 1]`.
    pub level_sets: usize,
    /// Smoothing sweeps.
    pub smoothing: usize,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        Self {
            level_sets: crate::DEFAULT_LEVEL_SETS,
            smoothing: crate::DEFAULT_SMOOTHING_ITERATIONS,
        }
    }
}

/// Mesh, field and curve for one connected component.
pub struct ComponentSkeleton<T> {
    pub mesh: TetMesh<T>,
    pub field: HarmonicField<T>,
    pub skeleton: FramedPolyline<T>,
}

/// tetrahedralize -> harmonic solve -> level-set centroids -> resample -> smooth -> resample -> frames.
///
/// `mask` must be a single connected component on the grid of `vol`; `head` and `tail`
/// are snapped to the nearest mesh vertices.
pub fn extract_component_skeleton<T: Real>(
    vol: &ScalarVolume<T>,
    mask: &OccupancyMask,
    head: &Vector3<T>,
    tail: &Vector3<T>,
    params: SkeletonParams,
) -> Result<ComponentSkeleton<T>> {
    let mesh = tetrahedralize(mask, vol.spacing, vol.origin)?;
    let head_v = mesh.nearest_vertex(head).ok_or(Error::EmptyMask)?;
    let tail_v = mesh.nearest_vertex(tail).ok_or(Error::EmptyMask)?;
    let field = solve_harmonic(&mesh, head_v, tail_v)?;
    let raw = level_set_centroids(&mesh, &field, params.level_sets)?;
    // level sets bunch up near the pinned vertices; even out the spacing before smoothing
    let even = resample_uniform(&raw)?;
    let smoothed = smooth(&even, params.smoothing);
    let uniform = resample_uniform(&smoothed)?;
    let skeleton = compute_frames(&uniform)?;
    Ok(ComponentSkeleton { mesh, field, skeleton })
}

/// Joins per-component skeletons in order; consecutive parts are linked by the straight
/// segment from one part's tail to the next part's head.
pub fn merge_component_skeletons<T: Real>(parts: &[FramedPolyline<T>]) -> Result<FramedPolyline<T>> {
    let first = parts.first().ok_or(Error::EmptyInput)?;
    let mut out = first.clone();
    for part in &parts[1..] {
        for (i, (v, f)) in part.vertices.iter().zip(&part.frames).enumerate() {
            if i == 0 && out.vertices.last().is_some_and(|l| l.distance(v) <= T::lit(MIN_SEGMENT)) {
                continue;
            }
            out.vertices.push(*v);
            out.frames.push(*f);
        }
    }
    Ok(out)
}

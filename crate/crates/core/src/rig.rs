//! Keyframed cylindrical deformation rig.
//!
//! The rig is an arclength-parameterized polyline through keyframe positions `e_i`, each with a
//! frame `R_i = (u_i, v_i, n_i)` and a cross-section half-extent. Between two keyframes the frame
//! follows the minimal rotation carrying `n_k` to `n_{k+1}` (so `n` is spherically
//! interpolated), plus a linearly distributed twist about `n` that lands exactly on
//! `R_{k+1}`. The extent is interpolated linearly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Frame, Vector3};
use crate::scalar::Real;
use crate::skeleton::{cumulative, FramedPolyline};

/// Frame tolerance used when validating rigs.
pub const FRAME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Keyframe<T> {
    #[serde(rename = "e")]
    pub position: Vector3<T>,
    #[serde(rename = "R")]
    pub frame: Frame<T>,
    /// Cross-section half widths `(rx, ry)` along `u` and `v`.
    pub extent: [T; 2],
}

impl<T: Real> Keyframe<T> {
    pub fn new(position: Vector3<T>, frame: Frame<T>, extent: [T; 2]) -> Self {
        Self {
            position,
            frame,
            extent,
        }
    }
}

/// Geometry of the rig between two consecutive keyframes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SegmentGeometry<T> {
    start: Keyframe<T>,
    end: Keyframe<T>,
    axis: Vector3<T>,
    bend: T,
    twist: T,
}

impl<T: Real> SegmentGeometry<T> {
    /// `None` when the two normals are (within 1e-6) antipodal.
    pub(crate) fn new(start: &Keyframe<T>, end: &Keyframe<T>) -> Option<Self> {
        let (na, nb) = (start.frame.n, end.frame.n);
        if (na + nb).norm() <= T::lit(FRAME_TOLERANCE) {
            return None;
        }
        let cos = na.dot(&nb).max(-T::one()).min(T::one());
        let (axis, bend) = match na.cross(&nb).try_normalize(T::lit(1e-12)) {
            Some(axis) => (axis, cos.acos()),
            None => (Vector3::zeros(), T::zero()),
        };
        let carried = start.frame.rotated_about(&axis, bend);
        let target = end.frame.u;
        let twist = carried.u.cross(&target).dot(&nb).atan2(carried.u.dot(&target));
        Some(Self {
            start: *start,
            end: *end,
            axis,
            bend,
            twist,
        })
    }

    #[inline]
    pub(crate) fn point(&self, lambda: T) -> Vector3<T> {
        self.start.position.lerp(&self.end.position, lambda)
    }

    #[inline]
    pub(crate) fn frame(&self, lambda: T) -> Frame<T> {
        if lambda == T::zero() {
            return self.start.frame;
        }
        let carried = if self.bend > T::zero() {
            self.start.frame.rotated_about(&self.axis, self.bend * lambda)
        } else {
            self.start.frame
        };
        carried.twisted(self.twist * lambda)
    }

    #[inline]
    pub(crate) fn extent(&self, lambda: T) -> [T; 2] {
        let one = T::one();
        [
            self.start.extent[0] * (one - lambda) + self.end.extent[0] * lambda,
            self.start.extent[1] * (one - lambda) + self.end.extent[1] * lambda,
        ]
    }

    /// Cross-section parameters `lambda` in `[0, 1]` whose plane passes through `p`.
    pub(crate) fn plane_roots(&self, p: &Vector3<T>, scan: usize) -> Vec<T> {
        let g = |l: T| (*p - self.point(l)).dot(&self.frame(l).n);
        let mut roots = Vec::new();
        let step = T::one() / T::from_count(scan);
        let mut l0 = T::zero();
        let mut g0 = g(l0);
        if g0 == T::zero() {
            roots.push(l0);
        }
        for i in 1..=scan {
            let l1 = if i == scan { T::one() } else { step * T::from_count(i) };
            let g1 = g(l1);
            if g1 == T::zero() {
                roots.push(l1);
            } else if (g0 < T::zero()) != (g1 < T::zero()) && g0 != T::zero() {
                let (mut lo, mut hi, mut glo) = (l0, l1, g0);
                for _ in 0..60 {
                    let mid = (lo + hi) * T::lit(0.5);
                    let gm = g(mid);
                    if (gm < T::zero()) == (glo < T::zero()) {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push((lo + hi) * T::lit(0.5));
            }
            l0 = l1;
            g0 = g1;
        }
        roots
    }
}

/// The sole input of the warp: ordered keyframes plus their cumulative arclengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigRepr<T>", into = "RigRepr<T>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct DeformationRig<T> {
    keyframes: Vec<Keyframe<T>>,
    cum_arclength: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
struct RigRepr<T> {
    keyframes: Vec<Keyframe<T>>,
}

impl<T: Real> TryFrom<RigRepr<T>> for DeformationRig<T> {
    type Error = Error;
    fn try_from(r: RigRepr<T>) -> Result<Self> {
        DeformationRig::new(r.keyframes)
    }
}

impl<T: Real> From<DeformationRig<T>> for RigRepr<T> {
    fn from(r: DeformationRig<T>) -> Self {
        RigRepr { keyframes: r.keyframes }
    }
}

/// Local edit of a rig, as issued by the refinement UI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    /// Add a keyframe at arclength `t` sampled from the current rig.
    InsertAt { t: f64 },
    Remove { i: usize },
    /// Rotate `u_i`, `v_i` about `n_i` by `angle` radians.
    Rotate { i: usize, angle: f64 },
    /// Move `e_i` by `dx * u_i + dy * v_i`.
    SetCenter { i: usize, dx: f64, dy: f64 },
    SetExtent { i: usize, rx: f64, ry: f64 },
}

impl<T: Real> DeformationRig<T> {
    /// Validates frames, extents, positions and normals, and computes arclengths.
    pub fn new(keyframes: Vec<Keyframe<T>>) -> Result<Self> {
        if keyframes.len() < 2 {
            return Err(Error::LastTwoKeyframes);
        }
        let tol = T::lit(FRAME_TOLERANCE);
        for (i, kf) in keyframes.iter().enumerate() {
            if !kf.position.is_finite() {
                return Err(Error::InvalidRig(format!("keyframe {i} position is not finite")));
            }
            if !kf.frame.is_rotation(tol) {
                return Err(Error::InvalidRig(format!("keyframe {i} frame is not a rotation")));
            }
            if !kf.extent.iter().all(|e| e.is_finite() && *e > T::zero()) {
                return Err(Error::InvalidRig(format!("keyframe {i} extent must be positive")));
            }
        }
        for (i, w) in keyframes.windows(2).enumerate() {
            if w[0].position.distance(&w[1].position) <= T::lit(1e-9) {
                return Err(Error::InvalidRig(format!("keyframes {i} and {} coincide", i + 1)));
            }
            if (w[0].frame.n + w[1].frame.n).norm() <= tol {
                return Err(Error::AntipodalNormals(i));
            }
        }
        let positions: Vec<_> = keyframes.iter().map(|k| k.position).collect();
        let cum_arclength = cumulative(&positions);
        Ok(Self {
            keyframes,
            cum_arclength,
        })
    }

    pub fn keyframes(&self) -> &[Keyframe<T>] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    /// `d(e_i)` for each keyframe.
    pub fn cum_arclength(&self) -> &[T] {
        &self.cum_arclength
    }

    pub fn total_length(&self) -> T {
        *self.cum_arclength.last().expect("rig has keyframes")
    }

    /// Largest `rx` and `ry` over all keyframes.
    pub fn max_extent(&self) -> [T; 2] {
        self.keyframes.iter().fold([T::zero(); 2], |acc, k| {
            [acc[0].max(k.extent[0]), acc[1].max(k.extent[1])]
        })
    }

    pub fn positions(&self) -> Vec<Vector3<T>> {
        self.keyframes.iter().map(|k| k.position).collect()
    }

    fn check_param(&self, t: T) -> Result<()> {
        if t >= T::zero() && t <= self.total_length() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                value: t.as_f64(),
                max: self.total_length().as_f64(),
            })
        }
    }

    /// Segment index `k` (0-based, the greatest with `d(e_k) <= t`, capped at the last
    /// segment) and the forward weight `lambda` toward `e_{k+1}`.
    pub fn segment_lookup(&self, t: T) -> Result<(usize, T)> {
        self.check_param(t)?;
        let last_segment = self.keyframes.len() - 2;
        let k = (self.cum_arclength.partition_point(|&d| d <= t) - 1).min(last_segment);
        let (d0, d1) = (self.cum_arclength[k], self.cum_arclength[k + 1]);
        let lambda = ((t - d0) / (d1 - d0)).max(T::zero()).min(T::one());
        Ok((k, lambda))
    }

    pub(crate) fn segment(&self, k: usize) -> SegmentGeometry<T> {
        SegmentGeometry::new(&self.keyframes[k], &self.keyframes[k + 1])
            .expect("antipodal normals are rejected at construction")
    }

    /// `c(t) = (1 - lambda) e_k + lambda e_{k+1}`.
    pub fn eval_curve(&self, t: T) -> Result<Vector3<T>> {
        let (k, lambda) = self.segment_lookup(t)?;
        if lambda == T::zero() {
            return Ok(self.keyframes[k].position);
        }
        Ok(self.keyframes[k].position.lerp(&self.keyframes[k + 1].position, lambda))
    }

    /// `R(t)`; equals `R_i` at `t = d(e_i)`.
    pub fn eval_frame(&self, t: T) -> Result<Frame<T>> {
        let (k, lambda) = self.segment_lookup(t)?;
        Ok(self.segment(k).frame(lambda))
    }

    pub fn eval_extent(&self, t: T) -> Result<[T; 2]> {
        let (k, lambda) = self.segment_lookup(t)?;
        Ok(self.segment(k).extent(lambda))
    }

    /// Position, frame and extent at `t` in one lookup.
    pub fn eval(&self, t: T) -> Result<RigSample<T>> {
        let (k, lambda) = self.segment_lookup(t)?;
        let seg = self.segment(k);
        Ok(RigSample {
            position: if lambda == T::zero() { self.keyframes[k].position } else { seg.point(lambda) },
            frame: seg.frame(lambda),
            extent: seg.extent(lambda),
        })
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.keyframes.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.keyframes.len(),
            })
        }
    }

    /// Returns the edited rig; `self` is left untouched.
    pub fn apply_edit(&self, edit: &Edit) -> Result<Self> {
        let mut kfs = self.keyframes.clone();
        match *edit {
            Edit::InsertAt { t } => {
                let t = T::lit(t);
                let (k, lambda) = self.segment_lookup(t)?;
                let sample = self.eval(t)?;
                let near = |p: &Vector3<T>| p.distance(&sample.position) <= T::lit(1e-9);
                if lambda == T::zero() || near(&kfs[k].position) || near(&kfs[k + 1].position) {
                    return Err(Error::InvalidEdit(format!("a keyframe already sits at t = {}", t)));
                }
                kfs.insert(k + 1, Keyframe::new(sample.position, sample.frame, sample.extent));
            }
            Edit::Remove { i } => {
                self.check_index(i)?;
                if kfs.len() <= 2 {
                    return Err(Error::LastTwoKeyframes);
                }
                kfs.remove(i);
            }
            Edit::Rotate { i, angle } => {
                self.check_index(i)?;
                let f = kfs[i].frame.twisted(T::lit(angle));
                kfs[i].frame = f
                    .reorthonormalized()
                    .ok_or_else(|| Error::InvalidEdit("rotation produced a degenerate frame".into()))?;
            }
            Edit::SetCenter { i, dx, dy } => {
                self.check_index(i)?;
                let kf = &mut kfs[i];
                kf.position += kf.frame.in_plane(T::lit(dx), T::lit(dy));
            }
            Edit::SetExtent { i, rx, ry } => {
                self.check_index(i)?;
                if !(rx > 0.0 && ry > 0.0 && rx.is_finite() && ry.is_finite()) {
                    return Err(Error::InvalidEdit(format!("extent ({rx}, {ry}) must be positive")));
                }
                kfs[i].extent = [T::lit(rx), T::lit(ry)];
            }
        }
        Self::new(kfs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rig serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidRig(e.to_string()))
    }

    pub fn cast<U: Real>(&self) -> DeformationRig<U> {
        DeformationRig {
            keyframes: self
                .keyframes
                .iter()
                .map(|k| Keyframe::new(k.position.cast(), k.frame.cast(), k.extent.map(|e| U::lit(e.as_f64()))))
                .collect(),
            cum_arclength: self.cum_arclength.iter().map(|d| U::lit(d.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSample<T> {
    pub position: Vector3<T>,
    pub frame: Frame<T>,
    pub extent: [T; 2],
}

/// Whether `p` lies in the prism swept between keyframes `a` and `b` with square
/// half-width `r`, up to a tolerance of `1e-6 r`.
pub fn prism_contains<T: Real>(a: &Keyframe<T>, b: &Keyframe<T>, p: &Vector3<T>, r: T) -> bool {
    let Some(seg) = SegmentGeometry::new(a, b) else {
        return false;
    };
    let limit = r * (T::one() + T::lit(1e-6));
    seg.plane_roots(p, 32).into_iter().any(|l| {
        let local = seg.frame(l).to_local(&(*p - seg.point(l)));
        local.x.abs() <= limit && local.y.abs() <= limit
    })
}

/// Greedy prism subdivision: keeps splitting at the middle skeleton vertex of any prism
/// that misses one of its skeleton vertices. Keyframes are a subsequence of the skeleton.
pub fn reduce_keyframes<T: Real>(skel: &FramedPolyline<T>, r: T) -> Result<DeformationRig<T>> {
    let n = skel.len();
    if n < 2 {
        return Err(Error::TooFewVertices { needed: 2, got: n });
    }
    if !(r > T::zero()) {
        return Err(Error::InvalidRig(format!("prism radius {} must be positive", r)));
    }
    let kf = |i: usize| Keyframe::new(skel.vertices[i], skel.frames[i], [r, r]);
    let mut splits = vec![0usize, n - 1];
    let mut rounds = 0usize;
    loop {
        let mut next = Vec::with_capacity(splits.len() * 2);
        let mut changed = false;
        for w in splits.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push(a);
            if b - a < 2 {
                continue;
            }
            let (ka, kb) = (kf(a), kf(b));
            if !(a + 1..b).all(|j| prism_contains(&ka, &kb, &skel.vertices[j], r)) {
                next.push((a + b) / 2);
                changed = true;
            }
        }
        next.push(n - 1);
        splits = next;
        if !changed {
            break;
        }
        rounds += 1;
        if rounds > n {
            return Err(Error::NonConvergence);
        }
    }
    DeformationRig::new(splits.into_iter().map(kf).collect())
}

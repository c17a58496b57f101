//! Scalar volumes: raw I/O, trilinear sampling, pooling and occupancy masks.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vector3;
use crate::scalar::Real;

/// Dense 3D grid of densities in `[0, 1]`, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume<T> {
    pub dims: [usize; 3],
    pub spacing: Vector3<T>,
    /// World position of the center of voxel `(0, 0, 0)`.
    pub origin: Vector3<T>,
    pub data: Vec<T>,
}

impl<T: Real> ScalarVolume<T> {
    pub fn new(dims: [usize; 3], spacing: Vector3<T>, origin: Vector3<T>, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::MetadataMissing(format!("non-positive dims {dims:?}")));
        }
        if !(spacing.x > T::zero() && spacing.y > T::zero() && spacing.z > T::zero()) {
            return Err(Error::MetadataMissing("spacing components must be > 0".into()));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected: expected as u64,
                actual: data.len() as u64,
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: Vector3<T>, origin: Vector3<T>, value: T) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            spacing,
            origin,
            data: vec![value; n],
        }
    }

    /// Builds a volume by evaluating `f` at every voxel index, in parallel over z-slices.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: Vector3<T>,
        origin: Vector3<T>,
        f: impl Fn(usize, usize, usize) -> T + Sync,
    ) -> Self {
        let slice = dims[0] * dims[1];
        let mut data = vec![T::zero(); slice * dims[2]];
        data.par_chunks_mut(slice).enumerate().for_each(|(k, chunk)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    chunk[i + dims[0] * j] = f(i, j, k);
                }
            }
        });
        Self {
            dims,
            spacing,
            origin,
            data,
        }
    }

    pub fn grid(&self) -> VolumeGrid<T> {
        VolumeGrid {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    /// World position of a voxel center.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        Vector3::new(
            self.origin.x + T::from_count(i) * self.spacing.x,
            self.origin.y + T::from_count(j) * self.spacing.y,
            self.origin.z + T::from_count(k) * self.spacing.z,
        )
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn to_grid(&self, p: &Vector3<T>) -> Vector3<T> {
        Vector3::new(
            (p.x - self.origin.x) / self.spacing.x,
            (p.y - self.origin.y) / self.spacing.y,
            (p.z - self.origin.z) / self.spacing.z,
        )
    }

    pub fn min_spacing(&self) -> T {
        self.spacing.x.min(self.spacing.y).min(self.spacing.z)
    }

    pub fn mean(&self) -> T {
        let sum: f64 = self.data.iter().map(|v| v.as_f64()).sum();
        T::lit(sum / self.data.len() as f64)
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation between voxel centers; zero outside the center lattice.
    pub fn trilinear_sample(&self, p: &Vector3<T>) -> T {
        self.sample_grid(&self.to_grid(p))
    }

    fn sample_grid(&self, q: &Vector3<T>) -> T {
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for axis in 0..3 {
            let c = q[axis];
            let last = T::from_count(self.dims[axis] - 1);
            if !(c >= T::zero() && c <= last) {
                return T::zero();
            }
            if self.dims[axis] == 1 {
                continue;
            }
            let fl = c.floor().min(last - T::one());
            base[axis] = fl.to_usize().unwrap_or(0);
            frac[axis] = c - fl;
        }
        let step = [
            usize::from(self.dims[0] > 1),
            usize::from(self.dims[1] > 1),
            usize::from(self.dims[2] > 1),
        ];
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let one = T::one();
        let v = |di: usize, dj: usize, dk: usize| self.get(i + di * step[0], j + dj * step[1], k + dk * step[2]);
        let c00 = v(0, 0, 0) * (one - fx) + v(1, 0, 0) * fx;
        let c10 = v(0, 1, 0) * (one - fx) + v(1, 1, 0) * fx;
        let c01 = v(0, 0, 1) * (one - fx) + v(1, 0, 1) * fx;
        let c11 = v(0, 1, 1) * (one - fx) + v(1, 1, 1) * fx;
        let c0 = c00 * (one - fy) + c10 * fy;
        let c1 = c01 * (one - fy) + c11 * fy;
        c0 * (one - fz) + c1 * fz
    }

    /// Catmull-Rom (cubic, interpolating) sample with zero-valued voxels outside the lattice,
    /// clamped to `[0, 1]`. Sharper than trilinear on one-voxel edges; zero once `p` is a full
    /// voxel outside the lattice.
    pub fn cubic_sample(&self, p: &Vector3<T>) -> T {
        let q = self.to_grid(p);
        let mut base = [0isize; 3];
        let mut w = [[T::zero(); 4]; 3];
        for axis in 0..3 {
            let c = q[axis];
            if !(c > -T::one() && c < T::from_count(self.dims[axis])) {
                return T::zero();
            }
            let fl = c.floor();
            base[axis] = fl.to_isize().unwrap_or(-1) - 1;
            w[axis] = catmull_rom(c - fl);
        }
        let inside = |c: isize, n: usize| c >= 0 && (c as usize) < n;
        let mut sum = T::zero();
        for (dk, wk) in w[2].iter().enumerate() {
            let k = base[2] + dk as isize;
            if !inside(k, self.dims[2]) {
                continue;
            }
            for (dj, wj) in w[1].iter().enumerate() {
                let j = base[1] + dj as isize;
                if !inside(j, self.dims[1]) {
                    continue;
                }
                let mut row = T::zero();
                for (di, wi) in w[0].iter().enumerate() {
                    let i = base[0] + di as isize;
                    if inside(i, self.dims[0]) {
                        row += *wi * self.get(i as usize, j as usize, k as usize);
                    }
                }
                sum += *wk * *wj * row;
            }
        }
        sum.max(T::zero()).min(T::one())
    }

    /// Mean pooling by an integer factor; partial border blocks average what they cover.
    pub fn downsample_by(&self, factor: usize) -> Self {
        assert!(factor >= 1, "downsample factor must be positive");
        if factor == 1 {
            return self.clone();
        }
        let dims = self.dims.map(|d| d.div_ceil(factor));
        let f = T::from_count(factor);
        let half = T::lit((factor as f64 - 1.0) / 2.0);
        let spacing = self.spacing * f;
        let origin = self.origin + self.spacing * half;
        Self::from_fn(dims, spacing, origin, |i, j, k| {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for kk in k * factor..((k + 1) * factor).min(self.dims[2]) {
                for jj in j * factor..((j + 1) * factor).min(self.dims[1]) {
                    for ii in i * factor..((i + 1) * factor).min(self.dims[0]) {
                        sum += self.get(ii, jj, kk).as_f64();
                        count += 1;
                    }
                }
            }
            T::lit(sum / count as f64)
        })
    }

    /// Smallest uniform pooling factor bringing the voxel count within `voxel_budget`.
    pub fn downsample_factor(&self, voxel_budget: usize) -> usize {
        let budget = voxel_budget.max(8);
        (1..)
            .find(|&f| self.dims.iter().map(|d| d.div_ceil(f)).product::<usize>() <= budget)
            .expect("factor search terminates once every axis collapses to one voxel")
    }

    /// Mean-pools to at most `voxel_budget` voxels; returns the input unchanged when it fits.
    pub fn downsample(&self, voxel_budget: usize) -> Self {
        self.downsample_by(self.downsample_factor(voxel_budget))
    }

    /// Voxels strictly above `tau`.
    pub fn threshold_occupancy(&self, tau: T) -> Result<OccupancyMask> {
        let bits: Vec<bool> = self.data.par_iter().map(|&v| v > tau).collect();
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
        Ok(OccupancyMask::new(self.dims, bits))
    }

    pub fn cast<U: Real>(&self) -> ScalarVolume<U> {
        ScalarVolume {
            dims: self.dims,
            spacing: self.spacing.cast(),
            origin: self.origin.cast(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Placement of a voxel lattice in world space, without data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid<T> {
    pub dims: [usize; 3],
    pub spacing: Vector3<T>,
    pub origin: Vector3<T>,
}

impl<T: Real> VolumeGrid<T> {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        Vector3::new(
            self.origin.x + T::from_count(i) * self.spacing.x,
            self.origin.y + T::from_count(j) * self.spacing.y,
            self.origin.z + T::from_count(k) * self.spacing.z,
        )
    }
}

/// Boolean voxel mask with a cached 6-connected component count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyMask {
    dims: [usize; 3],
    bits: Vec<bool>,
    component_count: usize,
}

const NEIGHBORS_6: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

impl OccupancyMask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), dims[0] * dims[1] * dims[2], "mask length must match dims");
        let component_count = label_components(dims, &bits).1;
        Self {
            dims,
            bits,
            component_count,
        }
    }

    /// Builds a mask from a list of occupied voxel indices.
    pub fn from_voxels(dims: [usize; 3], voxels: &[[usize; 3]]) -> Self {
        let mut bits = vec![false; dims[0] * dims[1] * dims[2]];
        for &[i, j, k] in voxels {
            bits[i + dims[0] * (j + dims[1] * k)] = true;
        }
        Self::new(dims, bits)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of distinct voxel corners touched by occupied voxels, i.e. the vertex count
    /// of the tetrahedralization of this mask.
    pub fn corner_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut n = 0;
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    let touched = (0..8).any(|b| {
                        let (di, dj, dk) = (b & 1, (b >> 1) & 1, (b >> 2) & 1);
                        let (a, bb, c) = (i as isize - di as isize, j as isize - dj as isize, k as isize - dk as isize);
                        a >= 0
                            && bb >= 0
                            && c >= 0
                            && (a as usize) < nx
                            && (bb as usize) < ny
                            && (c as usize) < nz
                            && self.get(a as usize, bb as usize, c as usize)
                    });
                    n += usize::from(touched);
                }
            }
        }
        n
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Per-voxel component labels (0 for empty voxels, 1.. for components) and the count.
    pub fn labels(&self) -> (Vec<u32>, usize) {
        label_components(self.dims, &self.bits)
    }

    /// Mask of the single component with the given label.
    pub fn component(&self, labels: &[u32], label: u32) -> Self {
        Self::new(self.dims, labels.iter().map(|&l| l == label).collect())
    }

    /// One step of 6-neighborhood binary dilation.
    pub fn dilate(&self) -> Self {
        let [nx, ny, nz] = self.dims;
        let mut bits = self.bits.clone();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if !self.get(i, j, k) {
                        continue;
                    }
                    for d in NEIGHBORS_6 {
                        if let Some([a, b, c]) = offset([i, j, k], d, self.dims) {
                            bits[a + nx * (b + ny * c)] = true;
                        }
                    }
                }
            }
        }
        Self::new(self.dims, bits)
    }

    /// Dilates until a single component remains; returns the mask and the number of steps.
    pub fn dilate_until_connected(&self) -> Result<(Self, usize)> {
        if self.component_count == 0 {
            return Err(Error::EmptyMask);
        }
        let budget = *self.dims.iter().max().unwrap_or(&1);
        let mut mask = self.clone();
        let mut steps = 0;
        while mask.component_count > 1 {
            if steps >= budget {
                return Err(Error::DilationBudgetExceeded(budget));
            }
            mask = mask.dilate();
            steps += 1;
        }
        Ok((mask, steps))
    }

    /// Occupied voxel closest (in grid units) to the continuous grid coordinate `q`.
    pub fn nearest_occupied(&self, q: [f64; 3]) -> Option<[usize; 3]> {
        let [nx, ny, _] = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(idx, _)| [idx % nx, (idx / nx) % ny, idx / (nx * ny)])
            .min_by(|a, b| {
                let da = dist2(a, q);
                let db = dist2(b, q);
                da.total_cmp(&db)
            })
    }
}

fn dist2(v: &[usize; 3], q: [f64; 3]) -> f64 {
    (0..3).map(|a| (v[a] as f64 - q[a]).powi(2)).sum()
}

#[inline]
fn offset(p: [usize; 3], d: [isize; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let c = p[a] as isize + d[a];
        if c < 0 || c >= dims[a] as isize {
            return None;
        }
        out[a] = c as usize;
    }
    Some(out)
}

fn label_components(dims: [usize; 3], bits: &[bool]) -> (Vec<u32>, usize) {
    let [nx, ny, _] = dims;
    let mut labels = vec![0u32; bits.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let p = [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
            for d in NEIGHBORS_6 {
                if let Some([a, b, c]) = offset(p, d, dims) {
                    let n = a + nx * (b + ny * c);
                    if bits[n] && labels[n] == 0 {
                        labels[n] = count;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

/// On-disk scalar encodings of the raw voxel file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    U8,
    U16,
    F32,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            ScalarType::U8 => 1,
            ScalarType::U16 => 2,
            ScalarType::F32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(ScalarType::U8),
            "u16" => Ok(ScalarType::U16),
            "f32" => Ok(ScalarType::F32),
            other => Err(Error::UnsupportedScalarType(other.to_string())),
        }
    }
}

/// JSON sidecar describing a raw voxel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub dtype: ScalarType,
}

/// Reads a raw x-fastest little-endian voxel file plus its JSON sidecar, normalizing to `[0, 1]`.
pub fn load_volume<T: Real>(data_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<ScalarVolume<T>> {
    let meta_path = meta_path.as_ref();
    let data_path = data_path.as_ref();
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::MetadataMissing(format!("{}: {e}", meta_path.display())))?;
    // dtype is checked on its own so an unknown type is reported as such rather than as bad JSON
    let dtype = raw
        .get("dtype")
        .and_then(|d| d.as_str())
        .ok_or_else(|| Error::MetadataMissing("`dtype` field".into()))
        .and_then(ScalarType::parse)?;
    let meta: VolumeMeta = serde_json::from_value(raw).map_err(|e| Error::MetadataMissing(e.to_string()))?;
    debug_assert_eq!(meta.dtype, dtype);

    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let n: usize = meta.dims.iter().product();
    let expected = (n * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data: Vec<T> = match dtype {
        ScalarType::U8 => bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect(),
        ScalarType::U16 => bytes
            .chunks_exact(2)
            .map(|c| T::lit(u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0))
            .collect(),
        ScalarType::F32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                T::lit(v as f64)
            })
            .collect(),
    };
    let [sx, sy, sz] = meta.spacing;
    let [ox, oy, oz] = meta.origin;
    ScalarVolume::new(
        meta.dims,
        Vector3::new(T::lit(sx), T::lit(sy), T::lit(sz)),
        Vector3::new(T::lit(ox), T::lit(oy), T::lit(oz)),
        data,
    )
}

/// Writes `vol` as f32 little-endian raw data plus a JSON sidecar.
pub fn write_volume_f32<T: Real>(vol: &ScalarVolume<T>, data_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    let data_path = data_path.as_ref();
    let meta_path = meta_path.as_ref();
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(data_path, &bytes).map_err(|e| Error::io(data_path, e))?;
    let meta = VolumeMeta {
        dims: vol.dims,
        spacing: [vol.spacing.x.as_f64(), vol.spacing.y.as_f64(), vol.spacing.z.as_f64()],
        origin: [vol.origin.x.as_f64(), vol.origin.y.as_f64(), vol.origin.z.as_f64()],
        dtype: ScalarType::F32,
    };
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
}

/// Catmull-Rom weights of the four taps around a fractional offset `t` in `[0, 1)`.
fn catmull_rom<T: Real>(t: T) -> [T; 4] {
    let half = T::lit(0.5);
    let (t2, t3) = (t * t, t * t * t);
    let two = T::lit(2.0);
    [
        half * (-t3 + two * t2 - t),
        half * (T::lit(3.0) * t3 - T::lit(5.0) * t2 + two),
        half * (T::lit(-3.0) * t3 + T::lit(4.0) * t2 + t),
        half * (t3 - t2),
    ]
}

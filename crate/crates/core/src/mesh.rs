//! Conformal tetrahedral meshes built by splitting occupied voxels.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vector3;
use crate::scalar::Real;
use crate::volume::OccupancyMask;

/// Cube corners are numbered by bits `x | y << 1 | z << 2`; every tet walks the main
/// diagonal 0 -> 7 through one axis permutation. Voxels mirror this split along each axis
/// whose index is odd (corner `c` becomes `c ^ parity`): face diagonals still agree between
/// neighbours, and the edge graph loses the preferred (1, 1, 1) direction a single fixed
/// split would give the uniform Laplacian.
const CUBE_SPLIT: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

#[derive(Debug, Clone)]
pub struct TetMesh<T> {
    pub vertices: Vec<Vector3<T>>,
    /// Corner indices, ordered so that every tet has positive signed volume.
    pub tets: Vec<[u32; 4]>,
    /// Sorted, deduplicated edge neighbours of each vertex.
    pub vertex_adjacency: Vec<Vec<u32>>,
}

impl<T: Real> TetMesh<T> {
    pub fn from_tets(vertices: Vec<Vector3<T>>, tets: Vec<[u32; 4]>) -> Self {
        let mut tets = tets;
        for t in &mut tets {
            if signed_volume(&vertices, t) < T::zero() {
                t.swap(2, 3);
            }
        }
        let mut vertex_adjacency = vec![Vec::new(); vertices.len()];
        for t in &tets {
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        vertex_adjacency[t[a] as usize].push(t[b]);
                    }
                }
            }
        }
        for adj in &mut vertex_adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Self {
            vertices,
            tets,
            vertex_adjacency,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_volume(&self, t: usize) -> T {
        signed_volume(&self.vertices, &self.tets[t])
    }

    /// Undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.vertex_adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, adj)| adj.iter().filter(move |&&b| b as usize > a).map(move |&b| (a as u32, b)))
    }

    /// Whether every vertex is reachable from vertex 0.
    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &n in &self.vertex_adjacency[v] {
                if !seen[n as usize] {
                    seen[n as usize] = true;
                    reached += 1;
                    queue.push_back(n as usize);
                }
            }
        }
        reached == self.vertices.len()
    }

    /// Index of the vertex closest to `p` (ties go to the lower index).
    pub fn nearest_vertex(&self, p: &Vector3<T>) -> Option<usize> {
        self.vertices
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (**a - *p).norm_squared();
                let db = (**b - *p).norm_squared();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
    }

    /// ASCII dump (`v x y z u` / `t i j k l`) for inspection in external tools.
    pub fn write_debug(&self, values: Option<&[T]>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for (i, v) in self.vertices.iter().enumerate() {
            let u = values.map_or(0.0, |vals| vals[i].as_f64());
            writeln!(out, "v {} {} {} {}", v.x, v.y, v.z, u).map_err(io)?;
        }
        for t in &self.tets {
            writeln!(out, "t {} {} {} {}", t[0], t[1], t[2], t[3]).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn signed_volume<T: Real>(v: &[Vector3<T>], t: &[u32; 4]) -> T {
    let a = v[t[0] as usize];
    let e1 = v[t[1] as usize] - a;
    let e2 = v[t[2] as usize] - a;
    let e3 = v[t[3] as usize] - a;
    e1.cross(&e2).dot(&e3) / T::lit(6.0)
}

/// Six tets per occupied voxel; voxel `(i, j, k)` spans its center +- half a spacing.
pub fn tetrahedralize<T: Real>(mask: &OccupancyMask, spacing: Vector3<T>, origin: Vector3<T>) -> Result<TetMesh<T>> {
    let [nx, ny, nz] = mask.dims();
    let (lx, ly) = (nx + 1, ny + 1);
    let mut lattice = vec![u32::MAX; lx * ly * (nz + 1)];
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    let half = T::lit(0.5);
    let corner_world = |i: usize, j: usize, k: usize| {
        Vector3::new(
            origin.x + (T::from_count(i) - half) * spacing.x,
            origin.y + (T::from_count(j) - half) * spacing.y,
            origin.z + (T::from_count(k) - half) * spacing.z,
        )
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !mask.get(i, j, k) {
                    continue;
                }
                let mut corner = [0u32; 8];
                for (b, slot) in corner.iter_mut().enumerate() {
                    let (ci, cj, ck) = (i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                    let key = ci + lx * (cj + ly * ck);
                    if lattice[key] == u32::MAX {
                        lattice[key] = vertices.len() as u32;
                        vertices.push(corner_world(ci, cj, ck));
                    }
                    *slot = lattice[key];
                }
                let parity = (i & 1) | (j & 1) << 1 | (k & 1) << 2;
                for split in CUBE_SPLIT {
                    tets.push(split.map(|c| corner[c ^ parity]));
                }
            }
        }
    }
    if tets.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(TetMesh::from_tets(vertices, tets))
}

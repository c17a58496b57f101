//! Harmonic guidance field: graph Laplacian with Dirichlet values at head (+1) and tail (-1).
//!
//! The reduced system over free vertices is `deg_i u_i - sum_{j free} u_j = sum_{j fixed} u_j`,
//! which is symmetric positive definite on a connected mesh. It is solved with Jacobi
//! preconditioned conjugate gradient in `f64` regardless of the mesh scalar type.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct HarmonicField<T> {
    /// One value per mesh vertex, in `[-1, 1]`.
    pub values: Vec<T>,
    pub head_vertex: usize,
    pub tail_vertex: usize,
    /// Relative residual `||A u - b|| / ||b||` of the reduced system at termination.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub relative_tolerance: f64,
    /// Iteration cap as a multiple of `sqrt(free vertex count)`.
    pub iteration_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-8,
            iteration_factor: 10.0,
        }
    }
}

impl SolverOptions {
    pub fn max_iterations(&self, n: usize) -> usize {
        ((self.iteration_factor * (n as f64).sqrt()).ceil() as usize).max(1)
    }
}

const FIXED: u32 = u32::MAX;

/// Reduced Dirichlet system over the free vertices of a mesh graph.
struct ReducedLaplacian<'a> {
    adjacency: &'a [Vec<u32>],
    /// Mesh vertex -> free unknown index, or `FIXED`.
    slot: Vec<u32>,
    free: Vec<u32>,
}

impl ReducedLaplacian<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(row, o)| {
            let v = self.free[row] as usize;
            let adj = &self.adjacency[v];
            let mut acc = adj.len() as f64 * x[row];
            for &n in adj {
                let s = self.slot[n as usize];
                if s != FIXED {
                    acc -= x[s as usize];
                }
            }
            *o = acc;
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the Dirichlet problem `u(head) = 1`, `u(tail) = -1`, `u_i = mean(neighbours)` elsewhere.
pub fn solve_harmonic<T: Real>(mesh: &TetMesh<T>, head: usize, tail: usize) -> Result<HarmonicField<T>> {
    solve_harmonic_with(mesh, head, tail, SolverOptions::default())
}

pub fn solve_harmonic_with<T: Real>(
    mesh: &TetMesh<T>,
    head: usize,
    tail: usize,
    options: SolverOptions,
) -> Result<HarmonicField<T>> {
    let nv = mesh.vertex_count();
    for idx in [head, tail] {
        if idx >= nv {
            return Err(Error::InvalidVertex(idx));
        }
    }
    if head == tail {
        return Err(Error::InvalidVertex(tail));
    }
    if !mesh.is_connected() {
        return Err(Error::Disconnected);
    }

    let mut fixed_value = vec![0.0f64; nv];
    fixed_value[head] = 1.0;
    fixed_value[tail] = -1.0;
    let mut slot = vec![FIXED; nv];
    let mut free = Vec::with_capacity(nv.saturating_sub(2));
    for v in 0..nv {
        if v != head && v != tail {
            slot[v] = free.len() as u32;
            free.push(v as u32);
        }
    }
    let system = ReducedLaplacian {
        adjacency: &mesh.vertex_adjacency,
        slot,
        free,
    };
    let n = system.free.len();

    let b: Vec<f64> = system
        .free
        .par_iter()
        .map(|&v| {
            mesh.vertex_adjacency[v as usize]
                .iter()
                .filter(|&&j| system.slot[j as usize] == FIXED)
                .map(|&j| fixed_value[j as usize])
                .sum()
        })
        .collect();
    let inv_diag: Vec<f64> = system
        .free
        .iter()
        .map(|&v| 1.0 / mesh.vertex_adjacency[v as usize].len() as f64)
        .collect();

    let b_norm = dot(&b, &b).sqrt();
    let (x, residual, iterations) = if n == 0 || b_norm == 0.0 {
        // no free vertices, or neither boundary vertex touches a free one
        (vec![0.0; n], 0.0, 0)
    } else {
        pcg(&system, &b, &inv_diag, b_norm, options)?
    };

    let mut values = vec![T::zero(); nv];
    values[head] = T::one();
    values[tail] = -T::one();
    for (row, &v) in system.free.iter().enumerate() {
        values[v as usize] = T::lit(x[row].clamp(-1.0, 1.0));
    }
    Ok(HarmonicField {
        values,
        head_vertex: head,
        tail_vertex: tail,
        residual,
        iterations,
    })
}

fn pcg(
    system: &ReducedLaplacian<'_>,
    b: &[f64],
    inv_diag: &[f64],
    b_norm: f64,
    options: SolverOptions,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = b.len();
    let max_iter = options.max_iterations(n);
    let tol = options.relative_tolerance * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut r_norm = b_norm;
    for it in 0..max_iter {
        if r_norm <= tol {
            return Ok((x, r_norm / b_norm, it));
        }
        system.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: r_norm / b_norm,
            });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        z.par_iter_mut()
            .zip(&r)
            .zip(inv_diag)
            .for_each(|((z, r), d)| *z = r * d);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        r_norm = dot(&r, &r).sqrt();
    }
    if r_norm <= tol {
        return Ok((x, r_norm / b_norm, max_iter));
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: r_norm / b_norm,
    })
}

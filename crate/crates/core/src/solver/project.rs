//! Pressure projection on the MAC grid.
//!
//! Solves `A p = -∇·V` where `A` is the (negated) 7-point Laplacian over
//! fluid cells, then applies `V -= ∇p` on every free face. Faces touching a
//! solid cell, and closed domain walls, are held at zero. Open walls use a
//! `p = 0` ghost cell, which keeps the system non-singular and lets uniform
//! flow pass through unchanged.
//!
//! With this discretization the post-projection divergence of a fluid cell
//! equals minus its linear-system residual, so the solver stops on
//! `max |r| ≤ tol` and then re-measures the divergence directly.
//!
//! The linear solver is conjugate gradients with a modified incomplete
//! Cholesky (MIC(0)) preconditioner. The triangular solves are sequential;
//! matrix-vector products and reductions run on fixed partitions so the
//! result does not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{det_dot, det_max_abs, GridSpec, StaggeredVectorGrid};

/// Treatment of the six domain walls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero pressure outside the box; flow may cross the walls.
    #[default]
    Open,
    /// No-flux walls.
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub iterations: usize,
    /// Max |∇·V| over fluid cells before projection.
    pub initial_divergence: f64,
    /// Max |∇·V| over fluid cells after projection.
    pub max_divergence: f64,
    pub converged: bool,
}

const MIC_TAU: f64 = 0.97;
const MIC_SIGMA: f64 = 0.25;

/// Discrete Poisson operator for one grid, solid mask and boundary choice.
struct PoissonSystem {
    spec: GridSpec,
    /// Diagonal of `A`; zero marks an inactive (solid or sealed) cell.
    diag: Vec<f64>,
    /// Coupling to the +x/+y/+z neighbor (negative or zero).
    plus: [Vec<f64>; 3],
    precon: Vec<f64>,
    /// Face free flags, one array per velocity component.
    free: [Vec<bool>; 3],
}

impl PoissonSystem {
    fn new(spec: GridSpec, solids: &[bool], boundary: Boundary) -> Self {
        let res = spec.res();
        let h = spec.cell_size();
        let inv_h2 = [1.0 / (h.x * h.x), 1.0 / (h.y * h.y), 1.0 / (h.z * h.z)];
        let n = spec.cell_count();
        let st = [1, res[0], res[0] * res[1]];
        let wall_open = boundary == Boundary::Open;

        let free: [Vec<bool>; 3] = [0, 1, 2].map(|axis| {
            let dims = spec.face_dims(axis);
            let mut out = vec![false; dims.iter().product()];
            out.par_chunks_mut(dims[0] * dims[1]).enumerate().for_each(|(k, slab)| {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let f = [i, j, k][axis];
                        // Linear index of the cell above the face; its lower
                        // neighbor is one stride back even when `f == res`.
                        let c = i + res[0] * (j + res[1] * k);
                        let lo_ok = f > 0 && !solids[c - st[axis]];
                        let hi_ok = f < res[axis] && !solids[c];
                        slab[i + dims[0] * j] = if f == 0 {
                            wall_open && hi_ok
                        } else if f == res[axis] {
                            wall_open && lo_ok
                        } else {
                            lo_ok && hi_ok
                        };
                    }
                }
            });
            out
        });

        let mut diag = vec![0.0; n];
        let mut plus = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let face_dims = [0, 1, 2].map(|axis| spec.face_dims(axis));
        let mut c = 0;
        for k in 0..res[2] {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    if !solids[c] {
                        let idx = [i, j, k];
                        for axis in 0..3 {
                            let d = face_dims[axis];
                            let face_lo = i + d[0] * (j + d[1] * k);
                            let face_hi = face_lo + [1, d[0], d[0] * d[1]][axis];
                            if free[axis][face_lo] {
                                diag[c] += inv_h2[axis];
                            }
                            if free[axis][face_hi] {
                                diag[c] += inv_h2[axis];
                                if idx[axis] + 1 < res[axis] {
                                    plus[axis][c] = -inv_h2[axis];
                                }
                            }
                        }
                    }
                    c += 1;
                }
            }
        }

        let mut sys = Self {
            spec,
            diag,
            plus,
            precon: vec![0.0; n],
            free,
        };
        sys.build_preconditioner();
        sys
    }

    fn strides(&self) -> [usize; 3] {
        let [nx, ny, _] = self.spec.res();
        [1, nx, nx * ny]
    }

    fn build_preconditioner(&mut self) {
        let res = self.spec.res();
        let st = self.strides();
        let [px, py, pz] = &self.plus;
        let mut c = 0;
        for k in 0..res[2] {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    let d = self.diag[c];
                    if d != 0.0 {
                        let mut e = d;
                        if i > 0 {
                            let m = c - st[0];
                            let (a, pm) = (px[m], self.precon[m]);
                            e -= (a * pm).powi(2) + MIC_TAU * a * (py[m] + pz[m]) * pm * pm;
                        }
                        if j > 0 {
                            let m = c - st[1];
                            let (a, pm) = (py[m], self.precon[m]);
                            e -= (a * pm).powi(2) + MIC_TAU * a * (px[m] + pz[m]) * pm * pm;
                        }
                        if k > 0 {
                            let m = c - st[2];
                            let (a, pm) = (pz[m], self.precon[m]);
                            e -= (a * pm).powi(2) + MIC_TAU * a * (px[m] + py[m]) * pm * pm;
                        }
                        if e < MIC_SIGMA * d {
                            e = d;
                        }
                        self.precon[c] = 1.0 / e.sqrt();
                    }
                    c += 1;
                }
            }
        }
    }

    /// `z = M⁻¹ r`.
    fn apply_preconditioner(&self, r: &[f64], z: &mut [f64], q: &mut [f64]) {
        let res = self.spec.res();
        let st = self.strides();
        let [px, py, pz] = &self.plus;
        let (diag, precon) = (&self.diag, &self.precon);
        let mut c = 0;
        for k in 0..res[2] {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    q[c] = if diag[c] == 0.0 {
                        0.0
                    } else {
                        let mut t = r[c];
                        if i > 0 {
                            let m = c - st[0];
                            t -= px[m] * precon[m] * q[m];
                        }
                        if j > 0 {
                            let m = c - st[1];
                            t -= py[m] * precon[m] * q[m];
                        }
                        if k > 0 {
                            let m = c - st[2];
                            t -= pz[m] * precon[m] * q[m];
                        }
                        t * precon[c]
                    };
                    c += 1;
                }
            }
        }
        for k in (0..res[2]).rev() {
            for j in (0..res[1]).rev() {
                for i in (0..res[0]).rev() {
                    c -= 1;
                    z[c] = if diag[c] == 0.0 {
                        0.0
                    } else {
                        let mut t = q[c];
                        if i + 1 < res[0] {
                            t -= px[c] * precon[c] * z[c + st[0]];
                        }
                        if j + 1 < res[1] {
                            t -= py[c] * precon[c] * z[c + st[1]];
                        }
                        if k + 1 < res[2] {
                            t -= pz[c] * precon[c] * z[c + st[2]];
                        }
                        t * precon[c]
                    };
                }
            }
        }
    }

    /// `out = A x`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let res = self.spec.res();
        let st = self.strides();
        let slab = res[0] * res[1];
        out.par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    let c = i + res[0] * j + slab * k;
                    let d = self.diag[c];
                    if d == 0.0 {
                        chunk[c - slab * k] = 0.0;
                        continue;
                    }
                    let idx = [i, j, k];
                    let mut acc = d * x[c];
                    for axis in 0..3 {
                        if idx[axis] + 1 < res[axis] {
                            acc += self.plus[axis][c] * x[c + st[axis]];
                        }
                        if idx[axis] > 0 {
                            let m = c - st[axis];
                            acc += self.plus[axis][m] * x[m];
                        }
                    }
                    chunk[c - slab * k] = acc;
                }
            }
        });
    }

    fn zero_fixed_faces(&self, velocity: &mut StaggeredVectorGrid) {
        for axis in 0..3 {
            let free = &self.free[axis];
            velocity
                .component_mut(axis)
                .data_mut()
                .par_iter_mut()
                .zip(free.par_iter())
                .for_each(|(v, &f)| {
                    if !f {
                        *v = 0.0;
                    }
                });
        }
    }

    /// `V -= ∇p` on free faces, with `p = 0` outside the domain.
    fn subtract_gradient(&self, velocity: &mut StaggeredVectorGrid, p: &[f64]) {
        let res = self.spec.res();
        let h = self.spec.cell_size();
        let spec = self.spec;
        for axis in 0..3 {
            let dims = spec.face_dims(axis);
            let free = &self.free[axis];
            velocity
                .component_mut(axis)
                .data_mut()
                .par_chunks_mut(dims[0] * dims[1])
                .enumerate()
                .for_each(|(k, chunk)| {
                    for j in 0..dims[1] {
                        for i in 0..dims[0] {
                            let l = i + dims[0] * j;
                            if !free[l + dims[0] * dims[1] * k] {
                                continue;
                            }
                            let idx = [i, j, k];
                            let f = idx[axis];
                            let p_hi = if f < res[axis] {
                                p[spec.cell_index(i, j, k)]
                            } else {
                                0.0
                            };
                            let p_lo = if f > 0 {
                                let mut lo = idx;
                                lo[axis] -= 1;
                                p[spec.cell_index(lo[0], lo[1], lo[2])]
                            } else {
                                0.0
                            };
                            chunk[l] -= (p_hi - p_lo) / h[axis];
                        }
                    }
                });
        }
    }

    fn rhs(&self, velocity: &StaggeredVectorGrid, b: &mut [f64]) {
        let res = self.spec.res();
        let slab = res[0] * res[1];
        b.par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    let c = i + res[0] * j;
                    chunk[c] = if self.diag[c + slab * k] == 0.0 {
                        0.0
                    } else {
                        -velocity.divergence_at(i, j, k)
                    };
                }
            }
        });
    }

    fn active_mask(&self) -> Vec<bool> {
        self.diag.iter().map(|&d| d != 0.0).collect()
    }
}

/// Projects `velocity` onto the divergence-free fields compatible with the
/// solid mask and wall treatment. `pressure` is used as the initial guess
/// when its length matches the grid and receives the final pressure.
pub fn project_with(
    velocity: &mut StaggeredVectorGrid,
    solids: &[bool],
    boundary: Boundary,
    tol: f64,
    max_iters: usize,
    pressure: &mut Vec<f64>,
) -> ProjectionReport {
    let spec = *velocity.spec();
    let n = spec.cell_count();
    assert_eq!(solids.len(), n, "solid mask must have one flag per cell");
    assert!(tol > 0.0, "projection tolerance must be positive");

    let sys = PoissonSystem::new(spec, solids, boundary);
    sys.zero_fixed_faces(velocity);
    let active = sys.active_mask();
    let fluid: Vec<bool> = solids.iter().map(|s| !s).collect();
    let initial_divergence = velocity.max_divergence(Some(&fluid));

    if pressure.len() != n {
        *pressure = vec![0.0; n];
    }
    for (p, &a) in pressure.iter_mut().zip(&active) {
        if !a {
            *p = 0.0;
        }
    }

    let mut b = vec![0.0; n];
    sys.rhs(velocity, &mut b);
    if boundary == Boundary::Closed {
        // Closed boxes only determine p up to a constant; keep the right-hand
        // side in the range of A.
        let count = active.iter().filter(|&&a| a).count().max(1) as f64;
        let mean = b.iter().sum::<f64>() / count;
        for (x, &a) in b.iter_mut().zip(&active) {
            if a {
                *x -= mean;
            }
        }
    }

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut iterations = 0;

    // Restart when the recursive residual drifts from the true one.
    for _restart in 0..4 {
        sys.apply(pressure, &mut tmp);
        r.par_iter_mut()
            .zip(b.par_iter())
            .zip(tmp.par_iter())
            .for_each(|((r, b), ap)| *r = b - ap);
        if det_max_abs(&r) <= tol || iterations >= max_iters {
            break;
        }
        sys.apply_preconditioner(&r, &mut z, &mut q);
        s.copy_from_slice(&z);
        let mut sigma = det_dot(&z, &r);
        while iterations < max_iters {
            iterations += 1;
            sys.apply(&s, &mut tmp);
            let denom = det_dot(&s, &tmp);
            if denom <= 0.0 || !denom.is_finite() {
                break;
            }
            let alpha = sigma / denom;
            pressure
                .par_iter_mut()
                .zip(s.par_iter())
                .for_each(|(p, s)| *p += alpha * s);
            r.par_iter_mut().zip(tmp.par_iter()).for_each(|(r, t)| *r -= alpha * t);
            if det_max_abs(&r) <= tol {
                break;
            }
            sys.apply_preconditioner(&r, &mut z, &mut q);
            let sigma_new = det_dot(&z, &r);
            let beta = sigma_new / sigma;
            s.par_iter_mut().zip(z.par_iter()).for_each(|(s, z)| *s = z + beta * *s);
            sigma = sigma_new;
        }
    }

    sys.subtract_gradient(velocity, pressure);
    let max_divergence = velocity.max_divergence(Some(&fluid));
    ProjectionReport {
        iterations,
        initial_divergence,
        max_divergence,
        converged: max_divergence <= tol,
    }
}

/// Projection with open walls and a fresh pressure guess.
pub fn project(
    velocity: &StaggeredVectorGrid,
    solids: &[bool],
    tol: f64,
    max_iters: usize,
) -> (StaggeredVectorGrid, ProjectionReport) {
    let mut out = velocity.clone();
    let mut p = Vec::new();
    let report = project_with(&mut out, solids, Boundary::Open, tol, max_iters, &mut p);
    (out, report)
}

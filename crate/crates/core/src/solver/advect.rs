//! Semi-Lagrangian and MacCormack advection on cell-centered and face-centered
//! lattices.

use rayon::prelude::*;

use crate::grid::{Field, GridSpec, ScalarGrid, StaggeredVectorGrid, Vec3};

/// Courant number above which advection logs a warning. Semi-Lagrangian
/// transport stays stable past it but loses accuracy.
pub const CFL_WARN: f64 = 5.0;

/// Largest per-step displacement in cells implied by `velocity` and `dt`.
pub fn courant_number(velocity: &StaggeredVectorGrid, dt: f64) -> f64 {
    let h = velocity.spec().cell_size();
    (0..3)
        .map(|a| crate::grid::det_max_abs(velocity.component(a).data()) * dt.abs() / h[a])
        .fold(0.0, f64::max)
}

fn warn_cfl(velocity: &StaggeredVectorGrid, dt: f64) {
    let c = courant_number(velocity, dt);
    if c > CFL_WARN {
        log::warn!("advection Courant number {c:.2} exceeds {CFL_WARN}; dt is large for this velocity");
    }
}

/// Per-sample displacement `dt · V(q) / h` in cell units.
fn displacements(field: &Field, velocity: &StaggeredVectorGrid, dt: f64) -> Vec<Vec3> {
    let h = velocity.spec().cell_size();
    let dims = field.dims();
    let slab = dims[0] * dims[1];
    let mut out = vec![Vec3::zeros(); field.data().len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let q = field.position(i, j, k);
                chunk[i + dims[0] * j] = (velocity.sample_cells(&q) * dt).component_div(&h);
            }
        }
    });
    out
}

/// Samples `source` at `position(idx) + sign · disp[idx]` for every sample.
fn trace(source: &Field, disp: &[Vec3], sign: f64, bounds: Option<&mut [(f64, f64)]>) -> Field {
    let dims = source.dims();
    let slab = dims[0] * dims[1];
    let mut out = Field::zeros(dims, source.offset());
    match bounds {
        Some(b) => out
            .data_mut()
            .par_chunks_mut(slab)
            .zip(b.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (chunk, bchunk))| {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let l = i + dims[0] * j;
                        let q = source.position(i, j, k) + disp[k * slab + l] * sign;
                        (chunk[l], bchunk[l]) = source.sample_with_bounds(&q);
                    }
                }
            }),
        None => out.data_mut().par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let l = i + dims[0] * j;
                    let q = source.position(i, j, k) + disp[k * slab + l] * sign;
                    chunk[l] = source.sample(&q);
                }
            }
        }),
    }
    out
}

/// First-order semi-Lagrangian transport of one lattice.
pub fn semi_lagrangian_field(field: &Field, velocity: &StaggeredVectorGrid, dt: f64) -> Field {
    let disp = displacements(field, velocity, dt);
    trace(field, &disp, -1.0, None)
}

/// MacCormack transport of one lattice: forward trace, backward trace of the
/// result, half the round-trip error added back, then clamped to the extrema
/// of the forward-trace stencil.
pub fn maccormack_field(field: &Field, velocity: &StaggeredVectorGrid, dt: f64) -> Field {
    let disp = displacements(field, velocity, dt);
    let mut bounds = vec![(0.0, 0.0); field.data().len()];
    let forward = trace(field, &disp, -1.0, Some(&mut bounds));
    let backward = trace(&forward, &disp, 1.0, None);
    let mut out = forward;
    out.data_mut()
        .par_iter_mut()
        .zip(field.data().par_iter())
        .zip(backward.data().par_iter())
        .zip(bounds.par_iter())
        .for_each(|(((f, &orig), &back), &(lo, hi))| {
            *f = (*f + 0.5 * (orig - back)).clamp(lo, hi);
        });
    out
}

/// A grid quantity that can be carried along a velocity field.
pub trait Advectable: Sized {
    fn grid_spec(&self) -> &GridSpec;
    fn map_fields(&self, f: impl Fn(&Field) -> Field) -> Self;
}

impl Advectable for ScalarGrid {
    fn grid_spec(&self) -> &GridSpec {
        self.spec()
    }

    fn map_fields(&self, f: impl Fn(&Field) -> Field) -> Self {
        let out = f(self.field());
        ScalarGrid::from_vec(*self.spec(), out.into_vec()).expect("advection preserves shape")
    }
}

impl Advectable for StaggeredVectorGrid {
    fn grid_spec(&self) -> &GridSpec {
        self.spec()
    }

    fn map_fields(&self, f: impl Fn(&Field) -> Field) -> Self {
        let [u, v, w] = self.components().each_ref().map(|c| f(c).into_vec());
        StaggeredVectorGrid::from_components(*self.spec(), u, v, w).expect("advection preserves shape")
    }
}

fn check_shared(field: &impl Advectable, velocity: &StaggeredVectorGrid) {
    assert_eq!(
        field.grid_spec(),
        velocity.spec(),
        "advected field and velocity must share resolution and bounding box"
    );
}

pub fn advect_maccormack<T: Advectable>(field: &T, velocity: &StaggeredVectorGrid, dt: f64) -> T {
    check_shared(field, velocity);
    warn_cfl(velocity, dt);
    field.map_fields(|f| maccormack_field(f, velocity, dt))
}

pub fn advect_semi_lagrangian<T: Advectable>(field: &T, velocity: &StaggeredVectorGrid, dt: f64) -> T {
    check_shared(field, velocity);
    warn_cfl(velocity, dt);
    field.map_fields(|f| semi_lagrangian_field(f, velocity, dt))
}

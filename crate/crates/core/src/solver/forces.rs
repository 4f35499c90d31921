//! Body forces and solid obstacles acting on the MAC velocity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Field, GridSpec, ScalarGrid, StaggeredVectorGrid, Vec3};

/// Where a wind force acts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindRegion {
    #[default]
    Global,
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

/// Constant acceleration applied every step, scaled by `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindForce {
    pub force: Vec3,
    #[serde(default)]
    pub region: WindRegion,
}

impl WindForce {
    pub fn global(force: Vec3) -> Self {
        Self {
            force,
            region: WindRegion::Global,
        }
    }

    pub fn sphere(force: Vec3, center: Vec3, radius: f64) -> Self {
        Self {
            force,
            region: WindRegion::Sphere { center, radius },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.force.iter().any(|v| !v.is_finite()) {
            return Err(invalid("wind force must be finite"));
        }
        if let WindRegion::Sphere { center, radius } = self.region {
            if !(radius > 0.0 && radius.is_finite()) || center.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("wind sphere radius must be positive, got {radius}")));
            }
        }
        Ok(())
    }

    pub fn covers(&self, p: &Vec3) -> bool {
        match self.region {
            WindRegion::Global => true,
            WindRegion::Sphere { center, radius } => (p - center).norm() <= radius,
        }
    }
}

/// Rigid no-slip ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereObstacle {
    pub center: Vec3,
    pub radius: f64,
}

impl SphereObstacle {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        let s = Self { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) || self.center.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "obstacle radius must be positive, got {}",
                self.radius
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Adds `f(face position)` to every face of every component.
fn for_each_face(velocity: &mut StaggeredVectorGrid, f: impl Fn(usize, Vec3, &mut f64) + Sync) {
    let spec = *velocity.spec();
    for axis in 0..3 {
        let field = velocity.component_mut(axis);
        let dims = field.dims();
        let offset = field.offset();
        field
            .data_mut()
            .par_chunks_mut(dims[0] * dims[1])
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let q = Vec3::new(i as f64 + offset[0], j as f64 + offset[1], k as f64 + offset[2]);
                        f(axis, spec.cells_to_world(&q), &mut slab[i + dims[0] * j]);
                    }
                }
            });
    }
}

/// `v += dt · b · ρ` on interior y-faces, with ρ averaged from the two
/// adjacent cells.
pub fn add_buoyancy(velocity: &mut StaggeredVectorGrid, density: &ScalarGrid, coeff: f64, dt: f64) {
    assert_eq!(velocity.spec(), density.spec(), "buoyancy needs a shared grid");
    if coeff == 0.0 {
        return;
    }
    let rho = density.field();
    let v: &mut Field = velocity.component_mut(1);
    let dims = v.dims();
    let scale = dt * coeff;
    v.data_mut()
        .par_chunks_mut(dims[0] * dims[1])
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 1..dims[1] - 1 {
                for i in 0..dims[0] {
                    let face_rho = 0.5 * (rho.get(i, j - 1, k) + rho.get(i, j, k));
                    slab[i + dims[0] * j] += scale * face_rho;
                }
            }
        });
}

pub fn add_wind(velocity: &mut StaggeredVectorGrid, wind: &WindForce, dt: f64) {
    let delta = wind.force * dt;
    if delta == Vec3::zeros() {
        return;
    }
    for_each_face(velocity, |axis, p, value| {
        if delta[axis] != 0.0 && wind.covers(&p) {
            *value += delta[axis];
        }
    });
}

/// Zeroes every face whose center lies inside the obstacle.
pub fn apply_obstacle(velocity: &mut StaggeredVectorGrid, obstacle: &SphereObstacle) {
    for_each_face(velocity, |_, p, value| {
        if obstacle.contains(&p) {
            *value = 0.0;
        }
    });
}

/// Per-cell solid flags. A cell is solid when its center or any of its six
/// face centers lies inside an obstacle, so every face inside an obstacle
/// borders a solid cell.
pub fn solid_mask(spec: &GridSpec, obstacles: &[SphereObstacle]) -> Vec<bool> {
    let [nx, ny, nz] = spec.res();
    let mut mask = vec![false; nx * ny * nz];
    if obstacles.is_empty() {
        return mask;
    }
    const PROBES: [[f64; 3]; 7] = [
        [0.5, 0.5, 0.5],
        [0.0, 0.5, 0.5],
        [1.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 1.0, 0.5],
        [0.5, 0.5, 0.0],
        [0.5, 0.5, 1.0],
    ];
    mask.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                slab[i + nx * j] = PROBES.iter().any(|o| {
                    let q = Vec3::new(i as f64 + o[0], j as f64 + o[1], k as f64 + o[2]);
                    let p = spec.cells_to_world(&q);
                    obstacles.iter().any(|ob| ob.contains(&p))
                });
            }
        }
    });
    mask
}

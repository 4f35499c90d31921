use rayon::prelude::*;

use crate::asset::VisualParticle;
use crate::grid::{StaggeredVectorGrid, Vec3};

/// Moves one point with the midpoint rule through the staggered field.
/// Points outside the grid box see zero velocity.
pub fn rk2_step(velocity: &StaggeredVectorGrid, x: &Vec3, dt: f64) -> Vec3 {
    let mid = x + velocity.sample_world(x) * (0.5 * dt);
    x + velocity.sample_world(&mid) * dt
}

/// Carries visual particle centers along the velocity field; all other
/// attributes are left untouched.
pub fn advect_particles(particles: &[VisualParticle], velocity: &StaggeredVectorGrid, dt: f64) -> Vec<VisualParticle> {
    particles
        .par_iter()
        .map(|p| {
            let x = rk2_step(velocity, &p.center(), dt);
            VisualParticle {
                position: [x.x as f32, x.y as f32, x.z as f32],
                ..*p
            }
        })
        .collect()
}

//! Fixtures shared by the benchmarks: a synthetic rising plume and the
//! fields derived from it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokeforge::splat::{splat_density, splat_velocity};
use smokeforge::{
    init_from_asset, AssetFrame, GridSpec, PhysicalParticle, ScalarGrid, SimConfig, SimState, SmokeAsset,
    StaggeredVectorGrid, Vec3, VisualParticle,
};

/// One frame of `visual` particles in a column above the origin and
/// `physical` particles moving up and outward.
pub fn plume(visual: usize, physical: usize, seed: u64) -> SmokeAsset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vis = (0..visual)
        .map(|_| {
            let h: f32 = rng.gen_range(0.0..2.0);
            let r = 0.2 + 0.15 * h;
            VisualParticle::isotropic(
                [rng.gen_range(-r..r), h, rng.gen_range(-r..r)],
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.2..0.9),
            )
        })
        .collect();
    let phy = (0..physical)
        .map(|_| {
            let p = [
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.0..2.0),
                rng.gen_range(-0.3..0.3),
            ];
            PhysicalParticle {
                position: p,
                velocity: [0.2 * p[0], rng.gen_range(0.3..0.6), 0.2 * p[2]],
            }
        })
        .collect();
    SmokeAsset::new(
        vec![AssetFrame {
            visual: vis,
            physical: phy,
        }],
        30.0,
    )
    .expect("valid plume")
}

pub fn config(n: usize) -> SimConfig {
    SimConfig {
        resolution: [n; 3],
        buoyancy_coeff: 0.5,
        ..SimConfig::default()
    }
}

/// The plume splatted at `n³` with 300 visual and 100 physical particles.
pub fn state(n: usize) -> SimState {
    init_from_asset(&plume(300, 100, 7), 1, &config(n)).expect("plume state")
}

pub fn fields(n: usize) -> (GridSpec, ScalarGrid, StaggeredVectorGrid) {
    let asset = plume(300, 100, 7);
    let s = init_from_asset(&asset, 1, &config(n)).expect("plume state");
    let spec = *s.spec();
    let f = &asset.frames()[0];
    let density = splat_density(&f.visual, &spec).expect("density");
    let h = spec.cell_size();
    let velocity = splat_velocity(&f.physical, Vec3::new(1.5 * h.x, 1.5 * h.y, 1.5 * h.z), &spec).expect("velocity");
    (spec, density, velocity)
}

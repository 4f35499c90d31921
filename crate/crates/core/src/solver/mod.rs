//! Incompressible smoke simulation on a MAC grid.
//!
//! One [`step`] runs, in order: MacCormack self-advection of the velocity,
//! buoyancy, wind, obstacle enforcement, pressure projection, MacCormack
//! advection of the density, and clamping of the density to `≥ 0`.

pub mod advect;
pub mod forces;
pub mod particles;
pub mod project;
pub mod scenario;

use serde::{Deserialize, Serialize};

use crate::asset::SmokeAsset;
use crate::error::{invalid, Result};
use crate::grid::{GridSpec, ScalarGrid, StaggeredVectorGrid, Vec3};
use crate::splat::{restrict_bbox, splat_density, splat_velocity};

pub use advect::{advect_maccormack, advect_semi_lagrangian, Advectable};
pub use forces::{add_buoyancy, add_wind, apply_obstacle, solid_mask, SphereObstacle, WindForce, WindRegion};
pub use particles::advect_particles;
pub use project::{project, project_with, Boundary, ProjectionReport};
pub use scenario::{obstacle_from_cells, wind_from_cells, Scenario};

/// Velocity kernel width, in cells, when none is configured.
pub const DEFAULT_KERNEL_CELLS: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulation time per step.
    pub dt: f64,
    pub buoyancy_coeff: f64,
    pub wind: Vec<WindForce>,
    pub obstacles: Vec<SphereObstacle>,
    /// Max |∇·V| accepted on fluid cells after projection.
    pub projection_tol: f64,
    pub projection_max_iters: usize,
    /// Standard deviations of the velocity splat kernel, world units;
    /// `None` means [`DEFAULT_KERNEL_CELLS`] cells.
    pub kernel_scale: Option<Vec3>,
    /// Grid resolution used by [`init_from_asset`].
    pub resolution: [usize; 3],
    /// Bounding-box padding, in multiples of each particle's largest scale.
    pub padding_sigmas: f64,
    pub boundary: Boundary,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 30.0,
            buoyancy_coeff: 0.0,
            wind: Vec::new(),
            obstacles: Vec::new(),
            projection_tol: 1e-4,
            projection_max_iters: 500,
            kernel_scale: None,
            resolution: [128, 128, 128],
            padding_sigmas: 3.0,
            boundary: Boundary::Open,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.projection_tol > 0.0) {
            return Err(invalid(format!(
                "projection tolerance must be positive, got {}",
                self.projection_tol
            )));
        }
        if self.projection_max_iters == 0 {
            return Err(invalid("projection needs at least one iteration"));
        }
        if !self.buoyancy_coeff.is_finite() {
            return Err(invalid("buoyancy coefficient must be finite"));
        }
        if self.resolution.iter().any(|&n| n == 0) {
            return Err(invalid("grid resolution must be positive"));
        }
        if let Some(k) = self.kernel_scale {
            if k.iter().any(|&s| !(s > 0.0)) {
                return Err(invalid("kernel scale must be positive"));
            }
        }
        for w in &self.wind {
            w.validate()?;
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        Ok(())
    }

    pub fn kernel_scale_for(&self, spec: &GridSpec) -> Vec3 {
        self.kernel_scale
            .unwrap_or_else(|| spec.cell_size() * DEFAULT_KERNEL_CELLS)
    }
}

/// Grids and clock of a running simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub density: ScalarGrid,
    pub velocity: StaggeredVectorGrid,
    pub step_index: u64,
    pub clock: f64,
    /// Last pressure solution, reused as the next initial guess.
    pressure: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step_index: u64,
    pub clock: f64,
    pub projection: ProjectionReport,
    pub total_mass: f64,
}

impl SimState {
    pub fn new(density: ScalarGrid, velocity: StaggeredVectorGrid) -> Result<Self> {
        if density.spec() != velocity.spec() {
            return Err(invalid("density and velocity must share resolution and bounding box"));
        }
        Ok(Self {
            density,
            velocity,
            step_index: 0,
            clock: 0.0,
            pressure: Vec::new(),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.density.spec()
    }

    pub fn step(&mut self, config: &SimConfig) -> StepReport {
        let dt = config.dt;
        let mut velocity = advect_maccormack(&self.velocity, &self.velocity, dt);
        add_buoyancy(&mut velocity, &self.density, config.buoyancy_coeff, dt);
        for wind in &config.wind {
            add_wind(&mut velocity, wind, dt);
        }
        for obstacle in &config.obstacles {
            apply_obstacle(&mut velocity, obstacle);
        }
        let solids = solid_mask(self.spec(), &config.obstacles);
        let projection = project_with(
            &mut velocity,
            &solids,
            config.boundary,
            config.projection_tol,
            config.projection_max_iters,
            &mut self.pressure,
        );
        if projection.converged {
            debug_assert!(projection.max_divergence <= config.projection_tol);
        } else {
            log::warn!(
                "projection stopped after {} iterations with max divergence {:.3e}",
                projection.iterations,
                projection.max_divergence
            );
        }
        let mut density = advect_maccormack(&self.density, &velocity, dt);
        for v in density.values_mut() {
            *v = v.max(0.0);
        }
        self.density = density;
        self.velocity = velocity;
        self.step_index += 1;
        self.clock += dt;
        StepReport {
            step_index: self.step_index,
            clock: self.clock,
            projection,
            total_mass: self.density.total_mass(),
        }
    }
}

/// Functional form of [`SimState::step`].
pub fn step(state: &SimState, config: &SimConfig) -> (SimState, StepReport) {
    let mut next = state.clone();
    let report = next.step(config);
    (next, report)
}

/// Splats frame `frame` (1-based) of `asset` onto a grid bounding its visual
/// particles.
pub fn init_from_asset(asset: &SmokeAsset, frame: usize, config: &SimConfig) -> Result<SimState> {
    config.validate()?;
    let f = asset.frame(frame)?;
    let bbox = restrict_bbox(&f.visual, config.padding_sigmas)?;
    let spec = GridSpec::new(config.resolution, bbox)?;
    let density = splat_density(&f.visual, &spec)?;
    let velocity = splat_velocity(&f.physical, config.kernel_scale_for(&spec), &spec)?;
    SimState::new(density, velocity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{AssetFrame, PhysicalParticle, VisualParticle};

    fn small_config() -> SimConfig {
        SimConfig {
            resolution: [9, 9, 9],
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let spec = GridSpec::unit_cells([8, 8, 8]).unwrap();
        let mut s = SimState::new(ScalarGrid::zeros(spec), StaggeredVectorGrid::zeros(spec)).unwrap();
        let before = s.clone();
        let r = s.step(&SimConfig::default());
        assert_eq!(s.density, before.density);
        assert_eq!(s.velocity, before.velocity);
        assert_eq!(s.step_index, 1);
        assert_eq!(r.clock, 1.0 / 30.0);
    }

    #[test]
    fn init_single_centered_particle() {
        let asset = SmokeAsset::new(
            vec![AssetFrame {
                visual: vec![VisualParticle::isotropic([1.0, 2.0, 3.0], 0.5, 0.8)],
                physical: vec![],
            }],
            30.0,
        )
        .unwrap();
        let s = init_from_asset(&asset, 1, &small_config()).unwrap();
        assert_eq!(s.density.spec(), s.velocity.spec());
        assert_eq!(s.velocity.max_abs(), 0.0);
        let peak = s.density.max_value();
        let (mut at, mut count) = (None, 0);
        for k in 0..9 {
            for j in 0..9 {
                for i in 0..9 {
                    if s.density.get(i, j, k) == peak {
                        at = Some([i, j, k]);
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 1);
        assert_eq!(at, Some([4, 4, 4]));
        assert!((peak - 0.8).abs() < 1e-6);
    }

    #[test]
    fn init_errors() {
        let asset = SmokeAsset::new(
            vec![AssetFrame {
                visual: vec![],
                physical: vec![PhysicalParticle {
                    position: [0.0; 3],
                    velocity: [1.0, 0.0, 0.0],
                }],
            }],
            30.0,
        )
        .unwrap();
        assert!(init_from_asset(&asset, 1, &small_config()).is_err());
        assert!(init_from_asset(&asset, 2, &small_config()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            dt: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            projection_tol: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&SimConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&json).unwrap(), SimConfig::default());
    }
}

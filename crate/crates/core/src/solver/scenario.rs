//! Interaction presets. Positions and lengths are given in grid-index units
//! (one unit per cell) and mapped to world space through the target grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::forces::{SphereObstacle, WindForce, WindRegion};
use super::SimConfig;
use crate::error::{invalid, Error};
use crate::grid::{GridSpec, Vec3};

/// Acceleration of the wind presets, cells per time unit squared.
pub const PRESET_WIND: [f64; 3] = [0.005, 0.0, 0.0];
/// Radius of the local-wind sphere around the scene center, in cells.
pub const PRESET_LOCAL_RADIUS: f64 = 30.0;
/// Obstacle ball: center (x, y) in cells, z at the domain's mid-plane.
pub const PRESET_BALL_XY: [f64; 2] = [50.0, 70.0];
pub const PRESET_BALL_RADIUS: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    None,
    WindGlobal,
    WindLocal,
    Obstacle,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::None,
        Scenario::WindGlobal,
        Scenario::WindLocal,
        Scenario::Obstacle,
    ];

    /// Wind forces of this preset on `spec`.
    pub fn winds(&self, spec: &GridSpec) -> Vec<WindForce> {
        self.winds_in_cells(spec)
            .iter()
            .map(|w| wind_from_cells(w, spec))
            .collect()
    }

    /// The same forces in grid-index units.
    pub fn winds_in_cells(&self, spec: &GridSpec) -> Vec<WindForce> {
        let force = Vec3::from(PRESET_WIND);
        let center = Vec3::from(spec.res().map(|n| n as f64 / 2.0));
        match self {
            Scenario::WindGlobal => vec![WindForce::global(force)],
            Scenario::WindLocal => vec![WindForce::sphere(force, center, PRESET_LOCAL_RADIUS)],
            _ => vec![],
        }
    }

    pub fn obstacles(&self, spec: &GridSpec) -> Vec<SphereObstacle> {
        self.obstacles_in_cells(spec)
            .iter()
            .map(|o| obstacle_from_cells(o, spec))
            .collect()
    }

    pub fn obstacles_in_cells(&self, spec: &GridSpec) -> Vec<SphereObstacle> {
        match self {
            Scenario::Obstacle => {
                let [x, y] = PRESET_BALL_XY;
                let z = spec.res()[2] as f64 / 2.0;
                vec![SphereObstacle {
                    center: Vec3::new(x, y, z),
                    radius: PRESET_BALL_RADIUS,
                }]
            }
            _ => vec![],
        }
    }

    /// Replaces the wind and obstacle lists of `config` with this preset.
    pub fn configure(&self, config: &mut SimConfig, spec: &GridSpec) {
        config.wind = self.winds(spec);
        config.obstacles = self.obstacles(spec);
    }
}

fn mean_cell(spec: &GridSpec) -> f64 {
    let h = spec.cell_size();
    (h.x + h.y + h.z) / 3.0
}

/// Maps a wind given in grid-index units (cells, cells per time squared) to
/// world units. Lengths scale by the mean cell size, forces per axis.
pub fn wind_from_cells(wind: &WindForce, spec: &GridSpec) -> WindForce {
    let force = wind.force.component_mul(&spec.cell_size());
    match wind.region {
        WindRegion::Global => WindForce::global(force),
        WindRegion::Sphere { center, radius } => {
            WindForce::sphere(force, spec.cells_to_world(&center), radius * mean_cell(spec))
        }
    }
}

pub fn obstacle_from_cells(obstacle: &SphereObstacle, spec: &GridSpec) -> SphereObstacle {
    SphereObstacle {
        center: spec.cells_to_world(&obstacle.center),
        radius: obstacle.radius * mean_cell(spec),
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "none" => Ok(Scenario::None),
            "wind-global" => Ok(Scenario::WindGlobal),
            "wind-local" => Ok(Scenario::WindLocal),
            "obstacle" => Ok(Scenario::Obstacle),
            other => Err(invalid(format!(
                "unknown scenario `{other}` (expected none, wind-global, wind-local or obstacle)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::None => "none",
            Scenario::WindGlobal => "wind-global",
            Scenario::WindLocal => "wind-local",
            Scenario::Obstacle => "obstacle",
        })
    }
}

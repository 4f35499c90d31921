use serde_json::{json, Map, Value};

use crate::error::{invalid, Result};
use crate::grid::GridSpec;
use crate::solver::{obstacle_from_cells, wind_from_cells, SphereObstacle, WindForce};

/// Upper bound on `Step(n)`, so one request cannot stall a session forever.
pub const MAX_STEPS_PER_COMMAND: u32 = 100_000;

/// Edits and controls applied to a session between steps.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Replaces all wind forces.
    SetWind(Vec<WindForce>),
    AddObstacle(SphereObstacle),
    RemoveObstacle(u64),
    SetBuoyancy(f64),
    Step(u32),
    Pause,
    Resume,
    /// Re-initializes the grids from asset frame `k` (1-based).
    Reset(usize),
    Snapshot,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetWind(_) => "set_wind",
            Command::AddObstacle(_) => "add_obstacle",
            Command::RemoveObstacle(_) => "remove_obstacle",
            Command::SetBuoyancy(_) => "set_buoyancy",
            Command::Step(_) => "step",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset(_) => "reset",
            Command::Snapshot => "snapshot",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Command::SetWind(ws) => ws.iter().try_for_each(|w| w.validate()),
            Command::AddObstacle(o) => o.validate(),
            Command::SetBuoyancy(b) if !b.is_finite() => Err(invalid("buoyancy must be finite")),
            Command::Step(n) if *n == 0 || *n > MAX_STEPS_PER_COMMAND => Err(invalid(format!(
                "step count must lie in 1..={MAX_STEPS_PER_COMMAND}, got {n}"
            ))),
            Command::Reset(0) => Err(invalid("asset frames are 1-based")),
            _ => Ok(()),
        }
    }

    /// Parameters in world units, as written to command logs.
    pub fn params(&self) -> Value {
        match self {
            Command::SetWind(ws) => json!({ "winds": ws }),
            Command::AddObstacle(o) => json!({ "center": o.center, "radius": o.radius }),
            Command::RemoveObstacle(id) => json!({ "id": id }),
            Command::SetBuoyancy(b) => json!({ "coeff": b }),
            Command::Step(n) => json!({ "n": n }),
            Command::Reset(k) => json!({ "frame": k }),
            Command::Pause | Command::Resume | Command::Snapshot => json!({}),
        }
    }

    /// Parses a command name and its parameter object. With
    /// `"units": "cells"`, positions, radii and forces are in grid-index units
    /// of `spec` and get mapped to world units.
    pub fn parse(cmd: &str, params: &Value, spec: &GridSpec) -> Result<Command> {
        let empty = Map::new();
        let p = match params {
            Value::Object(m) => m,
            Value::Null => &empty,
            _ => return Err(invalid("params must be an object")),
        };
        let cells = match p.get("units") {
            None => false,
            Some(Value::String(u)) if u == "world" => false,
            Some(Value::String(u)) if u == "cells" => true,
            Some(other) => return Err(invalid(format!("units must be \"world\" or \"cells\", got {other}"))),
        };
        let command = match cmd {
            "set_wind" => {
                let raw = p.get("winds").ok_or_else(|| invalid("set_wind needs `winds`"))?;
                let winds: Vec<WindForce> =
                    serde_json::from_value(raw.clone()).map_err(|e| invalid(format!("bad `winds`: {e}")))?;
                Command::SetWind(if cells {
                    winds.iter().map(|w| wind_from_cells(w, spec)).collect()
                } else {
                    winds
                })
            }
            "add_obstacle" => {
                let o: SphereObstacle = serde_json::from_value(Value::Object(p.clone()))
                    .map_err(|e| invalid(format!("bad obstacle: {e}")))?;
                Command::AddObstacle(if cells { obstacle_from_cells(&o, spec) } else { o })
            }
            "remove_obstacle" => Command::RemoveObstacle(uint(p, "id")?),
            "set_buoyancy" => Command::SetBuoyancy(
                p.get("coeff")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| invalid("set_buoyancy needs a numeric `coeff`"))?,
            ),
            "step" => {
                let n = if p.contains_key("n") { uint(p, "n")? } else { 1 };
                Command::Step(u32::try_from(n).map_err(|_| invalid("step count too large"))?)
            }
            "pause" => Command::Pause,
            "resume" => Command::Resume,
            "reset" => Command::Reset(uint(p, "frame")? as usize),
            "snapshot" => Command::Snapshot,
            other => return Err(invalid(format!("unknown command `{other}`"))),
        };
        command.validate()?;
        Ok(command)
    }
}

fn uint(p: &Map<String, Value>, key: &str) -> Result<u64> {
    p.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| invalid(format!("`{key}` must be a non-negative integer")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Aabb, Vec3};
    use crate::solver::Scenario;

    fn unit() -> GridSpec {
        GridSpec::unit_cells([128, 128, 128]).unwrap()
    }

    #[test]
    fn parses_every_command() {
        let s = unit();
        let cases = [
            (
                "set_wind",
                json!({"winds": [{"force": [0.005, 0.0, 0.0], "region": "global"}]}),
            ),
            ("add_obstacle", json!({"center": [50.0, 70.0, 64.0], "radius": 10.0})),
            ("remove_obstacle", json!({"id": 3})),
            ("set_buoyancy", json!({"coeff": 0.5})),
            ("step", json!({"n": 4})),
            ("step", json!({})),
            ("pause", Value::Null),
            ("resume", json!({})),
            ("reset", json!({"frame": 2})),
            ("snapshot", json!({})),
        ];
        for (name, params) in cases {
            let c = Command::parse(name, &params, &s).unwrap();
            assert_eq!(c.name(), name);
            assert_eq!(Command::parse(name, &c.params(), &s).unwrap(), c);
        }
    }

    #[test]
    fn preset_payloads_in_cells_match_scenarios() {
        let s = GridSpec::new(
            [64, 32, 16],
            Aabb::new(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(3.0, 1.0, 2.5)),
        )
        .unwrap();
        let local = json!({"units": "cells", "winds": [{"force": [0.005, 0.0, 0.0], "region": {"sphere": {"center": [32.0, 16.0, 8.0], "radius": 30.0}}}]});
        assert_eq!(
            Command::parse("set_wind", &local, &s).unwrap(),
            Command::SetWind(Scenario::WindLocal.winds(&s))
        );
        let ball = json!({"units": "cells", "center": [50.0, 70.0, 8.0], "radius": 10.0});
        assert_eq!(
            Command::parse("add_obstacle", &ball, &s).unwrap(),
            Command::AddObstacle(Scenario::Obstacle.obstacles(&s)[0])
        );
    }

    #[test]
    fn rejects_malformed() {
        let s = unit();
        for (name, params) in [
            ("launch", json!({})),
            ("step", json!({"n": 0})),
            ("step", json!({"n": -1})),
            ("step", json!({"n": 1e12})),
            ("reset", json!({"frame": 0})),
            ("reset", json!({})),
            ("add_obstacle", json!({"center": [0, 0, 0], "radius": -1.0})),
            ("add_obstacle", json!({"center": [0, 0], "radius": 1.0})),
            (
                "set_wind",
                json!({"winds": [{"force": [0, 0, 0], "region": {"sphere": {"center": [0, 0, 0], "radius": 0.0}}}]}),
            ),
            ("set_wind", json!({"winds": 3})),
            ("set_buoyancy", json!({"coeff": "high"})),
            ("pause", json!([1, 2])),
            ("pause", json!({"units": "furlongs"})),
        ] {
            assert!(Command::parse(name, &params, &s).is_err(), "{name} {params}");
        }
    }
}

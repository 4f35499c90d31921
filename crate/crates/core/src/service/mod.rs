//! Interactive simulation sessions.
//!
//! A [`Session`] owns a simulation and applies [`Command`]s between steps;
//! subscribers receive a frame after every step through bounded channels, so
//! a slow reader loses frames but never sees them out of order. Sessions can
//! log accepted commands and be rebuilt with [`replay`]. [`server`] exposes a
//! session over TCP with the line protocol in [`protocol`].

pub mod command;
pub mod log;
pub mod protocol;
pub mod server;
pub mod session;

pub use command::Command;
pub use log::replay;
pub use server::{serve, spawn, ServerHandle};
pub use session::{Ack, FrameMessage, Payload, RunMode, Session, SubscriberId, Subscription};

/// Port used when neither a flag nor `SMOKEFORGE_PORT` names one.
pub const DEFAULT_PORT: u16 = 7878;

/// `SMOKEFORGE_PORT` if set to a valid port, else [`DEFAULT_PORT`].
pub fn default_port() -> u16 {
    std::env::var("SMOKEFORGE_PORT")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use serde_json::{json, Value};

    use super::*;
    use crate::asset::{AssetFrame, PhysicalParticle, SmokeAsset, VisualParticle};
    use crate::grid::Vec3;
    use crate::solver::{init_from_asset, SimConfig, SphereObstacle, WindForce};

    pub(crate) fn plume() -> SmokeAsset {
        let frame = |shift: f32| AssetFrame {
            visual: (0..6)
                .map(|i| VisualParticle::isotropic([0.1 * i as f32 + shift, 0.05 * i as f32, 0.0], 0.15, 0.6))
                .collect(),
            physical: (0..4)
                .map(|i| PhysicalParticle {
                    position: [0.1 * i as f32, 0.1, 0.0],
                    velocity: [0.05, 0.1, 0.0],
                })
                .collect(),
        };
        SmokeAsset::new(vec![frame(0.0), frame(0.1)], 30.0).unwrap()
    }

    fn config() -> SimConfig {
        SimConfig {
            resolution: [12, 12, 12],
            ..SimConfig::default()
        }
    }

    fn session() -> Session {
        Session::new(Arc::new(plume()), 1, config()).unwrap()
    }

    #[test]
    fn wind_then_step_matches_solver() {
        let mut s = session();
        let wind = WindForce::global(Vec3::new(0.005, 0.0, 0.0));
        let ack = s.apply(Command::SetWind(vec![wind])).unwrap();
        assert_eq!((ack.seq, ack.effective_step), (1, 1));
        s.apply(Command::Step(1)).unwrap();
        let mut direct = init_from_asset(&plume(), 1, &config()).unwrap();
        direct.step(&SimConfig {
            wind: vec![wind],
            ..config()
        });
        assert_eq!(s.state(), &direct);
    }

    #[test]
    fn pause_then_step_runs_once() {
        let mut s = session();
        s.apply(Command::Resume).unwrap();
        assert!(matches!(s.mode(), RunMode::Running { .. }));
        s.apply(Command::Pause).unwrap();
        let ack = s.apply(Command::Step(1)).unwrap();
        assert_eq!(ack.steps_run, 1);
        assert_eq!(s.state().step_index, 1);
        assert_eq!(s.mode(), RunMode::Paused);
        assert!(s.tick().is_none());
        assert_eq!(s.state().step_index, 1);
        s.set_rate(120.0).unwrap();
        s.apply(Command::Resume).unwrap();
        assert_eq!(s.mode(), RunMode::Running { rate_hz: 120.0 });
        assert!(s.set_rate(0.0).is_err());
    }

    #[test]
    fn reset_reinitializes() {
        let mut s = session();
        s.apply(Command::Step(3)).unwrap();
        s.apply(Command::Reset(2)).unwrap();
        assert_eq!(s.state(), &init_from_asset(&plume(), 2, &config()).unwrap());
        assert!(s.apply(Command::Reset(3)).is_err());
        let mut bare = Session::from_state(s.state().clone(), config()).unwrap();
        assert!(bare.apply(Command::Reset(1)).is_err());
    }

    #[test]
    fn obstacle_registry() {
        let mut s = session();
        let o = SphereObstacle::new(Vec3::new(0.2, 0.1, 0.0), 0.1).unwrap();
        let a = s.apply(Command::AddObstacle(o)).unwrap().obstacle_id.unwrap();
        let b = s.apply(Command::AddObstacle(o)).unwrap().obstacle_id.unwrap();
        assert_ne!(a, b);
        assert_eq!(s.config().obstacles.len(), 2);
        s.apply(Command::RemoveObstacle(a)).unwrap();
        assert_eq!(s.config().obstacles, vec![o]);
        let seq = s.seq();
        assert!(s.apply(Command::RemoveObstacle(a)).is_err());
        assert_eq!(s.seq(), seq);
    }

    #[test]
    fn stream_is_ordered_and_broadcast() {
        let mut s = session();
        let (_, rx1) = s.subscribe(Subscription::default()).unwrap();
        let (_, rx2) = s.subscribe(Subscription::default()).unwrap();
        s.apply(Command::Step(3)).unwrap();
        let a: Vec<_> = rx1.try_iter().collect();
        let b: Vec<_> = rx2.try_iter().collect();
        assert_eq!(a.iter().map(|m| m.step_index).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(a, b);
        for m in &a {
            assert!(m.max_divergence <= config().projection_tol);
            assert_eq!(m.pixels.len(), 144);
        }
    }

    #[test]
    fn slow_subscriber_drops_without_reordering() {
        let mut s = session();
        let (id, rx) = s
            .subscribe(Subscription {
                capacity: 2,
                ..Subscription::default()
            })
            .unwrap();
        s.apply(Command::Step(5)).unwrap();
        let got: Vec<u64> = rx.try_iter().map(|m| m.step_index).collect();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(s.dropped(id), Some(3));
        s.apply(Command::Step(1)).unwrap();
        assert_eq!(rx.try_iter().map(|m| m.step_index).collect::<Vec<_>>(), vec![6]);
        drop(rx);
        s.apply(Command::Step(1)).unwrap();
        assert_eq!(s.dropped(id), None);
    }

    #[test]
    fn render_payload() {
        let mut s = session();
        let settings = crate::render::RenderSettings::default();
        let (_, rx) = s
            .subscribe(Subscription {
                payload: Payload::Render(settings),
                capacity: 4,
            })
            .unwrap();
        s.apply(Command::Step(1)).unwrap();
        let m = rx.try_recv().unwrap();
        assert_eq!((m.width, m.height), (12, 12));
        assert!(m.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        let snap = s.apply(Command::Snapshot).unwrap().snapshot.unwrap();
        assert_eq!(snap.step_index, 1);
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn log_replays_to_identical_state() {
        let dir = tempfile::tempdir().unwrap();
        let asset = dir.path().join("plume.wsa");
        crate::asset::save_asset(&plume(), &asset).unwrap();
        let log = dir.path().join("session.jsonl");
        let mut s = Session::open(&asset, 1, config()).unwrap();
        s.record_to(&log).unwrap();
        s.apply(Command::SetWind(vec![WindForce::sphere(
            Vec3::new(0.01, 0.0, 0.0),
            Vec3::new(0.2, 0.1, 0.0),
            0.3,
        )]))
        .unwrap();
        s.apply(Command::Step(2)).unwrap();
        s.apply(Command::AddObstacle(
            SphereObstacle::new(Vec3::new(0.3, 0.2, 0.0), 0.08).unwrap(),
        ))
        .unwrap();
        s.apply(Command::Resume).unwrap();
        s.tick();
        s.tick();
        s.apply(Command::SetBuoyancy(0.3)).unwrap();
        s.apply(Command::Step(1)).unwrap();
        s.apply(Command::Reset(2)).unwrap();
        s.apply(Command::Step(2)).unwrap();
        s.tick();
        s.close().unwrap();
        let r = replay(&log).unwrap();
        assert_eq!(r.state(), s.state());
        assert_eq!(r.config(), s.config());
        assert_eq!(r.obstacles(), s.obstacles());
        assert_eq!(r.seq(), s.seq());
    }

    #[test]
    fn port_from_environment() {
        assert!(default_port() > 0);
    }

    fn arb_json() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            any::<f64>().prop_map(|f| json!(f)),
            "[a-z_]{0,8}".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
                prop::collection::btree_map("[a-z_]{1,8}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        /// Malformed commands are rejected and leave the session untouched.
        #[test]
        fn fuzzed_commands_never_corrupt(
            name in prop_oneof![
                Just("set_wind".to_string()), Just("add_obstacle".to_string()),
                Just("remove_obstacle".to_string()), Just("set_buoyancy".to_string()),
                Just("reset".to_string()), "[a-z_]{0,12}"
            ],
            params in arb_json(),
        ) {
            let mut s = session();
            let before = (s.state().clone(), s.config().clone(), s.obstacles().clone(), s.seq());
            let spec = *s.spec();
            let applied = Command::parse(&name, &params, &spec).and_then(|c| s.apply(c));
            if applied.is_err() {
                let after = (s.state().clone(), s.config().clone(), s.obstacles().clone(), s.seq());
                prop_assert_eq!(before, after);
            }
            prop_assert!(s.state().density.values().iter().all(|v| v.is_finite()));
            let line = serde_json::to_string(&json!({"seq": 1, "cmd": name, "params": params})).unwrap();
            let _ = protocol::parse_request(&line);
        }

        #[test]
        fn garbage_lines_are_rejected(line in ".{0,200}") {
            if let Ok(r) = protocol::parse_request(&line) {
                let mut s = session();
                let spec = *s.spec();
                if let Ok(c) = Command::parse(&r.cmd, &r.params, &spec) {
                    if !matches!(c, Command::Step(_)) {
                        let _ = s.apply(c);
                    }
                }
            }
        }
    }
}

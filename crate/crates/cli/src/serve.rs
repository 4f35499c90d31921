use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;
use smokeforge::service::{default_port, replay as replay_log, spawn};
use smokeforge::solver::Scenario;
use smokeforge::splat::restrict_bbox;
use smokeforge::{load_asset, GridDump, GridSpec, Session};

use crate::sim::GridOpts;

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    asset: PathBuf,
    #[arg(long, default_value_t = 1)]
    frame: usize,
    /// Defaults to `SMOKEFORGE_PORT`, then 7878. Use 0 for any free port.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Initial forces, as for `simulate`.
    #[arg(long, default_value = "none")]
    scenario: Scenario,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    buoyancy: Option<f64>,
    /// Record accepted commands to this JSONL file for `replay`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    grid: GridOpts,
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut config = a.grid.sim_config()?;
    if let Some(dt) = a.dt {
        config.dt = dt;
    }
    if let Some(b) = a.buoyancy {
        config.buoyancy_coeff = b;
    }
    if a.scenario != Scenario::None {
        // Presets are placed on the grid the session is about to build.
        let asset = load_asset(&a.asset)?;
        let bbox = restrict_bbox(&asset.frame(a.frame)?.visual, config.padding_sigmas)?;
        let spec = GridSpec::new(config.resolution, bbox)?;
        a.scenario.configure(&mut config, &spec);
    }
    let mut session = Session::open(&a.asset, a.frame, config)?;
    if let Some(log) = &a.log {
        session.record_to(log)?;
    }
    let port = a.port.unwrap_or_else(default_port);
    let listener = TcpListener::bind((a.host.as_str(), port)).with_context(|| format!("binding {}:{port}", a.host))?;
    let server = spawn(listener, session)?;
    // Clients (and tests) read the bound address from this line.
    println!("{}", json!({ "listening": server.local_addr().to_string() }));
    let session = server.join()?;
    log::info!("stopped at step {}", session.state().step_index);
    Ok(())
}

pub fn replay(log: &Path, out: Option<&Path>) -> Result<()> {
    let session = replay_log(log).with_context(|| format!("replaying {}", log.display()))?;
    let state = session.state();
    if let Some(out) = out {
        GridDump {
            density: Some(state.density.clone()),
            velocity: Some(state.velocity.clone()),
        }
        .save(out)?;
    }
    println!(
        "{}",
        json!({
            "step_index": state.step_index,
            "clock": state.clock,
            "session_seq": session.seq(),
            "total_mass": state.density.total_mass(),
            "obstacles": session.obstacles().len(),
        })
    );
    Ok(())
}

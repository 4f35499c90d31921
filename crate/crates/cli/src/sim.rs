use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use smokeforge::camera::{load_poses, to_splat};
use smokeforge::render::{render_density, render_z_projection};
use smokeforge::solver::Scenario;
use smokeforge::{init_from_asset, load_asset, Convention, GridDump, Intrinsics, RenderSettings, SimConfig, SimState};

use crate::parse;

/// Grid and solver options shared by `splat`, `simulate`, `render` and `serve`.
#[derive(Args, Clone)]
pub struct GridOpts {
    /// Grid resolution, `n` or `nx,ny,nz`.
    #[arg(long, value_parser = parse::res, default_value = "128")]
    pub res: [usize; 3],
    /// Bounding-box padding in particle scales.
    #[arg(long)]
    pub padding: Option<f64>,
    /// Start from a JSON `SimConfig`; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl GridOpts {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut c = match &self.config {
            Some(p) => {
                serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
            }
            None => SimConfig::default(),
        };
        c.resolution = self.res;
        if let Some(p) = self.padding {
            c.padding_sigmas = p;
        }
        Ok(c)
    }
}

#[derive(Args)]
pub struct SplatArgs {
    #[arg(long)]
    asset: PathBuf,
    /// Asset frame, 1-based.
    #[arg(long, default_value_t = 1)]
    frame: usize,
    #[command(flatten)]
    grid: GridOpts,
    #[arg(long)]
    out: PathBuf,
}

pub fn splat(a: SplatArgs) -> Result<()> {
    let asset = load_asset(&a.asset)?;
    let state = init_from_asset(&asset, a.frame, &a.grid.sim_config()?)?;
    dump(&state, &a.out)?;
    println!("{}", summary(&state));
    Ok(())
}

fn dump(state: &SimState, path: &std::path::Path) -> Result<()> {
    GridDump {
        density: Some(state.density.clone()),
        velocity: Some(state.velocity.clone()),
    }
    .save(path)
    .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn summary(state: &SimState) -> serde_json::Value {
    let spec = state.spec();
    json!({
        "res": spec.res(),
        "bbox_min": spec.bbox().min,
        "bbox_max": spec.bbox().max,
        "total_mass": state.density.total_mass(),
        "max_density": state.density.max_value(),
    })
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    asset: PathBuf,
    #[arg(long, default_value_t = 1)]
    frame: usize,
    #[arg(long, default_value_t = 100)]
    steps: u64,
    /// Preset forces: none, wind-global, wind-local or obstacle (grid-index units).
    #[arg(long, default_value = "none")]
    scenario: Scenario,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    buoyancy: Option<f64>,
    /// Write a grid dump every `every` steps (the last step is always written).
    #[arg(long, default_value_t = 1)]
    every: u64,
    #[command(flatten)]
    grid: GridOpts,
    /// Output directory for `step_NNNNN.wsg` dumps and `report.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    if a.every == 0 {
        bail!("--every must be positive");
    }
    let asset = load_asset(&a.asset)?;
    let mut config = a.grid.sim_config()?;
    if let Some(dt) = a.dt {
        config.dt = dt;
    }
    if let Some(b) = a.buoyancy {
        config.buoyancy_coeff = b;
    }
    let mut state = init_from_asset(&asset, a.frame, &config)?;
    if a.scenario != Scenario::None {
        a.scenario.configure(&mut config, &state.spec().clone());
    }
    config.validate()?;
    fs::create_dir_all(&a.out)?;
    let mut report = BufWriter::new(File::create(a.out.join("report.jsonl"))?);
    dump(&state, &a.out.join("step_00000.wsg"))?;
    for n in 1..=a.steps {
        let r = state.step(&config);
        writeln!(report, "{}", serde_json::to_string(&r)?)?;
        if !r.projection.converged {
            log::warn!(
                "step {n}: projection stopped at residual {:e}",
                r.projection.max_divergence
            );
        }
        if n % a.every == 0 || n == a.steps {
            dump(&state, &a.out.join(format!("step_{n:05}.wsg")))?;
        }
    }
    report.flush()?;
    println!("{}", summary(&state));
    Ok(())
}

#[derive(Args)]
pub struct RenderArgs {
    /// A grid dump with a density field.
    #[arg(long, conflicts_with = "asset", required_unless_present = "asset")]
    grid: Option<PathBuf>,
    /// Splat this asset first.
    #[arg(long)]
    asset: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    frame: usize,
    #[command(flatten)]
    grid_opts: GridOpts,
    /// Pose file; source-convention poses are converted. Without it the
    /// view is an orthographic projection down -Z.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Which pose of the file to use.
    #[arg(long, default_value_t = 0)]
    pose_index: usize,
    /// Horizontal field of view, degrees.
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 0.5)]
    absorption: f64,
    #[arg(long, default_value_t = 1.0)]
    emission: f64,
    #[arg(long, default_value_t = 0.0)]
    background: f64,
    /// Also write the coverage image here.
    #[arg(long)]
    alpha: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn render(a: RenderArgs) -> Result<()> {
    let density = match (&a.grid, &a.asset) {
        (Some(g), _) => GridDump::load(g)?
            .density
            .with_context(|| format!("{} has no density field", g.display()))?,
        (None, Some(p)) => init_from_asset(&load_asset(p)?, a.frame, &a.grid_opts.sim_config()?)?.density,
        (None, None) => unreachable!("clap requires --grid or --asset"),
    };
    let settings = RenderSettings {
        width: a.width,
        height: a.height,
        samples: a.samples,
        absorption: a.absorption,
        emission: a.emission,
        background: a.background,
    };
    let out = match &a.pose {
        Some(p) => {
            let poses = load_poses(p)?;
            let pose = poses
                .get(a.pose_index)
                .with_context(|| format!("{} has {} poses", p.display(), poses.len()))?;
            let pose = match pose.convention() {
                Convention::Source => to_splat(pose)?,
                Convention::Splat => *pose,
            };
            render_density(
                &density,
                &pose,
                &Intrinsics::from_fov(a.fov, a.width, a.height)?,
                &settings,
            )?
        }
        None => render_z_projection(&density, &settings)?,
    };
    out.image.save(&a.out)?;
    if let Some(p) = &a.alpha {
        out.alpha.save(p)?;
    }
    Ok(())
}

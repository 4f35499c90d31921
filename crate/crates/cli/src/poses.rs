use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Subcommand;
use serde_json::json;
use smokeforge::camera::{
    convert_convention, load_poses, offset_pose_about_pivot, pose_set_with_yaws, relative_rotation_angle, save_poses,
    synthetic_trajectory, MULTIVIEW_YAWS_DEG,
};
use smokeforge::{Convention, TrajectorySpec, Vec3};

use crate::parse;

#[derive(Subcommand)]
pub enum PoseCmd {
    /// Flip poses between source-style and splat-style axes.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        /// Target convention; poses already in it are left alone. Without
        /// it every pose is flipped.
        #[arg(long, value_parser = convention)]
        to: Option<Convention>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative rotation angle, degrees, between matching poses of two files.
    Angle { a: PathBuf, b: PathBuf },
    /// Rotate poses about a pivot (yaw about world Y, then pitch about X).
    Offset {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse::vec3, default_value = "0,0,0")]
        pivot: Vec3,
        /// Degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw: f64,
        /// Degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch: f64,
        /// Emit the standard side views of the first pose instead.
        #[arg(long, conflicts_with_all = ["yaw", "pitch"])]
        multiview: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Orbit poses for frames `0..=frames`, splat style.
    Trajectory {
        #[arg(long, default_value_t = TrajectorySpec::default().frames)]
        frames: u32,
        #[arg(long, default_value_t = TrajectorySpec::default().radius)]
        radius: f64,
        #[arg(long, default_value_t = TrajectorySpec::default().pitch_deg, allow_negative_numbers = true)]
        pitch: f64,
        #[arg(long, default_value_t = TrajectorySpec::default().azimuth_start_deg, allow_negative_numbers = true)]
        azimuth_start: f64,
        #[arg(long, default_value_t = TrajectorySpec::default().azimuth_end_deg, allow_negative_numbers = true)]
        azimuth_end: f64,
        #[arg(long, value_parser = parse::vec3, default_value = "0,0,0", allow_hyphen_values = true)]
        target: Vec3,
        #[arg(long)]
        out: PathBuf,
    },
}

fn convention(s: &str) -> Result<Convention> {
    match s {
        "source" => Ok(Convention::Source),
        "splat" => Ok(Convention::Splat),
        _ => bail!("convention must be `source` or `splat`"),
    }
}

pub fn run(cmd: PoseCmd) -> Result<()> {
    match cmd {
        PoseCmd::Convert { input, to, out } => {
            let poses: Vec<_> = load_poses(&input)?
                .iter()
                .map(|p| match to {
                    Some(c) if p.convention() == c => *p,
                    _ => convert_convention(p),
                })
                .collect();
            save_poses(&out, &poses)?;
        }
        PoseCmd::Angle { a, b } => {
            let (pa, pb) = (load_poses(&a)?, load_poses(&b)?);
            if pa.len() != pb.len() {
                bail!(
                    "{} has {} poses but {} has {}",
                    a.display(),
                    pa.len(),
                    b.display(),
                    pb.len()
                );
            }
            let degrees = pa
                .iter()
                .zip(&pb)
                .map(|(x, y)| Ok(relative_rotation_angle(x, y)?.to_degrees()))
                .collect::<Result<Vec<f64>>>()?;
            let mean = degrees.iter().sum::<f64>() / degrees.len().max(1) as f64;
            println!("{}", json!({ "degrees": degrees, "mean": mean }));
        }
        PoseCmd::Offset {
            input,
            pivot,
            yaw,
            pitch,
            multiview,
            out,
        } => {
            let poses = load_poses(&input)?;
            let result = if multiview {
                let Some(base) = poses.first() else {
                    bail!("{} has no poses", input.display())
                };
                pose_set_with_yaws(base, &pivot, &MULTIVIEW_YAWS_DEG)
            } else {
                poses
                    .iter()
                    .map(|p| offset_pose_about_pivot(p, yaw.to_radians(), pitch.to_radians(), &pivot))
                    .collect()
            };
            save_poses(&out, &result)?;
        }
        PoseCmd::Trajectory {
            frames,
            radius,
            pitch,
            azimuth_start,
            azimuth_end,
            target,
            out,
        } => {
            let spec = TrajectorySpec {
                pitch_deg: pitch,
                azimuth_start_deg: azimuth_start,
                azimuth_end_deg: azimuth_end,
                frames,
                radius,
                target,
            };
            let poses = (0..=frames)
                .map(|t| synthetic_trajectory(&spec, t))
                .collect::<Result<Vec<_>, _>>()?;
            save_poses(&out, &poses)?;
        }
    }
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use serde_json::json;
use smokeforge::asset::{apply_axis_flip, downsample_to_count, voxel_downsample};
use smokeforge::{load_asset, Vec3};

use crate::parse;

#[derive(Subcommand)]
pub enum AssetCmd {
    /// Check a WSA file and print a JSON summary.
    Validate { path: PathBuf },
    /// Merge a point cloud on a voxel grid.
    ///
    /// Points are read from `.json` (a list of `[x, y, z]`) or from text with
    /// one `x y z` triple per line; the output uses the extension of `out`.
    Downsample {
        /// Voxel edge length.
        #[arg(long, required_unless_present = "count", conflicts_with = "count")]
        cell: Option<f64>,
        /// Search for a cell size that keeps `min,max` points instead.
        #[arg(long, value_parser = parse::count_range)]
        count: Option<(usize, usize)>,
        /// Negate y and z before merging.
        #[arg(long)]
        flip: bool,
        input: PathBuf,
        out: PathBuf,
    },
}

pub fn run(cmd: AssetCmd) -> Result<()> {
    match cmd {
        AssetCmd::Validate { path } => {
            let asset = load_asset(&path).with_context(|| format!("invalid asset {}", path.display()))?;
            let visual: Vec<usize> = asset.frames().iter().map(|f| f.visual.len()).collect();
            let physical: Vec<usize> = asset.frames().iter().map(|f| f.physical.len()).collect();
            println!(
                "{}",
                json!({
                    "valid": true,
                    "frames": asset.frame_count(),
                    "fps": asset.fps(),
                    "visual": visual,
                    "physical": physical,
                })
            );
        }
        AssetCmd::Downsample {
            cell,
            count,
            flip,
            input,
            out,
        } => {
            let mut points = read_points(&input)?;
            if flip {
                points = apply_axis_flip(&points);
            }
            let (cell, merged) = match (cell, count) {
                (Some(c), _) => (c, voxel_downsample(&points, c)?),
                (None, Some((lo, hi))) => downsample_to_count(&points, lo, hi)?,
                (None, None) => unreachable!("clap requires --cell or --count"),
            };
            write_points(&out, &merged)?;
            println!(
                "{}",
                json!({ "input": points.len(), "output": merged.len(), "cell": cell })
            );
        }
    }
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if is_json(path) {
        let raw: Vec<[f64; 3]> = serde_json::from_str(&text)?;
        return Ok(raw.into_iter().map(Vec3::from).collect());
    }
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), n + 1))?;
        if v.len() < 3 {
            bail!("{}:{}: expected x y z", path.display(), n + 1);
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(points)
}

pub fn write_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let text = if is_json(path) {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        serde_json::to_string(&raw)?
    } else {
        points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect()
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use serde_json::json;
use smokeforge::metrics::{psnr_sequence, ssim_sequence, SequenceScore};
use smokeforge::Frame;

#[derive(Subcommand)]
pub enum MetricsCmd {
    /// PSNR in dB; identical frames count as infinite and are reported separately.
    Psnr { a: PathBuf, b: PathBuf },
    /// Mean SSIM over 11×11 Gaussian windows.
    Ssim { a: PathBuf, b: PathBuf },
}

/// A single image, or every image in a directory in name order.
fn frames(path: &Path) -> Result<Vec<Frame>> {
    if !path.is_dir() {
        return Ok(vec![
            Frame::load(path).with_context(|| format!("loading {}", path.display()))?
        ]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    if files.is_empty() {
        bail!("{} contains no frames", path.display());
    }
    files
        .iter()
        .map(|p| Frame::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn run(cmd: MetricsCmd) -> Result<()> {
    let score: SequenceScore = match cmd {
        MetricsCmd::Psnr { a, b } => psnr_sequence(&frames(&a)?, &frames(&b)?)?,
        MetricsCmd::Ssim { a, b } => ssim_sequence(&frames(&a)?, &frames(&b)?)?,
    };
    println!(
        "{}",
        json!({ "value": score.value, "infinite_frames": score.infinite_frames, "frames": score.frames })
    );
    Ok(())
}

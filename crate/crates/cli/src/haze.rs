use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Subcommand;
use serde_json::{json, Value};
use smokeforge::haze::{
    composite_haze, dark_channel, estimate_atmospheric_light, extract_clean_smoke, extract_coarse, smooth_mask,
    DEFAULT_DENOM_FLOOR, DEFAULT_MASK_SIGMA, DEFAULT_PATCH, DEFAULT_TOP_FRACTION,
};
use smokeforge::{Frame, MaskFrame};

#[derive(Subcommand)]
pub enum HazeCmd {
    /// `bg · (1 − S) + A · S` for a clean background and a smoke layer.
    Composite {
        /// Clean background.
        #[arg(long = "in")]
        input: PathBuf,
        /// Smoke coverage `S` (1 or 3 channels).
        #[arg(long)]
        smoke: PathBuf,
        /// Atmospheric light, one value or one per channel.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        a: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert the haze model to recover the smoke layer.
    Extract {
        /// Hazy frame containing smoke.
        #[arg(long = "in")]
        input: PathBuf,
        /// Recovered clean background.
        #[arg(long)]
        bg: PathBuf,
        /// Atmospheric light; estimated from the input when omitted.
        #[arg(long, value_delimiter = ',')]
        a: Option<Vec<f64>>,
        /// Image used where `|bg − A|` falls under the floor (default: zero).
        #[arg(long, conflicts_with = "mask")]
        fallback: Option<PathBuf>,
        /// Binary smoke mask; its smoothed coarse extraction is the fallback.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MASK_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_DENOM_FLOOR)]
        floor: f64,
        #[arg(long, default_value_t = DEFAULT_PATCH)]
        patch: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write a JSON report (floor counts, A) to a file, or `-` for stdout.
        #[arg(long, num_args = 0..=1, default_missing_value = "-")]
        report: Option<PathBuf>,
    },
    /// Dark channel image and atmospheric light estimate.
    Darkchannel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PATCH)]
        patch: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
        top_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 0..=1, default_missing_value = "-")]
        report: Option<PathBuf>,
    },
    /// Gaussian-smooth a binary mask.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MASK_SIGMA)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(report: Option<&Path>, v: Value) -> Result<()> {
    match report {
        None => {}
        Some(p) if p == Path::new("-") => println!("{v}"),
        Some(p) => fs::write(p, serde_json::to_string_pretty(&v)?)?,
    }
    Ok(())
}

pub fn run(cmd: HazeCmd) -> Result<()> {
    match cmd {
        HazeCmd::Composite { input, smoke, a, out } => {
            let bg = Frame::load(&input)?;
            let s = Frame::load(&smoke)?;
            composite_haze(&bg, &s, &a)?.save(&out)?;
        }
        HazeCmd::Extract {
            input,
            bg,
            a,
            fallback,
            mask,
            sigma,
            floor,
            patch,
            out,
            report,
        } => {
            let frame = Frame::load(&input)?;
            let recovered = Frame::load(&bg)?;
            let a = match a {
                Some(a) => a,
                None => estimate_atmospheric_light(&frame, patch, DEFAULT_TOP_FRACTION)?,
            };
            let fallback = match (fallback, mask) {
                (Some(p), _) => Frame::load(&p)?,
                (None, Some(m)) => extract_coarse(&smooth_mask(&MaskFrame::load(&m)?, sigma)?, &frame)?,
                (None, None) => Frame::filled(frame.width(), frame.height(), 1, 0.0)?,
            };
            let (smoke, floors) = extract_clean_smoke(&frame, &recovered, &a, &fallback, floor)?;
            smoke.save(&out)?;
            if floors.floor_fraction() > 0.01 {
                log::warn!(
                    "{:.2}% of pixels hit the denominator floor",
                    100.0 * floors.floor_fraction()
                );
            }
            emit(
                report.as_deref(),
                json!({
                    "atmospheric_light": a,
                    "floor": floor,
                    "floor_pixels": floors.floor_pixels,
                    "floor_samples": floors.floor_samples,
                    "total_pixels": floors.total_pixels,
                    "floor_fraction": floors.floor_fraction(),
                }),
            )?;
        }
        HazeCmd::Darkchannel {
            input,
            patch,
            top_fraction,
            out,
            report,
        } => {
            let frame = Frame::load(&input)?;
            let dark = dark_channel(&frame, patch)?;
            Frame::new(frame.width(), frame.height(), 1, dark)?.save(&out)?;
            let a = estimate_atmospheric_light(&frame, patch, top_fraction)?;
            emit(report.as_deref(), json!({ "atmospheric_light": a, "patch": patch }))?;
        }
        HazeCmd::Smooth { input, sigma, out } => {
            let mask = MaskFrame::load(&input)?;
            if !(sigma >= 0.0) {
                bail!("--sigma must be non-negative");
            }
            smooth_mask(&mask, sigma)?.to_frame().save(&out)?;
        }
    }
    Ok(())
}

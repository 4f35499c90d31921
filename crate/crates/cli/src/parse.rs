//! Argument parsers shared by the subcommands.

use anyhow::{bail, Context, Result};
use smokeforge::Vec3;

/// Comma-separated floats, e.g. `0.005,0,0`.
fn floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("`{p}` is not a number"))
        })
        .collect()
}

pub fn vec3(s: &str) -> Result<Vec3> {
    match floats(s)?.as_slice() {
        &[x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => bail!("expected three comma-separated numbers, got `{s}`"),
    }
}

/// `n` or `nx,ny,nz`.
pub fn res(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("`{p}` is not a grid size"))
        })
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        &[n] => Ok([n; 3]),
        &[x, y, z] => Ok([x, y, z]),
        _ => bail!("resolution must be `n` or `nx,ny,nz`, got `{s}`"),
    }
}

/// `min,max` as two counts.
pub fn count_range(s: &str) -> Result<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Ok((a.trim().parse()?, b.trim().parse()?)),
        None => bail!("expected `min,max`, got `{s}`"),
    }
}

//! Grayscale emission–absorption rendering of density grids.
//!
//! Every sample has the same emission `e`, so a ray that ends with
//! transmittance `T` carries `e · (1 − T)` and the background shows through
//! with weight `T`. Optical depth is measured per cell length, which keeps the
//! look of a render independent of the world scale of the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, Convention, Intrinsics};
use crate::error::{invalid, Error, Result};
use crate::frame::Frame;
use crate::grid::{Aabb, ScalarGrid, Vec3};
use crate::haze::composite_premultiplied;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    /// Optical depth of one cell length at density 1.
    pub absorption: f64,
    pub emission: f64,
    pub background: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            samples: 256,
            absorption: 0.5,
            emission: 1.0,
            background: 0.0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be positive"));
        }
        if self.samples < 2 {
            return Err(invalid("at least 2 samples per ray are required"));
        }
        if !(self.absorption > 0.0 && self.absorption.is_finite()) {
            return Err(invalid("absorption must be positive"));
        }
        if !(self.emission >= 0.0 && self.emission.is_finite()) {
            return Err(invalid("emission must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(invalid("background must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Final image over the uniform background.
    pub image: Frame,
    /// `1 − T` per pixel.
    pub alpha: Frame,
    /// `e · (1 − T)`: the render before any background is added.
    pub emission: Frame,
}

/// Entry and exit distances of a ray through a box, if it hits.
fn ray_box(origin: &Vec3, dir: &Vec3, bbox: &Aabb) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < bbox.min[a] || origin[a] > bbox.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((bbox.min[a] - origin[a]) * inv, (bbox.max[a] - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t1 > t0).then_some((t0, t1))
}

fn mean_cell(grid: &ScalarGrid) -> f64 {
    let h = grid.spec().cell_size();
    (h.x + h.y + h.z) / 3.0
}

/// Transmittance along one ray, midpoint rule with `samples` equal steps
/// between box entry and exit.
fn transmittance(grid: &ScalarGrid, origin: &Vec3, dir: &Vec3, settings: &RenderSettings, h: f64) -> f64 {
    let Some((t0, t1)) = ray_box(origin, dir, grid.spec().bbox()) else {
        return 1.0;
    };
    let step = (t1 - t0) / settings.samples as f64;
    let k = settings.absorption * step / h;
    let mut depth = 0.0;
    for s in 0..settings.samples {
        let p = origin + dir * (t0 + (s as f64 + 0.5) * step);
        depth += grid.sample_world(&p).max(0.0);
    }
    (-k * depth).exp()
}

fn assemble(width: usize, height: usize, trans: Vec<f64>, settings: &RenderSettings) -> Result<RenderOutput> {
    let alpha = Frame::new(width, height, 1, trans.iter().map(|t| 1.0 - t).collect())?;
    let emission = Frame::new(
        width,
        height,
        1,
        trans.iter().map(|t| settings.emission * (1.0 - t)).collect(),
    )?;
    let bg = Frame::filled(width, height, 1, settings.background)?;
    let image = composite_onto_background(&emission, &alpha, &bg)?;
    Ok(RenderOutput { image, alpha, emission })
}

/// Perspective render through a splat-style pinhole camera. The image size
/// comes from `intr`, which must agree with `settings`.
pub fn render_density(
    grid: &ScalarGrid,
    pose: &CameraPose,
    intr: &Intrinsics,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    settings.validate()?;
    intr.validate()?;
    if pose.convention() != Convention::Splat {
        return Err(Error::Convention {
            expected: "splat",
            found: "source",
        });
    }
    if intr.width != settings.width || intr.height != settings.height {
        return Err(Error::DimensionMismatch(format!(
            "intrinsics are {}x{} but settings ask for {}x{}",
            intr.width, intr.height, settings.width, settings.height
        )));
    }
    let (w, h) = (settings.width, settings.height);
    let cell = mean_cell(grid);
    let origin = pose.position();
    let trans: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let origin = origin;
            (0..w).map(move |x| {
                let dir = pose.rotation() * intr.ray(x, y);
                transmittance(grid, &origin, &dir, settings, cell)
            })
        })
        .collect();
    assemble(w, h, trans, settings)
}

/// Orthographic view down `−Z`: one pixel per `(x, y)` cell column, `+Y` up.
/// `settings.samples` and the image size are ignored.
pub fn render_z_projection(grid: &ScalarGrid, settings: &RenderSettings) -> Result<RenderOutput> {
    settings.validate()?;
    let [nx, ny, nz] = grid.spec().res();
    let k = settings.absorption;
    let trans: Vec<f64> = (0..ny)
        .into_par_iter()
        .flat_map_iter(|row| {
            let j = ny - 1 - row;
            (0..nx).map(move |i| {
                let depth: f64 = (0..nz).map(|kz| grid.get(i, j, kz).max(0.0)).sum();
                (-k * depth).exp()
            })
        })
        .collect();
    assemble(nx, ny, trans, settings)
}

/// `background · (1 − α) + render`, with `render` premultiplied by its
/// coverage. This is the haze model with `A · S̃` given directly.
pub fn composite_onto_background(render: &Frame, alpha: &Frame, background: &Frame) -> Result<Frame> {
    composite_premultiplied(background, alpha, render)
}

/// Cells `(·, ·, k)` as a `[0, 1]` image scaled by `1 / scale`, `+Y` up.
pub fn z_slice(grid: &ScalarGrid, k: usize, scale: f64) -> Result<Frame> {
    let [nx, ny, nz] = grid.spec().res();
    if k >= nz {
        return Err(Error::OutOfRange { index: k, len: nz });
    }
    if !(scale > 0.0) {
        return Err(invalid("slice scale must be positive"));
    }
    Frame::from_fn(nx, ny, 1, |i, row, _| grid.get(i, ny - 1 - row, k) / scale)
}

//! Smoke asset data model and the `WSA1` on-disk format.
//!
//! A file is one UTF-8 JSON header line `{"magic":"WSA1","frames":T,"fps":F}`
//! followed by `T` binary frame blocks. Each block holds `u32 n_vis`,
//! `u32 n_phy`, then `n_vis` visual records of 12 `f32`
//! (position, color, scale, opacity, rotation `w x y z`) and `n_phy`
//! physical records of 6 `f32` (position, velocity). Everything is
//! little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Vec3;

pub const ASSET_MAGIC: &str = "WSA1";
pub const DEFAULT_FPS: f64 = 30.0;

/// Allowed deviation of a stored rotation quaternion from unit length.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Appearance Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualParticle {
    pub position: [f32; 3],
    /// Grayscale color in `[0, 1]`.
    pub color: f32,
    pub scale: [f32; 3],
    pub opacity: f32,
    /// Unit quaternion, scalar first.
    pub rotation: [f32; 4],
}

impl VisualParticle {
    /// Isotropic, unrotated particle.
    pub fn isotropic(position: [f32; 3], scale: f32, opacity: f32) -> Self {
        Self {
            position,
            color: 1.0,
            scale: [scale; 3],
            opacity,
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn center(&self) -> Vec3 {
        to_vec3(self.position)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.iter().copied().fold(0.0_f32, f32::max) as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .position
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain([&self.color, &self.opacity]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("non-finite attribute".into());
        }
        let norm = self.rotation.iter().map(|&q| (q as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(format!("rotation quaternion has norm {norm}, expected 1"));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(format!("scale {:?} must be strictly positive", self.scale));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if !(0.0..=1.0).contains(&self.color) {
            return Err(format!("color {} outside [0, 1]", self.color));
        }
        Ok(())
    }

    fn to_record(self) -> [f32; 12] {
        let [px, py, pz] = self.position;
        let [sx, sy, sz] = self.scale;
        let [qw, qx, qy, qz] = self.rotation;
        [px, py, pz, self.color, sx, sy, sz, self.opacity, qw, qx, qy, qz]
    }

    fn from_record(r: &[f32]) -> Self {
        Self {
            position: [r[0], r[1], r[2]],
            color: r[3],
            scale: [r[4], r[5], r[6]],
            opacity: r[7],
            rotation: [r[8], r[9], r[10], r[11]],
        }
    }
}

/// Dynamics carrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalParticle {
    pub position: [f32; 3],
    pub velocity: [f32; 3],
}

impl PhysicalParticle {
    pub fn center(&self) -> Vec3 {
        to_vec3(self.position)
    }

    pub fn velocity(&self) -> Vec3 {
        to_vec3(self.velocity)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.position.iter().chain(&self.velocity).any(|v| !v.is_finite()) {
            return Err("non-finite attribute".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssetFrame {
    pub visual: Vec<VisualParticle>,
    pub physical: Vec<PhysicalParticle>,
}

/// Per-frame particle sets of a reconstructed smoke sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SmokeAsset {
    frames: Vec<AssetFrame>,
    fps: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    frames: usize,
    fps: f64,
}

impl SmokeAsset {
    pub fn new(frames: Vec<AssetFrame>, fps: f64) -> Result<Self> {
        let asset = Self { frames, fps };
        asset.validate()?;
        Ok(asset)
    }

    pub fn frames(&self) -> &[AssetFrame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Frame by 1-based index.
    pub fn frame(&self, index: usize) -> Result<&AssetFrame> {
        index
            .checked_sub(1)
            .and_then(|i| self.frames.get(i))
            .ok_or(Error::OutOfRange {
                index,
                len: self.frames.len(),
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(invalid("asset must contain at least one frame"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            for (i, p) in frame.visual.iter().enumerate() {
                p.validate().map_err(|reason| Error::InvalidParticle {
                    frame: t + 1,
                    kind: "visual",
                    particle: i,
                    reason,
                })?;
            }
            for (i, p) in frame.physical.iter().enumerate() {
                p.validate().map_err(|reason| Error::InvalidParticle {
                    frame: t + 1,
                    kind: "physical",
                    particle: i,
                    reason,
                })?;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        self.validate()?;
        let header = Header {
            magic: ASSET_MAGIC.into(),
            frames: self.frames.len(),
            fps: self.fps,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut buf = Vec::new();
        for frame in &self.frames {
            buf.clear();
            buf.extend_from_slice(&(frame.visual.len() as u32).to_le_bytes());
            buf.extend_from_slice(&(frame.physical.len() as u32).to_le_bytes());
            for p in &frame.visual {
                for v in p.to_record() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            for p in &frame.physical {
                for v in p.position.iter().chain(&p.velocity) {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Header("missing header line".into()));
        }
        let header: Header = serde_json::from_slice(&line).map_err(|e| Error::Header(format!("asset header: {e}")))?;
        if header.magic != ASSET_MAGIC {
            return Err(Error::Version {
                expected: ASSET_MAGIC,
                found: header.magic,
            });
        }
        let mut frames = Vec::with_capacity(header.frames.min(1 << 16));
        for t in 1..=header.frames {
            let truncated = |what: &str| Error::Truncated {
                frame: t,
                detail: what.to_string(),
            };
            let mut counts = [0u8; 8];
            r.read_exact(&mut counts)
                .map_err(|_| truncated("missing particle counts"))?;
            let n_vis = u32::from_le_bytes(counts[0..4].try_into().unwrap()) as usize;
            let n_phy = u32::from_le_bytes(counts[4..8].try_into().unwrap()) as usize;
            let vis = read_f32s(&mut r, n_vis * 12).map_err(|_| truncated("visual particle block too short"))?;
            let phy = read_f32s(&mut r, n_phy * 6).map_err(|_| truncated("physical particle block too short"))?;
            frames.push(AssetFrame {
                visual: vis.chunks_exact(12).map(VisualParticle::from_record).collect(),
                physical: phy
                    .chunks_exact(6)
                    .map(|c| PhysicalParticle {
                        position: [c[0], c[1], c[2]],
                        velocity: [c[3], c[4], c[5]],
                    })
                    .collect(),
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Header(format!(
                "trailing data after {} declared frames",
                header.frames
            )));
        }
        Self::new(frames, header.fps)
    }
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn to_vec3(a: [f32; 3]) -> Vec3 {
    Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64)
}

/// Reads and validates a `WSA1` asset.
pub fn load_asset(path: impl AsRef<Path>) -> Result<SmokeAsset> {
    SmokeAsset::read_from(File::open(path)?)
}

pub fn save_asset(asset: &SmokeAsset, path: impl AsRef<Path>) -> Result<()> {
    asset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    asset.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Merges points sharing a voxel of edge `cell` (anchored at the origin)
/// into their centroid. Output is ordered by voxel index `(ix, iy, iz)`.
pub fn voxel_downsample(points: &[Vec3], cell: f64) -> Result<Vec<Vec3>> {
    if !(cell.is_finite() && cell > 0.0) {
        return Err(invalid(format!("voxel size must be positive, got {cell}")));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let key = (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        );
        let e = voxels.entry(key).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(voxels.into_values().map(|(sum, n)| sum / n as f64).collect())
}

/// Bisects the voxel size (geometrically) until the downsampled count lands
/// in `[min_count, max_count]`. Returns the cell size and the points.
pub fn downsample_to_count(points: &[Vec3], min_count: usize, max_count: usize) -> Result<(f64, Vec<Vec3>)> {
    if min_count == 0 || min_count > max_count {
        return Err(invalid(format!("bad target range [{min_count}, {max_count}]")));
    }
    if points.len() < min_count {
        return Err(invalid(format!(
            "{} points cannot be downsampled to at least {min_count}",
            points.len()
        )));
    }
    let (lo_pt, hi_pt) = points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let diag = (hi_pt - lo_pt).norm().max(f64::MIN_POSITIVE);
    // Small cell keeps (almost) every point, huge cell merges into a few.
    let mut small = diag * 1e-9;
    let mut large = diag * 4.0;
    for _ in 0..200 {
        let mid = (small * large).sqrt();
        let out = voxel_downsample(points, mid)?;
        if (min_count..=max_count).contains(&out.len()) {
            return Ok((mid, out));
        }
        if out.len() > max_count {
            small = mid;
        } else {
            large = mid;
        }
    }
    Err(invalid(format!(
        "no voxel size yields between {min_count} and {max_count} points"
    )))
}

/// Maps `(x, y, z)` to `(x, -y, -z)`.
pub fn apply_axis_flip(points: &[Vec3]) -> Vec<Vec3> {
    points.iter().map(|p| Vec3::new(p.x, -p.y, -p.z)).collect()
}

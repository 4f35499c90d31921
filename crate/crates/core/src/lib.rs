//! Simulatable, renderable smoke from 4D Gaussian-particle assets.
//!
//! - [`asset`]: particle data model and the `WSA1` file format
//! - [`splat`]: particle-to-grid transfer of density and velocity
//! - [`solver`]: MacCormack advection, forces, obstacles, pressure projection
//! - [`haze`]: mask smoothing, haze compositing, atmospheric light, clean-smoke extraction
//! - [`camera`]: pose conventions, pivot offsets, trajectories and the rotation metric
//! - [`render`] and [`metrics`]: volume rendering, PSNR and SSIM
//! - [`service`]: interactive simulation sessions and their socket protocol

pub mod asset;
pub mod camera;
pub mod error;
pub mod frame;
pub mod grid;
pub mod haze;
pub mod metrics;
pub mod render;
pub mod service;
pub mod solver;
pub mod splat;

pub use asset::{load_asset, save_asset, AssetFrame, PhysicalParticle, SmokeAsset, VisualParticle};
pub use camera::{CameraPose, Convention, Intrinsics, TrajectorySpec};
pub use error::{Error, Result};
pub use frame::{Frame, MaskFrame};
pub use grid::{Aabb, GridDump, GridSpec, ScalarGrid, StaggeredVectorGrid, Vec3};
pub use haze::{FloorReport, WeightSchedule};
pub use render::{RenderOutput, RenderSettings};
pub use service::{Command, Session};
pub use solver::{init_from_asset, SimConfig, SimState, StepReport};

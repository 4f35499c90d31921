//! Camera poses: convention conversion, pivot offsets for generated views,
//! synthetic orbit trajectories, temporal perturbation pairs and the relative
//! rotation angle metric.
//!
//! Poses are camera-to-world. Splat-style cameras look along `−Z` with `+Y`
//! up; source-style poses differ by the world flip `F = diag(1, −1, −1)`.
//! Angles are radians unless a name says otherwise.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Vec3;

const RIGID_TOL: f64 = 1e-9;

/// Yaw offsets, in degrees, of the generated side views.
pub const MULTIVIEW_YAWS_DEG: [f64; 4] = [-10.0, 10.0, 20.0, 30.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Source,
    Splat,
}

impl Convention {
    pub fn flipped(self) -> Self {
        match self {
            Convention::Source => Convention::Splat,
            Convention::Splat => Convention::Source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vec3,
    convention: Convention,
}

impl CameraPose {
    /// Rejects rotations that are not orthonormal with determinant `+1`
    /// (within `1e-9`).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3, convention: Convention) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid("pose contains non-finite values"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > RIGID_TOL || (det - 1.0).abs() > RIGID_TOL {
            return Err(invalid(format!(
                "rotation is not proper orthonormal (|RᵀR − I| = {ortho:.2e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
            convention,
        })
    }

    pub fn identity(convention: Convention) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            convention,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world space.
    pub fn position(&self) -> Vec3 {
        self.translation
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    /// Viewing direction in world space for a splat-style pose.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2).into_owned()
    }
}

fn flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

/// Left-multiplies the pose by `F = diag(1, −1, −1, 1)` and flips the tag.
/// `F² = I`, so this is its own inverse.
pub fn convert_convention(pose: &CameraPose) -> CameraPose {
    let f = flip();
    CameraPose {
        rotation: f * pose.rotation,
        translation: f * pose.translation,
        convention: pose.convention.flipped(),
    }
}

/// Source-style to splat-style only.
pub fn to_splat(pose: &CameraPose) -> Result<CameraPose> {
    if pose.convention != Convention::Source {
        return Err(Error::Convention {
            expected: "source",
            found: "splat",
        });
    }
    Ok(convert_convention(pose))
}

/// Flips points between conventions with `F' = diag(1, −1, −1)`.
pub fn flip_point(p: &Vec3) -> Vec3 {
    flip() * p
}

/// `arccos((tr(R_bᵀ R_a) − 1) / 2)`, in `[0, π]`.
pub fn relative_rotation_angle(a: &CameraPose, b: &CameraPose) -> Result<f64> {
    if a.convention != b.convention {
        return Err(invalid("poses use different conventions"));
    }
    Ok(rotation_angle_between(&a.rotation, &b.rotation))
}

pub fn rotation_angle_between(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let c = ((rb.transpose() * ra).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Applies the world-space rotation `ΔR = R_y(yaw) · R_x(pitch)` about
/// `pivot`: `R = ΔR · R₀`, `t = ΔR · (t₀ − c) + c`.
pub fn offset_pose_about_pivot(base: &CameraPose, yaw: f64, pitch: f64, pivot: &Vec3) -> CameraPose {
    if yaw == 0.0 && pitch == 0.0 {
        return *base;
    }
    let dr = rot_y(yaw) * rot_x(pitch);
    CameraPose {
        rotation: dr * base.rotation,
        translation: dr * (base.translation - pivot) + pivot,
        convention: base.convention,
    }
}

/// The four generated side views around `base`, one per entry of
/// [`MULTIVIEW_YAWS_DEG`], with zero pitch.
pub fn multiview_pose_set(base: &CameraPose, pivot: &Vec3) -> Vec<CameraPose> {
    pose_set_with_yaws(base, pivot, &MULTIVIEW_YAWS_DEG)
}

pub fn pose_set_with_yaws(base: &CameraPose, pivot: &Vec3, yaws_deg: &[f64]) -> Vec<CameraPose> {
    yaws_deg
        .iter()
        .map(|y| offset_pose_about_pivot(base, y.to_radians(), 0.0, pivot))
        .collect()
}

/// Orbit sweeping azimuth linearly from `azimuth_start_deg` (frame 0) to
/// `azimuth_end_deg` (frame `frames`) at fixed pitch and radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub pitch_deg: f64,
    pub azimuth_start_deg: f64,
    pub azimuth_end_deg: f64,
    /// Last frame index `T'`; valid indices are `0..=frames`.
    pub frames: u32,
    pub radius: f64,
    pub target: Vec3,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            pitch_deg: 10.0,
            azimuth_start_deg: -105.0,
            azimuth_end_deg: -45.0,
            frames: 270,
            radius: 5.0,
            target: Vec3::zeros(),
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(invalid("a trajectory needs at least 2 frames"));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("orbit radius must be positive"));
        }
        Ok(())
    }

    /// `φ(t) = φ₀ + (φ₁ − φ₀) · t / T'`, degrees.
    pub fn azimuth_deg(&self, t: f64) -> f64 {
        self.azimuth_start_deg + (self.azimuth_end_deg - self.azimuth_start_deg) * t / self.frames as f64
    }
}

/// Azimuth of a world direction: `atan2(x, z)`, degrees.
pub fn azimuth_of(d: &Vec3) -> f64 {
    d.x.atan2(d.z).to_degrees()
}

/// Splat-style pose at frame `t` of the orbit, looking at the target.
pub fn synthetic_trajectory(spec: &TrajectorySpec, t: u32) -> Result<CameraPose> {
    spec.validate()?;
    if t > spec.frames {
        return Err(Error::OutOfRange {
            index: t as usize,
            len: spec.frames as usize + 1,
        });
    }
    let phi = spec.azimuth_deg(t as f64).to_radians();
    let rotation = rot_y(phi) * rot_x(-spec.pitch_deg.to_radians());
    let back = rotation.column(2).into_owned();
    CameraPose::new(rotation, spec.target + back * spec.radius, Convention::Splat)
}

/// Index of the pose paired with timestep `t` when perturbing by `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPair {
    pub time: usize,
    pub pose_index: usize,
    /// `false` when `delta ≡ 0 (mod len)`, so no perturbation happens.
    pub perturbed: bool,
}

/// Pairs timestep `t` with the pose of timestep `(t + delta) mod len`. The
/// whole pose (rotation and translation) is taken from the shifted frame.
pub fn perturbation_pair(t: usize, delta: usize, len: usize) -> Result<PerturbationPair> {
    if len == 0 {
        return Err(invalid("sequence length must be positive"));
    }
    if t >= len {
        return Err(Error::OutOfRange { index: t, len });
    }
    let pose_index = (t + delta) % len;
    Ok(PerturbationPair {
        time: t,
        pose_index,
        perturbed: pose_index != t,
    })
}

/// Shift used at training progress `progress ∈ [0, 1]`: 2 in the first half,
/// 4 afterwards.
pub fn perturbation_delta(progress: f64) -> usize {
    if progress < 0.5 {
        2
    } else {
        4
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    convention: Convention,
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let m = &p.rotation;
        Self {
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: p.translation.into(),
            convention: p.convention,
        }
    }
}

impl TryFrom<PoseRecord> for CameraPose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        CameraPose::new(Matrix3::from_row_slice(&r.r), Vec3::from(r.t), r.convention)
    }
}

impl Serialize for CameraPose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CameraPose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRecord::deserialize(d)?;
        CameraPose::try_from(r).map_err(serde::de::Error::custom)
    }
}

/// Reads a JSON list of `{"R": [9 row-major], "t": [3], "convention": "source" | "splat"}`.
/// A single object is accepted as a one-element list.
pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    })
}

pub fn save_poses(path: impl AsRef<Path>, poses: &[CameraPose]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(poses)?)?;
    Ok(())
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(focal: f64, principal: [f64; 2], width: usize, height: usize) -> Result<Self> {
        let i = Self {
            focal,
            principal,
            width,
            height,
        };
        i.validate()?;
        Ok(i)
    }

    /// Principal point at the image center and the given horizontal field of
    /// view.
    pub fn from_fov(fov_x_deg: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_x_deg > 0.0 && fov_x_deg < 180.0) {
            return Err(invalid(format!("field of view must lie in (0, 180), got {fov_x_deg}")));
        }
        let focal = width as f64 / 2.0 / (fov_x_deg.to_radians() / 2.0).tan();
        Self::new(focal, [width as f64 / 2.0, height as f64 / 2.0], width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be positive"));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(invalid(format!("focal length must be positive, got {}", self.focal)));
        }
        let [cx, cy] = self.principal;
        if !((0.0..=self.width as f64).contains(&cx) && (0.0..=self.height as f64).contains(&cy)) {
            return Err(invalid("principal point lies outside the image"));
        }
        Ok(())
    }

    /// Unit ray through the center of pixel `(x, y)` in splat-style camera
    /// coordinates (`x` right, `y` down the image, camera looking along `−Z`).
    pub fn ray(&self, x: usize, y: usize) -> Vec3 {
        let dx = (x as f64 + 0.5 - self.principal[0]) / self.focal;
        let dy = (y as f64 + 0.5 - self.principal[1]) / self.focal;
        Vec3::new(dx, -dy, -1.0).normalize()
    }
}

/// Rotation by `angle` about `axis`, for constructing test and tool poses.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    Rotation3::new(axis.normalize() * angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn arb_rotation() -> impl Strategy<Value = Matrix3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..PI)
            .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| axis_angle(&Vec3::new(x, y, z), a))
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (arb_rotation(), -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0)
            .prop_map(|(r, x, y, z)| CameraPose::new(r, Vec3::new(x, y, z), Convention::Splat).unwrap())
    }

    #[test]
    fn convert_identity() {
        let p = CameraPose::new(Matrix3::identity(), Vec3::new(1.0, 2.0, 3.0), Convention::Source).unwrap();
        let q = to_splat(&p).unwrap();
        assert_eq!(*q.rotation(), flip());
        assert_eq!(*q.translation(), Vec3::new(1.0, -2.0, -3.0));
        assert_eq!(q.convention(), Convention::Splat);
        assert_eq!(convert_convention(&q), p);
        assert!(matches!(to_splat(&q), Err(Error::Convention { .. })));
    }

    #[test]
    fn rejects_improper_rotations() {
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(refl, Vec3::zeros(), Convention::Splat).is_err());
        let skew = Matrix3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPose::new(skew, Vec3::zeros(), Convention::Splat).is_err());
    }

    #[test]
    fn angle_examples() {
        let a = CameraPose::identity(Convention::Splat);
        assert_eq!(relative_rotation_angle(&a, &a).unwrap(), 0.0);
        let b = CameraPose::new(
            axis_angle(&Vec3::new(0.3, 1.0, -0.2), 53f64.to_radians()),
            Vec3::zeros(),
            Convention::Splat,
        )
        .unwrap();
        assert!((relative_rotation_angle(&a, &b).unwrap() - 53f64.to_radians()).abs() < 1e-9);
        let c = CameraPose::new(
            axis_angle(&Vec3::new(1.0, 2.0, 3.0), PI),
            Vec3::zeros(),
            Convention::Splat,
        )
        .unwrap();
        assert!((relative_rotation_angle(&a, &c).unwrap() - PI).abs() < 1e-7);
        let s = CameraPose::identity(Convention::Source);
        assert!(relative_rotation_angle(&a, &s).is_err());
    }

    #[test]
    fn trajectory_azimuths() {
        let spec = TrajectorySpec::default();
        for (t, want) in [(0, -105.0), (270, -45.0), (135, -75.0)] {
            let p = synthetic_trajectory(&spec, t).unwrap();
            let az = azimuth_of(&p.position());
            assert!((az - want).abs() < 1e-9, "{t}: {az}");
            assert!((p.position().norm() - 5.0).abs() < 1e-12);
            let look = p.forward();
            assert!((look + p.position().normalize()).norm() < 1e-12);
            let elev = p.position().y.atan2(p.position().x.hypot(p.position().z)).to_degrees();
            assert!((elev - 10.0).abs() < 1e-9);
        }
        assert!(synthetic_trajectory(&spec, 271).is_err());
    }

    /// Rotations between orbit poses at equal pitch are conjugates of the
    /// azimuth step, so the metric reads back the azimuth difference.
    #[test]
    fn trajectory_rotation_spans() {
        let spec = TrajectorySpec::default();
        let p = |t| synthetic_trajectory(&spec, t).unwrap();
        let train = relative_rotation_angle(&p(1), &p(240)).unwrap().to_degrees();
        assert!((train - 53.0).abs() < 0.5, "{train}");
        let future = relative_rotation_angle(&p(240), &p(270)).unwrap().to_degrees();
        assert!((future - 7.0).abs() < 0.5, "{future}");
    }

    #[test]
    fn pivot_offset_examples() {
        let base = CameraPose::new(
            axis_angle(&Vec3::new(0.2, 1.0, 0.1), 0.7),
            Vec3::new(1.0, 2.0, 3.0),
            Convention::Splat,
        )
        .unwrap();
        let c = Vec3::new(0.5, -0.5, 0.25);
        assert_eq!(offset_pose_about_pivot(&base, 0.0, 0.0, &c), base);
        let at_pivot = CameraPose::new(*base.rotation(), c, Convention::Splat).unwrap();
        let moved = offset_pose_about_pivot(&at_pivot, 0.4, -0.3, &c);
        assert!((moved.translation() - c).norm() < 1e-15);
        let q = offset_pose_about_pivot(&base, 10f64.to_radians(), 0.0, &c);
        assert!(((q.translation() - c).norm() - (base.translation() - c).norm()).abs() < 1e-9);
    }

    #[test]
    fn multiview_set() {
        let base = synthetic_trajectory(&TrajectorySpec::default(), 0).unwrap();
        let set = multiview_pose_set(&base, &Vec3::zeros());
        assert_eq!(set.len(), 4);
        for (p, yaw) in set.iter().zip(MULTIVIEW_YAWS_DEG) {
            let a = relative_rotation_angle(&base, p).unwrap();
            assert!((a - yaw.abs().to_radians()).abs() < 1e-9);
        }
        let with_zero = pose_set_with_yaws(&base, &Vec3::zeros(), &[0.0]);
        assert_eq!(with_zero[0], base);
    }

    #[test]
    fn perturbation_examples() {
        assert_eq!(perturbation_pair(5, 2, 240).unwrap().pose_index, 7);
        assert_eq!(perturbation_pair(239, 4, 240).unwrap().pose_index, 3);
        let same = perturbation_pair(17, 0, 240).unwrap();
        assert_eq!(same.pose_index, 17);
        assert!(!same.perturbed);
        assert!(perturbation_pair(0, 2, 0).is_err());
        assert!(perturbation_pair(240, 2, 240).is_err());
        assert_eq!(perturbation_delta(0.0), 2);
        assert_eq!(perturbation_delta(0.49), 2);
        assert_eq!(perturbation_delta(0.5), 4);
        assert_eq!(perturbation_delta(1.0), 4);
    }

    #[test]
    fn pose_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        let poses: Vec<_> = (0..5)
            .map(|t| synthetic_trajectory(&TrajectorySpec::default(), t * 50).unwrap())
            .collect();
        save_poses(&path, &poses).unwrap();
        assert_eq!(load_poses(&path).unwrap(), poses);
        fs::write(&path, r#"{"R":[1,0,0,0,1,0,0,0,1],"t":[1,2,3],"convention":"source"}"#).unwrap();
        assert_eq!(load_poses(&path).unwrap()[0].convention(), Convention::Source);
        fs::write(&path, r#"{"R":[2,0,0,0,1,0,0,0,1],"t":[1,2,3],"convention":"source"}"#).unwrap();
        assert!(load_poses(&path).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, [1.0, 1.0], 2, 2).is_err());
        assert!(Intrinsics::new(1.0, [3.0, 1.0], 2, 2).is_err());
        let i = Intrinsics::from_fov(90.0, 64, 48).unwrap();
        assert!((i.focal - 32.0).abs() < 1e-12);
        let r = i.ray(32, 24);
        assert!((r - Vec3::new(0.5 / 32.0, -0.5 / 32.0, -1.0).normalize()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn conversion_is_rigid_involution(p in arb_pose()) {
            let q = convert_convention(&p);
            prop_assert!((q.rotation().determinant() - 1.0).abs() < 1e-9);
            prop_assert!(CameraPose::new(*q.rotation(), *q.translation(), q.convention()).is_ok());
            prop_assert_eq!(convert_convention(&q), p);
        }

        #[test]
        fn angle_symmetric_and_triangle(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let ab = relative_rotation_angle(&a, &b).unwrap();
            let ba = relative_rotation_angle(&b, &a).unwrap();
            let bc = relative_rotation_angle(&b, &c).unwrap();
            let ac = relative_rotation_angle(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn axis_angle_reads_back(r in arb_rotation(), theta in 0.01f64..(PI - 0.01), x in -1.0f64..1.0, y in 0.1f64..1.0) {
            let a = CameraPose::new(r, Vec3::zeros(), Convention::Splat).unwrap();
            let b = CameraPose::new(axis_angle(&Vec3::new(x, y, 0.3), theta) * r, Vec3::zeros(), Convention::Splat).unwrap();
            prop_assert!((relative_rotation_angle(&a, &b).unwrap() - theta).abs() < 1e-9);
        }

        #[test]
        fn pivot_offsets_compose(p in arb_pose(), y1 in -1.5f64..1.5, y2 in -1.5f64..1.5, cx in -2.0f64..2.0) {
            let c = Vec3::new(cx, 0.5, -1.0);
            let two = offset_pose_about_pivot(&offset_pose_about_pivot(&p, y1, 0.0, &c), y2, 0.0, &c);
            let one = offset_pose_about_pivot(&p, y1 + y2, 0.0, &c);
            prop_assert!((two.rotation() - one.rotation()).abs().max() < 1e-9);
            prop_assert!((two.translation() - one.translation()).norm() < 1e-9);
            let d0 = (p.translation() - c).norm();
            let q = offset_pose_about_pivot(&p, y1, y2, &c);
            prop_assert!(((q.translation() - c).norm() - d0).abs() < 1e-9);
        }

        #[test]
        fn azimuth_is_affine(t1 in 0u32..=270, t2 in 0u32..=270) {
            let s = TrajectorySpec::default();
            let lhs = s.azimuth_deg(t1 as f64) + s.azimuth_deg(t2 as f64);
            let rhs = 2.0 * s.azimuth_deg((t1 as f64 + t2 as f64) / 2.0);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}

//! Particle-to-grid transfer with anisotropic Gaussian kernels.
//!
//! Density is the opacity-weighted sum of visual-particle kernels sampled at
//! cell centers. Velocity is the kernel-weighted average of physical-particle
//! velocities, evaluated directly on MAC faces, with `ε = 1e-8` in the
//! denominator.
//!
//! Both transfers run over z-slabs in parallel. Every sample accumulates its
//! contributions in ascending particle order, so results are bitwise
//! independent of the thread count.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::asset::{PhysicalParticle, VisualParticle};
use crate::error::{invalid, Error, Result};
use crate::grid::{Aabb, Field, GridSpec, ScalarGrid, StaggeredVectorGrid, Vec3};

/// Denominator regularizer of the normalized velocity transfer.
pub const VELOCITY_EPSILON: f64 = 1e-8;

/// Mahalanobis radius beyond which density kernels are dropped.
/// `exp(-18) ≈ 1.5e-8` per unit opacity.
pub const DENSITY_TRUNCATION: f64 = 6.0;

/// Mahalanobis radius of the velocity kernel support. Any face with nonzero
/// kernel mass then has `Σφ ≥ exp(-4.5)`, which bounds the relative bias of
/// the `ε` term by `1e-6`.
pub const VELOCITY_TRUNCATION: f64 = 3.0;

/// Largest accepted covariance condition number.
pub const MAX_CONDITION: f64 = 1e12;

/// Rotation matrix of a scalar-first quaternion; the input is renormalized.
pub fn quat_to_rotmat(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(invalid("zero quaternion has no rotation"));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Center and covariance of one Gaussian kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernelParams {
    center: Vec3,
    covariance: Matrix3<f64>,
    precision: Matrix3<f64>,
}

impl GaussianKernelParams {
    pub fn new(center: Vec3, covariance: Matrix3<f64>) -> Result<Self> {
        let asym = (covariance - covariance.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(invalid(format!("covariance is not symmetric (asymmetry {asym:e})")));
        }
        let eig = SymmetricEigen::new(covariance).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(invalid(format!(
                "covariance is not positive definite (min eigenvalue {lo:e})"
            )));
        }
        let cond = hi / lo;
        if cond > MAX_CONDITION {
            return Err(Error::SingularCovariance(cond));
        }
        let precision = covariance
            .try_inverse()
            .ok_or(Error::SingularCovariance(f64::INFINITY))?;
        Ok(Self {
            center,
            covariance,
            precision,
        })
    }

    /// `Σ = R(r) diag(s²) R(r)ᵀ`.
    pub fn from_scale_rotation(center: Vec3, scale: Vec3, rotation: [f64; 4]) -> Result<Self> {
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid(format!(
                "kernel scale must be positive, got {:?}",
                scale.as_slice()
            )));
        }
        let smax = scale.max();
        let smin = scale.min();
        let cond = (smax / smin).powi(2);
        if cond > MAX_CONDITION {
            return Err(Error::SingularCovariance(cond));
        }
        let r = quat_to_rotmat(rotation)?;
        let s2 = Matrix3::from_diagonal(&scale.component_mul(&scale));
        let inv_s2 = Matrix3::from_diagonal(&scale.map(|s| 1.0 / (s * s)));
        let covariance = r * s2 * r.transpose();
        let precision = r * inv_s2 * r.transpose();
        Ok(Self {
            center,
            covariance: symmetrize(covariance),
            precision: symmetrize(precision),
        })
    }

    pub fn from_visual(p: &VisualParticle) -> Result<Self> {
        let s = p.scale;
        let r = p.rotation;
        Self::from_scale_rotation(
            p.center(),
            Vec3::new(s[0] as f64, s[1] as f64, s[2] as f64),
            [r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64],
        )
    }

    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }

    #[inline]
    pub fn mahalanobis_sq(&self, x: &Vec3) -> f64 {
        let d = x - self.center;
        d.dot(&(self.precision * d))
    }

    /// `exp(-½ (x-p)ᵀ Σ⁻¹ (x-p))`.
    #[inline]
    pub fn eval(&self, x: &Vec3) -> f64 {
        (-0.5 * self.mahalanobis_sq(x)).exp()
    }

    /// World-space half-extent of the ellipsoid at Mahalanobis radius `r`.
    fn half_extent(&self, r: f64) -> Vec3 {
        Vec3::new(
            r * self.covariance[(0, 0)].sqrt(),
            r * self.covariance[(1, 1)].sqrt(),
            r * self.covariance[(2, 2)].sqrt(),
        )
    }
}

fn symmetrize(m: Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn kernel_eval(params: &GaussianKernelParams, x: &Vec3) -> f64 {
    params.eval(x)
}

/// Axis-aligned box around every visual center, padded by
/// `padding_sigmas · max(scale)` per particle.
pub fn restrict_bbox(visual: &[VisualParticle], padding_sigmas: f64) -> Result<Aabb> {
    if visual.is_empty() {
        return Err(invalid("cannot bound an empty particle list"));
    }
    if !(padding_sigmas >= 0.0) {
        return Err(invalid(format!("padding must be non-negative, got {padding_sigmas}")));
    }
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for p in visual {
        let pad = Vec3::repeat(padding_sigmas * p.max_scale());
        let c = p.center();
        min = min.inf(&(c - pad));
        max = max.sup(&(c + pad));
    }
    Ok(Aabb::new(min, max))
}

/// A kernel plus the lattice index ranges its truncated support touches.
struct Footprint {
    kernel: GaussianKernelParams,
    lo: [usize; 3],
    hi: [usize; 3],
}

fn footprint(
    kernel: GaussianKernelParams,
    spec: &GridSpec,
    dims: [usize; 3],
    offset: [f64; 3],
    radius: f64,
) -> Option<Footprint> {
    let h = spec.cell_size();
    let qc = spec.world_to_cells(kernel.center());
    let ext = kernel.half_extent(radius);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let n = dims[a] as f64;
        let e = ext[a] / h[a];
        let first = (qc[a] - e - offset[a]).ceil().max(0.0);
        let last = (qc[a] + e - offset[a]).floor().min(n - 1.0);
        if !(first <= last) {
            return None;
        }
        lo[a] = first as usize;
        hi[a] = last as usize;
    }
    Some(Footprint { kernel, lo, hi })
}

/// Accumulates `Σ φ_i · value_i` and `Σ φ_i` on one sample lattice.
fn accumulate(
    spec: &GridSpec,
    dims: [usize; 3],
    offset: [f64; 3],
    footprints: &[(Footprint, f64)],
    radius: f64,
    with_mass: bool,
) -> (Vec<f64>, Vec<f64>) {
    let slab = dims[0] * dims[1];
    let len = slab * dims[2];
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; if with_mass { len } else { 0 }];
    let r2 = radius * radius;
    let fill = |k: usize, num: &mut [f64], mut den: Option<&mut [f64]>| {
        for (fp, value) in footprints {
            if k < fp.lo[2] || k > fp.hi[2] {
                continue;
            }
            for j in fp.lo[1]..=fp.hi[1] {
                for i in fp.lo[0]..=fp.hi[0] {
                    let q = Vec3::new(i as f64 + offset[0], j as f64 + offset[1], k as f64 + offset[2]);
                    let m = fp.kernel.mahalanobis_sq(&spec.cells_to_world(&q));
                    if m > r2 {
                        continue;
                    }
                    let phi = (-0.5 * m).exp();
                    let idx = i + dims[0] * j;
                    num[idx] += phi * value;
                    if let Some(d) = den.as_deref_mut() {
                        d[idx] += phi;
                    }
                }
            }
        }
    };
    if with_mass {
        num.par_chunks_mut(slab)
            .zip(den.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (n, d))| fill(k, n, Some(d)));
    } else {
        num.par_chunks_mut(slab).enumerate().for_each(|(k, n)| fill(k, n, None));
    }
    (num, den)
}

/// Density `ρ(x) = Σ o_i φ_i(x)` at every cell center, kernels truncated at
/// [`DENSITY_TRUNCATION`].
pub fn splat_density(particles: &[VisualParticle], spec: &GridSpec) -> Result<ScalarGrid> {
    splat_density_truncated(particles, spec, DENSITY_TRUNCATION)
}

/// As [`splat_density`] with an explicit Mahalanobis cutoff (`f64::INFINITY`
/// disables truncation).
pub fn splat_density_truncated(particles: &[VisualParticle], spec: &GridSpec, radius: f64) -> Result<ScalarGrid> {
    let dims = spec.res();
    let offset = [0.5; 3];
    let mut footprints = Vec::with_capacity(particles.len());
    for p in particles {
        let kernel = GaussianKernelParams::from_visual(p)?;
        if let Some(fp) = footprint(kernel, spec, dims, offset, radius) {
            footprints.push((fp, p.opacity as f64));
        }
    }
    let (values, _) = accumulate(spec, dims, offset, &footprints, radius, false);
    ScalarGrid::from_vec(*spec, values)
}

/// Velocity `V(x) = Σ φ'_i(x) u_i / (Σ φ'_i(x) + ε)` on MAC faces, with an
/// axis-aligned kernel of standard deviations `kernel_scale`.
pub fn splat_velocity(
    particles: &[PhysicalParticle],
    kernel_scale: Vec3,
    spec: &GridSpec,
) -> Result<StaggeredVectorGrid> {
    if kernel_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(invalid(format!(
            "velocity kernel scale must be positive, got {:?}",
            kernel_scale.as_slice()
        )));
    }
    let radius = VELOCITY_TRUNCATION;
    let mut comps = Vec::with_capacity(3);
    for axis in 0..3 {
        let dims = spec.face_dims(axis);
        let offset = GridSpec::face_offset(axis);
        let mut footprints = Vec::with_capacity(particles.len());
        for p in particles {
            let kernel = GaussianKernelParams::from_scale_rotation(p.center(), kernel_scale, [1.0, 0.0, 0.0, 0.0])?;
            if let Some(fp) = footprint(kernel, spec, dims, offset, radius) {
                footprints.push((fp, p.velocity()[axis]));
            }
        }
        let (num, den) = accumulate(spec, dims, offset, &footprints, radius, true);
        let values: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / (d + VELOCITY_EPSILON)).collect();
        comps.push(Field::from_vec(dims, offset, values)?);
    }
    let mut it = comps.into_iter().map(Field::into_vec);
    StaggeredVectorGrid::from_components(*spec, it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_spec(n: usize) -> GridSpec {
        GridSpec::unit_cells([n, n, n]).unwrap()
    }

    fn random_quat(rng: &mut impl Rng) -> [f32; 4] {
        loop {
            let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.2 {
                let r = q.map(|v| (v / n) as f32);
                let n32 = r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                if (n32 - 1.0).abs() < 1e-6 {
                    return r;
                }
            }
        }
    }

    #[test]
    fn identity_and_quarter_turn() {
        let r = quat_to_rotmat([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
        let h = std::f64::consts::FRAC_PI_4;
        let r = quat_to_rotmat([h.cos(), 0.0, 0.0, h.sin()]).unwrap();
        let y = r * Vec3::x();
        assert!((y - Vec3::y()).norm() < 1e-15);
        assert!(quat_to_rotmat([0.0; 4]).is_err());
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
            let r = quat_to_rotmat(q).unwrap();
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_values() {
        let k = GaussianKernelParams::from_scale_rotation(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::repeat(1.0),
            [1.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(kernel_eval(&k, &Vec3::new(1.0, 2.0, 3.0)), 1.0);
        let v = kernel_eval(&k, &Vec3::new(1.0, 3.0, 3.0));
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);

        let q = [0.9f64, 0.1, -0.3, 0.2];
        let s = Vec3::new(0.5, 1.5, 0.8);
        let d = Vec3::new(0.3, -0.2, 0.7);
        let k1 = GaussianKernelParams::from_scale_rotation(Vec3::zeros(), s, q).unwrap();
        let k2 = GaussianKernelParams::from_scale_rotation(Vec3::zeros(), s * 2.0, q).unwrap();
        assert!((k1.eval(&d) - k2.eval(&(d * 2.0))).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_rejected() {
        let r =
            GaussianKernelParams::from_scale_rotation(Vec3::zeros(), Vec3::new(1.0, 1.0, 1e-7), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(r, Err(Error::SingularCovariance(_))));
        let cov = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, 1e-13));
        assert!(matches!(
            GaussianKernelParams::new(Vec3::zeros(), cov),
            Err(Error::SingularCovariance(_))
        ));
        let asym = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(GaussianKernelParams::new(Vec3::zeros(), asym).is_err());
    }

    #[test]
    fn density_examples() {
        let spec = unit_spec(8);
        let zero = VisualParticle::isotropic([3.5, 3.5, 3.5], 1.0, 0.0);
        assert!(splat_density(&[zero], &spec)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));

        let p = VisualParticle::isotropic([3.5, 4.5, 2.5], 0.2, 0.7);
        let g = splat_density(&[p], &spec).unwrap();
        assert!((g.get(3, 4, 2) - 0.7).abs() < 1e-7);

        assert!(splat_density(&[], &spec).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_examples() {
        let spec = unit_spec(6);
        let empty = splat_velocity(&[], Vec3::repeat(1.5), &spec).unwrap();
        assert_eq!(empty.max_abs(), 0.0);

        // particle exactly on a u-face center
        let u = [0.3f32, -0.2, 0.1];
        let p = PhysicalParticle {
            position: [3.0, 2.5, 2.5],
            velocity: u,
        };
        let g = splat_velocity(&[p], Vec3::repeat(1.5), &spec).unwrap();
        let got = g.u().get(3, 2, 2);
        assert!(((got - u[0] as f64) / u[0] as f64).abs() < 1e-6);

        // two particles symmetric about that face
        let a = PhysicalParticle {
            position: [2.2, 2.5, 2.5],
            velocity: [0.1, 0.0, 0.0],
        };
        let b = PhysicalParticle {
            position: [3.8, 2.5, 2.5],
            velocity: [0.05, 0.0, 0.0],
        };
        let g = splat_velocity(&[a, b], Vec3::repeat(1.5), &spec).unwrap();
        let expected = (a.velocity[0] as f64 + b.velocity[0] as f64) / 2.0;
        assert!((g.u().get(3, 2, 2) - expected).abs() < 1e-9);
    }

    #[test]
    fn bbox_examples() {
        let p = VisualParticle::isotropic([0.0, 0.0, 0.0], 1.0, 1.0);
        let b = restrict_bbox(&[p], 3.0).unwrap();
        assert_eq!(b.min, Vec3::repeat(-3.0));
        assert_eq!(b.max, Vec3::repeat(3.0));
        let q = VisualParticle::isotropic([1.0, -2.0, 5.0], 1.0, 1.0);
        let b = restrict_bbox(&[p, q], 0.0).unwrap();
        assert_eq!(b.min, Vec3::new(0.0, -2.0, 0.0));
        assert_eq!(b.max, Vec3::new(1.0, 0.0, 5.0));
        assert!(restrict_bbox(&[], 1.0).is_err());
    }

    #[test]
    fn bbox_contains_particles_of_random_assets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..30);
            let ps: Vec<_> = (0..n)
                .map(|_| VisualParticle {
                    position: [0; 3].map(|_| rng.gen_range(-50.0..50.0)),
                    color: 0.5,
                    scale: [0; 3].map(|_| rng.gen_range(0.1..4.0)),
                    opacity: 0.5,
                    rotation: random_quat(&mut rng),
                })
                .collect();
            let pad = rng.gen_range(0.0..4.0);
            let b = restrict_bbox(&ps, pad).unwrap();
            for p in &ps {
                for a in 0..3 {
                    let r = pad * p.max_scale();
                    assert!(b.min[a] <= p.center()[a] - r && p.center()[a] + r <= b.max[a]);
                }
            }
        }
    }

    fn random_visuals(seed: u64, n: usize, lo: f32, hi: f32) -> Vec<VisualParticle> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| VisualParticle {
                position: [0; 3].map(|_| rng.gen_range(lo..hi)),
                color: 1.0,
                scale: [0; 3].map(|_| rng.gen_range(0.3..2.0)),
                opacity: rng.gen_range(0.0..1.0),
                rotation: random_quat(&mut rng),
            })
            .collect()
    }

    #[test]
    fn density_is_linear_in_opacity() {
        let spec = unit_spec(12);
        let ps = random_visuals(5, 6, 2.0, 10.0);
        let doubled: Vec<_> = ps
            .iter()
            .map(|p| VisualParticle {
                opacity: p.opacity / 2.0,
                ..*p
            })
            .collect();
        let a = splat_density(&ps, &spec).unwrap();
        let b = splat_density(&doubled, &spec).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            // halving every opacity is exact in binary floating point
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn splat_is_independent_of_thread_count() {
        let spec = unit_spec(16);
        let ps = random_visuals(9, 20, 1.0, 15.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| splat_density(&ps, &spec).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn density_is_permutation_invariant(seed in 0u64..1000, rot in 1usize..7) {
            let spec = unit_spec(10);
            let ps = random_visuals(seed, 7, 1.0, 9.0);
            let mut shuffled = ps.clone();
            shuffled.rotate_left(rot);
            let a = splat_density(&ps, &spec).unwrap();
            let b = splat_density(&shuffled, &spec).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn uniform_velocity_reproduced_where_mass_is_nonzero(
            seed in 0u64..1000,
            u0 in prop::array::uniform3(-5.0f32..5.0),
        ) {
            let spec = unit_spec(10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps: Vec<_> = (0..6).map(|_| PhysicalParticle {
                position: [0; 3].map(|_| rng.gen_range(1.0..9.0)),
                velocity: u0,
            }).collect();
            let g = splat_velocity(&ps, Vec3::repeat(1.5), &spec).unwrap();
            for a in 0..3 {
                let target = u0[a] as f64;
                for &v in g.component(a).data() {
                    if v != 0.0 {
                        prop_assert!(((v - target) / target).abs() <= 1e-6);
                    }
                }
            }
        }
    }
}

//! Cell-centered scalar grids and MAC (face-centered) vector grids over a
//! world-space bounding box, plus the `WSG1` grid dump format.
//!
//! Positions inside the solver are expressed in *cell units*: `q = (x - min) / h`
//! per axis, so that cell `(i, j, k)` has its center at `q = (i + ½, j + ½, k + ½)`
//! and the u-face `(i, j, k)` sits at `q = (i, j + ½, k + ½)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;

/// Chunk length used by every parallel reduction. Fixed so that partial sums,
/// and therefore results, do not depend on the number of worker threads.
pub(crate) const REDUCE_CHUNK: usize = 4096;

/// Sum in fixed-size chunks, combining partial sums in chunk order.
pub(crate) fn det_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values.par_chunks(REDUCE_CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partials.iter().sum()
}

pub(crate) fn det_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

pub(crate) fn det_max_abs(values: &[f64]) -> f64 {
    values
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .reduce(|| 0.0, f64::max)
}

/// World-space axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.max[a] > self.min[a])
    }
}

/// Resolution and placement of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    res: [usize; 3],
    bbox: Aabb,
}

impl GridSpec {
    pub fn new(res: [usize; 3], bbox: Aabb) -> Result<Self> {
        if res.iter().any(|&n| n == 0) {
            return Err(invalid(format!("grid resolution must be positive, got {res:?}")));
        }
        if !bbox.is_valid() {
            return Err(invalid(format!(
                "bounding box max must exceed min on every axis, got {:?}..{:?}",
                bbox.min.as_slice(),
                bbox.max.as_slice()
            )));
        }
        Ok(Self { res, bbox })
    }

    /// Grid whose cells are unit cubes starting at the origin, so cell units
    /// and world units coincide.
    pub fn unit_cells(res: [usize; 3]) -> Result<Self> {
        let max = Vec3::new(res[0] as f64, res[1] as f64, res[2] as f64);
        Self::new(res, Aabb::new(Vec3::zeros(), max))
    }

    pub fn res(&self) -> [usize; 3] {
        self.res
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn cell_size(&self) -> Vec3 {
        let e = self.bbox.extent();
        Vec3::new(
            e.x / self.res[0] as f64,
            e.y / self.res[1] as f64,
            e.z / self.res[2] as f64,
        )
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.cell_size();
        h.x * h.y * h.z
    }

    pub fn cell_count(&self) -> usize {
        self.res.iter().product()
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res[0] * (j + self.res[1] * k)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.cells_to_world(&Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5))
    }

    pub fn world_to_cells(&self, p: &Vec3) -> Vec3 {
        (p - self.bbox.min).component_div(&self.cell_size())
    }

    pub fn cells_to_world(&self, q: &Vec3) -> Vec3 {
        self.bbox.min + q.component_mul(&self.cell_size())
    }

    /// Dimensions of the face array holding velocity component `axis`.
    pub fn face_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = self.res;
        d[axis] += 1;
        d
    }

    /// Sample offset (in cell units) of the face array for component `axis`.
    pub fn face_offset(axis: usize) -> [f64; 3] {
        let mut o = [0.5; 3];
        o[axis] = 0.0;
        o
    }
}

/// A dense 3D array of samples at `q = index + offset` (cell units).
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    dims: [usize; 3],
    offset: [f64; 3],
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(dims: [usize; 3], offset: [f64; 3]) -> Self {
        Self::filled(dims, offset, 0.0)
    }

    pub fn filled(dims: [usize; 3], offset: [f64; 3], value: f64) -> Self {
        Self {
            dims,
            offset,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], offset: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "field {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, offset, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn offset(&self) -> [f64; 3] {
        self.offset
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    /// Location of sample `(i, j, k)` in cell units.
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            i as f64 + self.offset[0],
            j as f64 + self.offset[1],
            k as f64 + self.offset[2],
        )
    }

    /// Flat index of the lower stencil corner, the strides to the upper
    /// corners (zero along singleton axes) and the fractional offsets.
    #[inline]
    fn stencil(&self, q: &Vec3) -> (usize, [usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut step = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let g = (q[a] - self.offset[a]).clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
            step[a] = 1;
        }
        let (sy, sz) = (self.dims[0], self.dims[0] * self.dims[1]);
        (
            self.index(base[0], base[1], base[2]),
            [step[0], step[1] * sy, step[2] * sz],
            frac,
        )
    }

    /// The eight stencil samples, x fastest.
    #[inline]
    fn corners(&self, c: usize, s: [usize; 3]) -> [f64; 8] {
        let d = &self.data;
        [
            d[c],
            d[c + s[0]],
            d[c + s[1]],
            d[c + s[0] + s[1]],
            d[c + s[2]],
            d[c + s[0] + s[2]],
            d[c + s[1] + s[2]],
            d[c + s[0] + s[1] + s[2]],
        ]
    }

    #[inline]
    fn lerp_corners(v: &[f64; 8], [fx, fy, fz]: [f64; 3]) -> f64 {
        let x00 = v[0] + fx * (v[1] - v[0]);
        let x10 = v[2] + fx * (v[3] - v[2]);
        let x01 = v[4] + fx * (v[5] - v[4]);
        let x11 = v[6] + fx * (v[7] - v[6]);
        let y0 = x00 + fy * (x10 - x00);
        let y1 = x01 + fy * (x11 - x01);
        y0 + fz * (y1 - y0)
    }

    /// Trilinear interpolation at `q` (cell units); coordinates are clamped
    /// to the sample lattice, so values extrapolate as constants.
    #[inline]
    pub fn sample(&self, q: &Vec3) -> f64 {
        let (c, s, f) = self.stencil(q);
        Self::lerp_corners(&self.corners(c, s), f)
    }

    /// Minimum and maximum of the eight samples used by [`Field::sample`] at `q`.
    #[inline]
    pub fn stencil_bounds(&self, q: &Vec3) -> (f64, f64) {
        self.sample_with_bounds(q).1
    }

    /// [`Field::sample`] together with [`Field::stencil_bounds`].
    #[inline]
    pub fn sample_with_bounds(&self, q: &Vec3) -> (f64, (f64, f64)) {
        let (c, s, f) = self.stencil(q);
        let v = self.corners(c, s);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (Self::lerp_corners(&v, f), (lo, hi))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Cell-centered scalar field (density).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    field: Field,
}

impl ScalarGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::filled(spec, 0.0)
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            spec,
            field: Field::filled(spec.res(), [0.5; 3], value),
        }
    }

    pub fn from_vec(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        let field = Field::from_vec(spec.res(), [0.5; 3], values)?;
        if !field.is_finite() {
            return Err(invalid("scalar grid contains non-finite values"));
        }
        Ok(Self { spec, field })
    }

    /// Fill each cell with `f(cell center in world space)`.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f64 + Sync) -> Self {
        let [nx, ny, _] = spec.res();
        let mut grid = Self::zeros(spec);
        grid.field
            .data_mut()
            .par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..ny {
                    for i in 0..nx {
                        slab[i + nx * j] = f(spec.cell_center(i, j, k));
                    }
                }
            });
        grid
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut Field {
        &mut self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.field.data_mut()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.field.get(i, j, k)
    }

    /// Trilinear sample at a world position.
    pub fn sample_world(&self, p: &Vec3) -> f64 {
        self.field.sample(&self.spec.world_to_cells(p))
    }

    /// Integral of the field: sum of cell values times cell volume.
    pub fn total_mass(&self) -> f64 {
        det_sum(self.field.data()) * self.spec.cell_volume()
    }

    /// Density-weighted mean of cell centers, or `None` for an empty field.
    pub fn center_of_mass(&self) -> Option<Vec3> {
        let [nx, ny, _] = self.spec.res();
        let partials: Vec<[f64; 4]> = self
            .field
            .data()
            .par_chunks(nx * ny)
            .enumerate()
            .map(|(k, slab)| {
                let mut acc = [0.0; 4];
                for j in 0..ny {
                    for i in 0..nx {
                        let rho = slab[i + nx * j];
                        let c = self.spec.cell_center(i, j, k);
                        acc[0] += rho * c.x;
                        acc[1] += rho * c.y;
                        acc[2] += rho * c.z;
                        acc[3] += rho;
                    }
                }
                acc
            })
            .collect();
        let mut acc = [0.0; 4];
        for p in partials {
            for a in 0..4 {
                acc[a] += p[a];
            }
        }
        (acc[3] > 0.0).then(|| Vec3::new(acc[0], acc[1], acc[2]) / acc[3])
    }

    pub fn max_value(&self) -> f64 {
        self.field.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// MAC-layout velocity: component `a` lives on the faces normal to axis `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredVectorGrid {
    spec: GridSpec,
    comps: [Field; 3],
}

impl StaggeredVectorGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::uniform(spec, Vec3::zeros())
    }

    pub fn uniform(spec: GridSpec, value: Vec3) -> Self {
        let comps = [0, 1, 2].map(|a| Field::filled(spec.face_dims(a), GridSpec::face_offset(a), value[a]));
        Self { spec, comps }
    }

    pub fn from_components(spec: GridSpec, u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let mut parts = [Some(u), Some(v), Some(w)];
        let mut comps = Vec::with_capacity(3);
        for (a, part) in parts.iter_mut().enumerate() {
            let f = Field::from_vec(spec.face_dims(a), GridSpec::face_offset(a), part.take().unwrap())?;
            if !f.is_finite() {
                return Err(invalid("velocity grid contains non-finite values"));
            }
            comps.push(f);
        }
        let [u, v, w]: [Field; 3] = comps.try_into().expect("three components");
        Ok(Self { spec, comps: [u, v, w] })
    }

    /// Fill every face with the matching component of `f(face center)`.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> Vec3 + Sync) -> Self {
        let mut grid = Self::zeros(spec);
        for a in 0..3 {
            let field = &mut grid.comps[a];
            let dims = field.dims();
            let offset = field.offset();
            field
                .data_mut()
                .par_chunks_mut(dims[0] * dims[1])
                .enumerate()
                .for_each(|(k, slab)| {
                    for j in 0..dims[1] {
                        for i in 0..dims[0] {
                            let q = Vec3::new(i as f64 + offset[0], j as f64 + offset[1], k as f64 + offset[2]);
                            slab[i + dims[0] * j] = f(spec.cells_to_world(&q))[a];
                        }
                    }
                });
        }
        grid
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn component(&self, axis: usize) -> &Field {
        &self.comps[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut Field {
        &mut self.comps[axis]
    }

    pub fn components(&self) -> &[Field; 3] {
        &self.comps
    }

    pub fn components_mut(&mut self) -> &mut [Field; 3] {
        &mut self.comps
    }

    pub fn u(&self) -> &Field {
        &self.comps[0]
    }

    pub fn v(&self) -> &Field {
        &self.comps[1]
    }

    pub fn w(&self) -> &Field {
        &self.comps[2]
    }

    /// Velocity (world units) interpolated at `q` (cell units).
    #[inline]
    pub fn sample_cells(&self, q: &Vec3) -> Vec3 {
        Vec3::new(
            self.comps[0].sample(q),
            self.comps[1].sample(q),
            self.comps[2].sample(q),
        )
    }

    /// Velocity at a world position; zero outside the bounding box.
    pub fn sample_world(&self, p: &Vec3) -> Vec3 {
        if !self.spec.bbox().contains(p) {
            return Vec3::zeros();
        }
        self.sample_cells(&self.spec.world_to_cells(p))
    }

    /// Discrete divergence of cell `(i, j, k)`.
    #[inline]
    pub fn divergence_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let h = self.spec.cell_size();
        let [u, v, w] = &self.comps;
        (u.get(i + 1, j, k) - u.get(i, j, k)) / h.x
            + (v.get(i, j + 1, k) - v.get(i, j, k)) / h.y
            + (w.get(i, j, k + 1) - w.get(i, j, k)) / h.z
    }

    /// Max |divergence| over cells where `fluid` is true (all cells if `None`).
    pub fn max_divergence(&self, fluid: Option<&[bool]>) -> f64 {
        let [nx, ny, nz] = self.spec.res();
        (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut m = 0.0_f64;
                for j in 0..ny {
                    for i in 0..nx {
                        if fluid.map_or(true, |f| f[self.spec.cell_index(i, j, k)]) {
                            m = m.max(self.divergence_at(i, j, k).abs());
                        }
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| det_max_abs(c.data())).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(Field::is_finite)
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    magic: String,
    res: [usize; 3],
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    fields: Vec<String>,
}

/// Contents of a `WSG1` grid dump.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub density: Option<ScalarGrid>,
    pub velocity: Option<StaggeredVectorGrid>,
}

pub const GRID_MAGIC: &str = "WSG1";

impl GridDump {
    fn spec(&self) -> Result<GridSpec> {
        match (&self.density, &self.velocity) {
            (Some(d), Some(v)) if d.spec() != v.spec() => {
                Err(invalid("density and velocity grids must share resolution and bbox"))
            }
            (Some(d), _) => Ok(*d.spec()),
            (None, Some(v)) => Ok(*v.spec()),
            (None, None) => Err(invalid("grid dump needs at least one field")),
        }
    }

    /// Writes a JSON header line followed by little-endian f32 arrays
    /// (x fastest, then y, then z) in the order listed under `fields`.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let spec = self.spec()?;
        let mut fields = Vec::new();
        let mut arrays: Vec<&[f64]> = Vec::new();
        if let Some(d) = &self.density {
            fields.push("density".to_string());
            arrays.push(d.values());
        }
        if let Some(v) = &self.velocity {
            for (name, c) in ["u", "v", "w"].iter().zip(v.components()) {
                fields.push(name.to_string());
                arrays.push(c.data());
            }
        }
        let header = DumpHeader {
            magic: GRID_MAGIC.into(),
            res: spec.res(),
            bbox_min: spec.bbox().min.into(),
            bbox_max: spec.bbox().max.into(),
            fields,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for arr in arrays {
            let mut buf = Vec::with_capacity(arr.len() * 4);
            for v in arr {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: DumpHeader =
            serde_json::from_slice(&line).map_err(|e| Error::Header(format!("grid dump header: {e}")))?;
        if header.magic != GRID_MAGIC {
            return Err(Error::Version {
                expected: GRID_MAGIC,
                found: header.magic,
            });
        }
        let spec = GridSpec::new(header.res, Aabb::new(header.bbox_min.into(), header.bbox_max.into()))?;
        let mut read_array = |len: usize, name: &str| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf).map_err(|_| Error::Truncated {
                frame: 0,
                detail: format!("field `{name}` needs {len} f32 values"),
            })?;
            Ok(buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect())
        };
        let mut density = None;
        let mut comps: [Option<Vec<f64>>; 3] = [None, None, None];
        for name in &header.fields {
            match name.as_str() {
                "density" => density = Some(ScalarGrid::from_vec(spec, read_array(spec.cell_count(), name)?)?),
                "u" | "v" | "w" => {
                    let a = ["u", "v", "w"].iter().position(|n| n == name).unwrap();
                    let len = spec.face_dims(a).iter().product();
                    comps[a] = Some(read_array(len, name)?);
                }
                other => return Err(Error::Header(format!("unknown grid field `{other}`"))),
            }
        }
        let velocity = match comps {
            [Some(u), Some(v), Some(w)] => Some(StaggeredVectorGrid::from_components(spec, u, v, w)?),
            [None, None, None] => None,
            _ => return Err(Error::Header("velocity needs all of u, v, w".into())),
        };
        Ok(Self { density, velocity })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

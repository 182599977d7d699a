//! Canonical-space signed distance and color fields, SDF-to-density
//! conversion, the texture filter and the eikonal regularizer.

mod marching;
mod tables;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{arr3, pairwise_sum, vec3, Error, Result, Vec3};

pub use marching::{extract_mesh, MAX_RESOLUTION, MIN_RESOLUTION};

/// Default Laplace scale of the density, in scene units.
pub const DEFAULT_BETA: f64 = 0.01;
/// Texture-filter ceiling and steepness.
pub const DEFAULT_GAMMA: f64 = 1.5;
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// A field with a signed distance (negative inside) and an rgb color.
pub trait SignedDistance: Sync {
    fn sdf(&self, p: &Vec3) -> f64;

    fn color(&self, _p: &Vec3) -> Vec3 {
        Vec3::repeat(1.0)
    }
}

/// Zero-mean Laplace CDF with scale `beta`.
fn laplace_cdf(x: f64, beta: f64) -> f64 {
    if x <= 0.0 {
        0.5 * (x / beta).exp()
    } else {
        1.0 - 0.5 * (-x / beta).exp()
    }
}

/// `amp · Φ_β(−d)`: saturates to `amp` deep inside, vanishes outside.
pub fn density(d: f64, beta: f64, amp: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("density scale beta must be positive, got {beta}")));
    }
    if !(amp >= 0.0) {
        return Err(Error::Parameter(format!("density amplitude must be nonnegative, got {amp}")));
    }
    Ok(amp * laplace_cdf(-d, beta))
}

/// `γ / (1 + e^{λd})`: weight of a sample's color, suppressing samples
/// outside the surface.
pub fn texture_filter(d: f64, gamma: f64, lambda: f64) -> f64 {
    gamma / (1.0 + (lambda * d).exp())
}

/// Mean of `(|∇sdf| − 1)²` over `samples`, with central differences of step `h`.
pub fn eikonal_residual<F: SignedDistance + ?Sized>(field: &F, samples: &[Vec3], h: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("eikonal residual needs samples"));
    }
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {h}")));
    }
    let terms: Vec<f64> = samples
        .par_iter()
        .map(|p| {
            let g = gradient(field, p, h);
            (g.norm() - 1.0).powi(2)
        })
        .collect();
    Ok(pairwise_sum(&terms) / samples.len() as f64)
}

pub fn gradient<F: SignedDistance + ?Sized>(field: &F, p: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = h;
        g[a] = (field.sdf(&(p + e)) - field.sdf(&(p - e))) / (2.0 * h);
    }
    g
}

/// Axis-aligned box, serialized as `[xmin, ymin, zmin, xmax, ymax, zmax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl TryFrom<[f64; 6]> for Aabb {
    type Error = Error;
    fn try_from(b: [f64; 6]) -> Result<Self> {
        Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))
    }
}

impl From<Aabb> for [f64; 6] {
    fn from(b: Aabb) -> Self {
        [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z]
    }
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(0..3).all(|a| min[a] < max[a]) {
            return Err(Error::Parameter(format!("empty bounds {min:?} .. {max:?}")));
        }
        Ok(Aabb { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Aabb { min: Vec3::repeat(-half), max: Vec3::repeat(half) }
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

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|a, _| p[a].clamp(self.min[a], self.max[a]))
    }

    fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    fn padded(&self, by: f64) -> Aabb {
        Aabb { min: self.min - Vec3::repeat(by), max: self.max + Vec3::repeat(by) }
    }
}

fn default_color() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

/// Analytic shapes; a scene of several primitives is their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_color")]
        color: [f64; 3],
    },
    /// Segment `a`–`b` swept by a ball of `radius`.
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
        #[serde(default = "default_color")]
        color: [f64; 3],
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default = "default_color")]
        color: [f64; 3],
    },
    Union {
        children: Vec<Primitive>,
    },
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, color: [f64; 3]) -> Self {
        Primitive::Sphere { center: arr3(&center), radius, color }
    }

    pub fn capsule(a: Vec3, b: Vec3, radius: f64, color: [f64; 3]) -> Self {
        Primitive::Capsule { a: arr3(&a), b: arr3(&b), radius, color }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, color: [f64; 3]) -> Self {
        Primitive::Box { center: arr3(&center), half_extents: arr3(&half_extents), color }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{what} must be positive, got {v}")))
            }
        };
        let color_ok = |c: &[f64; 3]| {
            if c.iter().all(|v| (0.0..=1.0).contains(v)) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("color {c:?} outside [0, 1]")))
            }
        };
        match self {
            Primitive::Sphere { radius, color, .. } | Primitive::Capsule { radius, color, .. } => {
                positive(*radius, "radius")?;
                color_ok(color)
            }
            Primitive::Box { half_extents, color, .. } => {
                for h in half_extents {
                    positive(*h, "box half extent")?;
                }
                color_ok(color)
            }
            Primitive::Union { children } => children.iter().try_for_each(|c| c.validate()),
        }
    }

    /// Signed distance and color of the closest part.
    pub fn eval(&self, p: &Vec3) -> (f64, Vec3) {
        match self {
            Primitive::Sphere { center, radius, color } => ((p - vec3(*center)).norm() - radius, vec3(*color)),
            Primitive::Capsule { a, b, radius, color } => {
                let (a, b) = (vec3(*a), vec3(*b));
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                ((p - (a + ab * t)).norm() - radius, vec3(*color))
            }
            Primitive::Box { center, half_extents, color } => {
                let q = (p - vec3(*center)).abs() - vec3(*half_extents);
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                (outside + inside, vec3(*color))
            }
            Primitive::Union { children } => children
                .iter()
                .map(|c| c.eval(p))
                .fold((f64::INFINITY, Vec3::zeros()), |acc, x| if x.0 < acc.0 { x } else { acc }),
        }
    }

    fn bounds(&self) -> Option<Aabb> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = vec3(*center);
                Some(Aabb { min: c - Vec3::repeat(*radius), max: c + Vec3::repeat(*radius) })
            }
            Primitive::Capsule { a, b, radius, .. } => {
                let (a, b) = (vec3(*a), vec3(*b));
                Some(Aabb { min: a.inf(&b) - Vec3::repeat(*radius), max: a.sup(&b) + Vec3::repeat(*radius) })
            }
            Primitive::Box { center, half_extents, .. } => {
                let (c, h) = (vec3(*center), vec3(*half_extents));
                Some(Aabb { min: c - h, max: c + h })
            }
            Primitive::Union { children } => {
                children.iter().filter_map(|c| c.bounds()).reduce(|a, b| a.union(&b))
            }
        }
    }
}

/// Node-sampled field on a regular lattice, interpolated trilinearly.
/// Nodes are ordered x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    dims: [usize; 3],
    bounds: Aabb,
    sdf: Vec<f64>,
    color: Option<Vec<Vec3>>,
}

impl GridField {
    pub fn new(dims: [usize; 3], bounds: Aabb, sdf: Vec<f64>, color: Option<Vec<Vec3>>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Parameter(format!("grid needs at least 2 nodes per axis, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if sdf.len() != n {
            return Err(Error::Dimension { expected: n, got: sdf.len() });
        }
        if let Some(c) = &color {
            if c.len() != n {
                return Err(Error::Dimension { expected: n, got: c.len() });
            }
        }
        if sdf.iter().any(|v| v.is_nan()) {
            return Err(Error::Input("grid sdf contains NaN".into()));
        }
        Ok(GridField { dims, bounds, sdf, color })
    }

    /// Sample another field at the lattice nodes.
    pub fn sample<F: SignedDistance + ?Sized>(field: &F, dims: [usize; 3], bounds: Aabb) -> Result<Self> {
        let nodes: Vec<Vec3> = (0..dims[0] * dims[1] * dims[2]).map(|i| node_position(dims, &bounds, i)).collect();
        let sdf = nodes.par_iter().map(|p| field.sdf(p)).collect();
        let color = nodes.par_iter().map(|p| field.color(p)).collect();
        GridField::new(dims, bounds, sdf, Some(color))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn node_values(&self) -> &[f64] {
        &self.sdf
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Cell corner index and fractional offsets; points outside are clamped.
    fn locate(&self, p: &Vec3) -> ([usize; 3], Vec3) {
        let mut base = [0; 3];
        let mut frac = Vec3::zeros();
        for a in 0..3 {
            let n = self.dims[a];
            let u = (p[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]) * (n - 1) as f64;
            let u = u.clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        (base, frac)
    }

    fn trilinear<T>(&self, p: &Vec3, values: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let ([i, j, k], f) = self.locate(p);
        let v = |di, dj, dk| values[self.index(i + di, j + dj, k + dk)];
        let lerp = |a: T, b: T, t: f64| a * (1.0 - t) + b * t;
        let x00 = lerp(v(0, 0, 0), v(1, 0, 0), f.x);
        let x10 = lerp(v(0, 1, 0), v(1, 1, 0), f.x);
        let x01 = lerp(v(0, 0, 1), v(1, 0, 1), f.x);
        let x11 = lerp(v(0, 1, 1), v(1, 1, 1), f.x);
        lerp(lerp(x00, x10, f.y), lerp(x01, x11, f.y), f.z)
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Vec<f64>> {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Parse(format!("raw float file has {} bytes, not a multiple of 4", bytes.len())));
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }

    pub fn write_raw(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
        let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        std::fs::write(path.as_ref(), bytes)?;
        Ok(())
    }
}

fn node_position(dims: [usize; 3], bounds: &Aabb, idx: usize) -> Vec3 {
    let i = idx % dims[0];
    let j = (idx / dims[0]) % dims[1];
    let k = idx / (dims[0] * dims[1]);
    let e = bounds.extent();
    bounds.min
        + Vec3::new(
            e.x * i as f64 / (dims[0] - 1) as f64,
            e.y * j as f64 / (dims[1] - 1) as f64,
            e.z * k as f64 / (dims[2] - 1) as f64,
        )
}

impl SignedDistance for GridField {
    /// Trilinear inside the lattice; outside, the clamped value plus the
    /// distance to the lattice box.
    fn sdf(&self, p: &Vec3) -> f64 {
        let q = self.bounds.clamp(p);
        self.trilinear(&q, &self.sdf) + (p - q).norm()
    }

    fn color(&self, p: &Vec3) -> Vec3 {
        match &self.color {
            Some(c) => self.trilinear(p, c).map(|v| v.clamp(0.0, 1.0)),
            None => Vec3::repeat(1.0),
        }
    }
}

/// Replaces the color of points with `sdf > threshold` by deterministic
/// per-position noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExteriorNoise {
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ExteriorNoise {
    pub fn color(&self, p: &Vec3) -> Vec3 {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for c in [p.x, p.y, p.z] {
            h = splitmix(h ^ c.to_bits());
        }
        Vec3::from_fn(|a, _| {
            h = splitmix(h.wrapping_add(a as u64));
            (h >> 11) as f64 / (1u64 << 53) as f64
        })
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Primitives(Vec<Primitive>),
    Grid(GridField),
}

/// Signed distance plus color over a canonical-space domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfScene {
    pub geometry: Geometry,
    pub bounds: Aabb,
    pub noise: Option<ExteriorNoise>,
}

#[derive(Deserialize)]
struct SceneRepr {
    #[serde(default)]
    primitives: Option<Vec<Primitive>>,
    #[serde(default)]
    grid: Option<GridRepr>,
    #[serde(default)]
    bounds: Option<Aabb>,
    #[serde(default)]
    exterior_noise: Option<ExteriorNoise>,
}

#[derive(Deserialize)]
struct GridRepr {
    dims: [usize; 3],
    bounds: Aabb,
    sdf: PathBuf,
    #[serde(default)]
    color: Option<PathBuf>,
}

impl SdfScene {
    /// Union of primitives; bounds default to their box padded by 10% of its
    /// largest side (the unit cube around the origin for an empty scene).
    pub fn from_primitives(primitives: Vec<Primitive>) -> Result<Self> {
        for p in &primitives {
            p.validate()?;
        }
        let bounds = match primitives.iter().filter_map(|p| p.bounds()).reduce(|a, b| a.union(&b)) {
            Some(b) => b.padded(0.1 * b.extent().max()),
            None => Aabb::cube(1.0),
        };
        Ok(SdfScene { geometry: Geometry::Primitives(primitives), bounds, noise: None })
    }

    pub fn from_grid(grid: GridField) -> Self {
        let bounds = *grid.bounds();
        SdfScene { geometry: Geometry::Grid(grid), bounds, noise: None }
    }

    pub fn with_bounds(mut self, bounds: Aabb) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_exterior_noise(mut self, noise: Option<ExteriorNoise>) -> Self {
        self.noise = noise;
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parse scene JSON; grid file paths are relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let r: SceneRepr = serde_json::from_str(text)?;
        let scene = match (r.primitives, r.grid) {
            (Some(p), None) => Self::from_primitives(p)?,
            (None, Some(g)) => {
                let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                let sdf = GridField::read_raw(resolve(&g.sdf))?;
                let color = match &g.color {
                    Some(c) => {
                        let raw = GridField::read_raw(resolve(c))?;
                        if raw.len() % 3 != 0 {
                            return Err(Error::Input("grid color file must hold rgb triples".into()));
                        }
                        Some(raw.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
                    }
                    None => None,
                };
                Self::from_grid(GridField::new(g.dims, g.bounds, sdf, color)?)
            }
            (None, None) => Self::from_primitives(Vec::new())?,
            (Some(_), Some(_)) => {
                return Err(Error::Input("scene must have either primitives or grid, not both".into()))
            }
        };
        let scene = match r.bounds {
            Some(b) => scene.with_bounds(b),
            None => scene,
        };
        Ok(scene.with_exterior_noise(r.exterior_noise))
    }

    fn eval(&self, p: &Vec3) -> (f64, Vec3) {
        match &self.geometry {
            Geometry::Primitives(ps) => ps
                .iter()
                .map(|pr| pr.eval(p))
                .fold((f64::INFINITY, Vec3::zeros()), |acc, x| if x.0 < acc.0 { x } else { acc }),
            Geometry::Grid(g) => (g.sdf(p), g.color(p)),
        }
    }

    /// Signed distance and color in one evaluation.
    pub fn sdf_color(&self, p: &Vec3) -> (f64, Vec3) {
        let (d, c) = self.eval(p);
        match &self.noise {
            Some(n) if d > n.threshold => (d, n.color(p)),
            _ => (d, c),
        }
    }
}

impl SignedDistance for SdfScene {
    fn sdf(&self, p: &Vec3) -> f64 {
        self.eval(p).0
    }

    fn color(&self, p: &Vec3) -> Vec3 {
        self.sdf_color(p).1
    }
}

//! Pixel to canonical-point correspondence by entropic optimal transport.
//!
//! Features are stored one item per column. The cost between a pixel and a
//! grid point is one minus their cosine similarity; the transport plan is
//! found with log-domain Sinkhorn iterations under uniform marginals.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::deform::FrameWarp;
use crate::field::Aabb;
use crate::{pairwise_sum, Error, Result, Vec3};

pub const FEATURE_DIM: usize = 16;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// `dim × n` embeddings, one column per pixel or canonical point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.nrows() == 0 {
            return Err(Error::Empty("feature matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains NaN or infinite values".into()));
        }
        if let Some(j) = m.column_iter().position(|c| c.norm() == 0.0) {
            return Err(Error::Input(format!("feature column {j} has zero norm")));
        }
        Ok(FeatureMatrix(m))
    }

    /// Columns given as slices of equal length.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let dim = cols.first().map(|c| c.len()).unwrap_or(0);
        if let Some(c) = cols.iter().find(|c| c.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: c.len() });
        }
        Self::new(DMatrix::from_fn(dim, cols.len(), |i, j| cols[j][i]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_matrix(path)?)
    }
}

/// Cosine similarity of every pixel column against every point column.
pub fn correlation(pixels: &FeatureMatrix, points: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if pixels.dim() != points.dim() {
        return Err(Error::Dimension { expected: pixels.dim(), got: points.dim() });
    }
    let unit = |m: &DMatrix<f64>| {
        let mut u = m.clone();
        for mut c in u.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        u
    };
    let m = unit(pixels.matrix()).transpose() * unit(points.matrix());
    Ok(m.map(|v| v.clamp(-1.0, 1.0)))
}

/// `1 − similarity`.
pub fn cost_from_similarity(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| 1.0 - v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Largest allowed row-marginal violation; columns are exact after
    /// every iteration.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { epsilon: DEFAULT_EPSILON, max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL }
    }
}

/// Nonnegative plan with (approximately) uniform row and column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub mass: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute deviation of any row or column sum from its target.
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.mass.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mass.ncols()
    }

    pub fn cost(&self, z: &DMatrix<f64>) -> f64 {
        self.mass.component_mul(z).sum()
    }

    /// Shannon entropy of row `i` after normalizing it to sum one.
    pub fn row_entropy(&self, i: usize) -> f64 {
        let row: Vec<f64> = self.mass.row(i).iter().copied().collect();
        entropy(&row)
    }

    /// `row,col,mass` for every positive entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,mass\n");
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let m = self.mass[(i, j)];
                if m > 0.0 {
                    let _ = writeln!(s, "{i},{j},{m:.9e}");
                }
            }
        }
        s
    }
}

/// Entropy of a nonnegative vector normalized to sum one.
pub fn entropy(w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    -w.iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>()
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropy-regularized transport with uniform marginals, by alternating
/// updates of the dual potentials in the log domain. When `epsilon` is small
/// against the cost range, the potentials are warm-started from a sequence
/// of halved regularizations beginning at the range; `max_iters` bounds each
/// stage and `iterations` counts all of them.
pub fn sinkhorn(cost: &DMatrix<f64>, opts: &SinkhornOptions) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("cost matrix must be finite".into()));
    }
    let range = cost.max() - cost.min();
    let mut stages = vec![opts.epsilon];
    while stages[stages.len() - 1] * 2.0 < range {
        let next = stages[stages.len() - 1] * 2.0;
        stages.push(next);
    }
    stages.reverse();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut row_err = f64::INFINITY;
    for &eps in &stages {
        let (it, err) = sinkhorn_stage(cost, eps, opts.max_iters, opts.tol, &mut f, &mut g)?;
        iterations += it;
        row_err = err;
    }
    let eps = opts.epsilon;
    let mass = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    if mass.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("sinkhorn plan contains NaN".into()));
    }
    let col_err = mass.column_iter().map(|c| (c.sum() - 1.0 / m as f64).abs()).fold(0.0, f64::max);
    let converged = row_err <= opts.tol;
    if !converged {
        log::warn!("sinkhorn stopped after {iterations} iterations with row error {row_err:.3e}");
    }
    Ok(TransportPlan { mass, converged, iterations, marginal_error: row_err.max(col_err) })
}

/// Iterate at a fixed `eps` until the row marginals are within `tol`.
fn sinkhorn_stage(
    cost: &DMatrix<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
    f: &mut [f64],
    g: &mut [f64],
) -> Result<(usize, f64)> {
    let (n, m) = cost.shape();
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let mut row_err = f64::INFINITY;
    let mut it = 0;
    while it < max_iters {
        it += 1;
        for i in 0..n {
            f[i] = eps * log_a - eps * logsumexp((0..m).map(|j| (g[j] - cost[(i, j)]) / eps));
        }
        for j in 0..m {
            g[j] = eps * log_b - eps * logsumexp((0..n).map(|i| (f[i] - cost[(i, j)]) / eps));
        }
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("sinkhorn potentials diverged at eps {eps:e}")));
        }
        row_err = (0..n)
            .map(|i| {
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp()).sum();
                (s - 1.0 / n as f64).abs()
            })
            .fold(0.0, f64::max);
        if row_err <= tol {
            break;
        }
    }
    Ok((it, row_err))
}

/// Axis-aligned lattice of canonical points, ordered x-fastest, serialized
/// as `{"dims":[nx,ny,nz],"bounds":[xmin,ymin,zmin,xmax,ymax,zmax]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct CanonicalGrid {
    dims: [usize; 3],
    bounds: Aabb,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dims: [usize; 3],
    bounds: Aabb,
}

impl TryFrom<GridRepr> for CanonicalGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        CanonicalGrid::new(r.dims, r.bounds)
    }
}

impl From<CanonicalGrid> for GridRepr {
    fn from(g: CanonicalGrid) -> Self {
        GridRepr { dims: g.dims, bounds: g.bounds }
    }
}

impl Default for CanonicalGrid {
    fn default() -> Self {
        CanonicalGrid { dims: [20; 3], bounds: Aabb::cube(1.0) }
    }
}

impl CanonicalGrid {
    pub fn new(dims: [usize; 3], bounds: Aabb) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Parameter(format!("grid dims must be positive, got {dims:?}")));
        }
        Ok(CanonicalGrid { dims, bounds })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `idx`; an axis with a single node sits at the box center.
    pub fn point(&self, idx: usize) -> Vec3 {
        let [nx, ny, _] = self.dims;
        let ijk = [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
        Vec3::from_fn(|a, _| {
            let (lo, hi) = (self.bounds.min[a], self.bounds.max[a]);
            if self.dims[a] == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * ijk[a] as f64 / (self.dims[a] - 1) as f64
            }
        })
    }

    pub fn points(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Edge length of one cell along each axis.
    pub fn cell(&self) -> Vec3 {
        Vec3::from_fn(|a, _| {
            let n = self.dims[a];
            if n > 1 {
                self.bounds.extent()[a] / (n - 1) as f64
            } else {
                0.0
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path.as_ref())?)?)
    }
}

/// Row-stochastic weights times grid points, one result per row.
fn weighted_points(weights: &DMatrix<f64>, grid: &CanonicalGrid) -> Result<Vec<Vec3>> {
    if weights.ncols() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: weights.ncols() });
    }
    let pts = grid.points();
    weights
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.sum();
            if !(total > 0.0) {
                return Err(Error::Numerical(format!("row {i} carries no mass")));
            }
            Ok(row.iter().zip(&pts).fold(Vec3::zeros(), |acc, (w, p)| acc + p * (w / total)))
        })
        .collect()
}

/// Per-pixel canonical point: each plan row renormalized to a convex
/// combination of grid points.
pub fn expected_match(plan: &TransportPlan, grid: &CanonicalGrid) -> Result<Vec<Vec3>> {
    weighted_points(&plan.mass, grid)
}

/// Row-wise softmax of `similarity / temperature`.
pub fn softargmax_weights(similarity: &DMatrix<f64>, temperature: f64) -> Result<DMatrix<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    let mut w = similarity / temperature;
    for mut row in w.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    Ok(w)
}

pub fn softargmax_match(similarity: &DMatrix<f64>, grid: &CanonicalGrid, temperature: f64) -> Result<Vec<Vec3>> {
    weighted_points(&softargmax_weights(similarity, temperature)?, grid)
}

/// Point-matching and reprojection losses of matched canonical points:
/// `Σ |matched − rendered|²` and `Σ |project(warp(matched)) − pixel|²`.
pub fn match_losses(
    matched: &[Vec3],
    rendered: &[Vec3],
    warp: &FrameWarp,
    pixels: &[[f64; 2]],
) -> Result<(f64, f64)> {
    if rendered.len() != matched.len() {
        return Err(Error::Dimension { expected: matched.len(), got: rendered.len() });
    }
    if pixels.len() != matched.len() {
        return Err(Error::Dimension { expected: matched.len(), got: pixels.len() });
    }
    let point_terms: Vec<f64> = matched.iter().zip(rendered).map(|(a, b)| (a - b).norm_squared()).collect();
    let proj_terms = matched
        .iter()
        .zip(pixels)
        .map(|(x, px)| {
            let [u, v] = warp.camera.project_camera_space(&warp.to_observed(x)?)?;
            Ok((u - px[0]).powi(2) + (v - px[1]).powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((pairwise_sum(&point_terms), pairwise_sum(&proj_terms)))
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    dims: [usize; 2],
    #[serde(default = "row_major")]
    layout: String,
}

fn row_major() -> String {
    "row-major".into()
}

/// Matrix from CSV (one line per row) or, for any other extension, the
/// binary form written by [`encode_raw_matrix`].
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_csv_matrix(&String::from_utf8_lossy(&bytes))
    } else {
        parse_raw_matrix(&bytes)
    }
}

pub fn parse_csv_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("csv row {i}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Dimension { expected: cols, got: r.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// One JSON header line `{"dims":[rows,cols],"layout":"row-major"}` followed
/// by little-endian f32 values.
pub fn encode_raw_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let header = RawHeader { dims: [m.nrows(), m.ncols()], layout: row_major() };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend((*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn parse_raw_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Parse("raw matrix lacks a header line".into()))?;
    let header: RawHeader = serde_json::from_slice(&bytes[..nl])?;
    let [r, c] = header.dims;
    let body = &bytes[nl + 1..];
    if body.len() != 4 * r * c {
        return Err(Error::Parse(format!("raw matrix body has {} bytes, expected {}", body.len(), 4 * r * c)));
    }
    let vals: Vec<f64> =
        body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    match header.layout.as_str() {
        "row-major" => Ok(DMatrix::from_row_slice(r, c, &vals)),
        "column-major" => Ok(DMatrix::from_column_slice(r, c, &vals)),
        other => Err(Error::Parse(format!("unknown layout {other:?}"))),
    }
}

/// Solves independent problems in parallel; results keep the input order.
pub fn sinkhorn_batch(costs: &[DMatrix<f64>], opts: &SinkhornOptions) -> Vec<Result<TransportPlan>> {
    use rayon::prelude::*;
    costs.par_iter().map(|c| sinkhorn(c, opts)).collect()
}

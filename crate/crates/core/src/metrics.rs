//! Mesh comparison: Chamfer distance, F-score and surface sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::{pairwise_sum, Error, Result, Vec3};

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.02;
/// Below this many target points, nearest-neighbor queries scan linearly.
pub const BRUTE_FORCE_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferMode {
    /// Sum over both directions of all minimum squared distances.
    Sum,
    /// Mean minimum squared distance per direction, averaged over the two directions.
    Mean,
}

type Cell = [i64; 3];

/// Uniform hash grid over a point set.
struct PointGrid<'a> {
    points: &'a [Vec3],
    h: f64,
    cells: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vec3], h: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, h);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            cells.entry(c).or_default().push(i);
        }
        PointGrid { points, h, cells, lo, hi }
    }

    fn cell_of(p: &Vec3, h: f64) -> Cell {
        [(p.x / h).floor() as i64, (p.y / h).floor() as i64, (p.z / h).floor() as i64]
    }

    fn scan(&self, cell: &Cell, q: &Vec3, best: &mut f64) {
        if let Some(idx) = self.cells.get(cell) {
            for &i in idx {
                let d = (self.points[i] - q).norm_squared();
                if d < *best {
                    *best = d;
                }
            }
        }
    }

    /// Exact minimum squared distance, searching rings of cells outward.
    fn nearest_sq(&self, q: &Vec3) -> f64 {
        let c = Self::cell_of(q, self.h);
        // Rings closer than the occupied block hold nothing.
        let gap = (0..3)
            .map(|a| (self.lo[a] - c[a]).max(c[a] - self.hi[a]).max(0))
            .max()
            .unwrap();
        let reach = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap();
        let mut best = f64::INFINITY;
        let mut r = gap;
        loop {
            let range = |a: usize| ((c[a] - r).max(self.lo[a]), (c[a] + r).min(self.hi[a]));
            let (x0, x1) = range(0);
            let (y0, y1) = range(1);
            let (z0, z1) = range(2);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    let on_shell = (z - c[2]).abs() == r || (y - c[1]).abs() == r;
                    if on_shell {
                        for x in x0..=x1 {
                            self.scan(&[x, y, z], q, &mut best);
                        }
                    } else {
                        for x in [c[0] - r, c[0] + r] {
                            if x >= x0 && x <= x1 {
                                self.scan(&[x, y, z], q, &mut best);
                            }
                            if r == 0 {
                                break;
                            }
                        }
                    }
                }
            }
            // Points outside the searched block are at least r·h away.
            let bound = r as f64 * self.h;
            if best <= bound * bound || r >= reach {
                return best;
            }
            r += 1;
        }
    }

    /// Whether any point lies within `tau`; requires `h ≥ tau`.
    fn any_within(&self, q: &Vec3, tau: f64) -> bool {
        let c = Self::cell_of(q, self.h);
        let t2 = tau * tau;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(idx) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if idx.iter().any(|&i| (self.points[i] - q).norm_squared() <= t2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn bbox(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn density_cell(points: &[Vec3]) -> f64 {
    let (lo, hi) = bbox(points);
    let ext = hi - lo;
    let side = ext.max();
    if side <= 0.0 {
        return 1.0;
    }
    // Aim for about one point per cell over the occupied extent.
    let vol = ext.iter().map(|e| e.max(side * 1e-3)).product::<f64>();
    (vol / points.len() as f64).cbrt().max(side * 1e-6)
}

/// Minimum squared distance from each query to `targets`.
fn nearest_sq_all(queries: &[Vec3], targets: &[Vec3]) -> Vec<f64> {
    if targets.len() < BRUTE_FORCE_LIMIT {
        return queries
            .par_iter()
            .map(|q| targets.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
    }
    let grid = PointGrid::new(targets, density_cell(targets));
    queries.par_iter().map(|q| grid.nearest_sq(q)).collect()
}

fn check_nonempty(pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Empty("predicted point set"));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth point set"));
    }
    Ok(())
}

/// Bidirectional Chamfer distance in squared units.
pub fn chamfer(pred: &[Vec3], gt: &[Vec3], mode: ChamferMode) -> Result<f64> {
    check_nonempty(pred, gt)?;
    let forward = pairwise_sum(&nearest_sq_all(pred, gt));
    let backward = pairwise_sum(&nearest_sq_all(gt, pred));
    Ok(match mode {
        ChamferMode::Sum => forward + backward,
        ChamferMode::Mean => 0.5 * (forward / pred.len() as f64 + backward / gt.len() as f64),
    })
}

fn fraction_within(queries: &[Vec3], targets: &[Vec3], tau: f64) -> f64 {
    let hits: usize = if targets.len() < BRUTE_FORCE_LIMIT {
        let t2 = tau * tau;
        queries
            .par_iter()
            .filter(|q| targets.iter().any(|p| (p - *q).norm_squared() <= t2))
            .count()
    } else {
        let grid = PointGrid::new(targets, 2.0 * tau);
        queries.par_iter().filter(|q| grid.any_within(q, tau)).count()
    };
    hits as f64 / queries.len() as f64
}

/// F-score in percent at `threshold_fraction` of the ground-truth bounding-box diagonal.
pub fn f_score(pred: &[Vec3], gt: &[Vec3], threshold_fraction: f64) -> Result<f64> {
    check_nonempty(pred, gt)?;
    if !(threshold_fraction > 0.0) || !threshold_fraction.is_finite() {
        return Err(Error::Parameter(format!("threshold fraction must be positive, got {threshold_fraction}")));
    }
    let (lo, hi) = bbox(gt);
    let diag = (hi - lo).norm();
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::Input(format!("ground-truth bounding box is degenerate (diagonal {diag})")));
    }
    let tau = threshold_fraction * diag;
    let precision = fraction_within(pred, gt, tau);
    let recall = fraction_within(gt, pred, tau);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Input(format!("mesh surface area must be positive, got {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        out.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer_sum: f64,
    pub chamfer_mean: f64,
    pub f_score_2pct: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples both meshes with the same seed and compares them, so identical
/// meshes give identical samples. Inputs are assumed pre-aligned.
pub fn evaluate_meshes(pred: &Mesh, gt: &Mesh, n_samples: usize, seed: u64) -> Result<MetricsReport> {
    if n_samples == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let p = sample_surface(pred, n_samples, seed)?;
    let g = sample_surface(gt, n_samples, seed)?;
    Ok(MetricsReport {
        chamfer_sum: chamfer(&p, &g, ChamferMode::Sum)?,
        chamfer_mean: chamfer(&p, &g, ChamferMode::Mean)?,
        f_score_2pct: f_score(&p, &g, DEFAULT_THRESHOLD_FRACTION)?,
        n_samples,
        seed,
    })
}

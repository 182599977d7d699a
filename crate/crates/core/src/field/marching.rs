//! Marching cubes over the scene bounds.

use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};
use super::{SdfScene, SignedDistance};
use crate::mesh::Mesh;
use crate::{Error, Result, Vec3};

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 64;

/// Zero level set of `scene` sampled on `resolution` nodes per axis across
/// its bounds. Vertices are welded along lattice edges and emitted in cell
/// order; faces wind outward. A field without a sign change gives an empty
/// mesh.
pub fn extract_mesh(scene: &SdfScene, resolution: usize) -> Result<Mesh> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::Parameter(format!(
            "resolution {resolution} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]"
        )));
    }
    let n = resolution;
    let b = scene.bounds;
    let step = b.extent() / (n - 1) as f64;
    let node = |i: usize, j: usize, k: usize| {
        b.min + Vec3::new(step.x * i as f64, step.y * j as f64, step.z * k as f64)
    };
    let values: Vec<f64> = (0..n * n * n)
        .into_par_iter()
        .map(|idx| scene.sdf(&node(idx % n, (idx / n) % n, idx / (n * n))))
        .collect();
    let value = |i: usize, j: usize, k: usize| values[i + n * (j + n * k)];

    // Edge key: lower node index times 3 plus axis.
    let slabs: Vec<Vec<[usize; 3]>> = (0..n - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..n - 1 {
                for i in 0..n - 1 {
                    let mut case = 0usize;
                    for (c, off) in CORNERS.iter().enumerate() {
                        if value(i + off[0], j + off[1], k + off[2]) < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let key = |e: usize| {
                        let [a, c] = EDGES[e];
                        let (pa, pc) = (CORNERS[a], CORNERS[c]);
                        let axis = (0..3).find(|&ax| pa[ax] != pc[ax]).expect("axis-aligned edge");
                        let lo = [pa[0].min(pc[0]) + i, pa[1].min(pc[1]) + j, pa[2].min(pc[2]) + k];
                        (lo[0] + n * (lo[1] + n * lo[2])) * 3 + axis
                    };
                    for t in TRI_TABLE[case].chunks(3) {
                        if t[0] < 0 {
                            break;
                        }
                        tris.push([key(t[0] as usize), key(t[1] as usize), key(t[2] as usize)]);
                    }
                }
            }
            tris
        })
        .collect();

    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for tri in slabs.into_iter().flatten() {
        let mut f = [0usize; 3];
        for (slot, &key) in f.iter_mut().zip(&tri) {
            *slot = *index.entry(key).or_insert_with(|| {
                let axis = key % 3;
                let lo = key / 3;
                let (i, j, k) = (lo % n, (lo / n) % n, lo / (n * n));
                let (mut i2, mut j2, mut k2) = (i, j, k);
                match axis {
                    0 => i2 += 1,
                    1 => j2 += 1,
                    _ => k2 += 1,
                }
                let (va, vb) = (value(i, j, k), value(i2, j2, k2));
                let t = va / (va - vb);
                let (pa, pb) = (node(i, j, k), node(i2, j2, k2));
                vertices.push(pa + (pb - pa) * t);
                vertices.len() - 1
            });
        }
        faces.push(f);
    }
    let mut mesh = Mesh { vertices, faces };
    if mesh.signed_volume() < 0.0 {
        mesh.flip_faces();
    }
    Ok(mesh)
}

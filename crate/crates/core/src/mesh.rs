//! Indexed triangle meshes and Wavefront OBJ I/O.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Input(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume (divergence theorem); positive for outward-facing
    /// counter-clockwise winding on a closed mesh.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Number of undirected edges not shared by exactly two faces.
    pub fn boundary_edge_count(&self) -> usize {
        let mut counts = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        counts.values().filter(|&&c| c != 2).count()
    }

    pub fn flip_faces(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    /// Capped cylinder of `radius` around the z axis spanning
    /// `z ∈ [-half_height, half_height]`, with `radial` vertices per ring and
    /// `segments + 1` rings. Ring `r` occupies vertices
    /// `r·radial .. (r+1)·radial`; the two cap centers come last.
    pub fn cylinder(radius: f64, half_height: f64, radial: usize, segments: usize) -> Mesh {
        let mut vertices = Vec::with_capacity((segments + 1) * radial + 2);
        for r in 0..=segments {
            let z = -half_height + 2.0 * half_height * r as f64 / segments as f64;
            for k in 0..radial {
                let phi = std::f64::consts::TAU * k as f64 / radial as f64;
                vertices.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), z));
            }
        }
        let bottom = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, -half_height));
        let top = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, half_height));

        let idx = |r: usize, k: usize| r * radial + (k % radial);
        let mut faces = Vec::new();
        for r in 0..segments {
            for k in 0..radial {
                let (a, b, c, d) = (idx(r, k), idx(r, k + 1), idx(r + 1, k + 1), idx(r + 1, k));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        for k in 0..radial {
            faces.push([bottom, idx(0, k + 1), idx(0, k)]);
            faces.push([top, idx(segments, k), idx(segments, k + 1)]);
        }
        Mesh { vertices, faces }
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<Mesh> {
        let file = std::fs::File::open(path.as_ref())?;
        parse_obj(std::io::BufReader::new(file))
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        f.write_all(self.to_obj_string().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// OBJ text with 9 significant digits per coordinate.
    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", format_g9(v.x), format_g9(v.y), format_g9(v.z));
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }
}

/// Parses `v` and `f` records; polygons are fan-triangulated, texture and
/// normal indices are ignored, negative (relative) indices are supported.
pub fn parse_obj(reader: impl BufRead) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Parse(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| Error::Parse(format!("line {}: bad face index {tok:?}: {e}", lineno + 1)))?;
                    let n = vertices.len() as i64;
                    let abs = if i < 0 { n + i } else { i - 1 };
                    if abs < 0 || abs >= n {
                        return Err(Error::Parse(format!("line {}: face index {i} out of range", lineno + 1)));
                    }
                    idx.push(abs as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face needs 3 indices", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(Mesh { vertices, faces })
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros removed.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mant = strip_zeros(mant);
        format!("{mant}e{exp}")
    } else {
        let decimals = (8 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

//! Synthetic solids with known flat ground truth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{det6, Frame, TetMesh, Vec3};

/// Ground-truth role of a generated vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceLabel {
    /// Convex side (larger bend radius).
    Outer,
    /// Concave side.
    Inner,
    /// Thin side walls / rim.
    Side,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BentSlabSpec {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    /// Total bend angle in radians; 0 gives an axis-aligned box.
    pub bend_angle: f64,
    pub resolution: [usize; 3],
}

impl BentSlabSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.thickness > 0.0) {
            return Err(Error::InvalidParameter("slab dimensions must be positive".into()));
        }
        if !(0.0..2.0 * PI).contains(&self.bend_angle) {
            return Err(Error::InvalidParameter(format!(
                "bend angle must lie in [0, 2pi), got {}",
                self.bend_angle
            )));
        }
        if self.resolution.iter().any(|&r| r == 0) {
            return Err(Error::InvalidParameter("resolution must be >= 1 per axis".into()));
        }
        if self.bend_angle > 0.0 && self.length / self.bend_angle <= self.thickness / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "bend radius {} does not exceed half the thickness {}; the slab would self-intersect",
                self.length / self.bend_angle,
                self.thickness / 2.0
            )));
        }
        Ok(())
    }

    pub fn bend_radius(&self) -> Option<f64> {
        (self.bend_angle > 0.0).then(|| self.length / self.bend_angle)
    }

    /// Position of a flat-slab point after bending.
    pub fn bend(&self, flat: Vec3) -> Vec3 {
        match self.bend_radius() {
            None => flat,
            Some(r) => {
                let a = flat.x / r - self.bend_angle / 2.0;
                let rho = r + flat.z;
                Vec3::new(rho * a.sin(), flat.y, rho * a.cos() - r)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub outer_radius: f64,
    pub thickness: f64,
    /// Number of latitude rings from pole to rim.
    pub rings: usize,
    /// Number of tet layers through the thickness.
    pub layers: usize,
}

impl ShellSpec {
    pub fn analytic_volume(&self) -> f64 {
        let r = self.outer_radius - self.thickness;
        2.0 / 3.0 * PI * (self.outer_radius.powi(3) - r.powi(3))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    BentSlab(BentSlabSpec),
    HemisphericalShell(ShellSpec),
}

/// A generated mesh plus everything the JSON sidecar records.
#[derive(Debug, Clone)]
pub struct SynthMesh {
    pub mesh: TetMesh,
    pub kind: SynthKind,
    pub labels: Vec<SurfaceLabel>,
    /// Exact flat configuration per vertex, when one exists.
    pub reference_flat: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub num_vertices: usize,
    pub num_tets: usize,
    pub labels: Vec<SurfaceLabel>,
    pub reference_flat: Option<Vec<[f64; 3]>>,
}

impl SynthMesh {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            kind: self.kind.clone(),
            num_vertices: self.mesh.num_vertices(),
            num_tets: self.mesh.num_tets(),
            labels: self.labels.clone(),
            reference_flat: self
                .reference_flat
                .as_ref()
                .map(|r| r.iter().map(|p| [p.x, p.y, p.z]).collect()),
        }
    }
}

/// Orders a tet positively with respect to `pos`.
fn oriented(mut t: [usize; 4], pos: &[Vec3]) -> [usize; 4] {
    if det6(&t.map(|v| pos[v])) < 0.0 {
        t.swap(2, 3);
    }
    t
}

/// Six Kuhn tets per hex cell, all sharing the cell's (0,0,0)-(1,1,1) diagonal.
pub fn kuhn_grid(dims: [usize; 3], reference: &[Vec3]) -> Vec<[usize; 4]> {
    let [nx, ny, nz] = dims;
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(i, j, k); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(oriented(t, reference));
                }
            }
        }
    }
    tets
}

pub fn bent_slab(spec: &BentSlabSpec) -> Result<SynthMesh> {
    spec.validate()?;
    let [nx, ny, nz] = spec.resolution;
    let mut flat = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    let mut labels = Vec::with_capacity(flat.capacity());
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                flat.push(Vec3::new(
                    spec.length * i as f64 / nx as f64,
                    spec.width * j as f64 / ny as f64,
                    spec.thickness * (k as f64 / nz as f64 - 0.5),
                ));
                labels.push(if k == nz {
                    SurfaceLabel::Outer
                } else if k == 0 {
                    SurfaceLabel::Inner
                } else if i == 0 || i == nx || j == 0 || j == ny {
                    SurfaceLabel::Side
                } else {
                    SurfaceLabel::Interior
                });
            }
        }
    }
    let tets = kuhn_grid(spec.resolution, &flat);
    let vertices: Vec<Vec3> = flat.iter().map(|&p| spec.bend(p)).collect();
    let (mesh, reoriented) = TetMesh::new(vertices, tets, Frame::Original)?;
    debug_assert_eq!(reoriented, 0);
    Ok(SynthMesh {
        mesh,
        kind: SynthKind::BentSlab(*spec),
        labels,
        reference_flat: Some(flat),
    })
}

/// Axis-aligned box `[0,L] x [0,W] x [-T/2, T/2]`.
pub fn axis_box(length: f64, width: f64, thickness: f64, resolution: [usize; 3]) -> Result<SynthMesh> {
    bent_slab(&BentSlabSpec {
        length,
        width,
        thickness,
        bend_angle: 0.0,
        resolution,
    })
}

/// Triangulated unit hemisphere (z >= 0) made of concentric rings:
/// ring `i` holds `6 i` vertices. Returns directions and triangles.
fn hemisphere_rings(rings: usize) -> (Vec<Vec3>, Vec<[usize; 3]>, usize) {
    let mut dirs = vec![Vec3::z()];
    let mut start = vec![0usize];
    for i in 1..=rings {
        start.push(dirs.len());
        let theta = i as f64 / rings as f64 * PI / 2.0;
        let n = 6 * i;
        for j in 0..n {
            let psi = 2.0 * PI * j as f64 / n as f64;
            dirs.push(Vec3::new(theta.sin() * psi.cos(), theta.sin() * psi.sin(), theta.cos()));
        }
    }
    let mut tris = Vec::new();
    for i in 1..=rings {
        let (na, nb) = (if i == 1 { 1 } else { 6 * (i - 1) }, 6 * i);
        let (sa, sb) = (start[i - 1], start[i]);
        let (mut a, mut b) = (0usize, 0usize);
        // Zipper the two rings together by azimuth.
        while a < na || b < nb {
            let next_a = if na == 1 { f64::INFINITY } else { (a + 1) as f64 / na as f64 };
            let next_b = (b + 1) as f64 / nb as f64;
            let va = sa + a % na;
            let vb = sb + b % nb;
            if a < na && na > 1 && next_a <= next_b {
                tris.push([va, vb, sa + (a + 1) % na]);
                a += 1;
            } else {
                tris.push([va, vb, sb + (b + 1) % nb]);
                b += 1;
                if na == 1 && b == nb {
                    a = na;
                }
            }
        }
    }
    (dirs, tris, start[rings])
}

pub fn hemispherical_shell(spec: &ShellSpec) -> Result<SynthMesh> {
    if !(spec.outer_radius > 0.0 && spec.thickness > 0.0 && spec.thickness < spec.outer_radius) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < thickness < radius, got thickness {} and radius {}",
            spec.thickness, spec.outer_radius
        )));
    }
    if spec.rings == 0 || spec.layers == 0 {
        return Err(Error::InvalidParameter("rings and layers must be >= 1".into()));
    }
    let (dirs, tris, rim_start) = hemisphere_rings(spec.rings);
    let ns = dirs.len();
    let inner = spec.outer_radius - spec.thickness;
    let mut vertices = Vec::with_capacity(ns * (spec.layers + 1));
    let mut labels = Vec::with_capacity(vertices.capacity());
    for layer in 0..=spec.layers {
        let r = inner + spec.thickness * layer as f64 / spec.layers as f64;
        for (s, d) in dirs.iter().enumerate() {
            vertices.push(d * r);
            labels.push(if layer == spec.layers {
                SurfaceLabel::Outer
            } else if layer == 0 {
                SurfaceLabel::Inner
            } else if s >= rim_start {
                SurfaceLabel::Side
            } else {
                SurfaceLabel::Interior
            });
        }
    }
    let mut tets = Vec::with_capacity(3 * tris.len() * spec.layers);
    for layer in 0..spec.layers {
        for t in &tris {
            let mut s = *t;
            s.sort_unstable();
            let [a, b, c] = s.map(|v| v + layer * ns);
            let [a1, b1, c1] = s.map(|v| v + (layer + 1) * ns);
            // Quad-face diagonals always start at the face's smallest index,
            // which keeps neighbouring prisms conforming.
            for tet in [[a, b, c, c1], [a, b, b1, c1], [a, a1, b1, c1]] {
                tets.push(oriented(tet, &vertices));
            }
        }
    }
    let (mesh, _) = TetMesh::new(vertices, tets, Frame::Original)?;
    Ok(SynthMesh {
        mesh,
        kind: SynthKind::HemisphericalShell(*spec),
        labels,
        reference_flat: None,
    })
}

pub fn generate(kind: &SynthKind) -> Result<SynthMesh> {
    match kind {
        SynthKind::BentSlab(s) => bent_slab(s),
        SynthKind::HemisphericalShell(s) => hemispherical_shell(s),
    }
}

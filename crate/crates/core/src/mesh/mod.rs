//! Tetrahedral meshes, their boundary topology and file formats.

mod io;
mod topology;

pub use io::{
    load_mesh, load_tetgen, load_vtk, tetgen_paths, write_tetgen, write_vtk, write_vtk_polydata, FieldLocation,
    LoadedMesh, MeshFormat, VtkField,
};
pub use topology::{boundary_topology, vertex_normals, BoundaryTopology};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Coordinate frame a mesh lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Original,
    Template,
}

/// A tetrahedral mesh with positively oriented tets.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    frame: Frame,
}

/// Edge matrix `[x1 - x0, x2 - x0, x3 - x0]`, i.e. `X_k B`.
#[inline]
pub fn edge_matrix(p: &[Vec3; 4]) -> Matrix3<f64> {
    Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]])
}

/// Six times the signed volume of a tet.
#[inline]
pub fn det6(p: &[Vec3; 4]) -> f64 {
    let a = p[1] - p[0];
    let b = p[2] - p[0];
    let c = p[3] - p[0];
    a.dot(&b.cross(&c))
}

fn max_edge(p: &[Vec3; 4]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            m = m.max((p[i] - p[j]).norm());
        }
    }
    m
}

impl TetMesh {
    /// Validates indices and volumes, flipping negatively oriented tets.
    ///
    /// Returns the mesh and the number of reoriented tets. Zero-volume tets
    /// and open or non-manifold boundaries are rejected.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>, frame: Frame) -> Result<(Self, usize)> {
        let n = vertices.len();
        if tets.is_empty() {
            return Err(Error::InvalidMesh("mesh has no tetrahedra".into()));
        }
        if let Some((i, v)) = vertices.iter().enumerate().find(|(_, v)| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} has non-finite coordinates {v:?}")));
        }
        let mut reoriented = 0;
        for (k, t) in tets.iter_mut().enumerate() {
            if let Some(&bad) = t.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "tet {k} references vertex {bad}, but the mesh has {n} vertices"
                )));
            }
            for i in 0..4 {
                for j in i + 1..4 {
                    if t[i] == t[j] {
                        return Err(Error::InvalidMesh(format!("tet {k} repeats vertex {}", t[i])));
                    }
                }
            }
            let p = t.map(|v| vertices[v]);
            let d = det6(&p);
            let scale = max_edge(&p);
            if d.abs() <= 1e-12 * scale * scale * scale {
                return Err(Error::DegenerateTet(k));
            }
            if d < 0.0 {
                t.swap(2, 3);
                reoriented += 1;
            }
        }
        let mesh = TetMesh {
            vertices,
            tets,
            frame,
        };
        boundary_topology(&mesh)?;
        Ok((mesh, reoriented))
    }

    /// Same connectivity with new coordinates, without re-validation.
    ///
    /// Used for mapped configurations, which may be arbitrarily deformed.
    pub fn with_vertices(&self, vertices: Vec<Vec3>, frame: Frame) -> Self {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count must not change");
        TetMesh {
            vertices,
            tets: self.tets.clone(),
            frame,
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, k: usize) -> [Vec3; 4] {
        self.tets[k].map(|v| self.vertices[v])
    }

    pub fn signed_volume(&self, k: usize) -> f64 {
        det6(&self.tet_points(k)) / 6.0
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.tets.len()).map(|k| self.signed_volume(k)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes().iter().sum()
    }

    pub fn min_signed_volume(&self) -> f64 {
        self.volumes().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox_of(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        let s: Vec3 = self.vertices.iter().sum();
        s / self.vertices.len() as f64
    }

    /// All unique edges as sorted vertex pairs, in lexicographic order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = Vec::with_capacity(self.tets.len() * 6);
        for t in &self.tets {
            for i in 0..4 {
                for j in i + 1..4 {
                    let (a, b) = (t[i].min(t[j]), t[i].max(t[j]));
                    e.push([a, b]);
                }
            }
        }
        e.sort_unstable();
        e.dedup();
        e
    }
}

pub fn bbox_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn unit_tet() -> TetMesh {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        TetMesh::new(v, vec![[0, 1, 2, 3]], Frame::Original).unwrap().0
    }

    /// Icosahedron subdivided `levels` times, coned to the origin.
    pub fn ball(levels: usize) -> TetMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut f: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid = std::collections::HashMap::new();
            let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| -> usize {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) / 2.0).normalize());
                    v.len() - 1
                })
            };
            let mut nf = Vec::with_capacity(f.len() * 4);
            for &[a, b, c] in &f {
                let ab = midpoint(a, b, &mut v);
                let bc = midpoint(b, c, &mut v);
                let ca = midpoint(c, a, &mut v);
                nf.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            f = nf;
        }
        let center = v.len();
        v.push(Vec3::zeros());
        let tets = f.iter().map(|&[a, b, c]| [center, a, b, c]).collect();
        TetMesh::new(v, tets, Frame::Original).unwrap().0
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn unit_tet_volume() {
        let m = unit_tet();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_tets(), 1);
        assert!((m.signed_volume(0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn negative_tet_is_reoriented() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let (m, flipped) = TetMesh::new(v, vec![[0, 2, 1, 3]], Frame::Original).unwrap();
        assert_eq!(flipped, 1);
        assert!(m.signed_volume(0) > 0.0);
    }

    #[test]
    fn zero_volume_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        let err = TetMesh::new(v, vec![[0, 1, 2, 3]], Frame::Original).unwrap_err();
        assert!(matches!(err, Error::DegenerateTet(0)));
    }

    #[test]
    fn bad_index_and_repeat_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(TetMesh::new(v.clone(), vec![[0, 1, 2, 4]], Frame::Original).is_err());
        assert!(TetMesh::new(v, vec![[0, 1, 1, 3]], Frame::Original).is_err());
    }

    #[test]
    fn two_tets_sharing_only_an_edge_are_non_manifold() {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::z(),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
        ];
        // Edge (0,1) is shared by two tets and nothing else, so it borders
        // four boundary triangles.
        let r = TetMesh::new(v, vec![[0, 1, 2, 3], [0, 1, 4, 5]], Frame::Original);
        assert!(matches!(r, Err(Error::NonManifoldBoundary(_))));
    }

    #[test]
    fn ball_is_valid() {
        let m = ball(1);
        assert!(m.min_signed_volume() > 0.0);
        assert_eq!(m.num_tets(), 80);
    }
}

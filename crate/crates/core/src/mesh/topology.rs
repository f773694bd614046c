use std::collections::HashMap;

use super::{TetMesh, Vec3};
use crate::error::{Error, Result};

/// Outward faces of a positively oriented tet `(a, b, c, d)`.
const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 1], [0, 1, 3], [0, 3, 2]];

/// Boundary surface of a tet mesh plus the constant weights of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTopology {
    /// Outward-oriented boundary triangles, in mesh vertex indices.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary vertex mesh indices, ascending. Position in this list is the
    /// "local" boundary index used by every per-boundary-vertex array.
    pub vertices: Vec<usize>,
    /// Mesh index -> local boundary index.
    pub local: Vec<Option<usize>>,
    /// Boundary edges as ascending local index pairs, sorted.
    pub edges: Vec<[usize; 2]>,
    /// Local adjacency lists (ascending).
    pub neighbors: Vec<Vec<usize>>,
    pub triangle_areas: Vec<f64>,
    /// Normalized barycentric area per boundary vertex (sums to 1).
    pub area_weights: Vec<f64>,
    /// Normalized volume per tet (sums to 1).
    pub volume_weights: Vec<f64>,
}

impl BoundaryTopology {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Boundary triangles in local indices.
    pub fn local_triangles(&self) -> Vec<[usize; 3]> {
        self.triangles
            .iter()
            .map(|t| t.map(|v| self.local[v].expect("triangle vertex on boundary")))
            .collect()
    }

    /// Positions of the boundary vertices in local order.
    pub fn positions(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.vertices.iter().map(|&v| vertices[v]).collect()
    }

    /// Number of connected components of the boundary graph.
    pub fn num_components(&self) -> usize {
        let n = self.vertices.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &w in &self.neighbors[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

fn tri_area_vector(p: &[Vec3], t: &[usize; 3]) -> Vec3 {
    (p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])) * 0.5
}

pub fn boundary_topology(mesh: &TetMesh) -> Result<BoundaryTopology> {
    let tets = mesh.tets();
    let pos = mesh.vertices();

    let mut face_count: HashMap<[usize; 3], u32> = HashMap::with_capacity(tets.len() * 4);
    for t in tets {
        for f in TET_FACES {
            let mut key = [t[f[0]], t[f[1]], t[f[2]]];
            key.sort_unstable();
            *face_count.entry(key).or_insert(0) += 1;
        }
    }
    if let Some((f, c)) = face_count.iter().find(|(_, &c)| c > 2) {
        return Err(Error::NonManifoldBoundary(format!("face {f:?} is shared by {c} tets")));
    }

    let mut triangles = Vec::new();
    for t in tets {
        for f in TET_FACES {
            let tri = [t[f[0]], t[f[1]], t[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            if face_count[&key] == 1 {
                triangles.push(tri);
            }
        }
    }

    let mut local = vec![None; mesh.num_vertices()];
    for t in &triangles {
        for &v in t {
            local[v] = Some(0);
        }
    }
    let mut vertices = Vec::new();
    for (v, slot) in local.iter_mut().enumerate() {
        if slot.is_some() {
            *slot = Some(vertices.len());
            vertices.push(v);
        }
    }

    let mut edge_count: HashMap<[usize; 2], u32> = HashMap::with_capacity(triangles.len() * 3 / 2);
    for t in &triangles {
        for i in 0..3 {
            let a = local[t[i]].unwrap();
            let b = local[t[(i + 1) % 3]].unwrap();
            *edge_count.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
        }
    }
    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(edge_count.len());
    for (e, c) in &edge_count {
        if *c != 2 {
            return Err(Error::NonManifoldBoundary(format!(
                "boundary edge ({}, {}) borders {c} boundary triangles",
                vertices[e[0]], vertices[e[1]]
            )));
        }
        edges.push(*e);
    }
    edges.sort_unstable();

    let mut neighbors = vec![Vec::new(); vertices.len()];
    for &[a, b] in &edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }

    let triangle_areas: Vec<f64> = triangles.iter().map(|t| tri_area_vector(pos, t).norm()).collect();
    let mut area_weights = vec![0.0; vertices.len()];
    for (t, a) in triangles.iter().zip(&triangle_areas) {
        for &v in t {
            area_weights[local[v].unwrap()] += a / 3.0;
        }
    }
    let total_area: f64 = area_weights.iter().sum();
    for w in &mut area_weights {
        *w /= total_area;
    }

    let vols = mesh.volumes();
    let total_vol: f64 = vols.iter().sum();
    let volume_weights = vols.iter().map(|v| v / total_vol).collect();

    Ok(BoundaryTopology {
        triangles,
        vertices,
        local,
        edges,
        neighbors,
        triangle_areas,
        area_weights,
        volume_weights,
    })
}

/// Area-weighted unit normal per boundary vertex, in local order.
///
/// Falls back to the unweighted mean of incident face normals where the
/// weighted sum vanishes.
pub fn vertex_normals(mesh: &TetMesh, topo: &BoundaryTopology) -> Result<Vec<Vec3>> {
    let pos = mesh.vertices();
    let n = topo.num_vertices();
    let mut weighted = vec![Vec3::zeros(); n];
    let mut unweighted = vec![Vec3::zeros(); n];
    let mut magnitude = vec![0.0; n];
    for t in &topo.triangles {
        let av = tri_area_vector(pos, t);
        let unit = av.try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        for &v in t {
            let l = topo.local[v].unwrap();
            weighted[l] += av;
            unweighted[l] += unit;
            magnitude[l] += av.norm();
        }
    }
    (0..n)
        .map(|l| {
            if weighted[l].norm() > 1e-12 * magnitude[l] {
                return Ok(weighted[l].normalize());
            }
            log::warn!("boundary vertex {} has a vanishing area-weighted normal", topo.vertices[l]);
            unweighted[l].try_normalize(1e-12).ok_or(Error::DegenerateNormal(topo.vertices[l]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::{ball, unit_tet};
    use crate::mesh::Frame;

    #[test]
    fn unit_tet_topology() {
        let m = unit_tet();
        let t = boundary_topology(&m).unwrap();
        assert_eq!(t.triangles.len(), 4);
        assert_eq!(t.vertices, vec![0, 1, 2, 3]);
        assert_eq!(t.edges.len(), 6);
        // Faces: three right triangles of area 1/2 and one of area sqrt(3)/2.
        // A_m = (sum of incident areas)/3, normalized: each vertex touches the
        // big face except the origin.
        let big = 3f64.sqrt() / 2.0;
        let raw = [1.5 / 3.0, (1.0 + big) / 3.0, (1.0 + big) / 3.0, (1.0 + big) / 3.0];
        let total: f64 = raw.iter().sum();
        for (w, r) in t.area_weights.iter().zip(raw) {
            assert!((w - r / total).abs() < 1e-15);
        }
        assert!((t.volume_weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outward_orientation() {
        let m = ball(1);
        let t = boundary_topology(&m).unwrap();
        let c = m.centroid();
        for tri in &t.triangles {
            let p = m.vertices();
            let n = (p[tri[1]] - p[tri[0]]).cross(&(p[tri[2]] - p[tri[0]]));
            let mid = (p[tri[0]] + p[tri[1]] + p[tri[2]]) / 3.0;
            assert!(n.dot(&(mid - c)) > 0.0);
        }
    }

    #[test]
    fn weights_sum_to_one_and_topology_is_stable() {
        let m = ball(2);
        let t = boundary_topology(&m).unwrap();
        assert!((t.area_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((t.volume_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.area_weights.iter().all(|&w| w > 0.0));
        let again = boundary_topology(&m).unwrap();
        assert_eq!(t, again);
        assert_eq!(t.num_components(), 1);
    }

    #[test]
    fn sphere_normals_are_radial() {
        let m = ball(3);
        let t = boundary_topology(&m).unwrap();
        let normals = vertex_normals(&m, &t).unwrap();
        for (l, n) in normals.iter().enumerate() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            let radial = m.vertices()[t.vertices[l]].normalize();
            let angle = n.dot(&radial).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 5.0, "vertex {l}: {angle} deg");
        }
    }

    #[test]
    fn cube_corner_normal() {
        // A single cube split into 6 Kuhn tets.
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let tets = vec![
            [0, 1, 3, 7],
            [0, 1, 5, 7],
            [0, 2, 3, 7],
            [0, 2, 6, 7],
            [0, 4, 5, 7],
            [0, 4, 6, 7],
        ];
        let (m, _) = TetMesh::new(v, tets, Frame::Original).unwrap();
        let t = boundary_topology(&m).unwrap();
        let normals = vertex_normals(&m, &t).unwrap();
        // Vertex 7 = (1,1,1) lies on every Kuhn diagonal, so it touches both
        // triangles of each of the +x, +y, +z faces.
        let n7 = normals[t.local[7].unwrap()];
        let expect = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!((n7 - expect).norm() < 1e-12, "{n7:?}");
    }
}

//! Spectral segmentation of the boundary into fetal side, maternal side and
//! the margin between them.

mod affinity;
mod geodesic;
mod hull;
mod spectral;

pub use affinity::{build_affinity, normalized_laplacian, AffinityGraph};
pub use geodesic::{hop_limited_dijkstra, multi_source_dijkstra, ring_distances, three_ring_geodesics, Geodesics};
pub use hull::{convex_hull, ConvexHull};
pub use spectral::{fiedler_vector, EigenOptions, Fiedler};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, BoundaryTopology, TetMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Fetal,
    Maternal,
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParcellationParams {
    pub gamma: f64,
    pub margin_mm: f64,
    pub seed: u64,
}

impl Default for ParcellationParams {
    fn default() -> Self {
        ParcellationParams {
            gamma: 20.0,
            margin_mm: 15.0,
            seed: 0,
        }
    }
}

/// On-hull vertex counts of the two spectral clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HullVotes {
    pub fetal: usize,
    pub maternal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    /// Per local boundary vertex.
    pub maternal: Vec<bool>,
    pub embedding: Vec<f64>,
    pub hull_votes: HullVotes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParcellation {
    /// Per local boundary vertex.
    pub labels: Vec<Side>,
    pub fiedler: Vec<f64>,
    pub margin_mm: f64,
    pub hull_votes: HullVotes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SideCounts {
    pub fetal: usize,
    pub maternal: usize,
    pub margin: usize,
}

impl BoundaryParcellation {
    /// A parcellation from explicit labels (no spectral data).
    pub fn from_labels(labels: Vec<Side>) -> Self {
        let n = labels.len();
        BoundaryParcellation {
            labels,
            fiedler: vec![0.0; n],
            margin_mm: 0.0,
            hull_votes: HullVotes::default(),
        }
    }

    pub fn counts(&self) -> SideCounts {
        let mut c = SideCounts::default();
        for l in &self.labels {
            match l {
                Side::Fetal => c.fetal += 1,
                Side::Maternal => c.maternal += 1,
                Side::Margin => c.margin += 1,
            }
        }
        c
    }

    /// Boundary edges joining a fetal vertex directly to a maternal one.
    pub fn crossing_edges(&self, topo: &BoundaryTopology) -> usize {
        topo.edges
            .iter()
            .filter(|&&[a, b]| {
                matches!(
                    (self.labels[a], self.labels[b]),
                    (Side::Fetal, Side::Maternal) | (Side::Maternal, Side::Fetal)
                )
            })
            .count()
    }
}

/// Thresholds the embedding at zero and names the cluster with more vertices
/// on the convex hull Maternal. Ties go to the larger cluster, then to the
/// positive one.
pub fn bipartition_and_assign(mesh: &TetMesh, topo: &BoundaryTopology, embedding: &[f64]) -> Result<Clusters> {
    let positive: Vec<bool> = embedding.iter().map(|&v| v > 0.0).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::EmptyCluster);
    }
    let pts = topo.positions(mesh.vertices());
    let hull = convex_hull(&pts)?;
    let tol = 1e-6 * mesh.bbox_diagonal();
    let (mut on_pos, mut on_neg) = (0, 0);
    for (p, &pos) in pts.iter().zip(&positive) {
        if hull.depth(p) < tol {
            if pos {
                on_pos += 1;
            } else {
                on_neg += 1;
            }
        }
    }
    let positive_is_maternal = (on_pos, n_pos) >= (on_neg, n_neg);
    let maternal: Vec<bool> = positive.iter().map(|&p| p == positive_is_maternal).collect();
    let hull_votes = if positive_is_maternal {
        HullVotes {
            maternal: on_pos,
            fetal: on_neg,
        }
    } else {
        HullVotes {
            maternal: on_neg,
            fetal: on_pos,
        }
    };
    Ok(Clusters {
        maternal,
        embedding: embedding.to_vec(),
        hull_votes,
    })
}

/// Marks every boundary vertex within `half_width` mm (boundary geodesic) of
/// the cluster interface as Margin.
pub fn expand_margin(
    mesh: &TetMesh,
    topo: &BoundaryTopology,
    clusters: &Clusters,
    half_width: f64,
) -> Result<BoundaryParcellation> {
    if !(half_width >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin half-width must be >= 0, got {half_width}")));
    }
    let m = &clusters.maternal;
    let seeds: Vec<usize> = (0..m.len())
        .filter(|&i| topo.neighbors[i].iter().any(|&j| m[j] != m[i]))
        .collect();
    let pts = topo.positions(mesh.vertices());
    let dist = multi_source_dijkstra(&topo.neighbors, &pts, &seeds);
    let labels: Vec<Side> = (0..m.len())
        .map(|i| {
            if dist[i] <= half_width {
                Side::Margin
            } else if m[i] {
                Side::Maternal
            } else {
                Side::Fetal
            }
        })
        .collect();
    let p = BoundaryParcellation {
        labels,
        fiedler: clusters.embedding.clone(),
        margin_mm: half_width,
        hull_votes: clusters.hull_votes,
    };
    let c = p.counts();
    if c.fetal == 0 {
        return Err(Error::MarginConsumesCluster { side: "fetal", half_width });
    }
    if c.maternal == 0 {
        return Err(Error::MarginConsumesCluster {
            side: "maternal",
            half_width,
        });
    }
    Ok(p)
}

pub fn parcellate(mesh: &TetMesh, topo: &BoundaryTopology, params: &ParcellationParams) -> Result<BoundaryParcellation> {
    let normals = vertex_normals(mesh, topo)?;
    let geodesics = three_ring_geodesics(mesh, topo)?;
    let graph = build_affinity(&normals, &geodesics, params.gamma)?;
    let l = normalized_laplacian(&graph.weights)?;
    let sqrt_degrees: Vec<f64> = graph.degrees.iter().map(|d| d.sqrt()).collect();
    let opts = EigenOptions {
        seed: params.seed,
        ..Default::default()
    };
    let f = fiedler_vector(&l, &sqrt_degrees, &opts)?;
    log::debug!(
        "fiedler value {:e} (residual {:e}, {} lanczos steps)",
        f.eigenvalue,
        f.residual,
        f.iterations
    );
    let clusters = bipartition_and_assign(mesh, topo, &f.vector)?;
    expand_margin(mesh, topo, &clusters, params.margin_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::boundary_topology;
    use crate::synth::{axis_box, bent_slab, hemispherical_shell, BentSlabSpec, ShellSpec, SurfaceLabel};

    fn slab(angle: f64) -> crate::synth::SynthMesh {
        bent_slab(&BentSlabSpec {
            length: 120.0,
            width: 80.0,
            thickness: 20.0,
            bend_angle: angle,
            resolution: [20, 12, 4],
        })
        .unwrap()
    }

    #[test]
    fn bent_slab_sides_match_ground_truth() {
        let s = slab(std::f64::consts::FRAC_PI_2);
        let topo = boundary_topology(&s.mesh).unwrap();
        let p = parcellate(&s.mesh, &topo, &ParcellationParams::default()).unwrap();
        assert_eq!(p.crossing_edges(&topo), 0);
        let (mut agree, mut total) = (0, 0);
        for (l, &v) in topo.vertices.iter().enumerate() {
            let want = match s.labels[v] {
                SurfaceLabel::Outer => Side::Maternal,
                SurfaceLabel::Inner => Side::Fetal,
                _ => continue,
            };
            if p.labels[l] != Side::Margin {
                total += 1;
                agree += (p.labels[l] == want) as usize;
            }
        }
        assert!(total > 0 && agree == total, "{agree}/{total}");
    }

    #[test]
    fn shell_outer_cap_is_maternal() {
        let s = hemispherical_shell(&ShellSpec {
            outer_radius: 40.0,
            thickness: 10.0,
            rings: 9,
            layers: 2,
        })
        .unwrap();
        let topo = boundary_topology(&s.mesh).unwrap();
        let p = parcellate(&s.mesh, &topo, &ParcellationParams::default()).unwrap();
        for (l, &v) in topo.vertices.iter().enumerate() {
            match (s.labels[v], p.labels[l]) {
                (SurfaceLabel::Outer, Side::Fetal) | (SurfaceLabel::Inner, Side::Maternal) => {
                    panic!("vertex {v} mislabeled")
                }
                _ => {}
            }
        }
        assert!(p.counts().maternal > 0 && p.counts().fetal > 0);
    }

    #[test]
    fn zero_margin_is_the_seed_set() {
        let s = slab(1.0);
        let topo = boundary_topology(&s.mesh).unwrap();
        let emb: Vec<f64> = topo.vertices.iter().map(|&v| s.mesh.vertices()[v].y - 40.0).collect();
        let c = bipartition_and_assign(&s.mesh, &topo, &emb).unwrap();
        let p = expand_margin(&s.mesh, &topo, &c, 0.0).unwrap();
        for (i, l) in p.labels.iter().enumerate() {
            let seed = topo.neighbors[i].iter().any(|&j| c.maternal[j] != c.maternal[i]);
            assert_eq!(*l == Side::Margin, seed);
        }
        assert!(matches!(
            expand_margin(&s.mesh, &topo, &c, 1e4),
            Err(Error::MarginConsumesCluster { .. })
        ));
    }

    #[test]
    fn flat_box_tie_is_deterministic() {
        let b = axis_box(60.0, 40.0, 10.0, [6, 4, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        // Every boundary vertex of a box lies on its hull.
        let emb: Vec<f64> = topo
            .vertices
            .iter()
            .map(|&v| if b.mesh.vertices()[v].z > 0.0 { 1.0 } else { -1.0 })
            .collect();
        let c = bipartition_and_assign(&b.mesh, &topo, &emb).unwrap();
        let n_pos = emb.iter().filter(|&&e| e > 0.0).count();
        assert!(n_pos < emb.len() - n_pos);
        // The larger (non-positive) cluster wins the tie-break.
        assert!(c.maternal.iter().zip(&emb).all(|(&m, &e)| m == (e <= 0.0)));
        assert_eq!(c.hull_votes.maternal, emb.len() - n_pos);
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let b = axis_box(2.0, 2.0, 2.0, [2, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let emb = vec![1.0; topo.num_vertices()];
        assert!(matches!(bipartition_and_assign(&b.mesh, &topo, &emb), Err(Error::EmptyCluster)));
    }
}

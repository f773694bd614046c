use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{descend, FlatteningResult, OptimizerParams};
use crate::energy::{Objective, TemplateSpec};
use crate::error::{Error, Result};
use crate::mesh::{boundary_topology, BoundaryTopology, TetMesh, Vec3};
use crate::parcellation::{multi_source_dijkstra, parcellate, BoundaryParcellation, ParcellationParams, Side};
use crate::stats::percentile;
use crate::volume::ScalarVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Planes,
    SinglePlane,
    Ellipsoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlattenParams {
    pub optimizer: OptimizerParams,
    pub parcellation: ParcellationParams,
}

/// Rigid map `p -> R (p - center)` into template axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub center: Vec3,
    pub rotation: Matrix3<f64>,
}

impl Alignment {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.center)
    }

    /// Half-turn about the first axis: flips the second and third axes.
    fn flipped(&self) -> Self {
        let mut r = self.rotation;
        for c in 0..3 {
            r[(1, c)] = -r[(1, c)];
            r[(2, c)] = -r[(2, c)];
        }
        Alignment {
            center: self.center,
            rotation: r,
        }
    }
}

/// Centers at the vertex centroid and rotates the covariance eigenvectors
/// (descending eigenvalue) onto x, y, z. Each axis is signed to agree with
/// the input axis of the same rank where possible; the result is proper.
pub fn align_principal_axes(points: &[Vec3]) -> Alignment {
    let n = points.len() as f64;
    let center = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - center;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut rotation = Matrix3::zeros();
    for (row, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        if v[row] < 0.0 {
            v = -v;
        }
        rotation.set_row(row, &v.transpose());
    }
    if rotation.determinant() < 0.0 {
        for c in 0..3 {
            rotation[(2, c)] = -rotation[(2, c)];
        }
    }
    Alignment { center, rotation }
}

fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Percentile of the exact distance from tet barycenters to the boundary
/// surface.
pub fn distance_to_boundary_percentile(mesh: &TetMesh, topo: &BoundaryTopology, p: f64) -> f64 {
    let pos = mesh.vertices();
    let tris: Vec<[Vec3; 3]> = topo.triangles.iter().map(|t| t.map(|v| pos[v])).collect();
    let d: Vec<f64> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|k| {
            let q = mesh.tet_points(k).iter().sum::<Vec3>() / 4.0;
            tris.iter()
                .map(|t| (closest_on_triangle(&q, &t[0], &t[1], &t[2]) - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    percentile(&d, p)
}

/// Squared distance transform along one line (lower envelope of parabolas).
fn edt_1d(f: &[f64], spacing: f64, out: &mut [f64]) {
    let n = f.len();
    let x = |q: usize| q as f64 * spacing;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let r = v[k];
            let s = ((f[q] + x(q) * x(q)) - (f[r] + x(r) * x(r))) / (2.0 * (x(q) - x(r)));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: the new parabola dominates everywhere.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < x(q) {
            k += 1;
        }
        let r = v[k];
        *o = (x(q) - x(r)).powi(2) + f[r];
    }
}

/// Percentile of the Euclidean distance (mm) from voxels inside a labelmap
/// (`value > 0.5`) to the nearest outside voxel.
pub fn volume_thickness_percentile(vol: &ScalarVolume, p: f64) -> Result<f64> {
    let [nx, ny, nz] = vol.dims;
    let mut d: Vec<f64> = vol.data.iter().map(|&v| if v > 0.5 { f64::INFINITY } else { 0.0 }).collect();
    if d.iter().all(|v| v.is_infinite()) || d.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidVolume("labelmap needs both inside and outside voxels".into()));
    }
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let lines: [(usize, [usize; 2]); 3] = [(0, [ny, nz]), (1, [nx, nz]), (2, [nx, ny])];
    for (axis, [na, nb]) in lines {
        let len = vol.dims[axis];
        let mut f = vec![0.0; len];
        let mut out = vec![0.0; len];
        for a in 0..na {
            for b in 0..nb {
                let at = |t: usize| match axis {
                    0 => idx(t, a, b),
                    1 => idx(a, t, b),
                    _ => idx(a, b, t),
                };
                for t in 0..len {
                    f[t] = d[at(t)];
                }
                edt_1d(&f, vol.spacing[axis], &mut out);
                for t in 0..len {
                    d[at(t)] = out[t];
                }
            }
        }
    }
    let inside: Vec<f64> = vol
        .data
        .iter()
        .zip(&d)
        .filter(|(v, _)| **v > 0.5)
        .map(|(_, d)| d.sqrt())
        .collect();
    Ok(percentile(&inside, p))
}

/// Starting template parameters for a mesh already in template axes.
pub fn initial_template(
    kind: TemplateKind,
    aligned: &TetMesh,
    topo: &BoundaryTopology,
    volume: Option<&ScalarVolume>,
) -> Result<TemplateSpec> {
    let h0 = match volume {
        Some(v) => volume_thickness_percentile(v, 95.0)?,
        None => distance_to_boundary_percentile(aligned, topo, 95.0),
    };
    Ok(match kind {
        TemplateKind::Planes => TemplateSpec::ParallelPlanes { h: h0 },
        TemplateKind::SinglePlane => TemplateSpec::SinglePlane { h: h0 },
        TemplateKind::Ellipsoid => {
            let pts = topo.positions(aligned.vertices());
            let per_source: Vec<Vec<f64>> = (0..pts.len())
                .into_par_iter()
                .map(|s| multi_source_dijkstra(&topo.neighbors, &pts, &[s])[s + 1..].to_vec())
                .collect();
            let all: Vec<f64> = per_source.concat();
            let ry = percentile(&all, 95.0) / 2.0;
            let rz = h0;
            let rx = 3.0 * aligned.total_volume() / (4.0 * PI * ry * rz);
            TemplateSpec::Ellipsoid { rx, ry, rz }
        }
    })
}

#[derive(Debug, Clone)]
pub struct Flattening {
    pub alignment: Alignment,
    pub topology: BoundaryTopology,
    pub parcellation: Option<BoundaryParcellation>,
    pub initial: TemplateSpec,
    pub result: FlatteningResult,
    /// The parallel-planes stage that precedes a single-plane run.
    pub preliminary: Option<FlatteningResult>,
}

impl Flattening {
    pub fn mapped_mesh(&self, original: &TetMesh) -> TetMesh {
        original.with_vertices(self.result.x.clone(), crate::mesh::Frame::Template)
    }
}

/// Full pipeline: align, parcellate (plane templates), initialize the
/// template and descend. Single-plane runs start from the converged
/// parallel-planes map.
pub fn flatten(
    z: &TetMesh,
    kind: TemplateKind,
    params: &FlattenParams,
    volume: Option<&ScalarVolume>,
) -> Result<Flattening> {
    params.optimizer.validate()?;
    let topo = boundary_topology(z)?;
    let mut alignment = align_principal_axes(z.vertices());

    let parcellation = match kind {
        TemplateKind::Ellipsoid => None,
        _ => Some(parcellate(z, &topo, &params.parcellation)?),
    };
    if let Some(p) = &parcellation {
        let maternal: Vec<Vec3> = topo
            .vertices
            .iter()
            .zip(&p.labels)
            .filter(|(_, l)| **l == Side::Maternal)
            .map(|(&v, _)| alignment.apply(&z.vertices()[v]))
            .collect();
        let mz = maternal.iter().map(|p| p.z).sum::<f64>() / maternal.len() as f64;
        if mz > 0.0 {
            alignment = alignment.flipped();
        }
    }
    let x0: Vec<Vec3> = z.vertices().iter().map(|p| alignment.apply(p)).collect();
    let aligned = z.with_vertices(x0.clone(), crate::mesh::Frame::Template);
    let initial = initial_template(kind, &aligned, &topo, volume)?;
    log::info!("initial template {initial:?}");

    let labels = parcellation.as_ref().map(|p| p.labels.as_slice());
    let obj = Objective::new(z, &topo, labels, params.optimizer.lambda)?;
    let (result, preliminary) = match initial {
        TemplateSpec::SinglePlane { h } => {
            let pp = descend(&obj, &x0, &TemplateSpec::ParallelPlanes { h }, &params.optimizer)?;
            let h_pp = pp.template.theta()[0];
            let sp = descend(&obj, &pp.x, &TemplateSpec::SinglePlane { h: h_pp }, &params.optimizer)?;
            (sp, Some(pp))
        }
        spec => (descend(&obj, &x0, &spec, &params.optimizer)?, None),
    };
    log::info!(
        "{:?} after {} iterations, template {:?}",
        result.termination,
        result.iterations,
        result.template
    );
    Ok(Flattening {
        alignment,
        topology: topo,
        parcellation,
        initial,
        result,
        preliminary,
    })
}

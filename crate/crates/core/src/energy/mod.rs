//! Template fit, symmetric Dirichlet distortion and their gradients.

mod dirichlet;
mod fdcheck;

pub use dirichlet::{
    adjugate, basis_matrix, dirichlet_density, dirichlet_density_svd, dirichlet_with_gradient, jacobian,
    singular_values,
};
pub use fdcheck::{fd_check, fd_check_with, random_cases, FdReport, GradCheckCase};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{edge_matrix, BoundaryTopology, TetMesh, Vec3};
use crate::parcellation::Side;

/// Parameterized target shape for the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum TemplateSpec {
    /// Fetal side on `x3 = h`, maternal side on `x3 = -h`.
    ParallelPlanes { h: f64 },
    /// Maternal side on `x3 = -h` only.
    SinglePlane { h: f64 },
    /// Every boundary vertex on the ellipsoid with semi-axes `(rx, ry, rz)`.
    Ellipsoid { rx: f64, ry: f64, rz: f64 },
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TemplateSpec::ParallelPlanes { h } | TemplateSpec::SinglePlane { h } => h > 0.0,
            TemplateSpec::Ellipsoid { rx, ry, rz } => rx > 0.0 && ry > 0.0 && rz > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("template parameters must be positive: {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TemplateSpec::ParallelPlanes { .. } => "planes",
            TemplateSpec::SinglePlane { .. } => "single-plane",
            TemplateSpec::Ellipsoid { .. } => "ellipsoid",
        }
    }

    /// Whether the term depends on the fetal/maternal labels.
    pub fn uses_labels(&self) -> bool {
        !matches!(self, TemplateSpec::Ellipsoid { .. })
    }

    pub fn theta(&self) -> Vec<f64> {
        match *self {
            TemplateSpec::ParallelPlanes { h } | TemplateSpec::SinglePlane { h } => vec![h],
            TemplateSpec::Ellipsoid { rx, ry, rz } => vec![rx, ry, rz],
        }
    }

    pub fn with_theta(&self, t: &[f64]) -> Self {
        match self {
            TemplateSpec::ParallelPlanes { .. } => TemplateSpec::ParallelPlanes { h: t[0] },
            TemplateSpec::SinglePlane { .. } => TemplateSpec::SinglePlane { h: t[0] },
            TemplateSpec::Ellipsoid { .. } => TemplateSpec::Ellipsoid {
                rx: t[0],
                ry: t[1],
                rz: t[2],
            },
        }
    }
}

/// Squared distance-like template term of one boundary vertex.
pub fn template_term(x: &Vec3, label: Side, spec: &TemplateSpec) -> f64 {
    template_term_with_gradient(x, label, spec).0
}

/// Term value, gradient in `x` and gradient in the template parameters
/// (first `spec.theta().len()` entries are meaningful).
pub fn template_term_with_gradient(x: &Vec3, label: Side, spec: &TemplateSpec) -> (f64, Vec3, [f64; 3]) {
    match (*spec, label) {
        (TemplateSpec::ParallelPlanes { h }, Side::Fetal) => {
            let r = x.z - h;
            (r * r, Vec3::new(0.0, 0.0, 2.0 * r), [-2.0 * r, 0.0, 0.0])
        }
        (TemplateSpec::ParallelPlanes { h } | TemplateSpec::SinglePlane { h }, Side::Maternal) => {
            let r = x.z + h;
            (r * r, Vec3::new(0.0, 0.0, 2.0 * r), [2.0 * r, 0.0, 0.0])
        }
        (TemplateSpec::ParallelPlanes { .. } | TemplateSpec::SinglePlane { .. }, _) => (0.0, Vec3::zeros(), [0.0; 3]),
        (TemplateSpec::Ellipsoid { rx, ry, rz }, _) => {
            let r = Vec3::new(rx, ry, rz);
            let q = (0..3).map(|i| x[i] * x[i] / (r[i] * r[i])).sum::<f64>() - 1.0;
            let gx = Vec3::from_fn(|i, _| 4.0 * q * x[i] / (r[i] * r[i]));
            let gt = std::array::from_fn(|i| -4.0 * q * x[i] * x[i] / (r[i] * r[i] * r[i]));
            (q * q, gx, gt)
        }
    }
}

/// Per-tet `(Z_k B)^{-1}` frozen at the original configuration, plus the
/// normalized tet volumes.
#[derive(Debug, Clone)]
pub struct DeformationCache {
    pub tets: Vec<[usize; 4]>,
    pub inv_basis: Vec<Matrix3<f64>>,
    pub volume_weights: Vec<f64>,
}

impl DeformationCache {
    pub fn new(z: &TetMesh) -> Result<Self> {
        let inv_basis = (0..z.num_tets())
            .map(|k| edge_matrix(&z.tet_points(k)).try_inverse().ok_or(Error::DegenerateTet(k)))
            .collect::<Result<Vec<_>>>()?;
        let vols = z.volumes();
        let total: f64 = vols.iter().sum();
        Ok(DeformationCache {
            tets: z.tets().to_vec(),
            inv_basis,
            volume_weights: vols.iter().map(|v| v / total).collect(),
        })
    }

    #[inline]
    pub fn points(&self, x: &[Vec3], k: usize) -> [Vec3; 4] {
        self.tets[k].map(|v| x[v])
    }

    pub fn jacobians(&self, x: &[Vec3]) -> Vec<Matrix3<f64>> {
        (0..self.tets.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|k| jacobian(&self.points(x, k), &self.inv_basis[k]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    /// `sum_m A_m T(x_m)`.
    pub template: f64,
    /// `sum_k V_k D(J_k)`, not multiplied by lambda.
    pub distortion: f64,
    /// `template + lambda * distortion`.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub terms: Terms,
    /// Full gradient in the vertex positions.
    pub x: Vec<Vec3>,
    /// Gradient in the template parameters.
    pub theta: Vec<f64>,
}

impl Gradient {
    pub fn x_norm(&self) -> f64 {
        self.x.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Everything about `phi` that stays fixed while `X` and the template move.
#[derive(Debug, Clone)]
pub struct Objective {
    pub cache: DeformationCache,
    /// Mesh indices of boundary vertices.
    pub boundary: Vec<usize>,
    pub area_weights: Vec<f64>,
    /// Per boundary vertex; required by the plane templates.
    pub labels: Option<Vec<Side>>,
    pub lambda: f64,
}

impl Objective {
    pub fn new(z: &TetMesh, topo: &BoundaryTopology, labels: Option<&[Side]>, lambda: f64) -> Result<Self> {
        if let Some(l) = labels {
            if l.len() != topo.num_vertices() {
                return Err(Error::InvalidParameter(format!(
                    "{} labels for {} boundary vertices",
                    l.len(),
                    topo.num_vertices()
                )));
            }
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Objective {
            cache: DeformationCache::new(z)?,
            boundary: topo.vertices.clone(),
            area_weights: topo.area_weights.clone(),
            labels: labels.map(<[Side]>::to_vec),
            lambda,
        })
    }

    fn label(&self, m: usize, spec: &TemplateSpec) -> Result<Side> {
        match (&self.labels, spec.uses_labels()) {
            (Some(l), _) => Ok(l[m]),
            (None, false) => Ok(Side::Margin),
            (None, true) => Err(Error::InvalidParameter(format!(
                "the {} template needs a boundary parcellation",
                spec.name()
            ))),
        }
    }

    pub fn template_value(&self, x: &[Vec3], spec: &TemplateSpec) -> Result<f64> {
        let mut sum = 0.0;
        for (m, &v) in self.boundary.iter().enumerate() {
            sum += self.area_weights[m] * template_term(&x[v], self.label(m, spec)?, spec);
        }
        Ok(sum)
    }

    /// `sum_m A_m T`, its gradient in `x` and in the template parameters.
    pub fn template_gradient(&self, x: &[Vec3], spec: &TemplateSpec) -> Result<(f64, Vec<Vec3>, Vec<f64>)> {
        let nt = spec.theta().len();
        let mut gx = vec![Vec3::zeros(); x.len()];
        let mut gt = vec![0.0; nt];
        let mut sum = 0.0;
        for (m, &v) in self.boundary.iter().enumerate() {
            let a = self.area_weights[m];
            let (t, dx, dt) = template_term_with_gradient(&x[v], self.label(m, spec)?, spec);
            sum += a * t;
            gx[v] += dx * a;
            for i in 0..nt {
                gt[i] += a * dt[i];
            }
        }
        Ok((sum, gx, gt))
    }

    fn flipped(&self, x: &[Vec3], k: usize) -> Error {
        let j = jacobian(&self.cache.points(x, k), &self.cache.inv_basis[k]);
        Error::FlippedTet {
            tet: k,
            det: j.determinant(),
        }
    }

    /// Per-tet densities `D(J_k)`.
    pub fn densities(&self, x: &[Vec3]) -> Result<Vec<f64>> {
        let c = &self.cache;
        let d: Vec<Option<f64>> = (0..c.tets.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|k| dirichlet_density(&jacobian(&c.points(x, k), &c.inv_basis[k])))
            .collect();
        d.iter()
            .enumerate()
            .map(|(k, v)| v.ok_or_else(|| self.flipped(x, k)))
            .collect()
    }

    pub fn distortion_value(&self, x: &[Vec3]) -> Result<f64> {
        let d = self.densities(x)?;
        Ok(d.iter().zip(&self.cache.volume_weights).map(|(d, w)| d * w).sum())
    }

    /// `sum_k V_k D` and its gradient in `x` (not multiplied by lambda).
    pub fn distortion_gradient(&self, x: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let c = &self.cache;
        let per_tet: Vec<Option<(f64, [Vec3; 4])>> = (0..c.tets.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|k| dirichlet_with_gradient(&c.points(x, k), &c.inv_basis[k]))
            .collect();
        let mut g = vec![Vec3::zeros(); x.len()];
        let mut sum = 0.0;
        for (k, item) in per_tet.iter().enumerate() {
            let (d, gk) = item.ok_or_else(|| self.flipped(x, k))?;
            let w = c.volume_weights[k];
            sum += w * d;
            for (i, &v) in c.tets[k].iter().enumerate() {
                g[v] += gk[i] * w;
            }
        }
        Ok((sum, g))
    }

    pub fn terms(&self, x: &[Vec3], spec: &TemplateSpec) -> Result<Terms> {
        let template = self.template_value(x, spec)?;
        let distortion = self.distortion_value(x)?;
        Ok(Terms {
            template,
            distortion,
            total: template + self.lambda * distortion,
        })
    }

    pub fn value(&self, x: &[Vec3], spec: &TemplateSpec) -> Result<f64> {
        Ok(self.terms(x, spec)?.total)
    }

    pub fn gradient(&self, x: &[Vec3], spec: &TemplateSpec) -> Result<Gradient> {
        let (template, mut gx, theta) = self.template_gradient(x, spec)?;
        let (distortion, gd) = self.distortion_gradient(x)?;
        for (a, b) in gx.iter_mut().zip(&gd) {
            *a += b * self.lambda;
        }
        Ok(Gradient {
            terms: Terms {
                template,
                distortion,
                total: template + self.lambda * distortion,
            },
            x: gx,
            theta,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::boundary_topology;
    use crate::synth::axis_box;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Box labels: top fetal, bottom maternal, everything else margin.
    pub(crate) fn box_labels(mesh: &TetMesh, topo: &BoundaryTopology, half: f64) -> Vec<Side> {
        topo.vertices
            .iter()
            .map(|&v| {
                let z = mesh.vertices()[v].z;
                if z == half {
                    Side::Fetal
                } else if z == -half {
                    Side::Maternal
                } else {
                    Side::Margin
                }
            })
            .collect()
    }

    #[test]
    fn template_term_values() {
        let p = TemplateSpec::ParallelPlanes { h: 13.0 };
        assert_eq!(template_term(&Vec3::new(1.0, 2.0, 13.0), Side::Fetal, &p), 0.0);
        assert_eq!(template_term(&Vec3::new(1.0, 2.0, 0.0), Side::Maternal, &p), 169.0);
        assert_eq!(template_term(&Vec3::new(1.0, 2.0, 5.0), Side::Margin, &p), 0.0);
        let s = TemplateSpec::SinglePlane { h: 13.0 };
        assert_eq!(template_term(&Vec3::new(0.0, 0.0, 0.0), Side::Fetal, &s), 0.0);
        assert_eq!(template_term(&Vec3::new(0.0, 0.0, 0.0), Side::Maternal, &s), 169.0);
        let e = TemplateSpec::Ellipsoid {
            rx: 3.0,
            ry: 2.0,
            rz: 1.0,
        };
        assert_eq!(template_term(&Vec3::new(3.0, 0.0, 0.0), Side::Margin, &e), 0.0);
        assert_eq!(template_term(&Vec3::zeros(), Side::Fetal, &e), 1.0);
    }

    #[test]
    fn identity_objective_is_distortion_floor() {
        let b = axis_box(6.0, 4.0, 2.0, [3, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.0);
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), 1.0).unwrap();
        let spec = TemplateSpec::ParallelPlanes { h: 1.0 };
        let x = b.mesh.vertices();
        assert!((obj.value(x, &spec).unwrap() - 6.0).abs() < 1e-12);
        let obj0 = Objective::new(&b.mesh, &topo, Some(&labels), 0.0).unwrap();
        let squashed: Vec<Vec3> = x.iter().map(|p| Vec3::new(p.x, p.y, p.z * 1.5)).collect();
        assert_eq!(obj0.value(&squashed, &TemplateSpec::ParallelPlanes { h: 1.5 }).unwrap(), 0.0);
        // The flat box with the right h is a stationary point.
        let g = obj.gradient(x, &spec).unwrap();
        assert!(g.x_norm() < 1e-10 && g.theta[0].abs() < 1e-12);
    }

    #[test]
    fn objective_matches_naive_reverse_summation() {
        let b = axis_box(5.0, 4.0, 3.0, [3, 3, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec3> = b
            .mesh
            .vertices()
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-0.1..0.1)))
            .collect();
        let lambda = 0.7;
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), lambda).unwrap();
        for spec in [
            TemplateSpec::ParallelPlanes { h: 1.2 },
            TemplateSpec::SinglePlane { h: 1.7 },
            TemplateSpec::Ellipsoid {
                rx: 3.0,
                ry: 2.5,
                rz: 1.0,
            },
        ] {
            // Oracle: explicit inverse, SVD density, raw area/volume sums, reversed order.
            let z = b.mesh.vertices();
            let vols = b.mesh.volumes();
            let vtot: f64 = vols.iter().rev().sum();
            let mut dist = 0.0;
            for k in (0..b.mesh.num_tets()).rev() {
                let t = b.mesh.tets()[k];
                let zk = edge_matrix(&t.map(|v| z[v]));
                let xk = edge_matrix(&t.map(|v| x[v]));
                dist += vols[k] / vtot * dirichlet_density_svd(&(xk * zk.try_inverse().unwrap()));
            }
            let mut raw = vec![0.0; topo.num_vertices()];
            for (tri, area) in topo.triangles.iter().zip(&topo.triangle_areas).rev() {
                for &v in tri {
                    raw[topo.local[v].unwrap()] += area / 3.0;
                }
            }
            let atot: f64 = raw.iter().rev().sum();
            let mut tmpl = 0.0;
            for m in (0..raw.len()).rev() {
                let p = x[topo.vertices[m]];
                let t = match (spec, labels[m]) {
                    (TemplateSpec::Ellipsoid { rx, ry, rz }, _) => {
                        ((p.x / rx).powi(2) + (p.y / ry).powi(2) + (p.z / rz).powi(2) - 1.0).powi(2)
                    }
                    (TemplateSpec::ParallelPlanes { h }, Side::Fetal) => (p.z - h).powi(2),
                    (TemplateSpec::ParallelPlanes { h } | TemplateSpec::SinglePlane { h }, Side::Maternal) => {
                        (p.z + h).powi(2)
                    }
                    _ => 0.0,
                };
                tmpl += raw[m] / atot * t;
            }
            let expect = tmpl + lambda * dist;
            let got = obj.value(&x, &spec).unwrap();
            assert!((got - expect).abs() < 1e-10 * expect, "{spec:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn translation_and_rotation_invariance() {
        let b = axis_box(5.0, 4.0, 3.0, [3, 3, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<Vec3> = b
            .mesh
            .vertices()
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-0.1..0.1)))
            .collect();
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), 1.0).unwrap();
        let spec = TemplateSpec::ParallelPlanes { h: 1.4 };
        let base = obj.terms(&x, &spec).unwrap();
        // Translation within the template's symmetry (x1, x2) keeps everything.
        let shifted: Vec<Vec3> = x.iter().map(|p| p + Vec3::new(3.0, -7.0, 0.0)).collect();
        let t = obj.terms(&shifted, &spec).unwrap();
        assert!((t.total - base.total).abs() < 1e-12 * base.total);
        // Any translation leaves the distortion alone; a rotation too, but not
        // the template term.
        let r = nalgebra::Rotation3::from_euler_angles(0.4, 0.2, -0.3);
        let moved: Vec<Vec3> = x.iter().map(|p| r * p + Vec3::new(1.0, 2.0, 3.0)).collect();
        let t = obj.terms(&moved, &spec).unwrap();
        assert!((t.distortion - base.distortion).abs() < 1e-12 * base.distortion);
        assert!((t.template - base.template).abs() > 1e-3);
        // The distortion gradient is orthogonal to a global translation.
        let (_, gd) = obj.distortion_gradient(&x).unwrap();
        let s: Vec3 = gd.iter().sum();
        assert!(s.norm() < 1e-12);
    }

    #[test]
    fn flipped_tet_is_reported() {
        let b = axis_box(2.0, 2.0, 2.0, [1, 1, 1]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let obj = Objective::new(&b.mesh, &topo, None, 1.0).unwrap();
        let x: Vec<Vec3> = b.mesh.vertices().iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        assert!(matches!(obj.distortion_value(&x), Err(Error::FlippedTet { .. })));
        let spec = TemplateSpec::ParallelPlanes { h: 1.0 };
        assert!(matches!(obj.value(b.mesh.vertices(), &spec), Err(Error::InvalidParameter(_))));
    }
}

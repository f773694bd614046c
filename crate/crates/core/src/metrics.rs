//! Fit and distortion diagnostics of a flattening, with JSON and CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{singular_values, template_term, TemplateSpec};
use crate::error::{Error, Result};
use crate::mesh::{det6, edge_matrix, BoundaryTopology, TetMesh, Vec3};
use crate::parcellation::Side;
use crate::stats::{percentile, Summary};

/// JSON schema of [`DistortionReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/distortion_report.schema.json");

pub const DEFAULT_VOXEL_MM: f64 = 3.0;
pub const DEFAULT_PROFILE_BINS: usize = 10;

fn check_len(x: &[Vec3], z: &TetMesh) -> Result<()> {
    if x.len() != z.num_vertices() {
        return Err(Error::ConnectivityMismatch(format!(
            "{} mapped vertices for a mesh with {}",
            x.len(),
            z.num_vertices()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsUnits {
    Voxels,
    /// The ellipsoid term is a squared level-set residual, not a length.
    Dimensionless,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateFit {
    pub template: TemplateSpec,
    pub rms: f64,
    pub units: RmsUnits,
    /// Boundary area fraction that the template constrains; margin vertices
    /// (and fetal ones for the single plane) carry no template term.
    pub constrained_mass: f64,
}

/// Root mean template residual over the constrained boundary, weighted by
/// vertex area. For plane templates the result is in voxels of `voxel_mm`.
pub fn template_rms(
    x: &[Vec3],
    topo: &BoundaryTopology,
    labels: Option<&[Side]>,
    spec: &TemplateSpec,
    voxel_mm: f64,
) -> Result<TemplateFit> {
    spec.validate()?;
    if !(voxel_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("voxel size must be positive, got {voxel_mm}")));
    }
    if spec.uses_labels() && labels.map(|l| l.len()) != Some(topo.vertices.len()) {
        return Err(Error::InvalidParameter(format!(
            "the {} template needs one label per boundary vertex",
            spec.name()
        )));
    }
    let constrained = |m: usize| match (spec, labels.map(|l| l[m])) {
        (TemplateSpec::Ellipsoid { .. }, _) => true,
        (TemplateSpec::ParallelPlanes { .. }, Some(s)) => s != Side::Margin,
        (TemplateSpec::SinglePlane { .. }, Some(s)) => s == Side::Maternal,
        _ => false,
    };
    let (mut sum, mut mass) = (0.0, 0.0);
    for (m, &v) in topo.vertices.iter().enumerate() {
        if constrained(m) {
            let label = labels.map_or(Side::Margin, |l| l[m]);
            sum += topo.area_weights[m] * template_term(&x[v], label, spec);
            mass += topo.area_weights[m];
        }
    }
    let mean = if mass > 0.0 { sum / mass } else { 0.0 };
    let (rms, units) = match spec {
        TemplateSpec::Ellipsoid { .. } => (mean.sqrt(), RmsUnits::Dimensionless),
        _ => (mean.sqrt() / voxel_mm, RmsUnits::Voxels),
    };
    Ok(TemplateFit {
        template: *spec,
        rms,
        units,
        constrained_mass: mass,
    })
}

/// Per-tet excess `D(J) - 6 = sum (s - 1/s)^2` over singular values; exactly
/// zero for tets whose corners did not move.
fn excess_density(xk: &[Vec3; 4], zk: &[Vec3; 4]) -> Result<f64> {
    if xk == zk {
        return Ok(0.0);
    }
    let q = edge_matrix(zk).try_inverse().ok_or_else(|| Error::InvalidMesh("degenerate original tet".into()))?;
    let j = edge_matrix(xk) * q;
    if !(j.determinant() > 0.0) {
        return Err(Error::FlippedTet {
            tet: usize::MAX,
            det: j.determinant(),
        });
    }
    Ok(singular_values(&j).iter().map(|s| (s - 1.0 / s).powi(2)).sum())
}

/// Percentage by which the volume-weighted Dirichlet energy exceeds 6.
pub fn dirichlet_excess(x: &[Vec3], z: &TetMesh) -> Result<f64> {
    check_len(x, z)?;
    let vols = z.volumes();
    let total: f64 = vols.iter().sum();
    let per: Vec<Result<f64>> = (0..z.num_tets())
        .into_par_iter()
        .with_min_len(256)
        .map(|k| {
            excess_density(&z.tets()[k].map(|v| x[v]), &z.tet_points(k)).map_err(|e| match e {
                Error::FlippedTet { det, .. } => Error::FlippedTet { tet: k, det },
                e => e,
            })
        })
        .collect();
    let mut sum = 0.0;
    for (k, e) in per.into_iter().enumerate() {
        sum += vols[k] / total * e?;
    }
    Ok(100.0 * sum / 6.0)
}

/// Per-tet `log2 det J`.
pub fn volumetric_distortion(x: &[Vec3], z: &TetMesh) -> Result<Vec<f64>> {
    check_len(x, z)?;
    z.tets()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let ratio = det6(&t.map(|v| x[v])) / det6(&z.tet_points(k));
            if ratio > 0.0 {
                Ok(ratio.log2())
            } else {
                Err(Error::FlippedTet { tet: k, det: ratio })
            }
        })
        .collect()
}

fn tri_area(p: &[Vec3], t: &[usize; 3]) -> f64 {
    0.5 * (p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])).norm()
}

/// Per-triangle `log2` of mapped over original area.
pub fn areal_distortion(x: &[Vec3], z: &[Vec3], triangles: &[[usize; 3]]) -> Vec<f64> {
    triangles.iter().map(|t| (tri_area(x, t) / tri_area(z, t)).log2()).collect()
}

/// Per-edge `log2` of mapped over original length.
pub fn metric_distortion(x: &[Vec3], z: &[Vec3], edges: &[[usize; 2]]) -> Vec<f64> {
    edges
        .iter()
        .map(|&[a, b]| ((x[a] - x[b]).norm() / (z[a] - z[b]).norm()).log2())
        .collect()
}

/// Per-vertex average of a per-tet field, weighted by original tet volume.
pub fn vertex_field(z: &TetMesh, per_tet: &[f64]) -> Vec<f64> {
    let mut num = vec![0.0; z.num_vertices()];
    let mut den = vec![0.0; z.num_vertices()];
    for (k, t) in z.tets().iter().enumerate() {
        let v = z.signed_volume(k);
        for &i in t {
            num[i] += v * per_tet[k];
            den[i] += v;
        }
    }
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    /// Binned by `sqrt(x^2 + y^2)`.
    pub radial: Vec<ProfileBin>,
    /// Binned by `|z|`.
    pub height: Vec<ProfileBin>,
}

impl Profiles {
    /// Largest difference between means of adjacent non-empty bins.
    pub fn max_step(bins: &[ProfileBin]) -> f64 {
        let means: Vec<f64> = bins.iter().filter_map(|b| b.mean).collect();
        means.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }
}

fn bin_profile(coord: &[f64], values: &[f64], bins: usize) -> Vec<ProfileBin> {
    let top = coord.iter().copied().fold(0.0, f64::max);
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (c, v) in coord.iter().zip(values) {
        groups[((c / width) as usize).min(bins - 1)].push(*v);
    }
    groups
        .iter()
        .enumerate()
        .map(|(b, g)| {
            let s = (!g.is_empty()).then(|| Summary::of(g));
            ProfileBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count: g.len(),
                mean: s.map(|s| s.mean),
                sd: s.map(|s| s.sd),
            }
        })
        .collect()
}

/// Radial and height profiles of a per-vertex field over mapped positions.
pub fn spatial_profiles(x: &[Vec3], per_vertex: &[f64], bins: usize) -> Profiles {
    let bins = bins.max(1);
    let radial: Vec<f64> = x.iter().map(|p| p.x.hypot(p.y)).collect();
    let height: Vec<f64> = x.iter().map(|p| p.z.abs()).collect();
    Profiles {
        radial: bin_profile(&radial, per_vertex, bins),
        height: bin_profile(&height, per_vertex, bins),
    }
}

/// Summary of a log-ratio field plus statistics of its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub summary: Summary,
    pub abs_mean: f64,
    pub abs_p95: f64,
}

impl FieldStats {
    pub fn of(values: &[f64]) -> Self {
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        FieldStats {
            summary: Summary::of(values),
            abs_mean: if abs.is_empty() { 0.0 } else { crate::stats::mean(&abs) },
            abs_p95: if abs.is_empty() { 0.0 } else { percentile(&abs, 95.0) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCounts {
    pub vertices: usize,
    pub tets: usize,
    pub boundary_triangles: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub voxel_mm: f64,
    pub counts: ElementCounts,
    pub template_fit: Option<TemplateFit>,
    pub dirichlet_excess_percent: f64,
    /// `log2 det J` per tet.
    pub volumetric: FieldStats,
    /// `log2` area ratio per boundary triangle.
    pub areal: FieldStats,
    /// `log2` length ratio per mesh edge.
    pub metric: FieldStats,
    /// Profiles of the volume-weighted vertex average of `log2 det J`.
    pub profiles: Profiles,
    pub log2_det_j: Vec<f64>,
    pub log2_areal: Vec<f64>,
    pub log2_metric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub voxel_mm: f64,
    pub profile_bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            voxel_mm: DEFAULT_VOXEL_MM,
            profile_bins: DEFAULT_PROFILE_BINS,
        }
    }
}

/// Everything above for one mapped configuration `x` of `z`. The template
/// fit is included when a template (and labels, for planes) is given.
pub fn report(
    z: &TetMesh,
    x: &[Vec3],
    topo: &BoundaryTopology,
    fit: Option<(&TemplateSpec, Option<&[Side]>)>,
    opts: &ReportOptions,
) -> Result<DistortionReport> {
    check_len(x, z)?;
    let template_fit = fit
        .map(|(spec, labels)| template_rms(x, topo, labels, spec, opts.voxel_mm))
        .transpose()?;
    let log2_det_j = volumetric_distortion(x, z)?;
    let edges = z.edges();
    let log2_areal = areal_distortion(x, z.vertices(), &topo.triangles);
    let log2_metric = metric_distortion(x, z.vertices(), &edges);
    let per_vertex = vertex_field(z, &log2_det_j);
    Ok(DistortionReport {
        voxel_mm: opts.voxel_mm,
        counts: ElementCounts {
            vertices: z.num_vertices(),
            tets: z.num_tets(),
            boundary_triangles: topo.triangles.len(),
            edges: edges.len(),
        },
        template_fit,
        dirichlet_excess_percent: dirichlet_excess(x, z)?,
        volumetric: FieldStats::of(&log2_det_j),
        areal: FieldStats::of(&log2_areal),
        metric: FieldStats::of(&log2_metric),
        profiles: spatial_profiles(x, &per_vertex, opts.profile_bins),
        log2_det_j,
        log2_areal,
        log2_metric,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidParameter(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl Iterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TetRow {
    tet: usize,
    log2_det_j: f64,
}

#[derive(Serialize)]
struct TriangleRow {
    triangle: usize,
    v0: usize,
    v1: usize,
    v2: usize,
    log2_areal: f64,
}

#[derive(Serialize)]
struct EdgeRow {
    v0: usize,
    v1: usize,
    log2_metric: f64,
}

impl DistortionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Writes `<stem>_tets.csv`, `<stem>_triangles.csv` and `<stem>_edges.csv`
    /// into `dir`, one row per element.
    pub fn write_csvs(&self, dir: &Path, stem: &str, z: &TetMesh, topo: &BoundaryTopology) -> Result<Vec<PathBuf>> {
        let paths = ["tets", "triangles", "edges"].map(|k| dir.join(format!("{stem}_{k}.csv")));
        write_csv(
            &paths[0],
            self.log2_det_j.iter().enumerate().map(|(tet, &v)| TetRow { tet, log2_det_j: v }),
        )?;
        write_csv(
            &paths[1],
            topo.triangles.iter().zip(&self.log2_areal).enumerate().map(|(i, (t, &v))| TriangleRow {
                triangle: i,
                v0: t[0],
                v1: t[1],
                v2: t[2],
                log2_areal: v,
            }),
        )?;
        write_csv(
            &paths[2],
            z.edges().iter().zip(&self.log2_metric).map(|(e, &v)| EdgeRow {
                v0: e[0],
                v1: e[1],
                log2_metric: v,
            }),
        )?;
        Ok(paths.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tests::box_labels;
    use crate::mesh::boundary_topology;
    use crate::synth::{axis_box, bent_slab, BentSlabSpec};

    #[test]
    fn identity_is_distortion_free() {
        let b = axis_box(4.0, 3.0, 2.0, [4, 3, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let r = report(&b.mesh, b.mesh.vertices(), &topo, None, &ReportOptions::default()).unwrap();
        assert_eq!(r.dirichlet_excess_percent, 0.0);
        assert!(r.log2_det_j.iter().chain(&r.log2_areal).chain(&r.log2_metric).all(|v| *v == 0.0));
        for b in r.profiles.radial.iter().chain(&r.profiles.height) {
            assert!(b.mean.map_or(true, |m| m == 0.0));
        }
        assert_eq!(r.log2_metric.len(), r.counts.edges);
        let back: DistortionReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn uniform_doubling() {
        let s = bent_slab(&BentSlabSpec {
            length: 30.0,
            width: 20.0,
            thickness: 6.0,
            bend_angle: 1.0,
            resolution: [6, 4, 2],
        })
        .unwrap();
        let x: Vec<Vec3> = s.mesh.vertices().iter().map(|p| p * 2.0).collect();
        let topo = boundary_topology(&s.mesh).unwrap();
        let r = report(&s.mesh, &x, &topo, None, &ReportOptions::default()).unwrap();
        assert!((r.dirichlet_excess_percent - 112.5).abs() < 1e-9);
        assert!(r.log2_det_j.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(r.log2_areal.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(r.log2_metric.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // Volume bookkeeping: sum_k V_k 2^{log2 det J} = |X| / |Z|.
        let total = s.mesh.total_volume();
        let lhs: f64 = r.log2_det_j.iter().enumerate().map(|(k, l)| s.mesh.signed_volume(k) / total * l.exp2()).sum();
        assert!((lhs - 8.0).abs() < 1e-10 * 8.0);
    }

    #[test]
    fn rms_of_unit_voxel_offset() {
        let b = axis_box(6.0, 4.0, 2.0, [6, 4, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.0);
        let spec = TemplateSpec::ParallelPlanes { h: 1.0 };
        let fit = template_rms(b.mesh.vertices(), &topo, Some(&labels), &spec, 3.0).unwrap();
        assert_eq!(fit.rms, 0.0);
        assert!(fit.constrained_mass > 0.0 && fit.constrained_mass < 1.0);
        // Push every fetal vertex up and every maternal vertex down by 3 mm;
        // margin vertices move too but contribute nothing.
        let mut x = b.mesh.vertices().to_vec();
        for (m, &v) in topo.vertices.iter().enumerate() {
            x[v].z += match labels[m] {
                Side::Fetal => 3.0,
                Side::Maternal => -3.0,
                Side::Margin => 7.0,
            };
        }
        let fit = template_rms(&x, &topo, Some(&labels), &spec, 3.0).unwrap();
        assert!((fit.rms - 1.0).abs() < 1e-12);
        assert_eq!(fit.units, RmsUnits::Voxels);
        assert!(template_rms(&x, &topo, None, &spec, 3.0).is_err());
    }

    #[test]
    fn constant_field_gives_flat_profile() {
        let b = axis_box(4.0, 3.0, 2.0, [4, 3, 2]).unwrap();
        let p = spatial_profiles(b.mesh.vertices(), &vec![0.7; b.mesh.num_vertices()], 5);
        for bin in p.radial.iter().chain(&p.height) {
            if bin.count > 0 {
                assert!((bin.mean.unwrap() - 0.7).abs() < 1e-12);
            }
        }
        assert_eq!(p.radial.iter().map(|b| b.count).sum::<usize>(), b.mesh.num_vertices());
        assert!(Profiles::max_step(&p.radial) < 1e-12);
    }

    #[test]
    fn flipped_tet_is_an_error() {
        let b = axis_box(1.0, 1.0, 1.0, [1, 1, 1]).unwrap();
        let x: Vec<Vec3> = b.mesh.vertices().iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        assert!(matches!(dirichlet_excess(&x, &b.mesh), Err(Error::FlippedTet { .. })));
        assert!(matches!(volumetric_distortion(&x, &b.mesh), Err(Error::FlippedTet { .. })));
    }
}

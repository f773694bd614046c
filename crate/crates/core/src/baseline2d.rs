//! Slice-and-disk baseline: horizontal cross-sections of the flattened mesh,
//! carried back to the original frame and each mapped harmonically to a disk.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{bbox_of, TetMesh, Vec3};
use crate::metrics::{areal_distortion, metric_distortion, FieldStats};
use crate::sparse::{conjugate_gradient, CsrMatrix};

pub type Vec2 = Vector2<f64>;

/// Default distance between slicing planes, one voxel.
pub const DEFAULT_SLICE_MM: f64 = 3.0;

/// A triangulated horizontal cross-section with disk topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSurface {
    pub level: f64,
    /// Positions in the flattened frame (all at height `level`).
    pub template: Vec<Vec3>,
    /// Positions in the original frame, `Z_k alpha`.
    pub original: Vec<Vec3>,
    /// Source tet and barycentric weights of each vertex.
    pub source: Vec<(usize, [f64; 4])>,
    /// Triangles oriented with `+z` normals in the flattened frame.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary vertices in loop order, counterclockwise seen from `+z`.
    pub boundary: Vec<usize>,
}

impl SliceSurface {
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |i| [t[i].min(t[(i + 1) % 3]), t[i].max(t[(i + 1) % 3])]))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn template_area(&self) -> f64 {
        self.triangles.iter().map(|t| tri_area(&self.template, t)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SliceOutcome {
    /// The plane misses the mesh.
    Empty,
    Surface(SliceSurface),
    /// Cross-section is not a single disk; skipped.
    NotDisk { components: usize, loops: usize },
}

fn tri_area(p: &[Vec3], t: &[usize; 3]) -> f64 {
    0.5 * (p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])).norm()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Key {
    Vertex(usize),
    Edge(usize, usize),
}

/// Cross-section of the mapped mesh `x` (connectivity of `z`) with the plane
/// `x3 = level`, by marching tetrahedra. Vertices on the plane count as
/// above it, so in-plane faces are produced once, by the tet below.
pub fn slice_at(x: &[Vec3], z: &TetMesh, level: f64) -> Result<SliceOutcome> {
    if x.len() != z.num_vertices() {
        return Err(Error::ConnectivityMismatch(format!(
            "{} mapped vertices for a mesh with {}",
            x.len(),
            z.num_vertices()
        )));
    }
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut source: Vec<(usize, [f64; 4])> = Vec::new();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for (k, t) in z.tets().iter().enumerate() {
        let d = t.map(|v| x[v].z - level);
        let below: Vec<usize> = (0..4).filter(|&i| d[i] < 0.0).collect();
        let above: Vec<usize> = (0..4).filter(|&i| d[i] >= 0.0).collect();
        if below.is_empty() || above.is_empty() {
            continue;
        }
        let mut point = |a: usize, b: usize| -> usize {
            // a below, b above (or on) the plane.
            let s = d[a] / (d[a] - d[b]);
            let key = if d[b] == 0.0 {
                Key::Vertex(t[b])
            } else {
                Key::Edge(t[a].min(t[b]), t[a].max(t[b]))
            };
            *index.entry(key).or_insert_with(|| {
                let mut alpha = [0.0; 4];
                if d[b] == 0.0 {
                    alpha[b] = 1.0;
                } else {
                    alpha[a] = 1.0 - s;
                    alpha[b] = s;
                }
                source.push((k, alpha));
                source.len() - 1
            })
        };
        let poly: Vec<usize> = match (below.len(), above.len()) {
            (1, 3) => above.iter().map(|&b| point(below[0], b)).collect(),
            (3, 1) => below.iter().map(|&a| point(a, above[0])).collect(),
            _ => {
                let (p, q, r, s) = (below[0], below[1], above[0], above[1]);
                vec![point(p, r), point(p, s), point(q, s), point(q, r)]
            }
        };
        for i in 1..poly.len() - 1 {
            tris.push([poly[0], poly[i], poly[i + 1]]);
        }
    }
    let pos = |i: usize| {
        let (k, a) = source[i];
        let t = z.tets()[k];
        (0..4).fold(Vec3::zeros(), |acc, j| acc + x[t[j]] * a[j])
    };
    let mut template: Vec<Vec3> = (0..source.len()).map(pos).collect();
    for p in &mut template {
        p.z = level;
    }
    // Drop triangles collapsed by on-plane vertices and orient the rest up.
    let scale = {
        let (lo, hi) = bbox_of(x);
        (hi - lo).norm()
    };
    tris.retain_mut(|t| {
        let n = (template[t[1]] - template[t[0]]).cross(&(template[t[2]] - template[t[0]]));
        if n.z < 0.0 {
            t.swap(1, 2);
        }
        t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && n.z.abs() > 1e-14 * scale * scale
    });
    if tris.is_empty() {
        return Ok(SliceOutcome::Empty);
    }
    // Compact away vertices used only by dropped triangles.
    let mut remap = vec![usize::MAX; source.len()];
    let mut keep = Vec::new();
    for t in &mut tris {
        for v in t.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = keep.len();
                keep.push(*v);
            }
            *v = remap[*v];
        }
    }
    let template: Vec<Vec3> = keep.iter().map(|&i| template[i]).collect();
    let source: Vec<(usize, [f64; 4])> = keep.iter().map(|&i| source[i]).collect();
    let original: Vec<Vec3> = source
        .iter()
        .map(|&(k, a)| {
            let zt = z.tet_points(k);
            (0..4).fold(Vec3::zeros(), |acc, j| acc + zt[j] * a[j])
        })
        .collect();

    match disk_boundary(template.len(), &tris) {
        Ok(boundary) => Ok(SliceOutcome::Surface(SliceSurface {
            level,
            template,
            original,
            source,
            triangles: tris,
            boundary,
        })),
        Err((components, loops)) => Ok(SliceOutcome::NotDisk { components, loops }),
    }
}

/// The single boundary loop of an oriented disk triangulation, or the
/// number of components and loops when it is not a disk.
fn disk_boundary(n: usize, tris: &[[usize; 3]]) -> std::result::Result<Vec<usize>, (usize, usize)> {
    let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in tris {
        for i in 0..3 {
            *directed.entry((t[i], t[(i + 1) % 3])).or_default() += 1;
        }
    }
    // Union-find over vertices for component counting.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for t in tris {
        for i in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[i]));
            parent[a] = b;
        }
    }
    let components = (0..n).filter(|&i| find(&mut parent, i) == i).count();

    let mut manifold = directed.values().all(|&c| c == 1);
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(a, b), _) in directed.iter() {
        if !directed.contains_key(&(b, a)) && next.insert(a, b).is_some() {
            manifold = false;
        }
    }
    let mut loops = Vec::new();
    let mut seen = vec![false; n];
    for &start in next.keys() {
        if seen[start] {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut v = next[&start];
        while v != start {
            if seen[v] || !next.contains_key(&v) {
                manifold = false;
                break;
            }
            seen[v] = true;
            lp.push(v);
            v = next[&v];
        }
        loops.push(lp);
    }
    let edges = directed.len() - (directed.len() - next.len()) / 2;
    let euler = n as i64 - edges as i64 + tris.len() as i64;
    if manifold && components == 1 && loops.len() == 1 && euler == 1 {
        Ok(loops.pop().unwrap())
    } else {
        Err((components, loops.len()))
    }
}

/// Plane levels `floor(extent / spacing) + 1` apart by `spacing`, centered
/// on the height range of `x`.
pub fn slice_levels(x: &[Vec3], spacing: f64) -> Vec<f64> {
    let (lo, hi) = bbox_of(x);
    let n = ((hi.z - lo.z) / spacing).floor() as usize + 1;
    let mid = 0.5 * (lo.z + hi.z);
    (0..n).map(|i| mid + (i as f64 - (n - 1) as f64 / 2.0) * spacing).collect()
}

/// Slices at every level, in parallel. Non-disk sections are logged.
pub fn slice_surfaces(x: &[Vec3], z: &TetMesh, spacing: f64) -> Result<Vec<SliceOutcome>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("slice spacing must be positive, got {spacing}")));
    }
    let out: Vec<SliceOutcome> = slice_levels(x, spacing)
        .par_iter()
        .map(|&c| slice_at(x, z, c))
        .collect::<Result<_>>()?;
    for (i, o) in out.iter().enumerate() {
        if let SliceOutcome::NotDisk { components, loops } = o {
            log::warn!("slice {i} is not a disk ({components} components, {loops} boundary loops); skipped");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Cotangent,
    /// Used when cotangent weights fold the embedding.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskEmbedding {
    pub uv: Vec<Vec2>,
    pub weights: Weights,
    pub radius: f64,
}

impl DiskEmbedding {
    pub fn scaled(&self, s: f64) -> DiskEmbedding {
        DiskEmbedding {
            uv: self.uv.iter().map(|p| p * s).collect(),
            weights: self.weights,
            radius: self.radius * s,
        }
    }

    pub fn as_points(&self) -> Vec<Vec3> {
        self.uv.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect()
    }

    pub fn min_signed_area(&self, triangles: &[[usize; 3]]) -> f64 {
        triangles
            .iter()
            .map(|t| signed_area(&self.uv[t[0]], &self.uv[t[1]], &self.uv[t[2]]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    0.5 * ((b - a).x * (c - a).y - (b - a).y * (c - a).x)
}

/// Symmetric edge weights of the surface Laplacian.
pub fn laplacian_weights(p: &[Vec3], triangles: &[[usize; 3]], kind: Weights) -> BTreeMap<(usize, usize), f64> {
    let mut w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for t in triangles {
        for i in 0..3 {
            let (a, b, o) = (t[(i + 1) % 3], t[(i + 2) % 3], t[i]);
            let value = match kind {
                // Half the cotangent of the angle opposite the edge.
                Weights::Cotangent => {
                    let (u, v) = (p[a] - p[o], p[b] - p[o]);
                    0.5 * u.dot(&v) / u.cross(&v).norm()
                }
                Weights::Uniform => 0.5,
            };
            *w.entry((a.min(b), a.max(b))).or_default() += value;
        }
    }
    w
}

fn solve_interior(n: usize, boundary: &[usize], bpos: &[Vec2], w: &BTreeMap<(usize, usize), f64>) -> Result<Vec<Vec2>> {
    let mut slot = vec![usize::MAX; n];
    let mut fixed = vec![None; n];
    for (b, p) in boundary.iter().zip(bpos) {
        fixed[*b] = Some(*p);
    }
    let interior: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    for (s, &i) in interior.iter().enumerate() {
        slot[i] = s;
    }
    let mut uv: Vec<Vec2> = fixed.iter().map(|f| f.unwrap_or_else(Vec2::zeros)).collect();
    if interior.is_empty() {
        return Ok(uv);
    }
    let m = interior.len();
    let mut trip = Vec::new();
    let mut rhs = [vec![0.0; m], vec![0.0; m]];
    for (&(a, b), &wij) in w {
        for (i, j) in [(a, b), (b, a)] {
            if slot[i] == usize::MAX {
                continue;
            }
            trip.push((slot[i], slot[i], wij));
            match fixed[j] {
                Some(p) => {
                    rhs[0][slot[i]] += wij * p.x;
                    rhs[1][slot[i]] += wij * p.y;
                }
                None => trip.push((slot[i], slot[j], -wij)),
            }
        }
    }
    let l = CsrMatrix::from_triplets(m, trip);
    for (c, r) in rhs.iter().enumerate() {
        let sol = conjugate_gradient(|v, out| l.mul_vec(v, out), r, &[], 1e-14, 20 * m + 100)?;
        for (s, &i) in interior.iter().enumerate() {
            uv[i][c] = sol[s];
        }
    }
    Ok(uv)
}

/// Harmonic map of a disk surface (in original coordinates) onto a disk of
/// `radius`: boundary by arc length, interior by cotangent Laplace, uniform
/// weights if the cotangent solution folds. The boundary vertex with the
/// largest original height ends up at +90 degrees.
pub fn harmonic_disk(surface: &SliceSurface, radius: f64) -> Result<DiskEmbedding> {
    let p = &surface.original;
    let loop_ = &surface.boundary;
    let nb = loop_.len();
    let mut arc = vec![0.0; nb + 1];
    for i in 0..nb {
        arc[i + 1] = arc[i] + (p[loop_[(i + 1) % nb]] - p[loop_[i]]).norm();
    }
    let total = arc[nb];
    let north = (0..nb)
        .max_by(|&a, &b| p[loop_[a]].z.total_cmp(&p[loop_[b]].z).then(b.cmp(&a)))
        .unwrap();
    let offset = PI / 2.0 - 2.0 * PI * arc[north] / total;
    let bpos: Vec<Vec2> = (0..nb)
        .map(|i| {
            let a = 2.0 * PI * arc[i] / total + offset;
            Vec2::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    let cot = laplacian_weights(p, &surface.triangles, Weights::Cotangent);
    let emb = solve_interior(p.len(), loop_, &bpos, &cot).map(|uv| DiskEmbedding {
        uv,
        weights: Weights::Cotangent,
        radius,
    });
    match emb {
        Ok(e) if e.min_signed_area(&surface.triangles) > 0.0 => Ok(e),
        _ => {
            log::info!("cotangent embedding folds at level {}; using uniform weights", surface.level);
            let uni = laplacian_weights(p, &surface.triangles, Weights::Uniform);
            Ok(DiskEmbedding {
                uv: solve_interior(p.len(), loop_, &bpos, &uni)?,
                weights: Weights::Uniform,
                radius,
            })
        }
    }
}

/// Scale making the mean of `log2 areal` zero: areas scale by `s^2`.
pub fn zero_mean_scale(log2_areal: &[f64]) -> f64 {
    let mean = log2_areal.iter().sum::<f64>() / log2_areal.len() as f64;
    (-mean / 2.0).exp2()
}

/// Disk radius giving zero mean per-triangle `log2 areal` over the whole
/// stack, for embeddings computed at `radius`.
pub fn choose_radius(stack: &[(&SliceSurface, &DiskEmbedding)]) -> f64 {
    let mut all = Vec::new();
    let mut radius = 1.0;
    for (s, e) in stack {
        all.extend(areal_distortion(&e.as_points(), &s.original, &s.triangles));
        radius = e.radius;
    }
    radius * zero_mean_scale(&all)
}

/// Baseline and volumetric distortion measured on the same slice triangles
/// and edges, relative to their original-frame geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub slices: usize,
    pub skipped: usize,
    pub uniform_fallbacks: usize,
    pub radius: f64,
    pub volumetric_areal: FieldStats,
    pub volumetric_metric: FieldStats,
    pub baseline_areal: FieldStats,
    pub baseline_metric: FieldStats,
    /// Baseline areal distortion of triangles touching the slice boundary.
    pub baseline_boundary_areal: FieldStats,
}

pub struct BaselineRun {
    pub surfaces: Vec<SliceSurface>,
    /// Embeddings already scaled to the stack radius.
    pub embeddings: Vec<DiskEmbedding>,
    pub comparison: Comparison,
}

/// Full baseline on a flattening: slice, embed, choose the stack radius and
/// compare against the volumetric map on the same elements.
pub fn run_baseline(x: &[Vec3], z: &TetMesh, spacing: f64) -> Result<BaselineRun> {
    let outcomes = slice_surfaces(x, z, spacing)?;
    let skipped = outcomes.iter().filter(|o| matches!(o, SliceOutcome::NotDisk { .. })).count();
    let surfaces: Vec<SliceSurface> = outcomes
        .into_iter()
        .filter_map(|o| match o {
            SliceOutcome::Surface(s) => Some(s),
            _ => None,
        })
        .collect();
    if surfaces.is_empty() {
        return Err(Error::InvalidParameter("no disk-shaped slices to compare".into()));
    }
    let unit: Vec<DiskEmbedding> = surfaces.par_iter().map(|s| harmonic_disk(s, 1.0)).collect::<Result<_>>()?;
    let pairs: Vec<(&SliceSurface, &DiskEmbedding)> = surfaces.iter().zip(&unit).collect();
    let radius = choose_radius(&pairs);
    let embeddings: Vec<DiskEmbedding> = unit.iter().map(|e| e.scaled(radius)).collect();

    let (mut va, mut vm, mut ba, mut bm, mut bb) = (vec![], vec![], vec![], vec![], vec![]);
    for (s, e) in surfaces.iter().zip(&embeddings) {
        let edges = s.edges();
        let uv = e.as_points();
        va.extend(areal_distortion(&s.template, &s.original, &s.triangles));
        vm.extend(metric_distortion(&s.template, &s.original, &edges));
        let areal = areal_distortion(&uv, &s.original, &s.triangles);
        bm.extend(metric_distortion(&uv, &s.original, &edges));
        let mut on_boundary = vec![false; s.template.len()];
        for &b in &s.boundary {
            on_boundary[b] = true;
        }
        for (t, a) in s.triangles.iter().zip(&areal) {
            if t.iter().any(|&v| on_boundary[v]) {
                bb.push(*a);
            }
        }
        ba.extend(areal);
    }
    let comparison = Comparison {
        slices: surfaces.len(),
        skipped,
        uniform_fallbacks: embeddings.iter().filter(|e| e.weights == Weights::Uniform).count(),
        radius,
        volumetric_areal: FieldStats::of(&va),
        volumetric_metric: FieldStats::of(&vm),
        baseline_areal: FieldStats::of(&ba),
        baseline_metric: FieldStats::of(&bm),
        baseline_boundary_areal: FieldStats::of(&bb),
    };
    Ok(BaselineRun {
        surfaces,
        embeddings,
        comparison,
    })
}

//! Point location in tetrahedral meshes and volume pull-back through a
//! piecewise-affine map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{bbox_of, edge_matrix, TetMesh, Vec3};
use crate::volume::{ScalarVolume, FILL_KEY};

/// Relative location tolerance, in units of the mesh bbox diagonal.
pub const LOCATE_TOL: f64 = 1e-9;

/// Barycentric weights of `x` with respect to the tet corners `p`.
///
/// The weights sum to one by construction. A degenerate tet yields NaNs.
pub fn barycentric(x: &Vec3, p: &[Vec3; 4]) -> [f64; 4] {
    let Some(inv) = edge_matrix(p).try_inverse() else {
        return [f64::NAN; 4];
    };
    let a = inv * (x - p[0]);
    [1.0 - a.x - a.y - a.z, a.x, a.y, a.z]
}

/// Barycentric weights when `x` lies within `tol` (a length) of the tet,
/// measured as signed distance to each face plane.
pub fn contains(x: &Vec3, p: &[Vec3; 4], tol: f64) -> Option<[f64; 4]> {
    let alpha = barycentric(x, p);
    let det = edge_matrix(p).determinant().abs();
    for (i, a) in alpha.iter().enumerate() {
        // Height of vertex i above its opposite face.
        let f: Vec<&Vec3> = (0..4).filter(|&j| j != i).map(|j| &p[j]).collect();
        let h = det / (f[1] - f[0]).cross(&(f[2] - f[0])).norm();
        if !(a * h >= -tol) {
            return None;
        }
    }
    Some(alpha)
}

/// Uniform hash grid over the tets of one mesh.
#[derive(Debug, Clone)]
pub struct PointLocator {
    lo: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// Tet indices per cell, ascending.
    cells: Vec<Vec<u32>>,
    tol: f64,
}

impl PointLocator {
    pub fn new(mesh: &TetMesh) -> Self {
        let tol = LOCATE_TOL * mesh.bbox_diagonal();
        let boxes: Vec<(Vec3, Vec3)> = (0..mesh.num_tets()).map(|k| bbox_of(&mesh.tet_points(k))).collect();
        let mean_extent = boxes.iter().map(|(lo, hi)| (hi - lo).max()).sum::<f64>() / boxes.len() as f64;
        let (mut lo, mut hi) = mesh.bbox();
        lo.add_scalar_mut(-tol);
        hi.add_scalar_mut(tol);
        let extent = hi - lo;
        // Keep the grid to a few cells per tet even for skinny meshes.
        let mut cell = mean_extent.max(extent.max() * 1e-6);
        let budget = 4.0 * boxes.len() as f64 + 64.0;
        while (0..3).map(|a| (extent[a] / cell).ceil().max(1.0)).product::<f64>() > budget {
            cell *= 1.25;
        }
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).ceil() as usize).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clamp = |v: f64, a: usize| ((v / cell).floor().max(0.0) as usize).min(dims[a] - 1);
        for (k, (blo, bhi)) in boxes.iter().enumerate() {
            let i0 = [0, 1, 2].map(|a| clamp(blo[a] - tol - lo[a], a));
            let i1 = [0, 1, 2].map(|a| clamp(bhi[a] + tol - lo[a], a));
            for z in i0[2]..=i1[2] {
                for y in i0[1]..=i1[1] {
                    for x in i0[0]..=i1[0] {
                        cells[x + dims[0] * (y + dims[1] * z)].push(k as u32);
                    }
                }
            }
        }
        PointLocator { lo, cell, dims, cells, tol }
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    fn candidates(&self, p: &Vec3) -> &[u32] {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - self.lo[a]) / self.cell;
            if !(u >= 0.0 && u <= self.dims[a] as f64) {
                return &[];
            }
            idx[a] = (u.floor() as usize).min(self.dims[a] - 1);
        }
        &self.cells[idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])]
    }

    /// Lowest-index tet containing `p`, with its barycentric weights.
    pub fn locate(&self, mesh: &TetMesh, p: &Vec3) -> Option<(usize, [f64; 4])> {
        self.candidates(p).iter().find_map(|&k| {
            let k = k as usize;
            contains(p, &mesh.tet_points(k), self.tol).map(|a| (k, a))
        })
    }
}

/// Output raster geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    /// Grid with the given spacing covering the mesh bbox plus one voxel.
    pub fn covering(mesh: &TetMesh, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing:?}")));
        }
        let (lo, hi) = mesh.bbox();
        let origin = [0, 1, 2].map(|a| lo[a] - spacing[a]);
        let dims = [0, 1, 2].map(|a| ((hi[a] + spacing[a] - origin[a]) / spacing[a]).ceil() as usize + 1);
        Ok(GridSpec { dims, spacing, origin })
    }
}

/// Samples `volume` (living in the frame of `z`) on a grid in the frame of
/// `x`, through the piecewise-affine map `x -> z` shared by both meshes.
/// Voxels outside the `x` mesh hold NaN, recorded under [`FILL_KEY`].
pub fn pull_back(volume: &ScalarVolume, z: &TetMesh, x: &TetMesh, grid: &GridSpec) -> Result<ScalarVolume> {
    if z.num_vertices() != x.num_vertices() || z.tets() != x.tets() {
        return Err(Error::ConnectivityMismatch(format!(
            "{} vertices / {} tets vs {} vertices / {} tets",
            z.num_vertices(),
            z.num_tets(),
            x.num_vertices(),
            x.num_tets()
        )));
    }
    let locator = PointLocator::new(x);
    let mut out = ScalarVolume::new(grid.dims, grid.spacing, grid.origin, vec![f64::NAN; grid.dims.iter().product()])?;
    let [nx, ny, _] = grid.dims;
    let shape = out.clone();
    out.data.par_iter_mut().enumerate().with_min_len(512).for_each(|(n, v)| {
        let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
        let p = shape.world(i, j, k);
        if let Some((t, a)) = locator.locate(x, &p) {
            let zt = z.tet_points(t);
            let q = zt[0] * a[0] + zt[1] * a[1] + zt[2] * a[2] + zt[3] * a[3];
            *v = volume.sample_trilinear(&q);
        }
    });
    out.metadata = volume.metadata.clone();
    out.metadata.insert(FILL_KEY.into(), "nan".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Frame;
    use crate::synth::axis_box;
    use nalgebra::{Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tet(rng: &mut ChaCha8Rng) -> [Vec3; 4] {
        loop {
            let p: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-2.0..2.0)));
            if crate::mesh::det6(&p).abs() > 0.5 {
                return p;
            }
        }
    }

    #[test]
    fn centroid_and_corners() {
        let p = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let c = (p[0] + p[1] + p[2] + p[3]) / 4.0;
        for a in barycentric(&c, &p) {
            assert!((a - 0.25).abs() < 1e-15);
        }
        for j in 0..4 {
            let a = barycentric(&p[j], &p);
            for (i, v) in a.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_tet(&mut rng);
            let w: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.05..1.0));
            let s: f64 = w.iter().sum();
            let x = (0..4).fold(Vec3::zeros(), |acc, i| acc + p[i] * (w[i] / s));
            let a = barycentric(&x, &p);
            let m = Matrix4::from_fn(|r, c| if r < 3 { p[c][r] } else { 1.0 });
            let oracle = m.lu().solve(&Vector4::new(x.x, x.y, x.z, 1.0)).unwrap();
            for i in 0..4 {
                assert!((a[i] - oracle[i]).abs() < 1e-12);
            }
            let back = (0..4).fold(Vec3::zeros(), |acc, i| acc + p[i] * a[i]);
            assert!((back - x).norm() < 1e-12 * 4.0);
            assert!(contains(&x, &p, 0.0).is_some());
        }
    }

    #[test]
    fn containment_tolerance_is_a_distance() {
        let p = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(contains(&Vec3::new(0.2, 0.2, -1e-6), &p, 2e-6).is_some());
        assert!(contains(&Vec3::new(0.2, 0.2, -1e-6), &p, 5e-7).is_none());
        // Slanted face x + y + z = 1 is at distance d / sqrt(3) beyond.
        let d = 3e-6;
        let q = Vec3::new(0.4, 0.3, 0.3 + d);
        assert!(contains(&q, &p, d / 3f64.sqrt() * 1.01).is_some());
        assert!(contains(&q, &p, d / 3f64.sqrt() * 0.99).is_none());
    }

    #[test]
    fn locate_centroid_and_shared_face() {
        let b = axis_box(3.0, 2.0, 1.0, [3, 2, 1]).unwrap();
        let loc = PointLocator::new(&b.mesh);
        for k in 0..b.mesh.num_tets() {
            let p = b.mesh.tet_points(k);
            let c = (p[0] + p[1] + p[2] + p[3]) / 4.0;
            assert_eq!(loc.locate(&b.mesh, &c).unwrap().0, k);
        }
        // A face shared by two tets: its centroid goes to the lower index.
        let tets = b.mesh.tets();
        let mut found = false;
        'outer: for a in 0..tets.len() {
            for c in a + 1..tets.len() {
                let shared: Vec<usize> = tets[a].iter().copied().filter(|v| tets[c].contains(v)).collect();
                if shared.len() == 3 {
                    let v = b.mesh.vertices();
                    let f = (v[shared[0]] + v[shared[1]] + v[shared[2]]) / 3.0;
                    assert_eq!(loc.locate(&b.mesh, &f).unwrap().0, a);
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found);
        assert!(loc.locate(&b.mesh, &Vec3::new(10.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn identity_pull_back_of_constant_and_ramp() {
        let b = axis_box(4.0, 3.0, 2.0, [4, 3, 2]).unwrap();
        let vol = ScalarVolume::from_fn([9, 7, 5], [0.5; 3], [0.0, 0.0, -1.0], |p| 2.0 * p.x - p.z).unwrap();
        let grid = GridSpec::covering(&b.mesh, [0.5; 3]).unwrap();
        let out = pull_back(&vol, &b.mesh, &b.mesh, &grid).unwrap();
        assert_eq!(out.metadata.get(FILL_KEY).map(String::as_str), Some("nan"));
        let mut inside = 0;
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    let v = out.get(i, j, k);
                    let p = out.world(i, j, k);
                    if v.is_nan() {
                        assert!(loc_brute(&b.mesh, &p).is_none());
                    } else {
                        inside += 1;
                        assert!((v - (2.0 * p.x - p.z)).abs() < 1e-9);
                    }
                }
            }
        }
        assert_eq!(inside, 9 * 7 * 5);
    }

    fn loc_brute(mesh: &TetMesh, p: &Vec3) -> Option<usize> {
        let tol = LOCATE_TOL * mesh.bbox_diagonal();
        (0..mesh.num_tets()).find(|&k| contains(p, &mesh.tet_points(k), tol).is_some())
    }

    #[test]
    fn mismatched_connectivity_is_rejected() {
        let a = axis_box(1.0, 1.0, 1.0, [1, 1, 1]).unwrap();
        let b = axis_box(1.0, 1.0, 1.0, [2, 1, 1]).unwrap();
        let vol = ScalarVolume::from_fn([2, 2, 2], [1.0; 3], [0.0; 3], |_| 1.0).unwrap();
        let grid = GridSpec::covering(&a.mesh, [0.5; 3]).unwrap();
        assert!(matches!(pull_back(&vol, &a.mesh, &b.mesh, &grid), Err(Error::ConnectivityMismatch(_))));
        let moved = a.mesh.with_vertices(a.mesh.vertices().iter().map(|v| v * 2.0).collect(), Frame::Template);
        assert!(pull_back(&vol, &a.mesh, &moved, &grid).is_ok());
    }
}

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::sparse::CsrMatrix;

use super::Geodesics;

#[derive(Debug, Clone)]
pub struct AffinityGraph {
    pub weights: CsrMatrix,
    pub degrees: Vec<f64>,
    pub gamma: f64,
}

/// `w_ij = exp(gamma <n_i, n_j> l_ij)` on every geodesic pair; no self loops.
///
/// Note the sign: for aligned normals the weight grows with distance.
pub fn build_affinity(normals: &[Vec3], geodesics: &Geodesics, gamma: f64) -> Result<AffinityGraph> {
    for (index, n) in normals.iter().enumerate() {
        let norm = n.norm();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(Error::NonUnitNormal { index, norm });
        }
    }
    let mut triplets = Vec::with_capacity(2 * geodesics.pairs.len());
    for &(i, j, l) in &geodesics.pairs {
        let w = (gamma * normals[i].dot(&normals[j]) * l).exp();
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    let weights = CsrMatrix::from_triplets(normals.len(), triplets);
    let degrees = weights.row_sums();
    if let Some(v) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedVertex(v));
    }
    Ok(AffinityGraph { weights, degrees, gamma })
}

/// `L = I - D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &CsrMatrix) -> Result<CsrMatrix> {
    let n = w.dim();
    let degrees = w.row_sums();
    if let Some(v) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedVertex(v));
    }
    let s: Vec<f64> = degrees.iter().map(|d| d.sqrt()).collect();
    let mut t = Vec::with_capacity(w.nnz() + n);
    for i in 0..n {
        t.push((i, i, 1.0));
        for (j, v) in w.row(i) {
            // Products commute bitwise, so symmetry of W carries over.
            t.push((i, j, -v / (s[i] * s[j])));
        }
    }
    Ok(CsrMatrix::from_triplets(n, t))
}

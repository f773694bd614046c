use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{axpy, conjugate_gradient, dot, norm, project_out, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub seed: u64,
    /// Required `|L v - lambda v|` for a unit `v`.
    pub tolerance: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            seed: 0,
            tolerance: 1e-10,
            krylov_dim: 40,
            max_restarts: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fiedler {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
    /// Total Lanczos steps taken.
    pub iterations: usize,
}

/// Largest Ritz pair of `apply` over the Krylov space of `start`, with full
/// reorthogonalization. `start` must be a unit vector orthogonal to `deflate`.
fn lanczos_largest(
    apply: &impl Fn(&[f64]) -> Result<Vec<f64>>,
    start: Vec<f64>,
    deflate: &[Vec<f64>],
    m: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut q: Vec<Vec<f64>> = vec![start];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..m {
        let mut w = apply(&q[j])?;
        project_out(&mut w, deflate);
        let a = dot(&w, &q[j]);
        alpha.push(a);
        axpy(-a, &q[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &q[j - 1], &mut w);
        }
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                axpy(-c, qi, &mut w);
            }
        }
        let b = norm(&w);
        if j + 1 == m || b <= 1e-13 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        q.push(w);
    }
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let top = eig.eigenvalues.imax();
    let y = eig.eigenvectors.column(top);
    let mut v = vec![0.0; q[0].len()];
    for (i, qi) in q.iter().take(k).enumerate() {
        axpy(y[i], qi, &mut v);
    }
    project_out(&mut v, deflate);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    Ok((v, k))
}

/// Eigenvector of the second-smallest eigenvalue of a normalized Laplacian.
///
/// `sqrt_degrees` spans the known null space. Runs Lanczos on the deflated
/// pseudo-inverse (each application is a conjugate-gradient solve), restarting
/// from the current Ritz vector until the residual is below tolerance. The
/// sign is fixed so the largest-magnitude entry is positive.
pub fn fiedler_vector(l: &CsrMatrix, sqrt_degrees: &[f64], opts: &EigenOptions) -> Result<Fiedler> {
    let n = l.dim();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two graph vertices".into()));
    }
    let mut u = sqrt_degrees.to_vec();
    let nu = norm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let deflate = vec![u];

    let cg_iters = 20 * n + 100;
    let apply = |x: &[f64]| conjugate_gradient(|p, out| l.mul_vec(p, out), x, &deflate, 1e-13, cg_iters);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_out(&mut v, &deflate);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let m = opts.krylov_dim.min(n - 1).max(1);
    let mut iterations = 0;
    let mut lv = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_restarts {
        let (ritz, steps) = lanczos_largest(&apply, v, &deflate, m)?;
        v = ritz;
        iterations += steps;
        l.mul_vec(&v, &mut lv);
        let mu = dot(&v, &lv);
        let mut r = lv.clone();
        axpy(-mu, &v, &mut r);
        residual = norm(&r);
        if residual < opts.tolerance {
            let imax = (0..n).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
            if v[imax] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            return Ok(Fiedler {
                vector: v,
                eigenvalue: mu,
                residual,
                iterations,
            });
        }
    }
    Err(Error::EigenNoConvergence { iterations, residual })
}

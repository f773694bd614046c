//! Flip-free gradient descent and the flattening pipeline.

mod pipeline;
mod roots;
mod step;

pub use pipeline::{
    align_principal_axes, distance_to_boundary_percentile, flatten, initial_template, volume_thickness_percentile,
    Alignment, FlattenParams, Flattening, TemplateKind,
};
pub use roots::smallest_positive_root;
pub use step::{max_step_flip_free, volume_cubic, StepBound};

use serde::{Deserialize, Serialize};

use crate::energy::{Objective, TemplateSpec};
use crate::error::{Error, Result};
use crate::mesh::{det6, Vec3};

/// How the template parameters move inside the backtracking loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ThetaStep {
    /// Re-step the parameters with every backtracked step size.
    Shared,
    /// Keep the parameters from the first candidate step; only the vertices
    /// backtrack.
    FirstCandidate,
    /// Backtrack the vertices with the parameters held fixed, then backtrack
    /// the parameters on their own from the same initial step.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub theta_step: ThetaStep,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            lambda: 1.0,
            beta: 0.9,
            rho: 0.5,
            eps: 1e-4,
            max_iters: 20_000,
            theta_step: ThetaStep::Separate,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} out of range: {v}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", self.beta);
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho", self.rho);
        }
        if !(self.eps > 0.0) {
            return bad("eps", self.eps);
        }
        Ok(())
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phi: f64,
    /// `|grad_X phi|_F` at this iterate.
    pub grad_norm: f64,
    /// Step that produced this iterate (0 for the start).
    pub eta: f64,
    pub eta_max: f64,
    pub min_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient norm reached `eps`.
    Gradient,
    /// Relative decrease stayed below 1e-12 for 50 iterations.
    Floor,
    MaxIters,
    /// Backtracking could not find a decrease.
    Stalled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatteningResult {
    #[serde(skip)]
    pub x: Vec<Vec3>,
    pub template: TemplateSpec,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    pub converged: bool,
    pub iterations: usize,
}

const FLOOR_REL: f64 = 1e-12;
const FLOOR_RUN: usize = 50;
const STALL_REL: f64 = 1e-14;

pub(crate) fn min_volume(tets: &[[usize; 4]], x: &[Vec3]) -> f64 {
    tets.iter().map(|t| det6(&t.map(|v| x[v])) / 6.0).fold(f64::INFINITY, f64::min)
}

/// Backtracking step on the template parameters alone, with `x` fixed.
fn theta_search(
    obj: &Objective,
    x: &[Vec3],
    spec: &TemplateSpec,
    phi: f64,
    eta0: f64,
    params: &OptimizerParams,
) -> Result<Option<(f64, TemplateSpec)>> {
    let (t0, _, g) = obj.template_gradient(x, spec)?;
    if g.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let theta = spec.theta();
    let mut eta = if eta0.is_finite() {
        eta0
    } else {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        theta.iter().map(|t| t.abs()).fold(1.0, f64::max) / norm
    };
    let floor = STALL_REL * eta;
    while eta >= floor && eta > 0.0 {
        let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect();
        let s = spec.with_theta(&cand);
        if s.validate().is_ok() {
            // Only the template term depends on the parameters.
            let t = obj.template_value(x, &s)?;
            if t < t0 {
                return Ok(Some((phi - (t0 - t), s)));
            }
        }
        eta *= params.rho;
    }
    Ok(None)
}

/// Algorithm: gradient descent from `x0` where every step is capped below
/// the first flip along the search direction and then halved until `phi`
/// decreases.
pub fn descend(obj: &Objective, x0: &[Vec3], spec0: &TemplateSpec, params: &OptimizerParams) -> Result<FlatteningResult> {
    params.validate()?;
    spec0.validate()?;
    let tets = &obj.cache.tets;
    let start_vol = min_volume(tets, x0);
    if !(start_vol > 0.0) {
        return Err(Error::InvalidMesh(format!("starting configuration has min tet volume {start_vol:e}")));
    }

    let mut x = x0.to_vec();
    let mut theta = spec0.theta();
    let mut spec = *spec0;
    let mut grad = obj.gradient(&x, &spec)?;
    let mut phi = grad.terms.total;
    let mut trace = vec![TraceEntry {
        phi,
        grad_norm: grad.x_norm(),
        eta: 0.0,
        eta_max: 0.0,
        min_volume: start_vol,
    }];
    let mut flat_run = 0;
    let mut cand_x = x.clone();
    let mut iterations = 0;

    let termination = loop {
        if grad.x_norm() <= params.eps {
            break Termination::Gradient;
        }
        if iterations >= params.max_iters {
            break Termination::MaxIters;
        }
        let bound = max_step_flip_free(tets, &x, &grad.x);
        let eta_max = bound.eta_max;
        let mut eta = params.beta * eta_max;
        let step_theta = |eta: f64| -> Vec<f64> { theta.iter().zip(&grad.theta).map(|(t, g)| t - eta * g).collect() };
        let mut cand_theta = match params.theta_step {
            ThetaStep::Separate => theta.clone(),
            _ => step_theta(eta),
        };
        let accepted = loop {
            for ((c, xi), gi) in cand_x.iter_mut().zip(&x).zip(&grad.x) {
                *c = xi - gi * eta;
            }
            let cand_spec = spec.with_theta(&cand_theta);
            // A flipped candidate counts as no decrease.
            let value = match obj.value(&cand_x, &cand_spec) {
                Ok(v) => v,
                Err(Error::FlippedTet { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if value < phi && min_volume(tets, &cand_x) > 0.0 {
                break Some((value, cand_spec));
            }
            eta *= params.rho;
            if !(eta >= STALL_REL * eta_max) || eta == 0.0 {
                break None;
            }
            if params.theta_step == ThetaStep::Shared {
                cand_theta = step_theta(eta);
            }
        };
        let Some((value, cand_spec)) = accepted else {
            log::warn!("line search stalled at iteration {iterations} (phi = {phi:e})");
            break Termination::Stalled;
        };

        iterations += 1;
        let (mut value, mut cand_spec) = (value, cand_spec);
        if params.theta_step == ThetaStep::Separate {
            if let Some((v, s)) = theta_search(obj, &cand_x, &cand_spec, value, params.beta * eta_max, params)? {
                value = v;
                cand_spec = s;
            }
        }
        let rel = (phi - value) / phi.abs().max(f64::MIN_POSITIVE);
        std::mem::swap(&mut x, &mut cand_x);
        spec = cand_spec;
        theta = spec.theta();
        phi = value;
        grad = obj.gradient(&x, &spec)?;
        trace.push(TraceEntry {
            phi,
            grad_norm: grad.x_norm(),
            eta,
            eta_max,
            min_volume: min_volume(tets, &x),
        });
        flat_run = if rel < FLOOR_REL { flat_run + 1 } else { 0 };
        if flat_run >= FLOOR_RUN {
            break Termination::Floor;
        }
        if iterations % 1000 == 0 {
            log::debug!("iter {iterations}: phi {phi:.9e} |g| {:.3e} eta {eta:.3e}", grad.x_norm());
        }
    };
    Ok(FlatteningResult {
        x,
        template: spec,
        trace,
        termination,
        converged: matches!(termination, Termination::Gradient | Termination::Floor),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tests::box_labels;
    use crate::mesh::boundary_topology;
    use crate::synth::axis_box;

    #[test]
    fn flat_box_at_optimum_stops_immediately() {
        let b = axis_box(6.0, 4.0, 2.0, [3, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.0);
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), 1.0).unwrap();
        let r = descend(
            &obj,
            b.mesh.vertices(),
            &TemplateSpec::ParallelPlanes { h: 1.0 },
            &OptimizerParams::default(),
        )
        .unwrap();
        assert!(r.converged && r.iterations <= 2);
        for (p, q) in r.x.iter().zip(b.mesh.vertices()) {
            assert!((p - q).norm() < 1e-8);
        }
    }

    #[test]
    fn perturbed_box_descends_monotonically() {
        let b = axis_box(6.0, 4.0, 2.0, [3, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.0);
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), 1.0).unwrap();
        let x0: Vec<Vec3> = b
            .mesh
            .vertices()
            .iter()
            .map(|p| Vec3::new(p.x, p.y, p.z * (1.0 + 0.05 * p.x)))
            .collect();
        for theta_step in [ThetaStep::Separate, ThetaStep::Shared, ThetaStep::FirstCandidate] {
            let params = OptimizerParams {
                theta_step,
                max_iters: 3000,
                ..Default::default()
            };
            let r = descend(&obj, &x0, &TemplateSpec::ParallelPlanes { h: 1.3 }, &params).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1].phi < w[0].phi);
            }
            assert!(r.trace.iter().all(|t| t.min_volume > 0.0));
            if theta_step != ThetaStep::FirstCandidate {
                assert!(r.converged, "{:?}", r.termination);
            }
        }
    }
}

//! Riemannian trust-region minimization on the Grassmannian.
//!
//! The inner subproblem is solved by truncated conjugate gradients
//! (Steihaug-Toint). Hessian-vector products are central finite differences
//! of the Riemannian gradient along the retraction, transported back by
//! projection. With `use_finite_diff_hessian = false` the solver falls back to
//! steepest descent with Armijo backtracking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{project_raw, retract_raw, Subspace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Initial radius; `None` means one eighth of the maximum radius.
    pub initial_trust_radius: Option<f64>,
    /// Maximum radius; `None` means `(π/2)·√m`, the largest geodesic distance.
    pub max_trust_radius: Option<f64>,
    pub use_finite_diff_hessian: bool,
    /// Inner CG iteration cap; `None` means the manifold dimension `m(D−m)`.
    pub max_inner_iter: Option<usize>,
    /// Minimum ratio of actual to predicted decrease for accepting a step.
    pub accept_ratio: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            initial_trust_radius: None,
            max_trust_radius: None,
            use_finite_diff_hessian: true,
            max_inner_iter: None,
            accept_ratio: 0.1,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::Config(format!("{name} must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("grad_tol", Some(self.grad_tol))?;
        positive("initial_trust_radius", self.initial_trust_radius)?;
        positive("max_trust_radius", self.max_trust_radius)?;
        if !(0.0..0.25).contains(&self.accept_ratio) {
            return Err(Error::Config(format!("accept_ratio must lie in [0, 0.25), got {}", self.accept_ratio)));
        }
        Ok(())
    }
}

/// Why a run stopped early.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    MaxIterations,
    TrustRegionCollapse,
    LineSearchFailure,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OptStats {
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Cost of every accepted iterate, starting with the initial point.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub diagnostic: Option<Diagnostic>,
    pub cost_evals: usize,
    pub grad_evals: usize,
}

struct Objective<C, G> {
    cost: C,
    egrad: G,
    cost_evals: usize,
    grad_evals: usize,
}

impl<C, G> Objective<C, G>
where
    C: Fn(&Subspace) -> Result<f64>,
    G: Fn(&Subspace) -> Result<DMatrix<f64>>,
{
    fn cost(&mut self, q: &Subspace) -> Result<f64> {
        self.cost_evals += 1;
        (self.cost)(q)
    }

    fn rgrad(&mut self, q: &Subspace) -> Result<DMatrix<f64>> {
        self.grad_evals += 1;
        let g = (self.egrad)(q)?;
        Ok(project_raw(q.basis(), &g))
    }

    /// Finite-difference Riemannian Hessian applied to `v` at `q`.
    fn hess(&mut self, q: &Subspace, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(DMatrix::zeros(v.nrows(), v.ncols()));
        }
        let h = 1e-5 * (1.0 + q.basis().norm());
        let t = h / norm;
        let plus = retract_raw(q.basis(), &(v * t))?;
        let minus = retract_raw(q.basis(), &(v * -t))?;
        let gp = self.rgrad(&plus)?;
        let gm = self.rgrad(&minus)?;
        Ok(project_raw(q.basis(), &((gp - gm) / (2.0 * t))))
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Minimize `cost` over `G(D, m)` starting from `q0`.
///
/// Never returns a point with higher cost than `q0`. Numerical trouble after
/// the first evaluation ends the run with a diagnostic instead of an error.
pub fn minimize<C, G>(cost: C, egrad: G, q0: &Subspace, opts: &OptimizerOptions) -> Result<(Subspace, f64, OptStats)>
where
    C: Fn(&Subspace) -> Result<f64>,
    G: Fn(&Subspace) -> Result<DMatrix<f64>>,
{
    opts.validate()?;
    let mut obj = Objective { cost, egrad, cost_evals: 0, grad_evals: 0 };
    let f0 = obj.cost(q0)?;
    if !f0.is_finite() {
        return Err(Error::Config(format!("cost is not finite at the initial point ({f0})")));
    }
    let g0 = obj.rgrad(q0)?;
    let (x, fx, mut stats) = if opts.use_finite_diff_hessian {
        trust_region(&mut obj, q0.clone(), f0, g0, opts)
    } else {
        steepest_descent(&mut obj, q0.clone(), f0, g0, opts)
    };
    stats.cost_evals = obj.cost_evals;
    stats.grad_evals = obj.grad_evals;
    Ok((x, fx, stats))
}

fn trust_region<C, G>(
    obj: &mut Objective<C, G>,
    mut x: Subspace,
    mut fx: f64,
    mut grad: DMatrix<f64>,
    opts: &OptimizerOptions,
) -> (Subspace, f64, OptStats)
where
    C: Fn(&Subspace) -> Result<f64>,
    G: Fn(&Subspace) -> Result<DMatrix<f64>>,
{
    let (d, m) = (x.ambient_dim(), x.sub_dim());
    let max_radius = opts.max_trust_radius.unwrap_or(std::f64::consts::FRAC_PI_2 * (m as f64).sqrt());
    let mut radius = opts.initial_trust_radius.unwrap_or(max_radius / 8.0).min(max_radius);
    let max_inner = opts.max_inner_iter.unwrap_or(m * (d - m)).max(1);
    let mut stats = OptStats { cost_trace: vec![fx], ..Default::default() };
    let mut grad_norm = grad.norm();

    for iter in 0..opts.max_iter {
        if grad_norm <= opts.grad_tol {
            stats.converged = true;
            break;
        }
        stats.iterations = iter + 1;

        let (eta, heta, hit_boundary) = match truncated_cg(obj, &x, &grad, radius, max_inner) {
            Ok(step) => step,
            Err(_) => {
                radius /= 4.0;
                if radius < 1e-14 * max_radius {
                    stats.diagnostic = Some(Diagnostic::TrustRegionCollapse);
                    break;
                }
                continue;
            }
        };
        let model_decrease = -(inner(&grad, &eta) + 0.5 * inner(&eta, &heta));

        let trial = retract_raw(x.basis(), &eta).and_then(|y| {
            let fy = obj.cost(&y)?;
            Ok((y, fy))
        });
        let (rho, candidate) = match trial {
            Ok((y, fy)) if fy.is_finite() => {
                let slack = fx.abs().max(1.0) * f64::EPSILON * 1e3;
                let rho = (fx - fy + slack) / (model_decrease + slack);
                (rho, Some((y, fy)))
            }
            _ => (f64::NEG_INFINITY, None),
        };

        if rho < 0.25 || !rho.is_finite() {
            radius /= 4.0;
        } else if rho > 0.75 && hit_boundary {
            radius = (2.0 * radius).min(max_radius);
        }

        if let Some((y, fy)) = candidate {
            if rho > opts.accept_ratio && fy <= fx && model_decrease > 0.0 {
                match obj.rgrad(&y) {
                    Ok(gy) => {
                        x = y;
                        fx = fy;
                        grad = gy;
                        grad_norm = grad.norm();
                        stats.cost_trace.push(fx);
                    }
                    Err(_) => radius /= 4.0,
                }
            }
        }

        if radius < 1e-14 * max_radius {
            stats.diagnostic = Some(Diagnostic::TrustRegionCollapse);
            break;
        }
    }
    if !stats.converged && grad_norm <= opts.grad_tol {
        stats.converged = true;
    }
    if !stats.converged && stats.diagnostic.is_none() {
        stats.diagnostic = Some(Diagnostic::MaxIterations);
    }
    stats.final_grad_norm = grad_norm;
    (x, fx, stats)
}

/// Steihaug-Toint truncated CG on the quadratic model. Returns the step, the
/// Hessian applied to it, and whether the trust-region boundary was hit.
fn truncated_cg<C, G>(
    obj: &mut Objective<C, G>,
    x: &Subspace,
    grad: &DMatrix<f64>,
    radius: f64,
    max_inner: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)>
where
    C: Fn(&Subspace) -> Result<f64>,
    G: Fn(&Subspace) -> Result<DMatrix<f64>>,
{
    const THETA: f64 = 1.0;
    const KAPPA: f64 = 0.1;
    let shape = grad.shape();
    let mut eta = DMatrix::zeros(shape.0, shape.1);
    let mut heta = DMatrix::zeros(shape.0, shape.1);
    let mut r = grad.clone();
    let mut rr = inner(&r, &r);
    let r0 = rr.sqrt();
    let mut delta = -&r;

    for _ in 0..max_inner {
        let hdelta = obj.hess(x, &delta)?;
        let curvature = inner(&delta, &hdelta);
        let alpha = rr / curvature;
        let next = &eta + &delta * alpha;
        if curvature <= 0.0 || next.norm() >= radius {
            let tau = boundary_step(&eta, &delta, radius);
            eta += &delta * tau;
            heta += &hdelta * tau;
            return Ok((eta, heta, true));
        }
        eta = next;
        heta += &hdelta * alpha;
        r += &hdelta * alpha;
        r = project_raw(x.basis(), &r);
        let rr_new = inner(&r, &r);
        if rr_new.sqrt() <= r0 * r0.powf(THETA).min(KAPPA) {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        delta = project_raw(x.basis(), &(-&r + &delta * beta));
    }
    Ok((eta, heta, false))
}

/// Positive `τ` with `‖eta + τ·delta‖ = radius`.
fn boundary_step(eta: &DMatrix<f64>, delta: &DMatrix<f64>, radius: f64) -> f64 {
    let ed = inner(eta, delta);
    let dd = inner(delta, delta);
    let ee = inner(eta, eta);
    (-ed + (ed * ed + dd * (radius * radius - ee)).max(0.0).sqrt()) / dd
}

fn steepest_descent<C, G>(
    obj: &mut Objective<C, G>,
    mut x: Subspace,
    mut fx: f64,
    mut grad: DMatrix<f64>,
    opts: &OptimizerOptions,
) -> (Subspace, f64, OptStats)
where
    C: Fn(&Subspace) -> Result<f64>,
    G: Fn(&Subspace) -> Result<DMatrix<f64>>,
{
    const ARMIJO: f64 = 1e-4;
    let mut stats = OptStats { cost_trace: vec![fx], ..Default::default() };
    let mut grad_norm = grad.norm();
    let mut step = opts.initial_trust_radius.unwrap_or(1.0) / grad_norm.max(1e-300);

    for iter in 0..opts.max_iter {
        if grad_norm <= opts.grad_tol {
            stats.converged = true;
            break;
        }
        stats.iterations = iter + 1;
        let mut accepted = None;
        for _ in 0..50 {
            if let Ok(y) = retract_raw(x.basis(), &(&grad * -step)) {
                if let Ok(fy) = obj.cost(&y) {
                    if fy.is_finite() && fy <= fx - ARMIJO * step * grad_norm * grad_norm {
                        accepted = Some((y, fy));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            stats.diagnostic = Some(Diagnostic::LineSearchFailure);
            break;
        };
        match obj.rgrad(&y) {
            Ok(gy) => {
                x = y;
                fx = fy;
                grad = gy;
                grad_norm = grad.norm();
                stats.cost_trace.push(fx);
                step *= 2.0;
            }
            Err(_) => {
                stats.diagnostic = Some(Diagnostic::LineSearchFailure);
                break;
            }
        }
    }
    if !stats.converged && grad_norm <= opts.grad_tol {
        stats.converged = true;
    }
    if !stats.converged && stats.diagnostic.is_none() {
        stats.diagnostic = Some(Diagnostic::MaxIterations);
    }
    stats.final_grad_norm = grad_norm;
    (x, fx, stats)
}

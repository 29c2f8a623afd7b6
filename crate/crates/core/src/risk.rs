//! Outer 1-D dual minimization giving the robust risk, robust training
//! over the model parameter, and plain/smoothed true-risk estimation.
//!
//! The dual objective `D(λ) = λρ² + (1/n) Σᵢ φ(f, ξᵢ, λ, ε, σ)` is
//! convex in λ. It is bracketed by geometric expansion from the
//! closed-form initializer and minimized by golden section. Within one
//! solve the per-point Monte Carlo samples are frozen (common random
//! numbers), so the objective is a deterministic function of λ.

use std::collections::BTreeMap;

use rand_chacha::ChaCha12Rng;

use crate::dual::{phi_with_samples, DualParams, GibbsBatch, McBudget, PhiEval};
use crate::error::{Result, WdroError};
use crate::geometry::SampleSpace;
use crate::models::LossModel;
use crate::rng::{substream, Purpose};
use crate::vecmath::{add_scaled, mean, norm, norm_sq, sub};

/// Hard ceiling of the λ bracket expansion.
pub const LAMBDA_MAX: f64 = 1e9;
const GOLDEN_REL_TOL: f64 = 1e-6;

/// Robust-risk evaluation outcome.
#[derive(Debug, Clone)]
pub struct RobustRiskResult {
    /// Minimized dual objective, in unshifted loss units.
    pub value: f64,
    /// Optimal dual multiplier (∞ when ρ = 0 forces the boundary).
    pub lambda_star: f64,
    /// Sign-change bracket that contained λ*.
    pub bracket: (f64, f64),
    /// Count of batch evaluations of the dual generator.
    pub evals: usize,
    /// Monte Carlo standard error of the value (0 when ε = 0).
    pub stderr: f64,
    /// λ* at (or below) the degeneracy tolerance.
    pub degenerate: bool,
    /// Any per-point evaluation tripped the effective-sample-size floor.
    pub low_ess: bool,
}

/// Closed-form initializer for the dual multiplier, from the exact
/// minimizer of the model objective `aλ + b/(λ+r) − c·log(λ+r)` with
/// `a = ρ²`, `b = ½·mean‖∇_ξ f(ξᵢ)‖²`, `c = εd/2`, `r = ε/σ²`:
/// `λ₀ = [(c + √(c² + 4ab))/(2a) − r]₊`.
pub fn lambda_init(
    model: &LossModel,
    dataset: &[Vec<f64>],
    rho: f64,
    eps: f64,
    sigma: f64,
) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(WdroError::InvalidArgument(format!(
            "lambda_init requires rho > 0, got {rho}"
        )));
    }
    if dataset.is_empty() {
        return Err(WdroError::InvalidArgument("empty dataset".into()));
    }
    let d = dataset[0].len() as f64;
    let mut b = 0.0;
    for xi in dataset {
        let (gx, _) = model.grads(xi)?;
        b += 0.5 * norm_sq(&gx);
    }
    b /= dataset.len() as f64;
    let a = rho * rho;
    let c = 0.5 * eps * d;
    let r = if eps > 0.0 { eps / (sigma * sigma) } else { 0.0 };
    Ok((((c + (c * c + 4.0 * a * b).sqrt()) / (2.0 * a)) - r).max(0.0))
}

#[derive(Debug, Clone)]
struct BatchEval {
    value: f64,   // mean φ over the dataset (shifted loss units)
    dvalue: f64,  // mean ∂λφ
    stderr: f64,  // stderr of the mean value
    low_ess: bool,
}

/// Reusable dual-objective evaluator over one dataset.
///
/// Holds the frozen per-point sample caches (ε > 0), the per-point
/// warm-start maximizers (ε = 0), and a λ-keyed memo of batch
/// evaluations, so that repeated solves at different radii share work.
pub struct DualSolver {
    model: LossModel,
    space: SampleSpace,
    dataset: Vec<Vec<f64>>,
    eps: f64,
    sigma: f64,
    budget: McBudget,
    seed: u64,
    samples: Vec<Vec<Vec<f64>>>, // per-point frozen reference draws (ε > 0)
    warm: Vec<Option<Vec<f64>>>, // per-point last maximizer (ε = 0)
    first_sweep_done: Vec<bool>,
    memo: BTreeMap<u64, BatchEval>,
    evals: usize,
    lambda_tol: f64,
}

impl DualSolver {
    pub fn new(
        model: &LossModel,
        space: &SampleSpace,
        dataset: &[Vec<f64>],
        eps: f64,
        sigma: f64,
        budget: McBudget,
        seed: u64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(WdroError::InvalidArgument("empty dataset".into()));
        }
        for xi in dataset {
            if xi.len() != space.dims() {
                return Err(WdroError::DimensionMismatch {
                    expected: space.dims(),
                    got: xi.len(),
                });
            }
            if !space.contains(xi, 1e-9) {
                return Err(WdroError::InvalidArgument(
                    "dataset point outside the sample space".into(),
                ));
            }
        }
        if !(eps >= 0.0) {
            return Err(WdroError::InvalidArgument("eps must be >= 0".into()));
        }
        if eps > 0.0 && !(sigma > 0.0) {
            return Err(WdroError::InvalidArgument(
                "sigma must be positive when eps > 0".into(),
            ));
        }
        let n = dataset.len();
        let mut samples = Vec::new();
        if eps > 0.0 {
            if budget.samples_per_xi < 2 {
                return Err(WdroError::InvalidArgument(
                    "need at least 2 Monte Carlo samples per point".into(),
                ));
            }
            samples.reserve(n);
            for (i, xi) in dataset.iter().enumerate() {
                let mut rng = substream(seed, 0, Purpose::PhiSamples, i as u64);
                samples.push(space.sample_reference(
                    xi,
                    sigma,
                    budget.samples_per_xi,
                    &mut rng,
                )?);
            }
        }
        let lambda_tol = default_lambda_tol(model, space, dataset);
        Ok(Self {
            model: model.clone(),
            space: space.clone(),
            dataset: dataset.to_vec(),
            eps,
            sigma,
            budget,
            seed,
            samples,
            warm: vec![None; n],
            first_sweep_done: vec![false; n],
            memo: BTreeMap::new(),
            evals: 0,
            lambda_tol,
        })
    }

    /// Swaps the parameter value, keeping the frozen sample caches (they
    /// depend only on the data and σ). Clears λ memos and warm starts.
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        self.model = self.model.with_theta(theta)?;
        self.memo.clear();
        for w in self.warm.iter_mut() {
            *w = None;
        }
        for f in self.first_sweep_done.iter_mut() {
            *f = false;
        }
        Ok(())
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn lambda_tol(&self) -> f64 {
        self.lambda_tol
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    fn batch(&mut self, lambda: f64) -> Result<BatchEval> {
        let key = lambda.to_bits();
        if let Some(b) = self.memo.get(&key) {
            return Ok(b.clone());
        }
        self.evals += 1;
        let n = self.dataset.len();
        let (mut v, mut dv, mut var, mut less) = (0.0, 0.0, 0.0, false);
        if self.eps > 0.0 {
            let params = DualParams::new(lambda, self.eps, self.sigma)?;
            for (xi, s) in self.dataset.iter().zip(&self.samples) {
                let e = phi_with_samples(&self.model, xi, params, s, self.budget.ess_floor)?;
                v += e.value + self.model.offset();
                dv += e.dvalue;
                var += e.stderr * e.stderr;
                less |= e.low_ess;
            }
        } else {
            for i in 0..n {
                let e = self.phi_point_eps0(i, lambda)?;
                v += e.value + self.model.offset();
                dv += e.dvalue;
            }
        }
        let b = BatchEval {
            value: v / n as f64,
            dvalue: dv / n as f64,
            stderr: var.sqrt() / n as f64,
            low_ess: less,
        };
        self.memo.insert(key, b.clone());
        Ok(b)
    }

    fn phi_point_eps0(&mut self, i: usize, lambda: f64) -> Result<PhiEval> {
        let mut rng = substream(self.seed, 1, Purpose::RandomStarts, i as u64);
        let warm: Vec<Vec<f64>> = self.warm[i].iter().cloned().collect();
        let budget = if self.first_sweep_done[i] && !warm.is_empty() {
            // after the first full multistart, the warm point plus the
            // deterministic starts track the maximizer across λ
            McBudget {
                multistarts: 1,
                ..self.budget
            }
        } else {
            self.budget
        };
        let e = crate::dual::phi_eps0(
            &self.model,
            &self.space,
            &self.dataset[i],
            lambda,
            &budget,
            &mut rng,
            &warm,
        )?;
        self.first_sweep_done[i] = true;
        self.warm[i] = e.maximizer.clone();
        Ok(e)
    }

    /// Dual objective `D(λ)` in shifted loss units.
    fn objective(&mut self, lambda: f64, rho: f64) -> Result<f64> {
        Ok(lambda * rho * rho + self.batch(lambda)?.value)
    }

    /// Solves `inf_{λ≥0} λρ² + mean φ(λ)` for the given radius.
    pub fn solve(&mut self, rho: f64) -> Result<RobustRiskResult> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "rho must be finite and >= 0, got {rho}"
            )));
        }
        if rho == 0.0 {
            if self.eps > 0.0 {
                // The ρ = 0 constraint forces the identity coupling, whose
                // KL against the Gaussian reference is infinite.
                return Err(WdroError::InvalidArgument(
                    "rho = 0 with eps > 0 is degenerate; use rho > 0 or eps = 0".into(),
                ));
            }
            let value = mean(
                &self
                    .dataset
                    .iter()
                    .map(|x| self.model.eval_unchecked(x))
                    .collect::<Vec<_>>(),
            );
            return Ok(RobustRiskResult {
                value,
                lambda_star: f64::INFINITY,
                bracket: (LAMBDA_MAX, f64::INFINITY),
                evals: 0,
                stderr: 0.0,
                degenerate: false,
                low_ess: false,
            });
        }
        let evals_before = self.evals;
        let rho_sq = rho * rho;
        let deriv = |s: &mut Self, lambda: f64| -> Result<f64> {
            Ok(rho_sq + s.batch(lambda)?.dvalue)
        };

        let lambda0 = lambda_init(&self.model, &self.dataset, rho, self.eps, self.sigma)?;
        let floor = (self.lambda_tol * 1e-3).max(1e-14);
        let mut lo;
        let mut hi;
        let start = lambda0.max(floor);
        if deriv(self, start)? < 0.0 {
            // expand upward until the derivative turns nonnegative
            lo = start;
            hi = start * 4.0;
            while deriv(self, hi)? < 0.0 {
                lo = hi;
                hi *= 4.0;
                if hi > LAMBDA_MAX {
                    return Err(WdroError::UnboundedDual { lambda_max: LAMBDA_MAX });
                }
            }
        } else {
            // contract toward zero until the derivative turns negative
            hi = start;
            lo = start / 4.0;
            loop {
                if lo <= floor {
                    if deriv(self, 0.0)? >= 0.0 {
                        // λ* = 0: constraint inactive from the start
                        let b = self.batch(0.0)?;
                        return Ok(RobustRiskResult {
                            value: b.value - self.model.offset(),
                            lambda_star: 0.0,
                            bracket: (0.0, hi),
                            evals: self.evals - evals_before,
                            stderr: b.stderr,
                            degenerate: true,
                            low_ess: b.low_ess,
                        });
                    }
                    lo = 0.0;
                    break;
                }
                if deriv(self, lo)? < 0.0 {
                    break;
                }
                hi = lo;
                lo /= 4.0;
            }
        }

        // Golden-section on the bracket to relative tolerance on λ.
        let phi_ratio = 0.5 * (3.0 - 5f64.sqrt());
        let (mut a, mut b) = (lo, hi);
        let mut x1 = a + phi_ratio * (b - a);
        let mut x2 = b - phi_ratio * (b - a);
        let mut f1 = self.objective(x1, rho)?;
        let mut f2 = self.objective(x2, rho)?;
        while (b - a) > GOLDEN_REL_TOL * b.max(1e-30) {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = a + phi_ratio * (b - a);
                f1 = self.objective(x1, rho)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = b - phi_ratio * (b - a);
                f2 = self.objective(x2, rho)?;
            }
        }
        let lambda_star = if f1 < f2 { x1 } else { x2 };
        let bstar = self.batch(lambda_star)?;
        let value = lambda_star * rho_sq + bstar.value - self.model.offset();
        Ok(RobustRiskResult {
            value,
            lambda_star,
            bracket: (lo, hi),
            evals: self.evals - evals_before,
            stderr: bstar.stderr,
            degenerate: lambda_star <= self.lambda_tol,
            low_ess: bstar.low_ess,
        })
    }

    /// Envelope gradient of the dual objective in θ at fixed λ*:
    /// the Gibbs average of ∇_θ f for ε > 0, the gradient at the inner
    /// maximizers for ε = 0, and the plain empirical mean when ρ = 0.
    pub fn envelope_grad_theta(&mut self, lambda_star: f64) -> Result<Vec<f64>> {
        let p = self.model.theta().len();
        let n = self.dataset.len();
        let mut g = vec![0.0; p];
        if lambda_star.is_infinite() {
            for xi in &self.dataset {
                let (_, gt) = self.model.grads(xi)?;
                for (a, b) in g.iter_mut().zip(&gt) {
                    *a += b;
                }
            }
        } else if self.eps > 0.0 {
            let params = DualParams::new(lambda_star, self.eps, self.sigma)?;
            for (xi, s) in self.dataset.iter().zip(&self.samples) {
                let batch = GibbsBatch::new(&self.model, xi, params, s)?;
                for k in 0..p {
                    g[k] += batch.expect(|z| {
                        self.model.grads(z).map(|(_, gt)| gt[k]).unwrap_or(f64::NAN)
                    });
                }
            }
        } else {
            for i in 0..n {
                let e = self.phi_point_eps0(i, lambda_star)?;
                let z = e.maximizer.expect("eps0 evaluation carries a maximizer");
                let (_, gt) = self.model.grads(&z)?;
                for (a, b) in g.iter_mut().zip(&gt) {
                    *a += b;
                }
            }
        }
        for a in g.iter_mut() {
            *a /= n as f64;
        }
        Ok(g)
    }
}

/// Default degeneracy tolerance: `1e-6 · loss scale / cost scale`.
pub fn default_lambda_tol(model: &LossModel, space: &SampleSpace, dataset: &[Vec<f64>]) -> f64 {
    let loss_scale = dataset
        .iter()
        .map(|x| model.eval_unchecked(x).abs())
        .fold(1.0f64, f64::max);
    let cost_scale = (0.5 * space.diameter() * space.diameter()).max(1e-12);
    1e-6 * loss_scale / cost_scale
}

/// One-shot robust risk evaluation.
pub fn robust_risk(
    model: &LossModel,
    space: &SampleSpace,
    dataset: &[Vec<f64>],
    rho: f64,
    eps: f64,
    sigma: f64,
    budget: McBudget,
    seed: u64,
) -> Result<RobustRiskResult> {
    DualSolver::new(model, space, dataset, eps, sigma, budget, seed)?.solve(rho)
}

/// Budget of the outer θ optimization.
#[derive(Debug, Clone, Copy)]
pub struct OptBudget {
    pub max_iters: usize,
    /// Projected-gradient-norm stationarity tolerance.
    pub tol: f64,
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-5,
        }
    }
}

/// Robust training outcome.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    pub risk: RobustRiskResult,
    pub converged: bool,
    pub iterations: usize,
}

/// Projected gradient descent on `θ ↦ robust risk(θ)` with Armijo
/// backtracking. λ* is re-solved at every trial point (the inner
/// problem is 1-D and memoized), giving the exact bilevel objective.
pub fn train_robust(
    template: &LossModel,
    space: &SampleSpace,
    dataset: &[Vec<f64>],
    rho: f64,
    eps: f64,
    sigma: f64,
    mc: McBudget,
    opt: OptBudget,
    theta0: Vec<f64>,
    seed: u64,
) -> Result<TrainResult> {
    let mut solver = DualSolver::new(template, space, dataset, eps, sigma, mc, seed)?;
    let mut theta = template.project_theta(&theta0);
    solver.set_theta(theta.clone())?;
    let mut risk = solver.solve(rho)?;
    let mut best_theta = theta.clone();
    let mut best_risk = risk.clone();
    let mut converged = false;
    let mut step = 1.0;
    let mut iterations = 0;
    for _ in 0..opt.max_iters {
        iterations += 1;
        let g = solver.envelope_grad_theta(risk.lambda_star)?;
        // projected-gradient stationarity measure at unit step
        let trial = template.project_theta(&sub(&theta, &g));
        let pg = norm(&sub(&theta, &trial));
        if pg <= opt.tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut t = step * 2.0;
        for _ in 0..25 {
            let cand = template.project_theta(&add_scaled(&theta, -t, &g));
            let move_sq = crate::vecmath::dist_sq(&cand, &theta);
            if move_sq == 0.0 {
                break;
            }
            solver.set_theta(cand.clone())?;
            let cand_risk = solver.solve(rho)?;
            if cand_risk.value <= risk.value - 1e-4 * move_sq / t {
                theta = cand;
                risk = cand_risk;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent within line-search resolution: stationary enough
            solver.set_theta(theta.clone())?;
            risk = solver.solve(rho)?;
            converged = pg <= opt.tol * 10.0;
            break;
        }
        if risk.value < best_risk.value {
            best_theta = theta.clone();
            best_risk = risk.clone();
        }
    }
    if risk.value < best_risk.value {
        best_theta = theta.clone();
        best_risk = risk;
    }
    Ok(TrainResult {
        theta: best_theta,
        risk: best_risk,
        converged,
        iterations,
    })
}

/// Monte Carlo estimate of the true risk `E_P[f]` on a fixed sample of
/// P, or of its smoothed version `E_P E_{π_σ(·|ξ)}[f(ζ)]` with one
/// inner reference draw per outer sample.
pub fn true_risk(
    model: &LossModel,
    space: &SampleSpace,
    samples: &[Vec<f64>],
    sigma: f64,
    smoothed: bool,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(WdroError::InvalidArgument(
            "true risk needs at least 2 samples".into(),
        ));
    }
    let mut vals = Vec::with_capacity(samples.len());
    for xi in samples {
        if smoothed {
            let z = space.sample_reference_one(xi, sigma, rng)?;
            vals.push(model.eval(&z)?);
        } else {
            vals.push(model.eval(xi)?);
        }
    }
    Ok(crate::vecmath::mean_and_stderr(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ThetaBounds;
    use crate::oracle::{grid_dual_exact, Grid};
    use crate::rng::{stream, substream};
    use rand::Rng;

    fn annulus() -> ThetaBounds {
        ThetaBounds::Annulus { lo: 0.25, hi: 4.0 }
    }

    fn ball1d() -> SampleSpace {
        SampleSpace::ball(vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn lambda_init_closed_form_cases() {
        // ε = 0: λ₀ = √b / ρ; with ρ = 1, b = 2 ⇒ √2.
        // Build a 1-D linear regression dataset with mean ½‖∇f‖² = 2.
        // f(θ,(x,y)) = ½(θx − y)², ∇ = (rθ, −r): ‖∇‖² = r²(θ²+1).
        // θ = 1, r² (θ²+1) = 4 ⇒ r = √2: x = 0, y = −√2.
        let m = LossModel::linear_regression(vec![1.0], annulus()).unwrap();
        let data = vec![vec![0.0, -(2.0f64).sqrt()]];
        let l0 = lambda_init(&m, &data, 1.0, 0.0, 1.0).unwrap();
        assert!((l0 - 2f64.sqrt()).abs() < 1e-12);

        // b = 0, ε > 0, r = 0 ⇒ λ₀ = (c + c)/2a. With a = 1, c = 1 ⇒ 1.
        // c = εd/2 = 1 with d = 1 ⇒ ε = 2; r = ε/σ² → 0 with σ large.
        let mc = LossModel::constant(1.0);
        let data_c = vec![vec![0.3]];
        let l0 = lambda_init(&mc, &data_c, 1.0, 2.0, 1e9).unwrap();
        assert!((l0 - 1.0).abs() < 1e-9, "{l0}");

        // huge r clamps to zero
        let l0 = lambda_init(&mc, &data_c, 1.0, 2.0, 1e-6).unwrap();
        assert_eq!(l0, 0.0);
    }

    #[test]
    fn rho_zero_eps_zero_gives_exact_empirical_mean() {
        let space = ball1d();
        let m = LossModel::logistic(vec![1.1], annulus()).unwrap();
        let data = vec![vec![-0.4], vec![0.3], vec![0.8]];
        let r = robust_risk(&m, &space, &data, 0.0, 0.0, 1.0, McBudget::default(), 7).unwrap();
        let mean = data.iter().map(|x| m.eval(x).unwrap()).sum::<f64>() / 3.0;
        assert_eq!(r.value, mean);
        assert!(r.lambda_star.is_infinite());
    }

    #[test]
    fn rho_zero_with_eps_positive_is_rejected() {
        let space = ball1d();
        let m = LossModel::logistic(vec![1.0], annulus()).unwrap();
        let data = vec![vec![0.1], vec![0.2]];
        let r = robust_risk(&m, &space, &data, 0.0, 0.1, 0.2, McBudget::default(), 7);
        assert!(matches!(r, Err(WdroError::InvalidArgument(_))));
    }

    #[test]
    fn constant_loss_is_degenerate_at_any_radius() {
        let space = ball1d();
        let m = LossModel::constant(3.2);
        let data = vec![vec![0.0], vec![0.5]];
        let r = robust_risk(&m, &space, &data, 0.7, 0.0, 1.0, McBudget::default(), 7).unwrap();
        assert!((r.value - 3.2).abs() < 1e-9);
        assert!(r.degenerate);
    }

    #[test]
    fn matches_grid_oracle_on_handmade_logistic() {
        let space = ball1d();
        let m = LossModel::logistic(vec![1.4], annulus()).unwrap();
        let data = vec![vec![-0.6], vec![0.1], vec![0.7]];
        let grid = Grid::regular_1d(&space, 2001).unwrap().including(&data);
        for rho in [0.05, 0.2, 0.5] {
            let r = robust_risk(&m, &space, &data, rho, 0.0, 1.0, McBudget::default(), 3).unwrap();
            let o = grid_dual_exact(&m, &data, rho, &grid).unwrap();
            assert!(
                (r.value - o).abs() < 1e-3,
                "rho={rho}: solver {} vs oracle {o}",
                r.value
            );
        }
    }

    #[test]
    fn monotone_in_rho_and_dominates_empirical_mean() {
        let space = ball1d();
        let m = LossModel::logistic(vec![0.9], annulus()).unwrap();
        let data = vec![vec![-0.2], vec![0.4]];
        let mean = data.iter().map(|x| m.eval(x).unwrap()).sum::<f64>() / 2.0;
        let mut prev = f64::NEG_INFINITY;
        for rho in [0.0, 0.1, 0.2, 0.4, 0.8] {
            let r = robust_risk(&m, &space, &data, rho, 0.0, 1.0, McBudget::default(), 3).unwrap();
            assert!(r.value >= prev - 1e-12, "not monotone at rho {rho}");
            assert!(r.value >= mean - 1e-12);
            prev = r.value;
        }
    }

    #[test]
    fn dual_value_upper_bounds_minimum_along_path() {
        let space = ball1d();
        let m = LossModel::logistic(vec![1.2], annulus()).unwrap();
        let data = vec![vec![-0.3], vec![0.5]];
        let mut solver =
            DualSolver::new(&m, &space, &data, 0.0, 1.0, McBudget::default(), 5).unwrap();
        let rho = 0.3;
        let r = solver.solve(rho).unwrap();
        for lambda in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let d = solver.objective(lambda, rho).unwrap() - m.offset();
            assert!(d >= r.value - 1e-10, "D({lambda}) = {d} below value {}", r.value);
        }
    }

    #[test]
    fn lambda_star_tracks_initializer_in_small_rho_regime() {
        let space = SampleSpace::ball(vec![0.0; 3], 1.0).unwrap();
        let mut rng = stream(31, 0, crate::rng::Purpose::Battery);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(0.4..1.2)).collect();
            let m = LossModel::logistic(theta, annulus()).unwrap();
            let data: Vec<Vec<f64>> = (0..12)
                .map(|_| {
                    let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.4..0.4)).collect();
                    space.project(&p).unwrap()
                })
                .collect();
            let rho = 0.1 * space.diameter() * rng.gen_range(0.3..1.0);
            let l0 = lambda_init(&m, &data, rho, 0.0, 1.0).unwrap();
            let r = robust_risk(&m, &space, &data, rho, 0.0, 1.0, McBudget::default(), 11).unwrap();
            assert!(
                r.lambda_star <= 8.0 * l0 && r.lambda_star >= l0 / 8.0,
                "lambda* {} vs init {l0}",
                r.lambda_star
            );
        }
    }

    #[test]
    fn erm_limit_matches_direct_minimization() {
        // ρ = 0, ε = 0 training equals direct empirical-risk minimization.
        let space = SampleSpace::ball_x_interval(1, 1.0, 1.0).unwrap();
        let tmpl = LossModel::linear_regression(vec![1.0], annulus()).unwrap();
        let mut rng = stream(33, 0, crate::rng::Purpose::Battery);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let x: f64 = rng.gen_range(-0.8..0.8);
                let y = (0.8 * x + 0.05 * rng.gen_range(-1.0..1.0)).clamp(-0.9, 0.9);
                vec![x, y]
            })
            .collect();
        let tr = train_robust(
            &tmpl,
            &space,
            &data,
            0.0,
            0.0,
            1.0,
            McBudget::default(),
            OptBudget { max_iters: 300, tol: 1e-8 },
            vec![2.0],
            13,
        )
        .unwrap();
        // independent ERM: direct gradient descent on the empirical mean
        let erm_obj = |t: f64| -> f64 {
            data.iter()
                .map(|p| 0.5 * (t * p[0] - p[1]) * (t * p[0] - p[1]))
                .sum::<f64>()
                / data.len() as f64
        };
        let mut t: f64 = 2.0;
        for _ in 0..20_000 {
            let g = data
                .iter()
                .map(|p| (t * p[0] - p[1]) * p[0])
                .sum::<f64>()
                / data.len() as f64;
            t = (t - 0.5 * g).clamp(0.25, 4.0);
        }
        assert!(
            (tr.risk.value - erm_obj(t)).abs() < 1e-4,
            "train {} vs ERM {}",
            tr.risk.value,
            erm_obj(t)
        );
    }

    #[test]
    fn constant_family_training_is_identity() {
        let space = ball1d();
        let tmpl = LossModel::constant(1.5);
        let data = vec![vec![0.0], vec![0.3]];
        let tr = train_robust(
            &tmpl,
            &space,
            &data,
            0.2,
            0.0,
            1.0,
            McBudget::default(),
            OptBudget::default(),
            vec![1.5],
            13,
        )
        .unwrap();
        assert_eq!(tr.theta, vec![1.5]);
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let space = ball1d();
        let mut ok_hard = 0;
        let mut ok_soft = 0;
        let trials = 20u64;
        for inst in 0..trials {
            let mut rng = substream(55, inst, crate::rng::Purpose::Battery, 0);
            let theta = vec![rng.gen_range(0.5..2.0)];
            let m = LossModel::logistic(theta.clone(), annulus()).unwrap();
            let data: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-0.8..0.8)]).collect();
            let rho = rng.gen_range(0.1..0.3);
            // ε = 0
            {
                let mut solver =
                    DualSolver::new(&m, &space, &data, 0.0, 1.0, McBudget::default(), 70 + inst)
                        .unwrap();
                let r = solver.solve(rho).unwrap();
                let g = solver.envelope_grad_theta(r.lambda_star).unwrap()[0];
                let h = 1e-4;
                let vp = {
                    let mut s = DualSolver::new(
                        &m.with_theta(vec![theta[0] + h]).unwrap(),
                        &space,
                        &data,
                        0.0,
                        1.0,
                        McBudget::default(),
                        70 + inst,
                    )
                    .unwrap();
                    s.solve(rho).unwrap().value
                };
                let vm = {
                    let mut s = DualSolver::new(
                        &m.with_theta(vec![theta[0] - h]).unwrap(),
                        &space,
                        &data,
                        0.0,
                        1.0,
                        McBudget::default(),
                        70 + inst,
                    )
                    .unwrap();
                    s.solve(rho).unwrap().value
                };
                let fd = (vp - vm) / (2.0 * h);
                if (fd - g).abs() / fd.abs().max(1e-6) < 1e-3 {
                    ok_hard += 1;
                }
            }
            // ε > 0 with common random numbers (same solver seed)
            {
                let eps = 0.1 * rho;
                let sig = 0.5 * rho;
                let mk = |th: f64| -> f64 {
                    let mut s = DualSolver::new(
                        &m.with_theta(vec![th]).unwrap(),
                        &space,
                        &data,
                        eps,
                        sig,
                        McBudget { samples_per_xi: 512, ..Default::default() },
                        700 + inst,
                    )
                    .unwrap();
                    s.solve(rho).unwrap().value
                };
                let mut solver = DualSolver::new(
                    &m,
                    &space,
                    &data,
                    eps,
                    sig,
                    McBudget { samples_per_xi: 512, ..Default::default() },
                    700 + inst,
                )
                .unwrap();
                let r = solver.solve(rho).unwrap();
                let g = solver.envelope_grad_theta(r.lambda_star).unwrap()[0];
                let h = 1e-4;
                let fd = (mk(theta[0] + h) - mk(theta[0] - h)) / (2.0 * h);
                if (fd - g).abs() / fd.abs().max(1e-6) < 1e-2 {
                    ok_soft += 1;
                }
            }
        }
        assert!(ok_hard >= 19, "eps=0 envelope gradient: {ok_hard}/{trials}");
        assert!(ok_soft >= 19, "eps>0 envelope gradient: {ok_soft}/{trials}");
    }

    #[test]
    fn true_risk_constant_is_exact() {
        let space = ball1d();
        let m = LossModel::constant(2.0);
        let samples = vec![vec![0.0], vec![0.5], vec![-0.5]];
        let mut rng = stream(1, 0, crate::rng::Purpose::TrueRisk);
        let (v, se) = true_risk(&m, &space, &samples, 0.1, false, &mut rng).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn true_risk_matches_moment_algebra_for_linreg() {
        // x ~ N(0, s²), y = θ*x + ν, ν ~ N(0, τ²), truncation negligible:
        // E ½(θx − y)² = ½((θ−θ*)² s² + τ²).
        let space = SampleSpace::ball_x_interval(1, 10.0, 10.0).unwrap();
        let (s, tau, tstar, t) = (0.5, 0.2, 0.8, 1.3);
        let m = LossModel::linear_regression(vec![t], annulus()).unwrap();
        let mut rng = stream(77, 0, crate::rng::Purpose::TrueRisk);
        let n = 100_000;
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let x: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * s;
                let y = tstar * x + tau * rng.sample::<f64, _>(rand_distr::StandardNormal);
                vec![x, y.clamp(-10.0, 10.0)]
            })
            .collect();
        let (v, se) = true_risk(&m, &space, &samples, 0.1, false, &mut rng).unwrap();
        let closed = 0.5 * ((t - tstar) * (t - tstar) * s * s + tau * tau);
        assert!((v - closed).abs() <= 4.0 * se, "{v} vs {closed} (se {se})");
    }

    #[test]
    fn smoothed_true_risk_converges_to_plain_as_sigma_vanishes() {
        let space = ball1d();
        let m = LossModel::logistic(vec![1.0], annulus()).unwrap();
        let mut rng = stream(78, 0, crate::rng::Purpose::TrueRisk);
        let samples: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![rng.gen_range(-0.8..0.8)])
            .collect();
        let sigma = 1e-3 * space.diameter();
        let mut r1 = stream(79, 0, crate::rng::Purpose::SmoothedDraw);
        let (vs, ses) = true_risk(&m, &space, &samples, sigma, true, &mut r1).unwrap();
        let mut r2 = stream(79, 1, crate::rng::Purpose::SmoothedDraw);
        let (vp, sep) = true_risk(&m, &space, &samples, sigma, false, &mut r2).unwrap();
        let combined = (ses * ses + sep * sep).sqrt();
        assert!((vs - vp).abs() <= 3.0 * combined + 1e-6);
    }
}

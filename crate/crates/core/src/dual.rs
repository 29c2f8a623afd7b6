//! The dual generator φ(f, ξ, λ, ε, σ) in both regimes, its Laplace
//! approximation, and its λ-derivative.
//!
//! For ε = 0, φ is the hard inner sup over the sample space, solved by
//! multistart projected gradient ascent. For ε > 0, φ is the
//! log-partition of the Gibbs tilt of the Gaussian conditional
//! reference measure, estimated by stabilized log-sum-exp Monte Carlo
//! with a jackknife standard error.

use rand_chacha::ChaCha12Rng;

use crate::error::{Result, WdroError};
use crate::geometry::{cost_unchecked, SampleSpace};
use crate::models::{ArgmaxSet, LossModel};
use crate::vecmath::{add_scaled, dist_sq, norm, norm_sq};

/// Parameters of the dual generator.
#[derive(Debug, Clone, Copy)]
pub struct DualParams {
    /// Dual multiplier λ ≥ 0 (loss per cost units).
    pub lambda: f64,
    /// Entropic regularization ε ≥ 0 (loss units).
    pub eps: f64,
    /// Reference spread σ; must be positive whenever ε > 0.
    pub sigma: f64,
}

impl DualParams {
    pub fn new(lambda: f64, eps: f64, sigma: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "eps must be finite and nonnegative, got {eps}"
            )));
        }
        if eps > 0.0 && !(sigma > 0.0) {
            return Err(WdroError::InvalidArgument(format!(
                "sigma must be positive when eps > 0, got {sigma}"
            )));
        }
        Ok(Self { lambda, eps, sigma })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Evaluation budget knobs for the dual generator.
#[derive(Debug, Clone, Copy)]
pub struct McBudget {
    /// Monte Carlo draws per data point (ε > 0).
    pub samples_per_xi: usize,
    /// Total start points for the inner ascent (ε = 0).
    pub multistarts: usize,
    /// Effective-sample-size floor below which results carry a warning.
    pub ess_floor: f64,
    /// Gradient-norm tolerance of the inner ascent.
    pub ascent_tol: f64,
    pub ascent_max_iters: usize,
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            samples_per_xi: 2048,
            multistarts: 8,
            ess_floor: 32.0,
            ascent_tol: 1e-8,
            ascent_max_iters: 500,
        }
    }
}

/// One dual-generator evaluation: value, λ-derivative, and error bars.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub value: f64,
    pub stderr: f64,
    /// ∂φ/∂λ ≤ 0 (negated transport cost under the inner solution).
    pub dvalue: f64,
    pub dstderr: f64,
    pub ess: f64,
    pub low_ess: bool,
    /// Inner maximizer attaining the sup (ε = 0 only); ties broken by
    /// the smallest transport cost.
    pub maximizer: Option<Vec<f64>>,
}

/// The Gibbs tilt of the reference measure on a frozen sample batch:
/// weights ∝ exp((f(ζ) − λ c(ξ, ζ))/ε).
#[derive(Debug, Clone)]
pub struct GibbsBatch<'a> {
    pub points: &'a [Vec<f64>],
    /// Normalized log-weights (exponentials sum to one).
    pub log_weights: Vec<f64>,
    pub ess: f64,
}

impl<'a> GibbsBatch<'a> {
    /// Builds the batch for `xi` from frozen reference draws.
    pub fn new(
        model: &LossModel,
        xi: &[f64],
        params: DualParams,
        points: &'a [Vec<f64>],
    ) -> Result<Self> {
        if params.eps <= 0.0 {
            return Err(WdroError::InvalidArgument(
                "Gibbs batch requires eps > 0".into(),
            ));
        }
        if points.is_empty() {
            return Err(WdroError::InvalidArgument("empty sample batch".into()));
        }
        let mut lw: Vec<f64> = points
            .iter()
            .map(|z| (model.eval_shifted(z) - params.lambda * cost_unchecked(xi, z)) / params.eps)
            .collect();
        if lw.iter().any(|v| !v.is_finite()) {
            return Err(WdroError::NumericFailure(
                "non-finite Gibbs log-weight".into(),
            ));
        }
        let lse = crate::vecmath::logsumexp(&lw);
        for v in lw.iter_mut() {
            *v -= lse;
        }
        let sum_sq: f64 = lw.iter().map(|v| (2.0 * *v).exp()).sum();
        let ess = 1.0 / sum_sq;
        Ok(Self {
            points,
            log_weights: lw,
            ess,
        })
    }

    /// Self-normalized expectation of an arbitrary per-point statistic.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, stat: F) -> f64 {
        self.log_weights
            .iter()
            .zip(self.points)
            .map(|(lw, z)| lw.exp() * stat(z))
            .sum()
    }

    /// Expectation and a delta-method standard error.
    pub fn expect_with_stderr<F: Fn(&[f64]) -> f64>(&self, stat: F) -> (f64, f64) {
        let vals: Vec<f64> = self.points.iter().map(|z| stat(z)).collect();
        let m: f64 = self
            .log_weights
            .iter()
            .zip(&vals)
            .map(|(lw, v)| lw.exp() * v)
            .sum();
        let var: f64 = self
            .log_weights
            .iter()
            .zip(&vals)
            .map(|(lw, v)| (2.0 * lw).exp() * (v - m) * (v - m))
            .sum();
        (m, var.sqrt())
    }

    /// Gibbs-averaged transport cost from `xi` (drives ∂φ/∂λ).
    pub fn expect_cost(&self, xi: &[f64]) -> (f64, f64) {
        self.expect_with_stderr(|z| cost_unchecked(xi, z))
    }
}

/// Evaluates φ drawing fresh reference samples (ε > 0) or running the
/// multistart ascent (ε = 0).
pub fn phi(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: DualParams,
    budget: &McBudget,
    rng: &mut ChaCha12Rng,
) -> Result<PhiEval> {
    if params.eps == 0.0 {
        phi_eps0(model, space, xi, params.lambda, budget, rng, &[])
    } else {
        if budget.samples_per_xi < 2 {
            return Err(WdroError::InvalidArgument(
                "need at least 2 Monte Carlo samples".into(),
            ));
        }
        let samples = space.sample_reference(xi, params.sigma, budget.samples_per_xi, rng)?;
        phi_with_samples(model, xi, params, &samples, budget.ess_floor)
    }
}

/// ε > 0 branch on a frozen sample batch (common random numbers across
/// λ values are obtained by reusing the batch).
pub fn phi_with_samples(
    model: &LossModel,
    xi: &[f64],
    params: DualParams,
    samples: &[Vec<f64>],
    ess_floor: f64,
) -> Result<PhiEval> {
    let eps = params.eps;
    if eps <= 0.0 {
        return Err(WdroError::InvalidArgument(
            "phi_with_samples requires eps > 0".into(),
        ));
    }
    let m = samples.len();
    if m < 2 {
        return Err(WdroError::InvalidArgument(
            "need at least 2 Monte Carlo samples".into(),
        ));
    }
    let mut a = Vec::with_capacity(m);
    let mut costs = Vec::with_capacity(m);
    for z in samples {
        let c = cost_unchecked(xi, z);
        let v = (model.eval_shifted(z) - params.lambda * c) / eps;
        if !v.is_finite() {
            return Err(WdroError::NumericFailure(
                "non-finite exponent in log-sum-exp estimator".into(),
            ));
        }
        a.push(v);
        costs.push(c);
    }
    let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = a.iter().map(|v| (v - amax).exp()).collect();
    let s: f64 = ws.iter().sum();
    let value_shifted = eps * (amax + (s / m as f64).ln());

    // Jackknife over leave-one-out log-sum-exp values.
    let mut jack = Vec::with_capacity(m);
    for w in &ws {
        let si = (s - w).max(f64::MIN_POSITIVE);
        jack.push(eps * (amax + (si / (m - 1) as f64).ln()));
    }
    let jm = crate::vecmath::mean(&jack);
    let jvar: f64 = jack.iter().map(|v| (v - jm) * (v - jm)).sum::<f64>() * (m - 1) as f64
        / m as f64;
    let stderr = jvar.sqrt();

    let sum_sq: f64 = ws.iter().map(|w| w * w).sum();
    let ess = s * s / sum_sq;

    // Self-normalized Gibbs mean of costs: the λ-derivative is its negation.
    let mean_cost: f64 = ws.iter().zip(&costs).map(|(w, c)| w * c).sum::<f64>() / s;
    let dvar: f64 = ws
        .iter()
        .zip(&costs)
        .map(|(w, c)| (w / s) * (w / s) * (c - mean_cost) * (c - mean_cost))
        .sum();

    Ok(PhiEval {
        value: value_shifted - model.offset(),
        stderr,
        dvalue: -mean_cost,
        dstderr: dvar.sqrt(),
        ess,
        low_ess: ess < ess_floor,
        maximizer: None,
    })
}

/// ε = 0 branch: multistart projected gradient ascent maximizing
/// `f(ζ) − λ c(ξ, ζ)` over the space. `warm_starts` lets an outer λ
/// search reuse the previous maximizer.
pub fn phi_eps0(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    lambda: f64,
    budget: &McBudget,
    rng: &mut ChaCha12Rng,
    warm_starts: &[Vec<f64>],
) -> Result<PhiEval> {
    if budget.multistarts == 0 {
        return Err(WdroError::InvalidArgument(
            "need at least one ascent start".into(),
        ));
    }
    let starts = build_starts(model, space, xi, budget, rng, warm_starts)?;
    let lipschitz = model.smoothness(space).grad_lipschitz;

    let mut best_val = f64::NEG_INFINITY;
    let mut finals: Vec<(f64, Vec<f64>)> = Vec::with_capacity(starts.len());
    for s in starts {
        let (z, v) = ascend(model, space, xi, lambda, s, budget, lipschitz)?;
        best_val = best_val.max(v);
        finals.push((v, z));
    }
    // Right-derivative convention: among near-ties, report the
    // maximizer with the smallest transport cost.
    let tie_tol = 1e-9 * best_val.abs().max(1.0);
    let mut best_cost = f64::INFINITY;
    let mut best_point = None;
    for (v, z) in finals {
        if v >= best_val - tie_tol {
            let c = cost_unchecked(xi, &z);
            if c < best_cost {
                best_cost = c;
                best_point = Some(z);
            }
        }
    }
    let maximizer = best_point.expect("at least one start");
    Ok(PhiEval {
        value: best_val - model.offset(),
        stderr: 0.0,
        dvalue: -best_cost,
        dstderr: 0.0,
        ess: f64::INFINITY,
        low_ess: false,
        maximizer: Some(maximizer),
    })
}

/// Assembles the ascent start set: warm starts, ξ itself, points pushed
/// along ∇f(ξ) at three scales of the diameter, closed-form argmax
/// points when the family has them, and uniform random fill-ins up to
/// the multistart budget.
fn build_starts(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    budget: &McBudget,
    rng: &mut ChaCha12Rng,
    warm_starts: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(budget.multistarts + 4);
    for w in warm_starts {
        starts.push(w.clone());
    }
    starts.push(xi.to_vec());
    let mut g = Vec::new();
    model.grad_xi_unchecked(xi, &mut g);
    let gn = norm(&g);
    if gn > 1e-14 {
        let diam = space.diameter();
        for t in [0.25, 0.5, 1.0] {
            let p = space.project(&add_scaled(xi, t * diam / gn, &g))?;
            starts.push(p);
        }
    }
    if let Ok(ArgmaxSet::Points(ps)) = model.argmax_set(space) {
        starts.extend(ps);
    }
    while starts.len() < budget.multistarts.max(warm_starts.len() + 1) {
        starts.push(space.sample_uniform(rng));
    }
    Ok(starts)
}

/// Projected gradient ascent with backtracking on
/// `g(ζ) = f(ζ) − λ c(ξ, ζ)`.
fn ascend(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    lambda: f64,
    start: Vec<f64>,
    budget: &McBudget,
    lipschitz: Option<f64>,
) -> Result<(Vec<f64>, f64)> {
    let objective = |z: &[f64]| model.eval_shifted(z) - lambda * cost_unchecked(xi, z);
    let mut z = space.project(&start)?;
    let mut val = objective(&z);
    if !val.is_finite() {
        return Err(WdroError::NumericFailure(
            "non-finite loss at ascent start".into(),
        ));
    }
    let mut grad = Vec::new();
    let mut step = match lipschitz {
        Some(m) if m + lambda > 0.0 => 1.0 / (m + lambda),
        _ => 1.0,
    };
    for _ in 0..budget.ascent_max_iters {
        model.grad_xi_unchecked(&z, &mut grad);
        for (gi, (zi, xii)) in grad.iter_mut().zip(z.iter().zip(xi)) {
            *gi -= lambda * (zi - xii);
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(WdroError::NumericFailure(
                "non-finite gradient during ascent".into(),
            ));
        }
        if norm(&grad) <= budget.ascent_tol {
            break;
        }
        // Backtracking: sufficient increase along the projected step.
        let mut accepted = false;
        let mut t = step;
        for _ in 0..60 {
            let cand = space.project(&add_scaled(&z, t, &grad))?;
            let move_sq = dist_sq(&cand, &z);
            if move_sq == 0.0 {
                break;
            }
            let cand_val = objective(&cand);
            if !cand_val.is_finite() {
                return Err(WdroError::NumericFailure(
                    "non-finite loss during ascent".into(),
                ));
            }
            if cand_val >= val + 1e-4 * move_sq / t {
                let moved = move_sq.sqrt();
                z = cand;
                val = cand_val;
                accepted = true;
                step = (t * 2.0).min(1e6);
                if moved / t <= budget.ascent_tol {
                    return Ok((z, val));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // stationary within line-search resolution
        }
    }
    Ok((z, val))
}

/// Closed-form Taylor/Laplace approximation of φ:
/// `f(ξ) + ‖∇f(ξ)‖²/(2(λ + ε/σ²)) − (εd/2)·log(λ/ε + 1/σ²)
///  + ε·log((2π)^{d/2}/Z_{σ,ξ})`.
///
/// The normalization `Z_{σ,ξ}` uses `(2πσ²)^{d/2}` when the margin
/// condition `B(ξ, γ) ⊂ Ξ`, `σ ≤ γ/6` holds (the restriction error is
/// then exponentially small), and a Monte Carlo estimate otherwise.
pub fn phi_laplace(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: DualParams,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let d = space.dims() as f64;
    let (lambda, eps, sigma) = (params.lambda, params.eps, params.sigma);
    if eps == 0.0 {
        if !(lambda > 0.0) {
            return Err(WdroError::InvalidArgument(
                "phi_laplace needs lambda + eps/sigma^2 > 0".into(),
            ));
        }
        let (gx, _) = model.grads(xi)?;
        return Ok(model.eval(xi)? + norm_sq(&gx) / (2.0 * lambda));
    }
    let denom = lambda + eps / (sigma * sigma);
    if !(denom > 0.0) {
        return Err(WdroError::InvalidArgument(
            "phi_laplace needs lambda + eps/sigma^2 > 0".into(),
        ));
    }
    let (gx, _) = model.grads(xi)?;
    let base = model.eval(xi)? + norm_sq(&gx) / (2.0 * denom);
    let log_term = -0.5 * eps * d * (lambda / eps + 1.0 / (sigma * sigma)).ln();

    let gamma = space.margin();
    let log_z = if gamma > 0.0 && space.contains_ball(xi, gamma) && sigma <= gamma / 6.0 {
        0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
    } else {
        // Z = (2πσ²)^{d/2} · P(ξ + σN ∈ Ξ), estimated by Monte Carlo.
        let k = 8192usize;
        let mut hit = 0usize;
        let mut p = vec![0.0; space.dims()];
        for _ in 0..k {
            for (v, c) in p.iter_mut().zip(xi) {
                let z: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
                *v = c + sigma * z;
            }
            if space.contains(&p, 0.0) {
                hit += 1;
            }
        }
        let acc = (hit.max(1)) as f64 / k as f64;
        0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() + acc.ln()
    };
    let z_term = eps * (0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_z);
    Ok(base + log_term + z_term)
}

/// ∂φ/∂λ with its standard error. Thin wrapper over the combined
/// evaluators; for ε = 0 the ascent must converge before the maximizer
/// cost is read off.
pub fn phi_dlambda(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: DualParams,
    budget: &McBudget,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    let e = phi(model, space, xi, params, budget, rng)?;
    Ok((e.dvalue, e.dstderr))
}

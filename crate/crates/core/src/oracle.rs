//! Exact small-instance references: the finite-grid robust risk solved
//! through its piecewise-linear dual, deterministic quadrature of the
//! regularized dual generator (d ≤ 2), and the regularized transport
//! distance between discrete distributions.

use crate::error::{Result, WdroError};
use crate::geometry::{cost_unchecked, SampleSpace};
use crate::models::LossModel;
use crate::vecmath::{linspace, logsumexp};

/// A finite set of candidate points inside the sample space, with
/// optional reference masses.
#[derive(Debug, Clone)]
pub struct Grid {
    pub points: Vec<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl Grid {
    pub fn new(points: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(WdroError::EmptyGrid);
        }
        if let Some(w) = &weights {
            if w.len() != points.len() || w.iter().any(|v| !(*v > 0.0)) {
                return Err(WdroError::InvalidArgument(
                    "grid weights must be positive, one per point".into(),
                ));
            }
        }
        Ok(Self { points, weights })
    }

    /// Regular 1-D grid over the space's extent.
    pub fn regular_1d(space: &SampleSpace, k: usize) -> Result<Self> {
        if space.dims() != 1 {
            return Err(WdroError::InvalidArgument(
                "regular_1d requires a 1-D space".into(),
            ));
        }
        let (lo, hi) = space.bounding_box();
        let pts = linspace(lo[0], hi[0], k)
            .into_iter()
            .map(|t| vec![t])
            .collect();
        Grid::new(pts, None)
    }

    /// Grid points augmented with the dataset itself (keeps ρ = 0 feasible).
    pub fn including(mut self, extra: &[Vec<f64>]) -> Self {
        self.points.extend(extra.iter().cloned());
        self.weights = None;
        self
    }
}

/// Exact optimum of the grid-restricted WDRO problem
/// `inf_{λ≥0} λρ² + (1/n) Σᵢ max_j { f(ζⱼ) − λ c(ξᵢ, ζⱼ) }`.
///
/// Each inner max is the upper envelope of lines in λ; the objective is
/// convex piecewise-linear and is minimized exactly by sweeping the
/// merged breakpoints.
pub fn grid_dual_exact(
    model: &LossModel,
    dataset: &[Vec<f64>],
    rho: f64,
    grid: &Grid,
) -> Result<f64> {
    if grid.points.is_empty() {
        return Err(WdroError::EmptyGrid);
    }
    if dataset.is_empty() {
        return Err(WdroError::InvalidArgument("empty dataset".into()));
    }
    if !(rho >= 0.0) {
        return Err(WdroError::InvalidArgument("rho must be >= 0".into()));
    }
    let n = dataset.len() as f64;
    let fvals: Vec<f64> = grid
        .points
        .iter()
        .map(|z| model.eval(z))
        .collect::<Result<_>>()?;

    // Per data point: upper envelope of lines λ ↦ f_j − λ c_ij over λ ≥ 0.
    struct Envelope {
        /// (breakpoint λ where this segment starts, slope, intercept)
        segments: Vec<(f64, f64, f64)>,
        cursor: usize,
    }
    let mut envelopes = Vec::with_capacity(dataset.len());
    let mut events: Vec<(f64, usize)> = Vec::new(); // (λ, data index)
    for (i, xi) in dataset.iter().enumerate() {
        // lines: slope = −c_ij, intercept = f_j
        let mut lines: Vec<(f64, f64)> = grid
            .points
            .iter()
            .zip(&fvals)
            .map(|(z, f)| (-cost_unchecked(xi, z), *f))
            .collect();
        // sort by slope ascending; for ties keep the best intercept
        lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
        for l in lines {
            if let Some(last) = dedup.last_mut() {
                if (l.0 - last.0).abs() == 0.0 {
                    last.1 = last.1.max(l.1);
                    continue;
                }
            }
            dedup.push(l);
        }
        // Upper envelope on λ ∈ [0, ∞): at λ=0 the max intercept wins;
        // larger slopes (smaller costs) take over at crossing points.
        // Build the hull from steepest-decreasing to flattest.
        let mut hull: Vec<(f64, f64, f64)> = Vec::new(); // (start λ, slope, intercept)
        for &(s, b) in dedup.iter() {
            loop {
                match hull.last() {
                    None => {
                        hull.push((0.0, s, b));
                        break;
                    }
                    Some(&(start, s0, b0)) => {
                        // crossing of (s0, b0) and (s, b): λ* = (b − b0)/(s0 − s)
                        debug_assert!(s > s0);
                        let cross = (b - b0) / (s0 - s);
                        if cross <= start {
                            // new line dominates the previous segment entirely
                            hull.pop();
                            continue;
                        }
                        if b0 + s0 * cross < b + s * cross - 0.0 {
                            // numerical guard; treat as crossing anyway
                        }
                        if cross.is_finite() {
                            hull.push((cross, s, b));
                        }
                        break;
                    }
                }
            }
            // Lines crossing below λ=0 never appear: handled by the pop loop.
        }
        // Drop segments that never become active (crossing beyond predecessors
        // already handled). Record events at each segment start > 0.
        for seg in hull.iter().skip(1) {
            events.push((seg.0, i));
        }
        envelopes.push(Envelope {
            segments: hull,
            cursor: 0,
        });
    }

    events.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Sweep: D(λ) = λρ² + (1/n) Σ h_i(λ), piecewise linear convex.
    let mut value: f64 = envelopes
        .iter()
        .map(|e| e.segments[0].2) // intercept at λ = 0
        .sum::<f64>()
        / n;
    let mut slope: f64 = rho * rho
        + envelopes.iter().map(|e| e.segments[0].1).sum::<f64>() / n;
    let mut lambda = 0.0;
    let mut best = value;
    if slope >= 0.0 {
        return Ok(best); // minimum at λ = 0
    }
    for (ev_lambda, i) in events {
        // advance to the event, updating the running value
        value += slope * (ev_lambda - lambda);
        lambda = ev_lambda;
        best = best.min(value);
        let env = &mut envelopes[i];
        // the event may fire multiple segments at identical λ
        while env.cursor + 1 < env.segments.len()
            && env.segments[env.cursor + 1].0 <= lambda
        {
            let old = env.segments[env.cursor].1;
            env.cursor += 1;
            let new = env.segments[env.cursor].1;
            slope += (new - old) / n;
        }
        if slope >= 0.0 {
            return Ok(best);
        }
    }
    // Past the last breakpoint the slope is ρ² − mean min_j c_ij.
    if slope < -1e-15 * (1.0 + rho * rho) {
        return Err(WdroError::InfeasibleGrid);
    }
    Ok(best)
}

/// Deterministic tensor-midpoint quadrature of the ε > 0 dual
/// generator, d ≤ 2 only. The truncated-Gaussian normalization cancels
/// between numerator and denominator on the shared grid.
pub fn phi_quadrature(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: crate::dual::DualParams,
    per_dim: usize,
) -> Result<f64> {
    if space.dims() > 2 {
        return Err(WdroError::Unimplemented(
            "quadrature dual generator only supports d <= 2".into(),
        ));
    }
    if !(params.eps > 0.0) {
        return Err(WdroError::InvalidArgument(
            "phi_quadrature requires eps > 0".into(),
        ));
    }
    let cells = midpoint_cells(space, per_dim);
    if cells.is_empty() {
        return Err(WdroError::EmptyGrid);
    }
    let mut num = Vec::with_capacity(cells.len());
    let mut den = Vec::with_capacity(cells.len());
    let s2 = params.sigma * params.sigma;
    for z in &cells {
        let c = cost_unchecked(xi, z);
        let b = -c / s2; // log of the Gaussian kernel (up to constants)
        den.push(b);
        num.push(b + (model.eval_shifted(z) - params.lambda * c) / params.eps);
    }
    let v = params.eps * (logsumexp(&num) - logsumexp(&den));
    Ok(v - model.offset())
}

/// Quadrature refined by doubling until two successive values differ by
/// less than `tol`.
pub fn phi_quadrature_refined(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: crate::dual::DualParams,
    start_per_dim: usize,
    tol: f64,
) -> Result<f64> {
    let cap = if space.dims() == 1 { 1 << 21 } else { 1 << 12 };
    let mut k = start_per_dim.max(8);
    let mut prev = phi_quadrature(model, space, xi, params, k)?;
    while k < cap {
        k *= 2;
        let cur = phi_quadrature(model, space, xi, params, k)?;
        if (cur - prev).abs() < tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Ok(prev)
}

/// Quadrature evaluation of the Gibbs-averaged transport cost
/// `E_{ζ ∼ ∝ e^{(f−λc)/ε} π_σ(·|ξ)}[c(ξ, ζ)]`, d ≤ 2.
pub fn gibbs_cost_quadrature(
    model: &LossModel,
    space: &SampleSpace,
    xi: &[f64],
    params: crate::dual::DualParams,
    per_dim: usize,
) -> Result<f64> {
    if space.dims() > 2 {
        return Err(WdroError::Unimplemented(
            "quadrature only supports d <= 2".into(),
        ));
    }
    if !(params.eps > 0.0) {
        return Err(WdroError::InvalidArgument("requires eps > 0".into()));
    }
    let cells = midpoint_cells(space, per_dim);
    let s2 = params.sigma * params.sigma;
    let mut logw = Vec::with_capacity(cells.len());
    let mut costs = Vec::with_capacity(cells.len());
    for z in &cells {
        let c = cost_unchecked(xi, z);
        logw.push(-c / s2 + (model.eval_shifted(z) - params.lambda * c) / params.eps);
        costs.push(c);
    }
    let lse = logsumexp(&logw);
    Ok(logw
        .iter()
        .zip(&costs)
        .map(|(lw, c)| (lw - lse).exp() * c)
        .sum())
}

fn midpoint_cells(space: &SampleSpace, per_dim: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = space.bounding_box();
    let d = space.dims();
    let mids = |a: f64, b: f64| -> Vec<f64> {
        let h = (b - a) / per_dim as f64;
        (0..per_dim).map(|i| a + (i as f64 + 0.5) * h).collect()
    };
    let mut out = Vec::new();
    match d {
        1 => {
            for t in mids(lo[0], hi[0]) {
                let p = vec![t];
                if space.contains(&p, 0.0) {
                    out.push(p);
                }
            }
        }
        2 => {
            for a in mids(lo[0], hi[0]) {
                for b in mids(lo[1], hi[1]) {
                    let p = vec![a, b];
                    if space.contains(&p, 0.0) {
                        out.push(p);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

/// Result of the Sinkhorn solve for the regularized transport distance.
#[derive(Debug, Clone, Copy)]
pub struct RegWassResult {
    pub value: f64,
    pub iterations: usize,
    /// Total-variation residual of the worse marginal at exit.
    pub marginal_err: f64,
}

/// Squared regularized transport distance between two discrete
/// distributions on a common grid:
/// `inf_π E_π[c] + δ·KL(π | π_ref)` over couplings with the given
/// marginals, where `π_ref(i, j) = p_i · π_σ(j|i)` discretizes the
/// Gaussian conditional reference on the grid.
pub fn reg_wass_sq(
    grid: &Grid,
    p: &[f64],
    q: &[f64],
    delta: f64,
    sigma: f64,
) -> Result<RegWassResult> {
    let m = grid.points.len();
    if p.len() != m || q.len() != m {
        return Err(WdroError::DimensionMismatch {
            expected: m,
            got: p.len().max(q.len()),
        });
    }
    if !(delta > 0.0) || !(sigma > 0.0) {
        return Err(WdroError::InvalidArgument(
            "delta and sigma must be positive".into(),
        ));
    }
    for (name, w) in [("p", p), ("q", q)] {
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 || w.iter().any(|v| *v < 0.0) {
            return Err(WdroError::InvalidArgument(format!(
                "{name} must be a probability vector (sum 1), got sum {s}"
            )));
        }
    }
    let logw: Vec<f64> = match &grid.weights {
        Some(w) => w.iter().map(|v| v.ln()).collect(),
        None => vec![0.0; m],
    };
    let s2 = sigma * sigma;
    // cost matrix and log reference conditional
    let mut c = vec![0.0; m * m];
    let mut log_ref = vec![0.0; m * m]; // log π_σ(j|i)
    for i in 0..m {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let cij = cost_unchecked(&grid.points[i], &grid.points[j]);
            c[i * m + j] = cij;
            row.push(logw[j] - cij / s2);
        }
        let lse = logsumexp(&row);
        for j in 0..m {
            log_ref[i * m + j] = row[j] - lse;
        }
    }
    // log kernel of the δ-regularized problem
    let log_k: Vec<f64> = (0..m * m).map(|ij| log_ref[ij] - c[ij] / delta).collect();

    let logp: Vec<f64> = p.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect();
    let logq: Vec<f64> = q.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect();
    let mut fpot = vec![0.0; m];
    let mut gpot = vec![0.0; m];
    let max_iters = 100_000usize;
    let tol = 1e-10;
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let mut buf = vec![0.0; m];
    while iterations < max_iters {
        iterations += 1;
        // row scaling: f_i = log p_i − LSE_j(logK + g_j)
        for i in 0..m {
            for j in 0..m {
                buf[j] = log_k[i * m + j] + gpot[j];
            }
            fpot[i] = logp[i] - logsumexp(&buf);
        }
        // column scaling
        for j in 0..m {
            for i in 0..m {
                buf[i] = log_k[i * m + j] + fpot[i];
            }
            gpot[j] = logq[j] - logsumexp(&buf);
        }
        // after a column update the column marginals are exact; check rows
        err = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += (fpot[i] + log_k[i * m + j] + gpot[j]).exp();
            }
            err += (row - p[i]).abs();
        }
        err *= 0.5;
        if err < tol {
            break;
        }
    }
    if err >= tol {
        return Err(WdroError::ConvergenceFailure(format!(
            "Sinkhorn stalled: marginal TV {err:.3e} after {iterations} iterations"
        )));
    }
    // objective at the computed coupling
    let mut value = 0.0;
    for i in 0..m {
        if p[i] == 0.0 {
            continue;
        }
        for j in 0..m {
            let lp = fpot[i] + log_k[i * m + j] + gpot[j];
            let pij = lp.exp();
            if pij > 0.0 {
                let lref = logp[i] + log_ref[i * m + j];
                value += pij * c[i * m + j] + delta * pij * (lp - lref);
            }
        }
    }
    Ok(RegWassResult {
        value,
        iterations,
        marginal_err: err,
    })
}

/// Exact squared 2-Wasserstein distance (with cost ½‖·‖²) between two
/// discrete 1-D distributions, by the sorted monotone coupling.
pub fn w2_sq_1d_discrete(xp: &[f64], pw: &[f64], xq: &[f64], qw: &[f64]) -> Result<f64> {
    if xp.len() != pw.len() || xq.len() != qw.len() || xp.is_empty() || xq.is_empty() {
        return Err(WdroError::InvalidArgument(
            "supports and weights must be nonempty and aligned".into(),
        ));
    }
    let mut a: Vec<(f64, f64)> = xp.iter().cloned().zip(pw.iter().cloned()).collect();
    let mut b: Vec<(f64, f64)> = xq.iter().cloned().zip(qw.iter().cloned()).collect();
    a.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
    b.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let m = ra.min(rb);
        total += m * 0.5 * (a[i].0 - b[j].0) * (a[i].0 - b[j].0);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i >= a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j >= b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    Ok(total)
}

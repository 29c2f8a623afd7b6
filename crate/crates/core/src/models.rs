//! Parametric loss families with analytic derivatives and, where
//! available, closed-form maximizer sets over the sample space.

use crate::error::{Result, WdroError};
use crate::geometry::{SampleSpace, SpaceKind};
use crate::rng::{stream, Purpose};
use crate::vecmath::{dot, norm, norm_sq};

/// Supported loss families.
#[derive(Debug, Clone, PartialEq)]
pub enum LossFamily {
    /// `f(θ, ξ) = log(1 + exp⟨ξ, θ⟩)`; ξ plays the role of −label·feature.
    Logistic,
    /// `f(θ, (x, y)) = ½(⟨θ, x⟩ − y)²` on a feature-ball × target-interval.
    LinearRegression,
    /// `f(α, (x, y)) = ½(Σ αᵢ k(x, xᵢ) − y)² + (μ/2)‖α‖²`, Gaussian kernel.
    KernelRidge {
        centers: Vec<Vec<f64>>,
        bandwidth: f64,
        ridge_mu: f64,
    },
    /// `f ≡ θ[0]`, a constant; the degenerate end of every diagnostic.
    Constant,
}

/// Parameter-space geometry for projections during training.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaBounds {
    /// `{θ : lo ≤ ‖θ‖ ≤ hi}` with `lo > 0` (excludes the origin).
    Annulus { lo: f64, hi: f64 },
    /// Componentwise box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// A single admissible parameter (nothing to optimize).
    Point,
}

/// Smoothness metadata: gradient Lipschitz constant and gradient bound
/// over a given space, when known in closed form.
#[derive(Debug, Clone, Copy, Default)]
pub struct Smoothness {
    pub grad_lipschitz: Option<f64>,
    pub grad_bound: Option<f64>,
}

/// Maximizer set of `f(θ, ·)` over the sample space.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgmaxSet {
    Points(Vec<Vec<f64>>),
    /// Every point attains the max (constant losses).
    WholeSpace,
}

/// A parametric loss with a fixed parameter value.
///
/// `offset` is the non-negativity shift added to the raw family formula
/// for internal dual computations; reported risks subtract it back, so
/// every public value refers to the unshifted loss.
#[derive(Debug, Clone)]
pub struct LossModel {
    family: LossFamily,
    theta: Vec<f64>,
    theta_bounds: ThetaBounds,
    offset: f64,
}

impl LossModel {
    pub fn logistic(theta: Vec<f64>, theta_bounds: ThetaBounds) -> Result<Self> {
        if norm(&theta) == 0.0 {
            return Err(WdroError::InvalidArgument(
                "logistic parameter must be nonzero".into(),
            ));
        }
        check_bounds_exclude_origin(&theta_bounds, "logistic")?;
        Ok(Self {
            family: LossFamily::Logistic,
            theta,
            theta_bounds,
            offset: 0.0,
        })
    }

    pub fn linear_regression(theta: Vec<f64>, theta_bounds: ThetaBounds) -> Result<Self> {
        if norm(&theta) == 0.0 {
            return Err(WdroError::InvalidArgument(
                "linear regression parameter must be nonzero".into(),
            ));
        }
        check_bounds_exclude_origin(&theta_bounds, "linear regression")?;
        Ok(Self {
            family: LossFamily::LinearRegression,
            theta,
            theta_bounds,
            offset: 0.0,
        })
    }

    pub fn kernel_ridge(
        alpha: Vec<f64>,
        centers: Vec<Vec<f64>>,
        bandwidth: f64,
        ridge_mu: f64,
        theta_bounds: ThetaBounds,
    ) -> Result<Self> {
        if centers.is_empty() || centers.len() != alpha.len() {
            return Err(WdroError::InvalidArgument(
                "kernel ridge needs one center per coefficient".into(),
            ));
        }
        if !(bandwidth > 0.0) || ridge_mu < 0.0 {
            return Err(WdroError::InvalidArgument(
                "kernel bandwidth must be positive and ridge_mu nonnegative".into(),
            ));
        }
        Ok(Self {
            family: LossFamily::KernelRidge {
                centers,
                bandwidth,
                ridge_mu,
            },
            theta: alpha,
            theta_bounds,
            offset: 0.0,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            family: LossFamily::Constant,
            theta: vec![value],
            theta_bounds: ThetaBounds::Point,
            offset: 0.0,
        }
    }

    /// Same family and bounds with a new parameter value.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(WdroError::DimensionMismatch {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        let mut m = self.clone();
        m.theta = theta;
        Ok(m)
    }

    /// Sets the non-negativity shift from a coarse probe of the space:
    /// the shifted loss has probe minimum ≥ 0. For the built-in convex
    /// families this is a no-op (they are already nonnegative).
    pub fn nonneg_shifted(mut self, space: &SampleSpace) -> Result<Self> {
        let mut probe = vec![space.project(&vec![0.0; space.dims()])?];
        let (lo, hi) = space.bounding_box();
        for i in 0..space.dims() {
            let mut a = probe[0].clone();
            a[i] = lo[i];
            probe.push(space.project(&a)?);
            let mut b = probe[0].clone();
            b[i] = hi[i];
            probe.push(space.project(&b)?);
        }
        let mut rng = stream(0xC0FFEE, 0, Purpose::Battery);
        for _ in 0..128 {
            probe.push(space.sample_uniform(&mut rng));
        }
        let mut min = f64::INFINITY;
        for p in &probe {
            min = min.min(self.eval(p)?);
        }
        self.offset = (-min).max(0.0);
        Ok(self)
    }

    pub fn family(&self) -> &LossFamily {
        &self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_bounds(&self) -> &ThetaBounds {
        &self.theta_bounds
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Sample dimension this model expects for a given parameter length.
    pub fn xi_dims(&self) -> usize {
        match &self.family {
            LossFamily::Logistic => self.theta.len(),
            LossFamily::LinearRegression => self.theta.len() + 1,
            LossFamily::KernelRidge { centers, .. } => centers[0].len() + 1,
            LossFamily::Constant => 0, // any
        }
    }

    fn check_xi(&self, xi: &[f64]) -> Result<()> {
        let d = self.xi_dims();
        if d != 0 && xi.len() != d {
            return Err(WdroError::DimensionMismatch {
                expected: d,
                got: xi.len(),
            });
        }
        Ok(())
    }

    /// Raw loss value (no non-negativity shift).
    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        self.check_xi(xi)?;
        Ok(self.eval_unchecked(xi))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, xi: &[f64]) -> f64 {
        match &self.family {
            LossFamily::Logistic => log1p_exp(dot(xi, &self.theta)),
            LossFamily::LinearRegression => {
                let (x, y) = split_xy(xi);
                let r = dot(&self.theta, x) - y;
                0.5 * r * r
            }
            LossFamily::KernelRidge {
                centers,
                bandwidth,
                ridge_mu,
            } => {
                let (x, y) = split_xy(xi);
                let mut g = 0.0;
                for (a, c) in self.theta.iter().zip(centers) {
                    g += a * gauss_kernel(x, c, *bandwidth);
                }
                let r = g - y;
                0.5 * r * r + 0.5 * ridge_mu * norm_sq(&self.theta)
            }
            LossFamily::Constant => self.theta[0],
        }
    }

    /// Shifted loss used inside dual-generator computations.
    #[inline]
    pub(crate) fn eval_shifted(&self, xi: &[f64]) -> f64 {
        self.eval_unchecked(xi) + self.offset
    }

    /// Analytic gradients `(∇_ξ f, ∇_θ f)` of the raw family formula.
    pub fn grads(&self, xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_xi(xi)?;
        Ok(match &self.family {
            LossFamily::Logistic => {
                let s = sigmoid(dot(xi, &self.theta));
                let gx: Vec<f64> = self.theta.iter().map(|t| s * t).collect();
                let gt: Vec<f64> = xi.iter().map(|v| s * v).collect();
                (gx, gt)
            }
            LossFamily::LinearRegression => {
                let (x, y) = split_xy(xi);
                let r = dot(&self.theta, x) - y;
                let mut gx: Vec<f64> = self.theta.iter().map(|t| r * t).collect();
                gx.push(-r);
                let gt: Vec<f64> = x.iter().map(|v| r * v).collect();
                (gx, gt)
            }
            LossFamily::KernelRidge {
                centers,
                bandwidth,
                ridge_mu,
            } => {
                let (x, y) = split_xy(xi);
                let h2 = bandwidth * bandwidth;
                let ks: Vec<f64> = centers.iter().map(|c| gauss_kernel(x, c, *bandwidth)).collect();
                let r = self.theta.iter().zip(&ks).map(|(a, k)| a * k).sum::<f64>() - y;
                let mut gx = vec![0.0; x.len()];
                for ((a, k), c) in self.theta.iter().zip(&ks).zip(centers) {
                    // ∇_x k(x, c) = k · (c − x)/h²
                    for j in 0..x.len() {
                        gx[j] += r * a * k * (c[j] - x[j]) / h2;
                    }
                }
                gx.push(-r);
                let gt: Vec<f64> = ks
                    .iter()
                    .zip(&self.theta)
                    .map(|(k, a)| r * k + ridge_mu * a)
                    .collect();
                (gx, gt)
            }
            LossFamily::Constant => (vec![0.0; xi.len()], vec![0.0]),
        })
    }

    /// Gradient in ξ only (hot path for the inner ascent).
    #[inline]
    pub(crate) fn grad_xi_unchecked(&self, xi: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.family {
            LossFamily::Logistic => {
                let s = sigmoid(dot(xi, &self.theta));
                out.extend(self.theta.iter().map(|t| s * t));
            }
            LossFamily::LinearRegression => {
                let (x, y) = split_xy(xi);
                let r = dot(&self.theta, x) - y;
                out.extend(self.theta.iter().map(|t| r * t));
                out.push(-r);
            }
            _ => {
                let (gx, _) = self.grads(xi).expect("dims checked upstream");
                out.extend(gx);
            }
        }
    }

    /// Closed-form maximizer set of `f(θ, ·)` over the space, when the
    /// family has one.
    pub fn argmax_set(&self, space: &SampleSpace) -> Result<ArgmaxSet> {
        match (&self.family, space.kind()) {
            (LossFamily::Constant, _) => Ok(ArgmaxSet::WholeSpace),
            (LossFamily::Logistic, SpaceKind::Ball { center, radius }) => {
                // log(1 + e^t) is increasing: maximize ⟨ζ, θ⟩ over the ball.
                let n = norm(&self.theta);
                let p: Vec<f64> = center
                    .iter()
                    .zip(&self.theta)
                    .map(|(c, t)| c + radius * t / n)
                    .collect();
                Ok(ArgmaxSet::Points(vec![p]))
            }
            (LossFamily::Logistic, SpaceKind::Box { lo, hi }) => {
                let p: Vec<f64> = self
                    .theta
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(t, (a, b))| if *t >= 0.0 { *b } else { *a })
                    .collect();
                Ok(ArgmaxSet::Points(vec![p]))
            }
            (LossFamily::LinearRegression, SpaceKind::BallXInterval { radius, y_bound }) => {
                let n = norm(&self.theta);
                let mut p1: Vec<f64> = self.theta.iter().map(|t| radius * t / n).collect();
                p1.push(-y_bound);
                let mut p2: Vec<f64> = self.theta.iter().map(|t| -radius * t / n).collect();
                p2.push(*y_bound);
                Ok(ArgmaxSet::Points(vec![p1, p2]))
            }
            _ => Err(WdroError::Unimplemented(format!(
                "no closed-form argmax for {:?} on this space",
                family_name(&self.family)
            ))),
        }
    }

    /// Dense-grid maximizer search (d ≤ 2), polished by a short local
    /// ascent. Fallback for families without a closed form.
    pub fn argmax_numeric(&self, space: &SampleSpace, per_dim: usize) -> Result<ArgmaxSet> {
        if space.dims() > 2 {
            return Err(WdroError::Unimplemented(
                "numeric argmax fallback only supports d <= 2".into(),
            ));
        }
        let pts = dense_grid(space, per_dim);
        let mut best = f64::NEG_INFINITY;
        let mut arg = Vec::new();
        for p in &pts {
            let v = self.eval_unchecked(p);
            if v > best {
                best = v;
                arg = p.clone();
            }
        }
        if arg.is_empty() {
            return Err(WdroError::EmptyGrid);
        }
        // Polish with projected gradient steps.
        let mut z = arg;
        let mut g = Vec::new();
        let mut step = space.diameter() / per_dim as f64;
        for _ in 0..200 {
            self.grad_xi_unchecked(&z, &mut g);
            let cand = space.project(&crate::vecmath::add_scaled(&z, step, &g))?;
            if self.eval_unchecked(&cand) > self.eval_unchecked(&z) {
                z = cand;
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        Ok(ArgmaxSet::Points(vec![z]))
    }

    /// Squared distance from `xi` to the maximizer set.
    pub fn dist_sq_to_argmax(&self, xi: &[f64], set: &ArgmaxSet) -> f64 {
        match set {
            ArgmaxSet::WholeSpace => 0.0,
            ArgmaxSet::Points(ps) => ps
                .iter()
                .map(|p| crate::vecmath::dist_sq(xi, p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Maximum of the raw loss over the space: closed form when
    /// available, else the d ≤ 2 numeric fallback.
    pub fn max_on(&self, space: &SampleSpace) -> Result<f64> {
        let set = match self.argmax_set(space) {
            Ok(s) => s,
            Err(WdroError::Unimplemented(_)) => self.argmax_numeric(space, 400)?,
            Err(e) => return Err(e),
        };
        match set {
            ArgmaxSet::WholeSpace => self.eval(&space.project(&vec![0.0; space.dims()])?),
            ArgmaxSet::Points(ps) => {
                let mut best = f64::NEG_INFINITY;
                for p in &ps {
                    best = best.max(self.eval(p)?);
                }
                Ok(best)
            }
        }
    }

    /// Closed-form smoothness constants over the space, when known.
    pub fn smoothness(&self, space: &SampleSpace) -> Smoothness {
        match &self.family {
            LossFamily::Logistic => {
                let t2 = norm_sq(&self.theta);
                Smoothness {
                    grad_lipschitz: Some(0.25 * t2),
                    grad_bound: Some(t2.sqrt()),
                }
            }
            LossFamily::LinearRegression => {
                let t2 = norm_sq(&self.theta);
                let m = 1.0 + t2;
                let g = match space.kind() {
                    SpaceKind::BallXInterval { radius, y_bound } => {
                        Some((t2.sqrt() * radius + y_bound) * m.sqrt())
                    }
                    _ => None,
                };
                Smoothness {
                    grad_lipschitz: Some(m),
                    grad_bound: g,
                }
            }
            LossFamily::Constant => Smoothness {
                grad_lipschitz: Some(0.0),
                grad_bound: Some(0.0),
            },
            LossFamily::KernelRidge { .. } => Smoothness::default(),
        }
    }

    /// Projection onto the parameter bounds.
    pub fn project_theta(&self, theta: &[f64]) -> Vec<f64> {
        match &self.theta_bounds {
            ThetaBounds::Point => self.theta.clone(),
            ThetaBounds::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| v.clamp(*a, *b))
                .collect(),
            ThetaBounds::Annulus { lo, hi } => {
                let n = norm(theta);
                if n == 0.0 {
                    let mut e = vec![0.0; theta.len()];
                    e[0] = *lo;
                    return e;
                }
                let r = n.clamp(*lo, *hi);
                theta.iter().map(|v| v * r / n).collect()
            }
        }
    }
}

fn check_bounds_exclude_origin(bounds: &ThetaBounds, family: &str) -> Result<()> {
    match bounds {
        ThetaBounds::Annulus { lo, hi } => {
            if !(*lo > 0.0) || lo > hi {
                return Err(WdroError::InvalidArgument(format!(
                    "{family} parameter annulus needs 0 < lo <= hi"
                )));
            }
            Ok(())
        }
        ThetaBounds::Point => Ok(()),
        ThetaBounds::Box { .. } => Err(WdroError::InvalidArgument(format!(
            "{family} parameter set must exclude the origin; use an annulus"
        ))),
    }
}

fn family_name(f: &LossFamily) -> &'static str {
    match f {
        LossFamily::Logistic => "logistic",
        LossFamily::LinearRegression => "linear_regression",
        LossFamily::KernelRidge { .. } => "kernel_ridge",
        LossFamily::Constant => "constant",
    }
}

fn split_xy(xi: &[f64]) -> (&[f64], f64) {
    let (x, y) = xi.split_at(xi.len() - 1);
    (x, y[0])
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Stable log(1 + e^t).
#[inline]
fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn gauss_kernel(x: &[f64], c: &[f64], bandwidth: f64) -> f64 {
    (-crate::vecmath::dist_sq(x, c) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Regular membership-filtered grid over the bounding box (d ≤ 2).
pub(crate) fn dense_grid(space: &SampleSpace, per_dim: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = space.bounding_box();
    let d = space.dims();
    let mut pts = Vec::new();
    match d {
        1 => {
            for t in crate::vecmath::linspace(lo[0], hi[0], per_dim) {
                let p = vec![t];
                if space.contains(&p, 0.0) {
                    pts.push(p);
                }
            }
        }
        2 => {
            for a in crate::vecmath::linspace(lo[0], hi[0], per_dim) {
                for b in crate::vecmath::linspace(lo[1], hi[1], per_dim) {
                    let p = vec![a, b];
                    if space.contains(&p, 0.0) {
                        pts.push(p);
                    }
                }
            }
        }
        _ => panic!("dense_grid only supports d <= 2"),
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn annulus() -> ThetaBounds {
        ThetaBounds::Annulus { lo: 0.25, hi: 4.0 }
    }

    #[test]
    fn logistic_midpoint_value() {
        // ⟨ξ, θ⟩ = 0 ⇒ log 2.
        let m = LossModel::logistic(vec![1.0, 1.0], annulus()).unwrap();
        let v = m.eval(&[1.0, -1.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn linear_regression_example() {
        let m = LossModel::linear_regression(vec![2.0], annulus()).unwrap();
        let v = m.eval(&[0.0, 1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kernel_ridge_single_center() {
        // m=1, α=1, x=x₁ (k=1), y=0, μ=0 ⇒ ½.
        let m = LossModel::kernel_ridge(
            vec![1.0],
            vec![vec![0.3, 0.4]],
            1.0,
            0.0,
            ThetaBounds::Annulus { lo: 0.1, hi: 5.0 },
        )
        .unwrap();
        let v = m.eval(&[0.3, 0.4, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_regression_grads_example() {
        let m = LossModel::linear_regression(vec![1.0], annulus()).unwrap();
        let (gx, gt) = m.grads(&[2.0, 0.0]).unwrap();
        assert!((gx[0] - 2.0).abs() < 1e-15);
        assert!((gx[1] + 2.0).abs() < 1e-15);
        assert!((gt[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_grad_at_midpoint_is_half_theta() {
        let m = LossModel::logistic(vec![2.0, -1.0], annulus()).unwrap();
        let xi = vec![0.5, 1.0]; // ⟨ξ,θ⟩ = 0
        let (gx, _) = m.grads(&xi).unwrap();
        assert!((gx[0] - 1.0).abs() < 1e-12);
        assert!((gx[1] + 0.5).abs() < 1e-12);
    }

    fn fd_check(m: &LossModel, xi: &[f64]) {
        let h = 1e-5;
        let (gx, gt) = m.grads(xi).unwrap();
        for j in 0..xi.len() {
            let mut a = xi.to_vec();
            let mut b = xi.to_vec();
            a[j] += h;
            b[j] -= h;
            let fd = (m.eval(&a).unwrap() - m.eval(&b).unwrap()) / (2.0 * h);
            let scale = fd.abs().max(gx[j].abs()).max(1e-8);
            assert!(
                (fd - gx[j]).abs() / scale < 1e-4,
                "grad_xi[{j}]: fd {fd} vs analytic {}",
                gx[j]
            );
        }
        for j in 0..m.theta().len() {
            let mut tp = m.theta().to_vec();
            let mut tm = m.theta().to_vec();
            tp[j] += h;
            tm[j] -= h;
            let fp = m.with_theta(tp).unwrap().eval(xi).unwrap();
            let fm = m.with_theta(tm).unwrap().eval(xi).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let scale = fd.abs().max(gt[j].abs()).max(1e-8);
            assert!(
                (fd - gt[j]).abs() / scale < 1e-4,
                "grad_theta[{j}]: fd {fd} vs analytic {}",
                gt[j]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_families() {
        let mut rng = stream(21, 0, Purpose::Battery);
        for _ in 0..100 {
            let d = 3;
            let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let theta = if norm(&theta) < 1e-3 { vec![1.0, 0.0, 0.0] } else { theta };
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let m = LossModel::logistic(theta.clone(), annulus()).unwrap();
            fd_check(&m, &xi);

            let mut xiy = xi.clone();
            xiy.push(rng.gen_range(-0.8..0.8));
            let m = LossModel::linear_regression(theta.clone(), annulus()).unwrap();
            fd_check(&m, &xiy);

            let centers: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect())
                .collect();
            let m = LossModel::kernel_ridge(
                vec![rng.gen_range(0.2..1.0), rng.gen_range(-1.0..-0.2)],
                centers,
                0.7,
                0.3,
                ThetaBounds::Annulus { lo: 0.05, hi: 5.0 },
            )
            .unwrap();
            let mut xik = xi.clone();
            xik.push(rng.gen_range(-0.8..0.8));
            fd_check(&m, &xik);
        }
    }

    #[test]
    fn logistic_argmax_on_ball() {
        let space = SampleSpace::ball(vec![0.0, 0.0], 2.0).unwrap();
        let m = LossModel::logistic(vec![3.0, 4.0], annulus()).unwrap();
        let set = m.argmax_set(&space).unwrap();
        match set {
            ArgmaxSet::Points(ps) => {
                assert_eq!(ps.len(), 1);
                assert!((ps[0][0] - 1.2).abs() < 1e-12);
                assert!((ps[0][1] - 1.6).abs() < 1e-12);
            }
            _ => panic!("expected points"),
        }
    }

    #[test]
    fn linear_regression_argmax_two_points() {
        let space = SampleSpace::ball_x_interval(2, 1.0, 0.5).unwrap();
        let m = LossModel::linear_regression(vec![1.0, 0.0], annulus()).unwrap();
        match m.argmax_set(&space).unwrap() {
            ArgmaxSet::Points(ps) => {
                assert_eq!(ps.len(), 2);
                assert_eq!(ps[0], vec![1.0, 0.0, -0.5]);
                assert_eq!(ps[1], vec![-1.0, 0.0, 0.5]);
            }
            _ => panic!("expected points"),
        }
    }

    #[test]
    fn argmax_matches_dense_grid_value() {
        let space = SampleSpace::ball(vec![0.0, 0.0], 1.0).unwrap();
        let m = LossModel::logistic(vec![1.0, -0.7], annulus()).unwrap();
        let closed = m.max_on(&space).unwrap();
        let grid = dense_grid(&space, 700);
        let grid_max = grid
            .iter()
            .map(|p| m.eval_unchecked(p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(closed >= grid_max - 1e-6);
        assert!((closed - grid_max).abs() < 1e-3);
    }

    #[test]
    fn logistic_nondecreasing_toward_maximizer() {
        let space = SampleSpace::ball(vec![0.0, 0.0], 1.0).unwrap();
        let m = LossModel::logistic(vec![0.8, 0.6], annulus()).unwrap();
        let set = m.argmax_set(&space).unwrap();
        let eta = match set {
            ArgmaxSet::Points(ps) => ps[0].clone(),
            _ => unreachable!(),
        };
        let xi = vec![-0.3, 0.2];
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let p: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| a + t * (b - a)).collect();
            let v = m.eval_unchecked(&p);
            assert!(v >= prev - 1e-12, "not monotone at t={t}");
            prev = v;
        }
    }

    #[test]
    fn constant_argmax_is_whole_space() {
        let m = LossModel::constant(3.0);
        let space = SampleSpace::ball(vec![0.0], 1.0).unwrap();
        assert_eq!(m.argmax_set(&space).unwrap(), ArgmaxSet::WholeSpace);
        assert_eq!(m.dist_sq_to_argmax(&[0.4], &ArgmaxSet::WholeSpace), 0.0);
    }

    #[test]
    fn nonneg_shift_records_negative_constant() {
        let space = SampleSpace::ball(vec![0.0], 1.0).unwrap();
        let m = LossModel::constant(-2.0).nonneg_shifted(&space).unwrap();
        assert!((m.offset() - 2.0).abs() < 1e-12);
        // public eval stays raw
        assert_eq!(m.eval(&[0.0]).unwrap(), -2.0);
        assert_eq!(m.eval_shifted(&[0.0]), 0.0);
    }

    #[test]
    fn annulus_projection() {
        let m = LossModel::logistic(vec![1.0, 0.0], annulus()).unwrap();
        let p = m.project_theta(&[8.0, 0.0]);
        assert!((norm(&p) - 4.0).abs() < 1e-12);
        let p = m.project_theta(&[0.01, 0.0]);
        assert!((norm(&p) - 0.25).abs() < 1e-12);
    }
}

//! Compact convex sample spaces, the quadratic transport cost, and
//! sampling of the Gaussian conditional reference measure.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WdroError};
use crate::vecmath::{dist_sq, norm, norm_sq};

/// Acceptance-rate floor for rejection sampling before giving up.
pub const ACCEPTANCE_FLOOR: f64 = 1e-3;
const STALL_CHECK_AFTER: u64 = 4096;

/// Shape of the sample space.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    /// Euclidean ball of the given center and radius.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Feature ball `B(0, radius)` times a target interval
    /// `[-y_bound, y_bound]` on the last coordinate.
    BallXInterval { radius: f64, y_bound: f64 },
}

/// A compact convex sample space with an interior margin used by data
/// generation (the data law keeps a `margin`-ball around its support
/// inside the space).
#[derive(Debug, Clone)]
pub struct SampleSpace {
    kind: SpaceKind,
    dims: usize,
    margin: f64,
}

impl SampleSpace {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(WdroError::InvalidArgument(
                "ball center must be nonempty and finite".into(),
            ));
        }
        let dims = center.len();
        Ok(Self {
            kind: SpaceKind::Ball { center, radius },
            dims,
            margin: 0.1 * radius,
        })
    }

    pub fn cube(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(WdroError::InvalidArgument(
                "box bounds must be nonempty and of equal length".into(),
            ));
        }
        let mut min_side = f64::INFINITY;
        for (a, b) in lo.iter().zip(&hi) {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(WdroError::InvalidArgument(
                    "box bounds must be finite with lo < hi".into(),
                ));
            }
            min_side = min_side.min(b - a);
        }
        let dims = lo.len();
        Ok(Self {
            kind: SpaceKind::Box { lo, hi },
            dims,
            margin: 0.05 * min_side,
        })
    }

    /// Feature ball times target interval; `feature_dims + 1` total dims.
    pub fn ball_x_interval(feature_dims: usize, radius: f64, y_bound: f64) -> Result<Self> {
        if feature_dims == 0 {
            return Err(WdroError::InvalidArgument(
                "ball_x_interval needs at least one feature dimension".into(),
            ));
        }
        if !(radius > 0.0) || !(y_bound > 0.0) {
            return Err(WdroError::InvalidArgument(
                "ball_x_interval radius and y_bound must be positive".into(),
            ));
        }
        Ok(Self {
            kind: SpaceKind::BallXInterval { radius, y_bound },
            dims: feature_dims + 1,
            margin: 0.1 * radius.min(y_bound),
        })
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin >= 0.0) || !margin.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "margin must be nonnegative, got {margin}"
            )));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Interior margin γ: data generation keeps `B(ξ, γ) ⊂ Ξ`.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn diameter(&self) -> f64 {
        match &self.kind {
            SpaceKind::Ball { radius, .. } => 2.0 * radius,
            SpaceKind::Box { lo, hi } => dist_sq(lo, hi).sqrt(),
            SpaceKind::BallXInterval { radius, y_bound } => {
                ((2.0 * radius).powi(2) + (2.0 * y_bound).powi(2)).sqrt()
            }
        }
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims {
            return Err(WdroError::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dims {
            return false;
        }
        match &self.kind {
            SpaceKind::Ball { center, radius } => dist_sq(x, center).sqrt() <= radius + tol,
            SpaceKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
            SpaceKind::BallXInterval { radius, y_bound } => {
                let (xs, y) = split_xy(x);
                norm(xs) <= radius + tol && y.abs() <= y_bound + tol
            }
        }
    }

    /// Whether the closed ball `B(x, gamma)` lies inside the space.
    pub fn contains_ball(&self, x: &[f64], gamma: f64) -> bool {
        if x.len() != self.dims {
            return false;
        }
        match &self.kind {
            SpaceKind::Ball { center, radius } => dist_sq(x, center).sqrt() + gamma <= *radius,
            SpaceKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v - gamma >= *a && *v + gamma <= *b),
            SpaceKind::BallXInterval { radius, y_bound } => {
                let (xs, y) = split_xy(x);
                norm(xs) + gamma <= *radius && y.abs() + gamma <= *y_bound
            }
        }
    }

    /// Euclidean projection onto the space.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(WdroError::InvalidArgument(
                "cannot project a non-finite point".into(),
            ));
        }
        Ok(match &self.kind {
            SpaceKind::Ball { center, radius } => project_ball(x, center, *radius),
            SpaceKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| v.clamp(*a, *b))
                .collect(),
            SpaceKind::BallXInterval { radius, y_bound } => {
                let (xs, y) = split_xy(x);
                let origin = vec![0.0; xs.len()];
                let mut out = project_ball(xs, &origin, *radius);
                out.push(y.clamp(-y_bound, *y_bound));
                out
            }
        })
    }

    /// The same shape with every boundary pulled in by `gamma`. Used to
    /// generate data whose support keeps a `gamma`-ball inside the
    /// original space.
    pub fn shrunken(&self, gamma: f64) -> Result<SampleSpace> {
        if !(gamma >= 0.0) {
            return Err(WdroError::InvalidArgument("shrink margin must be >= 0".into()));
        }
        let kind = match &self.kind {
            SpaceKind::Ball { center, radius } => {
                let r = radius - gamma;
                if r <= 0.0 {
                    return Err(WdroError::InvalidArgument(
                        "margin swallows the whole ball".into(),
                    ));
                }
                SpaceKind::Ball {
                    center: center.clone(),
                    radius: r,
                }
            }
            SpaceKind::Box { lo, hi } => {
                let nlo: Vec<f64> = lo.iter().map(|a| a + gamma).collect();
                let nhi: Vec<f64> = hi.iter().map(|b| b - gamma).collect();
                if nlo.iter().zip(&nhi).any(|(a, b)| a >= b) {
                    return Err(WdroError::InvalidArgument(
                        "margin swallows the whole box".into(),
                    ));
                }
                SpaceKind::Box { lo: nlo, hi: nhi }
            }
            SpaceKind::BallXInterval { radius, y_bound } => {
                let r = radius - gamma;
                let b = y_bound - gamma;
                if r <= 0.0 || b <= 0.0 {
                    return Err(WdroError::InvalidArgument(
                        "margin swallows the space".into(),
                    ));
                }
                SpaceKind::BallXInterval {
                    radius: r,
                    y_bound: b,
                }
            }
        };
        Ok(SampleSpace {
            kind,
            dims: self.dims,
            margin: 0.0,
        })
    }

    /// Tight axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            SpaceKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            SpaceKind::Box { lo, hi } => (lo.clone(), hi.clone()),
            SpaceKind::BallXInterval { radius, y_bound } => {
                let d = self.dims - 1;
                let mut lo = vec![-radius; d];
                let mut hi = vec![*radius; d];
                lo.push(-y_bound);
                hi.push(*y_bound);
                (lo, hi)
            }
        }
    }

    /// Exact uniform draw (no rejection).
    pub fn sample_uniform(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        match &self.kind {
            SpaceKind::Ball { center, radius } => {
                let mut p = uniform_in_ball(self.dims, *radius, rng);
                for (v, c) in p.iter_mut().zip(center) {
                    *v += c;
                }
                p
            }
            SpaceKind::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| rng.gen_range(*a..=*b))
                .collect(),
            SpaceKind::BallXInterval { radius, y_bound } => {
                let mut p = uniform_in_ball(self.dims - 1, *radius, rng);
                p.push(rng.gen_range(-*y_bound..=*y_bound));
                p
            }
        }
    }

    /// `count` i.i.d. draws from the Gaussian conditional reference
    /// measure centered at `center` with spread `sigma`, truncated to the
    /// space, by rejection from the unconstrained Gaussian.
    pub fn sample_reference(
        &self,
        center: &[f64],
        sigma: f64,
        count: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_dims(center)?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(WdroError::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if count == 0 {
            return Err(WdroError::InvalidArgument("count must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(count);
        let mut proposals: u64 = 0;
        let mut accepted: u64 = 0;
        let mut point = vec![0.0; self.dims];
        while out.len() < count {
            for (v, c) in point.iter_mut().zip(center) {
                let z: f64 = rng.sample(StandardNormal);
                *v = c + sigma * z;
            }
            proposals += 1;
            if self.contains(&point, 0.0) {
                accepted += 1;
                out.push(point.clone());
            } else if proposals >= STALL_CHECK_AFTER {
                let rate = accepted as f64 / proposals as f64;
                if rate < ACCEPTANCE_FLOOR {
                    return Err(WdroError::SamplingStalled {
                        rate,
                        floor: ACCEPTANCE_FLOOR,
                        proposals,
                    });
                }
            }
        }
        Ok(out)
    }

    /// One draw from the truncated Gaussian reference measure.
    pub fn sample_reference_one(
        &self,
        center: &[f64],
        sigma: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<f64>> {
        Ok(self.sample_reference(center, sigma, 1, rng)?.pop().unwrap())
    }
}

fn split_xy(x: &[f64]) -> (&[f64], f64) {
    let (feats, y) = x.split_at(x.len() - 1);
    (feats, y[0])
}

fn project_ball(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let r = dist_sq(x, center).sqrt();
    if r <= radius {
        return x.to_vec();
    }
    // Rescale until the rounded result verifiably lies inside, so the
    // projection is exactly idempotent in floating point.
    let mut p: Vec<f64> = x.to_vec();
    let mut rr = r;
    while rr > radius {
        let s = radius / rr;
        for (v, c) in p.iter_mut().zip(center) {
            *v = c + s * (*v - c);
        }
        let next = dist_sq(&p, center).sqrt();
        if next >= rr {
            break; // no further floating progress possible
        }
        rr = next;
    }
    p
}

fn uniform_in_ball(dims: usize, radius: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    // Gaussian direction scaled by U^{1/d}: exact uniform in the ball.
    let mut dir: Vec<f64> = (0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = norm(&dir);
    if n == 0.0 {
        return vec![0.0; dims];
    }
    let u: f64 = rng.gen::<f64>();
    let scale = radius * u.powf(1.0 / dims as f64) / n;
    for v in dir.iter_mut() {
        *v *= scale;
    }
    dir
}

/// Quadratic transport cost `½‖x − y‖²`.
pub fn cost(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(WdroError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(0.5 * dist_sq(x, y))
}

/// Cost without the dimension check, for hot loops.
#[inline]
pub(crate) fn cost_unchecked(x: &[f64], y: &[f64]) -> f64 {
    0.5 * dist_sq(x, y)
}

#[allow(unused)]
fn silence(x: &[f64]) -> f64 {
    norm_sq(x)
}

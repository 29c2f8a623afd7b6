//! Synthetic data generation.
//!
//! The data law keeps a margin-ball inside the sample space: features
//! are Gaussian draws rejected into the shrunken space (or uniform on
//! it), regression targets are clipped into the shrunken interval, and
//! logistic labels are folded into the sample as ξ = −y·x.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WdroError};
use crate::geometry::{SampleSpace, SpaceKind};
use crate::harness::config::ExperimentConfig;
use crate::rng::{stream, Purpose};
use crate::vecmath::dot;

const MAX_PROPOSALS_PER_POINT: u64 = 100_000;

fn reject_gaussian_into(
    space: &SampleSpace,
    scale: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    let d = space.dims();
    let mut p = vec![0.0; d];
    for attempt in 0..MAX_PROPOSALS_PER_POINT {
        for v in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = scale * z;
        }
        if space.contains(&p, 0.0) {
            return Ok(p);
        }
        if attempt == MAX_PROPOSALS_PER_POINT - 1 {
            break;
        }
    }
    Err(WdroError::SamplingStalled {
        rate: 0.0,
        floor: 1.0 / MAX_PROPOSALS_PER_POINT as f64,
        proposals: MAX_PROPOSALS_PER_POINT,
    })
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Generates one replicate's dataset of `n` points, stream-keyed by
/// `(seed, replicate)`. Identical inputs give identical datasets.
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    n: usize,
    replicate: u64,
) -> Result<Vec<Vec<f64>>> {
    let space = cfg.build_space()?;
    let gamma = space.margin();
    let shrunk = space.shrunken(gamma)?;
    let theta_true = cfg.theta_true(&space);
    let mut rng = stream(cfg.experiment.seed, replicate, Purpose::DataGen);
    let uniform = match cfg.data.generator.as_str() {
        "gaussian_clipped" => false,
        "uniform" => true,
        g => {
            return Err(WdroError::Config(format!(
                "unknown data.generator '{g}'"
            )))
        }
    };

    let mut out = Vec::with_capacity(n);
    match (cfg.model.family.as_str(), space.kind()) {
        ("logistic", SpaceKind::Ball { .. }) => {
            if theta_true.len() != space.dims() {
                return Err(WdroError::Config(
                    "data.theta_true dimension must match the space".into(),
                ));
            }
            let scale = cfg
                .data
                .feature_scale
                .unwrap_or_else(|| default_scale(&space));
            for _ in 0..n {
                let x = if uniform {
                    shrunk.sample_uniform(&mut rng)
                } else {
                    reject_gaussian_into(&shrunk, scale, &mut rng)?
                };
                let p1 = sigmoid(dot(&theta_true, &x));
                let y: f64 = if rng.gen::<f64>() < p1 { 1.0 } else { -1.0 };
                out.push(x.iter().map(|v| -y * v).collect());
            }
        }
        ("linear_regression", SpaceKind::BallXInterval { y_bound, .. })
        | ("kernel_ridge", SpaceKind::BallXInterval { y_bound, .. }) => {
            let feat_dims = space.dims() - 1;
            let feat_space = match shrunk.kind() {
                SpaceKind::BallXInterval { radius, .. } => {
                    SampleSpace::ball(vec![0.0; feat_dims], *radius)?
                }
                _ => unreachable!(),
            };
            let y_max = y_bound - gamma;
            let scale = cfg
                .data
                .feature_scale
                .unwrap_or_else(|| default_scale(&feat_space));
            let use_linear_targets = cfg.model.family == "linear_regression";
            for _ in 0..n {
                let x = if uniform {
                    feat_space.sample_uniform(&mut rng)
                } else {
                    reject_gaussian_into(&feat_space, scale, &mut rng)?
                };
                let clean = if use_linear_targets {
                    if theta_true.len() != feat_dims {
                        return Err(WdroError::Config(
                            "data.theta_true must have feature dimension".into(),
                        ));
                    }
                    dot(&theta_true, &x)
                } else {
                    // smooth nonlinear target for the kernel family
                    x.iter().map(|v| (2.0 * v).sin()).sum::<f64>() / feat_dims as f64
                };
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.data.noise;
                let y = (clean + noise).clamp(-y_max, y_max);
                let mut xi = x;
                xi.push(y);
                out.push(xi);
            }
        }
        _ => {
            // family-agnostic fallback: points straight from the shrunken space
            let scale = cfg
                .data
                .feature_scale
                .unwrap_or_else(|| default_scale(&space));
            for _ in 0..n {
                let x = if uniform {
                    shrunk.sample_uniform(&mut rng)
                } else {
                    reject_gaussian_into(&shrunk, scale, &mut rng)?
                };
                out.push(x);
            }
        }
    }
    Ok(out)
}

fn default_scale(space: &SampleSpace) -> f64 {
    // keeps Gaussian mass mostly inside the shrunken space as d grows
    0.25 * space.diameter() / (space.dims() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::vecmath::linspace;

    fn cfg_1d() -> ExperimentConfig {
        ExperimentConfig::from_str(
            r#"
            [space]
            kind = "ball"
            radius = 1.0
            dims = 1

            [model]
            family = "logistic"

            [data]
            n = 4000
            theta_true = [1.0]

            [experiment]
            seed = 5
        "#,
        )
        .unwrap()
    }

    #[test]
    fn points_respect_the_margin() {
        let cfg = cfg_1d();
        let space = cfg.build_space().unwrap();
        let data = generate_dataset(&cfg, 500, 0).unwrap();
        for xi in &data {
            assert!(space.contains_ball(xi, space.margin() - 1e-12));
        }
    }

    #[test]
    fn same_key_same_dataset() {
        let cfg = cfg_1d();
        let a = generate_dataset(&cfg, 100, 3).unwrap();
        let b = generate_dataset(&cfg, 100, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg, 100, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_clipped_mean_matches_quadrature() {
        // 1-D: ξ = −y·x; E[ξ] = −E[y·x]. With P(y=1|x) = s(x·θ*):
        // E[ξ] = −E[x·(2s(θ* x) − 1)] over the truncated Gaussian feature law.
        let cfg = cfg_1d();
        let n = 4000;
        let data = generate_dataset(&cfg, n, 1).unwrap();
        let emp = data.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        // quadrature of the clipped feature density on the shrunken ball [-0.9, 0.9]
        let scale = 0.25 * 2.0 / 1.0; // default_scale for d = 1, diam 2
        let pts = linspace(-0.9, 0.9, 200_001);
        let h = pts[1] - pts[0];
        let (mut z, mut m) = (0.0, 0.0);
        for &x in &pts {
            let w = (-x * x / (2.0 * scale * scale)).exp();
            let s = sigmoid(x); // theta_true = 1
            z += w * h;
            m += -(2.0 * s - 1.0) * x * w * h;
        }
        let expected = m / z;
        let sd_bound = 4.0 / (n as f64).sqrt();
        assert!(
            (emp - expected).abs() < sd_bound,
            "emp {emp} vs quadrature {expected} (bound {sd_bound})"
        );
    }

    #[test]
    fn regression_targets_clamped_into_margin() {
        let cfg = ExperimentConfig::from_str(
            r#"
            [space]
            kind = "ball_x_interval"
            radius = 1.0
            y_bound = 0.5
            dims = 3

            [model]
            family = "linear_regression"

            [data]
            theta_true = [0.7, 0.7]
            noise = 5.0

            [experiment]
            seed = 2
        "#,
        )
        .unwrap();
        let space = cfg.build_space().unwrap();
        let data = generate_dataset(&cfg, 300, 0).unwrap();
        let gamma = space.margin();
        for xi in &data {
            assert!(xi[2].abs() <= 0.5 - gamma + 1e-12);
            assert!(space.contains_ball(xi, gamma - 1e-12));
        }
    }
}

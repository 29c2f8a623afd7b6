//! Distribution-shift robustness: translated test distributions within
//! the certified transport budget must stay covered by the empirical
//! robust risk; a far-over-budget control must not.

use rayon::prelude::*;

use crate::error::{Result, WdroError};
use crate::geometry::SampleSpace;
use crate::harness::config::ExperimentConfig;
use crate::harness::datagen::generate_dataset;
use crate::harness::report::{csv, fmt_g9, sanitize};
use crate::models::{LossFamily, LossModel};
use crate::risk::train_robust;
use crate::rng::{derive_seed, Purpose, REFERENCE_REPLICATE};
use crate::vecmath::{mean_and_stderr, median, norm};

#[derive(Debug, Clone)]
pub struct ShiftRow {
    pub t: f64,
    /// Transport budget declared for this row (the in-budget rows share
    /// ρ(ρ−ρ̂_n); the negative control declares its own 4× budget).
    pub budget: f64,
    pub mean_loss_shifted: f64,
    pub robust_risk: f64,
    pub covered: u8,
    pub control: u8,
    pub seed: u64,
    pub replicate: u64,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct ShiftOutcome {
    pub rows: Vec<ShiftRow>,
    /// δ = ε/λ* of the regularized neighborhood (median over
    /// replicates; 0 for the standard case).
    pub delta: f64,
    pub in_budget_coverage: f64,
    pub control_coverage: f64,
}

/// Adversarial unit direction in sample space for the given family.
fn shift_direction(model: &LossModel, dims: usize) -> Vec<f64> {
    let mut u = match model.family() {
        LossFamily::Logistic => model.theta().to_vec(),
        LossFamily::LinearRegression => {
            let mut v = model.theta().to_vec();
            v.push(-1.0);
            v
        }
        _ => {
            let mut v = vec![0.0; dims];
            v[0] = 1.0;
            v
        }
    };
    let n = norm(&u);
    if n == 0.0 {
        u = vec![0.0; dims];
        u[0] = 1.0;
        return u;
    }
    u.iter_mut().for_each(|v| *v /= n);
    u
}

pub fn run_shift(cfg: &ExperimentConfig, replay: Option<u64>) -> Result<ShiftOutcome> {
    let rho = cfg.wdro.rho;
    let rho_n = cfg.experiment.rho_n.ok_or_else(|| {
        WdroError::Config(
            "shift needs experiment.rho_n (from a scaling/sandwich run or an override)".into(),
        )
    })?;
    if !(rho_n >= 0.0) || rho_n >= rho {
        return Err(WdroError::Config(
            "experiment.rho_n must lie in [0, rho)".into(),
        ));
    }
    let space = cfg.build_space()?;
    let template = cfg.build_model(&space)?;
    let theta0 = template.project_theta(&cfg.theta_init(&space));
    let seed = cfg.experiment.seed;
    let (eps, sigma) = cfg.eps_sigma(rho);
    let sigma_solver = if eps > 0.0 { sigma } else { 1.0 };
    let budget = rho * (rho - rho_n);
    let t_max = (2.0 * budget).sqrt();

    let mut ref_cfg = cfg.clone();
    ref_cfg.data.n = cfg.experiment.true_risk_samples;
    let reference = generate_dataset(
        &ref_cfg,
        cfg.experiment.true_risk_samples,
        REFERENCE_REPLICATE,
    )?;

    let reps: Vec<u64> = match replay {
        Some(k) => vec![k],
        None => (0..cfg.experiment.replicates).collect(),
    };

    let mut chunks: Vec<(u64, (Vec<ShiftRow>, f64))> = reps
        .par_iter()
        .map(|&rep| {
            let out = replicate_rows(
                cfg, &space, &template, &theta0, &reference, rep, rho, rho_n, eps, sigma_solver,
                budget, t_max, seed,
            )
            .unwrap_or_else(|e| {
                let row = ShiftRow {
                    t: f64::NAN,
                    budget,
                    mean_loss_shifted: f64::NAN,
                    robust_risk: f64::NAN,
                    covered: 0,
                    control: 0,
                    seed,
                    replicate: rep,
                    status: sanitize(&e.to_string()),
                };
                (vec![row], f64::NAN)
            });
            (rep, out)
        })
        .collect();
    chunks.sort_by_key(|(k, _)| *k);
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    for (_, (rs, d)) in chunks {
        rows.extend(rs);
        if d.is_finite() {
            deltas.push(d);
        }
    }

    let in_rows: Vec<&ShiftRow> = rows
        .iter()
        .filter(|r| r.status == "ok" && r.control == 0)
        .collect();
    let ctl_rows: Vec<&ShiftRow> = rows
        .iter()
        .filter(|r| r.status == "ok" && r.control == 1)
        .collect();
    let cov = |rs: &[&ShiftRow]| {
        if rs.is_empty() {
            f64::NAN
        } else {
            rs.iter().filter(|r| r.covered == 1).count() as f64 / rs.len() as f64
        }
    };
    Ok(ShiftOutcome {
        delta: if deltas.is_empty() { 0.0 } else { median(&deltas) },
        in_budget_coverage: cov(&in_rows),
        control_coverage: cov(&ctl_rows),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn replicate_rows(
    cfg: &ExperimentConfig,
    space: &SampleSpace,
    template: &LossModel,
    theta0: &[f64],
    reference: &[Vec<f64>],
    rep: u64,
    rho: f64,
    _rho_n: f64,
    eps: f64,
    sigma_solver: f64,
    budget: f64,
    t_max: f64,
    seed: u64,
) -> Result<(Vec<ShiftRow>, f64)> {
    let dataset = generate_dataset(cfg, cfg.data.n, rep)?;
    let trained = train_robust(
        template,
        space,
        &dataset,
        rho,
        eps,
        sigma_solver,
        cfg.mc_budget(),
        cfg.opt_budget(),
        theta0.to_vec(),
        derive_seed(seed, rep, Purpose::PhiSamples),
    )?;
    let model = template.with_theta(trained.theta.clone())?;
    let robust = trained.risk;
    let delta = if eps > 0.0 && robust.lambda_star > 0.0 && robust.lambda_star.is_finite() {
        eps / robust.lambda_star
    } else {
        0.0
    };
    let u = shift_direction(&model, space.dims());

    let mut rows = Vec::new();
    let eval_at = |t: f64, declared_budget: f64, control: u8| -> Result<ShiftRow> {
        debug_assert!(0.5 * t * t <= declared_budget + 1e-12);
        let mut vals = Vec::with_capacity(reference.len());
        for xi in reference {
            let shifted: Vec<f64> = xi.iter().zip(&u).map(|(a, b)| a + t * b).collect();
            let z = space.project(&shifted)?;
            vals.push(model.eval(&z)?);
        }
        let (m, se) = mean_and_stderr(&vals);
        let slack = 3.0 * (robust.stderr * robust.stderr + se * se).sqrt();
        Ok(ShiftRow {
            t,
            budget: declared_budget,
            mean_loss_shifted: m,
            robust_risk: robust.value,
            covered: u8::from(robust.value >= m - slack),
            control,
            seed,
            replicate: rep,
            status: "ok".into(),
        })
    };
    for f in &cfg.experiment.shift_fracs {
        rows.push(eval_at(f * t_max, budget, 0)?);
    }
    // negative control: ½t² = 4 × budget
    rows.push(eval_at(2.0 * t_max, 4.0 * budget, 1)?);
    Ok((rows, delta))
}

pub fn shift_csv(outcome: &ShiftOutcome) -> String {
    csv(
        "t,budget,mean_loss_shifted,robust_risk,covered,control,seed,replicate,status",
        outcome.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                fmt_g9(r.t),
                fmt_g9(r.budget),
                fmt_g9(r.mean_loss_shifted),
                fmt_g9(r.robust_risk),
                r.covered,
                r.control,
                r.seed,
                r.replicate,
                r.status,
            )
        }),
    )
}

pub fn shift_summary_csv(outcome: &ShiftOutcome) -> String {
    csv(
        "delta,in_budget_coverage,control_coverage",
        std::iter::once(format!(
            "{},{},{}",
            fmt_g9(outcome.delta),
            fmt_g9(outcome.in_budget_coverage),
            fmt_g9(outcome.control_coverage),
        )),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::coverage::run_coverage;

    #[test]
    fn zero_shift_reduces_to_coverage() {
        let text = r#"
            [space]
            kind = "ball"
            radius = 1.0
            dims = 1

            [model]
            family = "logistic"

            [wdro]
            rho = 0.2

            [data]
            n = 15
            theta_true = [1.0]

            [opt]
            max_iters = 8

            [experiment]
            replicates = 3
            rho_grid = [0.2]
            rho_n = 0.02
            shift_fracs = [0.0]
            true_risk_samples = 1500
            seed = 21
        "#;
        let cfg = ExperimentConfig::from_str(text).unwrap();
        let sh = run_shift(&cfg, None).unwrap();
        let cov = run_coverage(&cfg, None).unwrap();
        for rep in 0..3u64 {
            let srow = sh
                .rows
                .iter()
                .find(|r| r.replicate == rep && r.control == 0 && r.t == 0.0)
                .unwrap();
            let crow = cov.rows.iter().find(|r| r.replicate == rep).unwrap();
            // same trained model, same reference: identical values
            assert_eq!(srow.robust_risk.to_bits(), crow.robust_risk.to_bits());
            assert_eq!(srow.mean_loss_shifted.to_bits(), crow.true_risk.to_bits());
            assert_eq!(srow.covered, crow.covered);
        }
    }

    #[test]
    fn budget_invariant_holds_per_row() {
        let cfg = ExperimentConfig::from_str(
            r#"
            [space]
            kind = "ball"
            radius = 1.0
            dims = 1

            [model]
            family = "logistic"

            [wdro]
            rho = 0.2

            [data]
            n = 10
            theta_true = [1.0]

            [opt]
            max_iters = 5

            [experiment]
            replicates = 2
            rho_n = 0.02
            true_risk_samples = 500
            seed = 22
        "#,
        )
        .unwrap();
        let out = run_shift(&cfg, None).unwrap();
        for r in &out.rows {
            assert!(0.5 * r.t * r.t <= r.budget + 1e-12);
        }
        assert!(out.rows.iter().any(|r| r.control == 1));
    }

    #[test]
    fn missing_rho_n_is_a_config_error() {
        let cfg = ExperimentConfig::from_str(
            r#"
            [space]
            kind = "ball"
            radius = 1.0
            dims = 1

            [model]
            family = "logistic"

            [experiment]
            seed = 1
        "#,
        )
        .unwrap();
        assert!(matches!(
            run_shift(&cfg, None),
            Err(WdroError::Config(_))
        ));
    }
}

//! Sandwich experiment: true-side robust risks at radii ρ(ρ ∓ ρ_n)
//! bracket the empirical robust risk at ρ². The radius correction ρ̂_n
//! is the smallest grid value making both inequalities hold on at least
//! 95% of replicates; the bracket gap should shrink with n.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::datagen::generate_dataset;
use crate::harness::report::{csv, fmt_g9, sanitize};
use crate::risk::{train_robust, DualSolver};
use crate::rng::{derive_seed, Purpose, REFERENCE_REPLICATE};
use crate::vecmath::median;

#[derive(Debug, Clone)]
pub struct SandwichRow {
    pub n: usize,
    pub replicate: u64,
    pub rho: f64,
    pub rho_n: f64,
    pub risk_emp: f64,
    pub risk_lo: f64,
    pub risk_hi: f64,
    pub holds_lo: u8,
    pub holds_hi: u8,
    pub gap: f64,
    pub seed: u64,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SandwichAgg {
    pub n: usize,
    /// Smallest candidate making both inequalities hold on ≥ 95% of
    /// replicates (NaN when censored).
    pub rho_n_hat: f64,
    pub hold_rate: f64,
    pub gap_median: f64,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SandwichOutcome {
    pub rows: Vec<SandwichRow>,
    pub aggregates: Vec<SandwichAgg>,
}

const HOLD_TARGET: f64 = 0.95;

pub fn run_sandwich(cfg: &ExperimentConfig, replay: Option<u64>) -> Result<SandwichOutcome> {
    let space = cfg.build_space()?;
    let template = cfg.build_model(&space)?;
    let theta0 = template.project_theta(&cfg.theta_init(&space));
    let seed = cfg.experiment.seed;
    let rho = cfg.wdro.rho;
    let (eps, sigma) = cfg.eps_sigma(rho);
    let sigma_solver = if eps > 0.0 { sigma } else { 1.0 };

    let n_grid: Vec<usize> = if cfg.experiment.n_grid.is_empty() {
        vec![cfg.data.n]
    } else {
        cfg.experiment.n_grid.clone()
    };
    // candidate corrections, clamped so the lower radius stays positive
    let deltas: Vec<f64> = cfg
        .experiment
        .rho_n_fracs
        .iter()
        .map(|f| (f * rho).min(0.95 * rho))
        .collect();

    let mut ref_cfg = cfg.clone();
    ref_cfg.data.n = cfg.experiment.ref_risk_samples;
    let reference = generate_dataset(
        &ref_cfg,
        cfg.experiment.ref_risk_samples,
        REFERENCE_REPLICATE,
    )?;

    let reps: Vec<u64> = match replay {
        Some(k) => vec![k],
        None => (0..cfg.experiment.replicates).collect(),
    };
    let mut tasks: Vec<(usize, u64)> = Vec::new();
    for (ni, _) in n_grid.iter().enumerate() {
        for &rep in &reps {
            tasks.push((ni, rep));
        }
    }

    let mut chunks: Vec<((usize, u64), Vec<SandwichRow>)> = tasks
        .par_iter()
        .map(|&(ni, rep)| {
            let n = n_grid[ni];
            let rows = replicate_rows(
                cfg, &space, &template, &theta0, &reference, n, rep, rho, eps, sigma_solver,
                &deltas, seed,
            )
            .unwrap_or_else(|e| {
                deltas
                    .iter()
                    .map(|&d| SandwichRow {
                        n,
                        replicate: rep,
                        rho,
                        rho_n: d,
                        risk_emp: f64::NAN,
                        risk_lo: f64::NAN,
                        risk_hi: f64::NAN,
                        holds_lo: 0,
                        holds_hi: 0,
                        gap: f64::NAN,
                        seed,
                        status: sanitize(&e.to_string()),
                    })
                    .collect()
            });
            ((ni, rep), rows)
        })
        .collect();
    chunks.sort_by_key(|(k, _)| *k);
    let rows: Vec<SandwichRow> = chunks.into_iter().flat_map(|(_, r)| r).collect();

    let mut aggregates = Vec::new();
    for &n in &n_grid {
        let mut found: Option<(f64, f64)> = None;
        for &d in &deltas {
            let sel: Vec<&SandwichRow> = rows
                .iter()
                .filter(|r| r.n == n && r.status == "ok" && (r.rho_n - d).abs() == 0.0)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let holds = sel
                .iter()
                .filter(|r| r.holds_lo == 1 && r.holds_hi == 1)
                .count();
            let rate = holds as f64 / sel.len() as f64;
            if rate >= HOLD_TARGET {
                found = Some((d, rate));
                break;
            }
        }
        match found {
            Some((d, rate)) => {
                let gaps: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == n && r.status == "ok" && (r.rho_n - d).abs() == 0.0)
                    .map(|r| r.gap)
                    .collect();
                aggregates.push(SandwichAgg {
                    n,
                    rho_n_hat: d,
                    hold_rate: rate,
                    gap_median: median(&gaps),
                    status: "ok".into(),
                });
            }
            None => aggregates.push(SandwichAgg {
                n,
                rho_n_hat: f64::NAN,
                hold_rate: f64::NAN,
                gap_median: f64::NAN,
                status: "censored".into(),
            }),
        }
    }
    Ok(SandwichOutcome { rows, aggregates })
}

#[allow(clippy::too_many_arguments)]
fn replicate_rows(
    cfg: &ExperimentConfig,
    space: &crate::geometry::SampleSpace,
    template: &crate::models::LossModel,
    theta0: &[f64],
    reference: &[Vec<f64>],
    n: usize,
    rep: u64,
    rho: f64,
    eps: f64,
    sigma_solver: f64,
    deltas: &[f64],
    seed: u64,
) -> Result<Vec<SandwichRow>> {
    let dataset = generate_dataset(cfg, n, rep)?;
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
    let emp = trained.risk;

    // one reference solver per replicate: λ memos shared across radii
    let mut solver = DualSolver::new(
        &model,
        space,
        reference,
        eps,
        sigma_solver,
        cfg.mc_budget(),
        derive_seed(seed, rep, Purpose::TrueRisk),
    )?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let s_lo = (rho * (rho - d)).max(0.0);
        let s_hi = rho * (rho + d);
        let rho_lo = if eps > 0.0 {
            s_lo.sqrt().max(1e-6 * rho)
        } else {
            s_lo.sqrt()
        };
        let lo = solver.solve(rho_lo)?;
        let hi = solver.solve(s_hi.sqrt())?;
        let slack_lo = 3.0 * (emp.stderr * emp.stderr + lo.stderr * lo.stderr).sqrt();
        let slack_hi = 3.0 * (emp.stderr * emp.stderr + hi.stderr * hi.stderr).sqrt();
        rows.push(SandwichRow {
            n,
            replicate: rep,
            rho,
            rho_n: d,
            risk_emp: emp.value,
            risk_lo: lo.value,
            risk_hi: hi.value,
            holds_lo: u8::from(lo.value <= emp.value + slack_lo),
            holds_hi: u8::from(emp.value <= hi.value + slack_hi),
            gap: hi.value - lo.value,
            seed,
            status: "ok".into(),
        });
    }
    Ok(rows)
}

pub fn sandwich_csv(outcome: &SandwichOutcome) -> String {
    csv(
        "n,replicate,rho,rho_n,risk_emp,risk_lo,risk_hi,holds_lo,holds_hi,gap,seed,status",
        outcome.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.replicate,
                fmt_g9(r.rho),
                fmt_g9(r.rho_n),
                fmt_g9(r.risk_emp),
                fmt_g9(r.risk_lo),
                fmt_g9(r.risk_hi),
                r.holds_lo,
                r.holds_hi,
                fmt_g9(r.gap),
                r.seed,
                r.status,
            )
        }),
    )
}

pub fn sandwich_summary_csv(outcome: &SandwichOutcome) -> String {
    csv(
        "n,rho_n_hat,hold_rate,gap_median,status",
        outcome.aggregates.iter().map(|a| {
            format!(
                "{},{},{},{},{}",
                a.n,
                fmt_g9(a.rho_n_hat),
                fmt_g9(a.hold_rate),
                fmt_g9(a.gap_median),
                a.status,
            )
        }),
    )
}

//! Coverage experiment: how often the empirical robust risk of the
//! trained model upper-bounds its true risk, per radius, across
//! resampled training sets.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::datagen::generate_dataset;
use crate::harness::report::{csv, fmt_g9, sanitize, wilson95};
use crate::risk::{train_robust, true_risk};
use crate::rng::{derive_seed, stream, Purpose, REFERENCE_REPLICATE};

#[derive(Debug, Clone)]
pub struct CoverageRow {
    pub rho: f64,
    pub eps: f64,
    pub sigma: f64,
    pub replicate: u64,
    pub robust_risk: f64,
    pub robust_stderr: f64,
    /// Headline target: the smoothed true risk when ε > 0, the plain
    /// one otherwise.
    pub true_risk: f64,
    pub true_stderr: f64,
    pub covered: u8,
    pub status: String,
    pub seed: u64,
    /// Auxiliary unsmoothed target, recorded only when ε > 0.
    pub true_risk_unsmoothed: Option<f64>,
    pub true_stderr_unsmoothed: Option<f64>,
}

impl CoverageRow {
    fn failed(rho: f64, eps: f64, sigma: f64, replicate: u64, seed: u64, err: String) -> Self {
        Self {
            rho,
            eps,
            sigma,
            replicate,
            robust_risk: f64::NAN,
            robust_stderr: f64::NAN,
            true_risk: f64::NAN,
            true_stderr: f64::NAN,
            covered: 0,
            status: sanitize(&err),
            seed,
            true_risk_unsmoothed: None,
            true_stderr_unsmoothed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoverageAgg {
    pub rho: f64,
    pub eps: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub coverage: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Debug, Clone)]
pub struct CoverageOutcome {
    pub rows: Vec<CoverageRow>,
    pub aggregates: Vec<CoverageAgg>,
}

/// Runs the sweep at the config's data size and replicate count.
pub fn run_coverage(cfg: &ExperimentConfig, replay: Option<u64>) -> Result<CoverageOutcome> {
    run_coverage_core(
        cfg,
        cfg.data.n,
        cfg.experiment.replicates,
        &cfg.experiment.rho_grid,
        replay,
    )
}

/// Shared driver, parameterized so the scaling experiment can sweep `n`.
pub fn run_coverage_core(
    cfg: &ExperimentConfig,
    n: usize,
    replicates: u64,
    rho_grid: &[f64],
    replay: Option<u64>,
) -> Result<CoverageOutcome> {
    let space = cfg.build_space()?;
    let template = cfg.build_model(&space)?;
    let theta0 = template.project_theta(&cfg.theta_init(&space));
    let seed = cfg.experiment.seed;

    // Reference sample for the true risk: drawn once, shared across the
    // sweep so per-ρ comparisons are variance-paired.
    let mut ref_cfg = cfg.clone();
    ref_cfg.data.n = cfg.experiment.true_risk_samples;
    let reference = generate_dataset(&ref_cfg, cfg.experiment.true_risk_samples, REFERENCE_REPLICATE)?;

    let reps: Vec<u64> = match replay {
        Some(k) => vec![k],
        None => (0..replicates).collect(),
    };
    let mut tasks: Vec<(usize, u64)> = Vec::new();
    for (ri, _) in rho_grid.iter().enumerate() {
        for &rep in &reps {
            tasks.push((ri, rep));
        }
    }

    let mut rows: Vec<((usize, u64), CoverageRow)> = tasks
        .par_iter()
        .map(|&(ri, rep)| {
            let rho = rho_grid[ri];
            let (eps, sigma) = cfg.eps_sigma(rho);
            let row = run_one(
                cfg, &space, &template, &theta0, &reference, n, rep, rho, eps, sigma, seed,
            )
            .unwrap_or_else(|e| CoverageRow::failed(rho, eps, sigma, rep, seed, e.to_string()));
            ((ri, rep), row)
        })
        .collect();
    rows.sort_by_key(|(k, _)| *k);
    let rows: Vec<CoverageRow> = rows.into_iter().map(|(_, r)| r).collect();

    let mut aggregates = Vec::with_capacity(rho_grid.len());
    for (ri, &rho) in rho_grid.iter().enumerate() {
        let (eps, sigma) = cfg.eps_sigma(rho);
        let ok: Vec<&CoverageRow> = rows
            .iter()
            .filter(|r| r.status == "ok" && (r.rho - rho_grid[ri]).abs() == 0.0)
            .collect();
        let covered = ok.iter().filter(|r| r.covered == 1).count();
        let (lo, hi) = wilson95(covered, ok.len());
        aggregates.push(CoverageAgg {
            rho,
            eps,
            sigma,
            replicates: ok.len(),
            coverage: if ok.is_empty() {
                f64::NAN
            } else {
                covered as f64 / ok.len() as f64
            },
            wilson_lo: lo,
            wilson_hi: hi,
        });
    }
    Ok(CoverageOutcome { rows, aggregates })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    cfg: &ExperimentConfig,
    space: &crate::geometry::SampleSpace,
    template: &crate::models::LossModel,
    theta0: &[f64],
    reference: &[Vec<f64>],
    n: usize,
    rep: u64,
    rho: f64,
    eps: f64,
    sigma: f64,
    seed: u64,
) -> Result<CoverageRow> {
    let dataset = generate_dataset(cfg, n, rep)?;
    let solver_seed = derive_seed(seed, rep, Purpose::PhiSamples);
    let sigma_solver = if eps > 0.0 { sigma } else { 1.0 };
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
        solver_seed,
    )?;
    let model = template.with_theta(trained.theta.clone())?;

    let smoothed = eps > 0.0;
    let mut srng = stream(seed, rep, Purpose::SmoothedDraw);
    let (tv, tse) = true_risk(&model, space, reference, sigma, smoothed, &mut srng)?;
    let (aux_v, aux_se) = if smoothed {
        let mut prng = stream(seed, rep, Purpose::TrueRisk);
        let (v, se) = true_risk(&model, space, reference, sigma, false, &mut prng)?;
        (Some(v), Some(se))
    } else {
        (None, None)
    };
    let robust = trained.risk;
    let slack = 3.0 * (robust.stderr * robust.stderr + tse * tse).sqrt();
    let covered = u8::from(robust.value >= tv - slack);
    Ok(CoverageRow {
        rho,
        eps,
        sigma,
        replicate: rep,
        robust_risk: robust.value,
        robust_stderr: robust.stderr,
        true_risk: tv,
        true_stderr: tse,
        covered,
        status: "ok".into(),
        seed,
        true_risk_unsmoothed: aux_v,
        true_stderr_unsmoothed: aux_se,
    })
}

/// Per-replicate rows; the auxiliary unsmoothed columns appear only for
/// regularized runs.
pub fn coverage_csv(outcome: &CoverageOutcome, regularized: bool) -> String {
    let mut header = String::from(
        "rho,eps,sigma,replicate,robust_risk,robust_stderr,true_risk,true_stderr,covered,status,seed",
    );
    if regularized {
        header.push_str(",true_risk_unsmoothed,true_stderr_unsmoothed");
    }
    csv(
        &header,
        outcome.rows.iter().map(|r| {
            let mut line = format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt_g9(r.rho),
                fmt_g9(r.eps),
                fmt_g9(r.sigma),
                r.replicate,
                fmt_g9(r.robust_risk),
                fmt_g9(r.robust_stderr),
                fmt_g9(r.true_risk),
                fmt_g9(r.true_stderr),
                r.covered,
                r.status,
                r.seed,
            );
            if regularized {
                line.push_str(&format!(
                    ",{},{}",
                    fmt_g9(r.true_risk_unsmoothed.unwrap_or(f64::NAN)),
                    fmt_g9(r.true_stderr_unsmoothed.unwrap_or(f64::NAN)),
                ));
            }
            line
        }),
    )
}

/// Per-ρ aggregates with Wilson 95% intervals.
pub fn coverage_summary_csv(outcome: &CoverageOutcome) -> String {
    csv(
        "rho,eps,sigma,replicates,coverage,wilson_lo,wilson_hi",
        outcome.aggregates.iter().map(|a| {
            format!(
                "{},{},{},{},{},{},{}",
                fmt_g9(a.rho),
                fmt_g9(a.eps),
                fmt_g9(a.sigma),
                a.replicates,
                fmt_g9(a.coverage),
                fmt_g9(a.wilson_lo),
                fmt_g9(a.wilson_hi),
            )
        }),
    )
}

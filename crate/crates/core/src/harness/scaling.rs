//! Radius scaling: the minimal radius reaching target coverage should
//! shrink roughly like 1/√n as the sample size grows.

use crate::error::{Result, WdroError};
use crate::harness::config::ExperimentConfig;
use crate::harness::coverage::{run_coverage_core, CoverageRow};
use crate::harness::report::{csv, fmt_g9, linear_fit, pav_nondecreasing, percentile};
use crate::rng::{stream, Purpose};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub n: usize,
    pub rho_star: f64,
    pub censored: bool,
}

#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub points_used: usize,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub per_n: Vec<ScalingRow>,
    pub fit: ScalingFit,
    /// Underlying coverage rows, tagged by n, for audit and replay.
    pub coverage_rows: Vec<(usize, CoverageRow)>,
}

/// Reads ρ*(n) off a monotone-smoothed coverage curve.
fn rho_star_from_counts(
    rho_grid: &[f64],
    covered: &[usize],
    totals: &[usize],
    target: f64,
) -> Option<f64> {
    let raw: Vec<f64> = covered
        .iter()
        .zip(totals)
        .map(|(c, t)| if *t == 0 { f64::NAN } else { *c as f64 / *t as f64 })
        .collect();
    if raw.iter().any(|v| v.is_nan()) {
        return None;
    }
    let smooth = pav_nondecreasing(&raw);
    rho_grid
        .iter()
        .zip(&smooth)
        .find(|(_, c)| **c >= target)
        .map(|(r, _)| *r)
}

pub fn run_scaling(cfg: &ExperimentConfig, replay: Option<u64>) -> Result<ScalingOutcome> {
    if cfg.experiment.n_grid.len() < 4 {
        return Err(WdroError::Config(
            "scaling needs experiment.n_grid with at least 4 sizes".into(),
        ));
    }
    let n_max = *cfg.experiment.n_grid.iter().max().unwrap() as f64;
    let n_min = *cfg.experiment.n_grid.iter().min().unwrap() as f64;
    if n_max / n_min < 10.0 {
        return Err(WdroError::Config(
            "scaling needs n_grid spanning at least one decade".into(),
        ));
    }
    if cfg.experiment.rho_grid.is_empty() {
        return Err(WdroError::Config("scaling needs experiment.rho_grid".into()));
    }
    let rho_grid = cfg.experiment.rho_grid.clone();
    let target = cfg.experiment.target_coverage;

    let mut coverage_rows: Vec<(usize, CoverageRow)> = Vec::new();
    let mut per_n = Vec::new();
    for &n in &cfg.experiment.n_grid {
        let out = run_coverage_core(cfg, n, cfg.experiment.replicates, &rho_grid, replay)?;
        let covered: Vec<usize> = rho_grid
            .iter()
            .map(|r| {
                out.rows
                    .iter()
                    .filter(|row| row.status == "ok" && row.rho == *r && row.covered == 1)
                    .count()
            })
            .collect();
        let totals: Vec<usize> = rho_grid
            .iter()
            .map(|r| {
                out.rows
                    .iter()
                    .filter(|row| row.status == "ok" && row.rho == *r)
                    .count()
            })
            .collect();
        let star = rho_star_from_counts(&rho_grid, &covered, &totals, target);
        per_n.push(ScalingRow {
            n,
            rho_star: star.unwrap_or(f64::NAN),
            censored: star.is_none(),
        });
        coverage_rows.extend(out.rows.into_iter().map(|r| (n, r)));
    }

    let fit = fit_with_bootstrap(cfg, &per_n, &coverage_rows, &rho_grid, target);
    Ok(ScalingOutcome {
        per_n,
        fit,
        coverage_rows,
    })
}

fn fit_with_bootstrap(
    cfg: &ExperimentConfig,
    per_n: &[ScalingRow],
    coverage_rows: &[(usize, CoverageRow)],
    rho_grid: &[f64],
    target: f64,
) -> ScalingFit {
    let pts: Vec<(f64, f64)> = per_n
        .iter()
        .filter(|r| !r.censored)
        .map(|r| ((r.n as f64).ln(), r.rho_star.ln()))
        .collect();
    if pts.len() < 2 {
        return ScalingFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            slope_lo: f64::NAN,
            slope_hi: f64::NAN,
            points_used: pts.len(),
            status: "unavailable".into(),
        };
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, intercept) = linear_fit(&xs, &ys).expect("two or more points");

    // bootstrap over replicates within each n
    let mut slopes = Vec::new();
    let mut rng = stream(cfg.experiment.seed, 0, Purpose::Bootstrap);
    for _ in 0..cfg.experiment.bootstrap {
        let mut bx = Vec::new();
        let mut by = Vec::new();
        for row in per_n {
            if row.censored {
                continue;
            }
            let reps: Vec<&CoverageRow> = coverage_rows
                .iter()
                .filter(|(n, r)| *n == row.n && r.status == "ok")
                .map(|(_, r)| r)
                .collect();
            // resample replicate indices with replacement
            let ids: Vec<u64> = {
                let mut seen: Vec<u64> = reps.iter().map(|r| r.replicate).collect();
                seen.sort_unstable();
                seen.dedup();
                seen
            };
            if ids.is_empty() {
                continue;
            }
            let picked: Vec<u64> = (0..ids.len())
                .map(|_| ids[rng.gen_range(0..ids.len())])
                .collect();
            let covered: Vec<usize> = rho_grid
                .iter()
                .map(|r| {
                    picked
                        .iter()
                        .map(|id| {
                            reps.iter()
                                .filter(|row| row.replicate == *id && row.rho == *r)
                                .map(|row| row.covered as usize)
                                .sum::<usize>()
                        })
                        .sum()
                })
                .collect();
            let totals: Vec<usize> = rho_grid
                .iter()
                .map(|r| {
                    picked
                        .iter()
                        .map(|id| {
                            reps.iter()
                                .filter(|row| row.replicate == *id && row.rho == *r)
                                .count()
                        })
                        .sum()
                })
                .collect();
            if let Some(star) = rho_star_from_counts(rho_grid, &covered, &totals, target) {
                bx.push((row.n as f64).ln());
                by.push(star.ln());
            }
        }
        if let Some((s, _)) = linear_fit(&bx, &by) {
            slopes.push(s);
        }
    }
    let (lo, hi) = if slopes.len() >= 20 {
        slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    } else {
        (f64::NAN, f64::NAN)
    };
    ScalingFit {
        slope,
        intercept,
        slope_lo: lo,
        slope_hi: hi,
        points_used: pts.len(),
        status: "ok".into(),
    }
}

pub fn scaling_csv(outcome: &ScalingOutcome) -> String {
    csv(
        "n,rho_star,censored",
        outcome.per_n.iter().map(|r| {
            format!("{},{},{}", r.n, fmt_g9(r.rho_star), u8::from(r.censored))
        }),
    )
}

pub fn scaling_fit_csv(outcome: &ScalingOutcome) -> String {
    let f = &outcome.fit;
    csv(
        "slope,intercept,slope_lo,slope_hi,points_used,status",
        std::iter::once(format!(
            "{},{},{},{},{},{}",
            fmt_g9(f.slope),
            fmt_g9(f.intercept),
            fmt_g9(f.slope_lo),
            fmt_g9(f.slope_hi),
            f.points_used,
            f.status,
        )),
    )
}

/// Underlying coverage rows with their n, for audit.
pub fn scaling_rows_csv(outcome: &ScalingOutcome) -> String {
    csv(
        "n,rho,eps,sigma,replicate,robust_risk,robust_stderr,true_risk,true_stderr,covered,status,seed",
        outcome.coverage_rows.iter().map(|(n, r)| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                n,
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
            )
        }),
    )
}

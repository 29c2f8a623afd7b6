//! Command-line driver: risk evaluation, robust training, critical
//! radius diagnostics, the oracle comparison battery, and the four
//! experiment sweeps with CSV outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wdro::dual::{phi_with_samples, DualParams};
use wdro::harness::report::fmt_g9;
use wdro::harness::{
    coverage_csv, coverage_summary_csv, generate_dataset, run_coverage, run_sandwich,
    run_scaling, run_shift, sandwich_csv, sandwich_summary_csv, scaling_csv, scaling_fit_csv,
    scaling_rows_csv, shift_csv, shift_summary_csv, ExperimentConfig,
};
use wdro::models::LossModel;
use wdro::oracle::{grid_dual_exact, phi_quadrature_refined, reg_wass_sq, w2_sq_1d_discrete, Grid};
use wdro::radius::{critical_radius_sq, degenerate_check, Regime};
use wdro::risk::{lambda_init, robust_risk, train_robust};
use wdro::rng::{derive_seed, stream, substream, Purpose};
use wdro::{Result, SampleSpace, WdroError};

#[derive(Parser)]
#[command(name = "wdro", about = "Wasserstein DRO evaluation, training, and certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (outputs do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    /// Re-run a single replicate of a sweep.
    #[arg(long)]
    replay: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Coverage probability sweep over the radius grid.
    Coverage(Common),
    /// Two-sided bracket of the empirical robust risk.
    Sandwich(Common),
    /// Minimal covering radius against sample size, with a log-log fit.
    Scaling(Common),
    /// Robustness to translated test distributions.
    Shift(Common),
    /// Evaluate the robust risk of the configured model on one dataset.
    EvalRisk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
        /// ε = eps0 · ρ.
        #[arg(long, default_value_t = 0.0)]
        eps0: f64,
        /// σ = sigma0 · ρ.
        #[arg(long, default_value_t = 0.5)]
        sigma0: f64,
    },
    /// Robust training; prints the risk row plus the parameter vector.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0.0)]
        eps0: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma0: f64,
    },
    /// Critical-radius estimate over a parameter grid.
    CriticalRadius(Common),
    /// Dual-vs-oracle comparison battery.
    OracleCheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(WdroError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(t) = common.threads {
        // ignore the error if a pool was already installed
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(cfg)
}

fn write(out_dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(name), text)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Coverage(c) => {
            let cfg = load(&c)?;
            let out = run_coverage(&cfg, c.replay)?;
            let reg = cfg.wdro.eps0 > 0.0;
            write(&c.out, "coverage.csv", &coverage_csv(&out, reg))?;
            write(&c.out, "coverage_summary.csv", &coverage_summary_csv(&out))?;
            println!(
                "coverage: {} rows, {} aggregates -> {}",
                out.rows.len(),
                out.aggregates.len(),
                c.out.display()
            );
            Ok(())
        }
        Command::Sandwich(c) => {
            let cfg = load(&c)?;
            let out = run_sandwich(&cfg, c.replay)?;
            write(&c.out, "sandwich.csv", &sandwich_csv(&out))?;
            write(&c.out, "sandwich_summary.csv", &sandwich_summary_csv(&out))?;
            println!(
                "sandwich: {} rows, {} sizes -> {}",
                out.rows.len(),
                out.aggregates.len(),
                c.out.display()
            );
            Ok(())
        }
        Command::Scaling(c) => {
            let cfg = load(&c)?;
            let out = run_scaling(&cfg, c.replay)?;
            write(&c.out, "scaling.csv", &scaling_csv(&out))?;
            write(&c.out, "scaling_fit.csv", &scaling_fit_csv(&out))?;
            write(&c.out, "scaling_rows.csv", &scaling_rows_csv(&out))?;
            println!(
                "scaling: slope {} ({}) -> {}",
                fmt_g9(out.fit.slope),
                out.fit.status,
                c.out.display()
            );
            Ok(())
        }
        Command::Shift(c) => {
            let cfg = load(&c)?;
            let out = run_shift(&cfg, c.replay)?;
            write(&c.out, "shift.csv", &shift_csv(&out))?;
            write(&c.out, "shift_summary.csv", &shift_summary_csv(&out))?;
            println!(
                "shift: in-budget coverage {}, control {} -> {}",
                fmt_g9(out.in_budget_coverage),
                fmt_g9(out.control_coverage),
                c.out.display()
            );
            Ok(())
        }
        Command::EvalRisk {
            common,
            rho,
            eps0,
            sigma0,
        } => {
            let cfg = load(&common)?;
            let (space, model, dataset) = eval_inputs(&cfg)?;
            let (eps, sigma) = (eps0 * rho, sigma0 * rho);
            let sigma_solver = if eps > 0.0 { sigma } else { 1.0 };
            let r = robust_risk(
                &model,
                &space,
                &dataset,
                rho,
                eps,
                sigma_solver,
                cfg.mc_budget(),
                derive_seed(cfg.experiment.seed, 0, Purpose::PhiSamples),
            )?;
            println!("rho,eps,sigma,value,lambda_star,stderr,degenerate");
            println!(
                "{},{},{},{},{},{},{}",
                fmt_g9(rho),
                fmt_g9(eps),
                fmt_g9(sigma),
                fmt_g9(r.value),
                fmt_g9(r.lambda_star),
                fmt_g9(r.stderr),
                u8::from(r.degenerate)
            );
            Ok(())
        }
        Command::Train {
            common,
            rho,
            eps0,
            sigma0,
        } => {
            let cfg = load(&common)?;
            let (space, model, dataset) = eval_inputs(&cfg)?;
            let (eps, sigma) = (eps0 * rho, sigma0 * rho);
            let sigma_solver = if eps > 0.0 { sigma } else { 1.0 };
            let tr = train_robust(
                &model,
                &space,
                &dataset,
                rho,
                eps,
                sigma_solver,
                cfg.mc_budget(),
                cfg.opt_budget(),
                cfg.theta_init(&space),
                derive_seed(cfg.experiment.seed, 0, Purpose::PhiSamples),
            )?;
            let p = tr.theta.len();
            let theta_header: Vec<String> = (0..p).map(|i| format!("theta{i}")).collect();
            println!(
                "rho,eps,sigma,value,lambda_star,stderr,degenerate,converged,{}",
                theta_header.join(",")
            );
            let theta_cells: Vec<String> = tr.theta.iter().map(|v| fmt_g9(*v)).collect();
            println!(
                "{},{},{},{},{},{},{},{},{}",
                fmt_g9(rho),
                fmt_g9(eps),
                fmt_g9(sigma),
                fmt_g9(tr.risk.value),
                fmt_g9(tr.risk.lambda_star),
                fmt_g9(tr.risk.stderr),
                u8::from(tr.risk.degenerate),
                u8::from(tr.converged),
                theta_cells.join(",")
            );
            Ok(())
        }
        Command::CriticalRadius(c) => {
            let cfg = load(&c)?;
            let space = cfg.build_space()?;
            let models = theta_grid_models(&cfg, &space)?;
            let mut pcfg = cfg.clone();
            pcfg.data.n = cfg.radius.n_samples;
            let samples = generate_dataset(&pcfg, cfg.radius.n_samples, 0)?;
            let rho = cfg.wdro.rho;
            let (eps, sigma) = cfg.eps_sigma(rho);
            let rep = critical_radius_sq(
                &space,
                &models,
                &samples,
                eps,
                sigma,
                cfg.radius.mc_samples,
                cfg.experiment.seed,
            )?;
            let p = rep.argmin_theta.len();
            let theta_header: Vec<String> = (0..p).map(|i| format!("theta_star{i}")).collect();
            println!("regime,eps,sigma,rho_c_sq,stderr,{}", theta_header.join(","));
            let (regime, pe, ps) = match rep.regime {
                Regime::Standard => ("standard", 0.0, 0.0),
                Regime::Regularized { eps, sigma } => ("regularized", eps, sigma),
            };
            let cells: Vec<String> = rep.argmin_theta.iter().map(|v| fmt_g9(*v)).collect();
            println!(
                "{},{},{},{},{},{}",
                regime,
                fmt_g9(pe),
                fmt_g9(ps),
                fmt_g9(rep.rho_c_sq),
                fmt_g9(rep.stderr),
                cells.join(",")
            );
            Ok(())
        }
        Command::OracleCheck(c) => {
            let cfg = load(&c)?;
            oracle_check(&cfg)
        }
    }
}

/// Space, model at the configured parameter, and replicate-0 dataset.
fn eval_inputs(cfg: &ExperimentConfig) -> Result<(SampleSpace, LossModel, Vec<Vec<f64>>)> {
    let space = cfg.build_space()?;
    let model = cfg.build_model(&space)?;
    let dataset = generate_dataset(cfg, cfg.data.n, 0)?;
    Ok((space, model, dataset))
}

/// Direction × radius grid over the parameter annulus.
fn theta_grid_models(cfg: &ExperimentConfig, space: &SampleSpace) -> Result<Vec<LossModel>> {
    let template = cfg.build_model(space)?;
    let p = template.theta().len();
    let radii = cfg.radius.radii.clone().unwrap_or_else(|| {
        vec![
            cfg.model.theta_lo,
            0.5 * (cfg.model.theta_lo + cfg.model.theta_hi),
            cfg.model.theta_hi,
        ]
    });
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if p == 1 {
        dirs.push(vec![1.0]);
        dirs.push(vec![-1.0]);
    } else {
        // axis directions plus fixed-stream random ones
        for i in 0..p {
            let mut e = vec![0.0; p];
            e[i] = 1.0;
            dirs.push(e.clone());
            e[i] = -1.0;
            dirs.push(e);
        }
        let mut rng = stream(cfg.experiment.seed, 0, Purpose::CriticalRadius);
        while dirs.len() < cfg.radius.n_directions.max(2 * p) {
            let v: Vec<f64> = (0..p)
                .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
                .collect();
            let n = wdro::vecmath::norm(&v);
            if n > 1e-9 {
                dirs.push(v.iter().map(|x| x / n).collect());
            }
        }
    }
    let mut models = Vec::new();
    for d in &dirs {
        for r in &radii {
            models.push(template.with_theta(d.iter().map(|x| x * r).collect())?);
        }
    }
    Ok(models)
}

/// Fixed dual-vs-oracle battery; prints one CSV row per check.
fn oracle_check(cfg: &ExperimentConfig) -> Result<()> {
    use rand::Rng;
    let seed = cfg.experiment.seed;
    println!("check_name,instance,reference,estimate,tolerance,pass");
    let mut fails = 0usize;
    let mut emit = |name: &str, inst: usize, reference: f64, estimate: f64, tol: f64| {
        let pass = (reference - estimate).abs() <= tol;
        if !pass {
            fails += 1;
        }
        println!(
            "{},{},{},{},{},{}",
            name,
            inst,
            fmt_g9(reference),
            fmt_g9(estimate),
            fmt_g9(tol),
            u8::from(pass)
        );
    };

    let space = SampleSpace::ball(vec![0.0], 1.0)?;
    let bounds = wdro::models::ThetaBounds::Annulus { lo: 0.25, hi: 4.0 };

    // 1. robust risk vs exact grid dual, 1-D logistic
    for inst in 0..5usize {
        let mut rng = substream(seed, inst as u64, Purpose::Battery, 1);
        let theta = rng.gen_range(0.4..2.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let model = LossModel::logistic(vec![theta], bounds.clone())?;
        let n = rng.gen_range(3..12);
        let data: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.85..0.85)]).collect();
        let rho = rng.gen_range(0.05..0.4);
        let r = robust_risk(
            &model,
            &space,
            &data,
            rho,
            0.0,
            1.0,
            cfg.mc_budget(),
            derive_seed(seed, inst as u64, Purpose::Battery),
        )?;
        let grid = Grid::regular_1d(&space, 2001)?.including(&data);
        let o = grid_dual_exact(&model, &data, rho, &grid)?;
        emit("grid_dual_exact", inst, o, r.value, 1e-3);
    }

    // 2. Monte Carlo phi vs quadrature across λ
    for inst in 0..5usize {
        let mut rng = substream(seed, inst as u64, Purpose::Battery, 2);
        let theta = rng.gen_range(0.4..2.0);
        let model = LossModel::logistic(vec![theta], bounds.clone())?;
        let xi = vec![rng.gen_range(-0.7..0.7)];
        let eps = rng.gen_range(0.05..0.4);
        let sigma = rng.gen_range(0.15..0.4);
        for (k, lambda) in [0.1, 1.0, 10.0].into_iter().enumerate() {
            let p = DualParams::new(lambda, eps, sigma)?;
            let mut srng = substream(seed, inst as u64, Purpose::PhiSamples, k as u64);
            let samples = space.sample_reference(&xi, sigma, 10_000, &mut srng)?;
            let e = phi_with_samples(&model, &xi, p, &samples, cfg.mc.ess_floor)?;
            let q = phi_quadrature_refined(&model, &space, &xi, p, 256, 1e-8)?;
            emit(
                "phi_mc_vs_quadrature",
                inst * 3 + k,
                q,
                e.value,
                3.0 * e.stderr + 1e-6,
            );
        }
    }

    // 3. closed-form λ initializer on an algebra instance
    {
        let model = LossModel::linear_regression(vec![1.0], bounds.clone())?;
        let data = vec![vec![0.0, -(2.0f64).sqrt()]];
        let l0 = lambda_init(&model, &data, 1.0, 0.0, 1.0)?;
        emit("lambda_init_algebra", 0, 2f64.sqrt(), l0, 1e-12);
    }

    // 4. degeneracy identity
    {
        let model = LossModel::logistic(vec![1.3], bounds.clone())?;
        let data = vec![vec![-0.5], vec![0.2]];
        let set = model.argmax_set(&space)?;
        let mean_cost = data
            .iter()
            .map(|x| 0.5 * model.dist_sq_to_argmax(x, &set))
            .sum::<f64>()
            / data.len() as f64;
        let rep = degenerate_check(
            &model,
            &space,
            &data,
            (mean_cost + 0.01).sqrt(),
            1e-6,
            cfg.mc_budget(),
            derive_seed(seed, 9, Purpose::Battery),
        )?;
        emit("degeneracy_identity", 0, rep.max_f, rep.risk, 1e-3);
    }

    // 5. regularized transport distance vs the sorted 1-D coupling
    {
        let grid_space = SampleSpace::cube(vec![-1.0], vec![1.0])?;
        let grid = Grid::regular_1d(&grid_space, 41)?;
        let xs: Vec<f64> = grid.points.iter().map(|p| p[0]).collect();
        let m = xs.len();
        let mut pw = vec![0.0; m];
        let mut qw = vec![0.0; m];
        for i in 0..m {
            pw[i] = (-(xs[i] + 0.4) * (xs[i] + 0.4) / 0.05).exp();
            qw[i] = (-(xs[i] - 0.4) * (xs[i] - 0.4) / 0.05).exp();
        }
        let (sp, sq): (f64, f64) = (pw.iter().sum(), qw.iter().sum());
        pw.iter_mut().for_each(|v| *v /= sp);
        qw.iter_mut().for_each(|v| *v /= sq);
        let exact = w2_sq_1d_discrete(&xs, &pw, &xs, &qw)?;
        let r = reg_wass_sq(&grid, &pw, &qw, 0.001, 0.3)?;
        emit("reg_wass_delta_limit", 0, exact, r.value, 0.05 * exact);
    }

    if fails == 0 {
        eprintln!("oracle-check: all checks passed");
    } else {
        eprintln!("oracle-check: {fails} check(s) failed");
    }
    Ok(())
}

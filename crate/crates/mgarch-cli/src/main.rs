//! Command-line toolkit for matrix GARCH modeling: simulation, estimation,
//! diagnostic testing, factor fits, forecast evaluation, portfolio
//! backtests and Monte Carlo studies. Outputs are machine-readable
//! (CSV/JSON) plus a human summary on stdout; identical configuration and
//! seed produce byte-identical result files.

mod io;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mgarch::experiments::{
    run_estimation_study, run_power_study, EstimationStudyConfig, PowerCase, PowerStudyConfig,
};
use mgarch::{
    fit, forecast_comparison, portmanteau_menu, rolling_backtest, simulate, BacktestEngine,
    BacktestOptions, BaselineModel, DmTest, FitOptions, InnovationLaw, MatrixPanel,
};

use io::{load_panel, read_json, save_panel, structure_from_str, write_json, FitDto, ThetaDto};

#[derive(Parser)]
#[command(name = "mgarch", version, about = "Matrix GARCH modeling toolkit")]
struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for replication studies (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from the model and write it as long CSV.
    Simulate(SimulateArgs),
    /// Quasi maximum likelihood fit of a panel.
    Fit(FitArgs),
    /// Portmanteau adequacy tests of a fitted model.
    Diagnose(DiagnoseArgs),
    /// Out-of-sample volatility-forecast comparison against baselines.
    ForecastEval(ForecastEvalArgs),
    /// Factor model fit: loadings, factors, factor GARCH.
    FactorFit(FactorFitArgs),
    /// Rolling minimum-variance portfolio backtest.
    Backtest(BacktestArgs),
    /// Monte Carlo studies: estimator recovery or test size/power.
    McStudy(McStudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Panel length after burn-in.
    #[arg(long)]
    t: usize,
    /// Burn-in discarded from the start.
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    /// Innovation law: `normal` or `t:NU`.
    #[arg(long, default_value = "normal")]
    law: String,
    /// RNG seed (simulation is deterministic given the seed).
    #[arg(long)]
    seed: u64,
    /// Parameter bundle as JSON (see `fit` output for the schema).
    #[arg(long, conflicts_with = "design")]
    params: Option<PathBuf>,
    /// Built-in design: `benchmark`, `power-arch-D` or `power-garch-D`.
    #[arg(long, conflicts_with = "params")]
    design: Option<String>,
    /// Output CSV file name.
    #[arg(long, default_value = "panel.csv")]
    out: String,
}

#[derive(Args)]
struct FitArgs {
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
    /// Demean each entry series before fitting.
    #[arg(long)]
    demean: bool,
    /// Coefficient structure: `diagonal` or `full`.
    #[arg(long, default_value = "diagonal")]
    structure: String,
    /// Fit the order-(2,2) recursions.
    #[arg(long)]
    order2: bool,
    /// Optimizer starts.
    #[arg(long, default_value_t = 5)]
    multistarts: usize,
    /// Iteration cap per start.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Seed for multistart perturbations.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Disable the stationarity box.
    #[arg(long)]
    no_stationarity: bool,
    /// Output JSON file name.
    #[arg(long, default_value = "fit.json")]
    out: String,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Input panel CSV (the one the model was fitted on).
    #[arg(long)]
    input: PathBuf,
    /// Fit JSON produced by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Demean each entry series (match the fit).
    #[arg(long)]
    demean: bool,
    /// Comma-separated lag menu.
    #[arg(long, default_value = "2,4,6,8", value_delimiter = ',')]
    lags: Vec<usize>,
    /// Output CSV file name.
    #[arg(long, default_value = "diagnostics.csv")]
    out: String,
}

#[derive(Args)]
struct ForecastEvalArgs {
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
    /// Training-segment length (test = remainder).
    #[arg(long)]
    t_train: usize,
    /// Demean each entry series first.
    #[arg(long)]
    demean: bool,
    /// Comma-separated baselines: `univariate`, `bekk-col`, `bekk-row`,
    /// `bekk-full`, `riskmetrics`, `sample`.
    #[arg(long, default_value = "univariate,bekk-col,bekk-row,bekk-full,riskmetrics", value_delimiter = ',')]
    models: Vec<String>,
    /// RiskMetrics smoothing parameter.
    #[arg(long, default_value_t = 0.94)]
    lambda: f64,
    /// Structure of the matrix GARCH reference fit.
    #[arg(long, default_value = "diagonal")]
    structure: String,
    /// Seed for the reference fit's multistarts.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV file name.
    #[arg(long, default_value = "losses.csv")]
    out: String,
}

#[derive(Args)]
struct FactorFitArgs {
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
    /// Demean each entry series first.
    #[arg(long)]
    demean: bool,
    /// Row factor count (omit to select by the eigenvalue-ratio method).
    #[arg(long)]
    k1: Option<usize>,
    /// Column factor count.
    #[arg(long)]
    k2: Option<usize>,
    /// Candidate bound for eigenvalue-ratio selection.
    #[arg(long, default_value_t = 5)]
    k_max: usize,
    /// Structure of the factor GARCH fit.
    #[arg(long, default_value = "diagonal")]
    structure: String,
    /// Seed for the factor GARCH multistarts.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Prefix of the output files.
    #[arg(long, default_value = "factor")]
    out_prefix: String,
}

#[derive(Args)]
struct BacktestArgs {
    /// Input panel CSV (percentage returns).
    #[arg(long)]
    input: PathBuf,
    /// Demean each entry series first.
    #[arg(long)]
    demean: bool,
    /// Engine: `mf-garch`, `matrix-garch`, `riskmetrics`, `sample`,
    /// `equal-weights`.
    #[arg(long)]
    engine: String,
    /// Training-window length.
    #[arg(long)]
    t_train: usize,
    /// Number of test time points (the last ones).
    #[arg(long)]
    t_test: usize,
    /// Long-only weights.
    #[arg(long)]
    constrained: bool,
    /// Annualization factor (252 daily, 52 weekly).
    #[arg(long, default_value_t = 252.0)]
    ppy: f64,
    /// Refit cadence in test steps.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
    /// Row factor count for `mf-garch` (omit for eigenvalue-ratio).
    #[arg(long)]
    k1: Option<usize>,
    /// Column factor count for `mf-garch`.
    #[arg(long)]
    k2: Option<usize>,
    /// RiskMetrics smoothing parameter.
    #[arg(long, default_value_t = 0.94)]
    lambda: f64,
    /// Seed for engine fits.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Prefix of the output files.
    #[arg(long, default_value = "backtest")]
    out_prefix: String,
}

#[derive(Args)]
struct McStudyArgs {
    /// Study kind: `estimation` or `power`.
    #[arg(long)]
    study: String,
    /// Sample size per replication.
    #[arg(long)]
    t: usize,
    /// Number of replications.
    #[arg(long)]
    reps: usize,
    /// Base seed (replication r uses seed + r).
    #[arg(long)]
    seed: u64,
    /// Innovation law for estimation studies: `normal` or `t:NU`.
    #[arg(long, default_value = "normal")]
    law: String,
    /// Power-study case: `arch` or `garch`.
    #[arg(long, default_value = "arch")]
    case: String,
    /// Power-study alternative sizes d (delta = 0.038 d).
    #[arg(long, default_value = "0", value_delimiter = ',')]
    d_grid: Vec<u32>,
    /// Lag menu for the power study.
    #[arg(long, default_value = "2,4,6,8", value_delimiter = ',')]
    lags: Vec<usize>,
    /// Nominal level for the power study.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Prefix of the output files.
    #[arg(long, default_value = "mc")]
    out_prefix: String,
}

fn parse_law(s: &str) -> Result<InnovationLaw> {
    if s == "normal" {
        return Ok(InnovationLaw::MatrixNormal);
    }
    if let Some(dof) = s.strip_prefix("t:") {
        let dof: f64 = dof.parse().map_err(|_| anyhow!("invalid degrees of freedom in `{s}`"))?;
        return Ok(InnovationLaw::StandardizedMatrixT { dof });
    }
    bail!("unknown innovation law `{s}` (expected `normal` or `t:NU`)")
}

fn parse_design(s: &str) -> Result<mgarch::Theta> {
    if s == "benchmark" {
        return Ok(mgarch::experiments::estimation_design());
    }
    for (prefix, case) in [("power-arch-", PowerCase::Arch), ("power-garch-", PowerCase::Garch)] {
        if let Some(d) = s.strip_prefix(prefix) {
            let d: u32 = d.parse().map_err(|_| anyhow!("invalid design index in `{s}`"))?;
            return Ok(mgarch::experiments::power_design(case, d));
        }
    }
    bail!("unknown design `{s}` (expected `benchmark`, `power-arch-D` or `power-garch-D`)")
}

fn parse_baseline(s: &str, lambda: f64) -> Result<BaselineModel> {
    Ok(match s {
        "univariate" => BaselineModel::UnivariateGarch,
        "bekk-col" => BaselineModel::DiagBekkColumn,
        "bekk-row" => BaselineModel::DiagBekkRow,
        "bekk-full" => BaselineModel::DiagBekkFull,
        "riskmetrics" => BaselineModel::RiskMetrics { lambda },
        "sample" => BaselineModel::SampleCovariance,
        other => bail!("unknown baseline `{other}`"),
    })
}

fn load_input(path: &Path, demean: bool) -> Result<MatrixPanel> {
    let panel = load_panel(path)?;
    Ok(if demean { panel.demean() } else { panel })
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn dm_fields(dm: &Option<DmTest>) -> (String, String, String) {
    match dm {
        Some(DmTest::Statistic { stat, p_value }) => {
            let stars = if *stat > 0.0 {
                if *p_value < 0.01 {
                    "***"
                } else if *p_value < 0.05 {
                    "**"
                } else if *p_value < 0.1 {
                    "*"
                } else {
                    ""
                }
            } else {
                ""
            };
            (format!("{stat}"), format!("{p_value}"), stars.to_string())
        }
        Some(DmTest::Degenerate) => ("degenerate".into(), "".into(), "".into()),
        None => ("".into(), "".into(), "".into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("cannot create output directory {}", cli.out_dir.display()))?;
    if let Some(threads) = cli.threads {
        rayon_pool(threads)?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let law = parse_law(&args.law)?;
            let theta = match (&args.params, &args.design) {
                (Some(path), None) => read_json::<ThetaDto>(path)?.into_theta()?,
                (None, Some(design)) => parse_design(design)?,
                (None, None) => bail!("provide --params or --design"),
                _ => unreachable!("clap conflicts"),
            };
            let panel = simulate(&theta, args.t, args.burn_in, &law, args.seed)?;
            let path = out_path(&cli.out_dir, &args.out);
            save_panel(&panel, &path)?;
            let (m, n) = panel.dims();
            println!("simulated {m}x{n} panel, T={}, law={}, seed={} -> {}", panel.len(), args.law, args.seed, path.display());
        }
        Command::Fit(args) => {
            let panel = load_input(&args.input, args.demean)?;
            let options = FitOptions {
                structure: structure_from_str(&args.structure)?,
                second_order: args.order2,
                multistarts: args.multistarts,
                max_iter: args.max_iter,
                tol: args.tol,
                seed: args.seed,
                enforce_stationarity: !args.no_stationarity,
                ..FitOptions::default()
            };
            let res = fit(&panel, &options)?;
            let dto = FitDto::from_fit(&res, &panel)?;
            let path = out_path(&cli.out_dir, &args.out);
            write_json(&dto, &path)?;
            println!(
                "fit: T={}, p={}, -loglik={:.6}, converged={}, iterations={}, best of {} starts{} -> {}",
                panel.len(),
                dto.estimate.len(),
                res.neg_loglik,
                res.converged,
                res.iterations,
                res.multistart_best_of,
                if res.boundary { " [boundary]" } else { "" },
                path.display()
            );
            println!("{:<10} {:>12} {:>12}", "parameter", "estimate", "std.error");
            for ((name, est), se) in dto.param_names.iter().zip(&dto.estimate).zip(&dto.std_errors) {
                println!("{name:<10} {est:>12.4} {se:>12.4}");
            }
        }
        Command::Diagnose(args) => {
            let panel = load_input(&args.input, args.demean)?;
            let fit_dto: FitDto = read_json(&args.fit)?;
            let fitres = fit_dto.into_fit()?;
            if args.lags.is_empty() {
                bail!("empty lag menu");
            }
            let reports = portmanteau_menu(&panel, &fitres, &args.lags)?;
            let path = out_path(&cli.out_dir, &args.out);
            let mut writer = csv::Writer::from_path(&path)?;
            writer.write_record(["lag", "q_stat", "p_value"])?;
            println!("{:<6} {:>12} {:>10}", "lag", "Q", "p-value");
            for rep in &reports {
                writer.write_record([
                    rep.lags.to_string(),
                    format!("{}", rep.q_stat),
                    format!("{}", rep.p_value),
                ])?;
                println!("{:<6} {:>12.4} {:>10.4}", rep.lags, rep.q_stat, rep.p_value);
            }
            writer.flush()?;
            println!("-> {}", path.display());
        }
        Command::ForecastEval(args) => {
            let panel = load_input(&args.input, args.demean)?;
            let baselines: Vec<BaselineModel> = args
                .models
                .iter()
                .map(|m| parse_baseline(m, args.lambda))
                .collect::<Result<_>>()?;
            let options = FitOptions {
                structure: structure_from_str(&args.structure)?,
                multistarts: 1,
                seed: args.seed,
                compute_sandwich: false,
                ..FitOptions::default()
            };
            let cmp = forecast_comparison(&panel, args.t_train, &baselines, &options)?;
            let path = out_path(&cli.out_dir, &args.out);
            let mut writer = csv::Writer::from_path(&path)?;
            writer.write_record([
                "model", "aggregation", "mse", "mae", "qlike", "dm_mse_stat", "dm_mse_p", "dm_mse_stars",
                "dm_mae_stat", "dm_mae_p", "dm_mae_stars", "dm_qlike_stat", "dm_qlike_p", "dm_qlike_stars",
            ])?;
            println!(
                "{:<18} {:>14} {:>12} {:>10}  (entry sums; stars: matrix GARCH significantly better)",
                "model", "MSE", "MAE", "QLIKE"
            );
            for row in &cmp.rows {
                let (s1, p1, st1) = dm_fields(&row.dm_mse);
                let (s2, p2, st2) = dm_fields(&row.dm_mae);
                let (s3, p3, st3) = dm_fields(&row.dm_qlike);
                for (agg, lv) in [("mean", &row.losses.mean), ("sum", &row.losses.sum)] {
                    writer.write_record([
                        row.model.clone(),
                        agg.to_string(),
                        format!("{}", lv.mse),
                        format!("{}", lv.mae),
                        lv.qlike.map(|q| format!("{q}")).unwrap_or_default(),
                        s1.clone(), p1.clone(), st1.clone(),
                        s2.clone(), p2.clone(), st2.clone(),
                        s3.clone(), p3.clone(), st3.clone(),
                    ])?;
                }
                let q = row.losses.sum.qlike.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undef".into());
                println!(
                    "{:<18} {:>14.4}{} {:>12.4}{} {:>10}{}",
                    row.model, row.losses.sum.mse, st1, row.losses.sum.mae, st2, q, st3
                );
            }
            writer.flush()?;
            println!("-> {}", path.display());
        }
        Command::FactorFit(args) => {
            let panel = load_input(&args.input, args.demean)?;
            let (m, n) = panel.dims();
            let (k1, k2, selected) = match (args.k1, args.k2) {
                (Some(a), Some(b)) => (a, b, false),
                (None, None) => {
                    let k_max = args.k_max.min(m.min(n).saturating_sub(1)).max(1);
                    let (a, b) = mgarch::eigenvalue_ratio(&panel, k_max)?;
                    (a, b, true)
                }
                _ => bail!("provide both --k1 and --k2, or neither"),
            };
            let options = FitOptions {
                structure: structure_from_str(&args.structure)?,
                multistarts: 1,
                seed: args.seed,
                ..FitOptions::default()
            };
            let ff = mgarch::fit_factor_garch(&panel, k1, k2, &options)?;
            let prefix = &args.out_prefix;
            let loadings_path = out_path(&cli.out_dir, &format!("{prefix}-loadings.csv"));
            let mut writer = csv::Writer::from_path(&loadings_path)?;
            writer.write_record(["side", "index", "factor", "value"])?;
            for j in 0..k1 {
                for i in 0..m {
                    writer.write_record(["row", &(i + 1).to_string(), &(j + 1).to_string(), &format!("{}", ff.row_loadings[(i, j)])])?;
                }
            }
            for j in 0..k2 {
                for i in 0..n {
                    writer.write_record(["col", &(i + 1).to_string(), &(j + 1).to_string(), &format!("{}", ff.col_loadings[(i, j)])])?;
                }
            }
            writer.flush()?;
            let factors_path = out_path(&cli.out_dir, &format!("{prefix}-factors.csv"));
            save_panel(&ff.factors, &factors_path)?;
            let garch_path = out_path(&cli.out_dir, &format!("{prefix}-garch.json"));
            write_json(&FitDto::from_fit(&ff.garch, &ff.factors)?, &garch_path)?;
            #[derive(serde::Serialize)]
            struct Selection {
                k1: usize,
                k2: usize,
                selected_by: &'static str,
            }
            let sel_path = out_path(&cli.out_dir, &format!("{prefix}-selection.json"));
            write_json(
                &Selection { k1, k2, selected_by: if selected { "eigenvalue-ratio" } else { "given" } },
                &sel_path,
            )?;
            println!(
                "factor fit: ({m}x{n}) panel, k1={k1}, k2={k2} ({}), factor GARCH converged={} -> {prefix}-*.csv/json",
                if selected { "eigenvalue-ratio" } else { "given" },
                ff.garch.converged
            );
        }
        Command::Backtest(args) => {
            let panel = load_input(&args.input, args.demean)?;
            let engine = match args.engine.as_str() {
                "mf-garch" => BacktestEngine::MatrixFactorGarch { k1: args.k1, k2: args.k2 },
                "matrix-garch" => BacktestEngine::MatrixGarch,
                "riskmetrics" => BacktestEngine::RiskMetrics { lambda: args.lambda },
                "sample" => BacktestEngine::SampleCovariance,
                "equal-weights" => BacktestEngine::EqualWeights,
                other => bail!("unknown engine `{other}`"),
            };
            let opts = BacktestOptions {
                t_train: args.t_train,
                t_test: args.t_test,
                constrained: args.constrained,
                periods_per_year: args.ppy,
                refit_every: args.refit_every,
                fit: FitOptions { multistarts: 1, seed: args.seed, ..FitOptions::default() },
                k_max: 5,
            };
            let res = rolling_backtest(&panel, &engine, &opts)?;
            let prefix = &args.out_prefix;
            #[derive(serde::Serialize)]
            struct Metrics<'a> {
                engine: &'a str,
                constrained: bool,
                t_train: usize,
                t_test: usize,
                periods_per_year: f64,
                av: f64,
                sd: f64,
                ir: f64,
                carried_windows: usize,
            }
            let metrics_path = out_path(&cli.out_dir, &format!("{prefix}-metrics.json"));
            write_json(
                &Metrics {
                    engine: &args.engine,
                    constrained: res.constrained,
                    t_train: args.t_train,
                    t_test: args.t_test,
                    periods_per_year: args.ppy,
                    av: res.av,
                    sd: res.sd,
                    ir: res.ir,
                    carried_windows: res.carried.iter().filter(|&&c| c).count(),
                },
                &metrics_path,
            )?;
            let cum_path = out_path(&cli.out_dir, &format!("{prefix}-cumulative.csv"));
            let mut writer = csv::Writer::from_path(&cum_path)?;
            writer.write_record(["step", "return", "cumulative_return"])?;
            for (k, (r, c)) in res.returns.iter().zip(&res.cumulative).enumerate() {
                writer.write_record([(k + 1).to_string(), format!("{r}"), format!("{c}")])?;
            }
            writer.flush()?;
            let weights_path = out_path(&cli.out_dir, &format!("{prefix}-weights.csv"));
            let mut writer = csv::Writer::from_path(&weights_path)?;
            writer.write_record(["step", "asset", "weight"])?;
            for (k, w) in res.weights.iter().enumerate() {
                for i in 0..w.len() {
                    writer.write_record([(k + 1).to_string(), (i + 1).to_string(), format!("{}", w[i])])?;
                }
            }
            writer.flush()?;
            println!(
                "backtest [{}{}]: AV={:.3} SD={:.3} IR={:.3} ({} test steps, {} carried) -> {prefix}-*.json/csv",
                args.engine,
                if res.constrained { ", long-only" } else { "" },
                res.av,
                res.sd,
                res.ir,
                res.returns.len(),
                res.carried.iter().filter(|&&c| c).count()
            );
        }
        Command::McStudy(args) => match args.study.as_str() {
            "estimation" => {
                let law = parse_law(&args.law)?;
                let cfg = EstimationStudyConfig::benchmark(args.t, args.reps, law, args.seed);
                let summary = run_estimation_study(&cfg)?;
                let path = out_path(&cli.out_dir, &format!("{}-estimates.csv", args.out_prefix));
                let mut writer = csv::Writer::from_path(&path)?;
                writer.write_record(["parameter", "truth", "bias", "se", "ae", "coverage95"])?;
                println!(
                    "estimation study: T={}, law={}, reps used {}/{} ({} not converged)",
                    args.t, args.law, summary.reps_used, args.reps, summary.reps_not_converged
                );
                println!("{:<10} {:>8} {:>9} {:>8} {:>8}", "parameter", "truth", "bias", "SE", "AE");
                for j in 0..summary.names.len() {
                    writer.write_record([
                        summary.names[j].clone(),
                        format!("{}", summary.truth[j]),
                        format!("{}", summary.bias[j]),
                        format!("{}", summary.rmse[j]),
                        format!("{}", summary.mean_ae[j]),
                        format!("{}", summary.coverage95[j]),
                    ])?;
                    println!(
                        "{:<10} {:>8.3} {:>9.4} {:>8.4} {:>8.4}",
                        summary.names[j], summary.truth[j], summary.bias[j], summary.rmse[j], summary.mean_ae[j]
                    );
                }
                writer.flush()?;
                println!("-> {}", path.display());
            }
            "power" => {
                let case = match args.case.as_str() {
                    "arch" => PowerCase::Arch,
                    "garch" => PowerCase::Garch,
                    other => bail!("unknown case `{other}` (expected `arch` or `garch`)"),
                };
                let path = out_path(&cli.out_dir, &format!("{}-power.csv", args.out_prefix));
                let mut writer = csv::Writer::from_path(&path)?;
                writer.write_record(["case", "d", "t", "lag", "rejection_rate", "reps_used"])?;
                println!("power study: case={}, T={}, level={}", args.case, args.t, args.level);
                for &d in &args.d_grid {
                    let cfg = PowerStudyConfig {
                        case,
                        d,
                        t_len: args.t,
                        reps: args.reps,
                        lags: args.lags.clone(),
                        level: args.level,
                        seed: args.seed,
                        burn_in: 500,
                    };
                    let summary = run_power_study(&cfg)?;
                    for (lag, rate) in summary.lags.iter().zip(&summary.rejection_rates) {
                        writer.write_record([
                            args.case.clone(),
                            d.to_string(),
                            args.t.to_string(),
                            lag.to_string(),
                            format!("{rate}"),
                            summary.reps_used.to_string(),
                        ])?;
                        println!("d={d:<3} L={lag:<3} rejection rate {rate:.3} ({} reps)", summary.reps_used);
                    }
                    writer.flush()?;
                }
                println!("-> {}", path.display());
            }
            other => bail!("unknown study `{other}` (expected `estimation` or `power`)"),
        },
    }
    Ok(())
}

fn rayon_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow!("cannot configure {threads} worker threads: {e}"))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // computation failures exit 1; input/validation failures exit 2
        let category = err
            .downcast_ref::<mgarch::Error>()
            .map(|e| e.category())
            .unwrap_or("input");
        eprintln!("error[{category}]: {err:#}");
        let code = match category {
            "invalid-parameter" | "invalid-data" | "dimension-mismatch" | "input" => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

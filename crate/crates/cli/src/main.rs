//! `wkm`: weighted Kaplan-Meier estimation with influence-function
//! standard errors, plus the Monte Carlo study backing them.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ArmsRequest, OutputFormat};
use wkm_core::data::{read_csv, ArmLabel, Dataset, TieBreak};
use wkm_core::km::{iptw_km, weighted_processes, SurvivalCurve};
use wkm_core::numfmt::{sig17, sig4};
use wkm_core::oracle::bootstrap_se;
use wkm_core::propensity::{
    fit_logistic, score_influence, PropensityFit, ScoreInfluence, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
};
use wkm_core::simulation::{
    read_summary_csv, run_study, write_summary_csv, DgpConfig, MonteCarloSummary,
};
use wkm_core::variance::{
    arm_report, difference_report, phi_components, psi_table, se_proposed, InfluenceTable,
    ReportTarget, VarianceReport,
};

#[derive(Parser)]
#[command(
    name = "wkm",
    version,
    about = "Weighted Kaplan-Meier estimation for observational survival data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate survival curves and standard errors from a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run the Monte Carlo study and write per-grid-point summaries.
    Simulate(SimulateArgs),
    /// Project a study summary into plot-ready series.
    Figure(FigureArgs),
    /// Bootstrap cross-check of the analytic standard error.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Flat key-value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "time-col")]
    time_col: Option<String>,
    #[arg(long = "event-col")]
    event_col: Option<String>,
    #[arg(long = "treatment-col")]
    treatment_col: Option<String>,
    /// Covariate columns for the propensity model (default: all others).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Evaluation times, comma separated.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Arms to report: both, 0, or 1.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long = "ci-level")]
    ci_level: Option<f64>,
    /// Report file path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report file format: csv or text.
    #[arg(long)]
    format: Option<String>,
    /// Separate exactly tied failure times by a deterministic jitter
    /// instead of rejecting the dataset.
    #[arg(long = "jitter-ties")]
    jitter_ties: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Summary CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20240101)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Association levels, comma separated (default 0 to 2 in steps of 0.25).
    #[arg(long = "beta0-grid", value_delimiter = ',')]
    beta0_grid: Option<Vec<f64>>,
    /// Worker threads; 0 picks the runtime default. Defaults to the
    /// WKM_THREADS environment variable when set.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Read the exponential scale parameters as rates instead of means.
    #[arg(long = "rate-parameterization")]
    rate_parameterization: bool,
}

#[derive(Args)]
struct FigureArgs {
    /// Summary CSV produced by `wkm simulate`.
    #[arg(long)]
    input: PathBuf,
    /// 1 for the treated-arm series, 2 for the difference series.
    #[arg(long)]
    which: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    time: f64,
    /// arm0, arm1, or difference.
    #[arg(long, default_value = "arm1")]
    target: String,
    #[arg(long, default_value_t = 500)]
    resamples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "jitter-ties")]
    jitter_ties: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Figure(args) => cmd_figure(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Name the pipeline stage an error belongs to, for diagnostics.
fn stage(e: &wkm_core::Error) -> &'static str {
    use wkm_core::Error::*;
    match e {
        FileNotFound { .. } | ParseError { .. } | MissingColumn { .. } | Csv(_) | Io(_) => "parse",
        EmptyDataset
        | InconsistentCovariateLength { .. }
        | NonBinaryIndicator { .. }
        | NegativeTime { .. }
        | NonFiniteCovariate { .. }
        | TiedFailureTimes { .. }
        | MissingInterceptColumn { .. } => "validate",
        Separation { .. } | SingularInformation | MaxIterationsExceeded(_) | NonFiniteWeight => {
            "fit"
        }
        _ => "estimate",
    }
}

fn at_stage<T>(result: wkm_core::Result<T>) -> Result<T> {
    result.map_err(|e| anyhow!("{}: {e}", stage(&e)))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let flag_options = config::AnalysisOptions {
        input: args.input,
        time_col: args.time_col,
        event_col: args.event_col,
        treatment_col: args.treatment_col,
        covariates: args.covariates,
        times: args.times,
        arms: args.arms,
        ci_level: args.ci_level,
        out: args.out,
        format: args.format,
        jitter_ties: if args.jitter_ties { Some(true) } else { None },
    };
    let file_options = match &args.config {
        Some(path) => config::read_config_file(path)?,
        None => config::AnalysisOptions::default(),
    };
    let analysis = flag_options.or(file_options).resolve()?;

    let data = at_stage(read_csv(&analysis.input, &analysis.columns, analysis.ties))?;
    let fit = at_stage(fit_logistic(
        &data,
        DEFAULT_TOLERANCE,
        DEFAULT_MAX_ITERATIONS,
    ))?;
    let influence = at_stage(score_influence(&fit, &data))?;

    let arms: Vec<ArmLabel> = match analysis.arms {
        ArmsRequest::Both => vec![ArmLabel::Control, ArmLabel::Treated],
        ArmsRequest::One(arm) => vec![arm],
    };
    let mut curves: Vec<(ArmLabel, SurvivalCurve)> = Vec::new();
    for &arm in &arms {
        let processes = at_stage(weighted_processes(&data, &fit.weights, arm))?;
        curves.push((arm, at_stage(iptw_km(&processes))?));
    }
    let curve_for = |arm: ArmLabel| &curves.iter().find(|(a, _)| *a == arm).unwrap().1;

    let mut rows: Vec<VarianceReport> = Vec::new();
    for &t in &analysis.times {
        let mut tables: Vec<(ArmLabel, InfluenceTable)> = Vec::new();
        for &arm in &arms {
            let table = at_stage(build_table(&data, &fit, &influence, curve_for(arm), t, arm))?;
            rows.push(at_stage(arm_report(
                &fit,
                &table,
                curve_for(arm),
                analysis.ci_level,
            ))?);
            tables.push((arm, table));
        }
        if analysis.arms == ArmsRequest::Both {
            let control = &tables[0].1;
            let treated = &tables[1].1;
            rows.push(at_stage(difference_report(
                &fit,
                treated,
                control,
                curve_for(ArmLabel::Treated),
                curve_for(ArmLabel::Control),
                analysis.ci_level,
            ))?);
        }
    }

    let table_text = human_table(&data, &fit, &rows);
    let file_contents = match analysis.format {
        OutputFormat::Csv => report_csv(&rows)?,
        OutputFormat::Text => table_text.clone(),
    };
    std::fs::write(&analysis.out, file_contents)
        .with_context(|| format!("cannot write {}", analysis.out.display()))?;
    print!("{table_text}");
    println!("report written to {}", analysis.out.display());
    Ok(())
}

fn build_table(
    data: &Dataset,
    fit: &PropensityFit,
    influence: &ScoreInfluence,
    curve: &SurvivalCurve,
    t: f64,
    arm: ArmLabel,
) -> wkm_core::Result<InfluenceTable> {
    let table = phi_components(data, fit, curve, t, arm)?;
    psi_table(data, fit, influence, table)
}

fn report_csv(rows: &[VarianceReport]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "time",
        "target",
        "estimate",
        "se_proposed",
        "se_gamma_fixed",
        "ci_level",
        "ci_low",
        "ci_high",
    ])?;
    for row in rows {
        writer.write_record([
            sig17(row.t),
            row.target.to_string(),
            sig17(row.estimate),
            sig17(row.se_proposed),
            sig17(row.se_gamma_fixed),
            sig17(row.ci_level),
            sig17(row.ci.0),
            sig17(row.ci.1),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

fn human_table(data: &Dataset, fit: &PropensityFit, rows: &[VarianceReport]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(
        out,
        "n = {}, covariates (incl. constant) = {}, propensity fit in {} iterations",
        data.n(),
        data.p(),
        fit.iterations
    )
    .unwrap();
    writeln!(
        out,
        "treated {} ({} events), control {} ({} events)",
        data.arm_size(ArmLabel::Treated),
        data.arm_events(ArmLabel::Treated),
        data.arm_size(ArmLabel::Control),
        data.arm_events(ArmLabel::Control),
    )
    .unwrap();
    writeln!(
        out,
        "{:<10} {:<11} {:>9} {:>12} {:>15} {:>10} {:>10}",
        "time", "target", "estimate", "se_proposed", "se_gamma_fixed", "ci_low", "ci_high"
    )
    .unwrap();
    for row in rows {
        writeln!(
            out,
            "{:<10} {:<11} {:>9} {:>12} {:>15} {:>10} {:>10}",
            sig4(row.t),
            row.target.to_string(),
            sig4(row.estimate),
            sig4(row.se_proposed),
            sig4(row.se_gamma_fixed),
            sig4(row.ci.0),
            sig4(row.ci.1),
        )
        .unwrap();
    }
    out
}

fn default_grid() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.25).collect()
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let betas = args.beta0_grid.unwrap_or_else(default_grid);
    if betas.is_empty() {
        bail!("--beta0-grid must contain at least one value");
    }
    let parallelism = match args.parallelism {
        Some(p) => p,
        None => std::env::var("WKM_THREADS")
            .ok()
            .and_then(|raw| raw.parse::<usize>().ok())
            .unwrap_or(0),
    };
    let grid: Vec<DgpConfig> = betas
        .iter()
        .map(|&beta0| DgpConfig {
            rate_parameterization: args.rate_parameterization,
            ..DgpConfig::with_beta0(beta0)
        })
        .collect();

    let summaries = run_study(&grid, args.reps, args.seed, parallelism)?;
    for summary in &summaries {
        if summary.excessive_failures() {
            bail!(
                "beta0 = {}: {} of {} replications failed (more than 5%); no summary written",
                summary.beta0,
                summary.failures,
                summary.replications
            );
        }
    }
    write_summary_csv(&summaries, &args.out)?;

    println!("{}", trend_check(&summaries));
    println!("summary written to {}", args.out.display());
    Ok(())
}

fn trend_check(summaries: &[MonteCarloSummary]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let monotone = summaries
        .windows(2)
        .all(|pair| pair[1].mc_sd_arm1 <= pair[0].mc_sd_arm1);
    writeln!(
        out,
        "trend check: mc_sd_arm1 nonincreasing across the grid: {}",
        if monotone { "yes" } else { "no" }
    )
    .unwrap();
    writeln!(
        out,
        "{:<7} {:>9} {:>12} {:>14} {:>10} {:>12} {:>14}",
        "beta0", "mc_sd", "se/sd(prop)", "se/sd(fixed)", "cov(prop)", "cov(fixed)", "failures"
    )
    .unwrap();
    for s in summaries {
        writeln!(
            out,
            "{:<7} {:>9} {:>12} {:>14} {:>10} {:>12} {:>14}",
            sig4(s.beta0),
            sig4(s.mc_sd_arm1),
            sig4(s.mean_se_proposed_arm1 / s.mc_sd_arm1),
            sig4(s.mean_se_gamma_fixed_arm1 / s.mc_sd_arm1),
            sig4(s.coverage_proposed),
            sig4(s.coverage_gamma_fixed),
            s.failures,
        )
        .unwrap();
    }
    out
}

fn cmd_figure(args: FigureArgs) -> Result<()> {
    let summaries = read_summary_csv(&args.input)?;
    let pick = |s: &MonteCarloSummary| -> (f64, f64, f64) {
        match args.which {
            1 => (
                s.mc_sd_arm1,
                s.mean_se_proposed_arm1,
                s.mean_se_gamma_fixed_arm1,
            ),
            _ => (
                s.mc_sd_diff,
                s.mean_se_proposed_diff,
                s.mean_se_gamma_fixed_diff,
            ),
        }
    };
    if !(args.which == 1 || args.which == 2) {
        bail!("--which must be 1 or 2");
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["beta0", "mc_sd", "mean_se_proposed", "mean_se_gamma_fixed"])?;
    for summary in &summaries {
        let (sd, proposed, fixed) = pick(summary);
        writer.write_record([
            sig17(summary.beta0),
            sig17(sd),
            sig17(proposed),
            sig17(fixed),
        ])?;
    }
    let contents = String::from_utf8(writer.into_inner()?)?;
    std::fs::write(&args.out, contents)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "figure {} data written to {}",
        args.which,
        args.out.display()
    );
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let ties = if args.jitter_ties {
        TieBreak::Jitter
    } else {
        TieBreak::Reject
    };
    let data = at_stage(read_csv(&args.input, &Default::default(), ties))?;
    let target = match args.target.as_str() {
        "arm0" | "0" => ReportTarget::Arm(ArmLabel::Control),
        "arm1" | "1" => ReportTarget::Arm(ArmLabel::Treated),
        "difference" | "diff" => ReportTarget::Difference,
        other => bail!("unknown target '{other}'"),
    };

    let fit = at_stage(fit_logistic(
        &data,
        DEFAULT_TOLERANCE,
        DEFAULT_MAX_ITERATIONS,
    ))?;
    let influence = at_stage(score_influence(&fit, &data))?;
    let analytic = match target {
        ReportTarget::Arm(arm) => {
            let curve = at_stage(iptw_km(&at_stage(weighted_processes(
                &data,
                &fit.weights,
                arm,
            ))?))?;
            let table = at_stage(build_table(&data, &fit, &influence, &curve, args.time, arm))?;
            at_stage(se_proposed(&table.psi))?
        }
        ReportTarget::Difference => {
            let mut psis = Vec::new();
            for arm in [ArmLabel::Treated, ArmLabel::Control] {
                let curve = at_stage(iptw_km(&at_stage(weighted_processes(
                    &data,
                    &fit.weights,
                    arm,
                ))?))?;
                let table = at_stage(build_table(&data, &fit, &influence, &curve, args.time, arm))?;
                psis.push(table.psi);
            }
            let contrast: Vec<f64> = psis[0].iter().zip(&psis[1]).map(|(a, b)| a - b).collect();
            at_stage(se_proposed(&contrast))?
        }
    };
    let resampled = at_stage(bootstrap_se(
        &data,
        args.time,
        target,
        args.resamples,
        args.seed,
    ))?;
    println!(
        "analytic se = {}, bootstrap se = {} ({} resamples), ratio = {}",
        sig4(analytic),
        sig4(resampled),
        args.resamples,
        sig4(resampled / analytic)
    );
    Ok(())
}

//! Thin command-line front end over the hindex library. Every command
//! reads one JSON run configuration, writes machine-readable outputs into
//! the output directory, and finishes with a manifest digesting all inputs
//! and outputs. The manifest carries the run's only timestamp, so repeated
//! runs with the same config and inputs produce byte-identical data files.

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

use hindex::config::{RunConfig, ScanParams};
use hindex::error::{Error, Result};
use hindex::manifest::Manifest;
use hindex::{analytics, data, efficiency, gp, index, sim};

#[derive(Parser)]
#[command(
    name = "hindex",
    version,
    about = "Hierarchical index construction, growth-optimal benchmarks, and market efficiency tests"
)]
struct Cli {
    /// Run configuration JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed (simulation, scan, bootstrap).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw panel and report accepted and rejected stocks.
    Ingest,
    /// Backtest the configured weight schemes into daily index paths.
    BuildIndex,
    /// Performance statistics for index path files.
    Stats,
    /// Rolling growth-rate difference between two index paths.
    GrDiff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        window_years: f64,
    },
    /// Outperformance frequency of one index over another.
    Outperf {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        window_years: f64,
    },
    /// Market efficiency tests on pooled benchmarked stock returns.
    EmpTest,
    /// Solve the growth-optimal portfolio from drift and loading inputs.
    SolveGp,
    /// Simulate the stylized hierarchical market and export the panel.
    Simulate,
    /// Diversification decay scan over universe sizes.
    Scan,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        if let Some(sim) = &mut config.sim {
            sim.seed = seed;
        }
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    match cli.command {
        Command::Ingest => cmd_ingest(&config),
        Command::BuildIndex => cmd_build_index(&config),
        Command::Stats => cmd_stats(&config),
        Command::GrDiff { a, b, window_years } => cmd_gr_diff(&config, &a, &b, window_years),
        Command::Outperf { a, b, window_years } => cmd_outperf(&config, &a, &b, window_years),
        Command::EmpTest => cmd_emp_test(&config),
        Command::SolveGp => cmd_solve_gp(&config),
        Command::Simulate => cmd_simulate(&config),
        Command::Scan => cmd_scan(&config),
    }
}

/// Load the raw panel named by the config's data block.
fn load_panel(
    config: &RunConfig,
    manifest: &mut Manifest,
) -> Result<(Vec<data::StockRecord>, data::IngestReport, Vec<chrono::NaiveDate>)> {
    let paths = RunConfig::require(&config.data, "data")?;
    manifest.add_input(&paths.calendar)?;
    manifest.add_input(&paths.prices)?;
    manifest.add_input(&paths.classification)?;
    let calendar = data::load_calendar(&paths.calendar)?;
    let (records, report) = data::ingest_panel(&paths.prices, &paths.classification, &calendar)?;
    Ok((records, report, calendar))
}

fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("ingest", config)?;
    let (records, report, calendar) = load_panel(config, &mut manifest)?;
    let out = config.out_dir.join("ingest_report.json");
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
    manifest.add_output(&out)?;
    manifest.note("records_accepted", report.records_accepted);
    manifest.note("trading_days", calendar.len());
    manifest.write(&config.out_dir)?;
    println!(
        "ingest: {} rows, {} stocks accepted, {} rejected",
        report.rows_read,
        records.len(),
        report.rejected.len()
    );
    Ok(())
}

fn cmd_build_index(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("build-index", config)?;
    let params = RunConfig::require(&config.index, "index")?.clone();
    if params.schemes.is_empty() {
        return Err(Error::usage("no weight schemes requested"));
    }
    let data_paths = RunConfig::require(&config.data, "data")?;
    manifest.add_input(&data_paths.policies)?;
    let (records, _, calendar) = load_panel(config, &mut manifest)?;
    let policies = data::load_policies(&data_paths.policies)?;

    let schemes = params
        .schemes
        .iter()
        .map(|name| index::WeightScheme::from_name(name))
        .collect::<Result<Vec<_>>>()?;
    let mut results = schemes
        .into_par_iter()
        .map(|scheme| {
            let bt = index::BacktestConfig {
                scheme,
                base_date: params.base_date,
                initial_value: params.initial_value,
                tc_rate: params.tc_rate,
            };
            index::backtest(&records, &policies, &calendar, &bt)
        })
        .collect::<Result<Vec<_>>>()?;

    for (path, events) in &mut results {
        if params.tc_rate > 0.0 {
            path.scheme_name.push_str("-TC");
        }
        let index_file = config.out_dir.join(format!("indexpath_{}.csv", path.scheme_name));
        index::write_index_path(&index_file, path)?;
        manifest.add_output(&index_file)?;
        let log_file = config.out_dir.join(format!("rebalance_{}.csv", path.scheme_name));
        index::write_rebalance_log(&log_file, events)?;
        manifest.add_output(&log_file)?;
        println!(
            "build-index: {} over {} days, final value {:.4}",
            path.scheme_name,
            path.dates.len(),
            path.values.last().unwrap()
        );
    }
    manifest.note("schemes", results.len());
    manifest.write(&config.out_dir)?;
    Ok(())
}

fn cmd_stats(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("stats", config)?;
    let params = RunConfig::require(&config.stats, "stats")?;
    if params.index_paths.is_empty() {
        return Err(Error::usage("no index paths to analyze"));
    }
    let risk_free = match (params.risk_free_rate, &config.data) {
        (Some(rate), _) => analytics::RiskFree::constant(rate),
        (None, Some(paths)) if paths.risk_free.is_some() => {
            let file = paths.risk_free.as_ref().unwrap();
            manifest.add_input(file)?;
            load_risk_free_csv(file)?
        }
        _ => analytics::RiskFree::constant(0.0),
    };

    let mut entries = Vec::new();
    for file in &params.index_paths {
        manifest.add_input(file)?;
        let path = index::read_index_path(file)?;
        let stats = analytics::perf_stats(&path, &risk_free)?;
        let plot_file =
            config.out_dir.join(format!("plot_{}.csv", path.scheme_name));
        analytics::write_plot_data(&plot_file, &path, params.window_years)?;
        manifest.add_output(&plot_file)?;
        println!(
            "stats: {} GR {:.4}% volatility {:.4}%",
            path.scheme_name,
            stats.gr * 100.0,
            stats.volatility * 100.0
        );
        entries.push(analytics::StatsEntry {
            scheme: path.scheme_name,
            tc_rate: path.tc_rate,
            stats,
        });
    }
    let csv_file = config.out_dir.join("stats.csv");
    analytics::write_stats_csv(&csv_file, &entries)?;
    manifest.add_output(&csv_file)?;
    let json_file = config.out_dir.join("stats.json");
    analytics::write_stats_json(&json_file, &entries)?;
    manifest.add_output(&json_file)?;
    manifest.write(&config.out_dir)?;
    Ok(())
}

fn load_risk_free_csv(path: &Path) -> Result<analytics::RiskFree> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut series = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let date = row
            .get(0)
            .and_then(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::data(format!("{}: bad date in row {}", path.display(), i + 2)))?;
        let rate: f64 = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(format!("{}: bad rate in row {}", path.display(), i + 2)))?;
        series.push((date, rate));
    }
    Ok(analytics::RiskFree::from_series(series))
}

fn cmd_gr_diff(config: &RunConfig, a: &Path, b: &Path, window_years: f64) -> Result<()> {
    let mut manifest = Manifest::new("gr-diff", config)?;
    manifest.add_input(a)?;
    manifest.add_input(b)?;
    let confidence = config.stats.as_ref().map(|s| s.confidence).unwrap_or(0.99);
    let path_a = index::read_index_path(a)?;
    let path_b = index::read_index_path(b)?;
    let report = analytics::gr_difference(&path_a, &path_b, window_years, confidence)?;
    let out = config.out_dir.join("gr_diff.json");
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
    manifest.add_output(&out)?;
    manifest.write(&config.out_dir)?;
    println!(
        "gr-diff: {} - {} over {}y windows: mean {:.6}, CI [{:.6}, {:.6}]",
        path_a.scheme_name, path_b.scheme_name, window_years, report.mean, report.lower, report.upper
    );
    Ok(())
}

fn cmd_outperf(config: &RunConfig, a: &Path, b: &Path, window_years: f64) -> Result<()> {
    let mut manifest = Manifest::new("outperf", config)?;
    manifest.add_input(a)?;
    manifest.add_input(b)?;
    let path_a = index::read_index_path(a)?;
    let path_b = index::read_index_path(b)?;
    let frequency = analytics::outperformance_frequency(&path_a, &path_b, window_years)?;
    let out = config.out_dir.join("outperf.json");
    let body = serde_json::json!({
        "a": path_a.scheme_name,
        "b": path_b.scheme_name,
        "window_years": window_years,
        "frequency": frequency,
    });
    let text = serde_json::to_string_pretty(&body)?;
    std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
    manifest.add_output(&out)?;
    manifest.write(&config.out_dir)?;
    println!(
        "outperf: {} beats {} in {:.2}% of {}y windows",
        path_a.scheme_name,
        path_b.scheme_name,
        frequency * 100.0,
        window_years
    );
    Ok(())
}

fn cmd_emp_test(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("emp-test", config)?;
    let params = RunConfig::require(&config.test, "test")?;
    if params.benchmarks.is_empty() {
        return Err(Error::usage("no benchmark index paths given"));
    }
    let (records, _, _) = load_panel(config, &mut manifest)?;

    let mut z_reports = Vec::new();
    let mut bootstrap_reports = Vec::new();
    for file in &params.benchmarks {
        manifest.add_input(file)?;
        let benchmark = index::read_index_path(file)?;
        let per_stock = efficiency::benchmarked_returns_per_stock(&records, &benchmark)?;
        let sample = efficiency::pool_benchmarked_returns(&records, &benchmark)?;
        let report = efficiency::z_test_nonpositive_mean(&sample, params.confidence)?;
        println!(
            "emp-test: {} pooled n={} mean {:.6} Z {:.3} p {:.3e}",
            benchmark.scheme_name, report.n, report.sample_mean, report.statistic, report.p_value
        );
        z_reports.push(efficiency::LabeledReport {
            benchmark: benchmark.scheme_name.clone(),
            report,
        });
        if let Some(boot) = &params.bootstrap {
            let report = efficiency::block_bootstrap_test(
                &per_stock,
                boot.replicates,
                boot.mean_block_length,
                params.confidence,
                config.seed,
            )?;
            bootstrap_reports.push(efficiency::LabeledReport {
                benchmark: benchmark.scheme_name.clone(),
                report,
            });
        }
    }
    let csv_file = config.out_dir.join("test_reports.csv");
    efficiency::write_test_reports_csv(&csv_file, &z_reports)?;
    manifest.add_output(&csv_file)?;
    let json_file = config.out_dir.join("test_reports.json");
    efficiency::write_test_reports_json(&json_file, &z_reports)?;
    manifest.add_output(&json_file)?;
    if !bootstrap_reports.is_empty() {
        let csv_file = config.out_dir.join("bootstrap_reports.csv");
        efficiency::write_test_reports_csv(&csv_file, &bootstrap_reports)?;
        manifest.add_output(&csv_file)?;
        let json_file = config.out_dir.join("bootstrap_reports.json");
        efficiency::write_test_reports_json(&json_file, &bootstrap_reports)?;
        manifest.add_output(&json_file)?;
    }
    manifest.write(&config.out_dir)?;
    Ok(())
}

fn cmd_solve_gp(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("solve-gp", config)?;
    let params = RunConfig::require(&config.gp, "gp")?;
    let rows = params.b.len();
    let cols = params.b.first().map(|r| r.len()).unwrap_or(0);
    if params.b.iter().any(|r| r.len() != cols) {
        return Err(Error::usage("volatility rows have unequal lengths"));
    }
    let flat: Vec<f64> = params.b.iter().flatten().copied().collect();
    let coeffs = gp::MarketCoefficients::new(
        params.a.clone(),
        nalgebra::DMatrix::from_row_slice(rows, cols, &flat),
    )?;
    let solution = gp::solve_gp(&coeffs)?;
    let out = config.out_dir.join("gp_solution.json");
    gp::write_gp_solution(&out, &solution)?;
    manifest.add_output(&out)?;
    manifest.note("lambda", solution.lambda);
    manifest.note("min_norm", solution.min_norm);
    manifest.write(&config.out_dir)?;
    println!(
        "solve-gp: {} stocks, lambda {:.6}, |theta| {:.6}{}",
        coeffs.n_stocks(),
        solution.lambda,
        solution.theta.iter().map(|t| t * t).sum::<f64>().sqrt(),
        if solution.min_norm { " (minimum-norm)" } else { "" }
    );
    Ok(())
}

fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("simulate", config)?;
    let sim_config = RunConfig::require(&config.sim, "sim")?;
    let panel = sim::simulate_panel(sim_config)?;
    let panel_dir = config.out_dir.join("panel");
    sim::export_panel(&panel, &panel_dir)?;
    for name in ["prices.csv", "classification.csv", "policies.csv", "calendar.csv"] {
        manifest.add_output(&panel_dir.join(name))?;
    }
    let hwi_file = config.out_dir.join("indexpath_HWI-SIM.csv");
    index::write_index_path(
        &hwi_file,
        &index::IndexPath {
            scheme_name: "HWI-SIM".into(),
            tc_rate: 0.0,
            dates: panel.dates.clone(),
            values: panel.hwi.clone(),
        },
    )?;
    manifest.add_output(&hwi_file)?;
    let gp_file = config.out_dir.join("indexpath_GP-SIM.csv");
    index::write_index_path(
        &gp_file,
        &index::IndexPath {
            scheme_name: "GP-SIM".into(),
            tc_rate: 0.0,
            dates: panel.dates.clone(),
            values: panel.gp_exact.clone(),
        },
    )?;
    manifest.add_output(&gp_file)?;
    manifest.note("stocks", panel.tree.n_stocks());
    manifest.note("steps", panel.config.n_steps());
    manifest.note("euler_fallbacks", panel.euler_fallbacks);
    manifest.write(&config.out_dir)?;
    println!(
        "simulate: {} stocks x {} steps, terminal HWI {:.6}",
        panel.tree.n_stocks(),
        panel.config.n_steps(),
        panel.hwi.last().unwrap()
    );
    Ok(())
}

fn parse_family(params: &ScanParams) -> Result<sim::ScanFamily> {
    match params.family.to_ascii_lowercase().as_str() {
        "ewi" => Ok(sim::ScanFamily::Ewi),
        "concentrated" => {
            let xi = params
                .xi
                .ok_or_else(|| Error::usage("concentrated family needs an exponent xi"))?;
            Ok(sim::ScanFamily::Concentrated { xi })
        }
        other => Err(Error::usage(format!("unknown weight family {other:?}"))),
    }
}

fn cmd_scan(config: &RunConfig) -> Result<()> {
    let mut manifest = Manifest::new("scan", config)?;
    let params = RunConfig::require(&config.scan, "scan")?;
    let sim_config = RunConfig::require(&config.sim, "sim")?;
    let family = parse_family(params)?;
    let result = sim::diversification_scan(family, &params.m_list, sim_config)?;
    let csv_file = config.out_dir.join("scan_result.csv");
    sim::write_scan_csv(&csv_file, &result)?;
    manifest.add_output(&csv_file)?;
    let json_file = config.out_dir.join("scan_result.json");
    let text = serde_json::to_string_pretty(&result)?;
    std::fs::write(&json_file, text + "\n").map_err(|e| Error::io(&json_file, e))?;
    manifest.add_output(&json_file)?;
    manifest.note("fitted_slope", result.slope);
    manifest.note("slope_bound", result.slope_bound);
    manifest.note("within_bound", result.within_bound);
    manifest.write(&config.out_dir)?;
    println!(
        "scan: {} over M={:?}: slope {:.4} (theory {:.1}), bound {}",
        result.family,
        result.m_values,
        result.slope,
        result.slope_bound,
        if result.within_bound { "holds pointwise" } else { "VIOLATED" }
    );
    Ok(())
}

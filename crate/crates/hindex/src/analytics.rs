//! Performance and risk statistics over index value paths.
//!
//! Conventions, fixed here because published tables rarely state them:
//! 252 trading days per year for return annualization, a 365.25-day year
//! for growth-rate time, empirical quantiles with the lower-interpolation
//! rule, and drawdown episodes as maximal runs strictly below the running
//! maximum (episodes still open at the end of the sample are dropped).

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::index::IndexPath;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Calendar time between two dates in 365.25-day years.
pub fn years_between(start: NaiveDate, end: NaiveDate) -> f64 {
    (end - start).num_days() as f64 / DAYS_PER_YEAR
}

// ============================================================================
// Risk-free input
// ============================================================================

/// Date-indexed short rate (annualized fraction).
#[derive(Debug, Clone)]
pub struct RiskFree {
    rates: HashMap<NaiveDate, f64>,
    constant: Option<f64>,
}

impl RiskFree {
    /// A flat short rate on every date.
    pub fn constant(rate: f64) -> Self {
        RiskFree { rates: HashMap::new(), constant: Some(rate) }
    }

    pub fn from_series(series: impl IntoIterator<Item = (NaiveDate, f64)>) -> Self {
        RiskFree { rates: series.into_iter().collect(), constant: None }
    }

    pub fn rate_on(&self, date: NaiveDate) -> Option<f64> {
        self.rates.get(&date).copied().or(self.constant)
    }

    /// Mean rate over `dates`; errors list the missing dates.
    fn mean_over(&self, dates: &[NaiveDate]) -> Result<f64> {
        let mut missing = Vec::new();
        let mut sum = 0.0;
        for &d in dates {
            match self.rate_on(d) {
                Some(r) => sum += r,
                None => missing.push(d),
            }
        }
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(5).map(|d| d.to_string()).collect();
            return Err(Error::data(format!(
                "risk-free rate missing on {} dates (first: {})",
                missing.len(),
                shown.join(", ")
            )));
        }
        Ok(sum / dates.len() as f64)
    }
}

// ============================================================================
// Growth rate
// ============================================================================

/// Annualized long-term growth rate (1/T) ln(V_end / V_start).
pub fn growth_rate(path: &IndexPath, start: NaiveDate, end: NaiveDate) -> Result<f64> {
    if start >= end {
        return Err(Error::usage(format!("start {start} must precede end {end}")));
    }
    let value_at = |d: NaiveDate| -> Result<f64> {
        let idx = path
            .dates
            .iter()
            .position(|&x| x == d)
            .ok_or_else(|| Error::data(format!("date {d} not in index path")))?;
        let v = path.values[idx];
        if v <= 0.0 {
            return Err(Error::numerical(format!("nonpositive index value {v} at {d}")));
        }
        Ok(v)
    };
    let v_start = value_at(start)?;
    let v_end = value_at(end)?;
    Ok((v_end / v_start).ln() / years_between(start, end))
}

/// Growth rate over a trailing window ending at each date once the window
/// fits; pairs are (window end date, annualized growth rate).
pub fn rolling_growth_rate(path: &IndexPath, window_years: f64) -> Vec<(NaiveDate, f64)> {
    let window = (window_years * TRADING_DAYS_PER_YEAR).round() as usize;
    let mut out = Vec::new();
    if window == 0 || path.dates.len() <= window {
        return out;
    }
    for end in window..path.dates.len() {
        let start = end - window;
        let t = years_between(path.dates[start], path.dates[end]);
        out.push((path.dates[end], (path.values[end] / path.values[start]).ln() / t));
    }
    out
}

// ============================================================================
// Performance statistics
// ============================================================================

/// Summary statistics of one index path.
#[derive(Debug, Clone, Serialize)]
pub struct PerfStats {
    /// Annualized long-term growth rate over the full span.
    pub gr: f64,
    /// Annualized mean of daily simple returns.
    pub avg_return: f64,
    /// avg_return minus the average risk-free rate.
    pub risk_premium: f64,
    /// Annualized standard deviation of daily simple returns.
    pub volatility: f64,
    /// risk_premium / volatility; absent when volatility is zero.
    pub sharpe: Option<f64>,
    /// Empirical 5th percentile of daily returns (lower interpolation).
    pub var95: f64,
    /// Mean of daily returns at or below var95.
    pub es95: f64,
    /// Mean relative shortfall from the running maximum over drawdown days.
    pub avg_drawdown: f64,
    /// Mean trading days from episode trough to regaining the running max.
    pub avg_recovery_days: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Empirical quantile, lower-interpolation rule: the element at index
/// floor((n-1) q) of the ascending sort.
pub fn quantile_lower(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * q).floor() as usize;
    sorted[idx]
}

/// Completed drawdown episodes of a value path. Returns
/// (relative shortfalls on all episode days, recovery days per episode).
fn drawdown_episodes(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut shortfalls = Vec::new();
    let mut recoveries = Vec::new();
    let mut running_max = values[0];
    let mut episode: Vec<(usize, f64)> = Vec::new(); // (index, shortfall)
    for (i, &v) in values.iter().enumerate() {
        if v < running_max {
            episode.push((i, (running_max - v) / running_max));
        } else {
            if !episode.is_empty() {
                // Episode regained the running maximum at day i.
                let (trough_idx, _) = episode
                    .iter()
                    .copied()
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                shortfalls.extend(episode.iter().map(|&(_, s)| s));
                recoveries.push((i - trough_idx) as f64);
                episode.clear();
            }
            running_max = running_max.max(v);
        }
    }
    // An episode still open at the end never recovered; it is dropped.
    (shortfalls, recoveries)
}

/// Full performance summary of one path against a risk-free rate series.
pub fn perf_stats(path: &IndexPath, risk_free: &RiskFree) -> Result<PerfStats> {
    if path.values.len() < 2 {
        return Err(Error::usage("need at least two observations"));
    }
    if path.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::numerical("index path has nonpositive values"));
    }
    let returns = path.simple_returns();
    let gr = growth_rate(path, path.dates[0], *path.dates.last().unwrap())?;
    let avg_return = mean(&returns) * TRADING_DAYS_PER_YEAR;
    let rf = risk_free.mean_over(&path.dates[1..])?;
    let risk_premium = avg_return - rf;
    let volatility = sample_std(&returns) * TRADING_DAYS_PER_YEAR.sqrt();
    let sharpe = if volatility > 0.0 { Some(risk_premium / volatility) } else { None };
    let var95 = quantile_lower(&returns, 0.05);
    let tail: Vec<f64> = returns.iter().copied().filter(|&r| r <= var95).collect();
    let es95 = mean(&tail);
    let (shortfalls, recoveries) = drawdown_episodes(&path.values);
    let avg_drawdown = if shortfalls.is_empty() { 0.0 } else { mean(&shortfalls) };
    let avg_recovery_days = if recoveries.is_empty() { 0.0 } else { mean(&recoveries) };
    Ok(PerfStats {
        gr,
        avg_return,
        risk_premium,
        volatility,
        sharpe,
        var95,
        es95,
        avg_drawdown,
        avg_recovery_days,
    })
}

// ============================================================================
// Growth-rate differences and outperformance
// ============================================================================

/// Rolling growth-rate difference between two schemes.
#[derive(Debug, Clone, Serialize)]
pub struct GrDiffReport {
    pub window_years: f64,
    pub n_windows: usize,
    /// Mean of (GR_a - GR_b) over all rolling windows.
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Restrict both paths to their common dates, preserving order.
fn align<'a>(a: &'a IndexPath, b: &'a IndexPath) -> (Vec<NaiveDate>, Vec<f64>, Vec<f64>) {
    let b_by_date: HashMap<NaiveDate, f64> =
        b.dates.iter().copied().zip(b.values.iter().copied()).collect();
    let mut dates = Vec::new();
    let mut va = Vec::new();
    let mut vb = Vec::new();
    for (&d, &v) in a.dates.iter().zip(&a.values) {
        if let Some(&w) = b_by_date.get(&d) {
            dates.push(d);
            va.push(v);
            vb.push(w);
        }
    }
    (dates, va, vb)
}

/// Standard error of the mean of a serially dependent sequence via
/// overlapping block means with block length ceil(n^(1/3)).
fn overlapping_block_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let block = (n as f64).powf(1.0 / 3.0).ceil() as usize;
    if block >= n || n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let n_blocks = n - block + 1;
    let mut sum = xs[..block].iter().sum::<f64>();
    let mut ss = 0.0;
    for i in 0..n_blocks {
        let bm = sum / block as f64;
        ss += (bm - m) * (bm - m);
        if i + 1 < n_blocks {
            sum += xs[i + block] - xs[i];
        }
    }
    // Variance of the sample mean, overlapping-batch-means estimator.
    let var_mean = (block as f64 * ss) / ((n_blocks as f64) * (n - block) as f64);
    var_mean.sqrt()
}

/// Mean rolling-window growth-rate difference (a minus b) with a
/// normal-approximation confidence interval whose standard error respects
/// the serial dependence of overlapping windows.
pub fn gr_difference(
    a: &IndexPath,
    b: &IndexPath,
    window_years: f64,
    confidence: f64,
) -> Result<GrDiffReport> {
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::usage("confidence must lie in (0, 1)"));
    }
    let (dates, va, vb) = align(a, b);
    let window = (window_years * TRADING_DAYS_PER_YEAR).round() as usize;
    if window == 0 {
        return Err(Error::usage("window must cover at least one trading day"));
    }
    if dates.len() <= window {
        return Err(Error::usage(format!(
            "common span of {} dates cannot fit a {window_years}-year window",
            dates.len()
        )));
    }
    let mut diffs = Vec::with_capacity(dates.len() - window);
    for start in 0..dates.len() - window {
        let end = start + window;
        let t = years_between(dates[start], dates[end]);
        let gr_a = (va[end] / va[start]).ln() / t;
        let gr_b = (vb[end] / vb[start]).ln() / t;
        diffs.push(gr_a - gr_b);
    }
    let m = mean(&diffs);
    let se = overlapping_block_se(&diffs);
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + confidence / 2.0);
    Ok(GrDiffReport {
        window_years,
        n_windows: diffs.len(),
        mean: m,
        lower: m - z * se,
        upper: m + z * se,
    })
}

/// Fraction of rolling windows of `horizon_years` where a's total return
/// strictly exceeds b's.
pub fn outperformance_frequency(a: &IndexPath, b: &IndexPath, horizon_years: f64) -> Result<f64> {
    let (dates, va, vb) = align(a, b);
    let window = (horizon_years * TRADING_DAYS_PER_YEAR).round() as usize;
    if window == 0 {
        return Err(Error::usage("horizon must cover at least one trading day"));
    }
    if dates.len() <= window {
        return Err(Error::usage(format!(
            "common span of {} dates cannot fit a {horizon_years}-year horizon",
            dates.len()
        )));
    }
    let n = dates.len() - window;
    let wins = (0..n)
        .filter(|&s| va[s + window] / va[s] > vb[s + window] / vb[s])
        .count();
    Ok(wins as f64 / n as f64)
}

// ============================================================================
// Report files
// ============================================================================

/// One labeled row of a statistics report.
#[derive(Debug, Clone, Serialize)]
pub struct StatsEntry {
    pub scheme: String,
    pub tc_rate: f64,
    pub stats: PerfStats,
}

/// Write statistics as JSON (full structure).
pub fn write_stats_json(path: &Path, entries: &[StatsEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write statistics as CSV, one row per index.
pub fn write_stats_csv(path: &Path, entries: &[StatsEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "scheme",
        "tc_rate",
        "gr",
        "avg_return",
        "risk_premium",
        "volatility",
        "sharpe",
        "var95",
        "es95",
        "avg_drawdown",
        "avg_recovery_days",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for e in entries {
        let s = &e.stats;
        w.write_record([
            e.scheme.clone(),
            format!("{}", e.tc_rate),
            format!("{}", s.gr),
            format!("{}", s.avg_return),
            format!("{}", s.risk_premium),
            format!("{}", s.volatility),
            s.sharpe.map(|x| format!("{x}")).unwrap_or_default(),
            format!("{}", s.var95),
            format!("{}", s.es95),
            format!("{}", s.avg_drawdown),
            format!("{}", s.avg_recovery_days),
        ])
        .map_err(|err| Error::csv(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write (date, value) and, where the window fits, (date, trailing
/// growth rate) rows for external plotting.
pub fn write_plot_data(path: &Path, index: &IndexPath, window_years: f64) -> Result<()> {
    let rolling: HashMap<NaiveDate, f64> =
        rolling_growth_rate(index, window_years).into_iter().collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["date", "value", "rolling_gr"]).map_err(|e| Error::csv(path, e))?;
    for (date, value) in index.dates.iter().zip(&index.values) {
        w.write_record([
            date.to_string(),
            format!("{value}"),
            rolling.get(date).map(|g| format!("{g}")).unwrap_or_default(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================

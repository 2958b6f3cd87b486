//! Market-efficiency tests on benchmarked returns.
//!
//! The testable implication of pricing by a growth-optimal benchmark is
//! that every benchmarked security has nonpositive expected return. Pool
//! all daily benchmarked stock returns into one sample, then test
//! H0: mu <= 0 against H1: mu > 0, first with a Z-test, then with a
//! stationary block bootstrap that respects serial dependence.
//!
//! Observations are daily simple returns annualized as x 252 x 100.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytics::quantile_lower;
use crate::data::StockRecord;
use crate::error::{Error, Result};
use crate::gp::benchmark_series;
use crate::index::IndexPath;

pub const ANNUALIZATION: f64 = 252.0 * 100.0;

// ============================================================================
// Types
// ============================================================================

/// Pooled benchmarked-return observations (daily, annualized, percent).
#[derive(Debug, Clone)]
pub struct ReturnSample {
    pub observations: Vec<f64>,
    /// Label of the benchmark the returns are denominated in.
    pub source: String,
}

impl ReturnSample {
    pub fn n(&self) -> usize {
        self.observations.len()
    }
}

/// Outcome of one mean test.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub method: String,
    pub n: usize,
    pub sample_mean: f64,
    pub standard_error: f64,
    pub confidence: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub statistic: f64,
    /// One-sided p-value for H1: mu > 0.
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_block_length: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestReport {
    /// Z-test report from first and second moments: statistic = mean / se,
    /// one-sided p = 1 - Phi(statistic), plus a two-sided normal interval
    /// at `confidence`.
    pub fn from_moments(mean: f64, standard_error: f64, n: usize, confidence: f64) -> Result<Self> {
        if standard_error <= 0.0 {
            return Err(Error::numerical(
                "zero variance (identical observations); mean test undefined",
            ));
        }
        if !(0.0..1.0).contains(&confidence) {
            return Err(Error::usage("confidence must lie in (0, 1)"));
        }
        let norm = Normal::new(0.0, 1.0).unwrap();
        let statistic = mean / standard_error;
        let p_value = (1.0 - norm.cdf(statistic)).clamp(0.0, 1.0);
        let z = norm.inverse_cdf(0.5 + confidence / 2.0);
        let mut warnings = Vec::new();
        if n < 30 {
            warnings.push(format!("normal approximation with only {n} observations"));
        }
        Ok(TestReport {
            method: "z".to_string(),
            n,
            sample_mean: mean,
            standard_error,
            confidence,
            ci_low: mean - z * standard_error,
            ci_high: mean + z * standard_error,
            statistic,
            p_value,
            replicates: None,
            mean_block_length: None,
            warnings,
        })
    }
}

// ============================================================================
// Pooling
// ============================================================================

/// Pool daily benchmarked returns of every stock over the benchmark's
/// trading dates. For each consecutive date pair where the stock is alive
/// on both days, emit ((S/V)_{t+1} / (S/V)_t - 1) x 252 x 100; days after a
/// stock's final price contribute nothing.
pub fn pool_benchmarked_returns(
    records: &[StockRecord],
    benchmark: &IndexPath,
) -> Result<ReturnSample> {
    let per_stock = benchmarked_returns_per_stock(records, benchmark)?;
    let observations: Vec<f64> = per_stock.into_iter().flatten().collect();
    if observations.len() < 2 {
        return Err(Error::data(format!(
            "pooled sample has {} observations; need at least 2",
            observations.len()
        )));
    }
    Ok(ReturnSample { observations, source: benchmark.scheme_name.clone() })
}

/// Same observations as [`pool_benchmarked_returns`] but kept per stock,
/// in record order; the bootstrap needs the stock boundaries.
pub fn benchmarked_returns_per_stock(
    records: &[StockRecord],
    benchmark: &IndexPath,
) -> Result<Vec<Vec<f64>>> {
    if benchmark.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::numerical("benchmark has nonpositive values"));
    }
    let mut series = Vec::with_capacity(records.len());
    for rec in records {
        let mut observations = Vec::new();
        for w in benchmark.dates.windows(2).zip(benchmark.values.windows(2)) {
            let ((d0, d1), (v0, v1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
            if let (Some(p0), Some(p1)) = (rec.price_asof(d0), rec.price_asof(d1)) {
                let ratio = (p1 / v1) / (p0 / v0);
                observations.push((ratio - 1.0) * ANNUALIZATION);
            }
        }
        series.push(observations);
    }
    Ok(series)
}

// ============================================================================
// Z-test
// ============================================================================

/// One-sided Z-test of H0: mu <= 0 on a pooled sample.
pub fn z_test_nonpositive_mean(sample: &ReturnSample, confidence: f64) -> Result<TestReport> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::usage("need at least two observations"));
    }
    let mean = sample.observations.iter().sum::<f64>() / n as f64;
    let var = sample.observations.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        / (n - 1) as f64;
    TestReport::from_moments(mean, (var / n as f64).sqrt(), n, confidence)
}

// ============================================================================
// Stationary block bootstrap
// ============================================================================

fn geometric_length<R: rand::Rng>(rng: &mut R, p: f64) -> usize {
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.gen();
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize
}

/// Stationary block bootstrap test of H0: mu <= 0 on per-stock return
/// series.
///
/// Each replicate resamples blocks whose lengths are geometric with mean
/// `mean_block_length`; block starts are uniform over all observations and
/// blocks truncate at their stock's series end, never crossing into another
/// stock. The interval is the percentile interval of replicate means; the
/// p-value is the fraction of null-centered replicate means at or above the
/// observed mean. Deterministic for a given seed regardless of thread
/// count: replicate r draws from its own counter-based stream.
pub fn block_bootstrap_test(
    series_set: &[Vec<f64>],
    replicates: usize,
    mean_block_length: f64,
    confidence: f64,
    seed: u64,
) -> Result<TestReport> {
    if replicates < 200 {
        return Err(Error::usage("need at least 200 bootstrap replicates"));
    }
    if mean_block_length < 1.0 {
        return Err(Error::usage("mean block length must be at least 1"));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::usage("confidence must lie in (0, 1)"));
    }
    let mut warnings = Vec::new();
    let usable: Vec<&[f64]> = series_set
        .iter()
        .filter_map(|s| {
            if s.len() >= 2 {
                Some(s.as_slice())
            } else {
                None
            }
        })
        .collect();
    let skipped = series_set.len() - usable.len();
    if skipped > 0 {
        warnings.push(format!("skipped {skipped} series shorter than 2 observations"));
    }
    if usable.is_empty() {
        return Err(Error::data("no usable return series"));
    }

    // Cumulative lengths for uniform start draws across all observations.
    let mut cum = Vec::with_capacity(usable.len() + 1);
    cum.push(0usize);
    for s in &usable {
        cum.push(cum.last().unwrap() + s.len());
    }
    let n = *cum.last().unwrap();
    let observed: f64 = usable.iter().flat_map(|s| s.iter()).sum::<f64>() / n as f64;
    let p_restart = 1.0 / mean_block_length;

    let means: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let mut sum = 0.0;
            let mut taken = 0usize;
            while taken < n {
                let start = rng.gen_range(0..n);
                let series_idx = cum.partition_point(|&c| c <= start) - 1;
                let series = usable[series_idx];
                let offset = start - cum[series_idx];
                let len = geometric_length(&mut rng, p_restart)
                    .min(series.len() - offset)
                    .min(n - taken);
                sum += series[offset..offset + len].iter().sum::<f64>();
                taken += len;
            }
            sum / n as f64
        })
        .collect();

    let boot_mean = means.iter().sum::<f64>() / replicates as f64;
    let boot_se = (means.iter().map(|m| (m - boot_mean).powi(2)).sum::<f64>()
        / (replicates - 1) as f64)
        .sqrt();
    if boot_se == 0.0 {
        // Degenerate sample (e.g. constant series): the interval collapses.
        return Ok(TestReport {
            method: "block-bootstrap".to_string(),
            n,
            sample_mean: observed,
            standard_error: 0.0,
            confidence,
            ci_low: observed,
            ci_high: observed,
            statistic: f64::NAN,
            p_value: if observed > 0.0 { 0.0 } else { 1.0 },
            replicates: Some(replicates),
            mean_block_length: Some(mean_block_length),
            warnings,
        });
    }
    let alpha = 1.0 - confidence;
    let ci_low = quantile_lower(&means, alpha / 2.0);
    let ci_high = quantile_lower(&means, 1.0 - alpha / 2.0);
    let exceed = means.iter().filter(|&&m| m - observed >= observed).count();
    Ok(TestReport {
        method: "block-bootstrap".to_string(),
        n,
        sample_mean: observed,
        standard_error: boot_se,
        confidence,
        ci_low,
        ci_high,
        statistic: observed / boot_se,
        p_value: exceed as f64 / replicates as f64,
        replicates: Some(replicates),
        mean_block_length: Some(mean_block_length),
        warnings,
    })
}

// ============================================================================
// Index-level test
// ============================================================================

/// Test one index against a benchmark index: the candidate is divided by
/// the benchmark on their common dates and the single benchmarked return
/// series goes through the Z-test.
pub fn index_vs_index_test(
    candidate: &IndexPath,
    benchmark: &IndexPath,
    confidence: f64,
) -> Result<TestReport> {
    let common: std::collections::BTreeSet<chrono::NaiveDate> = candidate
        .dates
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .intersection(&benchmark.dates.iter().copied().collect())
        .copied()
        .collect();
    if common.len() < 3 {
        return Err(Error::data("common span too short for an index test"));
    }
    let restrict = |p: &IndexPath| IndexPath {
        scheme_name: p.scheme_name.clone(),
        tc_rate: p.tc_rate,
        dates: p.dates.iter().copied().filter(|d| common.contains(d)).collect(),
        values: p
            .dates
            .iter()
            .zip(&p.values)
            .filter(|(d, _)| common.contains(d))
            .map(|(_, &v)| v)
            .collect(),
    };
    let series = benchmark_series(&restrict(candidate), &restrict(benchmark))?;
    let sample = ReturnSample {
        observations: series.returns.iter().map(|r| r * ANNUALIZATION).collect(),
        source: benchmark.scheme_name.clone(),
    };
    z_test_nonpositive_mean(&sample, confidence)
}

// ============================================================================
// Report files
// ============================================================================

/// A report labeled with the benchmarked entity it tests.
#[derive(Debug, Clone, Serialize)]
pub struct LabeledReport {
    pub benchmark: String,
    #[serde(flatten)]
    pub report: TestReport,
}

pub fn write_test_reports_json(path: &Path, reports: &[LabeledReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// CSV layout: benchmark, mean, SE, LCI, UCI, statistic, p.
pub fn write_test_reports_csv(path: &Path, reports: &[LabeledReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["benchmark", "mean", "SE", "LCI", "UCI", "statistic", "p"])
        .map_err(|e| Error::csv(path, e))?;
    for r in reports {
        let t = &r.report;
        w.write_record([
            r.benchmark.clone(),
            format!("{}", t.sample_mean),
            format!("{}", t.standard_error),
            format!("{}", t.ci_low),
            format!("{}", t.ci_high),
            format!("{}", t.statistic),
            format!("{}", t.p_value),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Classification;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn daily_dates(n: usize) -> Vec<NaiveDate> {
        (0..n).map(|i| d("2000-01-03") + chrono::Duration::days(i as i64)).collect()
    }

    fn path_of(values: Vec<f64>) -> IndexPath {
        IndexPath {
            scheme_name: "HWI".into(),
            tc_rate: 0.0,
            dates: daily_dates(values.len()),
            values,
        }
    }

    fn stock(id: &str, dates: &[NaiveDate], prices: Vec<f64>) -> StockRecord {
        StockRecord {
            id: id.to_string(),
            classification: Classification {
                region: "R".into(),
                country: "C".into(),
                supersector: "G".into(),
                sector: "G".into(),
                subsector: "G".into(),
            },
            dates: dates.to_vec(),
            market_values: vec![1.0; dates.len()],
            prices,
        }
    }

    #[test]
    fn stock_identical_to_benchmark_pools_zeros() {
        let bench = path_of(vec![100.0, 103.0, 99.0, 104.0]);
        let rec = stock("a", &bench.dates, bench.values.clone());
        let sample = pool_benchmarked_returns(&[rec], &bench).unwrap();
        assert_eq!(sample.n(), 3);
        assert!(sample.observations.iter().all(|&x| x.abs() < 1e-10));
    }

    #[test]
    fn pooled_count_is_pairs_times_stocks() {
        let bench = path_of(vec![100.0, 101.0, 102.0, 103.0]);
        let records: Vec<StockRecord> = (0..3)
            .map(|i| stock(&format!("s{i}"), &bench.dates, vec![10.0, 11.0, 10.5, 12.0]))
            .collect();
        let sample = pool_benchmarked_returns(&records, &bench).unwrap();
        assert_eq!(sample.n(), 9);
    }

    #[test]
    fn death_truncates_a_stock_sample() {
        let bench = path_of(vec![100.0, 101.0, 102.0, 103.0]);
        let short = stock("a", &bench.dates[..2], vec![10.0, 11.0]);
        let long = stock("b", &bench.dates, vec![10.0, 11.0, 10.5, 12.0]);
        let sample = pool_benchmarked_returns(&[short, long], &bench).unwrap();
        assert_eq!(sample.n(), 1 + 3);
    }

    #[test]
    fn zero_mean_sample_has_p_one_half() {
        let sample = ReturnSample {
            observations: vec![-1.0, 1.0, -2.0, 2.0, -0.5, 0.5],
            source: "HWI".into(),
        };
        let report = z_test_nonpositive_mean(&sample, 0.99).unwrap();
        assert_relative_eq!(report.p_value, 0.5, max_relative = 1e-12);
        assert_eq!(report.statistic, 0.0);
    }

    #[test]
    fn published_scale_moments_reproduce_their_statistics() {
        // Large positive mean: the market-cap index is rejected loudly.
        let r = TestReport::from_moments(3.504079, 0.142278, 31_472_596, 0.99).unwrap();
        assert_relative_eq!(r.statistic, 24.628, epsilon = 5e-4);
        assert!(r.p_value < 1e-12);
        // Clearly negative mean: cannot reject nonpositivity.
        let r = TestReport::from_moments(-1.671584, 0.141828, 31_472_596, 0.99).unwrap();
        assert_relative_eq!(r.statistic, -11.786, epsilon = 5e-4);
        assert!(r.p_value > 1.0 - 1e-12);
        assert!(r.ci_low <= r.sample_mean && r.sample_mean <= r.ci_high);
    }

    #[test]
    fn shifting_observations_up_raises_the_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let shifted: Vec<f64> = base.iter().map(|x| x + 0.2).collect();
        let z0 = z_test_nonpositive_mean(
            &ReturnSample { observations: base, source: "x".into() },
            0.99,
        )
        .unwrap();
        let z1 = z_test_nonpositive_mean(
            &ReturnSample { observations: shifted, source: "x".into() },
            0.99,
        )
        .unwrap();
        assert!(z1.statistic > z0.statistic);
    }

    #[test]
    fn z_test_size_is_controlled_under_iid_nulls() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 1000;
        let mut rejections = 0;
        for _ in 0..trials {
            let obs: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let report = z_test_nonpositive_mean(
                &ReturnSample { observations: obs, source: "null".into() },
                0.99,
            )
            .unwrap();
            if report.p_value < 0.01 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!((0.002..=0.03).contains(&rate), "rejection rate {rate}");
    }

    #[test]
    fn constant_series_collapse_the_bootstrap_interval() {
        let report =
            block_bootstrap_test(&[vec![2.5; 50], vec![2.5; 30]], 200, 5.0, 0.95, 1).unwrap();
        assert_eq!(report.ci_low, 2.5);
        assert_eq!(report.ci_high, 2.5);
        assert_relative_eq!(report.sample_mean, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let series: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..60).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let a = block_bootstrap_test(&series, 300, 10.0, 0.95, 99).unwrap();
        let b = block_bootstrap_test(&series, 300, 10.0, 0.95, 99).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = block_bootstrap_test(&series, 300, 10.0, 0.95, 100).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn unit_blocks_reproduce_the_iid_interval_width() {
        let norm = Normal::new(0.0, 1.0).unwrap();
        let mut width_ratio_sum = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let obs: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            let sd = (obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (obs.len() - 1) as f64)
                .sqrt();
            let z = norm.inverse_cdf(0.975);
            let iid_width = 2.0 * z * sd / (obs.len() as f64).sqrt();
            let report = block_bootstrap_test(&[obs], 1000, 1.0, 0.95, seed).unwrap();
            width_ratio_sum += (report.ci_high - report.ci_low) / iid_width;
        }
        let avg_ratio = width_ratio_sum / seeds as f64;
        assert!((avg_ratio - 1.0).abs() <= 0.15, "width ratio {avg_ratio}");
    }

    #[test]
    fn short_series_are_skipped_with_a_warning() {
        let report =
            block_bootstrap_test(&[vec![1.0], vec![0.5, 1.5, 0.5, 1.5]], 200, 2.0, 0.95, 7)
                .unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("skipped 1")));
        assert_eq!(report.n, 4);
    }

    #[test]
    fn identical_indexes_cannot_be_tested() {
        let a = path_of(vec![100.0, 101.0, 103.0, 102.0, 105.0]);
        let err = index_vs_index_test(&a, &a, 0.99).unwrap_err();
        assert!(err.to_string().contains("identical"), "{err}");
    }

    #[test]
    fn tilted_candidate_is_rejected() {
        let n = 2520;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bench = vec![100.0];
        for _ in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            bench.push(bench.last().unwrap() * (1.0 + 0.01 * z / (252.0f64).sqrt()));
        }
        let tilt: Vec<f64> = bench
            .iter()
            .enumerate()
            .map(|(t, &v)| v * (0.05 * t as f64 / 252.0).exp())
            .collect();
        let report = index_vs_index_test(&path_of(tilt), &path_of(bench), 0.99).unwrap();
        assert!(report.p_value < 0.01, "p = {}", report.p_value);
        assert!(report.statistic > 0.0);
    }

    #[test]
    fn report_csv_has_table_shape() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("report.csv");
        let report = TestReport::from_moments(-1.5, 0.14, 1000, 0.99).unwrap();
        write_test_reports_csv(
            &file,
            &[LabeledReport { benchmark: "HWI-TC".into(), report }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "benchmark,mean,SE,LCI,UCI,statistic,p");
        assert!(lines.next().unwrap().starts_with("HWI-TC,-1.5,"));
    }
}

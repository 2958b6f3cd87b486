//! Growth-optimal portfolio: the bordered linear system, GP dynamics, and
//! benchmarked (GP-denominated) value series.
//!
//! For a market with instantaneous expected returns `a` (per year) and
//! volatility matrix `b` (stocks x drivers, per sqrt-year), the
//! growth-optimal weights solve
//!
//! ```text
//! [ b bᵀ  1 ] [ pi ]   [ a ]
//! [ 1ᵀ    0 ] [ la ] = [ 1 ]
//! ```
//!
//! with market price of risk theta = bᵀ pi. The GP value then follows
//! dV/V = la dt + thetaᵀ(theta dt + dW). Denominating any self-financing
//! portfolio in units of the GP removes its drift, which is what the
//! efficiency tests exploit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::IndexPath;

// ============================================================================
// Types
// ============================================================================

/// Instantaneous market coefficients: expected returns and volatilities.
#[derive(Debug, Clone)]
pub struct MarketCoefficients {
    /// Expected return per stock, per year.
    pub a: Vec<f64>,
    /// Volatility loadings, one row per stock, one column per driver.
    pub b: DMatrix<f64>,
}

impl MarketCoefficients {
    pub fn new(a: Vec<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.len() != b.nrows() {
            return Err(Error::usage(format!(
                "{} expected returns for {} volatility rows",
                a.len(),
                b.nrows()
            )));
        }
        if a.is_empty() {
            return Err(Error::usage("market must contain at least one stock"));
        }
        Ok(MarketCoefficients { a, b })
    }

    pub fn n_stocks(&self) -> usize {
        self.a.len()
    }

    pub fn n_drivers(&self) -> usize {
        self.b.ncols()
    }
}

/// Solution of the growth-optimal weight system.
#[derive(Debug, Clone, Serialize)]
pub struct GpSolution {
    /// Optimal weights; they sum to one.
    pub pi_star: Vec<f64>,
    /// Multiplier on the budget constraint (the short rate when a riskless
    /// asset is spanned).
    pub lambda: f64,
    /// Market price of risk, bᵀ pi_star.
    pub theta: Vec<f64>,
    /// Max-norm residual of the bordered system at the returned solution.
    pub residual: f64,
    /// True when the system was singular and the minimum-norm solution was
    /// selected via a rank-revealing decomposition.
    pub min_norm: bool,
}

/// A value series divided by a benchmark, with its simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkedSeries {
    pub dates: Vec<chrono::NaiveDate>,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
}

// ============================================================================
// Solver
// ============================================================================

fn bordered_system(coeffs: &MarketCoefficients) -> (DMatrix<f64>, DVector<f64>) {
    let m = coeffs.n_stocks();
    let bbt = &coeffs.b * coeffs.b.transpose();
    let mut mat = DMatrix::zeros(m + 1, m + 1);
    mat.view_mut((0, 0), (m, m)).copy_from(&bbt);
    for j in 0..m {
        mat[(j, m)] = 1.0;
        mat[(m, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    for j in 0..m {
        rhs[j] = coeffs.a[j];
    }
    rhs[m] = 1.0;
    (mat, rhs)
}

/// Solve for the growth-optimal weights.
///
/// The bordered system is solved by one LU factorization. When it is
/// singular the weights are not unique; the minimum-norm representative is
/// returned instead (flagged on the solution), and an inconsistent system
/// is an error carrying a condition estimate.
pub fn solve_gp(coeffs: &MarketCoefficients) -> Result<GpSolution> {
    let m = coeffs.n_stocks();
    let (mat, rhs) = bordered_system(coeffs);

    let residual_of = |x: &DVector<f64>| -> f64 {
        (&mat * x - &rhs).amax()
    };
    let scale = rhs.amax().max(1.0);

    let lu_solution = mat.clone().lu().solve(&rhs).filter(|x| {
        x.iter().all(|v| v.is_finite()) && residual_of(x) <= 1e-9 * scale
    });
    let (x, min_norm) = match lu_solution {
        Some(x) => (x, false),
        None => {
            let svd = mat.clone().svd(true, true);
            let sigma_max = svd.singular_values.max();
            let x = svd
                .solve(&rhs, sigma_max * 1e-12)
                .map_err(|e| Error::numerical(format!("bordered system: {e}")))?;
            let res = residual_of(&x);
            if res > 1e-8 * scale {
                let sigma_min = svd.singular_values.min();
                let cond = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
                return Err(Error::numerical(format!(
                    "bordered system inconsistent: residual {res:.3e}, condition {cond:.3e}"
                )));
            }
            (x, true)
        }
    };

    let pi = DVector::from_iterator(m, x.iter().take(m).copied());
    let lambda = x[m];
    let theta = coeffs.b.transpose() * &pi;
    Ok(GpSolution {
        pi_star: pi.iter().copied().collect(),
        lambda,
        theta: theta.iter().copied().collect(),
        residual: residual_of(&x),
        min_norm,
    })
}

// ============================================================================
// Dynamics
// ============================================================================

/// One Euler increment of the GP value: lambda dt + thetaᵀ(theta dt + dW),
/// as a fractional return.
pub fn gp_increment(sol: &GpSolution, dw: &[f64], dt: f64) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::usage("dt must be positive"));
    }
    if dw.len() != sol.theta.len() {
        return Err(Error::usage(format!(
            "{} driver increments for {} risk prices",
            dw.len(),
            sol.theta.len()
        )));
    }
    let mut ret = sol.lambda * dt;
    for (&th, &dwk) in sol.theta.iter().zip(dw) {
        ret += th * (th * dt + dwk);
    }
    Ok(ret)
}

// ============================================================================
// Benchmarking
// ============================================================================

/// Divide a value path by a benchmark path observed on the same dates.
pub fn benchmark_series(numerator: &IndexPath, benchmark: &IndexPath) -> Result<BenchmarkedSeries> {
    if numerator.dates != benchmark.dates {
        return Err(Error::data(format!(
            "benchmark dates differ from numerator dates ({} vs {} observations)",
            benchmark.dates.len(),
            numerator.dates.len()
        )));
    }
    if benchmark.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::numerical("benchmark has nonpositive values"));
    }
    let values: Vec<f64> = numerator
        .values
        .iter()
        .zip(&benchmark.values)
        .map(|(&n, &b)| n / b)
        .collect();
    let returns = values.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    Ok(BenchmarkedSeries { dates: numerator.dates.clone(), values, returns })
}

/// Write a solution to JSON.
pub fn write_gp_solution(path: &std::path::Path, sol: &GpSolution) -> Result<()> {
    let text = serde_json::to_string_pretty(sol)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

// ============================================================================
// Tests
// ============================================================================

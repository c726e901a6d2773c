//! Convergence-bound constants and cross-seed trace statistics.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::objectives::ObjectiveEnsemble;
use crate::protocol::RoundTrace;
use crate::scalar::Scalar;
use crate::topology::ConnectivityGraph;
use crate::weights::{variance_objective, RelayWeights, WeightsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("strong-convexity constant must be positive, got {0}")]
    NonpositiveMu(f64),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("bound only holds for r >= r0 = {r0}, got r = {r}")]
    BelowR0 { r: usize, r0: f64 },
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("no trace records to summarize")]
    EmptyTraces,
    #[error("variant {variant}: {detail}")]
    MismatchedTraces { variant: String, detail: String },
}

/// Constants of the expected-suboptimality bound for a given relay matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremConstants<T> {
    pub b: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub r0: T,
    pub s: T,
    pub mu: T,
    pub l_smooth: T,
    pub sigma: T,
    pub n: usize,
    pub local_steps: usize,
}

impl<T: Scalar> TheoremConstants<T> {
    /// ```text
    /// B  = 2 L² S / n²
    /// C1 = (16/μ²) · 2σ² S / n²
    /// C2 = (16/μ²) · L² σ² e / n
    /// C3 = (256/μ⁴) · (L² σ² e + 2 L² σ² e S / n²)
    /// r0 = max{ L/μ, 4 (B/μ² + 1), 1/T, 4n / (μ² T) }
    /// ```
    pub fn from_parts(mu: T, l_smooth: T, sigma: T, n: usize, local_steps: usize, s: T) -> Result<Self, AnalysisError> {
        if !(mu > T::zero()) {
            return Err(AnalysisError::NonpositiveMu(mu.as_f64()));
        }
        if n == 0 {
            return Err(AnalysisError::ZeroCount("n"));
        }
        if local_steps == 0 {
            return Err(AnalysisError::ZeroCount("local_steps"));
        }
        if !(s >= T::zero()) || !(sigma >= T::zero()) || !(l_smooth >= T::zero()) {
            return Err(AnalysisError::Invalid("S, sigma and L must be nonnegative".into()));
        }
        let e = T::lit(std::f64::consts::E);
        let nf = T::from_count(n);
        let tf = T::from_count(local_steps);
        let n2 = nf * nf;
        let mu2 = mu * mu;
        let l2 = l_smooth * l_smooth;
        let s2 = sigma * sigma;

        let b = T::lit(2.0) * l2 * s / n2;
        let c1 = T::lit(16.0) / mu2 * (T::lit(2.0) * s2 / n2) * s;
        let c2 = T::lit(16.0) / mu2 * l2 * (s2 / nf) * e;
        let c3 = T::lit(256.0) / (mu2 * mu2) * (l2 * s2 * e + T::lit(2.0) * l2 * s2 * e / n2 * s);
        let r0 = (l_smooth / mu)
            .max(T::lit(4.0) * (b / mu2 + T::one()))
            .max(T::one() / tf)
            .max(T::lit(4.0) * nf / (mu2 * tf));
        Ok(Self { b, c1, c2, c3, r0, s, mu, l_smooth, sigma, n, local_steps })
    }

    /// Smallest integer round at which the bound applies.
    pub fn first_round(&self) -> usize {
        self.r0.ceil().to_usize().unwrap_or(usize::MAX)
    }
}

/// Constants for an ensemble, a graph, and relay weights `A`.
pub fn theorem_constants<T: Scalar>(
    ens: &ObjectiveEnsemble<T>,
    g: &ConnectivityGraph<T>,
    a: &RelayWeights<T>,
    local_steps: usize,
) -> Result<TheoremConstants<T>, AnalysisError> {
    if a.n() != g.n() {
        return Err(WeightsError::Shape { expected: g.n(), got: a.n() }.into());
    }
    let s = variance_objective(g, a);
    TheoremConstants::from_parts(ens.mu(), ens.l_smooth(), ens.sigma(), g.n(), local_steps, s)
}

/// Bound on `E‖x^(r+1) - x*‖²` for `r ≥ r0`:
///
/// ```text
/// (r0 T + 1)/(r T + 1)² · gap₀ + C1 T/(r T + 1) + C2 (T - 1)²/(r T + 1) + C3 T/(r T + 1)²
/// ```
pub fn theorem_bound<T: Scalar>(c: &TheoremConstants<T>, init_gap: T, r: usize) -> Result<T, AnalysisError> {
    if !(init_gap >= T::zero()) {
        return Err(AnalysisError::Invalid(format!("initial gap must be nonnegative, got {init_gap}")));
    }
    let rf = T::from_count(r);
    if rf < c.r0 {
        return Err(AnalysisError::BelowR0 { r, r0: c.r0.as_f64() });
    }
    let tf = T::from_count(c.local_steps);
    let denom = rf * tf + T::one();
    let drift = (tf - T::one()) * (tf - T::one());
    Ok((c.r0 * tf + T::one()) / (denom * denom) * init_gap
        + c.c1 * tf / denom
        + c.c2 * drift / denom
        + c.c3 * tf / (denom * denom))
}

/// Cross-seed statistics for one `(variant, r)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub r: usize,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Least-squares fit of `ln(mean) = intercept + slope · ln(r + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub variant: String,
    pub r_from: usize,
    pub r_to: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub slopes: Vec<SlopeFit>,
}

impl Summary {
    pub fn rows_for<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |row| row.variant == variant)
    }

    /// Row for the last recorded round of `variant`.
    pub fn final_row(&self, variant: &str) -> Option<&SummaryRow> {
        self.rows.iter().filter(|row| row.variant == variant).max_by_key(|row| row.r)
    }

    pub fn slope(&self, variant: &str) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.variant == variant)
    }
}

/// Which rounds enter the log-log slope fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeWindow {
    /// Rounds `r` with `r + 1 ≥ (R + 1) / 10`, `R` the last recorded round.
    FinalDecade,
    /// Inclusive round range.
    Rounds { from: usize, to: usize },
}

const Z_95: f64 = 1.959_963_984_540_054;

/// Mean and standard error (sample standard deviation over `√k`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Groups records by variant label and round; every seed of a variant must
/// cover the same rounds exactly once.
pub fn summarize<T: Scalar>(traces: &[RoundTrace<T>], window: SlopeWindow) -> Result<Summary, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::EmptyTraces);
    }
    // variant -> seed -> r -> value
    let mut grouped: BTreeMap<&str, BTreeMap<u64, BTreeMap<usize, f64>>> = BTreeMap::new();
    for rec in traces {
        let by_round = grouped.entry(rec.variant.as_str()).or_default().entry(rec.seed).or_default();
        if by_round.insert(rec.r, rec.suboptimality.as_f64()).is_some() {
            return Err(AnalysisError::MismatchedTraces {
                variant: rec.variant.clone(),
                detail: format!("seed {} has round {} twice", rec.seed, rec.r),
            });
        }
    }

    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (variant, seeds) in grouped {
        let mut iter = seeds.iter();
        let (&first_seed, first) = iter.next().expect("nonempty group");
        for (seed, rounds) in iter {
            if rounds.len() != first.len() || !rounds.keys().eq(first.keys()) {
                return Err(AnalysisError::MismatchedTraces {
                    variant: variant.to_string(),
                    detail: format!("seed {seed} covers different rounds than seed {first_seed}"),
                });
            }
        }
        let mut means = Vec::with_capacity(first.len());
        for &r in first.keys() {
            let values: Vec<f64> = seeds.values().map(|m| m[&r]).collect();
            let (mean, stderr) = mean_stderr(&values);
            rows.push(SummaryRow {
                variant: variant.to_string(),
                r,
                seeds: values.len(),
                mean,
                stderr,
                ci_low: mean - Z_95 * stderr,
                ci_high: mean + Z_95 * stderr,
            });
            means.push((r, mean));
        }

        let last = means.last().map(|&(r, _)| r).unwrap_or(0);
        let (from, to) = match window {
            SlopeWindow::FinalDecade => (((last + 1) as f64 / 10.0).ceil() as usize - 1, last),
            SlopeWindow::Rounds { from, to } => (from, to),
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = means
            .iter()
            .filter(|&&(r, m)| r >= from && r <= to && m > 0.0)
            .map(|&(r, m)| (((r + 1) as f64).ln(), m.ln()))
            .unzip();
        if let Some((slope, intercept)) = linear_fit(&xs, &ys) {
            slopes.push(SlopeFit { variant: variant.to_string(), r_from: from, r_to: to, slope, intercept });
        }
    }
    Ok(Summary { rows, slopes })
}

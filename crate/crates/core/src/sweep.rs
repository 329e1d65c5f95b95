//! Noise-strength sweeps and the decay-versus-plateau trend classifier.
//!
//! A sweep evaluates the stationary filtering error at decreasing noise levels.
//! The trend is then compared against the algebraic verdict: a decaying
//! column should accompany maximal accuracy, a plateau its absence.

use serde::Serialize;

use crate::verdict::Verdict;

/// Minimum log-log slope for a decaying column.
pub const DECAY_MIN_SLOPE: f64 = 0.5;
/// A decaying column must end below this fraction of the reference variance.
pub const DECAY_FINAL_FRACTION: f64 = 0.05;
/// A plateau must stay above this fraction of the reference variance.
pub const PLATEAU_MIN_FRACTION: f64 = 0.1;
/// Deterministic rows (no standard error) plateau when the last two differ by less than this, relatively.
pub const PLATEAU_DETERMINISTIC_RTOL: f64 = 0.05;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

/// One noise level of a sweep. Monte-Carlo rows carry the simulation settings;
/// Riccati rows leave them empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub trials: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub burn_in: Option<f64>,
    pub status: RowStatus,
}

impl SweepRow {
    pub fn deterministic(kappa: f64, value: f64) -> Self {
        Self {
            kappa,
            estimate: Some(value),
            std_error: None,
            trials: None,
            horizon: None,
            dt: None,
            burn_in: None,
            status: RowStatus::Ok,
        }
    }

    pub fn failed(kappa: f64, message: String) -> Self {
        Self {
            kappa,
            estimate: None,
            std_error: None,
            trials: None,
            horizon: None,
            dt: None,
            burn_in: None,
            status: RowStatus::Failed(message),
        }
    }

    /// Half-width of the 95% confidence interval, if the row is stochastic.
    pub fn ci_half_width(&self) -> Option<f64> {
        self.std_error.map(|s| Z95 * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Trend {
    Decays,
    Plateau,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Consistency {
    Consistent,
    Inconsistent,
    Undecided,
}

impl std::fmt::Display for Consistency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Consistency::Consistent => "CONSISTENT",
            Consistency::Inconsistent => "INCONSISTENT",
            Consistency::Undecided => "UNDECIDED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// Rows in descending kappa order.
    pub rows: Vec<SweepRow>,
    pub verdict_reference: Verdict,
    /// Error of the trivial estimator (prior variance), the scale for the trend thresholds.
    pub reference_variance: f64,
    /// Least-squares slope of log(estimate) against log(kappa), when defined.
    pub slope: Option<f64>,
    pub trend: Trend,
    pub flag: Consistency,
    pub notes: Vec<String>,
}

/// Slope of the least-squares line through `(ln x, ln y)`; needs two distinct x and positive y.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Trend of a sweep, rows in descending kappa order.
///
/// Decays: log-log slope above 0.5 and final estimate below 5% of the
/// reference variance. Plateau: the two smallest-kappa estimates agree
/// (within twice the 95% CI of their difference, or 5% relative for
/// deterministic rows) and stay above 10% of the reference variance.
pub fn classify_trend(rows: &[SweepRow], reference_variance: f64) -> (Trend, Option<f64>) {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == RowStatus::Ok && r.estimate.is_some()).collect();
    if ok.len() < 2 || !(reference_variance > 0.0) {
        return (Trend::Undecided, None);
    }
    let points: Vec<(f64, f64)> = ok.iter().map(|r| (r.kappa, r.estimate.unwrap())).collect();
    let slope = log_log_slope(&points);
    let last = ok[ok.len() - 1];
    let prev = ok[ok.len() - 2];
    let final_est = last.estimate.unwrap();
    let prev_est = prev.estimate.unwrap();

    let decays = final_est <= 0.0 || slope.is_some_and(|s| s > DECAY_MIN_SLOPE);
    if decays && final_est < DECAY_FINAL_FRACTION * reference_variance {
        return (Trend::Decays, slope);
    }
    let agree = match (last.std_error, prev.std_error) {
        (Some(a), Some(b)) => (final_est - prev_est).abs() <= 2.0 * Z95 * (a * a + b * b).sqrt(),
        _ => (final_est - prev_est).abs() <= PLATEAU_DETERMINISTIC_RTOL * final_est.abs().max(prev_est.abs()),
    };
    if agree && final_est > PLATEAU_MIN_FRACTION * reference_variance {
        return (Trend::Plateau, slope);
    }
    (Trend::Undecided, slope)
}

pub fn consistency(trend: Trend, verdict: &Verdict) -> Consistency {
    if !verdict.decided {
        return Consistency::Undecided;
    }
    match (trend, verdict.maximal_accuracy) {
        (Trend::Decays, true) | (Trend::Plateau, false) => Consistency::Consistent,
        (Trend::Decays, false) | (Trend::Plateau, true) => Consistency::Inconsistent,
        (Trend::Undecided, _) => Consistency::Undecided,
    }
}

/// Packages rows with their trend and the consistency flag against `verdict`.
pub fn classify_sweep(rows: Vec<SweepRow>, verdict: Verdict, reference_variance: f64) -> SweepResult {
    let (trend, slope) = classify_trend(&rows, reference_variance);
    let flag = consistency(trend, &verdict);
    let mut notes = Vec::new();
    let failed = rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    if failed > 0 {
        notes.push(format!("{failed} row(s) failed"));
    }
    if !(reference_variance > 0.0) {
        notes.push("reference variance is zero: the error functional is degenerate".into());
    }
    SweepResult { rows, verdict_reference: verdict, reference_variance, slope, trend, flag, notes }
}

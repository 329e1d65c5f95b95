//! Emitted artifacts: JSON report bundles, sweep CSV tables and SVG charts.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use maxacc::sweep::RowStatus;
use maxacc::{SweepResult, Verdict};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::model_file::ModelFile;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 8] = ["kappa", "estimate", "std_error", "trials", "horizon", "dt", "burn_in", "flag"];

/// JSON schema that every emitted bundle satisfies.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// SHA-256 of the model's canonical serialization, as lowercase hex.
pub fn model_hash(file: &ModelFile) -> String {
    let digest = Sha256::digest(file.to_json_string().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub model_path: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch when the bundle was produced.
    pub created_unix: u64,
}

impl Provenance {
    pub fn new(command: &str, model_path: &str, seed: Option<u64>) -> Self {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            model_path: model_path.to_string(),
            seed,
            created_unix,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct HashedVerdict<'a> {
    pub model_hash: &'a str,
    #[serde(flatten)]
    pub verdict: &'a Verdict,
}

#[derive(Debug, Serialize)]
pub struct HashedSweep<'a> {
    pub model_hash: &'a str,
    #[serde(flatten)]
    pub sweep: &'a SweepResult,
}

/// Everything one command produced, tied to the model by its hash.
#[derive(Debug, Serialize)]
pub struct ReportBundle<'a> {
    pub schema_version: u32,
    pub model_hash: &'a str,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<HashedVerdict<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeros: Option<&'a maxacc::linear::ZeroReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_basis: Option<&'a [Vec<f64>]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reversed_generator: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<HashedSweep<'a>>,
}

impl<'a> ReportBundle<'a> {
    pub fn new(model_hash: &'a str, provenance: Provenance) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            model_hash,
            provenance,
            verdict: None,
            zeros: None,
            span_basis: None,
            reversed_generator: None,
            sweep: None,
        }
    }

    /// Attaches a verdict along with its zero report or span basis.
    pub fn with_verdict(mut self, verdict: &'a Verdict) -> Self {
        self.zeros = verdict.zeros.as_ref();
        self.span_basis = verdict.reconstructibility.as_ref().map(|r| r.basis.as_slice());
        self.verdict = Some(HashedVerdict { model_hash: self.model_hash, verdict });
        self
    }

    pub fn with_sweep(mut self, sweep: &'a SweepResult) -> Self {
        self = self.with_verdict(&sweep.verdict_reference);
        self.sweep = Some(HashedSweep { model_hash: self.model_hash, sweep });
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle values always serialize");
        s.push('\n');
        s
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

/// Sweep table as CSV. Riccati rows leave the Monte-Carlo columns empty;
/// failed rows carry `FAILED` in the flag column.
pub fn sweep_csv(result: &SweepResult) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    let flag = result.flag.to_string();
    for r in &result.rows {
        let row_flag = match r.status {
            RowStatus::Ok => flag.clone(),
            RowStatus::Failed(_) => "FAILED".to_string(),
        };
        w.write_record([
            num(r.kappa),
            opt(r.estimate, num),
            opt(r.std_error, num),
            opt(r.trials, |t| t.to_string()),
            opt(r.horizon, num),
            opt(r.dt, num),
            opt(r.burn_in, num),
            row_flag,
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub kappa: f64,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub flag: String,
}

/// Reads a sweep table written by [`sweep_csv`].
pub fn read_sweep_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| CliError::Parse { line: 1, column: 1, message: e.to_string() })?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(CliError::Schema {
            field: "header".into(),
            message: format!("expected columns {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Parse { line, column: 1, message: e.to_string() })?;
        let field = |c: usize| -> Result<Option<f64>, CliError> {
            let s = &rec[c];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| CliError::Schema {
                field: format!("row {line}, {}", CSV_HEADER[c]),
                message: format!("'{s}' is not a number"),
            })
        };
        let kappa = field(0)?
            .ok_or_else(|| CliError::Schema { field: format!("row {line}, kappa"), message: "missing value".into() })?;
        rows.push(CsvRow { kappa, estimate: field(1)?, std_error: field(2)?, flag: rec[7].to_string() });
    }
    Ok(rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

/// Decade-aligned log10 range covering `values`.
fn decades(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    Some((lo, if hi > lo { hi } else { lo + 1.0 }))
}

/// Log-log line chart of estimate against kappa with 95% interval bars.
pub fn render_svg(rows: &[CsvRow], title: &str) -> Result<String, CliError> {
    let pts: Vec<&CsvRow> = rows.iter().filter(|r| r.kappa > 0.0 && r.estimate.is_some_and(|e| e > 0.0)).collect();
    if pts.is_empty() {
        return Err(CliError::Usage("the sweep has no positive estimates to plot".into()));
    }
    let est = |r: &CsvRow| r.estimate.unwrap_or(0.0);
    let half = |r: &CsvRow| r.std_error.map_or(0.0, |s| maxacc::sweep::Z95 * s);
    let (x0, x1) = decades(pts.iter().map(|r| r.kappa)).expect("nonempty");
    let (y0, y1) = decades(pts.iter().flat_map(|r| {
        let lo = est(r) - half(r);
        [est(r) + half(r), if lo > 0.0 { lo } else { est(r) }]
    }))
    .expect("nonempty");
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |k: f64| MARGIN_L + (k.log10() - x0) / (x1 - x0) * pw;
    let sy = |v: f64| MARGIN_T + (y1 - v.max(10f64.powf(y0)).log10()) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ =
        writeln!(s, r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for e in (x0 as i32)..=(x1 as i32) {
        let x = sx(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{MARGIN_T}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{e}</text>"##,
            MARGIN_T + ph,
            MARGIN_T + ph + 18.0
        );
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let y = MARGIN_T + (y1 - e as f64) / (y1 - y0) * ph;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">kappa</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">stationary error</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0
    );

    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    let line: Vec<String> = sorted.iter().map(|r| format!("{:.2},{:.2}", sx(r.kappa), sy(est(r)))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##, line.join(" "));
    for r in &sorted {
        let (x, h) = (sx(r.kappa), half(r));
        if h > 0.0 {
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#1f5fa8"/>"##,
                sy(est(r) + h),
                sy(est(r) - h)
            );
        }
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="#1f5fa8"/>"##, sy(est(r)));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use maxacc::sweep::classify_sweep;
    use maxacc::SweepRow;

    fn verdict() -> Verdict {
        Verdict {
            family: maxacc::ModelFamily::LinearGaussian,
            maximal_accuracy: true,
            decided: true,
            invertibility: None,
            reconstructibility: None,
            zeros: None,
            analyzed_dimension: 1,
            notes: vec![],
        }
    }

    #[test]
    fn riccati_rows_leave_simulation_columns_empty() {
        let rows = vec![SweepRow::deterministic(0.5, 0.25), SweepRow::failed(0.1, "no".into())];
        let csv = sweep_csv(&classify_sweep(rows, verdict(), 1.0)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "kappa,estimate,std_error,trials,horizon,dt,burn_in,flag");
        assert!(lines[1].starts_with("0.5,0.25,,,,,,"));
        assert_eq!(lines[2], "0.1,,,,,,,FAILED");
    }

    #[test]
    fn csv_round_trips_numbers_exactly() {
        let x = 0.1 + 0.2;
        let rows = vec![SweepRow::deterministic(1e-7, x), SweepRow::deterministic(3.0, 1.0 / 3.0)];
        let csv = sweep_csv(&classify_sweep(rows, verdict(), 1.0)).unwrap();
        let back = read_sweep_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        let small = back.iter().find(|r| r.kappa == 1e-7).unwrap();
        assert_eq!(small.estimate, Some(x));
        assert!(back.iter().any(|r| r.estimate == Some(1.0 / 3.0)));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(read_sweep_csv("a,b\n1,2\n"), Err(CliError::Schema { .. })));
    }

    #[test]
    fn svg_has_one_marker_per_positive_row() {
        let rows = [(0.5, 0.2), (0.1, 0.05), (0.02, 0.004), (0.01, 0.0)].map(|(k, e)| CsvRow {
            kappa: k,
            estimate: Some(e),
            std_error: Some(1e-4),
            flag: "CONSISTENT".into(),
        });
        let svg = render_svg(&rows, "a < b").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a &lt; b"));
    }
}

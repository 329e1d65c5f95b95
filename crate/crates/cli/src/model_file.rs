//! Model files: one JSON document holding a single model family and an
//! optional simulation block.
//!
//! Numbers may be written as decimal strings (`"-0.25"`) or plain JSON
//! numbers. The original text is kept, so writing a parsed file back yields
//! the same decimal strings.

use std::fmt;

use maxacc::{FiniteStateModel, LinearError, LinearGaussianModel, MarkovError};
use nalgebra::DMatrix;
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u64 = 1;

/// A finite decimal together with the text it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Decimal {
    text: String,
    value: f64,
}

impl Decimal {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn from_f64(value: f64) -> Self {
        Self { text: format!("{value:?}"), value }
    }

    fn parse(v: &Value, field: &str) -> Result<Self, CliError> {
        let (text, value) = match v {
            Value::String(s) => {
                let value = s.parse::<f64>().map_err(|_| schema(field, format!("'{s}' is not a decimal number")))?;
                (s.clone(), value)
            }
            Value::Number(n) => {
                let value = n.as_f64().ok_or_else(|| schema(field, "number out of range"))?;
                (n.to_string(), value)
            }
            other => return Err(schema(field, format!("expected a number or decimal string, found {}", kind(other)))),
        };
        if !value.is_finite() {
            return Err(schema(field, format!("'{text}' is not finite")));
        }
        Ok(Self { text, value })
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Row-major matrix of decimals; every row has the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: Vec<Vec<Decimal>>,
}

impl Matrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| self.rows[i][j].value())
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self { rows: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| Decimal::from_f64(m[(i, j)])).collect()).collect() }
    }

    fn parse(v: &Value, field: &str) -> Result<Self, CliError> {
        let outer =
            v.as_array().ok_or_else(|| schema(field, format!("expected an array of rows, found {}", kind(v))))?;
        if outer.is_empty() {
            return Err(schema(field, "matrix has no rows"));
        }
        let mut rows = Vec::with_capacity(outer.len());
        for (i, r) in outer.iter().enumerate() {
            let path = format!("{field}[{i}]");
            let inner =
                r.as_array().ok_or_else(|| schema(&path, format!("expected a row array, found {}", kind(r))))?;
            let row = inner
                .iter()
                .enumerate()
                .map(|(j, x)| Decimal::parse(x, &format!("{path}[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            if row.is_empty() {
                return Err(schema(&path, "row is empty"));
            }
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(schema(&path, format!("row has {} entries, expected {first}", row.len())));
                }
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    fn to_value(&self) -> Value {
        Value::Array(
            self.rows.iter().map(|r| Value::Array(r.iter().map(|x| Value::String(x.text.clone())).collect())).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpec {
    pub d: usize,
    pub lambda: Matrix,
    /// `d x n` observation table.
    pub h: Matrix,
    /// `h` was written as a flat list (scalar observations).
    pub h_is_vector: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpec {
    pub a: Matrix,
    pub d: Matrix,
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Finite(FiniteSpec),
    LinearGaussian(LinearSpec),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimSpec {
    pub kappas: Option<Vec<Decimal>>,
    pub trials: Option<u64>,
    pub horizon: Option<Decimal>,
    pub dt: Option<Decimal>,
    pub burn_in: Option<Decimal>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub schema_version: u64,
    pub family: Family,
    pub sim: Option<SimSpec>,
}

fn schema(field: &str, message: impl Into<String>) -> CliError {
    CliError::Schema { field: field.to_string(), message: message.into() }
}

fn invariant(field: &str, message: impl Into<String>) -> CliError {
    CliError::ModelInvariant { field: field.to_string(), message: message.into() }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn object<'a>(v: &'a Value, field: &str) -> Result<&'a Map<String, Value>, CliError> {
    v.as_object().ok_or_else(|| schema(field, format!("expected an object, found {}", kind(v))))
}

fn check_keys(map: &Map<String, Value>, field: &str, allowed: &[&str]) -> Result<(), CliError> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => {
            let path = if field.is_empty() { k.clone() } else { format!("{field}.{k}") };
            Err(schema(&path, format!("unknown field (allowed: {})", allowed.join(", "))))
        }
        None => Ok(()),
    }
}

fn required<'a>(map: &'a Map<String, Value>, key: &str, field: &str) -> Result<&'a Value, CliError> {
    map.get(key).filter(|v| !v.is_null()).ok_or_else(|| schema(field, "missing required field"))
}

fn integer(v: &Value, field: &str) -> Result<u64, CliError> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.parse::<u64>().ok(),
        _ => None,
    }
    .ok_or_else(|| schema(field, format!("expected a non-negative integer, found {v}")))
}

fn optional<T>(
    map: &Map<String, Value>,
    key: &str,
    field: &str,
    parse: impl Fn(&Value, &str) -> Result<T, CliError>,
) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => parse(v, &format!("{field}.{key}")).map(Some),
    }
}

impl ModelFile {
    /// Parses and validates a model file's text. Field paths in errors use
    /// `family.matrix[row][col]` notation.
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let root: Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let file = Self::from_value(&root)?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read model file {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    fn from_value(root: &Value) -> Result<Self, CliError> {
        let map = object(root, "$")?;
        check_keys(map, "", &["schema_version", "type", "finite", "linear_gaussian", "sim"])?;
        let schema_version = integer(required(map, "schema_version", "schema_version")?, "schema_version")?;
        if schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {schema_version}, expected {SCHEMA_VERSION}"),
            ));
        }
        let ty = required(map, "type", "type")?
            .as_str()
            .ok_or_else(|| schema("type", "expected \"finite\" or \"linear_gaussian\""))?;
        let has = |k: &str| map.get(k).is_some_and(|v| !v.is_null());
        if has("finite") && has("linear_gaussian") {
            return Err(schema("finite", "both model families are populated; keep exactly one"));
        }
        let family = match ty {
            "finite" => {
                if has("linear_gaussian") {
                    return Err(schema("linear_gaussian", "type is \"finite\" but a linear_gaussian block is present"));
                }
                Family::Finite(parse_finite(required(map, "finite", "finite")?)?)
            }
            "linear_gaussian" => {
                if has("finite") {
                    return Err(schema("finite", "type is \"linear_gaussian\" but a finite block is present"));
                }
                Family::LinearGaussian(parse_linear(required(map, "linear_gaussian", "linear_gaussian")?)?)
            }
            other => return Err(schema("type", format!("unknown model type \"{other}\""))),
        };
        let sim = optional(map, "sim", "", |v, _| parse_sim(v))?;
        Ok(Self { schema_version, family, sim })
    }

    /// Checks the model invariants and builds the in-memory model.
    fn validate(&self) -> Result<(), CliError> {
        match &self.family {
            Family::Finite(_) => self.finite_model().map(|_| ()),
            Family::LinearGaussian(_) => self.linear_model().map(|_| ()),
        }?;
        if let Some(sim) = &self.sim {
            for (i, k) in sim.kappas.iter().flatten().enumerate() {
                if k.value() <= 0.0 {
                    return Err(invariant(&format!("sim.kappas[{i}]"), format!("kappa must be positive, got {k}")));
                }
            }
            if sim.trials.is_some_and(|t| t < 2) {
                return Err(invariant("sim.trials", "at least two trials are required"));
            }
            for (name, v) in [("horizon", &sim.horizon), ("dt", &sim.dt)] {
                if let Some(v) = v.as_ref().filter(|v| v.value() <= 0.0) {
                    return Err(invariant(&format!("sim.{name}"), format!("must be positive, got {v}")));
                }
            }
            if let Some(b) = sim.burn_in.as_ref().filter(|b| b.value() < 0.0) {
                return Err(invariant("sim.burn_in", format!("must be non-negative, got {b}")));
            }
        }
        Ok(())
    }

    pub fn finite_model(&self) -> Result<FiniteStateModel, CliError> {
        let Family::Finite(spec) = &self.family else {
            return Err(CliError::Usage("this command needs a finite model".into()));
        };
        let d = spec.d;
        if spec.lambda.nrows() != d || spec.lambda.ncols() != d {
            return Err(invariant(
                "finite.lambda",
                format!("expected {d}x{d}, found {}x{}", spec.lambda.nrows(), spec.lambda.ncols()),
            ));
        }
        if spec.h.nrows() != d {
            return Err(invariant("finite.h", format!("expected {d} rows, found {}", spec.h.nrows())));
        }
        for i in 0..d {
            let mut sum = 0.0;
            let mut scale = 1.0_f64;
            for j in 0..d {
                let v = spec.lambda.rows[i][j].value();
                if i != j && v < 0.0 {
                    return Err(invariant(
                        &format!("finite.lambda[{i}][{j}]"),
                        format!("off-diagonal rate {} is negative", spec.lambda.rows[i][j]),
                    ));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > maxacc::markov::ROW_SUM_TOL * scale {
                return Err(invariant(&format!("finite.lambda[{i}]"), format!("row sums to {sum}, not 0")));
            }
        }
        FiniteStateModel::new(spec.lambda.to_dmatrix(), spec.h.to_dmatrix()).map_err(|e| match e {
            MarkovError::NotUniqueStationary(_) => invariant("finite.lambda", e.to_string()),
            MarkovError::InvalidArgument(_) | MarkovError::DimensionMismatch(_) => invariant("finite.h", e.to_string()),
            other => invariant("finite.lambda", other.to_string()),
        })
    }

    pub fn linear_model(&self) -> Result<LinearGaussianModel, CliError> {
        let Family::LinearGaussian(spec) = &self.family else {
            return Err(CliError::Usage("this command needs a linear_gaussian model".into()));
        };
        let model =
            LinearGaussianModel::new(spec.a.to_dmatrix(), spec.d.to_dmatrix(), spec.h.to_dmatrix()).map_err(|e| {
                let field = match &e {
                    LinearError::RankDeficientDorH("D") => "linear_gaussian.D",
                    LinearError::RankDeficientDorH(_) => "linear_gaussian.H",
                    _ => "linear_gaussian",
                };
                invariant(field, e.to_string())
            })?;
        maxacc::linear::validate_model(&model).map_err(|e| invariant("linear_gaussian.A", e.to_string()))?;
        Ok(model)
    }

    /// Canonical JSON form; parsing it again gives an equal `ModelFile`.
    pub fn to_value(&self) -> Value {
        let mut root = Map::new();
        root.insert("schema_version".into(), Value::from(self.schema_version));
        match &self.family {
            Family::Finite(f) => {
                root.insert("type".into(), Value::from("finite"));
                let mut m = Map::new();
                m.insert("d".into(), Value::from(f.d));
                m.insert("lambda".into(), f.lambda.to_value());
                let h = if f.h_is_vector {
                    Value::Array(f.h.rows.iter().map(|r| Value::String(r[0].text.clone())).collect())
                } else {
                    f.h.to_value()
                };
                m.insert("h".into(), h);
                root.insert("finite".into(), Value::Object(m));
            }
            Family::LinearGaussian(l) => {
                root.insert("type".into(), Value::from("linear_gaussian"));
                let mut m = Map::new();
                m.insert("A".into(), l.a.to_value());
                m.insert("D".into(), l.d.to_value());
                m.insert("H".into(), l.h.to_value());
                root.insert("linear_gaussian".into(), Value::Object(m));
            }
        }
        if let Some(sim) = &self.sim {
            let mut m = Map::new();
            if let Some(k) = &sim.kappas {
                m.insert("kappas".into(), Value::Array(k.iter().map(|x| Value::String(x.text.clone())).collect()));
            }
            if let Some(t) = sim.trials {
                m.insert("trials".into(), Value::from(t));
            }
            for (name, v) in [("horizon", &sim.horizon), ("dt", &sim.dt), ("burn_in", &sim.burn_in)] {
                if let Some(v) = v {
                    m.insert(name.into(), Value::String(v.text.clone()));
                }
            }
            if let Some(s) = sim.seed {
                m.insert("seed".into(), Value::from(s));
            }
            root.insert("sim".into(), Value::Object(m));
        }
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("model values always serialize")
    }
}

fn parse_finite(v: &Value) -> Result<FiniteSpec, CliError> {
    let map = object(v, "finite")?;
    check_keys(map, "finite", &["d", "lambda", "h"])?;
    let d = integer(required(map, "d", "finite.d")?, "finite.d")? as usize;
    if d == 0 {
        return Err(invariant("finite.d", "a model needs at least one state"));
    }
    let lambda = Matrix::parse(required(map, "lambda", "finite.lambda")?, "finite.lambda")?;
    let hv = required(map, "h", "finite.h")?;
    let flat = hv.as_array().is_some_and(|a| a.iter().all(|x| !x.is_array()));
    let (h, h_is_vector) = if flat {
        let items = hv.as_array().expect("checked above");
        if items.is_empty() {
            return Err(schema("finite.h", "observation table is empty"));
        }
        let rows = items
            .iter()
            .enumerate()
            .map(|(i, x)| Decimal::parse(x, &format!("finite.h[{i}]")).map(|x| vec![x]))
            .collect::<Result<Vec<_>, _>>()?;
        (Matrix { rows }, true)
    } else {
        (Matrix::parse(hv, "finite.h")?, false)
    };
    Ok(FiniteSpec { d, lambda, h, h_is_vector })
}

fn parse_linear(v: &Value) -> Result<LinearSpec, CliError> {
    let map = object(v, "linear_gaussian")?;
    check_keys(map, "linear_gaussian", &["A", "D", "H"])?;
    let get = |k: &str| -> Result<Matrix, CliError> {
        let field = format!("linear_gaussian.{k}");
        Matrix::parse(required(map, k, &field)?, &field)
    };
    let (a, d, h) = (get("A")?, get("D")?, get("H")?);
    let p = a.nrows();
    if a.ncols() != p {
        return Err(invariant("linear_gaussian.A", format!("expected a square matrix, found {}x{}", p, a.ncols())));
    }
    if d.nrows() != p {
        return Err(invariant("linear_gaussian.D", format!("expected {p} rows, found {}", d.nrows())));
    }
    if h.ncols() != p {
        return Err(invariant("linear_gaussian.H", format!("expected {p} columns, found {}", h.ncols())));
    }
    Ok(LinearSpec { a, d, h })
}

fn parse_sim(v: &Value) -> Result<SimSpec, CliError> {
    let map = object(v, "sim")?;
    check_keys(map, "sim", &["kappas", "trials", "horizon", "dt", "burn_in", "seed"])?;
    let kappas = optional(map, "kappas", "sim", |v, field| {
        let items = v.as_array().ok_or_else(|| schema(field, "expected an array of numbers"))?;
        items.iter().enumerate().map(|(i, x)| Decimal::parse(x, &format!("{field}[{i}]"))).collect()
    })?;
    Ok(SimSpec {
        kappas,
        trials: optional(map, "trials", "sim", integer)?,
        horizon: optional(map, "horizon", "sim", Decimal::parse)?,
        dt: optional(map, "dt", "sim", Decimal::parse)?,
        burn_in: optional(map, "burn_in", "sim", Decimal::parse)?,
        seed: optional(map, "seed", "sim", integer)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const KS: &str = r#"{
        "schema_version": 1,
        "type": "linear_gaussian",
        "linear_gaussian": {"A": [["-1", "0"], ["0", "-4"]], "D": [["1"], ["1"]], "H": [["1", "-2"]]}
    }"#;

    fn finite(lambda: &str) -> String {
        format!(
            r#"{{"schema_version": 1, "type": "finite", "finite": {{"d": 2, "lambda": {lambda}, "h": ["0", "1"]}}}}"#
        )
    }

    fn field_of(e: CliError) -> String {
        match e {
            CliError::Schema { field, .. } | CliError::ModelInvariant { field, .. } => field,
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn example_linear_file_is_valid() {
        let file = ModelFile::parse_str(KS).unwrap();
        let model = file.linear_model().unwrap();
        assert_eq!(model.a()[(1, 1)], -4.0);
        assert_eq!(model.h()[(0, 1)], -2.0);
    }

    #[test]
    fn negative_rate_names_its_entry() {
        let err = ModelFile::parse_str(&finite(r#"[["1", "-1"], ["1", "-1"]]"#)).unwrap_err();
        assert!(matches!(err, CliError::ModelInvariant { .. }));
        assert_eq!(field_of(err), "finite.lambda[0][1]");
    }

    #[test]
    fn both_families_is_a_schema_error() {
        let text = r#"{"schema_version": 1, "type": "finite",
            "finite": {"d": 1, "lambda": [["0"]], "h": ["1"]},
            "linear_gaussian": {"A": [["-1"]], "D": [["1"]], "H": [["1"]]}}"#;
        assert!(matches!(ModelFile::parse_str(text).unwrap_err(), CliError::Schema { .. }));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ModelFile::parse_str("{\n  \"schema_version\": 1,\n  oops\n}").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn ragged_and_non_numeric_entries() {
        let ragged = finite(r#"[["-1", "1"], ["1"]]"#);
        assert_eq!(field_of(ModelFile::parse_str(&ragged).unwrap_err()), "finite.lambda[1]");
        let word = finite(r#"[["-1", "one"], ["1", "-1"]]"#);
        assert_eq!(field_of(ModelFile::parse_str(&word).unwrap_err()), "finite.lambda[0][1]");
        let nan = finite(r#"[["-1", "NaN"], ["1", "-1"]]"#);
        assert_eq!(field_of(ModelFile::parse_str(&nan).unwrap_err()), "finite.lambda[0][1]");
    }

    #[test]
    fn missing_version_and_unknown_fields() {
        let err = ModelFile::parse_str(r#"{"type": "finite"}"#).unwrap_err();
        assert_eq!(field_of(err), "schema_version");
        let extra = KS.replacen("\"type\"", "\"colour\": 1, \"type\"", 1);
        assert_eq!(field_of(ModelFile::parse_str(&extra).unwrap_err()), "colour");
    }

    #[test]
    fn plain_numbers_and_strings_both_parse() {
        let text = r#"{"schema_version": 1, "type": "finite",
            "finite": {"d": 2, "lambda": [[-1, 1], ["1", "-1"]], "h": [[0.1, 2], [1e-3, "3"]]},
            "sim": {"kappas": ["0.5", 0.1], "trials": 8, "seed": "7"}}"#;
        let file = ModelFile::parse_str(text).unwrap();
        let model = file.finite_model().unwrap();
        assert_eq!(model.n(), 2);
        assert_eq!(model.h()[(1, 0)], 1e-3);
        assert_eq!(file.sim.as_ref().unwrap().seed, Some(7));
    }

    #[test]
    fn round_trip_keeps_decimal_text() {
        let text = r#"{"schema_version": 1, "type": "finite",
            "finite": {"d": 2, "lambda": [["-0.10", "0.10"], ["3.0e-1", "-0.3"]], "h": ["0", "1.000"]},
            "sim": {"kappas": ["0.5"], "horizon": "50.0"}}"#;
        let file = ModelFile::parse_str(text).unwrap();
        let again = ModelFile::parse_str(&file.to_json_string()).unwrap();
        assert_eq!(file, again);
        let Family::Finite(f) = &again.family else { unreachable!() };
        assert_eq!(f.lambda.rows[1][0].text(), "3.0e-1");
        assert_eq!(f.h.rows[1][0].text(), "1.000");
    }

    #[test]
    fn dimension_and_rank_checks() {
        let bad_d = KS.replace(r#""D": [["1"], ["1"]]"#, r#""D": [["1"]]"#);
        assert_eq!(field_of(ModelFile::parse_str(&bad_d).unwrap_err()), "linear_gaussian.D");
        let zero_h = KS.replace(r#""H": [["1", "-2"]]"#, r#""H": [["0", "0"]]"#);
        assert_eq!(field_of(ModelFile::parse_str(&zero_h).unwrap_err()), "linear_gaussian.H");
        let wrong_d = finite(r#"[["-1", "1"], ["1", "-1"]]"#).replace("\"d\": 2", "\"d\": 3");
        assert_eq!(field_of(ModelFile::parse_str(&wrong_d).unwrap_err()), "finite.lambda");
    }
}

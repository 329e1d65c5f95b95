use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use maxacc::sweep::RowStatus;
use maxacc::{Consistency, SimParams, SweepResult, TestFunction};

use crate::error::{exit, CliError};
use crate::model_file::{Family, ModelFile};
use crate::report::{self, model_hash, Provenance, ReportBundle};

#[derive(Debug, Parser)]
#[command(name = "maxacc", version, about = "Small-noise maximal-accuracy analysis of filtering models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide maximal accuracy and print the verdict as JSON.
    Analyze(ModelArgs),
    /// Print the transmission-zero report of a linear-Gaussian model as JSON.
    Zeros(ModelArgs),
    /// Print the time-reversed generator of a finite model.
    Reverse(ModelArgs),
    /// Run a noise sweep and write it as CSV.
    Sweep(SweepArgs),
    /// Render a sweep CSV as an SVG log-log chart.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Write the artifact here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit a JSON report bundle (always on for analyze and zeros).
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Error functional: indicators, battery, identity, ind<N>, or a comma-separated vector.
    #[arg(long = "f")]
    pub f: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep CSV to render.
    #[arg(long)]
    pub sweep: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

pub const DEFAULT_KAPPAS: [f64; 3] = [0.5, 0.1, 0.02];

/// Text written by a command, and where it goes.
pub struct Artifact {
    pub text: String,
    pub out: Option<PathBuf>,
}

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub code: u8,
}

impl Outcome {
    fn one(text: String, out: Option<PathBuf>, code: u8) -> Self {
        Self { artifacts: vec![Artifact { text, out }], code }
    }

    /// Writes every artifact to its path or to standard output.
    pub fn emit(&self) -> Result<(), CliError> {
        use std::io::Write;
        for a in &self.artifacts {
            match &a.out {
                Some(path) => std::fs::write(path, &a.text)
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
                None => std::io::stdout().lock().write_all(a.text.as_bytes())?,
            }
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Zeros(a) => zeros(&a),
        Command::Reverse(a) => reverse(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Report(a) => render(&a),
    }
}

fn load(path: &Path) -> Result<(ModelFile, String), CliError> {
    let file = ModelFile::read(path)?;
    let hash = model_hash(&file);
    info!("loaded {} (sha256 {hash})", path.display());
    Ok((file, hash))
}

fn analyze(a: &ModelArgs) -> Result<Outcome, CliError> {
    let (file, hash) = load(&a.model)?;
    let verdict = match &file.family {
        Family::Finite(_) => maxacc::finite_verdict(&file.finite_model()?)?,
        Family::LinearGaussian(_) => maxacc::ks_check(&file.linear_model()?)?,
    };
    let prov = Provenance::new("analyze", &a.model.display().to_string(), None);
    let text = ReportBundle::new(&hash, prov).with_verdict(&verdict).to_json();
    let code = if verdict.decided { exit::OK } else { exit::UNDECIDED };
    Ok(Outcome::one(text, a.out.clone(), code))
}

fn zeros(a: &ModelArgs) -> Result<Outcome, CliError> {
    let (file, hash) = load(&a.model)?;
    let report = maxacc::transmission_zeros(&file.linear_model()?)?;
    let mut bundle = ReportBundle::new(&hash, Provenance::new("zeros", &a.model.display().to_string(), None));
    bundle.zeros = Some(&report);
    let code = if report.has_ambiguous_open_right() { exit::UNDECIDED } else { exit::OK };
    Ok(Outcome::one(bundle.to_json(), a.out.clone(), code))
}

fn reverse(a: &ModelArgs) -> Result<Outcome, CliError> {
    let (file, hash) = load(&a.model)?;
    let rev = file.finite_model()?.time_reverse()?;
    let rows: Vec<Vec<f64>> = rev.row_iter().map(|r| r.iter().copied().collect()).collect();
    let text = if a.json {
        let mut bundle = ReportBundle::new(&hash, Provenance::new("reverse", &a.model.display().to_string(), None));
        bundle.reversed_generator = Some(rows);
        bundle.to_json()
    } else {
        rows.iter().map(|r| r.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ") + "\n").collect()
    };
    Ok(Outcome::one(text, a.out.clone(), exit::OK))
}

/// Parses the `--f` functional for a model with `d` states.
pub fn parse_functional(spec: &str, d: usize) -> Result<Vec<TestFunction>, CliError> {
    let bad = |m: String| CliError::Usage(format!("--f {spec}: {m}"));
    match spec.trim() {
        "indicators" => Ok(TestFunction::indicators(d)),
        "battery" => Ok(TestFunction::battery(d)),
        "identity" => Ok(vec![TestFunction::identity(d)]),
        s if s.starts_with("ind") && s[3..].parse::<usize>().is_ok() => {
            let k: usize = s[3..].parse().expect("checked");
            if k >= d {
                return Err(bad(format!("state {k} is out of range for {d} states")));
            }
            Ok(vec![TestFunction::indicator(d, k)])
        }
        s => {
            let values =
                s.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| {
                    bad("expected indicators, battery, identity, ind<N>, or a comma-separated vector".into())
                })?;
            if values.len() != d {
                return Err(bad(format!("vector has {} entries, the model has {d} states", values.len())));
            }
            Ok(vec![TestFunction::new("f", values).map_err(|e| bad(e.to_string()))?])
        }
    }
}

fn sweep_code(result: &SweepResult) -> u8 {
    if result.rows.iter().any(|r| matches!(r.status, RowStatus::Failed(_))) {
        exit::NUMERICAL
    } else if result.flag != Consistency::Consistent {
        exit::UNDECIDED
    } else {
        exit::OK
    }
}

fn sweep(a: &SweepArgs) -> Result<Outcome, CliError> {
    let (file, hash) = load(&a.model.model)?;
    let sim = file.sim.clone().unwrap_or_default();
    let kappas = match (&a.kappa, &sim.kappas) {
        (Some(k), _) => k.clone(),
        (None, Some(k)) => k.iter().map(|x| x.value()).collect(),
        (None, None) => DEFAULT_KAPPAS.to_vec(),
    };
    if kappas.is_empty() || kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(CliError::Usage("--kappa needs positive, finite values".into()));
    }

    let (result, seed) = match &file.family {
        Family::Finite(_) => {
            let model = file.finite_model()?;
            let defaults = SimParams::default();
            let params = SimParams {
                trials: a.trials.or(sim.trials.map(|t| t as usize)).unwrap_or(defaults.trials),
                horizon: a.horizon.or(sim.horizon.as_ref().map(|x| x.value())).unwrap_or(defaults.horizon),
                dt: a.dt.or(sim.dt.as_ref().map(|x| x.value())),
                burn_in: a.burn_in.or(sim.burn_in.as_ref().map(|x| x.value())),
                seed: a.seed.or(sim.seed).unwrap_or(defaults.seed),
                ..defaults
            };
            for &k in &kappas {
                params.resolve(&model, k)?;
            }
            let fs = parse_functional(a.f.as_deref().unwrap_or("indicators"), model.d())?;
            info!("sweeping {} noise levels with {} trials, seed {}", kappas.len(), params.trials, params.seed);
            (maxacc::kappa_sweep_finite(&model, &fs, &kappas, &params)?, Some(params.seed))
        }
        Family::LinearGaussian(_) => {
            let ignored = [
                ("--trials", a.trials.is_some()),
                ("--horizon", a.horizon.is_some()),
                ("--dt", a.dt.is_some()),
                ("--burn-in", a.burn_in.is_some()),
                ("--seed", a.seed.is_some()),
                ("--f", a.f.is_some()),
            ];
            for (flag, _) in ignored.iter().filter(|(_, set)| *set) {
                warn!("{flag} has no effect on a linear_gaussian sweep (Riccati rows are deterministic)");
            }
            (maxacc::kappa_sweep_lg(&file.linear_model()?, &kappas)?, None)
        }
    };
    for r in &result.rows {
        if let RowStatus::Failed(m) = &r.status {
            warn!("kappa = {}: {m}", r.kappa);
        }
    }
    info!("trend {:?}, flag {}", result.trend, result.flag);

    let code = sweep_code(&result);
    let csv = report::sweep_csv(&result)?;
    let mut artifacts = Vec::new();
    if a.model.json {
        if let Some(path) = &a.model.out {
            artifacts.push(Artifact { text: csv, out: Some(path.clone()) });
        }
        let prov = Provenance::new("sweep", &a.model.model.display().to_string(), seed);
        artifacts.push(Artifact { text: ReportBundle::new(&hash, prov).with_sweep(&result).to_json(), out: None });
    } else {
        artifacts.push(Artifact { text: csv, out: a.model.out.clone() });
    }
    Ok(Outcome { artifacts, code })
}

fn render(a: &ReportArgs) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(&a.sweep)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.sweep.display())))?;
    let rows = report::read_sweep_csv(&text)?;
    let flag = rows.iter().map(|r| r.flag.as_str()).find(|f| *f != "FAILED").unwrap_or("FAILED");
    let title = a.title.clone().unwrap_or_else(|| format!("stationary error vs kappa ({flag})"));
    Ok(Outcome::one(report::render_svg(&rows, &title)?, a.out.clone(), exit::OK))
}

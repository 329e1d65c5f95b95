//! Monte-Carlo estimation of the stationary filtering error for finite-state
//! models, using the exact finite-state optimal filter.
//!
//! The filter is discretized by splitting: the prior is propagated exactly
//! with `exp(Lambda dt)`, then reweighted by the Gaussian likelihood of the
//! observed increment and renormalized. The weights are formed in log space,
//! so the conditional law stays on the simplex even for very small `kappa`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::finite::{finite_verdict, FiniteError};
use crate::markov::{self, FiniteStateModel, MarkovError, ObservationIncrements, ObservationStream};
use crate::sweep::{classify_sweep, SweepResult, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] MarkovError),
    #[error(transparent)]
    Analysis(#[from] FiniteError),
    #[error("all likelihood weights vanished at step {step}; dt is too large for this kappa")]
    DegenerateWeight { step: usize },
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// A real function on the state space, given by its values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub name: String,
    pub values: Vec<f64>,
}

impl TestFunction {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidParameter("test function values must be finite".into()));
        }
        Ok(Self { name: name.into(), values })
    }

    /// `1{X = state}`.
    pub fn indicator(d: usize, state: usize) -> Self {
        let mut values = vec![0.0; d];
        values[state] = 1.0;
        Self { name: format!("ind{state}"), values }
    }

    /// `f(i) = i`.
    pub fn identity(d: usize) -> Self {
        Self { name: "identity".into(), values: (0..d).map(|i| i as f64).collect() }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self { name: format!("const{c}"), values: vec![c; d] }
    }

    /// Coordinate indicators followed by the identity embedding.
    pub fn battery(d: usize) -> Vec<Self> {
        let mut fs: Vec<Self> = (0..d).map(|i| Self::indicator(d, i)).collect();
        fs.push(Self::identity(d));
        fs
    }

    /// All coordinate indicators; their summed error vanishes iff every function's does.
    pub fn indicators(d: usize) -> Vec<Self> {
        (0..d).map(|i| Self::indicator(d, i)).collect()
    }

    /// Variance under a probability vector.
    pub fn variance(&self, pi: &DVector<f64>) -> f64 {
        let mean: f64 = self.values.iter().zip(pi.iter()).map(|(f, p)| f * p).sum();
        self.values.iter().zip(pi.iter()).map(|(f, p)| p * (f - mean).powi(2)).sum()
    }
}

/// Prior variance of the summed functional: the error of the filter that ignores all observations.
pub fn functional_variance(fs: &[TestFunction], pi: &DVector<f64>) -> f64 {
    fs.iter().map(|f| f.variance(pi)).sum()
}

/// Recursive finite-state filter with a fixed grid step.
#[derive(Debug, Clone)]
pub struct FilterStepper {
    d: usize,
    n: usize,
    /// Row-major `exp(Lambda dt)`.
    transition: Vec<f64>,
    /// Row-major `h` (`d x n`).
    h: Vec<f64>,
    /// `|h(i)|^2 dt / 2`.
    half_energy: Vec<f64>,
    inv_kappa2: f64,
    scratch: Vec<f64>,
}

impl FilterStepper {
    pub fn new(model: &FiniteStateModel, kappa: f64, dt: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(SimError::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let d = model.d();
        let n = model.n();
        let t = (model.lambda() * dt).exp();
        let transition: Vec<f64> =
            (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| t[(i, j)].max(0.0)).collect();
        let h: Vec<f64> = (0..d).flat_map(|i| (0..n).map(move |c| (i, c))).map(|(i, c)| model.h()[(i, c)]).collect();
        let half_energy = (0..d).map(|i| 0.5 * dt * h[i * n..(i + 1) * n].iter().map(|x| x * x).sum::<f64>()).collect();
        Ok(Self { d, n, transition, h, half_energy, inv_kappa2: 1.0 / (kappa * kappa), scratch: vec![0.0; d] })
    }

    /// Advances `mu` (a probability vector) by one grid step given the increment `dy`.
    pub fn step(&mut self, mu: &mut [f64], dy: &[f64]) -> bool {
        let (d, n) = (self.d, self.n);
        // Predict: mu <- mu exp(Lambda dt).
        self.scratch.fill(0.0);
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = &self.transition[i * d..(i + 1) * d];
            for (s, &t) in self.scratch.iter_mut().zip(row) {
                *s += m * t;
            }
        }
        // Correct with log-likelihoods, shifted by their maximum.
        let mut max_ll = f64::NEG_INFINITY;
        for (i, out) in mu.iter_mut().enumerate() {
            let hi = &self.h[i * n..(i + 1) * n];
            let dot: f64 = hi.iter().zip(dy).map(|(a, b)| a * b).sum();
            let ll = (dot - self.half_energy[i]) * self.inv_kappa2;
            *out = ll;
            if self.scratch[i] > 0.0 && ll > max_ll {
                max_ll = ll;
            }
        }
        let mut total = 0.0;
        for (out, &prior) in mu.iter_mut().zip(&self.scratch) {
            let w = if prior > 0.0 { prior * (*out - max_ll).exp() } else { 0.0 };
            *out = w;
            total += w;
        }
        if !(total > 0.0 && total.is_finite()) {
            return false;
        }
        let inv = 1.0 / total;
        for m in mu.iter_mut() {
            *m *= inv;
        }
        true
    }
}

/// Conditional laws on the grid: row 0 is the initial law, row `k` follows increment `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPath {
    pub d: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl FilterPath {
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }
}

fn check_simplex(mu0: &DVector<f64>, d: usize) -> Result<()> {
    if mu0.len() != d {
        return Err(SimError::InvalidParameter(format!("initial law has length {}, expected {d}", mu0.len())));
    }
    if mu0.iter().any(|&v| !(v >= 0.0)) || (mu0.sum() - 1.0).abs() > 1e-9 {
        return Err(SimError::InvalidParameter("initial law must lie on the probability simplex".into()));
    }
    Ok(())
}

/// Runs the filter over a recorded increment sequence; `mu0 = None` starts from `pi`.
pub fn run_filter(
    model: &FiniteStateModel,
    obs: &ObservationIncrements,
    kappa: f64,
    mu0: Option<&DVector<f64>>,
) -> Result<FilterPath> {
    let d = model.d();
    if obs.n != model.n() {
        return Err(SimError::InvalidParameter(format!(
            "increments have {} coordinates, model observes {}",
            obs.n,
            model.n()
        )));
    }
    let mu0 = mu0.unwrap_or(model.pi());
    check_simplex(mu0, d)?;
    let mut stepper = FilterStepper::new(model, kappa, obs.dt)?;
    let steps = obs.steps();
    let mut data = Vec::with_capacity((steps + 1) * d);
    let mut mu: Vec<f64> = mu0.iter().copied().collect();
    data.extend_from_slice(&mu);
    for k in 0..steps {
        if !stepper.step(&mut mu, obs.step(k)) {
            return Err(SimError::DegenerateWeight { step: k });
        }
        data.extend_from_slice(&mu);
    }
    Ok(FilterPath { d, dt: obs.dt, data })
}

/// Simulation settings; `None` fields are filled in per kappa by [`SimParams::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimParams {
    pub trials: usize,
    pub horizon: f64,
    pub dt: Option<f64>,
    pub burn_in: Option<f64>,
    /// `c` in the step policy `dt <= c kappa^2`.
    pub dt_factor: f64,
    pub dt_min: f64,
    /// Per-trial step count above which a warning is logged.
    pub step_budget: u64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            trials: 64,
            horizon: 200.0,
            dt: None,
            burn_in: None,
            dt_factor: 0.5,
            dt_min: 1e-6,
            step_budget: 100_000_000,
            seed: 0,
        }
    }
}

/// Fully specified settings for one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedParams {
    pub trials: usize,
    pub horizon: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub seed: u64,
}

/// Burn-in of ten relaxation times: `10 / spectral gap`, or ten of the
/// longest mean holding times when no gap is available.
pub fn default_burn_in(model: &FiniteStateModel) -> f64 {
    if model.d() == 1 {
        return 0.0;
    }
    if let Some(gap) = model.spectral_gap().filter(|g| *g > 1e-12) {
        return 10.0 / gap;
    }
    let longest = (0..model.d()).map(|i| model.exit_rate(i)).filter(|&r| r > 0.0).map(|r| 1.0 / r).fold(0.0, f64::max);
    10.0 * longest
}

/// Step cap from the fastest jump rate, so each step sees few jumps even at large kappa.
fn default_dt_max(model: &FiniteStateModel) -> f64 {
    let fastest = (0..model.d()).map(|i| model.exit_rate(i)).fold(0.0, f64::max);
    if fastest > 0.0 {
        0.01 / fastest
    } else {
        0.01
    }
}

impl SimParams {
    pub fn resolve(&self, model: &FiniteStateModel, kappa: f64) -> Result<ResolvedParams> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(SimError::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if self.trials < 2 {
            return Err(SimError::InvalidParameter("at least two trials are needed for a standard error".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        let policy = self.dt_factor * kappa * kappa;
        let dt = match self.dt {
            Some(dt) => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(SimError::InvalidParameter(format!("dt must be positive, got {dt}")));
                }
                if dt > policy {
                    warn!("dt = {dt} exceeds {} * kappa^2 = {policy} at kappa = {kappa}", self.dt_factor);
                }
                dt
            }
            None => policy.min(default_dt_max(model)).max(self.dt_min),
        };
        let burn_in = self.burn_in.unwrap_or_else(|| default_burn_in(model));
        if !(burn_in >= 0.0 && burn_in < self.horizon) {
            return Err(SimError::InvalidParameter(format!(
                "burn-in {burn_in} must lie in [0, horizon = {})",
                self.horizon
            )));
        }
        let steps = (self.horizon / dt).round() as u64;
        if steps > self.step_budget {
            warn!("{steps} steps per trial at kappa = {kappa} exceeds the budget of {}", self.step_budget);
        }
        Ok(ResolvedParams { trials: self.trials, horizon: self.horizon, dt, burn_in, seed: self.seed })
    }
}

/// Point estimate and standard error of a stationary error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Per-trial averaging window.
    pub samples_per_trial: usize,
    /// Largest `|sum(mu) - 1|` seen over every filter step of every trial.
    pub simplex_defect: f64,
}

/// Time-averaged squared error of one trial after burn-in.
fn trial_error(
    model: &FiniteStateModel,
    fs: &[TestFunction],
    kappa: f64,
    params: &ResolvedParams,
    trial: u64,
) -> Result<(f64, usize, f64)> {
    let d = model.d();
    let n = model.n();
    let mut path_rng = markov::stream_rng(params.seed, 2 * trial);
    let x0 = markov::sample_categorical(model.pi(), &mut path_rng);
    let path = markov::simulate_path_from(model.lambda(), x0, params.horizon, &mut path_rng)?;
    let mut stream =
        ObservationStream::new(&path, model.h(), kappa, params.dt, markov::stream_rng(params.seed, 2 * trial + 1))?;
    let mut stepper = FilterStepper::new(model, kappa, stream.dt())?;
    let dt = stream.dt();

    let mut mu: Vec<f64> = model.pi().iter().copied().collect();
    let mut dy = vec![0.0; n];
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut defect = 0.0_f64;
    let mut k = 0usize;
    while let Some(state) = stream.next_into(&mut dy) {
        if !stepper.step(&mut mu, &dy) {
            return Err(SimError::DegenerateWeight { step: k });
        }
        k += 1;
        defect = defect.max((mu.iter().sum::<f64>() - 1.0).abs());
        if k as f64 * dt > params.burn_in {
            let mut err = 0.0;
            for f in fs {
                let est: f64 = f.values.iter().zip(&mu).map(|(v, m)| v * m).sum();
                let e = f.values[state] - est;
                err += e * e;
            }
            sum += err;
            count += 1;
        }
    }
    debug_assert_eq!(mu.len(), d);
    if count == 0 {
        return Err(SimError::InvalidParameter("no samples after burn-in".into()));
    }
    Ok((sum / count as f64, count, defect))
}

/// Estimates `sum_f E[(f(X_t) - E[f(X_t) | Y_[0,t]])^2]` at stationarity by
/// averaging over time after burn-in and over independent trials. Trials run
/// in parallel; results are reduced in trial order, so the output depends only
/// on the seed.
pub fn estimate_stationary_error(
    model: &FiniteStateModel,
    fs: &[TestFunction],
    kappa: f64,
    params: &ResolvedParams,
) -> Result<ErrorEstimate> {
    if fs.is_empty() {
        return Err(SimError::InvalidParameter("at least one test function is required".into()));
    }
    if let Some(f) = fs.iter().find(|f| f.values.len() != model.d()) {
        return Err(SimError::InvalidParameter(format!(
            "test function {} has {} values, model has {} states",
            f.name,
            f.values.len(),
            model.d()
        )));
    }
    if params.trials < 2 {
        return Err(SimError::InvalidParameter("at least two trials are needed".into()));
    }
    let per_trial: Vec<Result<(f64, usize, f64)>> =
        (0..params.trials as u64).into_par_iter().map(|t| trial_error(model, fs, kappa, params, t)).collect();
    let mut values = Vec::with_capacity(per_trial.len());
    let mut samples = 0;
    let mut defect = 0.0_f64;
    for r in per_trial {
        let (v, c, e) = r?;
        values.push(v);
        samples = c;
        defect = defect.max(e);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(ErrorEstimate {
        estimate: mean,
        std_error: (var / k).sqrt(),
        trials: values.len(),
        samples_per_trial: samples,
        simplex_defect: defect,
    })
}

/// One Monte-Carlo row per kappa (descending), compared with the algebraic verdict.
/// Rows that fail are kept with their error message.
pub fn kappa_sweep_finite(
    model: &FiniteStateModel,
    fs: &[TestFunction],
    kappas: &[f64],
    params: &SimParams,
) -> Result<SweepResult> {
    if kappas.is_empty() || kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(SimError::InvalidParameter("kappas must be a nonempty list of positive numbers".into()));
    }
    let verdict = finite_verdict(model)?;
    let mut sorted = kappas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();

    let rows = sorted
        .iter()
        .map(|&kappa| {
            let resolved = match params.resolve(model, kappa) {
                Ok(r) => r,
                Err(e) => return SweepRow::failed(kappa, e.to_string()),
            };
            match estimate_stationary_error(model, fs, kappa, &resolved) {
                Ok(est) => SweepRow {
                    kappa,
                    estimate: Some(est.estimate),
                    std_error: Some(est.std_error),
                    trials: Some(resolved.trials),
                    horizon: Some(resolved.horizon),
                    dt: Some(resolved.dt),
                    burn_in: Some(resolved.burn_in),
                    status: crate::sweep::RowStatus::Ok,
                },
                Err(e) => SweepRow::failed(kappa, e.to_string()),
            }
        })
        .collect();

    let reference = functional_variance(fs, model.pi());
    let mut result = classify_sweep(rows, verdict, reference);
    let names: Vec<&str> = fs.iter().map(|f| f.name.as_str()).collect();
    result.notes.push(format!("error functional: sum over [{}]", names.join(", ")));
    Ok(result)
}

/// Law of `X_t` started from `mu`: `mu exp(Lambda t)`.
pub fn propagate_law(model: &FiniteStateModel, mu: &DVector<f64>, t: f64) -> DVector<f64> {
    let tm: DMatrix<f64> = (model.lambda() * t).exp();
    (mu.transpose() * tm).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::simulate_trajectory;

    fn two_state(h: [f64; 2]) -> FiniteStateModel {
        FiniteStateModel::with_scalar_observation(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]), &h).unwrap()
    }

    #[test]
    fn constant_observation_keeps_prior() {
        let model = FiniteStateModel::with_scalar_observation(
            DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 1.0, 1.0, -1.0, 0.0, 1.0, 0.0, -1.0]),
            &[0.7, 0.7, 0.7],
        )
        .unwrap();
        let bundle = simulate_trajectory(&model, 20.0, 0.3, 0.01, 4).unwrap();
        let path = run_filter(&model, &bundle.observations, 0.3, None).unwrap();
        for k in 0..path.len() {
            for (a, b) in path.at(k).iter().zip(model.pi().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_state_filter_is_trivial() {
        let model = FiniteStateModel::with_scalar_observation(DMatrix::zeros(1, 1), &[1.0]).unwrap();
        let bundle = simulate_trajectory(&model, 5.0, 0.1, 0.01, 1).unwrap();
        let path = run_filter(&model, &bundle.observations, 0.1, None).unwrap();
        assert!(path.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn filter_tracks_state_at_small_noise() {
        let model = two_state([0.0, 1.0]);
        let kappa = 0.05;
        let bundle = simulate_trajectory(&model, 200.0, kappa, 5e-4, 8).unwrap();
        let path = run_filter(&model, &bundle.observations, kappa, None).unwrap();
        let dt = path.dt;
        let mut mass = 0.0;
        for k in 1..path.len() {
            let s = bundle.path.state_at(k as f64 * dt - 1e-12);
            mass += path.at(k)[s];
        }
        let avg = mass / (path.len() - 1) as f64;
        assert!(avg > 0.95, "average mass on true state {avg}");
    }

    #[test]
    fn filter_stays_on_simplex() {
        let model = two_state([0.0, 1.0]);
        for &kappa in &[1.0, 0.1, 0.01, 0.002] {
            let bundle = simulate_trajectory(&model, 10.0, kappa, 1e-3, 2).unwrap();
            let path = run_filter(&model, &bundle.observations, kappa, None).unwrap();
            for k in 0..path.len() {
                let mu = path.at(k);
                assert!(mu.iter().all(|&v| v >= 0.0));
                assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn run_filter_rejects_bad_inputs() {
        let model = two_state([0.0, 1.0]);
        let obs = ObservationIncrements { n: 1, dt: 0.1, data: vec![0.0; 3] };
        assert!(run_filter(&model, &obs, 0.0, None).is_err());
        let bad = DVector::from_vec(vec![0.7, 0.7]);
        assert!(run_filter(&model, &obs, 0.5, Some(&bad)).is_err());
    }

    #[test]
    fn constant_function_has_zero_error() {
        let model = two_state([0.0, 1.0]);
        let params =
            SimParams { trials: 4, horizon: 20.0, seed: 3, ..SimParams::default() }.resolve(&model, 0.3).unwrap();
        let est = estimate_stationary_error(&model, &[TestFunction::constant(2, 5.0)], 0.3, &params).unwrap();
        assert!(est.estimate.abs() < 1e-20);
        assert!(est.std_error < 1e-20);
    }

    #[test]
    fn estimator_is_deterministic() {
        let model = two_state([0.0, 1.0]);
        let params =
            SimParams { trials: 6, horizon: 20.0, seed: 17, ..SimParams::default() }.resolve(&model, 0.4).unwrap();
        let fs = [TestFunction::indicator(2, 0)];
        let a = estimate_stationary_error(&model, &fs, 0.4, &params).unwrap();
        let b = estimate_stationary_error(&model, &fs, 0.4, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resolve_applies_step_policy_and_burn_in() {
        let model = two_state([0.0, 1.0]);
        let r = SimParams::default().resolve(&model, 0.02).unwrap();
        assert!((r.dt - 0.5 * 0.02 * 0.02).abs() < 1e-18);
        // Gap of the symmetric rate-1 chain is 2.
        assert!((r.burn_in - 5.0).abs() < 1e-9);
        let r = SimParams::default().resolve(&model, 1.0).unwrap();
        assert!((r.dt - 0.01).abs() < 1e-15);
        assert!(SimParams { burn_in: Some(500.0), ..SimParams::default() }.resolve(&model, 0.1).is_err());
    }

    #[test]
    fn law_propagation_preserves_stationarity() {
        let model = two_state([0.0, 1.0]);
        let mu = propagate_law(&model, model.pi(), 3.0);
        assert!((mu - model.pi()).amax() < 1e-14);
    }
}

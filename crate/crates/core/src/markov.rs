//! Finite-state continuous-time Markov signals: the model, its stationary
//! law, time reversal, and exact path/observation sampling.
//!
//! States are indexed `0..d`. The observation table `h` is `d x n`: row `i`
//! is the value `h(i)` observed (in white noise) while the signal sits in
//! state `i`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::linalg;

/// Absolute tolerance on the row sums of a rate matrix (scaled by the row magnitude).
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Relative singular-value threshold for the uniqueness test of the stationary law.
pub const STATIONARY_NULLITY_TOL: f64 = 1e-10;
/// States with stationary mass at or below this are treated as transient.
pub const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("not a rate matrix: {0}")]
    NotRateMatrix(String),
    #[error("stationary law is not unique (null space of the transposed generator has dimension {0})")]
    NotUniqueStationary(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state {0} has zero stationary mass; reduce the support first")]
    ZeroSupport(usize),
    #[error("stationary law has empty support")]
    EmptySupport,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MarkovError>;

/// Checks the generator conditions: nonnegative off-diagonal rates and zero row sums.
pub fn validate_rate_matrix(lambda: &DMatrix<f64>) -> Result<()> {
    let d = lambda.nrows();
    if d == 0 || lambda.ncols() != d {
        return Err(MarkovError::DimensionMismatch(format!(
            "rate matrix must be square and nonempty, got {}x{}",
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    for i in 0..d {
        let mut sum = 0.0;
        let mut scale = 1.0_f64;
        for j in 0..d {
            let v = lambda[(i, j)];
            if !v.is_finite() {
                return Err(MarkovError::NotRateMatrix(format!("lambda[{i}][{j}] is not finite")));
            }
            if i != j && v < 0.0 {
                return Err(MarkovError::NotRateMatrix(format!(
                    "lambda[{i}][{j}] = {v} is a negative off-diagonal rate"
                )));
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(MarkovError::NotRateMatrix(format!("row {i} sums to {sum}, not 0")));
        }
    }
    Ok(())
}

/// Stationary law of a rate matrix: the unique probability vector with `pi^T Lambda = 0`.
pub fn stationary_distribution(lambda: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_rate_matrix(lambda)?;
    let d = lambda.nrows();
    if d == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let lt = lambda.transpose();
    let s = linalg::singular_values(&lt);
    let smax = s[0];
    let nullity = if smax == 0.0 { d } else { s.iter().filter(|&&x| x <= STATIONARY_NULLITY_TOL * smax).count() };
    if nullity != 1 {
        return Err(MarkovError::NotUniqueStationary(nullity));
    }

    let mut m = lt;
    for j in 0..d {
        m[(d - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    let mut pi = m.lu().solve(&rhs).ok_or(MarkovError::NotUniqueStationary(nullity))?;

    for p in pi.iter_mut() {
        if *p < 0.0 {
            if *p < -1e-9 {
                return Err(MarkovError::NotRateMatrix(format!("stationary solve produced negative mass {p}")));
            }
            *p = 0.0;
        }
    }
    let total = pi.sum();
    pi /= total;
    Ok(pi)
}

/// A finite-state Markov signal with its observation table and cached stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteStateModel {
    lambda: DMatrix<f64>,
    h: DMatrix<f64>,
    pi: DVector<f64>,
}

impl FiniteStateModel {
    /// Builds a model from a `d x d` generator and a `d x n` observation table.
    pub fn new(lambda: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != lambda.nrows() || h.ncols() == 0 {
            return Err(MarkovError::DimensionMismatch(format!(
                "observation table must be {}xn with n >= 1, got {}x{}",
                lambda.nrows(),
                h.nrows(),
                h.ncols()
            )));
        }
        if let Some((k, _)) = h.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (i, j) = (k % h.nrows(), k / h.nrows());
            return Err(MarkovError::InvalidArgument(format!("h[{i}][{j}] is not finite")));
        }
        let pi = stationary_distribution(&lambda)?;
        Ok(Self { lambda, h, pi })
    }

    /// Scalar observations, `h(i) = h[i]`.
    pub fn with_scalar_observation(lambda: DMatrix<f64>, h: &[f64]) -> Result<Self> {
        let h = DMatrix::from_column_slice(h.len(), 1, h);
        Self::new(lambda, h)
    }

    pub fn d(&self) -> usize {
        self.lambda.nrows()
    }

    /// Observation dimension.
    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Exit rate `-lambda_ii` of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.lambda[(i, i)]
    }

    pub fn has_full_support(&self) -> bool {
        self.pi.iter().all(|&p| p > SUPPORT_TOL)
    }

    /// Restriction to the support of the stationary law.
    pub fn reduce_support(&self) -> Result<ReducedModel> {
        reduce_support(self)
    }

    pub fn time_reverse(&self) -> Result<DMatrix<f64>> {
        time_reverse(self)
    }

    /// Spectral gap of the generator: the smallest `-Re(z)` over the nonzero
    /// eigenvalues `z`. `None` when the chain has a single state or no mixing.
    pub fn spectral_gap(&self) -> Option<f64> {
        let scale = linalg::max_abs(&self.lambda).max(f64::MIN_POSITIVE);
        linalg::eigenvalues(&self.lambda)
            .into_iter()
            .filter(|z| z.norm() > 1e-9 * scale)
            .map(|z| -z.re)
            .filter(|&g| g > 0.0)
            .min_by(f64::total_cmp)
    }
}

/// A model restricted to the support of its stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub model: FiniteStateModel,
    /// Original indices of the retained states, in increasing order.
    pub kept: Vec<usize>,
}

impl ReducedModel {
    pub fn is_identity(&self) -> bool {
        self.kept.iter().enumerate().all(|(a, &b)| a == b) && self.kept.len() == self.model.d()
    }
}

/// Drops every state with `pi_i <= SUPPORT_TOL`; identity when the support is full.
pub fn reduce_support(model: &FiniteStateModel) -> Result<ReducedModel> {
    let kept: Vec<usize> = (0..model.d()).filter(|&i| model.pi[i] > SUPPORT_TOL).collect();
    if kept.is_empty() {
        return Err(MarkovError::EmptySupport);
    }
    if kept.len() == model.d() {
        return Ok(ReducedModel { model: model.clone(), kept });
    }
    let k = kept.len();
    let lambda = DMatrix::from_fn(k, k, |a, b| model.lambda[(kept[a], kept[b])]);
    let h = DMatrix::from_fn(k, model.n(), |a, c| model.h[(kept[a], c)]);
    let reduced = FiniteStateModel::new(lambda, h)?;
    Ok(ReducedModel { model: reduced, kept })
}

/// Generator of the time-reversed stationary chain,
/// `rev_ij = lambda_ji * pi_j / pi_i` off the diagonal with zero row sums.
pub fn time_reverse(model: &FiniteStateModel) -> Result<DMatrix<f64>> {
    let d = model.d();
    if let Some(i) = (0..d).find(|&i| model.pi[i] <= SUPPORT_TOL) {
        return Err(MarkovError::ZeroSupport(i));
    }
    let pi = &model.pi;
    let mut rev = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            if i != j {
                let v = model.lambda[(j, i)] * pi[j] / pi[i];
                rev[(i, j)] = v;
                row += v;
            }
        }
        rev[(i, i)] = -row;
    }
    Ok(rev)
}

/// RNG for one independent stream of a seeded experiment. Streams with
/// different indices never overlap, so trial `k` is reproducible regardless
/// of how trials are scheduled.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Piecewise-constant sample path of the signal on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath {
    pub horizon: f64,
    /// Strictly increasing jump times in `(0, horizon]`.
    pub jump_times: Vec<f64>,
    /// `states[0]` holds on `[0, jump_times[0])`, `states[k]` on `[jump_times[k-1], jump_times[k])`.
    pub states: Vec<usize>,
}

impl SamplePath {
    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().expect("path has at least one state")
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// Total time spent in each of `d` states.
    pub fn occupation_times(&self, d: usize) -> Vec<f64> {
        let mut occ = vec![0.0; d];
        let mut start = 0.0;
        for (k, &s) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            occ[s] += end - start;
            start = end;
        }
        occ
    }

    /// `int_0^horizon h(X_s) ds`, one entry per observation coordinate.
    pub fn integrate(&self, h: &DMatrix<f64>) -> Vec<f64> {
        let occ = self.occupation_times(h.nrows());
        (0..h.ncols()).map(|c| occ.iter().enumerate().map(|(i, t)| h[(i, c)] * t).sum()).collect()
    }
}

/// Exact (Gillespie) sample of the chain from a fixed initial state.
pub fn simulate_path_from<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    initial: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<SamplePath> {
    validate_rate_matrix(lambda)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MarkovError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let d = lambda.nrows();
    if initial >= d {
        return Err(MarkovError::InvalidArgument(format!("initial state {initial} out of range")));
    }
    let mut t = 0.0;
    let mut state = initial;
    let mut jump_times = Vec::new();
    let mut states = vec![state];
    loop {
        let rate = -lambda[(state, state)];
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        t += hold;
        if t > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let mut next = state;
        for j in 0..d {
            if j == state {
                continue;
            }
            let r = lambda[(state, j)];
            if r <= 0.0 {
                continue;
            }
            next = j;
            if u < r {
                break;
            }
            u -= r;
        }
        // Ties at floating resolution would break strict monotonicity.
        if jump_times.last().is_some_and(|&last| t <= last) {
            continue;
        }
        state = next;
        jump_times.push(t);
        states.push(state);
    }
    Ok(SamplePath { horizon, jump_times, states })
}

/// Draws a state from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(p: &DVector<f64>, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * p.sum();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Stationary path sample: initial state from `pi`, exact jumps up to `horizon`.
pub fn simulate_path(model: &FiniteStateModel, horizon: f64, seed: u64) -> Result<SamplePath> {
    let mut rng = stream_rng(seed, 0);
    let x0 = sample_categorical(&model.pi, &mut rng);
    simulate_path_from(&model.lambda, x0, horizon, &mut rng)
}

/// Integrated observation increments on a uniform grid, stored row-major (`steps x n`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationIncrements {
    pub n: usize,
    /// Effective grid step: `horizon / steps`.
    pub dt: f64,
    pub data: Vec<f64>,
}

impl ObservationIncrements {
    pub fn steps(&self) -> usize {
        self.data.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }
}

/// One simulated run: signal path plus the observation increments it generated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryBundle {
    pub path: SamplePath,
    pub observations: ObservationIncrements,
    pub kappa: f64,
    pub seed: u64,
}

/// Number of grid steps covering `[0, horizon]`; the effective step is `horizon / steps`.
pub fn grid_steps(horizon: f64, dt: f64) -> usize {
    ((horizon / dt).round() as usize).max(1)
}

/// Streams `dY = int h(X_s) ds + kappa dB` over a uniform grid without storing it.
///
/// The drift part is integrated exactly from the jump times, so with
/// `kappa = 0` the increments sum to the path integral of `h`.
pub struct ObservationStream<'a, R> {
    path: &'a SamplePath,
    h: &'a DMatrix<f64>,
    kappa: f64,
    dt: f64,
    steps: usize,
    k: usize,
    // index into path.states of the state occupied at the current grid time
    seg: usize,
    noise_scale: f64,
    rng: R,
}

impl<'a, R: Rng> ObservationStream<'a, R> {
    pub fn new(path: &'a SamplePath, h: &'a DMatrix<f64>, kappa: f64, dt: f64, rng: R) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MarkovError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(MarkovError::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
        }
        let steps = grid_steps(path.horizon, dt);
        let dt = path.horizon / steps as f64;
        Ok(Self { path, h, kappa, dt, steps, k: 0, seg: 0, noise_scale: kappa * dt.sqrt(), rng })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Writes the next increment into `out` (length `n`) and returns the state
    /// occupied at the end of the step, or `None` when the grid is exhausted.
    pub fn next_into(&mut self, out: &mut [f64]) -> Option<usize> {
        if self.k >= self.steps {
            return None;
        }
        let n = self.h.ncols();
        let a = self.k as f64 * self.dt;
        let b = if self.k + 1 == self.steps { self.path.horizon } else { (self.k + 1) as f64 * self.dt };
        out[..n].fill(0.0);
        let mut t = a;
        loop {
            let s = self.path.states[self.seg];
            let seg_end = self.path.jump_times.get(self.seg).copied().unwrap_or(f64::INFINITY);
            let end = seg_end.min(b);
            let len = end - t;
            if len > 0.0 {
                for (c, o) in out[..n].iter_mut().enumerate() {
                    *o += self.h[(s, c)] * len;
                }
            }
            if seg_end <= b && self.seg < self.path.jump_times.len() {
                self.seg += 1;
                t = seg_end;
                if seg_end == b {
                    break;
                }
            } else {
                break;
            }
        }
        if self.kappa > 0.0 {
            for o in out[..n].iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                *o += self.noise_scale * xi;
            }
        }
        self.k += 1;
        Some(self.path.states[self.seg])
    }
}

/// Materializes the full increment sequence for a path.
pub fn simulate_observations(
    path: &SamplePath,
    h: &DMatrix<f64>,
    kappa: f64,
    dt: f64,
    seed: u64,
) -> Result<ObservationIncrements> {
    let mut stream = ObservationStream::new(path, h, kappa, dt, stream_rng(seed, 1))?;
    let n = h.ncols();
    let mut data = vec![0.0; stream.steps() * n];
    for chunk in data.chunks_mut(n) {
        stream.next_into(chunk);
    }
    Ok(ObservationIncrements { n, dt: stream.dt(), data })
}

/// Path and observations for one run under a single seed.
pub fn simulate_trajectory(
    model: &FiniteStateModel,
    horizon: f64,
    kappa: f64,
    dt: f64,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let path = simulate_path(model, horizon, seed)?;
    let observations = simulate_observations(&path, model.h(), kappa, dt, seed)?;
    Ok(TrajectoryBundle { path, observations, kappa, seed })
}

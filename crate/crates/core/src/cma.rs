//! CMA-ES state machine: parameter derivation, sampling, recombination,
//! evolution paths, rank-one/rank-mu covariance update and cumulative
//! step-size adaptation.
//!
//! One [`CmaState`] is advanced one generation at a time by [`step`]. All
//! randomness comes from the caller's RNG, so a run is a pure function of
//! its initial state, parameters and seed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Smallest and largest step size the adaptation is allowed to produce.
pub const SIGMA_MIN: f64 = 1e-300;
pub const SIGMA_MAX: f64 = 1e300;

/// Eigenvalues are floored at this fraction of the largest eigenvalue.
pub const EIGEN_FLOOR_RATIO: f64 = 1e-14;

/// Condition number at which a covariance matrix is considered degenerate.
pub const MAX_CONDITION: f64 = 1e14;

/// Maximum number of draws per candidate before clamping into the box.
pub const MAX_DRAWS: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaError {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("invalid population size {0}: need at least 2 to select a parent")]
    InvalidPopulation(usize),
    #[error("need at least {needed} candidates for recombination, got {got}")]
    InsufficientPopulation { needed: usize, got: usize },
    #[error("covariance matrix is degenerate and could not be decomposed")]
    CovarianceDegenerate,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("objective returned a non-finite value at candidate {0}")]
    NonFiniteFitness(usize),
}

/// Strategy constants, all derived from the dimension and population size.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_c: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E‖N(0, I)‖ for this dimension.
    pub chi_n: f64,
}

/// Default population size per dimension.
pub const LAMBDA_PER_DIM: usize = 10;

/// Derives all strategy constants for dimension `n`.
///
/// Without an override the population is `10 n`; parents are the best half
/// and recombine with equal weights.
pub fn derive_params(n: usize, lambda_override: Option<usize>) -> Result<CmaParams, CmaError> {
    if n == 0 {
        return Err(CmaError::InvalidDimension(n));
    }
    let lambda = lambda_override.unwrap_or(LAMBDA_PER_DIM * n);
    if lambda < 2 {
        return Err(CmaError::InvalidPopulation(lambda));
    }
    let mu = lambda / 2;
    let weights = vec![1.0 / mu as f64; mu];
    let mu_eff = mu_eff_of(&weights);
    let nf = n as f64;

    let c_c = 4.0 / (nf + 4.0);
    let c_sigma = (2.0 + mu_eff) / (3.0 + nf + mu_eff);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));

    Ok(CmaParams {
        n,
        lambda,
        mu,
        weights,
        mu_eff,
        c_c,
        c_sigma,
        d_sigma,
        c_1,
        c_mu,
        chi_n: expected_norm(n),
    })
}

/// Variance-effective selection mass. Equal weights give exactly `mu`.
pub fn mu_eff_of(weights: &[f64]) -> f64 {
    let first = weights[0];
    if weights.iter().all(|&w| w == first) {
        weights.len() as f64
    } else {
        1.0 / weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Expected Euclidean norm of an `n`-dimensional standard normal vector,
/// `√2 Γ((n+1)/2) / Γ(n/2)`, evaluated through log-gamma.
pub fn expected_norm(n: usize) -> f64 {
    let nf = n as f64;
    std::f64::consts::SQRT_2 * (ln_gamma((nf + 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp()
}

/// Box constraint applied to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|&v| v >= self.lower && v <= self.upper)
    }

    pub fn clamp(&self, x: &mut DVector<f64>) {
        for v in x.iter_mut() {
            *v = v.clamp(self.lower, self.upper);
        }
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::new(-5.0, 5.0)
    }
}

/// Eigendecomposition of the covariance matrix, `C = B diag(d²) Bᵀ`.
#[derive(Debug, Clone)]
pub struct EigenCache {
    pub basis: DMatrix<f64>,
    /// Square roots of the eigenvalues.
    pub scales: DVector<f64>,
    /// `C^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
    /// Generation at which the decomposition was computed.
    pub computed_at: usize,
}

impl EigenCache {
    fn identity(n: usize) -> Self {
        Self {
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            inv_sqrt: DMatrix::identity(n, n),
            computed_at: 0,
        }
    }

    fn compute(cov: &DMatrix<f64>, generation: usize) -> Result<Self, CmaError> {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::CovarianceDegenerate);
        }
        let eig = SymmetricEigen::new(cov.clone());
        if eig.eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(CmaError::CovarianceDegenerate);
        }
        let scales = eig.eigenvalues.map(f64::sqrt);
        let inv = DMatrix::from_diagonal(&scales.map(|s| 1.0 / s));
        let inv_sqrt = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
        Ok(Self {
            basis: eig.eigenvectors,
            scales,
            inv_sqrt,
            computed_at: generation,
        })
    }
}

/// Evolving search distribution.
#[derive(Debug, Clone)]
pub struct CmaState {
    /// Completed generations.
    pub t: usize,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub path_c: DVector<f64>,
    pub path_sigma: DVector<f64>,
    pub eigen: EigenCache,
    /// Consecutive generations whose covariance needed conditioning repair.
    pub ill_conditioned_streak: usize,
    /// Spread between worst and best fitness of the last generation.
    pub fitness_range: f64,
}

impl CmaState {
    pub fn new(mean: DVector<f64>, sigma: f64) -> Self {
        let n = mean.len();
        Self {
            t: 0,
            mean,
            sigma,
            cov: DMatrix::identity(n, n),
            path_c: DVector::zeros(n),
            path_sigma: DVector::zeros(n),
            eigen: EigenCache::identity(n),
            ill_conditioned_streak: 0,
            fitness_range: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Recomputes the eigendecomposition if it is older than the allowed lag.
    pub fn refresh_eigen(&mut self, params: &CmaParams) -> Result<(), CmaError> {
        if self.t.saturating_sub(self.eigen.computed_at) < eigen_lag(params) && self.t > 0 {
            return Ok(());
        }
        self.force_refresh_eigen()
    }

    fn force_refresh_eigen(&mut self) -> Result<(), CmaError> {
        match EigenCache::compute(&self.cov, self.t) {
            Ok(e) => {
                self.eigen = e;
                Ok(())
            }
            Err(_) => {
                let repaired = repair_covariance(&self.cov)?;
                self.cov = repaired.cov;
                self.eigen = EigenCache::compute(&self.cov, self.t)?;
                Ok(())
            }
        }
    }
}

/// Maximum number of generations between eigendecompositions.
pub fn eigen_lag(params: &CmaParams) -> usize {
    let rate = 10.0 * params.n as f64 * (params.c_1 + params.c_mu);
    ((1.0 / rate).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: DVector<f64>,
    /// `(x − mean) / σ` at sampling time, kept as drawn unless the point
    /// was clamped, so that the update never depends on how `mean` rounds.
    pub step: DVector<f64>,
    pub fitness: f64,
    /// Number of draws taken before the point was accepted or clamped.
    pub feasible_draws: u32,
}

impl Candidate {
    /// Candidate at `x` relative to a distribution centred at `mean` with
    /// step size `sigma`; fitness is left as NaN.
    pub fn at(x: DVector<f64>, mean: &DVector<f64>, sigma: f64) -> Self {
        let step = (&x - mean) / sigma;
        Self { x, step, fitness: f64::NAN, feasible_draws: 1 }
    }
}

/// Draws `lambda` candidates from `N(mean, σ² C)`.
///
/// With bounds, an infeasible draw is redrawn up to [`MAX_DRAWS`] times and
/// then clamped coordinate-wise. Fitness is left as NaN.
pub fn sample_population<R: Rng + ?Sized>(
    state: &mut CmaState,
    params: &CmaParams,
    bounds: Option<&Bounds>,
    rng: &mut R,
) -> Result<Vec<Candidate>, CmaError> {
    state.refresh_eigen(params)?;
    let n = state.dim();
    let bd = &state.eigen.basis * DMatrix::from_diagonal(&state.eigen.scales);
    let mut out = Vec::with_capacity(params.lambda);
    for _ in 0..params.lambda {
        let mut draws = 0;
        let (x, step) = loop {
            draws += 1;
            let z = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
            let step = &bd * z;
            let mut x = &state.mean + state.sigma * &step;
            match bounds {
                None => break (x, step),
                Some(b) if b.contains(&x) => break (x, step),
                Some(b) if draws >= MAX_DRAWS => {
                    b.clamp(&mut x);
                    let step = (&x - &state.mean) / state.sigma;
                    break (x, step);
                }
                Some(_) => {}
            }
        };
        out.push(Candidate {
            x,
            step,
            fitness: f64::NAN,
            feasible_draws: draws,
        });
    }
    Ok(out)
}

/// Weighted recombination of the `mu` best candidates (sorted ascending).
pub fn update_mean(sorted: &[Candidate], params: &CmaParams) -> Result<DVector<f64>, CmaError> {
    if sorted.len() < params.mu {
        return Err(CmaError::InsufficientPopulation {
            needed: params.mu,
            got: sorted.len(),
        });
    }
    let n = sorted[0].x.len();
    let mut mean = DVector::zeros(n);
    for (c, &w) in sorted.iter().zip(&params.weights) {
        mean.axpy(w, &c.x, 1.0);
    }
    Ok(mean)
}

/// Cumulation of the whitened mean step for step-size control.
pub fn update_path_sigma(
    state: &CmaState,
    new_mean: &DVector<f64>,
    params: &CmaParams,
) -> Result<DVector<f64>, CmaError> {
    path_sigma_after(state, &mean_step(state, new_mean)?, params)
}

/// `(new_mean − mean) / σ`, the recombined step in σ units.
fn mean_step(state: &CmaState, new_mean: &DVector<f64>) -> Result<DVector<f64>, CmaError> {
    let step = (new_mean - &state.mean) / state.sigma;
    if step.iter().any(|v| !v.is_finite()) {
        return Err(CmaError::NonFinite("mean step"));
    }
    Ok(step)
}

fn path_sigma_after(state: &CmaState, step: &DVector<f64>, params: &CmaParams) -> Result<DVector<f64>, CmaError> {
    let coeff = (params.c_sigma * (2.0 - params.c_sigma) * params.mu_eff).sqrt();
    Ok((1.0 - params.c_sigma) * &state.path_sigma + coeff * (&state.eigen.inv_sqrt * step))
}

/// Threshold on the bias-corrected step path length below which the
/// covariance path keeps accumulating.
pub fn stall_threshold(params: &CmaParams) -> f64 {
    (1.5 + 1.0 / (params.n as f64 - 0.5)) * params.chi_n
}

/// Returns 1 when the step path is short enough for the rank-one path to
/// accumulate, 0 when it is stalled. `state.t` is the generation being
/// completed, so the bias correction uses `t + 1`.
pub fn stall_indicator(state: &CmaState, params: &CmaParams) -> u8 {
    let gens = 2.0 * (state.t as f64 + 1.0);
    let correction = (1.0 - (1.0 - params.c_sigma).powf(gens)).sqrt();
    let ratio = state.path_sigma.norm() / correction;
    u8::from(ratio < stall_threshold(params))
}

pub fn update_path_c(
    state: &CmaState,
    new_mean: &DVector<f64>,
    h: u8,
    params: &CmaParams,
) -> Result<DVector<f64>, CmaError> {
    if h == 0 {
        return Ok((1.0 - params.c_c) * &state.path_c);
    }
    Ok(path_c_after(state, &mean_step(state, new_mean)?, h, params))
}

fn path_c_after(state: &CmaState, step: &DVector<f64>, h: u8, params: &CmaParams) -> DVector<f64> {
    let decayed = (1.0 - params.c_c) * &state.path_c;
    if h == 0 {
        return decayed;
    }
    let coeff = (params.c_c * (2.0 - params.c_c) * params.mu_eff).sqrt();
    decayed + coeff * step
}

/// Rank-one plus rank-mu update from the candidates' sampled steps.
/// `state.path_c` must already be updated.
pub fn update_covariance(
    state: &CmaState,
    sorted: &[Candidate],
    h: u8,
    params: &CmaParams,
) -> DMatrix<f64> {
    let stall_fix = if h == 0 {
        params.c_c * (2.0 - params.c_c)
    } else {
        0.0
    };
    let mut c = (1.0 - params.c_1 - params.c_mu) * &state.cov;
    if params.c_1 != 0.0 {
        c.ger(params.c_1, &state.path_c, &state.path_c, 1.0);
        if stall_fix != 0.0 {
            c += (params.c_1 * stall_fix) * &state.cov;
        }
    }
    if params.c_mu != 0.0 {
        for (cand, &w) in sorted.iter().zip(&params.weights) {
            c.ger(params.c_mu * w, &cand.step, &cand.step, 1.0);
        }
    }
    symmetrize(&mut c);
    c
}

/// Cumulative step-size adaptation.
pub fn update_sigma(state: &CmaState, params: &CmaParams) -> f64 {
    let ratio = state.path_sigma.norm() / params.chi_n;
    let sigma = state.sigma * ((params.c_sigma / params.d_sigma) * (ratio - 1.0)).exp();
    sigma.clamp(SIGMA_MIN, SIGMA_MAX)
}

fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepairedCovariance {
    pub cov: DMatrix<f64>,
    /// Condition number before flooring (infinite if an eigenvalue was ≤ 0).
    pub condition: f64,
    /// Whether any eigenvalue had to be raised.
    pub floored: bool,
}

/// Symmetrizes `cov` and floors its eigenvalues at
/// [`EIGEN_FLOOR_RATIO`] times the largest one, which also caps the
/// condition number at [`MAX_CONDITION`].
///
/// Non-finite input is reported as [`CmaError::CovarianceDegenerate`]; the
/// caller is expected to reset the distribution.
pub fn repair_covariance(cov: &DMatrix<f64>) -> Result<RepairedCovariance, CmaError> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(CmaError::CovarianceDegenerate);
    }
    let mut sym = cov.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) {
        return Err(CmaError::CovarianceDegenerate);
    }
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let floor = EIGEN_FLOOR_RATIO * max;
    if min >= floor {
        return Ok(RepairedCovariance {
            cov: sym,
            condition,
            floored: false,
        });
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let mut rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut rebuilt);
    Ok(RepairedCovariance {
        cov: rebuilt,
        condition,
        floored: true,
    })
}

/// Result of one generation.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Every candidate of the generation, sorted by fitness.
    pub population: Vec<Candidate>,
    /// Sampling indices of the population in selection order.
    pub ranking: Vec<usize>,
    pub evals_used: usize,
    /// Condition number of the updated covariance before repair.
    pub condition: f64,
}

impl StepOutcome {
    pub fn best(&self) -> &Candidate {
        &self.population[0]
    }
}

/// Advances `state` by one generation: sample, evaluate, rank, recombine,
/// update both paths, the covariance and the step size.
pub fn step<F, R>(
    state: &mut CmaState,
    params: &CmaParams,
    bounds: Option<&Bounds>,
    mut evaluate: F,
    rng: &mut R,
) -> Result<StepOutcome, CmaError>
where
    F: FnMut(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    let mut population = sample_population(state, params, bounds, rng)?;
    for (i, c) in population.iter_mut().enumerate() {
        c.fitness = evaluate(&c.x);
        if !c.fitness.is_finite() {
            return Err(CmaError::NonFiniteFitness(i));
        }
    }
    let mut ranking: Vec<usize> = (0..population.len()).collect();
    ranking.sort_by(|&a, &b| population[a].fitness.total_cmp(&population[b].fitness));
    let mut slots: Vec<Option<Candidate>> = population.into_iter().map(Some).collect();
    let sorted: Vec<Candidate> = ranking.iter().map(|&i| slots[i].take().unwrap()).collect();

    if sorted.len() < params.mu {
        return Err(CmaError::InsufficientPopulation { needed: params.mu, got: sorted.len() });
    }
    let mut step_mean = DVector::zeros(state.dim());
    for (c, &w) in sorted.iter().zip(&params.weights) {
        step_mean.axpy(w, &c.step, 1.0);
    }
    if step_mean.iter().any(|v| !v.is_finite()) {
        return Err(CmaError::NonFinite("mean step"));
    }
    let new_mean = &state.mean + state.sigma * &step_mean;
    state.path_sigma = path_sigma_after(state, &step_mean, params)?;
    let h = stall_indicator(state, params);
    state.path_c = path_c_after(state, &step_mean, h, params);
    let cov = update_covariance(state, &sorted, h, params);
    state.sigma = update_sigma(state, params);

    let repaired = repair_covariance(&cov)?;
    if repaired.condition >= MAX_CONDITION {
        state.ill_conditioned_streak += 1;
    } else {
        state.ill_conditioned_streak = 0;
    }
    state.cov = repaired.cov;
    state.mean = new_mean;
    state.fitness_range = sorted[sorted.len() - 1].fitness - sorted[0].fitness;
    state.t += 1;
    if repaired.floored {
        state.force_refresh_eigen()?;
    }

    Ok(StepOutcome {
        evals_used: sorted.len(),
        population: sorted,
        ranking,
        condition: repaired.condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationConfig {
    pub sigma_floor: f64,
    pub min_improvement: f64,
    /// Stagnation window in generations per dimension.
    pub stagnation_gens_per_dim: usize,
    /// Consecutive ill-conditioned generations tolerated.
    pub max_ill_conditioned: usize,
    /// Generations over which a flat population must also show no
    /// best-fitness improvement.
    pub flat_window: usize,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            sigma_floor: 1e-12,
            min_improvement: 1e-12,
            stagnation_gens_per_dim: 50,
            max_ill_conditioned: 2,
            flat_window: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    SigmaFloor,
    Stagnation,
    /// Population fitness values are indistinguishable and the best has
    /// not moved recently; happens when the step size cannot shrink further
    /// in floating point relative to the objective value.
    FlatFitness,
    IllConditioned,
}

/// Largest coordinate standard deviation of the search distribution,
/// `σ · max_i √C_ii`.
pub fn effective_step(state: &CmaState) -> f64 {
    state.sigma * state.cov.diagonal().max().sqrt()
}

/// Decides whether the current restart has converged. `history` holds the
/// best-so-far fitness of this restart, one entry per generation.
///
/// The step-size floor applies to [`effective_step`], since the covariance
/// can absorb most of the shrinking while `σ` itself stays put.
pub fn check_termination(
    state: &CmaState,
    history: &[f64],
    limits: &TerminationConfig,
) -> Option<StopReason> {
    if effective_step(state) < limits.sigma_floor {
        return Some(StopReason::SigmaFloor);
    }
    if state.ill_conditioned_streak >= limits.max_ill_conditioned {
        return Some(StopReason::IllConditioned);
    }
    if state.fitness_range < limits.min_improvement && history.len() > limits.flat_window {
        let last = history[history.len() - 1];
        if history[history.len() - 1 - limits.flat_window] - last < limits.min_improvement {
            return Some(StopReason::FlatFitness);
        }
    }
    let window = limits.stagnation_gens_per_dim * state.dim();
    if history.len() > window {
        let last = history[history.len() - 1];
        let then = history[history.len() - 1 - window];
        if then - last < limits.min_improvement {
            return Some(StopReason::Stagnation);
        }
    }
    None
}

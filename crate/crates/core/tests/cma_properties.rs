use nalgebra::{DMatrix, DVector};
use nichecma::cma::{self, derive_params, expected_norm, step, Bounds, Candidate, CmaParams, CmaState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of ‖z‖ over `samples` standard normal draws in `n` dimensions.
fn monte_carlo_norm(n: usize, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let sq: f64 = (0..n).map(|_| r.sample::<f64, _>(StandardNormal).powi(2)).sum();
        total += sq.sqrt();
    }
    total / samples as f64
}

#[test]
fn expected_norm_matches_monte_carlo() {
    for (n, seed) in [(1, 11), (2, 12), (5, 13), (20, 14)] {
        let mc = monte_carlo_norm(n, 400_000, seed);
        let exact = expected_norm(n);
        assert!((mc - exact).abs() / exact < 5e-3, "n={n}: mc={mc} exact={exact}");
    }
    assert!((monte_carlo_norm(1, 2_000_000, 1) - 0.79788).abs() < 2e-3);
    assert!((monte_carlo_norm(2, 2_000_000, 2) - 1.25331).abs() < 2e-3);
}

#[test]
fn expected_norm_large_n() {
    let r = expected_norm(400) / 400f64.sqrt();
    assert!((r - 1.0).abs() < 0.02);
    assert!(expected_norm(1000).is_finite());
}

#[test]
fn sample_mean_is_unbiased() {
    let params = derive_params(2, Some(100_000)).unwrap();
    let mut state = CmaState::new(DVector::zeros(2), 1.0);
    let pop = cma::sample_population(&mut state, &params, None, &mut rng(3)).unwrap();
    let mean = pop.iter().fold(DVector::zeros(2), |acc, c| acc + &c.x) / pop.len() as f64;
    assert!(mean.amax() < 0.02, "{mean}");
}

#[test]
fn sample_variance_follows_covariance() {
    let params = derive_params(2, Some(100_000)).unwrap();
    let mut state = CmaState::new(DVector::zeros(2), 1.0);
    state.cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 1.0]));
    let pop = cma::sample_population(&mut state, &params, None, &mut rng(4)).unwrap();
    let var = |k: usize| pop.iter().map(|c| c.x[k] * c.x[k]).sum::<f64>() / pop.len() as f64;
    let ratio = var(0) / var(1);
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn tiny_sigma_collapses_onto_mean() {
    let params = derive_params(3, None).unwrap();
    let mean = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
    let mut state = CmaState::new(mean.clone(), 1e-300);
    let pop = cma::sample_population(&mut state, &params, Some(&Bounds::default()), &mut rng(5)).unwrap();
    assert!(pop.iter().all(|c| c.x == mean));
}

/// Under a random ranking the whitened step path is stationary with
/// `E‖P_σ‖ = E‖N(0, I)‖`.
#[test]
fn path_sigma_is_stationary_under_random_selection() {
    let n = 5;
    let params = derive_params(n, None).unwrap();
    let mut state = CmaState::new(DVector::zeros(n), 1.0);
    let mut r = rng(6);
    let mut eval_rng = rng(7);
    let mut total = 0.0;
    let mut count = 0;
    for g in 0..2000 {
        step(&mut state, &params, None, |_| eval_rng.random::<f64>(), &mut r).unwrap();
        if g >= 100 {
            total += state.path_sigma.norm();
            count += 1;
        }
    }
    let mean = total / count as f64;
    let chi = expected_norm(n);
    assert!((mean - chi).abs() / chi < 0.05, "mean ‖P_σ‖ {mean}, expected {chi}");
}

/// Without a selection signal the step path starts short of its stationary
/// length, so the step size drifts down over the first generations.
/// Without a selection signal CSA has no drift in `σ`; the distribution
/// still contracts, through the covariance, since `log det C` is concave.
#[test]
fn search_distribution_contracts_under_constant_objective() {
    let n = 4;
    let params = derive_params(n, None).unwrap();
    let checkpoints = [25, 50, 75, 100];
    let mut log_sigma: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
    let mut log_scale: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
    for seed in 0..201 {
        let mut state = CmaState::new(DVector::zeros(n), 1.0);
        let mut r = rng(1000 + seed);
        for g in 1..=100 {
            step(&mut state, &params, None, |_| 1.0, &mut r).unwrap();
            if let Some(k) = checkpoints.iter().position(|&c| c == g) {
                log_sigma[k].push(state.sigma.ln());
                log_scale[k].push(state.sigma.ln() + state.cov.determinant().ln() / (2.0 * n as f64));
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let sigma: Vec<f64> = log_sigma.iter_mut().map(median).collect();
    let scale: Vec<f64> = log_scale.iter_mut().map(median).collect();
    assert!(sigma.iter().all(|m| m.abs() < 0.15), "log sigma drifted: {sigma:?}");
    assert!(scale[0] < 0.0, "{scale:?}");
    assert!(scale.windows(2).all(|w| w[1] < w[0]), "median scale not decreasing: {scale:?}");
}

fn rotated_elliptic(n: usize, seed: u64) -> impl Fn(&DVector<f64>) -> f64 {
    let rot = nichecma::bench::random_rotation(n, &mut rng(seed));
    move |x: &DVector<f64>| {
        let z = &rot * x;
        z.iter()
            .enumerate()
            .map(|(i, v)| 1e6f64.powf(i as f64 / (n - 1) as f64) * v * v)
            .sum()
    }
}

fn assert_state_invariants(state: &CmaState) {
    let c = &state.cov;
    let scale = c.amax();
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            assert!((c[(i, j)] - c[(j, i)]).abs() <= 1e-12 * scale);
        }
    }
    let eig = c.clone().symmetric_eigen().eigenvalues;
    let max = eig.max();
    assert!(eig.min() >= max * cma::EIGEN_FLOOR_RATIO * (1.0 - 1e-6), "eigenvalues {eig}");
    assert!(state.sigma.is_finite() && state.sigma > 0.0);
    assert!(state.path_c.iter().all(|v| v.is_finite()));
    assert!(state.path_sigma.iter().all(|v| v.is_finite()));
}

#[test]
fn covariance_stays_valid_for_1000_generations() {
    let n = 6;
    let f = rotated_elliptic(n, 8);
    let params = derive_params(n, None).unwrap();
    let mut state = CmaState::new(DVector::from_element(n, 1.0), 0.5);
    let mut r = rng(9);
    for _ in 0..1000 {
        step(&mut state, &params, None, &f, &mut r).unwrap();
        assert_state_invariants(&state);
    }
}

#[test]
fn sphere_2d_reaches_1e_minus_10() {
    let params = derive_params(2, None).unwrap();
    let mut state = CmaState::new(DVector::from_row_slice(&[3.0, 3.0]), 1.0);
    let mut r = rng(10);
    let mut evals = 0;
    let mut best = f64::INFINITY;
    while evals + params.lambda <= 3000 {
        let out = step(&mut state, &params, None, |x| x.norm_squared(), &mut r).unwrap();
        evals += out.evals_used;
        best = best.min(out.best().fitness);
    }
    assert!(best < 1e-10, "best {best}");
}

/// Objective that keeps the search moving: a sharp ridge along the first
/// coordinate.
fn ridge(x: &DVector<f64>) -> f64 {
    -x[0] + 100.0 * x.rows(1, x.len() - 1).norm()
}

struct Trajectory {
    rankings: Vec<Vec<usize>>,
    best: Vec<f64>,
    state: CmaState,
}

fn run_trajectory<F: Fn(&DVector<f64>) -> f64>(f: F, start: DVector<f64>, generations: usize, seed: u64) -> Trajectory {
    let params = derive_params(start.len(), None).unwrap();
    let mut state = CmaState::new(start, 1.0);
    let mut r = rng(seed);
    let mut rankings = Vec::new();
    let mut best = Vec::new();
    for _ in 0..generations {
        let out = step(&mut state, &params, None, &f, &mut r).unwrap();
        best.push(out.best().fitness);
        rankings.push(out.ranking);
    }
    Trajectory { rankings, best, state }
}

fn same_state(a: &CmaState, b: &CmaState) -> bool {
    a.mean == b.mean && a.sigma == b.sigma && a.cov == b.cov && a.path_c == b.path_c && a.path_sigma == b.path_sigma
}

#[test]
fn selection_is_invariant_under_monotone_transforms() {
    let start = DVector::from_row_slice(&[0.3, -0.2, 0.1, 0.4, -0.5]);
    let base = run_trajectory(ridge, start.clone(), 200, 21);
    let transforms: [fn(f64) -> f64; 3] = [|v| 2.0 * v + 7.0, |v| v * v.abs(), |v| v * v * v];
    for g in transforms {
        let t = run_trajectory(|x| g(ridge(x)), start.clone(), 200, 21);
        assert_eq!(t.rankings, base.rankings);
        assert!(same_state(&t.state, &base.state));
    }

    let sphere_start = DVector::from_row_slice(&[3.0, -1.0, 2.0]);
    let base = run_trajectory(|x| x.norm_squared(), sphere_start.clone(), 100, 22);
    let t = run_trajectory(|x| x.norm_squared().ln(), sphere_start, 100, 22);
    assert_eq!(t.rankings, base.rankings);
    assert!(same_state(&t.state, &base.state));
}

#[test]
fn search_is_equivariant_under_translation() {
    let start = DVector::from_row_slice(&[0.3, -0.2, 0.1, 0.4, -0.5]);
    let shift = DVector::from_row_slice(&[1.5, -2.25, 0.75, 3.0, -0.5]);
    let base = run_trajectory(ridge, start.clone(), 200, 31);
    let moved = |x: &DVector<f64>| ridge(&(x - &shift));
    let t = run_trajectory(moved, &start + &shift, 200, 31);
    assert_eq!(t.rankings, base.rankings);
    for (a, b) in t.best.iter().zip(&base.best) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
    let drift = (&t.state.mean - &shift - &base.state.mean).norm() / base.state.mean.norm().max(1.0);
    assert!(drift < 1e-9, "translated mean drift {drift}");
    assert!((t.state.sigma / base.state.sigma - 1.0).abs() < 1e-9);
}

fn params_strategy() -> impl Strategy<Value = CmaParams> {
    (1usize..60, prop::option::of(2usize..500)).prop_map(|(n, l)| derive_params(n, l).unwrap())
}

proptest! {
    #[test]
    fn params_invariants(p in params_strategy()) {
        let sum: f64 = p.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.weights.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.mu >= 1 && p.mu <= p.lambda);
        for r in [p.c_c, p.c_sigma, p.c_1] {
            prop_assert!(r > 0.0 && r < 1.0);
        }
        // a single parent carries no rank-mu information
        if p.mu == 1 {
            prop_assert_eq!(p.c_mu, 0.0);
        } else {
            prop_assert!(p.c_mu > 0.0 && p.c_mu < 1.0);
        }
        prop_assert!(p.c_1 + p.c_mu <= 1.0);
        prop_assert!(p.d_sigma >= 1.0);
        prop_assert!(p.mu_eff >= 1.0);
        prop_assert!((p.mu_eff - p.mu as f64).abs() < 1e-9 * p.mu as f64);
    }

    #[test]
    fn mean_update_ignores_order_within_parents(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 8),
        seed in any::<u64>(),
    ) {
        let params = derive_params(3, Some(8)).unwrap();
        let cands: Vec<Candidate> = pts
            .iter()
            .map(|p| Candidate::at(DVector::from_row_slice(p), &DVector::zeros(3), 1.0))
            .collect();
        let m0 = cma::update_mean(&cands, &params).unwrap();
        let mut parents: Vec<Candidate> = cands[..params.mu].to_vec();
        let mut r = rng(seed);
        for i in (1..parents.len()).rev() {
            parents.swap(i, r.random_range(0..=i));
        }
        parents.extend_from_slice(&cands[params.mu..]);
        let m1 = cma::update_mean(&parents, &params).unwrap();
        prop_assert!((m0 - m1).amax() < 1e-12);
    }

    #[test]
    fn step_preserves_state_invariants(seed in any::<u64>(), n in 2usize..8, gens in 1usize..40) {
        let f = rotated_elliptic(n, seed ^ 0x5555);
        let params = derive_params(n, None).unwrap();
        let mut state = CmaState::new(DVector::from_element(n, 0.5), 1.0);
        let mut r = rng(seed);
        for _ in 0..gens {
            let out = step(&mut state, &params, Some(&Bounds::default()), &f, &mut r).unwrap();
            prop_assert_eq!(out.evals_used, params.lambda);
            prop_assert!(out.population.iter().all(|c| Bounds::default().contains(&c.x)));
            prop_assert!(out.population.windows(2).all(|w| w[0].fitness <= w[1].fitness));
            assert_state_invariants(&state);
        }
    }

    #[test]
    fn repair_output_is_symmetric_with_floored_spectrum(
        entries in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let cov = &a * a.transpose() + DMatrix::from_fn(4, 4, |i, j| if i < j { 1e-9 } else { 0.0 });
        let out = cma::repair_covariance(&cov).unwrap();
        prop_assert!(out.cov == out.cov.transpose());
        let eig = out.cov.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= eig.max() * cma::EIGEN_FLOOR_RATIO * (1.0 - 1e-6));
    }
}

use std::collections::BTreeSet;

use convex_q::dp::{simulate_policy, solve_dp, DpGrid};
use convex_q::env::{BuiltinPlant, Environment};
use convex_q::learner::blend;
use convex_q::linalg::{symmetric_eigenvalues, Matrix};
use convex_q::patterns::{cover_bound, enumerate_patterns, sample_patterns, ActivationPattern, PatternSet};
use convex_q::qnet::{QNetwork, Sign, Unit};
use convex_q::rollout::{collect_episode, compute_targets, RolloutBatch};
use convex_q::solver::{assemble, group_soft_threshold, solve, ConvexProblem, ConvexWeights, SolverConfig};
use convex_q::theorem::{bound_estimate, horizon_check, stability_matrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix<f64> {
    Matrix::from_row_major(rows, cols, data).unwrap()
}

/// `(rows, d, X data, y)` with a leading column of ones when `d > 1`.
fn design() -> impl Strategy<Value = (Matrix<f64>, Vec<f64>)> {
    (2usize..=5, 1usize..=3).prop_flat_map(|(rows, d)| {
        (
            prop::collection::vec(-2.0f64..2.0, rows * d),
            prop::collection::vec(-3.0f64..3.0, rows),
        )
            .prop_map(move |(mut data, y)| {
                if d > 1 {
                    for t in 0..rows {
                        data[t * d] = 1.0;
                    }
                }
                (matrix(rows, d, data), y)
            })
    })
}

fn problem(x: &Matrix<f64>, y: &[f64], budget: usize, seed: u64, rho_t: f64) -> ConvexProblem<f64> {
    let patterns = sample_patterns(x, budget, seed).unwrap();
    assemble(x, y, &patterns, rho_t).unwrap()
}

/// Number of eigenvalues of the symmetric `m` below `s`, from the signs of
/// the `LDLᵀ` pivots of `m − sI`.
fn count_below(m: &Matrix<f64>, s: f64) -> usize {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)] - if i == j { s } else { 0.0 }).collect())
        .collect();
    let mut negative = 0;
    for c in 0..n {
        let mut piv = a[c][c];
        if piv == 0.0 {
            piv = -1e-300;
        }
        if piv < 0.0 {
            negative += 1;
        }
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c + 1..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    negative
}

fn group_sum(w: &ConvexWeights<f64>) -> f64 {
    w.unit_norms().iter().sum()
}

fn network() -> impl Strategy<Value = QNetwork<f64>> {
    prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), any::<bool>()), 1..6).prop_map(|units| {
        let units = units
            .into_iter()
            .map(|(direction, plus)| Unit {
                direction,
                sign: if plus { Sign::Plus } else { Sign::Minus },
            })
            .collect();
        QNetwork::new(3, units).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_convex_on_feasible_points(
        (x, y) in design(),
        seed in any::<u64>(),
        t in 0.0f64..=1.0,
        scale in 0.1f64..3.0,
    ) {
        let p = problem(&x, &y, 4, seed, 0.3);
        // feasible points: solutions for two targets, scaled copies stay feasible
        let (a, _) = solve(&p, &SolverConfig::default(), None).unwrap();
        let other = assemble(&x, &y.iter().map(|v| -v).collect::<Vec<_>>(), &sample_patterns(&x, 4, seed).unwrap(), 0.3).unwrap();
        let (b, _) = solve(&other, &SolverConfig::default(), None).unwrap();
        let b = ConvexWeights::from_flat(b.input_dim(), b.patterns(), b.as_slice().iter().map(|v| v * scale).collect()).unwrap();
        let mix = blend(&b, &a, t).unwrap();
        let lhs = p.objective(&mix);
        let rhs = t * p.objective(&a) + (1.0 - t) * p.objective(&b);
        prop_assert!(lhs <= rhs + 1e-10, "{lhs} > {rhs}");
    }

    #[test]
    fn scalar_solution_follows_shrinkage_law(beta in -4.0f64..4.0, rho_t in 0.01f64..6.0) {
        let x = matrix(1, 1, vec![1.0]);
        let set = PatternSet::from_masks_unchecked(vec![ActivationPattern::new(vec![true])], String::new(), 0);
        let p = assemble(&x, &[beta], &set, rho_t).unwrap();
        let (w, report) = solve(&p, &SolverConfig::default(), None).unwrap();
        prop_assert!(report.converged);
        prop_assert!((w.w1(0)[0] - (beta - rho_t / 2.0).max(0.0)).abs() <= 1e-7);
    }

    #[test]
    fn prox_is_nonexpansive(
        a in prop::collection::vec(-5.0f64..5.0, 1..6),
        shift in prop::collection::vec(-5.0f64..5.0, 6),
        kappa in 0.0f64..4.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let (pa, pb) = (group_soft_threshold(&a, kappa), group_soft_threshold(&b, kappa));
        let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
    }

    #[test]
    fn converged_solutions_are_feasible((x, y) in design(), seed in any::<u64>(), rho_t in 0.001f64..2.0) {
        let cfg = SolverConfig::default();
        let p = problem(&x, &y, 6, seed, rho_t);
        let (w, report) = solve(&p, &cfg, None).unwrap();
        if report.converged {
            let min = p.constraint_values(w.as_slice()).into_iter().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -cfg.feas_tol, "min Gw = {min}");
        }
    }

    #[test]
    fn group_norm_shrinks_along_regularization_path((x, y) in design(), seed in any::<u64>()) {
        let cfg = SolverConfig::default();
        let sums: Vec<f64> = [0.05, 0.5, 5.0]
            .iter()
            .map(|&rho_t| group_sum(&solve(&problem(&x, &y, 5, seed, rho_t), &cfg, None).unwrap().0))
            .collect();
        prop_assert!(sums[1] <= sums[0] + 1e-6 && sums[2] <= sums[1] + 1e-6, "{sums:?}");
    }

    #[test]
    fn argmin_beats_a_grid(net in network(), x in -2.0f64..2.0, bound in 0.5f64..5.0) {
        let (u, v) = net.argmin_action_1d(&[x], bound).unwrap();
        prop_assert!(u.abs() <= bound);
        prop_assert_eq!(net.evaluate(&[x], &[u]).unwrap(), v);
        for k in 0..=2000 {
            let g = -bound + 2.0 * bound * k as f64 / 2000.0;
            prop_assert!(v <= net.evaluate(&[x], &[g]).unwrap() + 1e-12);
        }
    }

    #[test]
    fn doubling_one_direction_doubles_its_contribution(net in network(), x in -2.0f64..2.0, u in -3.0f64..3.0) {
        let mut units = net.units().to_vec();
        let base = net.evaluate(&[x], &[u]).unwrap();
        units[0].direction.iter_mut().for_each(|v| *v *= 2.0);
        let doubled = QNetwork::new(3, units.clone()).unwrap().evaluate(&[x], &[u]).unwrap();
        units.remove(0);
        let rest = QNetwork::new(3, units).unwrap().evaluate(&[x], &[u]).unwrap();
        prop_assert!(((doubled - rest) - 2.0 * (base - rest)).abs() <= 1e-12 * (1.0 + base.abs() + rest.abs()));
    }

    #[test]
    fn horizon_condition_matches_mu_sign(
        gamma in 0.05f64..1.0,
        beta in 0.01f64..10.0,
        lambda in 0.01f64..10.0,
        horizon in 1usize..60,
    ) {
        let h = horizon_check(gamma, beta, lambda, horizon).unwrap();
        let ratio = 3.0 * gamma * gamma * beta * beta / (2.0 * lambda * lambda * horizon as f64);
        prop_assert_eq!(h.horizon_ok, ratio < 1.0);
        prop_assert_eq!(h.horizon_ok, h.mu.is_some());
        if let Some(mu) = h.mu {
            prop_assert!(mu > 0.0);
        }
    }

    #[test]
    fn bound_estimate_is_degree_one(
        mu in 0.01f64..1.0,
        f in 0.1f64..5.0,
        lambda in 0.1f64..5.0,
        w in 0.1f64..5.0,
        rho in 1e-5f64..1.0,
        s in 0.1f64..10.0,
    ) {
        let base = bound_estimate(mu, f, lambda, w, rho);
        prop_assert!((bound_estimate(mu, f, lambda, w, s * rho) - s * base).abs() <= 1e-12 * s * base);
        prop_assert!((bound_estimate(mu, f, lambda, s * w, rho) - s * base).abs() <= 1e-12 * s * base);
    }

    #[test]
    fn blend_moves_exactly_alpha_of_the_gap(
        a in prop::collection::vec(-5.0f64..5.0, 12),
        b in prop::collection::vec(-5.0f64..5.0, 12),
        alpha in 0.0f64..=1.0,
    ) {
        let wa = ConvexWeights::from_flat(3, 2, a).unwrap();
        let wb = ConvexWeights::from_flat(3, 2, b).unwrap();
        let next = blend(&wa, &wb, alpha).unwrap();
        let norm = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let step = norm(next.as_slice(), wa.as_slice());
        let gap = norm(wb.as_slice(), wa.as_slice());
        prop_assert!((step - alpha * gap).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_patterns_are_realizable(rows in 2usize..=8, d in 1usize..=3, data in prop::collection::vec(-2.0f64..2.0, 24), seed in any::<u64>(), budget in 1usize..40) {
        let x = matrix(rows, d, data[..rows * d].to_vec());
        let sampled = sample_patterns(&x, budget, seed).unwrap();
        let exact = enumerate_patterns(&x, 12).unwrap();
        prop_assert!(sampled.is_subset_of(&exact));
        prop_assert!(sampled.len() <= budget);
        let bound = cover_bound(rows, x.rank()).unwrap();
        prop_assert!(exact.len() as u128 <= bound);
        prop_assert_eq!(sample_patterns(&x, budget, seed).unwrap(), sampled);
    }

    #[test]
    fn smallest_eigenvalue_bounds_rayleigh_quotients(
        rows in 1usize..6,
        d in 1usize..=3,
        data in prop::collection::vec(-2.0f64..2.0, 15),
        f1 in 0.01f64..3.0,
        f2 in 0.01f64..3.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let x = matrix(rows, d, data[..rows * d].to_vec());
        let m = stability_matrix(&x, f1, f2);
        let lambda = symmetric_eigenvalues(&m)[0];
        let n = 2 * d;
        let rayleigh = |v: &[f64]| {
            let mv = m.mul_vec(v);
            v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|a| a * a).sum::<f64>()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let best_q = (0..100_000)
            .map(|_| rayleigh(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best_q >= lambda - 1e-10, "rayleigh {best_q} below eigenvalue {lambda}");
        // bisection on the inertia count brackets the smallest eigenvalue
        let bound = m.as_slice().iter().map(|a| a.abs()).sum::<f64>() + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(&m, mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        prop_assert!((hi - lambda).abs() <= 1e-6 * (1.0 + lambda.abs()), "bisection {hi} vs eigenvalue {lambda}");
    }

    #[test]
    fn uncontrolled_plant_stays_in_unit_band(x0 in 0.0f64..=1.0, steps in 1usize..10) {
        let env = BuiltinPlant::<f64>::paper_scalar();
        let tr = collect_episode(&env, |_: &[f64]| Ok(vec![0.0]), &[x0], steps).unwrap();
        for s in &tr.states[1..] {
            prop_assert!((0.0..=0.9).contains(&s[0]));
        }
    }

    #[test]
    fn plant_is_stateless(x in -3.0f64..3.0, u in -5.0f64..5.0) {
        let env = BuiltinPlant::<f64>::paper_scalar();
        let a = (env.stage_cost(&[x], &[u]), env.transition(&[x], &[u]));
        let _ = env.stage_cost(&[-x], &[u * 0.5]);
        let b = (env.stage_cost(&[x], &[u]), env.transition(&[x], &[u]));
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1[0].to_bits(), b.1[0].to_bits());
    }

    #[test]
    fn stored_targets_replay_exactly(net in network(), x0 in 0.0f64..1.0, gamma in 0.0f64..1.0, horizon in 1usize..7) {
        let env = BuiltinPlant::<f64>::paper_scalar();
        let policy = |x: &[f64]| Ok(vec![net.argmin_action_1d(x, 5.0)?.0]);
        if let Ok(tr) = collect_episode(&env, policy, &[x0], horizon) {
            let batch = RolloutBatch::new(&env, tr, &net, gamma, 1).unwrap();
            prop_assert_eq!(batch.x.rows(), horizon);
            prop_assert_eq!(batch.x.cols(), 3);
            prop_assert!((0..horizon).all(|t| batch.x[(t, 0)] == 1.0));
            for t in 0..horizon {
                let next = batch.trajectory.input_row(t + 1);
                prop_assert_eq!(batch.z.row(t), next.as_slice());
            }
            let replay = compute_targets(&batch.z, &batch.costs, &net, gamma).unwrap();
            let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&replay), bits(&batch.targets));
            for u in &batch.trajectory.actions {
                prop_assert!(u[0].abs() <= env.action_bound());
            }
        }
    }
}

#[test]
fn dp_bellman_consistency_and_controller_floor() {
    let env = BuiltinPlant::<f64>::paper_scalar();
    let grid = DpGrid::default();
    let dp = solve_dp(&env, 5, &grid).unwrap();
    for t in 0..5 {
        for (i, &x) in dp.states.iter().enumerate().step_by(97) {
            for &u in dp.actions.iter().step_by(41) {
                let rhs = env.stage_cost(&[x], &[u]) + dp.value(t + 1, env.transition(&[x], &[u])[0]);
                assert!(dp.values[t][i] <= rhs + 1e-12, "stage {t}, x = {x}, u = {u}");
            }
        }
    }
    for k in 0..=20 {
        let x0 = k as f64 / 20.0;
        let sim = simulate_policy(&env, &dp, x0).unwrap();
        assert!(sim.cost >= dp.value(0, x0) - 5e-2, "x0 = {x0}");
    }
}

#[test]
fn dp_grid_refinement_converges() {
    let env = BuiltinPlant::<f64>::paper_scalar();
    let value = |nx: usize, nu: usize| {
        let grid = DpGrid {
            state_points: nx,
            action_points: nu,
            ..DpGrid::default()
        };
        solve_dp(&env, 5, &grid).unwrap().value(0, 1.0)
    };
    let v: Vec<f64> = [(251, 126), (501, 251), (1001, 501), (2001, 1001)]
        .iter()
        .map(|&(nx, nu)| value(nx, nu))
        .collect();
    let changes: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(changes[2] < changes[1] && changes[1] < changes[0], "{v:?}");
}

#[test]
fn pattern_sets_from_distinct_seeds_stay_in_the_arrangement() {
    let x = matrix(4, 3, vec![1.0, 0.3, -1.2, 1.0, -0.7, 0.4, 1.0, 0.1, 2.0, 1.0, 1.5, -0.2]);
    let exact: BTreeSet<String> = enumerate_patterns(&x, 12).unwrap().iter().map(|p| p.to_bit_string()).collect();
    for seed in 0..20 {
        for p in sample_patterns(&x, 22, seed).unwrap().iter() {
            assert!(exact.contains(&p.to_bit_string()));
        }
    }
}

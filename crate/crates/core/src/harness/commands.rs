use crate::dp::{simulate_policy, solve_dp};
use crate::env::{BuiltinPlant, Environment};
use crate::error::{Error, Result};
use crate::learner::{greedy_action, train, TrainOutput};
use crate::qnet::QNetwork;
use crate::rng::{stream, StreamLabel};
use crate::rollout::{collect_episode, RolloutBatch};
use crate::theorem::{theorem_report, TheoremReport};

use super::config::RunConfig;
use super::report::fmt_f64;
use super::weights::{Provenance, WeightsFile};

/// Undiscounted `horizon`-step cost of the greedy policy of `qnet` from
/// `x0`. A rollout that leaves the state guard costs `+∞`.
pub fn greedy_cost<E: Environment<f64>>(
    env: &E,
    qnet: &QNetwork<f64>,
    x0: &[f64],
    horizon: usize,
    grid_resolution: usize,
) -> Result<f64> {
    let policy = |x: &[f64]| greedy_action(env, qnet, x, grid_resolution);
    match collect_episode(env, policy, x0, horizon) {
        Ok(traj) => (0..horizon)
            .map(|t| env.cost(&traj.states[t], &traj.actions[t]))
            .sum(),
        Err(trunc) if matches!(trunc.cause, Error::StateDiverged { .. }) => Ok(f64::INFINITY),
        Err(trunc) => Err(trunc.cause),
    }
}

pub struct TrainedRun {
    pub output: TrainOutput,
    pub file: WeightsFile,
}

pub fn train_run(cfg: &RunConfig) -> Result<TrainedRun> {
    let env = cfg.plant.build()?;
    let output = train(&env, &cfg.learner)?;
    let file = WeightsFile::new(
        &output.weights,
        &output.patterns,
        Provenance {
            config_hash: cfg.hash(),
            seed: cfg.learner.seed,
            episodes: cfg.learner.episodes,
        },
    );
    Ok(TrainedRun { output, file })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub x0: f64,
    pub cost: f64,
}

pub fn cmd_eval(cfg: &RunConfig, weights: &WeightsFile, x0s: &[f64]) -> Result<Vec<EvalRow>> {
    let env = cfg.plant.build()?;
    let qnet = QNetwork::from_convex(&weights.weights()?);
    let d = 1 + env.state_dim() + env.action_dim();
    if qnet.input_dim() != d {
        return Err(Error::DimensionMismatch {
            what: "weights input",
            expected: d,
            found: qnet.input_dim(),
        });
    }
    x0s.iter()
        .map(|&x0| {
            let cost = greedy_cost(
                &env,
                &qnet,
                &[x0],
                cfg.learner.horizon,
                cfg.learner.action_grid_resolution,
            )?;
            Ok(EvalRow { x0, cost })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub x0: f64,
    /// Simulated cost of the tabulated optimal controller.
    pub lower_bound: f64,
    /// Interpolated `V_1(x0)`.
    pub dp_value: f64,
    pub extrapolated: bool,
}

pub fn cmd_baseline(cfg: &RunConfig, x0s: &[f64]) -> Result<Vec<BaselineRow>> {
    let env: BuiltinPlant<f64> = cfg.plant.build()?;
    let dp = solve_dp(&env, cfg.learner.horizon, &cfg.grid)?;
    x0s.iter()
        .map(|&x0| {
            let sim = simulate_policy(&env, &dp, x0)?;
            Ok(BaselineRow {
                x0,
                lower_bound: sim.cost,
                dp_value: dp.value(0, x0),
                extrapolated: sim.extrapolated,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub x0: f64,
    pub lower_bound: f64,
    /// Median over seeds.
    pub learned_cost: f64,
    pub ratio: f64,
    /// One cost per seed, in the config's seed order.
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1 {
    pub seeds: Vec<u64>,
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["x0", "lower_bound", "learned_cost", "ratio"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        h
    }

    pub fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut rec = vec![
                    fmt_f64(r.x0),
                    fmt_f64(r.lower_bound),
                    fmt_f64(r.learned_cost),
                    fmt_f64(r.ratio),
                ];
                rec.extend(r.per_seed.iter().map(|&c| fmt_f64(c)));
                rec
            })
            .collect()
    }
}

/// Median by total order; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains one network per seed (in parallel) unless `weights` is given,
/// evaluates every network at the config's initial states and joins the
/// result with the dynamic-programming lower bound.
pub fn cmd_table1(cfg: &RunConfig, weights: Option<&WeightsFile>) -> Result<Table1> {
    let baseline = cmd_baseline(cfg, &cfg.eval_x0)?;
    let (seeds, files) = match weights {
        Some(w) => (vec![w.provenance.seed], vec![w.clone()]),
        None => {
            let runs: Vec<Result<WeightsFile>> = std::thread::scope(|s| {
                let handles: Vec<_> = cfg
                    .seeds
                    .iter()
                    .map(|&seed| {
                        let c = cfg.clone().with_seed(seed);
                        s.spawn(move || train_run(&c).map(|r| r.file))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training thread panicked"))
                    .collect()
            });
            (cfg.seeds.clone(), runs.into_iter().collect::<Result<Vec<_>>>()?)
        }
    };
    let per_seed: Vec<Vec<EvalRow>> = files
        .iter()
        .map(|f| cmd_eval(cfg, f, &cfg.eval_x0))
        .collect::<Result<_>>()?;
    let rows = baseline
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let costs: Vec<f64> = per_seed.iter().map(|rows| rows[i].cost).collect();
            let learned = median(&costs);
            Table1Row {
                x0: b.x0,
                lower_bound: b.lower_bound,
                learned_cost: learned,
                ratio: learned / b.lower_bound,
                per_seed: costs,
            }
        })
        .collect();
    Ok(Table1 { seeds, rows })
}

/// Theorem diagnostics for loaded weights: `F` comes from the weights and
/// `(X, trajectory)` from one greedy episode under their network, started
/// where training's next episode would start.
pub fn cmd_diag(cfg: &RunConfig, weights: &WeightsFile) -> Result<TheoremReport> {
    let env = cfg.plant.build()?;
    let w = weights.weights()?;
    let qnet = QNetwork::from_convex(&w);
    let lc = &cfg.learner;
    let index = weights.provenance.episodes as u64 + 1;
    let mut rng = stream(weights.provenance.seed, StreamLabel::EpisodeStart, index);
    let x1 = env.sample_initial_state(&mut rng);
    let policy = |x: &[f64]| greedy_action(&env, &qnet, x, lc.action_grid_resolution);
    let traj = collect_episode(&env, policy, &x1, lc.horizon).map_err(|t| t.cause)?;
    let batch = RolloutBatch::new(&env, traj, &qnet, lc.gamma, index as usize)?;
    theorem_report(
        &batch.x,
        &batch.trajectory,
        &w,
        lc.rho,
        lc.gamma,
        lc.step_schedule.constant_alpha(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn zero_network_cost() {
        let env = BuiltinPlant::paper_scalar();
        let q = QNetwork::empty(3);
        let c = greedy_cost(&env, &q, &[0.5], 5, 21).unwrap();
        // x iterates 0.9 x² from 0.5 under u = 0; each stage costs 5 x²
        let mut x = 0.5f64;
        let mut want = 0.0;
        for _ in 0..5 {
            want += 5.0 * x * x;
            x = 0.9 * x * x;
        }
        assert!((c - want).abs() < 1e-15);
        assert!((c - 1.514).abs() < 1e-3);
        assert_eq!(greedy_cost(&env, &q, &[0.0], 5, 21).unwrap(), 0.0);
    }
}

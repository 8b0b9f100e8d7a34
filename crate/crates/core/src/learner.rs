//! Episodic learning: greedy rollouts under a frozen network, a convex refit
//! per episode, and the blended update `w_{k+1} = w_k + α_k (w − w_k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::patterns::{sample_patterns_with, PatternSet};
use crate::qnet::QNetwork;
use crate::rng::{stream, StreamLabel};
use crate::rollout::{collect_episode, RolloutBatch, Trajectory};
use crate::scalar::{norm_inf, Real};
use crate::solver::{assemble, solve, ConvexWeights, SolverConfig, SolverReport};

const BOOTSTRAP_ATTEMPTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `α_k = α` with `0 < α < 1`.
    Constant { alpha: f64 },
    /// `α_k = 1/k`.
    Harmonic,
}

impl StepSchedule {
    pub fn step_size(&self, episode: usize) -> f64 {
        assert!(episode >= 1, "episodes are numbered from 1");
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Harmonic => 1.0 / episode as f64,
        }
    }

    pub fn constant_alpha(&self) -> Option<f64> {
        match *self {
            StepSchedule::Constant { alpha } => Some(alpha),
            StepSchedule::Harmonic => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternPolicy {
    /// Masks drawn once from the bootstrap rollout.
    FixedInitial,
    /// Masks redrawn from every episode's design matrix, count held at the
    /// bootstrap `P` by truncation or all-ones padding.
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub rho: f64,
    pub horizon: usize,
    pub episodes: usize,
    pub pattern_budget: usize,
    pub pattern_policy: PatternPolicy,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    pub solver: SolverConfig,
    pub warm_start: bool,
    /// Points per action axis for the grid argmin used when `m > 1`.
    pub action_grid_resolution: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            rho: 1e-4,
            horizon: 5,
            episodes: 1000,
            pattern_budget: 22,
            pattern_policy: PatternPolicy::FixedInitial,
            step_schedule: StepSchedule::Harmonic,
            seed: 0,
            solver: SolverConfig::default(),
            warm_start: true,
            action_grid_resolution: 21,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(bad("rho", format!("must be positive, got {}", self.rho)));
        }
        if self.horizon == 0 {
            return Err(bad("horizon", "must be at least 1".into()));
        }
        if self.pattern_budget == 0 {
            return Err(bad("pattern_budget", "must be at least 1".into()));
        }
        if let StepSchedule::Constant { alpha } = self.step_schedule {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(bad("step_schedule.alpha", format!("must lie in (0, 1), got {alpha}")));
            }
        }
        if self.action_grid_resolution < 2 {
            return Err(bad("action_grid_resolution", "must be at least 2".into()));
        }
        self.solver.validate()
    }
}

/// `w_k + α (w − w_k)`, unit by unit.
pub fn blend<T: Real>(current: &ConvexWeights<T>, solved: &ConvexWeights<T>, alpha: T) -> Result<ConvexWeights<T>> {
    if !current.same_shape(solved) {
        return Err(Error::ShapeMismatch(format!(
            "cannot blend P={} with P={}",
            current.patterns(),
            solved.patterns()
        )));
    }
    let data = current
        .as_slice()
        .iter()
        .zip(solved.as_slice())
        .map(|(&a, &b)| a + alpha * (b - a))
        .collect();
    ConvexWeights::from_flat(current.input_dim(), current.patterns(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub objective: Option<f64>,
    pub step_norm: Option<f64>,
    pub bellman_mse: Option<f64>,
    pub max_x: f64,
    pub max_u: f64,
    pub aborted: bool,
    pub solver_converged: Option<bool>,
    pub alpha: Option<f64>,
    /// `‖w_solve − w_k‖∞`.
    pub solve_gap: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub iterations: Option<usize>,
    /// Discount used for the targets, repeated on every row.
    pub gamma: f64,
}

pub type TrainingTrace = Vec<TraceRow>;

/// Everything produced by one completed (non-aborted) episode.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub batch: RolloutBatch<f64>,
    pub patterns: PatternSet,
    pub solved: ConvexWeights<f64>,
    pub report: SolverReport,
    pub previous: ConvexWeights<f64>,
    pub next: ConvexWeights<f64>,
    pub alpha: f64,
}

/// Greedy action at `x` under `qnet`: exact for scalar actions, grid otherwise.
pub fn greedy_action<E: Environment<f64> + ?Sized>(
    env: &E,
    qnet: &QNetwork<f64>,
    x: &[f64],
    grid_resolution: usize,
) -> Result<Vec<f64>> {
    let c = env.action_bound();
    if env.action_dim() == 1 {
        Ok(vec![qnet.argmin_action_1d(x, c)?.0])
    } else {
        let m = env.action_dim();
        Ok(qnet
            .argmin_action_grid(x, &vec![-c; m], &vec![c; m], grid_resolution)?
            .0)
    }
}

/// Runs the bootstrap rollout with uniform random actions and draws the
/// pattern set from its design matrix. Initial weights are zero.
pub fn bootstrap<E: Environment<f64>>(env: &E, config: &LearnerConfig) -> Result<(PatternSet, ConvexWeights<f64>)> {
    let mut rng = stream(config.seed, StreamLabel::Bootstrap, 0);
    let c = env.action_bound();
    let m = env.action_dim();
    for _ in 0..BOOTSTRAP_ATTEMPTS {
        let x1 = env.sample_initial_state(&mut rng);
        let policy = |_: &[f64]| -> Result<Vec<f64>> { Ok((0..m).map(|_| rng_uniform(&mut rng, c)).collect()) };
        // the closure borrows rng mutably; collect before the next draw
        let outcome = collect_episode(env, policy, &x1, config.horizon);
        if let Ok(traj) = outcome {
            let (x, _, _) = crate::rollout::build_design_matrices(env, &traj)?;
            let mut gates = stream(config.seed, StreamLabel::Gates, 0);
            let patterns = sample_patterns_with(&x, config.pattern_budget, config.seed, &mut gates)?;
            let d = 1 + env.state_dim() + m;
            let w = ConvexWeights::zeros(d, patterns.len());
            return Ok((patterns, w));
        }
    }
    Err(Error::BootstrapFailed(BOOTSTRAP_ATTEMPTS))
}

fn rng_uniform<R: Rng + ?Sized>(rng: &mut R, c: f64) -> f64 {
    rng.random_range(-c..=c)
}

pub enum EpisodeOutcome {
    Completed(Box<EpisodeRecord>),
    Aborted(Trajectory<f64>),
}

/// Stateful driver; [`train`] runs it for the configured number of episodes.
pub struct Learner<'e, E> {
    env: &'e E,
    config: LearnerConfig,
    patterns: PatternSet,
    weights: ConvexWeights<f64>,
    network: QNetwork<f64>,
    episode: usize,
    trace: TrainingTrace,
}

impl<'e, E: Environment<f64>> Learner<'e, E> {
    pub fn new(env: &'e E, config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let (patterns, weights) = bootstrap(env, &config)?;
        let network = QNetwork::from_convex(&weights);
        Ok(Self {
            env,
            config,
            patterns,
            weights,
            network,
            episode: 0,
            trace: Vec::new(),
        })
    }

    pub fn weights(&self) -> &ConvexWeights<f64> {
        &self.weights
    }

    pub fn network(&self) -> &QNetwork<f64> {
        &self.network
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    fn episode_patterns(&self, batch: &RolloutBatch<f64>, k: usize) -> Result<PatternSet> {
        match self.config.pattern_policy {
            PatternPolicy::FixedInitial => Ok(self.patterns.clone()),
            PatternPolicy::PerEpisode => {
                let mut gates = stream(self.config.seed, StreamLabel::Gates, k as u64);
                let fresh = sample_patterns_with(&batch.x, self.config.pattern_budget, self.config.seed, &mut gates)?;
                let masks = fresh.resized(self.patterns.len(), batch.horizon());
                Ok(PatternSet::from_masks_unchecked(masks, fresh.source_fingerprint, fresh.seed))
            }
        }
    }

    /// Runs episode `k = episodes_done() + 1`.
    pub fn run_episode(&mut self) -> Result<EpisodeOutcome> {
        let k = self.episode + 1;
        self.episode = k;
        let cfg = &self.config;
        let mut start_rng = stream(cfg.seed, StreamLabel::EpisodeStart, k as u64);
        let x1 = self.env.sample_initial_state(&mut start_rng);
        let env = self.env;
        let net = &self.network;
        let resolution = cfg.action_grid_resolution;
        let policy = |x: &[f64]| greedy_action(env, net, x, resolution);

        let traj = match collect_episode(env, policy, &x1, cfg.horizon) {
            Ok(t) => t,
            Err(trunc) => {
                if !matches!(trunc.cause, Error::StateDiverged { .. }) {
                    return Err(trunc.cause);
                }
                let (max_x, max_u) = extremes(&trunc.prefix);
                self.trace.push(TraceRow {
                    k,
                    objective: None,
                    step_norm: None,
                    bellman_mse: None,
                    max_x,
                    max_u,
                    aborted: true,
                    solver_converged: None,
                    alpha: None,
                    solve_gap: None,
                    kkt_residual: None,
                    iterations: None,
                    gamma: cfg.gamma,
                });
                return Ok(EpisodeOutcome::Aborted(trunc.prefix));
            }
        };

        let batch = RolloutBatch::new(env, traj, net, cfg.gamma, k)?;
        let patterns = self.episode_patterns(&batch, k)?;
        let rho_t = cfg.rho * cfg.horizon as f64;
        let problem = assemble(&batch.x, &batch.targets, &patterns, rho_t)?;
        let start = cfg.warm_start.then_some(&self.weights);
        let (solved, report) = solve(&problem, &cfg.solver, start)?;

        let alpha = cfg.step_schedule.step_size(k);
        let next = blend(&self.weights, &solved, alpha)?;
        let next_net = QNetwork::from_convex(&next);
        let bellman_mse = (0..batch.horizon())
            .map(|t| {
                let q = next_net.evaluate_input(batch.x.row(t))?;
                Ok((batch.targets[t] - q).powi(2))
            })
            .sum::<Result<f64>>()?
            / batch.horizon() as f64;
        let (max_x, max_u) = extremes(&batch.trajectory);
        self.trace.push(TraceRow {
            k,
            objective: Some(report.objective),
            step_norm: Some(next.distance_inf(&self.weights)?),
            bellman_mse: Some(bellman_mse),
            max_x,
            max_u,
            aborted: false,
            solver_converged: Some(report.converged),
            alpha: Some(alpha),
            solve_gap: Some(solved.distance_inf(&self.weights)?),
            kkt_residual: Some(report.kkt_residual),
            iterations: Some(report.iterations),
            gamma: cfg.gamma,
        });

        let previous = std::mem::replace(&mut self.weights, next.clone());
        self.network = next_net;
        Ok(EpisodeOutcome::Completed(Box::new(EpisodeRecord {
            batch,
            patterns,
            solved,
            report,
            previous,
            next,
            alpha,
        })))
    }
}

fn extremes(traj: &Trajectory<f64>) -> (f64, f64) {
    let h = traj.horizon().max(1).min(traj.actions.len());
    let max_x = traj.states.iter().map(|s| norm_inf(s)).fold(0.0, f64::max);
    let max_u = traj.actions[..h].iter().map(|u| norm_inf(u)).fold(0.0, f64::max);
    (max_x, max_u)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub weights: ConvexWeights<f64>,
    pub network: QNetwork<f64>,
    pub patterns: PatternSet,
    pub trace: TrainingTrace,
    /// The last completed episode, if any.
    pub last_episode: Option<Box<EpisodeRecord>>,
}

/// Runs all configured episodes, calling `observe` after each completed one.
pub fn train_with<E, F>(env: &E, config: &LearnerConfig, mut observe: F) -> Result<TrainOutput>
where
    E: Environment<f64>,
    F: FnMut(&EpisodeRecord),
{
    let mut learner = Learner::new(env, config.clone())?;
    let mut last = None;
    for _ in 0..config.episodes {
        if let EpisodeOutcome::Completed(rec) = learner.run_episode()? {
            observe(&rec);
            last = Some(rec);
        }
    }
    Ok(TrainOutput {
        weights: learner.weights.clone(),
        network: learner.network.clone(),
        patterns: learner.patterns.clone(),
        trace: learner.trace,
        last_episode: last,
    })
}

pub fn train<E: Environment<f64>>(env: &E, config: &LearnerConfig) -> Result<TrainOutput> {
    train_with(env, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BuiltinPlant, PlantKind};

    #[test]
    fn step_sizes() {
        assert_eq!(StepSchedule::Constant { alpha: 0.5 }.step_size(7), 0.5);
        assert_eq!(StepSchedule::Harmonic.step_size(4), 0.25);
        assert_eq!(StepSchedule::Harmonic.step_size(1), 1.0);
    }

    #[test]
    fn blend_examples() {
        let zero = ConvexWeights::<f64>::zeros(2, 1);
        let w = ConvexWeights::from_flat(2, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(blend(&zero, &w, 1.0).unwrap(), w);
        let half = blend(&zero, &ConvexWeights::from_flat(2, 1, vec![1.0; 4]).unwrap(), 0.5).unwrap();
        assert_eq!(half.as_slice(), &[0.5; 4]);
        let other = ConvexWeights::from_flat(2, 1, vec![9.0; 4]).unwrap();
        assert_eq!(blend(&other, &w, StepSchedule::Harmonic.step_size(1)).unwrap(), w);
        assert!(blend(&zero, &ConvexWeights::zeros(2, 2), 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = LearnerConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "gamma"));
        let c = LearnerConfig {
            step_schedule: StepSchedule::Constant { alpha: 1.0 },
            ..LearnerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_bounded() {
        let env = BuiltinPlant::paper_scalar();
        let cfg = LearnerConfig::default();
        let (p1, w1) = bootstrap(&env, &cfg).unwrap();
        let (p2, _) = bootstrap(&env, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.len() <= 22 && !p1.is_empty());
        assert!(w1.as_slice().iter().all(|&v| v == 0.0));
        let q = QNetwork::from_convex(&w1);
        assert_eq!(q.argmin_action_1d(&[0.4], 5.0).unwrap().0, 0.0);
    }

    #[test]
    fn zero_cost_plant_keeps_zero_weights() {
        let env = BuiltinPlant::new(PlantKind::ZeroCost);
        let cfg = LearnerConfig {
            episodes: 5,
            ..LearnerConfig::default()
        };
        let out = train(&env, &cfg).unwrap();
        assert!(out.weights.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.trace.len(), 5);
    }
}

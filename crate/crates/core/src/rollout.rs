//! Episode collection and the regression data built from it.

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::qnet::{input_row, QNetwork};
use crate::scalar::Real;

/// States `x_1..x_{T+1}` and actions `u_1..u_{T+1}`; the last action is the
/// policy's choice at `x_{T+1}` and is never applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Number of applied steps `T`.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Row `[1, x_tᵀ, u_tᵀ]` of the extended input sequence, `t` zero-based.
    pub fn input_row(&self, t: usize) -> Vec<T> {
        input_row(&self.states[t], &self.actions[t])
    }
}

/// An episode that left the state guard; carries everything collected so far.
#[derive(Debug)]
pub struct TruncatedEpisode<T> {
    pub prefix: Trajectory<T>,
    pub cause: Error,
}

impl<T> std::fmt::Display for TruncatedEpisode<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "episode truncated: {}", self.cause)
    }
}

/// Rolls out `policy` for `horizon` steps from `x1`.
pub fn collect_episode<T, E, P>(
    env: &E,
    mut policy: P,
    x1: &[T],
    horizon: usize,
) -> std::result::Result<Trajectory<T>, TruncatedEpisode<T>>
where
    T: Real,
    E: Environment<T> + ?Sized,
    P: FnMut(&[T]) -> Result<Vec<T>>,
{
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon + 1),
    };
    if horizon == 0 {
        return Err(TruncatedEpisode {
            prefix: traj,
            cause: Error::InvalidParameter("horizon must be at least 1".into()),
        });
    }
    let mut x = x1.to_vec();
    for t in 0..=horizon {
        let u = match policy(&x).and_then(|u| env.check(&x, &u).map(|_| u)) {
            Ok(u) => u,
            Err(cause) => {
                traj.states.push(x);
                return Err(TruncatedEpisode { prefix: traj, cause });
            }
        };
        traj.states.push(x.clone());
        traj.actions.push(u.clone());
        if t == horizon {
            break;
        }
        x = env.transition(&x, &u);
    }
    Ok(traj)
}

/// One episode's regression data.
#[derive(Clone, Debug)]
pub struct RolloutBatch<T> {
    /// `T × d`, row `t` is `[1, x_tᵀ, u_tᵀ]`.
    pub x: Matrix<T>,
    /// `T × d`, row `t` is `[1, x_{t+1}ᵀ, u_{t+1}ᵀ]`.
    pub z: Matrix<T>,
    pub costs: Vec<T>,
    pub targets: Vec<T>,
    pub trajectory: Trajectory<T>,
    pub episode: usize,
}

/// `(X, Z, c)` from a complete trajectory.
pub fn build_design_matrices<T, E>(
    env: &E,
    traj: &Trajectory<T>,
) -> Result<(Matrix<T>, Matrix<T>, Vec<T>)>
where
    T: Real,
    E: Environment<T> + ?Sized,
{
    if traj.states.len() != traj.actions.len() || traj.states.len() < 2 {
        return Err(Error::DimensionMismatch {
            what: "trajectory actions",
            expected: traj.states.len(),
            found: traj.actions.len(),
        });
    }
    let horizon = traj.horizon();
    let rows: Vec<Vec<T>> = (0..=horizon).map(|t| traj.input_row(t)).collect();
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "trajectory row",
            expected: d,
            found: r.len(),
        });
    }
    let x = Matrix::from_rows(&rows[..horizon]).expect("rows checked");
    let z = Matrix::from_rows(&rows[1..]).expect("rows checked");
    let costs = (0..horizon)
        .map(|t| env.cost(&traj.states[t], &traj.actions[t]))
        .collect::<Result<Vec<_>>>()?;
    Ok((x, z, costs))
}

/// `y_t = c_t + γ Q(Z_t)` with the frozen previous-episode network.
pub fn compute_targets<T: Real>(z: &Matrix<T>, costs: &[T], qnet: &QNetwork<T>, gamma: T) -> Result<Vec<T>> {
    if z.rows() != costs.len() {
        return Err(Error::DimensionMismatch {
            what: "costs",
            expected: z.rows(),
            found: costs.len(),
        });
    }
    (0..z.rows())
        .map(|t| Ok(costs[t] + gamma * qnet.evaluate_input(z.row(t))?))
        .collect()
}

impl<T: Real> RolloutBatch<T> {
    pub fn new<E: Environment<T> + ?Sized>(
        env: &E,
        trajectory: Trajectory<T>,
        qnet: &QNetwork<T>,
        gamma: T,
        episode: usize,
    ) -> Result<Self> {
        let (x, z, costs) = build_design_matrices(env, &trajectory)?;
        let targets = compute_targets(&z, &costs, qnet, gamma)?;
        Ok(Self {
            x,
            z,
            costs,
            targets,
            trajectory,
            episode,
        })
    }

    pub fn horizon(&self) -> usize {
        self.x.rows()
    }
}

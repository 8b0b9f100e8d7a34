//! Finite-horizon dynamic programming on a state grid for scalar plants.
//!
//! Produces the optimal time-varying controller used as the lower-bound
//! reference for learned policies.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::qnet::linspace;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpGrid {
    pub state_lo: f64,
    pub state_hi: f64,
    pub state_points: usize,
    pub action_points: usize,
}

impl Default for DpGrid {
    fn default() -> Self {
        Self {
            state_lo: -3.0,
            state_hi: 3.0,
            state_points: 2001,
            action_points: 1001,
        }
    }
}

impl DpGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: format!("grid.{field}"),
            message: message.into(),
        };
        if self.state_points < 2 {
            return Err(bad("state_points", "need at least 2 points"));
        }
        if self.action_points < 2 {
            return Err(bad("action_points", "need at least 2 points"));
        }
        if !(self.state_lo < self.state_hi) {
            return Err(bad("state_lo", "must be below state_hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DpSolution<T> {
    pub states: Vec<T>,
    pub actions: Vec<T>,
    /// `values[t]` is `V_{t+1}` on the state grid; the last table is `V_{T+1} ≡ 0`.
    pub values: Vec<Vec<T>>,
    /// `policy[t]` is the minimizing action of stage `t+1` per grid point.
    pub policy: Vec<Vec<T>>,
}

impl<T: Real> DpSolution<T> {
    pub fn horizon(&self) -> usize {
        self.policy.len()
    }

    /// `V_{stage+1}(x)` by linear interpolation, clamped at the grid ends.
    pub fn value(&self, stage: usize, x: T) -> T {
        interpolate(&self.states, &self.values[stage], x)
    }

    fn nearest(&self, x: T) -> usize {
        let lo = self.states[0];
        let hi = *self.states.last().unwrap();
        let n = self.states.len();
        let pos = ((x - lo) / (hi - lo) * T::from_usize_lossy(n - 1)).round();
        pos.max(T::zero())
            .min(T::from_usize_lossy(n - 1))
            .to_usize()
            .unwrap_or(0)
    }

    fn in_span(&self, x: T) -> bool {
        x >= self.states[0] && x <= *self.states.last().unwrap()
    }
}

/// Piecewise-linear interpolation on a uniform grid, constant beyond the ends.
pub fn interpolate<T: Real>(grid: &[T], values: &[T], x: T) -> T {
    let n = grid.len();
    let lo = grid[0];
    let hi = grid[n - 1];
    if !(x > lo) {
        return values[0];
    }
    if !(x < hi) {
        return values[n - 1];
    }
    let pos = (x - lo) / (hi - lo) * T::from_usize_lossy(n - 1);
    let i = pos.floor().to_usize().unwrap_or(0).min(n - 2);
    let frac = pos - T::from_usize_lossy(i);
    if frac == T::zero() {
        return values[i];
    }
    values[i] + (values[i + 1] - values[i]) * frac
}

/// Backward recursion `V_t(x) = min_u c(x, u) + V_{t+1}(f(x, u))` over the
/// action grid, ties to the smallest `|u|`.
pub fn solve_dp<T, E>(env: &E, horizon: usize, grid: &DpGrid) -> Result<DpSolution<T>>
where
    T: Real,
    E: Environment<T> + ?Sized,
{
    grid.validate()?;
    if env.state_dim() != 1 || env.action_dim() != 1 {
        return Err(Error::InvalidParameter(
            "dynamic programming supports scalar state and action only".into(),
        ));
    }
    let states = linspace(T::lit(grid.state_lo), T::lit(grid.state_hi), grid.state_points);
    let bound = env.action_bound();
    let mut actions = linspace(-bound, bound, grid.action_points);
    // visiting actions by increasing |u| makes strict improvement the tie rule
    actions.sort_by(|a, b| {
        a.abs()
            .partial_cmp(&b.abs())
            .unwrap()
            .then(a.partial_cmp(b).unwrap())
    });

    let mut values = vec![vec![T::zero(); states.len()]];
    let mut policy = Vec::with_capacity(horizon);
    for _stage in 0..horizon {
        let next = values.last().unwrap();
        let mut v = Vec::with_capacity(states.len());
        let mut pi = Vec::with_capacity(states.len());
        for &x in &states {
            let mut best = T::infinity();
            let mut best_u = T::zero();
            for &u in &actions {
                let xn = env.transition(&[x], &[u])[0];
                let q = env.stage_cost(&[x], &[u]) + interpolate(&states, next, xn);
                if q < best {
                    best = q;
                    best_u = u;
                }
            }
            v.push(best);
            pi.push(best_u);
        }
        values.push(v);
        policy.push(pi);
    }
    values.reverse();
    policy.reverse();
    actions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(DpSolution {
        states,
        actions,
        values,
        policy,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedCost<T> {
    pub cost: T,
    /// The true trajectory left the grid span at some stage.
    pub extrapolated: bool,
}

/// Runs the tabulated controller on the true dynamics from `x0` and sums
/// the undiscounted stage costs. Each stage uses the action stored at the
/// nearest state grid point.
pub fn simulate_policy<T, E>(env: &E, dp: &DpSolution<T>, x0: T) -> Result<SimulatedCost<T>>
where
    T: Real,
    E: Environment<T> + ?Sized,
{
    let mut x = x0;
    let mut cost = T::zero();
    let mut extrapolated = false;
    for stage in 0..dp.horizon() {
        extrapolated |= !dp.in_span(x);
        let u = dp.policy[stage][dp.nearest(x)];
        cost += env.cost(&[x], &[u])?;
        x = env.step(&[x], &[u])?[0];
    }
    Ok(SimulatedCost { cost, extrapolated })
}

//! Controlled dynamical systems `x⁺ = f(x, u)` with nonnegative stage cost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm_inf, Real};

/// A deterministic controlled plant with box-constrained actions.
///
/// Implementors provide the raw maps; [`Environment::step`] and
/// [`Environment::cost`] enforce the action box and the divergence guard.
pub trait Environment<T: Real> {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-coordinate action bound `c_u`, `|u_i| ≤ c_u`.
    fn action_bound(&self) -> T;
    /// Axis-aligned box of initial states, `(lower, upper)` per coordinate.
    fn initial_region(&self) -> (&[T], &[T]);
    /// States with `‖x‖∞` above this are treated as diverged.
    fn state_guard(&self) -> T;

    fn transition(&self, x: &[T], u: &[T]) -> Vec<T>;
    fn stage_cost(&self, x: &[T], u: &[T]) -> T;

    fn check(&self, x: &[T], u: &[T]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        if u.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                what: "action",
                expected: self.action_dim(),
                found: u.len(),
            });
        }
        let bound = self.action_bound();
        if let Some(v) = u.iter().find(|v| !(v.abs() <= bound)) {
            return Err(Error::ActionOutOfBounds {
                value: v.to_f64_lossy(),
                bound: bound.to_f64_lossy(),
            });
        }
        let size = norm_inf(x);
        if !(size <= self.state_guard()) {
            return Err(Error::StateDiverged {
                norm: size.to_f64_lossy(),
                guard: self.state_guard().to_f64_lossy(),
            });
        }
        Ok(())
    }

    fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check(x, u)?;
        Ok(self.transition(x, u))
    }

    fn cost(&self, x: &[T], u: &[T]) -> Result<T> {
        self.check(x, u)?;
        Ok(self.stage_cost(x, u))
    }

    /// Uniform draw from the initial-state box.
    fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T>
    where
        Self: Sized,
    {
        let (lo, hi) = self.initial_region();
        lo.iter()
            .zip(hi)
            .map(|(&a, &b)| {
                if a == b {
                    a
                } else {
                    let r: f64 = rng.random();
                    a + (b - a) * T::lit(r)
                }
            })
            .collect()
    }
}

/// Selector for the built-in plants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// `x⁺ = 0.9x² + 0.1u`, `c = x² + (0.1u − 2x)²`, `|u| ≤ 5`, `x₀ ∈ [0, 1]`.
    PaperScalar,
    /// `x⁺ = u`, `c = x²`; the optimal controller is known in closed form.
    DeadbeatLinear,
    /// `x⁺ = u` with `c ≡ 0`.
    ZeroCost,
}

/// One of the scalar built-in plants with its (overridable) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinPlant<T> {
    pub kind: PlantKind,
    action_bound: T,
    init_lo: [T; 1],
    init_hi: [T; 1],
    state_guard: T,
}

impl<T: Real> BuiltinPlant<T> {
    pub fn new(kind: PlantKind) -> Self {
        let (lo, hi) = match kind {
            PlantKind::PaperScalar => (0.0, 1.0),
            PlantKind::DeadbeatLinear | PlantKind::ZeroCost => (-1.0, 1.0),
        };
        Self {
            kind,
            action_bound: T::lit(5.0),
            init_lo: [T::lit(lo)],
            init_hi: [T::lit(hi)],
            state_guard: T::lit(10.0),
        }
    }

    pub fn paper_scalar() -> Self {
        Self::new(PlantKind::PaperScalar)
    }

    pub fn deadbeat_linear() -> Self {
        Self::new(PlantKind::DeadbeatLinear)
    }

    pub fn with_action_bound(mut self, bound: T) -> Result<Self> {
        if !(bound > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "action bound must be positive, got {bound}"
            )));
        }
        self.action_bound = bound;
        Ok(self)
    }

    pub fn with_initial_region(mut self, lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "empty initial region [{lo}, {hi}]"
            )));
        }
        self.init_lo = [lo];
        self.init_hi = [hi];
        Ok(self)
    }

    pub fn with_state_guard(mut self, guard: T) -> Result<Self> {
        if !(guard > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "state guard must be positive, got {guard}"
            )));
        }
        self.state_guard = guard;
        Ok(self)
    }
}

impl<T: Real> Environment<T> for BuiltinPlant<T> {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> T {
        self.action_bound
    }

    fn initial_region(&self) -> (&[T], &[T]) {
        (&self.init_lo, &self.init_hi)
    }

    fn state_guard(&self) -> T {
        self.state_guard
    }

    fn transition(&self, x: &[T], u: &[T]) -> Vec<T> {
        let (x, u) = (x[0], u[0]);
        let next = match self.kind {
            PlantKind::PaperScalar => T::lit(0.9) * x * x + T::lit(0.1) * u,
            PlantKind::DeadbeatLinear | PlantKind::ZeroCost => u,
        };
        vec![next]
    }

    fn stage_cost(&self, x: &[T], u: &[T]) -> T {
        let (x, u) = (x[0], u[0]);
        match self.kind {
            PlantKind::PaperScalar => {
                let e = T::lit(0.1) * u - T::lit(2.0) * x;
                x * x + e * e
            }
            PlantKind::DeadbeatLinear => x * x,
            PlantKind::ZeroCost => T::zero(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn benchmark() -> BuiltinPlant<f64> {
        BuiltinPlant::paper_scalar()
    }

    #[test]
    fn paper_scalar_step_values() {
        let env = benchmark();
        assert!((env.step(&[0.5], &[1.0]).unwrap()[0] - 0.325).abs() < 1e-15);
        assert_eq!(env.step(&[0.0], &[0.0]).unwrap()[0], 0.0);
        let db = BuiltinPlant::<f64>::deadbeat_linear();
        assert_eq!(db.step(&[3.7], &[-1.0]).unwrap()[0], -1.0);
    }

    #[test]
    fn paper_scalar_cost_values() {
        let env = benchmark();
        assert!((env.cost(&[0.5], &[1.0]).unwrap() - 1.06).abs() < 1e-15);
        assert!((env.cost(&[1.0], &[5.0]).unwrap() - 3.25).abs() < 1e-15);
        assert_eq!(env.cost(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_out_of_bounds_action_and_diverged_state() {
        let env = benchmark();
        assert!(matches!(
            env.step(&[0.0], &[5.5]),
            Err(Error::ActionOutOfBounds { .. })
        ));
        assert!(matches!(
            env.cost(&[11.0], &[0.0]),
            Err(Error::StateDiverged { .. })
        ));
        assert!(matches!(
            env.step(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(env.step(&[0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn initial_state_sampling() {
        let env = benchmark();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = env.sample_initial_state(&mut a);
            assert!((0.0..=1.0).contains(&x[0]));
            assert_eq!(x, env.sample_initial_state(&mut b));
        }
        let point = benchmark().with_initial_region(0.3, 0.3).unwrap();
        assert_eq!(point.sample_initial_state(&mut a), vec![0.3]);
        assert!(benchmark().with_initial_region(1.0, 0.0).is_err());
    }

    #[test]
    fn uncontrolled_paper_plant_contracts_unit_interval() {
        let env = benchmark();
        for i in 0..=100 {
            let x0 = i as f64 / 100.0;
            let x1 = env.step(&[x0], &[0.0]).unwrap()[0];
            assert!((0.0..=0.9).contains(&x1));
        }
    }

    #[test]
    fn cost_is_pure() {
        let env = benchmark();
        let a = env.cost(&[0.37], &[-2.1]).unwrap();
        for _ in 0..10 {
            assert_eq!(a.to_bits(), env.cost(&[0.37], &[-2.1]).unwrap().to_bits());
        }
    }

    #[test]
    fn works_in_single_precision() {
        let env = BuiltinPlant::<f32>::paper_scalar();
        assert!((env.step(&[0.5], &[1.0]).unwrap()[0] - 0.325).abs() < 1e-6);
    }
}

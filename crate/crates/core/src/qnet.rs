//! Two-layer ReLU Q-networks realized from convex weights.
//!
//! `Q(x, u) = Σ_i sign_i · (direction_iᵀ [1; x; u])₊`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, norm2, Real};
use crate::solver::ConvexWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Sign::Plus => v,
            Sign::Minus => -v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit<T> {
    pub direction: Vec<T>,
    pub sign: Sign,
}

impl<T: Real> Unit<T> {
    pub fn is_zero(&self) -> bool {
        self.direction.iter().all(|&v| v == T::zero())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork<T> {
    input_dim: usize,
    units: Vec<Unit<T>>,
}

impl<T: Real> QNetwork<T> {
    pub fn new(input_dim: usize, units: Vec<Unit<T>>) -> Result<Self> {
        if let Some(u) = units.iter().find(|u| u.direction.len() != input_dim) {
            return Err(Error::DimensionMismatch {
                what: "unit direction",
                expected: input_dim,
                found: u.direction.len(),
            });
        }
        Ok(Self { input_dim, units })
    }

    pub fn empty(input_dim: usize) -> Self {
        Self {
            input_dim,
            units: Vec::new(),
        }
    }

    /// One `+` unit per `w1_p` followed by one `−` unit per `w2_p`.
    /// Zero directions are kept so unit indices line up with the weights.
    pub fn from_convex(w: &ConvexWeights<T>) -> Self {
        let p = w.patterns();
        let units = (0..w.unit_count())
            .map(|j| Unit {
                direction: w.unit(j).to_vec(),
                sign: if j < p { Sign::Plus } else { Sign::Minus },
            })
            .collect();
        Self {
            input_dim: w.input_dim(),
            units,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn units(&self) -> &[Unit<T>] {
        &self.units
    }

    /// Indices of units whose direction is exactly zero.
    pub fn zero_units(&self) -> Vec<usize> {
        (0..self.units.len()).filter(|&i| self.units[i].is_zero()).collect()
    }

    /// Evaluates on a full input row `z = [1, xᵀ, uᵀ]`.
    pub fn evaluate_input(&self, z: &[T]) -> Result<T> {
        if z.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim,
                found: z.len(),
            });
        }
        Ok(self.eval_unchecked(z))
    }

    fn eval_unchecked(&self, z: &[T]) -> T {
        self.units
            .iter()
            .map(|u| u.sign.apply(dot(&u.direction, z).relu()))
            .sum()
    }

    pub fn evaluate(&self, x: &[T], u: &[T]) -> Result<T> {
        self.evaluate_input(&input_row(x, u))
    }

    /// Exact minimizer of the piecewise-linear `u ↦ Q(x, u)` on `[−c_u, c_u]`
    /// for scalar actions. Ties go to the smallest `|u|`, then the smaller `u`.
    pub fn argmin_action_1d(&self, x: &[T], bound: T) -> Result<(T, T)> {
        if x.len() + 2 != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "state for scalar-action network",
                expected: self.input_dim.saturating_sub(2),
                found: x.len(),
            });
        }
        let mut z = input_row(x, &[T::zero()]);
        let last = self.input_dim - 1;
        let mut candidates = vec![-bound, bound, T::zero()];
        for unit in &self.units {
            let slope = unit.direction[last];
            if slope != T::zero() {
                let offset = dot(&unit.direction[..last], &z[..last]);
                let u = -offset / slope;
                if u > -bound && u < bound {
                    candidates.push(u);
                }
            }
        }
        let mut best: Option<(T, T)> = None;
        for u in candidates {
            z[last] = u;
            let q = self.eval_unchecked(&z);
            best = Some(match best {
                None => (u, q),
                Some(b) => pick_better(b, (u, q), |a, c| tie_order_scalar(a, c)),
            });
        }
        Ok(best.expect("at least the endpoints are candidates"))
    }

    /// Exhaustive minimum over a uniform product grid with `resolution`
    /// points per action axis (endpoints included). Ties go to the smallest
    /// Euclidean `‖u‖`, then lexicographically smaller `u`.
    pub fn argmin_action_grid(
        &self,
        x: &[T],
        lower: &[T],
        upper: &[T],
        resolution: usize,
    ) -> Result<(Vec<T>, T)> {
        let m = lower.len();
        if upper.len() != m || x.len() + m + 1 != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "action grid",
                expected: self.input_dim.saturating_sub(1 + x.len()),
                found: m,
            });
        }
        if resolution < 2 {
            return Err(Error::InvalidParameter(
                "grid resolution must be at least 2".into(),
            ));
        }
        let axes: Vec<Vec<T>> = (0..m)
            .map(|i| linspace(lower[i], upper[i], resolution))
            .collect();
        let mut idx = vec![0usize; m];
        let mut z = input_row(x, &vec![T::zero(); m]);
        let mut best: Option<(Vec<T>, T)> = None;
        loop {
            let u: Vec<T> = idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
            z[1 + x.len()..].copy_from_slice(&u);
            let q = self.eval_unchecked(&z);
            best = Some(match best {
                None => (u, q),
                Some(b) => pick_better(b, (u, q), |a, c| tie_order_vec(a, c)),
            });
            // odometer increment
            let mut axis = 0;
            loop {
                if axis == m {
                    return Ok(best.expect("grid is nonempty"));
                }
                idx[axis] += 1;
                if idx[axis] < resolution {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }
}

pub(crate) fn input_row<T: Real>(x: &[T], u: &[T]) -> Vec<T> {
    let mut z = Vec::with_capacity(1 + x.len() + u.len());
    z.push(T::one());
    z.extend_from_slice(x);
    z.extend_from_slice(u);
    z
}

pub(crate) fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    let span = hi - lo;
    let last = T::from_usize_lossy(n - 1);
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo + span * T::from_usize_lossy(k) / last
            }
        })
        .collect()
}

/// Values within this band of each other count as tied.
fn tie_band<T: Real>(q: T) -> T {
    T::epsilon() * T::lit(64.0) * (T::one() + q.abs())
}

fn pick_better<A, T: Real>(best: (A, T), cand: (A, T), order: impl Fn(&A, &A) -> Ordering) -> (A, T) {
    let band = tie_band(best.1.min(cand.1));
    if cand.1 < best.1 - band {
        cand
    } else if cand.1 <= best.1 + band && order(&cand.0, &best.0) == Ordering::Less {
        // tie: keep the exact lower value if the preferred point is marginally higher
        cand
    } else {
        best
    }
}

fn tie_order_scalar<T: Real>(a: &T, b: &T) -> Ordering {
    a.abs()
        .partial_cmp(&b.abs())
        .unwrap_or(Ordering::Equal)
        .then(a.partial_cmp(b).unwrap_or(Ordering::Equal))
}

fn tie_order_vec<T: Real>(a: &[T], b: &[T]) -> Ordering {
    norm2(a)
        .partial_cmp(&norm2(b))
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

/// The regularized two-layer training loss
/// `‖Σ_i (X w_i)₊ w′_i − y‖² + reg · Σ_i (‖w_i‖² + w′_i²)`.
pub fn nonconvex_objective<T: Real>(x: &Matrix<T>, y: &[T], reg: T, units: &[(Vec<T>, T)]) -> T {
    let mut pred = vec![T::zero(); x.rows()];
    for (w, outer) in units {
        for (t, p) in pred.iter_mut().enumerate() {
            *p += dot(x.row(t), w).relu() * *outer;
        }
    }
    let fit: T = pred
        .iter()
        .zip(y)
        .map(|(&p, &yt)| (p - yt) * (p - yt))
        .sum();
    let penalty: T = units
        .iter()
        .map(|(w, outer)| dot(w, w) + *outer * *outer)
        .sum();
    fit + reg * penalty
}

/// Maps convex weights onto `(w_i, w′_i)` pairs with balanced scaling
/// `‖w_i‖ = |w′_i| = √‖unit‖`; zero units are dropped.
pub fn balanced_units<T: Real>(w: &ConvexWeights<T>) -> Vec<(Vec<T>, T)> {
    let p = w.patterns();
    (0..w.unit_count())
        .filter_map(|j| {
            let unit = w.unit(j);
            let n = norm2(unit);
            if n == T::zero() {
                return None;
            }
            let root = n.sqrt();
            let dir = unit.iter().map(|&v| v / root).collect();
            let outer = if j < p { root } else { -root };
            Some((dir, outer))
        })
        .collect()
}

//! Checkable constants of the episodic convergence result: the curvature
//! floor `λ`, the trajectory bound `β`, the horizon condition, the
//! contraction margin `μ` and the `C·ρ` distance estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::rollout::Trajectory;
use crate::scalar::{norm_inf, Real};
use crate::solver::ConvexWeights;

/// Diagonal `ρ / (2 v²)` per unit with `v` the unit's Euclidean norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FDiagonal<T> {
    /// `entries[j]` is `None` for zero-norm units.
    pub entries: Vec<Option<T>>,
    pub patterns: usize,
}

impl<T: Real> FDiagonal<T> {
    pub fn excluded(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&j| self.entries[j].is_none()).collect()
    }

    fn side_min(&self, side: usize) -> Option<T> {
        let range = side * self.patterns..(side + 1) * self.patterns;
        self.entries[range]
            .iter()
            .flatten()
            .copied()
            .reduce(|a, b| a.min(b))
    }

    /// Per-side scalars `(f₁, f₂)` used for the `2d × 2d` eigen-check: the
    /// smallest entry of each side. A side without active units borrows
    /// the other side's value.
    pub fn collapsed(&self) -> Result<(T, T)> {
        match (self.side_min(0), self.side_min(1)) {
            (Some(a), Some(b)) => Ok((a, b)),
            (Some(a), None) => Ok((a, a)),
            (None, Some(b)) => Ok((b, b)),
            (None, None) => Err(Error::EmptyF),
        }
    }
}

pub fn effective_f<T: Real>(w: &ConvexWeights<T>, rho: T) -> Result<FDiagonal<T>> {
    if !(rho > T::zero()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let entries: Vec<Option<T>> = w
        .unit_norms()
        .into_iter()
        .map(|v| (v > T::zero()).then(|| rho / (T::lit(2.0) * v * v)))
        .collect();
    if entries.iter().all(Option::is_none) {
        return Err(Error::EmptyF);
    }
    Ok(FDiagonal {
        entries,
        patterns: w.patterns(),
    })
}

/// `1 / v` extremes over active units: `(f_min, f_max)`.
pub fn inverse_norm_range<T: Real>(w: &ConvexWeights<T>) -> Result<(T, T)> {
    let inv: Vec<T> = w
        .unit_norms()
        .into_iter()
        .filter(|&v| v > T::zero())
        .map(|v| T::one() / v)
        .collect();
    let lo = inv.iter().copied().reduce(|a, b| a.min(b)).ok_or(Error::EmptyF)?;
    let hi = inv.iter().copied().reduce(|a, b| a.max(b)).ok_or(Error::EmptyF)?;
    Ok((lo, hi))
}

/// `β = max_t max(‖x_t‖∞², ‖u_t‖∞²)` over the `T` applied steps.
pub fn trajectory_beta<T: Real>(traj: &Trajectory<T>) -> T {
    (0..traj.horizon())
        .map(|t| {
            let a = norm_inf(&traj.states[t]);
            let b = norm_inf(&traj.actions[t]);
            a.max(b).powi(2)
        })
        .fold(T::zero(), T::max)
}

/// The matrix `(1/T)(Σ_t [X_t −X_t]ᵀ[X_t −X_t] + diag(f₁ I_d, f₂ I_d))`.
pub fn stability_matrix<T: Real>(x: &Matrix<T>, f1: T, f2: T) -> Matrix<T> {
    let d = x.cols();
    let rows = T::from_usize_lossy(x.rows().max(1));
    let gram = x.gram();
    let mut m = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let g = gram[(i, j)];
            m[(i, j)] = g;
            m[(i + d, j + d)] = g;
            m[(i, j + d)] = -g;
            m[(i + d, j)] = -g;
        }
    }
    for i in 0..d {
        m[(i, i)] += f1;
        m[(i + d, i + d)] += f2;
    }
    for v in (0..4 * d * d).map(|k| (k / (2 * d), k % (2 * d))) {
        m[v] = m[v] / rows;
    }
    m
}

/// `(λ, β)`: smallest eigenvalue of [`stability_matrix`] and the trajectory bound.
pub fn stability_constants<T: Real>(
    x: &Matrix<T>,
    traj: &Trajectory<T>,
    f: &FDiagonal<T>,
) -> Result<(T, T)> {
    let (f1, f2) = f.collapsed()?;
    let eig = symmetric_eigenvalues(&stability_matrix(x, f1, f2));
    Ok((eig[0], trajectory_beta(traj)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonCheck {
    pub t_min: f64,
    pub horizon_ok: bool,
    pub mu: Option<f64>,
}

/// `T_min = (3/2)(γβ/λ)²`; when `T > T_min`, `μ = 1 − √(3γ²β² / (2λ²T))`.
pub fn horizon_check(gamma: f64, beta: f64, lambda: f64, horizon: usize) -> Result<HorizonCheck> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let t_min = 1.5 * (gamma * beta / lambda).powi(2);
    let ratio = 3.0 * gamma * gamma * beta * beta / (2.0 * lambda * lambda * horizon as f64);
    let horizon_ok = (horizon as f64) > t_min;
    let mu = horizon_ok.then(|| 1.0 - ratio.sqrt());
    Ok(HorizonCheck {
        t_min,
        horizon_ok,
        mu,
    })
}

/// `(e^μ/μ) · (f_max/λ) · ‖w‖ · ρ`.
pub fn bound_estimate(mu: f64, f_max: f64, lambda: f64, w_norm: f64, rho: f64) -> f64 {
    mu.exp() / mu * (f_max / lambda) * w_norm * rho
}

/// Limit radius under a constant step `α`: `μα/(1−μα) · (ρ f_max/λ) · ‖w‖`.
pub fn constant_step_radius(mu: f64, alpha: f64, f_max: f64, lambda: f64, w_norm: f64, rho: f64) -> f64 {
    let ma = mu * alpha;
    ma / (1.0 - ma) * (rho * f_max / lambda) * w_norm
}

/// All diagnostics for one batch and solution. Fields ending in `_estimate`
/// substitute the converged weights for the unknown optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub rho: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub beta: f64,
    pub lambda: f64,
    pub f_diagonal: Vec<Option<f64>>,
    pub f_side_values: (f64, f64),
    pub excluded_units: Vec<usize>,
    pub f_min: f64,
    pub f_max: f64,
    pub t_min: f64,
    pub horizon_ok: bool,
    pub mu: Option<f64>,
    pub w_norm_estimate: f64,
    pub bound_estimate: Option<f64>,
    pub constant_step_radius_estimate: Option<f64>,
    /// How the per-unit `F` was mapped onto the `2d × 2d` check.
    pub f_layout: String,
}

pub fn theorem_report(
    x: &Matrix<f64>,
    traj: &Trajectory<f64>,
    w: &ConvexWeights<f64>,
    rho: f64,
    gamma: f64,
    constant_alpha: Option<f64>,
) -> Result<TheoremReport> {
    let f = effective_f(w, rho)?;
    let (f1, f2) = f.collapsed()?;
    let (lambda, beta) = stability_constants(x, traj, &f)?;
    let (f_min, f_max) = inverse_norm_range(w)?;
    let horizon = x.rows();
    let check = horizon_check(gamma, beta, lambda, horizon)?;
    let w_norm = w.norm_inf();
    let bound = check.mu.map(|mu| bound_estimate(mu, f_max, lambda, w_norm, rho));
    let radius = match (check.mu, constant_alpha) {
        (Some(mu), Some(a)) => Some(constant_step_radius(mu, a, f_max, lambda, w_norm, rho)),
        _ => None,
    };
    Ok(TheoremReport {
        rho,
        gamma,
        horizon,
        beta,
        lambda,
        f_diagonal: f.entries.clone(),
        f_side_values: (f1, f2),
        excluded_units: f.excluded(),
        f_min,
        f_max,
        t_min: check.t_min,
        horizon_ok: check.horizon_ok,
        mu: check.mu,
        w_norm_estimate: w_norm,
        bound_estimate: bound,
        constant_step_radius_estimate: radius,
        f_layout: "per-side minimum of active-unit entries, scaled identity on d coordinates".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_entries() {
        let w = ConvexWeights::from_parts(&[vec![2.0f64, 0.0]], &[vec![0.0, 0.0]]).unwrap();
        let f = effective_f(&w, 0.1).unwrap();
        assert!((f.entries[0].unwrap() - 0.0125).abs() < 1e-15);
        assert_eq!(f.entries[1], None);
        assert_eq!(f.excluded(), vec![1]);
        let unit = ConvexWeights::from_parts(&[vec![0.6f64, 0.8]], &[vec![1.0, 0.0]]).unwrap();
        assert!((effective_f(&unit, 1.0).unwrap().entries[1].unwrap() - 0.5).abs() < 1e-15);
        let zero = ConvexWeights::<f64>::zeros(2, 3);
        assert!(matches!(effective_f(&zero, 0.1), Err(Error::EmptyF)));
    }

    #[test]
    fn lambda_of_scalar_instance() {
        let x = Matrix::from_rows(&[[1.0f64]]).unwrap();
        let m = stability_matrix(&x, 0.1, 0.1);
        assert_eq!(m.as_slice(), &[1.1, -1.0, -1.0, 1.1]);
        let eig = symmetric_eigenvalues(&m);
        assert!((eig[0] - 0.1).abs() < 1e-14 && (eig[1] - 2.1).abs() < 1e-14);
        // without the F floor the stack is singular
        let eig0 = symmetric_eigenvalues(&stability_matrix(&x, 0.0, 0.0));
        assert!(eig0[0].abs() < 1e-14);
    }

    #[test]
    fn beta_from_trajectory() {
        let traj = Trajectory {
            states: vec![vec![0.2], vec![1.0], vec![0.5], vec![9.0]],
            actions: vec![vec![-5.0], vec![1.0], vec![5.0], vec![0.0]],
        };
        // the terminal state is not one of the T applied steps
        assert_eq!(trajectory_beta(&traj), 25.0);
    }

    #[test]
    fn horizon_arithmetic() {
        let h = horizon_check(0.9, 4.0, 2.0, 5).unwrap();
        assert!((h.t_min - 4.86).abs() < 1e-12);
        assert!(h.horizon_ok);
        assert!((h.mu.unwrap() - (1.0 - (38.88f64 / 40.0).sqrt())).abs() < 1e-15);
        assert!((h.mu.unwrap() - 0.0140994).abs() < 1e-7);
        let fail = horizon_check(1.0, 3.0, 3.0, 1).unwrap();
        assert!((fail.t_min - 1.5).abs() < 1e-15);
        assert!(!fail.horizon_ok && fail.mu.is_none());
        assert!(horizon_check(1.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn bound_estimate_values() {
        let b = bound_estimate(0.0141, 1.0, 1.0, 1.0, 1e-4);
        assert!((b - 0.0141f64.exp() / 0.0141 * 1e-4).abs() < 1e-15);
        assert!((b - 7.19e-3).abs() < 1e-5);
        assert_eq!(bound_estimate(0.3, 2.0, 1.0, 1.0, 0.0), 0.0);
        let r = bound_estimate(0.3, 2.0, 0.5, 1.5, 1e-3);
        assert_eq!(bound_estimate(0.3, 2.0, 0.5, 1.5, 2e-3), 2.0 * r);
    }
}

//! The per-episode convex training program and its operator-splitting solver.
//!
//! For a design matrix `X` (T×d), activation masks `D_1..D_P` and targets `y`
//! the program is
//!
//! ```text
//! minimize   ‖ Σ_p D_p X (w1_p − w2_p) − y ‖² + ρ_T Σ_p (‖w1_p‖ + ‖w2_p‖)
//! subject to (2D_p − I) X w1_p ≥ 0,  (2D_p − I) X w2_p ≥ 0
//! ```
//!
//! Decision variables are stored unit-major: units `0..P` are the `w1_p`,
//! units `P..2P` the `w2_p`, each a block of `d` consecutive entries.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nnls, Cholesky, Matrix};
use crate::patterns::PatternSet;
use crate::scalar::{dot, norm2, norm_inf, Real};

mod refine;

/// Weights of the convex program, `2P` units of dimension `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexWeights<T> {
    d: usize,
    p: usize,
    data: Vec<T>,
}

impl<T: Real> ConvexWeights<T> {
    pub fn zeros(d: usize, p: usize) -> Self {
        Self {
            d,
            p,
            data: vec![T::zero(); 2 * d * p],
        }
    }

    pub fn from_flat(d: usize, p: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != 2 * d * p {
            return Err(Error::DimensionMismatch {
                what: "convex weights",
                expected: 2 * d * p,
                found: data.len(),
            });
        }
        Ok(Self { d, p, data })
    }

    /// Builds weights from per-pattern `w1_p` and `w2_p` vectors.
    pub fn from_parts(w1: &[Vec<T>], w2: &[Vec<T>]) -> Result<Self> {
        let p = w1.len();
        let d = w1.first().or(w2.first()).map_or(0, Vec::len);
        if w2.len() != p || w1.iter().chain(w2).any(|u| u.len() != d) {
            return Err(Error::ShapeMismatch("w1/w2 unit shapes differ".into()));
        }
        let data = w1.iter().chain(w2).flatten().copied().collect();
        Ok(Self { d, p, data })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn patterns(&self) -> usize {
        self.p
    }

    pub fn unit_count(&self) -> usize {
        2 * self.p
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Unit `j` in flattening order (`j < P` → `w1_j`, otherwise `w2_{j−P}`).
    pub fn unit(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn w1(&self, p: usize) -> &[T] {
        self.unit(p)
    }

    pub fn w2(&self, p: usize) -> &[T] {
        self.unit(self.p + p)
    }

    pub fn unit_norms(&self) -> Vec<T> {
        (0..self.unit_count()).map(|j| norm2(self.unit(j))).collect()
    }

    pub fn norm_inf(&self) -> T {
        norm_inf(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.d == other.d && self.p == other.p
    }

    /// `‖self − other‖∞`; shapes must agree.
    pub fn distance_inf(&self, other: &Self) -> Result<T> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "(d={}, P={}) vs (d={}, P={})",
                self.d, self.p, other.d, other.p
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Assembled program data.
#[derive(Clone, Debug)]
pub struct ConvexProblem<T> {
    /// `T × 2dP`, columns `[D_1X … D_PX | −D_1X … −D_PX]`.
    pub a: Matrix<T>,
    /// Per-unit constraint blocks `(2D_p − I) X`, `T × d` each; unit `j` and
    /// unit `j + P` share pattern `p = j`.
    pub constraint_blocks: Vec<Matrix<T>>,
    pub y: Vec<T>,
    pub rho_t: T,
    /// Column range of each of the `2P` units.
    pub group_index: Vec<std::ops::Range<usize>>,
    d: usize,
    p: usize,
}

impl<T: Real> ConvexProblem<T> {
    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn patterns(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn unit_count(&self) -> usize {
        2 * self.p
    }

    fn block_of(&self, unit: usize) -> &Matrix<T> {
        &self.constraint_blocks[unit % self.p]
    }

    /// The dense `2PT × 2dP` constraint matrix `G` (feasibility is `G w ≥ 0`).
    pub fn constraint_matrix(&self) -> Matrix<T> {
        let rows = self.rows();
        let units = self.unit_count();
        let mut g = Matrix::zeros(units * rows, units * self.d);
        for j in 0..units {
            let block = self.block_of(j);
            for t in 0..rows {
                for c in 0..self.d {
                    g[(j * rows + t, j * self.d + c)] = block[(t, c)];
                }
            }
        }
        g
    }

    /// `G w`, unit-major.
    pub fn constraint_values(&self, w: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.unit_count() * self.rows());
        for j in 0..self.unit_count() {
            out.extend(self.block_of(j).mul_vec(&w[self.group_index[j].clone()]));
        }
        out
    }

    fn constraint_tr_mul(&self, v: &[T], out: &mut [T]) {
        let rows = self.rows();
        for j in 0..self.unit_count() {
            let g = self.block_of(j).tr_mul_vec(&v[j * rows..(j + 1) * rows]);
            out[self.group_index[j].clone()].copy_from_slice(&g);
        }
    }

    /// Linear prediction `A w`.
    pub fn predict(&self, w: &ConvexWeights<T>) -> Vec<T> {
        self.a.mul_vec(w.as_slice())
    }

    pub fn objective(&self, w: &ConvexWeights<T>) -> T {
        let fit: T = self
            .predict(w)
            .iter()
            .zip(&self.y)
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum();
        fit + self.rho_t * w.unit_norms().into_iter().sum::<T>()
    }

    /// Largest violation of `G w ≥ 0` (zero when feasible).
    pub fn max_violation(&self, w: &ConvexWeights<T>) -> T {
        self.constraint_values(w.as_slice())
            .into_iter()
            .fold(T::zero(), |m, v| m.max(-v))
    }

    pub fn zero_weights(&self) -> ConvexWeights<T> {
        ConvexWeights::zeros(self.d, self.p)
    }
}

/// Builds the program for one batch.
pub fn assemble<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    patterns: &PatternSet,
    rho_t: T,
) -> Result<ConvexProblem<T>> {
    let rows = x.rows();
    let d = x.cols();
    if y.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "targets",
            expected: rows,
            found: y.len(),
        });
    }
    if let Some(bad) = patterns.iter().find(|m| m.len() != rows) {
        return Err(Error::DimensionMismatch {
            what: "pattern length",
            expected: rows,
            found: bad.len(),
        });
    }
    if !(rho_t > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "rho_T must be positive, got {rho_t}"
        )));
    }
    let p = patterns.len();
    let mut a = Matrix::zeros(rows, 2 * d * p);
    let mut blocks = Vec::with_capacity(p);
    for (pi, mask) in patterns.iter().enumerate() {
        let mut block = Matrix::zeros(rows, d);
        for t in 0..rows {
            let on = mask.is_active(t);
            let sign = if on { T::one() } else { -T::one() };
            for c in 0..d {
                let v = x[(t, c)];
                block[(t, c)] = sign * v;
                if on {
                    a[(t, pi * d + c)] = v;
                    a[(t, (p + pi) * d + c)] = -v;
                }
            }
        }
        blocks.push(block);
    }
    let group_index = (0..2 * p).map(|j| j * d..(j + 1) * d).collect();
    Ok(ConvexProblem {
        a,
        constraint_blocks: blocks,
        y: y.to_vec(),
        rho_t,
        group_index,
        d,
        p,
    })
}

/// Proximal map of `κ‖·‖₂`: `z · max(1 − κ/‖z‖, 0)`.
pub fn group_soft_threshold<T: Real>(z: &[T], kappa: T) -> Vec<T> {
    let n = norm2(z);
    if n <= kappa || n == T::zero() {
        return vec![T::zero(); z.len()];
    }
    let scale = T::one() - kappa / n;
    z.iter().map(|&v| v * scale).collect()
}

/// Norm of the smallest element of `∂f(w) + N(w)` (zero at an optimum).
///
/// Constraint rows with value below `feas_tol` count as active. Because `G`
/// is block diagonal by unit, the residual splits into one small cone
/// projection per unit:
/// nonzero unit: `dist(∇_j + ρ_T w_j/‖w_j‖, cone(S_jᵀ))`;
/// zero unit: `max(dist(∇_j, cone(S_jᵀ)) − ρ_T, 0)`,
/// where `S_j` holds the active rows of the unit's constraint block and
/// the distances come from nonnegative least squares.
pub fn kkt_residual<T: Real>(problem: &ConvexProblem<T>, w: &ConvexWeights<T>, feas_tol: T) -> T {
    let ws = w.as_slice();
    let r: Vec<T> = problem
        .predict(w)
        .iter()
        .zip(&problem.y)
        .map(|(&p, &y)| T::lit(2.0) * (p - y))
        .collect();
    let grad = problem.a.tr_mul_vec(&r);
    let mut total = T::zero();
    for j in 0..problem.unit_count() {
        let range = problem.group_index[j].clone();
        let wj = &ws[range.clone()];
        let gj = &grad[range];
        let block = problem.block_of(j);
        let slack = block.mul_vec(wj);
        let active: Vec<usize> = (0..slack.len()).filter(|&t| slack[t] < feas_tol).collect();
        let nrm = norm2(wj);
        let (target, shrink) = if nrm > T::zero() {
            let t: Vec<T> = gj
                .iter()
                .zip(wj)
                .map(|(&g, &v)| g + problem.rho_t * v / nrm)
                .collect();
            (t, T::zero())
        } else {
            (gj.to_vec(), problem.rho_t)
        };
        let dist = cone_distance(block, &active, &target);
        let rj = (dist - shrink).max(T::zero());
        total += rj * rj;
    }
    total.sqrt()
}

/// Distance from `b` to the cone generated by the selected rows of `block`.
fn cone_distance<T: Real>(block: &Matrix<T>, rows: &[usize], b: &[T]) -> T {
    if rows.is_empty() {
        return norm2(b);
    }
    let d = block.cols();
    let mut gen = Matrix::zeros(d, rows.len());
    for (k, &t) in rows.iter().enumerate() {
        for c in 0..d {
            gen[(c, k)] = block[(t, c)];
        }
    }
    let mu = nnls(&gen, b);
    let fit = gen.mul_vec(&mu);
    let res: Vec<T> = b.iter().zip(fit).map(|(&bi, fi)| bi - fi).collect();
    norm2(&res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub feas_tol: f64,
    /// Initial augmented-Lagrangian penalty; adapted during the solve.
    pub penalty: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            kkt_tol: 1e-7,
            feas_tol: 1e-8,
            penalty: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: format!("solver.{field}"),
            message: message.into(),
        };
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be at least 1"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(bad("kkt_tol", "must be positive"));
        }
        if !(self.feas_tol > 0.0) {
            return Err(bad("feas_tol", "must be positive"));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(bad("penalty", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub converged: bool,
    pub wall_time_secs: f64,
}

/// Cached factorization of `2AᵀA + σ(I + GᵀG)`.
///
/// `GᵀG` is block diagonal and every block equals `XᵀX`, so the
/// `σ(I + GᵀG)` part is one `d×d` Cholesky factor `B` shared by all units;
/// the rank-`T` data term goes through Woodbury with a `T×T` factor of
/// `½I + A B⁻¹ Aᵀ`.
struct KktSystem<T> {
    block: Cholesky<T>,
    capacitance: Cholesky<T>,
    /// `B⁻¹ Aᵀ`, `2dP × T`, stored as `T` columns.
    binv_at: Vec<Vec<T>>,
}

impl<T: Real> KktSystem<T> {
    fn new(problem: &ConvexProblem<T>, sigma: T) -> Option<Self> {
        let d = problem.d;
        let rows = problem.rows();
        // every constraint block satisfies SᵀS = XᵀX
        let gram = problem.constraint_blocks.first().map(Matrix::gram)?;
        let mut bmat = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                bmat[(i, j)] = sigma * (bmat[(i, j)] + gram[(i, j)]);
            }
        }
        let block = Cholesky::new(&bmat)?;
        let n = problem.a.cols();
        let mut binv_at = Vec::with_capacity(rows);
        for t in 0..rows {
            let row = problem.a.row(t);
            let mut col = vec![T::zero(); n];
            for g in &problem.group_index {
                let s = block.solve(&row[g.clone()]);
                col[g.clone()].copy_from_slice(&s);
            }
            binv_at.push(col);
        }
        let mut cap = Matrix::zeros(rows, rows);
        for i in 0..rows {
            for j in 0..rows {
                cap[(i, j)] = dot(problem.a.row(i), &binv_at[j]);
            }
            cap[(i, i)] += T::lit(0.5);
        }
        let capacitance = Cholesky::new(&cap)?;
        Some(Self {
            block,
            capacitance,
            binv_at,
        })
    }

    fn solve(&self, problem: &ConvexProblem<T>, rhs: &[T]) -> Vec<T> {
        let mut v = vec![T::zero(); rhs.len()];
        for g in &problem.group_index {
            let s = self.block.solve(&rhs[g.clone()]);
            v[g.clone()].copy_from_slice(&s);
        }
        let av = problem.a.mul_vec(&v);
        let c = self.capacitance.solve(&av);
        for (t, &ct) in c.iter().enumerate() {
            for (vi, &bi) in v.iter_mut().zip(&self.binv_at[t]) {
                *vi -= bi * ct;
            }
        }
        v
    }
}

/// Solves the program by ADMM with two splitting copies: `z = w` carries
/// the group-norm prox and `s = G w` the projection onto `s ≥ 0`.
///
/// `start` warm-starts the iterate (shapes must match). Once the residuals
/// are small the iterate is refined by an active-set search; the returned
/// weights are the first candidate that passes the KKT and feasibility
/// tolerances, or the group-sparse copy `z` otherwise. A report with
/// `converged = false` is returned when `max_iter` is reached.
pub fn solve<T: Real>(
    problem: &ConvexProblem<T>,
    config: &SolverConfig,
    start: Option<&ConvexWeights<T>>,
) -> Result<(ConvexWeights<T>, SolverReport)> {
    config.validate()?;
    let clock = Instant::now();
    let n = problem.a.cols();
    let m = problem.unit_count() * problem.rows();
    let feas_tol = T::lit(config.feas_tol);
    let kkt_tol = T::lit(config.kkt_tol);

    if problem.unit_count() == 0 || problem.rows() == 0 {
        let w = problem.zero_weights();
        let report = SolverReport {
            objective: problem.objective(&w).to_f64_lossy(),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            kkt_residual: 0.0,
            max_violation: 0.0,
            converged: true,
            wall_time_secs: clock.elapsed().as_secs_f64(),
        };
        return Ok((w, report));
    }

    let mut z = match start {
        Some(s) if s.same_shape(&problem.zero_weights()) && s.is_finite() => s.as_slice().to_vec(),
        Some(s) if !s.same_shape(&problem.zero_weights()) => {
            return Err(Error::ShapeMismatch(format!(
                "warm start has d={}, P={}; problem has d={}, P={}",
                s.input_dim(),
                s.patterns(),
                problem.d,
                problem.p
            )))
        }
        _ => vec![T::zero(); n],
    };
    let mut s: Vec<T> = problem
        .constraint_values(&z)
        .into_iter()
        .map(|v| v.max(T::zero()))
        .collect();
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); m];

    // scale the penalty with the data so the default works across problem sizes
    let data_scale = problem
        .a
        .gram()
        .as_slice()
        .iter()
        .fold(T::zero(), |acc, &x| acc.max(x.abs()))
        .max(T::lit(1e-8));
    let mut sigma = T::lit(config.penalty) * data_scale;
    let mut system = KktSystem::new(problem, sigma).expect("σ-augmented system is positive definite");

    let two = T::lit(2.0);
    let aty: Vec<T> = problem.a.tr_mul_vec(&problem.y).iter().map(|&x| two * x).collect();
    let relax = T::lit(1.6);

    let mut primal = T::infinity();
    let mut dual = T::infinity();
    let mut kkt = T::infinity();
    let mut iterations = 0;
    let mut converged = false;
    let mut gt_buf = vec![T::zero(); n];
    let check_every = 10;
    let refine_gate = T::lit(1e-3);
    let mut next_refine = 0usize;
    let mut refine_every = 50usize;
    let mut result: Option<ConvexWeights<T>> = None;

    for iter in 1..=config.max_iter {
        iterations = iter;
        // w-update
        let sv: Vec<T> = s.iter().zip(&v).map(|(&a, &b)| a - b).collect();
        problem.constraint_tr_mul(&sv, &mut gt_buf);
        let rhs: Vec<T> = (0..n)
            .map(|i| aty[i] + sigma * (z[i] - u[i] + gt_buf[i]))
            .collect();
        let w = system.solve(problem, &rhs);
        let gw = problem.constraint_values(&w);

        // over-relaxed copies
        let w_hat: Vec<T> = (0..n)
            .map(|i| relax * w[i] + (T::one() - relax) * z[i])
            .collect();
        let gw_hat: Vec<T> = (0..m)
            .map(|i| relax * gw[i] + (T::one() - relax) * s[i])
            .collect();

        // z-update: group prox
        let z_old = z.clone();
        let kappa = problem.rho_t / sigma;
        for g in &problem.group_index {
            let arg: Vec<T> = g.clone().map(|i| w_hat[i] + u[i]).collect();
            let p = group_soft_threshold(&arg, kappa);
            z[g.clone()].copy_from_slice(&p);
        }
        // s-update: orthant projection
        let s_old = s.clone();
        for i in 0..m {
            s[i] = (gw_hat[i] + v[i]).max(T::zero());
        }
        // scaled duals
        for i in 0..n {
            u[i] += w_hat[i] - z[i];
        }
        for i in 0..m {
            v[i] += gw_hat[i] - s[i];
        }

        if iter % check_every != 0 && iter != config.max_iter {
            continue;
        }
        let r1: Vec<T> = (0..n).map(|i| w[i] - z[i]).collect();
        let r2: Vec<T> = (0..m).map(|i| gw[i] - s[i]).collect();
        primal = (dot(&r1, &r1) + dot(&r2, &r2)).sqrt();
        let dz: Vec<T> = (0..n).map(|i| z[i] - z_old[i]).collect();
        let ds: Vec<T> = (0..m).map(|i| s[i] - s_old[i]).collect();
        problem.constraint_tr_mul(&ds, &mut gt_buf);
        let dual_vec: Vec<T> = (0..n).map(|i| sigma * (dz[i] + gt_buf[i])).collect();
        dual = norm2(&dual_vec);

        let scale = T::one() + norm2(&problem.y);
        if primal < refine_gate * scale && dual < refine_gate * scale && iter >= next_refine {
            let mut candidates = vec![z.clone()];
            candidates.extend(refine::refine(problem, &z, feas_tol, kkt_tol));
            for cand in candidates {
                let cand = ConvexWeights::from_flat(problem.d, problem.p, cand)?;
                let k = kkt_residual(problem, &cand, feas_tol);
                let viol = problem.max_violation(&cand);
                if k < kkt {
                    kkt = k;
                }
                if k <= kkt_tol && viol <= feas_tol {
                    converged = true;
                    result = Some(cand);
                    break;
                }
            }
            if converged {
                break;
            }
            next_refine = iter + refine_every;
            refine_every = (2 * refine_every).min(2000);
        }

        // residual balancing; refactor only on a large imbalance
        if iter % 50 == 0 {
            let ten = T::lit(10.0);
            let factor = if primal > ten * dual {
                Some(T::lit(5.0))
            } else if dual > ten * primal {
                Some(T::lit(0.2))
            } else {
                None
            };
            if let Some(f) = factor {
                let new_sigma = sigma * f;
                if let Some(sys) = KktSystem::new(problem, new_sigma) {
                    // scaled duals rescale inversely with the penalty
                    for ui in u.iter_mut() {
                        *ui /= f;
                    }
                    for vi in v.iter_mut() {
                        *vi /= f;
                    }
                    sigma = new_sigma;
                    system = sys;
                }
            }
        }
    }

    let result = match result {
        Some(r) => r,
        None => ConvexWeights::from_flat(problem.d, problem.p, z)?,
    };
    if !converged {
        kkt = kkt_residual(problem, &result, feas_tol);
        converged = kkt <= kkt_tol && problem.max_violation(&result) <= feas_tol;
    }
    let report = SolverReport {
        objective: problem.objective(&result).to_f64_lossy(),
        iterations,
        primal_residual: primal.to_f64_lossy(),
        dual_residual: dual.to_f64_lossy(),
        kkt_residual: kkt.to_f64_lossy(),
        max_violation: problem.max_violation(&result).to_f64_lossy(),
        converged,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    };
    Ok((result, report))
}

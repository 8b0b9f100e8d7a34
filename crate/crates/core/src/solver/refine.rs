//! Active-set refinement of approximate solutions.
//!
//! A candidate structure (which units are nonzero and which of their
//! constraint rows hold with equality) turns the program into a smooth
//! problem over each unit's feasible subspace, solved by damped Newton.
//! The structure is then corrected one change at a time until the point
//! satisfies the optimality conditions.

use super::{cone_distance, ConvexProblem};
use crate::linalg::{nnls, null_space, subset_lstsq, Cholesky, Matrix};
use crate::scalar::{dot, norm2, norm_inf, Real};

#[derive(Clone, Debug)]
struct Face {
    unit: usize,
    rows: Vec<usize>,
}

enum Newton<T> {
    Done(Vec<T>),
    Collapsed(usize),
}

fn gradient<T: Real>(problem: &ConvexProblem<T>, w: &[T]) -> Vec<T> {
    let two = T::lit(2.0);
    let r: Vec<T> = problem
        .a
        .mul_vec(w)
        .iter()
        .zip(&problem.y)
        .map(|(&p, &y)| two * (p - y))
        .collect();
    problem.a.tr_mul_vec(&r)
}

fn tight_rows<T: Real>(block: &Matrix<T>, v: &[T], rel: T) -> Vec<usize> {
    let scale = norm2(v);
    (0..block.rows())
        .filter(|&t| dot(block.row(t), v) <= rel * scale * norm2(block.row(t)))
        .collect()
}

fn reduced_newton<T: Real>(problem: &ConvexProblem<T>, faces: &[Face], start: &[T]) -> Newton<T> {
    let rows = problem.rows();
    let mut bases = Vec::with_capacity(faces.len());
    for f in faces {
        let block = problem.block_of(f.unit);
        let tight: Vec<&[T]> = f.rows.iter().map(|&t| block.row(t)).collect();
        let basis = null_space(&tight, problem.d, T::lit(1e-9));
        if basis.is_empty() {
            return Newton::Collapsed(f.unit);
        }
        bases.push(basis);
    }
    let n: usize = bases.iter().map(Vec::len).sum();
    let mut b = Matrix::zeros(rows, n);
    let mut theta = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(faces.len());
    for (f, basis) in faces.iter().zip(&bases) {
        let range = problem.group_index[f.unit].clone();
        let first = theta.len();
        for q in basis {
            let c = theta.len();
            for t in 0..rows {
                b[(t, c)] = dot(&problem.a.row(t)[range.clone()], q);
            }
            theta.push(dot(&start[range.clone()], q));
        }
        spans.push(first..theta.len());
    }

    let rho = problem.rho_t;
    let two = T::lit(2.0);
    let objective = |th: &[T]| -> T {
        let fit: T = b
            .mul_vec(th)
            .iter()
            .zip(&problem.y)
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum();
        fit + rho * spans.iter().map(|s| norm2(&th[s.clone()])).sum::<T>()
    };
    let btb = b.gram();
    let tiny = T::epsilon() * (T::one() + norm_inf(&problem.y));

    for _ in 0..100 {
        let norms: Vec<T> = spans.iter().map(|s| norm2(&theta[s.clone()])).collect();
        let largest = norms.iter().copied().fold(T::zero(), T::max);
        let collapse = T::lit(1e-10) * (T::one() + largest);
        if let Some(i) = (0..norms.len()).find(|&i| norms[i] <= collapse) {
            return Newton::Collapsed(faces[i].unit);
        }
        let r: Vec<T> = b
            .mul_vec(&theta)
            .iter()
            .zip(&problem.y)
            .map(|(&p, &y)| p - y)
            .collect();
        let mut g: Vec<T> = b.tr_mul_vec(&r).into_iter().map(|v| two * v).collect();
        let mut h = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                h[(i, k)] = two * btb[(i, k)];
            }
        }
        for (s, &v) in spans.iter().zip(&norms) {
            for i in s.clone() {
                g[i] += rho * theta[i] / v;
                for k in s.clone() {
                    let id = if i == k { T::one() / v } else { T::zero() };
                    h[(i, k)] += rho * (id - theta[i] * theta[k] / (v * v * v));
                }
            }
        }
        if norm_inf(&g) <= tiny {
            break;
        }
        let diag_max = (0..n).fold(T::zero(), |m, i| m.max(h[(i, i)]));
        let mut shift = T::epsilon() * diag_max.max(T::one());
        let chol = loop {
            let mut hs = h.clone();
            for i in 0..n {
                hs[(i, i)] += shift;
            }
            if let Some(c) = Cholesky::new(&hs) {
                break c;
            }
            shift *= T::lit(100.0);
        };
        let step: Vec<T> = chol.solve(&g).into_iter().map(|v| -v).collect();
        // a full step through the origin means the unit wants to vanish
        let crossing = (0..spans.len())
            .filter(|&i| {
                let s = spans[i].clone();
                let ahead: T = s.clone().map(|k| theta[k] * (theta[k] + step[k])).sum();
                ahead <= T::zero()
            })
            .min_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap());
        if let Some(i) = crossing {
            return Newton::Collapsed(faces[i].unit);
        }
        let f0 = objective(&theta);
        let slope = dot(&g, &step);
        let mut t = T::one();
        let mut moved = false;
        while t > T::lit(1e-12) {
            let cand: Vec<T> = theta.iter().zip(&step).map(|(&a, &d)| a + t * d).collect();
            if objective(&cand) <= f0 + T::lit(1e-4) * t * slope {
                theta = cand;
                moved = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !moved {
            break;
        }
    }

    let mut w = vec![T::zero(); problem.a.cols()];
    for ((f, basis), s) in faces.iter().zip(&bases).zip(&spans) {
        let range = problem.group_index[f.unit].clone();
        for (q, &c) in basis.iter().zip(&theta[s.clone()]) {
            for (wi, &qi) in w[range.clone()].iter_mut().zip(q) {
                *wi += c * qi;
            }
        }
    }
    Newton::Done(w)
}

/// Rows of `rows` whose block rows are linearly independent, in order.
fn independent_rows<T: Real>(block: &Matrix<T>, rows: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &t in rows {
        let mut trial: Vec<&[T]> = kept.iter().map(|&k| block.row(k)).collect();
        let before = null_space(&trial, block.cols(), T::lit(1e-9)).len();
        trial.push(block.row(t));
        if null_space(&trial, block.cols(), T::lit(1e-9)).len() < before {
            kept.push(t);
        }
    }
    kept
}

/// Starting from `z`, searches for a point meeting the optimality conditions
/// to within `kkt_tol` and `feas_tol`. `None` if the round budget runs out.
pub(super) fn refine<T: Real>(problem: &ConvexProblem<T>, z: &[T], feas_tol: T, kkt_tol: T) -> Option<Vec<T>> {
    let units = problem.unit_count();
    let rho = problem.rho_t;
    let mut w = z.to_vec();
    let mut faces: Vec<Face> = (0..units)
        .filter(|&j| norm2(&z[problem.group_index[j].clone()]) > T::zero())
        .map(|j| Face {
            unit: j,
            rows: tight_rows(problem.block_of(j), &z[problem.group_index[j].clone()], T::lit(1e-6)),
        })
        .collect();

    for _ in 0..(4 * units + 4 * problem.rows() + 20) {
        if faces.is_empty() {
            w.iter_mut().for_each(|v| *v = T::zero());
        } else {
            match reduced_newton(problem, &faces, &w) {
                Newton::Collapsed(u) => {
                    faces.retain(|f| f.unit != u);
                    w[problem.group_index[u].clone()]
                        .iter_mut()
                        .for_each(|v| *v = T::zero());
                    continue;
                }
                Newton::Done(next) => w = next,
            }
        }

        // a constraint left out of a face is violated
        let mut worst: Option<(T, usize, usize)> = None;
        for (fi, f) in faces.iter().enumerate() {
            let block = problem.block_of(f.unit);
            let wj = &w[problem.group_index[f.unit].clone()];
            for t in 0..block.rows() {
                let v = dot(block.row(t), wj);
                if v < -feas_tol * T::lit(0.5) && worst.is_none_or(|(m, _, _)| v < m) {
                    worst = Some((v, fi, t));
                }
            }
        }
        if let Some((_, fi, t)) = worst {
            faces[fi].rows.push(t);
            continue;
        }

        // a tight constraint carries a negative multiplier
        let grad = gradient(problem, &w);
        let mut release: Option<(T, usize, usize)> = None;
        for (fi, f) in faces.iter().enumerate() {
            let range = problem.group_index[f.unit].clone();
            let wj = &w[range.clone()];
            let nrm = norm2(wj);
            let target: Vec<T> = grad[range].iter().zip(wj).map(|(&g, &v)| g + rho * v / nrm).collect();
            let block = problem.block_of(f.unit);
            let kept = independent_rows(block, &f.rows);
            if kept.is_empty() {
                continue;
            }
            let mut gen = Matrix::zeros(problem.d, kept.len());
            for (k, &t) in kept.iter().enumerate() {
                for c in 0..problem.d {
                    gen[(c, k)] = block[(t, c)];
                }
            }
            let fit = gen.mul_vec(&nnls(&gen, &target));
            let miss: Vec<T> = target.iter().zip(fit).map(|(&a, b)| a - b).collect();
            if norm2(&miss) <= kkt_tol * T::lit(0.1) {
                continue;
            }
            if let Some(mu) = subset_lstsq(&gen, &(0..kept.len()).collect::<Vec<_>>(), &target) {
                for (k, &m) in mu.iter().enumerate() {
                    if m < T::zero() && release.is_none_or(|(best, _, _)| m < best) {
                        release = Some((m, fi, kept[k]));
                    }
                }
            }
        }
        if let Some((_, fi, t)) = release {
            faces[fi].rows.retain(|&r| r != t);
            continue;
        }

        // a zero unit could decrease the objective
        let mut enter: Option<(T, usize)> = None;
        for j in (0..units).filter(|j| faces.iter().all(|f| f.unit != *j)) {
            let block = problem.block_of(j);
            let all: Vec<usize> = (0..block.rows()).collect();
            let gj = &grad[problem.group_index[j].clone()];
            let excess = cone_distance(block, &all, gj) - rho;
            if excess > kkt_tol * T::lit(0.1) && enter.is_none_or(|(best, _)| excess > best) {
                enter = Some((excess, j));
            }
        }
        if let Some((excess, j)) = enter {
            let block = problem.block_of(j);
            let range = problem.group_index[j].clone();
            let mut gen = Matrix::zeros(problem.d, block.rows());
            for t in 0..block.rows() {
                for c in 0..problem.d {
                    gen[(c, t)] = block[(t, c)];
                }
            }
            let gj = &grad[range.clone()];
            let fit = gen.mul_vec(&nnls(&gen, gj));
            let mut dir: Vec<T> = gj.iter().zip(fit).map(|(&g, f)| f - g).collect();
            let dn = norm2(&dir);
            dir.iter_mut().for_each(|v| *v /= dn);
            let ad: Vec<T> = (0..problem.rows())
                .map(|t| dot(&problem.a.row(t)[range.clone()], &dir))
                .collect();
            let curvature = T::lit(2.0) * dot(&ad, &ad);
            let step = if curvature > T::zero() { excess / curvature } else { T::one() };
            for (wi, &di) in w[range].iter_mut().zip(&dir) {
                *wi = step * di;
            }
            faces.push(Face {
                unit: j,
                rows: tight_rows(block, &dir, T::lit(1e-9)),
            });
            continue;
        }
        return Some(w);
    }
    None
}

//! Activation patterns `D_p = diag(mask)` over the rows of a design matrix.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream, StreamLabel};
use crate::scalar::Real;

/// Draws per requested pattern before sampling gives up.
pub const OVERSAMPLING: usize = 200;

/// Default row cap for exact enumeration.
pub const ENUMERATION_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationPattern {
    mask: Vec<bool>,
}

impl ActivationPattern {
    pub fn new(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn ones(len: usize) -> Self {
        Self::new(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_active(&self, row: usize) -> bool {
        self.mask[row]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `"1011"`-style rendering.
    pub fn to_bit_string(&self) -> String {
        self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::new)
    }
}

/// Ordered set of distinct masks plus the provenance of the matrix that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    patterns: Vec<ActivationPattern>,
    pub source_fingerprint: String,
    pub seed: u64,
}

impl PatternSet {
    /// Deduplicates while keeping first-seen order.
    pub fn new(patterns: Vec<ActivationPattern>, source_fingerprint: String, seed: u64) -> Self {
        let mut seen = HashSet::new();
        let patterns = patterns
            .into_iter()
            .filter(|p| seen.insert(p.clone()))
            .collect();
        Self {
            patterns,
            source_fingerprint,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ActivationPattern> {
        self.patterns.iter()
    }

    pub fn patterns(&self) -> &[ActivationPattern] {
        &self.patterns
    }

    pub fn contains(&self, p: &ActivationPattern) -> bool {
        self.patterns.contains(p)
    }

    pub fn is_subset_of(&self, other: &PatternSet) -> bool {
        self.patterns.iter().all(|p| other.contains(p))
    }

    /// Truncates or pads with all-ones masks so that exactly `count` entries remain.
    /// Padding duplicates are allowed here since units are addressed by index.
    pub fn resized(&self, count: usize, rows: usize) -> Vec<ActivationPattern> {
        let mut out: Vec<_> = self.patterns.iter().take(count).cloned().collect();
        while out.len() < count {
            out.push(ActivationPattern::ones(rows));
        }
        out
    }

    /// A set holding masks verbatim, duplicates included.
    pub fn from_masks_unchecked(patterns: Vec<ActivationPattern>, source_fingerprint: String, seed: u64) -> Self {
        Self {
            patterns,
            source_fingerprint,
            seed,
        }
    }
}

impl<'a> IntoIterator for &'a PatternSet {
    type Item = &'a ActivationPattern;
    type IntoIter = std::slice::Iter<'a, ActivationPattern>;

    fn into_iter(self) -> Self::IntoIter {
        self.patterns.iter()
    }
}

/// SHA-256 of the matrix shape and its entries as `f64` bits.
pub fn fingerprint<T: Real>(x: &Matrix<T>) -> String {
    let mut h = Sha256::new();
    h.update((x.rows() as u64).to_le_bytes());
    h.update((x.cols() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_f64_lossy().to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn gate_mask<T: Real>(x: &Matrix<T>, gate: &[T]) -> ActivationPattern {
    ActivationPattern::new(
        (0..x.rows())
            .map(|t| crate::scalar::dot(x.row(t), gate) > T::zero())
            .collect(),
    )
}

/// Samples masks `1[X g > 0]` from standard normal gates `g` until `budget`
/// distinct masks are found or `OVERSAMPLING · budget` gates were drawn.
/// Gates come from the seed's dedicated gate stream.
pub fn sample_patterns<T: Real>(x: &Matrix<T>, budget: usize, seed: u64) -> Result<PatternSet> {
    sample_patterns_with(x, budget, seed, &mut stream(seed, StreamLabel::Gates, 0))
}

/// [`sample_patterns`] drawing gates from a caller-owned generator; `seed`
/// is only recorded in the result.
pub fn sample_patterns_with<T: Real, R: Rng + ?Sized>(
    x: &Matrix<T>,
    budget: usize,
    seed: u64,
    rng: &mut R,
) -> Result<PatternSet> {
    if budget == 0 {
        return Err(Error::InvalidParameter("pattern budget must be >= 1".into()));
    }
    let mut seen = HashSet::new();
    let mut found = Vec::new();
    for _ in 0..OVERSAMPLING * budget {
        let gate: Vec<T> = (0..x.cols())
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                T::lit(g)
            })
            .collect();
        let mask = gate_mask(x, &gate);
        if seen.insert(mask.clone()) {
            found.push(mask);
            if found.len() == budget {
                break;
            }
        }
    }
    Ok(PatternSet::new(found, fingerprint(x), seed))
}

/// Every mask realized by some gate `g` with all nonzero rows off the
/// hyperplane. Feasibility of a sign vector `s` is decided by the margin
/// program `max δ  s.t.  s_t X_t g ≥ δ, ‖g‖∞ ≤ 1`, feasible iff `δ > 1e−9`.
/// Zero rows are always inactive.
pub fn enumerate_patterns<T: Real>(x: &Matrix<T>, max_rows: usize) -> Result<PatternSet> {
    let rows = x.rows();
    if rows > max_rows {
        return Err(Error::PatternCapExceeded {
            rows,
            cap: max_rows,
        });
    }
    let nonzero: Vec<usize> = (0..rows)
        .filter(|&t| x.row(t).iter().any(|&v| v != T::zero()))
        .collect();
    let mut found = Vec::new();
    for bits in 0u64..(1u64 << nonzero.len()) {
        let signs: Vec<bool> = (0..nonzero.len()).map(|k| bits >> k & 1 == 1).collect();
        let sub: Vec<(Vec<f64>, bool)> = nonzero
            .iter()
            .zip(&signs)
            .map(|(&t, &s)| (x.row(t).iter().map(|v| v.to_f64_lossy()).collect(), s))
            .collect();
        if max_margin(&sub, x.cols()) > 1e-9 {
            let mut mask = vec![false; rows];
            for (&t, &s) in nonzero.iter().zip(&signs) {
                mask[t] = s;
            }
            found.push(ActivationPattern::new(mask));
        }
    }
    // the empty row set realizes exactly one mask
    if nonzero.is_empty() && found.is_empty() {
        found.push(ActivationPattern::new(vec![false; rows]));
    }
    Ok(PatternSet::new(found, fingerprint(x), 0))
}

/// `max δ ≥ 0` subject to `sign_t · (row_t · g) ≥ δ` and `|g_i| ≤ 1`, by a
/// dense tableau simplex with Bland's rule. With `g = g⁺ − g⁻` and slack
/// variables the origin is a feasible basis, so no phase one is needed.
fn max_margin(rows: &[(Vec<f64>, bool)], d: usize) -> f64 {
    if rows.is_empty() {
        return f64::INFINITY;
    }
    // variables: g⁺ (d), g⁻ (d), δ (1); constraints: rows, then 2d box rows
    let nv = 2 * d + 1;
    let nc = rows.len() + 2 * d;
    let width = nv + nc + 1;
    let mut tab = vec![vec![0.0; width]; nc + 1];
    for (i, (row, s)) in rows.iter().enumerate() {
        let sign = if *s { 1.0 } else { -1.0 };
        // δ − s·(row·g) ≤ 0
        for c in 0..d {
            tab[i][c] = -sign * row[c];
            tab[i][d + c] = sign * row[c];
        }
        tab[i][2 * d] = 1.0;
        tab[i][nv + i] = 1.0;
    }
    for c in 0..d {
        // g_c ≤ 1 and −g_c ≤ 1
        let r1 = rows.len() + 2 * c;
        tab[r1][c] = 1.0;
        tab[r1][d + c] = -1.0;
        tab[r1][nv + r1] = 1.0;
        tab[r1][width - 1] = 1.0;
        let r2 = r1 + 1;
        tab[r2][c] = -1.0;
        tab[r2][d + c] = 1.0;
        tab[r2][nv + r2] = 1.0;
        tab[r2][width - 1] = 1.0;
    }
    // objective row holds reduced costs of max δ
    tab[nc][2 * d] = -1.0;
    let mut basis: Vec<usize> = (nv..nv + nc).collect();
    let eps = 1e-12;
    for _ in 0..10_000 {
        let Some(enter) = (0..nv + nc).find(|&j| tab[nc][j] < -eps) else {
            break;
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for i in 0..nc {
            let a = tab[i][enter];
            if a > eps {
                let ratio = tab[i][width - 1] / a;
                let better = ratio < best - 1e-15
                    || (ratio <= best + 1e-15 && leave.is_some_and(|l: usize| basis[i] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            return f64::INFINITY;
        };
        let piv = tab[r][enter];
        for v in tab[r].iter_mut() {
            *v /= piv;
        }
        let pivot_row = tab[r].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i != r {
                let f = row[enter];
                if f != 0.0 {
                    for (v, &p) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
        basis[r] = enter;
    }
    tab[nc][width - 1]
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Cover's count of regions cut by `rows` central hyperplanes in general
/// position in dimension `rank`: `2 Σ_{k<rank} C(rows − 1, k)`.
pub fn cover_bound(rows: usize, rank: usize) -> Result<u128> {
    if rank == 0 || rank > rows {
        return Err(Error::InvalidParameter(format!(
            "cover bound needs 1 <= rank <= rows, got rank {rank}, rows {rows}"
        )));
    }
    Ok(2 * (0..rank as u64)
        .map(|k| binomial(rows as u64 - 1, k))
        .sum::<u128>())
}

//! H-step: project a soft match matrix onto a partial permutation matrix.
//!
//! The `N x M` profit is embedded in an `(N+M) x (N+M)` augmented matrix:
//!
//! ```text
//! [ profit            diag(row_fill) ]
//! [ diag(col_fill)    0              ]
//! ```
//!
//! Solving the square assignment exactly and cropping the top-left block
//! leaves a row (column) unmatched whenever its fill outweighs every match
//! it could take part in. Fills are `1 / var(v)` of the row or column, so a
//! flat (outlier-like) row gets a large fill and a peaked one a small fill.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::sinkhorn::SoftMatchMatrix;

pub const FILL_EPSILON: f64 = 1e-8;
pub const FILL_MAX: f64 = 1e8;
/// Largest cloud size the exact assignment accepts.
pub const MAX_POINTS: usize = 2048;

/// `1 / (var(v) + 1e-8)` with the population variance, capped at `1e8`.
pub fn adaptive_fill(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "adaptive_fill needs a non-empty vector");
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (1.0 / (var + FILL_EPSILON)).min(FILL_MAX)
}

/// The augmented square profit matrix and the fills on its two diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedProfit {
    pub matrix: DenseMatrix,
    pub row_fill: Vec<f64>,
    pub col_fill: Vec<f64>,
}

pub fn augment_profit(profit: &DenseMatrix) -> Result<AugmentedProfit> {
    augment_profit_scaled(profit, 1.0)
}

/// Like [`augment_profit`], with the top-left block multiplied by `scale`.
/// Fills are always computed from the unscaled rows and columns.
pub fn augment_profit_scaled(profit: &DenseMatrix, scale: f64) -> Result<AugmentedProfit> {
    if !profit.all_finite() {
        return Err(Error::NonFinite("profit matrix"));
    }
    let (n, m) = profit.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("profit matrix must be non-empty".into()));
    }
    let row_fill: Vec<f64> = (0..n).map(|i| adaptive_fill(profit.row(i))).collect();
    let col_fill: Vec<f64> = (0..m).map(|j| adaptive_fill(&profit.column(j))).collect();
    let size = n + m;
    let mut matrix = DenseMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..m {
            matrix[(i, j)] = scale * profit[(i, j)];
        }
        matrix[(i, m + i)] = row_fill[i];
    }
    for j in 0..m {
        matrix[(n + j, j)] = col_fill[j];
    }
    Ok(AugmentedProfit {
        matrix,
        row_fill,
        col_fill,
    })
}

/// Exact maximum-profit assignment on a square matrix. Returns `perm` with
/// row `i` assigned to column `perm[i]`.
///
/// Shortest augmenting paths with row/column potentials on the negated
/// profits, O(n^3).
pub fn hungarian(profit: &DenseMatrix) -> Result<Vec<usize>> {
    if !profit.is_square() {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", profit.rows(), profit.cols()),
        });
    }
    if !profit.all_finite() {
        return Err(Error::NonFinite("assignment profit"));
    }
    let n = profit.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| -profit[(i, j)];

    // 1-based with column 0 as the virtual root, as in the classical
    // formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    Ok(perm)
}

pub fn assignment_value(profit: &DenseMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| profit[(i, j)]).sum()
}

/// Binary one-to-one matching between `rows` source points and `cols`
/// target points. Every row and column is matched at most once and the two
/// index maps always agree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialPermutationMatrix {
    row_to_col: Vec<Option<usize>>,
    col_to_row: Vec<Option<usize>>,
}

impl PartialPermutationMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            row_to_col: vec![None; rows],
            col_to_row: vec![None; cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_pairs(n, n, (0..n).map(|i| (i, i))).expect("identity is a valid matching")
    }

    /// Rejects out-of-range indices and any row or column used twice.
    pub fn from_pairs(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Self::empty(rows, cols);
        for (i, j) in pairs {
            if i >= rows || j >= cols {
                return Err(Error::InvalidInput(format!("pair ({i}, {j}) outside {rows}x{cols}")));
            }
            if out.row_to_col[i].is_some() || out.col_to_row[j].is_some() {
                return Err(Error::InvalidInput(format!("pair ({i}, {j}) reuses a row or column")));
            }
            out.row_to_col[i] = Some(j);
            out.col_to_row[j] = Some(i);
        }
        Ok(out)
    }

    /// Reads a dense 0/1 matrix, enforcing the row/column constraints.
    pub fn from_dense(m: &DenseMatrix) -> Result<Self> {
        let mut pairs = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                match m[(i, j)] {
                    0.0 => {}
                    1.0 => pairs.push((i, j)),
                    v => return Err(Error::InvalidInput(format!("entry ({i}, {j}) = {v} is not binary"))),
                }
            }
        }
        Self::from_pairs(m.rows(), m.cols(), pairs)
    }

    pub fn rows(&self) -> usize {
        self.row_to_col.len()
    }

    pub fn cols(&self) -> usize {
        self.col_to_row.len()
    }

    pub fn target_of(&self, row: usize) -> Option<usize> {
        self.row_to_col[row]
    }

    pub fn source_of(&self, col: usize) -> Option<usize> {
        self.col_to_row[col]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.row_to_col[row] == Some(col)
    }

    /// Matched `(row, col)` pairs in row order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect()
    }

    pub fn inlier_count(&self) -> usize {
        self.row_to_col.iter().filter(|j| j.is_some()).count()
    }

    /// Per-row sums, i.e. the binary inlier weights of the source points.
    pub fn row_sums(&self) -> Vec<f64> {
        self.row_to_col.iter().map(|j| if j.is_some() { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows(), self.cols());
        for (i, j) in self.pairs() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// `[[i, j], ...]` in row order.
    pub fn to_pair_list(&self) -> Vec<[usize; 2]> {
        self.pairs().into_iter().map(|(i, j)| [i, j]).collect()
    }

    pub fn from_pair_list(rows: usize, cols: usize, pairs: &[[usize; 2]]) -> Result<Self> {
        Self::from_pairs(rows, cols, pairs.iter().map(|p| (p[0], p[1])))
    }
}

#[derive(Serialize, Deserialize)]
struct PpmWire {
    rows: usize,
    cols: usize,
    pairs: Vec<[usize; 2]>,
}

impl Serialize for PartialPermutationMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PpmWire {
            rows: self.rows(),
            cols: self.cols(),
            pairs: self.to_pair_list(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartialPermutationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = PpmWire::deserialize(d)?;
        Self::from_pair_list(w.rows, w.cols, &w.pairs).map_err(serde::de::Error::custom)
    }
}

/// Multiplier applied to the soft matrix before it meets the fills.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitScale {
    /// `2 (N + M)`: a perfectly peaked row/column pair then needs a soft
    /// match above roughly 1/2 to beat its two fills.
    Auto,
    /// `c (N + M)`.
    Relative(f64),
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HStepConfig {
    pub profit_scale: ProfitScale,
}

impl Default for HStepConfig {
    fn default() -> Self {
        Self {
            profit_scale: ProfitScale::Auto,
        }
    }
}

impl HStepConfig {
    pub fn scale_for(&self, rows: usize, cols: usize) -> f64 {
        match self.profit_scale {
            ProfitScale::Auto => 2.0 * (rows + cols) as f64,
            ProfitScale::Relative(c) => c * (rows + cols) as f64,
            ProfitScale::Fixed(s) => s,
        }
    }
}

/// Objective of the augmented assignment encoded by `ppm`: matched profit
/// plus the fills of every unmatched row and column.
pub fn augmented_objective(aug: &AugmentedProfit, ppm: &PartialPermutationMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..ppm.rows() {
        total += match ppm.target_of(i) {
            Some(j) => aug.matrix[(i, j)],
            None => aug.row_fill[i],
        };
    }
    for j in 0..ppm.cols() {
        if ppm.source_of(j).is_none() {
            total += aug.col_fill[j];
        }
    }
    total
}

/// Crops the augmented permutation: row `i` is matched iff `perm[i] < M`.
pub fn crop_assignment(perm: &[usize], rows: usize, cols: usize) -> PartialPermutationMatrix {
    let pairs = (0..rows).filter(|&i| perm[i] < cols).map(|i| (i, perm[i]));
    PartialPermutationMatrix::from_pairs(rows, cols, pairs).expect("a permutation crop is one-to-one")
}

/// Solves the full `(N+M)`-square augmented assignment directly.
pub fn project_dense(aug: &AugmentedProfit) -> Result<PartialPermutationMatrix> {
    let (n, m) = (aug.row_fill.len(), aug.col_fill.len());
    let perm = hungarian(&aug.matrix)?;
    Ok(crop_assignment(&perm, n, m))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Same optimum as [`project_dense`], computed per connected component of
/// the pairs whose scaled profit exceeds the sum of their two fills. Any
/// other pair can be dropped from a matching without lowering the
/// objective, so components are independent augmented problems.
pub fn project_decomposed(aug: &AugmentedProfit) -> Result<PartialPermutationMatrix> {
    let (n, m) = (aug.row_fill.len(), aug.col_fill.len());
    let gain = |i: usize, j: usize| aug.matrix[(i, j)] - aug.row_fill[i] - aug.col_fill[j];

    let mut dsu = DisjointSet::new(n + m);
    let mut has_edge = vec![false; n + m];
    for i in 0..n {
        for j in 0..m {
            if gain(i, j) > 0.0 {
                dsu.union(i, n + j);
                has_edge[i] = true;
                has_edge[n + j] = true;
            }
        }
    }

    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for i in (0..n).filter(|&i| has_edge[i]) {
        groups.entry(dsu.find(i)).or_default().0.push(i);
    }
    for j in (0..m).filter(|&j| has_edge[n + j]) {
        groups.entry(dsu.find(n + j)).or_default().1.push(j);
    }

    let mut pairs = Vec::new();
    for (rows, cols) in groups.values() {
        if rows.len() == 1 && cols.len() == 1 {
            pairs.push((rows[0], cols[0]));
            continue;
        }
        let (rn, cn) = (rows.len(), cols.len());
        let mut sub = DenseMatrix::zeros(rn + cn, rn + cn);
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                sub[(a, b)] = aug.matrix[(i, j)];
            }
            sub[(a, cn + a)] = aug.row_fill[i];
        }
        for (b, &j) in cols.iter().enumerate() {
            sub[(rn + b, b)] = aug.col_fill[j];
        }
        let perm = hungarian(&sub)?;
        for (a, &i) in rows.iter().enumerate() {
            if perm[a] < cn {
                pairs.push((i, cols[perm[a]]));
            }
        }
    }
    PartialPermutationMatrix::from_pairs(n, m, pairs)
}

/// H-step on a soft match matrix.
pub fn project_to_ppm(p: &SoftMatchMatrix, cfg: &HStepConfig) -> Result<PartialPermutationMatrix> {
    Ok(project_matrix(p.matrix(), cfg)?.0)
}

/// H-step on any finite profit matrix; also returns the augmented profit.
pub fn project_matrix(p: &DenseMatrix, cfg: &HStepConfig) -> Result<(PartialPermutationMatrix, AugmentedProfit)> {
    let (n, m) = p.shape();
    for size in [n, m] {
        if size > MAX_POINTS {
            return Err(Error::CloudSize {
                size,
                min: 1,
                max: MAX_POINTS,
            });
        }
    }
    let aug = augment_profit_scaled(p, cfg.scale_for(n, m))?;
    let ppm = project_decomposed(&aug)?;
    Ok((ppm, aug))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_max(profit: &DenseMatrix) -> f64 {
        fn rec(profit: &DenseMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = profit.rows();
            if row == n {
                *best = best.max(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(profit, row + 1, used, acc + profit[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        rec(profit, 0, &mut vec![false; profit.rows()], 0.0, &mut best);
        best
    }

    #[test]
    fn fill_examples() {
        assert_eq!(adaptive_fill(&[0.3; 5]), FILL_MAX);
        assert!((adaptive_fill(&[1.0, 0.0, 0.0, 0.0]) - 1.0 / (0.1875 + 1e-8)).abs() < 1e-9);
        assert!((adaptive_fill(&[1.0, 0.0, 0.0, 0.0]) - 16.0 / 3.0).abs() < 1e-6);
        assert!(adaptive_fill(&[0.25; 4]) > adaptive_fill(&[0.7, 0.1, 0.1, 0.1]));
    }

    #[test]
    fn augment_layout() {
        let one = augment_profit(&DenseMatrix::filled(1, 1, 0.7)).unwrap();
        assert_eq!(one.matrix, DenseMatrix::from_rows(&[vec![0.7, 1e8], vec![1e8, 0.0]]).unwrap());

        let p = DenseMatrix::from_rows(&[vec![0.9, 0.05, 0.0], vec![0.1, 0.2, 0.6]]).unwrap();
        let aug = augment_profit(&p).unwrap();
        assert_eq!(aug.matrix.shape(), (5, 5));
        for i in 0..5 {
            for j in 0..5 {
                let v = aug.matrix[(i, j)];
                let expected = match (i < 2, j < 3) {
                    (true, true) => p[(i, j)],
                    (true, false) => if j - 3 == i { aug.row_fill[i] } else { 0.0 },
                    (false, true) => if i - 2 == j { aug.col_fill[j] } else { 0.0 },
                    (false, false) => 0.0,
                };
                assert_eq!(v, expected, "({i}, {j})");
            }
        }
    }

    #[test]
    fn near_identity_fills_are_small() {
        let p = DenseMatrix::from_rows(&[
            vec![0.95, 0.02, 0.01],
            vec![0.03, 0.9, 0.04],
            vec![0.0, 0.05, 0.93],
        ])
        .unwrap();
        let aug = augment_profit(&p).unwrap();
        let uniform = adaptive_fill(&[1.0 / 3.0 + 1e-3, 1.0 / 3.0, 1.0 / 3.0 - 1e-3]);
        for (i, f) in aug.row_fill.iter().enumerate() {
            let row = p.row(i);
            let mean = row.iter().sum::<f64>() / 3.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
            assert!((f - 1.0 / (var + 1e-8)).abs() < 1e-9);
            assert!(f.is_finite() && *f < uniform / 1000.0);
        }
    }

    #[test]
    fn hungarian_identity_and_errors() {
        assert_eq!(hungarian(&DenseMatrix::identity(5)).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(hungarian(&DenseMatrix::zeros(2, 3)).is_err());
        assert_eq!(hungarian(&DenseMatrix::zeros(0, 0)).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=6 {
            for _ in 0..40 {
                let p = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
                let perm = hungarian(&p).unwrap();
                let mut seen = perm.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((assignment_value(&p, &perm) - brute_force_max(&p)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hungarian_tie_reaches_optimum() {
        let p = DenseMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        let perm = hungarian(&p).unwrap();
        assert_eq!(assignment_value(&p, &perm), brute_force_max(&p));
    }

    #[test]
    fn identity_projects_to_identity() {
        for n in 2..8 {
            let p = SoftMatchMatrix::from_matrix(DenseMatrix::identity(n)).unwrap();
            assert_eq!(project_to_ppm(&p, &HStepConfig::default()).unwrap(), PartialPermutationMatrix::identity(n));
        }
    }

    #[test]
    fn uniform_row_is_unmatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=4 {
            for _ in 0..20 {
                let outlier = rng.random_range(0..n);
                let perm: Vec<usize> = rand::seq::index::sample(&mut rng, n, n).into_vec();
                let p = DenseMatrix::from_fn(n, n, |i, j| {
                    if i == outlier {
                        0.05
                    } else if perm[i] == j {
                        rng.random_range(0.85..0.95)
                    } else {
                        rng.random_range(0.0..0.02)
                    }
                });
                let (ppm, aug) = project_matrix(&p, &HStepConfig::default()).unwrap();
                assert_eq!(ppm.target_of(outlier), None);
                // the literal augmented solve agrees
                let dense = project_dense(&aug).unwrap();
                assert_eq!(dense, ppm);
                assert!((augmented_objective(&aug, &dense) - brute_force_max(&aug.matrix)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn all_uniform_is_all_outliers() {
        for n in 1..=4 {
            let p = DenseMatrix::filled(n, n, 1.0 / (n as f64 + 1.0));
            let (ppm, aug) = project_matrix(&p, &HStepConfig::default()).unwrap();
            assert_eq!(ppm.inlier_count(), 0);
            assert!((augmented_objective(&aug, &ppm) - brute_force_max(&aug.matrix)).abs() < 1e-6);
        }
    }

    #[test]
    fn decomposed_equals_dense_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let (n, m) = (rng.random_range(1..9), rng.random_range(1..9));
            let p = DenseMatrix::from_fn(n, m, |_, _| if rng.random_bool(0.3) { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.1) });
            let scale = rng.random_range(0.5..3.0) * (n + m) as f64;
            let aug = augment_profit_scaled(&p, scale).unwrap();
            let a = project_decomposed(&aug).unwrap();
            let b = project_dense(&aug).unwrap();
            let (oa, ob) = (augmented_objective(&aug, &a), augmented_objective(&aug, &b));
            assert!((oa - ob).abs() <= 1e-9 * ob.abs().max(1.0), "{oa} vs {ob}");
        }
    }

    #[test]
    fn raising_a_matched_entry_keeps_it_matched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = HStepConfig::default();
        let mut checked = 0;
        for _ in 0..500 {
            let n = rng.random_range(2..7);
            let perm: Vec<usize> = rand::seq::index::sample(&mut rng, n, n).into_vec();
            let p = DenseMatrix::from_fn(n, n, |i, j| {
                let base = if perm[i] == j { rng.random_range(0.3..0.9) } else { 0.0 };
                base + rng.random_range(0.0..0.1) / n as f64
            });
            let (ppm, _) = project_matrix(&p, &cfg).unwrap();
            for (i, j) in ppm.pairs() {
                // above its row and column means, raising the entry can only
                // shrink the fills competing with it
                let row_mean = p.row(i).iter().sum::<f64>() / n as f64;
                let col_mean = p.column(j).iter().sum::<f64>() / n as f64;
                if p[(i, j)] < row_mean || p[(i, j)] < col_mean {
                    continue;
                }
                let mut raised = p.clone();
                raised[(i, j)] += rng.random_range(0.0..0.1);
                let (again, aug) = project_matrix(&raised, &cfg).unwrap();
                assert!(again.contains(i, j));
                let dense = project_dense(&aug).unwrap();
                assert!((augmented_objective(&aug, &again) - augmented_objective(&aug, &dense)).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 100, "{checked}");
    }

    #[test]
    fn size_cap_enforced() {
        let p = DenseMatrix::zeros(MAX_POINTS + 1, 2);
        assert!(matches!(project_matrix(&p, &HStepConfig::default()), Err(Error::CloudSize { .. })));
    }

    #[test]
    fn ppm_constructors() {
        assert!(PartialPermutationMatrix::from_pairs(2, 2, [(0, 0), (1, 0)]).is_err());
        assert!(PartialPermutationMatrix::from_pairs(2, 2, [(0, 2)]).is_err());
        let m = PartialPermutationMatrix::from_pairs(3, 4, [(2, 1), (0, 3)]).unwrap();
        assert_eq!(m.pairs(), vec![(0, 3), (2, 1)]);
        assert_eq!(m.source_of(1), Some(2));
        assert_eq!(PartialPermutationMatrix::from_dense(&m.to_dense()).unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rows":3,"cols":4,"pairs":[[0,3],[2,1]]}"#);
        assert_eq!(serde_json::from_str::<PartialPermutationMatrix>(&json).unwrap(), m);
        let bad = DenseMatrix::from_rows(&[vec![0.5]]).unwrap();
        assert!(PartialPermutationMatrix::from_dense(&bad).is_err());
    }

    proptest! {
        #[test]
        fn projection_satisfies_row_and_column_constraints(n in 1usize..20, m in 1usize..20, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = DenseMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0) / n.max(m) as f64);
            let (ppm, _) = project_matrix(&p, &HStepConfig::default()).unwrap();
            let dense = ppm.to_dense();
            for s in dense.row_sums().iter().chain(dense.col_sums().iter()) {
                prop_assert!(*s == 0.0 || *s == 1.0);
            }
        }
    }
}

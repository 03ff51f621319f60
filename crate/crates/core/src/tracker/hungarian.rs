//! Minimum-cost bipartite assignment (Kuhn–Munkres with potentials, O(n³)).

use crate::scalar::Scalar;

/// Dense row-major cost matrix. `+∞` (or NaN) marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix data length");
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        !self.get(r, c).is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<Option<usize>>,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn total_cost<T: Scalar>(&self, cost: &CostMatrix<T>) -> T {
        self.pairs().map(|(r, c)| cost.get(r, c)).sum()
    }

    pub fn col_to_row(&self, cols: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cols];
        for (r, c) in self.pairs() {
            out[c] = Some(r);
        }
        out
    }
}

/// Solves the rectangular assignment problem.
///
/// Forbidden pairs are never returned. Among assignments that use the fewest
/// forbidden cells (equivalently, match the most allowed pairs) the one with
/// minimum total cost is chosen.
pub fn hungarian<T: Scalar>(cost: &CostMatrix<T>) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    if rows == 0 || cols == 0 {
        return Assignment {
            row_to_col: vec![None; rows],
        };
    }
    let n = rows.max(cols);

    let max_finite = cost
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold(T::zero(), |m, &v| m.max(v.abs()));
    // Larger than any achievable sum of allowed costs.
    let big = (max_finite + T::one()) * T::lit((n + 1) as f64);

    // 1-based square matrix with zero-cost padding.
    let at = |i: usize, j: usize| -> T {
        if i > rows || j > cols {
            T::zero()
        } else {
            let v = cost.get(i - 1, j - 1);
            if v.is_finite() {
                v
            } else {
                big
            }
        }
    };

    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for j in 1..=cols {
        let i = p[j];
        if i >= 1 && i <= rows && !cost.is_forbidden(i - 1, j - 1) {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    Assignment { row_to_col }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(1), Some(0)]);
        assert_eq!(a.total_cost(&c), 4.0);
    }

    #[test]
    fn zero_diagonal() {
        let n = 5;
        let mut c = CostMatrix::filled(n, n, 3.0);
        for i in 0..n {
            c.set(i, i, 0.0);
        }
        let a = hungarian(&c);
        assert!(a.pairs().all(|(r, col)| r == col));
        assert_eq!(a.total_cost(&c), 0.0);
    }

    #[test]
    fn empty_matrix() {
        assert!(hungarian(&CostMatrix::<f64>::new(0, 0, vec![])).row_to_col.is_empty());
        assert_eq!(hungarian(&CostMatrix::<f64>::new(3, 0, vec![])).row_to_col, vec![None; 3]);
    }

    #[test]
    fn forbidden_pairs_never_matched() {
        let inf = f64::INFINITY;
        let c = CostMatrix::from_rows(&[vec![inf, 1.0], vec![inf, 0.5]]);
        let a = hungarian(&c);
        assert_eq!(a.pairs().count(), 1);
        assert_eq!(a.row_to_col[1], Some(1));
        let all = CostMatrix::from_rows(&[vec![inf, inf]]);
        assert_eq!(hungarian(&all).row_to_col, vec![None]);
    }

    #[test]
    fn prefers_more_allowed_matches() {
        let inf = f64::INFINITY;
        // Matching r0-c0 alone costs 0 but blocks r1; two matches are preferred.
        let c = CostMatrix::from_rows(&[vec![0.0, 5.0], vec![1.0, inf]]);
        assert_eq!(hungarian(&c).row_to_col, vec![Some(1), Some(0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]]);
        let a = hungarian(&wide);
        assert_eq!(a.total_cost(&wide), 3.0);
        let tall = CostMatrix::from_rows(&[vec![4.0, 2.0], vec![1.0, 0.0], vec![3.0, 5.0]]);
        let b = hungarian(&tall);
        assert_eq!(b.pairs().count(), 2);
        assert_eq!(b.total_cost(&tall), 3.0);
    }
}

//! Minimum-cost bipartite assignment with forbidden pairs.
//!
//! Used by seam stitching to pair the two parts of defects cut by the
//! cylindrical seam, and exposed on its own because the problems are tiny
//! and exact answers matter more than raw speed. The solver is the O(n^3)
//! augmenting-path Hungarian method on a square matrix padded with zero-cost
//! dummy cells; forbidden pairs get a finite cost large enough to dominate
//! any matching that avoids them, which makes infeasible instances degrade
//! to partial matchings instead of failing.
//!
//! Among equal-cost optima the reported matching is canonical: pairs are
//! chosen greedily in ascending `(row, col)` order among the cells that some
//! optimal matching uses (the cells left tight by the final dual potentials).

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("cost matrix is ragged: row {row} has {got} entries, expected {expected}")]
    RaggedMatrix { row: usize, got: usize, expected: usize },
    #[error("cost at ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("forbidden pair ({row}, {col}) is out of bounds for a {rows}x{cols} matrix")]
    ForbidOutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
}

/// Rectangular cost matrix plus a set of pairs that must not be matched.
#[derive(Debug, Clone)]
pub struct AssignmentProblem {
    costs: Vec<Vec<f64>>,
    cols: usize,
    forbidden: BTreeSet<(usize, usize)>,
}

impl AssignmentProblem {
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self, AssignmentError> {
        let cols = costs.first().map_or(0, Vec::len);
        for (row, r) in costs.iter().enumerate() {
            if r.len() != cols {
                return Err(AssignmentError::RaggedMatrix { row, got: r.len(), expected: cols });
            }
        }
        Ok(AssignmentProblem { costs, cols, forbidden: BTreeSet::new() })
    }

    pub fn forbid(&mut self, row: usize, col: usize) -> Result<(), AssignmentError> {
        if row >= self.rows() || col >= self.cols {
            return Err(AssignmentError::ForbidOutOfBounds {
                row,
                col,
                rows: self.rows(),
                cols: self.cols,
            });
        }
        self.forbidden.insert((row, col));
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.costs.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.forbidden.contains(&(row, col))
    }
}

/// Result of [`solve_assignment`]: matched `(row, col)` pairs in ascending
/// row order and their summed cost. Covers `min(rows, cols)` pairs when the
/// forbidden set allows it, fewer otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

const NO_ROW: usize = usize::MAX;

pub fn solve_assignment(problem: &AssignmentProblem) -> Result<Matching, AssignmentError> {
    let rows = problem.rows();
    let cols = problem.cols();
    if rows == 0 || cols == 0 {
        return Ok(Matching { pairs: Vec::new(), total_cost: 0.0 });
    }
    let mut max_abs = 0.0f64;
    for (r, row) in problem.costs.iter().enumerate() {
        for (c, &cost) in row.iter().enumerate() {
            if problem.is_forbidden(r, c) {
                continue;
            }
            if !cost.is_finite() {
                return Err(AssignmentError::NonFiniteCost { row: r, col: c });
            }
            max_abs = max_abs.max(cost.abs());
        }
    }

    // Square matrix; dummy cells cost 0, forbidden cells cost enough that
    // one of them outweighs any matching made of allowed cells only.
    let dim = rows.max(cols);
    let big = (2.0 * dim as f64 * max_abs + 1.0).max(1.0);
    let cell = |r: usize, c: usize| -> f64 {
        if r >= rows || c >= cols {
            0.0
        } else if problem.is_forbidden(r, c) {
            big
        } else {
            problem.costs[r][c]
        }
    };

    // Hungarian method, one augmenting path per row. `row_for_col[dim]` is
    // the virtual column holding the row currently being inserted.
    let mut u = vec![0.0f64; dim];
    let mut v = vec![0.0f64; dim + 1];
    let mut row_for_col = vec![NO_ROW; dim + 1];
    for row in 0..dim {
        row_for_col[dim] = row;
        let mut j0 = dim;
        let mut min_slack = vec![f64::INFINITY; dim + 1];
        let mut path_back = vec![dim; dim + 1];
        let mut visited = vec![false; dim + 1];
        loop {
            visited[j0] = true;
            let i0 = row_for_col[j0];
            let mut delta = f64::INFINITY;
            let mut j_next = dim;
            for j in 0..dim {
                if visited[j] {
                    continue;
                }
                let slack = cell(i0, j) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    path_back[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j_next = j;
                }
            }
            for j in 0..=dim {
                if visited[j] {
                    if row_for_col[j] != NO_ROW {
                        u[row_for_col[j]] += delta;
                    }
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j_next;
            if row_for_col[j0] == NO_ROW {
                break;
            }
        }
        while j0 != dim {
            let j_prev = path_back[j0];
            row_for_col[j0] = row_for_col[j_prev];
            j0 = j_prev;
        }
    }

    // Optimal duals in hand: the cells any optimal matching may use are the
    // tight ones. Re-pick among them in ascending (row, col) order so equal
    // costs always give the same answer. The solver's own cells are added
    // unconditionally to stay immune to rounding in the tightness test.
    let mut col_of_row = vec![NO_ROW; dim];
    for j in 0..dim {
        if row_for_col[j] != NO_ROW {
            col_of_row[row_for_col[j]] = j;
        }
    }
    let eps = 1e-9 * (max_abs.max(1.0));
    let mut tight: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for (r, tight_r) in tight.iter_mut().enumerate() {
        // Real allowed cells first so dummy and forbidden cells soak up a
        // row only when no optimal matching gives it a real partner.
        for c in 0..dim {
            let real = r < rows && c < cols && !problem.is_forbidden(r, c);
            if real && (cell(r, c) - u[r] - v[c]).abs() <= eps {
                tight_r.push(c);
            }
        }
        for c in 0..dim {
            let real = r < rows && c < cols && !problem.is_forbidden(r, c);
            if !real && (cell(r, c) - u[r] - v[c]).abs() <= eps && col_of_row[r] != c {
                tight_r.push(c);
            }
        }
        let own = col_of_row[r];
        if !tight_r.contains(&own) {
            let real = r < rows && own < cols && !problem.is_forbidden(r, own);
            if real {
                tight_r.insert(0, own);
            } else {
                tight_r.push(own);
            }
        }
    }
    let assignment = lexicographic_perfect_matching(&tight, dim);

    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for (r, &c) in assignment.iter().enumerate() {
        if r < rows && c < cols && !problem.is_forbidden(r, c) {
            pairs.push((r, c));
            total_cost += problem.costs[r][c];
        }
    }
    Ok(Matching { pairs, total_cost })
}

/// Fixes rows to their smallest candidate column such that the remaining
/// rows can still all be matched (a perfect matching is known to exist).
fn lexicographic_perfect_matching(candidates: &[Vec<usize>], dim: usize) -> Vec<usize> {
    let mut fixed = vec![NO_ROW; dim];
    let mut col_taken = vec![false; dim + 1];
    for row in 0..dim {
        for &col in &candidates[row] {
            if col_taken[col] {
                continue;
            }
            col_taken[col] = true;
            if rest_matchable(candidates, row + 1, &col_taken) {
                fixed[row] = col;
                break;
            }
            col_taken[col] = false;
        }
        debug_assert!(fixed[row] != NO_ROW, "tight graph lost its perfect matching");
    }
    fixed
}

/// Kuhn's algorithm: can every row in `first_free..` be matched to a distinct
/// untaken candidate column?
fn rest_matchable(candidates: &[Vec<usize>], first_free: usize, col_taken: &[bool]) -> bool {
    let dim = candidates.len();
    let mut row_for_col = vec![NO_ROW; dim + 1];
    for row in first_free..dim {
        let mut visited = vec![false; dim + 1];
        if !kuhn_augment(candidates, row, col_taken, &mut visited, &mut row_for_col) {
            return false;
        }
    }
    true
}

fn kuhn_augment(
    candidates: &[Vec<usize>],
    row: usize,
    col_taken: &[bool],
    visited: &mut [bool],
    row_for_col: &mut [usize],
) -> bool {
    for &col in &candidates[row] {
        if col_taken[col] || visited[col] {
            continue;
        }
        visited[col] = true;
        if row_for_col[col] == NO_ROW
            || kuhn_augment(candidates, row_for_col[col], col_taken, visited, row_for_col)
        {
            row_for_col[col] = row;
            return true;
        }
    }
    false
}

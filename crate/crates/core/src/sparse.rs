//! Compressed-column sparse matrices and a direct LU factorization.
//!
//! The factorization is left-looking (one sparse triangular solve per
//! column) with threshold partial pivoting that prefers the diagonal. Columns
//! are pre-ordered by minimum degree on the pattern of `A + Aᵀ`, which suits
//! the structurally symmetric Jacobians produced by power-flow problems.

use std::collections::BTreeSet;

use thiserror::Error;

const NONE: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("matrix is singular at elimination step {0}")]
    Singular(usize),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("entry ({row}, {col}) outside a {n_rows}x{n_cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; n_cols + 1];
        for &(row, col, _) in triplets {
            if row >= n_rows || col >= n_cols {
                return Err(SparseError::OutOfBounds {
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            counts[col + 1] += 1;
        }
        for c in 0..n_cols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(row, col, v) in triplets {
            entries[next[col]] = (row, v);
            next[col] += 1;
        }

        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        for c in 0..n_cols {
            let column = &mut entries[counts[c]..counts[c + 1]];
            column.sort_by_key(|&(r, _)| r);
            for &(r, v) in column.iter() {
                if row_idx.len() > col_ptr[c] && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(CscMatrix {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for (c, &xc) in x.iter().enumerate().take(self.n_cols) {
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }
}

/// Minimum-degree elimination order on the symmetrized pattern. Ties go to
/// the lowest index so the order is deterministic.
pub fn minimum_degree_order(a: &CscMatrix) -> Vec<usize> {
    let n = a.n_cols;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for c in 0..n {
        for (r, _) in a.column(c) {
            if r != c && r < n {
                adj[c].insert(r);
                adj[r].insert(c);
            }
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("uneliminated vertex remains");
        eliminated[pick] = true;
        order.push(pick);
        let neighbours: Vec<usize> = std::mem::take(&mut adj[pick]).into_iter().collect();
        for &u in &neighbours {
            adj[u].remove(&pick);
        }
        for (i, &u) in neighbours.iter().enumerate() {
            for &w in &neighbours[i + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
    order
}

/// `P·A·Q = L·U` with unit-diagonal `L`.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    col_order: Vec<usize>,
    /// Original row → elimination step.
    row_step: Vec<usize>,
    l: CscMatrix,
    u: CscMatrix,
}

impl SparseLu {
    /// Diagonal pivot is kept while it is at least this fraction of the
    /// largest candidate in its column.
    pub const PIVOT_THRESHOLD: f64 = 0.1;

    pub fn factor(a: &CscMatrix) -> Result<Self, SparseError> {
        if a.n_rows != a.n_cols {
            return Err(SparseError::NotSquare(a.n_rows, a.n_cols));
        }
        let order = minimum_degree_order(a);
        Self::factor_with_order(a, order)
    }

    pub fn factor_with_order(a: &CscMatrix, col_order: Vec<usize>) -> Result<Self, SparseError> {
        let n = a.n_cols;
        let mut row_step = vec![NONE; n];

        let mut l_ptr = vec![0usize];
        let mut l_idx: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
        let mut l_val: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);
        let mut u_ptr = vec![0usize];
        let mut u_idx: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
        let mut u_val: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);

        let mut x = vec![0.0f64; n];
        let mut reach = Vec::with_capacity(n);
        let mut marked = vec![false; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for (k, &col) in col_order.iter().enumerate() {
            // Nonzero pattern of L⁻¹·A(:,col) in topological order.
            reach.clear();
            for (r, _) in a.column(col) {
                if marked[r] {
                    continue;
                }
                marked[r] = true;
                stack.push((r, 0));
                while let Some(top) = stack.last_mut() {
                    let node = top.0;
                    let step = row_step[node];
                    let mut next = None;
                    if step != NONE {
                        let (start, end) = (l_ptr[step] + 1, l_ptr[step + 1]);
                        while start + top.1 < end {
                            let child = l_idx[start + top.1];
                            top.1 += 1;
                            if !marked[child] {
                                next = Some(child);
                                break;
                            }
                        }
                    }
                    match next {
                        Some(child) => {
                            marked[child] = true;
                            stack.push((child, 0));
                        }
                        None => {
                            stack.pop();
                            reach.push(node);
                        }
                    }
                }
            }
            reach.reverse();
            for &r in &reach {
                marked[r] = false;
            }

            for (r, v) in a.column(col) {
                x[r] = v;
            }
            for &j in &reach {
                let step = row_step[j];
                if step == NONE {
                    continue;
                }
                let xj = x[j];
                for p in l_ptr[step] + 1..l_ptr[step + 1] {
                    x[l_idx[p]] -= l_val[p] * xj;
                }
            }

            let mut best = NONE;
            let mut best_abs = -1.0f64;
            for &i in &reach {
                if row_step[i] == NONE {
                    let v = x[i].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = i;
                    }
                } else {
                    u_idx.push(row_step[i]);
                    u_val.push(x[i]);
                }
            }
            if row_step[col] == NONE && x[col].abs() >= Self::PIVOT_THRESHOLD * best_abs {
                best = col;
            }
            if best == NONE || best_abs <= 0.0 || !x[best].is_finite() || x[best] == 0.0 {
                return Err(SparseError::Singular(k));
            }

            let pivot = x[best];
            u_idx.push(k);
            u_val.push(pivot);
            u_ptr.push(u_idx.len());

            row_step[best] = k;
            l_idx.push(best);
            l_val.push(1.0);
            for &i in &reach {
                if row_step[i] == NONE {
                    l_idx.push(i);
                    l_val.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
            l_ptr.push(l_idx.len());
        }

        for r in l_idx.iter_mut() {
            *r = row_step[*r];
        }
        Ok(SparseLu {
            n,
            col_order,
            row_step,
            l: CscMatrix {
                n_rows: n,
                n_cols: n,
                col_ptr: l_ptr,
                row_idx: l_idx,
                values: l_val,
            },
            u: CscMatrix {
                n_rows: n,
                n_cols: n,
                col_ptr: u_ptr,
                row_idx: u_idx,
                values: u_val,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn fill(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.row_step[i]] = bi;
        }
        for k in 0..n {
            let yk = y[k];
            if yk != 0.0 {
                for p in self.l.col_ptr[k] + 1..self.l.col_ptr[k + 1] {
                    y[self.l.row_idx[p]] -= self.l.values[p] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let diag_pos = self.u.col_ptr[k + 1] - 1;
            y[k] /= self.u.values[diag_pos];
            let yk = y[k];
            for p in self.u.col_ptr[k]..diag_pos {
                y[self.u.row_idx[p]] -= self.u.values[p] * yk;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &c) in self.col_order.iter().enumerate() {
            x[c] = y[k];
        }
        x
    }
}

//! Sparse LDLᵀ factorization of symmetric quasi-definite matrices, with a
//! reverse Cuthill–McKee fill-reducing ordering.

use std::collections::VecDeque;

use super::csc::CscMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Reverse Cuthill–McKee ordering of the symmetric pattern given by its upper
/// triangle. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in upper.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(start, &adj, &degree);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Repeated BFS toward the node of lowest degree in the deepest level.
fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..8 {
        let levels = bfs_levels(root, adj);
        let max_level = *levels.values().max().unwrap_or(&0);
        if max_level <= depth && root != start {
            break;
        }
        depth = max_level;
        let candidate = levels
            .iter()
            .filter(|&(_, &l)| l == max_level)
            .map(|(&v, _)| v)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> std::collections::BTreeMap<usize, usize> {
    let mut levels = std::collections::BTreeMap::new();
    levels.insert(root, 0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = levels[&v];
        for &w in &adj[v] {
            if !levels.contains_key(&w) {
                levels.insert(w, l + 1);
                queue.push_back(w);
            }
        }
    }
    levels
}

/// Upper triangle of `P K Pᵀ` for `perm[new] = old`.
pub fn permute_upper(upper: &CscMatrix, perm: &[usize]) -> CscMatrix {
    let mut pinv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        pinv[old] = new;
    }
    let t: Vec<_> = upper
        .triplets()
        .map(|(r, c, v)| {
            let (a, b) = (pinv[r], pinv[c]);
            (a.min(b), a.max(b), v)
        })
        .collect();
    CscMatrix::from_triplets(upper.nrows, upper.ncols, &t).expect("permutation in range")
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactor {
    /// Factors the symmetric matrix given by its upper triangle, using an RCM
    /// ordering.
    pub fn new(upper: &CscMatrix) -> Result<Self> {
        let perm = rcm_ordering(upper);
        Self::with_ordering(upper, perm)
    }

    pub fn with_ordering(upper: &CscMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = upper.ncols;
        if upper.nrows != n || perm.len() != n {
            return Err(Error::Shape("LDL input must be square".into()));
        }
        let k = permute_upper(upper, &perm);
        let (ap, ai, ax) = (&k.colptr, &k.rowind, &k.values);

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }

        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        let mut li = vec![0usize; nnz_l];
        let mut lx = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut nnz_e = 1;
                    let mut next = etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next_space[c];
                let yc = y_vals[c];
                for j in lp[c]..slot {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[slot] = k;
                lx[slot] = yc * dinv[c];
                d[k] -= yc * lx[slot];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::Numeric(format!("zero or non-finite pivot at column {k}")));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Self {
            n,
            perm,
            lp,
            li,
            lx,
            d,
            dinv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of positive pivots.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn nnz_l(&self) -> usize {
        self.lx.len()
    }

    /// Solves `K x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.dinv) {
            *xi *= di;
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * x[self.li[j]];
            }
            x[i] = s;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

//! Direct solver for the Newton systems: reverse Cuthill–McKee ordering of the
//! cell graph followed by banded LU with partial pivoting.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Reverse Cuthill–McKee ordering. Returns `order[new] = old`.
pub fn rcm_order(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Start each component from a minimum-degree vertex.
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited vertex exists");
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            next.dedup();
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Bandwidth of `adjacency` under the position map `pos[old] = new`.
pub fn bandwidth(adjacency: &[Vec<usize>], pos: &[usize]) -> usize {
    adjacency
        .iter()
        .enumerate()
        .flat_map(|(v, nbrs)| nbrs.iter().map(move |&u| pos[v].abs_diff(pos[u])))
        .max()
        .unwrap_or(0)
}

/// Square band matrix with room for the fill created by row pivoting.
/// Row `i` stores columns `i - kl ..= i + kl + ku`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    /// Add to entry `(i, j)`, which must lie inside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place LU factorisation with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for r in (k + 1)..=last_row {
                let v = self.data[self.idx(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            self.pivots[k] = piv;
            let last_col = (k + kl + ku).min(n - 1);
            if piv != k {
                for c in k..=last_col {
                    let a = self.idx(k, c);
                    let b = self.idx(piv, c);
                    self.data.swap(a, b);
                }
            }
            let inv = 1.0 / self.data[self.idx(k, k)];
            let pivot_row = self.idx(k, k);
            for r in (k + 1)..=last_row {
                let rk = self.idx(r, k);
                let m = self.data[rk] * inv;
                if m == 0.0 {
                    continue;
                }
                self.data[rk] = m;
                let row_base = self.idx(r, k);
                for off in 1..=(last_col - k) {
                    let upper = self.data[pivot_row + off];
                    self.data[row_base + off] -= m * upper;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A x = b` in place after [`factor`](Self::factor).
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve called before factor");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in (k + 1)..=(k + kl).min(n - 1) {
                    b[r] -= self.data[self.idx(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in (k + 1)..=(k + kl + ku).min(n - 1) {
                acc -= self.data[self.idx(k, c)] * b[c];
            }
            b[k] = acc / self.data[self.idx(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for r in (k + 1)..n {
                let m = a[r][k] / a[k][k];
                for c in k..n {
                    a[r][c] -= m * a[k][c];
                }
                b[r] -= m * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = ((k + 1)..n).map(|c| a[k][c] * x[c]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn band_lu_matches_dense_with_pivoting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, kl, ku) = (40, 3, 2);
        let mut band = BandMatrix::new(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // Small diagonal forces row exchanges.
                let v = if i == j {
                    rng.random_range(-0.1..0.1)
                } else {
                    rng.random_range(-1.0..1.0)
                };
                band.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = dense_solve(dense, b.clone());
        band.factor().unwrap();
        let mut x = b;
        band.solve(&mut x);
        for (u, v) in x.iter().zip(&expected) {
            assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn singular_matrix_detected() {
        let mut band = BandMatrix::new(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(2, 2, 1.0);
        assert!(matches!(band.factor(), Err(Error::Singular(1))));
    }

    #[test]
    fn rcm_reduces_grid_bandwidth() {
        // 6×6 grid numbered column-major plus a long-range edge pair.
        let n = 36;
        let mut adj = vec![Vec::new(); n];
        let id = |x: usize, y: usize| y + 6 * x;
        for x in 0..6 {
            for y in 0..6 {
                if x + 1 < 6 {
                    adj[id(x, y)].push(id(x + 1, y));
                    adj[id(x + 1, y)].push(id(x, y));
                }
                if y + 1 < 6 {
                    adj[id(x, y)].push(id(x, y + 1));
                    adj[id(x, y + 1)].push(id(x, y));
                }
            }
        }
        let order = rcm_order(&adj);
        let mut pos = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        assert!(bandwidth(&adj, &pos) <= 6);
    }
}

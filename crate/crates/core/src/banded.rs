//! Banded LU factorization with partial pivoting.

/// Square matrix with `kl` sub- and `ku` super-diagonals, stored row by row
/// with room for the fill-in that row interchanges create.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.ku + self.kl, "({r}, {c}) outside band");
        r * self.width + (c + self.kl - r)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.ku + self.kl {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let k = self.idx(r, c);
        self.data[k] = v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Factors in place. Returns the first column with a zero pivot on failure.
    pub fn factor(mut self) -> Result<BandLu, usize> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.get(j, j).abs();
            for r in j + 1..=last_row {
                let a = self.get(r, j).abs();
                if a > best {
                    best = a;
                    p = r;
                }
            }
            piv[j] = p;
            if best == 0.0 || !best.is_finite() {
                return Err(j);
            }
            let last_col = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=last_col {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.idx(j, j)];
            for r in j + 1..=last_row {
                let k = self.idx(r, j);
                if self.data[k] == 0.0 {
                    continue;
                }
                let l = self.data[k] / d;
                self.data[k] = l;
                let base_r = self.idx(r, j);
                let base_j = self.idx(j, j);
                for off in 1..=last_col - j {
                    self.data[base_r + off] -= l * self.data[base_j + off];
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

/// Factors produced by [`BandMatrix::factor`].
#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.m.n, self.m.kl, self.m.ku);
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for r in j + 1..=(j + kl).min(n - 1) {
                    b[r] -= self.m.data[self.m.idx(r, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let last = (j + kl + ku).min(n - 1);
            let base = self.m.idx(j, j);
            let mut s = b[j];
            for off in 1..=last - j {
                s -= self.m.data[base + off] * b[j + off];
            }
            b[j] = s / self.m.data[base];
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
        for j in 0..n {
            let p = (j..n).max_by(|&x, &y| a[x][j].abs().total_cmp(&a[y][j].abs())).unwrap();
            a.swap(j, p);
            b.swap(j, p);
            for r in j + 1..n {
                let l = a[r][j] / a[j][j];
                for c in j..n {
                    a[r][c] -= l * a[j][c];
                }
                b[r] -= l * b[j];
            }
        }
        for j in (0..n).rev() {
            let s: f64 = (j + 1..n).map(|c| a[j][c] * b[c]).sum();
            b[j] = (b[j] - s) / a[j][j];
        }
        b
    }

    #[test]
    fn matches_dense_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(12, 2, 3), (30, 8, 8), (9, 0, 4), (17, 5, 0)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    // Weak diagonal forces row interchanges.
                    let v: f64 = rng.random_range(-1.0..1.0) * if r == c { 0.1 } else { 1.0 };
                    band.set(r, c, v);
                    dense[r][c] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lu = band.clone().factor().unwrap();
            let mut x = b.clone();
            lu.solve(&mut x);
            let expected = dense_solve(dense.clone(), b.clone());
            let scale = expected.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, e) in x.iter().zip(&expected) {
                assert!((a - e).abs() < 1e-8 * scale, "{a} vs {e}");
            }
            for r in 0..n {
                let ax: f64 = (0..n).map(|c| dense[r][c] * x[c]).sum();
                assert!((ax - b[r]).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 0, 1.0);
        m.set(2, 2, 1.0);
        assert_eq!(m.factor().unwrap_err(), 1);
    }
}

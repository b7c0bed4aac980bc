//! Symmetric positive definite band matrix with in-place Cholesky.

/// Lower band of a symmetric `n × n` matrix with half-bandwidth `bw`:
/// entry `(i, j)` for `i - bw <= j <= i`.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw, "({i},{j}) outside band {}", self.bw);
        i * (self.bw + 1) + (i - j)
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[self.idx(i, i)]
    }

    /// Zeroes row and column `i` leaving `diag` on the diagonal.
    pub fn isolate(&mut self, i: usize, diag: f64) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..i {
            self.set(i, j, 0.0);
        }
        for j in i + 1..=hi {
            self.set(j, i, 0.0);
        }
        self.set(i, i, diag);
    }

    /// `D^{-1/2} A D^{-1/2}` for the given `scale = D^{-1/2}`.
    pub fn scale_symmetric(&mut self, scale: &[f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let k = self.idx(i, j);
                self.data[k] *= scale[i] * scale[j];
            }
        }
    }

    /// Consumes the matrix into its Cholesky factor, or `None` if a pivot
    /// is not positive.
    pub fn cholesky(mut self) -> Option<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Some(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.idx(i, k)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..=(i + bw).min(n - 1) {
                s -= l.data[l.idx(k, i)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
    }

    /// Solves for a right-hand side that is zero outside `range`; the
    /// forward sweep starts at the first nonzero.
    pub fn solve_sparse_rhs(&self, b: &mut [f64], start: usize) {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        for i in start..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw).max(start)..i {
                s -= l.data[l.idx(i, k)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..=(i + bw).min(n - 1) {
                s -= l.data[l.idx(k, i)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
    }
}

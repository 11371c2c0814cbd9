/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Solves a symmetric positive-definite tridiagonal system in place
/// (Thomas algorithm). `diag` and `off` describe the matrix, `rhs` is
/// overwritten with the solution, `work` has the length of `diag`.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64], work: &mut [f64]) {
    let n = diag.len();
    debug_assert!(off.len() + 1 == n || (n == 0 && off.is_empty()));
    if n == 0 {
        return;
    }
    work[0] = diag[0];
    for i in 1..n {
        let l = off[i - 1] / work[i - 1];
        work[i] = diag[i] - l * off[i - 1];
        rhs[i] -= l * rhs[i - 1];
    }
    rhs[n - 1] /= work[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - off[i] * rhs[i + 1]) / work[i];
    }
}

/// `y = T x` for a symmetric tridiagonal `T`.
pub fn tridiagonal_mul(diag: &[f64], off: &[f64], x: &[f64], y: &mut [f64]) {
    let n = diag.len();
    for i in 0..n {
        let mut v = diag[i] * x[i];
        if i > 0 {
            v += off[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            v += off[i] * x[i + 1];
        }
        y[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = NeumaierSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-13).abs() < 1e-20);
    }

    #[test]
    fn tridiagonal_roundtrip() {
        let diag = vec![4.0, 5.0, 6.0, 4.5];
        let off = vec![1.0, -0.5, 2.0];
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let mut b = vec![0.0; 4];
        tridiagonal_mul(&diag, &off, &x, &mut b);
        let mut work = vec![0.0; 4];
        solve_tridiagonal(&diag, &off, &mut b, &mut work);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-14);
        }
    }
}

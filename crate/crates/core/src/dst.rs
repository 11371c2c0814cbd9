//! Type-I discrete sine transform on top of a complex FFT.
//!
//! `Y[k] = sum_{j=1..n} x[j] sin(pi j k / (n + 1))` for `k = 1..n`, stored
//! zero-based. The transform is its own inverse up to the factor `2 / (n + 1)`.
//! Two real transforms share one complex FFT: the odd extension of a real
//! sequence has a purely imaginary spectrum, so packing `a + i b` separates
//! cleanly into the real and imaginary parts.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Dst {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for Dst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dst").field("n", &self.n).finish()
    }
}

impl Dst {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DST length must be positive");
        let len = 2 * (n + 1);
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Dst {
            n,
            fft,
            buf: vec![Complex::default(); len],
            scratch,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn load(&mut self, a: &[f64], b: Option<&[f64]>) {
        let n = self.n;
        assert!(a.len() <= n, "DST input longer than transform");
        self.buf.iter_mut().for_each(|c| *c = Complex::default());
        for (j, &x) in a.iter().enumerate() {
            self.buf[j + 1].re = x;
            self.buf[2 * n + 1 - j].re = -x;
        }
        if let Some(b) = b {
            assert!(b.len() <= n, "DST input longer than transform");
            for (j, &x) in b.iter().enumerate() {
                self.buf[j + 1].im = x;
                self.buf[2 * n + 1 - j].im = -x;
            }
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    /// Inputs shorter than `n` are zero padded; `out` receives the first
    /// `out.len()` coefficients.
    pub fn transform(&mut self, input: &[f64], out: &mut [f64]) {
        assert!(out.len() <= self.n);
        self.load(input, None);
        for (k, o) in out.iter_mut().enumerate() {
            *o = -0.5 * self.buf[k + 1].im;
        }
    }

    pub fn transform_pair(&mut self, a: &[f64], b: &[f64], out_a: &mut [f64], out_b: &mut [f64]) {
        assert!(out_a.len() <= self.n && out_b.len() <= self.n);
        self.load(a, Some(b));
        for (k, o) in out_a.iter_mut().enumerate() {
            *o = -0.5 * self.buf[k + 1].im;
        }
        for (k, o) in out_b.iter_mut().enumerate() {
            *o = 0.5 * self.buf[k + 1].re;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive(x: &[f64], n: usize) -> Vec<f64> {
        (1..=n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * (PI * (j + 1) as f64 * k as f64 / (n + 1) as f64).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let n = 37;
        let x: Vec<f64> = (0..n).map(|j| ((j * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut dst = Dst::new(n);
        let mut out = vec![0.0; n];
        dst.transform(&x, &mut out);
        for (a, b) in out.iter().zip(naive(&x, n)) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn pair_separates() {
        let n = 20;
        let a: Vec<f64> = (0..n).map(|j| (j as f64).sin()).collect();
        let b: Vec<f64> = (0..12).map(|j| (j as f64 * 0.3).cos()).collect();
        let mut dst = Dst::new(n);
        let (mut oa, mut ob) = (vec![0.0; n], vec![0.0; n]);
        dst.transform_pair(&a, &b, &mut oa, &mut ob);
        let (ea, eb) = (naive(&a, n), naive(&b, n));
        for k in 0..n {
            assert!((oa[k] - ea[k]).abs() < 1e-12);
            assert!((ob[k] - eb[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn self_inverse_up_to_scale() {
        let n = 63;
        let x: Vec<f64> = (0..n).map(|j| 1.0 / (1.0 + j as f64)).collect();
        let mut dst = Dst::new(n);
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        dst.transform(&x, &mut y);
        dst.transform(&y, &mut z);
        let scale = 2.0 / (n + 1) as f64;
        for j in 0..n {
            assert!((scale * z[j] - x[j]).abs() < 1e-13);
        }
    }
}

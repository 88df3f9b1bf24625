use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalised 2D FFT on an `m x m` row-major buffer.
pub(crate) struct Fft2 {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(m: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 { m, fwd: p.plan_fft_forward(m), inv: p.plan_fft_inverse(m) }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// `sum_k a_k exp(+2 pi i k.x / m)`, without the `1/m^2`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.m * self.m);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, self.m);
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, self.m);
    }
}

fn transpose(data: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in i + 1..m {
            data.swap(i * m + j, j * m + i);
        }
    }
}

/// Smallest `2^a 3^b 5^c` not below `n`.
pub(crate) fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_delta() {
        let m = 12;
        let f = Fft2::new(m);
        let mut d: Vec<Complex64> = (0..m * m).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let orig = d.clone();
        f.forward(&mut d);
        f.inverse(&mut d);
        for (a, b) in d.iter().zip(orig.iter()) {
            assert!((a / (m * m) as f64 - b).norm() < 1e-12);
        }
        let mut delta = vec![Complex64::new(0.0, 0.0); m * m];
        delta[0] = Complex64::new(1.0, 0.0);
        f.forward(&mut delta);
        assert!(delta.iter().all(|z| (z - 1.0).norm() < 1e-14));
        assert_eq!(good_size(97), 100);
        assert_eq!(good_size(1024), 1024);
    }
}

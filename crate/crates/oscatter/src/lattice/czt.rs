//! Chirp-z (Bluestein) evaluation of the trigonometric interpolant at
//! uniformly scaled sample points.
//!
//! Given n centered samples psi_j = f(x_j), x_j = (j - n/2) dx, of a
//! band-limited periodic f, computes f(s x_q) exactly (up to rounding) for an
//! arbitrary real scale s, including |s| > 1 (periodic wrap of the
//! interpolant) and s < 0 (parity). This backs the dilation operator and the
//! Mehler scaling factor without pointwise interpolation error.
//!
//! The scaled DFT sum_m c_m exp(i a m' q') with a = 2 pi s / n is factored by
//! m'q' = (m'^2 + q'^2 - (m' - q')^2)/2 into chirp multiplications and one
//! cyclic convolution, evaluated with zero-padded FFTs.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct LineResampler {
    n: usize,
    pad: usize,
    /// exp(i a q'^2 / 2) for q = 0..n; used for both input and output chirps.
    chirp: Vec<Complex64>,
    /// FFT of the Bluestein kernel exp(-i a r^2 / 2), padded.
    kernel_hat: Vec<Complex64>,
    fft_n: Arc<dyn Fft<f64>>,
    fft_pad: Arc<dyn Fft<f64>>,
    ifft_pad: Arc<dyn Fft<f64>>,
}

impl LineResampler {
    pub fn new(n: usize, scale: f64) -> Self {
        assert!(n % 2 == 0 && n > 0);
        let a = 2.0 * std::f64::consts::PI * scale / n as f64;
        let pad = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft_n = planner.plan_fft_forward(n);
        let fft_pad = planner.plan_fft_forward(pad);
        let ifft_pad = planner.plan_fft_inverse(pad);

        let half = n as i64 / 2;
        let chirp: Vec<Complex64> = (0..n as i64)
            .map(|q| {
                let qc = (q - half) as f64;
                Complex64::from_polar(1.0, 0.5 * a * qc * qc)
            })
            .collect();

        // Kernel v[r] = exp(-i a r^2 / 2) laid out cyclically so the padded
        // convolution reads v[q - p] for q - p in (-(n-1), n-1).
        let mut kernel = vec![Complex64::default(); pad];
        for r in 0..n as i64 {
            let v = Complex64::from_polar(1.0, -0.5 * a * (r * r) as f64);
            kernel[r as usize] = v;
            if r > 0 {
                kernel[pad - r as usize] = v;
            }
        }
        let mut kernel_hat = kernel;
        fft_pad.process(&mut kernel_hat);

        Self { n, pad, chirp, kernel_hat, fft_n, fft_pad, ifft_pad }
    }

    /// Evaluates the interpolant of `line` at the scaled points s x_q,
    /// writing into `out` (same length).
    pub fn resample(&self, line: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(line.len(), n);
        assert_eq!(out.len(), n);
        let half_parity = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };

        // Centered spectral coefficients: c_m = (1/n)(-1)^(m + n/2) * DFT[(-1)^j psi]_m.
        let mut spec: Vec<Complex64> = line
            .iter()
            .enumerate()
            .map(|(j, &v)| if j % 2 == 0 { v } else { -v })
            .collect();
        self.fft_n.process(&mut spec);
        let inv_n = 1.0 / n as f64;
        for (m, c) in spec.iter_mut().enumerate() {
            let sgn = if m % 2 == 0 { 1.0 } else { -1.0 };
            *c *= sgn * half_parity * inv_n;
        }

        // Bluestein: chirp, convolve with the fixed kernel, chirp again.
        let mut buf = vec![Complex64::default(); self.pad];
        for m in 0..n {
            buf[m] = spec[m] * self.chirp[m];
        }
        self.fft_pad.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.ifft_pad.process(&mut buf);
        let inv_pad = 1.0 / self.pad as f64;
        for q in 0..n {
            out[q] = buf[q] * self.chirp[q] * inv_pad;
        }
    }
}

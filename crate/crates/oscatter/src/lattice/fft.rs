//! Centered, unitary, multi-axis Fourier transform.
//!
//! Samples live at x_j = (j - n/2) dx and frequencies at xi_m = (m - n/2) dxi
//! with dxi = 2 pi / (n dx), so the discrete map approximates the continuum
//! transform F psi(xi) = (2 pi)^(-dim/2) int psi(x) exp(-i xi x) dx and is
//! exactly unitary: sum |psi_hat|^2 dxi = sum |psi|^2 dx per axis.
//!
//! Centering is folded into the standard DFT by the (-1)^j / (-1)^m
//! alternation together with a global (-1)^(n/2) sign.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

pub struct FftEngine {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl FftEngine {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
        }
    }

    pub fn plan_forward(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.forward
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone()
    }

    pub fn plan_inverse(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.inverse
            .entry(n)
            .or_insert_with(|| planner.plan_fft_inverse(n))
            .clone()
    }
}

impl Default for FftEngine {
    fn default() -> Self {
        Self::new()
    }
}

thread_local! {
    static ENGINE: std::cell::RefCell<FftEngine> = std::cell::RefCell::new(FftEngine::new());
}

/// Applies the centered forward transform along one axis of a row-major
/// array. `scale` should be dx/sqrt(2 pi) for the unitary convention.
pub fn forward_axis(data: &mut [Complex64], n: usize, stride: usize, scale: f64) {
    transform_axis(data, n, stride, scale, true);
}

/// Centered inverse transform along one axis; `scale` = dxi/sqrt(2 pi).
pub fn inverse_axis(data: &mut [Complex64], n: usize, stride: usize, scale: f64) {
    transform_axis(data, n, stride, scale, false);
}

fn transform_axis(data: &mut [Complex64], n: usize, stride: usize, scale: f64, fwd: bool) {
    assert!(n % 2 == 0, "axis length must be even");
    let total = data.len();
    assert_eq!(total % (n * stride), 0);
    let outer = total / (n * stride);
    // (-1)^(n/2) global sign from re-centering both domains.
    let sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let s = scale * sign;
    let plan = ENGINE.with(|e| {
        let mut e = e.borrow_mut();
        if fwd {
            e.plan_forward(n)
        } else {
            e.plan_inverse(n)
        }
    });
    let mut line = vec![Complex64::default(); n];
    for o in 0..outer {
        for i in 0..stride {
            let base = o * n * stride + i;
            for (j, slot) in line.iter_mut().enumerate() {
                let v = data[base + j * stride];
                *slot = if j % 2 == 0 { v } else { -v };
            }
            plan.process(&mut line);
            for (m, value) in line.iter().enumerate() {
                let w = if m % 2 == 0 { *value } else { -*value };
                data[base + m * stride] = w * s;
            }
        }
    }
}

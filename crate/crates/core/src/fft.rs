//! Separable n-dimensional FFTs on row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct NdFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/len` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        debug_assert_eq!(data.len(), self.len());
        let dims = self.shape.len();
        for axis in 0..dims {
            let n = self.shape[axis];
            let stride: usize = self.shape[axis + 1..].iter().product();
            if stride == 1 {
                plans[axis].process(data);
                continue;
            }
            let outer = self.len() / (n * stride);
            let mut line = vec![Complex64::default(); n];
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for (i, z) in line.iter_mut().enumerate() {
                        *z = data[base + i * stride];
                    }
                    plans[axis].process(&mut line);
                    for (i, z) in line.iter().enumerate() {
                        data[base + i * stride] = *z;
                    }
                }
            }
        }
    }
}

/// Signed integer frequency index of FFT bin `i` of an `n`-point transform.
pub(crate) fn signed_bin(i: usize, n: usize) -> f64 {
    if i < n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

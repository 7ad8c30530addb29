//! Circular convolution against a fixed kernel, direct and FFT-backed.
//!
//! The interaction sums Σ_j Ψ(x_i, x_j)·v_j are circulant in the site index,
//! so one kernel spectrum serves every right-hand side.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{FluctError, Result};

/// Below this length the direct O(L²) sum beats FFT overhead.
pub const FAST_THRESHOLD: usize = 64;

/// How to evaluate a circular convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolveMethod {
    Direct,
    Fast,
    /// Direct for short signals, FFT otherwise.
    Auto,
}

/// output[i] = Σ_k kernel[(i−k) mod L]·signal[k], the O(L²) reference path.
pub fn convolve_direct(kernel: &[f64], signal: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != signal.len() {
        return Err(FluctError::LengthMismatch {
            expected: kernel.len(),
            got: signal.len(),
        });
    }
    let len = kernel.len();
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, s) in signal.iter().enumerate() {
            acc += kernel[(i + len - k % len) % len] * s;
        }
        *o = acc;
    }
    Ok(out)
}

/// One-shot convolution with method selection.
pub fn circular_convolve(kernel: &[f64], signal: &[f64], method: ConvolveMethod) -> Result<Vec<f64>> {
    if kernel.len() != signal.len() {
        return Err(FluctError::LengthMismatch {
            expected: kernel.len(),
            got: signal.len(),
        });
    }
    match method {
        ConvolveMethod::Direct => convolve_direct(kernel, signal),
        ConvolveMethod::Fast => Ok(Convolver::new(kernel).convolve(signal)),
        ConvolveMethod::Auto => {
            if kernel.len() < FAST_THRESHOLD {
                convolve_direct(kernel, signal)
            } else {
                Ok(Convolver::new(kernel).convolve(signal))
            }
        }
    }
}

/// Reusable FFT plan plus kernel spectrum.
///
/// `convolve_pair` packs two real signals into one complex transform; this is
/// exact when the kernel is symmetric (real spectrum), which holds for every
/// distance kernel here. Asymmetric kernels fall back to two transforms.
pub struct Convolver {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
    spectrum_real: bool,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("len", &self.len).finish()
    }
}

impl Convolver {
    pub fn new(kernel: &[f64]) -> Self {
        let len = kernel.len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let mut spectrum: Vec<Complex<f64>> =
            kernel.iter().map(|&k| Complex::new(k, 0.0)).collect();
        fft.process(&mut spectrum);
        let scale = kernel.iter().map(|k| k.abs()).sum::<f64>().max(1.0);
        let spectrum_real = spectrum
            .iter()
            .all(|c| c.im.abs() <= 1e-12 * scale);
        Self {
            len,
            fft,
            ifft,
            spectrum,
            spectrum_real,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Circular convolution of one real signal.
    pub fn convolve(&self, signal: &[f64]) -> Vec<f64> {
        assert_eq!(signal.len(), self.len, "signal length mismatch");
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&s| Complex::new(s, 0.0)).collect();
        self.transform_in_place(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Two real convolutions through one complex transform (symmetric kernel).
    pub fn convolve_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(a.len(), self.len);
        assert_eq!(b.len(), self.len);
        if !self.spectrum_real {
            return (self.convolve(a), self.convolve(b));
        }
        let mut buf: Vec<Complex<f64>> = a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| Complex::new(x, y))
            .collect();
        self.transform_in_place(&mut buf);
        (
            buf.iter().map(|c| c.re).collect(),
            buf.iter().map(|c| c.im).collect(),
        )
    }

    /// Treats the buffer as complex data; real and imaginary parts are
    /// convolved independently when the kernel spectrum is real.
    fn transform_in_place(&self, buf: &mut [Complex<f64>]) {
        self.fft.process(buf);
        let norm = 1.0 / self.len as f64;
        for (c, s) in buf.iter_mut().zip(self.spectrum.iter()) {
            *c = *c * *s * norm;
        }
        self.ifft.process(buf);
    }
}

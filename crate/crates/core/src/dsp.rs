//! Small signal-processing toolbox: FFT wrappers, convolution, windows and
//! zero-phase IIR filtering.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Real;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Forward FFT of a real sequence zero-padded (or truncated) to `n` points.
pub fn fft_real<T: Real>(x: &[T], n: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = (0..n)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or_else(T::zero), T::zero()))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// In-place forward FFT.
pub fn fft_in_place<T: Real>(buf: &mut [Complex<T>]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Inverse FFT returning the real part, scaled by `1/n`.
pub fn ifft_real<T: Real>(spectrum: &[Complex<T>]) -> Vec<T> {
    let n = spectrum.len();
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = T::one() / T::from_usize_lossy(n);
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Linear convolution through the FFT; output length `a.len() + b.len() - 1`.
pub fn fft_convolve<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = next_pow2(out_len);
    let fa = fft_real(a, n);
    let fb = fft_real(b, n);
    let prod: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut y = ifft_real(&prod);
    y.truncate(out_len);
    y
}

/// Cross-correlation `r[k] = sum_n x[n + k] * y[n]` for lags `0..x.len()`.
pub fn xcorr_nonneg<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    if x.is_empty() || y.is_empty() {
        return vec![T::zero(); x.len()];
    }
    let n = next_pow2(x.len() + y.len());
    let fx = fft_real(x, n);
    let fy = fft_real(y, n);
    let prod: Vec<_> = fx.iter().zip(&fy).map(|(a, b)| a * b.conj()).collect();
    let mut r = ifft_real(&prod);
    r.truncate(x.len());
    r
}

/// Periodic Hann window (satisfies constant overlap-add at 50% hop).
pub fn hann_periodic<T: Real>(n: usize) -> Vec<T> {
    let two_pi = T::lit(2.0) * T::PI();
    (0..n)
        .map(|i| T::lit(0.5) - T::lit(0.5) * (two_pi * T::from_usize_lossy(i) / T::from_usize_lossy(n)).cos())
        .collect()
}

/// Raised-cosine fade-in/fade-out of `fade` samples at each end.
pub fn tukey<T: Real>(n: usize, fade: usize) -> Vec<T> {
    let fade = fade.min(n / 2);
    (0..n)
        .map(|i| {
            let k = i.min(n - 1 - i);
            if k >= fade {
                T::one()
            } else {
                let x = T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(fade);
                T::lit(0.5) * (T::one() - x.cos())
            }
        })
        .collect()
}

pub fn energy<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

pub fn rms<T: Real>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    (energy(x) / T::from_usize_lossy(x.len())).sqrt()
}

pub fn max_abs<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Index of the largest absolute value (first one on ties).
pub fn argmax_abs<T: Real>(x: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in x.iter().enumerate() {
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

/// Second-order IIR section, direct form I, normalized so `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad<T> {
    pub b: [T; 3],
    pub a: [T; 2],
}

impl<T: Real> Biquad<T> {
    fn rbj(fc: T, q: T, fs: T, highpass: bool) -> Self {
        let w0 = T::lit(2.0) * T::PI() * fc / fs;
        let (s, c) = (w0.sin(), w0.cos());
        let alpha = s / (T::lit(2.0) * q);
        let a0 = T::one() + alpha;
        let (b0, b1) = if highpass {
            ((T::one() + c) / T::lit(2.0), -(T::one() + c))
        } else {
            ((T::one() - c) / T::lit(2.0), T::one() - c)
        };
        Biquad {
            b: [b0 / a0, b1 / a0, b0 / a0],
            a: [-T::lit(2.0) * c / a0, (T::one() - alpha) / a0],
        }
    }

    pub fn lowpass(fc: T, q: T, fs: T) -> Self {
        Self::rbj(fc, q, fs, false)
    }

    pub fn highpass(fc: T, q: T, fs: T) -> Self {
        Self::rbj(fc, q, fs, true)
    }

    pub fn process(&self, x: &mut [T]) {
        let (mut x1, mut x2, mut y1, mut y2) = (T::zero(), T::zero(), T::zero(), T::zero());
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

/// Q factors of the two sections of a 4th-order Butterworth filter.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

/// Cascade of biquads applied forward then backward (zero phase).
#[derive(Clone, Debug)]
pub struct ZeroPhaseFilter<T> {
    pub sections: Vec<Biquad<T>>,
}

impl<T: Real> ZeroPhaseFilter<T> {
    /// Octave band-pass around `center`: 4th-order Butterworth high-pass at
    /// `center / sqrt 2` cascaded with a 4th-order Butterworth low-pass at
    /// `center * sqrt 2` (the low-pass is dropped when its edge reaches Nyquist).
    pub fn octave_band(center: T, fs: T) -> Self {
        let sqrt2 = T::lit(std::f64::consts::SQRT_2);
        let (lo, hi) = (center / sqrt2, center * sqrt2);
        let mut sections: Vec<_> = BUTTER4_Q.iter().map(|&q| Biquad::highpass(lo, T::lit(q), fs)).collect();
        if hi < fs * T::lit(0.49) {
            sections.extend(BUTTER4_Q.iter().map(|&q| Biquad::lowpass(hi, T::lit(q), fs)));
        }
        ZeroPhaseFilter { sections }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.process(&mut y);
        }
        y.reverse();
        for s in &self.sections {
            s.process(&mut y);
        }
        y.reverse();
        y
    }
}

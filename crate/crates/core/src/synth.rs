//! Sampled RIR synthesis from image sources and the parametric echo model.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{image_arrivals_within, Echo, ImageSource, RoomSpec, Vec3};
use crate::scalar::{cis_neg, sinc, Real};

pub const DEFAULT_SAMPLE_RATE: f64 = 48_000.0;

/// Half-width of the fractional-delay kernel, in samples.
pub const KERNEL_HALF_WIDTH: usize = 40;

/// Where an impulse response came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Estimated { clipped: bool },
    Loaded,
}

/// Sampled room impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir<T = f64> {
    pub samples: Vec<T>,
    pub sample_rate: T,
    pub provenance: Provenance,
}

impl<T: Real> Rir<T> {
    pub fn new(samples: Vec<T>, sample_rate: T, provenance: Provenance) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("RIR must not be empty".into()));
        }
        if !(sample_rate > T::zero()) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::InvalidInput("RIR contains non-finite samples".into()));
        }
        Ok(Rir { samples, sample_rate, provenance })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> T {
        T::from_usize_lossy(self.samples.len()) / self.sample_rate
    }

    pub fn scaled(&self, gain: T) -> Self {
        Rir { samples: self.samples.iter().map(|&v| v * gain).collect(), ..self.clone() }
    }
}

/// Value of the Hann-windowed sinc kernel at offset `t` samples.
pub fn kernel_value<T: Real>(t: T, half_width: usize) -> T {
    let w = T::from_usize_lossy(half_width);
    if t.abs() >= w {
        return T::zero();
    }
    let window = T::lit(0.5) * (T::one() + (T::PI() * t / w).cos());
    sinc(T::PI() * t) * window
}

/// Sample indices touched by a kernel centered at `pos` together with the tap
/// values. Integer positions produce a single unit tap.
pub fn kernel_taps<T: Real>(pos: T, half_width: usize) -> Vec<(i64, T)> {
    let base = pos.floor_index();
    let frac = pos - T::lit(base as f64);
    if frac == T::zero() {
        return vec![(base, T::one())];
    }
    let hw = half_width as i64;
    let w = T::from_usize_lossy(half_width);
    let pi = T::PI();
    // sin(pi (m - frac)) only changes sign from one tap to the next.
    let s0 = -(pi * frac).sin();
    (base - hw + 1..=base + hw)
        .map(|n| {
            let m = n - base;
            let t = T::lit(m as f64) - frac;
            let sign = if m.rem_euclid(2) == 0 { T::one() } else { -T::one() };
            let window = T::lit(0.5) * (T::one() + (pi * t / w).cos());
            (n, sign * s0 / (pi * t) * window)
        })
        .collect()
}

/// Smallest buffer length that holds a kernel centered at `pos`.
pub fn required_length<T: Real>(pos: T, half_width: usize) -> usize {
    (pos.floor_index().max(0) as usize) + half_width + 1
}

/// Adds `amplitude` times a fractional-delay kernel centered at `pos` samples.
pub fn add_kernel<T: Real>(buf: &mut [T], pos: T, amplitude: T, half_width: usize) {
    for (n, v) in kernel_taps(pos, half_width) {
        if n >= 0 && (n as usize) < buf.len() {
            buf[n as usize] += amplitude * v;
        }
    }
}

/// Renders image sources as seen from `mic`. Every image contributes
/// `attenuation / (4 pi d)` times a windowed-sinc kernel at `d / c * fs`.
pub fn synthesize_rir<T: Real>(
    images: &[ImageSource<T>],
    mic: &Vec3<T>,
    sample_rate: T,
    length: usize,
    speed_of_sound: T,
) -> Result<Rir<T>> {
    let four_pi = T::lit(4.0) * T::PI();
    let arrivals: Vec<(T, T)> = images
        .iter()
        .map(|im| {
            let d = (im.position - mic).norm();
            (d / speed_of_sound * sample_rate, im.attenuation / (four_pi * d))
        })
        .collect();
    render(&arrivals, sample_rate, length)
}

/// Renders labeled echoes (`toa`, `amplitude`) into a sampled RIR.
pub fn synthesize_from_echoes<T: Real>(echoes: &[Echo<T>], sample_rate: T, length: usize) -> Result<Rir<T>> {
    let arrivals: Vec<(T, T)> = echoes.iter().map(|e| (e.toa * sample_rate, e.amplitude)).collect();
    render(&arrivals, sample_rate, length)
}

fn render<T: Real>(arrivals: &[(T, T)], sample_rate: T, length: usize) -> Result<Rir<T>> {
    let required = arrivals
        .iter()
        .map(|&(pos, _)| required_length(pos, KERNEL_HALF_WIDTH))
        .max()
        .unwrap_or(1);
    if required > length {
        return Err(Error::Truncation { required, got: length });
    }
    let mut samples = vec![T::zero(); length];
    for &(pos, amp) in arrivals {
        add_kernel(&mut samples, pos, amp, KERNEL_HALF_WIDTH);
    }
    Rir::new(samples, sample_rate, Provenance::Synthetic)
}

/// Full reverberant RIR of `length` samples: every image whose arrival fits
/// in the buffer is rendered, regardless of reflection order.
pub fn synthesize_room_rir<T: Real>(
    room: &RoomSpec<T>,
    source: &Vec3<T>,
    mic: &Vec3<T>,
    sample_rate: T,
    length: usize,
) -> Result<Rir<T>> {
    let last = T::from_usize_lossy(length.saturating_sub(KERNEL_HALF_WIDTH + 1));
    let max_distance = last / sample_rate * room.speed_of_sound;
    let four_pi = T::lit(4.0) * T::PI();
    let arrivals: Vec<(T, T)> = image_arrivals_within(room, source, mic, max_distance)?
        .into_iter()
        .map(|(d, att)| (d / room.speed_of_sound * sample_rate, att / (four_pi * d)))
        .collect();
    render(&arrivals, sample_rate, length)
}

/// Delays and gains of the `R` early arrivals of every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EchoModelParams<T = f64> {
    /// `channels[i]` holds `(tau seconds, alpha)` pairs sorted by delay.
    pub channels: Vec<Vec<(T, T)>>,
}

impl<T: Real> EchoModelParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.is_empty() {
                return Err(Error::InvalidInput(format!("channel {i} has no echoes")));
            }
            if ch.iter().any(|&(tau, _)| tau < T::zero()) {
                return Err(Error::InvalidInput(format!("channel {i} has a negative delay")));
            }
            if ch.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::InvalidInput(format!("channel {i} delays are not sorted")));
            }
        }
        Ok(())
    }
}

/// `H_i(f) = sum_r alpha_ir exp(-j 2 pi f tau_ir)`, indexed `[channel][freq]`.
pub fn echo_model_frequency_response<T: Real>(params: &EchoModelParams<T>, freqs: &[T]) -> Vec<Vec<Complex<T>>> {
    let two_pi = T::lit(2.0) * T::PI();
    params
        .channels
        .iter()
        .map(|ch| {
            freqs
                .iter()
                .map(|&f| {
                    ch.iter()
                        .fold(Complex::new(T::zero(), T::zero()), |acc, &(tau, alpha)| {
                            acc + cis_neg(two_pi * f * tau) * alpha
                        })
                })
                .collect()
        })
        .collect()
}

/// Largest acceptable condition number of the amplitude design matrix.
pub const MAX_AMPLITUDE_CONDITION: f64 = 1e4;

/// Least-squares gains of fractional-delay spikes at `taus` (seconds) that
/// best explain the early part of `rir`.
pub fn estimate_echo_amplitudes<T: Real>(rir: &Rir<T>, taus: &[T]) -> Result<Vec<T>> {
    if taus.is_empty() {
        return Ok(Vec::new());
    }
    let fs = rir.sample_rate;
    let positions: Vec<T> = taus.iter().map(|&t| t * fs).collect();
    let hw = KERNEL_HALF_WIDTH as i64;
    let len = rir.len() as i64;
    for (&p, &t) in positions.iter().zip(taus) {
        if p < T::zero() || p.floor_index() >= len {
            return Err(Error::InvalidInput(format!("delay {:.6} s lies outside the RIR", t.as_f64())));
        }
    }
    let lo = positions.iter().map(|p| p.floor_index() - hw).min().unwrap_or(0).max(0);
    let hi = positions.iter().map(|p| p.floor_index() + hw + 1).max().unwrap_or(0).min(len - 1);
    let rows = (hi - lo + 1) as usize;
    let mut design = DMatrix::<T>::zeros(rows, taus.len());
    for (c, &p) in positions.iter().enumerate() {
        for (n, v) in kernel_taps(p, KERNEL_HALF_WIDTH) {
            if n >= lo && n <= hi {
                design[((n - lo) as usize, c)] += v;
            }
        }
    }
    let target = DVector::from_iterator(rows, (lo..=hi).map(|n| rir.samples[n as usize]));
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > T::zero() { (smax / smin).as_f64() } else { f64::INFINITY };
    if !(cond <= MAX_AMPLITUDE_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let sol = svd
        .solve(&target, T::eps())
        .map_err(|e| Error::Numerical(format!("amplitude least squares: {e}")))?;
    Ok(sol.iter().copied().collect())
}

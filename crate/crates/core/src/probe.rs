//! Exponential sine sweep excitation, regularized deconvolution into RIRs and
//! loop-back based time alignment.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{energy, fft_real, ifft_real, next_pow2, rms, tukey};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synth::{Provenance, Rir};

/// Relative spectral floor of the inverse filter.
pub const DEFAULT_REG_EPS: f64 = 1e-4;
/// Pass band of the raised-cosine mask applied to every estimate, Hz.
pub const DEFAULT_BAND: (f64, f64) = (80.0, 15_000.0);
/// Samples at or above this magnitude count as clipped.
pub const CLIP_LEVEL: f64 = 1.0 - 1e-4;
/// Fraction of clipped samples that sets the clipping flag.
pub const CLIP_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SweepSpec<T = f64> {
    pub f_start: T,
    pub f_stop: T,
    /// Duration of one sweep, seconds.
    pub duration: T,
    /// Raised-cosine fade at each end, seconds.
    pub fade: T,
    pub repetitions: usize,
    /// Silence between repetitions, seconds.
    pub gap: T,
    pub sample_rate: T,
}

impl<T: Real> Default for SweepSpec<T> {
    fn default() -> Self {
        SweepSpec {
            f_start: T::lit(100.0),
            f_stop: T::lit(14_000.0),
            duration: T::lit(10.0),
            fade: T::lit(0.2),
            repetitions: 3,
            gap: T::lit(2.0),
            sample_rate: T::lit(48_000.0),
        }
    }
}

impl<T: Real> SweepSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("sweep spec: {m}")));
        if !(self.sample_rate > T::zero()) {
            return bad("sample rate must be positive");
        }
        if !(self.f_start > T::zero() && self.f_start < self.f_stop) {
            return bad("need 0 < f_start < f_stop");
        }
        if self.f_stop > self.sample_rate * T::lit(0.5) {
            return bad("f_stop exceeds Nyquist");
        }
        if !(self.duration > T::zero()) || !(self.fade >= T::zero()) || self.fade >= self.duration * T::lit(0.5) {
            return bad("need duration > 0 and 0 <= fade < duration / 2");
        }
        if self.repetitions == 0 || !(self.gap >= T::zero()) {
            return bad("need at least one repetition and a non-negative gap");
        }
        Ok(())
    }

    pub fn sweep_samples(&self) -> usize {
        (self.duration * self.sample_rate).round_index() as usize
    }

    pub fn gap_samples(&self) -> usize {
        (self.gap * self.sample_rate).round_index() as usize
    }

    /// Distance between the onsets of successive repetitions, samples.
    pub fn period_samples(&self) -> usize {
        self.sweep_samples() + self.gap_samples()
    }

    pub fn total_samples(&self) -> usize {
        self.repetitions * self.sweep_samples() + (self.repetitions - 1) * self.gap_samples()
    }

    fn rate_constant(&self) -> T {
        self.duration / (self.f_stop / self.f_start).ln()
    }

    /// Sweep phase `K (e^{t/L} - 1)` at time `t` seconds.
    pub fn phase(&self, t: T) -> T {
        let l = self.rate_constant();
        let k = T::lit(2.0) * T::PI() * self.f_start * l;
        k * ((t / l).exp() - T::one())
    }
}

/// One faded sweep.
pub fn single_sweep<T: Real>(spec: &SweepSpec<T>) -> Result<Vec<T>> {
    spec.validate()?;
    let n = spec.sweep_samples();
    let fade = (spec.fade * spec.sample_rate).round_index() as usize;
    let window = tukey::<T>(n, fade);
    Ok((0..n)
        .map(|i| spec.phase(T::from_usize_lossy(i) / spec.sample_rate).sin() * window[i])
        .collect())
}

/// All repetitions separated by silent gaps.
pub fn generate_ess<T: Real>(spec: &SweepSpec<T>) -> Result<Vec<T>> {
    let sweep = single_sweep(spec)?;
    let mut out = Vec::with_capacity(spec.total_samples());
    for r in 0..spec.repetitions {
        if r > 0 {
            out.extend(std::iter::repeat_n(T::zero(), spec.gap_samples()));
        }
        out.extend_from_slice(&sweep);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DeconvOptions<T = f64> {
    pub reg_eps: T,
    /// Raised-cosine pass band in Hz; `None` disables masking.
    pub band: Option<(T, T)>,
    /// Output length in samples.
    pub length: usize,
}

impl<T: Real> DeconvOptions<T> {
    pub fn new(length: usize) -> Self {
        DeconvOptions { reg_eps: T::lit(DEFAULT_REG_EPS), band: Some((T::lit(DEFAULT_BAND.0), T::lit(DEFAULT_BAND.1))), length }
    }
}

/// Raised-cosine band mask: unity on `[lo, hi]`, half-octave cosine skirts.
pub fn band_mask<T: Real>(freq: T, lo: T, hi: T) -> T {
    let sqrt2 = T::lit(std::f64::consts::SQRT_2);
    let skirt = |x: T| T::lit(0.5) * (T::one() - (T::PI() * x).cos());
    if freq >= lo && freq <= hi {
        T::one()
    } else if freq < lo {
        let start = lo / sqrt2;
        if freq <= start {
            T::zero()
        } else {
            skirt((freq - start) / (lo - start))
        }
    } else {
        let stop = hi * sqrt2;
        if freq >= stop {
            T::zero()
        } else {
            skirt((stop - freq) / (stop - hi))
        }
    }
}

/// Precomputed inverse filter of one reference sweep.
pub struct Deconvolver<T> {
    n_fft: usize,
    inverse: Vec<Complex<T>>,
    reference_len: usize,
    sample_rate: T,
}

impl<T: Real> Deconvolver<T> {
    /// `segment_len` is the longest recording segment that will be processed.
    pub fn new(reference: &[T], segment_len: usize, sample_rate: T, opts: &DeconvOptions<T>) -> Result<Self> {
        if reference.iter().all(|v| *v == T::zero()) {
            return Err(Error::ZeroSignal("reference sweep".into()));
        }
        if !(opts.reg_eps > T::zero()) {
            return Err(Error::InvalidInput("reg_eps must be positive".into()));
        }
        let n_fft = next_pow2(segment_len.max(reference.len()) + opts.length);
        let s = fft_real(reference, n_fft);
        let smax = s.iter().fold(T::zero(), |m, c| m.max(c.norm_sqr()));
        let floor = opts.reg_eps * smax;
        let df = sample_rate / T::from_usize_lossy(n_fft);
        let inverse = s
            .iter()
            .enumerate()
            .map(|(k, sk)| {
                let bin = k.min(n_fft - k);
                let mask = match opts.band {
                    Some((lo, hi)) => band_mask(T::from_usize_lossy(bin) * df, lo, hi),
                    None => T::one(),
                };
                sk.conj() * (mask / (sk.norm_sqr() + floor))
            })
            .collect();
        Ok(Deconvolver { n_fft, inverse, reference_len: reference.len(), sample_rate })
    }

    /// Spectrum of the RIR estimate for one recording segment.
    pub fn spectrum(&self, segment: &[T]) -> Result<Vec<Complex<T>>> {
        if segment.len() < self.reference_len {
            return Err(Error::InvalidInput(format!(
                "recording of {} samples is shorter than the {}-sample reference",
                segment.len(),
                self.reference_len
            )));
        }
        if segment.len() > self.n_fft {
            return Err(Error::InvalidInput("segment longer than the FFT grid".into()));
        }
        let x = fft_real(segment, self.n_fft);
        Ok(x.iter().zip(&self.inverse).map(|(a, b)| a * b).collect())
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }
}

fn clipped<T: Real>(x: &[T]) -> bool {
    let level = T::lit(CLIP_LEVEL);
    let count = x.iter().filter(|v| v.abs() >= level).count();
    count as f64 > CLIP_FRACTION * x.len() as f64
}

fn spectrum_to_rir<T: Real>(spectrum: &[Complex<T>], opts: &DeconvOptions<T>, fs: T, clip: bool) -> Result<Rir<T>> {
    let mut h = ifft_real(spectrum);
    h.truncate(opts.length);
    h.resize(opts.length, T::zero());
    Rir::new(h, fs, Provenance::Estimated { clipped: clip })
}

/// Deconvolves a single recording by a single reference sweep.
pub fn estimate_rir<T: Real>(recorded: &[T], reference: &[T], sample_rate: T, opts: &DeconvOptions<T>) -> Result<Rir<T>> {
    let dec = Deconvolver::new(reference, recorded.len(), sample_rate, opts)?;
    let spec = dec.spectrum(recorded)?;
    spectrum_to_rir(&spec, opts, sample_rate, clipped(recorded))
}

/// Deconvolves an aligned recording of `spec.repetitions` sweeps, averaging
/// the per-repetition spectra.
pub fn estimate_rir_averaged<T: Real>(recorded: &[T], spec: &SweepSpec<T>, opts: &DeconvOptions<T>) -> Result<Rir<T>> {
    let reference = single_sweep(spec)?;
    let period = spec.period_samples();
    let seg_len = reference.len() + opts.length;
    let dec = Deconvolver::new(&reference, seg_len, spec.sample_rate, opts)?;
    let mut acc = vec![Complex::new(T::zero(), T::zero()); dec.n_fft];
    for r in 0..spec.repetitions {
        let start = r * period;
        if start + reference.len() > recorded.len() {
            return Err(Error::InvalidInput(format!(
                "recording of {} samples holds fewer than {} repetitions",
                recorded.len(),
                spec.repetitions
            )));
        }
        let end = (start + seg_len).min(recorded.len());
        for (a, v) in acc.iter_mut().zip(dec.spectrum(&recorded[start..end])?) {
            *a += v;
        }
    }
    let scale = T::one() / T::from_usize_lossy(spec.repetitions);
    acc.iter_mut().for_each(|v| *v *= scale);
    spectrum_to_rir(&acc, opts, spec.sample_rate, clipped(recorded))
}

/// Per-channel gains that bring every calibration segment (room tone, or the
/// recordings themselves) to the mean RMS across channels.
pub fn rms_gains<T: Real>(calibration: &[Vec<T>]) -> Result<Vec<T>> {
    if calibration.is_empty() {
        return Err(Error::InvalidInput("no channels to normalize".into()));
    }
    let levels: Vec<T> = calibration.iter().map(|c| rms(c)).collect();
    if let Some(i) = levels.iter().position(|&r| !(r > T::zero())) {
        return Err(Error::ZeroSignal(format!("calibration segment of channel {i}")));
    }
    let target = levels.iter().fold(T::zero(), |s, &r| s + r) / T::from_usize_lossy(levels.len());
    Ok(levels.into_iter().map(|r| target / r).collect())
}

pub fn apply_gains<T: Real>(channels: &mut [Vec<T>], gains: &[T]) -> Result<()> {
    if channels.len() != gains.len() {
        return Err(Error::ShapeMismatch(format!("{} gains for {} channels", gains.len(), channels.len())));
    }
    for (ch, &g) in channels.iter_mut().zip(gains) {
        ch.iter_mut().for_each(|v| *v *= g);
    }
    Ok(())
}

/// Deconvolves every channel of an aligned multichannel recording.
pub fn estimate_rirs<T: Real>(channels: &[Vec<T>], spec: &SweepSpec<T>, opts: &DeconvOptions<T>) -> Result<Vec<Rir<T>>> {
    channels.par_iter().map(|ch| estimate_rir_averaged(ch, spec, opts)).collect()
}

/// Minimum normalized correlation accepted as a loop-back detection.
pub const DEFAULT_ALIGN_THRESHOLD: f64 = 0.5;

/// Locates the reference sweep in the loop-back channel by normalized
/// cross-correlation and drops everything before it from every channel.
/// Returns the aligned channels and the emission onset in samples.
pub fn align_by_loopback<T: Real>(
    channels: &[Vec<T>],
    loopback: usize,
    reference: &[T],
    threshold: T,
) -> Result<(Vec<Vec<T>>, usize)> {
    let lb = channels
        .get(loopback)
        .ok_or_else(|| Error::InvalidInput(format!("loop-back channel {loopback} of {}", channels.len())))?;
    let ref_energy = energy(reference);
    if ref_energy == T::zero() {
        return Err(Error::ZeroSignal("reference sweep".into()));
    }
    if lb.len() < reference.len() {
        return Err(Error::InvalidInput("loop-back channel shorter than the reference".into()));
    }
    let r = crate::dsp::xcorr_nonneg(lb, reference);
    let lags = lb.len() - reference.len() + 1;
    let mut cum = Vec::with_capacity(lb.len() + 1);
    cum.push(T::zero());
    for v in lb {
        let last = *cum.last().unwrap();
        cum.push(last + *v * *v);
    }
    let ref_norm = ref_energy.sqrt();
    let min_local = ref_energy * T::lit(1e-12);
    let mut best = (0usize, T::neg_infinity());
    for k in 0..lags {
        let local = cum[k + reference.len()] - cum[k];
        if local <= min_local {
            continue;
        }
        let rho = r[k] / (ref_norm * local.sqrt());
        if rho > best.1 {
            best = (k, rho);
        }
    }
    if !(best.1 >= threshold) {
        return Err(Error::AlignmentFailure { peak: best.1.as_f64().max(0.0), threshold: threshold.as_f64() });
    }
    let onset = best.0;
    Ok((channels.iter().map(|c| c[onset.min(c.len())..].to_vec()).collect(), onset))
}

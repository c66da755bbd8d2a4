//! STFT analysis and synthesis, steering vectors, relative transfer functions
//! by generalized eigendecomposition, MVDR weights and the SNRR metric.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::descriptors::RatioDb;
use crate::dsp::{energy, hann_periodic};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::{cis_neg, sinc, Real};
use crate::synth::{echo_model_frequency_response, EchoModelParams};

mod scene;

pub use scene::{
    enhance_stfts, estimate_noise_statistics, ArrayGeometry, BeamformScene, DesignScore, Enhanced, Mixture,
};

pub type CVector<T> = DVector<Complex<T>>;
pub type CMatrix<T> = DMatrix<Complex<T>>;

pub const DEFAULT_WINDOW_LEN: usize = 1024;
pub const DEFAULT_HOP: usize = 512;
/// Relative diagonal loading applied to every covariance matrix.
pub const DIAGONAL_LOADING: f64 = 1e-6;
/// Scale-free floor on `h^H Phi^-1 h` below which a bin falls back to the
/// reference microphone.
pub const MVDR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    Hann,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StftSpec<T = f64> {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowShape,
    pub sample_rate: T,
}

impl<T: Real> Default for StftSpec<T> {
    fn default() -> Self {
        StftSpec { window_len: DEFAULT_WINDOW_LEN, hop: DEFAULT_HOP, window: WindowShape::Hann, sample_rate: T::lit(48_000.0) }
    }
}

impl<T: Real> StftSpec<T> {
    pub fn window_samples(&self) -> Vec<T> {
        match self.window {
            WindowShape::Hann => hann_periodic(self.window_len),
            WindowShape::Rectangular => vec![T::one(); self.window_len],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_frequencies(&self) -> Vec<T> {
        let df = self.sample_rate / T::from_usize_lossy(self.window_len);
        (0..self.n_bins()).map(|k| T::from_usize_lossy(k) * df).collect()
    }

    /// Constant value of the shifted-window sum, or an error when the window
    /// and hop do not overlap-add to a constant.
    pub fn cola_gain(&self) -> Result<T> {
        if self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidInput(format!(
                "STFT needs 0 < hop <= window length, got hop {} and length {}",
                self.hop, self.window_len
            )));
        }
        if !(self.sample_rate > T::zero()) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let w = self.window_samples();
        let sums: Vec<T> = (0..self.hop)
            .map(|j| w.iter().skip(j).step_by(self.hop).fold(T::zero(), |s, &v| s + v))
            .collect();
        let first = sums[0];
        let tol = T::lit(1e-9) * first.abs().max(T::one());
        if !(first > T::zero()) || sums.iter().any(|&s| (s - first).abs() > tol) {
            return Err(Error::InvalidInput(format!(
                "window of {} samples with hop {} is not constant overlap-add",
                self.window_len, self.hop
            )));
        }
        Ok(first)
    }

    fn padding(&self) -> usize {
        self.window_len - self.hop
    }

    pub fn n_frames(&self, signal_len: usize) -> usize {
        (signal_len + self.padding()).div_ceil(self.hop).max(1)
    }
}

/// One-sided STFT of a single channel (`bins x frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct Stft<T = f64> {
    pub data: CMatrix<T>,
    pub signal_len: usize,
}

impl<T: Real> Stft<T> {
    pub fn n_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.data.ncols()
    }

    /// Mean of `|X(k, t)|^2` over frames, per bin.
    pub fn mean_power(&self) -> Vec<T> {
        let nf = T::from_usize_lossy(self.n_frames().max(1));
        self.data.row_iter().map(|row| row.iter().fold(T::zero(), |s, c| s + c.norm_sqr()) / nf).collect()
    }
}

fn planners<T: Real>(n: usize) -> (Arc<dyn Fft<T>>, Arc<dyn Fft<T>>) {
    let mut p = FftPlanner::new();
    (p.plan_fft_forward(n), p.plan_fft_inverse(n))
}

pub fn stft<T: Real>(x: &[T], spec: &StftSpec<T>) -> Result<Stft<T>> {
    spec.cola_gain()?;
    let (n, hop, pad) = (spec.window_len, spec.hop, spec.padding());
    let frames = spec.n_frames(x.len());
    let w = spec.window_samples();
    let (fwd, _) = planners::<T>(n);
    let mut data = CMatrix::zeros(spec.n_bins(), frames);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for t in 0..frames {
        for (j, b) in buf.iter_mut().enumerate() {
            let idx = (t * hop + j) as i64 - pad as i64;
            let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { T::zero() };
            *b = Complex::new(v * w[j], T::zero());
        }
        fwd.process(&mut buf);
        for k in 0..spec.n_bins() {
            data[(k, t)] = buf[k];
        }
    }
    Ok(Stft { data, signal_len: x.len() })
}

/// Overlap-add inverse of [`stft`]; exact for unmodified spectra.
pub fn istft<T: Real>(tf: &Stft<T>, spec: &StftSpec<T>) -> Result<Vec<T>> {
    let gain = spec.cola_gain()?;
    let (n, hop, pad) = (spec.window_len, spec.hop, spec.padding());
    if tf.n_bins() != spec.n_bins() {
        return Err(Error::ShapeMismatch(format!("{} bins for a {}-point STFT", tf.n_bins(), n)));
    }
    let (_, inv) = planners::<T>(n);
    let mut out = vec![T::zero(); tf.signal_len];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let scale = T::one() / (T::from_usize_lossy(n) * gain);
    for t in 0..tf.n_frames() {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < spec.n_bins() { tf.data[(k, t)] } else { tf.data[(n - k, t)].conj() };
        }
        buf[0].im = T::zero();
        if n % 2 == 0 {
            buf[n / 2].im = T::zero();
        }
        inv.process(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            let idx = (t * hop + j) as i64 - pad as i64;
            if idx >= 0 && (idx as usize) < out.len() {
                out[idx as usize] += b.re * scale;
            }
        }
    }
    Ok(out)
}

pub fn stft_channels<T: Real>(channels: &[Vec<T>], spec: &StftSpec<T>) -> Result<Vec<Stft<T>>> {
    channels.par_iter().map(|x| stft(x, spec)).collect()
}

/// Direct-path times of arrival, seconds.
pub fn direct_toas<T: Real>(mics: &[Vec3<T>], source: &Vec3<T>, speed_of_sound: T) -> Vec<T> {
    mics.iter().map(|m| (m - source).norm() / speed_of_sound).collect()
}

fn check_reference(reference: usize, channels: usize) -> Result<()> {
    if reference >= channels {
        return Err(Error::InvalidInput(format!("reference channel {reference} of {channels}")));
    }
    Ok(())
}

/// Unit-modulus direct-path steering vectors, one per frequency, with phases
/// relative to the reference channel.
pub fn steering_dp<T: Real>(toas: &[T], freqs: &[T], reference: usize) -> Result<Vec<CVector<T>>> {
    check_reference(reference, toas.len())?;
    let two_pi = T::lit(2.0) * T::PI();
    Ok(freqs
        .iter()
        .map(|&f| CVector::from_iterator(toas.len(), toas.iter().map(|&t| cis_neg(two_pi * f * (t - toas[reference])))))
        .collect())
}

/// Echo-model steering vectors divided by the reference channel's response.
/// Bins where the reference response vanishes keep the raw model.
pub fn steering_rake<T: Real>(params: &EchoModelParams<T>, freqs: &[T], reference: usize) -> Result<Vec<CVector<T>>> {
    params.validate()?;
    let i = params.channels.len();
    check_reference(reference, i)?;
    let resp = echo_model_frequency_response(params, freqs);
    Ok((0..freqs.len())
        .map(|k| {
            let h = CVector::from_iterator(i, resp.iter().map(|ch| ch[k]));
            let href = h[reference];
            let peak = h.iter().fold(T::zero(), |m, c| m.max(c.norm_sqr().sqrt()));
            if href.norm_sqr().sqrt() > T::lit(1e-12) * peak {
                h.map(|c| c / href)
            } else {
                h
            }
        })
        .collect())
}

/// Spherically isotropic coherence `sinc(2 pi f d_ij / c)`.
pub fn diffuse_coherence<T: Real>(mics: &[Vec3<T>], freq: T, speed_of_sound: T) -> DMatrix<T> {
    let n = mics.len();
    let k = T::lit(2.0) * T::PI() * freq / speed_of_sound;
    DMatrix::from_fn(n, n, |a, b| if a == b { T::one() } else { sinc(k * (mics[a] - mics[b]).norm()) })
}

fn to_complex<T: Real>(m: &DMatrix<T>) -> CMatrix<T> {
    m.map(|v| Complex::new(v, T::zero()))
}

fn hermitian_check<T: Real>(m: &CMatrix<T>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.norm().max(T::lit(1e-300));
    let asym = (m - m.adjoint()).norm();
    if asym > T::eps().sqrt() * scale {
        return Err(Error::InvalidInput(format!("{what} is not Hermitian (relative asymmetry {:.3e})", (asym / scale).as_f64())));
    }
    Ok(())
}

fn loaded<T: Real>(m: &CMatrix<T>, rel: T) -> CMatrix<T> {
    let n = m.nrows();
    let tr = (0..n).fold(T::zero(), |s, i| s + m[(i, i)].re) / T::from_usize_lossy(n.max(1));
    let delta = rel * tr.max(T::eps());
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] += Complex::new(delta, T::zero());
    }
    out
}

/// Relative transfer function estimated by generalized eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Retf<T = f64> {
    pub vector: CVector<T>,
    /// Set when the noise covariance needed diagonal loading to factor.
    pub loaded: bool,
}

/// Principal generalized eigenvector of `(noisy, noise)`, mapped back through
/// the noise Cholesky factor and scaled to 1 at the reference channel.
pub fn estimate_retf_gevd<T: Real>(noisy: &CMatrix<T>, noise: &CMatrix<T>, reference: usize) -> Result<Retf<T>> {
    hermitian_check(noisy, "noisy covariance")?;
    hermitian_check(noise, "noise covariance")?;
    if noisy.shape() != noise.shape() {
        return Err(Error::ShapeMismatch("noisy and noise covariances differ in size".into()));
    }
    check_reference(reference, noise.nrows())?;
    let (chol, was_loaded) = match Cholesky::new(noise.clone()) {
        Some(c) => (c, false),
        None => (
            Cholesky::new(loaded(noise, T::lit(DIAGONAL_LOADING)))
                .ok_or_else(|| Error::Numerical("noise covariance is not positive definite after loading".into()))?,
            true,
        ),
    };
    let l = chol.l();
    let y = l
        .solve_lower_triangular(noisy)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let w = l
        .solve_lower_triangular(&y.adjoint())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let w = (&w + w.adjoint()).map(|c| c * T::lit(0.5));
    let eig = SymmetricEigen::new(w);
    let top = eig.eigenvalues.imax();
    let h = &l * eig.eigenvectors.column(top);
    let href = h[reference];
    if !(href.norm_sqr() > T::zero()) {
        return Err(Error::Numerical("generalized eigenvector vanishes at the reference channel".into()));
    }
    Ok(Retf { vector: h.map(|c| c / href), loaded: was_loaded })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvdrWeights<T = f64> {
    pub w: CVector<T>,
    /// Set when the bin fell back to selecting the reference channel.
    pub fallback: bool,
}

/// `w = Phi^-1 h / (h^H Phi^-1 h)`.
pub fn mvdr_weights<T: Real>(h: &CVector<T>, phi: &CMatrix<T>, reference: usize) -> Result<MvdrWeights<T>> {
    if phi.nrows() != h.len() || !phi.is_square() {
        return Err(Error::ShapeMismatch(format!("steering of {} channels, covariance {}x{}", h.len(), phi.nrows(), phi.ncols())));
    }
    check_reference(reference, h.len())?;
    let y = match Cholesky::new(phi.clone()) {
        Some(c) => c.solve(h),
        None => phi
            .clone()
            .lu()
            .solve(h)
            .ok_or_else(|| Error::Numerical("singular noise covariance".into()))?,
    };
    let denom = h.dotc(&y);
    let scale = h.norm_squared() / phi.norm().max(T::lit(1e-300));
    if !(denom.norm_sqr().sqrt() > T::lit(MVDR_FLOOR) * scale) || !denom.re.is_finite_value() {
        let mut w = CVector::zeros(h.len());
        w[reference] = Complex::new(T::one(), T::zero());
        return Ok(MvdrWeights { w, fallback: true });
    }
    let inv = denom.conj().inv();
    Ok(MvdrWeights { w: y.map(|c| c * inv), fallback: false })
}

/// Per-bin sample covariances `mean_t x x^H` with relative diagonal loading.
pub fn sample_covariances<T: Real>(channels: &[Stft<T>]) -> Result<Vec<CMatrix<T>>> {
    let i = channels.len();
    let first = channels.first().ok_or_else(|| Error::InvalidInput("no channels".into()))?;
    let (bins, frames) = (first.n_bins(), first.n_frames());
    if channels.iter().any(|c| c.n_bins() != bins || c.n_frames() != frames) {
        return Err(Error::ShapeMismatch("channels have different STFT shapes".into()));
    }
    let nf = T::from_usize_lossy(frames.max(1));
    Ok((0..bins)
        .into_par_iter()
        .map(|k| {
            let mut r = CMatrix::zeros(i, i);
            for t in 0..frames {
                let x = CVector::from_iterator(i, channels.iter().map(|c| c.data[(k, t)]));
                r += &x * x.adjoint();
            }
            loaded(&r.map(|c| c / nf), T::lit(DIAGONAL_LOADING))
        })
        .collect())
}

/// Per-bin power of the late reverberation at the reference microphone: the
/// band-averaged `|H_tail|^2` of the RIR tail times the source STFT power.
pub fn late_power_estimate<T: Real>(tail: &[T], source_power: &[T], spec: &StftSpec<T>) -> Result<Vec<T>> {
    let bins = spec.n_bins();
    if source_power.len() != bins {
        return Err(Error::ShapeMismatch(format!("{} source powers for {bins} bins", source_power.len())));
    }
    let m = tail.len().div_ceil(spec.window_len).max(1);
    let long = m * spec.window_len;
    let spectrum = crate::dsp::fft_real(tail, long);
    let half = long / 2;
    Ok((0..bins)
        .map(|k| {
            let center = k * m;
            let lo = center.saturating_sub(m / 2);
            let hi = (center + m / 2).min(half);
            let n = T::from_usize_lossy(hi - lo + 1);
            let mean = (lo..=hi).fold(T::zero(), |s, j| s + spectrum[j].norm_sqr()) / n;
            mean * source_power[k]
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Steering {
    Dp,
    Rake,
    Retf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    White,
    Diffuse,
    WhitePlusLate,
    DiffusePlusLate,
}

/// The seven beamformer designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Ds,
    MvdrDp,
    MvdrRetf,
    MvdrRake,
    MvdrDpLate,
    MvdrRetfLate,
    MvdrRakeLate,
}

impl Design {
    pub const ALL: [Design; 7] = [
        Design::Ds,
        Design::MvdrDp,
        Design::MvdrRetf,
        Design::MvdrRake,
        Design::MvdrDpLate,
        Design::MvdrRetfLate,
        Design::MvdrRakeLate,
    ];

    pub fn steering(self) -> Steering {
        match self {
            Design::Ds | Design::MvdrDp | Design::MvdrDpLate => Steering::Dp,
            Design::MvdrRetf | Design::MvdrRetfLate => Steering::Retf,
            Design::MvdrRake | Design::MvdrRakeLate => Steering::Rake,
        }
    }

    pub fn noise_model(self) -> NoiseModel {
        match self {
            Design::Ds => NoiseModel::White,
            Design::MvdrDp | Design::MvdrRetf | Design::MvdrRake => NoiseModel::Diffuse,
            Design::MvdrDpLate => NoiseModel::WhitePlusLate,
            Design::MvdrRetfLate | Design::MvdrRakeLate => NoiseModel::DiffusePlusLate,
        }
    }

    pub fn is_echo_aware(self) -> bool {
        self.steering() == Steering::Rake
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::Ds => "ds",
            Design::MvdrDp => "mvdr-dp",
            Design::MvdrRetf => "mvdr-retf",
            Design::MvdrRake => "mvdr-rake",
            Design::MvdrDpLate => "mvdr-dp-late",
            Design::MvdrRetfLate => "mvdr-retf-late",
            Design::MvdrRakeLate => "mvdr-rake-late",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown beamformer design {s:?}")))
    }
}

/// Second-order statistics shared by every noise model, per STFT bin.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStatistics<T = f64> {
    /// Power of the spatially diffuse noise at the reference microphone.
    pub noise_power: Vec<T>,
    /// Power of the spatially white sensor noise.
    pub sensor_power: Vec<T>,
    /// Late-reverberation power at the reference microphone.
    pub late_power: Vec<T>,
    pub coherence: Vec<DMatrix<T>>,
}

/// The per-bin powers of [`NoiseStatistics`], without the geometry-derived
/// coherence, as stored next to a mixture file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NoisePowers<T = f64> {
    pub noise_power: Vec<T>,
    pub sensor_power: Vec<T>,
    pub late_power: Vec<T>,
}

impl<T: Real> NoisePowers<T> {
    pub fn with_coherence(self, coherence: Vec<DMatrix<T>>) -> Result<NoiseStatistics<T>> {
        let n = coherence.len();
        if [self.noise_power.len(), self.sensor_power.len(), self.late_power.len()].iter().any(|&l| l != n) {
            return Err(Error::ShapeMismatch(format!("noise powers do not cover the {n} bins")));
        }
        Ok(NoiseStatistics { noise_power: self.noise_power, sensor_power: self.sensor_power, late_power: self.late_power, coherence })
    }
}

impl<T: Real> NoiseStatistics<T> {
    pub fn powers(&self) -> NoisePowers<T> {
        NoisePowers {
            noise_power: self.noise_power.clone(),
            sensor_power: self.sensor_power.clone(),
            late_power: self.late_power.clone(),
        }
    }

    pub fn covariance(&self, model: NoiseModel, bin: usize) -> CMatrix<T> {
        let gamma = &self.coherence[bin];
        let n = gamma.nrows();
        let (sd, sw, sl) = (self.noise_power[bin], self.sensor_power[bin], self.late_power[bin]);
        let eye = DMatrix::<T>::identity(n, n);
        let m = match model {
            NoiseModel::White => eye,
            NoiseModel::Diffuse => gamma * sd + eye * sw,
            NoiseModel::WhitePlusLate => eye * (sd + sw) + gamma * sl,
            NoiseModel::DiffusePlusLate => gamma * (sd + sl) + eye * sw,
        };
        loaded(&to_complex(&m), T::lit(DIAGONAL_LOADING))
    }
}

/// Steering information available to the designs; missing entries make the
/// designs that need them fail.
pub struct DesignInputs<'a, T> {
    pub dp: Option<&'a [CVector<T>]>,
    pub rake: Option<&'a [CVector<T>]>,
    pub noisy_cov: Option<&'a [CMatrix<T>]>,
    pub stats: &'a NoiseStatistics<T>,
    pub reference: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignWeights<T = f64> {
    pub weights: Vec<CVector<T>>,
    pub fallback_bins: usize,
    pub loaded_bins: usize,
}

pub fn design_weights<T: Real>(design: Design, inputs: &DesignInputs<'_, T>) -> Result<DesignWeights<T>> {
    let bins = inputs.stats.coherence.len();
    let model = design.noise_model();
    let missing = |what: &str| Error::InvalidInput(format!("{design} needs {what}"));
    let per_bin: Vec<Result<(MvdrWeights<T>, bool)>> = (0..bins)
        .into_par_iter()
        .map(|k| {
            let phi = inputs.stats.covariance(model, k);
            let (h, was_loaded) = match design.steering() {
                Steering::Dp => (inputs.dp.ok_or_else(|| missing("direct-path steering"))?[k].clone(), false),
                Steering::Rake => (inputs.rake.ok_or_else(|| missing("rake steering"))?[k].clone(), false),
                Steering::Retf => {
                    let noisy = &inputs.noisy_cov.ok_or_else(|| missing("noisy covariances"))?[k];
                    let r = estimate_retf_gevd(noisy, &phi, inputs.reference)?;
                    (r.vector, r.loaded)
                }
            };
            Ok((mvdr_weights(&h, &phi, inputs.reference)?, was_loaded))
        })
        .collect();
    let mut out = DesignWeights { weights: Vec::with_capacity(bins), fallback_bins: 0, loaded_bins: 0 };
    for r in per_bin {
        let (w, l) = r?;
        out.fallback_bins += usize::from(w.fallback);
        out.loaded_bins += usize::from(l);
        out.weights.push(w.w);
    }
    Ok(out)
}

/// `Y(k, t) = w_k^H x(k, t)`.
pub fn apply_weights<T: Real>(channels: &[Stft<T>], weights: &[CVector<T>]) -> Result<Stft<T>> {
    let first = channels.first().ok_or_else(|| Error::InvalidInput("no channels".into()))?;
    if weights.len() != first.n_bins() || weights.iter().any(|w| w.len() != channels.len()) {
        return Err(Error::ShapeMismatch("weights do not match the STFT".into()));
    }
    let mut data = CMatrix::zeros(first.n_bins(), first.n_frames());
    for (k, w) in weights.iter().enumerate() {
        for t in 0..first.n_frames() {
            data[(k, t)] = channels.iter().zip(w.iter()).fold(Complex::new(T::zero(), T::zero()), |s, (c, wi)| {
                s + wi.conj() * c.data[(k, t)]
            });
        }
    }
    Ok(Stft { data, signal_len: first.signal_len })
}

/// `10 log10(|target|^2 / |signal - target|^2)` over the common length.
pub fn snrr<T: Real>(signal: &[T], target: &[T]) -> Result<RatioDb<T>> {
    let n = signal.len().min(target.len());
    let num = energy(&target[..n]);
    if num == T::zero() {
        return Err(Error::ZeroSignal("SNRR target".into()));
    }
    let den = signal[..n].iter().zip(&target[..n]).fold(T::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b));
    if den == T::zero() {
        return Ok(RatioDb { db: T::infinity(), infinite: true });
    }
    Ok(RatioDb { db: T::lit(10.0) * (num / den).log10(), infinite: false })
}

/// Output SNRR minus the SNRR of the unprocessed reference channel.
pub fn evaluate_isnrr<T: Real>(enhanced: &[T], input_reference: &[T], target: &[T]) -> Result<RatioDb<T>> {
    let out = snrr(enhanced, target)?;
    let inp = snrr(input_reference, target)?;
    if out.infinite {
        return Ok(out);
    }
    if inp.infinite {
        return Err(Error::InvalidInput("reference channel already equals the target".into()));
    }
    Ok(RatioDb { db: out.db - inp.db, infinite: false })
}

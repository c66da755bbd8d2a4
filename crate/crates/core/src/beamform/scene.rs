use nalgebra::Cholesky;
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    apply_weights, design_weights, diffuse_coherence, direct_toas, evaluate_isnrr, istft, late_power_estimate, loaded,
    sample_covariances, steering_dp, steering_rake, stft, stft_channels, to_complex, CMatrix, CVector, Design,
    DesignInputs, NoiseStatistics, Stft, StftSpec, Steering, DIAGONAL_LOADING,
};
use crate::descriptors::RatioDb;
use crate::dsp::{energy, fft_convolve};
use crate::error::{Error, Result};
use crate::geometry::{predict_echo_annotation, ArrayPose, RoomSpec, SceneLayout, SourcePose, Vec3};
use crate::scalar::Real;
use crate::synth::{synthesize_room_rir, EchoModelParams, KERNEL_HALF_WIDTH};

/// Highest reflection order searched for the strongest rake echoes.
const RAKE_SEARCH_ORDER: usize = 3;

/// One array and one source in a room, with the full RIRs, the exact echo
/// model of the `R` strongest arrivals and the early/late split at the
/// reference microphone.
#[derive(Clone, Debug)]
pub struct BeamformScene<T = f64> {
    pub mics: Vec<Vec3<T>>,
    pub source: Vec3<T>,
    pub rirs: Vec<Vec<T>>,
    pub rake: EchoModelParams<T>,
    /// Samples of the reference RIR that belong to the target.
    pub early_len: usize,
    pub spec: StftSpec<T>,
    pub speed_of_sound: T,
    pub reference: usize,
}

/// A noisy reverberant mixture together with its oracle statistics.
#[derive(Clone, Debug)]
pub struct Mixture<T = f64> {
    pub channels: Vec<Vec<T>>,
    pub target: Vec<T>,
    pub stfts: Vec<Stft<T>>,
    pub stats: NoiseStatistics<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignScore<T = f64> {
    pub design: Design,
    pub isnrr: RatioDb<T>,
    pub fallback_bins: usize,
    pub loaded_bins: usize,
}

fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Complex<T> {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    Complex::new(T::lit(rng.sample(StandardNormal)) * s, T::lit(rng.sample(StandardNormal)) * s)
}

fn gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample(StandardNormal))).collect()
}

impl<T: Real> BeamformScene<T> {
    /// Renders `rir_len`-sample RIRs for every microphone and keeps the
    /// `n_echoes` strongest arrivals (direct path included) seen at the
    /// reference microphone.
    pub fn synthesize(
        room: &RoomSpec<T>,
        array: &ArrayPose<T>,
        source: &Vec3<T>,
        spec: StftSpec<T>,
        rir_len: usize,
        n_echoes: usize,
    ) -> Result<Self> {
        spec.cola_gain()?;
        if n_echoes == 0 {
            return Err(Error::InvalidInput("the rake needs at least one echo".into()));
        }
        let layout = SceneLayout {
            arrays: vec![array.clone()],
            sources: vec![SourcePose { position: *source, label: "S1".into() }],
        };
        let ann = predict_echo_annotation(room, &layout, RAKE_SEARCH_ORDER)?;
        let mics = layout.mic_positions();
        let reference = 0;
        let mut ranked: Vec<_> = ann.get(reference, 0).unwrap_or(&[]).to_vec();
        ranked.sort_by(|a, b| b.amplitude.partial_cmp(&a.amplitude).unwrap_or(std::cmp::Ordering::Equal));
        ranked.truncate(n_echoes);
        let labels: Vec<_> = ranked.iter().map(|e| e.label.clone()).collect();
        let channels = (0..mics.len())
            .map(|i| {
                let echoes = ann.get(i, 0).unwrap_or(&[]);
                let mut ch: Vec<(T, T)> = labels
                    .iter()
                    .filter_map(|l| echoes.iter().find(|e| &e.label == l))
                    .map(|e| (e.toa, e.amplitude))
                    .collect();
                ch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                ch
            })
            .collect();
        let rake = EchoModelParams { channels };
        rake.validate()?;
        let last = rake.channels[reference].last().map(|e| e.0).unwrap_or_else(T::zero);
        let early_len = (last * spec.sample_rate).floor_index() as usize + KERNEL_HALF_WIDTH + 1;
        if early_len >= rir_len {
            return Err(Error::Truncation { required: early_len + 1, got: rir_len });
        }
        let rirs = mics
            .par_iter()
            .map(|m| synthesize_room_rir(room, source, m, spec.sample_rate, rir_len).map(|r| r.samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(BeamformScene { mics, source: *source, rirs, rake, early_len, spec, speed_of_sound: room.speed_of_sound, reference })
    }

    pub fn coherence(&self) -> Vec<nalgebra::DMatrix<T>> {
        self.spec.bin_frequencies().iter().map(|&f| diffuse_coherence(&self.mics, f, self.speed_of_sound)).collect()
    }

    /// Rake parameters with every delay moved by `amount` seconds in a random
    /// direction.
    pub fn jittered_rake<R: Rng + ?Sized>(&self, rng: &mut R, amount: T) -> EchoModelParams<T> {
        let channels = self
            .rake
            .channels
            .iter()
            .map(|ch| {
                let mut ch: Vec<(T, T)> = ch
                    .iter()
                    .map(|&(tau, a)| {
                        let shifted = if rng.random_bool(0.5) { tau + amount } else { tau - amount };
                        (shifted.max(T::zero()), a)
                    })
                    .collect();
                ch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                ch
            })
            .collect();
        EchoModelParams { channels }
    }

    /// White Gaussian source of `n` samples through the room, plus diffuse
    /// noise with the sinc coherence and white sensor noise
    /// `sensor_db` below it, scaled to `snr_db` at the reference microphone.
    pub fn mix<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, snr_db: T, sensor_db: T) -> Result<Mixture<T>> {
        let dry: Vec<T> = gaussian(rng, n);
        let images: Vec<Vec<T>> = self
            .rirs
            .par_iter()
            .map(|h| {
                let mut y = fft_convolve(&dry, h);
                y.truncate(n);
                y
            })
            .collect();
        let mut target = fft_convolve(&dry, &self.rirs[self.reference][..self.early_len]);
        target.truncate(n);

        let diffuse = self.diffuse_noise(rng, n)?;
        let sensor: Vec<Vec<T>> = {
            let p = energy(&diffuse[self.reference]) / T::from_usize_lossy(n);
            let g = (p * T::lit(10.0).powf(sensor_db / T::lit(10.0))).sqrt();
            (0..self.mics.len()).map(|_| gaussian::<T, _>(rng, n).into_iter().map(|v| v * g).collect()).collect()
        };
        let noise_ref: Vec<T> = diffuse[self.reference].iter().zip(&sensor[self.reference]).map(|(a, b)| *a + *b).collect();
        let en = energy(&noise_ref);
        if en == T::zero() {
            return Err(Error::ZeroSignal("noise".into()));
        }
        let gain = (energy(&images[self.reference]) / (en * T::lit(10.0).powf(snr_db / T::lit(10.0)))).sqrt();
        let channels: Vec<Vec<T>> = (0..self.mics.len())
            .map(|i| (0..n).map(|t| images[i][t] + gain * (diffuse[i][t] + sensor[i][t])).collect())
            .collect();

        let scaled = |x: &[T]| x.iter().map(|v| *v * gain).collect::<Vec<T>>();
        let noise_power = stft(&scaled(&diffuse[self.reference]), &self.spec)?.mean_power();
        let sensor_power = stft(&scaled(&sensor[self.reference]), &self.spec)?.mean_power();
        let source_power = stft(&dry, &self.spec)?.mean_power();
        let mut tail = self.rirs[self.reference].clone();
        tail[..self.early_len].iter_mut().for_each(|v| *v = T::zero());
        let late_power = late_power_estimate(&tail, &source_power, &self.spec)?;
        let stfts = stft_channels(&channels, &self.spec)?;
        Ok(Mixture {
            channels,
            target,
            stfts,
            stats: NoiseStatistics { noise_power, sensor_power, late_power, coherence: self.coherence() },
        })
    }

    fn diffuse_noise<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<T>>> {
        let frames = self.spec.n_frames(n);
        let bins = self.spec.n_bins();
        let i = self.mics.len();
        let mut data = vec![CMatrix::<T>::zeros(bins, frames); i];
        for (k, gamma) in self.coherence().iter().enumerate() {
            let g = loaded(&to_complex(gamma), T::lit(DIAGONAL_LOADING));
            let l = Cholesky::new(g)
                .ok_or_else(|| Error::Numerical(format!("diffuse coherence of bin {k} is not positive definite")))?
                .l();
            let real_bin = k == 0 || 2 * k == self.spec.window_len;
            for t in 0..frames {
                let z = CVector::from_fn(i, |_, _| {
                    let c: Complex<T> = complex_normal(rng);
                    if real_bin { Complex::new(c.re * T::lit(std::f64::consts::SQRT_2), T::zero()) } else { c }
                });
                let x = &l * z;
                for (ch, d) in data.iter_mut().enumerate() {
                    d[(k, t)] = if real_bin { Complex::new(x[ch].re, T::zero()) } else { x[ch] };
                }
            }
        }
        data.into_par_iter().map(|d| istft(&Stft { data: d, signal_len: n }, &self.spec)).collect()
    }

    /// Runs every design on `mix` with the given rake parameters and scores
    /// the outputs against the early target.
    pub fn enhance(&self, mix: &Mixture<T>, designs: &[Design], rake: &EchoModelParams<T>) -> Result<Vec<DesignScore<T>>> {
        let array = ArrayGeometry { mics: &self.mics, source: &self.source, speed_of_sound: self.speed_of_sound, reference: self.reference };
        enhance_stfts(&array, &self.spec, &mix.stfts, &mix.stats, designs, rake)?
            .into_iter()
            .map(|e| {
                Ok(DesignScore {
                    design: e.design,
                    isnrr: evaluate_isnrr(&e.output, &mix.channels[self.reference], &mix.target)?,
                    fallback_bins: e.fallback_bins,
                    loaded_bins: e.loaded_bins,
                })
            })
            .collect()
    }
}

/// Where the microphones and the source are, for steering.
#[derive(Clone, Copy, Debug)]
pub struct ArrayGeometry<'a, T> {
    pub mics: &'a [Vec3<T>],
    pub source: &'a Vec3<T>,
    pub speed_of_sound: T,
    pub reference: usize,
}

/// Output of one design.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhanced<T = f64> {
    pub design: Design,
    pub output: Vec<T>,
    pub fallback_bins: usize,
    pub loaded_bins: usize,
}

/// Beamforms multichannel STFTs with each design and returns the time-domain
/// outputs.
pub fn enhance_stfts<T: Real>(
    array: &ArrayGeometry<'_, T>,
    spec: &StftSpec<T>,
    stfts: &[Stft<T>],
    stats: &NoiseStatistics<T>,
    designs: &[Design],
    rake: &EchoModelParams<T>,
) -> Result<Vec<Enhanced<T>>> {
    if stfts.len() != array.mics.len() || stats.coherence.len() != spec.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels and {} statistics bins for {} microphones and {} bins",
            stfts.len(),
            stats.coherence.len(),
            array.mics.len(),
            spec.n_bins()
        )));
    }
    let freqs = spec.bin_frequencies();
    let dp = steering_dp(&direct_toas(array.mics, array.source, array.speed_of_sound), &freqs, array.reference)?;
    let rake_steer = if designs.iter().any(|d| d.steering() == Steering::Rake) {
        Some(steering_rake(rake, &freqs, array.reference)?)
    } else {
        None
    };
    let noisy_cov =
        if designs.iter().any(|d| d.steering() == Steering::Retf) { Some(sample_covariances(stfts)?) } else { None };
    let inputs = DesignInputs {
        dp: Some(&dp),
        rake: rake_steer.as_deref(),
        noisy_cov: noisy_cov.as_deref(),
        stats,
        reference: array.reference,
    };
    designs
        .iter()
        .map(|&design| {
            let w = design_weights(design, &inputs)?;
            let output = istft(&apply_weights(stfts, &w.weights)?, spec)?;
            Ok(Enhanced { design, output, fallback_bins: w.fallback_bins, loaded_bins: w.loaded_bins })
        })
        .collect()
}

/// Noise statistics from the mixture alone: the mean reference power of the
/// quietest `quiet_fraction` of frames, split between diffuse and sensor
/// noise with the sensor part `sensor_db` below the diffuse part. The late
/// reverberation power is left at zero.
pub fn estimate_noise_statistics<T: Real>(
    stfts: &[Stft<T>],
    reference: usize,
    coherence: Vec<nalgebra::DMatrix<T>>,
    quiet_fraction: T,
    sensor_db: T,
) -> Result<NoiseStatistics<T>> {
    let x = &stfts.get(reference).ok_or_else(|| Error::InvalidInput(format!("no reference channel {reference}")))?.data;
    let (bins, frames) = x.shape();
    if frames == 0 || coherence.len() != bins {
        return Err(Error::ShapeMismatch(format!("{frames} frames, {bins} bins and {} coherence matrices", coherence.len())));
    }
    if !(quiet_fraction > T::zero() && quiet_fraction <= T::one()) {
        return Err(Error::InvalidInput(format!("quiet fraction {}", quiet_fraction.as_f64())));
    }
    let mut order: Vec<(T, usize)> = (0..frames).map(|t| (x.column(t).iter().fold(T::zero(), |a, c| a + c.norm_sqr()), t)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let keep = ((quiet_fraction * T::from_usize_lossy(frames)).ceil().floor_index() as usize).clamp(1, frames);
    let quiet: Vec<usize> = order[..keep].iter().map(|&(_, t)| t).collect();
    let ratio = T::lit(10.0).powf(sensor_db / T::lit(10.0));
    let total: Vec<T> =
        (0..bins).map(|k| quiet.iter().fold(T::zero(), |a, &t| a + x[(k, t)].norm_sqr()) / T::from_usize_lossy(keep)).collect();
    Ok(NoiseStatistics {
        noise_power: total.iter().map(|&p| p / (T::one() + ratio)).collect(),
        sensor_power: total.iter().map(|&p| p * ratio / (T::one() + ratio)).collect(),
        late_power: vec![T::zero(); bins],
        coherence,
    })
}

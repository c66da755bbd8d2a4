//! Octave-band Schroeder decay curves, reverberation time, DRR and DER.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::{energy, ZeroPhaseFilter};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synth::Rir;

pub const DEFAULT_BANDS: [f64; 4] = [500.0, 1000.0, 2000.0, 4000.0];
/// Fit span on the decay curve, dB.
pub const FIT_RANGE_DB: (f64, f64) = (-5.0, -15.0);
/// Coefficient of determination required for set A.
pub const LINEARITY_THRESHOLD: f64 = 0.98;
/// Decays with less dynamic range above the noise floor are unreliable.
pub const MIN_DYNAMIC_RANGE_DB: f64 = 20.0;
pub const DEFAULT_HALF_WINDOW: usize = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DecayCurve<T = f64> {
    /// Octave centre in Hz, `None` for the broadband curve.
    pub band_center: Option<T>,
    pub sample_rate: T,
    /// Energy decay in dB, one value per sample up to the truncation knee.
    pub edc_db: Vec<T>,
    pub fit_range: (T, T),
    /// Sample where the integration was truncated.
    pub knee: usize,
    pub reliable: bool,
}

/// Reliability class of a reverberation-time estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecaySet {
    A,
    B,
}

impl std::fmt::Display for DecaySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecaySet::A => "A",
            DecaySet::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Rt60<T = f64> {
    pub seconds: T,
    pub set: DecaySet,
    pub r_squared: T,
}

/// Block-averaged noise floor and the intersection of the decay line with it.
fn lundeby_knee<T: Real>(sq: &[T], fs: T) -> (usize, bool) {
    let n = sq.len();
    let tail_len = (n / 10).max(1);
    let noise = sq[n - tail_len..].iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(tail_len);
    let peak = sq.iter().fold(T::zero(), |m, &v| m.max(v));
    if noise <= peak * T::lit(1e-14) {
        return (n, true);
    }
    let block = ((fs * T::lit(0.01)).round_index().max(1)) as usize;
    let env: Vec<T> = sq
        .chunks(block)
        .map(|c| {
            let m = c.iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(c.len());
            T::lit(10.0) * m.max(noise * T::lit(1e-6)).log10()
        })
        .collect();
    let noise_db = T::lit(10.0) * noise.log10();
    let (peak_block, peak_db) = env
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let reliable = peak_db - noise_db >= T::lit(MIN_DYNAMIC_RANGE_DB);
    let mut knee = n;
    let mut stop_db = noise_db + T::lit(10.0);
    for _ in 0..3 {
        let end = (peak_block..env.len()).find(|&b| env[b] < stop_db).unwrap_or(env.len());
        if end < peak_block + 2 {
            break;
        }
        let pts: Vec<(T, T)> = (peak_block..end).map(|b| (T::from_usize_lossy(b), env[b])).collect();
        let (slope, intercept, _) = linear_fit(&pts);
        if !(slope < T::zero()) {
            break;
        }
        let knee_block = (noise_db - intercept) / slope;
        knee = ((knee_block + T::lit(0.5)) * T::from_usize_lossy(block)).round_index().clamp(1, n as i64) as usize;
        // Refit on the stretch that stays 5 dB above the floor.
        stop_db = noise_db + T::lit(5.0);
    }
    (knee, reliable)
}

/// Least-squares line `y = a x + b`; returns `(a, b, r^2)`.
fn linear_fit<T: Real>(pts: &[(T, T)]) -> (T, T, T) {
    let n = T::from_usize_lossy(pts.len());
    let mx = pts.iter().fold(T::zero(), |a, p| a + p.0) / n;
    let my = pts.iter().fold(T::zero(), |a, p| a + p.1) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy > T::zero() { sxy * sxy / (sxx * syy) } else { T::one() };
    (a, b, r2)
}

/// Backward-integrated energy of `rir` (optionally octave filtered), in dB
/// relative to the total, truncated at the noise-floor knee.
pub fn schroeder_edc<T: Real>(rir: &Rir<T>, band_center: Option<T>) -> Result<DecayCurve<T>> {
    let fs = rir.sample_rate;
    let x = match band_center {
        Some(fc) => {
            if !(fc > T::zero() && fc < fs * T::lit(0.5)) {
                return Err(Error::InvalidInput(format!("band centre {} Hz outside (0, fs/2)", fc.as_f64())));
            }
            ZeroPhaseFilter::octave_band(fc, fs).apply(&rir.samples)
        }
        None => rir.samples.clone(),
    };
    let sq: Vec<T> = x.iter().map(|v| *v * *v).collect();
    if sq.iter().all(|v| *v == T::zero()) {
        return Err(Error::ZeroSignal("RIR band energy is zero".into()));
    }
    let (knee, reliable) = lundeby_knee(&sq, fs);
    let mut edc = vec![T::zero(); knee];
    let mut acc = T::zero();
    for l in (0..knee).rev() {
        acc += sq[l];
        edc[l] = acc;
    }
    let total = edc[0];
    let edc_db = edc
        .iter()
        .map(|&e| if e > T::zero() { T::lit(10.0) * (e / total).log10() } else { T::neg_infinity() })
        .collect();
    Ok(DecayCurve {
        band_center,
        sample_rate: fs,
        edc_db,
        fit_range: (T::lit(FIT_RANGE_DB.0), T::lit(FIT_RANGE_DB.1)),
        knee,
        reliable,
    })
}

/// Straight-line fit over the fit range, extrapolated to 60 dB.
pub fn rt60_from_edc<T: Real>(curve: &DecayCurve<T>) -> Result<Rt60<T>> {
    let (hi, lo) = curve.fit_range;
    let reached = curve.edc_db.iter().fold(T::zero(), |m, &v| m.min(v));
    if !(reached <= lo) {
        return Err(Error::DecayRange { level_db: reached.as_f64() });
    }
    let pts: Vec<(T, T)> = curve
        .edc_db
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= hi && v >= lo)
        .map(|(i, &v)| (T::from_usize_lossy(i) / curve.sample_rate, v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DecayRange { level_db: reached.as_f64() });
    }
    let (slope, _, r2) = linear_fit(&pts);
    if !(slope < T::zero()) {
        return Err(Error::Numerical("non-decaying energy curve".into()));
    }
    let set = if r2 >= T::lit(LINEARITY_THRESHOLD) && curve.reliable { DecaySet::A } else { DecaySet::B };
    Ok(Rt60 { seconds: T::lit(-60.0) / slope, set, r_squared: r2 })
}

/// Energy ratio in dB; `infinite` marks an empty denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RatioDb<T = f64> {
    pub db: T,
    pub infinite: bool,
}

impl<T: Real> RatioDb<T> {
    fn from_energies(num: T, den: T) -> Result<Self> {
        if num == T::zero() {
            return Err(Error::ZeroSignal("direct-path window has no energy".into()));
        }
        if den == T::zero() {
            return Ok(RatioDb { db: T::infinity(), infinite: true });
        }
        Ok(RatioDb { db: T::lit(10.0) * (num / den).log10(), infinite: false })
    }
}

fn direct_window<T: Real>(rir: &Rir<T>, direct_toa: T, half_window: usize) -> Result<(usize, usize)> {
    let idx = (direct_toa * rir.sample_rate).round_index();
    if idx < 0 || idx as usize >= rir.len() {
        return Err(Error::InvalidInput(format!("direct TOA {} s lies outside the RIR", direct_toa.as_f64())));
    }
    let idx = idx as usize;
    Ok((idx.saturating_sub(half_window), (idx + half_window + 1).min(rir.len())))
}

/// Direct-to-reverberant ratio: energy in `±half_window` samples around the
/// direct path over everything after that window.
pub fn drr<T: Real>(rir: &Rir<T>, direct_toa: T, half_window: usize) -> Result<RatioDb<T>> {
    let (lo, hi) = direct_window(rir, direct_toa, half_window)?;
    RatioDb::from_energies(energy(&rir.samples[lo..hi]), energy(&rir.samples[hi..]))
}

/// Direct-to-early ratio: the early set is the union of `±half_window`
/// windows around each echo TOA, minus the direct window.
pub fn der<T: Real>(rir: &Rir<T>, direct_toa: T, echo_toas: &[T], half_window: usize) -> Result<RatioDb<T>> {
    let (lo, hi) = direct_window(rir, direct_toa, half_window)?;
    let mut early = vec![false; rir.len()];
    for &t in echo_toas {
        let idx = (t * rir.sample_rate).round_index();
        let a = (idx - half_window as i64).max(0) as usize;
        let b = ((idx + half_window as i64 + 1).max(0) as usize).min(rir.len());
        for flag in early.iter_mut().take(b).skip(a) {
            *flag = true;
        }
    }
    let e = rir
        .samples
        .iter()
        .enumerate()
        .filter(|(i, _)| early[*i] && !(lo..hi).contains(i))
        .fold(T::zero(), |acc, (_, v)| acc + *v * *v);
    RatioDb::from_energies(energy(&rir.samples[lo..hi]), e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BandRt60<T = f64> {
    /// `None` when the decay never reached the bottom of the fit range.
    pub seconds: Option<T>,
    pub set: DecaySet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DescriptorSet<T = f64> {
    /// Keyed by band centre in whole Hz.
    pub rt60_per_band: BTreeMap<u32, BandRt60<T>>,
    pub drr: RatioDb<T>,
    pub der: RatioDb<T>,
}

pub fn compute_descriptors<T: Real>(
    rir: &Rir<T>,
    direct_toa: T,
    echo_toas: &[T],
    bands: &[T],
    half_window: usize,
) -> Result<DescriptorSet<T>> {
    let mut rt60_per_band = BTreeMap::new();
    for &band in bands {
        let entry = match schroeder_edc(rir, Some(band)).and_then(|c| rt60_from_edc(&c)) {
            Ok(r) => BandRt60 { seconds: Some(r.seconds), set: r.set },
            Err(Error::DecayRange { .. }) | Err(Error::ZeroSignal(_)) => BandRt60 { seconds: None, set: DecaySet::B },
            Err(e) => return Err(e),
        };
        rt60_per_band.insert(band.round_index() as u32, entry);
    }
    Ok(DescriptorSet {
        rt60_per_band,
        drr: drr(rir, direct_toa, half_window)?,
        der: der(rir, direct_toa, echo_toas, half_window)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Provenance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const FS: f64 = 48_000.0;

    fn rir(samples: Vec<f64>) -> Rir<f64> {
        Rir::new(samples, FS, Provenance::Synthetic).unwrap()
    }

    /// Exponential envelope times random-sign noise: the per-sample energy is
    /// exactly exponential, so the decay slope carries no sampling noise.
    fn exp_decay_signs(t60: f64, seconds: f64, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..(seconds * FS) as usize)
            .map(|l| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (-6.9 * l as f64 / (FS * t60)).exp() * sign
            })
            .collect()
    }

    fn exp_decay(t60: f64, seconds: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..(seconds * FS) as usize)
            .map(|l| (-6.9 * l as f64 / (FS * t60)).exp() * normal.sample(&mut rng))
            .collect()
    }

    #[test]
    fn exponential_decay_slope() {
        let curve = schroeder_edc(&rir(exp_decay_signs(0.3, 1.0, 1)), None).unwrap();
        let r = rt60_from_edc(&curve).unwrap();
        // Amplitude e^{-6.9 t / T} decays 60 dB in 6.9 / ln(1000) * T.
        let expected = 0.3 * 6.9 / 1000f64.ln();
        assert!((r.seconds / expected - 1.0).abs() < 0.05, "{}", r.seconds);
        assert_eq!(r.set, DecaySet::A);
    }

    #[test]
    fn octave_band_decays() {
        // A single band-filtered realization scatters by 10-20 %; the mean over
        // independent realizations must land on the envelope's decay rate.
        for t60 in [0.14, 0.3, 0.73] {
            let expected = t60 * 6.9 / 1000f64.ln();
            let runs = 50;
            let mean = (0..runs)
                .map(|seed| {
                    let h = rir(exp_decay(t60, 2.5 * t60 + 0.2, seed));
                    rt60_from_edc(&schroeder_edc(&h, Some(1000.0)).unwrap()).unwrap().seconds
                })
                .sum::<f64>()
                / runs as f64;
            assert!((mean / expected - 1.0).abs() < 0.05, "{t60}: {mean}");
        }
    }

    #[test]
    fn noise_floor_is_cut_at_the_knee() {
        let mut h = exp_decay_signs(0.3, 1.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let floor = Normal::new(0.0, 1e-3).unwrap();
        h.iter_mut().for_each(|v| *v += floor.sample(&mut rng));
        let curve = schroeder_edc(&rir(h), None).unwrap();
        assert!(curve.knee < (1.5 * FS) as usize);
        let r = rt60_from_edc(&curve).unwrap();
        let expected = 0.3 * 6.9 / 1000f64.ln();
        assert!((r.seconds / expected - 1.0).abs() < 0.05, "{}", r.seconds);
    }

    #[test]
    fn impulse_edc_is_a_step() {
        let mut h = vec![0.0; 1000];
        h[100] = 0.7;
        let c = schroeder_edc(&rir(h), None).unwrap();
        assert!(c.edc_db[..=100].iter().all(|&v| v == 0.0));
        assert!(c.edc_db[101..].iter().all(|&v| v == f64::NEG_INFINITY));
        assert!(rt60_from_edc(&c).is_err() || rt60_from_edc(&c).is_ok());
    }

    #[test]
    fn shallow_decay_reports_range_error() {
        let c = DecayCurve {
            band_center: None,
            sample_rate: FS,
            edc_db: (0..1000).map(|l| -10.0 * l as f64 / 1000.0).collect(),
            fit_range: (-5.0, -15.0),
            knee: 1000,
            reliable: true,
        };
        assert!(matches!(rt60_from_edc(&c), Err(Error::DecayRange { .. })));
    }

    #[test]
    fn double_slope_falls_into_set_b() {
        let fast = exp_decay(0.1, 0.6, 3);
        let slow = exp_decay(1.5, 0.6, 4);
        let h: Vec<f64> = fast.iter().zip(&slow).map(|(a, b)| a + 0.06 * b).collect();
        let r = rt60_from_edc(&schroeder_edc(&rir(h), None).unwrap()).unwrap();
        assert_eq!(r.set, DecaySet::B, "r2 = {}", r.r_squared);
    }

    #[test]
    fn drr_examples() {
        let mut h = vec![0.0; 2000];
        h[500] = 1.0;
        assert!(drr(&rir(h.clone()), 500.0 / FS, 120).unwrap().infinite);
        h[1000] = 1.0;
        let r = drr(&rir(h), 500.0 / FS, 120).unwrap();
        assert_eq!(r.db, 0.0);
        assert!(drr(&rir(vec![1.0; 10]), 1.0, 120).is_err());
    }

    #[test]
    fn der_examples() {
        let mut h = vec![0.0; 3000];
        h[500] = 1.0;
        assert!(der(&rir(h.clone()), 500.0 / FS, &[], 120).unwrap().infinite);
        h[900] = 0.5;
        let r = der(&rir(h.clone()), 500.0 / FS, &[900.0 / FS], 120).unwrap();
        assert!((r.db - 6.0206).abs() < 1e-3);
        // An echo inside the direct window contributes to the direct energy.
        h[560] = 0.5;
        let r = der(&rir(h), 500.0 / FS, &[560.0 / FS, 900.0 / FS], 120).unwrap();
        assert!((r.db - 10.0 * (1.25f64 / 0.25).log10()).abs() < 1e-9);
    }

    #[test]
    fn descriptor_set_covers_all_bands() {
        let h = rir(exp_decay(0.3, 1.0, 5));
        let set = compute_descriptors(&h, 0.0, &[0.004], &DEFAULT_BANDS, 120).unwrap();
        assert_eq!(set.rt60_per_band.keys().copied().collect::<Vec<_>>(), vec![500, 1000, 2000, 4000]);
        assert!(set.rt60_per_band.values().all(|b| b.seconds.unwrap() > 0.0));
    }

    proptest! {
        #[test]
        fn ratios_are_scale_invariant(gain in 1e-3f64..1e3, seed in 0u64..100) {
            let h = exp_decay(0.2, 0.3, seed);
            let a = rir(h.clone());
            let b = rir(h.iter().map(|v| v * gain).collect());
            let t = 200.0 / FS;
            let echoes = [900.0 / FS, 1500.0 / FS];
            prop_assert!((drr(&a, t, 120).unwrap().db - drr(&b, t, 120).unwrap().db).abs() < 1e-9);
            prop_assert!((der(&a, t, &echoes, 120).unwrap().db - der(&b, t, &echoes, 120).unwrap().db).abs() < 1e-9);
        }

        #[test]
        fn der_not_below_drr(seed in 0u64..100, e1 in 400usize..3000, e2 in 400usize..3000) {
            let h = rir(exp_decay(0.2, 0.3, seed));
            let t = 200.0 / FS;
            let d = drr(&h, t, 120).unwrap();
            let e = der(&h, t, &[e1 as f64 / FS, e2 as f64 / FS], 120).unwrap();
            prop_assert!(e.db >= d.db);
        }

        #[test]
        fn rt60_invariant_to_scaling_and_padding(gain in 1e-2f64..1e2, pad in 0usize..4800, seed in 0u64..20) {
            let h = exp_decay(0.2, 0.5, seed);
            let base = rt60_from_edc(&schroeder_edc(&rir(h.clone()), None).unwrap()).unwrap().seconds;
            let mut g: Vec<f64> = h.iter().map(|v| v * gain).collect();
            g.extend(vec![0.0; pad]);
            let other = rt60_from_edc(&schroeder_edc(&rir(g), None).unwrap()).unwrap().seconds;
            prop_assert!((base - other).abs() < 1e-9 * base);
        }

        #[test]
        fn edc_is_non_increasing(seed in 0u64..50) {
            let c = schroeder_edc(&rir(exp_decay(0.2, 0.3, seed)), Some(1000.0)).unwrap();
            prop_assert_eq!(c.edc_db[0], 0.0);
            prop_assert!(c.edc_db.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

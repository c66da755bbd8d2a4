//! Echo detection and labeling: skyline matrices, direct-path equalization,
//! peak picking, optimal matching against predicted arrivals and the
//! goodness-of-match score.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::dsp::{fft_real, ifft_real, next_pow2, tukey};
use crate::error::{Error, Result};
use crate::geometry::{Echo, EchoAnnotation, EchoLabel, PairKey};
use crate::scalar::Real;
use crate::synth::Rir;

/// Relative peak threshold used when none is given.
pub const DEFAULT_MIN_HEIGHT: f64 = 0.05;
/// Minimum peak spacing in samples at 48 kHz.
pub const DEFAULT_MIN_DISTANCE: usize = 40;
/// Half-width of the direct-path window, samples.
pub const DIRECT_HALF_WINDOW: usize = 120;
/// Relative spectral floor of the equalization division.
pub const EQUALIZATION_EPS: f64 = 1e-4;

/// Identifies one skyline column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub src: usize,
    pub array: usize,
    pub mic: usize,
}

/// Column-normalized echograms stacked side by side (`L x N`).
#[derive(Clone, Debug, PartialEq)]
pub struct Skyline<T = f64> {
    pub matrix: DMatrix<T>,
    pub mic_order: Vec<ColumnKey>,
}

impl<T: Real> Skyline<T> {
    /// Row of the largest value in column `n`.
    pub fn ridge_row(&self, n: usize) -> usize {
        self.matrix.column(n).iamax()
    }

    /// First local maximum of column `n` reaching `level` (the direct-path
    /// ridge when a later reflection cluster is the global maximum).
    pub fn first_ridge_row(&self, n: usize, level: T) -> Option<usize> {
        let col = self.matrix.column(n);
        let len = col.len();
        (0..len).find(|&l| {
            col[l] >= level && (l == 0 || col[l - 1] <= col[l]) && (l + 1 == len || col[l + 1] <= col[l])
        })
    }
}

/// Stacks `|h_n| / max |h_n|` for the RIRs listed in `ordering`. Shorter RIRs
/// are zero-padded to the longest one.
pub fn build_skyline<T: Real>(rirs: &BTreeMap<ColumnKey, Rir<T>>, ordering: &[ColumnKey]) -> Result<Skyline<T>> {
    let columns: Vec<&Rir<T>> = ordering
        .iter()
        .map(|k| rirs.get(k).ok_or_else(|| Error::InvalidInput(format!("no RIR for column {k:?}"))))
        .collect::<Result<_>>()?;
    let len = columns.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut matrix = DMatrix::zeros(len, columns.len());
    for (n, (rir, key)) in columns.iter().zip(ordering).enumerate() {
        let peak = crate::dsp::max_abs(&rir.samples);
        if peak == T::zero() {
            return Err(Error::ZeroSignal(format!(
                "skyline column {n} (src {}, array {}, mic {})",
                key.src, key.array, key.mic
            )));
        }
        for (l, v) in rir.samples.iter().enumerate() {
            matrix[(l, n)] = v.abs() / peak;
        }
    }
    Ok(Skyline { matrix, mic_order: ordering.to_vec() })
}

/// Deconvolves `rir` by its own direct-path segment `[direct - hw, direct + hw]`
/// using a regularized spectral division. The direct path collapses to a unit
/// impulse at `direct_index`; echoes that share the direct-path waveform become
/// spikes scaled by their gain relative to the direct path.
pub fn equalize_direct_path<T: Real>(rir: &Rir<T>, direct_index: usize, half_window: usize) -> Result<Vec<T>> {
    equalize_direct_path_with(rir, direct_index, half_window, T::lit(EQUALIZATION_EPS))
}

pub fn equalize_direct_path_with<T: Real>(
    rir: &Rir<T>,
    direct_index: usize,
    half_window: usize,
    reg_eps: T,
) -> Result<Vec<T>> {
    let h = &rir.samples;
    if direct_index >= h.len() {
        return Err(Error::InvalidInput(format!("direct index {direct_index} outside RIR of {} samples", h.len())));
    }
    let lo = direct_index.saturating_sub(half_window);
    let hi = (direct_index + half_window).min(h.len() - 1);
    let taper = tukey::<T>(2 * half_window + 1, (half_window / 4).max(1));
    let segment: Vec<(i64, T)> = (lo..=hi)
        .map(|n| {
            let lag = n as i64 - direct_index as i64;
            (lag, h[n] * taper[(lag + half_window as i64) as usize])
        })
        .collect();

    let direct_power = segment.iter().fold(T::zero(), |a, &(_, v)| a + v * v) / T::from_usize_lossy(segment.len());
    let tail_start = h.len() - (h.len() / 10).max(1);
    let floor = crate::dsp::energy(&h[tail_start..]) / T::from_usize_lossy(h.len() - tail_start);
    if !(direct_power > floor) {
        return Err(Error::InvalidInput(format!(
            "direct-path segment power {:.3e} does not exceed the noise floor {:.3e}",
            direct_power.as_f64(),
            floor.as_f64()
        )));
    }

    let n = next_pow2(h.len() + 2 * half_window + 1);
    let mut kernel = vec![T::zero(); n];
    for &(lag, v) in &segment {
        kernel[lag.rem_euclid(n as i64) as usize] = v;
    }
    let k_spec = fft_real(&kernel, n);
    let h_spec = fft_real(h, n);
    let kmax = k_spec.iter().fold(T::zero(), |m, c| m.max(c.norm_sqr()));
    let floor = reg_eps * kmax;
    let eq: Vec<Complex<T>> = h_spec
        .iter()
        .zip(&k_spec)
        .map(|(x, k)| x * k.conj() / (k.norm_sqr() + floor))
        .collect();
    let mut out = ifft_real(&eq);
    out.truncate(h.len());
    Ok(out)
}

/// A detected local maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Peak<T = f64> {
    pub index: usize,
    /// Sub-sample location from a parabola through the three top samples.
    pub position: T,
    pub height: T,
    /// Full width at half height, samples.
    pub width: T,
}

/// Local maxima above `min_height * max(echogram)`, thinned greedily from the
/// tallest down so that no two kept peaks are closer than `min_distance`
/// samples. Equal heights favour the earlier sample. Output is sorted by index.
pub fn find_peaks<T: Real>(echogram: &[T], min_height: T, min_distance: usize) -> Result<Vec<Peak<T>>> {
    if !(min_height > T::zero() && min_height < T::one()) {
        return Err(Error::InvalidInput("min_height must lie in (0, 1)".into()));
    }
    if min_distance < 1 {
        return Err(Error::InvalidInput("min_distance must be at least 1".into()));
    }
    let gmax = echogram.iter().fold(T::zero(), |m, &v| m.max(v));
    if gmax <= T::zero() {
        return Ok(Vec::new());
    }
    let threshold = min_height * gmax;

    // Plateau-aware local maxima: report the first sample of a flat top.
    let mut candidates = Vec::new();
    let n = echogram.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && echogram[j + 1] == echogram[i] {
            j += 1;
        }
        let left_ok = i == 0 || echogram[i - 1] < echogram[i];
        let right_ok = j + 1 == n || echogram[j + 1] < echogram[i];
        if left_ok && right_ok && echogram[i] > threshold {
            candidates.push(i);
        }
        i = j + 1;
    }

    let mut order = candidates.clone();
    order.sort_by(|&a, &b| echogram[b].partial_cmp(&echogram[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        if kept.iter().all(|&k| k.abs_diff(idx) >= min_distance) {
            kept.push(idx);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|idx| describe_peak(echogram, idx)).collect())
}

fn describe_peak<T: Real>(x: &[T], idx: usize) -> Peak<T> {
    let h = x[idx];
    let mut position = T::from_usize_lossy(idx);
    if idx > 0 && idx + 1 < x.len() {
        let (a, b, c) = (x[idx - 1], h, x[idx + 1]);
        let denom = a - T::lit(2.0) * b + c;
        if denom < T::zero() {
            let delta = T::lit(0.5) * (a - c) / denom;
            if delta.abs() <= T::lit(0.5) {
                position += delta;
            }
        }
    }
    let half = h * T::lit(0.5);
    let crossing = |from: usize, step: i64| -> T {
        let mut k = from as i64;
        loop {
            let next = k + step;
            if next < 0 || next as usize >= x.len() {
                return T::lit(k as f64);
            }
            let v = x[next as usize];
            if v <= half {
                let prev = x[k as usize];
                let frac = (prev - half) / (prev - v);
                return T::lit(k as f64) + T::lit(step as f64) * frac;
            }
            k = next;
        }
    };
    let width = crossing(idx, 1) - crossing(idx, -1);
    Peak { index: idx, position, height: h, width }
}

/// Outcome of matching detected peaks to predicted arrivals for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatch<T = f64> {
    /// Predicted labels carrying the observed TOA and peak height.
    pub labeled: Vec<Echo<T>>,
    /// Indices into the peak list.
    pub unmatched_peaks: Vec<usize>,
    /// Indices into the prediction list.
    pub unmatched_predictions: Vec<usize>,
    /// Predicted arrivals closer than the resolution, reported as label pairs.
    pub ambiguous: Vec<(EchoLabel, EchoLabel)>,
}

/// One-to-one assignment between observed `(toa, height)` peaks and predicted
/// echoes. Among assignments with the largest number of pairs within `tol`,
/// the one with the smallest total `|dt|` is returned.
pub fn match_pair<T: Real>(peaks: &[(T, T)], predicted: &[Echo<T>], tol: T, resolution: T) -> Result<PairMatch<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidInput("matching tolerance must be positive".into()));
    }
    let (p, q) = (peaks.len(), predicted.len());
    let n = p + q;
    let tol64 = tol.as_f64();
    let unmatched_cost = tol64 * (n as f64 + 1.0);
    let forbidden = unmatched_cost * 4.0 * (n as f64 + 1.0);
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            cost[i][j] = match (i < p, j < q) {
                (true, true) => {
                    let dt = (peaks[i].0 - predicted[j].toa).abs().as_f64();
                    if dt <= tol64 {
                        dt
                    } else {
                        forbidden
                    }
                }
                (true, false) | (false, true) => unmatched_cost,
                (false, false) => 0.0,
            };
        }
    }
    let assignment = min_cost_assignment(&cost);
    let mut labeled = Vec::new();
    let mut matched_pred = vec![false; q];
    let mut unmatched_peaks = Vec::new();
    for (i, &j) in assignment.iter().enumerate().take(p) {
        if j < q && cost[i][j] <= tol64 {
            matched_pred[j] = true;
            labeled.push(Echo { label: predicted[j].label.clone(), toa: peaks[i].0, amplitude: peaks[i].1 });
        } else {
            unmatched_peaks.push(i);
        }
    }
    labeled.sort_by(|a, b| a.toa.partial_cmp(&b.toa).unwrap_or(std::cmp::Ordering::Equal));
    let unmatched_predictions = (0..q).filter(|&j| !matched_pred[j]).collect();
    let mut ambiguous = Vec::new();
    for a in 0..q {
        for b in a + 1..q {
            if (predicted[a].toa - predicted[b].toa).abs() < resolution {
                ambiguous.push((predicted[a].label.clone(), predicted[b].label.clone()));
            }
        }
    }
    Ok(PairMatch { labeled, unmatched_peaks, unmatched_predictions, ambiguous })
}

/// Peak times and heights for every (mic, source) pair.
pub type PeakTimes<T> = BTreeMap<PairKey, Vec<(T, T)>>;

/// Annotation built from matched peaks plus the per-pair leftovers.
#[derive(Clone, Debug, Default)]
pub struct MatchReport<T = f64> {
    pub annotation: EchoAnnotation<T>,
    pub unmatched_peaks: BTreeMap<PairKey, Vec<(T, T)>>,
    pub unmatched_predictions: BTreeMap<PairKey, Vec<Echo<T>>>,
    pub ambiguous: BTreeMap<PairKey, Vec<(EchoLabel, EchoLabel)>>,
}

/// Runs [`match_pair`] on every pair present in `predicted`.
pub fn match_and_label<T: Real>(
    peaks: &PeakTimes<T>,
    predicted: &EchoAnnotation<T>,
    tol: T,
    resolution: T,
) -> Result<MatchReport<T>> {
    let mut report = MatchReport { annotation: EchoAnnotation::new(), ..Default::default() };
    for (key, pred) in &predicted.entries {
        let empty = Vec::new();
        let obs = peaks.get(key).unwrap_or(&empty);
        let m = match_pair(obs, pred, tol, resolution)?;
        report.annotation.insert(key.mic, key.src, m.labeled);
        if !m.unmatched_peaks.is_empty() {
            report.unmatched_peaks.insert(*key, m.unmatched_peaks.iter().map(|&i| obs[i]).collect());
        }
        if !m.unmatched_predictions.is_empty() {
            report
                .unmatched_predictions
                .insert(*key, m.unmatched_predictions.iter().map(|&j| pred[j].clone()).collect());
        }
        if !m.ambiguous.is_empty() {
            report.ambiguous.insert(*key, m.ambiguous);
        }
    }
    Ok(report)
}

/// Fraction of first-order geometric echoes whose observed counterpart (same
/// label) lies within `tol` seconds.
pub fn goodness_of_match<T: Real>(observed: &EchoAnnotation<T>, geometric: &EchoAnnotation<T>, tol: T) -> Result<T> {
    if observed.entries.keys().ne(geometric.entries.keys()) {
        return Err(Error::InvalidInput("observed and geometric annotations cover different pairs".into()));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for (key, geo) in &geometric.entries {
        for e in geo.iter().filter(|e| e.label.order() == 1) {
            total += 1;
            if let Some(o) = observed.find(key.mic, key.src, &e.label) {
                if (o.toa - e.toa).abs() <= tol {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("annotation has no first-order echoes".into()));
    }
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(total))
}

/// Parameters of the automatic annotation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AnnotateConfig<T = f64> {
    pub min_height: T,
    pub min_distance: usize,
    /// Matching tolerance, seconds.
    pub tol: T,
    pub equalize: bool,
    pub direct_half_window: usize,
    /// Highest reflection order kept from the prediction.
    pub max_order: usize,
}

impl<T: Real> Default for AnnotateConfig<T> {
    fn default() -> Self {
        AnnotateConfig {
            min_height: T::lit(DEFAULT_MIN_HEIGHT),
            min_distance: DEFAULT_MIN_DISTANCE,
            tol: T::lit(0.5e-3),
            equalize: false,
            direct_half_window: DIRECT_HALF_WINDOW,
            max_order: 1,
        }
    }
}

/// Detects peaks in every RIR (optionally after direct-path equalization) and
/// labels them against the prediction.
pub fn annotate_rirs<T: Real>(
    rirs: &BTreeMap<PairKey, Rir<T>>,
    predicted: &EchoAnnotation<T>,
    cfg: &AnnotateConfig<T>,
) -> Result<MatchReport<T>> {
    let predicted = predicted.truncated_to_order(cfg.max_order);
    let keys: Vec<PairKey> = predicted.entries.keys().copied().collect();
    let per_pair: Vec<Result<(PairKey, Vec<(T, T)>, T)>> = keys
        .par_iter()
        .map(|key| {
            let rir = rirs
                .get(key)
                .ok_or_else(|| Error::InvalidInput(format!("no RIR for {key}")))?;
            let fs = rir.sample_rate;
            let echogram: Vec<T> = if cfg.equalize {
                let direct = predicted
                    .direct(key.mic, key.src)
                    .ok_or_else(|| Error::InvalidInput(format!("{key}: prediction lacks a direct path")))?;
                let idx = (direct.toa * fs).round_index().max(0) as usize;
                equalize_direct_path(rir, idx, cfg.direct_half_window)?.iter().map(|v| v.abs()).collect()
            } else {
                rir.samples.iter().map(|v| v.abs()).collect()
            };
            let peaks = find_peaks(&echogram, cfg.min_height, cfg.min_distance)?;
            let times = peaks.iter().map(|p| (p.position / fs, p.height)).collect();
            Ok((*key, times, fs))
        })
        .collect();
    let mut peak_times = PeakTimes::new();
    let mut resolution = T::zero();
    for r in per_pair {
        let (key, times, fs) = r?;
        resolution = T::from_usize_lossy(cfg.min_distance) / fs;
        peak_times.insert(key, times);
    }
    match_and_label(&peak_times, &predicted, cfg.tol, resolution)
}

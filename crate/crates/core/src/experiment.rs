//! Seeded Monte-Carlo runs of every pipeline stage, written as CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_rirs, AnnotateConfig};
use crate::beamform::{BeamformScene, Design, StftSpec};
use crate::calibrate::{mismatch_report, reanchor_horizontal, solve_mds, CalibrationProblem, MdsMode};
use crate::descriptors::{compute_descriptors, DEFAULT_BANDS, DEFAULT_HALF_WINDOW};
use crate::error::{Error, Result};
use crate::geometry::{predict_echo_annotation, EchoAnnotation, Facet, PairKey, RoomSpec, SceneLayout, Vec3};
use crate::io::{fmt_float, write_json, CsvTable};
use crate::rooge::estimate_room;
use crate::scenes::{random_layout, random_separated_pair, reference_layout};
use crate::synth::{synthesize_from_echoes, synthesize_room_rir, Rir};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloCounts {
    pub toa_scenes: usize,
    pub calibration_seeds: usize,
    pub beamforming_scenes: usize,
    pub rooge_seeds: usize,
}

impl Default for MonteCarloCounts {
    fn default() -> Self {
        MonteCarloCounts { toa_scenes: 20, calibration_seeds: 50, beamforming_scenes: 20, rooge_seeds: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub toa_samples: f64,
    /// Minimum spacing between direct and first-order arrivals in random
    /// round-trip scenes, samples.
    pub echo_separation_samples: f64,
    /// Relative peak-height floor of the round-trip detector.
    pub peak_min_height: f64,
    pub gom_ms: f64,
    pub calibration_noise_ms: f64,
    pub rooge_noise_ms: f64,
    pub rake_jitter_ms: f64,
    pub confidence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            toa_samples: 2.0,
            echo_separation_samples: 80.0,
            peak_min_height: 0.005,
            gom_ms: 0.5,
            calibration_noise_ms: 0.05,
            rooge_noise_ms: 0.05,
            rake_jitter_ms: 0.5,
            confidence: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamformSettings {
    pub rir_seconds: f64,
    pub signal_seconds: f64,
    pub n_echoes: usize,
    pub sensor_noise_db: f64,
    pub window_len: usize,
    pub hop: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorSettings {
    pub rir_seconds: f64,
    /// Sources of the reference layout to describe, in order.
    pub sources: usize,
}

impl Default for DescriptorSettings {
    fn default() -> Self {
        DescriptorSettings { rir_seconds: 0.6, sources: 4 }
    }
}

impl Default for BeamformSettings {
    fn default() -> Self {
        BeamformSettings { rir_seconds: 0.5, signal_seconds: 2.0, n_echoes: 4, sensor_noise_db: -10.0, window_len: 1024, hop: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sample_rate: f64,
    pub surface_code: String,
    pub snrs_db: Vec<f64>,
    pub designs: Vec<Design>,
    pub counts: MonteCarloCounts,
    pub tolerances: Tolerances,
    pub beamforming: BeamformSettings,
    pub descriptors: DescriptorSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            sample_rate: 48_000.0,
            surface_code: "011111".into(),
            snrs_db: vec![0.0, 10.0, 20.0],
            designs: Design::ALL.to_vec(),
            counts: MonteCarloCounts::default(),
            tolerances: Tolerances::default(),
            beamforming: BeamformSettings::default(),
            descriptors: DescriptorSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        crate::geometry::parse_surface_code(&self.surface_code)?;
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {}", self.sample_rate)));
        }
        if !(0.0..1.0).contains(&self.tolerances.confidence) {
            return Err(Error::InvalidInput("confidence must lie in [0, 1)".into()));
        }
        if self.snrs_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("SNRs must be finite".into()));
        }
        self.stft_spec().cola_gain()?;
        Ok(())
    }

    pub fn room(&self) -> Result<RoomSpec<f64>> {
        RoomSpec::panels(&self.surface_code)
    }

    pub fn stft_spec(&self) -> StftSpec<f64> {
        StftSpec {
            window_len: self.beamforming.window_len,
            hop: self.beamforming.hop,
            sample_rate: self.sample_rate,
            ..StftSpec::default()
        }
    }
}

/// Adds zero-mean Gaussian noise of `sigma` seconds to every TOA.
pub fn jitter_annotation<R: Rng + ?Sized>(ann: &EchoAnnotation<f64>, sigma: f64, rng: &mut R) -> Result<EchoAnnotation<f64>> {
    let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = EchoAnnotation::new();
    for (k, echoes) in &ann.entries {
        let v = echoes.iter().map(|e| crate::geometry::Echo { toa: e.toa + n.sample(rng), ..e.clone() }).collect();
        out.insert(k.mic, k.src, v);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToaRecord {
    pub scene: usize,
    pub facet: Facet,
    pub true_samples: f64,
    pub found_samples: Option<f64>,
}

impl ToaRecord {
    pub fn error_samples(&self) -> Option<f64> {
        self.found_samples.map(|f| (f - self.true_samples).abs())
    }
}

/// What the round trip renders between prediction and peak picking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundTripRender {
    /// Direct path and first-order images only.
    FirstOrder,
    /// Every image of the room within the RIR length.
    FullRoom,
}

/// Random source/microphone pairs: synthesize, detect peaks, match against
/// the first-order prediction.
pub fn toa_round_trip<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ExperimentConfig,
    render: RoundTripRender,
    min_height: f64,
) -> Result<Vec<ToaRecord>> {
    let room = cfg.room()?;
    let fs = cfg.sample_rate;
    let len = (0.05 * fs) as usize;
    let annotate = AnnotateConfig { min_height, ..AnnotateConfig::default() };
    let mut out = Vec::new();
    for scene in 0..cfg.counts.toa_scenes {
        let (src, mic) = random_separated_pair(rng, &room, 0.3, cfg.tolerances.echo_separation_samples / fs, 100_000)?;
        let layout = SceneLayout {
            arrays: vec![crate::geometry::ArrayPose { barycenter: mic, azimuth_tilt: 0.0, local_offsets: vec![0.0] }],
            sources: vec![crate::geometry::SourcePose { position: src, label: "S1".into() }],
        };
        let predicted = predict_echo_annotation(&room, &layout, 1)?;
        let echoes = predicted.get(0, 0).unwrap_or(&[]);
        let rir = match render {
            RoundTripRender::FirstOrder => synthesize_from_echoes(echoes, fs, len)?,
            RoundTripRender::FullRoom => synthesize_room_rir(&room, &src, &mic, fs, len)?,
        };
        let rirs = BTreeMap::from([(PairKey::new(0, 0), rir)]);
        let report = annotate_rirs(&rirs, &predicted, &annotate)?;
        for e in echoes {
            let Some(facet) = e.label.single_facet() else { continue };
            let found = report.annotation.first_order(0, 0, facet).map(|o| o.toa * fs);
            out.push(ToaRecord { scene, facet, true_samples: e.toa * fs, found_samples: found });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRecord {
    pub trial: usize,
    pub mean_geometric_cm: f64,
    pub max_geometric_cm: f64,
    pub gom: f64,
    pub cost: f64,
}

/// dcMDS on the reference layout with Gaussian TOA noise, started from the
/// true layout and re-anchored to it before scoring.
pub fn calibration_trials<R: Rng + ?Sized>(rng: &mut R, cfg: &ExperimentConfig) -> Result<Vec<CalibrationRecord>> {
    let room = cfg.room()?;
    let truth = reference_layout::<f64>();
    let clean = predict_echo_annotation(&room, &truth, 1)?;
    let gom_tol = cfg.tolerances.gom_ms * 1e-3;
    (0..cfg.counts.calibration_seeds)
        .map(|trial| {
            let observed = jitter_annotation(&clean, cfg.tolerances.calibration_noise_ms * 1e-3, rng)?;
            let problem = CalibrationProblem::from_annotation(&observed, truth.n_mics(), truth.n_sources(), &room);
            let res = solve_mds(&problem, &truth, MdsMode::Dcmds)?;
            let layout = reanchor_horizontal(&res.layout, &truth);
            let r = mismatch_report(&layout, &room, &observed, Some(&truth))?;
            let gom = r
                .gom
                .iter()
                .find(|(t, _)| (t - gom_tol).abs() < 1e-12)
                .map(|g| g.1)
                .map_or_else(|| gom_at(&layout, &room, &observed, gom_tol), Ok)?;
            Ok(CalibrationRecord {
                trial,
                mean_geometric_cm: r.geometric.mean,
                max_geometric_cm: r.geometric.max,
                gom,
                cost: res.cost,
            })
        })
        .collect()
}

fn gom_at(layout: &SceneLayout<f64>, room: &RoomSpec<f64>, observed: &EchoAnnotation<f64>, tol: f64) -> Result<f64> {
    let geo = predict_echo_annotation(room, layout, 1)?;
    crate::annotate::goodness_of_match(observed, &geo, tol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    pub mic: usize,
    pub source: usize,
    pub rt60_s: BTreeMap<u32, Option<f64>>,
    pub drr_db: f64,
    pub der_db: f64,
}

/// Descriptors of the first microphone of every array for every source of
/// the reference layout.
pub fn descriptor_table(cfg: &ExperimentConfig) -> Result<Vec<DescriptorRecord>> {
    let room = cfg.room()?;
    let layout = reference_layout::<f64>();
    let fs = cfg.sample_rate;
    let predicted = predict_echo_annotation(&room, &layout, 1)?;
    let mics = layout.mic_positions();
    let len = (fs * cfg.descriptors.rir_seconds) as usize;
    let mut out = Vec::new();
    for (j, s) in layout.sources.iter().enumerate().take(cfg.descriptors.sources) {
        for &i in &layout.first_mic_indices() {
            let rir = synthesize_room_rir(&room, &s.position, &mics[i], fs, len)?;
            let echoes = predicted.get(i, j).unwrap_or(&[]);
            let direct = echoes.first().ok_or_else(|| Error::InvalidInput("missing direct path".into()))?.toa;
            let early: Vec<f64> = echoes.iter().skip(1).map(|e| e.toa).collect();
            let d = compute_descriptors(&rir, direct, &early, &DEFAULT_BANDS, DEFAULT_HALF_WINDOW)?;
            out.push(DescriptorRecord {
                mic: i,
                source: j,
                rt60_s: d.rt60_per_band.iter().map(|(b, r)| (*b, r.seconds)).collect(),
                drr_db: d.drr.db,
                der_db: d.der.db,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformRecord {
    pub scene: usize,
    pub snr_db: f64,
    pub design: Design,
    pub jittered: bool,
    pub isnrr_db: f64,
}

/// Random single-array scenes; each mixture is enhanced with exact rake
/// delays and again with jittered ones.
pub fn beamforming_trials<R: Rng + ?Sized>(rng: &mut R, cfg: &ExperimentConfig) -> Result<Vec<BeamformRecord>> {
    let room = cfg.room()?;
    let bf = &cfg.beamforming;
    let rir_len = (bf.rir_seconds * cfg.sample_rate) as usize;
    let n = (bf.signal_seconds * cfg.sample_rate) as usize;
    let rake_designs: Vec<Design> = cfg.designs.iter().copied().filter(|d| d.is_echo_aware()).collect();
    let mut out = Vec::new();
    for scene in 0..cfg.counts.beamforming_scenes {
        let layout = random_layout(rng, &room, 1, 1, 0.5)?;
        let s = BeamformScene::synthesize(&room, &layout.arrays[0], &layout.sources[0].position, cfg.stft_spec(), rir_len, bf.n_echoes)?;
        for &snr in &cfg.snrs_db {
            let mix = s.mix(rng, n, snr, bf.sensor_noise_db)?;
            for d in s.enhance(&mix, &cfg.designs, &s.rake)? {
                out.push(BeamformRecord { scene, snr_db: snr, design: d.design, jittered: false, isnrr_db: d.isnrr.db });
            }
            if !rake_designs.is_empty() {
                let jittered = s.jittered_rake(rng, cfg.tolerances.rake_jitter_ms * 1e-3);
                for d in s.enhance(&mix, &rake_designs, &jittered)? {
                    out.push(BeamformRecord { scene, snr_db: snr, design: d.design, jittered: true, isnrr_db: d.isnrr.db });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoogeRecord {
    pub trial: usize,
    pub facet: Facet,
    pub de_cm: f64,
    pub ae_deg: f64,
}

/// Wall planes of the reference scene from first-order TOAs with Gaussian
/// noise, all four sources averaged.
pub fn rooge_trials<R: Rng + ?Sized>(rng: &mut R, cfg: &ExperimentConfig) -> Result<Vec<RoogeRecord>> {
    let room = cfg.room()?;
    let truth = reference_layout::<f64>();
    let clean = predict_echo_annotation(&room, &truth, 1)?;
    let sources: Vec<usize> = (0..truth.n_sources()).collect();
    let mut out = Vec::new();
    for trial in 0..cfg.counts.rooge_seeds {
        let noisy = jitter_annotation(&clean, cfg.tolerances.rooge_noise_ms * 1e-3, rng)?;
        let est = estimate_room(&noisy, &truth, &sources, &room)?;
        for (facet, s) in &est.score.per_facet {
            out.push(RoogeRecord { trial, facet: *facet, de_cm: s.de_cm, ae_deg: s.ae_deg });
        }
    }
    Ok(out)
}

/// One pass of the whole chain on the reference scene: synthesize, annotate
/// against a perturbed prior, calibrate, then estimate the walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub matched_fraction: f64,
    pub mean_geometric_cm: f64,
    pub gom: f64,
    pub mean_de_cm: f64,
    pub mean_ae_deg: f64,
}

pub fn full_pipeline<R: Rng + ?Sized>(rng: &mut R, cfg: &ExperimentConfig) -> Result<PipelineSummary> {
    let room = cfg.room()?;
    let fs = cfg.sample_rate;
    let truth = reference_layout::<f64>();
    let mut prior = truth.clone();
    for a in &mut prior.arrays {
        a.barycenter += Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        a.azimuth_tilt += rng.random_range(-0.03..0.03);
    }
    for s in &mut prior.sources {
        s.position += Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    }
    let mics = truth.mic_positions();
    let len = (0.05 * fs) as usize;
    let mut rirs: BTreeMap<PairKey, Rir<f64>> = BTreeMap::new();
    for (j, s) in truth.sources.iter().enumerate() {
        for (i, m) in mics.iter().enumerate() {
            rirs.insert(PairKey::new(i, j), synthesize_room_rir(&room, &s.position, m, fs, len)?);
        }
    }
    let predicted = predict_echo_annotation(&room, &prior, 1)?;
    let report = annotate_rirs(&rirs, &predicted, &AnnotateConfig::default())?;
    let total: usize = predicted.entries.values().map(Vec::len).sum();
    let matched: usize = report.annotation.entries.values().map(Vec::len).sum();
    let problem = CalibrationProblem::from_annotation(&report.annotation, truth.n_mics(), truth.n_sources(), &room);
    let res = solve_mds(&problem, &prior, MdsMode::Dcmds)?;
    let layout = reanchor_horizontal(&res.layout, &truth);
    let mm = mismatch_report(&layout, &room, &report.annotation, Some(&truth))?;
    let est = estimate_room(&report.annotation, &layout, &(0..truth.n_sources()).collect::<Vec<_>>(), &room)?;
    Ok(PipelineSummary {
        matched_fraction: matched as f64 / total.max(1) as f64,
        mean_geometric_cm: mm.geometric.mean,
        gom: mm.gom.first().map_or(0.0, |g| g.1),
        mean_de_cm: est.score.mean_de_cm,
        mean_ae_deg: est.score.mean_ae_deg,
    })
}

/// Paths of the tables written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutputs {
    pub tables: Vec<PathBuf>,
}

fn f(v: f64) -> String {
    fmt_float(v)
}

/// Runs every stage in a fixed order from one generator seeded with
/// `cfg.seed` and writes one CSV per stage plus `summary.csv` to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentOutputs> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tables = Vec::new();
    let mut summary = CsvTable::new(["stage", "metric", "value", "unit"]);
    let mut save = |name: &str, t: &CsvTable| -> Result<()> {
        let p = out_dir.join(name);
        t.write(&p)?;
        tables.push(p);
        Ok(())
    };

    let toa = toa_round_trip(&mut rng, cfg, RoundTripRender::FirstOrder, cfg.tolerances.peak_min_height)?;
    let mut t = CsvTable::new(["scene", "facet", "true_toa_samples", "found_toa_samples", "abs_error_samples"]);
    for r in &toa {
        let (found, err) = match r.found_samples {
            Some(v) => (f(v), f((v - r.true_samples).abs())),
            None => (String::new(), String::new()),
        };
        t.push(vec![r.scene.to_string(), r.facet.to_string(), f(r.true_samples), found, err])?;
    }
    save("toa_round_trip.csv", &t)?;
    let within = toa.iter().filter(|r| r.error_samples().is_some_and(|e| e <= cfg.tolerances.toa_samples)).count();
    summary.push(vec!["toa".into(), "recovered_fraction".into(), f(within as f64 / toa.len().max(1) as f64), "ratio".into()])?;

    let cal = calibration_trials(&mut rng, cfg)?;
    let mut t = CsvTable::new(["trial", "mean_geometric_cm", "max_geometric_cm", "gom_ratio", "cost_m2"]);
    for r in &cal {
        t.push(vec![r.trial.to_string(), f(r.mean_geometric_cm), f(r.max_geometric_cm), f(r.gom), format!("{:.6e}", r.cost)])?;
    }
    save("calibration.csv", &t)?;
    let n = cal.len().max(1) as f64;
    summary.push(vec!["calibration".into(), "mean_geometric".into(), f(cal.iter().map(|r| r.mean_geometric_cm).sum::<f64>() / n), "cm".into()])?;
    summary.push(vec!["calibration".into(), "mean_gom".into(), f(cal.iter().map(|r| r.gom).sum::<f64>() / n), "ratio".into()])?;

    let desc = descriptor_table(cfg)?;
    let mut headers = vec!["mic".to_string(), "source".to_string()];
    headers.extend(DEFAULT_BANDS.iter().map(|b| format!("rt60_{}hz_s", *b as u32)));
    headers.extend(["drr_db".to_string(), "der_db".to_string()]);
    let mut t = CsvTable::new(headers);
    for r in &desc {
        let mut row = vec![r.mic.to_string(), r.source.to_string()];
        row.extend(r.rt60_s.values().map(|v| v.map(f).unwrap_or_default()));
        row.extend([f(r.drr_db), f(r.der_db)]);
        t.push(row)?;
    }
    save("descriptors.csv", &t)?;

    let bf = beamforming_trials(&mut rng, cfg)?;
    let mut t = CsvTable::new(["scene", "snr_db", "design", "rake_toas", "isnrr_db"]);
    for r in &bf {
        let kind = if r.jittered { "jittered" } else { "exact" };
        t.push(vec![r.scene.to_string(), f(r.snr_db), r.design.to_string(), kind.into(), f(r.isnrr_db)])?;
    }
    save("beamforming.csv", &t)?;
    for &snr in &cfg.snrs_db {
        for &d in &cfg.designs {
            let v: Vec<f64> = bf.iter().filter(|r| r.snr_db == snr && r.design == d && !r.jittered).map(|r| r.isnrr_db).collect();
            if !v.is_empty() {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                summary.push(vec!["beamforming".into(), format!("mean_isnrr_{d}_snr{snr}"), f(m), "dB".into()])?;
            }
        }
    }

    let rg = rooge_trials(&mut rng, cfg)?;
    let mut t = CsvTable::new(["trial", "facet", "de_cm", "ae_deg"]);
    for r in &rg {
        t.push(vec![r.trial.to_string(), r.facet.to_string(), f(r.de_cm), f(r.ae_deg)])?;
    }
    save("rooge.csv", &t)?;
    let n = rg.len().max(1) as f64;
    summary.push(vec!["rooge".into(), "mean_de".into(), f(rg.iter().map(|r| r.de_cm).sum::<f64>() / n), "cm".into()])?;
    summary.push(vec!["rooge".into(), "mean_ae".into(), f(rg.iter().map(|r| r.ae_deg).sum::<f64>() / n), "deg".into()])?;

    let p = full_pipeline(&mut rng, cfg)?;
    for (metric, value, unit) in [
        ("matched_fraction", p.matched_fraction, "ratio"),
        ("mean_geometric", p.mean_geometric_cm, "cm"),
        ("gom", p.gom, "ratio"),
        ("mean_de", p.mean_de_cm, "cm"),
        ("mean_ae", p.mean_ae_deg, "deg"),
    ] {
        summary.push(vec!["pipeline".into(), metric.into(), f(value), unit.into()])?;
    }
    save("summary.csv", &summary)?;
    write_json(out_dir.join("config.json"), cfg)?;
    Ok(ExperimentOutputs { tables })
}

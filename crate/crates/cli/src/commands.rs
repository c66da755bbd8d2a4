use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use echoaware::annotate::{annotate_rirs, build_skyline, goodness_of_match, AnnotateConfig, ColumnKey};
use echoaware::beamform::{
    diffuse_coherence, enhance_stfts, estimate_noise_statistics, evaluate_isnrr, stft_channels, ArrayGeometry,
    BeamformScene, Design, NoisePowers, NoiseStatistics, StftSpec,
};
use echoaware::calibrate::{mismatch_report, solve_mds, CalibrationProblem, MdsMode, MismatchReport};
use echoaware::descriptors::{compute_descriptors, DEFAULT_HALF_WINDOW};
use echoaware::experiment::{run_experiment, ExperimentConfig};
use echoaware::geometry::{predict_echo_annotation, EchoAnnotation, PairKey, RoomSpec, Vec3};
use echoaware::io::{
    export_skyline_csv, export_skyline_png, fmt_float, load_bundle, read_json, read_wav, write_bundle, write_json,
    write_wav, CsvTable, RirStorage, RirTensor, Scene, Session, MANIFEST_FILE,
};
use echoaware::probe::{
    align_by_loopback, apply_gains, estimate_rir, estimate_rirs, generate_ess, rms_gains, DeconvOptions, SweepSpec,
    DEFAULT_ALIGN_THRESHOLD,
};
use echoaware::rooge::estimate_room;
use echoaware::scenes::reference_layout;
use echoaware::synth::{synthesize_room_rir, EchoModelParams, Rir};
use echoaware::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{
    AnnotateArgs, AnnotateCommand, BeamformArgs, CalibrateArgs, Cli, Command, DescriptorsArgs, ExperimentArgs,
    ProbeCommand, ProbeEstimateArgs, ProbeGenArgs, RoogeArgs, SimulateArgs, Storage,
};

const DEFAULT_FS: f64 = 48_000.0;

struct Globals {
    seed: Option<u64>,
    fs: Option<f64>,
    out_dir: PathBuf,
}

impl Globals {
    fn fs(&self) -> Result<f64> {
        let fs = self.fs.unwrap_or(DEFAULT_FS);
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidInput(format!("sample rate {fs}")));
        }
        Ok(fs)
    }

    /// Rejects an explicit `--fs` that disagrees with the data.
    fn check_fs(&self, data_fs: f64) -> Result<()> {
        match self.fs {
            Some(fs) if (fs - data_fs).abs() > 1e-9 => {
                Err(Error::InvalidInput(format!("--fs {fs} does not match the data rate {data_fs}")))
            }
            _ => Ok(()),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// An output path relative to the output directory, with its parent created.
    fn resolve(&self, path: &Path) -> Result<PathBuf> {
        let full = if path.is_absolute() { path.to_path_buf() } else { self.out_dir.join(path) };
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", parent.display())))?;
        }
        Ok(full)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(0))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals { seed: cli.seed, fs: cli.fs, out_dir: cli.out_dir };
    std::fs::create_dir_all(&g.out_dir)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", g.out_dir.display())))?;
    match cli.command {
        Command::Simulate(a) => simulate(&g, a),
        Command::Probe(ProbeCommand::Gen(a)) => probe_gen(&g, a),
        Command::Probe(ProbeCommand::Estimate(a)) => probe_estimate(&g, a),
        Command::Annotate(AnnotateCommand::Run(a)) => annotate(&g, a),
        Command::Calibrate(a) => calibrate(&g, a),
        Command::Descriptors(a) => descriptors(&g, a),
        Command::Beamform(a) => beamform(&g, a),
        Command::Rooge(a) => rooge(&g, a),
        Command::Experiment(a) => experiment(&g, a),
    }
}

/// Geometry of `base` with the panel reflectivities of `code`.
fn configured_room(base: &RoomSpec, code: &str) -> Result<RoomSpec> {
    RoomSpec::new(base.dims, RoomSpec::<f64>::panels(code)?.reflectivity, base.speed_of_sound)
}

fn read_scene(path: &Path) -> Result<Scene> {
    let scene: Scene = read_json(path)?;
    scene.validate()?;
    Ok(scene)
}

fn read_annotation(path: &Path) -> Result<EchoAnnotation> {
    let ann: EchoAnnotation = read_json(path)?;
    ann.validate()?;
    Ok(ann)
}

/// Converts a 1-based number from the command line to an index.
fn numbered(n: usize, what: &str, count: usize) -> Result<usize> {
    if n == 0 || n > count {
        return Err(Error::InvalidInput(format!("{what} {n} outside 1..={count}")));
    }
    Ok(n - 1)
}

fn manifest_path(rirs: &Path) -> PathBuf {
    if rirs.is_dir() {
        rirs.join(MANIFEST_FILE)
    } else {
        rirs.to_path_buf()
    }
}

fn load_session(g: &Globals, rirs: &Path) -> Result<Session> {
    let session: Session = load_bundle(manifest_path(rirs))?;
    g.check_fs(session.rirs.sample_rate)?;
    Ok(session)
}

fn pair_rirs(session: &Session, config: usize) -> Result<BTreeMap<PairKey, Rir>> {
    let [_, n_mics, n_sources, _] = session.rirs.shape;
    let mut out = BTreeMap::new();
    for j in 0..n_sources {
        for i in 0..n_mics {
            out.insert(PairKey::new(i, j), session.rir(i, j, config)?);
        }
    }
    Ok(out)
}

fn simulate(g: &Globals, a: SimulateArgs) -> Result<()> {
    let fs = g.fs()?;
    if a.surface_codes.is_empty() {
        return Err(Error::InvalidInput("no surface code given".into()));
    }
    if a.rir_seconds.is_nan() || a.rir_seconds <= 0.0 {
        return Err(Error::InvalidInput(format!("RIR length {} s", a.rir_seconds)));
    }
    let base = match &a.scene {
        Some(p) => read_scene(p)?,
        None => Scene::new(&a.surface_codes[0], RoomSpec::panels(&a.surface_codes[0])?, reference_layout())?,
    };
    let rooms = a.surface_codes.iter().map(|c| configured_room(&base.room, c)).collect::<Result<Vec<_>>>()?;
    let scene = Scene::new(&a.surface_codes[0], rooms[0].clone(), base.layout)?;
    let layout = &scene.layout;
    let len = (a.rir_seconds * fs).round() as usize;
    let mics = layout.mic_positions();
    let mut tensor = RirTensor::zeros([len, mics.len(), layout.n_sources(), rooms.len()], fs);
    for (d, room) in rooms.iter().enumerate() {
        for (j, s) in layout.sources.iter().enumerate() {
            for (i, m) in mics.iter().enumerate() {
                let rir = synthesize_room_rir(room, &s.position, m, fs, len)?;
                tensor.set_rir(i, j, d, &rir.samples)?;
            }
        }
    }
    let annotation = predict_echo_annotation(&rooms[0], layout, a.max_order)?;
    let session = Session { surface_codes: a.surface_codes.clone(), scene, rirs: tensor, annotation: Some(annotation) };
    let storage = match a.storage {
        Storage::Tensor => RirStorage::Tensor,
        Storage::Wav => RirStorage::WavDirectory,
    };
    let manifest = write_bundle(&g.out_dir, &session, storage)?;
    println!("{}", manifest.display());
    if let Some(snr) = a.mix_snr {
        simulate_mixture(g, &session.scene, &a, snr, len)?;
    }
    Ok(())
}

fn simulate_mixture(g: &Globals, scene: &Scene, a: &SimulateArgs, snr: f64, rir_len: usize) -> Result<()> {
    let layout = &scene.layout;
    let array = &layout.arrays[numbered(a.array, "array", layout.arrays.len())?];
    let source = layout.sources[numbered(a.source, "source", layout.n_sources())?].position;
    if !(snr.is_finite() && a.signal_seconds > 0.0 && a.sensor_db.is_finite()) {
        return Err(Error::InvalidInput("mixture SNR, sensor level and duration must be finite, duration positive".into()));
    }
    let fs = g.fs()?;
    let spec = StftSpec { sample_rate: fs, ..StftSpec::default() };
    let bs = BeamformScene::synthesize(&scene.room, array, &source, spec, rir_len, 4)?;
    let n = (a.signal_seconds * fs).round() as usize;
    let mix = bs.mix(&mut g.rng(), n, snr, a.sensor_db)?;
    write_wav(g.out("mix.wav"), &mix.channels, fs)?;
    write_wav(g.out("target.wav"), std::slice::from_ref(&mix.target), fs)?;
    write_json(g.out("mix_stats.json"), &mix.stats.powers())?;
    println!("{}", g.out("mix.wav").display());
    Ok(())
}

fn probe_gen(g: &Globals, a: ProbeGenArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let spec: SweepSpec = read_json(p)?;
            g.check_fs(spec.sample_rate)?;
            spec
        }
        None => SweepSpec {
            f_start: a.f_start,
            f_stop: a.f_stop,
            duration: a.duration,
            fade: a.fade,
            repetitions: a.repetitions,
            gap: a.gap,
            sample_rate: g.fs()?,
        },
    };
    let signal = generate_ess(&spec)?;
    let out = g.resolve(&a.output)?;
    write_wav(&out, &[signal], spec.sample_rate)?;
    write_json(out.with_extension("json"), &spec)?;
    println!("{} samples, {} repetitions", spec.total_samples(), spec.repetitions);
    Ok(())
}

fn probe_estimate(g: &Globals, a: ProbeEstimateArgs) -> Result<()> {
    let (mut channels, rate) = read_wav::<f64>(&a.rec)?;
    g.check_fs(rate)?;
    let (reference, ref_rate) = read_wav::<f64>(&a.reference)?;
    if reference.len() != 1 {
        return Err(Error::InvalidInput(format!("reference sweep has {} channels, expected one", reference.len())));
    }
    if (rate - ref_rate).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("recording at {rate} Hz, reference at {ref_rate} Hz")));
    }
    let reference = &reference[0];
    if let Some(cal) = &a.calibration {
        let (cal, _) = read_wav::<f64>(cal)?;
        apply_gains(&mut channels, &rms_gains(&cal)?)?;
    }
    if let Some(lb) = a.loopback {
        let (aligned, onset) = align_by_loopback(&channels, lb, reference, DEFAULT_ALIGN_THRESHOLD)?;
        println!("loop-back onset at sample {onset}");
        channels = aligned.into_iter().enumerate().filter(|(c, _)| *c != lb).map(|(_, ch)| ch).collect();
        if channels.is_empty() {
            return Err(Error::InvalidInput("the recording holds only the loop-back channel".into()));
        }
    }
    let opts = DeconvOptions::new(a.length);
    let rirs = match &a.spec {
        Some(p) => {
            let spec: SweepSpec = read_json(p)?;
            spec.validate()?;
            if (spec.sample_rate - rate).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("recording at {rate} Hz, sweep at {} Hz", spec.sample_rate)));
            }
            estimate_rirs(&channels, &spec, &opts)?
        }
        None => channels.iter().map(|c| estimate_rir(c, reference, rate, &opts)).collect::<Result<Vec<_>>>()?,
    };
    let samples: Vec<Vec<f64>> = rirs.into_iter().map(|r| r.samples).collect();
    write_wav(g.resolve(&a.output)?, &samples, rate)?;
    println!("{} channels of {} samples", samples.len(), a.length);
    Ok(())
}

fn annotate(g: &Globals, a: AnnotateArgs) -> Result<()> {
    let session = load_session(g, &a.rirs)?;
    let scene = match &a.scene {
        Some(p) => read_scene(p)?,
        None => session.scene.clone(),
    };
    let [_, n_mics, n_sources, _] = session.rirs.shape;
    if scene.layout.n_mics() != n_mics || scene.layout.n_sources() != n_sources {
        return Err(Error::ShapeMismatch(format!(
            "scene has {} mics x {} sources, bundle {n_mics} x {n_sources}",
            scene.layout.n_mics(),
            scene.layout.n_sources()
        )));
    }
    let code = a.surface_code.as_deref().unwrap_or(&scene.surface_code);
    let config = session
        .config_index(code)
        .ok_or_else(|| Error::InvalidInput(format!("bundle has no room configuration {code}")))?;
    let room = configured_room(&scene.room, code)?;
    let layout = &scene.layout;
    let predicted = predict_echo_annotation(&room, layout, a.max_order)?;
    let cfg = AnnotateConfig {
        min_height: a.min_height,
        min_distance: a.min_distance,
        tol: a.tol_ms * 1e-3,
        equalize: a.equalize,
        max_order: a.max_order,
        ..AnnotateConfig::default()
    };
    let rirs = pair_rirs(&session, config)?;
    let report = annotate_rirs(&rirs, &predicted, &cfg)?;
    let out = g.resolve(&a.output)?;
    write_json(&out, &report.annotation)?;

    let mut t = CsvTable::new(["mic", "src", "label", "toa_s", "amplitude"]);
    for (k, echoes) in &report.annotation.entries {
        for e in echoes {
            t.push(vec![k.mic.to_string(), k.src.to_string(), e.label.to_string(), fmt_float(e.toa), fmt_float(e.amplitude)])?;
        }
    }
    t.write(out.with_extension("csv"))?;

    let index = layout.mic_index_map();
    let mut columns = BTreeMap::new();
    let mut order = Vec::new();
    for (k, rir) in rirs {
        let (array, mic) = index[k.mic];
        let key = ColumnKey { src: k.src, array, mic };
        columns.insert(key, rir);
        order.push(key);
    }
    order.sort();
    let skyline = build_skyline(&columns, &order)?;
    let dir = out.parent().unwrap_or_else(|| Path::new("."));
    export_skyline_png(dir.join("skyline.png"), &skyline)?;
    export_skyline_csv(dir.join("skyline.csv"), &skyline)?;

    let predicted_n: usize = predicted.entries.values().map(Vec::len).sum();
    let matched_n: usize = report.annotation.entries.values().map(Vec::len).sum();
    println!("matched {matched_n} of {predicted_n} predicted echoes");
    if let Ok(gom) = goodness_of_match(&report.annotation, &predicted, cfg.tol) {
        println!("GoM {}", fmt_float(gom));
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    mode: String,
    cost_m2: f64,
    iterations: usize,
    converged: bool,
    mismatch: MismatchReport,
}

fn calibrate(g: &Globals, a: CalibrateArgs) -> Result<()> {
    let ann = read_annotation(&a.annotation)?;
    let init = read_scene(&a.scene)?;
    let mode: MdsMode = a.mode.parse()?;
    let layout = &init.layout;
    let problem = CalibrationProblem::from_annotation(&ann, layout.n_mics(), layout.n_sources(), &init.room);
    let res = solve_mds(&problem, layout, mode)?;
    let mismatch = mismatch_report(&res.layout, &init.room, &ann, Some(layout))?;
    let refined = Scene { surface_code: init.surface_code.clone(), room: init.room.clone(), layout: res.layout.clone() };
    write_json(g.resolve(&a.output)?, &refined)?;
    println!("cost {:.6e} m^2 after {} iterations (converged: {})", res.cost, res.iterations, res.converged);
    println!("mean displacement {} cm", fmt_float(mismatch.geometric.mean));
    for (thr, gom) in &mismatch.gom {
        println!("GoM({} ms) {}", fmt_float(thr * 1e3), fmt_float(*gom));
    }
    let report =
        CalibrationReport { mode: a.mode.to_ascii_lowercase(), cost_m2: res.cost, iterations: res.iterations, converged: res.converged, mismatch };
    write_json(g.resolve(&a.report)?, &report)
}

fn descriptors(g: &Globals, a: DescriptorsArgs) -> Result<()> {
    let session = load_session(g, &a.rirs)?;
    let ann = match (&a.annotation, &session.annotation) {
        (Some(p), _) => read_annotation(p)?,
        (None, Some(ann)) => ann.clone(),
        (None, None) => predict_echo_annotation(&session.scene.room, &session.scene.layout, 1)?,
    };
    let mut t = CsvTable::new(["mic", "src", "room_code", "band_hz", "rt60_s", "set", "drr_db", "der_db"]);
    for (d, code) in session.surface_codes.iter().enumerate() {
        for (k, rir) in pair_rirs(&session, d)? {
            let Some(direct) = ann.direct(k.mic, k.src) else { continue };
            let echoes: Vec<f64> =
                ann.get(k.mic, k.src).unwrap_or(&[]).iter().filter(|e| e.label.order() > 0).map(|e| e.toa).collect();
            let set = compute_descriptors(&rir, direct.toa, &echoes, &a.bands, DEFAULT_HALF_WINDOW)?;
            for (band, r) in &set.rt60_per_band {
                t.push(vec![
                    k.mic.to_string(),
                    k.src.to_string(),
                    code.clone(),
                    band.to_string(),
                    r.seconds.map(fmt_float).unwrap_or_default(),
                    r.set.to_string(),
                    fmt_float(set.drr.db),
                    fmt_float(set.der.db),
                ])?;
            }
        }
    }
    t.write(g.resolve(&a.output)?)?;
    println!("{} rows", t.rows.len());
    Ok(())
}

/// Rake delays for the microphones of one array: the `n` strongest labels at
/// the array's first microphone, looked up at every microphone.
fn rake_from_annotation(ann: &EchoAnnotation, mics: &[usize], source: usize, n: usize) -> Result<EchoModelParams> {
    let first = ann
        .get(mics[0], source)
        .ok_or_else(|| Error::InvalidInput(format!("annotation lacks mic {} source {source}", mics[0])))?;
    let mut ranked = first.to_vec();
    ranked.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    ranked.truncate(n);
    let channels = mics
        .iter()
        .map(|&m| {
            let echoes = ann.get(m, source).unwrap_or(&[]);
            let mut ch = ranked
                .iter()
                .map(|r| {
                    echoes
                        .iter()
                        .find(|e| e.label == r.label)
                        .map(|e| (e.toa, e.amplitude))
                        .ok_or_else(|| Error::InvalidInput(format!("echo {} missing at mic {m}", r.label)))
                })
                .collect::<Result<Vec<_>>>()?;
            ch.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(ch)
        })
        .collect::<Result<Vec<_>>>()?;
    let rake = EchoModelParams { channels };
    rake.validate()?;
    Ok(rake)
}

#[derive(Serialize)]
struct DesignMetrics {
    design: String,
    output: PathBuf,
    isnrr_db: Option<f64>,
    fallback_bins: usize,
    loaded_bins: usize,
}

#[derive(Serialize)]
struct BeamformMetrics {
    sample_rate: f64,
    array: usize,
    source: usize,
    statistics: &'static str,
    designs: Vec<DesignMetrics>,
}

fn design_output(base: &Path, design: Design, several: bool) -> PathBuf {
    if !several {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "wav".into());
    base.with_file_name(format!("{stem}_{design}.{ext}"))
}

fn beamform(g: &Globals, a: BeamformArgs) -> Result<()> {
    let designs = a.designs.iter().map(|d| d.parse()).collect::<Result<Vec<Design>>>()?;
    if designs.is_empty() {
        return Err(Error::InvalidInput("no design given".into()));
    }
    let scene = read_scene(&a.scene)?;
    let layout = &scene.layout;
    let array = numbered(a.array, "array", layout.arrays.len())?;
    let source = numbered(a.source, "source", layout.n_sources())?;
    let mic_ids: Vec<usize> =
        layout.mic_index_map().iter().enumerate().filter(|(_, (arr, _))| *arr == array).map(|(i, _)| i).collect();
    let all = layout.mic_positions();
    let mics: Vec<Vec3<f64>> = mic_ids.iter().map(|&i| all[i]).collect();

    let (channels, rate) = read_wav::<f64>(&a.mix)?;
    g.check_fs(rate)?;
    if channels.len() != mics.len() {
        return Err(Error::ShapeMismatch(format!("mixture has {} channels, array {} has {} microphones", channels.len(), a.array, mics.len())));
    }
    let spec = StftSpec { sample_rate: rate, ..StftSpec::default() };
    let stfts = stft_channels(&channels, &spec)?;
    let c = scene.room.speed_of_sound;
    let coherence = spec.bin_frequencies().iter().map(|&f| diffuse_coherence(&mics, f, c)).collect();
    let (stats, statistics): (NoiseStatistics, _) = match &a.stats {
        Some(p) => (read_json::<NoisePowers>(p)?.with_coherence(coherence)?, "file"),
        None => (estimate_noise_statistics(&stfts, 0, coherence, a.quiet_fraction, a.sensor_db)?, "estimated"),
    };
    let ann = match &a.annotation {
        Some(p) => read_annotation(p)?,
        None => predict_echo_annotation(&scene.room, layout, 1)?,
    };
    let rake = rake_from_annotation(&ann, &mic_ids, source, a.n_echoes)?;
    let target = match &a.target {
        Some(p) => {
            let (mut t, r) = read_wav::<f64>(p)?;
            if t.len() != 1 || (r - rate).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("target must be mono at {rate} Hz")));
            }
            Some(t.remove(0))
        }
        None => None,
    };
    let position = layout.sources[source].position;
    let geometry = ArrayGeometry { mics: &mics, source: &position, speed_of_sound: c, reference: 0 };
    let base = g.resolve(&a.output)?;
    let mut metrics = BeamformMetrics { sample_rate: rate, array: a.array, source: a.source, statistics, designs: Vec::new() };
    for e in enhance_stfts(&geometry, &spec, &stfts, &stats, &designs, &rake)? {
        let path = design_output(&base, e.design, designs.len() > 1);
        write_wav(&path, std::slice::from_ref(&e.output), rate)?;
        let isnrr_db = target.as_ref().map(|t| evaluate_isnrr(&e.output, &channels[0], t).map(|r| r.db)).transpose()?;
        match isnrr_db {
            Some(v) => println!("{:<16} iSNRR {} dB", e.design.to_string(), fmt_float(v)),
            None => println!("{:<16} {}", e.design.to_string(), path.display()),
        }
        metrics.designs.push(DesignMetrics {
            design: e.design.to_string(),
            output: path,
            isnrr_db,
            fallback_bins: e.fallback_bins,
            loaded_bins: e.loaded_bins,
        });
    }
    write_json(g.resolve(&a.metrics)?, &metrics)
}

fn rooge(g: &Globals, a: RoogeArgs) -> Result<()> {
    let ann = read_annotation(&a.annotation)?;
    let scene = read_scene(&a.scene)?;
    let n = scene.layout.n_sources();
    let sources: Vec<usize> = if a.sources.is_empty() {
        (0..n).collect()
    } else {
        a.sources.iter().map(|&s| numbered(s, "source", n)).collect::<Result<_>>()?
    };
    let est = estimate_room(&ann, &scene.layout, &sources, &scene.room)?;
    write_json(g.resolve(&a.output)?, &est)?;
    let mut t = CsvTable::new(["facet", "de_cm", "ae_deg"]);
    for (f, s) in &est.score.per_facet {
        t.push(vec![f.to_string(), fmt_float(s.de_cm), fmt_float(s.ae_deg)])?;
    }
    for f in &est.score.missing {
        t.push(vec![f.to_string(), String::new(), String::new()])?;
    }
    t.write(g.resolve(&a.score)?)?;
    println!("mean DE {} cm, mean AE {} deg", fmt_float(est.score.mean_de_cm), fmt_float(est.score.mean_ae_deg));
    if !est.score.missing.is_empty() {
        let names: Vec<String> = est.score.missing.iter().map(|f| f.to_string()).collect();
        println!("missing facets: {}", names.join(", "));
    }
    Ok(())
}

fn experiment(g: &Globals, a: ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(fs) = g.fs {
        cfg.sample_rate = fs;
    }
    let out = run_experiment(&cfg, &g.out_dir)?;
    for p in out.tables {
        println!("{}", p.display());
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "echoaware", version, about = "Echo-aware room acoustics toolkit")]
struct Cli {
    /// Seed of the single random generator used by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample rate in Hz.
    #[arg(long, global = true)]
    fs: Option<f64>,
    /// Directory receiving outputs; relative output paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render image-source RIRs for a scene and write a session bundle.
    Simulate(SimulateArgs),
    /// Sweep generation and RIR estimation.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Peak picking and echo labeling.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Refine microphone and source positions from annotated TOAs.
    Calibrate(CalibrateArgs),
    /// RT60 per octave band, DRR and DER of every RIR in a bundle.
    Descriptors(DescriptorsArgs),
    /// Enhance a multichannel mixture with echo-aware beamformers.
    Beamform(BeamformArgs),
    /// Estimate wall planes from first-order echoes.
    Rooge(RoogeArgs),
    /// Seeded Monte-Carlo run of the whole pipeline.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scene JSON. The built-in reference scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Room configurations to render, one six-digit surface code each.
    #[arg(long = "surface-code", value_delimiter = ',', default_value = "011111")]
    surface_codes: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    rir_seconds: f64,
    #[arg(long, value_enum, default_value_t = Storage::Tensor)]
    storage: Storage,
    /// Highest reflection order written to the ground-truth annotation.
    #[arg(long, default_value_t = 1)]
    max_order: usize,
    /// Also write mix.wav, target.wav and mix_stats.json: a white source
    /// in diffuse noise at this SNR, dB, recorded by one array.
    #[arg(long, allow_hyphen_values = true)]
    mix_snr: Option<f64>,
    /// Array recording the mixture, numbered from 1.
    #[arg(long, default_value_t = 1)]
    array: usize,
    /// Source of the mixture, numbered from 1.
    #[arg(long, default_value_t = 1)]
    source: usize,
    #[arg(long, default_value_t = 2.0)]
    signal_seconds: f64,
    /// Sensor noise level relative to the diffuse noise, dB.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    sensor_db: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Storage {
    Tensor,
    Wav,
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    /// Write an exponential sine sweep.
    Gen(ProbeGenArgs),
    /// Deconvolve a multichannel recording of the sweep.
    Estimate(ProbeEstimateArgs),
}

#[derive(Args, Debug)]
struct ProbeGenArgs {
    /// Sweep specification JSON; built from the flags below when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output WAV. The specification is written next to it as JSON.
    #[arg(short, long, default_value = "sweep.wav")]
    output: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    f_start: f64,
    #[arg(long, default_value_t = 14_000.0)]
    f_stop: f64,
    /// Seconds per sweep.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.2)]
    fade: f64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Silence between sweeps, seconds.
    #[arg(long, default_value_t = 2.0)]
    gap: f64,
}

#[derive(Args, Debug)]
struct ProbeEstimateArgs {
    /// Multichannel recording.
    #[arg(long)]
    rec: PathBuf,
    /// The emitted sweep signal.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Recording channel carrying the loop-back, counted from 0. The
    /// recording is aligned on it and it is left out of the output.
    #[arg(long)]
    loopback: Option<usize>,
    /// Sweep specification; enables averaging over its repetitions.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(short, long, default_value = "rir.wav")]
    output: PathBuf,
    /// RIR length, samples.
    #[arg(long, default_value_t = 24_000)]
    length: usize,
    /// Equalize channel levels with this calibration recording first.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum AnnotateCommand {
    /// Label the RIRs of a bundle against the geometric prediction.
    Run(AnnotateArgs),
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    /// Bundle directory or its manifest.
    #[arg(long)]
    rirs: PathBuf,
    /// Scene JSON used for the prediction; the bundle's scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Matching tolerance, ms.
    #[arg(long, default_value_t = 0.5)]
    tol_ms: f64,
    /// Output JSON. The CSV table and the skyline CSV and PNG go next to it.
    #[arg(short, long, default_value = "annotation.json")]
    output: PathBuf,
    /// Room configuration to annotate; the scene's surface code when absent.
    #[arg(long)]
    surface_code: Option<String>,
    #[arg(long, default_value_t = echoaware::annotate::DEFAULT_MIN_HEIGHT)]
    min_height: f64,
    #[arg(long, default_value_t = echoaware::annotate::DEFAULT_MIN_DISTANCE)]
    min_distance: usize,
    #[arg(long)]
    equalize: bool,
    #[arg(long, default_value_t = 1)]
    max_order: usize,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    annotation: PathBuf,
    /// Initial scene; its room supplies the ceiling height and speed of sound.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "dcmds")]
    mode: String,
    /// Refined scene JSON.
    #[arg(short, long, default_value = "refined.json")]
    output: PathBuf,
    /// Cost, convergence and mismatch against the initial scene, JSON.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct DescriptorsArgs {
    /// Bundle directory or its manifest.
    #[arg(long)]
    rirs: PathBuf,
    /// Annotation JSON; the bundle's annotation, else the geometric
    /// prediction, when absent.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(short, long, default_value = "descriptors.csv")]
    output: PathBuf,
    /// Octave band centres, Hz.
    #[arg(long, value_delimiter = ',', default_values_t = echoaware::descriptors::DEFAULT_BANDS)]
    bands: Vec<f64>,
}

#[derive(Args, Debug)]
struct BeamformArgs {
    /// Mixture WAV, one channel per microphone of the array.
    #[arg(long)]
    mix: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Annotation JSON providing the rake delays; the first-order geometric
    /// prediction when absent.
    #[arg(long)]
    annotation: Option<PathBuf>,
    /// One design or a comma list.
    #[arg(long = "design", value_delimiter = ',', default_value = "mvdr-rake-late")]
    designs: Vec<String>,
    /// Enhanced WAV. With several designs the design name is appended to the
    /// file stem.
    #[arg(short, long, default_value = "enhanced.wav")]
    output: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    metrics: PathBuf,
    /// Noise powers written by `simulate --mix-snr`; estimated from the
    /// quietest frames of the mixture when absent.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Early target signal; enables the iSNRR metric.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Recording array, numbered from 1.
    #[arg(long, default_value_t = 1)]
    array: usize,
    /// Target source, numbered from 1.
    #[arg(long, default_value_t = 1)]
    source: usize,
    #[arg(long, default_value_t = 4)]
    n_echoes: usize,
    /// Share of frames treated as noise-only when estimating statistics.
    #[arg(long, default_value_t = 0.1)]
    quiet_fraction: f64,
    /// Sensor noise level relative to the diffuse noise, dB, when
    /// estimating statistics.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    sensor_db: f64,
}

#[derive(Args, Debug)]
struct RoogeArgs {
    #[arg(long)]
    annotation: PathBuf,
    /// Scene with the (refined) layout; its room is the reference for scoring.
    #[arg(long)]
    scene: PathBuf,
    /// Sources to use, numbered from 1; all when absent.
    #[arg(long, value_delimiter = ',')]
    sources: Vec<usize>,
    /// Estimated planes, JSON.
    #[arg(short, long, default_value = "planes.json")]
    output: PathBuf,
    /// Per-facet distance and angle errors, CSV.
    #[arg(long, default_value = "score.csv")]
    score: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment configuration JSON; defaults for every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

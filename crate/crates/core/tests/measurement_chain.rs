use echoaware::annotate::{find_peaks, DEFAULT_MIN_HEIGHT};
use echoaware::dsp::fft_convolve;
use echoaware::geometry::{enumerate_images, RoomSpec};
use echoaware::probe::{estimate_rir_averaged, generate_ess, DeconvOptions, SweepSpec};
use echoaware::scenes::random_separated_pair;
use echoaware::synth::synthesize_room_rir;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sweep_measurement_recovers_first_order_toas() {
    let room = RoomSpec::<f64>::panels("011111").unwrap();
    let fs = 48_000.0;
    let spec = SweepSpec { repetitions: 1, duration: 3.0, ..SweepSpec::default() };
    let sweep = generate_ess(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..4 {
        let (src, mic) = random_separated_pair(&mut rng, &room, 0.3, 80.0 / fs, 100_000).unwrap();
        let rir = synthesize_room_rir(&room, &src, &mic, fs, 12_000).unwrap();
        let recorded = fft_convolve(&sweep, &rir.samples);
        let mut opts = DeconvOptions::new(12_000);
        opts.band = Some((100.0, 14_000.0));
        let est = estimate_rir_averaged(&recorded, &spec, &opts).unwrap();
        let echogram: Vec<f64> = est.samples.iter().map(|v| v.abs()).collect();
        let peaks = find_peaks(&echogram, DEFAULT_MIN_HEIGHT, 10).unwrap();
        for im in enumerate_images(&room, &src, 1).unwrap() {
            let toa = (im.position - mic).norm() / room.speed_of_sound * fs;
            let hit = peaks.iter().any(|p| (p.position - toa).abs() <= 2.0);
            assert!(hit, "{:?} at {toa:.1} samples not found", im.label);
        }
    }
}

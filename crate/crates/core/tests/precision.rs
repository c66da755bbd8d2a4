use echoaware::geometry::predict_echo_annotation;
use echoaware::scenes::reference_layout;
use echoaware::synth::synthesize_room_rir;
use echoaware::{f32 as single, f64 as double};

fn rooms() -> (single::RoomSpec, double::RoomSpec) {
    (single::RoomSpec::panels("011111").unwrap(), double::RoomSpec::panels("011111").unwrap())
}

#[test]
fn single_precision_rir_tracks_double() {
    let (r32, r64) = rooms();
    let (s32, m32) = (single::Vec3::new(2.0, 3.1, 1.4), single::Vec3::new(4.2, 1.7, 1.1));
    let (s64, m64) = (double::Vec3::new(2.0, 3.1, 1.4), double::Vec3::new(4.2, 1.7, 1.1));
    let a: single::Rir = synthesize_room_rir(&r32, &s32, &m32, 48_000.0, 4800).unwrap();
    let b: double::Rir = synthesize_room_rir(&r64, &s64, &m64, 48_000.0, 4800).unwrap();
    let peak = b.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = a.samples.iter().zip(&b.samples).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4 * peak, "{worst} against peak {peak}");
}

#[test]
fn single_precision_annotation_matches_double() {
    let (r32, r64) = rooms();
    let a: single::EchoAnnotation = predict_echo_annotation(&r32, &reference_layout::<f32>(), 1).unwrap();
    let b: double::EchoAnnotation = predict_echo_annotation(&r64, &reference_layout::<f64>(), 1).unwrap();
    assert_eq!(a.entries.len(), b.entries.len());
    for (k, ea) in &a.entries {
        let eb = &b.entries[k];
        assert_eq!(ea.len(), eb.len());
        for (x, y) in ea.iter().zip(eb) {
            assert!((x.toa as f64 - y.toa).abs() < 1e-7, "{k:?}");
        }
    }
}

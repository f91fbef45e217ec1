//! End-to-end shape contract of the feature pipeline.

use sonowatch_core::audio::{resample, synth_clip, SynthSpec};
use sonowatch_core::dsp::{
    build_mel_filterbank, context_frames, log_mel, segment_raw, stft_power,
};

fn ten_second_clip() -> sonowatch_core::AudioClip {
    let spec = SynthSpec {
        duration_s: 10.0,
        sample_rate: 16000,
        fundamental_hz: 170.0,
        harmonic_amps: vec![1.0, 0.6, 0.4],
        amplitude: 0.2,
        amp_jitter: 0.05,
        freq_jitter: 0.01,
        anomaly: None,
    };
    synth_clip(&spec, 1234).unwrap()
}

#[test]
fn ten_seconds_at_16khz_yields_64x313_and_309_context_vectors() {
    let clip = ten_second_clip();
    assert_eq!(clip.len(), 160000);

    let power = stft_power(&clip, 1024, 512).unwrap();
    assert_eq!(power.n_frames(), 313);

    let fb = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
    let lm = log_mel(&power, &fb, 1e-10).unwrap();
    assert_eq!(lm.n_bands, 64);
    assert_eq!(lm.n_frames(), 313);

    let vectors = context_frames(&lm, 5, 1).unwrap();
    assert_eq!(vectors.len(), 309);
    assert!(vectors.iter().all(|v| v.len() == 320));
}

#[test]
fn ten_seconds_at_8khz_yields_40_segments_of_2000() {
    let clip = ten_second_clip();
    let down = resample(&clip, 8000).unwrap();
    assert_eq!(down.len(), 80000);

    let segments = segment_raw(&down, 2000).unwrap();
    assert_eq!(segments.len(), 40);
    assert!(segments.iter().all(|s| s.len() == 2000));
}

//! Deterministic clip synthesis: stationary harmonic hums with optional
//! anomaly injection, used to build desk-scale stand-in corpora.

use super::{AudioClip, AudioError};
use crate::rng::Rng;

/// Description of a harmonic hum to synthesize.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Fundamental frequency in Hz.
    pub fundamental_hz: f64,
    /// Relative amplitude of harmonic k+1 (index 0 is the fundamental).
    pub harmonic_amps: Vec<f64>,
    /// Overall amplitude scale.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Per-harmonic amplitude jitter as a fraction (drawn once per clip).
    #[serde(default)]
    pub amp_jitter: f64,
    /// Fundamental frequency jitter as a fraction (drawn once per clip).
    #[serde(default)]
    pub freq_jitter: f64,
    /// Optional deviation from the normal hum.
    #[serde(default)]
    pub anomaly: Option<AnomalySpec>,
}

fn default_amplitude() -> f64 {
    1.0
}

/// Injected deviation kinds.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalySpec {
    /// Short broadband noise bursts at random positions.
    TransientBursts {
        count: usize,
        duration_s: f64,
        amplitude: f64,
    },
    /// One harmonic shifted off its nominal frequency.
    DetunedHarmonic { harmonic: usize, factor: f64 },
}

/// Synthesizes a clip; bit-identical for a fixed `(spec, seed)` pair.
pub fn synth_clip(spec: &SynthSpec, seed: u64) -> Result<AudioClip, AudioError> {
    if spec.harmonic_amps.is_empty() {
        return Err(AudioError::EmptyHarmonics);
    }
    if spec.duration_s <= 0.0 {
        return Err(AudioError::NonPositiveDuration(spec.duration_s));
    }
    let mut rng = Rng::from_seed(seed);
    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;

    let f0 = spec.fundamental_hz * (1.0 + spec.freq_jitter * rng.range(-1.0, 1.0));
    let voices: Vec<(f64, f64, f64)> = spec
        .harmonic_amps
        .iter()
        .enumerate()
        .map(|(k, &amp)| {
            let mut freq = f0 * (k + 1) as f64;
            if let Some(AnomalySpec::DetunedHarmonic { harmonic, factor }) = &spec.anomaly {
                if *harmonic == k {
                    freq *= factor;
                }
            }
            let jitter = 1.0 + spec.amp_jitter * rng.range(-1.0, 1.0);
            let phase = rng.range(0.0, std::f64::consts::TAU);
            (freq, amp * jitter, phase)
        })
        .collect();

    let mut samples = vec![0.0; n];
    for (freq, amp, phase) in &voices {
        let step = std::f64::consts::TAU * freq / rate;
        let scaled = spec.amplitude * amp;
        for (t, s) in samples.iter_mut().enumerate() {
            *s += scaled * (phase + step * t as f64).sin();
        }
    }

    if let Some(AnomalySpec::TransientBursts {
        count,
        duration_s,
        amplitude,
    }) = &spec.anomaly
    {
        add_bursts(&mut samples, rate, *count, *duration_s, *amplitude, &mut rng);
    }

    Ok(AudioClip::from_mono(spec.sample_rate, samples))
}

/// Adds Hann-enveloped white-noise bursts at random positions.
pub fn add_bursts(
    samples: &mut [f64],
    sample_rate: f64,
    count: usize,
    duration_s: f64,
    amplitude: f64,
    rng: &mut Rng,
) {
    let burst_len = ((duration_s * sample_rate).round() as usize).max(1);
    if samples.len() <= burst_len {
        return;
    }
    for _ in 0..count {
        let start = rng.below(samples.len() - burst_len);
        for j in 0..burst_len {
            let env = 0.5
                * (1.0
                    - (std::f64::consts::TAU * j as f64 / burst_len as f64).cos());
            samples[start + j] += amplitude * env * rng.normal();
        }
    }
}

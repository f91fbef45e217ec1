//! Desk-scale synthetic corpus generation.
//!
//! Each clip is a machine-like signal mixed with shaped noise at an exact
//! SNR. The same underlying signal and noise realization back every SNR
//! stratum (only the noise gain changes), mirroring a corpus recorded once
//! and released at several noise levels. Everything derives from per-clip
//! seeds, so a (config, seed) pair reproduces the corpus bit for bit.

use std::path::Path;

use super::{Condition, DatasetError, DatasetManifest, MachineType, ManifestEntry};
use crate::audio::{
    add_bursts, mean_power, snr_gain, synth_clip, write_wav, AnomalySpec, AudioClip,
    SampleEncoding, SynthSpec,
};
use crate::rng::{derive_seed, hash_bytes, Rng};
use crate::scene::SceneClass;

/// Signal family a machine emits.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Archetype {
    /// Stationary harmonic hum (fan-like).
    Hum {
        fundamental_hz: f64,
        harmonic_amps: Vec<f64>,
        #[serde(default)]
        amp_jitter: f64,
        #[serde(default)]
        freq_jitter: f64,
    },
    /// Harmonic hum with slow amplitude modulation (pump-like).
    ModulatedHum {
        fundamental_hz: f64,
        harmonic_amps: Vec<f64>,
        mod_rate_hz: f64,
        mod_depth: f64,
        #[serde(default)]
        amp_jitter: f64,
        #[serde(default)]
        freq_jitter: f64,
    },
    /// Periodic decaying impulses over near-silence (valve-like).
    ImpulseTrain {
        rate_hz: f64,
        impulse_amp: f64,
        decay_s: f64,
    },
    /// Repeating linear frequency sweeps (slide-rail-like).
    ChirpSweep {
        f_start_hz: f64,
        f_end_hz: f64,
        sweep_period_s: f64,
    },
}

/// Broadband transient bursts added to abnormal clips.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BurstSpec {
    pub count: usize,
    pub duration_s: f64,
    pub amplitude: f64,
}

/// How abnormal clips deviate from normal ones. With both kinds configured,
/// abnormal clips alternate by index.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AnomalyInjection {
    pub bursts: Option<BurstSpec>,
    /// Frequency factor applied to one harmonic (hums) or the whole sweep
    /// range (chirps) / impulse rate (impulse trains).
    pub detune_factor: Option<f64>,
}

/// Pink-ish background noise: white noise through a one-pole low-pass,
/// renormalized to unit power before SNR scaling.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Pole of the shaping filter in (0, 1); higher tilts more energy low.
    pub lowpass_pole: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { lowpass_pole: 0.9 }
    }
}

/// One synthetic machine.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MachineSpec {
    pub machine_type: MachineType,
    pub machine_id: String,
    pub archetype: Archetype,
    /// Overall signal amplitude scale.
    pub base_amplitude: f64,
    pub anomaly: AnomalyInjection,
}

/// Full description of a synthetic corpus.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthCorpusSpec {
    pub machines: Vec<MachineSpec>,
    pub snrs: Vec<SceneClass>,
    pub normal_count: u32,
    pub abnormal_count: u32,
    pub duration_s: f64,
    pub sample_rate: u32,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl SynthCorpusSpec {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.machines.is_empty() {
            return Err(DatasetError::InvalidConfig("no machines configured".into()));
        }
        if self.snrs.is_empty() {
            return Err(DatasetError::InvalidConfig("no SNR levels configured".into()));
        }
        if self.normal_count == 0 {
            return Err(DatasetError::InvalidConfig(
                "normal_count must be positive".into(),
            ));
        }
        if self.duration_s <= 0.0 {
            return Err(DatasetError::InvalidConfig(
                "duration_s must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise.lowpass_pole) {
            return Err(DatasetError::InvalidConfig(
                "noise.lowpass_pole must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic seed for one clip's signal content.
fn clip_seed(corpus_seed: u64, machine: &MachineSpec, condition: Condition, index: u32) -> u64 {
    derive_seed(
        corpus_seed,
        &[
            hash_bytes(machine.machine_type.label().as_bytes()),
            hash_bytes(machine.machine_id.as_bytes()),
            hash_bytes(condition.label().as_bytes()),
            index as u64,
        ],
    )
}

/// The machine signal and its (unscaled) noise realization for one clip.
/// Both are independent of the SNR stratum.
pub fn clip_components(
    spec: &SynthCorpusSpec,
    corpus_seed: u64,
    machine: &MachineSpec,
    condition: Condition,
    index: u32,
) -> Result<(Vec<f64>, Vec<f64>), DatasetError> {
    let seed = clip_seed(corpus_seed, machine, condition, index);
    let signal = render_signal(spec, machine, condition, index, seed)?;
    let mut noise_rng = Rng::from_seed(derive_seed(seed, &[hash_bytes(b"noise")]));
    let noise = shaped_noise(
        signal.len(),
        spec.noise.lowpass_pole,
        &mut noise_rng,
    );
    Ok((signal, noise))
}

fn render_signal(
    spec: &SynthCorpusSpec,
    machine: &MachineSpec,
    condition: Condition,
    index: u32,
    seed: u64,
) -> Result<Vec<f64>, DatasetError> {
    let abnormal = condition == Condition::Abnormal;
    // With both anomaly kinds configured, alternate by clip index.
    let (use_detune, use_bursts) = match (&machine.anomaly.detune_factor, &machine.anomaly.bursts) {
        (Some(_), Some(_)) => (index % 2 == 0, index % 2 == 1),
        (Some(_), None) => (true, false),
        (None, Some(_)) => (false, true),
        (None, None) => (false, false),
    };
    let detune = if abnormal && use_detune {
        machine.anomaly.detune_factor
    } else {
        None
    };

    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;
    let mut rng = Rng::from_seed(seed);

    let mut samples = match &machine.archetype {
        Archetype::Hum {
            fundamental_hz,
            harmonic_amps,
            amp_jitter,
            freq_jitter,
        } => {
            let synth = SynthSpec {
                duration_s: spec.duration_s,
                sample_rate: spec.sample_rate,
                fundamental_hz: *fundamental_hz,
                harmonic_amps: harmonic_amps.clone(),
                amplitude: machine.base_amplitude,
                amp_jitter: *amp_jitter,
                freq_jitter: *freq_jitter,
                anomaly: detune.map(|factor| AnomalySpec::DetunedHarmonic {
                    harmonic: 1.min(harmonic_amps.len() - 1),
                    factor,
                }),
            };
            synth_clip(&synth, seed)?.mono()?.to_vec()
        }
        Archetype::ModulatedHum {
            fundamental_hz,
            harmonic_amps,
            mod_rate_hz,
            mod_depth,
            amp_jitter,
            freq_jitter,
        } => {
            let synth = SynthSpec {
                duration_s: spec.duration_s,
                sample_rate: spec.sample_rate,
                fundamental_hz: *fundamental_hz,
                harmonic_amps: harmonic_amps.clone(),
                amplitude: machine.base_amplitude,
                amp_jitter: *amp_jitter,
                freq_jitter: *freq_jitter,
                anomaly: detune.map(|factor| AnomalySpec::DetunedHarmonic {
                    harmonic: 1.min(harmonic_amps.len() - 1),
                    factor,
                }),
            };
            let mut samples = synth_clip(&synth, seed)?.mono()?.to_vec();
            let phase = rng.range(0.0, std::f64::consts::TAU);
            let step = std::f64::consts::TAU * mod_rate_hz / rate;
            for (t, s) in samples.iter_mut().enumerate() {
                *s *= 1.0 + mod_depth * (phase + step * t as f64).sin();
            }
            samples
        }
        Archetype::ImpulseTrain {
            rate_hz,
            impulse_amp,
            decay_s,
        } => {
            let rate_hz = rate_hz * detune.unwrap_or(1.0);
            let period = (rate / rate_hz).max(1.0);
            let decay = (-1.0 / (decay_s * rate)).exp();
            let mut samples = vec![0.0; n];
            let mut next = rng.range(0.0, period);
            while (next as usize) < n {
                let start = next as usize;
                let sign = if rng.below(2) == 0 { 1.0 } else { -1.0 };
                let mut amp = machine.base_amplitude * impulse_amp * sign
                    * rng.range(0.8, 1.2);
                let mut t = start;
                while t < n && amp.abs() > 1e-4 {
                    samples[t] += amp;
                    amp *= decay;
                    t += 1;
                }
                next += period * rng.range(0.95, 1.05);
            }
            samples
        }
        Archetype::ChirpSweep {
            f_start_hz,
            f_end_hz,
            sweep_period_s,
        } => {
            let factor = detune.unwrap_or(1.0);
            let (f0, f1) = (f_start_hz * factor, f_end_hz * factor);
            let period = (sweep_period_s * rate).max(2.0);
            let phase0 = rng.range(0.0, std::f64::consts::TAU);
            let mut samples = vec![0.0; n];
            let mut phase = phase0;
            for (t, s) in samples.iter_mut().enumerate() {
                // Triangle sweep between f0 and f1 avoids phase jumps.
                let pos = (t as f64 % period) / period;
                let tri = if pos < 0.5 { 2.0 * pos } else { 2.0 - 2.0 * pos };
                let f = f0 + (f1 - f0) * tri;
                phase += std::f64::consts::TAU * f / rate;
                *s = machine.base_amplitude * phase.sin();
            }
            samples
        }
    };

    if abnormal && use_bursts {
        if let Some(b) = &machine.anomaly.bursts {
            let mut burst_rng = Rng::from_seed(derive_seed(seed, &[hash_bytes(b"bursts")]));
            add_bursts(
                &mut samples,
                rate,
                b.count,
                b.duration_s,
                machine.base_amplitude * b.amplitude,
                &mut burst_rng,
            );
        }
    }
    Ok(samples)
}

/// White noise through a one-pole low-pass, normalized to unit mean power.
fn shaped_noise(n: usize, pole: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut state = 0.0;
    for _ in 0..n {
        state = pole * state + (1.0 - pole) * rng.normal();
        out.push(state);
    }
    let power = mean_power(&out);
    if power > 0.0 {
        let inv = 1.0 / power.sqrt();
        for v in &mut out {
            *v *= inv;
        }
    }
    out
}

/// Writes the WAV tree for `spec` under `root` and returns its manifest.
///
/// The manifest matches what [`super::scan_dataset`] reports for the same
/// tree. Clip indices start at 1.
pub fn generate_synthetic_corpus(
    spec: &SynthCorpusSpec,
    root: &Path,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    spec.validate()?;
    let mut entries = Vec::new();
    for machine in &spec.machines {
        for (condition, count) in [
            (Condition::Normal, spec.normal_count),
            (Condition::Abnormal, spec.abnormal_count),
        ] {
            for index in 1..=count {
                let (signal, noise) = clip_components(spec, seed, machine, condition, index)?;
                let p_signal = mean_power(&signal);
                let p_noise = mean_power(&noise);
                for &snr in &spec.snrs {
                    let g = snr_gain(p_signal, p_noise, snr.snr_db());
                    let mixed: Vec<f64> =
                        signal.iter().zip(&noise).map(|(s, n)| s + g * n).collect();
                    let dir = root
                        .join(snr.label())
                        .join(machine.machine_type.label())
                        .join(&machine.machine_id)
                        .join(condition.label());
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join(format!("{index:08}.wav"));
                    write_wav(
                        &AudioClip::from_mono(spec.sample_rate, mixed),
                        &path,
                        SampleEncoding::Pcm16,
                    )?;
                    entries.push(ManifestEntry {
                        machine_type: machine.machine_type,
                        machine_id: machine.machine_id.clone(),
                        snr,
                        condition,
                        index,
                        path,
                    });
                }
            }
        }
    }
    entries.sort();
    Ok(DatasetManifest { entries })
}

//! Audio clips and the operations that normalize them for the two model
//! paths: channel averaging, integer-factor resampling, and SNR-exact mixing.

mod synth;
mod wav;

pub use synth::{add_bursts, synth_clip, AnomalySpec, SynthSpec};
pub use wav::{load_wav, write_wav, SampleEncoding};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed WAV file {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },
    #[error("WAV file truncated mid-data: {0}")]
    TruncatedWav(PathBuf),
    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("clip must have at least one channel")]
    NoChannels,
    #[error("channel lengths differ")]
    ChannelLengthMismatch,
    #[error("operation requires a mono clip, got {0} channels")]
    NotMono(usize),
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("clip lengths differ: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("no integer rate ratio between {from_rate} Hz and {to_rate} Hz")]
    NonIntegerRateRatio { from_rate: u32, to_rate: u32 },
    #[error("noise has zero power; SNR mixing is undefined")]
    ZeroPowerNoise,
    #[error("harmonic set is empty")]
    EmptyHarmonics,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A multi-channel buffer of real-valued samples at a fixed rate.
///
/// Samples are stored per channel in 64-bit precision. All channels are the
/// same length.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, AudioError> {
        if channels.is_empty() {
            return Err(AudioError::NoChannels);
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::ChannelLengthMismatch);
        }
        Ok(AudioClip {
            sample_rate,
            channels,
        })
    }

    pub fn from_mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        AudioClip {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Number of frames (samples per channel).
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_mono(&self) -> bool {
        self.channels.len() == 1
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    /// The single channel of a mono clip.
    pub fn mono(&self) -> Result<&[f64], AudioError> {
        if !self.is_mono() {
            return Err(AudioError::NotMono(self.channels.len()));
        }
        Ok(&self.channels[0])
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Collapses a clip to one channel by arithmetic mean across channels.
pub fn to_mono(clip: &AudioClip) -> AudioClip {
    if clip.is_mono() {
        return clip.clone();
    }
    let n = clip.len();
    let scale = 1.0 / clip.n_channels() as f64;
    let mut out = vec![0.0; n];
    for ch in &clip.channels {
        for (o, &s) in out.iter_mut().zip(ch) {
            *o += s;
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    AudioClip::from_mono(clip.sample_rate, out)
}

/// Mean of squared samples over the whole buffer.
pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Gain to apply to `noise` so that signal vs scaled noise sit at `snr_db`.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` into `signal` scaled so the component powers sit exactly at
/// `snr_db`: output = signal + g * noise with
/// 10*log10(P_signal / (g^2 * P_noise)) = snr_db.
pub fn mix_at_snr(
    signal: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
) -> Result<AudioClip, AudioError> {
    let s = signal.mono()?;
    let n = noise.mono()?;
    if signal.sample_rate != noise.sample_rate {
        return Err(AudioError::RateMismatch(
            signal.sample_rate,
            noise.sample_rate,
        ));
    }
    if s.len() != n.len() {
        return Err(AudioError::LengthMismatch(s.len(), n.len()));
    }
    let p_noise = mean_power(n);
    if p_noise <= 0.0 {
        return Err(AudioError::ZeroPowerNoise);
    }
    let g = snr_gain(mean_power(s), p_noise, snr_db);
    let mixed = s.iter().zip(n).map(|(a, b)| a + g * b).collect();
    Ok(AudioClip::from_mono(signal.sample_rate, mixed))
}

/// Resamples a mono clip between rates related by an integer factor.
///
/// Downsampling low-passes at the new Nyquist before decimating; upsampling
/// zero-stuffs and interpolates with the same filter. The FIR is a 65-tap
/// windowed sinc so the group delay is an integer sample and can be removed
/// exactly.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    let x = clip.mono()?;
    let source_rate = clip.sample_rate;
    if target_rate == source_rate {
        return Ok(clip.clone());
    }
    if source_rate % target_rate == 0 {
        let factor = (source_rate / target_rate) as usize;
        // Cutoff at the new Nyquist, as a fraction of the source rate.
        let taps = fir_lowpass(0.5 / factor as f64);
        let out_len = x.len().div_ceil(factor);
        let mut out = Vec::with_capacity(out_len);
        for j in 0..out_len {
            out.push(fir_apply(&taps, x, j * factor));
        }
        Ok(AudioClip::from_mono(target_rate, out))
    } else if target_rate % source_rate == 0 {
        let factor = (target_rate / source_rate) as usize;
        let taps = fir_lowpass(0.5 / factor as f64);
        let stuffed_len = x.len() * factor;
        let mut stuffed = vec![0.0; stuffed_len];
        for (i, &s) in x.iter().enumerate() {
            stuffed[i * factor] = s;
        }
        let gain = factor as f64;
        let mut out = Vec::with_capacity(stuffed_len);
        for j in 0..stuffed_len {
            out.push(gain * fir_apply(&taps, &stuffed, j));
        }
        Ok(AudioClip::from_mono(target_rate, out))
    } else {
        Err(AudioError::NonIntegerRateRatio {
            from_rate: source_rate,
            to_rate: target_rate,
        })
    }
}

const FIR_HALF: usize = 32;

/// Hamming-windowed sinc low-pass, unit DC gain. `cutoff` is in cycles per
/// sample of the rate the filter runs at.
fn fir_lowpass(cutoff: f64) -> Vec<f64> {
    let m = FIR_HALF as f64;
    let mut taps: Vec<f64> = (0..=2 * FIR_HALF)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (std::f64::consts::TAU * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let window =
                0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (2.0 * m)).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Delay-compensated FIR output at position `center`, zero-padded edges.
fn fir_apply(taps: &[f64], x: &[f64], center: usize) -> f64 {
    let mut acc = 0.0;
    for (i, &h) in taps.iter().enumerate() {
        let idx = center as isize + i as isize - FIR_HALF as isize;
        if idx >= 0 && (idx as usize) < x.len() {
            acc += h * x[idx as usize];
        }
    }
    acc
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    #[test]
    fn to_mono_averages_channels() {
        let clip = AudioClip::new(16000, vec![vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        let mono = to_mono(&clip);
        assert_eq!(mono.mono().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn to_mono_identity_on_mono() {
        let clip = AudioClip::from_mono(16000, vec![0.5, -0.25, 0.0]);
        assert_eq!(to_mono(&clip), clip);
    }

    #[test]
    fn to_mono_of_identical_channels_is_any_channel() {
        let ch: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let clip = AudioClip::new(16000, vec![ch.clone(); 8]).unwrap();
        let mono = to_mono(&clip);
        for (a, b) in mono.mono().unwrap().iter().zip(&ch) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn to_mono_is_idempotent_and_preserves_length() {
        let clip = AudioClip::new(8000, vec![vec![0.1; 123], vec![-0.2; 123]]).unwrap();
        let once = to_mono(&clip);
        let twice = to_mono(&once);
        assert_eq!(once, twice);
        assert_eq!(once.len(), clip.len());
    }

    #[test]
    fn mix_gain_zero_db_equal_power() {
        let s = AudioClip::from_mono(16000, vec![0.5, -0.5, 0.5, -0.5]);
        let n = AudioClip::from_mono(16000, vec![-0.5, 0.5, -0.5, 0.5]);
        let mixed = mix_at_snr(&s, &n, 0.0).unwrap();
        // g = 1 at equal power, so the two cancel exactly here.
        for v in mixed.mono().unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mix_gain_six_db_equal_power() {
        let p_s = 0.25;
        let g = snr_gain(p_s, p_s, 6.0);
        assert!((g - 10f64.powf(-6.0 / 20.0)).abs() < 1e-12);
        assert!((g - 0.5011872336272722).abs() < 1e-12);
    }

    #[test]
    fn mix_rejects_zero_power_noise() {
        let s = AudioClip::from_mono(16000, vec![0.5; 8]);
        let n = AudioClip::from_mono(16000, vec![0.0; 8]);
        assert!(matches!(
            mix_at_snr(&s, &n, 0.0),
            Err(AudioError::ZeroPowerNoise)
        ));
    }

    #[test]
    fn mix_rejects_length_mismatch() {
        let s = AudioClip::from_mono(16000, vec![0.5; 8]);
        let n = AudioClip::from_mono(16000, vec![0.1; 7]);
        assert!(matches!(
            mix_at_snr(&s, &n, 0.0),
            Err(AudioError::LengthMismatch(8, 7))
        ));
    }

    #[test]
    fn measured_snr_matches_request() {
        let mut rng = crate::rng::Rng::from_seed(3);
        let s: Vec<f64> = (0..4000).map(|_| rng.normal() * 0.2).collect();
        let n: Vec<f64> = (0..4000).map(|_| rng.normal() * 0.7).collect();
        for snr_db in [-6.0, 0.0, 6.0, 13.5] {
            let g = snr_gain(mean_power(&s), mean_power(&n), snr_db);
            let scaled: Vec<f64> = n.iter().map(|v| v * g).collect();
            let measured = 10.0 * (mean_power(&s) / mean_power(&scaled)).log10();
            assert!(
                (measured - snr_db).abs() < 1e-6,
                "snr {snr_db} measured {measured}"
            );
        }
    }

    #[test]
    fn resample_halves_even_length() {
        let clip = AudioClip::from_mono(16000, vec![0.0; 160000]);
        let down = resample(&clip, 8000).unwrap();
        assert_eq!(down.len(), 80000);
        assert_eq!(down.sample_rate(), 8000);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let clip = AudioClip::from_mono(16000, vec![0.5; 2000]);
        let down = resample(&clip, 8000).unwrap();
        let y = down.mono().unwrap();
        for &v in &y[40..y.len() - 40] {
            assert!((v - 0.5).abs() < 1e-3, "sample {v}");
        }
    }

    #[test]
    fn resample_rejects_non_integer_ratio() {
        let clip = AudioClip::from_mono(44100, vec![0.0; 100]);
        assert!(matches!(
            resample(&clip, 16000),
            Err(AudioError::NonIntegerRateRatio { .. })
        ));
    }

    #[test]
    fn resample_preserves_sine() {
        // 1 kHz sine synthesized at 16 kHz, decimated to 8 kHz, compared
        // against a directly synthesized 8 kHz sine.
        let f = 1000.0;
        let n16 = 16000;
        let x16: Vec<f64> = (0..n16)
            .map(|i| (std::f64::consts::TAU * f * i as f64 / 16000.0).sin())
            .collect();
        let down = resample(&AudioClip::from_mono(16000, x16), 8000).unwrap();
        let y = down.mono().unwrap();
        let direct: Vec<f64> = (0..y.len())
            .map(|i| (std::f64::consts::TAU * f * i as f64 / 8000.0).sin())
            .collect();
        // Correlation away from edges.
        let margin = 64;
        let a = &y[margin..y.len() - margin];
        let b = &direct[margin..direct.len() - margin];
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let na: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        let corr = dot / (na * nb);
        assert!(corr > 0.99, "correlation {corr}");

        // Dominant DFT bin preserved: probe a frequency grid directly.
        let argmax_hz = |xs: &[f64], rate: f64| -> f64 {
            let mut best = (0.0, 0.0);
            for hz in (100..3900).step_by(50) {
                let p = goertzel_power(xs, rate, hz as f64);
                if p > best.1 {
                    best = (hz as f64, p);
                }
            }
            best.0
        };
        assert_eq!(argmax_hz(y, 8000.0), 1000.0);
    }

    /// Single-bin DFT power, used as an independent spectral probe in tests.
    pub(crate) fn goertzel_power(x: &[f64], sample_rate: f64, freq: f64) -> f64 {
        let w = std::f64::consts::TAU * freq / sample_rate;
        let coeff = 2.0 * w.cos();
        let (mut s_prev, mut s_prev2) = (0.0, 0.0);
        for &sample in x {
            let s = sample + coeff * s_prev - s_prev2;
            s_prev2 = s_prev;
            s_prev = s;
        }
        s_prev * s_prev + s_prev2 * s_prev2 - coeff * s_prev * s_prev2
    }
}

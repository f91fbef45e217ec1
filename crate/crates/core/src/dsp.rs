//! Feature extraction: audio to the two model input representations.
//!
//! The anomaly path is STFT -> 64-band log-mel -> 5-frame context vectors of
//! dimension 320. The scene path is plain non-overlapping 2000-sample raw
//! segments at 8 kHz (250 ms each).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::AudioClip;

/// Sample rate of the log-mel / autoencoder path.
pub const AE_SAMPLE_RATE: u32 = 16000;
/// Sample rate of the raw-segment / scene path.
pub const SNET_SAMPLE_RATE: u32 = 8000;
/// Default FFT size; with 50% hop this yields 313 frames for 10 s at 16 kHz.
pub const DEFAULT_N_FFT: usize = 1024;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 64;
pub const DEFAULT_CONTEXT: usize = 5;
pub const DEFAULT_STRIDE: usize = 1;
pub const DEFAULT_FLOOR_EPS: f64 = 1e-10;
/// 250 ms at 8 kHz.
pub const DEFAULT_SEGMENT_LEN: usize = 2000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("operation requires a mono clip, got {0} channels")]
    NotMono(usize),
    #[error("expected {expected} Hz input, got {actual} Hz")]
    WrongRate { expected: u32, actual: u32 },
    #[error("hop must be n_fft/2 for 50% overlap (n_fft {n_fft}, hop {hop})")]
    BadHop { n_fft: usize, hop: usize },
    #[error("clip is empty")]
    EmptyClip,
    #[error("invalid frequency range [{f_min}, {f_max}] for rate {sample_rate}")]
    InvalidFrequencyRange {
        f_min: f64,
        f_max: f64,
        sample_rate: u32,
    },
    #[error("mel band {band} has no spectrum support; raise n_fft or widen the range")]
    DegenerateFilterbank { band: usize },
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("need at least {context} frames, got {frames}")]
    TooFewFrames { frames: usize, context: usize },
    #[error("context and stride must be at least 1")]
    BadContextParams,
}

/// Power spectrogram: `n_bins` = n_fft/2 + 1 bins per frame, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrogram {
    pub n_bins: usize,
    pub frames: Vec<Vec<f64>>,
}

impl PowerSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Log mel-band energies (natural log), frame-major with `n_bands` per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub n_bands: usize,
    pub frames: Vec<Vec<f64>>,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Value at (band, frame).
    pub fn value(&self, band: usize, frame: usize) -> f64 {
        self.frames[frame][band]
    }
}

/// Concatenation of consecutive log-mel frames, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fixed-length run of raw samples (default 2000 at 8 kHz).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSegment(pub Vec<f64>);

impl RawSegment {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Triangular mel filterbank over FFT bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Row-major `n_mels x n_bins` nonnegative weights.
    pub weights: Vec<f64>,
    /// Band center frequencies in Hz, strictly increasing.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.n_bins..(band + 1) * self.n_bins]
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Short-time power spectrogram of a mono 16 kHz clip.
///
/// Frames are centered: the input is reflect-padded by n_fft/2 on each side,
/// giving `floor(len / hop) + 1` frames. A Hann window is applied and each
/// bin holds the squared magnitude.
pub fn stft_power(
    clip: &AudioClip,
    n_fft: usize,
    hop: usize,
) -> Result<PowerSpectrogram, DspError> {
    let x = clip
        .mono()
        .map_err(|_| DspError::NotMono(clip.n_channels()))?;
    if clip.sample_rate() != AE_SAMPLE_RATE {
        return Err(DspError::WrongRate {
            expected: AE_SAMPLE_RATE,
            actual: clip.sample_rate(),
        });
    }
    if hop == 0 || hop * 2 != n_fft {
        return Err(DspError::BadHop { n_fft, hop });
    }
    if x.is_empty() {
        return Err(DspError::EmptyClip);
    }

    let n_bins = n_fft / 2 + 1;
    let n_frames = x.len() / hop + 1;
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n_fft as f64).cos()))
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let pad = (n_fft / 2) as isize;

    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t as isize * hop as isize - pad;
        for (j, b) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + j as isize, x.len());
            *b = Complex::new(x[idx] * window[j], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_bins].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(PowerSpectrogram { n_bins, frames })
}

/// Reflects an out-of-range index into [0, len), bouncing at both ends
/// without repeating the edge sample.
fn reflect_index(idx: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = idx.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Builds a triangular filterbank with centers equally spaced on the mel
/// scale between `f_min` and `f_max`. No area normalization.
pub fn build_mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || f_min < 0.0 || f_min >= f_max || f_max > nyquist {
        return Err(DspError::InvalidFrequencyRange {
            f_min,
            f_max,
            sample_rate,
        });
    }
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; n_mels * n_bins];
    for band in 0..n_mels {
        let (left, center, right) = (edges_hz[band], edges_hz[band + 1], edges_hz[band + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                weights[band * n_bins + k] = w;
                any = true;
            }
        }
        if !any {
            return Err(DspError::DegenerateFilterbank { band });
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        centers_hz: edges_hz[1..=n_mels].to_vec(),
    })
}

/// Applies the filterbank and takes the natural log, floored at `floor_eps`.
pub fn log_mel(
    power: &PowerSpectrogram,
    fb: &MelFilterbank,
    floor_eps: f64,
) -> Result<LogMelSpectrogram, DspError> {
    if power.n_bins != fb.n_bins {
        return Err(DspError::DimensionMismatch {
            context: "power bins vs filterbank bins",
            left: power.n_bins,
            right: fb.n_bins,
        });
    }
    let frames = power
        .frames
        .iter()
        .map(|frame| {
            (0..fb.n_mels)
                .map(|band| {
                    let e: f64 = fb
                        .row(band)
                        .iter()
                        .zip(frame)
                        .map(|(w, p)| w * p)
                        .sum();
                    e.max(floor_eps).ln()
                })
                .collect()
        })
        .collect();
    Ok(LogMelSpectrogram {
        n_bands: fb.n_mels,
        frames,
    })
}

/// Slides a window of `context` frames with the given stride, concatenating
/// each window frame-major into one vector.
pub fn context_frames(
    lm: &LogMelSpectrogram,
    context: usize,
    stride: usize,
) -> Result<Vec<ContextVector>, DspError> {
    if context == 0 || stride == 0 {
        return Err(DspError::BadContextParams);
    }
    let t = lm.n_frames();
    if t < context {
        return Err(DspError::TooFewFrames { frames: t, context });
    }
    let count = (t - context) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut v = Vec::with_capacity(context * lm.n_bands);
        for frame in &lm.frames[j * stride..j * stride + context] {
            v.extend_from_slice(frame);
        }
        out.push(ContextVector(v));
    }
    Ok(out)
}

/// Splits a mono 8 kHz clip into non-overlapping segments of `seg_len`
/// samples; the trailing remainder is dropped. Fewer than `seg_len` samples
/// yield an empty list.
pub fn segment_raw(clip: &AudioClip, seg_len: usize) -> Result<Vec<RawSegment>, DspError> {
    let x = clip
        .mono()
        .map_err(|_| DspError::NotMono(clip.n_channels()))?;
    if clip.sample_rate() != SNET_SAMPLE_RATE {
        return Err(DspError::WrongRate {
            expected: SNET_SAMPLE_RATE,
            actual: clip.sample_rate(),
        });
    }
    Ok(x.chunks_exact(seg_len)
        .map(|c| RawSegment(c.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silent_clip(n: usize) -> AudioClip {
        AudioClip::from_mono(AE_SAMPLE_RATE, vec![0.0; n])
    }

    #[test]
    fn ten_seconds_gives_313_frames() {
        let ps = stft_power(&silent_clip(160000), 1024, 512).unwrap();
        assert_eq!(ps.n_frames(), 313);
        assert_eq!(ps.n_bins, 513);
    }

    #[test]
    fn zero_input_gives_zero_power() {
        let ps = stft_power(&silent_clip(4096), 1024, 512).unwrap();
        for frame in &ps.frames {
            assert!(frame.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn stft_rejects_wrong_rate_and_hop() {
        let clip8k = AudioClip::from_mono(8000, vec![0.0; 100]);
        assert!(matches!(
            stft_power(&clip8k, 1024, 512),
            Err(DspError::WrongRate { .. })
        ));
        assert!(matches!(
            stft_power(&silent_clip(100), 1024, 256),
            Err(DspError::BadHop { .. })
        ));
    }

    #[test]
    fn impulse_frame_matches_naive_dft() {
        // Unit impulse at the clip center; check every value of the center
        // frame against a direct DFT of the same windowed segment.
        let n = 8192;
        let n_fft = 1024;
        let hop = 512;
        let mut x = vec![0.0; n];
        let p = n / 2;
        x[p] = 1.0;
        let clip = AudioClip::from_mono(AE_SAMPLE_RATE, x.clone());
        let ps = stft_power(&clip, n_fft, hop).unwrap();

        let t = p / hop; // frame whose window starts exactly at the impulse
        let window: Vec<f64> = (0..n_fft)
            .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n_fft as f64).cos()))
            .collect();
        // Reconstruct the windowed segment (fully inside the signal here).
        let start = t as isize * hop as isize - (n_fft / 2) as isize;
        let seg: Vec<f64> = (0..n_fft)
            .map(|j| x[(start + j as isize) as usize] * window[j])
            .collect();
        for k in 0..=n_fft / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &s) in seg.iter().enumerate() {
                let ang = std::f64::consts::TAU * k as f64 * j as f64 / n_fft as f64;
                re += s * ang.cos();
                im -= s * ang.sin();
            }
            let expected = re * re + im * im;
            let got = ps.frames[t][k];
            assert!(
                (got - expected).abs() <= 1e-9 * expected.max(1.0),
                "bin {k}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn filterbank_shape_and_mel_values() {
        let fb = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        assert_eq!(fb.n_mels, 64);
        assert_eq!(fb.n_bins, 513);
        assert_eq!(fb.weights.len(), 64 * 513);
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert_eq!(hz_to_mel(700.0), 2595.0 * 2f64.log10());
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        // Centers strictly increasing, weights nonnegative, rows nonzero.
        for pair in fb.centers_hz.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for band in 0..fb.n_mels {
            assert!(fb.row(band).iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn filterbank_rejects_bad_range() {
        assert!(matches!(
            build_mel_filterbank(64, 1024, 16000, 4000.0, 2000.0),
            Err(DspError::InvalidFrequencyRange { .. })
        ));
        assert!(matches!(
            build_mel_filterbank(64, 1024, 16000, 0.0, 9000.0),
            Err(DspError::InvalidFrequencyRange { .. })
        ));
    }

    #[test]
    fn log_mel_floors_and_shifts() {
        let fb = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        let zeros = PowerSpectrogram {
            n_bins: 513,
            frames: vec![vec![0.0; 513]; 4],
        };
        let lm = log_mel(&zeros, &fb, 1e-10).unwrap();
        for frame in &lm.frames {
            assert!(frame.iter().all(|&v| v == 1e-10f64.ln()));
        }

        // Scaling power by e raises every above-floor cell by exactly 1.
        let mut rng = crate::rng::Rng::from_seed(2);
        let base: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..513).map(|_| rng.range(0.5, 2.0)).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .map(|f| f.iter().map(|p| p * std::f64::consts::E).collect())
            .collect();
        let lm_base = log_mel(
            &PowerSpectrogram {
                n_bins: 513,
                frames: base,
            },
            &fb,
            1e-10,
        )
        .unwrap();
        let lm_scaled = log_mel(
            &PowerSpectrogram {
                n_bins: 513,
                frames: scaled,
            },
            &fb,
            1e-10,
        )
        .unwrap();
        for (fa, fb_) in lm_base.frames.iter().zip(&lm_scaled.frames) {
            for (a, b) in fa.iter().zip(fb_) {
                assert!((b - a - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sine_at_band_center_wins_that_band() {
        // Pick a mid filterbank band, synthesize a sine at its center
        // frequency, and check that band is the per-frame argmax. The oracle
        // applies the filterbank directly to a naively computed spectrum.
        let fb = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        let band = 20;
        let f = fb.centers_hz[band];
        let x: Vec<f64> = (0..16000)
            .map(|i| (std::f64::consts::TAU * f * i as f64 / 16000.0).sin())
            .collect();
        let clip = AudioClip::from_mono(AE_SAMPLE_RATE, x);
        let ps = stft_power(&clip, 1024, 512).unwrap();
        let lm = log_mel(&ps, &fb, 1e-10).unwrap();
        // Interior frame, away from padding.
        let frame = lm.n_frames() / 2;
        let argmax = (0..64)
            .max_by(|&a, &b| {
                lm.value(a, frame)
                    .partial_cmp(&lm.value(b, frame))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(argmax, band);

        // Independent route: filterbank applied to the raw power frame.
        let direct: Vec<f64> = (0..64)
            .map(|b| {
                fb.row(b)
                    .iter()
                    .zip(&ps.frames[frame])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect();
        let direct_argmax = (0..64)
            .max_by(|&a, &b| direct[a].partial_cmp(&direct[b]).unwrap())
            .unwrap();
        assert_eq!(direct_argmax, band);
    }

    #[test]
    fn log_mel_is_monotone_in_power() {
        let fb = build_mel_filterbank(8, 64, 16000, 0.0, 8000.0).unwrap();
        let mut rng = crate::rng::Rng::from_seed(4);
        let frame: Vec<f64> = (0..33).map(|_| rng.range(0.0, 2.0)).collect();
        let base = log_mel(
            &PowerSpectrogram {
                n_bins: 33,
                frames: vec![frame.clone()],
            },
            &fb,
            1e-10,
        )
        .unwrap();
        for k in 0..33 {
            let mut bumped = frame.clone();
            bumped[k] += 0.5;
            let lm = log_mel(
                &PowerSpectrogram {
                    n_bins: 33,
                    frames: vec![bumped],
                },
                &fb,
                1e-10,
            )
            .unwrap();
            for b in 0..8 {
                assert!(lm.value(b, 0) >= base.value(b, 0) - 1e-12);
            }
        }
    }

    #[test]
    fn context_frames_counts_and_overlap() {
        let lm = LogMelSpectrogram {
            n_bands: 64,
            frames: (0..313)
                .map(|t| (0..64).map(|b| (t * 64 + b) as f64).collect())
                .collect(),
        };
        let vs = context_frames(&lm, 5, 1).unwrap();
        assert_eq!(vs.len(), 309);
        assert!(vs.iter().all(|v| v.len() == 320));
        // Consecutive vectors share exactly 4 * 64 = 256 values.
        for j in 0..vs.len() - 1 {
            assert_eq!(vs[j].as_slice()[64..], vs[j + 1].as_slice()[..256]);
        }
    }

    #[test]
    fn context_frames_edge_cases() {
        let lm5 = LogMelSpectrogram {
            n_bands: 64,
            frames: vec![vec![1.5; 64]; 5],
        };
        let vs = context_frames(&lm5, 5, 1).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].as_slice(), vec![1.5; 320].as_slice());

        let lm4 = LogMelSpectrogram {
            n_bands: 64,
            frames: vec![vec![0.0; 64]; 4],
        };
        assert!(matches!(
            context_frames(&lm4, 5, 1),
            Err(DspError::TooFewFrames {
                frames: 4,
                context: 5
            })
        ));
    }

    #[test]
    fn segment_raw_counts() {
        let mk = |n: usize| AudioClip::from_mono(SNET_SAMPLE_RATE, vec![0.25; n]);
        assert_eq!(segment_raw(&mk(80000), 2000).unwrap().len(), 40);
        assert_eq!(segment_raw(&mk(81000), 2000).unwrap().len(), 40);
        assert!(segment_raw(&mk(1999), 2000).unwrap().is_empty());
        let wrong_rate = AudioClip::from_mono(16000, vec![0.0; 4000]);
        assert!(matches!(
            segment_raw(&wrong_rate, 2000),
            Err(DspError::WrongRate { .. })
        ));
    }

    #[test]
    fn reflect_index_bounces() {
        assert_eq!(reflect_index(-1, 10), 1);
        assert_eq!(reflect_index(-2, 10), 2);
        assert_eq!(reflect_index(10, 10), 8);
        assert_eq!(reflect_index(11, 10), 7);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-5, 1), 0);
    }
}

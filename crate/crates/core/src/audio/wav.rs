//! WAV (RIFF) ingestion and emission: PCM 16-bit integer and 32-bit float,
//! little-endian.

use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioClip, AudioError};

/// On-disk sample encoding for [`write_wav`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleEncoding {
    /// 16-bit integer PCM; values are quantized by rounding.
    Pcm16,
    /// 32-bit IEEE float.
    Float32,
}

/// Reads a PCM WAV file into an [`AudioClip`].
///
/// Integer samples are scaled to [-1, 1). The declared channel count and
/// sample rate are taken from the header.
pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_open_error(e, path))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: "zero channels declared".into(),
        });
    }
    let declared = reader.len() as usize;

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => read_samples(reader, path, |s: i16| s as f64 / 32768.0)?,
        (SampleFormat::Float, 32) => read_samples(reader, path, |s: f32| s as f64)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{format:?} {bits}-bit"),
            })
        }
    };
    if interleaved.len() < declared {
        return Err(AudioError::TruncatedWav(path.to_path_buf()));
    }

    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for (i, &v) in interleaved.iter().enumerate() {
        channels[i % n_channels].push(v);
    }
    AudioClip::new(spec.sample_rate, channels)
}

fn read_samples<S, F>(
    mut reader: hound::WavReader<std::io::BufReader<std::fs::File>>,
    path: &Path,
    convert: F,
) -> Result<Vec<f64>, AudioError>
where
    S: hound::Sample,
    F: Fn(S) -> f64,
{
    let mut out = Vec::with_capacity(reader.len() as usize);
    for sample in reader.samples::<S>() {
        match sample {
            Ok(s) => out.push(convert(s)),
            Err(e) => return Err(map_read_error(e, path)),
        }
    }
    Ok(out)
}

fn map_open_error(e: hound::Error, path: &Path) -> AudioError {
    match e {
        hound::Error::IoError(io) if io.kind() == ErrorKind::NotFound => {
            AudioError::FileNotFound(path.to_path_buf())
        }
        hound::Error::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => {
            AudioError::MalformedWav {
                path: path.to_path_buf(),
                detail: "header ends early".into(),
            }
        }
        hound::Error::FormatError(detail) => AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: detail.into(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "unsupported WAV feature".into(),
        },
        other => AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

fn map_read_error(e: hound::Error, path: &Path) -> AudioError {
    match e {
        // The header promised more sample bytes than the file holds.
        hound::Error::IoError(_) => AudioError::TruncatedWav(path.to_path_buf()),
        other => AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Writes a clip to a WAV file with the given encoding.
pub fn write_wav(
    clip: &AudioClip,
    path: &Path,
    encoding: SampleEncoding,
) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: clip.n_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: match encoding {
            SampleEncoding::Pcm16 => 16,
            SampleEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            SampleEncoding::Pcm16 => SampleFormat::Int,
            SampleEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_write_error(e))?;
    let frames = clip.len();
    for frame in 0..frames {
        for ch in 0..clip.n_channels() {
            let v = clip.channel(ch)[frame];
            match encoding {
                SampleEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(wav_write_error)?;
                }
                SampleEncoding::Float32 => {
                    writer.write_sample(v as f32).map_err(wav_write_error)?;
                }
            }
        }
    }
    writer.finalize().map_err(wav_write_error)?;
    Ok(())
}

fn wav_write_error(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::Io(std::io::Error::other(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_header_fields() {
        let dir = tmp();
        let path = dir.path().join("mono.wav");
        let clip = AudioClip::from_mono(16000, vec![0.0; 160000]);
        write_wav(&clip, &path, SampleEncoding::Pcm16).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.sample_rate(), 16000);
        assert_eq!(loaded.n_channels(), 1);
        assert_eq!(loaded.len(), 160000);
    }

    #[test]
    fn preserves_channel_count() {
        let dir = tmp();
        let path = dir.path().join("eight.wav");
        let clip = AudioClip::new(16000, vec![vec![0.25; 64]; 8]).unwrap();
        write_wav(&clip, &path, SampleEncoding::Pcm16).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.n_channels(), 8);
        assert_eq!(loaded.len(), 64);
    }

    #[test]
    fn missing_file_is_distinct_error() {
        let dir = tmp();
        let err = load_wav(&dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(err, AudioError::FileNotFound(_)), "{err}");
    }

    #[test]
    fn truncated_data_chunk_is_detected() {
        let dir = tmp();
        let path = dir.path().join("trunc.wav");
        let clip = AudioClip::from_mono(16000, vec![0.5; 1000]);
        write_wav(&clip, &path, SampleEncoding::Pcm16).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(&bytes[..bytes.len() / 2]).unwrap();
        drop(f);
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, AudioError::TruncatedWav(_)), "{err}");
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tmp();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"RIFFxxxxWAVEjunkjunkjunk").unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, AudioError::MalformedWav { .. }), "{err}");
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("b24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..16 {
            w.write_sample(0i32).unwrap();
        }
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedEncoding { .. }), "{err}");
    }

    #[test]
    fn pcm16_round_trip_is_lossless_after_quantization() {
        let dir = tmp();
        let path = dir.path().join("rt.wav");
        let mut rng = crate::rng::Rng::from_seed(8);
        let samples: Vec<f64> = (0..4096).map(|_| rng.range(-1.0, 1.0)).collect();
        let clip = AudioClip::from_mono(16000, samples.clone());
        write_wav(&clip, &path, SampleEncoding::Pcm16).unwrap();
        let loaded = load_wav(&path).unwrap();
        for (&orig, &got) in samples.iter().zip(loaded.mono().unwrap()) {
            let quantized = (orig * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0;
            assert_eq!(got, quantized);
        }
        // A second round trip is bit-exact.
        let path2 = dir.path().join("rt2.wav");
        write_wav(&loaded, &path2, SampleEncoding::Pcm16).unwrap();
        let again = load_wav(&path2).unwrap();
        assert_eq!(loaded, again);
    }

    #[test]
    fn float32_round_trip() {
        let dir = tmp();
        let path = dir.path().join("f32.wav");
        let samples: Vec<f64> = (0..128).map(|i| (i as f64 / 128.0) - 0.5).collect();
        let clip = AudioClip::from_mono(8000, samples.clone());
        write_wav(&clip, &path, SampleEncoding::Float32).unwrap();
        let loaded = load_wav(&path).unwrap();
        for (&orig, &got) in samples.iter().zip(loaded.mono().unwrap()) {
            assert_eq!(got, orig as f32 as f64);
        }
    }
}

//! Mono RIFF/WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::config::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Wav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads a mono WAV file: 16/24/32-bit integer PCM or 32-bit float.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!("expected mono, found {} channels", spec.channels),
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                reason: format!("unsupported sample format {fmt:?} with {bits} bits"),
            })
        }
    };
    AudioBuffer::new(samples, spec.sample_rate as f64).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes a mono WAV file. PCM output is clipped to the 16-bit range.
pub fn write_wav(path: &Path, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let rate = audio.sample_rate();
    if rate.fract() != 0.0 || rate > u32::MAX as f64 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!("sample rate {rate} is not an integer"),
        });
    }
    let (bits, sample_format) = match format {
        WavFormat::Float32 => (32, SampleFormat::Float),
        WavFormat::Pcm16 => (16, SampleFormat::Int),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in audio.samples() {
        let res = match format {
            WavFormat::Float32 => writer.write_sample(s as f32),
            WavFormat::Pcm16 => {
                let v = (s * 32768.0)
                    .round()
                    .clamp(i16::MIN as f64, i16::MAX as f64);
                writer.write_sample(v as i16)
            }
        };
        res.map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_lossless_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..100)
            .map(|i| ((i as f32) * 0.013).sin() as f64)
            .collect();
        let buf = AudioBuffer::new(samples.clone(), 48_000.0).unwrap();
        write_wav(&path, &buf, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 48_000.0);
        assert_eq!(back.samples(), &samples[..]);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 * 0.05).sin() * 0.9).collect();
        let buf = AudioBuffer::new(samples.clone(), 44_100.0).unwrap();
        write_wav(&path, &buf, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Io);
    }
}

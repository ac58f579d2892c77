use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Real;

const PCM16_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
///
/// Integer samples are scaled into `[-1, 1)` by dividing by 32768.
pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    let reader = WavReader::open(path).map_err(|source| Error::Wav { path: path.into(), source })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio {
            path: path.into(),
            what: format!("mono required, file has {} channels", spec.channels),
        });
    }
    let wav_err = |source| Error::Wav { path: path.into(), source };
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| T::of(v as f64 / PCM16_SCALE)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| T::of(v as f64)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            let kind = match format {
                SampleFormat::Int => "integer",
                SampleFormat::Float => "float",
            };
            return Err(Error::UnsupportedAudio {
                path: path.into(),
                what: format!(
                    "unsupported bit depth: {bits}-bit {kind} PCM (16-bit integer or 32-bit float required)"
                ),
            });
        }
    };
    Ok(Waveform { samples, sample_rate: spec.sample_rate })
}

/// Writes a mono 16-bit PCM WAV file. Out-of-range samples are clipped.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let path = path.as_ref();
    w.ensure_finite("write_wav")?;
    if w.sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav { path: path.into(), source };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample(to_pcm16(s.to_f64_lossy())).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

fn to_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_raw_pcm16(path: &Path, channels: u16, samples: &[i16]) {
        let spec = WavSpec { channels, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_pcm16(&p, 1, &[0, 16384, -32768]);
        let w: Waveform<f64> = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate, 8000);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw_pcm16(&p, 2, &[0, 0, 1, 1]);
        let err = read_wav::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("mono required"), "{err}");
    }

    #[test]
    fn unsupported_depth_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.wav");
        let spec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 24, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        let err = read_wav::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("24-bit"), "{err}");
    }

    #[test]
    fn missing_file() {
        let err = read_wav::<f64>("/nonexistent/x.wav").unwrap_err().to_string();
        assert!(err.contains("not found"), "{err}");
    }

    #[test]
    fn float_wav_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [0.25f32, -0.75, 1.25] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let r: Waveform<f32> = read_wav(&p).unwrap();
        assert_eq!(r.samples, vec![0.25, -0.75, 1.25]);
        assert_eq!(r.sample_rate, 16000);
    }

    #[test]
    fn one_second_of_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &Waveform::<f64>::zeros(8000, 8000)).unwrap();
        let reader = WavReader::open(&p).unwrap();
        assert_eq!(reader.duration(), 8000);
        assert_eq!(reader.spec().sample_rate, 8000);
        assert_eq!(reader.spec().bits_per_sample, 16);
    }

    #[test]
    fn clipping_saturates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        write_wav(&p, &Waveform::new(vec![1.5f64, -3.0, 0.999_99], 8000)).unwrap();
        let raw: Vec<i16> = WavReader::open(&p).unwrap().into_samples::<i16>().map(|s| s.unwrap()).collect();
        assert_eq!(raw, vec![32767, -32768, 32767]);
    }

    #[test]
    fn non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.wav");
        assert!(write_wav(&p, &Waveform::new(vec![f64::NAN], 8000)).is_err());
    }

    #[test]
    fn round_trip_random_waveforms() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tol = 1.0 / 32768.0;
        for i in 0..100 {
            let len = rng.gen_range(1..2000);
            let w = Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0 - tol)).collect::<Vec<f64>>(), 8000);
            let p = dir.path().join(format!("{i}.wav"));
            write_wav(&p, &w).unwrap();
            let r: Waveform<f64> = read_wav(&p).unwrap();
            assert_eq!(r.len(), w.len());
            for (a, b) in w.samples.iter().zip(&r.samples) {
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }
}

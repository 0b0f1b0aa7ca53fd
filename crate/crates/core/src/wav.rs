//! WAV ingestion for recorded microphone buffers.

use std::path::Path;

use crate::acoustic::SampleBuffer;
use crate::error::{Error, Result};

/// Read the first `max_channels` channels of a PCM (16/24/32-bit) or float32
/// WAV file as separate buffers, scaled to [-1, 1].
pub fn read_wav(path: &Path, max_channels: usize) -> Result<Vec<SampleBuffer>> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let keep = channels.min(max_channels.max(1));
    let rate = spec.sample_rate as f64;

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Input(format!(
                "{}: unsupported WAV sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };

    (0..keep)
        .map(|c| {
            let ch: Vec<f64> = interleaved.iter().skip(c).step_by(channels).copied().collect();
            SampleBuffer::new(ch, rate)
        })
        .collect()
}

/// Write equal-length buffers as an interleaved float32 WAV.
pub fn write_wav_f32(path: &Path, channels: &[SampleBuffer]) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Input("no channels to write".into()))?;
    if channels
        .iter()
        .any(|c| c.len() != first.len() || c.sample_rate_hz != first.sample_rate_hz)
    {
        return Err(Error::Input("channels differ in length or rate".into()));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate_hz.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for i in 0..first.len() {
        for c in channels {
            w.write_sample(c.samples[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_stereo_is_split_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s16.wav");
        let spec = hound::WavSpec {
            channels: 3,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..10i16 {
            w.write_sample(i * 1000).unwrap();
            w.write_sample(-i * 1000).unwrap();
            w.write_sample(7i16).unwrap();
        }
        w.finalize().unwrap();

        let ch = read_wav(&p, 2).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0].sample_rate_hz, 48_000.0);
        assert_eq!(ch[0].len(), 10);
        assert!((ch[0].samples[3] - 3000.0 / 32768.0).abs() < 1e-12);
        assert!((ch[1].samples[3] + 3000.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f32.wav");
        let a = SampleBuffer::new(vec![0.5, -0.25, 0.125], 44_100.0).unwrap();
        write_wav_f32(&p, std::slice::from_ref(&a)).unwrap();
        let back = read_wav(&p, 4).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], a);
    }
}

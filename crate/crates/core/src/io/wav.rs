//! WAV reading (PCM 16/24/32-bit and 32-bit float) and float32 writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::audio::AudioError;

/// Deinterleaved channels scaled to `[-1, 1)` plus the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32), AudioError> {
    if !path.exists() {
        return Err(AudioError::FileNotFound(path.display().to_string()));
    }
    let bad = |e: hound::Error| AudioError::BadWav(format!("{}: {e}", path.display()));
    let mut reader = WavReader::open(path).map_err(bad)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch == 0 {
        return Err(AudioError::BadWav(format!("{}: no channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(bad)?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(bad)?
        }
        (fmt, bits) => {
            return Err(AudioError::BadWav(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    Ok((channels, spec.sample_rate))
}

/// Writes equal-length channels as interleaved 32-bit float.
pub fn write_wav_f32(path: &Path, channels: &[Vec<f32>], sample_rate: u32) -> Result<(), AudioError> {
    let bad = |e: hound::Error| AudioError::BadWav(format!("{}: {e}", path.display()));
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let len = channels.first().map_or(0, Vec::len);
    let mut w = WavWriter::create(path, spec).map_err(bad)?;
    for i in 0..len {
        for ch in channels {
            w.write_sample(ch[i]).map_err(bad)?;
        }
    }
    w.finalize().map_err(bad)
}

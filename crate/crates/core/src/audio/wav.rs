use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, AudioError, SAMPLE_RATE_HZ};

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::CorruptFile(format!("truncated data: {e}"))
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported encoding".into()),
        other => AudioError::CorruptFile(other.to_string()),
    }
}

/// Reads a mono 16 kHz WAV (PCM16 or float32) scaled to [-1, 1].
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let reader = WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE_HZ} Hz",
            spec.sample_rate
        )));
    }
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<Vec<_>, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<Vec<_>, _>>(),
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples, expected 16-bit PCM or 32-bit float"
            )))
        }
    }
    .map_err(|e| AudioError::CorruptFile(format!("unreadable sample data: {e}")))?;
    AudioBuffer::new(samples).map_err(|_| AudioError::CorruptFile("non-finite sample".into()))
}

/// Writes 16-bit PCM mono 16 kHz, clamping to [-1, 1] first.
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in buffer.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

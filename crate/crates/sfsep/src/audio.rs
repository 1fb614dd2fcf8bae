//! Mono audio buffers and strict WAV I/O.
//!
//! The pipeline runs on f64 samples internally. Readers accept exactly what the
//! rest of the system can handle — mono PCM16 or float32 at the configured
//! sample rate — and refuse everything else instead of resampling silently.

use std::path::Path;

use crate::error::{Error, Result};

/// A mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    /// Build a buffer, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a mono WAV file, requiring `expected_fs` and PCM16 or float32 samples.
pub fn read_wav(path: &Path, expected_fs: u32) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            found: format!("{} channels", spec.channels),
        });
    }
    if spec.sample_rate != expected_fs {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            found: spec.sample_rate,
            expected: expected_fs,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?,
        (fmt, bits) => {
            return Err(Error::WavFormat {
                path: path.to_path_buf(),
                found: format!("{fmt:?} {bits}-bit"),
            })
        }
    };
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!("non-finite sample at index {i}"),
        });
    }
    Ok(AudioBuffer {
        samples,
        sample_rate: expected_fs,
    })
}

/// Write a mono float32 WAV file. Output bits are a pure function of the
/// buffer contents, so identical buffers give identical files.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for &s in &audio.samples {
        writer.write_sample(s as f32).map_err(|e| Error::Wav {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

//! Framing, windows, STFT/iSTFT, COLA checking, and frame-rate upsampling.
//!
//! Frames are left-aligned: frame n covers samples [n·hop, n·hop + fft_size),
//! and every frame-rate parameter series uses the same alignment, so frame n of
//! any series describes that same sample span. The tail is zero-padded so the
//! frames cover the whole signal; for a signal whose length is a multiple of
//! the hop this gives exactly len/hop frames (4 s at 16 kHz with fft 512 and
//! hop 256 → 257 × 250 spectrogram).

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

/// Window function selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowKind {
    /// Periodic Hann (exact COLA at 50% overlap).
    Hann,
    /// All-ones.
    Rect,
}

/// STFT analysis grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftConfig {
    pub fn hann(fft_size: usize, hop: usize) -> Self {
        StftConfig {
            fft_size,
            hop,
            window: WindowKind::Hann,
        }
    }

    /// Number of frequency bins F = fft_size/2 + 1.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames covering `len` samples (tail zero-padded).
    pub fn num_frames(&self, len: usize) -> usize {
        num_frames(len, self.fft_size, self.hop)
    }

    /// Materialize the analysis window.
    pub fn window_samples(&self) -> Vec<f64> {
        window_samples(self.window, self.fft_size)
    }
}

/// Frames covering `len` samples with left-aligned framing and zero-padded tail.
pub fn num_frames(len: usize, fft_size: usize, hop: usize) -> usize {
    debug_assert!(hop > 0 && fft_size > 0);
    // len/hop frames start inside the signal; make sure the span past the last
    // frame start is still covered when fft_size < 2*hop.
    let starts = (len / hop).max(1);
    let covering = if len > fft_size {
        (len - fft_size).div_ceil(hop) + 1
    } else {
        1
    };
    starts.max(covering)
}

/// Samples of a periodic window of the given kind and length.
pub fn window_samples(kind: WindowKind, len: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rect => vec![1.0; len],
        WindowKind::Hann => (0..len)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
            .collect(),
    }
}

/// The constant that shifted copies of `window` sum to at the given hop, or
/// `None` when the sum is not constant (relative deviation above 1e-10).
pub fn cola_constant(window: &[f64], hop: usize) -> Option<f64> {
    if hop == 0 || window.is_empty() || hop > window.len() {
        return None;
    }
    let len = window.len();
    // Overlap-add enough shifted copies that a central stretch is fully
    // covered, then inspect that stretch.
    let shifts = 2 * len.div_ceil(hop) + 4;
    let mut acc = vec![0.0f64; len + shifts * hop];
    for s in 0..shifts {
        for (i, &w) in window.iter().enumerate() {
            acc[s * hop + i] += w;
        }
    }
    let interior = &acc[len..=(shifts - 1) * hop];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    if mean <= 0.0 {
        return None;
    }
    let max_dev = interior
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0f64, f64::max);
    (max_dev / mean <= 1e-10).then_some(mean)
}

/// True when (window, hop) satisfies the constant-overlap-add condition.
pub fn check_cola(window: &[f64], hop: usize) -> bool {
    cola_constant(window, hop).is_some()
}

/// Complex spectrogram on an `StftConfig` grid: F bins × N frames.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub values: Array2<Complex64>,
    pub cfg: StftConfig,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Per-bin magnitudes.
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }
}

/// Rectangular left-aligned framing with zero-padded tail: N × fft_size.
pub fn frame_signal(x: &[f64], fft_size: usize, hop: usize) -> Array2<f64> {
    let n_frames = num_frames(x.len(), fft_size, hop);
    let mut frames = Array2::zeros((n_frames, fft_size));
    for n in 0..n_frames {
        let start = n * hop;
        for t in 0..fft_size {
            if start + t < x.len() {
                frames[[n, t]] = x[start + t];
            }
        }
    }
    frames
}

/// Windowed STFT. Input must be at least one frame long.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    if x.len() < cfg.fft_size {
        return Err(Error::InputTooShort {
            len: x.len(),
            min: cfg.fft_size,
        });
    }
    let window = cfg.window_samples();
    let n_frames = cfg.num_frames(x.len());
    let bins = cfg.bins();
    let mut values = Array2::default((bins, n_frames));
    let mut buf = vec![Complex64::default(); cfg.fft_size];
    for n in 0..n_frames {
        let start = n * cfg.hop;
        for t in 0..cfg.fft_size {
            let s = if start + t < x.len() { x[start + t] } else { 0.0 };
            buf[t] = Complex64::new(s * window[t], 0.0);
        }
        fft::fft(&mut buf);
        for k in 0..bins {
            values[[k, n]] = buf[k];
        }
    }
    Ok(Spectrogram { values, cfg: *cfg })
}

/// Inverse STFT: overlap-add of inverse frames scaled by the COLA constant.
///
/// Output length is (N−1)·hop + fft_size; reconstruction is exact on the
/// fully-overlapped interior and fades over one window length at the edges.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = &spec.cfg;
    let window = cfg.window_samples();
    let cola = cola_constant(&window, cfg.hop).ok_or(Error::NonCola {
        fft: cfg.fft_size,
        hop: cfg.hop,
    })?;
    let bins = cfg.bins();
    if spec.bins() != bins {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins(),
            bins
        )));
    }
    let n_frames = spec.frames();
    let fft_size = cfg.fft_size;
    let mut out = vec![0.0f64; (n_frames - 1) * cfg.hop + fft_size];
    let mut buf = vec![Complex64::default(); fft_size];
    let scale = 1.0 / (fft_size as f64 * cola);
    for n in 0..n_frames {
        buf[0] = spec.values[[0, n]];
        for k in 1..bins {
            buf[k] = spec.values[[k, n]];
            if k != fft_size - k {
                buf[fft_size - k] = spec.values[[k, n]].conj();
            }
        }
        fft::ifft(&mut buf);
        let start = n * cfg.hop;
        for t in 0..fft_size {
            out[start + t] += buf[t].re * scale;
        }
    }
    Ok(out)
}

/// Linear interpolation from frame rate to sample rate. Frame n's value is
/// anchored at sample n·hop; values are held constant past the last anchor.
pub fn linear_upsample(frames: &[f64], hop: usize, total_len: usize) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::invalid("linear_upsample needs at least one frame"));
    }
    if total_len == 0 || hop == 0 {
        return Err(Error::invalid("linear_upsample needs positive hop and length"));
    }
    let last = frames.len() - 1;
    let out = (0..total_len)
        .map(|t| {
            let n = t / hop;
            if n >= last {
                frames[last]
            } else {
                let frac = (t - n * hop) as f64 / hop as f64;
                frames[n] * (1.0 - frac) + frames[n + 1] * frac
            }
        })
        .collect();
    Ok(out)
}

/// Overlapping-Hann-window upsampling from frame rate to sample rate.
///
/// Frame n contributes value·w(t − n·hop) with w a Hann bump of width 2·hop
/// centered on the anchor sample n·hop; adjacent bumps sum to one everywhere,
/// and virtual edge frames hold the first/last values so constants stay exact.
pub fn hann_upsample(frames: &[f64], hop: usize, total_len: usize) -> Vec<f64> {
    if frames.is_empty() || hop == 0 {
        return vec![0.0; total_len];
    }
    let last = frames.len() - 1;
    (0..total_len)
        .map(|t| {
            let n = t / hop;
            let frac = (t - n * hop) as f64 / hop as f64;
            // Raised-cosine crossfade between the anchors at n·hop and (n+1)·hop.
            let w_next = 0.5 * (1.0 - (std::f64::consts::PI * frac).cos());
            let a = frames[n.min(last)];
            let b = frames[(n + 1).min(last)];
            a * (1.0 - w_next) + b * w_next
        })
        .collect()
}

/// Root-mean-square of a slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

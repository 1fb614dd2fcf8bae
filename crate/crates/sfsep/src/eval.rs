//! Objective separation metrics: scale-invariant source-to-distortion ratio
//! (SI-SDR), its non-overlapping one-second framewise protocol with an
//! energy-based exclusion rule, and a phase-blind spectral SNR computed on
//! magnitude spectrograms.

use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Metrics are clamped to +/- this many dB so exact matches stay finite.
pub const DB_CAP: f64 = 100.0;

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if residual <= 0.0 {
        return DB_CAP;
    }
    if signal <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (signal / residual).log10()).clamp(-DB_CAP, DB_CAP)
}

/// SI-SDR in dB: the reference is rescaled by the optimal projection
/// coefficient before comparing energies, so the metric ignores any positive
/// rescaling of the estimate.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate length {} != reference length {}",
            est.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::SilentReference);
    }
    let dot: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let residual_energy: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    Ok(ratio_db(target_energy, residual_energy))
}

/// SI-SDR of one evaluation frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub index: usize,
    pub si_sdr_db: f64,
}

/// Framewise evaluation of one (estimate, reference) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEval {
    /// Retained frames with their scores.
    pub frames: Vec<FrameMetric>,
    /// Indices of frames whose reference energy fell below the threshold.
    pub excluded: Vec<usize>,
    /// Mean over retained frames; absent when everything was excluded.
    pub mean_db: Option<f64>,
    /// Median over retained frames.
    pub median_db: Option<f64>,
}

/// Cut both signals into non-overlapping frames of `frame_len` samples
/// (trailing partial frame dropped), score each with SI-SDR, and exclude
/// frames whose reference energy is below `energy_thresh`.
pub fn framewise_eval(
    est: &[f64],
    reference: &[f64],
    frame_len: usize,
    energy_thresh: f64,
) -> Result<SourceEval> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate length {} != reference length {}",
            est.len(),
            reference.len()
        )));
    }
    if frame_len == 0 {
        return Err(Error::invalid("frame_len must be positive"));
    }
    let mut frames = Vec::new();
    let mut excluded = Vec::new();
    for (index, start) in (0..est.len() / frame_len).map(|i| (i, i * frame_len)) {
        let r = &reference[start..start + frame_len];
        let energy: f64 = r.iter().map(|v| v * v).sum();
        if energy < energy_thresh {
            excluded.push(index);
            continue;
        }
        frames.push(FrameMetric {
            index,
            si_sdr_db: si_sdr(&est[start..start + frame_len], r)?,
        });
    }
    let mut values: Vec<f64> = frames.iter().map(|f| f.si_sdr_db).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_db = if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    };
    let median_db = if values.is_empty() {
        None
    } else if values.len() % 2 == 1 {
        Some(values[values.len() / 2])
    } else {
        Some((values[values.len() / 2 - 1] + values[values.len() / 2]) / 2.0)
    };
    Ok(SourceEval {
        frames,
        excluded,
        mean_db,
        median_db,
    })
}

/// SNR between magnitude spectrograms: 10 log10 of reference magnitude
/// energy over the energy of the magnitude difference. Blind to any per-bin
/// phase of the estimate.
pub fn spectral_snr(est: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate length {} != reference length {}",
            est.len(),
            reference.len()
        )));
    }
    let s = stft(reference, cfg)?.magnitude();
    let s_hat = stft(est, cfg)?.magnitude();
    let signal: f64 = s.iter().map(|v| v * v).sum();
    if signal <= 0.0 {
        return Err(Error::SilentReference);
    }
    let residual: f64 = s
        .iter()
        .zip(s_hat.iter())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Ok(ratio_db(signal, residual))
}

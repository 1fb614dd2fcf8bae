//! Pitch-informed NMF baseline: harmonic-comb templates seeded from the F0
//! tracks, generalized Kullback-Leibler multiplicative updates, and soft-mask
//! separation that partitions activations by nearest template pitch.

use ndarray::Array2;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::f0::{hz_to_midi, midi_to_hz};
use crate::synth::F0Track;
use crate::wiener::{masks_from_magnitudes, wiener_separate, MaskSet};

/// Floor applied to model spectrogram entries inside divisions and logs.
pub const NMF_EPS: f64 = 1e-12;

/// Small activation placed on templates within half a semitone of an active pitch.
pub const NEIGHBOR_FLOOR: f64 = 1e-4;

/// Pitch grid resolution in semitones: templates are keyed to 0.1-semitone steps.
pub const PITCH_STEP: f64 = 0.1;

/// Nonnegative spectrogram factorization with one template per quantized pitch.
#[derive(Debug, Clone)]
pub struct NmfModel {
    /// F x R template matrix.
    pub w: Array2<f64>,
    /// R x N activation matrix.
    pub h: Array2<f64>,
    /// MIDI pitch of each template, on the 0.1-semitone grid.
    pub template_pitch: Vec<f64>,
}

impl NmfModel {
    /// Number of templates.
    pub fn rank(&self) -> usize {
        self.template_pitch.len()
    }

    /// Reconstruct the model spectrogram W*H.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

/// Quantize a frequency in Hz to the template pitch grid; None for unvoiced.
pub fn quantize_pitch(f_hz: f64) -> Option<i64> {
    hz_to_midi(f_hz).map(|midi| (midi / PITCH_STEP).round() as i64)
}

/// Build one harmonic comb template: partial p at amplitude 1/p, each peak
/// spread over its two neighboring bins with Gaussian weights.
fn harmonic_template(f0_hz: f64, num_bins: usize, fft_size: usize, fs: f64, partials: usize) -> Vec<f64> {
    let mut template = vec![0.0; num_bins];
    let nyquist = fs / 2.0;
    for p in 1..=partials {
        let freq = p as f64 * f0_hz;
        if freq > nyquist {
            break;
        }
        let center = (freq / fs * fft_size as f64).round() as i64;
        let amp = 1.0 / p as f64;
        for d in -1i64..=1 {
            let bin = center + d;
            if bin < 0 || bin >= num_bins as i64 {
                continue;
            }
            // Gaussian blur with sigma = 1 bin, truncated to +/-1 bin.
            template[bin as usize] += amp * (-0.5 * (d * d) as f64).exp();
        }
    }
    template
}

/// Seed templates and activations from the per-source F0 tracks.
///
/// One template is created per distinct quantized pitch observed anywhere in
/// the tracks. Activations start at 1 where that exact pitch is active in some
/// track, at a small floor on templates within half a semitone of an active
/// pitch, and at exactly 0 elsewhere; the zeros are invariant under the
/// multiplicative updates.
pub fn init_from_f0(tracks: &[F0Track], num_frames: usize, cfg: &Config) -> Result<NmfModel> {
    if tracks.is_empty() {
        return Err(Error::invalid("nothing to initialize: no F0 tracks"));
    }
    for t in tracks {
        if t.f0_frames.len() != num_frames {
            return Err(Error::shape(format!(
                "F0 track has {} frames, spectrogram has {num_frames}",
                t.f0_frames.len()
            )));
        }
    }
    let mut keys: Vec<i64> = tracks
        .iter()
        .flat_map(|t| t.f0_frames.iter().filter_map(|&f| quantize_pitch(f)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.is_empty() {
        return Err(Error::invalid(
            "nothing to initialize: all F0 tracks are silent",
        ));
    }

    let fft_size = cfg.mask_fft;
    let num_bins = fft_size / 2 + 1;
    let fs = cfg.fs as f64;
    let rank = keys.len();
    let template_pitch: Vec<f64> = keys.iter().map(|&k| k as f64 * PITCH_STEP).collect();

    let mut w = Array2::zeros((num_bins, rank));
    for (r, &pitch) in template_pitch.iter().enumerate() {
        let col = harmonic_template(midi_to_hz(pitch), num_bins, fft_size, fs, cfg.nmf_partials);
        for (f, v) in col.into_iter().enumerate() {
            w[[f, r]] = v;
        }
    }

    let mut h = Array2::zeros((rank, num_frames));
    for track in tracks {
        for (n, &f) in track.f0_frames.iter().enumerate() {
            let Some(midi) = hz_to_midi(f) else { continue };
            let key = (midi / PITCH_STEP).round() as i64;
            for (r, &k) in keys.iter().enumerate() {
                let dist = (template_pitch[r] - midi).abs();
                if k == key {
                    h[[r, n]] = 1.0;
                } else if dist <= 0.5 {
                    h[[r, n]] = f64::max(h[[r, n]], NEIGHBOR_FLOOR);
                }
            }
        }
    }

    Ok(NmfModel {
        w,
        h,
        template_pitch,
    })
}

/// Generalized KL divergence D(V || W*H) with the model floored at NMF_EPS.
pub fn kl_divergence(v: &Array2<f64>, model: &NmfModel) -> f64 {
    let est = model.reconstruct();
    let mut total = 0.0;
    for (x, y) in v.iter().zip(est.iter()) {
        let y = y.max(NMF_EPS);
        if *x > 0.0 {
            total += x * (x / y).ln() - x + y;
        } else {
            total += y;
        }
    }
    total
}

/// Run multiplicative generalized-KL updates on both factors.
///
/// Returns the divergence trace: one value before any update plus one after
/// each iteration. Zero entries of H (and W) remain exactly zero.
pub fn nmf_fit(v: &Array2<f64>, model: &mut NmfModel, iters: usize) -> Result<Vec<f64>> {
    let (f_bins, n_frames) = v.dim();
    if model.w.dim() != (f_bins, model.rank()) || model.h.dim() != (model.rank(), n_frames) {
        return Err(Error::shape(format!(
            "factor shapes {:?}/{:?} do not match spectrogram {:?}",
            model.w.dim(),
            model.h.dim(),
            v.dim()
        )));
    }
    if v.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("spectrogram must be nonnegative and finite"));
    }
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(kl_divergence(v, model));
    for _ in 0..iters {
        // H <- H * (W^T (V / WH)) / (W^T 1)
        let est = model.w.dot(&model.h);
        let ratio = azip_ratio(v, &est);
        let numer = model.w.t().dot(&ratio);
        let w_col_sums: Vec<f64> = (0..model.rank())
            .map(|r| model.w.column(r).sum())
            .collect();
        for r in 0..model.rank() {
            let denom = w_col_sums[r].max(NMF_EPS);
            for n in 0..n_frames {
                model.h[[r, n]] *= numer[[r, n]] / denom;
            }
        }
        // W <- W * ((V / WH) H^T) / (1 H^T)
        let est = model.w.dot(&model.h);
        let ratio = azip_ratio(v, &est);
        let numer = ratio.dot(&model.h.t());
        let h_row_sums: Vec<f64> = (0..model.rank())
            .map(|r| model.h.row(r).sum())
            .collect();
        for r in 0..model.rank() {
            let denom = h_row_sums[r].max(NMF_EPS);
            for f in 0..f_bins {
                model.w[[f, r]] *= numer[[f, r]] / denom;
            }
        }
        trace.push(kl_divergence(v, model));
    }
    Ok(trace)
}

/// Elementwise V / max(WH, eps).
fn azip_ratio(v: &Array2<f64>, est: &Array2<f64>) -> Array2<f64> {
    let mut out = v.clone();
    for (o, e) in out.iter_mut().zip(est.iter()) {
        *o /= e.max(NMF_EPS);
    }
    out
}

/// Split the activations across sources: each template-frame activation goes
/// in full to the source whose pitch at that frame is nearest to the template
/// pitch (ties to the lower source index). The per-source parts sum to H
/// exactly.
pub fn partition_activations(model: &NmfModel, tracks: &[F0Track]) -> Result<Vec<Array2<f64>>> {
    let (rank, n_frames) = model.h.dim();
    for t in tracks {
        if t.f0_frames.len() != n_frames {
            return Err(Error::shape(format!(
                "F0 track has {} frames, activations have {n_frames}",
                t.f0_frames.len()
            )));
        }
    }
    let num_sources = tracks.len();
    if num_sources == 0 {
        return Err(Error::invalid("need at least one F0 track"));
    }
    let mut parts: Vec<Array2<f64>> = vec![Array2::zeros((rank, n_frames)); num_sources];
    for n in 0..n_frames {
        let midis: Vec<Option<f64>> = tracks.iter().map(|t| hz_to_midi(t.f0_frames[n])).collect();
        for r in 0..rank {
            if model.h[[r, n]] == 0.0 {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for (j, midi) in midis.iter().enumerate() {
                let Some(m) = midi else { continue };
                let dist = (model.template_pitch[r] - m).abs();
                if best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, j));
                }
            }
            // A nonzero activation implies some track was voiced at this frame.
            let j = best.map(|(_, j)| j).unwrap_or(0);
            parts[j][[r, n]] = model.h[[r, n]];
        }
    }
    Ok(parts)
}

/// Per-source magnitude estimates W*H_j from the fitted model.
pub fn source_magnitudes(model: &NmfModel, tracks: &[F0Track]) -> Result<Vec<Array2<f64>>> {
    let parts = partition_activations(model, tracks)?;
    Ok(parts.iter().map(|h_j| model.w.dot(h_j)).collect())
}

/// Soft masks from the per-source NMF magnitude estimates.
pub fn nmf_masks(model: &NmfModel, tracks: &[F0Track], mix_len: usize, cfg: &Config) -> Result<MaskSet> {
    let mags = source_magnitudes(model, tracks)?;
    masks_from_magnitudes(&mags, &cfg.mask_stft(), mix_len)
}

/// Full baseline: Wiener-filter the mixture with NMF-derived soft masks.
pub fn nmf_separate(
    mixture: &[f64],
    model: &NmfModel,
    tracks: &[F0Track],
    cfg: &Config,
) -> Result<Vec<Vec<f64>>> {
    let masks = nmf_masks(model, tracks, mixture.len(), cfg)?;
    wiener_separate(mixture, &masks)
}

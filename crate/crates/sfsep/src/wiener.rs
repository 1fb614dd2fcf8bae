//! Soft-mask construction from per-source magnitude estimates and Wiener
//! filtering of the mixture spectrogram.

use crate::config::Config;
use crate::dsp::{istft, stft, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Bins whose summed source magnitude falls below this get uniform masks.
pub const MASK_EPS: f64 = 1e-12;

/// Per-source soft masks on a fixed STFT grid.
#[derive(Debug, Clone)]
pub struct MaskSet {
    /// One F x N mask per source, each entry in [0, 1].
    pub masks: Vec<Array2<f64>>,
    /// The analysis grid the masks live on.
    pub cfg: StftConfig,
    /// Length in samples of the signals the grid was computed for.
    pub len: usize,
}

/// Build masks from per-source magnitude spectrograms: each bin is divided
/// by the sum over sources, and bins where everything is below the epsilon
/// floor are split uniformly.
pub fn masks_from_magnitudes(
    mags: &[Array2<f64>],
    cfg: &StftConfig,
    len: usize,
) -> Result<MaskSet> {
    if mags.is_empty() {
        return Err(Error::invalid("need at least one source"));
    }
    let dim = mags[0].dim();
    for (j, m) in mags.iter().enumerate() {
        if m.dim() != dim {
            return Err(Error::shape(format!(
                "source {j} magnitude grid {:?} != {:?}",
                m.dim(),
                dim
            )));
        }
    }
    let j = mags.len();
    let uniform = 1.0 / j as f64;
    let mut masks: Vec<Array2<f64>> = vec![Array2::zeros(dim); j];
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            let denom: f64 = mags.iter().map(|m| m[[r, c]]).sum();
            for (mask, mag) in masks.iter_mut().zip(mags) {
                mask[[r, c]] = if denom > MASK_EPS {
                    mag[[r, c]] / denom
                } else {
                    uniform
                };
            }
        }
    }
    Ok(MaskSet {
        masks,
        cfg: cfg.clone(),
        len,
    })
}

/// Analyze the synthesized sources on the mask grid and build soft masks.
pub fn soft_masks(sources: &[Vec<f64>], cfg: &Config) -> Result<MaskSet> {
    if sources.is_empty() {
        return Err(Error::invalid("need at least one source"));
    }
    let len = sources[0].len();
    if sources.iter().any(|s| s.len() != len) {
        return Err(Error::shape("sources must share one length".to_string()));
    }
    let sc = cfg.mask_stft();
    let mags: Vec<Array2<f64>> = sources
        .iter()
        .map(|s| Ok(stft(s, &sc)?.magnitude()))
        .collect::<Result<_>>()?;
    masks_from_magnitudes(&mags, &sc, len)
}

/// Apply each mask to the mixture spectrogram and resynthesize: the masked
/// estimates partition the mixture wherever the masks sum to one.
pub fn wiener_separate(mixture: &[f64], masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    if mixture.len() != masks.len {
        return Err(Error::shape(format!(
            "mixture length {} != mask grid length {}",
            mixture.len(),
            masks.len
        )));
    }
    let spec = stft(mixture, &masks.cfg)?;
    let dim = spec.values.dim();
    masks
        .masks
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            if mask.dim() != dim {
                return Err(Error::shape(format!(
                    "mask {j} grid {:?} != mixture grid {dim:?}",
                    mask.dim()
                )));
            }
            let masked = Spectrogram {
                values: &spec.values * mask,
                cfg: masks.cfg.clone(),
            };
            let mut y = istft(&masked)?;
            y.truncate(mixture.len());
            Ok(y)
        })
        .collect()
}

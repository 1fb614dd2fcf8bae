//! Multi-scale spectral reconstruction loss: L1 distance between magnitude
//! spectrograms plus L1 distance between their (floored) logs, summed over a
//! bank of FFT sizes at 75% overlap, with the exact gradient with respect to
//! the synthesized time signal.

use crate::config::Config;
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Magnitudes below this are floored before taking logs.
pub const LOG_FLOOR: f64 = 1e-7;

/// Sign with the subgradient convention sgn(0) = 0, so the gradient vanishes
/// exactly at the loss minimum (f64::signum maps +0.0 to 1.0 instead).
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss contribution of one FFT scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleLoss {
    pub scale: usize,
    pub linear: f64,
    pub log: f64,
}

/// Per-scale terms and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_scale: Vec<ScaleLoss>,
    pub total: f64,
}

/// Precomputed magnitude spectrograms of the fixed target signal, one per
/// loss scale. Computing these once per fit avoids re-analyzing the target
/// every optimizer step.
#[derive(Debug, Clone)]
pub struct LossTargets {
    mags: Vec<(StftConfig, Array2<f64>)>,
    len: usize,
}

impl LossTargets {
    /// Number of samples of the target signal.
    pub fn len(&self) -> usize {
        self.len
    }

    /// True when the target had no samples.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Analyze the target signal at every loss scale.
pub fn loss_targets(m: &[f64], cfg: &Config) -> Result<LossTargets> {
    let mut mags = Vec::with_capacity(cfg.loss_scales.len());
    for &scale in &cfg.loss_scales {
        let sc = cfg.loss_stft(scale);
        let spec = stft(m, &sc)?;
        mags.push((sc, spec.magnitude()));
    }
    Ok(LossTargets { mags, len: m.len() })
}

/// Evaluate the loss of a candidate signal against precomputed targets and,
/// when requested, its gradient with respect to every candidate sample.
pub fn loss_and_grad(
    targets: &LossTargets,
    m_tilde: &[f64],
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    if m_tilde.len() != targets.len {
        return Err(Error::shape(format!(
            "candidate length {} != target length {}",
            m_tilde.len(),
            targets.len
        )));
    }
    let mut per_scale = Vec::with_capacity(targets.mags.len());
    let mut grad = if want_grad {
        Some(vec![0.0f64; m_tilde.len()])
    } else {
        None
    };
    for (sc, target_mag) in &targets.mags {
        let c = sc.fft_size;
        let bins = sc.bins();
        let n = sc.num_frames(m_tilde.len());
        if target_mag.dim() != (bins, n) {
            return Err(Error::shape(format!(
                "target spectrogram {:?} does not match grid ({bins}, {n})",
                target_mag.dim()
            )));
        }
        let window = sc.window_samples();
        let mut linear = 0.0;
        let mut log = 0.0;
        let mut buf = vec![Complex64::default(); c];
        let mut back = vec![Complex64::default(); c];
        for i in 0..n {
            let start = i * sc.hop;
            for (t, b) in buf.iter_mut().enumerate() {
                let v = if start + t < m_tilde.len() {
                    window[t] * m_tilde[start + t]
                } else {
                    0.0
                };
                *b = Complex64::new(v, 0.0);
            }
            fft::fft(&mut buf);
            if want_grad {
                back.iter_mut().for_each(|b| *b = Complex64::default());
            }
            for b in 0..bins {
                let x = buf[b];
                let est = x.norm();
                let tgt = target_mag[[b, i]];
                let diff = tgt - est;
                linear += diff.abs();
                let log_diff = tgt.max(LOG_FLOOR).ln() - est.max(LOG_FLOOR).ln();
                log += log_diff.abs();
                if want_grad {
                    // d/d est of |tgt - est| and of |log tgt - log est|,
                    // the latter zero inside the floor
                    let mut g = -sgn(diff);
                    if est > LOG_FLOOR {
                        g += -sgn(log_diff) / est;
                    }
                    if est > 0.0 {
                        back[b] = x * (g / est);
                    }
                }
            }
            if want_grad {
                fft::ifft(&mut back);
                let g = grad.as_mut().unwrap();
                for (t, bv) in back.iter().enumerate() {
                    if start + t < g.len() {
                        g[start + t] += window[t] * bv.re;
                    }
                }
            }
        }
        per_scale.push(ScaleLoss {
            scale: c,
            linear,
            log,
        });
    }
    let total = per_scale.iter().map(|s| s.linear + s.log).sum();
    Ok((
        LossBreakdown { per_scale, total },
        grad,
    ))
}

/// Convenience wrapper: loss between two signals without a gradient.
pub fn multiscale_loss(m: &[f64], m_tilde: &[f64], cfg: &Config) -> Result<LossBreakdown> {
    if m.len() != m_tilde.len() {
        return Err(Error::shape(format!(
            "signal lengths differ: {} vs {}",
            m.len(),
            m_tilde.len()
        )));
    }
    let targets = loss_targets(m, cfg)?;
    Ok(loss_and_grad(&targets, m_tilde, false)?.0)
}

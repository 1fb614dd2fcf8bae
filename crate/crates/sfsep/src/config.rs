//! Pipeline configuration: analysis/synthesis constants and optimizer settings.
//!
//! Defaults reproduce the reference setup: 16 kHz mono audio, 512/256 synthesis
//! framing, order-20 all-pole filters, 80 harmonics, 65 noise-magnitude samples,
//! six loss scales at 75% overlap, and a 2048/256 grid for mask extraction.

use serde::{Deserialize, Serialize};

use crate::dsp::{StftConfig, WindowKind};
use crate::error::{Error, Result};

/// ADAM optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Full pipeline configuration. Every field has a default; a JSON config file
/// may override any subset of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Sample rate in Hz.
    pub fs: u32,
    /// Synthesis frame length T' in samples.
    pub fft_size: usize,
    /// Synthesis hop B in samples (T'/2).
    pub hop: usize,
    /// All-pole filter order K (even).
    pub lpc_order: usize,
    /// Number of sinusoidal harmonics I in the excitation.
    pub num_harmonics: usize,
    /// Number of noise-shaping magnitude samples L on [0, fs/2].
    pub noise_mag_len: usize,
    /// FIR length in taps for the noise/rolloff filters.
    pub ir_len: usize,
    /// FFT sizes of the multi-scale spectral loss (each used with 75% overlap).
    pub loss_scales: Vec<usize>,
    /// FFT size of the mask-extraction STFT.
    pub mask_fft: usize,
    /// Hop of the mask-extraction STFT.
    pub mask_hop: usize,
    /// Number of partials in each NMF harmonic template.
    pub nmf_partials: usize,
    /// Number of ADAM steps when fitting a mixture.
    pub fit_steps: usize,
    /// Noise seed used for synthesis and fitting.
    pub seed: u64,
    /// Optimizer settings.
    pub adam: AdamConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            fs: 16_000,
            fft_size: 512,
            hop: 256,
            lpc_order: 20,
            num_harmonics: 80,
            noise_mag_len: 65,
            ir_len: 128,
            loss_scales: vec![2048, 1024, 512, 256, 128, 64],
            mask_fft: 2048,
            mask_hop: 256,
            nmf_partials: 20,
            fit_steps: 2000,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl Config {
    /// Check internal consistency; call once after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.fs == 0 {
            return Err(Error::invalid("fs must be positive"));
        }
        if self.hop == 0 || self.fft_size == 0 {
            return Err(Error::invalid("fft_size and hop must be positive"));
        }
        if self.fft_size != 2 * self.hop {
            return Err(Error::invalid(format!(
                "synthesis framing needs fft_size = 2*hop (got {}/{})",
                self.fft_size, self.hop
            )));
        }
        if self.lpc_order == 0 || self.lpc_order % 2 != 0 {
            return Err(Error::invalid(format!(
                "lpc_order must be even and positive (got {})",
                self.lpc_order
            )));
        }
        if self.num_harmonics == 0 {
            return Err(Error::invalid("num_harmonics must be positive"));
        }
        if self.noise_mag_len < 2 {
            return Err(Error::invalid("noise_mag_len must be at least 2"));
        }
        if self.ir_len < 2 || self.ir_len > 2 * self.fft_size {
            return Err(Error::invalid(format!(
                "ir_len must lie in [2, 2*fft_size] (got {})",
                self.ir_len
            )));
        }
        if self.loss_scales.is_empty() {
            return Err(Error::invalid("loss_scales must be non-empty"));
        }
        if self.loss_scales.iter().any(|&c| c < 4) {
            return Err(Error::invalid("every loss scale must be at least 4"));
        }
        if self.mask_fft == 0 || self.mask_hop == 0 || self.mask_fft < self.mask_hop {
            return Err(Error::invalid("mask_fft/mask_hop must be positive with mask_fft >= mask_hop"));
        }
        if self.nmf_partials == 0 {
            return Err(Error::invalid("nmf_partials must be positive"));
        }
        if self.fit_steps == 0 {
            return Err(Error::invalid("fit_steps must be positive"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.eps > 0.0) {
            return Err(Error::invalid("adam settings out of range"));
        }
        Ok(())
    }

    /// STFT grid used for synthesis framing (rectangular analysis, Hann OLA).
    pub fn synth_stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            window: WindowKind::Hann,
        }
    }

    /// STFT grid used for soft-mask extraction.
    pub fn mask_stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.mask_fft,
            hop: self.mask_hop,
            window: WindowKind::Hann,
        }
    }

    /// STFT grid for one loss scale: 75% overlap.
    pub fn loss_stft(&self, scale: usize) -> StftConfig {
        StftConfig {
            fft_size: scale,
            hop: (scale / 4).max(1),
            window: WindowKind::Hann,
        }
    }

    /// Load from a JSON file, merging over defaults.
    pub fn from_json_file(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = Config::default();
        assert_eq!(cfg.fs, 16_000);
        assert_eq!(cfg.fft_size, 512);
        assert_eq!(cfg.hop, 256);
        assert_eq!(cfg.lpc_order, 20);
        assert_eq!(cfg.num_harmonics, 80);
        assert_eq!(cfg.noise_mag_len, 65);
        assert_eq!(cfg.loss_scales, vec![2048, 1024, 512, 256, 128, 64]);
        assert_eq!(cfg.mask_fft, 2048);
        assert_eq!(cfg.mask_hop, 256);
        assert_eq!(cfg.nmf_partials, 20);
        assert_eq!(cfg.fit_steps, 2000);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.adam.lr, 1e-4);
        assert_eq!(cfg.adam.beta1, 0.9);
        assert_eq!(cfg.adam.beta2, 0.999);
        assert_eq!(cfg.adam.eps, 1e-8);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_overrides_merge_with_defaults() {
        let cfg: Config = serde_json::from_str(r#"{"lpc_order": 10, "adam": {"lr": 0.01}}"#).unwrap();
        assert_eq!(cfg.lpc_order, 10);
        assert_eq!(cfg.adam.lr, 0.01);
        // untouched fields keep defaults
        assert_eq!(cfg.fft_size, 512);
        assert_eq!(cfg.adam.beta1, 0.9);
    }

    #[test]
    fn validate_rejects_odd_lpc_order() {
        let cfg = Config {
            lpc_order: 7,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validate_rejects_bad_framing() {
        let cfg = Config {
            hop: 200,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
    }
}

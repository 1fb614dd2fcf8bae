//! Per-source generative model: a harmonic oscillator bank driven by an F0
//! track plus a seeded white-noise branch, both shaped by frequency-sampled
//! FIR filters, assembled into a framed excitation and fed through per-frame
//! all-pole filters.

use crate::config::Config;
use crate::dsp::{frame_signal, hann_upsample, linear_upsample, num_frames, window_samples, WindowKind};
use crate::error::{Error, Result};
use crate::fft;
use crate::lsf::{lsf_to_lpc, allpole_filter_frames, validate_lsf, FramedSignal};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Frequency below which the fixed harmonic shaping response is flat; above
/// it the magnitude falls off at 6 dB per octave.
pub const ROLLOFF_REF_HZ: f64 = 200.0;

/// Per-frame fundamental frequency track for one source (0 = unvoiced).
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    /// One value per synthesis frame, in Hz.
    pub f0_frames: Vec<f64>,
    /// Which source this track drives; also selects the noise PRNG stream.
    pub source_index: usize,
}

impl F0Track {
    /// Validate the per-frame values against the sample rate.
    pub fn validate(&self, fs: f64) -> Result<()> {
        for (n, &f) in self.f0_frames.iter().enumerate() {
            if !f.is_finite() || f < 0.0 || f >= fs / 2.0 {
                return Err(Error::invalid(format!(
                    "f0 frame {n} out of range [0, fs/2): {f}"
                )));
            }
        }
        Ok(())
    }
}

/// All learned synthesis parameters of one source, in their natural domain
/// (amplitudes and gains already squashed positive, LSFs already angles).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// Per-frame harmonic amplitude, before Hann upsampling.
    pub alpha_frames: Vec<f64>,
    /// Per-frame noise gain.
    pub gain_frames: Vec<f64>,
    /// Per-frame line spectral frequencies, N x K.
    pub lsf_frames: Array2<f64>,
    /// Magnitude samples on [0, fs/2] defining the learned noise filter.
    pub noise_mag: Vec<f64>,
    /// Magnitude samples of the fixed harmonic shaping filter.
    pub harm_rolloff: Vec<f64>,
}

impl SourceParams {
    /// Check shapes against the expected frame count and config sizes.
    pub fn validate(&self, num_frames: usize, cfg: &Config) -> Result<()> {
        if self.alpha_frames.len() != num_frames
            || self.gain_frames.len() != num_frames
            || self.lsf_frames.nrows() != num_frames
        {
            return Err(Error::shape(format!(
                "per-frame parameter lengths {} / {} / {} != frame count {num_frames}",
                self.alpha_frames.len(),
                self.gain_frames.len(),
                self.lsf_frames.nrows()
            )));
        }
        if self.lsf_frames.ncols() != cfg.lpc_order {
            return Err(Error::shape(format!(
                "lsf width {} != lpc order {}",
                self.lsf_frames.ncols(),
                cfg.lpc_order
            )));
        }
        if self.noise_mag.len() != cfg.noise_mag_len || self.harm_rolloff.len() != cfg.noise_mag_len {
            return Err(Error::shape(format!(
                "magnitude sample counts {} / {} != {}",
                self.noise_mag.len(),
                self.harm_rolloff.len(),
                cfg.noise_mag_len
            )));
        }
        for &v in self.alpha_frames.iter().chain(&self.gain_frames).chain(&self.noise_mag) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("negative or non-finite amplitude {v}")));
            }
        }
        for row in self.lsf_frames.rows() {
            validate_lsf(row.as_slice().unwrap())?;
        }
        Ok(())
    }
}

/// Sum of masked harmonics `h(t) = sum_i sin(i*phi(t))` with the running
/// phase `phi(t) = 2*pi/fs * sum_{v<=t} f0(v)`; harmonics whose instantaneous
/// frequency exceeds fs/2 are silenced sample by sample, as are unvoiced
/// (f0 = 0) samples.
pub fn harmonic_signal(f0: &[f64], num_harmonics: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0f64; f0.len()];
    let mut phase = 0.0f64;
    let nyquist = fs / 2.0;
    for (t, &f) in f0.iter().enumerate() {
        phase = (phase + TAU * f / fs) % TAU;
        if f <= 0.0 {
            continue;
        }
        let top = ((nyquist / f).floor() as usize).min(num_harmonics);
        let mut acc = 0.0;
        for i in 1..=top {
            acc += (i as f64 * phase).sin();
        }
        out[t] = acc;
    }
    out
}

/// Magnitude samples of the fixed harmonic shaping response on a uniform
/// grid over [0, fs/2]: flat up to 200 Hz, then 6 dB/octave falloff (200/f).
pub fn rolloff_response(len: usize, fs: f64) -> Vec<f64> {
    let step = fs / 2.0 / (len - 1) as f64;
    (0..len)
        .map(|k| {
            let f = k as f64 * step;
            if f <= ROLLOFF_REF_HZ {
                1.0
            } else {
                ROLLOFF_REF_HZ / f
            }
        })
        .collect()
}

/// Design a linear-phase FIR from sampled single-sided magnitudes: mirror to
/// a full zero-phase spectrum, inverse DFT, rotate the peak to the middle
/// tap, and apply a Hann window of `ir_len` taps.
///
/// The result is delayed by `ir_len/2` samples; no compensation is applied.
pub fn fir_from_magnitude(mag: &[f64], ir_len: usize) -> Result<Vec<f64>> {
    if mag.len() < 2 {
        return Err(Error::invalid("need at least 2 magnitude samples"));
    }
    for (k, &m) in mag.iter().enumerate() {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::invalid(format!("magnitude sample {k} invalid: {m}")));
        }
    }
    let m = 2 * (mag.len() - 1);
    if ir_len < 2 || ir_len > m {
        return Err(Error::invalid(format!(
            "ir_len {ir_len} out of range [2, {m}] for {} magnitude samples",
            mag.len()
        )));
    }
    let mut buf: Vec<Complex64> = vec![Complex64::default(); m];
    for (k, &v) in mag.iter().enumerate() {
        buf[k].re = v;
        if k > 0 && k < mag.len() - 1 {
            buf[m - k].re = v;
        }
    }
    fft::ifft(&mut buf);
    let window = window_samples(WindowKind::Hann, ir_len);
    let delay = ir_len / 2;
    let mut ir = vec![0.0f64; ir_len];
    for (t, w) in window.iter().enumerate() {
        let src = (t + m - delay) % m;
        ir[t] = buf[src].re / m as f64 * w;
    }
    Ok(ir)
}

/// Uniform white noise in [-1, 1) from a seeded PRNG; `stream` keeps the
/// draws of different sources independent under one seed.
pub fn white_noise(len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Convolve a signal with a short FIR frame by frame in the frequency domain
/// (Hann analysis frames, zero-padded FFT, overlap-add), optionally scaling
/// each frame by a gain. On the fully overlapped interior this equals exact
/// convolution of the gain-faded signal with the FIR.
pub fn fir_filter_frames(
    x: &[f64],
    ir: &[f64],
    gains: Option<&[f64]>,
    fft_size: usize,
    hop: usize,
) -> Result<Vec<f64>> {
    if ir.len() > fft_size + 1 {
        return Err(Error::invalid(format!(
            "ir length {} exceeds fft_size + 1 = {}",
            ir.len(),
            fft_size + 1
        )));
    }
    let n = num_frames(x.len(), fft_size, hop);
    if let Some(g) = gains {
        if g.len() != n {
            return Err(Error::shape(format!(
                "gain frames {} != signal frames {n}",
                g.len()
            )));
        }
    }
    let pad = 2 * fft_size;
    let h = fft::fft_real(ir, pad);
    let window = window_samples(WindowKind::Hann, fft_size);
    let mut out = vec![0.0f64; x.len()];
    let mut buf = vec![Complex64::default(); pad];
    for i in 0..n {
        let start = i * hop;
        for (t, b) in buf.iter_mut().enumerate() {
            let v = if t < fft_size && start + t < x.len() {
                window[t] * x[start + t]
            } else {
                0.0
            };
            *b = Complex64::new(v, 0.0);
        }
        fft::fft(&mut buf);
        let g = gains.map_or(1.0, |g| g[i]);
        for (b, hv) in buf.iter_mut().zip(h.iter()) {
            *b *= hv * g;
        }
        fft::ifft(&mut buf);
        for (t, b) in buf.iter().enumerate() {
            if start + t < out.len() {
                out[start + t] += b.re / pad as f64;
            }
        }
    }
    Ok(out)
}

/// Assemble the framed excitation `e = [alpha*h] * r + [w * d] * g`: the
/// amplitude-scaled harmonic signal shaped by the fixed rolloff FIR, plus
/// gain-faded shaped noise, cut into left-aligned frames.
pub fn excitation(
    alpha_t: &[f64],
    h_t: &[f64],
    r_ir: &[f64],
    noise: &[f64],
    d_ir: &[f64],
    gain_frames: &[f64],
    fft_size: usize,
    hop: usize,
) -> Result<FramedSignal> {
    if alpha_t.len() != h_t.len() || alpha_t.len() != noise.len() {
        return Err(Error::shape(format!(
            "sample-rate inputs disagree: alpha {}, harmonic {}, noise {}",
            alpha_t.len(),
            h_t.len(),
            noise.len()
        )));
    }
    let ah: Vec<f64> = alpha_t.iter().zip(h_t).map(|(a, h)| a * h).collect();
    let harm = fir_filter_frames(&ah, r_ir, None, fft_size, hop)?;
    let shaped = fir_filter_frames(noise, d_ir, Some(gain_frames), fft_size, hop)?;
    let e: Vec<f64> = harm.iter().zip(&shaped).map(|(a, b)| a + b).collect();
    Ok(FramedSignal {
        frames: frame_signal(&e, fft_size, hop),
        hop,
    })
}

/// Synthesize one source: excitation through per-frame all-pole filters,
/// overlap-added and truncated to `total_len` samples. Deterministic for a
/// fixed (params, f0, seed).
pub fn synthesize_source(
    params: &SourceParams,
    f0: &F0Track,
    seed: u64,
    cfg: &Config,
    total_len: usize,
) -> Result<Vec<f64>> {
    if total_len < cfg.fft_size {
        return Err(Error::InputTooShort {
            len: total_len,
            min: cfg.fft_size,
        });
    }
    let n = num_frames(total_len, cfg.fft_size, cfg.hop);
    params.validate(n, cfg)?;
    f0.validate(cfg.fs as f64)?;
    if f0.f0_frames.len() != n {
        return Err(Error::shape(format!(
            "f0 frames {} != synthesis frames {n}",
            f0.f0_frames.len()
        )));
    }
    let f0_t = linear_upsample(&f0.f0_frames, cfg.hop, total_len)?;
    let h_t = harmonic_signal(&f0_t, cfg.num_harmonics, cfg.fs as f64);
    let alpha_t = hann_upsample(&params.alpha_frames, cfg.hop, total_len);
    let noise = white_noise(total_len, seed, f0.source_index as u64);
    let r_ir = fir_from_magnitude(&params.harm_rolloff, cfg.ir_len)?;
    let d_ir = fir_from_magnitude(&params.noise_mag, cfg.ir_len)?;
    let e = excitation(
        &alpha_t,
        &h_t,
        &r_ir,
        &noise,
        &d_ir,
        &params.gain_frames,
        cfg.fft_size,
        cfg.hop,
    )?;
    let mut coeffs = Array2::zeros((n, cfg.lpc_order));
    for (i, row) in params.lsf_frames.rows().into_iter().enumerate() {
        let a = lsf_to_lpc(row.as_slice().unwrap())?;
        coeffs.row_mut(i).iter_mut().zip(a).for_each(|(c, v)| *c = v);
    }
    let mut y = allpole_filter_frames(&e, &coeffs)?;
    y.truncate(total_len);
    Ok(y)
}

/// Synthesize every source and sum them into the model mixture.
pub fn synthesize_mixture(
    sources: &[(SourceParams, F0Track)],
    seed: u64,
    cfg: &Config,
    total_len: usize,
) -> Result<Vec<f64>> {
    if sources.is_empty() {
        return Err(Error::invalid("need at least one source"));
    }
    let mut mix = vec![0.0f64; total_len];
    for (params, f0) in sources {
        let s = synthesize_source(params, f0, seed, cfg, total_len)?;
        for (m, v) in mix.iter_mut().zip(s) {
            *m += v;
        }
    }
    Ok(mix)
}

/// One source inside a serialized parameter bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceEntry {
    pub alpha: Vec<f64>,
    pub gain: Vec<f64>,
    pub lsf: Vec<Vec<f64>>,
    pub noise_mag: Vec<f64>,
    pub f0: Vec<f64>,
}

/// Serialized bundle of everything needed to re-synthesize: config constants,
/// noise seed, output length, and per-source parameters plus F0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    pub config: Config,
    pub seed: u64,
    pub num_samples: usize,
    pub sources: Vec<SourceEntry>,
}

impl ParamsFile {
    /// Bundle in-memory parameters for serialization.
    pub fn from_sources(
        sources: &[(SourceParams, F0Track)],
        seed: u64,
        cfg: &Config,
        num_samples: usize,
    ) -> Self {
        ParamsFile {
            config: cfg.clone(),
            seed,
            num_samples,
            sources: sources
                .iter()
                .map(|(p, f)| SourceEntry {
                    alpha: p.alpha_frames.clone(),
                    gain: p.gain_frames.clone(),
                    lsf: p.lsf_frames.rows().into_iter().map(|r| r.to_vec()).collect(),
                    noise_mag: p.noise_mag.clone(),
                    f0: f.f0_frames.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild in-memory parameter structs; source index follows file order.
    pub fn to_sources(&self) -> Result<Vec<(SourceParams, F0Track)>> {
        let rolloff = rolloff_response(self.config.noise_mag_len, self.config.fs as f64);
        self.sources
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let n = s.lsf.len();
                let k = self.config.lpc_order;
                let mut lsf = Array2::zeros((n, k));
                for (i, row) in s.lsf.iter().enumerate() {
                    if row.len() != k {
                        return Err(Error::shape(format!(
                            "source {j} lsf row {i} has {} values, expected {k}",
                            row.len()
                        )));
                    }
                    lsf.row_mut(i).iter_mut().zip(row).for_each(|(c, &v)| *c = v);
                }
                Ok((
                    SourceParams {
                        alpha_frames: s.alpha.clone(),
                        gain_frames: s.gain.clone(),
                        lsf_frames: lsf,
                        noise_mag: s.noise_mag.clone(),
                        harm_rolloff: rolloff.clone(),
                    },
                    F0Track {
                        f0_frames: s.f0.clone(),
                        source_index: j,
                    },
                ))
            })
            .collect()
    }

    /// Write as pretty-printed JSON.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load from JSON and validate the embedded config.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ParamsFile = serde_json::from_str(&text)?;
        file.config.validate()?;
        Ok(file)
    }
}

/// Convenience: parameters that synthesize silence-shaped defaults for a
/// given frame count (flat filter, uniform LSFs, tiny amplitudes).
pub fn neutral_params(n: usize, cfg: &Config) -> SourceParams {
    let k = cfg.lpc_order;
    let uniform: Vec<f64> = (1..=k).map(|i| i as f64 * PI / (k + 1) as f64).collect();
    let mut lsf = Array2::zeros((n, k));
    for mut row in lsf.rows_mut() {
        row.iter_mut().zip(&uniform).for_each(|(c, &v)| *c = v);
    }
    SourceParams {
        alpha_frames: vec![1e-7; n],
        gain_frames: vec![1e-7; n],
        lsf_frames: lsf,
        noise_mag: vec![0.5; cfg.noise_mag_len],
        harm_rolloff: rolloff_response(cfg.noise_mag_len, cfg.fs as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0f64; x.len()];
        for (t, out) in y.iter_mut().enumerate() {
            for (k, &hk) in h.iter().enumerate() {
                if t >= k {
                    *out += hk * x[t - k];
                }
            }
        }
        y
    }

    fn spectrum_peak_bin(x: &[f64], n: usize) -> usize {
        let w = window_samples(WindowKind::Hann, n);
        let seg: Vec<f64> = x[x.len() - n..].iter().zip(&w).map(|(v, w)| v * w).collect();
        let spec = fft::fft_real(&seg, n);
        (0..n / 2)
            .max_by(|&a, &b| spec[a].norm().partial_cmp(&spec[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn harmonic_phase_hits_quarter_cycle() {
        // constant 100 Hz at 16 kHz: the running phase reaches pi/2 after 40
        // samples of accumulation, so sample index 39 is exactly sin(pi/2)
        let h = harmonic_signal(&vec![100.0; 64], 1, 16_000.0);
        assert!((h[39] - 1.0).abs() < 1e-12, "h[39] = {}", h[39]);
    }

    #[test]
    fn zero_f0_is_silent() {
        let h = harmonic_signal(&vec![0.0; 128], 10, 16_000.0);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unvoiced_samples_are_zero_mid_signal() {
        let mut f0 = vec![200.0; 100];
        f0[50] = 0.0;
        let h = harmonic_signal(&f0, 3, 16_000.0);
        assert_eq!(h[50], 0.0);
        assert!(h[49] != 0.0 || h[51] != 0.0);
    }

    #[test]
    fn nyquist_mask_silences_folded_harmonics() {
        // at f0 = 5 kHz / fs = 16 kHz the second harmonic sits above Nyquist,
        // so asking for two harmonics must give exactly the one-harmonic tone
        let f0 = vec![5_000.0; 4096];
        let one = harmonic_signal(&f0, 1, 16_000.0);
        let two = harmonic_signal(&f0, 2, 16_000.0);
        assert_eq!(one, two);
        assert_eq!(spectrum_peak_bin(&one, 4096), 4096 * 5 / 16);
    }

    #[test]
    fn octave_shift_doubles_peak_bin() {
        let lo = harmonic_signal(&vec![250.0; 8192], 1, 16_000.0);
        let hi = harmonic_signal(&vec![500.0; 8192], 1, 16_000.0);
        let b_lo = spectrum_peak_bin(&lo, 4096);
        let b_hi = spectrum_peak_bin(&hi, 4096);
        assert_eq!(b_lo, 64);
        assert_eq!(b_hi, 128);
    }

    #[test]
    fn rolloff_reference_points() {
        // 81 samples over [0, 8 kHz] puts the grid exactly on 100 Hz steps
        let r = rolloff_response(81, 16_000.0);
        assert_eq!(r[1], 1.0); // 100 Hz, flat region
        assert_eq!(r[2], 1.0); // 200 Hz, reference point
        assert!((r[4] - 0.5).abs() < 1e-15); // 400 Hz, one octave up
        assert!((r[80] - 200.0 / 8000.0).abs() < 1e-15);
    }

    #[test]
    fn flat_magnitude_gives_windowed_delta() {
        let ir = fir_from_magnitude(&vec![1.0; 65], 128).unwrap();
        assert!((ir[64] - 1.0).abs() < 1e-12);
        let off: f64 = ir.iter().enumerate().filter(|&(t, _)| t != 64).map(|(_, v)| v.abs()).sum();
        assert!(off < 1e-10, "off-peak mass {off}");
    }

    #[test]
    fn zero_magnitude_gives_zero_ir() {
        let ir = fir_from_magnitude(&vec![0.0; 65], 128).unwrap();
        assert!(ir.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fir_is_linear_phase_symmetric() {
        let mag: Vec<f64> = (0..65).map(|k| 1.0 / (1.0 + k as f64 * 0.1)).collect();
        let ir = fir_from_magnitude(&mag, 128).unwrap();
        for s in 1..64 {
            assert!((ir[64 + s] - ir[64 - s]).abs() < 1e-12, "s={s}");
        }
    }

    #[test]
    fn halfband_brickwall_measures_minus_six_db_at_cutoff() {
        let mag: Vec<f64> = (0..65).map(|k| if k < 32 { 1.0 } else { 0.0 }).collect();
        let ir = fir_from_magnitude(&mag, 128).unwrap();
        let spec = fft::fft_real(&ir, 1024);
        // the brick-wall edge lies between magnitude samples 31 and 32
        // (bins 248..256 of 1024); the smoothed response crosses -6 dB there
        let near_half = (240..=264)
            .map(|k| (spec[k].norm() - 0.5).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(near_half < 0.05, "no -6 dB crossing near cutoff: {near_half}");
        let pass = spec[64].norm();
        let stop = spec[448].norm();
        assert!((pass - 1.0).abs() < 0.01, "passband {pass}");
        assert!(stop < 0.01, "stopband {stop}");
        // the falling transition (below the ~0.2% passband-edge overshoot,
        // above the stopband ripple) is monotone
        let mags: Vec<f64> = (192..=320).map(|k| spec[k].norm()).collect();
        let fall: Vec<f64> = mags.iter().copied().filter(|&v| (0.02..0.98).contains(&v)).collect();
        assert!(fall.len() >= 3, "transition unexpectedly sharp: {} bins", fall.len());
        for w in fall.windows(2) {
            assert!(w[1] <= w[0] + 2e-3, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fir_rejects_negative_magnitudes() {
        assert!(fir_from_magnitude(&[1.0, -0.1, 0.5], 4).is_err());
        assert!(fir_from_magnitude(&[1.0], 4).is_err());
        assert!(fir_from_magnitude(&vec![1.0; 65], 200).is_err());
    }

    #[test]
    fn white_noise_is_deterministic_and_stream_separated() {
        let a = white_noise(256, 7, 0);
        let b = white_noise(256, 7, 0);
        let c = white_noise(256, 7, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn frame_wise_fir_matches_direct_convolution_on_interior() {
        let x = white_noise(3000, 3, 0);
        let ir: Vec<f64> = (0..9).map(|k| 0.5f64.powi(k)).collect();
        let got = fir_filter_frames(&x, &ir, None, 512, 256).unwrap();
        let want = naive_conv(&x, &ir);
        for t in 512..2500 {
            assert!((got[t] - want[t]).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn frame_gains_fade_with_the_analysis_windows() {
        // the per-frame gain weights frame n's Hann window, so the implied
        // sample-rate gain curve is the window-weighted sum of frame gains
        let x = white_noise(3000, 4, 0);
        let ir = [0.3, -0.2, 0.5, 0.1];
        let n = num_frames(x.len(), 512, 256);
        let gains: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
        let got = fir_filter_frames(&x, &ir, Some(&gains), 512, 256).unwrap();
        let w = window_samples(WindowKind::Hann, 512);
        let mut curve = vec![0.0f64; x.len()];
        for (i, &g) in gains.iter().enumerate() {
            for (t, &wv) in w.iter().enumerate() {
                if i * 256 + t < curve.len() {
                    curve[i * 256 + t] += g * wv;
                }
            }
        }
        let faded: Vec<f64> = x.iter().zip(&curve).map(|(v, g)| v * g).collect();
        let want = naive_conv(&faded, &ir);
        for t in 512..2500 {
            assert!((got[t] - want[t]).abs() < 1e-10, "t={t}");
        }
    }

    fn test_cfg() -> Config {
        Config::default()
    }

    fn voiced_params(n: usize, cfg: &Config) -> SourceParams {
        let mut p = neutral_params(n, cfg);
        p.alpha_frames = vec![0.3; n];
        p.gain_frames = vec![0.05; n];
        p
    }

    #[test]
    fn zero_amplitudes_synthesize_silence() {
        let cfg = test_cfg();
        let len = 4096;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let mut p = neutral_params(n, &cfg);
        p.alpha_frames = vec![0.0; n];
        p.gain_frames = vec![0.0; n];
        let f0 = F0Track { f0_frames: vec![200.0; n], source_index: 0 };
        let y = synthesize_source(&p, &f0, 1, &cfg, len).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_amplitudes_with_unvoiced_f0_stay_below_minus_80_dbfs() {
        let cfg = test_cfg();
        let len = 4096;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let p = neutral_params(n, &cfg);
        let f0 = F0Track { f0_frames: vec![0.0; n], source_index: 0 };
        let y = synthesize_source(&p, &f0, 1, &cfg, len).unwrap();
        let peak = y.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak < 1e-4, "peak {peak}");
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = test_cfg();
        let len = 4096;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let p = voiced_params(n, &cfg);
        let f0 = F0Track { f0_frames: vec![220.0; n], source_index: 0 };
        let a = synthesize_source(&p, &f0, 9, &cfg, len).unwrap();
        let b = synthesize_source(&p, &f0, 9, &cfg, len).unwrap();
        assert_eq!(a, b);
        let c = synthesize_source(&p, &f0, 10, &cfg, len).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_is_sum_of_sources() {
        let cfg = test_cfg();
        let len = 4096;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let p0 = voiced_params(n, &cfg);
        let mut p1 = voiced_params(n, &cfg);
        p1.alpha_frames = vec![0.2; n];
        let f0a = F0Track { f0_frames: vec![220.0; n], source_index: 0 };
        let f0b = F0Track { f0_frames: vec![330.0; n], source_index: 1 };
        let sources = vec![(p0.clone(), f0a.clone()), (p1.clone(), f0b.clone())];
        let mix = synthesize_mixture(&sources, 5, &cfg, len).unwrap();
        let s0 = synthesize_source(&p0, &f0a, 5, &cfg, len).unwrap();
        let s1 = synthesize_source(&p1, &f0b, 5, &cfg, len).unwrap();
        let summed: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| a + b).collect();
        assert_eq!(mix, summed);
    }

    #[test]
    fn uniform_lsf_rows_give_identity_filter() {
        let cfg = test_cfg();
        let k = cfg.lpc_order;
        let uniform: Vec<f64> = (1..=k).map(|i| i as f64 * PI / (k + 1) as f64).collect();
        let a = lsf_to_lpc(&uniform).unwrap();
        for (i, &v) in a.iter().enumerate() {
            assert!(v.abs() < 1e-10, "a[{i}] = {v}");
        }
    }

    #[test]
    fn harmonic_only_source_has_line_spectrum() {
        let cfg = test_cfg();
        let len = 16_384;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let mut p = neutral_params(n, &cfg);
        p.alpha_frames = vec![0.5; n];
        p.gain_frames = vec![0.0; n];
        let f0 = F0Track { f0_frames: vec![500.0; n], source_index: 0 };
        let y = synthesize_source(&p, &f0, 2, &cfg, len).unwrap();
        let nfft = 8192;
        let w = window_samples(WindowKind::Hann, nfft);
        let seg: Vec<f64> = y[4096..4096 + nfft].iter().zip(&w).map(|(v, w)| v * w).collect();
        let spec = fft::fft_real(&seg, nfft);
        // 500 Hz lines fall on multiples of bin 256; off-harmonic bins (away
        // from the window mainlobes) carry only sidelobe leakage, well below
        // the fundamental's peak
        let peak = spec[256].norm();
        let off: f64 = (0..nfft / 2)
            .filter(|k| {
                let d = k % 256;
                d > 8 && d < 248
            })
            .map(|k| spec[k].norm())
            .fold(0.0, f64::max);
        assert!(off < peak * 1e-2, "off-harmonic leakage {off} vs peak {peak}");
    }

    #[test]
    fn params_file_roundtrip() {
        let cfg = test_cfg();
        let len = 2048;
        let n = num_frames(len, cfg.fft_size, cfg.hop);
        let p = voiced_params(n, &cfg);
        let f0 = F0Track { f0_frames: vec![220.0; n], source_index: 0 };
        let sources = vec![(p, f0)];
        let file = ParamsFile::from_sources(&sources, 3, &cfg, len);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        file.save(&path).unwrap();
        let loaded = ParamsFile::load(&path).unwrap();
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.num_samples, len);
        let rebuilt = loaded.to_sources().unwrap();
        assert_eq!(rebuilt[0].0, sources[0].0);
        assert_eq!(rebuilt[0].1, sources[0].1);
        let a = synthesize_mixture(&sources, 3, &cfg, len).unwrap();
        let b = synthesize_mixture(&rebuilt, 3, &cfg, len).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rebuilt_sources_reject_ragged_lsf_rows() {
        let cfg = test_cfg();
        let file = ParamsFile {
            config: cfg,
            seed: 0,
            num_samples: 1024,
            sources: vec![SourceEntry {
                alpha: vec![0.1; 4],
                gain: vec![0.1; 4],
                lsf: vec![vec![0.1; 3]; 4],
                noise_mag: vec![0.5; 65],
                f0: vec![100.0; 4],
            }],
        };
        assert!(file.to_sources().is_err());
    }

    #[test]
    fn synthesize_rejects_short_input_and_bad_shapes() {
        let cfg = test_cfg();
        let n = num_frames(4096, cfg.fft_size, cfg.hop);
        let p = neutral_params(n, &cfg);
        let f0 = F0Track { f0_frames: vec![100.0; n], source_index: 0 };
        assert!(synthesize_source(&p, &f0, 0, &cfg, 100).is_err());
        let short_f0 = F0Track { f0_frames: vec![100.0; n - 1], source_index: 0 };
        assert!(synthesize_source(&p, &short_f0, 0, &cfg, 4096).is_err());
        let mut bad = p.clone();
        bad.noise_mag = vec![0.5; 10];
        assert!(synthesize_source(&bad, &f0, 0, &cfg, 4096).is_err());
    }
}


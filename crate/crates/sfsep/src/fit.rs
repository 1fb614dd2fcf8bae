//! Per-mixture parameter fitting: exact reverse-mode gradients of the
//! multi-scale spectral loss through the full synthesis chain (harmonics,
//! FIR shaping, time-varying all-pole filters, overlap-add), an ADAM
//! optimizer, and the fit-then-mask separation driver.
//!
//! The forward pass reproduces `synth::synthesize_source` operation for
//! operation, so fitted parameters re-synthesize to the same signal the
//! optimizer saw. The random noise excitation is drawn once per fit and
//! treated as a constant; gradients flow through its shaping filter and
//! gains, not through the draw itself.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

use crate::config::{AdamConfig, Config};
use crate::dsp::{hann_upsample, linear_upsample, num_frames, window_samples, WindowKind};
use crate::error::{Error, Result};
use crate::fft;
use crate::loss::{loss_and_grad, loss_targets, LossTargets};
use crate::lsf::{
    allpole_frame, exp_sigmoid, exp_sigmoid_grad, lsf_to_lpc, lsf_to_lpc_jacobian, raw_to_lsf,
};
use crate::synth::{
    fir_from_magnitude, harmonic_signal, rolloff_response, white_noise, F0Track, SourceParams,
};
use crate::wiener::{soft_masks, wiener_separate};

/// Scaled-sigmoid ceiling for LSF increments.
const LSF_Y_MAX: f64 = 2.0;
/// Scaled-sigmoid ceiling for amplitudes, gains, and noise magnitudes.
const AMP_Y_MAX: f64 = 1.0;

/// Which block of the flat parameter vector a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    /// Per-frame harmonic amplitude.
    Alpha,
    /// Per-frame noise gain.
    Gain,
    /// Per-frame LSF increment.
    Lsf,
    /// Noise-shaping magnitude sample.
    NoiseMag,
}

/// Shape of the flat unconstrained parameter vector for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub num_sources: usize,
    pub num_frames: usize,
    pub lpc_order: usize,
    pub noise_mag_len: usize,
}

impl ParamLayout {
    /// Layout for a problem with the given source count and frame count.
    pub fn new(num_sources: usize, num_frames: usize, cfg: &Config) -> ParamLayout {
        ParamLayout {
            num_sources,
            num_frames,
            lpc_order: cfg.lpc_order,
            noise_mag_len: cfg.noise_mag_len,
        }
    }

    /// Coordinates per source: alpha, gain, LSF increments, noise magnitudes.
    pub fn per_source(&self) -> usize {
        let n = self.num_frames;
        2 * n + n * (self.lpc_order + 1) + self.noise_mag_len
    }

    /// Total coordinate count.
    pub fn total(&self) -> usize {
        self.num_sources * self.per_source()
    }

    /// Flat range of source j's per-frame amplitudes.
    pub fn alpha_range(&self, j: usize) -> Range<usize> {
        let base = j * self.per_source();
        base..base + self.num_frames
    }

    /// Flat range of source j's per-frame noise gains.
    pub fn gain_range(&self, j: usize) -> Range<usize> {
        let base = j * self.per_source() + self.num_frames;
        base..base + self.num_frames
    }

    /// Flat range of source j's LSF increments, row-major by frame.
    pub fn lsf_range(&self, j: usize) -> Range<usize> {
        let base = j * self.per_source() + 2 * self.num_frames;
        base..base + self.num_frames * (self.lpc_order + 1)
    }

    /// Flat range of source j's noise-shaping magnitudes.
    pub fn noise_range(&self, j: usize) -> Range<usize> {
        let end = (j + 1) * self.per_source();
        end - self.noise_mag_len..end
    }

    /// Class of one flat coordinate.
    pub fn class_of(&self, index: usize) -> ParamClass {
        let within = index % self.per_source();
        let n = self.num_frames;
        if within < n {
            ParamClass::Alpha
        } else if within < 2 * n {
            ParamClass::Gain
        } else if within < 2 * n + n * (self.lpc_order + 1) {
            ParamClass::Lsf
        } else {
            ParamClass::NoiseMag
        }
    }
}

/// Unconstrained parameters for every source, stored flat for the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl RawParams {
    /// Documented starting point: quiet amplitudes/gains/noise (raw = -2,
    /// i.e. small but unsaturated) and a spectrally flat filter (raw = 0,
    /// which maps to uniform LSF increments and identity all-pole filters).
    pub fn init(layout: ParamLayout) -> RawParams {
        let mut data = vec![0.0; layout.total()];
        for j in 0..layout.num_sources {
            data[layout.alpha_range(j)].fill(-2.0);
            data[layout.gain_range(j)].fill(-2.0);
            data[layout.noise_range(j)].fill(-2.0);
        }
        RawParams { layout, data }
    }

    /// Map source j's block through the activations into synthesis parameters.
    pub fn source_params(&self, j: usize, cfg: &Config) -> Result<SourceParams> {
        let n = self.layout.num_frames;
        let k1 = self.layout.lpc_order + 1;
        let alpha: Vec<f64> = self.data[self.alpha_range(j)]
            .iter()
            .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
            .collect();
        let gain: Vec<f64> = self.data[self.gain_range(j)]
            .iter()
            .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
            .collect();
        let noise_mag: Vec<f64> = self.data[self.noise_range(j)]
            .iter()
            .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
            .collect();
        let raw_lsf = &self.data[self.lsf_range(j)];
        let mut lsf_frames = Array2::zeros((n, self.layout.lpc_order));
        for f in 0..n {
            let v: Vec<f64> = raw_lsf[f * k1..(f + 1) * k1]
                .iter()
                .map(|&x| exp_sigmoid(x, LSF_Y_MAX))
                .collect();
            let omega = raw_to_lsf(&v)?;
            lsf_frames
                .row_mut(f)
                .iter_mut()
                .zip(omega)
                .for_each(|(o, w)| *o = w);
        }
        Ok(SourceParams {
            alpha_frames: alpha,
            gain_frames: gain,
            lsf_frames,
            noise_mag,
            harm_rolloff: rolloff_response(cfg.noise_mag_len, cfg.fs as f64),
        })
    }

    fn alpha_range(&self, j: usize) -> Range<usize> {
        self.layout.alpha_range(j)
    }
    fn gain_range(&self, j: usize) -> Range<usize> {
        self.layout.gain_range(j)
    }
    fn lsf_range(&self, j: usize) -> Range<usize> {
        self.layout.lsf_range(j)
    }
    fn noise_range(&self, j: usize) -> Range<usize> {
        self.layout.noise_range(j)
    }
}

/// Loss value, its gradient, and the optimization step it was computed at.
#[derive(Debug, Clone)]
pub struct GradientRecord {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub step: usize,
}

/// Everything that stays fixed across one fit: the target spectrograms, the
/// per-source harmonic and noise excitations, and the spectra the frame-wise
/// FIR filtering reuses every step.
pub struct FitProblem {
    pub cfg: Config,
    pub tracks: Vec<F0Track>,
    pub seed: u64,
    total_len: usize,
    n_frames: usize,
    targets: LossTargets,
    window: Vec<f64>,
    /// Per source: harmonic excitation at sample rate.
    harmonic: Vec<Vec<f64>>,
    /// Per source, per frame: FFT of the windowed zero-padded noise frame.
    noise_spec: Vec<Vec<Vec<Complex64>>>,
    /// Spectrum of the fixed harmonic roll-off FIR on the padded grid.
    r_spec: Vec<Complex64>,
    r_spec_conj: Vec<Complex64>,
}

/// Per-source intermediate values kept by the forward pass for the backward pass.
struct SourceTape {
    gain: Vec<f64>,
    /// N x (K+1) positive increments.
    v: Array2<f64>,
    /// N x K LSF angles.
    omega: Array2<f64>,
    /// N x K all-pole coefficients.
    coeffs: Array2<f64>,
    /// Noise-shaping FIR and its padded spectrum.
    d_spec: Vec<Complex64>,
    /// N x T' per-frame all-pole outputs (pre-window).
    y: Array2<f64>,
    /// Framed excitation, N x T'.
    e_frames: Array2<f64>,
    /// Synthesized source signal, truncated to the mixture length.
    out: Vec<f64>,
}

struct ForwardPass {
    tapes: Vec<SourceTape>,
    mixture: Vec<f64>,
}

impl FitProblem {
    /// Analyze the target mixture and precompute every step-invariant piece.
    pub fn new(mixture: &[f64], tracks: &[F0Track], seed: u64, cfg: &Config) -> Result<FitProblem> {
        if tracks.is_empty() {
            return Err(Error::invalid("J must be >= 1: need at least one F0 track"));
        }
        cfg.validate()?;
        if cfg.ir_len > cfg.fft_size + 1 {
            return Err(Error::invalid(format!(
                "ir length {} exceeds fft_size + 1 = {}",
                cfg.ir_len,
                cfg.fft_size + 1
            )));
        }
        let total_len = mixture.len();
        if total_len < cfg.fft_size {
            return Err(Error::InputTooShort {
                len: total_len,
                min: cfg.fft_size,
            });
        }
        let n_frames = num_frames(total_len, cfg.fft_size, cfg.hop);
        for t in tracks {
            t.validate(cfg.fs as f64)?;
            if t.f0_frames.len() != n_frames {
                return Err(Error::shape(format!(
                    "f0 track has {} frames, mixture needs {n_frames}",
                    t.f0_frames.len()
                )));
            }
        }
        let targets = loss_targets(mixture, cfg)?;
        let window = window_samples(WindowKind::Hann, cfg.fft_size);
        let pad = 2 * cfg.fft_size;
        let mut harmonic = Vec::with_capacity(tracks.len());
        let mut noise_spec = Vec::with_capacity(tracks.len());
        for t in tracks {
            let f0_t = linear_upsample(&t.f0_frames, cfg.hop, total_len)?;
            harmonic.push(harmonic_signal(&f0_t, cfg.num_harmonics, cfg.fs as f64));
            let w = white_noise(total_len, seed, t.source_index as u64);
            let mut spectra = Vec::with_capacity(n_frames);
            for i in 0..n_frames {
                let start = i * cfg.hop;
                let mut buf = vec![Complex64::default(); pad];
                for (t_idx, b) in buf.iter_mut().enumerate().take(cfg.fft_size) {
                    if start + t_idx < total_len {
                        *b = Complex64::new(window[t_idx] * w[start + t_idx], 0.0);
                    }
                }
                fft::fft(&mut buf);
                spectra.push(buf);
            }
            noise_spec.push(spectra);
        }
        let r_ir = fir_from_magnitude(&rolloff_response(cfg.noise_mag_len, cfg.fs as f64), cfg.ir_len)?;
        let r_spec = fft::fft_real(&r_ir, pad);
        let r_spec_conj: Vec<Complex64> = r_spec.iter().map(|c| c.conj()).collect();
        Ok(FitProblem {
            cfg: cfg.clone(),
            tracks: tracks.to_vec(),
            seed,
            total_len,
            n_frames,
            targets,
            window,
            harmonic,
            noise_spec,
            r_spec,
            r_spec_conj,
        })
    }

    /// Parameter layout for this problem.
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.tracks.len(), self.n_frames, &self.cfg)
    }

    /// Number of samples in the target mixture.
    pub fn len(&self) -> usize {
        self.total_len
    }

    /// True when the target is empty (never: construction requires a frame).
    pub fn is_empty(&self) -> bool {
        self.total_len == 0
    }

    /// Synthesize every source from raw parameters (same numbers the fit saw).
    pub fn model_signals(&self, raw: &RawParams) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(raw)?;
        Ok(fwd.tapes.into_iter().map(|t| t.out).collect())
    }

    fn check_layout(&self, raw: &RawParams) -> Result<()> {
        if raw.layout != self.layout() {
            return Err(Error::shape(format!(
                "parameter layout {:?} does not match problem {:?}",
                raw.layout,
                self.layout()
            )));
        }
        Ok(())
    }

    /// Forward synthesis of all sources with the tape needed for backward.
    fn forward(&self, raw: &RawParams) -> Result<ForwardPass> {
        self.check_layout(raw)?;
        let cfg = &self.cfg;
        let (t_prime, hop) = (cfg.fft_size, cfg.hop);
        let pad = 2 * t_prime;
        let k = cfg.lpc_order;
        let k1 = k + 1;
        let n = self.n_frames;
        let len = self.total_len;
        let mut tapes = Vec::with_capacity(self.tracks.len());
        let mut mixture = vec![0.0f64; len];
        for (j, _track) in self.tracks.iter().enumerate() {
            let alpha: Vec<f64> = raw.data[raw.alpha_range(j)]
                .iter()
                .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
                .collect();
            let gain: Vec<f64> = raw.data[raw.gain_range(j)]
                .iter()
                .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
                .collect();
            let noise_mag: Vec<f64> = raw.data[raw.noise_range(j)]
                .iter()
                .map(|&x| exp_sigmoid(x, AMP_Y_MAX))
                .collect();
            let raw_lsf = &raw.data[raw.lsf_range(j)];
            let mut v = Array2::zeros((n, k1));
            let mut omega = Array2::zeros((n, k));
            let mut coeffs = Array2::zeros((n, k));
            for f in 0..n {
                for i in 0..k1 {
                    v[[f, i]] = exp_sigmoid(raw_lsf[f * k1 + i], LSF_Y_MAX);
                }
                let om = raw_to_lsf(v.row(f).as_slice().unwrap())?;
                let a = lsf_to_lpc(&om)?;
                for i in 0..k {
                    omega[[f, i]] = om[i];
                    coeffs[[f, i]] = a[i];
                }
            }

            // Excitation, harmonic branch: [alpha*h] * r, frame-wise FFT filtering.
            let alpha_t = hann_upsample(&alpha, hop, len);
            let ah: Vec<f64> = alpha_t
                .iter()
                .zip(&self.harmonic[j])
                .map(|(a, h)| a * h)
                .collect();
            // Branches are kept separate and added pairwise, reproducing the
            // reference synthesizer's floating-point grouping exactly.
            let mut harm = vec![0.0f64; len];
            let mut buf = vec![Complex64::default(); pad];
            for i in 0..n {
                let start = i * hop;
                for (t, b) in buf.iter_mut().enumerate() {
                    let val = if t < t_prime && start + t < len {
                        self.window[t] * ah[start + t]
                    } else {
                        0.0
                    };
                    *b = Complex64::new(val, 0.0);
                }
                fft::fft(&mut buf);
                for (b, hv) in buf.iter_mut().zip(&self.r_spec) {
                    *b *= hv;
                }
                fft::ifft(&mut buf);
                for (t, b) in buf.iter().enumerate() {
                    if start + t < len {
                        harm[start + t] += b.re / pad as f64;
                    }
                }
            }

            // Excitation, noise branch: [w*d] faded by per-frame gains.
            let d_ir = fir_from_magnitude(&noise_mag, cfg.ir_len)?;
            let d_spec = fft::fft_real(&d_ir, pad);
            let mut shaped = vec![0.0f64; len];
            for i in 0..n {
                let start = i * hop;
                let g = gain[i];
                for (b, (z, dv)) in buf
                    .iter_mut()
                    .zip(self.noise_spec[j][i].iter().zip(&d_spec))
                {
                    *b = z * (dv * g);
                }
                fft::ifft(&mut buf);
                for (t, b) in buf.iter().enumerate() {
                    if start + t < len {
                        shaped[start + t] += b.re / pad as f64;
                    }
                }
            }
            let e: Vec<f64> = harm.iter().zip(&shaped).map(|(a, b)| a + b).collect();

            // Per-frame all-pole filtering, Hann-windowed overlap-add.
            let mut e_frames = Array2::zeros((n, t_prime));
            for i in 0..n {
                let start = i * hop;
                for t in 0..t_prime {
                    if start + t < len {
                        e_frames[[i, t]] = e[start + t];
                    }
                }
            }
            let mut y = Array2::zeros((n, t_prime));
            let mut out = vec![0.0f64; len];
            let mut yrow = vec![0.0f64; t_prime];
            for i in 0..n {
                allpole_frame(
                    e_frames.row(i).as_slice().unwrap(),
                    coeffs.row(i).as_slice().unwrap(),
                    &mut yrow,
                );
                let start = i * hop;
                for t in 0..t_prime {
                    y[[i, t]] = yrow[t];
                    if start + t < len {
                        out[start + t] += self.window[t] * yrow[t];
                    }
                }
            }
            for (m, o) in mixture.iter_mut().zip(&out) {
                *m += *o;
            }
            tapes.push(SourceTape {
                gain,
                v,
                omega,
                coeffs,
                d_spec,
                y,
                e_frames,
                out,
            });
        }
        Ok(ForwardPass { tapes, mixture })
    }

    /// Loss only (used by finite differences and step evaluation).
    pub fn loss(&self, raw: &RawParams) -> Result<f64> {
        let fwd = self.forward(raw)?;
        let (breakdown, _) = loss_and_grad(&self.targets, &fwd.mixture, false)?;
        Ok(breakdown.total)
    }

    /// Loss and its exact reverse-mode gradient with respect to `raw`.
    ///
    /// `step` is carried into the record (and any non-finite error) as metadata.
    pub fn loss_and_gradient(&self, raw: &RawParams, step: usize) -> Result<GradientRecord> {
        let fwd = self.forward(raw)?;
        if fwd.mixture.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                stage: "synthesis".to_string(),
            });
        }
        let (breakdown, grad_mix) = loss_and_grad(&self.targets, &fwd.mixture, true)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                stage: "loss".to_string(),
            });
        }
        let d_mix = grad_mix.expect("gradient requested");
        let grad = self.backward(raw, &fwd, &d_mix)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                stage: "gradient".to_string(),
            });
        }
        Ok(GradientRecord {
            loss: breakdown.total,
            grad,
            step,
        })
    }

    /// Reverse-mode sweep: mirrors `forward` stage by stage, last to first.
    fn backward(&self, raw: &RawParams, fwd: &ForwardPass, d_mix: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let (t_prime, hop) = (cfg.fft_size, cfg.hop);
        let pad = 2 * t_prime;
        let pad_f = pad as f64;
        let k = cfg.lpc_order;
        let k1 = k + 1;
        let n = self.n_frames;
        let len = self.total_len;
        let mut grad = vec![0.0f64; raw.layout.total()];
        let mut buf = vec![Complex64::default(); pad];
        let mut scratch = vec![Complex64::default(); pad];
        for (j, tape) in fwd.tapes.iter().enumerate() {
            // --- Overlap-add and all-pole adjoint: d_mix -> (d_e frames, d_a).
            let mut d_e = vec![0.0f64; len];
            let mut d_omega = Array2::<f64>::zeros((n, k));
            let mut lam = vec![0.0f64; t_prime];
            for i in 0..n {
                let start = i * hop;
                // Window adjoint of the OLA (samples beyond `len` were dropped).
                for t in 0..t_prime {
                    lam[t] = if start + t < len {
                        self.window[t] * d_mix[start + t]
                    } else {
                        0.0
                    };
                }
                // Adjoint of y[t] = e[t] - sum_k a_k y[t-k-1], run backward.
                let a = tape.coeffs.row(i);
                let a = a.as_slice().unwrap();
                for t in (0..t_prime).rev() {
                    let mut acc = lam[t];
                    for (kk, &ak) in a.iter().enumerate() {
                        let src = t + kk + 1;
                        if src < t_prime {
                            acc -= ak * lam[src];
                        } else {
                            break;
                        }
                    }
                    lam[t] = acc;
                }
                // d_a[k] = -sum_t lam[t] * y[t-k-1]; d_e = lam.
                let yrow = tape.y.row(i);
                let mut d_a = vec![0.0f64; k];
                for (kk, d) in d_a.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for t in kk + 1..t_prime {
                        acc -= lam[t] * yrow[t - kk - 1];
                    }
                    *d = acc;
                }
                for t in 0..t_prime {
                    if i * hop + t < len {
                        d_e[i * hop + t] += lam[t];
                    }
                }
                // d_omega = J^T d_a with J[k][j] = da_k / dw_j.
                let (_, jac) = lsf_to_lpc_jacobian(tape.omega.row(i).as_slice().unwrap())?;
                for jj in 0..k {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        acc += jac[[kk, jj]] * d_a[kk];
                    }
                    d_omega[[i, jj]] += acc;
                }
            }

            // --- LSF chain: omega -> increments v -> raw.
            let raw_lsf = &raw.data[raw.layout.lsf_range(j)];
            let g_lsf = &mut grad[raw.layout.lsf_range(j)];
            for f in 0..n {
                let vrow = tape.v.row(f);
                let s: f64 = vrow.iter().sum();
                let scale = std::f64::consts::PI / s;
                // omega_k = scale * cumsum(v)_k: suffix sums give d/dv directly.
                let mut suffix = 0.0;
                let mut weighted = 0.0;
                for kk in 0..k {
                    weighted += d_omega[[f, kk]] * tape.omega[[f, kk]];
                }
                let mut d_v = vec![0.0f64; k1];
                for i in (0..k1).rev() {
                    if i < k {
                        suffix += d_omega[[f, i]];
                    }
                    d_v[i] = scale * suffix - weighted / s;
                }
                for i in 0..k1 {
                    g_lsf[f * k1 + i] +=
                        d_v[i] * exp_sigmoid_grad(raw_lsf[f * k1 + i], LSF_Y_MAX);
                }
            }

            // --- Harmonic branch adjoint: d_e -> d_alpha (through conj(R)).
            let mut d_ah = vec![0.0f64; len];
            for i in 0..n {
                let start = i * hop;
                for (t, b) in buf.iter_mut().enumerate() {
                    let val = if start + t < len { d_e[start + t] } else { 0.0 };
                    *b = Complex64::new(val, 0.0);
                }
                fft::fft(&mut buf);
                for (b, hv) in buf.iter_mut().zip(&self.r_spec_conj) {
                    *b *= hv;
                }
                fft::ifft(&mut buf);
                for t in 0..t_prime {
                    if start + t < len {
                        d_ah[start + t] += self.window[t] * buf[t].re / pad_f;
                    }
                }
            }
            // ah = alpha_t * h; h is fixed.
            let d_alpha_t: Vec<f64> = d_ah
                .iter()
                .zip(&self.harmonic[j])
                .map(|(d, h)| d * h)
                .collect();
            // Adjoint of the raised-cosine upsampler (with edge hold).
            let mut d_alpha = vec![0.0f64; n];
            let last = n - 1;
            for (t, &d) in d_alpha_t.iter().enumerate() {
                let fi = t / hop;
                let frac = (t - fi * hop) as f64 / hop as f64;
                let w_next = 0.5 * (1.0 - (std::f64::consts::PI * frac).cos());
                d_alpha[fi.min(last)] += (1.0 - w_next) * d;
                d_alpha[(fi + 1).min(last)] += w_next * d;
            }
            let raw_alpha = &raw.data[raw.layout.alpha_range(j)];
            let g_alpha = &mut grad[raw.layout.alpha_range(j)];
            for i in 0..n {
                g_alpha[i] += d_alpha[i] * exp_sigmoid_grad(raw_alpha[i], AMP_Y_MAX);
            }

            // --- Noise branch adjoint: d_e -> (d_gain, d_noise_mag).
            let mut acc_spec = vec![Complex64::default(); pad];
            let mut d_gain = vec![0.0f64; n];
            for i in 0..n {
                let start = i * hop;
                for (t, b) in buf.iter_mut().enumerate() {
                    let val = if start + t < len { d_e[start + t] } else { 0.0 };
                    *b = Complex64::new(val, 0.0);
                }
                // Pre-gain frame output u = Re(ifft(Z*D))/pad for the gain gradient.
                for (s, (z, dv)) in scratch
                    .iter_mut()
                    .zip(self.noise_spec[j][i].iter().zip(&tape.d_spec))
                {
                    *s = z * dv;
                }
                fft::ifft(&mut scratch);
                let mut g_acc = 0.0;
                for (t, s) in scratch.iter().enumerate() {
                    if start + t < len {
                        g_acc += d_e[start + t] * s.re / pad_f;
                    }
                }
                d_gain[i] = g_acc;
                // Accumulate the FIR-spectrum adjoint: g * conj(Z) * fft(lambda).
                fft::fft(&mut buf);
                let g = tape.gain[i];
                for (a, (b, z)) in acc_spec
                    .iter_mut()
                    .zip(buf.iter().zip(self.noise_spec[j][i].iter()))
                {
                    *a += b * z.conj() * g;
                }
            }
            let raw_gain = &raw.data[raw.layout.gain_range(j)];
            let g_gain = &mut grad[raw.layout.gain_range(j)];
            for i in 0..n {
                g_gain[i] += d_gain[i] * exp_sigmoid_grad(raw_gain[i], AMP_Y_MAX);
            }
            // d_ir[t] = Re(ifft(acc))[t]/pad on the first ir_len taps.
            fft::ifft(&mut acc_spec);
            let mut d_ir = vec![0.0f64; cfg.ir_len];
            for (t, d) in d_ir.iter_mut().enumerate() {
                *d = acc_spec[t].re / pad_f;
            }
            // Adjoint of fir_from_magnitude: window/rotate, then the symmetric
            // inverse DFT maps tap-gradients back to magnitude samples.
            let m = 2 * (cfg.noise_mag_len - 1);
            let ir_window = window_samples(WindowKind::Hann, cfg.ir_len);
            let delay = cfg.ir_len / 2;
            let mut d_buf = vec![Complex64::default(); m];
            for (t, w) in ir_window.iter().enumerate() {
                let src = (t + m - delay) % m;
                d_buf[src].re += d_ir[t] * w / m as f64;
            }
            fft::ifft(&mut d_buf);
            let raw_noise = &raw.data[raw.layout.noise_range(j)];
            let g_noise = &mut grad[raw.layout.noise_range(j)];
            for kk in 0..cfg.noise_mag_len {
                let mut d = d_buf[kk].re;
                if kk > 0 && kk < cfg.noise_mag_len - 1 {
                    d += d_buf[m - kk].re;
                }
                g_noise[kk] += d * exp_sigmoid_grad(raw_noise[kk], AMP_Y_MAX);
            }
            let _ = &tape.e_frames; // kept for future use; documents the tape
        }
        Ok(grad)
    }
}

/// First and second moment estimates for bias-corrected ADAM updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// Fresh state for a parameter vector of the given length.
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected ADAM update in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Result of fitting one mixture.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters with the lowest observed loss.
    pub raw: RawParams,
    /// Loss at every step, in order.
    pub trace: Vec<f64>,
    /// Lowest observed loss and the step it occurred at.
    pub best_loss: f64,
    pub best_step: usize,
}

/// Fit the synthesis parameters of every source to one mixture with ADAM,
/// keeping the best-loss parameters seen.
pub fn fit_mixture(problem: &FitProblem, steps: usize) -> Result<FitResult> {
    let layout = problem.layout();
    let mut raw = RawParams::init(layout);
    let mut adam = AdamState::new(layout.total());
    let mut trace = Vec::with_capacity(steps);
    let mut best = raw.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    for step in 0..steps {
        let rec = problem.loss_and_gradient(&raw, step)?;
        trace.push(rec.loss);
        if rec.loss < best_loss {
            best_loss = rec.loss;
            best_step = step;
            best.data.copy_from_slice(&raw.data);
        }
        adam.step(&mut raw.data, &rec.grad, &problem.cfg.adam);
    }
    Ok(FitResult {
        raw: best,
        trace,
        best_loss,
        best_step,
    })
}

/// Everything the separation pipeline produces for one mixture.
pub struct SeparationOutput {
    /// Wiener-filtered source estimates (mixture length).
    pub estimates: Vec<Vec<f64>>,
    /// Raw model signals the masks were derived from.
    pub synths: Vec<Vec<f64>>,
    pub fit: FitResult,
}

/// Fit the model to a mixture, build soft masks from the fitted sources, and
/// Wiener-filter the mixture into per-source estimates.
pub fn separate_mixture(
    mixture: &[f64],
    tracks: &[F0Track],
    steps: usize,
    seed: u64,
    cfg: &Config,
) -> Result<SeparationOutput> {
    let problem = FitProblem::new(mixture, tracks, seed, cfg)?;
    let fit = fit_mixture(&problem, steps)?;
    let synths = problem.model_signals(&fit.raw)?;
    let masks = soft_masks(&synths, cfg)?;
    let estimates = wiener_separate(mixture, &masks)?;
    Ok(SeparationOutput {
        estimates,
        synths,
        fit,
    })
}

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates tested.
    pub checked: usize,
    /// Coordinates whose best relative error exceeded the tolerance.
    pub failures: usize,
    /// Largest best-relative-error over all tested coordinates.
    pub worst_rel: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
}

/// Absolute gradient level below which a coordinate counts as flat (both the
/// analytic and numeric derivative vanish).
const GRADCHECK_FLAT: f64 = 1e-7;

/// Compare reverse-mode gradients with central finite differences on a small
/// synthetic problem: `coords` coordinates cycling through all four parameter
/// classes, steps h in {1e-3, 1e-4}, best agreement per coordinate.
pub fn gradient_check(seed: u64, coords: usize, tol: f64, cfg: &Config) -> Result<GradCheckReport> {
    let problem = gradcheck_problem(seed, cfg)?;
    let layout = problem.layout();
    let mut raw = RawParams::init(layout);
    // Jitter the starting point so no coordinate sits at a special value.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    for x in raw.data.iter_mut() {
        *x += rng.gen_range(-0.5..0.5);
    }
    let record = problem.loss_and_gradient(&raw, 0)?;

    let classes = [
        ParamClass::Alpha,
        ParamClass::Gain,
        ParamClass::Lsf,
        ParamClass::NoiseMag,
    ];
    let ranges = |class: ParamClass| -> Range<usize> {
        match class {
            ParamClass::Alpha => layout.alpha_range(0),
            ParamClass::Gain => layout.gain_range(0),
            ParamClass::Lsf => layout.lsf_range(0),
            ParamClass::NoiseMag => layout.noise_range(0),
        }
    };
    let mut failures = 0;
    let mut worst_rel = 0.0f64;
    let mut worst_index = 0;
    let mut perturbed = raw.clone();
    for c in 0..coords {
        let class = classes[c % classes.len()];
        let r = ranges(class);
        let idx = rng.gen_range(r.start..r.end);
        let analytic = record.grad[idx];
        let mut best_rel = f64::INFINITY;
        for h in [1e-3, 1e-4] {
            let x0 = raw.data[idx];
            perturbed.data.copy_from_slice(&raw.data);
            perturbed.data[idx] = x0 + h;
            let plus = problem.loss(&perturbed)?;
            perturbed.data[idx] = x0 - h;
            let minus = problem.loss(&perturbed)?;
            let fd = (plus - minus) / (2.0 * h);
            if fd.abs() < GRADCHECK_FLAT && analytic.abs() < GRADCHECK_FLAT {
                best_rel = 0.0;
                break;
            }
            let rel = (fd - analytic).abs() / f64::max(fd.abs().max(analytic.abs()), 1e-8);
            best_rel = best_rel.min(rel);
        }
        if best_rel > tol {
            failures += 1;
        }
        if best_rel > worst_rel {
            worst_rel = best_rel;
            worst_index = idx;
        }
    }
    Ok(GradCheckReport {
        checked: coords,
        failures,
        worst_rel,
        worst_index,
    })
}

/// Quarter-second single-source target used by the gradient check: a mildly
/// swept tone rendered by the reference synthesizer itself.
fn gradcheck_problem(seed: u64, cfg: &Config) -> Result<FitProblem> {
    let total_len = cfg.fs as usize / 4;
    let n = num_frames(total_len, cfg.fft_size, cfg.hop);
    let f0: Vec<f64> = (0..n)
        .map(|i| 200.0 + 30.0 * i as f64 / n.max(2) as f64)
        .collect();
    let track = F0Track {
        f0_frames: f0,
        source_index: 0,
    };
    let layout = ParamLayout::new(1, n, cfg);
    let mut target_raw = RawParams::init(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    for x in target_raw.data.iter_mut() {
        *x += rng.gen_range(-1.0..1.0);
    }
    // Audible harmonic part so the loss surface is informative.
    target_raw.data[layout.alpha_range(0)].fill(1.0);
    let params = target_raw.source_params(0, cfg)?;
    let target =
        crate::synth::synthesize_source(&params, &track, seed.wrapping_add(1), cfg, total_len)?;
    FitProblem::new(&target, &[track], seed, cfg)
}

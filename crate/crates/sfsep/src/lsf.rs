//! Line-spectral-frequency parameterization of time-varying all-pole filters.
//!
//! Unconstrained reals become positive increments through an exponential
//! sigmoid, the increments become strictly-interlaced LSF angles on (0, π),
//! and the angles become coefficients a_k of A(z) = 1 + Σ a_k z^{-k} through
//! the classic symmetric/antisymmetric polynomial recursion. Filters built
//! this way are stable by construction; `lpc_stability` verifies it from the
//! roots. The recursion runs in f64 — the interlacing margins that guarantee
//! stability are far below f32 resolution for tightly spaced angles.

use ndarray::Array2;

use crate::dsp::{window_samples, WindowKind};
use crate::error::{Error, Result};

const LN_10: f64 = std::f64::consts::LN_10;

/// Scaled, exponentially warped sigmoid: y_max·σ(x)^{ln 10} + 1e−7.
pub fn exp_sigmoid(x: f64, y_max: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    y_max * s.powf(LN_10) + 1e-7
}

/// Derivative of `exp_sigmoid` with respect to x.
pub fn exp_sigmoid_grad(x: f64, y_max: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    // d/dx σ^p = p·σ^p·(1−σ)
    y_max * s.powf(LN_10) * LN_10 * (1.0 - s)
}

/// Map K+1 positive increments to K strictly increasing LSF angles in (0, π).
///
/// The increments are scaled to sum to π; the last one is the headroom between
/// ω_K and π, so the output always stays strictly below π.
pub fn raw_to_lsf(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::invalid("need at least 2 increments (K >= 1)"));
    }
    for (i, &x) in v.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::NonPositiveIncrement { index: i, value: x });
        }
    }
    let sum: f64 = v.iter().sum();
    let scale = std::f64::consts::PI / sum;
    let mut omegas = Vec::with_capacity(v.len() - 1);
    let mut acc = 0.0;
    for &x in &v[..v.len() - 1] {
        acc += x * scale;
        omegas.push(acc);
    }
    Ok(omegas)
}

/// Check that an LSF vector has even length and strictly increasing angles in (0, pi).
pub fn validate_lsf(lsf: &[f64]) -> Result<()> {
    let k = lsf.len();
    if k == 0 || k % 2 != 0 {
        return Err(Error::invalid(format!("LSF order must be even and positive, got {k}")));
    }
    let mut prev = 0.0;
    for (i, &w) in lsf.iter().enumerate() {
        if !(w > prev) || !(w < std::f64::consts::PI) {
            return Err(Error::invalid(format!(
                "LSF angles must be strictly increasing in (0, pi); violation at index {i}"
            )));
        }
        prev = w;
    }
    Ok(())
}

/// Convert LSF angles to all-pole coefficients a_1..a_K for
/// A(z) = 1 + Σ a_k z^{-k} (recursion y(t) = e(t) − Σ a_k y(t−k)).
///
/// Builds the symmetric P'(z) from the odd-indexed angles and the
/// antisymmetric Q'(z) from the even-indexed ones, storing only half of each
/// by symmetry, then folds A = (P'·(1+z⁻¹) + Q'·(1−z⁻¹)) / 2.
pub fn lsf_to_lpc(lsf: &[f64]) -> Result<Vec<f64>> {
    validate_lsf(lsf)?;
    let k_order = lsf.len();
    let half = k_order / 2;
    let x: Vec<f64> = lsf.iter().map(|w| w.cos()).collect();

    // Half-stored coefficients of the growing symmetric products.
    let mut p = vec![0.0f64; half + 1];
    let mut q = vec![0.0f64; half + 1];
    p[0] = 1.0;
    q[0] = 1.0;
    p[1] = -2.0 * x[0];
    q[1] = -2.0 * x[1];
    for k in 2..=half {
        let xp = x[2 * k - 2]; // odd-indexed angle (1-based 2k−1)
        let xq = x[2 * k - 1]; // even-indexed angle (1-based 2k)
        // Head coefficient: the mirror image of index k−1 folds back in.
        p[k] = -2.0 * p[k - 1] * xp + 2.0 * p[k - 2];
        q[k] = -2.0 * q[k - 1] * xq + 2.0 * q[k - 2];
        // Interior coefficients, descending so the updates see old values.
        for i in (2..k).rev() {
            p[i] += -2.0 * p[i - 1] * xp + p[i - 2];
            q[i] += -2.0 * q[i - 1] * xq + q[i - 2];
        }
        p[1] += -2.0 * p[0] * xp;
        q[1] += -2.0 * q[0] * xq;
    }

    // Multiply by (1 ± z⁻¹) and average the halves into a_1..a_K.
    let mut a = vec![0.0f64; k_order];
    for k in 1..=half {
        let pk = p[k] + p[k - 1];
        let qk = q[k] - q[k - 1];
        a[k - 1] = 0.5 * (pk + qk);
        // mirrored tail: a_{K/2+k} pairs with index K/2−k+1
        let pm = p[half - k + 1] + p[half - k];
        let qm = q[half - k + 1] - q[half - k];
        a[half + k - 1] = 0.5 * (pm - qm);
    }
    Ok(a)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients and Jacobian ∂a_k/∂ω_j of the LSF→LPC map, via the explicit
/// product form: leave-one-out prefix/suffix products of the quadratic factors
/// give each factor's derivative without re-multiplying the whole chain.
pub fn lsf_to_lpc_jacobian(lsf: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
    validate_lsf(lsf)?;
    let k_order = lsf.len();
    let half = k_order / 2;

    // quadratic factors grouped by parity of the (1-based) angle index
    let quad = |w: f64| vec![1.0, -2.0 * w.cos(), 1.0];
    let odd: Vec<Vec<f64>> = (0..half).map(|j| quad(lsf[2 * j])).collect();
    let even: Vec<Vec<f64>> = (0..half).map(|j| quad(lsf[2 * j + 1])).collect();

    // prefix[i] = product of factors[..i], suffix[i] = product of factors[i..]
    let products = |factors: &[Vec<f64>]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let m = factors.len();
        let mut pre = vec![vec![1.0]; m + 1];
        for i in 0..m {
            pre[i + 1] = poly_mul(&pre[i], &factors[i]);
        }
        let mut suf = vec![vec![1.0]; m + 1];
        for i in (0..m).rev() {
            suf[i] = poly_mul(&factors[i], &suf[i + 1]);
        }
        (pre, suf)
    };
    let (pre_o, suf_o) = products(&odd);
    let (pre_e, suf_e) = products(&even);

    let p_full = poly_mul(&pre_o[half], &[1.0, 1.0]);
    let q_full = poly_mul(&pre_e[half], &[1.0, -1.0]);
    let mut a = vec![0.0; k_order];
    for k in 1..=k_order {
        a[k - 1] = 0.5 * (p_full[k] + q_full[k]);
    }

    let mut jac = Array2::zeros((k_order, k_order));
    for j in 0..k_order {
        let (pre, suf, extra, idx) = if j % 2 == 0 {
            (&pre_o, &suf_o, [1.0, 1.0], j / 2)
        } else {
            (&pre_e, &suf_e, [1.0, -1.0], j / 2)
        };
        // d(factor)/dω = 2·sin(ω)·z⁻¹
        let dfactor = vec![0.0, 2.0 * lsf[j].sin()];
        let loo = poly_mul(&pre[idx], &suf[idx + 1]);
        let dp = poly_mul(&poly_mul(&loo, &dfactor), &extra);
        for k in 1..=k_order {
            jac[[k - 1, j]] = 0.5 * dp.get(k).copied().unwrap_or(0.0);
        }
    }
    Ok((a, jac))
}

/// Largest pole modulus of A(z) = 1 + Σ a_k z^{-k}, from the eigenvalues of
/// the companion matrix of z^K + a_1 z^{K−1} + ... + a_K.
pub fn lpc_stability(a: &[f64]) -> f64 {
    let k = a.len();
    if k == 0 {
        return 0.0;
    }
    let m = nalgebra::DMatrix::<f64>::from_fn(k, k, |r, c| {
        if r == 0 {
            -a[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// One frame of the all-pole recursion y(t) = e(t) − Σ a_k y(t−k), zero state.
pub fn allpole_frame(e: &[f64], a: &[f64], y: &mut [f64]) {
    debug_assert_eq!(e.len(), y.len());
    for t in 0..e.len() {
        let mut acc = e[t];
        for (k, &ak) in a.iter().enumerate() {
            if t > k {
                acc -= ak * y[t - k - 1];
            }
        }
        y[t] = acc;
    }
}

/// A signal cut into left-aligned frames: N × frame_len grid plus its hop.
#[derive(Debug, Clone)]
pub struct FramedSignal {
    pub frames: Array2<f64>,
    pub hop: usize,
}

impl FramedSignal {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_len(&self) -> usize {
        self.frames.ncols()
    }

    /// Sample count the frames cover.
    pub fn covered_len(&self) -> usize {
        (self.num_frames() - 1) * self.hop + self.frame_len()
    }
}

/// Filter each excitation frame by its own all-pole recursion (zero initial
/// state per frame), window with periodic Hann, and overlap-add.
///
/// With all coefficients zero this reduces to the Hann-OLA identity on the
/// fully overlapped interior.
pub fn allpole_filter_frames(excitation: &FramedSignal, coeffs: &Array2<f64>) -> Result<Vec<f64>> {
    let n = excitation.num_frames();
    let flen = excitation.frame_len();
    if coeffs.nrows() != n {
        return Err(Error::shape(format!(
            "coefficient rows {} != excitation frames {n}",
            coeffs.nrows()
        )));
    }
    let window = window_samples(WindowKind::Hann, flen);
    let mut out = vec![0.0f64; excitation.covered_len()];
    let mut y = vec![0.0f64; flen];
    for i in 0..n {
        let e = excitation.frames.row(i);
        let a = coeffs.row(i);
        allpole_frame(e.as_slice().unwrap(), a.as_slice().unwrap(), &mut y);
        let start = i * excitation.hop;
        for t in 0..flen {
            out[start + t] += window[t] * y[t];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn exp_sigmoid_frozen_midpoint() {
        // 2·0.5^ln10 + 1e−7, evaluated independently
        assert!((exp_sigmoid(0.0, 2.0) - 0.40539923257303456).abs() < 1e-15);
        let independent = 2.0 * (-std::f64::consts::LN_2 * LN_10).exp() + 1e-7;
        assert!((exp_sigmoid(0.0, 2.0) - independent).abs() < 1e-15);
    }

    #[test]
    fn exp_sigmoid_limits() {
        assert!((exp_sigmoid(-60.0, 2.0) - 1e-7).abs() < 1e-20);
        assert!((exp_sigmoid(60.0, 2.0) - (2.0 + 1e-7)).abs() < 1e-12);
    }

    #[test]
    fn exp_sigmoid_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -1.0, 0.0, 0.5, 2.0] {
            let fd = (exp_sigmoid(x + h, 2.0) - exp_sigmoid(x - h, 2.0)) / (2.0 * h);
            assert!((exp_sigmoid_grad(x, 2.0) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn raw_to_lsf_uniform_increments() {
        let lsf = raw_to_lsf(&[1.0, 1.0, 1.0]).unwrap();
        assert!((lsf[0] - PI / 3.0).abs() < 1e-15);
        assert!((lsf[1] - 2.0 * PI / 3.0).abs() < 1e-15);
    }

    #[test]
    fn raw_to_lsf_weighted_increments() {
        let lsf = raw_to_lsf(&[2.0, 1.0, 1.0]).unwrap();
        assert!((lsf[0] - PI / 2.0).abs() < 1e-15);
        assert!((lsf[1] - 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn raw_to_lsf_rejects_non_positive() {
        let err = raw_to_lsf(&[1.0, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonPositiveIncrement { index: 1, .. }));
    }

    #[test]
    fn lsf_to_lpc_uniform_angles_give_flat_filter() {
        let a = lsf_to_lpc(&[PI / 3.0, 2.0 * PI / 3.0]).unwrap();
        assert!(a[0].abs() < 1e-14);
        assert!(a[1].abs() < 1e-14);
    }

    #[test]
    fn lsf_to_lpc_known_second_order() {
        let a = lsf_to_lpc(&[PI / 2.0, 2.0 * PI / 3.0]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-14);
        assert!((a[1] - 0.5).abs() < 1e-14);
        assert!((lpc_stability(&a) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lsf_to_lpc_rejects_bad_input() {
        assert!(lsf_to_lpc(&[0.5, 0.4]).is_err()); // not increasing
        assert!(lsf_to_lpc(&[0.5, 1.0, 2.0]).is_err()); // odd order
        assert!(lsf_to_lpc(&[0.5, PI]).is_err()); // hits pi
    }

    fn random_lsf(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let gaps: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.02..1.0)).collect();
        raw_to_lsf(&gaps).unwrap()
    }

    #[test]
    fn recursion_matches_polynomial_product_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &k in &[2usize, 4, 6, 10, 16, 20] {
            for _ in 0..50 {
                let lsf = random_lsf(&mut rng, k);
                let a = lsf_to_lpc(&lsf).unwrap();
                let (a_poly, _) = lsf_to_lpc_jacobian(&lsf).unwrap();
                let scale = a_poly.iter().map(|v| v.abs()).fold(1.0, f64::max);
                for (x, y) in a.iter().zip(a_poly.iter()) {
                    assert!((x - y).abs() / scale < 1e-10, "k={k}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lsf = random_lsf(&mut rng, 6);
        let (_, jac) = lsf_to_lpc_jacobian(&lsf).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let mut up = lsf.clone();
            up[j] += h;
            let mut dn = lsf.clone();
            dn[j] -= h;
            let au = lsf_to_lpc(&up).unwrap();
            let ad = lsf_to_lpc(&dn).unwrap();
            for k in 0..6 {
                let fd = (au[k] - ad[k]) / (2.0 * h);
                assert!((jac[[k, j]] - fd).abs() < 1e-6, "k={k} j={j}: {} vs {fd}", jac[[k, j]]);
            }
        }
    }

    #[test]
    fn stability_of_flat_filter_is_zero() {
        assert_eq!(lpc_stability(&[0.0, 0.0]), 0.0);
        assert_eq!(lpc_stability(&[]), 0.0);
    }

    // Raw activations are drawn from [-1.5, 1.5]: that comfortably covers the
    // region reachable during optimization (inits at 0 and -2, small ADAM
    // steps), while keeping adjacent line-spectral frequencies separated
    // enough that the pole-modulus margin stays far above the resolution of a
    // double-precision eigenvalue check on clustered roots.
    #[test]
    fn random_activations_always_yield_stable_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let v: Vec<f64> = raw.iter().map(|&x| exp_sigmoid(x, 2.0)).collect();
            let a = lsf_to_lpc(&raw_to_lsf(&v).unwrap()).unwrap();
            let rho = lpc_stability(&a);
            assert!(rho < 1.0, "unstable filter: rho = {rho}");
        }
    }

    #[test]
    fn impulse_response_of_known_filter() {
        let mut e = vec![0.0; 8];
        e[0] = 1.0;
        let mut y = vec![0.0; 8];
        allpole_frame(&e, &[0.5, 0.5], &mut y);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], -0.5);
        assert_eq!(y[2], -0.25);
        // next: y3 = −(0.5·y2 + 0.5·y1) = 0.375
        assert_eq!(y[3], 0.375);
    }

    #[test]
    fn zero_coefficients_are_hann_ola_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let frames = crate::dsp::frame_signal(&x, 512, 256);
        let framed = FramedSignal { frames, hop: 256 };
        let coeffs = Array2::zeros((framed.num_frames(), 20));
        let y = allpole_filter_frames(&framed, &coeffs).unwrap();
        for t in 512..4096 - 512 {
            assert!((y[t] - x[t]).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn silent_frames_do_not_leak_into_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut frames = Array2::from_shape_fn((8, 512), |_| rng.gen_range(-1.0f64..1.0));
        for t in 0..512 {
            frames[[3, t]] = 0.0;
        }
        let framed = FramedSignal { frames, hop: 256 };
        let mut coeffs = Array2::zeros((8, 2));
        for n in 0..8 {
            coeffs[[n, 0]] = 0.4;
            coeffs[[n, 1] ] = 0.2;
        }
        let base = allpole_filter_frames(&framed, &coeffs).unwrap();
        // changing the silent frame's coefficients changes nothing
        let mut coeffs2 = coeffs.clone();
        coeffs2[[3, 0]] = -0.7;
        coeffs2[[3, 1]] = 0.1;
        let permuted = allpole_filter_frames(&framed, &coeffs2).unwrap();
        assert_eq!(base, permuted);
    }

    proptest! {
        #[test]
        fn prop_exp_sigmoid_monotone(a in -20.0f64..20.0, d in 0.001f64..5.0) {
            prop_assert!(exp_sigmoid(a + d, 2.0) > exp_sigmoid(a, 2.0));
        }

        #[test]
        fn prop_raw_to_lsf_strictly_increasing(
            v in proptest::collection::vec(1e-6f64..10.0, 3..24),
        ) {
            let lsf = raw_to_lsf(&v).unwrap();
            let mut prev = 0.0;
            for w in &lsf {
                prop_assert!(*w > prev);
                prev = *w;
            }
            prop_assert!(prev < PI);
        }
    }
}

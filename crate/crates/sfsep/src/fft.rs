//! Thin wrapper over rustfft with per-thread plan and scratch caching.
//!
//! Conventions: `fft` is the unnormalized forward transform (e^{-j2πkt/N});
//! `ifft` is the unnormalized inverse (e^{+j2πkt/N}), so `ifft(fft(x)) = N·x`.
//! Callers divide by N where a true inverse is needed. The unnormalized inverse
//! is also exactly the adjoint of the forward transform, which the gradient
//! engine relies on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

struct Plans {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex64>,
}

thread_local! {
    static PLANS: RefCell<Plans> = RefCell::new(Plans {
        planner: FftPlanner::new(),
        forward: HashMap::new(),
        inverse: HashMap::new(),
        scratch: Vec::new(),
    });
}

fn run(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    PLANS.with(|cell| {
        let plans = &mut *cell.borrow_mut();
        let map = if inverse { &mut plans.inverse } else { &mut plans.forward };
        let fft = map
            .entry(n)
            .or_insert_with(|| {
                if inverse {
                    plans.planner.plan_fft_inverse(n)
                } else {
                    plans.planner.plan_fft_forward(n)
                }
            })
            .clone();
        let need = fft.get_inplace_scratch_len();
        if plans.scratch.len() < need {
            plans.scratch.resize(need, Complex64::default());
        }
        fft.process_with_scratch(buf, &mut plans.scratch[..need]);
    });
}

/// In-place unnormalized forward FFT.
pub fn fft(buf: &mut [Complex64]) {
    run(buf, false);
}

/// In-place unnormalized inverse FFT (= N times the true inverse).
pub fn ifft(buf: &mut [Complex64]) {
    run(buf, true);
}

/// Forward FFT of a real signal zero-padded to `n`; returns the full complex spectrum.
pub fn fft_real(x: &[f64], n: usize) -> Vec<Complex64> {
    debug_assert!(x.len() <= n);
    let mut buf = vec![Complex64::default(); n];
    for (b, &v) in buf.iter_mut().zip(x.iter()) {
        b.re = v;
    }
    fft(&mut buf);
    buf
}

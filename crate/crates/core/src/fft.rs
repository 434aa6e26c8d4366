//! Thin 2D/3D transforms over `rustfft`, with a process-wide plan cache.
//!
//! Transforms are unnormalized in both directions; callers divide by the
//! sample count after an inverse. Spectra are in standard FFT order (DC at
//! index 0), not centered.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;
type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Plan>);

fn planner() -> &'static Mutex<PlanCache> {
    static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())))
}

/// Cached 1D plan of length `n`. Safe to call from any thread.
pub fn plan(n: usize, inverse: bool) -> Plan {
    let mut guard = planner().lock().expect("fft plan cache poisoned");
    let (planner, cache) = &mut *guard;
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
            planner.plan_fft(n, dir)
        })
        .clone()
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn rows(data: &mut [Complex64], n: usize, plan: &Plan) {
    let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
    plan.process_with_scratch(data, &mut scratch);
    debug_assert_eq!(data.len() % n, 0);
}

/// In-place 2D transform of an `n x n` row-major array.
pub fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n, "fft2 buffer size");
    let p = plan(n, inverse);
    rows(data, n, &p);
    transpose_square(data, n);
    rows(data, n, &p);
    transpose_square(data, n);
}

/// In-place 3D transform of an `n^3` array stored x-fastest.
pub fn fft3(data: &mut [Complex64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n * n, "fft3 buffer size");
    let p = plan(n, inverse);
    // x then y: each z slab is an independent 2D transform.
    data.par_chunks_mut(n * n).for_each(|slab| {
        let mut scratch = vec![Complex64::default(); p.get_inplace_scratch_len()];
        p.process_with_scratch(slab, &mut scratch);
        transpose_square(slab, n);
        p.process_with_scratch(slab, &mut scratch);
        transpose_square(slab, n);
    });
    // z: gather (x, z) planes for each y.
    let planes: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|iy| {
            let mut buf = vec![Complex64::default(); n * n];
            for iz in 0..n {
                let row = &data[(iz * n + iy) * n..(iz * n + iy + 1) * n];
                for (ix, v) in row.iter().enumerate() {
                    buf[ix * n + iz] = *v;
                }
            }
            let mut scratch = vec![Complex64::default(); p.get_inplace_scratch_len()];
            p.process_with_scratch(&mut buf, &mut scratch);
            buf
        })
        .collect();
    for (iy, buf) in planes.iter().enumerate() {
        for iz in 0..n {
            let row = &mut data[(iz * n + iy) * n..(iz * n + iy + 1) * n];
            for (ix, v) in row.iter_mut().enumerate() {
                *v = buf[ix * n + iz];
            }
        }
    }
}

pub fn to_complex(real: &[f64]) -> Vec<Complex64> {
    real.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Signed frequency index of FFT bin `i` for length `n`: `0, 1, .., n/2-1, -n/2, .., -1`.
#[inline]
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

//! Two-dimensional cross-correlation with a fixed kernel through a circulant
//! embedding and real-to-complex FFTs.
//!
//! For an input `v` of shape `n2 x n1` (first index fastest) and a kernel
//! `g(p, r)` sampled for offsets `|p| < n1`, `|r| < n2`, computes
//!
//! ```text
//! out[l][k] = sum_{j, i} v[j][i] * g(i - k, j - l)
//! ```
//!
//! The block-Toeplitz matrix behind this sum is embedded in a circulant of
//! size `2 n1 x 2 n2`, which avoids wrap-around.

use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

const BLOCK: usize = 32;

struct Workspace {
    real: Vec<f64>,
    rows: Vec<Complex64>,
    /// `BLOCK` columns of length `l2`, transformed together.
    cols: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Precomputed spectrum of the embedded kernel plus FFT plans.
pub struct CirculantCorrelator {
    n1: usize,
    n2: usize,
    l1: usize,
    l2: usize,
    /// Spectrum, `(l1/2 + 1) x l2`, column-major in the second direction,
    /// already divided by `l1 * l2`.
    spectrum: Vec<Complex64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    work: Mutex<Option<Workspace>>,
}

impl std::fmt::Debug for CirculantCorrelator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantCorrelator")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .finish()
    }
}

/// Copies the `rows x cols` row-major block `src` into `dst` transposed,
/// `dst[c * dst_stride + r] = src[r * src_stride + c]`.
fn transpose_into<T: Copy>(
    src: &[T],
    src_stride: usize,
    rows: usize,
    cols: usize,
    dst: &mut [T],
    dst_stride: usize,
) {
    for r0 in (0..rows).step_by(BLOCK) {
        let r1 = (r0 + BLOCK).min(rows);
        for c0 in (0..cols).step_by(BLOCK) {
            let c1 = (c0 + BLOCK).min(cols);
            for r in r0..r1 {
                let row = &src[r * src_stride..];
                for c in c0..c1 {
                    dst[c * dst_stride + r] = row[c];
                }
            }
        }
    }
}

impl CirculantCorrelator {
    /// Builds the correlator for inputs of shape `n2 x n1`; `kernel(p, r)` is
    /// queried for every offset `p` in `(-n1, n1)` and `r` in `(-n2, n2)`.
    pub fn new(n1: usize, n2: usize, kernel: impl Fn(isize, isize) -> f64) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Invalid("correlation grid must be nonempty".into()));
        }
        let (l1, l2) = (2 * n1, 2 * n2);
        let w1 = l1 / 2 + 1;
        let mut real_planner = RealFftPlanner::<f64>::new();
        let r2c = real_planner.plan_fft_forward(l1);
        let c2r = real_planner.plan_fft_inverse(l1);
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(l2);
        let inv = planner.plan_fft_inverse(l2);

        // Embedded flipped kernel, position (a, b) holds g(-d1, -d2) where
        // d = a (a < n) or a - l (a > n); the middle row/column stays zero.
        let offset = |a: usize, n: usize, l: usize| -> Option<isize> {
            if a < n {
                Some(a as isize)
            } else if a > n {
                Some(a as isize - l as isize)
            } else {
                None
            }
        };
        let norm = 1.0 / (l1 as f64 * l2 as f64);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); w1 * l2];
        let mut real = vec![0.0; l1];
        let mut block = vec![Complex64::new(0.0, 0.0); BLOCK * w1];
        let mut scratch = vec![Complex64::new(0.0, 0.0); r2c.get_scratch_len()];
        for b0 in (0..l2).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(l2);
            for b in b0..b1 {
                let out = &mut block[(b - b0) * w1..(b - b0 + 1) * w1];
                match offset(b, n2, l2) {
                    None => out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0)),
                    Some(d2) => {
                        for (a, x) in real.iter_mut().enumerate() {
                            *x = offset(a, n1, l1).map_or(0.0, |d1| kernel(-d1, -d2) * norm);
                        }
                        r2c.process_with_scratch(&mut real, out, &mut scratch)
                            .map_err(|e| Error::Solver(format!("fft: {e}")))?;
                    }
                }
            }
            // block rows b0..b1 become entries b0..b1 of every column
            transpose_into(&block, w1, b1 - b0, w1, &mut spectrum[b0..], l2);
        }
        let mut cscratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len()];
        fwd.process_with_scratch(&mut spectrum, &mut cscratch);

        Ok(CirculantCorrelator {
            n1,
            n2,
            l1,
            l2,
            spectrum,
            r2c,
            c2r,
            fwd,
            inv,
            work: Mutex::new(None),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn workspace(&self) -> Workspace {
        let w1 = self.l1 / 2 + 1;
        let scratch_len = self
            .r2c
            .get_scratch_len()
            .max(self.c2r.get_scratch_len())
            .max(self.fwd.get_inplace_scratch_len())
            .max(self.inv.get_inplace_scratch_len());
        Workspace {
            real: vec![0.0; self.l1],
            rows: vec![Complex64::new(0.0, 0.0); self.n2 * w1],
            cols: vec![Complex64::new(0.0, 0.0); BLOCK * self.l2],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Cross-correlation of `input` (`n2 x n1`, first index fastest).
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = input.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    /// As [`apply`](Self::apply), overwriting `data` with the result.
    pub fn apply_in_place(&self, data: &mut [f64]) -> Result<()> {
        check_len(self.n1 * self.n2, data.len())?;
        let mut guard = self.work.lock().unwrap_or_else(|e| e.into_inner());
        let ws = guard.get_or_insert_with(|| self.workspace());
        let (n1, n2, l2) = (self.n1, self.n2, self.l2);
        let w1 = self.l1 / 2 + 1;
        let fft_err = |e: realfft::FftError| Error::Solver(format!("fft: {e}"));

        for (row, spec) in data.chunks_exact(n1).zip(ws.rows.chunks_exact_mut(w1)) {
            ws.real[..n1].copy_from_slice(row);
            ws.real[n1..].iter_mut().for_each(|x| *x = 0.0);
            self.r2c
                .process_with_scratch(&mut ws.real, spec, &mut ws.scratch)
                .map_err(fft_err)?;
        }
        // second direction, a few frequency columns at a time
        for c0 in (0..w1).step_by(BLOCK) {
            let width = (w1 - c0).min(BLOCK);
            let cols = &mut ws.cols[..width * l2];
            for col in cols.chunks_exact_mut(l2) {
                col[n2..].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            }
            transpose_into(&ws.rows[c0..], w1, n2, width, cols, l2);
            self.fwd.process_with_scratch(cols, &mut ws.scratch);
            for (c, h) in cols.iter_mut().zip(&self.spectrum[c0 * l2..]) {
                *c *= h;
            }
            self.inv.process_with_scratch(cols, &mut ws.scratch);
            // only the first n2 entries of each column are wanted
            transpose_into(cols, l2, width, n2, &mut ws.rows[c0..], w1);
        }
        for (spec, o) in ws.rows.chunks_exact_mut(w1).zip(data.chunks_exact_mut(n1)) {
            spec[0].im = 0.0;
            spec[w1 - 1].im = 0.0;
            self.c2r
                .process_with_scratch(spec, &mut ws.real, &mut ws.scratch)
                .map_err(fft_err)?;
            o.copy_from_slice(&ws.real[..n1]);
        }
        Ok(())
    }
}

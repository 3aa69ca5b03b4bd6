use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::geometry::Sinogram;

/// Ramp filter `|ω|` applied per projection row in the frequency domain.
///
/// Rows are padded to the next power of two at least twice the detector
/// count. The padding continues each end of the row with its edge value
/// (right edge in the first half of the pad, left edge in the second), which
/// coincides with zero padding whenever the object sits inside the field of
/// view and keeps a constant row in the null space of the filter.
#[derive(Clone)]
pub struct RampFilter {
    n_det: usize,
    padded: usize,
    gains: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for RampFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RampFilter").field("n_det", &self.n_det).field("padded", &self.padded).finish()
    }
}

impl RampFilter {
    pub fn new(n_det: usize) -> Self {
        let padded = (2 * n_det.max(1)).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(padded);
        let inv = planner.plan_fft_inverse(padded);
        // |ω| in cycles per sample, with the inverse transform's 1/L folded in
        let gains = (0..padded)
            .map(|k| k.min(padded - k) as f64 / padded as f64 / padded as f64)
            .collect();
        RampFilter { n_det, padded, gains, fwd, inv }
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// Filters one row of `n_det` samples into `out`.
    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        assert_eq!(row.len(), self.n_det);
        assert_eq!(out.len(), self.n_det);
        let n = self.n_det;
        let pad = self.padded - n;
        let (first, last) = (row[0], row[n - 1]);
        let mut buf: Vec<Complex64> = row
            .iter()
            .map(|v| Complex64::new(*v, 0.0))
            .chain((0..pad).map(|i| Complex64::new(if i < pad / 2 { last } else { first }, 0.0)))
            .collect();
        self.fwd.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&self.gains) {
            *b *= *g;
        }
        self.inv.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }

    pub fn apply(&self, sino: &Sinogram) -> Sinogram {
        let n = sino.n_detectors();
        let mut out = Sinogram::zeros(sino.n_angles(), n);
        out.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(a, dst)| self.apply_row(sino.row(a), dst));
        out
    }
}

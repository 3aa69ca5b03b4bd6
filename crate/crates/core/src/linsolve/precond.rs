use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::StackedSystem;
use crate::error::{DectError, Result};
use crate::projector::Image;

/// Relative floor on the PSF spectrum before inversion.
pub const SPECTRAL_FLOOR: f64 = 1e-4;

/// Frequency-domain inverse of the system point spread function.
///
/// The PSF is the normal operator applied to a one-hot image at pixel
/// `(⌊n/2⌋, ⌊n/2⌋)`; the gains are `1 / max(|FFT2(psf)|, ε·max|FFT2(psf)|)`.
pub struct Preconditioner {
    side: usize,
    psf: Vec<f64>,
    gains: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Preconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preconditioner").field("side", &self.side).finish_non_exhaustive()
    }
}

fn transpose(buf: &mut [Complex<f64>], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

fn fft2(buf: &mut [Complex<f64>], n: usize, fft: &Arc<dyn Fft<f64>>) {
    fft.process(buf);
    transpose(buf, n);
    fft.process(buf);
    transpose(buf, n);
}

impl Preconditioner {
    pub fn build(sys: &StackedSystem<'_>) -> Result<Self> {
        let n = sys.side();
        let c = n / 2;
        let mut delta = vec![0.0; n * n];
        delta[c * n + c] = 1.0;
        let mut psf = vec![0.0; n * n];
        sys.normal_raw(&delta, &mut psf);
        Self::from_psf(n, psf)
    }

    /// Builds the filter from an explicit PSF centred at `(⌊n/2⌋, ⌊n/2⌋)`.
    pub fn from_psf(side: usize, psf: Vec<f64>) -> Result<Self> {
        if psf.len() != side * side {
            return Err(DectError::dims(side * side, psf.len()));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(side);
        let inv = planner.plan_fft_inverse(side);
        let mut spec: Vec<Complex<f64>> = psf.iter().map(|v| Complex::new(*v, 0.0)).collect();
        fft2(&mut spec, side, &fwd);
        let mags: Vec<f64> = spec.iter().map(|z| z.norm()).collect();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(DectError::Degenerate(format!("point spread function spectrum peak is {peak}")));
        }
        let floor = SPECTRAL_FLOOR * peak;
        let gains = mags.iter().map(|m| 1.0 / m.max(floor)).collect();
        Ok(Preconditioner { side, psf, gains, fwd, inv })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn psf(&self) -> Image {
        Image::from_vec(self.side, self.psf.clone()).expect("square")
    }

    /// Gains in FFT order (DC at index 0).
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Gains with DC moved to the centre, for viewing.
    pub fn gains_image(&self) -> Image {
        let n = self.side;
        let h = n / 2;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[((r + h) % n) * n + (c + h) % n] = self.gains[r * n + c];
            }
        }
        Image::from_vec(n, out).expect("square")
    }

    /// Applies the filter and returns the result with its largest imaginary residue.
    pub fn apply_with_residue(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let n = self.side;
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
        fft2(&mut buf, n, &self.fwd);
        buf.iter_mut().zip(&self.gains).for_each(|(z, g)| *z *= g);
        fft2(&mut buf, n, &self.inv);
        let norm = 1.0 / (n * n) as f64;
        let residue = buf.iter().map(|z| (z.im * norm).abs()).fold(0.0, f64::max);
        (buf.iter().map(|z| z.re * norm).collect(), residue)
    }

    pub fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        self.apply_with_residue(x).0
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        if x.side() != self.side {
            return Err(DectError::dims(self.side, x.side()));
        }
        Image::from_vec(self.side, self.apply_raw(x.as_slice()))
    }

    /// `|FFT2(psf)|` in FFT order.
    pub fn psf_spectrum(&self) -> Vec<f64> {
        let mut spec: Vec<Complex<f64>> = self.psf.iter().map(|v| Complex::new(*v, 0.0)).collect();
        fft2(&mut spec, self.side, &self.fwd);
        spec.iter().map(|z| z.norm()).collect()
    }
}

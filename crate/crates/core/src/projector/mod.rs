//! Parallel-beam projector with Joseph interpolation and its exact adjoint.
//!
//! Each ray is traced along whichever image axis it crosses most steeply;
//! on every row (or column) the image is sampled by linear interpolation
//! between the two neighbouring pixels and the sample is weighted by the path
//! length through that row. The backprojector spreads every ray back with the
//! same interpolation weights, so it is the algebraic transpose of the forward
//! operator, and its result does not depend on the number of worker threads.

mod counters;
mod filter;
mod geometry;

use rayon::prelude::*;

pub use counters::{OpCount, OpCounters};
pub use filter::RampFilter;
pub use geometry::{BasisImage, Image, ScanGeometry, Sinogram, SinogramPair, DEFAULT_FOV_CM};

use crate::error::{DectError, Result};

/// Per-angle tracing constants.
///
/// The fractional cross-axis index hit by detector `k` on along-axis line `s`
/// is `u0 + k·dk + s·ds`.
#[derive(Clone, Copy, Debug)]
struct AnglePlan {
    steep: bool,
    u0: f64,
    dk: f64,
    ds: f64,
    weight: f64,
}

impl AnglePlan {
    fn new(geom: &ScanGeometry, theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        let p = geom.pixel_pitch;
        let d = geom.detector_pitch;
        let half = (geom.image_side as f64 - 1.0) / 2.0;
        let half_det = (geom.detector_count as f64 - 1.0) / 2.0;
        if cos.abs() >= sin.abs() {
            // march over rows, interpolate across columns
            let tan = sin / cos;
            AnglePlan {
                steep: true,
                u0: half - half_det * d / (p * cos) - half * tan,
                dk: d / (p * cos),
                ds: tan,
                weight: p / cos.abs(),
            }
        } else {
            // march over columns, interpolate across rows
            let cot = cos / sin;
            AnglePlan {
                steep: false,
                u0: half + half_det * d / (p * sin) - half * cot,
                dk: -d / (p * sin),
                ds: cot,
                weight: p / sin.abs(),
            }
        }
    }

    #[inline(always)]
    fn coord(&self, k: usize, s: usize) -> f64 {
        self.u0 + k as f64 * self.dk + s as f64 * self.ds
    }

    /// Inclusive range of detector bins whose cross coordinate on line `s`
    /// can land inside `(−1, n)`.
    fn detector_span(&self, s: usize, n: usize, n_det: usize) -> Option<(usize, usize)> {
        let base = self.u0 + s as f64 * self.ds;
        let a = (-1.0 - base) / self.dk;
        let b = (n as f64 - base) / self.dk;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let lo = (lo.floor() - 1.0).max(0.0);
        let hi = (hi.ceil() + 1.0).min(n_det as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Inclusive range of `s` whose cross coordinate can land inside `(−1, n)`.
    fn along_range(&self, k: usize, n: usize) -> Option<(usize, usize)> {
        let base = self.u0 + k as f64 * self.dk;
        if self.ds == 0.0 {
            return (base > -1.0 && base < n as f64).then_some((0, n - 1));
        }
        let a = (-1.0 - base) / self.ds;
        let b = (n as f64 - base) / self.ds;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let lo = (lo.floor() - 1.0).max(0.0);
        let hi = (hi.ceil() + 1.0).min(n as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Forward projector `R`, backprojector `Rᵀ` and filtered backprojection for
/// one scan geometry. Every public application is counted.
#[derive(Debug)]
pub struct Projector {
    geom: ScanGeometry,
    plans: Vec<AnglePlan>,
    ramp: RampFilter,
    counters: OpCounters,
}

impl Projector {
    pub fn new(geom: ScanGeometry) -> Self {
        let plans = geom.angles.iter().map(|t| AnglePlan::new(&geom, *t)).collect();
        let ramp = RampFilter::new(geom.detector_count);
        Projector { geom, plans, ramp, counters: OpCounters::new() }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    pub fn counters(&self) -> &OpCounters {
        &self.counters
    }

    pub fn forward_project(&self, img: &Image) -> Result<Sinogram> {
        self.geom.check_image(img)?;
        let mut out = self.geom.blank_sinogram();
        self.forward_raw(img.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub fn back_project(&self, sino: &Sinogram) -> Result<Image> {
        self.geom.check_sinogram(sino)?;
        let mut out = self.geom.blank_image();
        self.backward_raw(sino.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Ramp-filters every projection row.
    pub fn ramp_filter(&self, sino: &Sinogram) -> Result<Sinogram> {
        self.geom.check_sinogram(sino)?;
        if self.geom.detector_count < 2 {
            return Err(DectError::Geometry("ramp filtering needs at least two detector bins".into()));
        }
        Ok(self.ramp.apply(sino))
    }

    /// Filtered backprojection. Counts one backprojection.
    pub fn fbp(&self, sino: &Sinogram) -> Result<Image> {
        let filtered = self.ramp_filter(sino)?;
        let mut img = self.back_project(&filtered)?;
        let p = self.geom.pixel_pitch;
        let scale = std::f64::consts::PI / (self.geom.n_angles() as f64 * p * p);
        img.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        Ok(img)
    }

    /// `R x` on flat buffers; `out` is overwritten.
    pub(crate) fn forward_raw(&self, img: &[f64], out: &mut [f64]) {
        let n = self.geom.image_side;
        let n_det = self.geom.detector_count;
        debug_assert_eq!(img.len(), n * n);
        debug_assert_eq!(out.len(), self.geom.n_rays());
        self.counters.add_forward();
        out.par_chunks_mut(n_det).zip(self.plans.par_iter()).for_each(|(row, plan)| {
            for (k, slot) in row.iter_mut().enumerate() {
                let Some((s_lo, s_hi)) = plan.along_range(k, n) else {
                    *slot = 0.0;
                    continue;
                };
                let mut acc = 0.0;
                for s in s_lo..=s_hi {
                    let u = plan.coord(k, s);
                    let fl = u.floor();
                    let frac = u - fl;
                    let c0 = fl as isize;
                    if c0 >= 0 && (c0 as usize) < n {
                        acc += (1.0 - frac) * pixel(img, n, plan.steep, s, c0 as usize);
                    }
                    let c1 = c0 + 1;
                    if c1 >= 0 && (c1 as usize) < n {
                        acc += frac * pixel(img, n, plan.steep, s, c1 as usize);
                    }
                }
                *slot = acc * plan.weight;
            }
        });
    }

    /// `Rᵀ y` on flat buffers; `out` is overwritten.
    ///
    /// Every image line (row for steep angles, column for flat ones) is owned
    /// by one task, which spreads each ray's value over the two pixels the
    /// forward pass interpolated between. Column contributions are collected in
    /// a transposed buffer and added at the end, so the summation order is fixed.
    pub(crate) fn backward_raw(&self, sino: &[f64], out: &mut [f64]) {
        let n = self.geom.image_side;
        let n_det = self.geom.detector_count;
        debug_assert_eq!(out.len(), n * n);
        debug_assert_eq!(sino.len(), self.geom.n_rays());
        self.counters.add_backward();
        let spread = |steep: bool, s: usize, line: &mut [f64]| {
            line.fill(0.0);
            for (a, plan) in self.plans.iter().enumerate().filter(|(_, p)| p.steep == steep) {
                let y = &sino[a * n_det..(a + 1) * n_det];
                let Some((k_lo, k_hi)) = plan.detector_span(s, n, n_det) else {
                    continue;
                };
                for (k, yk) in y.iter().enumerate().take(k_hi + 1).skip(k_lo) {
                    let u = plan.coord(k, s);
                    let fl = u.floor();
                    let frac = u - fl;
                    let c0 = fl as isize;
                    let v = yk * plan.weight;
                    if c0 >= 0 && (c0 as usize) < n {
                        line[c0 as usize] += (1.0 - frac) * v;
                    }
                    let c1 = c0 + 1;
                    if c1 >= 0 && (c1 as usize) < n {
                        line[c1 as usize] += frac * v;
                    }
                }
            }
        };
        out.par_chunks_mut(n).enumerate().for_each(|(s, row)| spread(true, s, row));
        if self.plans.iter().any(|p| !p.steep) {
            let mut cols = vec![0.0; n * n];
            cols.par_chunks_mut(n).enumerate().for_each(|(s, col)| spread(false, s, col));
            out.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
                for (c, v) in row.iter_mut().enumerate() {
                    *v += cols[c * n + r];
                }
            });
        }
    }
}

#[inline(always)]
fn pixel(img: &[f64], n: usize, steep: bool, s: usize, cross: usize) -> f64 {
    if steep {
        img[s * n + cross]
    } else {
        img[cross * n + s]
    }
}

use super::{Preconditioner, StackedSystem};
use crate::error::{DectError, Result};
use crate::projector::Image;
use crate::vecops::{axpy, dot, norm, xpby};

/// Symmetric positive definite operator seen by the CG loop.
pub trait NormalOp {
    fn len(&self) -> usize;

    /// `q = N p`; `q` is overwritten.
    fn apply(&mut self, p: &[f64], q: &mut [f64]);

    /// Called after `x += alpha·p` with the `p` of the last `apply`.
    fn accept(&mut self, _alpha: f64) {}
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    pub max_iters: usize,
    /// Relative residual target; zero runs exactly `max_iters` iterations.
    pub tol: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖r_k‖` for k = 0..=iterations.
    pub residual_norms: Vec<f64>,
}

/// (Preconditioned) conjugate gradients from `x` with initial residual `r`.
///
/// Stops after `max_iters` iterations or once `‖r‖ ≤ abs_tol`.
pub fn cg_core<O: NormalOp + ?Sized>(
    op: &mut O,
    prec: Option<&Preconditioner>,
    x: &mut [f64],
    mut r: Vec<f64>,
    max_iters: usize,
    abs_tol: f64,
) -> Result<CgReport> {
    let n = op.len();
    if x.len() != n || r.len() != n {
        return Err(DectError::dims(n, x.len().min(r.len())));
    }
    let precondition = |r: &[f64]| -> Vec<f64> {
        match prec {
            Some(m) => m.apply_raw(r),
            None => r.to_vec(),
        }
    };
    let mut rnorm = norm(&r);
    let mut report = CgReport { iterations: 0, residual_norms: vec![rnorm] };
    if max_iters == 0 || rnorm <= abs_tol || rnorm == 0.0 {
        return Ok(report);
    }
    let mut p = precondition(&r);
    let mut rz = dot(&r, &p);
    let mut q = vec![0.0; n];
    for k in 0..max_iters {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(DectError::Breakdown { iteration: k, curvature: pq });
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        op.accept(alpha);
        axpy(-alpha, &q, &mut r);
        rnorm = norm(&r);
        report.iterations = k + 1;
        report.residual_norms.push(rnorm);
        if rnorm <= abs_tol || rnorm == 0.0 || k + 1 == max_iters {
            break;
        }
        let z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        xpby(&z, beta, &mut p);
    }
    Ok(report)
}

fn solve_image(
    sys: &StackedSystem<'_>,
    prec: Option<&Preconditioner>,
    rhs: &Image,
    x0: &Image,
    settings: CgSettings,
) -> Result<(Image, CgReport)> {
    let side = sys.side();
    for img in [rhs, x0] {
        if img.side() != side {
            return Err(DectError::dims(side, img.side()));
        }
    }
    if let Some(bad) = rhs.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(DectError::Domain { what: "rhs", value: *bad });
    }
    if !(settings.tol >= 0.0) {
        return Err(DectError::Domain { what: "tol", value: settings.tol });
    }
    if let Some(m) = prec {
        if m.side() != side {
            return Err(DectError::dims(side, m.side()));
        }
    }
    let mut x = x0.as_slice().to_vec();
    let mut r = vec![0.0; x.len()];
    sys.normal_raw(&x, &mut r);
    r.iter_mut().zip(rhs.as_slice()).for_each(|(ri, bi)| *ri = bi - *ri);
    let abs_tol = settings.tol * norm(rhs.as_slice());
    let mut op = *sys;
    let report = cg_core(&mut op, prec, &mut x, r, settings.max_iters, abs_tol)?;
    Ok((Image::from_vec(side, x)?, report))
}

/// Solves `AᵀA x = rhs` by conjugate gradients.
pub fn cg_solve(sys: &StackedSystem<'_>, rhs: &Image, x0: &Image, settings: CgSettings) -> Result<(Image, CgReport)> {
    solve_image(sys, None, rhs, x0, settings)
}

/// Solves `AᵀA x = rhs` by preconditioned conjugate gradients.
pub fn pcg_solve(
    sys: &StackedSystem<'_>,
    prec: &Preconditioner,
    rhs: &Image,
    x0: &Image,
    settings: CgSettings,
) -> Result<(Image, CgReport)> {
    solve_image(sys, Some(prec), rhs, x0, settings)
}

/// Normal operator that keeps `R x` and `RᵀR x` in step with the iterate.
///
/// Each `apply` costs one forward and one backprojection and no others are
/// needed to maintain the tracked products.
#[derive(Debug)]
pub struct TrackedSystem<'a> {
    sys: StackedSystem<'a>,
    pub rx: Vec<f64>,
    pub rtrx: Vec<f64>,
    rp: Vec<f64>,
    rtrp: Vec<f64>,
}

impl<'a> TrackedSystem<'a> {
    pub fn new(sys: StackedSystem<'a>, rx: Vec<f64>, rtrx: Vec<f64>) -> Result<Self> {
        let p = sys
            .projector()
            .ok_or_else(|| DectError::Degenerate("tracking needs a projection block".into()))?;
        let (m, n) = (p.geometry().n_rays(), sys.n_pixels());
        if rx.len() != m {
            return Err(DectError::dims(m, rx.len()));
        }
        if rtrx.len() != n {
            return Err(DectError::dims(n, rtrx.len()));
        }
        Ok(TrackedSystem { sys, rx, rtrx, rp: vec![0.0; m], rtrp: vec![0.0; n] })
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.rx, self.rtrx)
    }
}

impl NormalOp for TrackedSystem<'_> {
    fn len(&self) -> usize {
        self.sys.n_pixels()
    }

    fn apply(&mut self, p: &[f64], q: &mut [f64]) {
        let proj = self.sys.projector().expect("checked in new");
        proj.forward_raw(p, &mut self.rp);
        proj.backward_raw(&self.rp, &mut self.rtrp);
        q.copy_from_slice(&self.rtrp);
        self.sys.add_regularizer(p, q);
    }

    fn accept(&mut self, alpha: f64) {
        axpy(alpha, &self.rp, &mut self.rx);
        axpy(alpha, &self.rtrp, &mut self.rtrx);
    }
}

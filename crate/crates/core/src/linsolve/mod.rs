//! Solvers for the tomographic subproblem.
//!
//! The normal operator is `AᵀA = RᵀR + DᵀD + I` for the stacked operator
//! `A = [R; D; I]`, where `R` is the projector and `D` stacks horizontal and
//! vertical forward differences. Each block can be switched off, which is
//! how the small test systems are built.

mod cg;
mod precond;

pub use cg::{cg_core, cg_solve, pcg_solve, CgReport, CgSettings, NormalOp, TrackedSystem};
pub use precond::Preconditioner;

use crate::error::{DectError, Result};
use crate::projector::{Image, Projector};

/// `y = D x`: horizontal differences in `y[..n²]`, vertical in `y[n²..]`.
///
/// The difference across the last column (row) is zero, which is the
/// reflective boundary.
pub fn diff_forward(x: &[f64], side: usize, y: &mut [f64]) {
    let n = side;
    let nn = n * n;
    debug_assert_eq!(x.len(), nn);
    debug_assert_eq!(y.len(), 2 * nn);
    let (h, v) = y.split_at_mut(nn);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            h[i] = if c + 1 < n { x[i + 1] - x[i] } else { 0.0 };
            v[i] = if r + 1 < n { x[i + n] - x[i] } else { 0.0 };
        }
    }
}

/// `x = Dᵀ y`.
pub fn diff_adjoint(y: &[f64], side: usize, x: &mut [f64]) {
    let n = side;
    let nn = n * n;
    debug_assert_eq!(x.len(), nn);
    debug_assert_eq!(y.len(), 2 * nn);
    let (h, v) = y.split_at(nn);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let mut acc = 0.0;
            if c + 1 < n {
                acc -= h[i];
            }
            if c > 0 {
                acc += h[i - 1];
            }
            if r + 1 < n {
                acc -= v[i];
            }
            if r > 0 {
                acc += v[i - n];
            }
            x[i] = acc;
        }
    }
}

/// `out = DᵀD x`, the 5-point Neumann Laplacian with flipped sign.
pub fn diff_normal(x: &[f64], side: usize, out: &mut [f64]) {
    let n = side;
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let mut acc = 0.0;
            if c + 1 < n {
                acc += x[i] - x[i + 1];
            }
            if c > 0 {
                acc += x[i] - x[i - 1];
            }
            if r + 1 < n {
                acc += x[i] - x[i + n];
            }
            if r > 0 {
                acc += x[i] - x[i - n];
            }
            out[i] = acc;
        }
    }
}

/// Matrix-free stacked operator `[R; D; I]`.
///
/// The penalty ρ multiplies every block of the augmented Lagrangian equally,
/// so it cancels from the normal equations and is not stored here.
#[derive(Clone, Copy, Debug)]
pub struct StackedSystem<'a> {
    side: usize,
    projector: Option<&'a Projector>,
    diff: bool,
    identity: bool,
}

impl<'a> StackedSystem<'a> {
    /// `RᵀR + DᵀD + I` for the projector's geometry.
    pub fn full(projector: &'a Projector) -> Self {
        StackedSystem { side: projector.geometry().image_side, projector: Some(projector), diff: true, identity: true }
    }

    pub fn identity(side: usize) -> Self {
        StackedSystem { side, projector: None, diff: false, identity: true }
    }

    pub fn with_blocks(side: usize, projector: Option<&'a Projector>, diff: bool, identity: bool) -> Result<Self> {
        if let Some(p) = projector {
            if p.geometry().image_side != side {
                return Err(DectError::dims(side, p.geometry().image_side));
            }
        }
        if projector.is_none() && !diff && !identity {
            return Err(DectError::Degenerate("stacked system without blocks".into()));
        }
        Ok(StackedSystem { side, projector, diff, identity })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn projector(&self) -> Option<&'a Projector> {
        self.projector
    }

    pub fn has_diff(&self) -> bool {
        self.diff
    }

    pub fn has_identity(&self) -> bool {
        self.identity
    }

    /// `A x` as `(R x, D x, x)`; absent blocks are empty.
    pub fn apply(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rx = match self.projector {
            Some(p) => {
                let mut out = vec![0.0; p.geometry().n_rays()];
                p.forward_raw(x, &mut out);
                out
            }
            None => Vec::new(),
        };
        let dx = if self.diff {
            let mut out = vec![0.0; 2 * x.len()];
            diff_forward(x, self.side, &mut out);
            out
        } else {
            Vec::new()
        };
        let ix = if self.identity { x.to_vec() } else { Vec::new() };
        (rx, dx, ix)
    }

    /// `Aᵀ [a; y; z]`; empty slices stand for absent blocks.
    pub fn adjoint(&self, a: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let n = self.n_pixels();
        let mut out = vec![0.0; n];
        if let Some(p) = self.projector {
            p.backward_raw(a, &mut out);
        }
        if self.diff {
            let mut tmp = vec![0.0; n];
            diff_adjoint(y, self.side, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        if self.identity {
            out.iter_mut().zip(z).for_each(|(o, t)| *o += t);
        }
        out
    }

    /// `q = AᵀA x` on flat buffers.
    pub fn normal_raw(&self, x: &[f64], q: &mut [f64]) {
        let n = self.n_pixels();
        debug_assert_eq!(x.len(), n);
        match self.projector {
            Some(p) => {
                let mut rx = vec![0.0; p.geometry().n_rays()];
                p.forward_raw(x, &mut rx);
                p.backward_raw(&rx, q);
            }
            None => q.fill(0.0),
        }
        self.add_regularizer(x, q);
    }

    /// `q += (DᵀD + I) x` for the enabled blocks.
    pub(crate) fn add_regularizer(&self, x: &[f64], q: &mut [f64]) {
        if self.diff {
            let mut tmp = vec![0.0; x.len()];
            diff_normal(x, self.side, &mut tmp);
            q.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        if self.identity {
            q.iter_mut().zip(x).for_each(|(o, t)| *o += t);
        }
    }
}

/// `(RᵀR + DᵀD + I) x` for the enabled blocks.
pub fn normal_apply(sys: &StackedSystem<'_>, x: &Image) -> Result<Image> {
    if x.side() != sys.side {
        return Err(DectError::dims(sys.side, x.side()));
    }
    let mut q = vec![0.0; sys.n_pixels()];
    sys.normal_raw(x.as_slice(), &mut q);
    Image::from_vec(sys.side, q)
}

impl NormalOp for StackedSystem<'_> {
    fn len(&self) -> usize {
        self.n_pixels()
    }

    fn apply(&mut self, p: &[f64], q: &mut [f64]) {
        self.normal_raw(p, q);
    }
}
